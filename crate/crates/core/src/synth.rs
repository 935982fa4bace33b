//! Synthetic two-class dataset generator: grayscale "teapot" images (a wide
//! body with a side handle arc and a spout wedge) versus "vase" images (a
//! tall body with a narrow neck, flared lip, and tapering pedestal).
//!
//! Beyond the always-present body, each class carries a pool of optional
//! parts (knob, base, stripes, side handles, neck ring, ...) that are
//! independently present or absent per image and jittered in position and
//! intensity. The redundancy matters: a classifier trained on these images
//! has to spread its evidence over many mid-level features instead of
//! collapsing onto a single silhouette cue, which keeps channel-level
//! attributions varied from instance to instance.
//!
//! Every image is generated from a generator seeded by
//! `derive_seed(seed, instance_id)`, so datasets are bit-identical for a
//! given spec and earlier images do not change when the count grows.

use crate::error::{Error, Result};
use crate::network::{Dataset, Instance, Split};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// Smallest supported synthetic image side length.
pub const MIN_IMAGE_SIZE: usize = 16;

/// Class names in label order (label 0, label 1).
pub const SYNTH_CLASS_NAMES: [&str; 2] = ["teapot", "vase"];

struct Canvas {
    size: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas {
            size,
            data: vec![0.0; size * size],
        }
    }

    /// Max-blends `v` into the pixel if the coordinates are on-canvas.
    fn paint(&mut self, y: isize, x: isize, v: f64) {
        if y >= 0 && x >= 0 && (y as usize) < self.size && (x as usize) < self.size {
            let p = &mut self.data[y as usize * self.size + x as usize];
            *p = p.max(v);
        }
    }

    fn for_each_pixel(&mut self, mut predicate: impl FnMut(f64, f64) -> Option<f64>) {
        for y in 0..self.size {
            for x in 0..self.size {
                if let Some(v) = predicate(x as f64, y as f64) {
                    self.paint(y as isize, x as isize, v);
                }
            }
        }
    }

    fn fill_ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, v: f64) {
        self.for_each_pixel(|x, y| {
            let dx = (x - cx) / rx;
            let dy = (y - cy) / ry;
            (dx * dx + dy * dy <= 1.0).then_some(v)
        });
    }

    /// Ring segment between the two radii, restricted to `x >= x_min`
    /// (an arc opening away from the body).
    fn fill_ring_arc(&mut self, cx: f64, cy: f64, r_in: f64, r_out: f64, x_min: f64, v: f64) {
        self.for_each_pixel(|x, y| {
            let d = ((x - cx) * (x - cx) + (y - cy) * (y - cy)).sqrt();
            (d >= r_in && d <= r_out && x >= x_min).then_some(v)
        });
    }

    fn fill_triangle(&mut self, p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), v: f64) {
        let edge = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| {
            (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
        };
        self.for_each_pixel(|x, y| {
            let p = (x, y);
            let d0 = edge(p0, p1, p);
            let d1 = edge(p1, p2, p);
            let d2 = edge(p2, p0, p);
            let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
            let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
            (!(has_neg && has_pos)).then_some(v)
        });
    }

    /// Vertical trapezoid centered on `cx`: half-width interpolates from
    /// `w_top` at `y_top` to `w_bottom` at `y_bottom`.
    fn fill_taper(&mut self, cx: f64, y_top: f64, y_bottom: f64, w_top: f64, w_bottom: f64, v: f64) {
        self.for_each_pixel(|x, y| {
            if y < y_top || y > y_bottom {
                return None;
            }
            let t = (y - y_top) / (y_bottom - y_top).max(1e-9);
            let half = w_top + t * (w_bottom - w_top);
            ((x - cx).abs() <= half).then_some(v)
        });
    }

    fn fill_rect(&mut self, cx: f64, y_top: f64, y_bottom: f64, half_width: f64, v: f64) {
        self.fill_taper(cx, y_top, y_bottom, half_width, half_width, v);
    }

    /// Bright bands inside an ellipse. `horizontal` selects the band axis;
    /// `period`/`phase`/`thickness` are in pixels.
    #[allow(clippy::too_many_arguments)]
    fn fill_stripes(
        &mut self,
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        horizontal: bool,
        period: f64,
        phase: f64,
        thickness: f64,
        v: f64,
    ) {
        self.for_each_pixel(|x, y| {
            let dx = (x - cx) / rx;
            let dy = (y - cy) / ry;
            if dx * dx + dy * dy > 1.0 {
                return None;
            }
            let coord = if horizontal { y } else { x };
            ((coord - phase).rem_euclid(period) < thickness).then_some(v)
        });
    }

    /// Class-independent clutter: a few dim blobs and bars at random
    /// positions. They keep every image texturally unique, which spreads
    /// weak relevance across many channels, while staying well below the
    /// intensity of the class shapes.
    fn add_distractors(&mut self, rng: &mut SplitMix64) {
        let s = self.size as f64;
        let count = 3 + rng.next_below(4) as usize;
        for _ in 0..count {
            let cx = rng.uniform(0.05, 0.95) * s;
            let cy = rng.uniform(0.05, 0.95) * s;
            let v = rng.uniform(0.2, 0.45);
            if rng.next_below(2) == 0 {
                let r = rng.uniform(0.02, 0.06) * s;
                self.fill_ellipse(cx, cy, r, r, v);
            } else {
                let half_w = rng.uniform(0.015, 0.03) * s;
                let len = rng.uniform(0.05, 0.14) * s;
                self.fill_rect(cx, cy - len / 2.0, cy + len / 2.0, half_w, v);
            }
        }
    }

    fn into_tensor(mut self, rng: &mut SplitMix64) -> Tensor {
        // light sensor-style noise keeps images from being exactly flat
        for p in &mut self.data {
            *p = (*p + 0.02 * rng.next_normal()).clamp(0.0, 1.0);
        }
        Tensor::new(vec![1, self.size, self.size], self.data).expect("square canvas")
    }
}

fn draw_teapot(size: usize, rng: &mut SplitMix64) -> Tensor {
    let s = size as f64;
    let mut canvas = Canvas::new(size);

    // wide body, placed slightly left to leave room for the handle
    let cx = s * rng.uniform(0.40, 0.46);
    let cy = s * rng.uniform(0.52, 0.58);
    let rx = s * rng.uniform(0.22, 0.27);
    let ry = s * rng.uniform(0.14, 0.18);
    let body_v = rng.uniform(0.55, 0.75);
    canvas.fill_ellipse(cx, cy, rx, ry, body_v);

    let mut with_handle = rng.uniform(0.0, 1.0) < 0.85;
    let with_spout = rng.uniform(0.0, 1.0) < 0.85;
    let with_knob = rng.uniform(0.0, 1.0) < 0.7;
    let with_base = rng.uniform(0.0, 1.0) < 0.7;
    // keep at least one sideways part so the silhouette stays wider than tall
    if !with_handle && !with_spout {
        with_handle = true;
    }

    // horizontal glaze bands across the body
    let period = rng.uniform(0.09, 0.18) * s;
    let phase = rng.uniform(0.0, 1.0) * period;
    let thickness = rng.uniform(0.4, 0.55) * period;
    let stripe_v = rng.uniform(0.85, 1.0);
    canvas.fill_stripes(cx, cy, rx, ry, true, period, phase, thickness, stripe_v);

    // handle: ring arc attached to the right of the body
    if with_handle {
        let ring_cx = cx + rx + s * rng.uniform(0.00, 0.02);
        let r_out = s * rng.uniform(0.10, 0.13);
        let r_in = r_out - s * rng.uniform(0.03, 0.045);
        let handle_v = rng.uniform(0.6, 0.9);
        canvas.fill_ring_arc(ring_cx, cy, r_in, r_out, ring_cx - s * 0.02, handle_v);
    }

    // spout: wedge sticking out up-left from the body edge
    if with_spout {
        let apex = (
            cx - rx - s * rng.uniform(0.08, 0.12),
            cy - s * rng.uniform(0.10, 0.16),
        );
        let base_x = cx - rx * 0.9;
        let base_top = (base_x, cy - ry * 0.5);
        let base_bottom = (base_x, cy + ry * 0.2);
        let spout_v = rng.uniform(0.6, 0.9);
        canvas.fill_triangle(apex, base_top, base_bottom, spout_v);
    }

    // lid knob: small bright dot sitting on top of the body
    if with_knob {
        let knob_r = s * rng.uniform(0.02, 0.035);
        let knob_cy = cy - ry - knob_r - s * 0.01;
        let knob_v = rng.uniform(0.7, 0.95);
        canvas.fill_ellipse(cx, knob_cy, knob_r, knob_r, knob_v);
    }

    // flat base bar under the body
    if with_base {
        let base_top = cy + ry + s * 0.005;
        let base_bottom = base_top + s * rng.uniform(0.02, 0.04);
        let base_half = rx * rng.uniform(0.5, 0.8);
        let base_v = rng.uniform(0.6, 0.9);
        canvas.fill_rect(cx, base_top, base_bottom, base_half, base_v);
    }

    canvas.add_distractors(rng);
    canvas.into_tensor(rng)
}

fn draw_vase(size: usize, rng: &mut SplitMix64) -> Tensor {
    let s = size as f64;
    let mut canvas = Canvas::new(size);

    // tall body
    let cx = s * rng.uniform(0.46, 0.54);
    let cy = s * rng.uniform(0.50, 0.56);
    let rx = s * rng.uniform(0.11, 0.15);
    let ry = s * rng.uniform(0.24, 0.30);
    let body_v = rng.uniform(0.55, 0.75);
    canvas.fill_ellipse(cx, cy, rx, ry, body_v);

    let with_neck = rng.uniform(0.0, 1.0) < 0.85;
    let with_pedestal = rng.uniform(0.0, 1.0) < 0.8;
    let with_side_handles = rng.uniform(0.0, 1.0) < 0.7;
    let with_neck_ring = rng.uniform(0.0, 1.0) < 0.6;

    // vertical glaze bands across the body
    let period = rng.uniform(0.09, 0.18) * s;
    let phase = rng.uniform(0.0, 1.0) * period;
    let thickness = rng.uniform(0.4, 0.55) * period;
    let stripe_v = rng.uniform(0.85, 1.0);
    canvas.fill_stripes(cx, cy, rx, ry, false, period, phase, thickness, stripe_v);

    // narrow neck rising from the body, capped by a flared lip
    let neck_top = cy - ry - s * rng.uniform(0.08, 0.12);
    if with_neck {
        let neck_half = s * rng.uniform(0.04, 0.06);
        let neck_v = rng.uniform(0.6, 0.9);
        canvas.fill_rect(cx, neck_top, cy - ry * 0.5, neck_half, neck_v);

        let lip_half = s * rng.uniform(0.08, 0.12);
        let lip_height = s * rng.uniform(0.02, 0.04);
        canvas.fill_rect(cx, neck_top - lip_height, neck_top, lip_half, neck_v);

        // decorative bright collar partway up the neck
        if with_neck_ring {
            let ring_y = neck_top + s * rng.uniform(0.02, 0.05);
            let ring_v = rng.uniform(0.8, 0.95);
            canvas.fill_rect(cx, ring_y, ring_y + s * 0.02, s * 0.055, ring_v);
        }
    }

    // tapering pedestal below the body
    if with_pedestal {
        let taper_top = cy + ry * 0.55;
        let taper_bottom = cy + ry + s * rng.uniform(0.05, 0.09);
        let taper_v = rng.uniform(0.6, 0.9);
        canvas.fill_taper(cx, taper_top, taper_bottom, rx * 0.75, rx * 0.3, taper_v);
    }

    // small round handles flanking the upper body
    if with_side_handles {
        let handle_r = s * rng.uniform(0.02, 0.03);
        let handle_y = cy - ry * rng.uniform(0.3, 0.5);
        let offset = rx + handle_r + s * 0.005;
        let handle_v = rng.uniform(0.65, 0.9);
        canvas.fill_ellipse(cx - offset, handle_y, handle_r, handle_r, handle_v);
        canvas.fill_ellipse(cx + offset, handle_y, handle_r, handle_r, handle_v);
    }

    canvas.add_distractors(rng);
    canvas.into_tensor(rng)
}

/// Generates a balanced two-class dataset of `count_per_class` images per
/// label. Ids are `"<class>/tr<idx>"` for the train split and
/// `"<class>/te<idx>"` for the test split, so the two splits drawn from one
/// seed never share an image.
pub fn synthesize_dataset(
    count_per_class: usize,
    image_size: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if image_size < MIN_IMAGE_SIZE {
        return Err(Error::ImageTooSmall {
            size: image_size,
            min: MIN_IMAGE_SIZE,
        });
    }
    if count_per_class == 0 {
        return Err(Error::EmptyDataset("count_per_class is 0".into()));
    }
    let prefix = match split {
        Split::Train => "tr",
        Split::Test => "te",
    };
    let mut instances = Vec::with_capacity(2 * count_per_class);
    for (label, class) in SYNTH_CLASS_NAMES.iter().enumerate() {
        for i in 0..count_per_class {
            let id = format!("{class}/{prefix}{i:04}");
            let mut rng = SplitMix64::new(derive_seed(seed, &id));
            let image = if label == 0 {
                draw_teapot(image_size, &mut rng)
            } else {
                draw_vase(image_size, &mut rng)
            };
            instances.push(Instance { image, label, id });
        }
    }
    instances.sort_by(|a, b| a.id.cmp(&b.id));
    Dataset::new(instances, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_spec_is_bit_identical() {
        let a = synthesize_dataset(5, 20, 1, Split::Train).unwrap();
        let b = synthesize_dataset(5, 20, 1, Split::Train).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.instances().iter().zip(b.instances()) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.label, y.label);
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn different_seed_changes_images() {
        let a = synthesize_dataset(3, 20, 1, Split::Train).unwrap();
        let b = synthesize_dataset(3, 20, 2, Split::Train).unwrap();
        assert!(a
            .instances()
            .iter()
            .zip(b.instances())
            .any(|(x, y)| x.image != y.image));
    }

    #[test]
    fn growing_count_keeps_existing_images() {
        let small = synthesize_dataset(3, 20, 7, Split::Test).unwrap();
        let large = synthesize_dataset(5, 20, 7, Split::Test).unwrap();
        for inst in small.instances() {
            let same = large.get(&inst.id).unwrap();
            assert_eq!(inst.image, same.image);
        }
    }

    #[test]
    fn dataset_is_balanced_with_split_prefixed_ids() {
        let data = synthesize_dataset(4, 16, 3, Split::Train).unwrap();
        assert_eq!(data.len(), 8);
        let teapots = data.instances().iter().filter(|i| i.label == 0).count();
        assert_eq!(teapots, 4);
        assert_eq!(data.instances()[0].id, "teapot/tr0000");
        assert!(data.get("vase/tr0003").is_ok());

        let test = synthesize_dataset(2, 16, 3, Split::Test).unwrap();
        assert_eq!(test.instances()[0].id, "teapot/te0000");
    }

    #[test]
    fn train_and_test_differ_for_one_seed() {
        let train = synthesize_dataset(2, 20, 9, Split::Train).unwrap();
        let test = synthesize_dataset(2, 20, 9, Split::Test).unwrap();
        assert_ne!(train.instances()[0].image, test.instances()[0].image);
    }

    #[test]
    fn rejects_too_small_images() {
        match synthesize_dataset(2, 15, 1, Split::Train) {
            Err(Error::ImageTooSmall { size: 15, min: 16 }) => {}
            other => panic!("expected ImageTooSmall, got {other:?}"),
        }
        assert!(synthesize_dataset(2, 16, 1, Split::Train).is_ok());
    }

    #[test]
    fn rejects_zero_count() {
        assert!(matches!(
            synthesize_dataset(0, 20, 1, Split::Train),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn pixels_lie_in_unit_interval() {
        let data = synthesize_dataset(3, 24, 5, Split::Train).unwrap();
        for inst in data.instances() {
            assert_eq!(inst.image.shape(), &[1, 24, 24]);
            assert!(inst.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    /// Extent of bright pixels along rows vs columns distinguishes the
    /// classes: teapots are wider than tall, vases taller than wide.
    /// Rows/columns need at least three bright pixels to count toward the
    /// extent, so stray clutter or noise-crossed pixels cannot stretch the
    /// measured silhouette.
    fn aspect(image: &Tensor) -> f64 {
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let bright = |y: usize, x: usize| image.data()[image.idx3(0, y, x)] > 0.5;
        let rows: Vec<usize> = (0..h)
            .filter(|&y| (0..w).filter(|&x| bright(y, x)).count() >= 3)
            .collect();
        let cols: Vec<usize> = (0..w)
            .filter(|&x| (0..h).filter(|&y| bright(y, x)).count() >= 3)
            .collect();
        let height = rows.last().unwrap() - rows.first().unwrap();
        let width = cols.last().unwrap() - cols.first().unwrap();
        height as f64 / width.max(1) as f64
    }

    #[test]
    fn classes_have_distinct_geometry() {
        let data = synthesize_dataset(10, 32, 11, Split::Train).unwrap();
        for inst in data.instances() {
            let a = aspect(&inst.image);
            if inst.label == 0 {
                assert!(a < 1.0, "teapot {} has tall aspect {a}", inst.id);
            } else {
                assert!(a > 1.0, "vase {} has wide aspect {a}", inst.id);
            }
        }
    }
}
