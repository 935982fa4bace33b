//! Image augmentations for the robustness study: seeded Gaussian noise and
//! rotation about the image center.
//!
//! Rotations by multiples of 90 degrees on square images are exact index
//! permutations; every other angle uses inverse mapping with bilinear
//! interpolation and zero fill. A positive angle turns the image content
//! counterclockwise (as viewed, with the row axis pointing down).

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// One augmentation with its parameters. The noise seed is a base seed:
/// applying to an instance derives `seed XOR fnv1a64(instance_id)` so that
/// parallel per-image application stays reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentSpec {
    GaussianNoise { sigma: f64, seed: u64 },
    Rotation { angle_degrees: f64 },
}

impl AugmentSpec {
    /// Checks the parameter invariants (`sigma >= 0`, angle finite and in
    /// `(-360, 360)`).
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentSpec::GaussianNoise { sigma, .. } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidConfigValue {
                        key: "noise_sigma".into(),
                        details: format!("must be finite and >= 0, got {sigma}"),
                    });
                }
            }
            AugmentSpec::Rotation { angle_degrees } => {
                if !angle_degrees.is_finite()
                    || angle_degrees <= -360.0
                    || angle_degrees >= 360.0
                {
                    return Err(Error::InvalidConfigValue {
                        key: "rotation_angle".into(),
                        details: format!("must lie in (-360, 360), got {angle_degrees}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Applies the augmentation to one instance's image.
    pub fn apply(&self, image: &Tensor, instance_id: &str) -> Tensor {
        match *self {
            AugmentSpec::GaussianNoise { sigma, seed } => {
                gaussian_noise(image, sigma, derive_seed(seed, instance_id))
            }
            AugmentSpec::Rotation { angle_degrees } => rotate(image, angle_degrees),
        }
    }
}

/// Adds i.i.d. `normal(0, sigma^2)` noise from a seeded generator and clamps
/// the result into `[0, 1]`. `sigma = 0` returns the image unchanged.
pub fn gaussian_noise(image: &Tensor, sigma: f64, seed: u64) -> Tensor {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be >= 0");
    if sigma == 0.0 {
        return image.clone();
    }
    let mut rng = SplitMix64::new(seed);
    let data: Vec<f64> = image
        .data()
        .iter()
        .map(|&v| (v + sigma * rng.next_normal()).clamp(0.0, 1.0))
        .collect();
    Tensor::new(image.shape().to_vec(), data).expect("shape preserved")
}

/// Rotates a `(C, H, W)` image about its center `((W-1)/2, (H-1)/2)`.
/// Output shape equals input shape; samples falling outside the source
/// image are zero.
pub fn rotate(image: &Tensor, angle_degrees: f64) -> Tensor {
    assert!(angle_degrees.is_finite(), "angle must be finite");
    assert_eq!(image.shape().len(), 3, "rotate expects a (C,H,W) tensor");
    let angle = angle_degrees.rem_euclid(360.0);
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);

    if angle == 0.0 {
        return image.clone();
    }
    if angle == 180.0 {
        let mut out = Tensor::zeros(image.shape().to_vec());
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let idx = out.idx3(ch, y, x);
                    out.data_mut()[idx] = image.data()[image.idx3(ch, h - 1 - y, w - 1 - x)];
                }
            }
        }
        return out;
    }
    if (angle == 90.0 || angle == 270.0) && h == w {
        let n = h;
        let mut out = Tensor::zeros(image.shape().to_vec());
        for ch in 0..c {
            for y in 0..n {
                for x in 0..n {
                    let src = if angle == 90.0 {
                        image.idx3(ch, x, n - 1 - y)
                    } else {
                        image.idx3(ch, n - 1 - x, y)
                    };
                    let idx = out.idx3(ch, y, x);
                    out.data_mut()[idx] = image.data()[src];
                }
            }
        }
        return out;
    }

    // General case: inverse mapping with bilinear interpolation.
    let theta = angle.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Tensor::zeros(image.shape().to_vec());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                let idx = out.idx3(ch, y, x);
                out.data_mut()[idx] = bilinear(image, ch, sy, sx);
            }
        }
    }
    out
}

/// Bilinear sample at fractional coordinates; out-of-bounds neighbors
/// contribute zero.
fn bilinear(image: &Tensor, ch: usize, sy: f64, sx: f64) -> f64 {
    let (h, w) = (image.shape()[1] as isize, image.shape()[2] as isize);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let mut acc = 0.0;
    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            let weight = wy * wx;
            if weight == 0.0 {
                continue;
            }
            let yy = y0 as isize + dy;
            let xx = x0 as isize + dx;
            if yy >= 0 && yy < h && xx >= 0 && xx < w {
                acc += weight * image.data()[image.idx3(ch, yy as usize, xx as usize)];
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn random_image(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        let len: usize = shape.iter().product();
        img(shape, (0..len).map(|_| rng.uniform(0.0, 1.0)).collect())
    }

    #[test]
    fn zero_sigma_is_identity() {
        let image = random_image(&[2, 3, 3], 1);
        let out = gaussian_noise(&image, 0.0, 99);
        assert_eq!(out, image);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let image = random_image(&[1, 8, 8], 2);
        let a = gaussian_noise(&image, 0.1, 7);
        let b = gaussian_noise(&image, 0.1, 7);
        assert_eq!(a, b);
        let c = gaussian_noise(&image, 0.1, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_std_matches_sigma() {
        // Constant mid-gray keeps clamping negligible at sigma = 0.1,
        // so the sample std of the deltas estimates sigma.
        let image = img(&[1, 256, 256], vec![0.5; 256 * 256]);
        let out = gaussian_noise(&image, 0.1, 1234);
        let deltas: Vec<f64> = out
            .data()
            .iter()
            .zip(image.data())
            .map(|(o, i)| o - i)
            .collect();
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((std - 0.1).abs() < 0.003, "std {std}");
        assert!(mean.abs() < 0.003, "mean {mean}");
    }

    #[test]
    fn noise_output_stays_in_unit_range() {
        let image = random_image(&[1, 16, 16], 3);
        let out = gaussian_noise(&image, 5.0, 11);
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn augment_spec_derives_per_instance_seeds() {
        let image = img(&[1, 4, 4], vec![0.5; 16]);
        let spec = AugmentSpec::GaussianNoise { sigma: 0.1, seed: 42 };
        let a = spec.apply(&image, "teapot/te0000");
        let b = spec.apply(&image, "teapot/te0001");
        let again = spec.apply(&image, "teapot/te0000");
        assert_ne!(a, b);
        assert_eq!(a, again);
        assert_eq!(
            a,
            gaussian_noise(&image, 0.1, derive_seed(42, "teapot/te0000"))
        );
    }

    #[test]
    fn augment_spec_validation() {
        assert!(AugmentSpec::GaussianNoise { sigma: -0.1, seed: 0 }
            .validate()
            .is_err());
        assert!(AugmentSpec::Rotation { angle_degrees: 360.0 }
            .validate()
            .is_err());
        assert!(AugmentSpec::Rotation {
            angle_degrees: f64::NAN
        }
        .validate()
        .is_err());
        assert!(AugmentSpec::Rotation { angle_degrees: -10.0 }
            .validate()
            .is_ok());
    }

    #[test]
    fn rotate_zero_is_identity() {
        let image = random_image(&[1, 5, 7], 4);
        assert_eq!(rotate(&image, 0.0), image);
    }

    #[test]
    fn rotate_180_hand_example() {
        let image = img(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let out = rotate(&image, 180.0);
        assert_eq!(out.data(), &[4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn rotate_90_hand_example_counterclockwise() {
        let image = img(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let out = rotate(&image, 90.0);
        assert_eq!(out.data(), &[2.0, 4.0, 1.0, 3.0]);
        let back = rotate(&out, -90.0);
        assert_eq!(back, image);
    }

    #[test]
    fn quarter_turns_are_exact_permutations() {
        let image = random_image(&[2, 6, 6], 5);
        for angle in [90.0, 180.0, 270.0] {
            let out = rotate(&image, angle);
            let mut original: Vec<f64> = image.data().to_vec();
            let mut rotated: Vec<f64> = out.data().to_vec();
            original.sort_by(f64::total_cmp);
            rotated.sort_by(f64::total_cmp);
            assert_eq!(original, rotated, "angle {angle}");
        }
        // four quarter turns come home exactly
        let mut current = image.clone();
        for _ in 0..4 {
            current = rotate(&current, 90.0);
        }
        assert_eq!(current, image);
    }

    #[test]
    fn negative_angles_wrap() {
        let image = random_image(&[1, 4, 4], 6);
        assert_eq!(rotate(&image, -90.0), rotate(&image, 270.0));
        assert_eq!(rotate(&image, -180.0), rotate(&image, 180.0));
    }

    #[test]
    fn rotate_preserves_shape_for_any_angle() {
        let image = random_image(&[1, 5, 9], 7);
        for angle in [10.0, 45.0, 90.0, 123.4] {
            assert_eq!(rotate(&image, angle).shape(), image.shape());
        }
    }

    #[test]
    fn small_angle_round_trip_on_smooth_image() {
        let (h, w) = (32usize, 32usize);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / w as f64;
                let v = y as f64 / h as f64;
                data.push(
                    0.5 + 0.4
                        * (2.0 * std::f64::consts::PI * u).sin()
                        * (2.0 * std::f64::consts::PI * v).cos(),
                );
            }
        }
        let image = img(&[1, h, w], data);
        let round = rotate(&rotate(&image, 10.0), -10.0);
        let mad = image
            .data()
            .iter()
            .zip(round.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / (h * w) as f64;
        assert!(mad < 0.05, "mean absolute difference {mad}");
    }

    proptest! {
        #[test]
        fn rotate_180_is_an_involution(
            data in proptest::collection::vec(0.0f64..1.0, 15..=15)
        ) {
            let image = Tensor::new(vec![1, 3, 5], data).unwrap();
            let twice = rotate(&rotate(&image, 180.0), 180.0);
            prop_assert_eq!(twice, image);
        }

        #[test]
        fn noise_respects_unit_interval(
            data in proptest::collection::vec(0.0f64..1.0, 16..=16),
            sigma in 0.0f64..2.0,
            seed in 0u64..1000,
        ) {
            let image = Tensor::new(vec![1, 4, 4], data).unwrap();
            let out = gaussian_noise(&image, sigma, seed);
            prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
