//! Binary netpbm image IO (P5 grayscale, P6 RGB) and directory-based dataset
//! loading. Parse errors carry the byte offset where the problem was found.

use crate::error::{Error, Result};
use crate::network::{Dataset, Instance, Split, CLASS_COUNT};
use crate::tensor::Tensor;
use std::path::Path;

/// Header parser over raw bytes, tracking the current offset for errors.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn header_err(&self, details: impl Into<String>) -> Error {
        Error::PnmHeader {
            offset: self.pos,
            details: details.into(),
        }
    }

    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_digit() {
                value = value
                    .checked_mul(10)
                    .and_then(|v| v.checked_add((b - b'0') as usize))
                    .ok_or_else(|| self.header_err(format!("{what} overflows")))?;
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.header_err(format!(
                "expected {what}, found {}",
                match self.bytes.get(self.pos) {
                    Some(&b) => format!("byte 0x{b:02x}"),
                    None => "end of file".into(),
                }
            )));
        }
        Ok(value)
    }
}

/// Decodes a binary netpbm image. P5 produces a `(1, H, W)` tensor and P6 a
/// planar `(3, H, W)` tensor, with byte values scaled to `[0, 1]` by the
/// declared maxval.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        return Err(cur.header_err("file too short for a netpbm magic number"));
    }
    let magic = &bytes[..2];
    let channels = match magic {
        b"P5" => 1usize,
        b"P6" => 3usize,
        _ => {
            if magic[0] == b'P' && magic[1].is_ascii_alphanumeric() {
                return Err(Error::PnmUnsupported {
                    found: String::from_utf8_lossy(magic).into_owned(),
                });
            }
            return Err(cur.header_err("missing netpbm magic number"));
        }
    };
    cur.pos = 2;

    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    if width == 0 || height == 0 {
        return Err(cur.header_err(format!("image dimensions {width}x{height} must be nonzero")));
    }
    let maxval = cur.read_uint("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(cur.header_err(format!("maxval {maxval} outside supported range 1..=255")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(&b) => {
            return Err(cur.header_err(format!(
                "expected single whitespace before pixel data, found byte 0x{b:02x}"
            )))
        }
        None => return Err(cur.header_err("missing pixel data")),
    }

    let raster_start = cur.pos;
    let expected = width * height * channels;
    let available = bytes.len() - raster_start;
    if available < expected {
        return Err(Error::PnmTruncated {
            offset: raster_start,
            expected,
            found: available,
        });
    }
    let raster = &bytes[raster_start..raster_start + expected];
    let scale = 1.0 / maxval as f64;
    let mut data = vec![0.0; expected];
    // interleaved samples -> planar channels
    for (i, &b) in raster.iter().enumerate() {
        let c = i % channels;
        let pixel = i / channels;
        data[c * width * height + pixel] = b as f64 * scale;
    }
    Tensor::new(vec![channels, height, width], data)
}

/// Reads and decodes a PGM/PPM file.
pub fn load_pnm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_pnm(&bytes)
}

/// Collapses a `(3, H, W)` RGB tensor to `(1, H, W)` grayscale with luma
/// weights 0.299/0.587/0.114; single-channel input passes through.
pub fn to_grayscale(image: &Tensor) -> Result<Tensor> {
    match image.shape() {
        [1, _, _] => Ok(image.clone()),
        [3, h, w] => {
            let plane = h * w;
            let data: Vec<f64> = (0..plane)
                .map(|i| {
                    0.299 * image.data()[i]
                        + 0.587 * image.data()[plane + i]
                        + 0.114 * image.data()[2 * plane + i]
                })
                .collect();
            Tensor::new(vec![1, *h, *w], data)
        }
        other => Err(Error::Dimension {
            op: "to_grayscale",
            details: format!("expected a (1|3, H, W) image, got {other:?}"),
        }),
    }
}

/// Encodes a single-channel `[0,1]` tensor as a binary PGM (maxval 255).
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [1, h, w] => (*h, *w),
        other => {
            return Err(Error::Dimension {
                op: "encode_pgm",
                details: format!("expected a (1, H, W) image, got {other:?}"),
            })
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Loads a two-class dataset from `root/<class_name>/<id>.pgm|ppm`.
///
/// Class labels follow the sorted class-directory names (index 0 and 1);
/// instance ids are `"<class_name>/<file_stem>"` and instances are ordered
/// by id. RGB images are converted to grayscale when `channels == 1`.
pub fn load_dataset(root: &Path, split: Split, channels: usize) -> Result<Dataset> {
    let read_dir = |p: &Path| std::fs::read_dir(p).map_err(|e| Error::io(p.display().to_string(), e));
    let mut class_dirs: Vec<(String, std::path::PathBuf)> = Vec::new();
    for entry in read_dir(root)? {
        let entry = entry.map_err(|e| Error::io(root.display().to_string(), e))?;
        let path = entry.path();
        if path.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            class_dirs.push((name, path));
        }
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    if class_dirs.len() != CLASS_COUNT {
        return Err(Error::DatasetLayout(format!(
            "expected {CLASS_COUNT} class directories under {}, found {}: {:?}",
            root.display(),
            class_dirs.len(),
            class_dirs.iter().map(|(n, _)| n).collect::<Vec<_>>()
        )));
    }

    let mut instances = Vec::new();
    for (label, (class_name, dir)) in class_dirs.iter().enumerate() {
        for entry in read_dir(dir)? {
            let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
            let path = entry.path();
            let ext = path
                .extension()
                .map(|e| e.to_string_lossy().to_ascii_lowercase());
            if !matches!(ext.as_deref(), Some("pgm") | Some("ppm")) {
                continue;
            }
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut image = load_pnm(&path)?;
            if channels == 1 && image.shape()[0] == 3 {
                image = to_grayscale(&image)?;
            }
            if image.shape()[0] != channels {
                return Err(Error::InconsistentShapes(format!(
                    "{} has {} channels, model expects {channels}",
                    path.display(),
                    image.shape()[0]
                )));
            }
            instances.push(Instance {
                image,
                label,
                id: format!("{class_name}/{stem}"),
            });
        }
    }
    instances.sort_by(|a, b| a.id.cmp(&b.id));
    Dataset::new(instances, split)
}
