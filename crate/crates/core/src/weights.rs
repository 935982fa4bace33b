//! Bit-exact weights file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "CXAI"
//! version u8       1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u16, name bytes (UTF-8), rank u8, rank x u32 dims,
//!   product(dims) x f32 IEEE-754 values
//! ```
//!
//! Tensors are named `layer{i}.weight` / `layer{i}.bias` in layer order.
//! Parameters are stored at 32-bit precision; the in-memory network is
//! 64-bit, so save -> load -> save reproduces the file byte-identically.
//! The architecture itself is not stored — loading requires the matching
//! [`Architecture`] from configuration.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Architecture, Layer, Network};

const MAGIC: &[u8; 4] = b"CXAI";
const VERSION: u8 = 1;

/// Named parameter tensors of a network, in serialization order.
fn named_params(net: &Network) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Conv { kernels, bias, .. } => {
                out.push((
                    format!("layer{i}.weight"),
                    kernels.shape().to_vec(),
                    kernels.data().to_vec(),
                ));
                out.push((format!("layer{i}.bias"), vec![bias.len()], bias.clone()));
            }
            Layer::Linear { weights, bias } => {
                out.push((
                    format!("layer{i}.weight"),
                    weights.shape().to_vec(),
                    weights.data().to_vec(),
                ));
                out.push((format!("layer{i}.bias"), vec![bias.len()], bias.clone()));
            }
            _ => {}
        }
    }
    out
}

/// Serializes a network's parameters into the weights format.
pub fn encode_weights(net: &Network) -> Vec<u8> {
    let tensors = named_params(net);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, values) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dims.len() as u8);
        for d in &dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos.checked_add(n).is_none_or(|end| end > self.buf.len()) {
            return Err(Error::WeightsTruncated { offset: self.pos });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a weights file and instantiates `arch` with its parameters.
pub fn decode_weights(bytes: &[u8], arch: &Architecture) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::WeightsBadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::WeightsVersion(version));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::WeightsEmptyModel);
    }

    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::WeightsMismatch("tensor name is not valid UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut total: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            total = total.checked_mul(d).ok_or_else(|| {
                Error::WeightsMismatch(format!("tensor {name:?} dims overflow"))
            })?;
            dims.push(d);
        }
        let raw = r.take(total.checked_mul(4).ok_or_else(|| {
            Error::WeightsMismatch(format!("tensor {name:?} dims overflow"))
        })?)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if tensors.iter().any(|(n, _, _)| *n == name) {
            return Err(Error::WeightsMismatch(format!("duplicate tensor {name:?}")));
        }
        tensors.push((name, dims, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightsMismatch(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }

    // Instantiate the architecture (seed irrelevant, everything is replaced)
    // and install each tensor into its layer.
    let mut net = arch.build(0)?;
    let mut used = vec![false; tensors.len()];
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        let (weights_dst, bias_dst, weights_shape): (&mut [f64], &mut [f64], Vec<usize>) =
            match layer {
                Layer::Conv { kernels, bias, .. } => {
                    let shape = kernels.shape().to_vec();
                    (kernels.data_mut(), bias.as_mut_slice(), shape)
                }
                Layer::Linear { weights, bias } => {
                    let shape = weights.shape().to_vec();
                    (weights.data_mut(), bias.as_mut_slice(), shape)
                }
                _ => continue,
            };
        for (suffix, dst, want_dims) in [
            ("weight", weights_dst, weights_shape),
            ("bias", bias_dst, Vec::new()),
        ] {
            let name = format!("layer{i}.{suffix}");
            let found = tensors.iter().position(|(n, _, _)| *n == name).ok_or_else(
                || Error::WeightsMismatch(format!("missing tensor {name:?}")),
            )?;
            used[found] = true;
            let (_, dims, values) = &tensors[found];
            let expect: &[usize] = if suffix == "bias" {
                &[dst.len()]
            } else {
                &want_dims
            };
            if dims.as_slice() != expect {
                return Err(Error::WeightsMismatch(format!(
                    "tensor {name:?} has dims {dims:?}, architecture expects {expect:?}"
                )));
            }
            dst.copy_from_slice(values);
        }
    }
    if let Some(idx) = used.iter().position(|u| !u) {
        return Err(Error::WeightsMismatch(format!(
            "tensor {:?} does not belong to the architecture",
            tensors[idx].0
        )));
    }
    Ok(net)
}

/// Writes a network's parameters to `path`.
pub fn save_weights(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(net)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a weights file and instantiates `arch` with its parameters.
pub fn load_weights(path: &Path, arch: &Architecture) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_weights(&bytes, arch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    fn toy_net() -> (Architecture, Network) {
        let arch = Architecture::default_toy();
        let net = arch.build(91).unwrap();
        (arch, net)
    }

    fn params_of(net: &Network) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        named_params(net)
    }

    #[test]
    fn round_trip_matches_at_f32_precision() {
        let (arch, net) = toy_net();
        let bytes = encode_weights(&net);
        let loaded = decode_weights(&bytes, &arch).unwrap();
        for ((name, dims, orig), (lname, ldims, lvals)) in
            params_of(&net).iter().zip(params_of(&loaded).iter())
        {
            assert_eq!(name, lname);
            assert_eq!(dims, ldims);
            for (o, l) in orig.iter().zip(lvals) {
                assert_eq!(*o as f32, *l as f32);
                assert_eq!(*l, (*o as f32) as f64, "{name}: load must be exact f32");
            }
        }
    }

    #[test]
    fn second_round_trip_is_byte_identical() {
        let (arch, net) = toy_net();
        let bytes = encode_weights(&net);
        let reloaded = decode_weights(&bytes, &arch).unwrap();
        assert_eq!(encode_weights(&reloaded), bytes);
    }

    #[test]
    fn save_load_through_filesystem() {
        let (arch, net) = toy_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cxai");
        save_weights(&net, &path).unwrap();
        let loaded = load_weights(&path, &arch).unwrap();
        assert_eq!(encode_weights(&loaded), encode_weights(&net));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let (arch, net) = toy_net();
        let mut bytes = encode_weights(&net);
        bytes[0] = b'X';
        assert!(matches!(
            decode_weights(&bytes, &arch).unwrap_err(),
            Error::WeightsBadMagic
        ));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let (arch, net) = toy_net();
        let mut bytes = encode_weights(&net);
        bytes[4] = 2;
        assert!(matches!(
            decode_weights(&bytes, &arch).unwrap_err(),
            Error::WeightsVersion(2)
        ));
    }

    #[test]
    fn zero_tensor_count_is_empty_model() {
        let (arch, _) = toy_net();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CXAI");
        bytes.push(1);
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_weights(&bytes, &arch).unwrap_err(),
            Error::WeightsEmptyModel
        ));
    }

    #[test]
    fn truncation_is_detected_everywhere() {
        let (arch, net) = toy_net();
        let bytes = encode_weights(&net);
        // Cut the file at a few representative points: inside the header,
        // inside a name, inside dims, inside values, one byte short.
        for cut in [2usize, 7, 12, 30, bytes.len() - 1] {
            let err = decode_weights(&bytes[..cut], &arch).unwrap_err();
            match err {
                Error::WeightsTruncated { offset } => assert!(offset <= cut),
                other => panic!("cut at {cut}: expected truncation, got {other:?}"),
            }
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let (arch, net) = toy_net();
        let mut bytes = encode_weights(&net);
        bytes.push(0);
        assert!(matches!(
            decode_weights(&bytes, &arch).unwrap_err(),
            Error::WeightsMismatch(_)
        ));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let (_, net) = toy_net();
        let bytes = encode_weights(&net);
        let mut other = Architecture::default_toy();
        other.layers[0] = crate::network::LayerSpec::Conv {
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        assert!(matches!(
            decode_weights(&bytes, &other).unwrap_err(),
            Error::WeightsMismatch(_)
        ));
    }

    #[test]
    fn unknown_tensor_name_is_rejected() {
        let (arch, net) = toy_net();
        let mut bytes = encode_weights(&net);
        // First tensor name starts right after the 9-byte header and the
        // 2-byte name length: "layer0.weight" -> corrupt the index digit.
        let name_start = 9 + 2;
        assert_eq!(&bytes[name_start..name_start + 6], b"layer0");
        bytes[name_start + 5] = b'9';
        assert!(matches!(
            decode_weights(&bytes, &arch).unwrap_err(),
            Error::WeightsMismatch(_)
        ));
    }

    #[test]
    fn loaded_network_predicts_like_the_f32_cast_original() {
        let (arch, net) = toy_net();
        let loaded = decode_weights(&encode_weights(&net), &arch).unwrap();
        let mut rng = crate::rng::SplitMix64::new(6);
        let data: Vec<f64> = (0..1024).map(|_| rng.uniform(0.0, 1.0)).collect();
        let img = crate::tensor::Tensor::new(vec![1, 32, 32], data).unwrap();
        let a = net.forward(&img).unwrap();
        let b = loaded.forward(&img).unwrap();
        for (x, y) in a.logits().iter().zip(b.logits()) {
            assert!((x - y).abs() < 1e-3, "f32 cast drift too large: {x} vs {y}");
        }
    }
}
