//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "CHEWSSLW"
//! version          u32      FORMAT_VERSION
//! segment count    u32
//! per segment:
//!   name           u32 length + UTF-8 bytes
//!   kind           u8
//!   trainable      u8
//!   input shape    u8 tag (0 signal, 1 vector) + u32 dims (channels, len | dim)
//!   layer count    u32
//!   per layer:     u8 tag, then
//!                    conv:      u32 out_channels, u32 kernel_len, u8 activation
//!                    maxpool2:  -
//!                    adaptive:  u32 target_len
//!                    flatten:   -
//!                    dense:     u32 width, u8 activation
//!   tensor count   u32
//!   per tensor:
//!     name         u32 length + UTF-8 bytes
//!     dtype        u8 (0 f32, 1 f64)
//!     rank         u32
//!     dims         u64 each
//!     data         raw little-endian elements
//! ```

use std::fs;
use std::path::Path;

use super::arch::{Activation, ArchKind, ArchitectureSpec, LayerSpec, Shape};
use super::graph::{ModelGraph, ParamSet, Segment};
use crate::error::{Error, Result};
use crate::nn::{Precision, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"CHEWSSLW";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes a model into the weight-file byte layout.
pub fn encode_weights<T: Scalar>(model: &ModelGraph<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, model.segments().len());
    for seg in model.segments() {
        put_str(&mut out, &seg.name);
        out.push(seg.arch.kind.tag());
        out.push(seg.trainable as u8);
        match seg.arch.input {
            Shape::Signal { channels, len } => {
                out.push(0);
                put_u32(&mut out, channels);
                put_u32(&mut out, len);
            }
            Shape::Vector { dim } => {
                out.push(1);
                put_u32(&mut out, dim);
            }
        }
        put_u32(&mut out, seg.arch.layers.len());
        for layer in &seg.arch.layers {
            match *layer {
                LayerSpec::Conv { out_channels, kernel_len, activation } => {
                    out.push(0);
                    put_u32(&mut out, out_channels);
                    put_u32(&mut out, kernel_len);
                    out.push(activation.tag());
                }
                LayerSpec::MaxPool2 => out.push(1),
                LayerSpec::AdaptiveMaxPool { target_len } => {
                    out.push(2);
                    put_u32(&mut out, target_len);
                }
                LayerSpec::Flatten => out.push(3),
                LayerSpec::Dense { width, activation } => {
                    out.push(4);
                    put_u32(&mut out, width);
                    out.push(activation.tag());
                }
            }
        }
        put_u32(&mut out, seg.params.len());
        for (name, t) in seg.params.entries() {
            put_str(&mut out, name);
            out.push(T::PRECISION.tag());
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
    }
    out
}

pub fn save_weights<T: Scalar>(model: &ModelGraph<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::WeightFile { path: self.path.to_path_buf(), message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.usize32()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.err("name is not valid UTF-8"))
    }

    fn activation(&mut self) -> Result<Activation> {
        let tag = self.u8()?;
        Activation::from_tag(tag).ok_or_else(|| self.err(format!("unknown activation tag {tag}")))
    }
}

/// Parses the weight-file byte layout. `path` is only used in diagnostics.
pub fn decode_weights<T: Scalar>(bytes: &[u8], path: &Path) -> Result<ModelGraph<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(r.err("bad magic bytes (not a weight file)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: FORMAT_VERSION });
    }
    let n_segments = r.usize32()?;
    let mut segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let name = r.string()?;
        let kind_tag = r.u8()?;
        let kind = ArchKind::from_tag(kind_tag).ok_or_else(|| r.err(format!("unknown segment kind {kind_tag}")))?;
        let trainable = r.u8()? != 0;
        let input = match r.u8()? {
            0 => Shape::Signal { channels: r.usize32()?, len: r.usize32()? },
            1 => Shape::Vector { dim: r.usize32()? },
            t => return Err(r.err(format!("unknown shape tag {t}"))),
        };
        let n_layers = r.usize32()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(match r.u8()? {
                0 => LayerSpec::Conv {
                    out_channels: r.usize32()?,
                    kernel_len: r.usize32()?,
                    activation: r.activation()?,
                },
                1 => LayerSpec::MaxPool2,
                2 => LayerSpec::AdaptiveMaxPool { target_len: r.usize32()? },
                3 => LayerSpec::Flatten,
                4 => LayerSpec::Dense { width: r.usize32()?, activation: r.activation()? },
                t => return Err(r.err(format!("unknown layer tag {t}"))),
            });
        }
        let n_tensors = r.usize32()?;
        let mut entries = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let tname = r.string()?;
            let dtype_tag = r.u8()?;
            let dtype = Precision::from_tag(dtype_tag).ok_or_else(|| r.err(format!("unknown dtype tag {dtype_tag}")))?;
            if dtype != T::PRECISION {
                return Err(r.err(format!("tensor {tname} is {dtype:?} but {:?} was requested", T::PRECISION)));
            }
            let rank = r.usize32()?;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(usize::try_from(r.u64()?).map_err(|_| r.err("dimension overflow"))?);
            }
            let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.err("size overflow"))?;
            let size = dtype.size_of();
            let raw = r.take(count.checked_mul(size).ok_or_else(|| r.err("size overflow"))?)?;
            let data = raw.chunks_exact(size).map(T::read_le).collect();
            entries.push((tname, Tensor::from_vec(&dims, data)?));
        }
        let arch = ArchitectureSpec { kind, input, layers };
        segments.push(Segment::new(name, arch, ParamSet::new(entries)?, trainable)?);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ModelGraph::new(segments)
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelGraph<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, path)
}
