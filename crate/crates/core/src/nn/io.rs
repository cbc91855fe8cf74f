//! Binary weight file.
//!
//! ```text
//! magic    "SSTK"
//! version  u16
//! dtype    u8      0 = f32 (1 = int8, reserved)
//! layers   u16
//! per layer:
//!   in_dim u16, out_dim u16, kind u8
//!   weights  f32 * rows * in_dim   (row-major)
//!   bias     f32 * rows
//! crc32    u32     over every preceding byte
//! ```
//!
//! All integers and floats are little-endian. `kind` is an activation tag for
//! dense layers (`rows = out_dim`) or [`LSTM_TAG`] for recurrent layers, whose
//! gate block has `rows = 4 * out_dim` and `in_dim + out_dim` columns.

use std::path::Path;

use super::dense::{check_chain, Activation, DenseLayer, DenseNet, LayerSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SSTK";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_INT8: u8 = 1;
pub const LSTM_TAG: u8 = 0x10;

/// One layer as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub kind: u8,
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerRecord {
    fn rows(kind: u8, out_dim: usize) -> usize {
        if kind == LSTM_TAG {
            4 * out_dim
        } else {
            out_dim
        }
    }

    fn cols(kind: u8, in_dim: usize, out_dim: usize) -> usize {
        if kind == LSTM_TAG {
            in_dim + out_dim
        } else {
            in_dim
        }
    }
}

pub fn encode(records: &[LayerRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    let n = u16::try_from(records.len())
        .map_err(|_| Error::TopologyMismatch("too many layers".into()))?;
    out.extend_from_slice(&n.to_le_bytes());
    for r in records {
        for d in [r.in_dim, r.out_dim] {
            let d = u16::try_from(d)
                .map_err(|_| Error::TopologyMismatch(format!("dimension {d} exceeds u16")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(r.kind);
        for v in r.weights.iter().chain(&r.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::TopologyMismatch("layer data runs past end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::TopologyMismatch("layer too large".into())
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<LayerRecord>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 4 + 2 + 1 + 2 + 4 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::TopologyMismatch(format!("unsupported format version {version}")));
    }
    match r.u8()? {
        DTYPE_F32 => {}
        DTYPE_INT8 => {
            return Err(Error::TopologyMismatch("int8 weights are reserved, not supported".into()))
        }
        other => return Err(Error::TopologyMismatch(format!("unknown dtype {other}"))),
    }
    let n = r.u16()? as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let in_dim = r.u16()? as usize;
        let out_dim = r.u16()? as usize;
        let kind = r.u8()?;
        if kind != LSTM_TAG && Activation::from_tag(kind).is_none() {
            return Err(Error::TopologyMismatch(format!("unknown layer kind {kind}")));
        }
        let rows = LayerRecord::rows(kind, out_dim);
        let cols = LayerRecord::cols(kind, in_dim, out_dim);
        let weights = r.f32s(rows * cols)?;
        let bias = r.f32s(rows)?;
        records.push(LayerRecord {
            kind,
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    if r.pos != body.len() {
        return Err(Error::TopologyMismatch(format!(
            "{} trailing bytes after last layer",
            body.len() - r.pos
        )));
    }
    Ok(records)
}

impl DenseNet {
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers
            .iter()
            .map(|l| LayerRecord {
                kind: l.spec.activation.tag(),
                in_dim: l.spec.in_dim,
                out_dim: l.spec.out_dim,
                weights: l.weights.iter().map(|&v| v as f32).collect(),
                bias: l.bias.iter().map(|&v| v as f32).collect(),
            })
            .collect()
    }

    /// Rebuilds a dense net; dropout is a training setting and comes back as 0.
    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        let mut specs = Vec::with_capacity(records.len());
        for r in records {
            let activation = Activation::from_tag(r.kind).ok_or_else(|| {
                Error::TopologyMismatch(format!("layer kind {} is not dense", r.kind))
            })?;
            specs.push(LayerSpec::new(r.in_dim, r.out_dim, activation));
        }
        check_chain(&specs)?;
        let layers = specs
            .into_iter()
            .zip(records)
            .map(|(spec, r)| DenseLayer {
                spec,
                weights: r.weights.iter().map(|&v| v as f64).collect(),
                bias: r.bias.iter().map(|&v| v as f64).collect(),
            })
            .collect();
        Ok(DenseNet {
            layers,
            dropout_rate: 0.0,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(&self.to_records())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_records(&decode(bytes)?)
    }

    /// Decodes and checks the topology against `expected`.
    pub fn from_bytes_expecting(bytes: &[u8], expected: &[LayerSpec]) -> Result<Self> {
        let net = Self::from_bytes(bytes)?;
        if net.specs() != expected {
            return Err(Error::TopologyMismatch(format!(
                "expected {expected:?}, found {:?}",
                net.specs()
            )));
        }
        Ok(net)
    }
}

pub fn save_weights(net: &DenseNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, net.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<DenseNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    DenseNet::from_bytes(&bytes)
}
