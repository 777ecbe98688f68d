//! Binary model container.
//!
//! ```text
//! b"BMNMODEL" | u32 LE header length | JSON header | f64 LE blocks
//! ```
//!
//! Per layer, the blocks are `W` (row-major), `b`, and for learned masks the
//! logits, `raw_a` and `raw_b` grids. The header carries shapes,
//! activations and mask modes; values round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::BetaHyperPrior;
use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer, MaskMode, VariationalMaskParams};
use crate::network::{Layer, Network};
use crate::numerics::Matrix;

pub const MODEL_MAGIC: &[u8; 8] = b"BMNMODEL";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModeHeader {
    None,
    Dropout {
        rate: f64,
    },
    DropConnect {
        keep_prob: f64,
    },
    #[serde(rename = "dropconnect++")]
    Learned {
        prior: BetaHyperPrior,
    },
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    mode: ModeHeader,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    layers: Vec<LayerHeader>,
}

fn push(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(net: &Network) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        layers: net
            .layers
            .iter()
            .map(|l| LayerHeader {
                in_dim: l.dense.in_dim(),
                out_dim: l.dense.out_dim(),
                activation: l.dense.activation,
                mode: match &l.mode {
                    MaskMode::None => ModeHeader::None,
                    MaskMode::Dropout { rate } => ModeHeader::Dropout { rate: *rate },
                    MaskMode::DropConnect { keep_prob } => ModeHeader::DropConnect { keep_prob: *keep_prob },
                    MaskMode::DropConnectPP(p) => ModeHeader::Learned { prior: p.prior },
                },
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Model("header too large".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for l in &net.layers {
        push(&mut out, l.dense.weights.as_slice());
        push(&mut out, &l.dense.bias);
        if let Some(p) = l.mode.variational() {
            push(&mut out, p.logits.as_slice());
            push(&mut out, p.raw_a.as_slice());
            push(&mut out, p.raw_b.as_slice());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Model(format!("truncated model: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Model("block size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunks are 8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let v = self.floats(rows * cols)?;
        Matrix::from_vec(rows, cols, v).map_err(|e| Error::Model(e.to_string()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Network> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MODEL_MAGIC {
        return Err(Error::Model("not a model file (bad magic)".into()));
    }
    let len = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(c.take(len)?).map_err(|e| Error::Model(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported format version {}", header.format_version)));
    }
    let mut layers = Vec::with_capacity(header.layers.len());
    for h in header.layers {
        let weights = c.matrix(h.out_dim, h.in_dim)?;
        let bias = c.floats(h.out_dim)?;
        let dense = DenseLayer::new(weights, bias, h.activation)?;
        let mode = match h.mode {
            ModeHeader::None => MaskMode::None,
            ModeHeader::Dropout { rate } => MaskMode::Dropout { rate },
            ModeHeader::DropConnect { keep_prob } => MaskMode::DropConnect { keep_prob },
            ModeHeader::Learned { prior } => {
                let mut p = VariationalMaskParams::new(h.out_dim, h.in_dim, prior)?;
                p.logits = c.matrix(h.out_dim, h.in_dim + 1)?;
                p.raw_a = c.matrix(h.out_dim, h.in_dim + 1)?;
                p.raw_b = c.matrix(h.out_dim, h.in_dim + 1)?;
                MaskMode::DropConnectPP(p)
            }
        };
        mode.validate_for(&dense).map_err(|e| Error::Model(e.to_string()))?;
        layers.push(Layer { dense, mode });
    }
    if c.pos != bytes.len() {
        return Err(Error::Model(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Network::new(layers)
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
