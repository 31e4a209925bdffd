//! Checkpoint persistence.
//!
//! Binary layout (all integers and reals little-endian):
//!
//! ```text
//! magic          4 bytes  "NCL2"
//! version        u32      currently 1
//! payload:
//!   epoch        u64
//!   train_loss   f64
//!   train_acc    f64
//!   n_layers     u32      encoder affine maps + decision layer
//!   per layer:   in_dim u32, out_dim u32
//!   per layer:   weights in*out f64 row-major, bias out f64
//!   seed         u64
//!   rng state    4 x u64
//! checksum       u64      FNV-1a 64 of the payload bytes
//! ```
//!
//! Biases are always stored; a model configured without a decision bias
//! simply round-trips its zeros.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Layer, ModelParams};
use crate::rng::RngState;
use crate::train::Checkpoint;

pub const MAGIC: &[u8; 4] = b"NCL2";
pub const FORMAT_VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Malformed {
                path: self.path.clone(),
                reason: "unexpected end of file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode_payload(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.u64(ckpt.epoch as u64);
    w.f64(ckpt.train_loss);
    w.f64(ckpt.train_acc);
    let layers: Vec<&Layer> = ckpt.params.layers().collect();
    w.u32(layers.len() as u32);
    for layer in &layers {
        w.u32(layer.w.rows() as u32);
        w.u32(layer.w.cols() as u32);
    }
    for layer in &layers {
        for &v in layer.w.data() {
            w.f64(v);
        }
        for &v in &layer.b {
            w.f64(v);
        }
    }
    w.u64(ckpt.rng_state.seed());
    for word in ckpt.rng_state.state_words() {
        w.u64(word);
    }
    w.buf
}

/// Serializes a checkpoint to its on-disk byte representation.
pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let payload = encode_payload(ckpt);
    let mut out = Vec::with_capacity(payload.len() + 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
    out
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(ckpt))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parses checkpoint bytes, verifying magic, version, and checksum.
pub fn checkpoint_from_bytes(bytes: &[u8], origin: &str) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Malformed {
            path: origin.to_string(),
            reason: "missing NCL2 magic".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Malformed {
            path: origin.to_string(),
            reason: format!("unsupported format version {version}"),
        });
    }
    let payload = &bytes[8..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch {
            path: origin.to_string(),
            stored,
            computed,
        });
    }

    let mut r = Reader {
        bytes: payload,
        pos: 0,
        path: origin.to_string(),
    };
    let epoch = r.u64()? as usize;
    let train_loss = r.f64()?;
    let train_acc = r.f64()?;
    let n_layers = r.u32()? as usize;
    if n_layers < 1 {
        return Err(Error::Malformed {
            path: origin.to_string(),
            reason: "checkpoint must contain at least the decision layer".into(),
        });
    }
    let mut dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let din = r.u32()? as usize;
        let dout = r.u32()? as usize;
        dims.push((din, dout));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for &(din, dout) in &dims {
        let mut data = Vec::with_capacity(din * dout);
        for _ in 0..din * dout {
            data.push(r.f64()?);
        }
        let w = Matrix::new(din, dout, data).map_err(|_| Error::Malformed {
            path: origin.to_string(),
            reason: "non-finite weight".into(),
        })?;
        let mut b = Vec::with_capacity(dout);
        for _ in 0..dout {
            b.push(r.f64()?);
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                path: origin.to_string(),
                reason: "non-finite bias".into(),
            });
        }
        layers.push(Layer { w, b });
    }
    let seed = r.u64()?;
    let state = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];
    if r.pos != payload.len() {
        return Err(Error::Malformed {
            path: origin.to_string(),
            reason: "trailing bytes in payload".into(),
        });
    }
    let decision = layers.pop().expect("n_layers >= 1");
    Ok(Checkpoint {
        epoch,
        params: ModelParams {
            encoder: layers,
            decision,
        },
        rng_state: RngState::from_parts(seed, state),
        train_loss,
        train_acc,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    checkpoint_from_bytes(&bytes, &path.display().to_string())
}
