//! Versioned binary checkpoint: action space, decision counter, RNG state
//! and both Q-functions. All numbers are little-endian; parameters are raw
//! 64-bit floats so a save/load round trip is bit-exact.
//!
//! ```text
//! magic "DFDQNCKP" | version u32
//! basis_count u32 | r1 u32 | r2 u32 | step u64
//! has_rng u8 [seed 32 bytes | stream u64 | word_pos u128]
//! online q-function | target q-function
//! ```
//!
//! A q-function block is either `0u8, action_count u32, rows u64,
//! (key u64, values f64 * action_count) * rows` for tables or
//! `1u8, rank u32, dims u32 * rank, layers u32, (kind u8, a u32, b u32, c u32) * layers,
//! params, optimizer` for networks, where each array set is
//! `count u32, (len u64, f64 * len) * count` (weights first, then biases).

use std::fs;
use std::io;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::agent::{QFunction, QTable};
use crate::frameskip::ExtendedActionSpace;
use crate::nn::{LayerSpec, NetworkParams, ParamArrays, TensorShape};

const MAGIC: &[u8; 8] = b"DFDQNCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub space: ExtendedActionSpace,
    pub step: u64,
    pub rng: Option<RngState>,
    pub online: QFunction,
    pub target: QFunction,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.space.basis_count() as u32);
        w.u32(self.space.r1());
        w.u32(self.space.r2());
        w.u64(self.step);
        match &self.rng {
            Some(r) => {
                w.u8(1);
                w.0.extend_from_slice(&r.seed);
                w.u64(r.stream);
                w.0.extend_from_slice(&r.word_pos.to_le_bytes());
            }
            None => w.u8(0),
        }
        w.qfunction(&self.online);
        w.qfunction(&self.target);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let (basis, r1, r2) = (r.u32()? as usize, r.u32()?, r.u32()?);
        let space = ExtendedActionSpace::new(basis, r1, r2).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let step = r.u64()?;
        let rng = match r.u8()? {
            0 => None,
            1 => {
                let mut seed = [0u8; 32];
                seed.copy_from_slice(r.take(32)?);
                let stream = r.u64()?;
                let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
                Some(RngState { seed, stream, word_pos })
            }
            other => return Err(CheckpointError::Corrupt(format!("rng flag {other}"))),
        };
        let online = r.qfunction()?;
        let target = r.qfunction()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        for q in [&online, &target] {
            if q.action_count() != space.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "q-function has {} outputs, space has {}",
                    q.action_count(),
                    space.len()
                )));
            }
        }
        Ok(Self { space, step, rng, online, target })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn arrays(&mut self, a: &ParamArrays) {
        self.u32(a.weights.len() as u32);
        for arr in a.weights.iter().chain(&a.biases) {
            self.u64(arr.len() as u64);
            self.f64s(arr);
        }
    }
    fn qfunction(&mut self, q: &QFunction) {
        match q {
            QFunction::Tabular(t) => {
                self.u8(0);
                self.u32(t.action_count() as u32);
                self.u64(t.len() as u64);
                for (key, row) in t.rows() {
                    self.u64(key);
                    self.f64s(row);
                }
            }
            QFunction::Network(n) => {
                self.u8(1);
                let dims = n.input_shape().dims();
                self.u32(dims.len() as u32);
                dims.iter().for_each(|&d| self.u32(d as u32));
                let specs = n.layer_specs();
                self.u32(specs.len() as u32);
                for spec in specs {
                    let (kind, a, b, c) = match spec {
                        LayerSpec::Conv { filters, size, stride } => (0, filters, size, stride),
                        LayerSpec::Dense { units } => (1, units, 0, 0),
                        LayerSpec::Rectifier => (2, 0, 0, 0),
                    };
                    self.u8(kind);
                    self.u32(a as u32);
                    self.u32(b as u32);
                    self.u32(c as u32);
                }
                self.arrays(&n.params);
                self.arrays(&n.optimizer);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn arrays(&mut self) -> Result<ParamArrays, CheckpointError> {
        let count = self.u32()? as usize;
        let read = |this: &mut Self| -> Result<Vec<Vec<f64>>, CheckpointError> {
            (0..count)
                .map(|_| {
                    let len = this.u64()? as usize;
                    this.f64s(len)
                })
                .collect()
        };
        let weights = read(self)?;
        let biases = read(self)?;
        Ok(ParamArrays { weights, biases })
    }
    fn qfunction(&mut self) -> Result<QFunction, CheckpointError> {
        match self.u8()? {
            0 => {
                let actions = self.u32()? as usize;
                let rows = self.u64()?;
                let mut table = QTable::new(actions);
                for _ in 0..rows {
                    let key = self.u64()?;
                    let values = self.f64s(actions)?;
                    table.row_mut(key).copy_from_slice(&values);
                }
                Ok(QFunction::Tabular(table))
            }
            1 => {
                let rank = self.u32()? as usize;
                let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
                let shape = TensorShape::new(dims).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
                let count = self.u32()? as usize;
                let mut layers = Vec::with_capacity(count);
                for _ in 0..count {
                    let kind = self.u8()?;
                    let (a, b, c) = (self.u32()? as usize, self.u32()? as usize, self.u32()? as usize);
                    layers.push(match kind {
                        0 => LayerSpec::Conv { filters: a, size: b, stride: c },
                        1 => LayerSpec::Dense { units: a },
                        2 => LayerSpec::Rectifier,
                        k => return Err(CheckpointError::Corrupt(format!("layer kind {k}"))),
                    });
                }
                let params = self.arrays()?;
                let optimizer = self.arrays()?;
                let net = NetworkParams::from_parts(&layers, &shape, params, optimizer)
                    .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
                Ok(QFunction::Network(net))
            }
            tag => Err(CheckpointError::Corrupt(format!("q-function tag {tag}"))),
        }
    }
}
