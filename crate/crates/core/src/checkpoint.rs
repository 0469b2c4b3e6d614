//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "TANGNNCK" | u32 version | u8 variant | u8 task
//! u64 input_dim | u64 hidden | u64 layers | u64 heads | u64 classes
//! u64 tensor count | per tensor: u64 rows, u64 cols, rows*cols f64
//! u64 aux count    | per vector: u64 dim, dim f64
//! ```
//!
//! Tensors appear in the model's declaration order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::layers::{ModelConfig, ModelParams, VariantKind};
use crate::tasks::TaskKind;
use crate::topm::AuxiliaryVector;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"TANGNNCK";
pub const VERSION: u32 = 1;

const TASKS: [TaskKind; 4] = [TaskKind::Node, TaskKind::Link, TaskKind::Sentiment, TaskKind::Regression];

fn task_code(t: TaskKind) -> u8 {
    TASKS.iter().position(|&x| x == t).expect("listed") as u8
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(64 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(params.variant_code());
    out.push(task_code(cfg.task));
    for d in [cfg.input_dim, cfg.hidden, cfg.layers, cfg.heads, cfg.classes] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(params.values().len() as u64).to_le_bytes());
    for t in params.values() {
        out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
        for x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&(params.aux().len() as u64).to_le_bytes());
    for a in params.aux() {
        out.extend_from_slice(&(a.dim() as u64).to_le_bytes());
        for x in a.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("count {v} too large")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let code = r.u8()?;
    let variant = VariantKind::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown variant code {code}")))?;
    let code = r.u8()?;
    let task = *TASKS
        .get(code as usize)
        .ok_or_else(|| Error::Checkpoint(format!("unknown task code {code}")))?;
    let config = ModelConfig {
        variant,
        task,
        input_dim: r.count()?,
        hidden: r.count()?,
        layers: r.count()?,
        heads: r.count()?,
        classes: r.count()?,
    };
    let n = r.count()?;
    let mut values = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let (rows, cols) = (r.count()?, r.count()?);
        let data = r.floats(rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        values.push(Array2::from_shape_vec((rows, cols), data).expect("length matches"));
    }
    let n = r.count()?;
    let mut aux = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let dim = r.count()?;
        let a = AuxiliaryVector::new(Array1::from(r.floats(dim)?))
            .map_err(|e| Error::Checkpoint(format!("auxiliary vector: {e}")))?;
        aux.push(a);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    ModelParams::from_parts(config, values, aux).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let buf = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_bytes(&buf)
}

/// Fails unless `params` was built for exactly `expected`.
pub fn check_compatible(params: &ModelParams, expected: &ModelConfig) -> Result<()> {
    let got = params.config();
    if got != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint is {} (input {}, hidden {}, layers {}, heads {}, task {}, classes {}) but the run expects {} (input {}, hidden {}, layers {}, heads {}, task {}, classes {})",
            got.variant, got.input_dim, got.hidden, got.layers, got.heads, got.task, got.classes,
            expected.variant, expected.input_dim, expected.hidden, expected.layers, expected.heads, expected.task, expected.classes,
        )));
    }
    Ok(())
}
