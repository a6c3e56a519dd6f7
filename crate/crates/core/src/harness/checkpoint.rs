use std::path::Path;

use crate::config::RunConfig;
use crate::diffcore::Tensor;
use crate::discovery::OptimalityTable;
use crate::error::{Error, Result};
use crate::policy::{ModelDims, SkillModel, POLICY_HIDDEN};

pub const MAGIC: &[u8; 4] = b"SDIL";
pub const VERSION: u32 = 1;

const OP_RECORD: &str = "table.op";
const SCORES_RECORD: &str = "table.scores";

/// Named tensors plus the seed and config they were produced with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    /// `RunConfig` text form.
    pub config: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ckpt_err("truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ckpt_err("name is not UTF-8"))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn from_model(model: &SkillModel<f32>, cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.seed,
            config: cfg.to_text(),
            tensors: model
                .store
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.value.clone()))
                .collect(),
        }
    }

    /// Adds the skill optimality vector and the per-transition scores.
    pub fn with_table(mut self, table: &OptimalityTable) -> Self {
        let f = |v: &[f64]| Tensor::vector(v.iter().map(|&x| x as f32).collect());
        self.tensors.push((OP_RECORD.into(), f(&table.stats.op)));
        self.tensors.push((SCORES_RECORD.into(), f(&table.scores)));
        self
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_text(&self.config)
    }

    pub fn skill_optimality(&self) -> Option<Vec<f64>> {
        self.tensor(OP_RECORD).map(|t| t.to_f64_vec())
    }

    pub fn transition_scores(&self) -> Option<Vec<f64>> {
        self.tensor(SCORES_RECORD).map(|t| t.to_f64_vec())
    }

    /// Rebuilds the model; dimensions come from the config and tensor shapes.
    pub fn model(&self) -> Result<SkillModel<f32>> {
        let cfg = self.run_config()?;
        let shape = |name: &str| -> Result<Vec<usize>> {
            self.tensor(name)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| ckpt_err(format!("missing tensor {name}")))
        };
        let protos = shape("g.prototypes")?;
        let first = shape("pi_low.0.w")?;
        let last = shape(&format!("pi_low.{}.b", POLICY_HIDDEN.len()))?;
        if protos.len() != 2 || first.len() != 2 || first[0] < protos[1] {
            return Err(ckpt_err("inconsistent tensor shapes"));
        }
        let dims = ModelDims {
            state_dim: first[0] - protos[1],
            n_actions: last[0],
            window: cfg.window,
            n_skills: protos[0],
            skill_dim: protos[1],
        };
        let mut model = SkillModel::new(dims, 0)?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = self
                .tensor(&name)
                .ok_or_else(|| ckpt_err(format!("missing tensor {name}")))?;
            model
                .store
                .set(id, t.clone())
                .map_err(|e| ckpt_err(format!("tensor {name}: {e}")))?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_u32(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != MAGIC {
            return Err(ckpt_err("bad magic: not a checkpoint or unsupported version"));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(ckpt_err(format!("unsupported version {version}")));
        }
        if buf.len() < 12 {
            return Err(ckpt_err("truncated file"));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let mut r = Reader { buf: body, pos: 8 };
        let seed = r.u64()?;
        let config = r.string()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let bytes = r.take(numel.checked_mul(4).ok_or_else(|| ckpt_err("tensor too large"))?)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data).map_err(|e| ckpt_err(e.to_string()))?));
        }
        if r.pos != body.len() {
            return Err(ckpt_err("trailing bytes after records"));
        }
        if crc32fast::hash(body) != crc {
            return Err(ckpt_err("checksum mismatch"));
        }
        Ok(Self { seed, config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
