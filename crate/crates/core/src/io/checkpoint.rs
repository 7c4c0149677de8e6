//! Policy checkpoints: magic, format version, the TOML config snapshot, the
//! step counters, then named 32-bit arrays with shape records (weights,
//! optimizer moments and normalization statistics).

use std::fs;
use std::path::Path;

use crate::autograd::Mat;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::optim::AdamW;
use crate::pipeline::NormStats;
use crate::policy::{Policy, Trainer};

pub const MAGIC: &[u8; 8] = b"HFCKPT\0\0";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, name: &str, m: &Mat) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(2);
    put_u32(out, m.nrows() as u32);
    put_u32(out, m.ncols() as u32);
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn encode(trainer: &Trainer) -> Result<Vec<u8>> {
    let p = &trainer.policy;
    let cfg = p.cfg.to_toml_string();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(trainer.step as u64).to_le_bytes());
    out.extend_from_slice(&trainer.opt.step.to_le_bytes());
    let n = 3 * p.store.len() + 1;
    put_u32(&mut out, n as u32);
    let norm = p.norm.to_vec();
    put_array(&mut out, "norm", &Mat::from_shape_vec((1, norm.len()), norm).expect("row"));
    for (id, (name, value)) in p.store.iter().enumerate() {
        put_array(&mut out, &format!("param:{name}"), value);
        put_array(&mut out, &format!("adam.m:{name}"), &trainer.opt.m[id]);
        put_array(&mut out, &format!("adam.v:{name}"), &trainer.opt.v[id]);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self) -> Result<(String, Mat)> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::format(self.path, "array name is not UTF-8"))?;
        let rank = self.take(1)?[0];
        if rank != 2 {
            return Err(Error::format(self.path, format!("array {name} has rank {rank}, expected 2")));
        }
        let (r, c) = (self.u32()? as usize, self.u32()? as usize);
        let data = self.take(4 * r * c)?;
        let vals = data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok((name, Mat::from_shape_vec((r, c), vals).expect("shape")))
    }
}

/// Rebuilds the trainer (policy, optimizer state, step) from bytes.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Trainer> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|_| Error::format(path, "config is not UTF-8"))?;
    let cfg = RunConfig::from_toml_str(cfg_text)?;
    let step = r.u64()? as usize;
    let adam_step = r.u64()?;
    let n = r.u32()? as usize;
    let mut arrays = std::collections::HashMap::with_capacity(n);
    for _ in 0..n {
        let (name, m) = r.array()?;
        arrays.insert(name, m);
    }
    let norm_row = arrays.remove("norm").ok_or_else(|| Error::format(path, "missing normalization statistics"))?;
    let norm = NormStats::from_vec(norm_row.as_slice().expect("row"), cfg.world.task.proprio_dim(), cfg.world.task.action_dim())?;
    let mut policy = Policy::new(&cfg, norm)?;
    let mut opt = AdamW::new(&policy.store, cfg.train.weight_decay);
    opt.step = adam_step;
    for id in 0..policy.store.len() {
        let name = policy.store.name(id).to_string();
        let mut fetch = |prefix: &str| -> Result<Mat> {
            let key = format!("{prefix}:{name}");
            let m = arrays.remove(&key).ok_or_else(|| Error::format(path, format!("missing array {key}")))?;
            if m.dim() != policy.store.value(id).dim() {
                return Err(Error::format(path, format!("array {key} has shape {:?}", m.dim())));
            }
            Ok(m)
        };
        let (w, m, v) = (fetch("param")?, fetch("adam.m")?, fetch("adam.v")?);
        *policy.store.value_mut(id) = w;
        opt.m[id] = m;
        opt.v[id] = v;
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(Error::format(path, format!("unexpected array {extra}")));
    }
    Ok(Trainer { policy, opt, step })
}

pub fn write(path: &Path, trainer: &Trainer) -> Result<()> {
    let bytes = encode(trainer)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
