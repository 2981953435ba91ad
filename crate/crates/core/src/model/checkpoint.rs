//! Binary checkpoints: config, named tensors and optional optimizer state,
//! all little-endian.

use std::path::Path;

use super::{AdamW, AdamWConfig, ModelConfig, ModelError, Policy};

const MAGIC: &[u8; 8] = b"SCOREGEN";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub policy: Policy,
    pub optimizer: Option<AdamW>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Checkpoint("bad utf-8".into()))
    }

    fn f64s(&mut self, expected: usize) -> Result<Vec<f64>, ModelError> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(ModelError::Checkpoint(format!("expected {expected} values, found {n}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.policy.config.to_string());
        let tensors = &self.policy.layout.tensors;
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, &self.policy.params[t.offset..t.offset + t.len()]);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                for x in [o.config.beta1, o.config.beta2, o.config.eps, o.config.weight_decay] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out.extend_from_slice(&o.step.to_le_bytes());
                put_f64s(&mut out, &o.m);
                put_f64s(&mut out, &o.v);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let config: ModelConfig = r.str()?.parse()?;
        let mut policy = Policy::new(config)?;
        let count = r.u32()? as usize;
        if count != policy.layout.tensors.len() {
            return Err(ModelError::Checkpoint("tensor count does not match config".into()));
        }
        for i in 0..count {
            let t = policy.layout.tensors[i].clone();
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if name != t.name || shape != t.shape {
                return Err(ModelError::Checkpoint(format!("unexpected tensor {name} {shape:?}")));
            }
            let vals = r.f64s(t.len())?;
            policy.params[t.offset..t.offset + t.len()].copy_from_slice(&vals);
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamWConfig {
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                    weight_decay: r.f64()?,
                };
                let step = r.u64()?;
                let n = policy.num_params();
                let m = r.f64s(n)?;
                let v = r.f64s(n)?;
                Some(AdamW::from_state(&policy, config, step, m, v))
            }
            x => return Err(ModelError::Checkpoint(format!("bad optimizer flag {x}"))),
        };
        if r.pos != buf.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { policy, optimizer })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
