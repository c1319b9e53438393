//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "GAPW" | version u32 | config_len u32 | config JSON
//! | n_params u64 | n_params × f64 | n_running u64 | n_running × f64
//! | has_optimizer u8 [ | step u64 | n_params × f64 (m) | n_params × f64 (v) ]
//! ```

use std::path::Path;

use super::{AdamWState, ModelConfig, ModelParams, RegressorError};

pub const MAGIC: &[u8; 4] = b"GAPW";
pub const VERSION: u32 = 1;

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    out.reserve(vals.len() * 8);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(params: &ModelParams, optimizer: Option<&AdamWState>) -> Vec<u8> {
    let cfg = serde_json::to_vec(params.config()).expect("model config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.values().len() as u64).to_le_bytes());
    put_f64s(&mut out, params.values());
    out.extend_from_slice(&(params.running().len() as u64).to_le_bytes());
    put_f64s(&mut out, params.running());
    match optimizer {
        Some(st) => {
            out.push(1);
            out.extend_from_slice(&st.step.to_le_bytes());
            put_f64s(&mut out, &st.m);
            put_f64s(&mut out, &st.v);
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RegressorError> {
        if self.pos + n > self.buf.len() {
            return Err(RegressorError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, RegressorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RegressorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, RegressorError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| RegressorError::Checkpoint("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(ModelParams, Option<AdamWState>), RegressorError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(RegressorError::Checkpoint("bad magic, expected GAPW".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RegressorError::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| RegressorError::Checkpoint(format!("config: {e}")))?;
    let n = r.u64()? as usize;
    let values = r.f64s(n)?;
    let nr = r.u64()? as usize;
    let running = r.f64s(nr)?;
    let params = ModelParams::from_parts(config, values, running)?;
    let opt = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            Some(AdamWState { step, m, v })
        }
        f => return Err(RegressorError::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    if r.pos != buf.len() {
        return Err(RegressorError::Checkpoint("trailing bytes".into()));
    }
    Ok((params, opt))
}

pub fn save(path: &Path, params: &ModelParams, optimizer: Option<&AdamWState>) -> Result<(), RegressorError> {
    std::fs::write(path, to_bytes(params, optimizer))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelParams, Option<AdamWState>), RegressorError> {
    from_bytes(&std::fs::read(path)?)
}
