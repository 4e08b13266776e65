//! Binary checkpoint files.
//!
//! All integers and reals are little-endian.
//!
//! | bytes      | field                                  |
//! |------------|----------------------------------------|
//! | 8          | magic `FPPCKPT\0`                      |
//! | 4          | format version, `u32` (`1`)            |
//! | 4          | number of layer widths `L`, `u32`      |
//! | 8 × L      | layer widths, `u64`                    |
//! | 8          | round the checkpoint was approved, `u64` |
//! | 8          | approved loss estimate `e*`, `f64`     |
//! | 8          | parameter count `P`, `u64`             |
//! | 8 × P      | parameters, `f64`, layer-major order   |

use std::fs;
use std::path::Path;

use fpp_core::server::Checkpoint;
use fpp_core::{Architecture, ParamVector};

use crate::error::{Result, SimError};

pub const MAGIC: [u8; 8] = *b"FPPCKPT\0";
pub const VERSION: u32 = 1;

pub fn encode(arch: &Architecture, ck: &Checkpoint) -> Vec<u8> {
    let sizes = arch.layer_sizes();
    let mut out = Vec::with_capacity(40 + 8 * sizes.len() + 8 * ck.params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.extend_from_slice(&ck.round.to_le_bytes());
    out.extend_from_slice(&ck.loss.to_le_bytes());
    out.extend_from_slice(&(ck.params.len() as u64).to_le_bytes());
    for v in ck.params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<(Architecture, Checkpoint), String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let n_layers = c.u32()? as usize;
    if n_layers > (bytes.len() - c.pos) / 8 {
        return Err("layer count exceeds file size".into());
    }
    let sizes = (0..n_layers).map(|_| c.u64().map(|v| v as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
    let arch = Architecture::new(sizes).map_err(|e| e.to_string())?;
    let round = c.u64()?;
    let loss = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
    let count = c.u64()? as usize;
    if count != arch.param_count() {
        return Err(format!("{count} parameters stored, architecture needs {}", arch.param_count()));
    }
    let params = c
        .take(count.checked_mul(8).ok_or("parameter count overflow")?)?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    Ok((
        arch,
        Checkpoint {
            params: ParamVector::new(params),
            loss,
            round,
        },
    ))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Architecture, Checkpoint)> {
    decode_inner(bytes).map_err(|reason| SimError::format(path, reason))
}

pub fn save(path: &Path, arch: &Architecture, ck: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    }
    fs::write(path, encode(arch, ck)).map_err(|e| SimError::io(path, e))
}

pub fn load(path: &Path) -> Result<(Architecture, Checkpoint)> {
    let bytes = fs::read(path).map_err(|e| SimError::io(path, e))?;
    decode(&bytes, path)
}
