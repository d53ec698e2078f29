//! Model checkpoint format:
//!
//! ```text
//! b"SSIM0DEL"
//! u32 LE byte length, then UTF-8 `key=value` lines (arch, depth, base_channels, seed)
//! parameters as f64 LE, declaration order, to end of file
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelParams, UNetConfig};
use crate::error::{Result, SsiError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSIM0DEL";

pub fn write_checkpoint(params: &ModelParams, out: &mut impl Write) -> std::io::Result<()> {
    let cfg = params.config();
    let header = format!(
        "arch=unet\ndepth={}\nbase_channels={}\nseed={}\n",
        cfg.depth, cfg.base_channels, cfg.seed
    );
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

/// Parse a checkpoint; `origin` only labels errors.
pub fn read_checkpoint(input: &mut impl Read, origin: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| SsiError::io(origin, e))?;
    let bad = |m: &str| SsiError::format(origin, m.to_string());
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + len {
        return Err(bad("truncated header"));
    }
    let text = std::str::from_utf8(&bytes[12..12 + len]).map_err(|_| bad("header is not UTF-8"))?;
    let mut cfg = UNetConfig::default();
    let mut arch = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad("malformed header line"))?;
        let num = || v.trim().parse::<u64>().map_err(|_| bad(&format!("bad value for {k}")));
        match k.trim() {
            "arch" => arch = Some(v.trim().to_string()),
            "depth" => cfg.depth = num()? as usize,
            "base_channels" => cfg.base_channels = num()? as usize,
            "seed" => cfg.seed = num()?,
            _ => {}
        }
    }
    if arch.as_deref() != Some("unet") {
        return Err(bad("unsupported architecture"));
    }
    cfg.validate().map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[12 + len..];
    if body.len() != cfg.parameter_count() * 8 {
        return Err(bad(&format!(
            "expected {} parameters, found {} bytes",
            cfg.parameter_count(),
            body.len()
        )));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ModelParams::from_values(cfg, values).map_err(|e| bad(&e.to_string()))
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf).map_err(|e| SsiError::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| SsiError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut f = std::fs::File::open(path).map_err(|e| SsiError::io(path, e))?;
    read_checkpoint(&mut f, path)
}
