//! `XMN1` cohort cache: a little-endian header (`"XMN1"`, version, count,
//! size) followed by per-sample index `u32`, label `u8`, then image and
//! depth as `S·S` `f32` values each.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::RgbdSample;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XMN1";
pub const VERSION: u32 = 1;

pub fn encode(samples: &[RgbdSample], size: usize) -> Vec<u8> {
    let px = size * size;
    let mut out = Vec::with_capacity(16 + samples.len() * (5 + 8 * px));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, samples.len() as u32, size as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in samples {
        assert_eq!(s.image.len(), px, "sample size differs from cache size");
        out.extend_from_slice(&s.index.to_le_bytes());
        out.push(s.label);
        for v in s.image.iter().chain(&s.depth) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(usize, Vec<RgbdSample>)> {
    let fail = |msg: String| Error::format(path, msg);
    if bytes.len() < 16 {
        return Err(fail(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}, expected \"XMN1\"", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(fail(format!("unsupported cache version {version}")));
    }
    let (count, size) = (word(8) as usize, word(12) as usize);
    let px = size * size;
    let record = 5 + 8 * px;
    let expected = 16 + count * record;
    if bytes.len() != expected {
        return Err(fail(format!(
            "{} bytes, header announces {count} samples of {size}x{size} ({expected} bytes)",
            bytes.len()
        )));
    }
    let floats = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let samples = bytes[16..]
        .chunks_exact(record)
        .map(|r| RgbdSample {
            index: u32::from_le_bytes(r[..4].try_into().unwrap()),
            label: r[4],
            size,
            image: floats(&r[5..5 + 4 * px]),
            depth: floats(&r[5 + 4 * px..]),
        })
        .collect();
    Ok((size, samples))
}

/// Write through a temporary file in the same directory, then rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_cache(path: &Path, samples: &[RgbdSample], size: usize) -> Result<()> {
    write_atomic(path, &encode(samples, size))
}

pub fn read_cache(path: &Path) -> Result<(usize, Vec<RgbdSample>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
