//! Single-file checkpoints: a text manifest followed by a little-endian `f64` blob.
//!
//! ```text
//! TROUSPI-CKPT 1 <manifest bytes>\n
//! config <ModelConfig JSON>\n
//! context_stats <ContextStats JSON or null>\n
//! blob_sha256 <hex>\n
//! entry <name> <trainable 0|1> <dims, comma-separated> <offset> <len>\n   (one per entry)
//! <blob>
//! ```
//!
//! Offsets and lengths count `f64` values from the start of the blob.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::net::TrouSpiNet;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::features::ContextStats;

const MAGIC: &str = "TROUSPI-CKPT";
const VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Serialises the model to checkpoint bytes.
pub fn checkpoint_bytes(model: &TrouSpiNet) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut entries = String::new();
    let mut offset = 0usize;
    for e in model.store().entries() {
        for v in &e.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let dims: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(
            entries,
            "entry {} {} {} {} {}",
            e.name,
            u8::from(e.trainable),
            dims.join(","),
            offset,
            e.data.len()
        );
        offset += e.data.len();
    }
    let mut manifest = String::new();
    let _ = writeln!(
        manifest,
        "config {}",
        serde_json::to_string(model.config())?
    );
    let _ = writeln!(
        manifest,
        "context_stats {}",
        serde_json::to_string(&model.context_stats())?
    );
    let _ = writeln!(manifest, "blob_sha256 {}", hex(&Sha256::digest(&blob)));
    manifest.push_str(&entries);
    let mut out = format!("{MAGIC} {VERSION} {}\n", manifest.len()).into_bytes();
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save_checkpoint(model: &TrouSpiNet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrouSpiNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|reason| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason,
    })
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str, String> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.strip_prefix(' '))
        .ok_or_else(|| format!("missing `{key}` line"))
}

/// Rebuilds a model from checkpoint bytes; the error is a human-readable reason.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<TrouSpiNet, String> {
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing header line")?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| "header is not UTF-8")?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err("not a checkpoint file".into());
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or("unreadable version")?;
    if version != VERSION {
        return Err(format!("unsupported version {version}, expected {VERSION}"));
    }
    let manifest_len: usize = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or("unreadable manifest length")?;
    let manifest_start = header_end + 1;
    let blob_start = manifest_start
        .checked_add(manifest_len)
        .filter(|&e| e <= bytes.len())
        .ok_or("truncated manifest")?;
    let manifest = std::str::from_utf8(&bytes[manifest_start..blob_start])
        .map_err(|_| "manifest is not UTF-8")?;
    let blob = &bytes[blob_start..];

    let mut lines = manifest.lines();
    let config: ModelConfig =
        serde_json::from_str(field(lines.next(), "config")?).map_err(|e| format!("config: {e}"))?;
    let stats: Option<ContextStats> = serde_json::from_str(field(lines.next(), "context_stats")?)
        .map_err(|e| format!("context_stats: {e}"))?;
    let checksum = field(lines.next(), "blob_sha256")?;

    let mut model = TrouSpiNet::build(config).map_err(|e| e.to_string())?;
    model.set_context_stats(stats);
    let expected_values: usize = model.store().entries().iter().map(|e| e.data.len()).sum();
    if blob.len() != expected_values * 8 {
        return Err(format!(
            "blob holds {} bytes, expected {} ({} values); file truncated or padded",
            blob.len(),
            expected_values * 8,
            expected_values
        ));
    }
    if hex(&Sha256::digest(blob)) != checksum {
        return Err("blob checksum mismatch".into());
    }

    let entry_count = model.store().len();
    let mut seen = 0;
    for line in lines {
        let rest = line
            .strip_prefix("entry ")
            .ok_or_else(|| format!("unexpected manifest line `{line}`"))?;
        let f: Vec<&str> = rest.split(' ').collect();
        if f.len() != 5 {
            return Err(format!("malformed entry line `{line}`"));
        }
        let name = f[0];
        let id = model
            .store()
            .id(name)
            .ok_or_else(|| format!("unknown parameter `{name}`"))?;
        let shape: Vec<usize> = if f[2].is_empty() {
            Vec::new()
        } else {
            f[2].split(',')
                .map(|d| d.parse().map_err(|_| format!("bad shape for `{name}`")))
                .collect::<Result<_, String>>()?
        };
        let offset: usize = f[3]
            .parse()
            .map_err(|_| format!("bad offset for `{name}`"))?;
        let len: usize = f[4]
            .parse()
            .map_err(|_| format!("bad length for `{name}`"))?;
        let entry = model.store_mut().get_mut(id);
        if entry.shape != shape || entry.data.len() != len || (f[1] == "1") != entry.trainable {
            return Err(format!(
                "entry `{name}` has shape {shape:?}, model expects {:?}",
                entry.shape
            ));
        }
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= expected_values)
            .ok_or_else(|| format!("entry `{name}` runs past the blob"))?;
        for (i, v) in (offset..end).enumerate() {
            let mut b = [0u8; 8];
            b.copy_from_slice(&blob[v * 8..v * 8 + 8]);
            entry.data[i] = f64::from_le_bytes(b);
        }
        seen += 1;
    }
    if seen != entry_count {
        return Err(format!(
            "manifest lists {seen} entries, model has {entry_count}"
        ));
    }
    Ok(model)
}
