//! Checkpoint files: a text header followed by a little-endian `f32` payload.
//!
//! The header carries a format version, the full run configuration (the same
//! `key = value` text the config parser accepts), the feature normalisation
//! statistics, the RNG seed and epoch counter, a parameter manifest (name,
//! shape, byte offset into the payload), and optionally the optimiser state.
//! Everything numeric in the header is printed with shortest-round-trip
//! formatting so reading it back is exact; the payload is raw bits. Saving a
//! loaded checkpoint therefore reproduces the file byte for byte.
//!
//! Layout:
//!
//! ```text
//! edgenn checkpoint v1
//! [config]   ... key = value lines ...
//! [stats]    mean = a,b,...  /  std = a,b,...
//! [meta]     seed = N  /  epoch = N
//! [params]   <name> <rows>x<cols> <byte offset>
//! [adam]     step = N            (optional section)
//! [payload]
//! <params, then Adam m and v tensors, all f32 little-endian row-major>
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::autodiff::adam::Moments;
use crate::features::FeatureStats;
use crate::net::config::{ConfigError, RunConfig};
use crate::net::model::ParamStore;

pub const FORMAT_LINE: &str = "edgenn checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("payload holds {got} bytes but the manifest requires {want}")]
    PayloadSize { want: usize, got: usize },
}

/// Training-progress counters stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
}

/// Optimiser state: step counter plus first/second moments per parameter,
/// in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: Vec<Moments<f32>>,
}

/// Everything a checkpoint file holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub stats: FeatureStats,
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState>,
}

fn float_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn push_tensor(payload: &mut Vec<u8>, tensor: &Array2<f32>) {
    for &v in tensor.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises the checkpoint into bytes (header + payload).
pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut header = String::new();
    header.push_str(FORMAT_LINE);
    header.push('\n');
    header.push_str("[config]\n");
    header.push_str(&ckpt.config.to_config_string());
    header.push_str("[stats]\n");
    header.push_str(&format!("mean = {}\n", float_list(&ckpt.stats.mean)));
    header.push_str(&format!("std = {}\n", float_list(&ckpt.stats.std)));
    header.push_str("[meta]\n");
    header.push_str(&format!("seed = {}\n", ckpt.meta.seed));
    header.push_str(&format!("epoch = {}\n", ckpt.meta.epoch));

    header.push_str("[params]\n");
    let mut payload: Vec<u8> = Vec::new();
    for (name, tensor) in ckpt.params.iter() {
        let (r, c) = tensor.dim();
        header.push_str(&format!("{name} {r}x{c} {}\n", payload.len()));
        push_tensor(&mut payload, tensor);
    }
    if let Some(adam) = &ckpt.adam {
        header.push_str("[adam]\n");
        header.push_str(&format!("step = {}\n", adam.step));
        for moments in &adam.moments {
            push_tensor(&mut payload, &moments.m);
        }
        for moments in &adam.moments {
            push_tensor(&mut payload, &moments.v);
        }
    }
    header.push_str("[payload]\n");

    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = to_bytes(ckpt);
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

/// One `rows x cols` manifest entry.
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let bad = |msg: &str| CheckpointError::Malformed(msg.to_string());
    let marker = b"[payload]\n";
    let payload_at = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("no [payload] marker"))?;
    let header = std::str::from_utf8(&bytes[..payload_at])
        .map_err(|_| bad("header is not valid UTF-8"))?;
    let payload = &bytes[payload_at + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(FORMAT_LINE) {
        return Err(bad("unrecognised format line"));
    }

    // Split the remaining header into sections.
    let mut sections: Vec<(String, Vec<String>)> = Vec::new();
    for line in lines {
        if line.starts_with('[') && line.ends_with(']') {
            sections.push((line[1..line.len() - 1].to_string(), Vec::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push(line.to_string());
        } else {
            return Err(bad("content before the first section"));
        }
    }
    let section = |name: &str| -> Option<&[String]> {
        sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, body)| body.as_slice())
    };
    let field = |body: &[String], key: &str| -> Result<String, CheckpointError> {
        body.iter()
            .find_map(|l| {
                l.split_once('=')
                    .filter(|(k, _)| k.trim() == key)
                    .map(|(_, v)| v.trim().to_string())
            })
            .ok_or_else(|| CheckpointError::Malformed(format!("missing field {key:?}")))
    };
    let floats = |text: &str, what: &str| -> Result<Vec<f64>, CheckpointError> {
        text.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| CheckpointError::Malformed(format!("bad {what} entry {p:?}")))
            })
            .collect()
    };

    let config_body = section("config").ok_or_else(|| bad("missing [config]"))?;
    let config = RunConfig::parse(&config_body.join("\n"))?;

    let stats_body = section("stats").ok_or_else(|| bad("missing [stats]"))?;
    let stats = FeatureStats {
        mean: floats(&field(stats_body, "mean")?, "mean")?,
        std: floats(&field(stats_body, "std")?, "std")?,
    };

    let meta_body = section("meta").ok_or_else(|| bad("missing [meta]"))?;
    let meta = CheckpointMeta {
        seed: field(meta_body, "seed")?
            .parse()
            .map_err(|_| bad("bad seed"))?,
        epoch: field(meta_body, "epoch")?
            .parse()
            .map_err(|_| bad("bad epoch"))?,
    };

    let params_body = section("params").ok_or_else(|| bad("missing [params]"))?;
    let mut manifest = Vec::new();
    for line in params_body.iter().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let (Some(name), Some(shape), Some(offset), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(CheckpointError::Malformed(format!(
                "bad manifest line {line:?}"
            )));
        };
        let (r, c) = shape
            .split_once('x')
            .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
            .ok_or_else(|| CheckpointError::Malformed(format!("bad shape in {line:?}")))?;
        manifest.push(ManifestEntry {
            name: name.to_string(),
            rows: r,
            cols: c,
            offset: offset
                .parse()
                .map_err(|_| CheckpointError::Malformed(format!("bad offset in {line:?}")))?,
        });
    }

    let read_tensor = |rows: usize, cols: usize, offset: usize| -> Result<Array2<f32>, CheckpointError> {
        let len = rows * cols * 4;
        let end = offset.checked_add(len).filter(|&e| e <= payload.len());
        let Some(end) = end else {
            return Err(CheckpointError::PayloadSize {
                want: offset + len,
                got: payload.len(),
            });
        };
        let values: Vec<f32> = payload[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))
    };

    let mut params = ParamStore::new();
    let mut cursor = 0usize;
    for entry in &manifest {
        if entry.offset != cursor {
            return Err(CheckpointError::Malformed(format!(
                "parameter {} at offset {} but expected {cursor}",
                entry.name, entry.offset
            )));
        }
        params.add(&entry.name, read_tensor(entry.rows, entry.cols, entry.offset)?);
        cursor += entry.rows * entry.cols * 4;
    }

    let adam = match section("adam") {
        None => None,
        Some(body) => {
            let step = field(body, "step")?.parse().map_err(|_| bad("bad step"))?;
            let mut ms = Vec::new();
            for entry in &manifest {
                ms.push(read_tensor(entry.rows, entry.cols, cursor)?);
                cursor += entry.rows * entry.cols * 4;
            }
            let mut moments = Vec::new();
            for (entry, m) in manifest.iter().zip(ms) {
                let v = read_tensor(entry.rows, entry.cols, cursor)?;
                cursor += entry.rows * entry.cols * 4;
                moments.push(Moments { m, v });
            }
            Some(AdamState { step, moments })
        }
    };
    if cursor != payload.len() {
        return Err(CheckpointError::PayloadSize {
            want: cursor,
            got: payload.len(),
        });
    }

    Ok(Checkpoint {
        config,
        stats,
        meta,
        params,
        adam,
    })
}
