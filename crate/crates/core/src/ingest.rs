//! Parsing of reader logs into typed gesture samples and EPC-sorted
//! dataframes.
//!
//! A log file is delimiter-separated text, one reading per line, default
//! column order `timestamp,epc,rss,phase`. Blank lines delimit gesture
//! segments; each segment becomes one [`GestureSample`]. Sample metadata
//! comes either from the file name (tokens `l<label>`, `s<subject>`,
//! `e<A|B>`, `d<distance>` joined by `_`) or from a manifest file with one
//! `sample_id,label,subject,env,distance,path` line per sample.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::types::{Dataframe, Environment, FrameStatus, GestureSample, Reading};

/// Column positions of the four reading fields within a log line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMap {
    pub timestamp: usize,
    pub epc: usize,
    pub rss: usize,
    pub phase: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: 0,
            epc: 1,
            rss: 2,
            phase: 3,
        }
    }
}

/// How to interpret a log file.
#[derive(Debug, Clone)]
pub struct LogSchema {
    pub delimiter: char,
    pub has_header: bool,
    pub columns: ColumnMap,
    /// EPC hex string to numeric id table. When absent, the EPC column must
    /// already hold numeric ids.
    pub epc_table: Option<BTreeMap<String, u8>>,
    pub n_tags: u8,
}

impl Default for LogSchema {
    fn default() -> Self {
        LogSchema {
            delimiter: ',',
            has_header: false,
            columns: ColumnMap::default(),
            epc_table: None,
            n_tags: crate::types::DEFAULT_TAG_COUNT,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: unknown EPC '{epc}'")]
    UnknownEpc {
        path: PathBuf,
        line: usize,
        epc: String,
    },
    #[error("{path}:{line}: malformed manifest line: {reason}")]
    MalformedManifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: manifest entry expects one gesture segment, file holds {found}")]
    SegmentCount { path: PathBuf, found: usize },
}

/// Metadata extracted from a file name such as `g_l03_s01_eA_d1.5.log`.
fn metadata_from_stem(stem: &str) -> (u8, u32, Environment, f64) {
    let mut label = 0u8;
    let mut subject = 0u32;
    let mut env = Environment::A;
    let mut distance = 0.0f64;
    for token in stem.split('_') {
        if let Some(rest) = token.strip_prefix('l') {
            if let Ok(v) = rest.parse::<u8>() {
                label = v;
            }
        } else if let Some(rest) = token.strip_prefix('s') {
            if let Ok(v) = rest.parse::<u32>() {
                subject = v;
            }
        } else if let Some(rest) = token.strip_prefix('e') {
            if let Ok(v) = rest.parse::<Environment>() {
                env = v;
            }
        } else if let Some(rest) = token.strip_prefix('d') {
            if let Ok(v) = rest.parse::<f64>() {
                distance = v;
            }
        }
    }
    (label, subject, env, distance)
}

fn parse_field(
    fields: &[&str],
    idx: usize,
    name: &str,
    path: &Path,
    line: usize,
) -> Result<f64, IngestError> {
    let raw = fields.get(idx).ok_or_else(|| IngestError::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: format!("missing {name} column {idx}"),
    })?;
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| IngestError::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("{name} '{raw}' is not a number"),
        })?;
    if !value.is_finite() {
        return Err(IngestError::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("{name} '{raw}' is not finite"),
        });
    }
    Ok(value)
}

fn resolve_epc(
    raw: &str,
    schema: &LogSchema,
    path: &Path,
    line: usize,
) -> Result<u8, IngestError> {
    let trimmed = raw.trim();
    if let Some(table) = &schema.epc_table {
        if let Some(&id) = table.get(trimmed) {
            return Ok(id);
        }
    }
    if let Ok(id) = trimmed.parse::<u8>() {
        if id >= 1 && id <= schema.n_tags {
            return Ok(id);
        }
    }
    Err(IngestError::UnknownEpc {
        path: path.to_path_buf(),
        line,
        epc: trimmed.to_string(),
    })
}

/// Parse one log file into gesture samples, one per blank-line-delimited
/// segment.
///
/// Readings are re-sorted by timestamp ascending (stable, so file order
/// breaks ties). Phase is wrapped into `[0, 2π)`. An empty file yields an
/// empty sequence.
pub fn parse_log(path: &Path, schema: &LogSchema) -> Result<Vec<GestureSample>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (label, subject, env, distance) = metadata_from_stem(&stem);

    let two_pi = 2.0 * std::f64::consts::PI;
    let mut samples = Vec::new();
    let mut current: Vec<Reading> = Vec::new();
    let mut header_pending = schema.has_header;

    let flush = |readings: &mut Vec<Reading>, samples: &mut Vec<GestureSample>| {
        if readings.is_empty() {
            return;
        }
        let mut rs = std::mem::take(readings);
        rs.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
        samples.push(GestureSample {
            sample_id: samples.len(),
            label,
            subject,
            environment: env,
            distance_m: distance,
            readings: rs,
        });
    };

    for (line_idx, raw_line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            flush(&mut current, &mut samples);
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let fields: Vec<&str> = line.split(schema.delimiter).collect();
        let timestamp = parse_field(&fields, schema.columns.timestamp, "timestamp", path, line_no)?;
        let rss = parse_field(&fields, schema.columns.rss, "rss", path, line_no)?;
        let phase_raw = parse_field(&fields, schema.columns.phase, "phase", path, line_no)?;
        let epc_raw = fields
            .get(schema.columns.epc)
            .ok_or_else(|| IngestError::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("missing epc column {}", schema.columns.epc),
            })?;
        let epc = resolve_epc(epc_raw, schema, path, line_no)?;
        current.push(Reading {
            timestamp,
            epc,
            rss,
            phase: phase_raw.rem_euclid(two_pi),
        });
    }
    flush(&mut current, &mut samples);
    Ok(samples)
}

/// One manifest row: metadata plus the log file it points at.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub sample_id: usize,
    pub label: u8,
    pub subject: u32,
    pub environment: Environment,
    pub distance_m: f64,
    pub path: PathBuf,
}

/// Load a dataset through its manifest.
///
/// Each manifest line is `sample_id,label,subject,env,distance,path` with
/// `path` resolved relative to the manifest's directory. Every referenced
/// file must hold exactly one gesture segment.
pub fn load_manifest(
    manifest_path: &Path,
    schema: &LogSchema,
) -> Result<Vec<GestureSample>, IngestError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|source| IngestError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::new();
    for (line_idx, raw_line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("sample_id") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(IngestError::MalformedManifest {
                path: manifest_path.to_path_buf(),
                line: line_no,
                reason: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let bad = |reason: String| IngestError::MalformedManifest {
            path: manifest_path.to_path_buf(),
            line: line_no,
            reason,
        };
        let entry = ManifestEntry {
            sample_id: fields[0]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad sample_id '{}'", fields[0])))?,
            label: fields[1]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad label '{}'", fields[1])))?,
            subject: fields[2]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad subject '{}'", fields[2])))?,
            environment: fields[3]
                .parse()
                .map_err(|e| bad(format!("bad env: {e}")))?,
            distance_m: fields[4]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad distance '{}'", fields[4])))?,
            path: base.join(fields[5].trim()),
        };
        let mut parsed = parse_log(&entry.path, schema)?;
        if parsed.len() != 1 {
            return Err(IngestError::SegmentCount {
                path: entry.path.clone(),
                found: parsed.len(),
            });
        }
        let mut sample = parsed.remove(0);
        sample.sample_id = entry.sample_id;
        sample.label = entry.label;
        sample.subject = entry.subject;
        sample.environment = entry.environment;
        sample.distance_m = entry.distance_m;
        samples.push(sample);
    }
    Ok(samples)
}

/// Split a sample into one dataframe per EPC, in EPC order `1..=n_tags`.
///
/// The grouping is a stable sort by EPC id: within each frame the original
/// timestamp order is preserved. EPCs absent from the sample yield an empty
/// frame flagged [`FrameStatus::Null`].
pub fn sort_by_epc(sample: &GestureSample, n_tags: u8) -> Vec<Dataframe> {
    let mut frames: Vec<Dataframe> = (1..=n_tags)
        .map(|epc| Dataframe {
            epc,
            timestamps: Vec::new(),
            rss: Vec::new(),
            phase: Vec::new(),
            mask: Vec::new(),
            status: FrameStatus::Raw,
        })
        .collect();
    for reading in &sample.readings {
        let frame = &mut frames[(reading.epc - 1) as usize];
        frame.timestamps.push(reading.timestamp);
        frame.rss.push(reading.rss);
        frame.phase.push(reading.phase);
        frame.mask.push(true);
    }
    for frame in &mut frames {
        if frame.is_empty() {
            frame.status = FrameStatus::Null;
        }
    }
    frames
}
