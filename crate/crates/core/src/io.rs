//! File formats and bundle loading.
//!
//! Logit files are binary: magic bytes `GCBL`, a 4-byte little-endian
//! version (1), 8-byte little-endian query and candidate counts, then
//! `B * N` little-endian 32-bit floats in row-major order.
//!
//! Manifests are line-delimited JSON. Candidate lines carry
//! `{id, bucket, stimulus_key?, window_index?}`; query lines carry
//! `{id, target, group, story?, order?, stimulus_key?}`. Ids must form a
//! permutation of `0..count`; lines may appear in any order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::{
    validate_bundle, AuditBundle, CandidatePool, LogitMatrix, QuerySet, StimulusId,
};
use crate::error::{AuditError, Result};

const MAGIC: &[u8; 4] = b"GCBL";
const VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> AuditError {
    AuditError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write a logit matrix in the binary format, rounding values to `f32`.
pub fn write_logits(matrix: &LogitMatrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_logits_to(matrix, &mut w).map_err(|e| io_err(path, e))
}

fn write_logits_to(matrix: &LogitMatrix, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(matrix.num_queries() as u64).to_le_bytes())?;
    w.write_all(&(matrix.num_candidates() as u64).to_le_bytes())?;
    for &v in matrix.values() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()
}

/// Read a logit matrix from the binary format. Truncated files report the
/// expected and actual byte counts.
pub fn read_logits(path: &Path) -> Result<LogitMatrix> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();

    let header_len = 4 + 4 + 8 + 8;
    if buf.len() < header_len {
        return Err(AuditError::TruncatedFile {
            path: display,
            expected: header_len as u64,
            actual: buf.len() as u64,
        });
    }
    if &buf[0..4] != MAGIC {
        return Err(AuditError::BadMagic { path: display });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(AuditError::BadVersion {
            path: display,
            version,
        });
    }
    let b = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let n = u64::from_le_bytes(buf[16..24].try_into().unwrap());
    let expected = b
        .checked_mul(n)
        .and_then(|cells| cells.checked_mul(4))
        .and_then(|bytes| bytes.checked_add(header_len as u64))
        .ok_or_else(|| AuditError::Parse {
            path: display.clone(),
            line: 0,
            message: format!("implausible header dimensions {b} x {n}"),
        })?;
    if buf.len() as u64 != expected {
        return Err(AuditError::TruncatedFile {
            path: display,
            expected,
            actual: buf.len() as u64,
        });
    }
    let (b, n) = (b as usize, n as usize);
    let mut values = Vec::with_capacity(b * n);
    for chunk in buf[header_len..].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    LogitMatrix::from_f32(&values, b, n)
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateLine {
    id: usize,
    bucket: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    stimulus_key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    window_index: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryLine {
    id: usize,
    target: usize,
    group: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    story: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stimulus_key: Option<String>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> AuditError {
    AuditError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

/// Place records by their `id` field, requiring a permutation of `0..len`.
fn place_by_id<T>(records: Vec<(usize, usize, T)>, path: &Path, what: &str) -> Result<Vec<T>> {
    let len = records.len();
    let mut slots: Vec<Option<T>> = (0..len).map(|_| None).collect();
    for (line, id, value) in records {
        if id >= len {
            return Err(parse_err(
                path,
                line,
                format!("{what} id {id} out of range for {len} records"),
            ));
        }
        if slots[id].is_some() {
            return Err(parse_err(path, line, format!("duplicate {what} id {id}")));
        }
        slots[id] = Some(value);
    }
    Ok(slots.into_iter().map(|s| s.unwrap()).collect())
}

/// Read the candidate manifest.
pub fn read_candidates(path: &Path) -> Result<CandidatePool> {
    let lines = read_lines::<CandidateLine>(path)?;
    if lines.is_empty() {
        return Err(parse_err(path, 0, "empty candidate manifest"));
    }
    let with_ids: Vec<(usize, usize, CandidateLine)> =
        lines.into_iter().map(|(line, c)| (line, c.id, c)).collect();
    let candidates = place_by_id(with_ids, path, "candidate")?;
    let num_buckets = candidates.iter().map(|c| c.bucket).max().unwrap() + 1;
    let bucket_of: Vec<usize> = candidates.iter().map(|c| c.bucket).collect();
    let pool = CandidatePool::new(bucket_of, num_buckets)?;
    let have_stimulus = candidates.iter().any(|c| c.stimulus_key.is_some());
    if !have_stimulus {
        return Ok(pool);
    }
    let stimulus = candidates
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let key = c.stimulus_key.clone().ok_or_else(|| {
                parse_err(
                    path,
                    0,
                    format!("candidate {id} is missing stimulus_key while others carry it"),
                )
            })?;
            Ok(StimulusId {
                key,
                window: c.window_index.unwrap_or(0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    pool.with_stimulus(stimulus)
}

/// Read the query manifest.
pub fn read_queries(path: &Path) -> Result<QuerySet> {
    let lines = read_lines::<QueryLine>(path)?;
    if lines.is_empty() {
        return Err(parse_err(path, 0, "empty query manifest"));
    }
    let with_ids: Vec<(usize, usize, QueryLine)> =
        lines.into_iter().map(|(line, q)| (line, q.id, q)).collect();
    let records = place_by_id(with_ids, path, "query")?;
    let target_of: Vec<usize> = records.iter().map(|q| q.target).collect();
    let group_of: Vec<usize> = records.iter().map(|q| q.group).collect();
    let mut queries = QuerySet::new(target_of, group_of)?;
    if records.iter().any(|q| q.story.is_some()) {
        let stories = records
            .iter()
            .enumerate()
            .map(|(id, q)| {
                q.story
                    .ok_or_else(|| parse_err(path, 0, format!("query {id} is missing story")))
            })
            .collect::<Result<Vec<_>>>()?;
        queries = queries.with_stories(stories)?;
    }
    if records.iter().any(|q| q.order.is_some()) {
        let orders = records
            .iter()
            .enumerate()
            .map(|(id, q)| {
                q.order
                    .ok_or_else(|| parse_err(path, 0, format!("query {id} is missing order")))
            })
            .collect::<Result<Vec<_>>>()?;
        queries = queries.with_order(orders)?;
    }
    if records.iter().any(|q| q.stimulus_key.is_some()) {
        let keys = records
            .iter()
            .map(|q| q.stimulus_key.clone().unwrap_or_default())
            .collect();
        queries = queries.with_stimulus_keys(keys)?;
    }
    Ok(queries)
}

/// Write the candidate manifest.
pub fn write_candidates(pool: &CandidatePool, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for id in 0..pool.num_candidates() {
        let line = CandidateLine {
            id,
            bucket: pool.bucket_of(id),
            stimulus_key: pool.stimulus().map(|s| s[id].key.clone()),
            window_index: pool.stimulus().map(|s| s[id].window),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| parse_err(path, id + 1, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Write the query manifest.
pub fn write_queries(queries: &QuerySet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for id in 0..queries.len() {
        let line = QueryLine {
            id,
            target: queries.target_of(id),
            group: queries.group_of(id),
            story: queries.story_map().map(|s| s[id]),
            order: queries.order_map().map(|o| o[id]),
            stimulus_key: queries.stimulus_keys().map(|k| k[id].clone()),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| parse_err(path, id + 1, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Load and validate a bundle from its three files.
pub fn load_bundle(logits: &Path, candidates: &Path, queries: &Path) -> Result<AuditBundle> {
    let matrix = read_logits(logits)?;
    let pool = read_candidates(candidates)?;
    let query_set = read_queries(queries)?;
    validate_bundle(matrix, pool, query_set)
}

/// Write a bundle's three files.
pub fn save_bundle(
    bundle: &AuditBundle,
    logits: &Path,
    candidates: &Path,
    queries: &Path,
) -> Result<()> {
    write_logits(bundle.logits(), logits)?;
    write_candidates(bundle.candidates(), candidates)?;
    write_queries(bundle.queries(), queries)
}
