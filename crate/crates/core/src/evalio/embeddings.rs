use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::mot::MotRecord;

/// Parses an embedding sidecar and aligns it with `detections` (as returned
/// by the MOT reader): row `(frame, k)` belongs to the `k`-th detection of
/// that frame. Rows may appear in any order.
pub fn parse_embeddings(text: &str, path: &Path, detections: &[MotRecord]) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<(u32, usize, Vec<f64>)> = Vec::new();
    let mut dim = None;
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let mut it = line.split_whitespace();
        let frame = it
            .next()
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| err("bad frame index".into()))?;
        let ordinal = it
            .next()
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| err("bad detection ordinal".into()))?;
        let values = it
            .map(|v| v.parse::<f64>().map_err(|_| err(format!("bad value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(format!("embedding has {} values, expected {d}", values.len())))
            }
            _ => {}
        }
        rows.push((frame, ordinal, values));
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let mut expected = Vec::with_capacity(detections.len());
    let mut prev: Option<u32> = None;
    let mut ordinal = 0;
    for d in detections {
        ordinal = if prev == Some(d.frame) { ordinal + 1 } else { 0 };
        prev = Some(d.frame);
        expected.push((d.frame, ordinal));
    }
    if rows.len() != expected.len() {
        return Err(Error::Data(format!(
            "{}: {} embedding rows for {} detections",
            path.display(),
            rows.len(),
            expected.len()
        )));
    }
    rows.into_iter()
        .zip(expected)
        .map(|((f, o, v), (ef, eo))| {
            if (f, o) == (ef, eo) {
                Ok(v)
            } else {
                Err(Error::Data(format!(
                    "{}: embedding row ({f}, {o}) where ({ef}, {eo}) was expected",
                    path.display()
                )))
            }
        })
        .collect()
}

pub fn read_embeddings(path: &Path, detections: &[MotRecord]) -> Result<Vec<Vec<f64>>> {
    parse_embeddings(&fs::read_to_string(path)?, path, detections)
}

pub fn format_embeddings(detections: &[MotRecord], embeddings: &[Vec<f64>]) -> String {
    let mut s = String::new();
    let mut prev = None;
    let mut ordinal = 0;
    for (d, e) in detections.iter().zip(embeddings) {
        ordinal = if prev == Some(d.frame) { ordinal + 1 } else { 0 };
        prev = Some(d.frame);
        s.push_str(&format!("{} {}", d.frame, ordinal));
        for v in e {
            s.push_str(&format!(" {v}"));
        }
        s.push('\n');
    }
    s
}
