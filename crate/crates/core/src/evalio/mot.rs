use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageSize};

/// One line of a MOT-Challenge text file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    /// 1-based frame index.
    pub frame: u32,
    /// Track or ground-truth identity; −1 for raw detections.
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub conf: f64,
}

impl MotRecord {
    pub fn new(frame: u32, id: i64, bbox: &BBox, conf: f64) -> Self {
        Self {
            frame,
            id,
            left: bbox.x1,
            top: bbox.y1,
            width: bbox.width(),
            height: bbox.height(),
            conf,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            x1: self.left,
            y1: self.top,
            x2: self.left + self.width,
            y2: self.top + self.height,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.frame < 1 {
            return Err("frame must be at least 1".into());
        }
        let v = [self.left, self.top, self.width, self.height, self.conf];
        if v.iter().any(|x| !x.is_finite()) {
            return Err("non-finite field".into());
        }
        if self.width < 0.0 || self.height < 0.0 {
            return Err("negative box extent".into());
        }
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(format!("confidence {} outside [0,1]", self.conf));
        }
        Ok(())
    }
}

impl fmt::Display for MotRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},-1,-1,-1",
            self.frame, self.id, self.left, self.top, self.width, self.height, self.conf
        )
    }
}

/// Parses MOT text. Blank lines are skipped; records come back stably
/// sorted by frame.
pub fn parse_mot(text: &str, path: &Path) -> Result<Vec<MotRecord>> {
    let mut out = Vec::new();
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
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(format!("field {} is not a number: {:?}", i + 1, fields[i])))
        };
        let frame = fields[0]
            .parse::<u32>()
            .map_err(|_| err(format!("bad frame index {:?}", fields[0])))?;
        let id = fields[1]
            .parse::<i64>()
            .or_else(|_| num(1).map(|v| v as i64))
            .map_err(|_| err(format!("bad id {:?}", fields[1])))?;
        let r = MotRecord {
            frame,
            id,
            left: num(2)?,
            top: num(3)?,
            width: num(4)?,
            height: num(5)?,
            conf: num(6)?,
        };
        r.validate().map_err(err)?;
        out.push(r);
    }
    out.sort_by_key(|r| r.frame);
    Ok(out)
}

pub fn read_mot(path: &Path) -> Result<Vec<MotRecord>> {
    parse_mot(&fs::read_to_string(path)?, path)
}

/// Formats records one per line, clipping boxes to `clip` when given.
pub fn format_mot(records: &[MotRecord], clip: Option<ImageSize>) -> String {
    let mut s = String::new();
    for r in records {
        let r = match clip {
            Some(img) => MotRecord::new(r.frame, r.id, &r.bbox().clip(img), r.conf),
            None => *r,
        };
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

pub fn write_mot(path: &Path, records: &[MotRecord], clip: Option<ImageSize>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_mot(records, clip).as_bytes())?;
    Ok(())
}

/// Records grouped by frame, in frame order.
pub fn by_frame(records: &[MotRecord]) -> Vec<(u32, Vec<MotRecord>)> {
    let mut out: Vec<(u32, Vec<MotRecord>)> = Vec::new();
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.frame);
    for r in sorted {
        match out.last_mut() {
            Some((f, v)) if *f == r.frame => v.push(r),
            _ => out.push((r.frame, vec![r])),
        }
    }
    out
}
