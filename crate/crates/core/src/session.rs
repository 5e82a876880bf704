//! Running the tracker over a whole sequence.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::evalio::{Dataset, MotRecord};
use crate::refsearch::{Reference, RsPrediction};
use crate::tracker::{Detection, FnPredictor, RsPredictor, StatePredictor, Tracker, TrackerConfig};
use crate::train::Model;

/// Where first-stage predictions come from.
#[derive(Debug, Clone, Copy)]
pub enum Association<'a> {
    /// A trained module reading the sequence rasters.
    Model(&'a Model),
    /// Each reference is moved to the ground-truth center, at the current
    /// frame, of the object nearest to it at the previous frame.
    Oracle,
    /// No predictor; the reference-search stage is skipped.
    None,
}

/// Totals over a sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub frames: u32,
    pub births: usize,
    pub removals: usize,
    pub rs_matches: usize,
    pub iou_matches: usize,
    pub outputs: usize,
}

/// Builds tracker detections, checking that embeddings line up.
pub fn detections(ds: &Dataset) -> Result<BTreeMap<u32, Vec<Detection>>> {
    if ds.embeddings.len() != ds.detections.len() {
        return Err(Error::Data(format!(
            "{} embeddings for {} detections",
            ds.embeddings.len(),
            ds.detections.len()
        )));
    }
    let mut out: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for (r, e) in ds.detections.iter().zip(&ds.embeddings) {
        if r.frame == 0 || r.frame > ds.frames {
            return Err(Error::Data(format!(
                "detection at frame {} outside 1..={}",
                r.frame, ds.frames
            )));
        }
        out.entry(r.frame)
            .or_default()
            .push(Detection::new(r.bbox(), r.conf, e.clone(), r.frame)?);
    }
    Ok(out)
}

/// Ground-truth motion oracle; see [`Association::Oracle`].
fn oracle(ds: &Dataset) -> impl FnMut(u32, &Reference) -> RsPrediction + '_ {
    let mut frames: BTreeMap<u32, Vec<&MotRecord>> = BTreeMap::new();
    for r in &ds.gt {
        frames.entry(r.frame).or_default().push(r);
    }
    let (w, h) = (ds.image.w(), ds.image.h());
    move |frame, r| {
        let at = [r.point[0] * w, r.point[1] * h];
        let nearest = frame
            .checked_sub(1)
            .and_then(|f| frames.get(&f))
            .and_then(|prev| {
                prev.iter().min_by(|a, b| {
                    let d = |g: &MotRecord| {
                        let (x, y) = g.bbox().center();
                        (x - at[0]).powi(2) + (y - at[1]).powi(2)
                    };
                    d(a).total_cmp(&d(b))
                })
            });
        let next = nearest.and_then(|g| {
            frames
                .get(&frame)
                .and_then(|cur| cur.iter().find(|c| c.id == g.id))
        });
        let center = match next {
            Some(c) => {
                let (x, y) = c.bbox().center();
                [x / w, y / h]
            }
            None => r.point,
        };
        RsPrediction {
            track_id: r.track_id,
            center,
            appearance: r.appearance.clone(),
            aux_centers: Vec::new(),
        }
    }
}

/// Steps a fresh tracker through frames `1..=ds.frames` and returns the
/// reported boxes as MOT records.
pub fn track_dataset(
    config: &TrackerConfig,
    ds: &Dataset,
    association: Association,
) -> Result<(Vec<MotRecord>, RunSummary)> {
    let dets = detections(ds)?;
    let mut tracker = Tracker::new(config.clone(), ds.image)?;
    let mut out = Vec::new();
    let mut summary = RunSummary::default();
    let mut oracle_fn = FnPredictor(oracle(ds));
    let mut rs = match association {
        Association::Model(m) => {
            if ds.rasters.len() < ds.frames as usize {
                return Err(Error::Data(format!(
                    "{} rasters for {} frames",
                    ds.rasters.len(),
                    ds.frames
                )));
            }
            Some((m, RsPredictor::new(&m.module)))
        }
        _ => None,
    };
    let empty = Vec::new();
    for frame in 1..=ds.frames {
        let predictor: Option<&mut dyn StatePredictor> = match (&mut rs, association) {
            (Some((m, p)), _) => {
                p.push_memory(m.memory(&ds.rasters[frame as usize - 1], ds)?);
                Some(p)
            }
            (None, Association::Oracle) => Some(&mut oracle_fn),
            _ => None,
        };
        let res = tracker.step(frame, dets.get(&frame).unwrap_or(&empty), predictor)?;
        summary.frames += 1;
        summary.births += res.births;
        summary.removals += res.removals;
        summary.rs_matches += res.rs_matches;
        summary.iou_matches += res.iou_matches;
        summary.outputs += res.tracks.len();
        out.extend(
            res.tracks
                .iter()
                .map(|t| MotRecord::new(frame, t.id as i64, &t.bbox, t.score)),
        );
    }
    Ok((out, summary))
}
