use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::kalman::KalmanState;
use crate::numerics::l2_normalize;

/// A per-frame detector hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    /// Unit-length appearance embedding.
    pub embedding: Vec<f64>,
    pub frame: u32,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, embedding: Vec<f64>, frame: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!("score {score} outside [0,1]")));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("detection embedding".into()));
        }
        Ok(Self {
            bbox,
            score,
            embedding,
            frame,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackStatus {
    /// Born this frame; confirmed only by a match at the next frame.
    Unconfirmed,
    Active,
    Lost,
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub status: TrackStatus,
    /// Last observed box, or the Kalman-propagated box while lost.
    pub bbox: BBox,
    pub embedding: Vec<f64>,
    pub kalman: KalmanState,
    pub lost_age: u32,
    pub birth_frame: u32,
    pub last_frame: u32,
    /// Observed `(frame, box)` pairs.
    pub history: Vec<(u32, BBox)>,
}

impl Track {
    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

/// Unit-length `m·old + (1−m)·new`; keeps `old` when the blend vanishes.
pub fn update_embedding(old: &[f64], new: &[f64], momentum: f64) -> Result<Vec<f64>> {
    if old.len() != new.len() {
        return Err(Error::Shape(format!(
            "embeddings of lengths {} and {}",
            old.len(),
            new.len()
        )));
    }
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0,1]")));
    }
    let blend: Vec<f64> = old
        .iter()
        .zip(new)
        .map(|(a, b)| momentum * a + (1.0 - momentum) * b)
        .collect();
    Ok(l2_normalize(&blend).unwrap_or_else(|| old.to_vec()))
}
