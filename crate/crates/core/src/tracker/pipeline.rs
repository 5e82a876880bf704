use super::cost::rs_cost;
use super::track::{update_embedding, Detection, Track, TrackStatus};
use crate::assignment::{hungarian, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, ImageSize};
use crate::kalman::{KalmanConfig, KalmanFilter};
use crate::numerics::l2_normalize;
use crate::refsearch::{joint_memory, select_references, FeatureMemory, Reference, RsModule, RsPrediction};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Detections need a score strictly above this.
    pub det_gate: f64,
    /// First-stage pairs need a cost strictly below this.
    pub rs_gate: f64,
    /// Second-stage pairs need an IoU strictly above this.
    pub iou_gate: f64,
    /// Consecutive missed frames after which a track is removed.
    pub max_lost: u32,
    /// Appearance share of the first-stage cost.
    pub lambda_emb: f64,
    pub momentum: f64,
    /// Multiplier on the normalized location distance.
    pub distance_scale: f64,
    /// Run the reference-search stage.
    pub use_rs: bool,
    /// Run the IoU stage.
    pub use_iou: bool,
    /// Newborn tracks must match at the next frame before being reported.
    pub confirm: bool,
    pub kalman: KalmanConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            det_gate: 0.4,
            rs_gate: 0.8,
            iou_gate: 0.5,
            max_lost: 30,
            lambda_emb: 0.5,
            momentum: 0.9,
            distance_scale: 1.0,
            use_rs: true,
            use_iou: true,
            confirm: true,
            kalman: KalmanConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("det_gate", self.det_gate),
            ("iou_gate", self.iou_gate),
            ("lambda_emb", self.lambda_emb),
            ("momentum", self.momentum),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0,1]")));
            }
        }
        if !(self.rs_gate.is_finite() && self.rs_gate >= 0.0) {
            return Err(Error::Config(format!("rs_gate = {} must be non-negative", self.rs_gate)));
        }
        if !(self.distance_scale.is_finite() && self.distance_scale >= 0.0) {
            return Err(Error::Config("distance_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// One reported box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameResult {
    pub frame: u32,
    /// Confirmed tracks observed this frame, ordered by id.
    pub tracks: Vec<TrackOutput>,
    pub births: usize,
    pub removals: usize,
    pub rs_matches: usize,
    pub iou_matches: usize,
}

/// Supplies one center/appearance prediction per reference.
pub trait StatePredictor {
    fn predict(&mut self, frame: u32, refs: &[Reference]) -> Result<Vec<RsPrediction>>;
}

/// Predictions from a trained module over the joint memory of the previous
/// and current frames. Feed each frame's memory with [`RsPredictor::push_memory`]
/// before stepping the tracker.
pub struct RsPredictor<'a> {
    module: &'a RsModule,
    prev: Option<FeatureMemory>,
    cur: Option<FeatureMemory>,
}

impl<'a> RsPredictor<'a> {
    pub fn new(module: &'a RsModule) -> Self {
        Self {
            module,
            prev: None,
            cur: None,
        }
    }

    pub fn push_memory(&mut self, memory: FeatureMemory) {
        self.prev = self.cur.replace(memory);
    }
}

impl StatePredictor for RsPredictor<'_> {
    fn predict(&mut self, _frame: u32, refs: &[Reference]) -> Result<Vec<RsPrediction>> {
        let cur = self
            .cur
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no memory pushed for this frame".into()))?;
        let joint = match &self.prev {
            Some(p) => joint_memory(p, cur)?,
            None => cur.clone(),
        };
        self.module.forward(refs, &joint)
    }
}

/// Predictor backed by a closure; useful for scripted scenarios.
pub struct FnPredictor<F>(pub F);

impl<F> StatePredictor for FnPredictor<F>
where
    F: FnMut(u32, &Reference) -> RsPrediction,
{
    fn predict(&mut self, frame: u32, refs: &[Reference]) -> Result<Vec<RsPrediction>> {
        Ok(refs.iter().map(|r| (self.0)(frame, r)).collect())
    }
}

/// Online tracker state.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    image: ImageSize,
    kf: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(config: TrackerConfig, image: ImageSize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            kf: KalmanFilter::new(config.kalman),
            config,
            image,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live (not yet removed) tracks.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances one frame. `predictor` is consulted only when the
    /// reference-search stage is enabled.
    pub fn step(
        &mut self,
        frame: u32,
        detections: &[Detection],
        predictor: Option<&mut dyn StatePredictor>,
    ) -> Result<FrameResult> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::FrameOrder { last, got: frame });
            }
        }
        self.last_frame = Some(frame);
        let mut result = FrameResult {
            frame,
            ..FrameResult::default()
        };

        // references are taken at the centers held through the previous frame
        let selection = select_references(&self.tracks, self.image);
        for t in &mut self.tracks {
            t.kalman = self.kf.predict(&t.kalman);
        }
        let dets: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.score > self.config.det_gate)
            .collect();
        let mut det_used = vec![false; dets.len()];
        let mut matched: Vec<Option<usize>> = vec![None; self.tracks.len()];

        if self.config.use_rs {
            if let Some(pred) = predictor {
                if !selection.references.is_empty() && !dets.is_empty() {
                    let preds = pred.predict(frame, &selection.references)?;
                    if preds.len() != selection.references.len() {
                        return Err(Error::Shape(format!(
                            "{} predictions for {} references",
                            preds.len(),
                            selection.references.len()
                        )));
                    }
                    let rows: Vec<usize> = selection
                        .references
                        .iter()
                        .map(|r| self.index_of(r.track_id))
                        .collect();
                    let mut data = Vec::with_capacity(rows.len() * dets.len());
                    for (i, &k) in rows.iter().enumerate() {
                        let t = &self.tracks[k];
                        let shape = [t.kalman.mean[2].max(0.0), t.kalman.mean[3].max(0.0)];
                        for d in &dets {
                            data.push(rs_cost(
                                &t.embedding,
                                &preds[i],
                                shape,
                                d,
                                self.image,
                                self.config.lambda_emb,
                                self.config.distance_scale,
                            )?);
                        }
                    }
                    let costs = CostMatrix::new(rows.len(), dets.len(), data)?;
                    for &(i, j) in &hungarian(&costs).pairs {
                        if costs.get(i, j) < self.config.rs_gate {
                            matched[rows[i]] = Some(j);
                            det_used[j] = true;
                            result.rs_matches += 1;
                        }
                    }
                }
            }
        }

        if self.config.use_iou {
            let rows: Vec<usize> = (0..self.tracks.len())
                .filter(|&k| matched[k].is_none())
                .collect();
            let cols: Vec<usize> = (0..dets.len()).filter(|&j| !det_used[j]).collect();
            if !rows.is_empty() && !cols.is_empty() {
                let boxes: Vec<BBox> = rows.iter().map(|&k| self.tracks[k].kalman.bbox()).collect();
                let costs = CostMatrix::from_fn(rows.len(), cols.len(), |i, j| {
                    1.0 - iou(&boxes[i], &dets[cols[j]].bbox)
                })?;
                for &(i, j) in &hungarian(&costs).pairs {
                    if 1.0 - costs.get(i, j) > self.config.iou_gate {
                        matched[rows[i]] = Some(cols[j]);
                        det_used[cols[j]] = true;
                        result.iou_matches += 1;
                    }
                }
            }
        }

        for (t, m) in self.tracks.iter_mut().zip(&matched) {
            match m {
                Some(j) => {
                    let d = dets[*j];
                    t.kalman = self.kf.update(&t.kalman, d.bbox.cxcywh())?;
                    t.bbox = d.bbox;
                    t.embedding = update_embedding(&t.embedding, &d.embedding, self.config.momentum)?;
                    t.status = TrackStatus::Active;
                    t.lost_age = 0;
                    t.last_frame = frame;
                    t.history.push((frame, d.bbox));
                    result.tracks.push(TrackOutput {
                        id: t.id,
                        bbox: d.bbox,
                        score: d.score,
                    });
                }
                None => match t.status {
                    TrackStatus::Unconfirmed => t.status = TrackStatus::Removed,
                    TrackStatus::Active | TrackStatus::Lost => {
                        t.status = TrackStatus::Lost;
                        t.lost_age += 1;
                        t.bbox = t.kalman.bbox();
                        if t.lost_age >= self.config.max_lost {
                            t.status = TrackStatus::Removed;
                        }
                    }
                    TrackStatus::Removed => {}
                },
            }
        }
        let before = self.tracks.len();
        self.tracks.retain(|t| t.status != TrackStatus::Removed);
        result.removals = before - self.tracks.len();

        for (j, d) in dets.iter().enumerate() {
            if det_used[j] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let status = if self.config.confirm {
                TrackStatus::Unconfirmed
            } else {
                TrackStatus::Active
            };
            self.tracks.push(Track {
                id,
                status,
                bbox: d.bbox,
                embedding: l2_normalize(&d.embedding).unwrap_or_else(|| d.embedding.clone()),
                kalman: self.kf.init(d.bbox.cxcywh()),
                lost_age: 0,
                birth_frame: frame,
                last_frame: frame,
                history: vec![(frame, d.bbox)],
            });
            result.births += 1;
            if status == TrackStatus::Active {
                result.tracks.push(TrackOutput {
                    id,
                    bbox: d.bbox,
                    score: d.score,
                });
            }
        }
        result.tracks.sort_by_key(|t| t.id);
        Ok(result)
    }

    fn index_of(&self, id: u64) -> usize {
        self.tracks
            .iter()
            .position(|t| t.id == id)
            .expect("reference built from a live track")
    }
}
