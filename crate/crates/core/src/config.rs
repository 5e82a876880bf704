//! Flat `key = value` settings shared by every command.
//!
//! Keys are grouped by prefix (`synth.`, `rs.`, `train.`, `tracker.`,
//! `eval.`). Blank lines and lines starting with `#` are ignored; unknown
//! keys are rejected. [`Settings::to_text`] prints every key with its
//! current value and is the reference for the defaults.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evalio::{Occlusion, SynthConfig};
use crate::refsearch::RsConfig;
use crate::tracker::TrackerConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub synth: SynthConfig,
    pub rs: RsConfig,
    /// Patch size of each memory level, in raster cells.
    pub patch_sizes: Vec<usize>,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    /// IoU a result box needs to count as a match during evaluation.
    pub eval_iou_gate: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            rs: RsConfig {
                emb_dim: synth.emb_dim,
                ..RsConfig::default()
            },
            synth,
            patch_sizes: vec![2, 4, 8],
            train: TrainConfig::default(),
            tracker: TrackerConfig::default(),
            eval_iou_gate: 0.5,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_pair<T: FromStr>(key: &str, v: &str) -> Result<(T, T)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key}: expected two comma-separated values")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

/// `object:start-end` items separated by commas.
fn parse_occlusions(key: &str, v: &str) -> Result<Vec<Occlusion>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let bad = || Error::Config(format!("{key}: expected object:start-end, got {item:?}"));
            let (o, span) = item.trim().split_once(':').ok_or_else(bad)?;
            let (s, e) = span.split_once('-').ok_or_else(bad)?;
            let occ = Occlusion {
                object: parse(key, o)?,
                start: parse(key, s)?,
                end: parse(key, e)?,
            };
            if occ.object == 0 || occ.start > occ.end {
                return Err(bad());
            }
            Ok(occ)
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Settings {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (s, r, t, k) = (&mut self.synth, &mut self.rs, &mut self.train, &mut self.tracker);
        match key.trim() {
            "synth.num_objects" => s.num_objects = parse(key, v)?,
            "synth.width" => s.width = parse(key, v)?,
            "synth.height" => s.height = parse(key, v)?,
            "synth.frames" => s.frames = parse(key, v)?,
            "synth.speed_min" => s.speed_min = parse(key, v)?,
            "synth.speed_max" => s.speed_max = parse(key, v)?,
            "synth.segment_frames" => s.segment_frames = parse(key, v)?,
            "synth.box_width" => s.box_width = parse_pair(key, v)?,
            "synth.box_height" => s.box_height = parse_pair(key, v)?,
            "synth.emb_dim" => s.emb_dim = parse(key, v)?,
            "synth.emb_noise" => s.emb_noise = parse(key, v)?,
            "synth.raster_scale" => s.raster_scale = parse(key, v)?,
            "synth.jitter_std" => s.jitter_std = parse(key, v)?,
            "synth.det_noise_std" => s.det_noise_std = parse(key, v)?,
            "synth.fp_rate" => s.fp_rate = parse(key, v)?,
            "synth.miss_rate" => s.miss_rate = parse(key, v)?,
            "synth.occlusion_rate" => s.occlusion_rate = parse(key, v)?,
            "synth.occlusion_len" => s.occlusion_len = parse_pair(key, v)?,
            "synth.occlusions" => s.occlusions = parse_occlusions(key, v)?,
            "synth.seed" => s.seed = parse(key, v)?,
            "rs.d_model" => r.d_model = parse(key, v)?,
            "rs.emb_dim" => r.emb_dim = parse(key, v)?,
            "rs.layers" => r.layers = parse(key, v)?,
            "rs.heads" => r.heads = parse(key, v)?,
            "rs.points" => r.points = parse(key, v)?,
            "rs.levels" => r.levels = parse(key, v)?,
            "rs.reach" => r.reach = parse(key, v)?,
            "rs.head_hidden" => r.head_hidden = parse(key, v)?,
            "rs.use_appearance" => r.use_appearance = parse(key, v)?,
            "rs.patch_sizes" => self.patch_sizes = parse_list(key, v)?,
            "train.steps" => t.steps = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.batch" => t.batch = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.holdout" => t.holdout = parse(key, v)?,
            "train.lambda_reg" => t.loss.reg = parse(key, v)?,
            "train.lambda_id" => t.loss.id = parse(key, v)?,
            "train.aux_weight" => t.loss.aux = parse(key, v)?,
            "train.focal_alpha" => t.loss.focal.alpha = parse(key, v)?,
            "train.focal_gamma" => t.loss.focal.gamma = parse(key, v)?,
            "train.prototype_scale" => t.prototype_scale = parse(key, v)?,
            "train.freeze_classifier" => t.freeze_classifier = parse(key, v)?,
            "train.detection_appearance" => t.detection_appearance = parse(key, v)?,
            "train.detection_references" => t.detection_references = parse(key, v)?,
            "tracker.det_gate" => k.det_gate = parse(key, v)?,
            "tracker.rs_gate" => k.rs_gate = parse(key, v)?,
            "tracker.iou_gate" => k.iou_gate = parse(key, v)?,
            "tracker.max_lost" => k.max_lost = parse(key, v)?,
            "tracker.lambda_emb" => k.lambda_emb = parse(key, v)?,
            "tracker.momentum" => k.momentum = parse(key, v)?,
            "tracker.distance_scale" => k.distance_scale = parse(key, v)?,
            "tracker.use_rs" => k.use_rs = parse(key, v)?,
            "tracker.use_iou" => k.use_iou = parse(key, v)?,
            "tracker.confirm" => k.confirm = parse(key, v)?,
            "tracker.kalman_std_position" => k.kalman.std_weight_position = parse(key, v)?,
            "tracker.kalman_std_velocity" => k.kalman.std_weight_velocity = parse(key, v)?,
            "tracker.kalman_min_std" => k.kalman.min_std = parse(key, v)?,
            "eval.iou_gate" => self.eval_iou_gate = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let (s, r, t, k) = (&self.synth, &self.rs, &self.train, &self.tracker);
        let occ: Vec<String> = s
            .occlusions
            .iter()
            .map(|o| format!("{}:{}-{}", o.object, o.start, o.end))
            .collect();
        let lines: Vec<(&str, String)> = vec![
            ("synth.num_objects", s.num_objects.to_string()),
            ("synth.width", s.width.to_string()),
            ("synth.height", s.height.to_string()),
            ("synth.frames", s.frames.to_string()),
            ("synth.speed_min", s.speed_min.to_string()),
            ("synth.speed_max", s.speed_max.to_string()),
            ("synth.segment_frames", s.segment_frames.to_string()),
            ("synth.box_width", format!("{},{}", s.box_width.0, s.box_width.1)),
            ("synth.box_height", format!("{},{}", s.box_height.0, s.box_height.1)),
            ("synth.emb_dim", s.emb_dim.to_string()),
            ("synth.emb_noise", s.emb_noise.to_string()),
            ("synth.raster_scale", s.raster_scale.to_string()),
            ("synth.jitter_std", s.jitter_std.to_string()),
            ("synth.det_noise_std", s.det_noise_std.to_string()),
            ("synth.fp_rate", s.fp_rate.to_string()),
            ("synth.miss_rate", s.miss_rate.to_string()),
            ("synth.occlusion_rate", s.occlusion_rate.to_string()),
            ("synth.occlusion_len", format!("{},{}", s.occlusion_len.0, s.occlusion_len.1)),
            ("synth.occlusions", occ.join(",")),
            ("synth.seed", s.seed.to_string()),
            ("rs.d_model", r.d_model.to_string()),
            ("rs.emb_dim", r.emb_dim.to_string()),
            ("rs.layers", r.layers.to_string()),
            ("rs.heads", r.heads.to_string()),
            ("rs.points", r.points.to_string()),
            ("rs.levels", r.levels.to_string()),
            ("rs.reach", r.reach.to_string()),
            ("rs.head_hidden", r.head_hidden.to_string()),
            ("rs.use_appearance", r.use_appearance.to_string()),
            ("rs.patch_sizes", join(&self.patch_sizes)),
            ("train.steps", t.steps.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.batch", t.batch.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.holdout", t.holdout.to_string()),
            ("train.lambda_reg", t.loss.reg.to_string()),
            ("train.lambda_id", t.loss.id.to_string()),
            ("train.aux_weight", t.loss.aux.to_string()),
            ("train.focal_alpha", t.loss.focal.alpha.to_string()),
            ("train.focal_gamma", t.loss.focal.gamma.to_string()),
            ("train.prototype_scale", t.prototype_scale.to_string()),
            ("train.freeze_classifier", t.freeze_classifier.to_string()),
            ("train.detection_appearance", t.detection_appearance.to_string()),
            ("train.detection_references", t.detection_references.to_string()),
            ("tracker.det_gate", k.det_gate.to_string()),
            ("tracker.rs_gate", k.rs_gate.to_string()),
            ("tracker.iou_gate", k.iou_gate.to_string()),
            ("tracker.max_lost", k.max_lost.to_string()),
            ("tracker.lambda_emb", k.lambda_emb.to_string()),
            ("tracker.momentum", k.momentum.to_string()),
            ("tracker.distance_scale", k.distance_scale.to_string()),
            ("tracker.use_rs", k.use_rs.to_string()),
            ("tracker.use_iou", k.use_iou.to_string()),
            ("tracker.confirm", k.confirm.to_string()),
            ("tracker.kalman_std_position", k.kalman.std_weight_position.to_string()),
            ("tracker.kalman_std_velocity", k.kalman.std_weight_velocity.to_string()),
            ("tracker.kalman_min_std", k.kalman.min_std.to_string()),
            ("eval.iou_gate", self.eval_iou_gate.to_string()),
        ];
        lines
            .into_iter()
            .map(|(key, v)| format!("{key} = {v}\n"))
            .collect()
    }

    /// Applies every assignment in `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            self.set(key, value).map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut s = Self::default();
        s.apply_text(text, path)?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }

    /// Applies a `key=value` override given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Checks every section, including that the patch sizes match the levels.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.rs.validate()?;
        self.tracker.validate()?;
        if self.patch_sizes.len() != self.rs.levels || self.patch_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "rs.patch_sizes needs {} positive entries, got {:?}",
                self.rs.levels, self.patch_sizes
            )));
        }
        if !(0.0..1.0).contains(&self.train.holdout) {
            return Err(Error::Config("train.holdout must lie in [0,1)".into()));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) || self.train.batch == 0 {
            return Err(Error::Config("train.lr and train.batch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_iou_gate) {
            return Err(Error::Config("eval.iou_gate must lie in [0,1]".into()));
        }
        Ok(())
    }
}
