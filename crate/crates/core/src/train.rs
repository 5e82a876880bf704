//! Training the reference-search module and patch embedder on adjacent-frame
//! pairs built from ground truth.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalio::{by_frame, Dataset, MotRecord};
use crate::geometry::iou;
use crate::numerics::{l2_normalize, AdamW, DenseArray};
use crate::refsearch::{
    joint_memory, rs_loss, FeatureMemory, PatchEmbedder, Reference, RsConfig, RsLossWeights,
    RsModule, RsTarget,
};

/// The trainable pair: reference search over memories from a patch embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub module: RsModule,
    pub embedder: PatchEmbedder,
}

impl Model {
    pub fn init(config: RsConfig, channels: usize, patch_sizes: &[usize], seed: u64) -> Result<Self> {
        if patch_sizes.len() != config.levels {
            return Err(Error::Config(format!(
                "{} patch sizes for {} levels",
                patch_sizes.len(),
                config.levels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let module = RsModule::init(config, &mut rng)?;
        let embedder = PatchEmbedder::init(channels, patch_sizes, d, &mut rng);
        Ok(Self { module, embedder })
    }

    pub fn memory(&self, raster: &DenseArray, ds: &Dataset) -> Result<FeatureMemory> {
        self.embedder.embed(raster, ds.image)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Frame pairs per optimizer step.
    pub batch: usize,
    pub seed: u64,
    /// Trailing fraction of each sequence's pairs held out for validation.
    pub holdout: f64,
    pub loss: RsLossWeights,
    /// Norm of the identity prototypes the classifier is initialized with.
    pub prototype_scale: f64,
    /// Keep the identity classifier at its prototype initialization.
    pub freeze_classifier: bool,
    /// Build reference appearances from detections matched to ground truth
    /// (otherwise references carry zero appearance).
    pub detection_appearance: bool,
    /// Place references at the detection matched to each object at `T − 1`
    /// instead of its ground-truth center; unmatched objects are skipped.
    pub detection_references: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch: 1,
            seed: 0,
            holdout: 0.2,
            loss: RsLossWeights::default(),
            prototype_scale: 10.0,
            freeze_classifier: true,
            detection_appearance: true,
            detection_references: false,
        }
    }
}

/// References at frame `frame − 1` of sequence `seq` with their targets at `frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub seq: usize,
    pub frame: u32,
    pub refs: Vec<Reference>,
    pub targets: Vec<RsTarget>,
}

/// Pairs split into training and held-out sets, plus identity prototypes
/// (one unit vector per identity class, zero if never detected).
#[derive(Debug, Clone)]
pub struct PairSet {
    pub train: Vec<TrainingPair>,
    pub holdout: Vec<TrainingPair>,
    pub prototypes: Vec<Vec<f64>>,
}

/// Index of the detection with the highest IoU (≥ 0.5) to each ground-truth box.
fn matched_detections(gt: &[MotRecord], ds: &Dataset, frame: u32) -> Vec<Option<usize>> {
    let dets: Vec<(usize, &MotRecord)> = ds
        .detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.frame == frame)
        .collect();
    gt.iter()
        .map(|g| {
            let best = dets
                .iter()
                .map(|(k, d)| (*k, iou(&g.bbox(), &d.bbox())))
                .filter(|(_, v)| *v >= 0.5)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            best.map(|(k, _)| k)
        })
        .collect()
}

/// Builds adjacent-frame pairs from every sequence's ground truth. Objects
/// present in both frames with their earlier center inside the image become
/// references; identity classes are numbered across sequences.
pub fn build_pairs(datasets: &[Dataset], emb_dim: usize, cfg: &TrainConfig) -> Result<PairSet> {
    let mut classes: BTreeMap<(usize, i64), usize> = BTreeMap::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut set = PairSet {
        train: Vec::new(),
        holdout: Vec::new(),
        prototypes: Vec::new(),
    };
    for (s, ds) in datasets.iter().enumerate() {
        if ds.gt.is_empty() {
            return Err(Error::Data(format!("sequence {s} has no ground truth")));
        }
        let frames: BTreeMap<u32, Vec<MotRecord>> = by_frame(&ds.gt).into_iter().collect();
        let mut matched: BTreeMap<u32, Vec<Option<usize>>> = BTreeMap::new();
        for (&f, recs) in &frames {
            let m = matched_detections(recs, ds, f);
            for (r, e) in recs.iter().zip(&m) {
                let next = classes.len();
                let c = *classes.entry((s, r.id)).or_insert(next);
                if c == sums.len() {
                    sums.push(vec![0.0; emb_dim]);
                }
                if let Some(k) = *e {
                    let e = &ds.embeddings[k];
                    if e.len() != emb_dim {
                        return Err(Error::Data(format!(
                            "detection embedding has length {}, model expects {emb_dim}",
                            e.len()
                        )));
                    }
                    sums[c].iter_mut().zip(e).for_each(|(a, b)| *a += b);
                }
            }
            matched.insert(f, m);
        }
        let mut pairs = Vec::new();
        for (&f, cur) in &frames {
            let Some(prev) = frames.get(&(f.wrapping_sub(1))) else { continue };
            let prev_det = &matched[&(f - 1)];
            let mut refs = Vec::new();
            let mut targets = Vec::new();
            for (k, p) in prev.iter().enumerate() {
                let Some(c) = cur.iter().find(|c| c.id == p.id) else { continue };
                let (px, py) = match (prev_det[k], cfg.detection_references) {
                    (_, false) => p.bbox().center(),
                    (Some(d), true) => ds.detections[d].bbox().center(),
                    (None, true) => continue,
                };
                if !ds.image.contains(px, py) {
                    continue;
                }
                let (cx, cy) = c.bbox().center();
                let app = match (prev_det[k], cfg.detection_appearance) {
                    (Some(d), true) => ds.embeddings[d].clone(),
                    _ => vec![0.0; emb_dim],
                };
                refs.push(Reference {
                    track_id: p.id as u64,
                    point: [px / ds.image.w(), py / ds.image.h()],
                    appearance: app,
                });
                targets.push(RsTarget {
                    center: [cx / ds.image.w(), cy / ds.image.h()],
                    identity: classes[&(s, p.id)],
                });
            }
            if !refs.is_empty() {
                pairs.push(TrainingPair {
                    seq: s,
                    frame: f,
                    refs,
                    targets,
                });
            }
        }
        let n_hold = ((pairs.len() as f64) * cfg.holdout).round() as usize;
        let split = pairs.len() - n_hold.min(pairs.len());
        set.holdout.extend(pairs.split_off(split));
        set.train.extend(pairs);
    }
    set.prototypes = sums
        .iter()
        .map(|v| l2_normalize(v).unwrap_or_else(|| vec![0.0; emb_dim]))
        .collect();
    Ok(set)
}

/// Sets the identity classifier rows to scaled prototypes and zero bias.
pub fn init_classifier(module: &mut RsModule, prototypes: &[Vec<f64>], scale: f64) -> Result<()> {
    let e = module.config.emb_dim;
    if prototypes.len() != module.config.num_identities {
        return Err(Error::Config(format!(
            "{} identity prototypes for {} classes",
            prototypes.len(),
            module.config.num_identities
        )));
    }
    let w = module.id_classifier.weight.values_mut();
    for (k, p) in prototypes.iter().enumerate() {
        for (i, v) in p.iter().enumerate() {
            w[k * e + i] = scale * v;
        }
    }
    module.id_classifier.bias.fill(0.0);
    Ok(())
}

/// Per-step record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
}

/// Memories of the two frames of a pair; the earlier one is treated as a
/// constant during training.
fn pair_memories(model: &Model, ds: &Dataset, frame: u32) -> Result<(FeatureMemory, FeatureMemory)> {
    let raster = |f: u32| {
        ds.rasters
            .get(f as usize - 1)
            .ok_or_else(|| Error::Data(format!("no raster for frame {f}")))
    };
    Ok((
        model.memory(raster(frame - 1)?, ds)?,
        model.memory(raster(frame)?, ds)?,
    ))
}

/// Loss of one pair; with `grads`, accumulates parameter gradients.
fn pair_loss(
    model: &Model,
    ds: &Dataset,
    pair: &TrainingPair,
    weights: RsLossWeights,
    grads: Option<&mut Model>,
) -> Result<f64> {
    let (prev, cur) = pair_memories(model, ds, pair.frame)?;
    let joint = joint_memory(&prev, &cur)?;
    let (preds, tape) = model.module.forward_tape(&pair.refs, &joint)?;
    let loss = rs_loss(&model.module, &preds, &pair.targets, weights)?;
    if let Some(g) = grads {
        let dmem = model
            .module
            .backward(&pair.refs, &joint, &tape, &loss.pred_grads, &mut g.module, true)?
            .expect("memory gradient requested");
        g.module.id_classifier.weight.add_assign(&loss.classifier_grad.weight)?;
        g.module.id_classifier.bias.add_assign(&loss.classifier_grad.bias)?;
        let raster = &ds.rasters[pair.frame as usize - 1];
        model.embedder.backward(raster, &dmem.levels, &mut g.embedder)?;
    }
    Ok(loss.value)
}

/// Runs `cfg.steps` AdamW steps over shuffled training pairs.
pub fn train(
    model: &mut Model,
    datasets: &[Dataset],
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut log: impl FnMut(StepLog),
) -> Result<()> {
    if cfg.steps == 0 {
        return Ok(());
    }
    if pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    // the frozen classifier is left out of the optimizer entirely
    let skip = if cfg.freeze_classifier { 2 } else { 0 };
    for step in 0..cfg.steps {
        let mut grads = Model {
            module: model.module.zeroed(),
            embedder: model.embedder.zeroed(),
        };
        let mut total = 0.0;
        for _ in 0..cfg.batch.max(1) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let pair = &pairs[order[cursor]];
            cursor += 1;
            total += pair_loss(model, &datasets[pair.seq], pair, cfg.loss, Some(&mut grads))?;
        }
        let scale = 1.0 / cfg.batch.max(1) as f64;
        let mut g: Vec<&DenseArray> = grads.module.tensors();
        g.truncate(g.len() - skip);
        g.extend(grads.embedder.tensors());
        let g: Vec<DenseArray> = g
            .into_iter()
            .map(|t| {
                let mut t = t.clone();
                t.scale(scale);
                t
            })
            .collect();
        let mut p = model.module.tensors_mut();
        let keep = p.len() - skip;
        p.truncate(keep);
        p.extend(model.embedder.tensors_mut());
        opt.step(&mut p, &g.iter().collect::<Vec<_>>())?;
        log(StepLog {
            step: step + 1,
            loss: total * scale,
        });
    }
    Ok(())
}

/// Mean center L1 (normalized units, averaged over coordinates) of the
/// model and of the stationary prediction `ṽ_T = v_{T−1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterError {
    pub model: f64,
    pub stationary: f64,
    pub references: usize,
}

pub fn center_error(model: &Model, datasets: &[Dataset], pairs: &[TrainingPair]) -> Result<CenterError> {
    let mut m = 0.0;
    let mut s = 0.0;
    let mut n = 0;
    for pair in pairs {
        let ds = &datasets[pair.seq];
        let (prev, cur) = pair_memories(model, ds, pair.frame)?;
        let preds = model.module.forward(&pair.refs, &joint_memory(&prev, &cur)?)?;
        for ((p, r), t) in preds.iter().zip(&pair.refs).zip(&pair.targets) {
            m += ((p.center[0] - t.center[0]).abs() + (p.center[1] - t.center[1]).abs()) / 2.0;
            s += ((r.point[0] - t.center[0]).abs() + (r.point[1] - t.center[1]).abs()) / 2.0;
            n += 1;
        }
    }
    let d = n.max(1) as f64;
    Ok(CenterError {
        model: m / d,
        stationary: s / d,
        references: n,
    })
}
