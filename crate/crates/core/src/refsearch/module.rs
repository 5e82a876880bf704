use rand::Rng;

use super::config::RsConfig;
use super::layer::{backward_one, forward_one, value_grids, LayerTape, RsLayerParams};
use super::memory::FeatureMemory;
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Linear, Mlp, MlpCache};

const POINT_EPS: f64 = 1e-4;

/// A track offered to the module: its last center and stored appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub track_id: u64,
    /// Normalized center in `[0,1]²`.
    pub point: [f64; 2],
    /// Stored track appearance, length `emb_dim`.
    pub appearance: Vec<f64>,
}

/// Per-reference output, aligned with the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct RsPrediction {
    pub track_id: u64,
    pub center: [f64; 2],
    /// Unit-length appearance (zero only if the head output vanishes).
    pub appearance: Vec<f64>,
    /// Centers predicted after each layer except the last.
    pub aux_centers: Vec<[f64; 2]>,
}

/// Upstream gradient for one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad {
    pub center: [f64; 2],
    pub appearance: Vec<f64>,
    pub aux_centers: Vec<[f64; 2]>,
}

impl PredictionGrad {
    pub fn zeros(cfg: &RsConfig) -> Self {
        Self {
            center: [0.0; 2],
            appearance: vec![0.0; cfg.emb_dim],
            aux_centers: vec![[0.0; 2]; cfg.layers - 1],
        }
    }
}

/// Stacked co-attention layers with center, appearance and identity heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RsModule {
    pub config: RsConfig,
    /// Sinusoidal point encoding → first-layer reference embedding.
    pub pos_proj: Linear,
    /// Stored track appearance → first-layer reference embedding.
    pub app_proj: Linear,
    pub layers: Vec<RsLayerParams>,
    pub center_head: Mlp,
    pub aux_heads: Vec<Mlp>,
    pub appearance_head: Mlp,
    /// Training-only identity classifier over predicted appearance.
    pub id_classifier: Linear,
}

impl RsModule {
    /// Random init; every center head's last layer starts at zero so the
    /// module initially predicts no motion.
    pub fn init<R: Rng + ?Sized>(config: RsConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, e, hid) = (config.d_model, config.emb_dim, config.head_hidden);
        let center = |rng: &mut R| -> Result<Mlp> {
            let mut m = Mlp::init(&[d, hid, 2], 1.0, rng)?;
            let last = m.layers.len() - 1;
            m.layers[last] = m.layers[last].zeroed();
            Ok(m)
        };
        let pos_proj = Linear::init(d, d, 1.0, rng);
        let app_proj = Linear::init(e, d, 1.0, rng);
        let layers = (0..config.layers)
            .map(|_| RsLayerParams::init(&config, rng))
            .collect();
        let center_head = center(rng)?;
        let aux_heads = (1..config.layers)
            .map(|_| center(rng))
            .collect::<Result<_>>()?;
        let appearance_head = Mlp::init(&[d, hid, e], 1.0, rng)?;
        let id_classifier = Linear::init(e, config.num_identities, 1.0, rng);
        Ok(Self {
            config,
            pos_proj,
            app_proj,
            layers,
            center_head,
            aux_heads,
            appearance_head,
            id_classifier,
        })
    }

    /// Parameters in declaration order (the checkpoint order).
    pub fn tensors(&self) -> Vec<&DenseArray> {
        let mut t = self.pos_proj.tensors();
        t.extend(self.app_proj.tensors());
        for l in &self.layers {
            t.extend(l.tensors());
        }
        t.extend(self.center_head.tensors());
        for h in &self.aux_heads {
            t.extend(h.tensors());
        }
        t.extend(self.appearance_head.tensors());
        t.extend(self.id_classifier.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut t = self.pos_proj.tensors_mut();
        t.extend(self.app_proj.tensors_mut());
        for l in &mut self.layers {
            t.extend(l.tensors_mut());
        }
        t.extend(self.center_head.tensors_mut());
        for h in &mut self.aux_heads {
            t.extend(h.tensors_mut());
        }
        t.extend(self.appearance_head.tensors_mut());
        t.extend(self.id_classifier.tensors_mut());
        t
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeroed(&self) -> Self {
        Self {
            config: self.config.clone(),
            pos_proj: self.pos_proj.zeroed(),
            app_proj: self.app_proj.zeroed(),
            layers: self.layers.iter().map(|l| l.zeroed()).collect(),
            center_head: self.center_head.zeroed(),
            aux_heads: self.aux_heads.iter().map(|h| h.zeroed()).collect(),
            appearance_head: self.appearance_head.zeroed(),
            id_classifier: self.id_classifier.zeroed(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// First-layer embedding of a reference.
    pub fn reference_embedding(&self, r: &Reference) -> Result<Vec<f64>> {
        let pe = position_encoding(r.point, self.config.d_model);
        let mut q = self.pos_proj.forward(&pe)?;
        if self.config.use_appearance {
            let a = self.app_proj.forward(&r.appearance)?;
            q.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
        }
        Ok(q)
    }

    pub fn forward(&self, refs: &[Reference], memory: &FeatureMemory) -> Result<Vec<RsPrediction>> {
        Ok(self.forward_tape(refs, memory)?.0)
    }

    /// Forward pass that also records what [`RsModule::backward`] needs.
    pub fn forward_tape(
        &self,
        refs: &[Reference],
        memory: &FeatureMemory,
    ) -> Result<(Vec<RsPrediction>, ForwardTape)> {
        self.check_inputs(refs, memory)?;
        if refs.is_empty() {
            return Ok((Vec::new(), ForwardTape::default()));
        }
        let grids = self
            .layers
            .iter()
            .map(|l| value_grids(l, memory))
            .collect::<Result<Vec<_>>>()?;
        let mut preds = Vec::with_capacity(refs.len());
        let mut tapes = Vec::with_capacity(refs.len());
        for r in refs {
            let (p, t) = self.forward_one(r, &grids)?;
            preds.push(p);
            tapes.push(t);
        }
        Ok((preds, ForwardTape { grids, refs: tapes }))
    }

    fn check_inputs(&self, refs: &[Reference], memory: &FeatureMemory) -> Result<()> {
        let c = &self.config;
        if memory.levels.len() != c.levels || memory.channels() != c.d_model {
            return Err(Error::Shape(format!(
                "memory has {} levels of width {}, module expects {} of width {}",
                memory.levels.len(),
                memory.channels(),
                c.levels,
                c.d_model
            )));
        }
        for r in refs {
            if !r.point.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "reference point {:?} outside the unit square",
                    r.point
                )));
            }
            if r.appearance.len() != c.emb_dim {
                return Err(Error::Shape(format!(
                    "reference appearance has length {}, expected {}",
                    r.appearance.len(),
                    c.emb_dim
                )));
            }
        }
        Ok(())
    }

    fn forward_one(&self, r: &Reference, grids: &[Vec<DenseArray>]) -> Result<(RsPrediction, RefTape)> {
        let base = [logit(r.point[0]), logit(r.point[1])];
        let mut qs = vec![self.reference_embedding(r)?];
        let mut layer_tapes = Vec::with_capacity(self.layers.len());
        let mut aux_caches = Vec::with_capacity(self.aux_heads.len());
        let mut aux_centers = Vec::with_capacity(self.aux_heads.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let (next, tape) = forward_one(layer, &self.config, r.point, &qs[k], &grids[k])?;
            layer_tapes.push(tape);
            if let Some(head) = self.aux_heads.get(k) {
                let (o, cache) = head.forward_cached(&next)?;
                aux_centers.push(squash(base, &o));
                aux_caches.push(cache);
            }
            qs.push(next);
        }
        let last = qs.last().unwrap();
        let (o, center_cache) = self.center_head.forward_cached(last)?;
        let center = squash(base, &o);
        let (raw, app_cache) = self.appearance_head.forward_cached(last)?;
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let appearance = if n < 1e-12 {
            raw.clone()
        } else {
            raw.iter().map(|v| v / n).collect()
        };
        Ok((
            RsPrediction {
                track_id: r.track_id,
                center,
                appearance: appearance.clone(),
                aux_centers: aux_centers.clone(),
            },
            RefTape {
                qs,
                layers: layer_tapes,
                aux_caches,
                aux_centers,
                center_cache,
                center,
                app_cache,
                appearance,
                app_norm: n,
            },
        ))
    }

    /// Backpropagates `dpreds` through a recorded forward pass. Parameter
    /// gradients accumulate into `grad`; the memory gradient is returned when
    /// requested.
    pub fn backward(
        &self,
        refs: &[Reference],
        memory: &FeatureMemory,
        tape: &ForwardTape,
        dpreds: &[PredictionGrad],
        grad: &mut RsModule,
        want_memory: bool,
    ) -> Result<Option<FeatureMemory>> {
        if refs.len() != tape.refs.len() || dpreds.len() != refs.len() {
            return Err(Error::Shape(format!(
                "backward over {} references with {} tapes and {} gradients",
                refs.len(),
                tape.refs.len(),
                dpreds.len()
            )));
        }
        let mut dmem = want_memory.then(|| memory.zeros_like());
        if refs.is_empty() {
            return Ok(dmem);
        }
        let mut dgrids: Vec<Vec<DenseArray>> = tape
            .grids
            .iter()
            .map(|gs| gs.iter().map(|g| DenseArray::zeros(g.shape())).collect())
            .collect();
        for ((r, t), dp) in refs.iter().zip(&tape.refs).zip(dpreds) {
            self.backward_one(r, t, &tape.grids, dp, grad, &mut dgrids)?;
        }
        for (k, layer) in self.layers.iter().enumerate() {
            for (l, m) in memory.levels.iter().enumerate() {
                let dx = layer.value.backward_rows(
                    m,
                    &dgrids[k][l],
                    &mut grad.layers[k].value,
                    want_memory,
                );
                if let (Some(dm), Some(dx)) = (dmem.as_mut(), dx) {
                    dm.levels[l].add_assign(&dx)?;
                }
            }
        }
        Ok(dmem)
    }

    fn backward_one(
        &self,
        r: &Reference,
        t: &RefTape,
        grids: &[Vec<DenseArray>],
        dp: &PredictionGrad,
        grad: &mut RsModule,
        dgrids: &mut [Vec<DenseArray>],
    ) -> Result<()> {
        let k_layers = self.layers.len();
        if dp.appearance.len() != self.config.emb_dim || dp.aux_centers.len() != k_layers - 1 {
            return Err(Error::Shape("prediction gradient shape".into()));
        }
        // final heads
        let do_center = squash_backward(t.center, dp.center);
        let mut dq = self
            .center_head
            .backward(&t.center_cache, &do_center, &mut grad.center_head);
        let draw = if t.app_norm < 1e-12 {
            dp.appearance.clone()
        } else {
            let y = &t.appearance;
            let proj: f64 = y.iter().zip(&dp.appearance).map(|(a, b)| a * b).sum();
            y.iter()
                .zip(&dp.appearance)
                .map(|(yi, gi)| (gi - yi * proj) / t.app_norm)
                .collect()
        };
        let da = self
            .appearance_head
            .backward(&t.app_cache, &draw, &mut grad.appearance_head);
        dq.iter_mut().zip(&da).for_each(|(a, b)| *a += b);

        for k in (0..k_layers).rev() {
            // q_{k+1} also feeds the auxiliary head of layer k
            if k < k_layers - 1 {
                let dok = squash_backward(t.aux_centers[k], dp.aux_centers[k]);
                let d = self.aux_heads[k].backward(&t.aux_caches[k], &dok, &mut grad.aux_heads[k]);
                dq.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
            }
            dq = backward_one(
                &self.layers[k],
                &self.config,
                &t.qs[k],
                &t.layers[k],
                &grids[k],
                &dq,
                &mut grad.layers[k],
                &mut dgrids[k],
            );
        }
        let pe = position_encoding(r.point, self.config.d_model);
        self.pos_proj
            .backward_into(&pe, &dq, &mut grad.pos_proj, None);
        if self.config.use_appearance {
            self.app_proj
                .backward_into(&r.appearance, &dq, &mut grad.app_proj, None);
        }
        Ok(())
    }
}

/// Recorded forward state for a batch of references.
#[derive(Debug, Clone, Default)]
pub struct ForwardTape {
    grids: Vec<Vec<DenseArray>>,
    refs: Vec<RefTape>,
}

#[derive(Debug, Clone)]
struct RefTape {
    qs: Vec<Vec<f64>>,
    layers: Vec<LayerTape>,
    aux_caches: Vec<MlpCache>,
    aux_centers: Vec<[f64; 2]>,
    center_cache: MlpCache,
    center: [f64; 2],
    app_cache: MlpCache,
    appearance: Vec<f64>,
    app_norm: f64,
}

/// Sin/cos features of a normalized point at `d/4` geometric frequencies
/// from `2π` to `2π·64`, x block then y block, zero padded to `d`.
pub fn position_encoding(p: [f64; 2], d: usize) -> Vec<f64> {
    let f = d / 4;
    let mut out = vec![0.0; d];
    for (axis, &v) in p.iter().enumerate() {
        for k in 0..f {
            let freq = std::f64::consts::TAU * 64f64.powf(k as f64 / f as f64);
            let (s, c) = (freq * v).sin_cos();
            out[axis * 2 * f + 2 * k] = s;
            out[axis * 2 * f + 2 * k + 1] = c;
        }
    }
    out
}

fn logit(v: f64) -> f64 {
    let v = v.clamp(POINT_EPS, 1.0 - POINT_EPS);
    (v / (1.0 - v)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn squash(base: [f64; 2], o: &[f64]) -> [f64; 2] {
    [sigmoid(base[0] + o[0]), sigmoid(base[1] + o[1])]
}

fn squash_backward(c: [f64; 2], dc: [f64; 2]) -> Vec<f64> {
    vec![dc[0] * c[0] * (1.0 - c[0]), dc[1] * c[1] * (1.0 - c[1])]
}
