use rand::Rng;

use super::config::RsConfig;
use super::memory::FeatureMemory;
use crate::error::{Error, Result};
use crate::numerics::{
    sample_channels, sample_channels_backward, softmax, softmax_backward, DenseArray, GridDims,
    Linear,
};

/// Parameters of one deformable co-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RsLayerParams {
    /// Reference embedding → `(dx, dy)` per head and point.
    pub offset: Linear,
    /// Reference embedding → attention logit per head and point.
    pub weight: Linear,
    pub value: Linear,
    pub output: Linear,
    /// Aggregated feature → residual added to the reference embedding.
    pub update: Linear,
}

impl RsLayerParams {
    /// Offsets start as a fixed fan: head `h` looks along direction
    /// `2πh/heads`, its points stepping out to the full reach on each level.
    /// Attention starts uniform.
    pub fn init<R: Rng + ?Sized>(cfg: &RsConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let hp = cfg.heads * cfg.points;
        let mut offset = Linear::zeros(d, hp * 2);
        let ppl = cfg.points_per_level();
        let bias = offset.bias.values_mut();
        for h in 0..cfg.heads {
            let theta = std::f64::consts::TAU * h as f64 / cfg.heads as f64;
            let (s, c) = theta.sin_cos();
            let m = s.abs().max(c.abs());
            for j in 0..cfg.points {
                let step = ((j % ppl) + 1) as f64 / ppl as f64;
                bias[(h * cfg.points + j) * 2] = c / m * step;
                bias[(h * cfg.points + j) * 2 + 1] = s / m * step;
            }
        }
        Self {
            offset,
            weight: Linear::zeros(d, hp),
            value: Linear::init(d, d, 1.0, rng),
            output: Linear::init(d, d, 1.0, rng),
            update: Linear::init(d, d, 1.0, rng),
        }
    }

    pub fn tensors(&self) -> Vec<&DenseArray> {
        [&self.offset, &self.weight, &self.value, &self.output, &self.update]
            .into_iter()
            .flat_map(|l| l.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseArray> {
        [
            &mut self.offset,
            &mut self.weight,
            &mut self.value,
            &mut self.output,
            &mut self.update,
        ]
        .into_iter()
        .flat_map(|l| l.tensors_mut())
        .collect()
    }

    pub fn zeroed(&self) -> Self {
        Self {
            offset: self.offset.zeroed(),
            weight: self.weight.zeroed(),
            value: self.value.zeroed(),
            output: self.output.zeroed(),
            update: self.update.zeroed(),
        }
    }

    fn check(&self, cfg: &RsConfig) -> Result<()> {
        let d = cfg.d_model;
        let hp = cfg.heads * cfg.points;
        let dims = [
            (&self.offset, d, 2 * hp),
            (&self.weight, d, hp),
            (&self.value, d, d),
            (&self.output, d, d),
            (&self.update, d, d),
        ];
        for (l, i, o) in dims {
            if l.in_dim() != i || l.out_dim() != o {
                return Err(Error::Shape(format!(
                    "layer projection {}→{} where {i}→{o} expected",
                    l.in_dim(),
                    l.out_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Input to a layer: a reference point and its current embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub point: [f64; 2],
    pub embedding: Vec<f64>,
}

/// Per-reference result of [`rs_layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub aggregated: Vec<f64>,
    pub updated: Vec<f64>,
    /// Softmax weights, `heads × points`, head-major.
    pub attention: Vec<f64>,
    /// Sampling locations in normalized image coordinates, aligned with `attention`.
    pub locations: Vec<[f64; 2]>,
}

/// One co-attention layer applied independently to every query.
pub fn rs_layer(
    params: &RsLayerParams,
    cfg: &RsConfig,
    queries: &[Query],
    memory: &FeatureMemory,
) -> Result<Vec<LayerOutput>> {
    cfg.validate()?;
    params.check(cfg)?;
    if memory.levels.len() != cfg.levels || memory.channels() != cfg.d_model {
        return Err(Error::Shape(format!(
            "memory has {} levels of width {}, layer expects {} of width {}",
            memory.levels.len(),
            memory.channels(),
            cfg.levels,
            cfg.d_model
        )));
    }
    let grids = value_grids(params, memory)?;
    queries
        .iter()
        .map(|q| {
            let (updated, tape) = forward_one(params, cfg, q.point, &q.embedding, &grids)?;
            Ok(LayerOutput {
                aggregated: tape.aggregated,
                updated,
                attention: tape.attention,
                locations: tape.locations,
            })
        })
        .collect()
}

/// Value-projected memory, one grid per level.
pub(crate) fn value_grids(params: &RsLayerParams, memory: &FeatureMemory) -> Result<Vec<DenseArray>> {
    memory
        .levels
        .iter()
        .map(|m| params.value.forward_rows(m))
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct LayerTape {
    pub attention: Vec<f64>,
    pub locations: Vec<[f64; 2]>,
    /// Sampled head slices, `heads × points × head_dim`.
    samples: Vec<f64>,
    concat: Vec<f64>,
    pub aggregated: Vec<f64>,
}

pub(crate) fn forward_one(
    params: &RsLayerParams,
    cfg: &RsConfig,
    point: [f64; 2],
    q: &[f64],
    grids: &[DenseArray],
) -> Result<(Vec<f64>, LayerTape)> {
    let (heads, points, dh) = (cfg.heads, cfg.points, cfg.head_dim());
    let ppl = cfg.points_per_level();
    let raw = params.offset.forward(q)?;
    let logits = params.weight.forward(q)?;
    let mut attention = Vec::with_capacity(heads * points);
    for h in 0..heads {
        attention.extend(softmax(&logits[h * points..(h + 1) * points]));
    }
    let mut locations = Vec::with_capacity(heads * points);
    let mut samples = vec![0.0; heads * points * dh];
    let mut concat = vec![0.0; cfg.d_model];
    for h in 0..heads {
        for j in 0..points {
            let k = h * points + j;
            let grid = &grids[j / ppl];
            let dims = GridDims::of(grid)?;
            let loc = [
                point[0] + raw[2 * k] * cfg.reach / dims.width as f64,
                point[1] + raw[2 * k + 1] * cfg.reach / dims.height as f64,
            ];
            locations.push(loc);
            let s = &mut samples[k * dh..(k + 1) * dh];
            sample_channels(grid.values(), dims, loc, h * dh, s);
            let a = attention[k];
            for (c, v) in concat[h * dh..(h + 1) * dh].iter_mut().zip(s.iter()) {
                *c += a * v;
            }
        }
    }
    let aggregated = params.output.forward(&concat)?;
    let delta = params.update.forward(&aggregated)?;
    let updated = q.iter().zip(&delta).map(|(a, b)| a + b).collect();
    Ok((
        updated,
        LayerTape {
            attention,
            locations,
            samples,
            concat,
            aggregated,
        },
    ))
}

/// Backward of [`forward_one`]. Accumulates parameter gradients into `grad`
/// and value-grid gradients into `dgrids`; returns `dL/dq`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_one(
    params: &RsLayerParams,
    cfg: &RsConfig,
    q: &[f64],
    tape: &LayerTape,
    grids: &[DenseArray],
    dupdated: &[f64],
    grad: &mut RsLayerParams,
    dgrids: &mut [DenseArray],
) -> Vec<f64> {
    let (heads, points, dh) = (cfg.heads, cfg.points, cfg.head_dim());
    let ppl = cfg.points_per_level();
    let mut dq = dupdated.to_vec();
    let dagg = params.update.backward(&tape.aggregated, dupdated, &mut grad.update);
    let dconcat = params.output.backward(&tape.concat, &dagg, &mut grad.output);
    let mut dlogits = vec![0.0; heads * points];
    let mut draw = vec![0.0; heads * points * 2];
    let mut ds = vec![0.0; dh];
    for h in 0..heads {
        let dc = &dconcat[h * dh..(h + 1) * dh];
        let mut da = vec![0.0; points];
        for j in 0..points {
            let k = h * points + j;
            let l = j / ppl;
            let dims = GridDims::of(&grids[l]).expect("grid checked in forward");
            let s = &tape.samples[k * dh..(k + 1) * dh];
            da[j] = s.iter().zip(dc).map(|(a, b)| a * b).sum();
            let a = tape.attention[k];
            ds.iter_mut().zip(dc).for_each(|(o, g)| *o = a * g);
            let dloc = sample_channels_backward(
                grids[l].values(),
                dims,
                tape.locations[k],
                h * dh,
                &ds,
                Some(dgrids[l].values_mut()),
            );
            draw[2 * k] = dloc[0] * cfg.reach / dims.width as f64;
            draw[2 * k + 1] = dloc[1] * cfg.reach / dims.height as f64;
        }
        let dl = softmax_backward(&tape.attention[h * points..(h + 1) * points], &da);
        dlogits[h * points..(h + 1) * points].copy_from_slice(&dl);
    }
    params
        .offset
        .backward_into(q, &draw, &mut grad.offset, Some(&mut dq));
    params
        .weight
        .backward_into(q, &dlogits, &mut grad.weight, Some(&mut dq));
    dq
}
