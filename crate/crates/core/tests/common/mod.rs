//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refmot::assignment::CostMatrix;
use refmot::evalio::MotRecord;
use refmot::geometry::{iou, BBox, ImageSize};
use refmot::numerics::{softmax, DenseArray, Linear};
use refmot::refsearch::{FeatureMemory, Query, RsConfig, RsLayerParams};

pub fn small_config() -> RsConfig {
    RsConfig {
        d_model: 8,
        emb_dim: 4,
        layers: 2,
        heads: 2,
        points: 6,
        levels: 3,
        reach: 4.0,
        head_hidden: 8,
        use_appearance: true,
        num_identities: 3,
    }
}

pub fn memory(rng: &mut ChaCha8Rng, d: usize, sizes: &[(usize, usize)]) -> FeatureMemory {
    FeatureMemory::new(
        sizes
            .iter()
            .map(|&(h, w)| DenseArray::uniform(&[h, w, d], 1.0, rng))
            .collect(),
        ImageSize::new(64, 48).unwrap(),
    )
    .unwrap()
}

/// Explicit sum over every cell of the value grid with tent weights.
pub fn dense_sample(m: &DenseArray, value: &Linear, p: [f64; 2], c0: usize, n: usize) -> Vec<f64> {
    let (h, w, d) = (m.shape()[0], m.shape()[1], m.shape()[2]);
    let mut out = vec![0.0; n];
    if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
        return out;
    }
    let gx = p[0] * w as f64 - 0.5;
    let gy = p[1] * h as f64 - 0.5;
    for i in 0..h {
        for j in 0..w {
            let k = (1.0 - (gx - j as f64).abs()).max(0.0) * (1.0 - (gy - i as f64).abs()).max(0.0);
            if k == 0.0 {
                continue;
            }
            let cell = &m.values()[(i * w + j) * d..(i * w + j + 1) * d];
            for c in 0..n {
                let row = &value.weight.values()[(c0 + c) * d..(c0 + c + 1) * d];
                let v: f64 = value.bias.values()[c0 + c] + row.iter().zip(cell).map(|(a, b)| a * b).sum::<f64>();
                out[c] += k * v;
            }
        }
    }
    out
}

pub fn matvec(l: &Linear, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..l.bias.len())
        .map(|o| {
            l.bias.values()[o]
                + (0..n).map(|i| l.weight.values()[o * n + i] * x[i]).sum::<f64>()
        })
        .collect()
}

pub fn dense_layer(p: &RsLayerParams, cfg: &RsConfig, q: &Query, mem: &FeatureMemory) -> Vec<f64> {
    let dh = cfg.d_model / cfg.heads;
    let raw = matvec(&p.offset, &q.embedding);
    let logits = matvec(&p.weight, &q.embedding);
    let mut concat = vec![0.0; cfg.d_model];
    for h in 0..cfg.heads {
        let a = softmax(&logits[h * cfg.points..(h + 1) * cfg.points]);
        for j in 0..cfg.points {
            let m = &mem.levels[j / (cfg.points / cfg.levels)];
            let k = h * cfg.points + j;
            let loc = [
                q.point[0] + raw[2 * k] * cfg.reach / m.shape()[1] as f64,
                q.point[1] + raw[2 * k + 1] * cfg.reach / m.shape()[0] as f64,
            ];
            let s = dense_sample(m, &p.value, loc, h * dh, dh);
            for c in 0..dh {
                concat[h * dh + c] += a[j] * s[c];
            }
        }
    }
    matvec(&p.output, &concat)
}

pub fn rec(frame: u32, id: i64, x: f64, y: f64) -> MotRecord {
    MotRecord::new(frame, id, &BBox::from_ltwh(x, y, 10.0, 20.0).unwrap(), 1.0)
}

pub fn two_tracks(frames: u32) -> Vec<MotRecord> {
    (1..=frames)
        .flat_map(|t| [rec(t, 1, 0.0, 0.0), rec(t, 2, 100.0, 0.0)])
        .collect()
}

pub fn random_instance(rng: &mut ChaCha8Rng, ids: i64, frames: u32) -> (Vec<MotRecord>, Vec<MotRecord>) {
    let mut gt = Vec::new();
    let mut hyp = Vec::new();
    for t in 1..=frames {
        for id in 1..=ids {
            if rng.random_bool(0.8) {
                gt.push(rec(t, id, 12.0 * rng.random_range(0..4) as f64, 0.0));
            }
            if rng.random_bool(0.8) {
                hyp.push(rec(t, 10 + id, 12.0 * rng.random_range(0..4) as f64, 0.0));
            }
        }
    }
    (gt, hyp)
}

/// Best IDTP over every partial injective map from gt ids to hypothesis ids.
pub fn brute_idtp(gt: &[MotRecord], hyp: &[MotRecord]) -> usize {
    let mut gids: Vec<i64> = gt.iter().map(|r| r.id).collect();
    gids.sort_unstable();
    gids.dedup();
    let mut hids: Vec<i64> = hyp.iter().map(|r| r.id).collect();
    hids.sort_unstable();
    hids.dedup();
    let mut w: HashMap<(i64, i64), usize> = HashMap::new();
    for a in gt {
        for b in hyp.iter().filter(|b| b.frame == a.frame) {
            if iou(&a.bbox(), &b.bbox()) >= 0.5 {
                *w.entry((a.id, b.id)).or_default() += 1;
            }
        }
    }
    // each gt id takes an unused hypothesis id or stays free
    fn go(g: usize, gids: &[i64], hids: &[i64], w: &HashMap<(i64, i64), usize>, used: &mut Vec<bool>) -> usize {
        if g == gids.len() {
            return 0;
        }
        let mut best = go(g + 1, gids, hids, w, used);
        for (k, h) in hids.iter().enumerate() {
            if !used[k] {
                used[k] = true;
                let gain = w.get(&(gids[g], *h)).copied().unwrap_or(0);
                best = best.max(gain + go(g + 1, gids, hids, w, used));
                used[k] = false;
            }
        }
        best
    }
    go(0, &gids, &hids, &w, &mut vec![false; hids.len()])
}

/// Minimum total cost over every assignment of `min(rows, cols)` pairs, by
/// enumeration. Each candidate is summed in row order.
pub fn brute_min(c: &CostMatrix) -> f64 {
    fn go(c: &CostMatrix, row: usize, left: usize, used: &mut Vec<bool>, picked: &mut Vec<f64>) -> f64 {
        if left == 0 {
            return picked.iter().sum();
        }
        if c.rows() - row < left {
            return f64::INFINITY;
        }
        // leave this row free
        let mut best = go(c, row + 1, left, used, picked);
        for col in 0..c.cols() {
            if !used[col] {
                used[col] = true;
                picked.push(c.get(row, col));
                best = best.min(go(c, row + 1, left - 1, used, picked));
                picked.pop();
                used[col] = false;
            }
        }
        best
    }
    let k = c.rows().min(c.cols());
    go(c, 0, k, &mut vec![false; c.cols()], &mut Vec::new())
}

/// Random cost matrix of up to 6x6, integers or reals.
pub fn random_costs(rng: &mut ChaCha8Rng) -> CostMatrix {
    let rows = rng.random_range(1..=6);
    let cols = rng.random_range(1..=6);
    let integer = rng.random_bool(0.5);
    CostMatrix::from_fn(rows, cols, |_, _| {
        if integer {
            rng.random_range(0..10) as f64
        } else {
            rng.random_range(-5.0..5.0)
        }
    })
    .unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
