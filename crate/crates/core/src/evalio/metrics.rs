use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use super::mot::{by_frame, MotRecord};
use crate::assignment::{hungarian, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::iou;

/// CLEAR-MOT and identity metrics for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mota: f64,
    /// Mean `1 − IoU` over matches; NaN when nothing matched.
    pub motp: f64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub ids: usize,
    /// Fractions of ground-truth trajectories.
    pub mt: f64,
    pub ml: f64,
    pub fp: usize,
    pub fn_: usize,
    pub matches: usize,
    pub gt: usize,
    pub predictions: usize,
    pub gt_tracks: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Scores `results` against `gt`. Per frame, last-known pairs still above
/// the IoU gate are kept, the rest are matched by Hungarian on `1 − IoU`
/// among pairs with IoU ≥ the gate. Identity scores use one global
/// GT-id ↔ predicted-id matching maximizing co-occurring overlaps.
pub fn evaluate(gt: &[MotRecord], results: &[MotRecord], iou_gate: f64) -> Result<MetricsReport> {
    if gt.is_empty() {
        return Err(Error::Data("ground truth is empty".into()));
    }
    // within a frame, order by id so ties resolve independently of file order
    let canonical = |recs: &[MotRecord]| -> BTreeMap<u32, Vec<MotRecord>> {
        by_frame(recs)
            .into_iter()
            .map(|(f, mut v)| {
                v.sort_by_key(|r| r.id);
                (f, v)
            })
            .collect()
    };
    let gt_frames = canonical(gt);
    let hyp_frames = canonical(results);
    for (f, recs) in gt_frames.iter().chain(hyp_frames.iter()) {
        let mut seen = HashSet::new();
        for r in recs {
            if !seen.insert(r.id) {
                return Err(Error::Data(format!("id {} appears twice in frame {f}", r.id)));
            }
        }
    }
    let frames: Vec<u32> = gt_frames
        .keys()
        .chain(hyp_frames.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let empty = Vec::new();
    let mut last: HashMap<i64, i64> = HashMap::new();
    let (mut fp, mut fn_, mut ids, mut matches) = (0, 0, 0, 0);
    let mut dist_sum = 0.0;
    let mut gt_len: HashMap<i64, usize> = HashMap::new();
    let mut gt_hit: HashMap<i64, usize> = HashMap::new();
    // co-occurrence counts for the identity matching
    let mut overlap: HashMap<(i64, i64), usize> = HashMap::new();

    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let h = hyp_frames.get(&f).unwrap_or(&empty);
        let ious: Vec<Vec<f64>> = g
            .iter()
            .map(|a| h.iter().map(|b| iou(&a.bbox(), &b.bbox())).collect())
            .collect();
        for (i, a) in g.iter().enumerate() {
            *gt_len.entry(a.id).or_default() += 1;
            for (j, b) in h.iter().enumerate() {
                if ious[i][j] >= iou_gate {
                    *overlap.entry((a.id, b.id)).or_default() += 1;
                }
            }
        }

        let mut g_match: Vec<Option<usize>> = vec![None; g.len()];
        let mut h_used = vec![false; h.len()];
        for (i, a) in g.iter().enumerate() {
            if let Some(prev) = last.get(&a.id) {
                if let Some(j) = h.iter().position(|b| b.id == *prev) {
                    if !h_used[j] && ious[i][j] >= iou_gate {
                        g_match[i] = Some(j);
                        h_used[j] = true;
                    }
                }
            }
        }
        let rows: Vec<usize> = (0..g.len()).filter(|&i| g_match[i].is_none()).collect();
        let cols: Vec<usize> = (0..h.len()).filter(|&j| !h_used[j]).collect();
        if !rows.is_empty() && !cols.is_empty() {
            let c = CostMatrix::from_fn(rows.len(), cols.len(), |r, c| {
                let v = ious[rows[r]][cols[c]];
                if v >= iou_gate {
                    1.0 - v
                } else {
                    f64::INFINITY
                }
            })?;
            for &(r, c) in &hungarian(&c).pairs {
                let (i, j) = (rows[r], cols[c]);
                g_match[i] = Some(j);
                h_used[j] = true;
                if let Some(prev) = last.get(&g[i].id) {
                    if *prev != h[j].id {
                        ids += 1;
                    }
                }
            }
        }
        for (i, m) in g_match.iter().enumerate() {
            match m {
                Some(j) => {
                    matches += 1;
                    dist_sum += 1.0 - ious[i][*j];
                    last.insert(g[i].id, h[*j].id);
                    *gt_hit.entry(g[i].id).or_default() += 1;
                }
                None => fn_ += 1,
            }
        }
        fp += h_used.iter().filter(|u| !**u).count();
    }

    let n_gt = gt.len();
    let n_hyp = results.len();
    let mut gt_ids: Vec<i64> = gt_len.keys().copied().collect();
    gt_ids.sort_unstable();
    let mut hyp_ids: Vec<i64> = results.iter().map(|r| r.id).collect::<HashSet<_>>().into_iter().collect();
    hyp_ids.sort_unstable();
    let idtp = if hyp_ids.is_empty() {
        0
    } else {
        let c = CostMatrix::from_fn(gt_ids.len(), hyp_ids.len(), |i, j| {
            -(overlap.get(&(gt_ids[i], hyp_ids[j])).copied().unwrap_or(0) as f64)
        })?;
        hungarian(&c)
            .pairs
            .iter()
            .map(|&(i, j)| overlap.get(&(gt_ids[i], hyp_ids[j])).copied().unwrap_or(0))
            .sum()
    };
    let idfp = n_hyp - idtp;
    let idfn = n_gt - idtp;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };

    let mut mt = 0;
    let mut ml = 0;
    for id in &gt_ids {
        let r = ratio(gt_hit.get(id).copied().unwrap_or(0), gt_len[id]);
        if r >= 0.8 {
            mt += 1;
        }
        if r <= 0.2 {
            ml += 1;
        }
    }
    Ok(MetricsReport {
        mota: 1.0 - (fn_ + fp + ids) as f64 / n_gt as f64,
        motp: if matches == 0 { f64::NAN } else { dist_sum / matches as f64 },
        idf1: ratio(2 * idtp, 2 * idtp + idfp + idfn),
        idp: ratio(idtp, n_hyp),
        idr: ratio(idtp, n_gt),
        ids,
        mt: ratio(mt, gt_ids.len()),
        ml: ratio(ml, gt_ids.len()),
        fp,
        fn_,
        matches,
        gt: n_gt,
        predictions: n_hyp,
        gt_tracks: gt_ids.len(),
        idtp,
        idfp,
        idfn,
    })
}
