use crate::error::{Error, Result};
use crate::geometry::{giou, BBox};

/// Focal-loss constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Mean absolute difference.
pub fn l1_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "l1 of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Gradient of [`l1_loss`] with respect to `a`.
pub fn l1_loss_backward(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

/// `1 − giou(a, b)`, in `[0, 2]`.
pub fn giou_loss(a: &BBox, b: &BBox) -> f64 {
    1.0 - giou(a, b)
}

/// Gradient of [`giou_loss`] with respect to the corners `(x1, y1, x2, y2)` of `a`.
pub fn giou_loss_backward(a: &BBox, b: &BBox) -> [f64; 4] {
    let cw = a.x2.max(b.x2) - a.x1.min(b.x1);
    let ch = a.y2.max(b.y2) - a.y1.min(b.y1);
    let hull = cw * ch;
    if hull <= 0.0 {
        return [0.0; 4];
    }
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    let overlap = iw > 0.0 && ih > 0.0;
    let inter = if overlap { iw * ih } else { 0.0 };
    let (aw, ah) = (a.width(), a.height());
    let union = aw * ah + b.area() - inter;

    let d_area = [-ah, -aw, ah, aw];
    let mut d_inter = [0.0; 4];
    if overlap {
        if a.x1 > b.x1 {
            d_inter[0] = -ih;
        }
        if a.y1 > b.y1 {
            d_inter[1] = -iw;
        }
        if a.x2 < b.x2 {
            d_inter[2] = ih;
        }
        if a.y2 < b.y2 {
            d_inter[3] = iw;
        }
    }
    let mut d_hull = [0.0; 4];
    if a.x1 < b.x1 {
        d_hull[0] = -ch;
    }
    if a.y1 < b.y1 {
        d_hull[1] = -cw;
    }
    if a.x2 > b.x2 {
        d_hull[2] = ch;
    }
    if a.y2 > b.y2 {
        d_hull[3] = cw;
    }
    let mut g = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        let d_iou = if union > 0.0 {
            d_inter[k] / union - inter * d_union / (union * union)
        } else {
            0.0
        };
        let d_giou = d_iou + d_union / hull - union * d_hull[k] / (hull * hull);
        g[k] = -d_giou;
    }
    g
}

/// Multi-class focal loss `−α (1 − p_t)^γ log p_t` on a probability vector.
pub fn focal_loss(p: &[f64], target: usize, fp: FocalParams) -> Result<f64> {
    let pt = *p.get(target).ok_or_else(|| {
        Error::InvalidArgument(format!("target class {target} out of range {}", p.len()))
    })?;
    if pt >= 1.0 {
        return Ok(0.0);
    }
    Ok(-fp.alpha * (1.0 - pt).powf(fp.gamma) * pt.ln())
}

/// Focal loss on softmax(logits); returns the loss and its gradient w.r.t. the logits.
pub fn softmax_focal_loss(logits: &[f64], target: usize, fp: FocalParams) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "target class {target} out of range {}",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let p: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    let log_pt = logits[target] - lse;
    let pt = p[target];
    let q = 1.0 - pt;
    let loss = -fp.alpha * q.powf(fp.gamma) * log_pt;
    // dL/dp_t, written so q = 0 stays finite
    let dq_term = if q > 0.0 && fp.gamma != 0.0 {
        fp.gamma * q.powf(fp.gamma - 1.0) * log_pt
    } else {
        0.0
    };
    let dl_dpt = -fp.alpha * (-dq_term + q.powf(fp.gamma) / pt);
    let grad = p
        .iter()
        .enumerate()
        .map(|(k, pk)| {
            let delta = if k == target { 1.0 } else { 0.0 };
            dl_dpt * pt * (delta - pk)
        })
        .collect();
    Ok((if loss == 0.0 { 0.0 } else { loss }, grad))
}

/// Binary focal term for one class probability with a 0/1 target.
pub fn binary_focal(p: f64, positive: bool, fp: FocalParams) -> f64 {
    let (pt, at) = if positive {
        (p, fp.alpha)
    } else {
        (1.0 - p, 1.0 - fp.alpha)
    };
    if pt >= 1.0 {
        return 0.0;
    }
    -at * (1.0 - pt).powf(fp.gamma) * pt.max(1e-300).ln()
}

/// Per-class sigmoid focal loss summed over classes; returns the loss and
/// its gradient w.r.t. the logits.
pub fn sigmoid_focal_loss(logits: &[f64], targets: &[bool], fp: FocalParams) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() {
        return Err(Error::Shape("sigmoid focal: logits/targets length".into()));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &t) in logits.iter().zip(targets) {
        // log σ(z) = −softplus(−z)
        let z = if t { x } else { -x };
        let log_pt = -softplus(-z);
        let pt = log_pt.exp();
        let at = if t { fp.alpha } else { 1.0 - fp.alpha };
        let q = 1.0 - pt;
        loss += -at * q.powf(fp.gamma) * log_pt;
        let dq_term = if q > 0.0 && fp.gamma != 0.0 {
            fp.gamma * q.powf(fp.gamma - 1.0) * log_pt
        } else {
            0.0
        };
        let dl_dpt = -at * (-dq_term + q.powf(fp.gamma) / pt);
        // dp_t/dz = p_t (1 − p_t), dz/dx = ±1
        let g = dl_dpt * pt * q;
        grad.push(if t { g } else { -g });
    }
    Ok((loss, grad))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
