//! Set-based supervision for a detector: ground-truth assignment and the
//! detection loss.

use super::hungarian::{hungarian, Assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageSize};
use crate::numerics::{binary_focal, focal_loss, giou_loss, l1_loss, FocalParams};

/// One detector output slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DetOutput {
    pub bbox: BBox,
    /// Foreground probability.
    pub score: f64,
    /// Identity classifier output (a probability vector).
    pub id_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub bbox: BBox,
    pub identity: usize,
}

/// Weights for the matching cost and for the detection loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetLossWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub id: f64,
    pub focal: FocalParams,
}

impl Default for SetLossWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            l1: 5.0,
            giou: 2.0,
            id: 0.5,
            focal: FocalParams::default(),
        }
    }
}

const LOG_EPS: f64 = 1e-8;

/// Focal-style classification cost: positive term minus negative term.
pub fn cls_match_cost(p: f64, fp: FocalParams) -> f64 {
    let pos = fp.alpha * (1.0 - p).powf(fp.gamma) * -(p + LOG_EPS).ln();
    let neg = (1.0 - fp.alpha) * p.powf(fp.gamma) * -(1.0 - p + LOG_EPS).ln();
    pos - neg
}

/// Cost of assigning detector slot `det` to ground truth `gt`.
pub fn gt_match_cost(det: &DetOutput, gt: &GtObject, img: ImageSize, w: &SetLossWeights) -> f64 {
    let l1 = l1_loss(&det.bbox.normalized(img), &gt.bbox.normalized(img)).unwrap_or(0.0);
    w.cls * cls_match_cost(det.score, w.focal) + w.l1 * l1 + w.giou * giou_loss(&det.bbox, &gt.bbox)
}

/// Ground-truth (rows) to detector slot (columns) assignment.
pub fn match_ground_truth(
    dets: &[DetOutput],
    gts: &[GtObject],
    img: ImageSize,
    w: &SetLossWeights,
) -> Result<Assignment> {
    let c = CostMatrix::from_fn(gts.len(), dets.len(), |i, j| {
        gt_match_cost(&dets[j], &gts[i], img, w)
    })?;
    Ok(hungarian(&c))
}

/// Detection loss for an assignment of ground truths (rows) to slots (columns).
///
/// Matched slots get box (L1 + GIoU) and identity terms; every slot gets a
/// foreground/background classification term.
pub fn detection_loss(
    dets: &[DetOutput],
    gts: &[GtObject],
    sigma: &Assignment,
    img: ImageSize,
    w: &SetLossWeights,
) -> Result<f64> {
    let mut matched = vec![false; dets.len()];
    let mut gt_seen = vec![false; gts.len()];
    let mut loss = 0.0;
    for &(i, j) in &sigma.pairs {
        if i >= gts.len() || j >= dets.len() || gt_seen[i] || matched[j] {
            return Err(Error::InvalidArgument(format!(
                "assignment pair ({i}, {j}) is out of range or repeated"
            )));
        }
        gt_seen[i] = true;
        matched[j] = true;
        let (d, g) = (&dets[j], &gts[i]);
        let l1 = l1_loss(&d.bbox.normalized(img), &g.bbox.normalized(img))?;
        loss += w.l1 * l1 + w.giou * giou_loss(&d.bbox, &g.bbox);
        loss += w.id * focal_loss(&d.id_probs, g.identity, w.focal)?;
    }
    for (d, &m) in dets.iter().zip(&matched) {
        loss += w.cls * binary_focal(d.score, m, w.focal);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> ImageSize {
        ImageSize::new(100, 100).unwrap()
    }

    fn det(b: [f64; 4], score: f64, ids: &[f64]) -> DetOutput {
        DetOutput {
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            score,
            id_probs: ids.to_vec(),
        }
    }

    fn gt(b: [f64; 4], identity: usize) -> GtObject {
        GtObject {
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            identity,
        }
    }

    #[test]
    fn identical_boxes_cost_only_classification() {
        let w = SetLossWeights::default();
        let g = gt([10.0, 10.0, 30.0, 40.0], 0);
        let d = det([10.0, 10.0, 30.0, 40.0], 0.5, &[1.0]);
        assert_eq!(gt_match_cost(&d, &g, img(), &w), w.cls * cls_match_cost(0.5, w.focal));
    }

    #[test]
    fn perfect_det_minimises_cost() {
        let w = SetLossWeights::default();
        let g = gt([10.0, 10.0, 30.0, 40.0], 0);
        let best = gt_match_cost(&det([10.0, 10.0, 30.0, 40.0], 1.0, &[1.0]), &g, img(), &w);
        for (dx, p) in [(0.5, 1.0), (0.0, 0.9), (-1.0, 0.99), (2.0, 0.5)] {
            let other = det([10.0 + dx, 10.0, 30.0 + dx, 40.0], p, &[1.0]);
            assert!(gt_match_cost(&other, &g, img(), &w) > best);
        }
    }

    #[test]
    fn overlapping_detection_wins() {
        let w = SetLossWeights::default();
        let g = [gt([10.0, 10.0, 30.0, 40.0], 0)];
        let dets = [
            det([70.0, 70.0, 90.0, 95.0], 0.9, &[1.0]),
            det([12.0, 11.0, 31.0, 42.0], 0.9, &[1.0]),
        ];
        let a = match_ground_truth(&dets, &g, img(), &w).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let w = SetLossWeights::default();
        let gts = [gt([10.0, 10.0, 30.0, 40.0], 1)];
        let dets = [
            det([10.0, 10.0, 30.0, 40.0], 1.0, &[0.0, 1.0]),
            det([50.0, 50.0, 60.0, 60.0], 0.0, &[0.5, 0.5]),
        ];
        let sigma = match_ground_truth(&dets, &gts, img(), &w).unwrap();
        assert_eq!(detection_loss(&dets, &gts, &sigma, img(), &w).unwrap(), 0.0);
    }

    #[test]
    fn single_pair_hand_value() {
        let w = SetLossWeights::default();
        let gts = [gt([0.0, 0.0, 20.0, 20.0], 0)];
        // shifted right by 10 px: IoU = 1/3, hull = union, so giou = 1/3
        let dets = [det([10.0, 0.0, 30.0, 20.0], 0.5, &[0.5, 0.5])];
        let sigma = Assignment { pairs: vec![(0, 0)] };
        let got = detection_loss(&dets, &gts, &sigma, img(), &w).unwrap();
        let l1 = (0.1 + 0.0 + 0.1 + 0.0) / 4.0;
        let giou_l = 1.0 - 1.0 / 3.0;
        let id = 0.25 * 0.25 * 2f64.ln();
        let cls = 0.25 * 0.25 * 2f64.ln();
        let want = 5.0 * l1 + 2.0 * giou_l + 0.5 * id + 2.0 * cls;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn no_ground_truth_leaves_background_terms() {
        let w = SetLossWeights::default();
        let dets = [det([0.0, 0.0, 5.0, 5.0], 0.3, &[1.0])];
        let got = detection_loss(&dets, &[], &Assignment::default(), img(), &w).unwrap();
        assert_eq!(got, w.cls * binary_focal(0.3, false, w.focal));
    }

    #[test]
    fn invalid_assignment_rejected() {
        let w = SetLossWeights::default();
        let dets = [det([0.0, 0.0, 5.0, 5.0], 0.3, &[1.0])];
        let gts = [gt([0.0, 0.0, 5.0, 5.0], 0)];
        let bad = Assignment { pairs: vec![(0, 3)] };
        assert!(detection_loss(&dets, &gts, &bad, img(), &w).is_err());
    }
}
