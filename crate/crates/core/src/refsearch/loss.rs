use super::module::{PredictionGrad, RsModule, RsPrediction};
use crate::error::{Error, Result};
use crate::numerics::{l1_loss, l1_loss_backward, softmax_focal_loss, FocalParams, Linear};

/// Weights of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsLossWeights {
    pub reg: f64,
    pub id: f64,
    /// Multiplier on the per-layer auxiliary center terms (each weighted by `reg`).
    pub aux: f64,
    pub focal: FocalParams,
}

impl Default for RsLossWeights {
    fn default() -> Self {
        Self {
            reg: 5.0,
            id: 0.5,
            aux: 1.0,
            focal: FocalParams::default(),
        }
    }
}

/// Ground truth for one reference: its true current center and identity class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsTarget {
    pub center: [f64; 2],
    pub identity: usize,
}

#[derive(Debug, Clone)]
pub struct RsLoss {
    pub value: f64,
    /// Gradient for each prediction, aligned with the input.
    pub pred_grads: Vec<PredictionGrad>,
    /// Gradient of the identity classifier.
    pub classifier_grad: Linear,
}

/// Summed center regression, identity focal and auxiliary center terms over
/// aligned prediction/target pairs. No pairs gives zero loss and zero gradient.
pub fn rs_loss(
    module: &RsModule,
    preds: &[RsPrediction],
    targets: &[RsTarget],
    w: RsLossWeights,
) -> Result<RsLoss> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut value = 0.0;
    let mut pred_grads = Vec::with_capacity(preds.len());
    let mut classifier_grad = module.id_classifier.zeroed();
    for (p, t) in preds.iter().zip(targets) {
        value += w.reg * l1_loss(&p.center, &t.center)?;
        let dc = l1_loss_backward(&p.center, &t.center);
        let mut aux_centers = Vec::with_capacity(p.aux_centers.len());
        for a in &p.aux_centers {
            value += w.aux * w.reg * l1_loss(a, &t.center)?;
            let g = l1_loss_backward(a, &t.center);
            aux_centers.push([w.aux * w.reg * g[0], w.aux * w.reg * g[1]]);
        }
        let logits = module.id_classifier.forward(&p.appearance)?;
        let (focal, dlogits) = softmax_focal_loss(&logits, t.identity, w.focal)?;
        value += w.id * focal;
        let dlogits: Vec<f64> = dlogits.iter().map(|g| w.id * g).collect();
        let appearance = module
            .id_classifier
            .backward(&p.appearance, &dlogits, &mut classifier_grad);
        pred_grads.push(PredictionGrad {
            center: [w.reg * dc[0], w.reg * dc[1]],
            appearance,
            aux_centers,
        });
    }
    Ok(RsLoss {
        value,
        pred_grads,
        classifier_grad,
    })
}
