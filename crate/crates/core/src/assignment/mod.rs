//! Bipartite assignment and set-based detection supervision.

mod hungarian;
mod setloss;

pub use hungarian::{hungarian, Assignment, CostMatrix};
pub use setloss::{
    cls_match_cost, detection_loss, gt_match_cost, match_ground_truth, DetOutput, GtObject,
    SetLossWeights,
};
