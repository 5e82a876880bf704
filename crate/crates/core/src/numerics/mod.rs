//! Small differentiable numerics kernel: dense arrays, affine layers, grid
//! sampling, losses, the optimizer, and a finite-difference checker. Every
//! op has a hand-written backward pass.

mod array;
mod gradcheck;
mod layers;
mod loss;
mod ops;
mod optim;
mod patch;

pub use array::DenseArray;
pub use gradcheck::{grad_check, GradCheck};
pub use layers::{Linear, Mlp, MlpCache};
pub use loss::{
    binary_focal, focal_loss, giou_loss, giou_loss_backward, l1_loss, l1_loss_backward,
    sigmoid_focal_loss, softmax_focal_loss, FocalParams,
};
pub use ops::{
    bilinear_sample, bilinear_sample_backward, cosine_similarity, dot, l2_normalize, norm,
    softmax, softmax_axis, softmax_backward, GridDims,
};
pub(crate) use ops::{sample_channels, sample_channels_backward};
pub use optim::AdamW;
pub use patch::{patch_embed, patch_embed_backward};

/// Flattens a parameter list into one vector.
pub fn flatten(tensors: &[&DenseArray]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.values().iter().copied()).collect()
}

/// Writes a flat vector back into a parameter list; returns values consumed.
pub fn unflatten(tensors: &mut [&mut DenseArray], flat: &[f64]) -> crate::Result<usize> {
    let need: usize = tensors.iter().map(|t| t.len()).sum();
    if flat.len() < need {
        return Err(crate::Error::Shape(format!(
            "need {need} values, got {}",
            flat.len()
        )));
    }
    let mut k = 0;
    for t in tensors.iter_mut() {
        let n = t.len();
        t.values_mut().copy_from_slice(&flat[k..k + n]);
        k += n;
    }
    Ok(k)
}
