use crate::error::{Error, Result};
use crate::geometry::ImageSize;
use crate::numerics::cosine_similarity;

use super::track::Detection;
use crate::refsearch::RsPrediction;

/// `1 − sqrt(clamp₀¹ cos(ε_i, ε̃) · clamp₀¹ cos(ε̃, ε̂))`: low when the
/// prediction agrees both with the stored track and with the detection.
pub fn appearance_cost(stored: &[f64], predicted: &[f64], detected: &[f64]) -> Result<f64> {
    let consistency = cosine_similarity(stored, predicted)?.clamp(0.0, 1.0);
    let similarity = cosine_similarity(predicted, detected)?.clamp(0.0, 1.0);
    Ok(1.0 - (consistency * similarity).sqrt())
}

/// Euclidean distance between two `(cx, cy, w, h)` boxes after dividing
/// `cx, w` by the image width and `cy, h` by its height.
pub fn normalized_distance(a: [f64; 4], b: [f64; 4], img: ImageSize) -> f64 {
    let scale = [img.w(), img.h(), img.w(), img.h()];
    a.iter()
        .zip(&b)
        .zip(&scale)
        .map(|((x, y), s)| ((x - y) / s).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Matching cost between a track's prediction and a detection.
///
/// `shape` is the track's Kalman-predicted `(w, h)` for this frame; the
/// predicted center comes from `pred`. `distance_scale` multiplies the
/// normalized location distance.
pub fn rs_cost(
    stored: &[f64],
    pred: &RsPrediction,
    shape: [f64; 2],
    det: &Detection,
    img: ImageSize,
    lambda_emb: f64,
    distance_scale: f64,
) -> Result<f64> {
    if stored.len() != pred.appearance.len() || pred.appearance.len() != det.embedding.len() {
        return Err(Error::Shape(format!(
            "embedding lengths {}, {}, {}",
            stored.len(),
            pred.appearance.len(),
            det.embedding.len()
        )));
    }
    let app = appearance_cost(stored, &pred.appearance, &det.embedding)?;
    let predicted = [
        pred.center[0] * img.w(),
        pred.center[1] * img.h(),
        shape[0],
        shape[1],
    ];
    let dist = normalized_distance(predicted, det.bbox.cxcywh(), img);
    Ok(lambda_emb * app + (1.0 - lambda_emb) * distance_scale * dist)
}
