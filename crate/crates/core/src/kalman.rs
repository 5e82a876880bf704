//! Constant-velocity Kalman filter over `(cx, cy, w, h)` and their rates.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type Vec8 = SVector<f64, 8>;
pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Vec4 = SVector<f64, 4>;
pub type Mat4 = SMatrix<f64, 4, 4>;
type Mat48 = SMatrix<f64, 4, 8>;

/// Noise scaling, expressed as fractions of the box height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
    /// Lower bound on any standard deviation, in pixels.
    pub min_std: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
            min_std: 1e-2,
        }
    }
}

/// Gaussian state: mean `(cx, cy, w, h, vcx, vcy, vw, vh)` and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vec8,
    pub covariance: Mat8,
}

impl KalmanState {
    pub fn cxcywh(&self) -> [f64; 4] {
        [self.mean[0], self.mean[1], self.mean[2], self.mean[3]]
    }

    /// Mean box with non-negative extent.
    pub fn bbox(&self) -> BBox {
        let w = self.mean[2].max(0.0);
        let h = self.mean[3].max(0.0);
        BBox {
            x1: self.mean[0] - w / 2.0,
            y1: self.mean[1] - h / 2.0,
            x2: self.mean[0] + w / 2.0,
            y2: self.mean[1] + h / 2.0,
        }
    }
}

fn transition() -> Mat8 {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> Mat48 {
    let mut h = Mat48::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

/// Prediction with an explicit process noise.
pub fn predict_with(s: &KalmanState, q: &Mat8) -> KalmanState {
    let f = transition();
    KalmanState {
        mean: f * s.mean,
        covariance: symmetrize(f * s.covariance * f.transpose() + q),
    }
}

/// Measurement update with an explicit measurement noise, using the Joseph
/// form for the posterior covariance.
pub fn update_with(s: &KalmanState, z: [f64; 4], r: &Mat4) -> Result<KalmanState> {
    let h = observation();
    let innovation_cov = h * s.covariance * h.transpose() + r;
    let chol = innovation_cov
        .cholesky()
        .ok_or(Error::InnovationNotPositive)?;
    // K = P Hᵀ S⁻¹, solved as S Kᵀ = H P
    let gain = chol.solve(&(h * s.covariance)).transpose();
    let innovation = Vec4::from_column_slice(&z) - h * s.mean;
    let i_kh = Mat8::identity() - gain * h;
    Ok(KalmanState {
        mean: s.mean + gain * innovation,
        covariance: symmetrize(
            i_kh * s.covariance * i_kh.transpose() + gain * r * gain.transpose(),
        ),
    })
}

fn symmetrize(m: Mat8) -> Mat8 {
    (m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KalmanFilter {
    pub config: KalmanConfig,
}

impl KalmanFilter {
    pub fn new(config: KalmanConfig) -> Self {
        Self { config }
    }

    fn std(&self, weight: f64, h: f64) -> f64 {
        (weight * h).max(self.config.min_std)
    }

    /// State at a first observation, velocities zero.
    pub fn init(&self, z: [f64; 4]) -> KalmanState {
        let mut mean = Vec8::zeros();
        for i in 0..4 {
            mean[i] = z[i];
        }
        let h = z[3];
        let sp = self.std(2.0 * self.config.std_weight_position, h);
        let sv = self.std(10.0 * self.config.std_weight_velocity, h);
        let mut diag = Vec8::zeros();
        for i in 0..4 {
            diag[i] = sp * sp;
            diag[i + 4] = sv * sv;
        }
        KalmanState {
            mean,
            covariance: Mat8::from_diagonal(&diag),
        }
    }

    pub fn process_noise(&self, s: &KalmanState) -> Mat8 {
        let h = s.mean[3];
        let sp = if self.config.std_weight_position == 0.0 {
            0.0
        } else {
            self.std(self.config.std_weight_position, h)
        };
        let sv = if self.config.std_weight_velocity == 0.0 {
            0.0
        } else {
            self.std(self.config.std_weight_velocity, h)
        };
        let mut diag = Vec8::zeros();
        for i in 0..4 {
            diag[i] = sp * sp;
            diag[i + 4] = sv * sv;
        }
        Mat8::from_diagonal(&diag)
    }

    pub fn measurement_noise(&self, s: &KalmanState) -> Mat4 {
        let sp = self.std(self.config.std_weight_position, s.mean[3]);
        Mat4::identity() * (sp * sp)
    }

    pub fn predict(&self, s: &KalmanState) -> KalmanState {
        predict_with(s, &self.process_noise(s))
    }

    pub fn update(&self, s: &KalmanState, z: [f64; 4]) -> Result<KalmanState> {
        update_with(s, z, &self.measurement_noise(s))
    }
}
