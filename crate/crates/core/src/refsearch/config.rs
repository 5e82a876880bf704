use crate::error::{Error, Result};

/// Shape of a reference-search module.
#[derive(Debug, Clone, PartialEq)]
pub struct RsConfig {
    /// Feature width of memories and reference embeddings.
    pub d_model: usize,
    /// Appearance embedding length.
    pub emb_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Sampling points per head, split evenly over the levels.
    pub points: usize,
    pub levels: usize,
    /// Offset reach in cells of each level.
    pub reach: f64,
    /// Hidden width of the center and appearance heads.
    pub head_hidden: usize,
    /// Add a projection of the stored track appearance to the first-layer
    /// reference embedding.
    pub use_appearance: bool,
    /// Output classes of the training-only identity classifier.
    pub num_identities: usize,
}

impl Default for RsConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            emb_dim: 64,
            layers: 6,
            heads: 4,
            points: 12,
            levels: 3,
            reach: 4.0,
            head_hidden: 256,
            use_appearance: true,
            num_identities: 1,
        }
    }
}

impl RsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("emb_dim", self.emb_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("points", self.points),
            ("levels", self.levels),
            ("head_hidden", self.head_hidden),
            ("num_identities", self.num_identities),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !self.points.is_multiple_of(self.levels) {
            return Err(Error::Config(format!(
                "points {} not divisible by levels {}",
                self.points, self.levels
            )));
        }
        if !(self.reach.is_finite() && self.reach > 0.0) {
            return Err(Error::Config("reach must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn points_per_level(&self) -> usize {
        self.points / self.levels
    }
}
