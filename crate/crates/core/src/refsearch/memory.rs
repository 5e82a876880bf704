use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::ImageSize;
use crate::numerics::{patch_embed, patch_embed_backward, DenseArray, GridDims, Linear};

/// Multi-scale feature grids for one frame. Level 0 is the finest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMemory {
    pub levels: Vec<DenseArray>,
    pub image: ImageSize,
}

impl FeatureMemory {
    pub fn new(levels: Vec<DenseArray>, image: ImageSize) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Shape("feature memory needs at least one level".into()));
        }
        let d = GridDims::of(&levels[0])?.channels;
        for l in &levels {
            if GridDims::of(l)?.channels != d {
                return Err(Error::Shape("feature levels disagree on channel count".into()));
            }
        }
        Ok(Self { levels, image })
    }

    pub fn channels(&self) -> usize {
        self.levels[0].shape()[2]
    }

    pub fn zeros_like(&self) -> FeatureMemory {
        FeatureMemory {
            levels: self.levels.iter().map(|l| DenseArray::zeros(l.shape())).collect(),
            image: self.image,
        }
    }

    pub fn scaled(&self, s: f64) -> FeatureMemory {
        let mut out = self.clone();
        out.levels.iter_mut().for_each(|l| l.scale(s));
        out
    }
}

/// Elementwise sum of two frames' memories.
pub fn joint_memory(prev: &FeatureMemory, cur: &FeatureMemory) -> Result<FeatureMemory> {
    if prev.levels.len() != cur.levels.len() {
        return Err(Error::Shape(format!(
            "memories have {} and {} levels",
            prev.levels.len(),
            cur.levels.len()
        )));
    }
    let levels = prev
        .levels
        .iter()
        .zip(&cur.levels)
        .map(|(a, b)| a.add(b))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMemory {
        levels,
        image: cur.image,
    })
}

/// Stand-in for a backbone: one patch projection per level.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedder {
    pub channels: usize,
    pub patch_sizes: Vec<usize>,
    pub layers: Vec<Linear>,
}

impl PatchEmbedder {
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        patch_sizes: &[usize],
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        let layers = patch_sizes
            .iter()
            .map(|&p| Linear::init(p * p * channels, d_model, 1.0, rng))
            .collect();
        Self {
            channels,
            patch_sizes: patch_sizes.to_vec(),
            layers,
        }
    }

    /// Memory for a `[H, W, C]` raster.
    pub fn embed(&self, frame: &DenseArray, image: ImageSize) -> Result<FeatureMemory> {
        let levels = self
            .patch_sizes
            .iter()
            .zip(&self.layers)
            .map(|(&p, l)| patch_embed(frame, p, l))
            .collect::<Result<Vec<_>>>()?;
        FeatureMemory::new(levels, image)
    }

    pub fn backward(
        &self,
        frame: &DenseArray,
        dmemory: &[DenseArray],
        grad: &mut PatchEmbedder,
    ) -> Result<()> {
        for (i, (&p, l)) in self.patch_sizes.iter().zip(&self.layers).enumerate() {
            patch_embed_backward(frame, p, l, &dmemory[i], &mut grad.layers[i])?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&DenseArray> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseArray> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn zeroed(&self) -> PatchEmbedder {
        PatchEmbedder {
            channels: self.channels,
            patch_sizes: self.patch_sizes.clone(),
            layers: self.layers.iter().map(|l| l.zeroed()).collect(),
        }
    }
}
