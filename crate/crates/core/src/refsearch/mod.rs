//! Reference search: previous track centers act as reference points that
//! sample the joint feature memory of two adjacent frames through deformable
//! co-attention, predicting each track's current center and appearance.

mod checkpoint;
mod config;
mod layer;
mod loss;
mod memory;
mod module;
mod select;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::RsConfig;
pub use layer::{rs_layer, LayerOutput, Query, RsLayerParams};
pub use loss::{rs_loss, RsLoss, RsLossWeights, RsTarget};
pub use memory::{joint_memory, FeatureMemory, PatchEmbedder};
pub use module::{position_encoding, ForwardTape, PredictionGrad, Reference, RsModule, RsPrediction};
pub use select::{select_references, ReferenceSelection};
