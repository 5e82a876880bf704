//! Online association: reference-search matching, IoU fallback, and the
//! track lifecycle (birth, confirmation, loss, rebirth, removal).

mod cost;
mod pipeline;
mod track;

pub use cost::{appearance_cost, normalized_distance, rs_cost};
pub use pipeline::{
    FnPredictor, FrameResult, RsPredictor, StatePredictor, TrackOutput, Tracker, TrackerConfig,
};
pub use track::{update_embedding, Detection, Track, TrackStatus};
