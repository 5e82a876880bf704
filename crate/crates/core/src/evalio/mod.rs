//! MOT-Challenge text I/O, the embedding sidecar, raster frames, synthetic
//! sequences and the CLEAR-MOT / identity metrics.

mod embeddings;
mod metrics;
mod mot;
mod raster;
mod synth;

pub use embeddings::{format_embeddings, parse_embeddings, read_embeddings};
pub use metrics::{evaluate, MetricsReport};
pub use mot::{by_frame, format_mot, parse_mot, read_mot, write_mot, MotRecord};
pub use raster::{decode_raster, encode_raster, read_raster, write_raster};
pub use synth::{read_dataset, synthesize, write_dataset, Dataset, Occlusion, SynthConfig};
