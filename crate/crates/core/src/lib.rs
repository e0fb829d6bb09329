//! RGB-D salient object detection: a two-stream CNN encoder whose depth
//! features are purified by channel and spatial attention, a shared-weight
//! transformer that enhances the top feature levels jointly, and a deeply
//! supervised multi-stream decoder. Includes the boundary-weighted training
//! loss, standard saliency metrics, PPM/PGM data handling and a training
//! harness with checkpoints and ablations.

pub mod backbone;
pub mod config;
pub mod data;
pub mod decoder;
pub mod dpm;
mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod scale_adjust;
pub mod trainer;
pub mod ttem;

pub use config::{DecoderMode, FusionMode, LossConfig, ModelConfig, Precision, TrainConfig};
pub use error::{Error, Result};
pub use model::TriTransNet;
pub use params::{Ctx, ParamStore};
pub use tritrans_tensor as tensor;
