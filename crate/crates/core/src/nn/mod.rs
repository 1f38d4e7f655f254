//! The quality-assessment network with hand-written backpropagation.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod model;
pub mod params;

pub use attention::{cse_block, scse_block, sse_block, AttentionKind};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{AfeConfig, NetworkConfig, Placement, Task};
pub use model::{argmax, prepare_item, FeatureMap, Forward, Mode, PreparedItem, QaModel, N_LEVELS};
pub use params::{ParamStore, Tensor};
