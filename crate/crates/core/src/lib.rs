//! Sink-aware token pruning for video vision encoders.
//!
//! Attention scores per frame go in, a budgeted set of kept `(frame, patch)`
//! tokens comes out. Spatial selection can discount positions that attract
//! attention across the whole video (sink tokens); temporal pruning drops
//! static repeats inside short clips and can be made to favour dropping sinks.

pub mod attention;
pub mod compare;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod npy;
pub mod par;
pub mod pipeline;
pub mod sink;
pub mod spatial;
pub mod synth;
pub mod temporal;
pub mod vecops;

pub use config::{PruneConfig, SpatialSelector, Strategy};
pub use error::{Error, Result};
pub use model::{AttentionScores, QueryKey, SinkScores, TokenGrid, TokenId, TokenSelection};
pub use pipeline::{run, PruneResult};
