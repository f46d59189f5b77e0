//! Network assembly, ablation variants, profiling and checkpoints.

mod checkpoint;
mod config;
mod net;
mod profile;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use config::{AttentionKind, ModelConfig, Streams, Variant};
pub use net::{Batch, StreamKind, TrouSpiNet};
pub use profile::{ProfileReport, ProfileRow, DEPLOYED_BYTES_PER_PARAM};
