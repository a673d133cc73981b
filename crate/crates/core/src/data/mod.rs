//! Materials datasets: records, synthetic Lennard-Jones labels, JSONL
//! ingestion, splitting, caching and summary statistics.

pub mod cache;
pub mod jsonl;
pub mod lattice;
mod record;
mod split;
mod stats;
pub mod synthetic;

pub use cache::{cache, InMemory, JsonlDataset, RecordSource};
pub use jsonl::{load_jsonl, save_jsonl};
pub use lattice::{to_cartesian, to_fractional, Mat3, Vec3};
pub use record::{MaterialRecord, DEFAULT_MAX_NUM_ELEMENTS};
pub use split::{split, split_indices, split_sizes, DatasetSplit, SplitMeta};
pub use stats::{summary_stats, ChannelStats, SummaryStats, VOIGT};
pub use synthetic::{generate_synthetic, LennardJones, SyntheticParams};
