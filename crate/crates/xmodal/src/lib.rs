//! File formats, checkpoints, reports and the command line for
//! [`xmodal_core`].
//!
//! Datasets are JSON lines (`pair_id`, optional `class`, `vision`, `language`).
//! Checkpoints are a single JSON document holding the run settings, the
//! learned model, the refinement transform and the relevance threshold.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;

pub use checkpoint::{Checkpoint, RunSettings, SplitSettings};
pub use error::{Error, Result};
pub use io::{load_dataset, save_dataset};
