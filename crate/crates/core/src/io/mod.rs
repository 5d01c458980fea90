//! Datasets, checkpoints and file output.

pub mod checkpoint;
pub mod data;
pub mod output;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{load_idx, load_idx_labels, synth2d, Dataset, DatasetKind};
pub use output::{
    emit_prior_plot, prior_plot_csv, prior_plot_svg, samples_csv, slerp, write_png_grid,
};
