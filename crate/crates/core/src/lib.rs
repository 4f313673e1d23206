//! Event-camera object classification with histograms of averaged time
//! surfaces.
//!
//! - [`events`]: event model, DAT/CSV/AER codecs, synthetic streams
//! - [`grid`]: cells, local memories, decay kernels, time surfaces
//! - [`hats`]: batch representation and its layout
//! - [`cwts`]: streaming partial-sum inference
//! - [`fixedpoint`]: Q-format arithmetic, quantized inference, precision sweep
//! - [`classifier`]: linear SVM training and model files
//! - [`pesim`]: multi-PE cycle/throughput model
//!
//! Batch work (feature extraction, sweeps, PE lanes) runs on rayon when the
//! default `parallel` feature is enabled and sequentially otherwise; results
//! are identical either way.

pub mod classifier;
pub mod cwts;
pub mod error;
pub mod events;
pub mod fixedpoint;
pub mod grid;
pub mod hats;
pub mod par;
pub mod pesim;

pub use classifier::{ClassScores, ModelFingerprint, SvmModel, TrainConfig};
pub use cwts::{cwts_run, CwtsState};
pub use error::{Error, Result};
pub use events::{Event, EventStream, Polarity, SensorGeometry};
pub use fixedpoint::{cwts_run_fixed, FixedPointFormat, FixedPointValue};
pub use grid::{CellGrid, GridParams, Kernel, MemoryMode, TimeSurface};
pub use hats::{compute_hats, FeatureLayout, HatsRepresentation};
pub use pesim::{simulate, PeConfig, PeReport};
