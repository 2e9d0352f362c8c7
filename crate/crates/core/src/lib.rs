//! Post-training pruning scores and the evaluation tooling around them.
//!
//! * [`scoring`] computes significance scores for five unstructured pruning
//!   methods, including the high-gradient/low-activation (HGLA) score.
//! * [`refnet`] is a small dense network that supplies genuine activations and
//!   per-sample gradients to the scorers.
//! * [`masking`] turns scores into exact-count sparsity masks.
//! * [`calibkit`] builds calibration sets and fairness test sets from labeled corpora.
//! * [`fairmetrics`], [`textmetrics`] and [`rater`] cover opinion fairness,
//!   summary quality and pairwise human judgments.
//! * [`pipeline`] wires scoring and masking into a deterministic sparsity sweep.
//! * [`demo`] regenerates the bundled example assets.

pub mod calibkit;
pub mod demo;
pub mod fairmetrics;
pub mod iofmt;
pub mod masking;
pub mod pipeline;
pub mod rater;
pub mod refnet;
pub mod scoring;
pub mod textmetrics;

pub use iofmt::{Document, FormatError, Report, TensorF32};
pub use masking::{apply_mask, build_mask, mask_jaccard, Granularity, MaskError, PruneMask};
pub use refnet::{CalibrationBatch, DenseLayer, Network, NetError, NormOrder};
pub use scoring::{Method, ScoreError, ScoreInputs, ScoreMatrix};
pub use pipeline::{run_sweep, PipelineError, SweepConfig, SweepOutcome};
