//! Prediction Inconsistency Detector (PID).
//!
//! A primal classifier `f` assigns a hard label to a test sample; an auxiliary
//! classifier `g`, differing in architecture or training, scores the same
//! sample. On normal inputs the two models agree with high confidence, while
//! adversarial inputs crafted against `f` rarely transfer cleanly to `g`, so
//! `g` assigns low confidence to `f`'s label. Four inconsistency metrics turn
//! that disagreement into a scalar score; thresholding the score at a fixed
//! false-positive rate flags adversarial inputs.
//!
//! The crate bundles everything needed to study the detector end to end:
//!
//! - [`datasets`]: reproducible synthetic classification tasks and the
//!   prediction-record file format used to ingest external model outputs,
//! - [`models`]: small differentiable classifiers (linear softmax, MLP) with
//!   analytic input gradients, natural and adversarial training,
//! - [`attacks`]: FGSM, PGD, a score-based black-box random search, and a
//!   joint adaptive attack against the primal/auxiliary pair,
//! - [`detector`]: the four inconsistency metrics, threshold calibration at a
//!   target FPR, and the adversarial/normal decision,
//! - [`eval`]: ROC/AUC computation with a brute-force oracle, score
//!   histograms, and the end-to-end detection benchmark.

pub mod attacks;
pub mod datasets;
pub mod detector;
pub mod error;
pub mod eval;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
pub use models::ConfidenceVector;
