//! Sensor-fault classification laboratory.
//!
//! The crate covers the full experimental pipeline for imagefication-based
//! fault detection and classification of aerospace sensors:
//!
//! 1. [`dynamics`] — flight-state simulation (RK4 over the air-data /
//!    rotational / motion equations), atmospheric disturbances, and
//!    per-sensor measurement noise.
//! 2. [`faults`] — randomized fault schedules and additive injection of the
//!    nine drift / extra-noise fault cases.
//! 3. [`sdi`] — stacking measured histories into 15×31 row-normalized
//!    Sensor Data Images.
//! 4. [`augment`] — the seven tile/repeat/flip inflation methods that map an
//!    SDI to a 224×224 zero-padded grayscale image.
//! 5. [`nnet`] — a CPU convolutional network engine (forward, backprop,
//!    SGD with momentum) with the full-size and compact classifier presets.
//! 6. [`prune`] — Taylor-expansion structured filter pruning with Random /
//!    L1 / L2 baselines and compression reports.
//! 7. [`xai`] — Grad-CAM heatmaps and attention-overlap scoring.
//! 8. [`harness`] — dataset generation, k-fold cross-validation, augmentation
//!    comparison campaigns, and report aggregation.

pub mod augment;
pub mod dynamics;
pub mod error;
pub mod faults;
pub mod harness;
pub mod matrix;
pub mod nnet;
pub mod prune;
pub mod rng;
pub mod sdi;
pub mod xai;

pub use error::{Error, Result};
