//! Frailty metrics from abdominal CT.
//!
//! The pipeline turns segmented CT cases into a per-patient *age discrepancy*
//! and relates it to clinical outcomes:
//!
//! 1. [`volume_io`] reads NIfTI-1 image and label volumes.
//! 2. [`views`] slices each case along all three planes and weights slices by
//!    their share of tumor voxels.
//! 3. [`predictor`] and [`cv`] produce cross-validated predicted ages.
//! 4. [`discrepancy`] normalizes the residuals from the predicted-on-actual
//!    regression line.
//! 5. [`cohort_io`] and [`survival`] fit Cox models for length of stay and
//!    overall survival; [`report`] renders tables and SVG plots.
//!
//! [`pipeline`] runs the whole flow; [`synth`] generates fixtures with known
//! ground truth.

pub mod cohort_io;
pub mod cv;
pub mod discrepancy;
pub mod pipeline;
pub mod predictor;
pub mod report;
pub mod seed;
pub mod survival;
pub mod synth;
pub mod views;
pub mod volume_io;
