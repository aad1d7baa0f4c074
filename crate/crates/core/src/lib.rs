//! Self-contact detection from wrist-to-wrist bioimpedance and
//! contact-aware refinement of monocular arm pose estimates.
//!
//! The pipeline has three stages:
//!
//! 1. [`signal`] turns an impedance recording into a frame-aligned contact
//!    timeline.
//! 2. [`optimizer`] refines the arm poses of frames flagged as in contact
//!    with masked gradient steps on a reprojection + contact loss.
//! 3. [`metrics`] scores refined sequences against ground truth.
//!
//! [`synth`] produces ground-truth corpora for all three.

pub mod body;
pub mod camera;
pub mod capsule;
pub mod error;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod plot;
pub mod signal;
pub mod smoothing;
pub mod so3;
pub mod synth;

pub use error::{Error, Result};
