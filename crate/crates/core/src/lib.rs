//! Disagreement-based co-training for self-labeling 2D object bounding boxes.
//!
//! Two detectors trained on different views of the same images exchange confident
//! pseudo-labels; the receiver keeps the images it is least confident about. The crate
//! also ships a KITTI-style evaluator, a pseudo-label audit, a subprocess protocol for
//! external detector workers and a seeded statistical detector simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod cotrain;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod files;
pub mod labels;
pub mod seeding;
pub mod simdet;
pub mod transform;
pub mod types;

pub use error::{Error, Result};
