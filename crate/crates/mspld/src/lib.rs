//! Multi-modal self-paced learning for object detection from a few labeled
//! examples.
//!
//! The library alternates between training a set of lightweight detection
//! models and selecting pseudo-labeled training images for them, easy ones
//! first. Selection is a binary matrix per model (image x class), updated in
//! closed form under a pace threshold that grows every round; a cross-model
//! agreement bonus lets the models pull each other out of bad selections.
//!
//! Everything runs at desk scale: scenes are synthetic feature grids, the
//! detectors are nearest-prototype / linear / histogram scorers, and a
//! brute-force oracle validates the selection update on small instances.
//!
//! Modules follow the pipeline:
//!
//! - [`geometry`]: boxes, IoU, non-maximum suppression
//! - [`data`]: synthetic scenes, splits, proposals, persistence
//! - [`detector`]: pluggable scoring models and score fusion
//! - [`curriculum`]: pseudo-label generation and reliability filters
//! - [`selector`]: the self-paced selection update, pace schedule, objective
//! - [`oracle`]: brute-force minimizers used to validate the selector
//! - [`engine`]: the alternating optimization loop
//! - [`eval`]: average precision, CorLoc, pseudo-label quality
//! - [`cli`]: command implementations behind the `mspld` binary

pub mod cli;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod detector;
pub mod engine;
pub mod eval;
pub mod geometry;
pub mod oracle;
pub mod rng;
pub mod selector;

pub use geometry::{iou, nms, BBox, ScoredBox};
