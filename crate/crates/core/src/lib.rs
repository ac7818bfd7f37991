//! Marker-less tracking of a hand-held planar target in depth images.
//!
//! The pipeline trims and thresholds a depth frame, follows region borders,
//! straightens them, picks the region held from the bottom of the view, finds
//! four sequential corner-like vertices, refines them to sub-pixel accuracy and
//! samples a patch depth for each. [`geometry`] lifts the result to world
//! space. [`synthcam`] renders scenes with exact ground truth, [`baselines`]
//! provides ICP and RANSAC comparisons and [`metrics`] the evaluation
//! quantities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod depthio;
pub mod geometry;
pub mod metrics;
pub mod synthcam;
pub mod tracker;
