//! Few-shot defect classification over multi-view region-context features.

pub mod classifiers;
pub mod dataset;
pub mod embedding;
pub mod eval;
pub mod geometry;
pub mod numerics;
pub mod rng;
