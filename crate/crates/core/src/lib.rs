//! Continuous 2D indoor vision-and-language navigation laboratory.

pub mod cli;
pub mod experts;
pub mod geometry;
pub mod harness;
pub mod lexicon;
pub mod metrics;
pub mod nav;
pub mod perception;
pub mod sampler;
pub mod scene;
