//! Training-free augmentation of cytology detection datasets by composing
//! annotated abnormal cells into new backgrounds.
//!
//! The pipeline: sample a cell bank ([`cellbank`]), plan composition sites
//! ([`dataio::plan`]), generate self-style and background-style variants for
//! each site ([`composer`]), keep the more harmonized one ([`filtration`]) and
//! measure the result ([`evalkit`]). Model inference sits behind the traits in
//! [`backends`]; deterministic reference implementations are included.

pub mod backends;
pub mod cellbank;
pub mod composer;
pub mod config;
pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod filtration;
pub mod imageproc;
pub mod pipeline;
pub mod raster;
pub mod seeds;

pub use error::{Error, Result};
pub use raster::{BBox, HFMap, Raster};
