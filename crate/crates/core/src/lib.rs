//! Balanced LiDAR-camera fusion on synthetic driving scenes.
//!
//! A scene simulator produces boxes, point clouds and a camera rig; noisy
//! detectors turn them into image (2D) and LiDAR (3D) proposals, which become
//! queries of a small transformer decoder. The crate provides the pieces for
//! keeping the two modalities balanced during training: per-modality
//! supervision of decoupled decoder passes, a LiDAR-guided depth prior for
//! placing image queries, and complementary cross-modal masking.

pub mod decoder;
pub mod depthprior;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod geometry;
pub mod masking;
pub mod matching;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scenesim;
pub mod svg;

pub use error::{Error, Result};
