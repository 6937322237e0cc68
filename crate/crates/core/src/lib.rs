//! Effective rod models for thin, axially heterogeneous elastic bodies.

pub mod error;
pub mod cell;
pub mod geometry;
pub mod material;
pub mod microstructure;
pub mod rod;
pub mod verify;

pub use error::{Error, Result};
