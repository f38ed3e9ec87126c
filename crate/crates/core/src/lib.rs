//! Adversarial robustness workbench for differentiable image-enhancement
//! models.
//!
//! The crate bundles a small reverse-mode differentiation engine, two
//! reference enhancement models, projected sign-gradient attacks with
//! enhancement-specific losses, adversarial training, a synthetic paired
//! dataset generator and the report pipeline that ties them together.

#[macro_use]
mod macros;

pub mod attack;
pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod defense;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod models;
pub mod seed;

pub use error::{Error, Result};
