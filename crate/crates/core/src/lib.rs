//! Core algorithms for factorized expressive voice cloning.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! command line and experiment orchestration live in the `xclone` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod gst;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod speaker;
pub mod synth;
pub mod yin;

pub use error::{Error, Result};
pub use matrix::Matrix;
