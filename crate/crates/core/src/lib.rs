#![allow(clippy::needless_range_loop)]
//! Desk-scale laboratory for scaling laws of atomistic transformer
//! potentials: autodiff engine, synthetic materials data, models, combined
//! energy/force/stress loss, training, sweeps, power-law fits and plots.

pub mod cli;
pub mod data;
pub mod error;
pub mod loss;
pub mod models;
pub mod scaling;
pub mod tensor;
pub mod training;
pub mod viz;

pub use error::{Error, Result};
