//! Simulation and estimation toolkit for the decay of meta-order market impact.
//!
//! The crate is organised around four pieces:
//!
//! - [`toy_model`]: the continuous-time optimal-trading toy model, solved in
//!   closed form and by Monte Carlo, used as an exact oracle for raw-impact
//!   measurement.
//! - [`market_sim`]: synthetic daily meta-order datasets generated from a
//!   quasi-linear propagator model with a known kernel.
//! - [`regression`]: lagged design matrices and a QR-based least-squares engine.
//! - [`estimation`]: square-root law fitting, raw impact, joint deconvolution of
//!   past trades and predictions, normalisation and power-law decay fitting.
//!
//! [`report`] turns results into plot-ready CSV tables.

pub mod error;
pub mod estimation;
pub mod market_sim;
pub mod regression;
pub mod report;
pub mod rng;
pub mod toy_model;

pub use error::{Error, Result};
