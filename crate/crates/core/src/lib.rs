//! Dynamic dollar-cost-averaging allocation under a multivariate Merton
//! jump-diffusion with a conditional lower VaR (CLVaR) floor on terminal wealth.

pub mod backtest;
pub mod bound;
pub mod calibration;
pub mod checks;
pub mod config;
pub mod error;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod panel;
pub mod risk;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
