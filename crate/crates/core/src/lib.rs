//! Simulation and analysis of pre/post-selected weak which-path measurements in a
//! double Mach-Zehnder interferometer.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: labeled two-port states and 2×2 operators,
//! * [`circuit`]: optical stages, wiring validation and the bundled presets,
//! * [`pointer`]: Gaussian pointer readout and its Kraus update,
//! * [`tsvf`]: exact two-state-vector oracle (ABL probabilities, weak values,
//!   finite-strength pointer laws),
//! * [`engine`]: seeded Monte Carlo over ensembles and single-photon cycles,
//! * [`slicing`]: post-selection slicing, significance and the rival-hypothesis tests,
//! * [`dsl`]: the `.exp` experiment format,
//! * [`records`]: CSV/JSON schemas shared with the command-line tool.

pub mod circuit;
pub mod dsl;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod pointer;
pub mod records;
pub mod slicing;
pub mod tsvf;

pub use error::{Error, Result};
