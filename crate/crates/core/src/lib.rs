//! Simulation and process tomography of a fluorescence-induced Lüders
//! measurement on a trapped-ion qutrit.
//!
//! * [`numeric`]: small dense complex matrices, Hermitian eigensolver.
//! * [`states`]: qutrit states and the nine-state tomography set.
//! * [`channels`]: Choi matrices, Lüders and measurement channels, fidelity.
//! * [`dynamics`]: the driven, decaying four-level ion and the coherence factor `g₀`.
//! * [`tomography`]: synthetic count data, Choi reconstruction, trace-preservation test.

pub mod channels;
pub mod dynamics;
pub mod error;
pub mod numeric;
pub mod states;
pub mod tomography;

pub use error::{Error, Result};
