//! Process tomography over the nine-state preparation/measurement set.
//!
//! Cell `(i, j)` prepares `|ψ_i⟩`, runs the channel and records outcome 1
//! when the projector `|ψ_j⟩⟨ψ_j|` fires, so
//! `p_ij = tr[χ |ψ_j⟩⟨ψ_j| ⊗ (|ψ_i⟩⟨ψ_i|)ᵀ] = ⟨v_ij|χ|v_ij⟩` with
//! `v_ij = ψ_j ⊗ ψ_i*`.

mod bootstrap;
mod dataset;
mod fit;
mod lrtest;

pub use bootstrap::{bootstrap_uncertainty, BootstrapOptions, BootstrapResult, MIN_RESAMPLES};
pub use dataset::{LoadError, Provenance, TomographyDataset, SETTINGS};
pub use fit::{reconstruct, reconstruct_tp, Objective, ReconstructionOptions, ReconstructionResult};
pub use lrtest::{significance_sigma, tp_likelihood_ratio_test, LrTestOptions, LrTestResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::channels::ProcessChoi;
use crate::error::{Error, Result};
use crate::numeric::{self, ComplexMatrix, C64};
use crate::states::{self, target_states};

/// Tolerance before probabilities are clipped into `[0, 1]`.
pub const PROBABILITY_TOL: f64 = 1e-9;

/// Probability table indexed `[i][j]`, preparation `i`, measurement `j`.
pub type ProbabilityTable = [[f64; SETTINGS]; SETTINGS];

/// `v_ij = ψ_j ⊗ ψ_i*`, row-major over `(i, j)`.
pub(crate) fn design_vectors() -> Vec<Vec<C64>> {
    let psi = target_states();
    let mut out = Vec::with_capacity(SETTINGS * SETTINGS);
    for prep in &psi {
        let conj: Vec<C64> = prep.amplitudes().iter().map(|a| a.conj()).collect();
        for meas in &psi {
            out.push(numeric::kron_vec(meas.amplitudes(), &conj));
        }
    }
    out
}

/// Unclipped `⟨v_ij|χ|v_ij⟩` for all 81 cells.
pub(crate) fn raw_probabilities(chi: &ComplexMatrix) -> Vec<f64> {
    design_vectors().iter().map(|v| chi.sandwich(v, v).re).collect()
}

/// Outcome-1 probabilities of every setting. Values within
/// [`PROBABILITY_TOL`] of `[0, 1]` are clipped; anything further out is an
/// error.
pub fn probabilities(chi: &ProcessChoi) -> Result<ProbabilityTable> {
    let min = chi.min_eigenvalue();
    if min < -numeric::PSD_TOL {
        return Err(Error::NotPsd(min));
    }
    let raw = raw_probabilities(chi.matrix());
    let mut table = [[0.0; SETTINGS]; SETTINGS];
    for (k, &p) in raw.iter().enumerate() {
        if !(-PROBABILITY_TOL..=1.0 + PROBABILITY_TOL).contains(&p) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        table[k / SETTINGS][k % SETTINGS] = p.clamp(0.0, 1.0);
    }
    Ok(table)
}

/// Imperfections folded into simulated counts but absent from the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "strength", rename_all = "snake_case")]
pub enum PreparationError {
    #[default]
    None,
    /// Prepared state `(1-ε)ρ + ε·1/3`.
    Depolarizing(f64),
    /// With probability ε the ion leaves the qutrit before the measurement
    /// pulse and never fluoresces, so every `p_ij` is scaled by `1-ε`.
    Leakage(f64),
}

impl PreparationError {
    fn strength(self) -> f64 {
        match self {
            PreparationError::None => 0.0,
            PreparationError::Depolarizing(e) | PreparationError::Leakage(e) => e,
        }
    }
}

/// Outcome probabilities including a preparation imperfection.
pub fn probabilities_with(chi: &ProcessChoi, preparation: PreparationError) -> Result<ProbabilityTable> {
    let eps = preparation.strength();
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("preparation error strength {eps} outside [0, 1]")));
    }
    match preparation {
        PreparationError::None => probabilities(chi),
        PreparationError::Leakage(eps) => {
            let mut table = probabilities(chi)?;
            table.iter_mut().flatten().for_each(|p| *p *= 1.0 - eps);
            Ok(table)
        }
        PreparationError::Depolarizing(eps) => {
            probabilities(chi)?;
            let psi = target_states();
            let mut table = [[0.0; SETTINGS]; SETTINGS];
            for (i, prep) in psi.iter().enumerate() {
                let rho = states::depolarize(&states::density(prep), eps);
                let out = chi.apply(&rho)?;
                for (j, meas) in psi.iter().enumerate() {
                    let p = out.sandwich(meas.amplitudes(), meas.amplitudes()).re;
                    table[i][j] = p.clamp(0.0, 1.0);
                }
            }
            Ok(table)
        }
    }
}

/// Deterministic RNG for task `stream` of a run seeded with `seed`.
pub fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws every cell from `Binomial(N, p_ij)`.
pub fn simulate_dataset(chi: &ProcessChoi, shots: u64, seed: u64) -> Result<TomographyDataset> {
    simulate_dataset_with(chi, shots, seed, PreparationError::None)
}

pub fn simulate_dataset_with(
    chi: &ProcessChoi,
    shots: u64,
    seed: u64,
    preparation: PreparationError,
) -> Result<TomographyDataset> {
    let table = probabilities_with(chi, preparation)?;
    let mut rng = task_rng(seed, 0);
    let source = format!("chi(tr={:.6})", chi.matrix().trace().re);
    TomographyDataset::sample(&table, shots, &mut rng, Provenance::Simulated { seed, source, preparation })
}

/// Dataset whose frequencies are the exact probabilities of `chi`, for
/// noiseless round trips. Counts are rounded; the frequencies are exact.
pub fn exact_dataset(chi: &ProcessChoi, shots: u64) -> Result<TomographyDataset> {
    let table = probabilities(chi)?;
    TomographyDataset::from_probabilities(&table, shots)
}

pub(crate) fn sample_binomial(rng: &mut ChaCha8Rng, shots: u64, p: f64) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        shots
    } else {
        Binomial::new(shots, p).expect("p checked in (0, 1)").sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::measurement_channel;
    use crate::numeric::ZERO;

    #[test]
    fn identity_channel_probabilities_are_overlaps() {
        let table = probabilities(&ProcessChoi::identity()).unwrap();
        let psi = target_states();
        for i in 0..9 {
            assert!((table[i][i] - 1.0).abs() < 1e-12);
            for j in 0..9 {
                let ov = psi[j].overlap(&psi[i]);
                assert!((table[i][j] - ov * ov).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lueders_probabilities() {
        let table = probabilities(&measurement_channel(ZERO).unwrap()).unwrap();
        assert!((table[8][8] - 1.0).abs() < 1e-12);
        assert!((table[6][6] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sure_outcomes_sample_deterministically() {
        let mut rng = task_rng(3, 0);
        for _ in 0..100 {
            assert_eq!(sample_binomial(&mut rng, 1000, 1.0), 1000);
            assert_eq!(sample_binomial(&mut rng, 1000, 0.0), 0);
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let chi = measurement_channel(C64::new(0.5, 0.0)).unwrap();
        let a = simulate_dataset(&chi, 1000, 17).unwrap();
        let b = simulate_dataset(&chi, 1000, 17).unwrap();
        assert_eq!(a.counts(), b.counts());
        let c = simulate_dataset(&chi, 1000, 18).unwrap();
        assert_ne!(a.counts(), c.counts());
        assert!(matches!(a.provenance(), Provenance::Simulated { seed: 17, .. }));
    }

    #[test]
    fn depolarization_keeps_the_effective_channel_trace_preserving() {
        // Depolarizing the inputs composes Λ with a TP map: the data remain
        // consistent with tr_sys χ = 1.
        let chi = measurement_channel(C64::new(0.6, 0.0)).unwrap();
        let dep = ProcessChoi::from_map(|rho| states::depolarize(rho, 0.03));
        let composed = chi.after(&dep);
        assert!(composed.tp_deviation() < 1e-12);
        let direct = probabilities(&composed).unwrap();
        let folded = probabilities_with(&chi, PreparationError::Depolarizing(0.03)).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert!((direct[i][j] - folded[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn leakage_scales_probabilities() {
        let chi = ProcessChoi::identity();
        let t = probabilities_with(&chi, PreparationError::Leakage(0.1)).unwrap();
        assert!((t[0][0] - 0.9).abs() < 1e-12);
        assert!(probabilities_with(&chi, PreparationError::Leakage(1.5)).is_err());
    }

    #[test]
    fn out_of_range_probability_is_an_error() {
        let big = ProcessChoi::from_matrix(ComplexMatrix::identity(9).scale_real(2.0)).unwrap();
        assert!(matches!(probabilities(&big), Err(Error::ProbabilityOutOfRange(_))));
    }
}
