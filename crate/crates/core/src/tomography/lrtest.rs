use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::fit::{reconstruct, reconstruct_tp, Objective, ReconstructionOptions, ReconstructionResult};
use super::TomographyDataset;
use crate::error::{Error, Result};

/// Real constraints in `tr_sys χ = 1` for Hermitian `χ`.
pub const TP_CONSTRAINTS: u32 = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct LrTestOptions {
    pub dof: u32,
    /// Fit settings; the objective is always forced to the likelihood.
    pub fit: ReconstructionOptions,
}

impl Default for LrTestOptions {
    fn default() -> Self {
        Self { dof: TP_CONSTRAINTS, fit: ReconstructionOptions::default() }
    }
}

#[derive(Clone, Debug)]
pub struct LrTestResult {
    /// `λ = 2[max_PSD L − max_{PSD∩TP} L]`, clipped at zero.
    pub statistic: f64,
    pub p_value: f64,
    pub significance_sigma: f64,
    pub unconstrained: ReconstructionResult,
    pub constrained: ReconstructionResult,
    pub converged: bool,
}

pub fn tp_likelihood_ratio_test(dataset: &TomographyDataset, options: &LrTestOptions) -> Result<LrTestResult> {
    if options.dof == 0 {
        return Err(Error::InvalidParameter("dof must be at least 1".into()));
    }
    let fit = ReconstructionOptions { objective: Objective::Likelihood, ..options.fit.clone() };
    let unconstrained = reconstruct(dataset, &fit)?;
    let constrained = reconstruct_tp(dataset, &fit)?;
    // Objectives are deviances, i.e. −L up to the same constant.
    let statistic = (2.0 * (constrained.objective - unconstrained.objective)).max(0.0);
    let p_value = chi2_survival(statistic, options.dof);
    Ok(LrTestResult {
        statistic,
        p_value,
        significance_sigma: significance_sigma(statistic, options.dof),
        converged: unconstrained.converged && constrained.converged,
        unconstrained,
        constrained,
    })
}

fn chi2_survival(statistic: f64, dof: u32) -> f64 {
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    dist.sf(statistic)
}

/// Two-sided Gaussian equivalent of the chi-squared tail probability of
/// `statistic`. Tails too small for `f64` use the Wilson–Hilferty normal
/// approximation of the chi-squared distribution.
pub fn significance_sigma(statistic: f64, dof: u32) -> f64 {
    if statistic <= 0.0 || dof == 0 {
        return 0.0;
    }
    let p = chi2_survival(statistic, dof);
    if p > 1e-300 {
        let normal = Normal::standard();
        return (-normal.inverse_cdf(p / 2.0)).max(0.0);
    }
    let k = dof as f64;
    let a = 2.0 / (9.0 * k);
    ((statistic / k).cbrt() - (1.0 - a)) / a.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::measurement_channel;
    use crate::numeric::C64;
    use crate::tomography::{exact_dataset, simulate_dataset, simulate_dataset_with, PreparationError};

    #[test]
    fn sigma_conversion_reference_points() {
        assert_eq!(significance_sigma(0.0, 9), 0.0);
        // Chi-squared(1) tail of z² is the two-sided normal tail of z.
        for z in [1.0, 2.0, 3.0, 5.0] {
            assert!((significance_sigma(z * z, 1) - z).abs() < 1e-6);
        }
        // Median of chi-squared(9) is about 8.343: p = 0.5, two-sided 0.674σ.
        assert!((significance_sigma(8.342_832_8, 9) - 0.674_489_75).abs() < 1e-4);
        let huge = significance_sigma(5000.0, 9);
        assert!(huge.is_finite() && huge > 30.0);
        assert!(significance_sigma(200.0, 9) < significance_sigma(300.0, 9));
    }

    #[test]
    fn noiseless_tp_data_are_not_significant() {
        let chi = measurement_channel(C64::new(0.5, 0.0)).unwrap();
        let data = exact_dataset(&chi, 1000).unwrap();
        let r = tp_likelihood_ratio_test(&data, &LrTestOptions::default()).unwrap();
        assert!(r.significance_sigma < 1.0, "{}", r.significance_sigma);
    }

    #[test]
    fn leakage_is_detected() {
        let chi = measurement_channel(C64::new(0.5, 0.0)).unwrap();
        let data = simulate_dataset_with(&chi, 1000, 4, PreparationError::Leakage(0.05)).unwrap();
        let r = tp_likelihood_ratio_test(&data, &LrTestOptions::default()).unwrap();
        assert!(r.significance_sigma > 3.0, "{}", r.significance_sigma);
        assert!(r.constrained.tp_deviation < 1e-8);
    }

    #[test]
    fn statistic_is_non_negative() {
        let chi = measurement_channel(C64::new(0.2, 0.1)).unwrap();
        let data = simulate_dataset(&chi, 1000, 9).unwrap();
        let r = tp_likelihood_ratio_test(&data, &LrTestOptions::default()).unwrap();
        assert!(r.statistic >= 0.0);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn zero_dof_is_rejected() {
        let data = exact_dataset(&crate::channels::ProcessChoi::identity(), 10).unwrap();
        let opts = LrTestOptions { dof: 0, ..Default::default() };
        assert!(tp_likelihood_ratio_test(&data, &opts).is_err());
    }
}
