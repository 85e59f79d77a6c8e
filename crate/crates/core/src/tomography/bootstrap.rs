use rayon::prelude::*;

use super::dataset::{Provenance, TomographyDataset, SETTINGS};
use super::fit::{reconstruct, ReconstructionOptions, ReconstructionResult};
use super::task_rng;
use crate::channels::CHOI_DIM;
use crate::dynamics::percentile;
use crate::error::{Error, Result};
use crate::numeric::ComplexMatrix;

pub const MIN_RESAMPLES: usize = 100;
const LOWER_QUANTILE: f64 = 0.16;
const UPPER_QUANTILE: f64 = 0.84;

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
    /// Settings of the point fit and of every resample fit. Resamples are
    /// warm-started from the point estimate.
    pub fit: ReconstructionOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { resamples: 200, seed: 0, fit: ReconstructionOptions::default() }
    }
}

#[derive(Clone, Debug)]
pub struct BootstrapResult {
    pub point: ReconstructionResult,
    /// Element-wise 16th percentile; real and imaginary parts are
    /// percentiles of their own marginals.
    pub lower: ComplexMatrix,
    pub upper: ComplexMatrix,
    pub resamples: usize,
}

impl BootstrapResult {
    /// Largest interval width over all real and imaginary parts.
    pub fn max_width(&self) -> f64 {
        self.lower
            .as_slice()
            .iter()
            .zip(self.upper.as_slice())
            .map(|(l, u)| (u.re - l.re).max(u.im - l.im))
            .fold(0.0, f64::max)
    }
}

/// Parametric bootstrap: each resample redraws every cell from
/// `Binomial(N, f_ij)` and is refitted.
pub fn bootstrap_uncertainty(dataset: &TomographyDataset, options: &BootstrapOptions) -> Result<BootstrapResult> {
    if options.resamples < MIN_RESAMPLES {
        return Err(Error::InvalidParameter(format!(
            "at least {MIN_RESAMPLES} resamples required, got {}",
            options.resamples
        )));
    }
    let point = reconstruct(dataset, &options.fit)?;
    let freq = dataset.frequencies();
    let table: [[f64; SETTINGS]; SETTINGS] = std::array::from_fn(|i| std::array::from_fn(|j| freq[i * SETTINGS + j]));
    let refit = ReconstructionOptions { starts: 1, initial: Some(point.chi.clone()), ..options.fit.clone() };

    let fits: Vec<ComplexMatrix> = (0..options.resamples as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = task_rng(options.seed, index);
            let provenance = Provenance::Resampled { seed: options.seed, index };
            let sample = TomographyDataset::sample(&table, dataset.shots(), &mut rng, provenance)?;
            Ok(reconstruct(&sample, &refit)?.chi.into_matrix())
        })
        .collect::<Result<_>>()?;

    let mut lower = ComplexMatrix::zeros(CHOI_DIM, CHOI_DIM);
    let mut upper = ComplexMatrix::zeros(CHOI_DIM, CHOI_DIM);
    for r in 0..CHOI_DIM {
        for c in 0..CHOI_DIM {
            let mut re: Vec<f64> = fits.iter().map(|m| m[(r, c)].re).collect();
            let mut im: Vec<f64> = fits.iter().map(|m| m[(r, c)].im).collect();
            re.sort_by(f64::total_cmp);
            im.sort_by(f64::total_cmp);
            lower[(r, c)].re = percentile(&re, LOWER_QUANTILE);
            lower[(r, c)].im = percentile(&im, LOWER_QUANTILE);
            upper[(r, c)].re = percentile(&re, UPPER_QUANTILE);
            upper[(r, c)].im = percentile(&im, UPPER_QUANTILE);
        }
    }
    Ok(BootstrapResult { point, lower, upper, resamples: options.resamples })
}
