//! The measurement pulse as a driven, decaying four-level system.
//!
//! Levels are ordered `|0⟩, |1⟩, |2⟩, |e⟩`. Only `|0⟩ ↔ |e⟩` is driven and
//! `|e⟩` decays to `|0⟩` at rate Γ; `|1⟩`, `|2⟩` are spectators. All
//! frequencies are angular (rad/s) and Hamiltonians are given in units of ħ.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{herm_eig, ComplexMatrix, C64, I, ONE, ZERO};

pub const LEVELS: usize = 4;
pub const EXCITED: usize = 3;

/// `2π × 1 MHz` in rad/s.
pub const TWO_PI_MHZ: f64 = 2.0 * PI * 1e6;

/// Largest RK4 step.
pub const MAX_STEP: f64 = 1e-10;
/// Minimum number of steps per integration.
pub const MIN_STEPS: u64 = 1000;
pub const MAX_STEPS: u64 = 100_000_000;

/// Value with a symmetric one-sigma uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncertain {
    pub value: f64,
    pub sigma: f64,
}

impl Uncertain {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }
}

/// Physical parameters of the measurement pulse (angular frequencies in rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    /// Rabi frequency Ω of the `|0⟩ ↔ |e⟩` drive.
    pub rabi: Uncertain,
    /// Decay rate Γ of `|e⟩`.
    pub gamma: f64,
    /// Laser detuning Δ.
    pub detuning: Uncertain,
    /// Pulse length in seconds.
    pub duration: f64,
    /// Phase φ_r picked up by `|0⟩` from the repump light shifts.
    pub repump_phase: f64,
    pub shots: u64,
    pub seed: u64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            rabi: Uncertain::new(1.3 * TWO_PI_MHZ, 0.1 * TWO_PI_MHZ),
            gamma: 21.65 * TWO_PI_MHZ,
            detuning: Uncertain::new(5.0 * TWO_PI_MHZ, 2.0 * TWO_PI_MHZ),
            duration: 1e-6,
            repump_phase: 0.0,
            shots: 1000,
            seed: 0,
        }
    }
}

impl ExperimentParams {
    pub fn with_rabi(mut self, rabi: Uncertain) -> Self {
        self.rabi = rabi;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!("decay rate must be positive, got {}", self.gamma)));
        }
        if !self.duration.is_finite() || self.duration < 0.0 {
            return Err(Error::InvalidParameter(format!("pulse length must be non-negative, got {}", self.duration)));
        }
        if self.shots < 1 {
            return Err(Error::InvalidParameter("shots must be at least 1".into()));
        }
        if self.rabi.sigma < 0.0 || self.detuning.sigma < 0.0 {
            return Err(Error::InvalidParameter("uncertainties must be non-negative".into()));
        }
        Ok(())
    }

    /// The adiabatic formula assumes Ω ≪ Γ; this flags Ω > Γ/2.
    pub fn outside_adiabatic_regime(&self) -> bool {
        self.rabi.value > self.gamma / 2.0
    }
}

/// A named drive strength, Ω in rad/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveRow {
    pub name: String,
    pub rabi: Uncertain,
}

/// The four measured drive strengths (a)–(d).
pub fn standard_rows() -> Vec<DriveRow> {
    [("a", 1.3, 0.1), ("b", 1.9, 0.2), ("c", 3.2, 0.3), ("d", 15.2, 1.5)]
        .into_iter()
        .map(|(name, mhz, sigma)| DriveRow {
            name: name.to_string(),
            rabi: Uncertain::new(mhz * TWO_PI_MHZ, sigma * TWO_PI_MHZ),
        })
        .collect()
}

/// Density matrix of the four-level ion.
#[derive(Clone, Debug, PartialEq)]
pub struct FourLevelState {
    rho: ComplexMatrix,
}

impl FourLevelState {
    const TRACE_TOL: f64 = 1e-9;
    const EIG_TOL: f64 = 1e-8;

    pub fn new(rho: ComplexMatrix) -> Result<Self> {
        if rho.rows() != LEVELS || rho.cols() != LEVELS {
            return Err(Error::DimensionMismatch(format!("four-level state is {}x{}", rho.rows(), rho.cols())));
        }
        if !rho.is_hermitian(1e-12) {
            return Err(Error::NonHermitianInput(rho.max_abs_diff(&rho.adjoint())));
        }
        let tr = rho.trace().re;
        if (tr - 1.0).abs() > Self::TRACE_TOL {
            return Err(Error::NotNormalized(tr));
        }
        let min = herm_eig(&rho)?.values[0];
        if min < -Self::EIG_TOL {
            return Err(Error::NotPsd(min));
        }
        Ok(Self { rho })
    }

    /// Embeds a qutrit amplitude vector with `|e⟩` empty.
    pub fn from_qutrit_amplitudes(amps: &[C64; 3]) -> Result<Self> {
        let v = [amps[0], amps[1], amps[2], ZERO];
        Self::new(ComplexMatrix::projector(&v))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.rho
    }

    /// The `{|0⟩,|1⟩,|2⟩}` block.
    pub fn qutrit_block(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(3, 3, |i, j| self.rho[(i, j)])
    }
}

/// `H = Δ|e⟩⟨e| + (Ω/2)(σ₊ + σ₋)`, `σ₊ = |e⟩⟨0|`, in rad/s.
pub fn interaction_hamiltonian(rabi: f64, detuning: f64) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(LEVELS, LEVELS);
    h[(EXCITED, EXCITED)] = C64::new(detuning, 0.0);
    h[(EXCITED, 0)] = C64::new(rabi / 2.0, 0.0);
    h[(0, EXCITED)] = C64::new(rabi / 2.0, 0.0);
    h
}

/// `ρ̇ = −i[H, ρ] + (Γ/2)(2σ₋ρσ₊ − σ₊σ₋ρ − ρσ₊σ₋)`
pub fn lindblad_rhs(rho: &ComplexMatrix, h: &ComplexMatrix, gamma: f64) -> ComplexMatrix {
    let n = LEVELS;
    let mut out = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut comm = ZERO;
            for k in 0..n {
                comm += h[(i, k)] * rho[(k, j)] - rho[(i, k)] * h[(k, j)];
            }
            out[(i, j)] = -I * comm;
        }
    }
    // σ₋ρσ₊ = ρ_ee |0⟩⟨0|; σ₊σ₋ = |e⟩⟨e|.
    let e = EXCITED;
    out[(0, 0)] += rho[(e, e)] * gamma;
    for k in 0..n {
        out[(e, k)] -= rho[(e, k)] * (gamma / 2.0);
        out[(k, e)] -= rho[(k, e)] * (gamma / 2.0);
    }
    out
}

/// Number of RK4 steps for a span `t`: step `min(MAX_STEP, t/MIN_STEPS)`.
pub fn step_count(t: f64) -> Result<u64> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!("integration time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(0);
    }
    let h = MAX_STEP.min(t / MIN_STEPS as f64);
    let steps = (t / h * (1.0 - 1e-12)).ceil();
    if steps > MAX_STEPS as f64 {
        return Err(Error::StepUnderflow(steps as u64));
    }
    Ok(steps as u64)
}

/// One recorded point of a trajectory.
#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub t: f64,
    pub rho: ComplexMatrix,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub final_state: FourLevelState,
    pub samples: Vec<TrajectorySample>,
    pub steps: u64,
}

impl Trajectory {
    /// `t_s,rho00,rho11,rho22,rhoee,re_rho01,im_rho01,re_rho12,im_rho12`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,rho00,rho11,rho22,rhoee,re_rho01,im_rho01,re_rho12,im_rho12\n");
        for s in &self.samples {
            let r = &s.rho;
            writeln!(
                out,
                "{:.9e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                s.t,
                r[(0, 0)].re,
                r[(1, 1)].re,
                r[(2, 2)].re,
                r[(3, 3)].re,
                r[(0, 1)].re,
                r[(0, 1)].im,
                r[(1, 2)].re,
                r[(1, 2)].im
            )
            .unwrap();
        }
        out
    }
}

/// Integrates the master equation to `t_final` and returns the final state.
pub fn integrate(rho0: &FourLevelState, params: &ExperimentParams, t_final: f64) -> Result<FourLevelState> {
    integrate_sampled(rho0, params, t_final, 0).map(|t| t.final_state)
}

/// Fixed-step RK4 of the master equation, re-Hermitized after every step.
/// Records `samples + 1` evenly spaced points (including both ends) when
/// `samples > 0`.
pub fn integrate_sampled(
    rho0: &FourLevelState,
    params: &ExperimentParams,
    t_final: f64,
    samples: usize,
) -> Result<Trajectory> {
    params.validate()?;
    let steps = step_count(t_final)?;
    integrate_steps(rho0, params, t_final, steps, samples)
}

fn integrate_steps(
    rho0: &FourLevelState,
    params: &ExperimentParams,
    t_final: f64,
    steps: u64,
    samples: usize,
) -> Result<Trajectory> {
    let h_op = interaction_hamiltonian(params.rabi.value, params.detuning.value);
    let gamma = params.gamma;
    let f = |rho: &ComplexMatrix| lindblad_rhs(rho, &h_op, gamma);

    let mut rho = rho0.rho.clone();
    let mut recorded = Vec::new();
    let every = if samples > 0 { (steps as f64 / samples as f64).max(1.0) } else { f64::INFINITY };
    let mut next_sample = 0.0f64;
    if samples > 0 {
        recorded.push(TrajectorySample { t: 0.0, rho: rho.clone() });
        next_sample = every;
    }
    if steps > 0 {
        let dt = t_final / steps as f64;
        for step in 1..=steps {
            let k1 = f(&rho);
            let k2 = f(&(&rho + &k1.scale_real(dt / 2.0)));
            let k3 = f(&(&rho + &k2.scale_real(dt / 2.0)));
            let k4 = f(&(&rho + &k3.scale_real(dt)));
            let incr = &(&k1 + &k2.scale_real(2.0)) + &(&k3.scale_real(2.0) + &k4);
            rho = (&rho + &incr.scale_real(dt / 6.0)).hermitian_part();
            if samples > 0 && (step as f64 >= next_sample - 1e-9 || step == steps) {
                recorded.push(TrajectorySample { t: step as f64 * dt, rho: rho.clone() });
                next_sample += every;
            }
        }
    }
    if !rho.as_slice().iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::InvalidParameter("integration diverged".into()));
    }
    Ok(Trajectory { final_state: FourLevelState { rho }, samples: recorded, steps })
}

/// `g₀` from the closed coherence pair
/// `ρ̇₀₁ = −iΩρ_e1/2`, `ρ̇_e1 = −iΩρ₀₁/2 − (Γ/2 + iΔ)ρ_e1`,
/// started from `ρ₀₁ = 1`, `ρ_e1 = 0` and multiplied by `e^{iφ_r}`.
pub fn g0_exact(params: &ExperimentParams) -> Result<C64> {
    params.validate()?;
    let steps = step_count(params.duration)?;
    Ok(g0_exact_with_steps(params, steps))
}

/// [`g0_exact`] with an explicit RK4 step count.
pub fn g0_exact_with_steps(params: &ExperimentParams, steps: u64) -> C64 {
    let half_rabi = C64::new(0.0, -params.rabi.value / 2.0);
    let damping = C64::new(params.gamma / 2.0, params.detuning.value);
    let f = |c01: C64, ce1: C64| (half_rabi * ce1, half_rabi * c01 - damping * ce1);
    let (mut c01, mut ce1) = (ONE, ZERO);
    if steps > 0 {
        let dt = params.duration / steps as f64;
        for _ in 0..steps {
            let (a1, b1) = f(c01, ce1);
            let (a2, b2) = f(c01 + a1 * (dt / 2.0), ce1 + b1 * (dt / 2.0));
            let (a3, b3) = f(c01 + a2 * (dt / 2.0), ce1 + b2 * (dt / 2.0));
            let (a4, b4) = f(c01 + a3 * dt, ce1 + b3 * dt);
            c01 += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
            ce1 += (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (dt / 6.0);
        }
    }
    c01 * C64::from_polar(1.0, params.repump_phase)
}

/// `g₀ ≈ exp(−Ω² t / (2Γ + 4iΔ)) · e^{iφ_r}`
pub fn g0_adiabatic(params: &ExperimentParams) -> C64 {
    let omega = params.rabi.value;
    let denom = C64::new(2.0 * params.gamma, 4.0 * params.detuning.value);
    (C64::new(-omega * omega * params.duration, 0.0) / denom).exp() * C64::from_polar(1.0, params.repump_phase)
}

/// `P_scatt = 1 − |g₀|²`
pub fn p_scatt(g0: C64) -> Result<f64> {
    let mag = g0.norm();
    if mag > 1.0 + 1e-12 || !mag.is_finite() {
        return Err(Error::InvalidG0(mag));
    }
    Ok((1.0 - g0.norm_sqr()).clamp(0.0, 1.0))
}

/// 16th, 50th and 84th percentiles of a Monte Carlo distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval68 {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Propagates the Ω and Δ uncertainties into `P_scatt` by drawing both from
/// independent normals and evaluating the adiabatic `g₀`.
pub fn param_uncertainty(params: &ExperimentParams, n_samples: usize, seed: u64) -> Result<Interval68> {
    params.validate()?;
    if n_samples < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 samples, got {n_samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rabi = Normal::new(params.rabi.value, params.rabi.sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let detuning = Normal::new(params.detuning.value, params.detuning.sigma)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut draws: Vec<f64> = (0..n_samples)
        .map(|_| {
            let mut p = *params;
            p.rabi.value = rabi.sample(&mut rng);
            p.detuning.value = detuning.sample(&mut rng);
            1.0 - g0_adiabatic(&p).norm_sqr()
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    Ok(Interval68 {
        lower: percentile(&draws, 0.16),
        median: percentile(&draws, 0.50),
        upper: percentile(&draws, 0.84),
    })
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
