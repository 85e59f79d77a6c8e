//! Choi-matrix reconstruction.
//!
//! The Choi matrix is parametrized as `χ = T†T` with `T` lower triangular
//! (real diagonal, complex below), which is 81 real numbers and positive
//! semidefinite for every parameter vector. The objective is minimized by a
//! damped Gauss–Newton (Levenberg–Marquardt) iteration with an analytic
//! Jacobian; predicted probabilities are quadratic in `T`.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{design_vectors, task_rng, TomographyDataset};
use crate::channels::{measurement_channel, ProcessChoi, CHOI_DIM};
use crate::error::Result;
use crate::numeric::{self, ComplexMatrix, C64, ZERO};
use crate::states::DIM;

pub(crate) const PARAMS: usize = CHOI_DIM * CHOI_DIM;
const TP_RESIDUALS: usize = 9;

/// Largest accepted `p − 1` in likelihood fits for cells where every shot fired.
pub const OVERSHOOT: f64 = 1e-7;
/// Stop when the gradient max-norm falls below this.
pub const GRADIENT_TOL: f64 = 1e-10;
/// Stop when an accepted step lowers the objective by less than this
/// (relative to `max(1, objective)`).
pub const DECREASE_TOL: f64 = 1e-14;
/// Feasibility target of the trace-preserving fit.
pub const TP_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `Σ (p_ij − f_ij)²`
    #[default]
    LeastSquares,
    /// Binomial deviance `Σ n ln(f/p) + (N−n) ln((1−f)/(1−p))`, i.e. the
    /// negative log-likelihood up to a data-only constant.
    Likelihood,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionOptions {
    pub objective: Objective,
    /// Number of starts: identity channel, Lüders channel, then random.
    pub starts: usize,
    /// Seed of the random starts.
    pub seed: u64,
    pub max_iterations: usize,
    /// Extra starting point tried before the standard ones.
    pub initial: Option<ProcessChoi>,
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        Self { objective: Objective::LeastSquares, starts: 5, seed: 0, max_iterations: 2000, initial: None }
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub chi: ProcessChoi,
    /// `Σ (p_ij − f_ij)²` at the fit.
    pub residual: f64,
    /// Final value of the minimized objective (without penalty).
    pub objective: f64,
    /// `‖tr_sys χ − 1‖_max`
    pub tp_deviation: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Unconstrained (positive semidefinite only) fit.
pub fn reconstruct(dataset: &TomographyDataset, options: &ReconstructionOptions) -> Result<ReconstructionResult> {
    let problem = Problem::new(dataset, options.objective);
    let starts = starting_points(options);
    let runs: Vec<Run> = starts
        .par_iter()
        .map(|theta| {
            let mut weights = Weights { tp: 0.0, shift: [0.0; TP_RESIDUALS], wall: problem.wall_scale() };
            let mut run = minimize(&problem, theta.clone(), weights, options.max_iterations);
            let mut iterations = run.iterations;
            while problem.needs_wall()
                && problem.overshoot(&run.theta) > OVERSHOOT
                && weights.wall < problem.wall_limit()
            {
                weights.wall *= 10.0;
                run = minimize(&problem, run.theta, weights, options.max_iterations);
                iterations += run.iterations;
            }
            run.iterations = iterations;
            run
        })
        .collect();
    let best = pick_best(runs);
    Ok(problem.finish(best))
}

/// Stage weights of the continuation.
#[derive(Clone, Copy, Debug)]
struct Weights {
    /// Weight of the squared `tr_sys χ − 1` residuals.
    tp: f64,
    /// Multiplier estimates divided by `2·tp`; each residual enters the
    /// penalty as `(c + shift)²`.
    shift: [f64; TP_RESIDUALS],
    /// Curvature of the likelihood past `p = 1` in cells where every shot
    /// fired; raised per stage until the overshoot is below [`OVERSHOOT`].
    wall: f64,
}

/// Fit constrained to `tr_sys χ = 1` by penalty continuation: the penalty
/// weight grows ×10 per stage, each stage warm-started from the last with
/// updated multiplier estimates, until the constraint violation is below
/// [`TP_TOL`]. The result is then normalized exactly onto the constraint.
pub fn reconstruct_tp(dataset: &TomographyDataset, options: &ReconstructionOptions) -> Result<ReconstructionResult> {
    let problem = Problem::new(dataset, options.objective);
    let starts = starting_points(options);
    let runs: Vec<Run> = starts
        .par_iter()
        .map(|theta| {
            let mut weights =
                Weights { tp: problem.penalty_scale(), shift: [0.0; TP_RESIDUALS], wall: problem.wall_scale() };
            let mut run = minimize(&problem, theta.clone(), weights, options.max_iterations);
            let mut iterations = run.iterations;
            for _ in 0..14 {
                if problem.tp_violation(&run.theta) < TP_TOL {
                    break;
                }
                for (shift, c) in weights.shift.iter_mut().zip(problem.tp_residuals(&run.theta)) {
                    *shift = (*shift + c) / 10.0;
                }
                weights.tp *= 10.0;
                weights.wall = (weights.wall * 10.0).min(problem.wall_limit());
                run = minimize(&problem, run.theta, weights, options.max_iterations);
                iterations += run.iterations;
            }
            run.iterations = iterations;
            run.converged &= problem.tp_violation(&run.theta) < TP_TOL;
            run.theta = normalize_tp(&run.theta);
            run.value = problem.reported_value(&run.theta);
            run
        })
        .collect();
    let best = pick_best(runs);
    Ok(problem.finish(best))
}

#[derive(Clone, Debug)]
struct Run {
    theta: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

fn pick_best(runs: Vec<Run>) -> Run {
    runs.into_iter().reduce(|best, r| if r.value < best.value { r } else { best }).expect("at least one start")
}

/// Maps `(1⊗S^{-1/2}) χ (1⊗S^{-1/2})` with `S = tr_sys χ`, which is exactly
/// trace preserving and stays positive.
fn normalize_tp(theta: &[f64]) -> Vec<f64> {
    let t = unpack(theta);
    match tp_normalized(&(&t.adjoint() * &t)) {
        Some(fixed) => pack_from_choi(&fixed, 0.0),
        None => theta.to_vec(),
    }
}

fn tp_normalized(chi: &ComplexMatrix) -> Option<ComplexMatrix> {
    let s = chi.partial_trace(DIM, DIM, numeric::Subsystem::A).ok()?;
    let eig = numeric::herm_eig(&s).ok()?;
    if eig.values[0] <= 0.0 {
        return None;
    }
    let inv_sqrt = eig.map(|l| C64::new(1.0 / l.sqrt(), 0.0));
    let a = ComplexMatrix::identity(DIM).kron(&inv_sqrt);
    Some(&(&a * chi) * &a)
}

/// Regularized start `(1-δ)χ + δ·tr χ/9` so that the factor has full rank.
fn seed_from_choi(chi: &ComplexMatrix) -> Vec<f64> {
    pack_from_choi(chi, 0.1)
}

fn starting_points(options: &ReconstructionOptions) -> Vec<Vec<f64>> {
    let mut starts = Vec::new();
    if let Some(init) = &options.initial {
        starts.push(pack_from_choi(init.matrix(), 1e-3));
    }
    let count = options.starts.max(1);
    for k in 0..count {
        let theta = match k {
            0 => seed_from_choi(ProcessChoi::identity().matrix()),
            1 => seed_from_choi(measurement_channel(ZERO).expect("g0 = 0 is valid").matrix()),
            _ => random_start(options.seed, k as u64),
        };
        starts.push(theta);
    }
    starts
}

/// Random trace-preserving channel, regularized like the seeded starts so
/// that every predicted probability lies strictly inside (0, 1).
fn random_start(seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = task_rng(seed, 1_000 + stream);
    let theta: Vec<f64> = (0..PARAMS).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let t = unpack(&theta);
    let chi = &t.adjoint() * &t;
    let chi = tp_normalized(&chi).unwrap_or(chi);
    seed_from_choi(&chi)
}

/// Which entry of `T` a parameter controls.
#[derive(Clone, Copy, Debug)]
enum Slot {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

fn slots() -> Vec<Slot> {
    let mut out = Vec::with_capacity(PARAMS);
    for a in 0..CHOI_DIM {
        out.push(Slot::Diag(a));
        for b in 0..a {
            out.push(Slot::Re(a, b));
            out.push(Slot::Im(a, b));
        }
    }
    out
}

pub(crate) fn unpack(theta: &[f64]) -> ComplexMatrix {
    let mut t = ComplexMatrix::zeros(CHOI_DIM, CHOI_DIM);
    for (slot, &x) in slots().iter().zip(theta) {
        match *slot {
            Slot::Diag(a) => t[(a, a)] = C64::new(x, 0.0),
            Slot::Re(a, b) => t[(a, b)].re = x,
            Slot::Im(a, b) => t[(a, b)].im = x,
        }
    }
    t
}

fn pack(t: &ComplexMatrix) -> Vec<f64> {
    slots()
        .iter()
        .map(|slot| match *slot {
            Slot::Diag(a) => t[(a, a)].re,
            Slot::Re(a, b) => t[(a, b)].re,
            Slot::Im(a, b) => t[(a, b)].im,
        })
        .collect()
}

/// Factor `χ_reg = T†T` with `T` lower triangular, where
/// `χ_reg = (1-δ)χ + δ·tr χ/9·1` (plus a tiny floor so the factorization
/// exists).
pub(crate) fn pack_from_choi(chi: &ComplexMatrix, delta: f64) -> Vec<f64> {
    let n = CHOI_DIM;
    let tr = chi.trace().re.max(1e-12);
    let mut reg =
        &chi.hermitian_part().scale_real(1.0 - delta) + &ComplexMatrix::identity(n).scale_real(delta * tr / n as f64);
    // Shift by the most negative eigenvalue plus a floor.
    if let Ok(eig) = numeric::herm_eig(&reg) {
        let shift = (1e-12 * tr - eig.values[0]).max(0.0);
        if shift > 0.0 {
            reg = &reg + &ComplexMatrix::identity(n).scale_real(shift);
        }
    }
    // Cholesky of the index-reversed matrix: J χ J = L L†, so T = J L† J.
    let rev = ComplexMatrix::from_fn(n, n, |i, j| reg[(n - 1 - i, n - 1 - j)]);
    let l = cholesky(&rev);
    let t = ComplexMatrix::from_fn(n, n, |i, j| l[(n - 1 - j, n - 1 - i)].conj());
    pack(&t)
}

/// Lower Cholesky factor of a Hermitian positive definite matrix; pivots
/// that come out non-positive are floored.
fn cholesky(m: &ComplexMatrix) -> ComplexMatrix {
    let n = m.rows();
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        let d = d.max(1e-300).sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    l
}

/// Parameters of row `a` of `T` occupy `a²..(a+1)²`.
fn row_block(a: usize) -> std::ops::Range<usize> {
    a * a..(a + 1) * (a + 1)
}

/// Every predicted probability and every TP residual is a homogeneous
/// quadratic form in the parameters; the forms depend only on the fixed
/// state set and are built once.
struct Forms {
    /// Per cell, `w` with `(Tv)_a = Σ_{x ∈ row a} w_x θ_x`, so
    /// `p = Σ_a |(Tv)_a|²` and `(Mθ)_x = Re(conj(w_x) (Tv)_a)`.
    cells: Vec<Vec<C64>>,
    /// `(M, target, weight)` for the real residuals of `tr_sys χ − 1`:
    /// diagonal real parts, then real and imaginary parts above the diagonal.
    /// `M` is symmetric row-major.
    tp: Vec<(Vec<f64>, f64, f64)>,
}

/// `T_rc = coef·θ_x` for the slot `x` at `(r, c)`.
fn slot_entries() -> Vec<(usize, usize, C64)> {
    slots()
        .iter()
        .map(|slot| match *slot {
            Slot::Diag(a) => (a, a, C64::new(1.0, 0.0)),
            Slot::Re(a, b) => (a, b, C64::new(1.0, 0.0)),
            Slot::Im(a, b) => (a, b, C64::new(0.0, 1.0)),
        })
        .collect()
}

fn forms() -> &'static Forms {
    static FORMS: OnceLock<Forms> = OnceLock::new();
    FORMS.get_or_init(|| {
        let entries = slot_entries();
        let cells = design_vectors().iter().map(|v| entries.iter().map(|&(_, c, e)| e * v[c]).collect()).collect();

        // q_ab = Σ_s Σ_r conj(T_{r,3s+a}) T_{r,3s+b}
        let sys_trace_form = |a: usize, b: usize| {
            let mut f = vec![ZERO; PARAMS * PARAMS];
            for (x, &(rx, cx, ex)) in entries.iter().enumerate() {
                for (y, &(ry, cy, ey)) in entries.iter().enumerate() {
                    if rx == ry && cx % DIM == a && cy % DIM == b && cx / DIM == cy / DIM {
                        f[x * PARAMS + y] += ex.conj() * ey;
                    }
                }
            }
            // Symmetrize so that θᵀ(Re M)θ and θᵀ(Im M)θ are unchanged.
            let sym: Vec<C64> =
                (0..PARAMS * PARAMS).map(|k| (f[k] + f[(k % PARAMS) * PARAMS + k / PARAMS]) * 0.5).collect();
            sym
        };
        let mut tp = Vec::with_capacity(TP_RESIDUALS);
        for a in 0..DIM {
            let f = sys_trace_form(a, a);
            tp.push((f.iter().map(|z| z.re).collect(), 1.0, 1.0));
            for b in a + 1..DIM {
                let f = sys_trace_form(a, b);
                tp.push((f.iter().map(|z| z.re).collect(), 0.0, 2.0));
                tp.push((f.iter().map(|z| z.im).collect(), 0.0, 2.0));
            }
        }
        Forms { cells, tp }
    })
}

/// `(p, Mθ)` for one cell.
fn evaluate_cell(w: &[C64], theta: &[f64]) -> (f64, Vec<f64>) {
    let mut p = 0.0;
    let mut mt = vec![0.0; PARAMS];
    for a in 0..CHOI_DIM {
        let block = row_block(a);
        let u: C64 = w[block.clone()].iter().zip(&theta[block.clone()]).map(|(w, t)| w * t).sum();
        p += u.norm_sqr();
        for x in block {
            mt[x] = (w[x].conj() * u).re;
        }
    }
    (p, mt)
}

fn cell_probability(w: &[C64], theta: &[f64]) -> f64 {
    (0..CHOI_DIM)
        .map(|a| {
            let block = row_block(a);
            w[block.clone()].iter().zip(&theta[block]).map(|(w, t)| w * t).sum::<C64>().norm_sqr()
        })
        .sum()
}

/// `(θᵀMθ, Mθ)` for a dense symmetric `M`.
fn evaluate_form(m: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let mt: Vec<f64> = m.chunks_exact(PARAMS).map(|row| dot(row, theta)).collect();
    (dot(&mt, theta), mt)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Problem {
    freq: Vec<f64>,
    counts: Vec<f64>,
    shots: f64,
    objective: Objective,
}

struct Linearization {
    value: f64,
    gradient: Vec<f64>,
    /// Row-major Hessian.
    hessian: Vec<f64>,
}

impl Problem {
    fn new(dataset: &TomographyDataset, objective: Objective) -> Self {
        Self {
            freq: dataset.frequencies(),
            counts: dataset.effective_counts(),
            shots: dataset.shots() as f64,
            objective,
        }
    }

    /// Initial penalty weight. Every start is trace preserving, so the first
    /// stage can already weigh the constraint well above the data.
    fn penalty_scale(&self) -> f64 {
        match self.objective {
            Objective::LeastSquares => 100.0,
            Objective::Likelihood => 100.0 * self.shots,
        }
    }

    fn probabilities(&self, theta: &[f64]) -> Vec<f64> {
        forms().cells.iter().map(|w| cell_probability(w, theta)).collect()
    }

    /// Starting curvature past `p = 1`, matched to `N`.
    fn wall_scale(&self) -> f64 {
        10.0 * self.shots
    }

    fn wall_limit(&self) -> f64 {
        self.shots / OVERSHOOT
    }

    /// Whether some cell can be pushed past `p = 1` by the likelihood.
    fn needs_wall(&self) -> bool {
        self.objective == Objective::Likelihood && self.counts.contains(&self.shots)
    }

    /// Largest `p − 1` over cells where every shot fired.
    fn overshoot(&self, theta: &[f64]) -> f64 {
        let p = self.probabilities(theta);
        p.iter().zip(&self.counts).filter(|(_, &n)| n == self.shots).map(|(p, _)| p - 1.0).fold(0.0, f64::max)
    }

    /// Value, first and second derivative of one cell term in `p`. With
    /// `wall = None` a cell where every shot fired is evaluated at
    /// `min(p, 1)`, which is how final objectives are reported.
    fn cell_terms(&self, k: usize, p: f64, wall: Option<f64>) -> (f64, f64, f64) {
        match self.objective {
            Objective::LeastSquares => {
                let r = p - self.freq[k];
                (r * r, 2.0 * r, 2.0)
            }
            Objective::Likelihood => {
                let n = self.counts[k];
                let m = self.shots - n;
                let f = self.freq[k];
                // ln p and ln(1-p) only appear with nonzero counts, so the
                // deviance needs no clipping; it is infinite outside its domain.
                if (n > 0.0 && p <= 0.0) || (m > 0.0 && p >= 1.0) {
                    return (f64::INFINITY, 0.0, 0.0);
                }
                if m == 0.0 && p > 1.0 {
                    let Some(stiff) = wall else { return (0.0, 0.0, 0.0) };
                    // Past p = 1 the deviance continues as a parabola with
                    // matching slope, minimal at p = 1 + N/stiff.
                    let x = p - 1.0;
                    return (-n * x + 0.5 * stiff * x * x, -n + stiff * x, stiff);
                }
                let mut v = 0.0;
                if n > 0.0 {
                    v += n * (f / p).ln();
                }
                if m > 0.0 {
                    v += m * ((1.0 - f) / (1.0 - p)).ln();
                }
                (v, -n / p + m / (1.0 - p), n / (p * p) + m / ((1.0 - p) * (1.0 - p)))
            }
        }
    }

    fn tp_residuals(&self, theta: &[f64]) -> Vec<f64> {
        forms().tp.iter().map(|(m, target, _)| evaluate_form(m, theta).0 - target).collect()
    }

    fn tp_violation(&self, theta: &[f64]) -> f64 {
        let t = unpack(theta);
        let chi = ProcessChoi::from_matrix(&t.adjoint() * &t).expect("T†T is Hermitian and 9x9");
        chi.tp_deviation()
    }

    fn value(&self, theta: &[f64], weights: Weights) -> f64 {
        let cells = forms().cells.iter().enumerate();
        let mut v: f64 = cells.map(|(k, w)| self.cell_terms(k, cell_probability(w, theta), Some(weights.wall)).0).sum();
        if weights.tp > 0.0 {
            for ((m, target, w), shift) in forms().tp.iter().zip(weights.shift) {
                let c = evaluate_form(m, theta).0 - target + shift;
                v += weights.tp * w * c * c;
            }
        }
        v
    }

    /// Objective without any penalty.
    fn reported_value(&self, theta: &[f64]) -> f64 {
        let cells = forms().cells.iter().enumerate();
        cells.map(|(k, w)| self.cell_terms(k, cell_probability(w, theta), None).0).sum()
    }

    /// Exact gradient and Hessian of `Σ h(θᵀMθ)`:
    /// `∇ = Σ h'·2Mθ`, `∇² = Σ h''·(2Mθ)(2Mθ)ᵀ + h'·2M`.
    fn linearize(&self, theta: &[f64], weights: Weights) -> Linearization {
        let mut value = 0.0;
        let mut gradient = vec![0.0; PARAMS];
        let mut hessian = vec![0.0; PARAMS * PARAMS];
        // Rank-one terms, upper triangle only; mirrored at the end.
        let rank_one = |d2: f64, mt: &[f64], hessian: &mut [f64]| {
            for i in 0..PARAMS {
                let wi = 4.0 * d2 * mt[i];
                if wi == 0.0 {
                    continue;
                }
                for (h, m) in hessian[i * PARAMS + i..(i + 1) * PARAMS].iter_mut().zip(&mt[i..]) {
                    *h += wi * m;
                }
            }
        };
        for (k, w) in forms().cells.iter().enumerate() {
            let (p, mt) = evaluate_cell(w, theta);
            let (v, d1, d2) = self.cell_terms(k, p, Some(weights.wall));
            value += v;
            for (g, x) in gradient.iter_mut().zip(&mt) {
                *g += 2.0 * d1 * x;
            }
            rank_one(d2, &mt, &mut hessian);
            // 2·d1·M is block diagonal: M_xy = Re(conj(w_x) w_y) within a row.
            for a in 0..CHOI_DIM {
                let block = row_block(a);
                for x in block.clone() {
                    for y in x..block.end {
                        hessian[x * PARAMS + y] += 2.0 * d1 * (w[x].conj() * w[y]).re;
                    }
                }
            }
        }
        if weights.tp > 0.0 {
            for ((m, target, wt), shift) in forms().tp.iter().zip(weights.shift) {
                let (q, mt) = evaluate_form(m, theta);
                let c = q - target + shift;
                let s = weights.tp * wt;
                value += s * c * c;
                for (g, x) in gradient.iter_mut().zip(&mt) {
                    *g += 4.0 * s * c * x;
                }
                rank_one(2.0 * s, &mt, &mut hessian);
                for i in 0..PARAMS {
                    for j in i..PARAMS {
                        hessian[i * PARAMS + j] += 4.0 * s * c * m[i * PARAMS + j];
                    }
                }
            }
        }
        for i in 0..PARAMS {
            for j in 0..i {
                hessian[i * PARAMS + j] = hessian[j * PARAMS + i];
            }
        }
        Linearization { value, gradient, hessian }
    }

    fn finish(&self, run: Run) -> ReconstructionResult {
        let t = unpack(&run.theta);
        let chi = ProcessChoi::from_matrix(&t.adjoint() * &t).expect("T†T is Hermitian and 9x9");
        let p = self.probabilities(&run.theta);
        let residual = p.iter().zip(&self.freq).map(|(a, b)| (a - b).powi(2)).sum();
        let tp_deviation = chi.tp_deviation();
        ReconstructionResult {
            chi,
            residual,
            objective: self.reported_value(&run.theta),
            tp_deviation,
            iterations: run.iterations,
            converged: run.converged,
        }
    }
}

/// Damped Newton (Levenberg–Marquardt) on the penalized objective.
fn minimize(problem: &Problem, mut theta: Vec<f64>, weights: Weights, max_iterations: usize) -> Run {
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut lin = problem.linearize(&theta, weights);

    while iterations < max_iterations {
        iterations += 1;
        let gmax = lin.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < GRADIENT_TOL {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut grow = 2.0;
        while lambda < 1e16 {
            if let Some(step) = solve_damped(&lin.hessian, &lin.gradient, lambda) {
                let trial: Vec<f64> = theta.iter().zip(&step).map(|(x, d)| x + d).collect();
                let value = problem.value(&trial, weights);
                if value.is_finite() && value < lin.value {
                    // Nielsen's update from the gain ratio of actual to
                    // predicted decrease.
                    let predicted = -dot(&lin.gradient, &step) - 0.5 * quadratic(&lin.hessian, &step);
                    let rho = (lin.value - value) / predicted.max(f64::MIN_POSITIVE);
                    lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                    accepted = Some((trial, value));
                    break;
                }
            }
            lambda *= grow;
            grow *= 2.0;
        }
        let Some((trial, value)) = accepted else {
            // No descent direction left at machine precision.
            converged = true;
            break;
        };
        let decrease = lin.value - value;
        theta = trial;
        lambda = lambda.max(1e-12);
        lin = problem.linearize(&theta, weights);
        if decrease < DECREASE_TOL * lin.value.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Run { value: problem.reported_value(&theta), theta, iterations, converged }
}

/// `δᵀHδ`
fn quadratic(h: &[f64], d: &[f64]) -> f64 {
    h.chunks_exact(d.len()).zip(d).map(|(row, di)| di * dot(row, d)).sum()
}

/// Solves `(H + λ·D) δ = −g` with `D = max(|diag H|, ε·max|diag H|)`;
/// `None` when the damped matrix is not positive definite.
fn solve_damped(h: &[f64], g: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let n = g.len();
    let max_diag = (0..n).map(|i| h[i * n + i].abs()).fold(0.0f64, f64::max).max(1e-300);
    let mut a = h.to_vec();
    for i in 0..n {
        a[i * n + i] += lambda * h[i * n + i].abs().max(1e-9 * max_diag);
    }
    // In-place Cholesky, lower triangle.
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = -g[i];
        for k in 0..i {
            s -= a[i * n + k] * y[k];
        }
        y[i] = s / a[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= a[k * n + i] * x[k];
        }
        x[i] = s / a[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::process_fidelity;
    use crate::tomography::{exact_dataset, simulate_dataset, simulate_dataset_with, PreparationError};

    fn central_difference_gradient(problem: &Problem, theta: &[f64], weights: Weights) -> Vec<f64> {
        let h = 1e-6;
        (0..PARAMS)
            .map(|i| {
                let mut up = theta.to_vec();
                let mut down = theta.to_vec();
                up[i] += h;
                down[i] -= h;
                (problem.value(&up, weights) - problem.value(&down, weights)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn pack_unpack_round_trip() {
        let theta = random_start(1, 1);
        assert_eq!(pack(&unpack(&theta)), theta);
    }

    #[test]
    fn factorization_reproduces_choi() {
        let chi = measurement_channel(C64::new(0.4, 0.2)).unwrap();
        let theta = pack_from_choi(chi.matrix(), 0.0);
        let t = unpack(&theta);
        assert!((&t.adjoint() * &t).max_abs_diff(chi.matrix()) < 1e-5);
        for a in 0..9 {
            for b in a + 1..9 {
                assert_eq!(t[(a, b)], ZERO);
            }
        }
    }

    /// A generic point where every predicted probability lies inside (0, 1).
    fn interior_point() -> Vec<f64> {
        let chi = measurement_channel(C64::new(0.3, -0.2)).unwrap();
        let mut theta = pack_from_choi(chi.matrix(), 0.2);
        let jitter = random_start(4, 2);
        theta.iter_mut().zip(&jitter).for_each(|(t, j)| *t += 1e-3 * j);
        theta
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let chi = measurement_channel(C64::new(0.5, 0.1)).unwrap();
        let data = simulate_dataset(&chi, 1000, 3).unwrap();
        let theta = interior_point();
        for objective in [Objective::LeastSquares, Objective::Likelihood] {
            let problem = Problem::new(&data, objective);
            for tp in [0.0, 3.0] {
                let weights = Weights { tp, shift: [0.01; TP_RESIDUALS], wall: 1e4 };
                let lin = problem.linearize(&theta, weights);
                let fd = central_difference_gradient(&problem, &theta, weights);
                let scale = fd.iter().fold(1.0f64, |m, g| m.max(g.abs()));
                for (a, b) in lin.gradient.iter().zip(&fd) {
                    assert!((a - b).abs() < 1e-5 * scale, "{objective:?} {tp}: {a} vs {b}");
                }
                assert!((lin.value - problem.value(&theta, weights)).abs() < 1e-9 * lin.value.abs().max(1.0));
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let chi = measurement_channel(C64::new(0.5, 0.1)).unwrap();
        let data = simulate_dataset(&chi, 1000, 3).unwrap();
        let theta = interior_point();
        for objective in [Objective::LeastSquares, Objective::Likelihood] {
            let problem = Problem::new(&data, objective);
            let weights = Weights { tp: 2.0, shift: [0.01; TP_RESIDUALS], wall: 1e4 };
            let lin = problem.linearize(&theta, weights);
            let scale = lin.hessian.iter().fold(1.0f64, |m, h| m.max(h.abs()));
            let h = 1e-6;
            for i in (0..PARAMS).step_by(7) {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[i] += h;
                down[i] -= h;
                let gu = problem.linearize(&up, weights).gradient;
                let gd = problem.linearize(&down, weights).gradient;
                for j in 0..PARAMS {
                    let fd = (gu[j] - gd[j]) / (2.0 * h);
                    assert!((lin.hessian[i * PARAMS + j] - fd).abs() < 1e-5 * scale, "{objective:?} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn quadratic_forms_reproduce_probabilities_and_sys_trace() {
        let theta = random_start(6, 2);
        let t = unpack(&theta);
        let chi = &t.adjoint() * &t;
        let direct = crate::tomography::raw_probabilities(&chi);
        let data = exact_dataset(&ProcessChoi::identity(), 10).unwrap();
        let via_forms = Problem::new(&data, Objective::LeastSquares).probabilities(&theta);
        for (a, b) in direct.iter().zip(&via_forms) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = chi.partial_trace(DIM, DIM, numeric::Subsystem::A).unwrap();
        let expected = [
            s[(0, 0)].re,
            s[(0, 1)].re,
            s[(0, 1)].im,
            s[(0, 2)].re,
            s[(0, 2)].im,
            s[(1, 1)].re,
            s[(1, 2)].re,
            s[(1, 2)].im,
            s[(2, 2)].re,
        ];
        for ((m, _, _), e) in forms().tp.iter().zip(expected) {
            assert!((evaluate_form(m, &theta).0 - e).abs() < 1e-12);
        }
    }

    #[test]
    fn tp_normalization_is_exact() {
        let theta = random_start(2, 3);
        let fixed = normalize_tp(&theta);
        let t = unpack(&fixed);
        let chi = ProcessChoi::from_matrix(&t.adjoint() * &t).unwrap();
        assert!(chi.tp_deviation() < 1e-12);
    }

    #[test]
    fn noiseless_lueders_round_trip() {
        let chi = measurement_channel(ZERO).unwrap();
        let data = exact_dataset(&chi, 1000).unwrap();
        let fit = reconstruct(&data, &ReconstructionOptions::default()).unwrap();
        assert!(process_fidelity(&fit.chi, &chi).unwrap() >= 0.999);
        assert!(fit.residual < 1e-8);
    }

    #[test]
    fn noiseless_identity_round_trip() {
        let chi = ProcessChoi::identity();
        let data = exact_dataset(&chi, 1000).unwrap();
        let fit = reconstruct(&data, &ReconstructionOptions::default()).unwrap();
        assert!(process_fidelity(&fit.chi, &chi).unwrap() >= 0.999);
        let tp = reconstruct_tp(&data, &ReconstructionOptions::default()).unwrap();
        let f = process_fidelity(&fit.chi, &tp.chi).unwrap();
        assert!((1.0 - f).abs() < 1e-3);
    }

    #[test]
    fn tp_fit_meets_constraint_and_never_beats_unconstrained() {
        let chi = measurement_channel(C64::new(0.55, 0.0)).unwrap();
        let data = simulate_dataset_with(&chi, 1000, 21, PreparationError::Depolarizing(0.05)).unwrap();
        let opts = ReconstructionOptions::default();
        let free = reconstruct(&data, &opts).unwrap();
        let tp = reconstruct_tp(&data, &opts).unwrap();
        assert!(tp.tp_deviation < TP_TOL);
        assert!(tp.residual >= free.residual - 1e-12, "{} < {}", tp.residual, free.residual);
    }

    #[test]
    fn independent_starts_agree_on_noiseless_data() {
        let chi = measurement_channel(C64::new(0.3, 0.0)).unwrap();
        let data = exact_dataset(&chi, 1000).unwrap();
        let problem = Problem::new(&data, Objective::LeastSquares);
        let a =
            minimize(&problem, random_start(7, 2), Weights { tp: 0.0, shift: [0.0; TP_RESIDUALS], wall: 0.0 }, 5000);
        let b =
            minimize(&problem, random_start(7, 3), Weights { tp: 0.0, shift: [0.0; TP_RESIDUALS], wall: 0.0 }, 5000);
        assert!(a.converged && b.converged);
        assert!((a.value - b.value).abs() < 1e-10);
    }
}
