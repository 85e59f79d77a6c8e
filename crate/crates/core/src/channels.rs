//! Qutrit channels in Choi form.
//!
//! Index convention: the Choi matrix lives on `sys ⊗ aux`, row/column index
//! `3·s + a`, and
//!
//! ```text
//! χ = Σ_ij Λ[|i⟩⟨j|]_sys ⊗ |i⟩⟨j|_aux,     Λ[ρ] = tr_aux[χ (1 ⊗ ρᵀ)].
//! ```
//!
//! A trace-preserving channel has `tr_sys χ = 1_aux` and `tr χ = 3`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, check_psd, herm_eig, ComplexMatrix, MatrixJson, Subsystem, C64, ONE, ZERO};
use crate::states::DIM;

pub const CHOI_DIM: usize = DIM * DIM;
/// Tolerance on projector algebra in [`lueders_channel`].
pub const PROJECTOR_TOL: f64 = 1e-10;
/// Tolerance on `Σ K†K = 1` in [`kraus_channel`] and on pointer bases.
pub const COMPLETENESS_TOL: f64 = 1e-10;
/// Kraus extraction drops eigenvalues at or below this.
pub const KRAUS_EIG_CUTOFF: f64 = 1e-10;
const G0_TOL: f64 = 1e-12;

/// Choi matrix of a qutrit process.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessChoi {
    matrix: ComplexMatrix,
}

impl ProcessChoi {
    /// Wraps a 9×9 Hermitian matrix. Positivity is not checked here; see
    /// [`ProcessChoi::min_eigenvalue`].
    pub fn from_matrix(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.rows() != CHOI_DIM || matrix.cols() != CHOI_DIM {
            return Err(Error::DimensionMismatch(format!(
                "Choi matrix must be 9x9, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.is_hermitian(numeric::EIG_HERMITIAN_TOL * matrix.max_abs().max(1.0)) {
            return Err(Error::NonHermitianInput(matrix.max_abs_diff(&matrix.adjoint())));
        }
        Ok(Self { matrix: matrix.hermitian_part() })
    }

    /// `|ξ'⟩⟨ξ'|` with `|ξ'⟩ = Σ_i |ii⟩`.
    pub fn identity() -> Self {
        Self::from_map(|rho| rho.clone())
    }

    /// Choi matrix of an arbitrary linear map on 3×3 matrices.
    pub fn from_map(map: impl Fn(&ComplexMatrix) -> ComplexMatrix) -> Self {
        let mut chi = ComplexMatrix::zeros(CHOI_DIM, CHOI_DIM);
        for i in 0..DIM {
            for j in 0..DIM {
                let mut unit = ComplexMatrix::zeros(DIM, DIM);
                unit[(i, j)] = ONE;
                let image = map(&unit);
                for s in 0..DIM {
                    for t in 0..DIM {
                        chi[(s * DIM + i, t * DIM + j)] += image[(s, t)];
                    }
                }
            }
        }
        Self { matrix: chi.hermitian_part() }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// `tr_sys χ`, equal to `1_aux` for trace-preserving channels.
    pub fn sys_trace(&self) -> ComplexMatrix {
        self.matrix.partial_trace(DIM, DIM, Subsystem::A).expect("Choi matrix is 9x9")
    }

    /// `‖tr_sys χ − 1‖_max`
    pub fn tp_deviation(&self) -> f64 {
        self.sys_trace().max_abs_diff(&ComplexMatrix::identity(DIM))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        herm_eig(&self.matrix).map(|e| e.values[0]).unwrap_or(f64::NAN)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// `Λ[ρ] = tr_aux[χ (1 ⊗ ρᵀ)]`
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        apply(self, rho)
    }

    /// `self ∘ first` (first acts first).
    pub fn after(&self, first: &ProcessChoi) -> Self {
        let first = first.clone();
        let second = self.clone();
        Self::from_map(move |rho| {
            let mid = first.apply(rho).expect("3x3 input");
            second.apply(&mid).expect("3x3 input")
        })
    }

    /// Kraus operators `√λ_k · unvec(v_k)` for eigenvalues above
    /// [`KRAUS_EIG_CUTOFF`].
    pub fn kraus_operators(&self) -> Result<Vec<ComplexMatrix>> {
        let eig = herm_eig(&self.matrix)?;
        check_psd(&eig)?;
        Ok(eig
            .values
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > KRAUS_EIG_CUTOFF)
            .map(|(k, &l)| {
                let scale = l.sqrt();
                ComplexMatrix::from_fn(DIM, DIM, |s, a| eig.vectors[(s * DIM + a, k)] * scale)
            })
            .collect())
    }

    pub fn to_json(&self, g0: Option<C64>) -> ChoiJson {
        ChoiJson {
            matrix: self.matrix.to_json(),
            basis: CHOI_BASIS.to_string(),
            g0: g0.map(|z| ComplexJson { re: z.re, im: z.im }),
        }
    }

    /// Per-element bar-chart table, `row_label,col_label,abs,phase`, 81 rows.
    /// Labels are `sa` digit pairs (system level, auxiliary level).
    pub fn bar_chart_csv(&self) -> String {
        matrix_bar_chart_csv(&self.matrix, |k| format!("{}{}", k / DIM, k % DIM))
    }
}

pub const CHOI_BASIS: &str = "sys⊗aux";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexJson {
    pub re: f64,
    pub im: f64,
}

/// Matrix JSON plus `{"basis":"sys⊗aux","g0":{"re":..,"im":..}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiJson {
    #[serde(flatten)]
    pub matrix: MatrixJson,
    pub basis: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g0: Option<ComplexJson>,
}

/// `row_label,col_label,abs,phase` for every element of a square matrix.
pub fn matrix_bar_chart_csv(m: &ComplexMatrix, label: impl Fn(usize) -> String) -> String {
    let mut out = String::from("row_label,col_label,abs,phase\n");
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let z = m[(r, c)];
            let phase = if z.norm() > 0.0 { z.arg() } else { 0.0 };
            writeln!(out, "{},{},{:.12e},{:.12e}", label(r), label(c), z.norm(), phase).unwrap();
        }
    }
    out
}

/// The fluorescence measurement characterised by the coherence factor `g₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementModel {
    g0: C64,
}

impl MeasurementModel {
    pub fn new(g0: C64) -> Result<Self> {
        if g0.norm() > 1.0 + G0_TOL || !g0.norm().is_finite() {
            return Err(Error::InvalidG0(g0.norm()));
        }
        Ok(Self { g0 })
    }

    pub fn g0(&self) -> C64 {
        self.g0
    }

    /// `1 − |g₀|²`, clamped to `[0, 1]`.
    pub fn p_scatt(&self) -> f64 {
        (1.0 - self.g0.norm_sqr()).clamp(0.0, 1.0)
    }

    pub fn phase(&self) -> f64 {
        self.g0.arg()
    }

    /// `(E₁, E₀)` with `E₁ = P_scatt |0⟩⟨0|`, `E₀ = 1 − E₁`.
    pub fn effects(&self) -> (ComplexMatrix, ComplexMatrix) {
        let p = self.p_scatt();
        let e1 = ComplexMatrix::from_real_diag(&[p, 0.0, 0.0]);
        let e0 = ComplexMatrix::from_real_diag(&[1.0 - p, 1.0, 1.0]);
        (e1, e0)
    }

    /// `G = e^{iφ}|0⟩⟨0| + |1⟩⟨1| + |2⟩⟨2|`
    pub fn phase_unitary(&self) -> ComplexMatrix {
        let mut g = ComplexMatrix::identity(DIM);
        g[(0, 0)] = C64::from_polar(1.0, self.phase());
        g
    }

    /// `{√E₁, G√E₀}`
    pub fn kraus_operators(&self) -> [ComplexMatrix; 2] {
        let p = self.p_scatt();
        let sqrt_e1 = ComplexMatrix::from_real_diag(&[p.sqrt(), 0.0, 0.0]);
        let sqrt_e0 = ComplexMatrix::from_real_diag(&[(1.0 - p).sqrt(), 1.0, 1.0]);
        [sqrt_e1, &self.phase_unitary() * &sqrt_e0]
    }
}

/// `ρ ↦ Σ_k Π_k ρ Π_k` for a complete set of orthogonal projectors.
pub fn lueders_channel(projectors: &[ComplexMatrix]) -> Result<ProcessChoi> {
    if projectors.is_empty() {
        return Err(Error::InvalidProjectors("empty projector list".into()));
    }
    for p in projectors {
        if p.rows() != DIM || p.cols() != DIM {
            return Err(Error::DimensionMismatch("projectors must be 3x3".into()));
        }
    }
    for (k, pk) in projectors.iter().enumerate() {
        for (l, pl) in projectors.iter().enumerate() {
            let prod = pk * pl;
            let expected = if k == l { pk.clone() } else { ComplexMatrix::zeros(DIM, DIM) };
            let defect = prod.max_abs_diff(&expected);
            if defect > PROJECTOR_TOL {
                return Err(Error::InvalidProjectors(format!("Π_{k} Π_{l} deviates from δ_kl Π_k by {defect:.3e}")));
            }
        }
    }
    let sum = projectors.iter().fold(ComplexMatrix::zeros(DIM, DIM), |acc, p| &acc + p);
    let defect = sum.max_abs_diff(&ComplexMatrix::identity(DIM));
    if defect > PROJECTOR_TOL {
        return Err(Error::InvalidProjectors(format!("projectors sum to identity only within {defect:.3e}")));
    }
    let projectors = projectors.to_vec();
    Ok(ProcessChoi::from_map(move |rho| {
        projectors.iter().fold(ComplexMatrix::zeros(DIM, DIM), |acc, p| &acc + &(&(p * rho) * p))
    }))
}

/// `χ_m = |00⟩⟨00| + |ξ⟩⟨ξ| + g₀|00⟩⟨ξ| + g₀*|ξ⟩⟨00|`, `|ξ⟩ = |11⟩ + |22⟩`.
pub fn measurement_channel(g0: C64) -> Result<ProcessChoi> {
    MeasurementModel::new(g0)?;
    let mut e00 = vec![ZERO; CHOI_DIM];
    e00[0] = ONE;
    let mut xi = vec![ZERO; CHOI_DIM];
    xi[DIM + 1] = ONE;
    xi[2 * DIM + 2] = ONE;
    let chi = &(&(&ComplexMatrix::outer(&e00, &e00) + &ComplexMatrix::outer(&xi, &xi))
        + &ComplexMatrix::outer(&e00, &xi).scale(g0))
        + &ComplexMatrix::outer(&xi, &e00).scale(g0.conj());
    Ok(ProcessChoi { matrix: chi })
}

/// Choi matrix built from Kraus operators, with the trace-preservation check
/// reported rather than enforced.
#[derive(Clone, Debug)]
pub struct KrausChoi {
    pub choi: ProcessChoi,
    /// `‖Σ K†K − 1‖_max`
    pub completeness_defect: f64,
}

impl KrausChoi {
    pub fn is_trace_preserving(&self) -> bool {
        self.completeness_defect <= COMPLETENESS_TOL
    }
}

/// `χ = Σ_k |K_k⟩⟩⟨⟨K_k|` with `|K⟩⟩ = Σ_i K|i⟩ ⊗ |i⟩`. Trace-increasing
/// operator sets are rejected; trace-decreasing ones are flagged.
pub fn kraus_channel(operators: &[ComplexMatrix]) -> Result<KrausChoi> {
    let mut chi = ComplexMatrix::zeros(CHOI_DIM, CHOI_DIM);
    let mut completeness = ComplexMatrix::zeros(DIM, DIM);
    for k in operators {
        if k.rows() != DIM || k.cols() != DIM {
            return Err(Error::DimensionMismatch("Kraus operators must be 3x3".into()));
        }
        let vec: Vec<C64> = k.as_slice().to_vec();
        chi = &chi + &ComplexMatrix::outer(&vec, &vec);
        completeness = &completeness + &(&k.adjoint() * k);
    }
    let slack = &ComplexMatrix::identity(DIM) - &completeness;
    let eig = herm_eig(&slack)?;
    if eig.values[0] < -COMPLETENESS_TOL {
        return Err(Error::InvalidParameter(format!(
            "Kraus operators increase trace (Σ K†K has eigenvalue {:.6})",
            1.0 - eig.values[0]
        )));
    }
    Ok(KrausChoi { choi: ProcessChoi { matrix: chi }, completeness_defect: slack.max_abs() })
}

/// `Λ[ρ] = tr_aux[χ (1 ⊗ ρᵀ)]`
pub fn apply(chi: &ProcessChoi, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    if rho.rows() != DIM || rho.cols() != DIM {
        return Err(Error::DimensionMismatch(format!("state must be 3x3, got {}x{}", rho.rows(), rho.cols())));
    }
    let m = &chi.matrix;
    Ok(ComplexMatrix::from_fn(DIM, DIM, |s, t| {
        let mut acc = ZERO;
        for a in 0..DIM {
            for b in 0..DIM {
                acc += m[(s * DIM + a, t * DIM + b)] * rho[(a, b)];
            }
        }
        acc
    }))
}

/// Unselective pointer-model process
/// `ρ ↦ Σ_j ⟨ω_j| e^{-iHτ} (ρ ⊗ |Φ⟩⟨Φ|) e^{iHτ} |ω_j⟩`.
///
/// `hamiltonian` acts on `sys ⊗ pointer` (system index slow) in units of
/// ħ = 1, so `hamiltonian·tau` is dimensionless.
pub fn pointer_model_channel(
    hamiltonian: &ComplexMatrix,
    tau: f64,
    pointer_init: &[C64],
    pointer_basis: &[Vec<C64>],
) -> Result<ProcessChoi> {
    let dp = pointer_init.len();
    if dp == 0 || dp > 4 {
        return Err(Error::DimensionMismatch(format!("pointer dimension {dp} outside 1..=4")));
    }
    if hamiltonian.rows() != DIM * dp || hamiltonian.cols() != DIM * dp {
        return Err(Error::DimensionMismatch(format!(
            "Hamiltonian is {}x{}, expected {n}x{n}",
            hamiltonian.rows(),
            hamiltonian.cols(),
            n = DIM * dp
        )));
    }
    let norm = numeric::inner(pointer_init, pointer_init).re;
    if (norm - 1.0).abs() > COMPLETENESS_TOL {
        return Err(Error::NotNormalized(norm));
    }
    if pointer_basis.len() != dp || pointer_basis.iter().any(|w| w.len() != dp) {
        return Err(Error::DimensionMismatch("pointer basis must have pointer-dimension many vectors".into()));
    }
    let mut defect = 0.0f64;
    for (k, wk) in pointer_basis.iter().enumerate() {
        for (l, wl) in pointer_basis.iter().enumerate() {
            let target = if k == l { ONE } else { ZERO };
            defect = defect.max((numeric::inner(wk, wl) - target).norm());
        }
    }
    if defect > COMPLETENESS_TOL {
        return Err(Error::NonOrthonormalBasis(defect));
    }

    let u = numeric::unitary_propagator(hamiltonian, tau)?;
    let u_dag = u.adjoint();
    let pointer_state = ComplexMatrix::projector(pointer_init);
    let basis = pointer_basis.to_vec();
    Ok(ProcessChoi::from_map(move |rho| {
        let joint = &(&u * &rho.kron(&pointer_state)) * &u_dag;
        let mut out = ComplexMatrix::zeros(DIM, DIM);
        for w in &basis {
            for s in 0..DIM {
                for t in 0..DIM {
                    let mut acc = ZERO;
                    for p in 0..dp {
                        for q in 0..dp {
                            acc += w[p].conj() * joint[(s * dp + p, t * dp + q)] * w[q];
                        }
                    }
                    out[(s, t)] += acc;
                }
            }
        }
        out
    }))
}

/// Uhlmann fidelity rescaled for trace-3 Choi matrices,
/// `F = (1/9) [tr √(√χ_a χ_b √χ_a)]²`, clamped to `[0, 1]`.
pub fn process_fidelity(a: &ProcessChoi, b: &ProcessChoi) -> Result<f64> {
    let sqrt_a = numeric::psd_sqrt(&a.matrix)?;
    let eig_b = herm_eig(&b.matrix)?;
    check_psd(&eig_b)?;
    let inner = &(&sqrt_a * &b.matrix) * &sqrt_a;
    let eig = herm_eig(&inner.hermitian_part())?;
    // Round-off eigenvalues of rank-deficient products would otherwise add
    // their square roots (~1e-8 each) to the trace.
    let floor = 1e-14 * eig.values.last().copied().unwrap_or(0.0).abs();
    let tr: f64 = eig.values.iter().filter(|&&l| l > floor).map(|&l| l.sqrt()).sum();
    Ok((tr * tr / (CHOI_DIM as f64)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{density, target_states, QutritPureState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn basis_projector(k: usize) -> ComplexMatrix {
        density(&QutritPureState::basis(k))
    }

    fn random_density(rng: &mut impl Rng) -> ComplexMatrix {
        let b = ComplexMatrix::from_fn(3, 3, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let m = &b.adjoint() * &b;
        m.scale(ONE / m.trace())
    }

    #[test]
    fn identity_choi_is_xi_prime_projector() {
        let mut xi = vec![ZERO; 9];
        for i in 0..3 {
            xi[i * 3 + i] = ONE;
        }
        let expected = ComplexMatrix::projector(&xi);
        let single = lueders_channel(&[ComplexMatrix::identity(3)]).unwrap();
        assert!(single.matrix().max_abs_diff(&expected) < 1e-15);
        assert!(ProcessChoi::identity().matrix().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn two_outcome_lueders_equals_g0_zero() {
        let p0 = basis_projector(0);
        let rest = &ComplexMatrix::identity(3) - &p0;
        let luders = lueders_channel(&[p0, rest]).unwrap();
        let model = measurement_channel(ZERO).unwrap();
        assert!(luders.matrix().max_abs_diff(model.matrix()) < 1e-15);
    }

    #[test]
    fn full_dephasing_of_uniform_state() {
        let chi = lueders_channel(&[basis_projector(0), basis_projector(1), basis_projector(2)]).unwrap();
        let rho = ComplexMatrix::from_fn(3, 3, |_, _| c(1.0 / 3.0, 0.0));
        let out = chi.apply(&rho).unwrap();
        assert!(out.max_abs_diff(&ComplexMatrix::from_real_diag(&[1.0 / 3.0; 3])) < 1e-15);
    }

    #[test]
    fn lueders_rejects_bad_projectors() {
        let p0 = basis_projector(0);
        let overlapping = &p0 + &basis_projector(1);
        assert!(matches!(lueders_channel(&[p0.clone(), overlapping]), Err(Error::InvalidProjectors(_))));
        assert!(matches!(lueders_channel(&[p0]), Err(Error::InvalidProjectors(_))));
    }

    #[test]
    fn g0_one_is_identity() {
        let chi = measurement_channel(ONE).unwrap();
        assert!(chi.matrix().max_abs_diff(ProcessChoi::identity().matrix()) < 1e-15);
    }

    #[test]
    fn g0_out_of_range_is_rejected() {
        assert!(matches!(measurement_channel(c(0.8, 0.7)), Err(Error::InvalidG0(_))));
    }

    #[test]
    fn one_third_scattering_scales_coherence() {
        // g₀ = √(2/3): ρ₀₁ = 1/2 → 0.5·0.8165 = 0.4082.
        let g0 = c((2.0f64 / 3.0).sqrt(), 0.0);
        let chi = measurement_channel(g0).unwrap();
        let rho = density(&target_states()[3]);
        let out = chi.apply(&rho).unwrap();
        assert!((out[(0, 1)].re - 0.408248290463863).abs() < 1e-12);
        assert_eq!(out[(1, 2)], rho[(1, 2)]);
        assert!((MeasurementModel::new(g0).unwrap().p_scatt() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kraus_model_matches_choi_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let g0 = C64::from_polar(rng.random_range(0.0..1.0), rng.random_range(-3.1..3.1));
            let model = MeasurementModel::new(g0).unwrap();
            let built = kraus_channel(&model.kraus_operators()).unwrap();
            assert!(built.is_trace_preserving());
            let direct = measurement_channel(g0).unwrap();
            assert!(built.choi.matrix().max_abs_diff(direct.matrix()) < 1e-12);
        }
    }

    #[test]
    fn kraus_identity_and_dephasing() {
        let id = kraus_channel(&[ComplexMatrix::identity(3)]).unwrap();
        assert!(id.choi.matrix().max_abs_diff(ProcessChoi::identity().matrix()) < 1e-15);

        let deph = kraus_channel(&[basis_projector(0), basis_projector(1), basis_projector(2)]).unwrap();
        let m = deph.choi.matrix();
        for r in 0..9 {
            for col in 0..9 {
                let on_diag_pattern = r == col && r % 4 == 0;
                assert_eq!(m[(r, col)], if on_diag_pattern { ONE } else { ZERO });
            }
        }
    }

    #[test]
    fn kraus_flags_trace_decrease_and_rejects_increase() {
        let half = ComplexMatrix::identity(3).scale_real(0.5);
        let flagged = kraus_channel(&[half]).unwrap();
        assert!(!flagged.is_trace_preserving());
        let double = ComplexMatrix::identity(3).scale_real(2.0);
        assert!(kraus_channel(&[double]).is_err());
    }

    #[test]
    fn apply_identity_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random_density(&mut rng);
        let out = ProcessChoi::identity().apply(&rho).unwrap();
        assert!(out.max_abs_diff(&rho) < 1e-15);
    }

    #[test]
    fn apply_scales_zero_two_coherence() {
        let g0 = c(0.3, 0.4);
        let chi = measurement_channel(g0).unwrap();
        let rho = density(&target_states()[6]);
        let out = chi.apply(&rho).unwrap();
        assert!((out[(0, 2)] - rho[(0, 2)] * g0).norm() < 1e-15);

        let rho = density(&target_states()[8]);
        assert_eq!(chi.apply(&rho).unwrap(), rho);
    }

    #[test]
    fn apply_rejects_wrong_dimension() {
        let rho = ComplexMatrix::identity(4);
        assert!(matches!(ProcessChoi::identity().apply(&rho), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn lueders_is_idempotent_and_commutes() {
        let p0 = basis_projector(0);
        let a = lueders_channel(&[p0.clone(), &ComplexMatrix::identity(3) - &p0]).unwrap();
        assert!(a.after(&a).matrix().max_abs_diff(a.matrix()) < 1e-10);

        let p2 = basis_projector(2);
        let b = lueders_channel(&[p2.clone(), &ComplexMatrix::identity(3) - &p2]).unwrap();
        assert!(a.after(&b).matrix().max_abs_diff(b.after(&a).matrix()) < 1e-10);
    }

    #[test]
    fn kraus_extraction_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let b = ComplexMatrix::from_fn(9, 9, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let chi = ProcessChoi::from_matrix(&b.adjoint() * &b).unwrap();
            let ops = chi.kraus_operators().unwrap();
            let rebuilt = ops.iter().fold(ComplexMatrix::zeros(9, 9), |acc, k| {
                let v = k.as_slice().to_vec();
                &acc + &ComplexMatrix::outer(&v, &v)
            });
            assert!(rebuilt.max_abs_diff(chi.matrix()) < 1e-9);
        }
        let ops = measurement_channel(c(0.5, 0.0)).unwrap().kraus_operators().unwrap();
        assert_eq!(ops.len(), 2);
    }

    #[test]
    fn tp_constructions_have_unit_sys_trace() {
        for g in [0.0, 0.5, 1.0] {
            let chi = measurement_channel(c(g, 0.0)).unwrap();
            assert!(chi.tp_deviation() < 1e-12);
        }
        // By-hand expansion at g₀ = 0.5: tr_sys picks |00⟩⟨00| (→|0⟩⟨0|) and
        // |ξ⟩⟨ξ| (→|1⟩⟨1|+|2⟩⟨2|); the g₀ cross terms have s ≠ s'.
        let chi = measurement_channel(c(0.5, 0.0)).unwrap();
        assert!(chi.sys_trace().max_abs_diff(&ComplexMatrix::identity(3)) < 1e-12);
    }

    fn controlled_flip_hamiltonian(tau: f64) -> ComplexMatrix {
        // (π/2τ)|0⟩⟨0| ⊗ (1 − X) so that e^{-iHτ} = |0⟩⟨0|⊗X + (1−|0⟩⟨0|)⊗1.
        let x = ComplexMatrix::from_fn(2, 2, |i, j| if i != j { ONE } else { ZERO });
        let gen = &ComplexMatrix::identity(2) - &x;
        basis_projector(0).kron(&gen).scale_real(std::f64::consts::PI / (2.0 * tau))
    }

    fn qubit_basis() -> Vec<Vec<C64>> {
        vec![vec![ONE, ZERO], vec![ZERO, ONE]]
    }

    #[test]
    fn pointer_zero_hamiltonian_is_identity() {
        let h = ComplexMatrix::zeros(6, 6);
        let chi = pointer_model_channel(&h, 1e-6, &[ONE, ZERO], &qubit_basis()).unwrap();
        assert!(chi.matrix().max_abs_diff(ProcessChoi::identity().matrix()) < 1e-12);
    }

    #[test]
    fn pointer_controlled_flip_realizes_lueders() {
        let tau = 1e-6;
        let chi = pointer_model_channel(&controlled_flip_hamiltonian(tau), tau, &[ONE, ZERO], &qubit_basis()).unwrap();
        let p0 = basis_projector(0);
        let luders = lueders_channel(&[p0.clone(), &ComplexMatrix::identity(3) - &p0]).unwrap();
        assert!(chi.matrix().max_abs_diff(luders.matrix()) < 1e-10);
        assert!(chi.tp_deviation() < 1e-10);
    }

    #[test]
    fn pointer_in_shift_eigenstate_stays_close_to_identity() {
        let tau = 1e-6;
        let h = controlled_flip_hamiltonian(tau);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = [c(s, 0.0), c(s, 0.0)];
        let unbiased = pointer_model_channel(&h, tau, &plus, &qubit_basis()).unwrap();
        let measuring = pointer_model_channel(&h, tau, &[ONE, ZERO], &qubit_basis()).unwrap();
        let id = ProcessChoi::identity();
        let f_unbiased = process_fidelity(&unbiased, &id).unwrap();
        let f_measuring = process_fidelity(&measuring, &id).unwrap();
        assert!(f_unbiased > f_measuring, "{f_unbiased} vs {f_measuring}");
    }

    #[test]
    fn pointer_readout_basis_does_not_change_unselective_channel() {
        let tau = 1e-6;
        let h = controlled_flip_hamiltonian(tau);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rotated = vec![vec![c(s, 0.0), c(0.0, s)], vec![c(0.0, s), c(s, 0.0)]];
        let a = pointer_model_channel(&h, tau, &[ONE, ZERO], &qubit_basis()).unwrap();
        let b = pointer_model_channel(&h, tau, &[ONE, ZERO], &rotated).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-12);
    }

    #[test]
    fn pointer_validates_inputs() {
        let h = ComplexMatrix::zeros(6, 6);
        let skew = vec![vec![ONE, ZERO], vec![ONE, ZERO]];
        assert!(matches!(pointer_model_channel(&h, 1.0, &[ONE, ZERO], &skew), Err(Error::NonOrthonormalBasis(_))));
        assert!(matches!(
            pointer_model_channel(&ComplexMatrix::zeros(5, 5), 1.0, &[ONE, ZERO], &qubit_basis()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn fidelity_identity_vs_lueders_is_five_ninths() {
        let f = process_fidelity(&ProcessChoi::identity(), &measurement_channel(ZERO).unwrap()).unwrap();
        assert!((f - 5.0 / 9.0).abs() < 1e-9, "{f}");
        let g = process_fidelity(&measurement_channel(ZERO).unwrap(), &ProcessChoi::identity()).unwrap();
        assert!((f - g).abs() < 1e-9);
    }

    #[test]
    fn self_fidelity_is_one() {
        for g in [0.0, 0.5, 1.0] {
            let chi = measurement_channel(c(g, 0.0)).unwrap();
            assert!((process_fidelity(&chi, &chi).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fidelity_rejects_non_psd() {
        let bad = ProcessChoi::from_matrix(ComplexMatrix::identity(9).scale_real(-1.0)).unwrap();
        assert!(matches!(process_fidelity(&bad, &ProcessChoi::identity()), Err(Error::NotPsd(_))));
    }

    #[test]
    fn bar_chart_has_81_rows() {
        let csv = measurement_channel(c(0.5, 0.0)).unwrap().bar_chart_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "row_label,col_label,abs,phase");
        assert_eq!(lines.len(), 82);
        assert!(lines[1].starts_with("00,00,1.0"));
    }

    #[test]
    fn choi_json_carries_metadata() {
        let chi = measurement_channel(c(0.5, 0.0)).unwrap();
        let v = serde_json::to_value(chi.to_json(Some(c(0.5, 0.0)))).unwrap();
        assert_eq!(v["basis"], "sys⊗aux");
        assert_eq!(v["rows"], 9);
        assert_eq!(v["g0"]["re"], 0.5);
    }
}
