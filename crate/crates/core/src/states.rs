//! Qutrit states and the nine-state preparation/measurement set.
//!
//! Rotations act on the two-level subspace `{|0⟩, |ℓ⟩}` as
//! `R(φ) = exp(-i φ σ/2)` with `σ_{-x} = -σ_x`, `σ_{-y} = -σ_y`. In that
//! convention `R¹_y(π)|0⟩ = |1⟩` and `R¹_{-x}(π/2)|0⟩ = (|0⟩ + i|1⟩)/√2`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ComplexMatrix, C64, I, ONE, ZERO};

pub const DIM: usize = 3;
const NORM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct QutritPureState {
    amplitudes: [C64; DIM],
}

impl QutritPureState {
    pub fn new(amplitudes: [C64; DIM]) -> Result<Self> {
        let norm_sqr: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm_sqr));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes `amplitudes`; fails only for the zero vector.
    pub fn normalized(amplitudes: [C64; DIM]) -> Result<Self> {
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::NotNormalized(0.0));
        }
        Ok(Self { amplitudes: amplitudes.map(|a| a / norm) })
    }

    pub fn basis(level: usize) -> Self {
        let mut amplitudes = [ZERO; DIM];
        amplitudes[level] = ONE;
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &[C64; DIM] {
        &self.amplitudes
    }

    /// `|⟨self|other⟩|`, the global-phase-free overlap.
    pub fn overlap(&self, other: &Self) -> f64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum::<C64>().norm()
    }

    pub fn to_json(&self) -> StateJson {
        StateJson {
            re: self.amplitudes.iter().map(|a| a.re).collect(),
            im: self.amplitudes.iter().map(|a| a.im).collect(),
        }
    }

    pub fn from_json(json: &StateJson) -> Result<Self> {
        if json.re.len() != DIM || json.im.len() != DIM {
            return Err(Error::DimensionMismatch("state JSON needs three amplitudes".into()));
        }
        Self::new(std::array::from_fn(|k| C64::new(json.re[k], json.im[k])))
    }
}

/// `{"re":[a0,a1,a2],"im":[b0,b1,b2]}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateJson {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// `|ψ⟩⟨ψ|`
pub fn density(psi: &QutritPureState) -> ComplexMatrix {
    ComplexMatrix::projector(psi.amplitudes())
}

/// `(1-ε)ρ + ε·1/3`
pub fn depolarize(rho: &ComplexMatrix, strength: f64) -> ComplexMatrix {
    let mixed = ComplexMatrix::identity(rho.rows()).scale_real(rho.trace().re / rho.rows() as f64);
    &rho.scale_real(1.0 - strength) + &mixed.scale_real(strength)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Level {
    fn index(self) -> usize {
        match self {
            Level::One => 1,
            Level::Two => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "-y")]
    MinusY,
}

impl Axis {
    /// `σ_axis` as a 2×2 matrix in `(|0⟩, |ℓ⟩)` order.
    fn pauli(self) -> [[C64; 2]; 2] {
        let sx = [[ZERO, ONE], [ONE, ZERO]];
        let sy = [[ZERO, -I], [I, ZERO]];
        let neg = |m: [[C64; 2]; 2]| m.map(|row| row.map(|z| -z));
        match self {
            Axis::X => sx,
            Axis::MinusX => neg(sx),
            Axis::Y => sy,
            Axis::MinusY => neg(sy),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::MinusX => "-x",
            Axis::Y => "y",
            Axis::MinusY => "-y",
        })
    }
}

/// One pulse `R^ℓ_axis(angle)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub level: Level,
    pub axis: Axis,
    pub angle: f64,
}

impl Pulse {
    pub fn new(level: Level, axis: Axis, angle: f64) -> Self {
        Self { level, axis, angle }
    }

    pub fn unitary(&self) -> ComplexMatrix {
        rotation_unitary(self.level, self.axis, self.angle)
    }
}

/// `exp(-i·angle·σ_axis/2)` on `span{|0⟩, |level⟩}`, identity on the third level.
pub fn rotation_unitary(level: Level, axis: Axis, angle: f64) -> ComplexMatrix {
    let l = level.index();
    let sigma = axis.pauli();
    let c = C64::new((angle / 2.0).cos(), 0.0);
    let s = C64::new(0.0, -(angle / 2.0).sin());
    let idx = [0, l];
    let mut u = ComplexMatrix::identity(DIM);
    for (a, &ia) in idx.iter().enumerate() {
        for (b, &ib) in idx.iter().enumerate() {
            let diag = if a == b { c } else { ZERO };
            u[(ia, ib)] = diag + s * sigma[a][b];
        }
    }
    u
}

/// Product of a pulse list where the *last* pulse acts first, matching the
/// written operator order `R_a R_b`.
pub fn sequence_unitary(pulses: &[Pulse]) -> ComplexMatrix {
    pulses.iter().fold(ComplexMatrix::identity(DIM), |acc, p| &acc * &p.unitary())
}

#[derive(Clone, Debug)]
pub struct PreparationUnitary {
    /// 1-based.
    pub index: usize,
    /// Written order: the last entry is applied first.
    pub pulses: Vec<Pulse>,
    pub matrix: ComplexMatrix,
}

impl PreparationUnitary {
    fn new(index: usize, pulses: Vec<Pulse>) -> Self {
        let matrix = sequence_unitary(&pulses);
        Self { index, pulses, matrix }
    }

    /// `U_j|0⟩`
    pub fn state(&self) -> QutritPureState {
        let col = self.matrix.column(0);
        QutritPureState { amplitudes: [col[0], col[1], col[2]] }
    }

    pub fn label(&self) -> String {
        if self.pulses.is_empty() {
            return "1".into();
        }
        self.pulses
            .iter()
            .map(|p| format!("R{}_{}({})", p.level.index(), p.axis, angle_label(p.angle)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn angle_label(angle: f64) -> String {
    if (angle - PI).abs() < 1e-12 {
        "pi".into()
    } else if (angle - FRAC_PI_2).abs() < 1e-12 {
        "pi/2".into()
    } else {
        format!("{angle}")
    }
}

/// The nine preparations, in order:
/// `|0⟩, |1⟩, |2⟩, (|0⟩+|1⟩)/√2, (|0⟩+i|1⟩)/√2, (|0⟩+|2⟩)/√2,
/// (|0⟩+i|2⟩)/√2, (|1⟩+|2⟩)/√2, (|1⟩+i|2⟩)/√2`.
///
/// Entry 9 uses `R²_{-y}(π) R¹_{-x}(π/2)`; with a `+y` second pulse the
/// sequence would give `(|1⟩-i|2⟩)/√2` in any convention that also yields
/// entries 4, 5 and 8.
pub fn preparation_set() -> Vec<PreparationUnitary> {
    use Axis::*;
    use Level::*;
    let p = Pulse::new;
    let sequences: [Vec<Pulse>; 9] = [
        vec![],
        vec![p(One, Y, PI)],
        vec![p(Two, Y, PI)],
        vec![p(One, Y, FRAC_PI_2)],
        vec![p(One, MinusX, FRAC_PI_2)],
        vec![p(Two, Y, FRAC_PI_2)],
        vec![p(Two, MinusX, FRAC_PI_2)],
        vec![p(Two, Y, PI), p(One, Y, FRAC_PI_2)],
        vec![p(Two, MinusY, PI), p(One, MinusX, FRAC_PI_2)],
    ];
    sequences.into_iter().enumerate().map(|(k, seq)| PreparationUnitary::new(k + 1, seq)).collect()
}

/// The nine target states `|ψ_j⟩` written out directly.
pub fn target_states() -> Vec<QutritPureState> {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    let ih = C64::new(0.0, FRAC_1_SQRT_2);
    let raw = [
        [ONE, ZERO, ZERO],
        [ZERO, ONE, ZERO],
        [ZERO, ZERO, ONE],
        [h, h, ZERO],
        [h, ih, ZERO],
        [h, ZERO, h],
        [h, ZERO, ih],
        [ZERO, h, h],
        [ZERO, h, ih],
    ];
    raw.into_iter().map(|amplitudes| QutritPureState { amplitudes }).collect()
}
