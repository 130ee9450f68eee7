//! Backward Riccati equations of the LQ closed form.
//!
//! With `c = a − αβ` both cases read `γ̇ + G(γ) = 0`, `γ(T) = 1`:
//!
//! ```text
//! Case 1 (ξ ≡ 1):  G(γ) = (2c + θ(α+σ)) γ − b² γ² + β − β²/θ
//! Case 2 (ξ = γ):  G(γ) = (2c + β) γ + (θ(α+σ) − b²) γ² − β²/θ
//! ```
//!
//! and the multiplier of `ρ` is the constant `λ = 1/θ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LqSpec, TimeGrid};

/// `|γ|` above this is treated as a finite-time escape.
pub const BLOW_UP_THRESHOLD: f64 = 1e8;

/// Choice of the deterministic weights `ξ₁ = ξ₂` in the ansatz `ℓ = (ξ₁ x, ξ₂ x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    Case1,
    Case2,
}

impl Case {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(Self::Case1),
            2 => Some(Self::Case2),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Self::Case1 => 1,
            Self::Case2 => 2,
        }
    }

    /// `ξ(t)` given `γ(t)`.
    pub fn xi(self, gamma: f64) -> f64 {
        match self {
            Self::Case1 => 1.0,
            Self::Case2 => gamma,
        }
    }

    /// `G(γ)` in `γ̇ + G(γ) = 0`.
    pub fn generator(self, spec: &LqSpec, g: f64) -> f64 {
        let c = spec.c();
        let th = spec.theta;
        let b2 = spec.b_gain * spec.b_gain;
        let s = spec.alpha + spec.sigma;
        match self {
            Self::Case1 => (2.0 * c + th * s) * g - b2 * g * g + spec.beta - spec.beta * spec.beta / th,
            Self::Case2 => (2.0 * c + spec.beta) * g + (th * s - b2) * g * g - spec.beta * spec.beta / th,
        }
    }
}

/// Gain `γ` on a grid together with `λ = 1/θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub case: Case,
    pub gamma: Vec<f64>,
    pub lambda: f64,
    pub spec: LqSpec,
    pub grid: TimeGrid,
}

impl RiccatiSolution {
    pub fn gamma_at(&self, step: usize) -> f64 {
        self.gamma[step]
    }

    /// `ξ(t_k)` for the solution's case.
    pub fn xi(&self, step: usize) -> f64 {
        self.case.xi(self.gamma[step])
    }

    /// Largest `|γ − γ_ref|` over the nodes of `self`. `reference` must live on
    /// a refinement of this grid.
    pub fn max_deviation(&self, reference: &RiccatiSolution) -> Result<f64> {
        let n = self.grid.n_steps();
        let m = reference.grid.n_steps();
        if !m.is_multiple_of(n) || (self.grid.horizon() - reference.grid.horizon()).abs() > 0.0 {
            return Err(Error::Shape(format!("grid with {m} steps does not refine {n} steps")));
        }
        let r = m / n;
        Ok((0..=n)
            .map(|k| (self.gamma[k] - reference.gamma[k * r]).abs())
            .fold(0.0, f64::max))
    }
}

fn solve(case: Case, spec: &LqSpec, grid: &TimeGrid) -> Result<RiccatiSolution> {
    spec.validate()?;
    if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(crate::error::invalid("T", "grid horizon differs from the scenario horizon"));
    }
    let n = grid.n_steps();
    let h = -grid.dt();
    let rhs = |g: f64| -case.generator(spec, g);
    let mut gamma = vec![0.0; n + 1];
    gamma[n] = 1.0;
    for k in (0..n).rev() {
        let g = gamma[k + 1];
        let k1 = rhs(g);
        let k2 = rhs(g + 0.5 * h * k1);
        let k3 = rhs(g + 0.5 * h * k2);
        let k4 = rhs(g + h * k3);
        let next = g + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() || next.abs() > BLOW_UP_THRESHOLD {
            return Err(Error::RiccatiBlowUp {
                escape_time: grid.t(k),
                threshold: BLOW_UP_THRESHOLD,
            });
        }
        gamma[k] = next;
    }
    Ok(RiccatiSolution {
        case,
        gamma,
        lambda: 1.0 / spec.theta,
        spec: *spec,
        grid: grid.clone(),
    })
}

pub fn solve_case1(spec: &LqSpec, grid: &TimeGrid) -> Result<RiccatiSolution> {
    solve(Case::Case1, spec, grid)
}

pub fn solve_case2(spec: &LqSpec, grid: &TimeGrid) -> Result<RiccatiSolution> {
    solve(Case::Case2, spec, grid)
}

pub fn solve_riccati(case: Case, spec: &LqSpec, grid: &TimeGrid) -> Result<RiccatiSolution> {
    solve(case, spec, grid)
}

/// Max over interval midpoints of `|γ̇ + G(γ)|`, where `γ` and `γ̇` come from
/// the cubic Hermite interpolant with nodal slopes `−G(γ_k)`.
pub fn riccati_residual(sol: &RiccatiSolution) -> f64 {
    let h = sol.grid.dt();
    let slope = |g: f64| -sol.case.generator(&sol.spec, g);
    sol.gamma
        .windows(2)
        .map(|w| {
            let (g0, g1) = (w[0], w[1]);
            let (d0, d1) = (slope(g0), slope(g1));
            let mid = 0.5 * (g0 + g1) + h / 8.0 * (d0 - d1);
            let dmid = 1.5 * (g1 - g0) / h - 0.25 * (d0 + d1);
            (dmid + sol.case.generator(&sol.spec, mid)).abs()
        })
        .fold(0.0, f64::max)
}
