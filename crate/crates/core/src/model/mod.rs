//! Scenario definitions: coefficient bundles for the general mean-field model
//! and the linear-quadratic special case.
//!
//! The controlled system is simulated in its merged form under the reference
//! measure, where `Y` is a Brownian motion independent of `W`:
//!
//! ```text
//! dρ = ρ β(t,x) dY
//! dx = [b(t,x,m,u) − α(t,x,m) β(t,x)] dt + σ(t,x,m) dW + α(t,x,m) dY
//! dξ = f(t,x,m,u) dt
//! ```
//!
//! with `m(t) = E[ρ(t) x(t)]`. Partial derivatives are supplied next to each
//! coefficient and can be audited with [`validate_model`].

mod grid;
mod poly;
mod validate;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use grid::TimeGrid;
pub use poly::{PolyTerm, Polynomial, PolynomialModel};
pub use validate::{validate_model, PartialCheck, ValidationReport};

/// `(t, x, m, u) -> R`
pub type StateControlFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, x, m) -> R`
pub type StateFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, x) -> R`
pub type ObservationFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `(x, m) -> R`
pub type TerminalFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Coefficient functions and their first partials in `x` and `m`.
///
/// Start from [`Coefficients::zero`] and override fields with struct update
/// syntax. All functions must be pure.
#[derive(Clone)]
pub struct Coefficients {
    pub b: StateControlFn,
    pub b_x: StateControlFn,
    pub b_m: StateControlFn,
    pub sigma: StateFn,
    pub sigma_x: StateFn,
    pub sigma_m: StateFn,
    pub alpha: StateFn,
    pub alpha_x: StateFn,
    pub alpha_m: StateFn,
    pub beta: ObservationFn,
    pub beta_x: ObservationFn,
    pub f: StateControlFn,
    pub f_x: StateControlFn,
    pub f_m: StateControlFn,
    pub h: TerminalFn,
    pub h_x: TerminalFn,
    pub h_m: TerminalFn,
}

impl Coefficients {
    /// Every coefficient and partial identically zero.
    pub fn zero() -> Self {
        let z4: StateControlFn = Arc::new(|_, _, _, _| 0.0);
        let z3: StateFn = Arc::new(|_, _, _| 0.0);
        let z2: ObservationFn = Arc::new(|_, _| 0.0);
        Self {
            b: z4.clone(),
            b_x: z4.clone(),
            b_m: z4.clone(),
            sigma: z3.clone(),
            sigma_x: z3.clone(),
            sigma_m: z3.clone(),
            alpha: z3.clone(),
            alpha_x: z3.clone(),
            alpha_m: z3,
            beta: z2.clone(),
            beta_x: z2.clone(),
            f: z4.clone(),
            f_x: z4.clone(),
            f_m: z4,
            h: z2.clone(),
            h_x: z2.clone(),
            h_m: z2,
        }
    }

    /// Effective drift `c = b − αβ` of the merged system.
    pub fn c(&self, t: f64, x: f64, m: f64, u: f64) -> f64 {
        (self.b)(t, x, m, u) - (self.alpha)(t, x, m) * (self.beta)(t, x)
    }

    pub fn c_x(&self, t: f64, x: f64, m: f64, u: f64) -> f64 {
        (self.b_x)(t, x, m, u)
            - (self.alpha_x)(t, x, m) * (self.beta)(t, x)
            - (self.alpha)(t, x, m) * (self.beta_x)(t, x)
    }

    pub fn c_m(&self, t: f64, x: f64, m: f64, u: f64) -> f64 {
        (self.b_m)(t, x, m, u) - (self.alpha_m)(t, x, m) * (self.beta)(t, x)
    }
}

impl fmt::Debug for Coefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Coefficients { .. }")
    }
}

/// Admissible control set `U = [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRange {
    pub lo: f64,
    pub hi: f64,
}

impl ControlRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(invalid("u_lo/u_hi", format!("need finite u_lo < u_hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn wide() -> Self {
        Self { lo: -100.0, hi: 100.0 }
    }

    /// Projects `u` onto the interval; the flag reports whether it moved.
    pub fn clamp(&self, u: f64) -> (f64, bool) {
        let c = u.clamp(self.lo, self.hi);
        (c, c != u)
    }

    pub fn contains(&self, u: f64) -> bool {
        (self.lo..=self.hi).contains(&u)
    }
}

impl Default for ControlRange {
    fn default() -> Self {
        Self::wide()
    }
}

/// A complete scenario: coefficients, risk sensitivity, horizon and initial state.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub coeffs: Coefficients,
    theta: f64,
    horizon: f64,
    x0: f64,
    coeff_bound: Option<f64>,
    controls: ControlRange,
}

impl ModelSpec {
    pub fn new(coeffs: Coefficients, theta: f64, horizon: f64, x0: f64) -> Result<Self> {
        if !theta.is_finite() || theta == 0.0 {
            return Err(invalid("theta", format!("risk-sensitivity index must be nonzero, got {theta}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
        }
        if !x0.is_finite() {
            return Err(invalid("x0", "initial state must be finite"));
        }
        Ok(Self {
            coeffs,
            theta,
            horizon,
            x0,
            coeff_bound: None,
            controls: ControlRange::wide(),
        })
    }

    /// Declares `|f|, |h| <= bound`. Enables the bracketing checks on `ψ` and `v`.
    pub fn with_coeff_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(invalid("coeff_bound_C", format!("must be nonnegative, got {bound}")));
        }
        self.coeff_bound = Some(bound);
        Ok(self)
    }

    pub fn with_controls(mut self, controls: ControlRange) -> Self {
        self.controls = controls;
        self
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        let mut out = Self::new(self.coeffs.clone(), theta, self.horizon, self.x0)?;
        out.coeff_bound = self.coeff_bound;
        out.controls = self.controls;
        Ok(out)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn coeff_bound(&self) -> Option<f64> {
        self.coeff_bound
    }

    pub fn controls(&self) -> ControlRange {
        self.controls
    }
}

/// Linear-quadratic scenario:
///
/// ```text
/// dx = (a x + b u) dt + σ dW + α dW̃,   dY = β x dt + dW̃,
/// cost  E exp θ[ ½∫u² dt + ½ x(T)² ]
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqSpec {
    pub a: f64,
    pub b_gain: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub theta: f64,
    pub horizon: f64,
    pub x0: f64,
    #[serde(default)]
    pub controls: ControlRange,
}

impl LqSpec {
    /// Reference scenario used by the acceptance suite and the CLI defaults.
    pub fn default_scenario() -> Self {
        Self {
            a: 0.3,
            b_gain: 1.0,
            alpha: 0.2,
            beta: 0.5,
            sigma: 0.4,
            theta: 1.0,
            horizon: 1.0,
            x0: 0.5,
            controls: ControlRange::wide(),
        }
    }

    /// Effective drift coefficient `c = a − αβ`.
    pub fn c(&self) -> f64 {
        self.a - self.alpha * self.beta
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a", self.a),
            ("b", self.b_gain),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("sigma", self.sigma),
            ("x0", self.x0),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(invalid(
                "theta",
                format!("the LQ closed form needs theta > 0, got {}", self.theta),
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(invalid("T", format!("horizon must be positive, got {}", self.horizon)));
        }
        ControlRange::new(self.controls.lo, self.controls.hi)?;
        Ok(())
    }
}

/// Expands an LQ scenario into the general coefficient representation.
pub fn expand_lq(spec: &LqSpec) -> Result<ModelSpec> {
    spec.validate()?;
    let LqSpec {
        a,
        b_gain,
        alpha,
        beta,
        sigma,
        ..
    } = *spec;
    let coeffs = Coefficients {
        b: Arc::new(move |_, x, _, u| a * x + b_gain * u),
        b_x: Arc::new(move |_, _, _, _| a),
        sigma: Arc::new(move |_, _, _| sigma),
        alpha: Arc::new(move |_, _, _| alpha),
        beta: Arc::new(move |_, x| beta * x),
        beta_x: Arc::new(move |_, _| beta),
        f: Arc::new(|_, _, _, u| 0.5 * u * u),
        h: Arc::new(|x, _| 0.5 * x * x),
        h_x: Arc::new(|x, _| x),
        ..Coefficients::zero()
    };
    Ok(ModelSpec::new(coeffs, spec.theta, spec.horizon, spec.x0)?.with_controls(spec.controls))
}
