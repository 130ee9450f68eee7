//! Polynomial coefficient family used by file-based custom scenarios.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Coefficients;
use crate::error::{invalid, Result};

const MAX_DEGREE: u32 = 16;

/// One monomial `coef · x^px · m^pm · u^pu`. Serialized as `[coef, px, pm, pu]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct PolyTerm {
    pub coef: f64,
    pub px: u32,
    pub pm: u32,
    pub pu: u32,
}

impl TryFrom<[f64; 4]> for PolyTerm {
    type Error = String;

    fn try_from(v: [f64; 4]) -> std::result::Result<Self, String> {
        if !v[0].is_finite() {
            return Err(format!("coefficient {} is not finite", v[0]));
        }
        let exp = |e: f64| -> std::result::Result<u32, String> {
            if e.fract() != 0.0 || !(0.0..=MAX_DEGREE as f64).contains(&e) {
                Err(format!("exponent {e} must be an integer in 0..={MAX_DEGREE}"))
            } else {
                Ok(e as u32)
            }
        };
        Ok(Self {
            coef: v[0],
            px: exp(v[1])?,
            pm: exp(v[2])?,
            pu: exp(v[3])?,
        })
    }
}

impl From<PolyTerm> for [f64; 4] {
    fn from(t: PolyTerm) -> Self {
        [t.coef, t.px as f64, t.pm as f64, t.pu as f64]
    }
}

fn powi(v: f64, p: u32) -> f64 {
    v.powi(p as i32)
}

/// Sum of monomials in `(x, m, u)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<PolyTerm>);

impl Polynomial {
    pub fn constant(c: f64) -> Self {
        Self(vec![PolyTerm {
            coef: c,
            px: 0,
            pm: 0,
            pu: 0,
        }])
    }

    pub fn eval(&self, x: f64, m: f64, u: f64) -> f64 {
        self.0
            .iter()
            .map(|t| t.coef * powi(x, t.px) * powi(m, t.pm) * powi(u, t.pu))
            .sum()
    }

    pub fn d_dx(&self, x: f64, m: f64, u: f64) -> f64 {
        self.0
            .iter()
            .filter(|t| t.px > 0)
            .map(|t| t.coef * t.px as f64 * powi(x, t.px - 1) * powi(m, t.pm) * powi(u, t.pu))
            .sum()
    }

    pub fn d_dm(&self, x: f64, m: f64, u: f64) -> f64 {
        self.0
            .iter()
            .filter(|t| t.pm > 0)
            .map(|t| t.coef * t.pm as f64 * powi(x, t.px) * powi(m, t.pm - 1) * powi(u, t.pu))
            .sum()
    }

    fn uses_u(&self) -> bool {
        self.0.iter().any(|t| t.pu > 0)
    }

    fn uses_m(&self) -> bool {
        self.0.iter().any(|t| t.pm > 0)
    }
}

/// Time-homogeneous polynomial scenario. `σ`, `α` may not depend on `u`;
/// `β` may depend on `x` only; `h` may not depend on `u`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    #[serde(default)]
    pub b: Polynomial,
    #[serde(default)]
    pub sigma: Polynomial,
    #[serde(default)]
    pub alpha: Polynomial,
    #[serde(default)]
    pub beta: Polynomial,
    #[serde(default)]
    pub f: Polynomial,
    #[serde(default)]
    pub h: Polynomial,
}

impl PolynomialModel {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.uses_u() {
            return Err(invalid("sigma", "diffusion coefficient may not depend on u"));
        }
        if self.alpha.uses_u() {
            return Err(invalid("alpha", "diffusion coefficient may not depend on u"));
        }
        if self.beta.uses_u() || self.beta.uses_m() {
            return Err(invalid("beta", "observation drift may depend on x only"));
        }
        if self.h.uses_u() {
            return Err(invalid("h", "terminal cost may not depend on u"));
        }
        Ok(())
    }

    pub fn to_coefficients(&self) -> Result<Coefficients> {
        self.validate()?;
        let b = Arc::new(self.b.clone());
        let sigma = Arc::new(self.sigma.clone());
        let alpha = Arc::new(self.alpha.clone());
        let beta = Arc::new(self.beta.clone());
        let f = Arc::new(self.f.clone());
        let h = Arc::new(self.h.clone());
        macro_rules! scu {
            ($p:ident, $method:ident) => {{
                let p = $p.clone();
                Arc::new(move |_t: f64, x: f64, m: f64, u: f64| p.$method(x, m, u))
            }};
        }
        macro_rules! sc {
            ($p:ident, $method:ident) => {{
                let p = $p.clone();
                Arc::new(move |_t: f64, x: f64, m: f64| p.$method(x, m, 0.0))
            }};
        }
        Ok(Coefficients {
            b: scu!(b, eval),
            b_x: scu!(b, d_dx),
            b_m: scu!(b, d_dm),
            sigma: sc!(sigma, eval),
            sigma_x: sc!(sigma, d_dx),
            sigma_m: sc!(sigma, d_dm),
            alpha: sc!(alpha, eval),
            alpha_x: sc!(alpha, d_dx),
            alpha_m: sc!(alpha, d_dm),
            beta: {
                let p = beta.clone();
                Arc::new(move |_t, x| p.eval(x, 0.0, 0.0))
            },
            beta_x: {
                let p = beta.clone();
                Arc::new(move |_t, x| p.d_dx(x, 0.0, 0.0))
            },
            f: scu!(f, eval),
            f_x: scu!(f, d_dx),
            f_m: scu!(f, d_dm),
            h: {
                let p = h.clone();
                Arc::new(move |x, m| p.eval(x, m, 0.0))
            },
            h_x: {
                let p = h.clone();
                Arc::new(move |x, m| p.d_dx(x, m, 0.0))
            },
            h_m: {
                let p = h.clone();
                Arc::new(move |x, m| p.d_dm(x, m, 0.0))
            },
        })
    }
}
