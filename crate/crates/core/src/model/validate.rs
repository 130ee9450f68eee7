//! Finite-difference audit of user-supplied partial derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ModelSpec;
use crate::error::{invalid, Result};

/// Relative tolerance used for every partial (with a unit floor on the scale).
pub const PARTIAL_REL_TOL: f64 = 1e-5;

const PROBE_HALF_WIDTH: f64 = 2.0;

/// Worst discrepancy for one declared partial.
#[derive(Debug, Clone, Serialize)]
pub struct PartialCheck {
    pub name: &'static str,
    pub worst_discrepancy: f64,
    pub worst_probe: [f64; 4],
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n_probe: usize,
    pub tolerance: f64,
    pub partials: Vec<PartialCheck>,
    /// Probes where `|f|` or `|h|` exceeded the declared bound (0 when no bound is declared).
    pub bound_violations: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.bound_violations == 0 && self.partials.iter().all(|p| p.failures == 0)
    }

    pub fn failed_partials(&self) -> Vec<&'static str> {
        self.partials
            .iter()
            .filter(|p| p.failures > 0)
            .map(|p| p.name)
            .collect()
    }
}

/// Central difference with a step scaled to the argument; retried at a few
/// step sizes and the closest agreement kept.
fn fd_discrepancy(analytic: f64, at: f64, g: impl Fn(f64) -> f64) -> f64 {
    let base = f64::EPSILON.cbrt() * at.abs().max(1.0);
    [1.0, 0.25, 4.0]
        .iter()
        .map(|s| {
            let h = base * s;
            let fd = (g(at + h) - g(at - h)) / (2.0 * h);
            (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Checks every declared partial of `spec` against central finite differences
/// at `n_probe` random points. Mismatches are reported, not raised.
pub fn validate_model(spec: &ModelSpec, n_probe: usize, seed: u64) -> Result<ValidationReport> {
    if n_probe == 0 {
        return Err(invalid("n_probe", "at least one probe point is required"));
    }
    let c = &spec.coeffs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_lo = spec.controls().lo.max(-PROBE_HALF_WIDTH);
    let u_hi = spec.controls().hi.min(PROBE_HALF_WIDTH);

    type Probe<'a> = Box<dyn Fn([f64; 4]) -> f64 + 'a>;
    // (name, analytic partial, discrepancy against FD)
    let checks: Vec<(&'static str, Probe)> = vec![
        ("b_x", Box::new(|[t, x, m, u]| fd_discrepancy((c.b_x)(t, x, m, u), x, |v| (c.b)(t, v, m, u)))),
        ("b_m", Box::new(|[t, x, m, u]| fd_discrepancy((c.b_m)(t, x, m, u), m, |v| (c.b)(t, x, v, u)))),
        ("sigma_x", Box::new(|[t, x, m, _]| fd_discrepancy((c.sigma_x)(t, x, m), x, |v| (c.sigma)(t, v, m)))),
        ("sigma_m", Box::new(|[t, x, m, _]| fd_discrepancy((c.sigma_m)(t, x, m), m, |v| (c.sigma)(t, x, v)))),
        ("alpha_x", Box::new(|[t, x, m, _]| fd_discrepancy((c.alpha_x)(t, x, m), x, |v| (c.alpha)(t, v, m)))),
        ("alpha_m", Box::new(|[t, x, m, _]| fd_discrepancy((c.alpha_m)(t, x, m), m, |v| (c.alpha)(t, x, v)))),
        ("beta_x", Box::new(|[t, x, _, _]| fd_discrepancy((c.beta_x)(t, x), x, |v| (c.beta)(t, v)))),
        ("f_x", Box::new(|[t, x, m, u]| fd_discrepancy((c.f_x)(t, x, m, u), x, |v| (c.f)(t, v, m, u)))),
        ("f_m", Box::new(|[t, x, m, u]| fd_discrepancy((c.f_m)(t, x, m, u), m, |v| (c.f)(t, x, v, u)))),
        ("h_x", Box::new(|[_, x, m, _]| fd_discrepancy((c.h_x)(x, m), x, |v| (c.h)(v, m)))),
        ("h_m", Box::new(|[_, x, m, _]| fd_discrepancy((c.h_m)(x, m), m, |v| (c.h)(x, v)))),
    ];

    let mut partials: Vec<PartialCheck> = checks
        .iter()
        .map(|(name, _)| PartialCheck {
            name,
            worst_discrepancy: 0.0,
            worst_probe: [0.0; 4],
            failures: 0,
        })
        .collect();
    let mut bound_violations = 0;

    for _ in 0..n_probe {
        let probe = [
            rng.random_range(0.0..=spec.horizon()),
            rng.random_range(-PROBE_HALF_WIDTH..=PROBE_HALF_WIDTH),
            rng.random_range(-PROBE_HALF_WIDTH..=PROBE_HALF_WIDTH),
            rng.random_range(u_lo..=u_hi),
        ];
        for ((_, check), report) in checks.iter().zip(partials.iter_mut()) {
            let d = check(probe);
            // NaN counts as a failure
            if !(d <= PARTIAL_REL_TOL) {
                report.failures += 1;
            }
            if !(d <= report.worst_discrepancy) {
                report.worst_discrepancy = d;
                report.worst_probe = probe;
            }
        }
        if let Some(bound) = spec.coeff_bound() {
            let [t, x, m, u] = probe;
            if (c.f)(t, x, m, u).abs() > bound || (c.h)(x, m).abs() > bound {
                bound_violations += 1;
            }
        }
    }

    Ok(ValidationReport {
        n_probe,
        tolerance: PARTIAL_REL_TOL,
        partials,
        bound_violations,
    })
}
