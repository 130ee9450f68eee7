//! Hamiltonians of the merged system and the adjoint transform.
//!
//! Adjoints are indexed by state component (`ρ`, `x`, and `ξ` for the
//! augmented system) and Brownian component (`Y`, `W`):
//!
//! ```text
//! H^θ = c p₂ − f + ρβ(q₁₁ + θℓ₁p₁) + α(q₂₁ + θℓ₁p₂) + σ(q₂₂ + θℓ₂p₂)
//! H   = H^θ at θ = 0
//! H^e = c p₂ + f p₃ + σ q₂₂ + ρβ q₁₁ + α q₂₁
//! ```
//!
//! with `c = b − αβ`. Under `p̂ = p/(θv)`, `q̂ = q/(θv) − θ p̂ ℓᵀ` and
//! `p₃ = −θv` one has `θv H^θ(p̂, q̂) = H^e(p, q)`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{LqSpec, ModelSpec};
use crate::riccati::RiccatiSolution;
use crate::sde::{EnsembleTrajectory, VThetaPath};
use crate::stats::MeanWithSe;

/// Arguments of the Hamiltonian other than the adjoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub t: f64,
    pub rho: f64,
    pub x: f64,
    pub m: f64,
    pub u: f64,
}

/// `(p, q, ℓ)` of the two-component system. `q[i][j]`: state `i`, noise `j`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdjointState {
    pub p: [f64; 2],
    pub q: [[f64; 2]; 2],
    pub ell: [f64; 2],
}

/// Adjoints of the augmented three-component system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentedAdjoint {
    pub p: [f64; 3],
    pub q: [[f64; 2]; 3],
}

struct Coef {
    c: f64,
    f: f64,
    beta: f64,
    alpha: f64,
    sigma: f64,
}

fn coef(model: &ModelSpec, pt: &Point) -> Coef {
    let k = &model.coeffs;
    Coef {
        c: k.c(pt.t, pt.x, pt.m, pt.u),
        f: (k.f)(pt.t, pt.x, pt.m, pt.u),
        beta: (k.beta)(pt.t, pt.x),
        alpha: (k.alpha)(pt.t, pt.x, pt.m),
        sigma: (k.sigma)(pt.t, pt.x, pt.m),
    }
}

/// The three bracketed factors of `H^θ`.
fn brackets(theta: f64, adj: &AdjointState) -> [f64; 3] {
    let AdjointState { p, q, ell } = adj;
    [
        q[0][0] + theta * ell[0] * p[0],
        q[1][0] + theta * ell[0] * p[1],
        q[1][1] + theta * ell[1] * p[1],
    ]
}

/// Risk-sensitive Hamiltonian `H^θ`.
pub fn h_rs(model: &ModelSpec, theta: f64, pt: &Point, adj: &AdjointState) -> f64 {
    let k = coef(model, pt);
    let [b_rho, b_y, b_w] = brackets(theta, adj);
    k.c * adj.p[1] - k.f + pt.rho * k.beta * b_rho + k.alpha * b_y + k.sigma * b_w
}

/// Risk-neutral Hamiltonian `H`.
pub fn h_rn(model: &ModelSpec, pt: &Point, p: [f64; 2], q: [[f64; 2]; 2]) -> f64 {
    h_rs(model, 0.0, pt, &AdjointState { p, q, ell: [0.0; 2] })
}

/// Augmented Hamiltonian `H^e`.
pub fn h_aug(model: &ModelSpec, pt: &Point, adj: &AugmentedAdjoint) -> f64 {
    let k = coef(model, pt);
    let AugmentedAdjoint { p, q } = adj;
    k.c * p[1] + k.f * p[2] + k.sigma * q[1][1] + pt.rho * k.beta * q[0][0] + k.alpha * q[1][0]
}

/// `(H^θ_x, H^θ_m, H^θ_ρ)` with the adjoints held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HamiltonianPartials {
    pub x: f64,
    pub m: f64,
    pub rho: f64,
}

pub fn h_rs_partials(model: &ModelSpec, theta: f64, pt: &Point, adj: &AdjointState) -> HamiltonianPartials {
    let k = &model.coeffs;
    let Point { t, rho, x, m, u } = *pt;
    let [b_rho, b_y, b_w] = brackets(theta, adj);
    let beta = (k.beta)(t, x);
    HamiltonianPartials {
        x: k.c_x(t, x, m, u) * adj.p[1] - (k.f_x)(t, x, m, u)
            + rho * (k.beta_x)(t, x) * b_rho
            + (k.alpha_x)(t, x, m) * b_y
            + (k.sigma_x)(t, x, m) * b_w,
        m: k.c_m(t, x, m, u) * adj.p[1] - (k.f_m)(t, x, m, u) + (k.alpha_m)(t, x, m) * b_y + (k.sigma_m)(t, x, m) * b_w,
        rho: beta * b_rho,
    }
}

fn check_scale(v: f64, theta: f64) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid("v", format!("must be positive, got {v}")));
    }
    if !theta.is_finite() || theta == 0.0 {
        return Err(invalid("theta", "must be nonzero"));
    }
    Ok(theta * v)
}

/// `p̂ = p/(θv)`, `q̂ = q/(θv) − θ p̂ ℓᵀ`.
pub fn transform_adjoint(adj: &AugmentedAdjoint, v: f64, ell: [f64; 2], theta: f64) -> Result<AugmentedAdjoint> {
    let s = check_scale(v, theta)?;
    let p = adj.p.map(|pi| pi / s);
    let mut q = [[0.0; 2]; 3];
    for i in 0..3 {
        for j in 0..2 {
            q[i][j] = adj.q[i][j] / s - theta * p[i] * ell[j];
        }
    }
    Ok(AugmentedAdjoint { p, q })
}

/// Inverse of [`transform_adjoint`]: `p = θv p̂`, `q = θv(q̂ + θ p̂ ℓᵀ)`.
pub fn inverse_transform_adjoint(hat: &AugmentedAdjoint, v: f64, ell: [f64; 2], theta: f64) -> Result<AugmentedAdjoint> {
    let s = check_scale(v, theta)?;
    let p = hat.p.map(|pi| pi * s);
    let mut q = [[0.0; 2]; 3];
    for i in 0..3 {
        for j in 0..2 {
            q[i][j] = s * (hat.q[i][j] + theta * hat.p[i] * ell[j]);
        }
    }
    Ok(AugmentedAdjoint { p, q })
}

impl AugmentedAdjoint {
    /// First two components with the given `ℓ`.
    pub fn reduced(&self, ell: [f64; 2]) -> AdjointState {
        AdjointState {
            p: [self.p[0], self.p[1]],
            q: [self.q[0], self.q[1]],
            ell,
        }
    }
}

/// Closed-form LQ adjoints at one node:
/// `p = (−λ/ρ, −γx)`, `q₁₁ = βλx/ρ`, `q₁₂ = 0`, `q₂₁ = −αγ`, `q₂₂ = −σγ`,
/// `ℓ = ξ(x, x)`.
pub fn lq_adjoint_state(sol: &RiccatiSolution, step: usize, rho: f64, x: f64) -> AdjointState {
    let LqSpec { alpha, beta, sigma, .. } = sol.spec;
    let g = sol.gamma[step];
    let lam = sol.lambda;
    let xi = sol.xi(step);
    AdjointState {
        p: [-lam / rho, -g * x],
        q: [[beta * lam * x / rho, 0.0], [-alpha * g, -sigma * g]],
        ell: [xi * x, xi * x],
    }
}

/// LQ adjoints along every path of a trajectory, step-major `(n+1)·N`.
#[derive(Debug, Clone)]
pub struct LqAdjointPath {
    pub n_paths: usize,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub q11: Vec<f64>,
    pub q12: Vec<f64>,
    pub q21: Vec<f64>,
    pub q22: Vec<f64>,
}

impl LqAdjointPath {
    pub fn idx(&self, path: usize, step: usize) -> usize {
        step * self.n_paths + path
    }
}

pub fn lq_adjoints(sol: &RiccatiSolution, traj: &EnsembleTrajectory) -> Result<LqAdjointPath> {
    if traj.grid() != &sol.grid {
        return Err(Error::Shape("trajectory and Riccati solution use different grids".into()));
    }
    let n = traj.n_paths();
    let nodes = (sol.grid.n_steps() + 1) * n;
    let mut out = LqAdjointPath {
        n_paths: n,
        p1: Vec::with_capacity(nodes),
        p2: Vec::with_capacity(nodes),
        q11: Vec::with_capacity(nodes),
        q12: vec![0.0; nodes],
        q21: Vec::with_capacity(nodes),
        q22: Vec::with_capacity(nodes),
    };
    for k in 0..=sol.grid.n_steps() {
        for i in 0..n {
            let a = lq_adjoint_state(sol, k, traj.rho(i, k), traj.x(i, k));
            out.p1.push(a.p[0]);
            out.p2.push(a.p[1]);
            out.q11.push(a.q[0][0]);
            out.q21.push(a.q[1][0]);
            out.q22.push(a.q[1][1]);
        }
    }
    Ok(out)
}

/// `ū = −bγ(t)π`, projected onto `U`; the flag reports projection.
pub fn lq_control(sol: &RiccatiSolution, step: usize, filter_mean: f64) -> (f64, bool) {
    sol.spec.controls.clamp(-sol.spec.b_gain * sol.gamma[step] * filter_mean)
}

/// Logarithmic transform `Z = (1/θ) log v − ∫f ds` along each path and its
/// terminal mismatch with `(1/θ) log ρ(T) + h(x(T), m(T))`.
#[derive(Debug, Clone)]
pub struct BsdeCheck {
    pub n_paths: usize,
    /// Step-major `(n+1)·N`.
    pub z: Vec<f64>,
    pub z0: f64,
    pub terminal_residual: Vec<f64>,
    pub residual: MeanWithSe,
    pub mean_abs_residual: f64,
}

pub fn bsde_consistency(model: &ModelSpec, traj: &EnsembleTrajectory, vpath: &VThetaPath) -> Result<BsdeCheck> {
    let theta = model.theta();
    let n = traj.n_paths();
    let steps = traj.grid().n_steps();
    let mut z = Vec::with_capacity((steps + 1) * n);
    for k in 0..=steps {
        for i in 0..n {
            z.push(vpath.log_v(i, k) / theta - traj.xi(i, k));
        }
    }
    let m_t = *traj.m().last().expect("non-empty mean-field path");
    let terminal_residual: Vec<f64> = (0..n)
        .map(|i| {
            let target = traj.log_rho(i, steps) / theta + (model.coeffs.h)(traj.x(i, steps), m_t);
            z[steps * n + i] - target
        })
        .collect();
    let mean_abs_residual = terminal_residual.iter().map(|r| r.abs()).sum::<f64>() / n as f64;
    Ok(BsdeCheck {
        n_paths: n,
        z0: vpath.v0().ln() / theta,
        residual: MeanWithSe::from_samples(&terminal_residual),
        z,
        terminal_residual,
        mean_abs_residual,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{expand_lq, Coefficients, TimeGrid};
    use crate::riccati::solve_case1;
    use crate::sde::{evolve_system, evolve_vtheta, generate_drivers, ConstantControl};

    /// Nonlinear test model with every partial populated.
    pub(crate) fn rich_model() -> ModelSpec {
        let coeffs = Coefficients {
            b: Arc::new(|t, x, m, u| (1.0 + t) * x.sin() + 0.3 * m * x + u * u * 0.5 - u),
            b_x: Arc::new(|t, x, m, _| (1.0 + t) * x.cos() + 0.3 * m),
            b_m: Arc::new(|_, x, _, _| 0.3 * x),
            sigma: Arc::new(|_, x, m| 0.5 + 0.2 * x.cos() + 0.1 * m),
            sigma_x: Arc::new(|_, x, _| -0.2 * x.sin()),
            sigma_m: Arc::new(|_, _, _| 0.1),
            alpha: Arc::new(|_, x, m| 0.3 * (x * m).tanh()),
            alpha_x: Arc::new(|_, x, m| 0.3 * m / (x * m).cosh().powi(2)),
            alpha_m: Arc::new(|_, x, m| 0.3 * x / (x * m).cosh().powi(2)),
            beta: Arc::new(|t, x| x.atan() + t),
            beta_x: Arc::new(|_, x| 1.0 / (1.0 + x * x)),
            f: Arc::new(|_, x, m, u| x.cos() * m + 0.5 * u * u),
            f_x: Arc::new(|_, x, m, _| -x.sin() * m),
            f_m: Arc::new(|_, x, _, _| x.cos()),
            h: Arc::new(|x, m| (x - m).powi(2)),
            h_x: Arc::new(|x, m| 2.0 * (x - m)),
            h_m: Arc::new(|x, m| -2.0 * (x - m)),
        };
        ModelSpec::new(coeffs, 0.7, 1.0, 0.2).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng) -> Point {
        Point {
            t: rng.random_range(0.0..1.0),
            rho: rng.random_range(0.1..3.0),
            x: rng.random_range(-2.0..2.0),
            m: rng.random_range(-2.0..2.0),
            u: rng.random_range(-2.0..2.0),
        }
    }

    fn random_adjoint(rng: &mut ChaCha8Rng) -> AdjointState {
        let mut r = || rng.random_range(-2.0..2.0);
        AdjointState {
            p: [r(), r()],
            q: [[r(), r()], [r(), r()]],
            ell: [r(), r()],
        }
    }

    #[test]
    fn risk_neutral_is_theta_zero() {
        let model = rich_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let pt = random_point(&mut rng);
            let adj = random_adjoint(&mut rng);
            assert_eq!(h_rs(&model, 0.0, &pt, &adj), h_rn(&model, &pt, adj.p, adj.q));
        }
    }

    #[test]
    fn only_running_cost_survives() {
        let coeffs = Coefficients {
            f: Arc::new(|_, x, _, u| x * u + 1.0),
            ..Coefficients::zero()
        };
        let model = ModelSpec::new(coeffs, 1.0, 1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let pt = random_point(&mut rng);
            let adj = random_adjoint(&mut rng);
            assert_eq!(h_rs(&model, 0.9, &pt, &adj), -(pt.x * pt.u + 1.0));
        }
    }

    #[test]
    fn lq_substitution() {
        let spec = LqSpec::default_scenario();
        let model = expand_lq(&spec).unwrap();
        let (c, b) = (spec.c(), spec.b_gain);
        let th = spec.theta;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pt = random_point(&mut rng);
            let a = random_adjoint(&mut rng);
            let (p, q, l) = (a.p, a.q, a.ell);
            let expected = (c * pt.x + b * pt.u) * p[1] - 0.5 * pt.u * pt.u
                + pt.rho * spec.beta * pt.x * (q[0][0] + th * l[0] * p[0])
                + spec.alpha * (q[1][0] + th * l[0] * p[1])
                + spec.sigma * (q[1][1] + th * l[1] * p[1]);
            let got = h_rs(&model, th, &pt, &a);
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            let d = h_rs_partials(&model, th, &pt, &a);
            assert!((d.rho - spec.beta * pt.x * (q[0][0] + th * l[0] * p[0])).abs() < 1e-12);
            let hx = c * p[1] + spec.beta * pt.rho * (q[0][0] + th * l[0] * p[0]);
            assert!((d.x - hx).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_coefficients_in_x() {
        let coeffs = Coefficients {
            b: Arc::new(|_, x, _, _| 2.0 * x),
            b_x: Arc::new(|_, _, _, _| 2.0),
            sigma: Arc::new(|_, _, _| 0.4),
            alpha: Arc::new(|_, _, _| 0.1),
            f: Arc::new(|_, x, _, _| x * x),
            f_x: Arc::new(|_, x, _, _| 2.0 * x),
            ..Coefficients::zero()
        };
        let model = ModelSpec::new(coeffs, 1.0, 1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pt = random_point(&mut rng);
        let adj = random_adjoint(&mut rng);
        let d = h_rs_partials(&model, 0.5, &pt, &adj);
        assert_eq!(d.x, 2.0 * adj.p[1] - 2.0 * pt.x);
    }

    fn fd_rel(analytic: f64, g: impl Fn(f64) -> f64, at: f64) -> f64 {
        let h = 1e-5 * at.abs().max(1.0);
        let fd = (g(at + h) - g(at - h)) / (2.0 * h);
        (analytic - fd).abs() / analytic.abs().max(1.0)
    }

    #[test]
    fn partials_match_finite_differences() {
        let model = rich_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let pt = random_point(&mut rng);
            let adj = random_adjoint(&mut rng);
            let th = rng.random_range(-1.5..1.5);
            let d = h_rs_partials(&model, th, &pt, &adj);
            let at = |p: Point| h_rs(&model, th, &p, &adj);
            assert!(fd_rel(d.x, |v| at(Point { x: v, ..pt }), pt.x) < 1e-5);
            assert!(fd_rel(d.m, |v| at(Point { m: v, ..pt }), pt.m) < 1e-5);
            assert!(fd_rel(d.rho, |v| at(Point { rho: v, ..pt }), pt.rho) < 1e-5);
        }
    }

    #[test]
    fn transform_identity() {
        let model = rich_model();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let pt = random_point(&mut rng);
            let v = rng.random_range(0.2..3.0);
            let th = rng.random_range(0.1..2.0);
            let ell = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let mut r = || rng.random_range(-2.0..2.0);
            let orig = AugmentedAdjoint {
                p: [r(), r(), -th * v],
                q: [[r(), r()], [r(), r()], [r(), r()]],
            };
            let hat = transform_adjoint(&orig, v, ell, th).unwrap();
            assert_eq!(hat.p[2], -1.0);
            let lhs = th * v * h_rs(&model, th, &pt, &hat.reduced(ell));
            let rhs = h_aug(&model, &pt, &orig);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn augmented_hamiltonian_trivia() {
        let model = rich_model();
        let pt = Point {
            t: 0.0,
            rho: 0.0,
            x: 0.0,
            m: 0.0,
            u: 0.0,
        };
        assert_eq!(h_aug(&model, &pt, &AugmentedAdjoint::default()), 0.0);
        let no_cost = ModelSpec::new(
            Coefficients {
                f: Arc::new(|_, _, _, _| 0.0),
                ..model.coeffs.clone()
            },
            1.0,
            1.0,
            0.0,
        )
        .unwrap();
        let pt = Point { x: 0.4, m: 0.3, u: 1.0, rho: 1.2, t: 0.5 };
        let mut a = AugmentedAdjoint {
            p: [0.3, -0.2, 5.0],
            q: [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]],
        };
        let h1 = h_aug(&no_cost, &pt, &a);
        a.p[2] = -7.0;
        assert_eq!(h1, h_aug(&no_cost, &pt, &a));
    }

    #[test]
    fn identity_scaling_transform() {
        let a = AugmentedAdjoint {
            p: [0.3, -0.2, 5.0],
            q: [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]],
        };
        assert_eq!(transform_adjoint(&a, 0.5, [0.0, 0.0], 2.0).unwrap(), a);
        assert!(transform_adjoint(&a, 0.0, [0.0, 0.0], 2.0).is_err());
        assert!(transform_adjoint(&a, -1.0, [0.0, 0.0], 2.0).is_err());
        assert!(inverse_transform_adjoint(&a, 0.0, [0.0, 0.0], 2.0).is_err());
    }

    proptest! {
        #[test]
        fn transform_round_trip(
            p in proptest::array::uniform3(-10.0..10.0f64),
            q in proptest::array::uniform3(proptest::array::uniform2(-10.0..10.0f64)),
            v in 0.05..20.0f64,
            ell in proptest::array::uniform2(-5.0..5.0f64),
            theta in prop_oneof![-3.0..-0.05f64, 0.05..3.0f64],
        ) {
            let a = AugmentedAdjoint { p, q };
            let back = inverse_transform_adjoint(&transform_adjoint(&a, v, ell, theta).unwrap(), v, ell, theta).unwrap();
            for i in 0..3 {
                prop_assert!((back.p[i] - a.p[i]).abs() <= 1e-12 * a.p[i].abs().max(1.0));
                for j in 0..2 {
                    prop_assert!((back.q[i][j] - a.q[i][j]).abs() <= 1e-12 * a.q[i][j].abs().max(1.0));
                }
            }
        }

        #[test]
        fn lq_hamiltonian_vertex_in_u(
            x in -3.0..3.0f64,
            rho in 0.1..3.0f64,
            pi in -3.0..3.0f64,
            step in 0usize..=50,
        ) {
            let spec = LqSpec::default_scenario();
            let model = expand_lq(&spec).unwrap();
            let sol = solve_case1(&spec, &TimeGrid::new(1.0, 50).unwrap()).unwrap();
            let adj = lq_adjoint_state(&sol, step, rho, x);
            let vertex = spec.b_gain * adj.p[1];
            let at = |u: f64| h_rs(&model, spec.theta, &Point { t: 0.0, rho, x, m: pi, u }, &adj);
            let top = at(vertex);
            for du in [-1.0, -0.1, 0.1, 1.0] {
                let drop = top - at(vertex + du);
                prop_assert!((drop - 0.5 * du * du).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lq_adjoints_terminal_and_structure() {
        let spec = LqSpec::default_scenario();
        let model = expand_lq(&spec).unwrap();
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let sol = solve_case1(&spec, &grid).unwrap();
        let drivers = generate_drivers(&grid, 20, 1).unwrap();
        let traj = evolve_system(&model, &ConstantControl(0.1), &drivers).unwrap();
        let adj = lq_adjoints(&sol, &traj).unwrap();
        assert!(adj.q12.iter().all(|&q| q == 0.0));
        for i in 0..20 {
            let j = adj.idx(i, 40);
            assert_eq!(adj.p2[j], -traj.x(i, 40));
            let expected = -1.0 / (spec.theta * traj.rho(i, 40));
            assert!((adj.p1[j] - expected).abs() <= 1e-15 * expected.abs());
            for k in 0..=40 {
                let j = adj.idx(i, k);
                assert!((adj.p1[j] * traj.rho(i, k) + sol.lambda).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lq_control_cases() {
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let spec = LqSpec::default_scenario();
        let sol = solve_case1(&spec, &grid).unwrap();
        assert_eq!(lq_control(&sol, 40, 0.7), (-spec.b_gain * 0.7, false));
        let pi = 0.4;
        let adj = lq_adjoint_state(&sol, 10, 1.0, pi);
        assert_eq!(lq_control(&sol, 10, pi).0, spec.b_gain * adj.p[1]);
        let zero = LqSpec { b_gain: 0.0, ..spec };
        let sol0 = solve_case1(&zero, &grid).unwrap();
        assert_eq!(lq_control(&sol0, 3, 9.0).0, 0.0);
        let narrow = LqSpec {
            controls: crate::model::ControlRange::new(-0.1, 0.1).unwrap(),
            ..spec
        };
        let soln = solve_case1(&narrow, &grid).unwrap();
        assert_eq!(lq_control(&soln, 0, 5.0), (-0.1, true));
    }

    #[test]
    fn trivial_bsde() {
        let model = ModelSpec::new(Coefficients::zero(), 1.5, 1.0, 0.3).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let drivers = generate_drivers(&grid, 10, 0).unwrap();
        let traj = evolve_system(&model, &ConstantControl(0.0), &drivers).unwrap();
        let zero = |_: usize, _: f64, _: f64| [0.0, 0.0];
        let v = evolve_vtheta(&model, &zero, &drivers, &traj, 1.0).unwrap();
        let chk = bsde_consistency(&model, &traj, &v).unwrap();
        assert_eq!(chk.z0, 0.0);
        assert!(chk.z.iter().all(|&z| z == 0.0));
        assert!(chk.terminal_residual.iter().all(|&r| r == 0.0));
        let v2 = evolve_vtheta(&model, &zero, &drivers, &traj, 3.0).unwrap();
        let chk2 = bsde_consistency(&model, &traj, &v2).unwrap();
        assert!((chk2.z0 - 3f64.ln() / 1.5).abs() < 1e-15);
        assert!(chk2.z.iter().all(|&z| (z - chk2.z0).abs() < 1e-15));
    }
}
