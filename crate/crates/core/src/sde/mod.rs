//! Euler–Maruyama simulation of the merged observed system and of the
//! generic martingale `v^θ`.
//!
//! The density `ρ` and `v^θ` are propagated in log-space,
//!
//! ```text
//! log ρ += β dY − ½ β² dt
//! log v += θ ⟨ℓ, dB⟩ − ½ θ² |ℓ|² dt
//! ```
//!
//! which keeps both strictly positive and makes `v(t)/v(0) = L^θ_t` hold
//! exactly at every node. The mean-field term `m = E[ρ x]` is the empirical
//! ensemble average, recomputed at every node and frozen over the next step.

mod drivers;
mod policy;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::model::{ModelSpec, TimeGrid};
use crate::stats::MeanWithSe;

pub use drivers::{brownian_increments, generate_drivers, BrownianBundle};
pub use policy::{ConstantControl, ControlPolicy, OpenLoop, StateFeedback, StepContext};

/// Full node-by-node record of an ensemble run. Storage is step-major.
#[derive(Debug, Clone)]
pub struct EnsembleTrajectory {
    grid: TimeGrid,
    n_paths: usize,
    log_rho: Vec<f64>,
    x: Vec<f64>,
    xi: Vec<f64>,
    m: Vec<f64>,
    controls: Vec<f64>,
    clamped: usize,
    label: String,
}

/// Terminal values of an ensemble run, enough for cost estimation.
#[derive(Debug, Clone)]
pub struct TerminalEnsemble {
    pub log_rho: Vec<f64>,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    /// Mean-field path `m(t_k)`, `k = 0..=n`.
    pub m: Vec<f64>,
    /// Number of control evaluations projected onto `U`.
    pub clamped: usize,
    pub label: String,
}

impl TerminalEnsemble {
    pub fn n_paths(&self) -> usize {
        self.x.len()
    }

    pub fn m_terminal(&self) -> f64 {
        *self.m.last().expect("non-empty mean-field path")
    }
}

impl EnsembleTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn idx(&self, path: usize, step: usize) -> usize {
        step * self.n_paths + path
    }

    pub fn rho(&self, path: usize, step: usize) -> f64 {
        self.log_rho[self.idx(path, step)].exp()
    }

    pub fn log_rho(&self, path: usize, step: usize) -> f64 {
        self.log_rho[self.idx(path, step)]
    }

    pub fn x(&self, path: usize, step: usize) -> f64 {
        self.x[self.idx(path, step)]
    }

    pub fn xi(&self, path: usize, step: usize) -> f64 {
        self.xi[self.idx(path, step)]
    }

    pub fn control(&self, path: usize, step: usize) -> f64 {
        self.controls[step * self.n_paths + path]
    }

    /// `x` of every path at one node.
    pub fn x_step(&self, step: usize) -> &[f64] {
        &self.x[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn log_rho_step(&self, step: usize) -> &[f64] {
        &self.log_rho[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn xi_step(&self, step: usize) -> &[f64] {
        &self.xi[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn terminal(&self) -> TerminalEnsemble {
        let n = self.grid.n_steps();
        TerminalEnsemble {
            log_rho: self.log_rho_step(n).to_vec(),
            x: self.x_step(n).to_vec(),
            xi: self.xi_step(n).to_vec(),
            m: self.m.clone(),
            clamped: self.clamped,
            label: self.label.clone(),
        }
    }
}

#[derive(Clone)]
struct Particle<S> {
    log_rho: f64,
    x: f64,
    xi: f64,
    u: f64,
    clamped: bool,
    state: S,
}

fn mean_field<S>(particles: &[Particle<S>]) -> f64 {
    // sequential sum: fixed reduction order regardless of the thread count
    particles.iter().map(|p| p.log_rho.exp() * p.x).sum::<f64>() / particles.len() as f64
}

fn check_finite<S>(particles: &[Particle<S>], step: usize, t: f64) -> Result<()> {
    for (i, p) in particles.iter().enumerate() {
        for (quantity, value) in [("x", p.x), ("log rho", p.log_rho), ("xi", p.xi), ("u", p.u)] {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    t,
                    particle: i,
                    quantity,
                    value,
                });
            }
        }
    }
    Ok(())
}

/// Shared stepping kernel. `record` is called with the particle cloud after
/// every step (and once for the initial node).
fn integrate<P, R>(
    model: &ModelSpec,
    policy: &P,
    drivers: &BrownianBundle,
    mut record: R,
) -> Result<(Vec<f64>, usize)>
where
    P: ControlPolicy,
    R: FnMut(usize, &[Particle<P::State>]),
{
    let grid = drivers.grid();
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(invalid(
            "T",
            format!(
                "driver grid horizon {} differs from model horizon {}",
                grid.horizon(),
                model.horizon()
            ),
        ));
    }
    let c = &model.coeffs;
    let range = model.controls();
    let dt = grid.dt();
    let x0 = model.x0();
    let init = policy.init(x0);
    let mut particles: Vec<Particle<P::State>> = (0..drivers.n_paths())
        .map(|_| Particle {
            log_rho: 0.0,
            x: x0,
            xi: 0.0,
            u: 0.0,
            clamped: false,
            state: init.clone(),
        })
        .collect();
    let mut m_path = Vec::with_capacity(grid.n_steps() + 1);
    let mut clamped = 0usize;
    record(0, &particles);

    for k in 0..grid.n_steps() {
        let t = grid.t(k);
        let m = mean_field(&particles);
        m_path.push(m);
        let ctx = StepContext { step: k, t, dt, m };
        let dw = drivers.dw_step(k);
        let dy = drivers.dy_step(k);
        particles.par_iter_mut().enumerate().for_each(|(i, p)| {
            let raw = policy.control(&ctx, p.x, &p.state);
            let (u, was_clamped) = range.clamp(raw);
            let beta = (c.beta)(t, p.x);
            let alpha = (c.alpha)(t, p.x, m);
            let sigma = (c.sigma)(t, p.x, m);
            let drift = (c.b)(t, p.x, m, u) - alpha * beta;
            let run_cost = (c.f)(t, p.x, m, u);
            p.log_rho += beta * dy[i] - 0.5 * beta * beta * dt;
            p.x += drift * dt + sigma * dw[i] + alpha * dy[i];
            p.xi += run_cost * dt;
            p.u = u;
            p.clamped = was_clamped;
            policy.observe(&ctx, &mut p.state, u, dy[i]);
        });
        check_finite(&particles, k + 1, grid.t(k + 1))?;
        clamped += particles.iter().filter(|p| p.clamped).count();
        record(k + 1, &particles);
    }
    m_path.push(mean_field(&particles));
    Ok((m_path, clamped))
}

/// Simulates the ensemble and keeps every node.
pub fn evolve_system<P: ControlPolicy>(
    model: &ModelSpec,
    policy: &P,
    drivers: &BrownianBundle,
) -> Result<EnsembleTrajectory> {
    let grid = drivers.grid().clone();
    let n = drivers.n_paths();
    let nodes = (grid.n_steps() + 1) * n;
    let mut log_rho = vec![0.0; nodes];
    let mut x = vec![0.0; nodes];
    let mut xi = vec![0.0; nodes];
    let mut controls = vec![0.0; grid.n_steps() * n];
    let (m, clamped) = integrate(model, policy, drivers, |k, ps| {
        for (i, p) in ps.iter().enumerate() {
            log_rho[k * n + i] = p.log_rho;
            x[k * n + i] = p.x;
            xi[k * n + i] = p.xi;
            if k > 0 {
                controls[(k - 1) * n + i] = p.u;
            }
        }
    })?;
    Ok(EnsembleTrajectory {
        grid,
        n_paths: n,
        log_rho,
        x,
        xi,
        m,
        controls,
        clamped,
        label: policy.label(),
    })
}

/// Same dynamics as [`evolve_system`] but only the terminal state is kept.
pub fn simulate_terminal<P: ControlPolicy>(
    model: &ModelSpec,
    policy: &P,
    drivers: &BrownianBundle,
) -> Result<TerminalEnsemble> {
    let n_steps = drivers.grid().n_steps();
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    let (m, clamped) = integrate(model, policy, drivers, |k, ps| {
        if k == n_steps {
            out = (
                ps.iter().map(|p| p.log_rho).collect(),
                ps.iter().map(|p| p.x).collect(),
                ps.iter().map(|p| p.xi).collect(),
            );
        }
    })?;
    Ok(TerminalEnsemble {
        log_rho: out.0,
        x: out.1,
        xi: out.2,
        m,
        clamped,
        label: policy.label(),
    })
}

/// Sample mean and standard error of `ρ(T)`, whose expectation is one.
pub fn density_terminal_check(terminal: &TerminalEnsemble) -> MeanWithSe {
    let rho: Vec<f64> = terminal.log_rho.iter().map(|l| l.exp()).collect();
    MeanWithSe::from_samples(&rho)
}

/// `log ψ^θ_T = log ρ(T) + θ [ξ(T) + h(x(T), m(T))]` per path.
pub fn log_terminal_weight(terminal: &TerminalEnsemble, model: &ModelSpec) -> Result<Vec<f64>> {
    let theta = model.theta();
    let m_t = terminal.m_terminal();
    let out: Vec<f64> = terminal
        .log_rho
        .iter()
        .zip(&terminal.x)
        .zip(&terminal.xi)
        .map(|((lr, &x), xi)| lr + theta * (xi + (model.coeffs.h)(x, m_t)))
        .collect();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: terminal.m.len() - 1,
            t: model.horizon(),
            particle: i,
            quantity: "log psi",
            value: out[i],
        });
    }
    if let Some(bound) = model.coeff_bound() {
        let slack = (1.0 + model.horizon()) * bound * theta.abs();
        for (i, (lp, lr)) in out.iter().zip(&terminal.log_rho).enumerate() {
            if (lp - lr).abs() > slack * (1.0 + 1e-12) + 1e-12 {
                return Err(invalid(
                    "coeff_bound_C",
                    format!("path {i}: terminal weight leaves the declared bracket (|f|, |h| <= {bound} violated)"),
                ));
            }
        }
    }
    Ok(out)
}

/// Per-path terminal weight `ψ^θ_T = ρ(T) exp θ[ξ(T) + h(x(T), m(T))]`.
pub fn terminal_weight(terminal: &TerminalEnsemble, model: &ModelSpec) -> Result<Vec<f64>> {
    let logs = log_terminal_weight(terminal, model)?;
    if let Some(&big) = logs.iter().find(|&&l| l > f64::MAX.ln()) {
        return Err(Error::Overflow {
            quantity: "terminal weight psi",
            hint: format!("log psi = {big:.1} exceeds the f64 range; reduce theta or T"),
        });
    }
    Ok(logs.into_iter().map(f64::exp).collect())
}

/// Path of the generic martingale `v^θ` along a recorded trajectory.
#[derive(Debug, Clone)]
pub struct VThetaPath {
    n_paths: usize,
    v0: f64,
    log_v: Vec<f64>,
}

impl VThetaPath {
    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn log_v(&self, path: usize, step: usize) -> f64 {
        self.log_v[step * self.n_paths + path]
    }

    pub fn v(&self, path: usize, step: usize) -> f64 {
        self.log_v(path, step).exp()
    }

    /// `L^θ_t = v(t) / v(0)`.
    pub fn density(&self, path: usize, step: usize) -> f64 {
        (self.log_v(path, step) - self.v0.ln()).exp()
    }

    /// `L^θ` of every path at one node.
    pub fn density_step(&self, step: usize) -> Vec<f64> {
        let lv0 = self.v0.ln();
        self.log_v[step * self.n_paths..(step + 1) * self.n_paths]
            .iter()
            .map(|l| (l - lv0).exp())
            .collect()
    }
}

/// Integrand `ℓ(step, t, x) = (ℓ₁, ℓ₂)` of the martingale representation.
pub trait Integrand: Sync {
    fn ell(&self, step: usize, t: f64, x: f64) -> [f64; 2];
}

impl<F> Integrand for F
where
    F: Fn(usize, f64, f64) -> [f64; 2] + Sync,
{
    fn ell(&self, step: usize, t: f64, x: f64) -> [f64; 2] {
        self(step, t, x)
    }
}

/// Evolves `log v += θ (ℓ₁ dY + ℓ₂ dW) − ½ θ² |ℓ|² dt` from `v(0) = v0`, with
/// `ℓ` evaluated on the recorded state at the start of each step.
pub fn evolve_vtheta<E: Integrand + ?Sized>(
    model: &ModelSpec,
    ell: &E,
    drivers: &BrownianBundle,
    traj: &EnsembleTrajectory,
    v0: f64,
) -> Result<VThetaPath> {
    evolve_vtheta_with(model.theta(), ell, drivers, traj, v0)
}

/// [`evolve_vtheta`] with an explicit `θ` (`θ = 0` gives a constant path).
pub fn evolve_vtheta_with<E: Integrand + ?Sized>(
    theta: f64,
    ell: &E,
    drivers: &BrownianBundle,
    traj: &EnsembleTrajectory,
    v0: f64,
) -> Result<VThetaPath> {
    if !(v0.is_finite() && v0 > 0.0) {
        return Err(invalid("v0", format!("must be positive, got {v0}")));
    }
    if drivers.n_paths() != traj.n_paths() || drivers.grid() != traj.grid() {
        return Err(Error::Shape("drivers and trajectory disagree in paths or grid".into()));
    }
    let grid = traj.grid();
    let n = traj.n_paths();
    let dt = grid.dt();
    let mut log_v = vec![0.0; (grid.n_steps() + 1) * n];
    log_v[..n].fill(v0.ln());
    for k in 0..grid.n_steps() {
        let t = grid.t(k);
        let (done, rest) = log_v.split_at_mut((k + 1) * n);
        let prev = &done[k * n..];
        let next = &mut rest[..n];
        let xs = traj.x_step(k);
        let dw = drivers.dw_step(k);
        let dy = drivers.dy_step(k);
        next.par_iter_mut().enumerate().for_each(|(i, lv)| {
            let [l1, l2] = ell.ell(k, t, xs[i]);
            *lv = prev[i] + theta * (l1 * dy[i] + l2 * dw[i])
                - 0.5 * theta * theta * (l1 * l1 + l2 * l2) * dt;
        });
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k + 1,
                t: grid.t(k + 1),
                particle: i,
                quantity: "log v",
                value: next[i],
            });
        }
    }
    Ok(VThetaPath {
        n_paths: n,
        v0,
        log_v,
    })
}
