//! Conditional expectations given the observation record.
//!
//! [`particle_filter`] is the general estimator: particles are propagated
//! under the reference measure with fresh signal noise and one common
//! observation record, and weighted by the measure-change density
//! `L^θ = exp(θ∫⟨ℓ, dB⟩ − ½θ²∫|ℓ|²dt)`, optionally times `ρ`.
//!
//! For the LQ ansatz `ℓ = ξ(t)(x, x)` the system is linear-Gaussian under
//! `P^θ` and the filter closes:
//!
//! ```text
//! A = c + θ(αξ₁ + σξ₂),  H = θξ₁
//! dπ = (Aπ + bu) dt + (α + HV)(dY − Hπ dt)
//! dV = (2AV + σ² + α² − (α + HV)²) dt
//! ```
//!
//! [`FilterForm::AsPublished`] keeps the variant with drift `(c − b²γ)π` and
//! gain `α(1 + θξ₁V)` for comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ModelSpec, TimeGrid};
use crate::riccati::RiccatiSolution;
use crate::sde::{generate_drivers, ControlPolicy, Integrand, StepContext};
use crate::stats::{normalize_log_weights, weighted_mean_se, weighted_moments};

/// Moments of the filter at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub ess: Vec<f64>,
    /// Monte Carlo standard error of `mean` (zero for closed-form filters).
    pub mean_se: Vec<f64>,
    pub n_particles: usize,
}

/// Which density the particle weights carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FilterWeights {
    /// `w ∝ L^θ`: conditional law of the state under `P^θ`.
    #[default]
    Tilt,
    /// `w ∝ ρ L^θ`.
    DensityTilt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleFilterConfig {
    pub n_particles: usize,
    pub seed: u64,
    pub weights: FilterWeights,
    /// Resample when `ess < resample_fraction · n_particles`.
    pub resample_fraction: f64,
    /// Fewer distinct survivors than this after resampling is an error.
    pub min_survivors: usize,
    /// Nodes at which the full weighted cloud is kept.
    pub snapshot_steps: Vec<usize>,
}

impl ParticleFilterConfig {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            seed,
            weights: FilterWeights::Tilt,
            resample_fraction: 0.5,
            min_survivors: 10,
            snapshot_steps: Vec::new(),
        }
    }
}

/// Weighted particle cloud at one node. `weights` sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudSnapshot {
    pub step: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub log_rho: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParticleFilterRun {
    pub estimate: FilterEstimate,
    /// Control applied at each step, `n` entries.
    pub controls: Vec<f64>,
    pub resample_steps: Vec<usize>,
    pub snapshots: Vec<CloudSnapshot>,
}

/// Systematic resampling: ancestor indices for the points `(offset + i)/n`,
/// `offset ∈ [0, 1)`. Weights must sum to one.
pub fn systematic_resample(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let start = offset / n as f64;
    let mut idx = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let target = start + i as f64 / n as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        idx.push(j);
    }
    idx
}

/// Weighted particle filter along one observation record.
///
/// `control(step, t, mean)` sees only the filter mean at the current node.
/// `m_path` supplies the mean-field term `m(t_k)`; without it `m ≡ 0`, which
/// is only meaningful for coefficients that ignore `m`.
pub fn particle_filter<E, U>(
    model: &ModelSpec,
    ell: &E,
    grid: &TimeGrid,
    y_path: &[f64],
    control: U,
    m_path: Option<&[f64]>,
    config: &ParticleFilterConfig,
) -> Result<ParticleFilterRun>
where
    E: Integrand + ?Sized,
    U: Fn(usize, f64, f64) -> f64,
{
    let n = grid.n_steps();
    let np = config.n_particles;
    if y_path.len() != n {
        return Err(Error::Shape(format!("observation record has {} increments, grid has {n} steps", y_path.len())));
    }
    if let Some(m) = m_path {
        if m.len() < n {
            return Err(Error::Shape(format!("mean-field path has {} nodes, need {n}", m.len())));
        }
    }
    if !(0.0..=1.0).contains(&config.resample_fraction) {
        return Err(invalid("resample_fraction", "must lie in [0, 1]"));
    }
    let drivers = generate_drivers(grid, np, config.seed)?;
    // stream far away from the per-path driver streams
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX / 2);

    let c = &model.coeffs;
    let theta = model.theta();
    let dt = grid.dt();
    let range = model.controls();
    let mut x = vec![model.x0(); np];
    let mut log_rho = vec![0.0; np];
    let mut log_w = vec![0.0; np];
    let mut w = vec![0.0; np];

    let mut est = FilterEstimate {
        mean: Vec::with_capacity(n + 1),
        variance: Vec::with_capacity(n + 1),
        ess: Vec::with_capacity(n + 1),
        mean_se: Vec::with_capacity(n + 1),
        n_particles: np,
    };
    let mut controls = Vec::with_capacity(n);
    let mut resample_steps = Vec::new();
    let mut snapshots = Vec::new();

    for k in 0..=n {
        let ess = normalize_log_weights(&log_w, &mut w);
        let (mean, se) = weighted_mean_se(&w, &x);
        let (_, var) = weighted_moments(&w, &x);
        est.mean.push(mean);
        est.variance.push(var);
        est.ess.push(ess);
        est.mean_se.push(se);
        if config.snapshot_steps.contains(&k) {
            snapshots.push(CloudSnapshot {
                step: k,
                t: grid.t(k),
                x: x.clone(),
                log_rho: log_rho.clone(),
                weights: w.clone(),
            });
        }
        if k == n {
            break;
        }
        if ess < config.resample_fraction * np as f64 {
            let idx = systematic_resample(&w, rng.random::<f64>());
            let mut distinct = 1;
            for pair in idx.windows(2) {
                if pair[0] != pair[1] {
                    distinct += 1;
                }
            }
            if distinct < config.min_survivors {
                return Err(Error::Degeneracy {
                    step: k,
                    ess: distinct as f64,
                    min: config.min_survivors as f64,
                });
            }
            x = idx.iter().map(|&i| x[i]).collect();
            log_rho = idx.iter().map(|&i| log_rho[i]).collect();
            log_w.fill(0.0);
            resample_steps.push(k);
        }

        let t = grid.t(k);
        let m = m_path.map_or(0.0, |p| p[k]);
        let (u, _) = range.clamp(control(k, t, mean));
        controls.push(u);
        let dy = y_path[k];
        let dw = drivers.dw_step(k);
        let weights = config.weights;
        x.par_iter_mut()
            .zip(log_rho.par_iter_mut())
            .zip(log_w.par_iter_mut())
            .enumerate()
            .for_each(|(i, ((xi, lr), lw))| {
                let [l1, l2] = ell.ell(k, t, *xi);
                let beta = (c.beta)(t, *xi);
                let alpha = (c.alpha)(t, *xi, m);
                let sigma = (c.sigma)(t, *xi, m);
                let drift = (c.b)(t, *xi, m, u) - alpha * beta;
                let rho_inc = beta * dy - 0.5 * beta * beta * dt;
                *lw += theta * (l1 * dy + l2 * dw[i]) - 0.5 * theta * theta * (l1 * l1 + l2 * l2) * dt;
                if weights == FilterWeights::DensityTilt {
                    *lw += rho_inc;
                }
                *lr += rho_inc;
                *xi += drift * dt + sigma * dw[i] + alpha * dy;
            });
        if let Some(i) = x.iter().zip(&log_w).position(|(a, b)| !(a.is_finite() && b.is_finite())) {
            return Err(Error::NonFinite {
                step: k + 1,
                t: grid.t(k + 1),
                particle: i,
                quantity: "particle state or weight",
                value: if x[i].is_finite() { log_w[i] } else { x[i] },
            });
        }
    }
    Ok(ParticleFilterRun {
        estimate: est,
        controls,
        resample_steps,
        snapshots,
    })
}

/// The ansatz integrand `ℓ = ξ(t_k)(x, x)` of an LQ solution.
pub fn lq_ell(sol: &RiccatiSolution) -> impl Fn(usize, f64, f64) -> [f64; 2] + Sync + '_ {
    move |k, _t, x| {
        let xi = sol.xi(k);
        [xi * x, xi * x]
    }
}

/// Closed form of the LQ filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FilterForm {
    /// Kalman–Bucy filter under `P^θ` (see the module docs).
    #[default]
    Consistent,
    /// Drift `(c − b²γ)π`, gain `α(1 + θξ₁V)`, innovation `dY − θξ₁π dt`.
    AsPublished,
}

/// Source of the conditional variance `V` that enters the gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceSource<'a> {
    /// Nodal variances, typically from a particle filter.
    ParticleSupplied(&'a [f64]),
    /// Riccati ODE for `V` with `V(0) = 0`.
    GaussianOde,
}

/// Coefficients of one closed-form filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStep {
    pub c: f64,
    pub b: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub theta: f64,
    pub gamma: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl FilterStep {
    pub fn at(sol: &RiccatiSolution, k: usize) -> Self {
        let spec = &sol.spec;
        let xi = sol.xi(k);
        Self {
            c: spec.c(),
            b: spec.b_gain,
            alpha: spec.alpha,
            sigma: spec.sigma,
            theta: spec.theta,
            gamma: sol.gamma[k],
            xi1: xi,
            xi2: xi,
        }
    }

    fn drift_coef(&self) -> f64 {
        self.c + self.theta * (self.alpha * self.xi1 + self.sigma * self.xi2)
    }

    /// `π(t+dt)` under control `u`.
    pub fn advance_mean(&self, form: FilterForm, pi: f64, var: f64, u: f64, dy: f64, dt: f64) -> f64 {
        let h = self.theta * self.xi1;
        match form {
            FilterForm::Consistent => {
                pi + (self.drift_coef() * pi + self.b * u) * dt + (self.alpha + h * var) * (dy - h * pi * dt)
            }
            FilterForm::AsPublished => {
                let _ = u;
                pi + (self.c - self.b * self.b * self.gamma) * pi * dt
                    + self.alpha * (1.0 + h * var) * (dy - h * pi * dt)
            }
        }
    }

    /// `V(t+dt)` from the Gaussian variance ODE.
    pub fn advance_variance(&self, var: f64, dt: f64) -> f64 {
        let a = self.drift_coef();
        let gain = self.alpha + self.theta * self.xi1 * var;
        let next = var + (2.0 * a * var + self.sigma * self.sigma + self.alpha * self.alpha - gain * gain) * dt;
        next.max(0.0)
    }
}

/// Nodal variances from the Gaussian ODE.
pub fn gaussian_variance_path(sol: &RiccatiSolution) -> Vec<f64> {
    let n = sol.grid.n_steps();
    let dt = sol.grid.dt();
    let mut v = Vec::with_capacity(n + 1);
    v.push(0.0);
    for k in 0..n {
        let next = FilterStep::at(sol, k).advance_variance(v[k], dt);
        v.push(next);
    }
    v
}

/// Closed-form LQ filter along an observation record, driven by its own
/// feedback `u = −bγπ` projected onto `U`.
pub fn closed_form_filter(
    sol: &RiccatiSolution,
    y_path: &[f64],
    variance: VarianceSource<'_>,
    form: FilterForm,
) -> Result<FilterEstimate> {
    let n = sol.grid.n_steps();
    if y_path.len() != n {
        return Err(Error::Shape(format!("observation record has {} increments, grid has {n} steps", y_path.len())));
    }
    let var = match variance {
        VarianceSource::ParticleSupplied(v) => {
            if v.len() != n + 1 {
                return Err(Error::Missing(format!("particle variances: need {} nodes, got {}", n + 1, v.len())));
            }
            if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(invalid("variance", format!("supplied variance {bad} is not a finite nonnegative number")));
            }
            v.to_vec()
        }
        VarianceSource::GaussianOde => gaussian_variance_path(sol),
    };
    let dt = sol.grid.dt();
    let range = sol.spec.controls;
    let mut mean = Vec::with_capacity(n + 1);
    mean.push(sol.spec.x0);
    for k in 0..n {
        let step = FilterStep::at(sol, k);
        let (u, _) = range.clamp(-step.b * step.gamma * mean[k]);
        let next = step.advance_mean(form, mean[k], var[k], u, y_path[k], dt);
        if !next.is_finite() {
            return Err(Error::NonFinite {
                step: k + 1,
                t: sol.grid.t(k + 1),
                particle: 0,
                quantity: "filter mean",
                value: next,
            });
        }
        mean.push(next);
    }
    Ok(FilterEstimate {
        mean,
        variance: var,
        ess: vec![1.0; n + 1],
        mean_se: vec![0.0; n + 1],
        n_particles: 1,
    })
}

/// Needle perturbation: add `delta` to the control on `[tau, tau + eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Needle {
    pub tau: f64,
    pub eps: f64,
    pub delta: f64,
}

impl Needle {
    fn active(&self, t: f64, dt: f64) -> bool {
        // nodes are compared with a tolerance well below one step
        let tol = 1e-9 * dt;
        t >= self.tau - tol && t < self.tau + self.eps - tol
    }
}

/// Observation feedback `u = −b(1+κ)γ(t)π_t`, with `π` run per path by the
/// closed-form filter on that path's observation increments.
#[derive(Debug, Clone)]
pub struct LqFeedback<'a> {
    sol: &'a RiccatiSolution,
    variance: Vec<f64>,
    form: FilterForm,
    kappa: f64,
    needle: Option<Needle>,
}

impl<'a> LqFeedback<'a> {
    pub fn new(sol: &'a RiccatiSolution) -> Self {
        Self {
            sol,
            variance: gaussian_variance_path(sol),
            form: FilterForm::Consistent,
            kappa: 0.0,
            needle: None,
        }
    }

    pub fn with_form(mut self, form: FilterForm) -> Self {
        self.form = form;
        self
    }

    /// Scales the gain: `γ → (1 + κ)γ`.
    pub fn with_gain_scale(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_needle(mut self, needle: Needle) -> Self {
        self.needle = Some(needle);
        self
    }
}

impl ControlPolicy for LqFeedback<'_> {
    type State = f64;

    fn label(&self) -> String {
        let mut s = format!("lq-feedback(case {})", self.sol.case.index());
        if self.kappa != 0.0 {
            s += &format!(" gain x{}", 1.0 + self.kappa);
        }
        if let Some(n) = self.needle {
            s += &format!(" needle(tau={}, eps={}, delta={})", n.tau, n.eps, n.delta);
        }
        s
    }

    fn init(&self, x0: f64) -> f64 {
        x0
    }

    fn control(&self, ctx: &StepContext, _x: f64, pi: &f64) -> f64 {
        let g = self.sol.gamma[ctx.step];
        let mut u = -self.sol.spec.b_gain * (1.0 + self.kappa) * g * pi;
        if let Some(n) = self.needle {
            if n.active(ctx.t, ctx.dt) {
                u += n.delta;
            }
        }
        u
    }

    fn observe(&self, ctx: &StepContext, pi: &mut f64, u: f64, dy: f64) {
        let step = FilterStep::at(self.sol, ctx.step);
        *pi = step.advance_mean(self.form, *pi, self.variance[ctx.step], u, dy, ctx.dt);
    }
}
