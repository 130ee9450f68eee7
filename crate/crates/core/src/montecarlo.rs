//! Cost estimation, the small-θ expansion, the variational-inequality
//! certifier and perturbation tests.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::filter::{lq_ell, particle_filter, LqFeedback, Needle, ParticleFilterConfig};
use crate::hamiltonian::{h_rs, lq_adjoint_state, Point};
use crate::model::{expand_lq, ModelSpec};
use crate::riccati::RiccatiSolution;
use crate::sde::{brownian_increments, log_terminal_weight, simulate_terminal, BrownianBundle, ControlPolicy, TerminalEnsemble};
use crate::stats::{log_mean_exp, ols_slope, MeanWithSe};

/// Monte Carlo estimate of `J^θ = E[ψ^θ_T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub j_theta: f64,
    /// `log J^θ`, finite even when `J^θ` itself overflows.
    pub log_j: f64,
    pub se: f64,
    pub n_paths: usize,
    pub theta: f64,
    pub control_label: String,
}

fn cost_from_logs(logs: &[f64], theta: f64, label: String) -> CostEstimate {
    let n = logs.len();
    let log_j = log_mean_exp(logs);
    // moments of ψ / J, then scaled back
    let rel: Vec<f64> = logs.iter().map(|l| (l - log_j).exp()).collect();
    let se = if n > 1 {
        let var = rel.iter().map(|r| (r - 1.0) * (r - 1.0)).sum::<f64>() / (n - 1) as f64;
        (log_j.exp()) * (var / n as f64).sqrt()
    } else {
        0.0
    };
    CostEstimate {
        j_theta: log_j.exp(),
        log_j,
        se,
        n_paths: n,
        theta,
        control_label: label,
    }
}

/// Cost of an already simulated terminal ensemble.
pub fn cost_of(model: &ModelSpec, terminal: &TerminalEnsemble) -> Result<CostEstimate> {
    let logs = log_terminal_weight(terminal, model)?;
    Ok(cost_from_logs(&logs, model.theta(), terminal.label.clone()))
}

/// Simulates `policy` on `drivers` and estimates its cost.
pub fn estimate_cost<P: ControlPolicy>(model: &ModelSpec, policy: &P, drivers: &BrownianBundle) -> Result<CostEstimate> {
    let terminal = simulate_terminal(model, policy, drivers)?;
    cost_of(model, &terminal)
}

/// One row of the small-θ expansion table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionRow {
    pub theta: f64,
    /// `J^θ` normalized by the sample mean of `ρ(T)`.
    pub j_theta: f64,
    /// `(1/θ) log J^θ`.
    pub certainty_equivalent: f64,
    pub mean: f64,
    pub variance: f64,
    /// `|(1/θ) log J^θ − E[Ψ] − (θ/2) var(Ψ)|`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionTable {
    pub rows: Vec<ExpansionRow>,
    /// Least-squares slope of `log r` against `log θ`; `None` when a residual is zero.
    pub slope: Option<f64>,
}

/// Compares `(1/θ) log E e^{θΨ}` with `E Ψ + (θ/2) var Ψ`, where
/// `Ψ = ξ(T) + h` and moments are `ρ(T)`-weighted. All `θ` share one
/// simulated ensemble.
pub fn theta_expansion_check(model: &ModelSpec, terminal: &TerminalEnsemble, thetas: &[f64]) -> Result<ExpansionTable> {
    if thetas.is_empty() {
        return Err(invalid("theta_list", "at least one value is required"));
    }
    if let Some(&bad) = thetas.iter().find(|t| !(t.is_finite() && **t != 0.0)) {
        return Err(invalid("theta_list", format!("values must be finite and nonzero, got {bad}")));
    }
    let m_t = terminal.m_terminal();
    let psi: Vec<f64> = terminal
        .x
        .iter()
        .zip(&terminal.xi)
        .map(|(&x, xi)| xi + (model.coeffs.h)(x, m_t))
        .collect();
    // shifting by one sample keeps a constant Ψ exactly zero after centering
    let shift = psi[0];
    let d: Vec<f64> = psi.iter().map(|p| p - shift).collect();
    let lr_max = terminal.log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = terminal.log_rho.iter().map(|l| (l - lr_max).exp()).collect();
    let wsum: f64 = w.iter().sum();
    let mean_d = w.iter().zip(&d).map(|(w, d)| w * d).sum::<f64>() / wsum;
    let var = w.iter().zip(&d).map(|(w, d)| w * (d - mean_d) * (d - mean_d)).sum::<f64>() / wsum;
    let log_wsum = wsum.ln();

    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let logs: Vec<f64> = w
            .iter()
            .zip(&d)
            .map(|(w, d)| w.ln() + theta * (d - mean_d))
            .collect();
        let n = logs.len() as f64;
        // log Σ w e^{θ(d − d̄)} − log Σ w
        let centered = log_mean_exp(&logs) + n.ln() - log_wsum;
        let residual = (centered / theta - 0.5 * theta * var).abs();
        let mean = shift + mean_d;
        let ce = mean + centered / theta;
        rows.push(ExpansionRow {
            theta,
            j_theta: (theta * ce).exp(),
            certainty_equivalent: ce,
            mean,
            variance: var,
            residual,
        });
    }
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.residual > 0.0) {
        let lx: Vec<f64> = rows.iter().map(|r| r.theta.abs().ln()).collect();
        let ly: Vec<f64> = rows.iter().map(|r| r.residual.ln()).collect();
        Some(ols_slope(&lx, &ly))
    } else {
        None
    };
    Ok(ExpansionTable { rows, slope })
}

/// Settings of the variational-inequality check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViConfig {
    pub n_particles: usize,
    pub n_observation_paths: usize,
    pub seed: u64,
    /// Times at which the inequality is probed (snapped to grid nodes).
    pub times: Vec<f64>,
    /// Offsets added to `ū(t)`.
    pub offsets: Vec<f64>,
    pub abs_tol: f64,
    pub se_multiplier: f64,
}

impl ViConfig {
    /// 5 interior times and 9 offsets spanning `[ū − 2, ū + 2]`.
    pub fn standard(horizon: f64, n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            n_observation_paths: 8,
            seed,
            times: (1..=5).map(|i| horizon * i as f64 / 6.0).collect(),
            offsets: (0..9).map(|j| -2.0 + 0.5 * j as f64).collect(),
            abs_tol: 1e-6,
            se_multiplier: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViCell {
    pub observation_path: usize,
    pub step: usize,
    pub t: f64,
    pub u: f64,
    pub u_bar: f64,
    /// Weighted estimate of `E^θ[H^θ(u) − H^θ(ū) | F^Y_t]`.
    pub estimate: f64,
    pub se: f64,
    /// `−(u − ū)²/2`.
    pub analytic: f64,
    /// `estimate > k·SE + abs_tol`.
    pub violation: bool,
    /// `|estimate − analytic| > k·SE + abs_tol`.
    pub mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViReport {
    pub case: u8,
    pub cells: Vec<ViCell>,
}

impl ViReport {
    pub fn violations(&self) -> impl Iterator<Item = &ViCell> {
        self.cells.iter().filter(|c| c.violation)
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &ViCell> {
        self.cells.iter().filter(|c| c.mismatch)
    }

    pub fn passed(&self) -> bool {
        self.cells.iter().all(|c| !c.violation && !c.mismatch)
    }
}

/// Certifies `E^θ[H^θ(u) − H^θ(ū) | F^Y_t] ≤ 0` for the LQ feedback
/// `ū = −bγπ`, with conditional expectations taken over the weighted
/// particle cloud of independent observation records.
pub fn check_variational_inequality(sol: &RiccatiSolution, config: &ViConfig) -> Result<ViReport> {
    if sol.spec.theta <= 0.0 {
        return Err(invalid("theta", "the inequality is certified for theta > 0 only"));
    }
    if config.n_observation_paths == 0 || config.times.is_empty() || config.offsets.is_empty() {
        return Err(invalid("vi", "need at least one observation path, time and offset"));
    }
    let model = expand_lq(&sol.spec)?;
    let grid = &sol.grid;
    let steps: Vec<usize> = config.times.iter().map(|&t| grid.step_at(t)).collect();
    let ell = lq_ell(sol);
    let theta = sol.spec.theta;
    let b = sol.spec.b_gain;
    let mut cells = Vec::new();
    for r in 0..config.n_observation_paths {
        let y = brownian_increments(grid, config.seed, r as u64);
        let mut pf_cfg = ParticleFilterConfig::new(config.n_particles, config.seed.wrapping_add(1 + r as u64));
        pf_cfg.snapshot_steps = steps.clone();
        let run = particle_filter(&model, &ell, grid, &y, |k, _, mean| -b * sol.gamma[k] * mean, None, &pf_cfg)?;
        for snap in &run.snapshots {
            let k = snap.step;
            let pi = run.estimate.mean[k];
            let (u_bar, _) = crate::hamiltonian::lq_control(sol, k, pi);
            let adj: Vec<_> = snap
                .x
                .iter()
                .zip(&snap.log_rho)
                .map(|(&x, lr)| (x, lr.exp(), lq_adjoint_state(sol, k, lr.exp(), x)))
                .collect();
            let m = 0.0;
            for &off in &config.offsets {
                let u = u_bar + off;
                let delta: Vec<f64> = adj
                    .iter()
                    .map(|(x, rho, a)| {
                        let at = |u| {
                            h_rs(
                                &model,
                                theta,
                                &Point {
                                    t: snap.t,
                                    rho: *rho,
                                    x: *x,
                                    m,
                                    u,
                                },
                                a,
                            )
                        };
                        at(u) - at(u_bar)
                    })
                    .collect();
                let (estimate, se) = crate::stats::weighted_mean_se(&snap.weights, &delta);
                let analytic = -0.5 * off * off;
                let tol = config.se_multiplier * se + config.abs_tol;
                cells.push(ViCell {
                    observation_path: r,
                    step: k,
                    t: snap.t,
                    u,
                    u_bar,
                    estimate,
                    se,
                    analytic,
                    violation: estimate > tol,
                    mismatch: (estimate - analytic).abs() > tol,
                });
            }
        }
    }
    Ok(ViReport {
        case: sol.case.index(),
        cells,
    })
}

/// A perturbation of the LQ feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Perturbation {
    Zero,
    /// `γ → (1 + κ)γ`.
    Gain(f64),
    Needle(Needle),
}

impl Perturbation {
    pub fn label(&self) -> String {
        match self {
            Self::Zero => "zero".to_string(),
            Self::Gain(k) => format!("gain kappa={k}"),
            Self::Needle(n) => format!("needle tau={} eps={} delta={}", n.tau, n.eps, n.delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmResult {
    pub label: String,
    pub j_theta: f64,
    /// Paired mean of `ψ_arm − ψ_base`.
    pub difference: f64,
    pub difference_se: f64,
    /// `difference > k·SE`.
    pub increase_significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub base: CostEstimate,
    pub arms: Vec<ArmResult>,
}

/// Costs of the LQ feedback and its perturbations on common drivers.
pub fn perturbation_optimality_test(
    sol: &RiccatiSolution,
    perturbations: &[Perturbation],
    drivers: &BrownianBundle,
    se_multiplier: f64,
) -> Result<PerturbationReport> {
    let model = expand_lq(&sol.spec)?;
    if drivers.grid() != &sol.grid {
        return Err(Error::Shape("drivers and Riccati solution use different grids".into()));
    }
    let base_policy = LqFeedback::new(sol);
    let base_terminal = simulate_terminal(&model, &base_policy, drivers)?;
    let base_logs = log_terminal_weight(&base_terminal, &model)?;
    let base = cost_from_logs(&base_logs, model.theta(), base_terminal.label.clone());
    let mut arms = Vec::with_capacity(perturbations.len());
    for p in perturbations {
        let policy = match *p {
            Perturbation::Zero => LqFeedback::new(sol),
            Perturbation::Gain(k) => LqFeedback::new(sol).with_gain_scale(k),
            Perturbation::Needle(n) => LqFeedback::new(sol).with_needle(n),
        };
        let terminal = simulate_terminal(&model, &policy, drivers)?;
        let logs = log_terminal_weight(&terminal, &model)?;
        let cost = cost_from_logs(&logs, model.theta(), terminal.label.clone());
        // differences scaled by the base cost level to stay in range
        let scale = base.log_j;
        let diffs: Vec<f64> = logs
            .iter()
            .zip(&base_logs)
            .map(|(a, b)| (a - scale).exp() - (b - scale).exp())
            .collect();
        let d = MeanWithSe::from_samples(&diffs);
        let factor = scale.exp();
        let difference = d.mean * factor;
        let difference_se = d.se_or_zero() * factor;
        arms.push(ArmResult {
            label: p.label(),
            j_theta: cost.j_theta,
            difference,
            difference_se,
            increase_significant: difference > se_multiplier * difference_se,
        });
    }
    Ok(PerturbationReport { base, arms })
}
