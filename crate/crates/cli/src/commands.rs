use std::collections::BTreeMap;
use std::path::Path;

use rsmfc::filter::{
    closed_form_filter, lq_ell, particle_filter, FilterEstimate, FilterForm, LqFeedback, ParticleFilterConfig,
    VarianceSource,
};
use rsmfc::hamiltonian::lq_control;
use rsmfc::model::TimeGrid;
use rsmfc::montecarlo::{check_variational_inequality, cost_of, theta_expansion_check, ViConfig};
use rsmfc::riccati::{riccati_residual, solve_riccati, RiccatiSolution};
use rsmfc::sde::{
    brownian_increments, density_terminal_check, evolve_system, evolve_vtheta, generate_drivers, simulate_terminal,
    BrownianBundle, ConstantControl, EnsembleTrajectory, TerminalEnsemble,
};
use rsmfc::stats::MeanWithSe;
use serde::Serialize;

use crate::config::{FilterSource, Resolved, Scenario};
use crate::output::write_csv;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Result of one subcommand: named checks plus scalar diagnostics.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
}

impl Outcome {
    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn grid(r: &Resolved) -> Result<TimeGrid, CliError> {
    let horizon = r.model()?.horizon();
    Ok(TimeGrid::new(horizon, r.n_steps)?)
}

fn riccati(r: &Resolved, grid: &TimeGrid) -> Result<RiccatiSolution, CliError> {
    Ok(solve_riccati(r.case, r.lq()?, grid)?)
}

fn martingale_check(out: &mut Outcome, name: &str, est: &MeanWithSe) {
    let se = est.se_or_zero();
    out.check(
        name,
        est.within(1.0, 3.0),
        format!("mean {} se {} over {} paths", est.mean, se, est.n),
    );
    out.metric(&format!("{name}_mean"), est.mean);
    out.metric(&format!("{name}_se"), se);
}

#[derive(Serialize)]
struct TrajectoryRow {
    path_id: usize,
    step: usize,
    t: f64,
    rho: f64,
    x: f64,
    xi: f64,
    m: f64,
}

fn write_trajectory(path: &Path, traj: &EnsembleTrajectory, dump: usize) -> Result<(), CliError> {
    let g = traj.grid();
    let rows = (0..dump.min(traj.n_paths())).flat_map(|i| {
        (0..=g.n_steps()).map(move |k| TrajectoryRow {
            path_id: i,
            step: k,
            t: g.t(k),
            rho: traj.rho(i, k),
            x: traj.x(i, k),
            xi: traj.xi(i, k),
            m: traj.m()[k],
        })
    });
    write_csv(path, rows)
}

pub fn simulate(r: &Resolved, out_dir: &Path) -> Result<Outcome, CliError> {
    let model = r.model()?;
    let grid = grid(r)?;
    let drivers = generate_drivers(&grid, r.paths, r.seed)?;
    let mut out = Outcome::default();
    let traj = match &r.scenario {
        Scenario::Lq(_) => {
            let sol = riccati(r, &grid)?;
            let traj = evolve_system(&model, &LqFeedback::new(&sol), &drivers)?;
            let v = evolve_vtheta(&model, &lq_ell(&sol), &drivers, &traj, 1.0)?;
            let l_t = v.density_step(grid.n_steps());
            martingale_check(&mut out, "tilt_density", &MeanWithSe::from_samples(&l_t));
            traj
        }
        Scenario::Custom(_) => evolve_system(&model, &ConstantControl(r.control), &drivers)?,
    };
    let rho = density_terminal_check(&traj.terminal());
    martingale_check(&mut out, "observation_density", &rho);
    out.metric("clamped_controls", traj.clamped() as f64);
    write_trajectory(&out_dir.join("trajectory.csv"), &traj, r.dump_paths)?;
    Ok(out)
}

#[derive(Serialize)]
struct GammaRow {
    step: usize,
    t: f64,
    gamma: f64,
}

pub fn riccati_cmd(r: &Resolved, out_dir: &Path) -> Result<Outcome, CliError> {
    let grid = grid(r)?;
    let sol = riccati(r, &grid)?;
    let rows = sol.gamma.iter().enumerate().map(|(k, &gamma)| GammaRow {
        step: k,
        t: grid.t(k),
        gamma,
    });
    write_csv(&out_dir.join("gamma.csv"), rows)?;
    let mut out = Outcome::default();
    let residual = riccati_residual(&sol);
    out.check("terminal_value", sol.gamma[grid.n_steps()] == 1.0, format!("gamma(T) = {}", sol.gamma[grid.n_steps()]));
    out.check("ode_residual", residual <= 1e-8, format!("max residual {residual:e}"));
    out.metric("ode_residual", residual);
    out.metric("lambda", sol.lambda);
    out.metric("gamma_0", sol.gamma[0]);
    Ok(out)
}

#[derive(Serialize)]
struct FilterRow {
    step: usize,
    t: f64,
    mean: f64,
    variance: f64,
    ess: f64,
}

fn write_filter(path: &Path, grid: &TimeGrid, est: &FilterEstimate) -> Result<(), CliError> {
    let rows = (0..=grid.n_steps()).map(|k| FilterRow {
        step: k,
        t: grid.t(k),
        mean: est.mean[k],
        variance: est.variance[k],
        ess: est.ess[k],
    });
    write_csv(path, rows)
}

pub fn filter(r: &Resolved, out_dir: &Path) -> Result<Outcome, CliError> {
    let model = r.model()?;
    let grid = grid(r)?;
    let sol = riccati(r, &grid)?;
    let y = brownian_increments(&grid, r.seed, 0);
    let mut out = Outcome::default();
    let est = match r.source {
        FilterSource::ClosedForm => closed_form_filter(&sol, &y, VarianceSource::GaussianOde, FilterForm::Consistent)?,
        FilterSource::Particle => {
            let run = particle_filter(
                &model,
                &lq_ell(&sol),
                &grid,
                &y,
                |k, _, mean| lq_control(&sol, k, mean).0,
                None,
                &ParticleFilterConfig::new(r.particles, r.seed.wrapping_add(1)),
            )?;
            let pf = run.estimate;
            let cf = closed_form_filter(&sol, &y, VarianceSource::ParticleSupplied(&pf.variance), FilterForm::Consistent)?;
            let n = grid.n_steps();
            let rmse = ((1..=n).map(|k| (pf.mean[k] - cf.mean[k]).powi(2)).sum::<f64>() / n as f64).sqrt();
            let se = ((1..=n).map(|k| pf.mean_se[k].powi(2)).sum::<f64>() / n as f64).sqrt();
            out.check(
                "closed_form_agreement",
                rmse <= 5.0 * se,
                format!("mean-path rmse {rmse} vs particle se {se}"),
            );
            out.metric("rmse", rmse);
            out.metric("particle_se", se);
            out.metric("resample_steps", run.resample_steps.len() as f64);
            pf
        }
    };
    out.metric("terminal_mean", est.mean[grid.n_steps()]);
    out.metric("terminal_variance", est.variance[grid.n_steps()]);
    write_filter(&out_dir.join("filter.csv"), &grid, &est)?;
    Ok(out)
}

fn terminal_under_policy(r: &Resolved, drivers: &BrownianBundle) -> Result<TerminalEnsemble, CliError> {
    let model = r.model()?;
    Ok(match &r.scenario {
        Scenario::Lq(_) => {
            let sol = riccati(r, drivers.grid())?;
            simulate_terminal(&model, &LqFeedback::new(&sol), drivers)?
        }
        Scenario::Custom(_) => simulate_terminal(&model, &ConstantControl(r.control), drivers)?,
    })
}

#[derive(Serialize)]
struct CostRow {
    control: String,
    theta: f64,
    j_theta: f64,
    log_j: f64,
    se: f64,
    n_paths: usize,
}

pub fn cost(r: &Resolved, out_dir: &Path) -> Result<Outcome, CliError> {
    let model = r.model()?;
    let grid = grid(r)?;
    let drivers = generate_drivers(&grid, r.paths, r.seed)?;
    let term = terminal_under_policy(r, &drivers)?;
    let est = cost_of(&model, &term)?;
    let mut out = Outcome::default();
    out.metric("j_theta", est.j_theta);
    out.metric("log_j", est.log_j);
    out.metric("se", est.se);
    let row = CostRow {
        control: est.control_label,
        theta: est.theta,
        j_theta: est.j_theta,
        log_j: est.log_j,
        se: est.se,
        n_paths: est.n_paths,
    };
    write_csv(&out_dir.join("cost.csv"), std::iter::once(row))?;
    Ok(out)
}

pub fn check_smp(r: &Resolved, out_dir: &Path) -> Result<Outcome, CliError> {
    let grid = grid(r)?;
    let sol = riccati(r, &grid)?;
    let mut cfg = ViConfig::standard(grid.horizon(), r.particles, r.seed);
    cfg.n_observation_paths = r.observation_paths;
    let report = check_variational_inequality(&sol, &cfg)?;
    write_csv(&out_dir.join("vi_report.csv"), report.cells.iter())?;
    let mut out = Outcome::default();
    let describe = |cells: Vec<&rsmfc::montecarlo::ViCell>| {
        if cells.is_empty() {
            format!("0 of {} cells", report.cells.len())
        } else {
            let list: Vec<String> = cells
                .iter()
                .map(|c| format!("(path {}, t {}, u {})", c.observation_path, c.t, c.u))
                .collect();
            format!("{} of {} cells: {}", cells.len(), report.cells.len(), list.join(", "))
        }
    };
    let violations: Vec<_> = report.violations().collect();
    let mismatches: Vec<_> = report.mismatches().collect();
    out.check("variational_inequality", violations.is_empty(), describe(violations));
    out.check("analytic_collapse", mismatches.is_empty(), describe(mismatches));
    out.metric("cells", report.cells.len() as f64);
    Ok(out)
}

#[derive(Serialize)]
struct SweepRow {
    theta: f64,
    j_theta: f64,
    certainty_equivalent: f64,
    expansion_residual: f64,
}

pub fn sweep_theta(r: &Resolved, out_dir: &Path) -> Result<Outcome, CliError> {
    let model = r.model()?;
    let grid = grid(r)?;
    let drivers = generate_drivers(&grid, r.paths, r.seed)?;
    let term = terminal_under_policy(r, &drivers)?;
    let table = theta_expansion_check(&model, &term, &r.thetas)?;
    let rows = table.rows.iter().map(|row| SweepRow {
        theta: row.theta,
        j_theta: row.j_theta,
        certainty_equivalent: row.certainty_equivalent,
        expansion_residual: row.residual,
    });
    write_csv(&out_dir.join("sweep.csv"), rows)?;
    let mut out = Outcome::default();
    if let Some(s) = table.slope {
        out.metric("residual_slope", s);
    }
    Ok(out)
}
