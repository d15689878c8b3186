//! The experiment pipeline as library calls: collection, fitting, grid
//! evaluation, closed-loop runs and timing. The binary only adds file I/O.

use std::time::Instant;

use gpmpc::datasets::{collect_random, collect_trajectory, subsample_clusters, Dataset, SUBSTEPS};
use gpmpc::gp::{fit_hyperparameters, GpModel};
use gpmpc::kernels::KernelSpec;
use gpmpc::linearize::{discrete_to_continuous, local_discrete, AnalyticLinearizer, GpLinearizer, Linearizer};
use gpmpc::mpc::{policy_step, LogRecord, MPCConfig, PolicyState};
use gpmpc::plants::{step_hold_noisy, Plant};
use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Collection, ControllerModel, ExperimentConfig, OnPolicyCollection};
use crate::error::{CliError, Result};

/// Offset separating the goal/exploration stream from the plant-noise stream.
const GOAL_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

pub struct Collected {
    pub raw: Dataset,
    /// Ward-linkage subsample when `dataset.cluster` is set.
    pub clustered: Option<Dataset>,
    /// The plant diverged during on-policy collection.
    pub truncated: bool,
}

impl Collected {
    /// The set a model should be trained on.
    pub fn training(&self) -> &Dataset {
        self.clustered.as_ref().unwrap_or(&self.raw)
    }
}

pub fn collect_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Collected> {
    let plant = cfg.plant.build()?;
    let ds_cfg = &cfg.dataset;
    let (raw, truncated) = match &ds_cfg.collection {
        Collection::Random(r) => {
            let sr: Vec<_> = r.state_ranges.iter().map(|r| (r[0], r[1])).collect();
            let ir: Vec<_> = r.input_ranges.iter().map(|r| (r[0], r[1])).collect();
            let ds = collect_random(plant.as_ref(), &sr, &ir, r.count, ds_cfg.dt, seed, ds_cfg.noise_scale)?;
            (ds, false)
        }
        Collection::OnPolicy(p) => {
            let roll = collect_on_policy(cfg, plant.as_ref(), p, seed)?;
            (roll.dataset, roll.truncated)
        }
    };
    if raw.is_empty() {
        return Err(CliError::Numerical(
            "the plant diverged before the first transition".into(),
        ));
    }
    let clustered = match ds_cfg.cluster {
        Some(k) if k < raw.len() => Some(subsample_clusters(&raw, k)?),
        Some(_) => Some(raw.clone()),
        None => None,
    };
    Ok(Collected {
        raw,
        clustered,
        truncated,
    })
}

fn goal_distance(x: &DVector<f64>, dims: &[usize], goal: &[f64]) -> f64 {
    dims.iter()
        .zip(goal)
        .map(|(&d, g)| (x[d] - g).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Writes the goal (or a point at most `clip` away from `x` toward it) into
/// the controller's reference.
fn set_reference(mpc: &mut MPCConfig, x: &DVector<f64>, dims: &[usize], goal: &[f64], clip: Option<f64>) {
    let dist = goal_distance(x, dims, goal);
    let scale = match clip {
        Some(c) if dist > c => c / dist,
        _ => 1.0,
    };
    for (&d, g) in dims.iter().zip(goal) {
        mpc.x_goal[d] = x[d] + (g - x[d]) * scale;
    }
}

fn draw_goal(rng: &mut ChaCha8Rng, ranges: &[[f64; 2]]) -> Vec<f64> {
    ranges
        .iter()
        .map(|r| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.random_range(r[0]..r[1])
            }
        })
        .collect()
}

/// An MPC on the exact model chases random goals while uniform noise is
/// added to every applied input.
fn collect_on_policy(
    cfg: &ExperimentConfig,
    plant: &dyn Plant,
    p: &OnPolicyCollection,
    seed: u64,
) -> Result<gpmpc::datasets::Rollout> {
    let dt = cfg.dataset.dt;
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let lin = AnalyticLinearizer::new(plant, dt);
    let mut mpc = cfg.mpc_block()?.build(n, m, dt, &cfg.qp, &lin)?;
    let (u_lo, u_hi) = (mpc.u_lo.clone(), mpc.u_hi.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ GOAL_STREAM);
    let mut goal = draw_goal(&mut rng, &p.goal_ranges);
    let mut ps = PolicyState::new();
    let mut controller = |_t: f64, x: &DVector<f64>| -> gpmpc::Result<DVector<f64>> {
        if goal_distance(x, &p.goal_dims, &goal) < p.goal_radius {
            goal = draw_goal(&mut rng, &p.goal_ranges);
        }
        set_reference(&mut mpc, x, &p.goal_dims, &goal, p.reference_clip);
        let (u, _) = policy_step(&mut ps, &lin, &mpc, x)?;
        Ok(DVector::from_fn(m, |j, _| {
            let noise = if p.exploration > 0.0 {
                rng.random_range(-p.exploration..p.exploration)
            } else {
                0.0
            };
            (u[j] + noise).clamp(u_lo[j], u_hi[j])
        }))
    };
    let x0 = DVector::from_column_slice(&p.x0);
    Ok(collect_trajectory(
        plant,
        &mut controller,
        &x0,
        p.steps,
        dt,
        seed,
        cfg.dataset.noise_scale,
    )?)
}

/// Fits the configured kernel, first maximizing the marginal likelihood
/// when `gp.optimize` is set.
pub fn fit_model(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<GpModel> {
    let plant = cfg.plant.build()?;
    if ds.n != plant.state_dim() || ds.m != plant.input_dim() {
        return Err(CliError::Config(format!(
            "dataset has n = {}, m = {} but the plant has n = {}, m = {}",
            ds.n,
            ds.m,
            plant.state_dim(),
            plant.input_dim()
        )));
    }
    let kernel = if cfg.gp.optimize {
        fit_hyperparameters(ds, &cfg.kernel, cfg.gp.noise_var, cfg.gp.bounds, cfg.gp.restarts, seed)?
    } else {
        cfg.kernel.clone()
    };
    Ok(GpModel::fit(ds, &kernel, cfg.gp.noise_var)?)
}

#[derive(Clone, Debug)]
pub struct GridCell {
    /// Coordinates on the two grid dimensions.
    pub at: [f64; 2],
    pub f_true: DVector<f64>,
    /// `A x + B u + C` of the continuous model at the cell; NaN when the
    /// conversion failed.
    pub f_est: DVector<f64>,
    pub err: f64,
}

#[derive(Clone, Debug)]
pub struct GridReport {
    pub dims: [usize; 2],
    pub resolution: usize,
    pub ranges: [[f64; 2]; 2],
    /// Row-major over the first grid dimension.
    pub cells: Vec<GridCell>,
    pub failures: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

fn percentile(mut v: Vec<f64>, p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let idx = ((p / 100.0) * (v.len() - 1) as f64).round() as usize;
    v[idx.min(v.len() - 1)]
}

impl GridReport {
    /// Median model error over the cells that evaluated.
    pub fn median_error(&self) -> f64 {
        median(self.cells.iter().map(|c| c.err).filter(|e| e.is_finite()).collect())
    }

    /// Median of `‖ẋ‖`, the error of predicting zero everywhere.
    pub fn median_baseline(&self) -> f64 {
        median(self.cells.iter().map(|c| c.f_true.norm()).collect())
    }
}

/// True against estimated vector field on a square grid of cell centres.
pub fn grid_errors(cfg: &ExperimentConfig, model: &GpModel) -> Result<GridReport> {
    let plant = cfg.plant.build()?;
    let map = cfg.plant.output_map();
    let (n, m) = (plant.state_dim(), plant.input_dim());
    if model.state_dim() != n || model.input_dim() != m {
        return Err(CliError::Config("model dimensions do not match the plant".into()));
    }
    let g = &cfg.evalgrid;
    let ranges = match (&g.ranges, &cfg.dataset.collection) {
        (Some(r), _) => *r,
        (None, Collection::Random(r)) => [r.state_ranges[g.dims[0]], r.state_ranges[g.dims[1]]],
        (None, _) => {
            return Err(CliError::Config(
                "evalgrid.ranges is required for on-policy datasets".into(),
            ))
        }
    };
    if g.resolution == 0 {
        return Err(CliError::Config("evalgrid.resolution must be at least 1".into()));
    }
    let base = g.base.clone().unwrap_or_else(|| vec![0.0; n]);
    let u = DVector::from_vec(g.input.clone().unwrap_or_else(|| vec![0.0; m]));
    let centre = |r: [f64; 2], i: usize| r[0] + (i as f64 + 0.5) * (r[1] - r[0]) / g.resolution as f64;

    let mut cells = Vec::with_capacity(g.resolution * g.resolution);
    let mut failures = 0;
    for i in 0..g.resolution {
        for j in 0..g.resolution {
            let at = [centre(ranges[0], i), centre(ranges[1], j)];
            let mut x = DVector::from_column_slice(&base);
            x[g.dims[0]] = at[0];
            x[g.dims[1]] = at[1];
            let f_true = plant.f(&x, &u);
            let est = local_discrete(model, map.as_deref(), x.as_slice(), u.as_slice())
                .and_then(|dl| discrete_to_continuous(&dl))
                .map(|cl| cl.apply(&x, &u));
            let (f_est, err) = match est {
                Ok(f) if f.iter().all(|v| v.is_finite()) => {
                    let e = (&f - &f_true).norm();
                    (f, e)
                }
                _ => {
                    failures += 1;
                    (DVector::from_element(n, f64::NAN), f64::NAN)
                }
            };
            cells.push(GridCell { at, f_true, f_est, err });
        }
    }
    Ok(GridReport {
        dims: g.dims,
        resolution: g.resolution,
        ranges,
        cells,
        failures,
    })
}

#[derive(Debug)]
pub struct RunReport {
    pub n: usize,
    pub m: usize,
    pub records: Vec<LogRecord>,
    /// Time at which each goal was reached, in order.
    pub goals_reached: Vec<f64>,
    pub final_state: DVector<f64>,
    /// Why the loop stopped early, if it did.
    pub failure: Option<CliError>,
    /// Linearizations used by the first step, as JSON.
    pub first_linearizations: Vec<serde_json::Value>,
}

impl RunReport {
    pub fn states(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.records
            .iter()
            .map(|r| &r.x)
            .chain(std::iter::once(&self.final_state))
    }

    pub fn all_goals_reached(&self, goals: usize) -> bool {
        self.goals_reached.len() == goals
    }

    /// Settling time of `|x[dim]| ≤ tol` after each impulse time: the time
    /// from the impulse to the last logged excursion before the next impulse
    /// (or the end of the run); infinite if the last sample in the window is
    /// still outside. `None` when the loop stopped inside the window.
    pub fn recovery_times(&self, dim: usize, impulses: &[f64], tol: f64) -> Vec<Option<f64>> {
        let end = self.records.last().map(|r| r.t).unwrap_or(f64::NEG_INFINITY);
        let complete = self.failure.is_none();
        impulses
            .iter()
            .enumerate()
            .map(|(i, &t0)| {
                let t1 = impulses.get(i + 1).copied().unwrap_or(f64::INFINITY);
                if !complete && end < t1 {
                    return None;
                }
                let window: Vec<_> = self.records.iter().filter(|r| r.t >= t0 && r.t < t1).collect();
                match window.iter().rposition(|r| r.x[dim].abs() > tol) {
                    Some(k) if k + 1 == window.len() => Some(f64::INFINITY),
                    Some(k) => Some(window[k].t - t0),
                    None => Some(0.0),
                }
            })
            .collect()
    }
}

/// Owns whichever model the controller linearizes.
enum ControlModel<'a> {
    Gp(GpLinearizer<'a>),
    Analytic(Box<dyn Plant>, f64),
}

impl ControlModel<'_> {
    fn with<T>(&self, f: impl FnOnce(&dyn Linearizer) -> T) -> T {
        match self {
            ControlModel::Gp(l) => f(l),
            ControlModel::Analytic(p, dt) => f(&AnalyticLinearizer::new(p.as_ref(), *dt)),
        }
    }
}

/// Receding-horizon loop against the simulated plant.
///
/// Scheduled impulses are added to the state at the start of the step they
/// fall in. Goals are checked on the measured state before each solve; the
/// run ends after `steps` steps or once the last goal is reached.
pub fn closed_loop(cfg: &ExperimentConfig, model: Option<&GpModel>, steps: usize) -> Result<RunReport> {
    let plant = cfg.plant.build()?;
    let map = cfg.plant.output_map();
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let run = &cfg.run;
    let (control, dt) = match &run.model {
        ControllerModel::Gp => {
            let gp = model.ok_or_else(|| CliError::Config("run needs a fitted model".into()))?;
            (ControlModel::Gp(GpLinearizer::new(gp, map.as_deref())), gp.dt())
        }
        ControllerModel::Analytic(spec) => {
            let dt = model.map(|g| g.dt()).unwrap_or(cfg.dataset.dt);
            (ControlModel::Analytic(spec.build()?, dt), dt)
        }
    };
    let mut mpc = control.with(|lin| cfg.mpc_block()?.build(n, m, dt, &cfg.qp, lin))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.dataset.seed ^ GOAL_STREAM);
    let mut x = DVector::from_vec(run.x0.clone().unwrap_or_else(|| vec![0.0; n]));
    let mut ps = PolicyState::new();
    let mut report = RunReport {
        n,
        m,
        records: Vec::with_capacity(steps),
        goals_reached: Vec::new(),
        final_state: x.clone(),
        failure: None,
        first_linearizations: Vec::new(),
    };

    for k in 0..steps {
        let t = k as f64 * dt;
        for imp in run.disturbances.between(t, t + dt) {
            for (xi, dv) in x.iter_mut().zip(&imp.dv) {
                *xi += dv;
            }
        }
        if let Some(goal) = run.goals.get(report.goals_reached.len()) {
            if goal_distance(&x, &run.goal_dims, goal) < run.goal_radius {
                report.goals_reached.push(t);
                if report.goals_reached.len() == run.goals.len() {
                    break;
                }
            }
        }
        if let Some(goal) = run.goals.get(report.goals_reached.len()) {
            set_reference(&mut mpc, &x, &run.goal_dims, goal, run.reference_clip);
        }
        let (u, diag) = match control.with(|lin| policy_step(&mut ps, lin, &mpc, &x)) {
            Ok(v) => v,
            Err(e) => {
                report.failure = Some(e.into());
                break;
            }
        };
        if k == 0 {
            report.first_linearizations = ps.lins.iter().map(|l| l.to_json()).collect();
        }
        let next = match step_hold_noisy(plant.as_ref(), &x, &u, dt, SUBSTEPS, run.noise_scale, &mut rng) {
            Ok(v) => v,
            Err(e) => {
                report.failure = Some(e.into());
                break;
            }
        };
        report.records.push(LogRecord {
            t,
            x: x.clone(),
            u,
            one_step_err: (&next - &diag.predicted_next).norm(),
            predicted_next: diag.predicted_next,
            cost: diag.cost,
            qp_iters: diag.qp_iterations,
            solve_ms: diag.solve_ms,
            qp_status: diag.qp_status,
        });
        x = next;
    }
    if report.failure.is_none() && report.goals_reached.len() < run.goals.len() {
        let goal = &run.goals[report.goals_reached.len()];
        if goal_distance(&x, &run.goal_dims, goal) < run.goal_radius {
            report.goals_reached.push(report.records.len() as f64 * dt);
        }
    }
    report.final_state = x;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub median_ms: f64,
    pub p99_ms: f64,
    /// Linearizations performed per policy step (constant for a fixed horizon).
    pub linearizations: usize,
}

/// Wall time of `policy_step` at each configured training-set size.
///
/// Each size is a Ward subsample of `ds` fitted with `kernel` and
/// `noise_var`. The controller runs the configured goal sequence on the
/// simulated plant and restarts from `run.x0` whenever the loop ends, until
/// `bench.steps` steps are timed.
pub fn bench(cfg: &ExperimentConfig, ds: &Dataset, kernel: &KernelSpec, noise_var: f64) -> Result<Vec<BenchRow>> {
    let plant = cfg.plant.build()?;
    let map = cfg.plant.output_map();
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let run = &cfg.run;
    let mut rows = Vec::new();
    for &size in &cfg.bench.sizes {
        if size == 0 || size > ds.len() {
            return Err(CliError::Config(format!(
                "bench size {size} is outside 1..={} (dataset size)",
                ds.len()
            )));
        }
        let sub = if size < ds.len() {
            subsample_clusters(ds, size)?
        } else {
            ds.clone()
        };
        let gp = GpModel::fit(&sub, kernel, noise_var)?;
        let lin = GpLinearizer::new(&gp, map.as_deref());
        let mut mpc = cfg.mpc_block()?.build(n, m, gp.dt(), &cfg.qp, &lin)?;
        let x0 = DVector::from_vec(run.x0.clone().unwrap_or_else(|| vec![0.0; n]));
        let mut x = x0.clone();
        let mut ps = PolicyState::new();
        let mut goal_idx = 0;
        let mut times = Vec::with_capacity(cfg.bench.steps);
        let mut linearizations = 0;
        while times.len() < cfg.bench.steps {
            if let Some(goal) = run.goals.get(goal_idx) {
                if goal_distance(&x, &run.goal_dims, goal) < run.goal_radius {
                    goal_idx += 1;
                }
            }
            let restart = |x: &mut DVector<f64>, ps: &mut PolicyState, goal_idx: &mut usize| {
                *x = x0.clone();
                *ps = PolicyState::new();
                *goal_idx = 0;
            };
            if goal_idx >= run.goals.len() && !run.goals.is_empty() {
                restart(&mut x, &mut ps, &mut goal_idx);
            }
            if let Some(goal) = run.goals.get(goal_idx) {
                set_reference(&mut mpc, &x, &run.goal_dims, goal, run.reference_clip);
            }
            let start = Instant::now();
            let step = policy_step(&mut ps, &lin, &mpc, &x);
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            let next = step.and_then(|(u, d)| {
                linearizations = d.linearizations;
                gpmpc::plants::step_hold(plant.as_ref(), &x, &u, gp.dt(), SUBSTEPS)
            });
            times.push(elapsed);
            match next {
                Ok(v) if v.iter().all(|c| c.abs() < 1e6) => x = v,
                _ => restart(&mut x, &mut ps, &mut goal_idx),
            }
        }
        rows.push(BenchRow {
            size,
            median_ms: median(times.clone()),
            p99_ms: percentile(times, 99.0),
            linearizations,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_percentile() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(v, 99.0), 99.0);
    }

    #[test]
    fn reference_is_clipped_toward_goal() {
        let mut mpc = MPCConfig::new(
            nalgebra::DMatrix::identity(3, 3),
            nalgebra::DMatrix::identity(1, 1),
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
            0.1,
        );
        let x = DVector::from_vec(vec![1.0, 1.0, 5.0]);
        set_reference(&mut mpc, &x, &[0, 1], &[4.0, 5.0], Some(2.5));
        assert!((mpc.x_goal[0] - 2.5).abs() < 1e-12);
        assert!((mpc.x_goal[1] - 3.0).abs() < 1e-12);
        assert_eq!(mpc.x_goal[2], 0.0);
        set_reference(&mut mpc, &x, &[0, 1], &[2.0, 1.0], Some(2.5));
        assert_eq!(mpc.x_goal[0], 2.0);
        assert_eq!(mpc.x_goal[1], 1.0);
    }
}
