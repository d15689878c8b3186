//! Subcommands: run the experiment step, write artifacts, return a summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gpmpc::datasets::{meta_path, write_atomic, Dataset};
use gpmpc::gp::{bin_path, GpModel};
use gpmpc::mpc::save_log;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::{self, GridReport};
use crate::plots;

/// Options shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Globals {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub force: bool,
}

/// Output directory guard: every file a command writes is claimed up
/// front, so a refused overwrite leaves nothing half-written.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn claim(dir: &Path, force: bool, names: &[PathBuf]) -> Result<Output> {
        if !force {
            if let Some(p) = names.iter().map(|n| dir.join(n)).find(|p| p.exists()) {
                return Err(CliError::Config(format!(
                    "{} already exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<()> {
        Ok(write_atomic(&self.path(name), text.as_bytes())?)
    }
}

fn dataset_files(name: &str) -> Vec<PathBuf> {
    let p = PathBuf::from(name);
    vec![meta_path(&p), p]
}

fn model_files(name: &str) -> Vec<PathBuf> {
    let p = PathBuf::from(name);
    vec![bin_path(&p), p]
}

fn owned(names: &[&str]) -> Vec<PathBuf> {
    names.iter().map(PathBuf::from).collect()
}

fn ranges_summary(ds: &Dataset) -> String {
    let span = |vals: &dyn Fn(usize) -> Vec<f64>, count: usize| -> String {
        (0..count)
            .map(|i| {
                let v = vals(i);
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                format!("[{lo:.3}, {hi:.3}]")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let xs = |i: usize| ds.transitions.iter().map(|t| t.x[i]).collect();
    let us = |i: usize| ds.transitions.iter().map(|t| t.u[i]).collect();
    format!("state {}\n  input {}", span(&xs, ds.n), span(&us, ds.m))
}

/// Overrides accepted by `collect`.
#[derive(Clone, Debug, Default)]
pub struct CollectArgs {
    pub count: Option<usize>,
    pub dt: Option<f64>,
    pub cluster: Option<usize>,
}

pub fn collect(cfg: &ExperimentConfig, g: &Globals, args: &CollectArgs) -> Result<String> {
    let mut cfg = cfg.clone();
    if let Some(dt) = args.dt {
        cfg.dataset.dt = dt;
    }
    if let Some(k) = args.cluster {
        cfg.dataset.cluster = Some(k);
    }
    if let Some(count) = args.count {
        match &mut cfg.dataset.collection {
            crate::config::Collection::Random(r) => r.count = count,
            crate::config::Collection::OnPolicy(p) => p.steps = count,
        }
    }
    cfg.validate()?;
    let mut names = dataset_files("transitions.csv");
    if cfg.dataset.cluster.is_some() {
        names.extend(dataset_files("train.csv"));
    }
    let out = Output::claim(&g.out, g.force, &names)?;
    let data = experiment::collect_dataset(&cfg, cfg.seed(g.seed))?;
    data.raw.save(&out.path("transitions.csv"))?;
    let mut s = format!(
        "collected M = {} transitions at dt = {}\n  {}\n",
        data.raw.len(),
        data.raw.dt,
        ranges_summary(&data.raw)
    );
    if data.truncated {
        s += "warning: the plant diverged; the log stops early\n";
    }
    if let Some(c) = &data.clustered {
        c.save(&out.path("train.csv"))?;
        writeln!(s, "clustered to M = {} representatives (train.csv)", c.len()).unwrap();
    }
    Ok(s)
}

fn default_dataset(out: &Path) -> PathBuf {
    let train = out.join("train.csv");
    if train.exists() {
        train
    } else {
        out.join("transitions.csv")
    }
}

pub fn fit(cfg: &ExperimentConfig, g: &Globals, dataset: Option<&Path>) -> Result<String> {
    let path = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_dataset(&g.out));
    let ds = Dataset::load(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let out = Output::claim(&g.out, g.force, &model_files("model.json"))?;
    let model = experiment::fit_model(cfg, &ds, cfg.seed(g.seed))?;
    model.save(&out.path("model.json"))?;
    Ok(format!(
        "fitted GP on M = {} transitions\n  kernel {}\n  log marginal likelihood {:.6}\n",
        model.len(),
        serde_json::to_string(model.kernel()).unwrap_or_default(),
        model.log_marginal_likelihood()
    ))
}

fn load_model(g: &Globals, model: Option<&Path>) -> Result<GpModel> {
    let path = model.map(Path::to_path_buf).unwrap_or_else(|| g.out.join("model.json"));
    GpModel::load(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn grid_csv(r: &GridReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let (a, b) = (format!("x{}", r.dims[0]), format!("x{}", r.dims[1]));
    w.write_record([a.as_str(), b.as_str(), "error", "true_norm"])?;
    for c in &r.cells {
        w.write_record([
            format!("{:.9e}", c.at[0]),
            format!("{:.9e}", c.at[1]),
            format!("{:.9e}", c.err),
            format!("{:.9e}", c.f_true.norm()),
        ])?;
    }
    bytes_to_string(w)
}

fn bytes_to_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Config(e.to_string()))
}

/// Every `stride`-th cell along both axes.
fn phase_csv(r: &GridReport, stride: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["a", "b", "da_true", "db_true", "da_model", "db_model"])?;
    let [d0, d1] = r.dims;
    for (k, c) in r.cells.iter().enumerate() {
        let (i, j) = (k / r.resolution, k % r.resolution);
        if i % stride != stride / 2 || j % stride != stride / 2 {
            continue;
        }
        w.write_record(
            [c.at[0], c.at[1], c.f_true[d0], c.f_true[d1], c.f_est[d0], c.f_est[d1]].map(|v| format!("{v:.9e}")),
        )?;
    }
    bytes_to_string(w)
}

pub fn evalgrid(
    cfg: &ExperimentConfig,
    g: &Globals,
    model: Option<&Path>,
    resolution: Option<usize>,
) -> Result<String> {
    let mut cfg = cfg.clone();
    if let Some(r) = resolution {
        cfg.evalgrid.resolution = r;
    }
    let model = load_model(g, model)?;
    let out = Output::claim(
        &g.out,
        g.force,
        &owned(&["grid.csv", "heatmap.gp", "phase.csv", "phase.gp"]),
    )?;
    let report = experiment::grid_errors(&cfg, &model)?;
    let labels = report.dims.map(|d| format!("x{d}"));
    let labels = [labels[0].as_str(), labels[1].as_str()];
    out.write("grid.csv", &grid_csv(&report)?)?;
    out.write("heatmap.gp", &plots::heatmap("grid.csv", labels))?;
    out.write("phase.csv", &phase_csv(&report, (report.resolution / 20).max(1))?)?;
    out.write("phase.gp", &plots::phase("phase.csv", labels))?;
    let (err, base) = (report.median_error(), report.median_baseline());
    Ok(format!(
        "{}x{} grid over x{} in [{}, {}], x{} in [{}, {}]\n  median error {err:.4e}\n  median |dx/dt| (zero model) {base:.4e}\n  ratio {:.1}\n  failed cells {}\n",
        report.resolution,
        report.resolution,
        report.dims[0],
        report.ranges[0][0],
        report.ranges[0][1],
        report.dims[1],
        report.ranges[1][0],
        report.ranges[1][1],
        base / err,
        report.failures
    ))
}

#[derive(Clone, Debug, Default)]
pub struct RunArgs {
    pub model: Option<PathBuf>,
    pub steps: Option<usize>,
    /// Also write the first step's linearizations.
    pub debug: bool,
}

/// Angle band used to report recovery after scheduled impulses, rad.
pub const RECOVERY_TOL: f64 = 0.05;

pub fn run(cfg: &ExperimentConfig, g: &Globals, args: &RunArgs) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.dataset.seed = cfg.seed(g.seed);
    let model = match (&cfg.run.model, &args.model) {
        (crate::config::ControllerModel::Gp, m) => Some(load_model(g, m.as_deref())?),
        (_, Some(m)) => Some(load_model(g, Some(m))?),
        (_, None) => None,
    };
    let mut names = owned(&["run.csv", "trajectory.gp", "angle.gp", "one_step_error.gp"]);
    if args.debug {
        names.push("linearizations.json".into());
    }
    let out = Output::claim(&g.out, g.force, &names)?;
    let steps = args.steps.unwrap_or(cfg.run.steps);
    let report = experiment::closed_loop(&cfg, model.as_ref(), steps)?;
    save_log(&out.path("run.csv"), report.n, report.m, &report.records)?;
    let path_dims = match cfg.run.goal_dims.as_slice() {
        &[a, b] => Some([a, b]),
        _ => None,
    };
    let (angle_dim, band) = cfg.plant.angle_trace();
    out.write(
        "trajectory.gp",
        &plots::trajectory("run.csv", report.n, path_dims, &cfg.run.goals),
    )?;
    out.write("angle.gp", &plots::angle("run.csv", angle_dim, band))?;
    out.write(
        "one_step_error.gp",
        &plots::one_step_error("run.csv", report.n, report.m),
    )?;
    if args.debug {
        out.write(
            "linearizations.json",
            &serde_json::to_string_pretty(&report.first_linearizations).unwrap_or_default(),
        )?;
    }
    let errs: Vec<f64> = report.records.iter().map(|r| r.one_step_err).collect();
    let mean_err = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    let mut s = format!(
        "ran {} steps\n  final state {:?}\n  mean one-step error {mean_err:.3e}\n",
        report.records.len(),
        report.final_state.as_slice()
    );
    if !cfg.run.goals.is_empty() {
        writeln!(
            s,
            "  goals reached {}/{} at t = [{}] s",
            report.goals_reached.len(),
            cfg.run.goals.len(),
            report
                .goals_reached
                .iter()
                .map(|t| format!("{t:.2}"))
                .collect::<Vec<_>>()
                .join(", ")
        )
        .unwrap();
    }
    if !cfg.run.disturbances.impulses.is_empty() {
        let times: Vec<f64> = cfg.run.disturbances.impulses.iter().map(|i| i.t).collect();
        let rec = report.recovery_times(angle_dim, &times, RECOVERY_TOL);
        let shown: Vec<String> = rec
            .iter()
            .map(|r| match r {
                Some(v) if v.is_finite() => format!("{v:.2} s"),
                Some(_) => "not settled".into(),
                None => "stopped".into(),
            })
            .collect();
        writeln!(
            s,
            "  settling of |x{angle_dim}| <= {RECOVERY_TOL} after each impulse: {}",
            shown.join(", ")
        )
        .unwrap();
    }
    match report.failure {
        Some(e) => {
            print!("{s}");
            Err(CliError::Numerical(format!(
                "closed loop stopped early (log truncated): {e}"
            )))
        }
        None => Ok(s),
    }
}

pub fn bench(cfg: &ExperimentConfig, g: &Globals, dataset: Option<&Path>, model: Option<&Path>) -> Result<String> {
    let path = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| g.out.join("transitions.csv"));
    let ds = Dataset::load(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let (kernel, noise) = match model {
        Some(m) => {
            let gp = load_model(g, Some(m))?;
            (gp.kernel().clone(), gp.noise_var())
        }
        None => (cfg.kernel.clone(), cfg.gp.noise_var),
    };
    let out = Output::claim(&g.out, g.force, &owned(&["bench.csv"]))?;
    let rows = experiment::bench(cfg, &ds, &kernel, noise)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["M", "median_ms", "p99_ms", "linearizations"])?;
    let mut s = String::from("     M   median ms      p99 ms   linearizations\n");
    for r in &rows {
        w.write_record([
            r.size.to_string(),
            format!("{:.3}", r.median_ms),
            format!("{:.3}", r.p99_ms),
            r.linearizations.to_string(),
        ])?;
        writeln!(
            s,
            "{:>6} {:>11.3} {:>11.3} {:>16}",
            r.size, r.median_ms, r.p99_ms, r.linearizations
        )
        .unwrap();
    }
    out.write("bench.csv", &bytes_to_string(w)?)?;
    let slow: Vec<String> = rows
        .iter()
        .filter(|r| r.median_ms > cfg.bench.threshold_ms)
        .map(|r| format!("M = {} ({:.1} ms)", r.size, r.median_ms))
        .collect();
    if slow.is_empty() {
        Ok(s)
    } else {
        print!("{s}");
        Err(CliError::Threshold(format!(
            "median step time above {} ms for {}",
            cfg.bench.threshold_ms,
            slow.join(", ")
        )))
    }
}
