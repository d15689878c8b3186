//! Experiment configuration. Strict JSON: unknown keys are rejected, and a
//! `null` entry in a state bound means "unbounded on that side".

use std::fs;
use std::path::{Path, PathBuf};

use gpmpc::gp::HyperBounds;
use gpmpc::kernels::KernelSpec;
use gpmpc::linearize::Linearizer;
use gpmpc::mpc::MPCConfig;
use gpmpc::plants::{
    segway_idx, DisturbanceSpec, OutputMap, Pendulum, PendulumConfig, Plant, Segway, SegwayConfig, SegwayKinematics,
};
use gpmpc::qpsolve::Settings;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub kernel: KernelSpec,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub mpc: Option<MpcBlock>,
    #[serde(default)]
    pub qp: Settings,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub evalgrid: GridConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    /// Default output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    Pendulum(PendulumConfig),
    Segway(SegwayConfig),
}

impl PlantSpec {
    pub fn build(&self) -> Result<Box<dyn Plant>> {
        Ok(match self {
            PlantSpec::Pendulum(c) => Box::new(Pendulum::new(c.clone())?),
            PlantSpec::Segway(c) => Box::new(Segway::new(c.clone())?),
        })
    }

    /// Kinematic rows that replace the coordinates the GP does not model.
    pub fn output_map(&self) -> Option<Box<dyn OutputMap>> {
        match self {
            PlantSpec::Pendulum(_) => None,
            PlantSpec::Segway(_) => Some(Box::new(SegwayKinematics)),
        }
    }

    /// The angle plotted against time after a run, with its safety band.
    pub fn angle_trace(&self) -> (usize, Option<f64>) {
        match self {
            PlantSpec::Pendulum(_) => (0, None),
            PlantSpec::Segway(_) => (segway_idx::PITCH, Some(std::f64::consts::FRAC_PI_4)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Sampling period, s.
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of additive measurement noise on `x_next`.
    #[serde(default)]
    pub noise_scale: f64,
    /// Ward-linkage subsample size applied after collection.
    #[serde(default)]
    pub cluster: Option<usize>,
    pub collection: Collection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Collection {
    Random(RandomCollection),
    OnPolicy(OnPolicyCollection),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCollection {
    pub count: usize,
    pub state_ranges: Vec<[f64; 2]>,
    pub input_ranges: Vec<[f64; 2]>,
}

/// Closed-loop collection with an MPC on the plant's own analytic model,
/// chasing goals drawn uniformly from `goal_ranges`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnPolicyCollection {
    pub steps: usize,
    pub x0: Vec<f64>,
    /// State coordinates that define a goal.
    pub goal_dims: Vec<usize>,
    /// One range per goal coordinate.
    pub goal_ranges: Vec<[f64; 2]>,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    /// Half-width of the uniform perturbation added to every input.
    #[serde(default)]
    pub exploration: f64,
    /// Largest distance between the current state and the reference handed
    /// to the controller, measured on the goal coordinates.
    #[serde(default)]
    pub reference_clip: Option<f64>,
}

fn default_goal_radius() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub noise_var: f64,
    /// Maximize the log marginal likelihood over the kernel hyperparameters.
    pub optimize: bool,
    pub restarts: usize,
    pub bounds: HyperBounds,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            noise_var: 1e-6,
            optimize: false,
            restarts: 3,
            bounds: HyperBounds::default(),
        }
    }
}

/// Diagonal entries or a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Weight {
    pub fn matrix(&self, dim: usize, what: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            Weight::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Weight::Full(rows) => {
                if rows.iter().any(|r| r.len() != rows.len()) {
                    return Err(CliError::Config(format!("{what} must be square")));
                }
                DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
            }
        };
        if m.nrows() != dim {
            return Err(CliError::Config(format!(
                "{what} has size {}, expected {dim}",
                m.nrows()
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Terminal {
    /// Riccati recursion on the model linearized at `(x_goal, 0)`.
    #[default]
    Riccati,
    /// Multiple of `Q`.
    Scale(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcBlock {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub q: Weight,
    pub r: Weight,
    #[serde(default)]
    pub terminal: Terminal,
    pub x_goal: Vec<f64>,
    #[serde(default)]
    pub x_lo: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub x_hi: Option<Vec<Option<f64>>>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    #[serde(default = "default_slack_penalty")]
    pub slack_penalty: f64,
}

fn default_horizon() -> usize {
    20
}

fn default_slack_penalty() -> f64 {
    1e4
}

fn bounds(v: &Option<Vec<Option<f64>>>, n: usize, missing: f64, what: &str) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::from_element(n, missing)),
        Some(v) if v.len() == n => Ok(DVector::from_iterator(n, v.iter().map(|b| b.unwrap_or(missing)))),
        Some(v) => Err(CliError::Config(format!("{what} has length {}, expected {n}", v.len()))),
    }
}

impl MpcBlock {
    /// Controller configuration; the Riccati terminal weight is computed on `model`.
    pub fn build(&self, n: usize, m: usize, dt: f64, qp: &Settings, model: &dyn Linearizer) -> Result<MPCConfig> {
        let q = self.q.matrix(n, "mpc.q")?;
        let r = self.r.matrix(m, "mpc.r")?;
        for (v, len, what) in [
            (&self.x_goal, n, "mpc.x_goal"),
            (&self.u_lo, m, "mpc.u_lo"),
            (&self.u_hi, m, "mpc.u_hi"),
        ] {
            if v.len() != len {
                return Err(CliError::Config(format!(
                    "{what} has length {}, expected {len}",
                    v.len()
                )));
            }
        }
        let mut cfg = MPCConfig::new(
            q.clone(),
            r,
            DVector::from_column_slice(&self.u_lo),
            DVector::from_column_slice(&self.u_hi),
            dt,
        );
        cfg.horizon = self.horizon;
        cfg.x_goal = DVector::from_column_slice(&self.x_goal);
        cfg.x_lo = bounds(&self.x_lo, n, f64::NEG_INFINITY, "mpc.x_lo")?;
        cfg.x_hi = bounds(&self.x_hi, n, f64::INFINITY, "mpc.x_hi")?;
        cfg.slack_penalty = self.slack_penalty;
        cfg.qp = qp.clone();
        cfg.p = match &self.terminal {
            Terminal::Riccati => cfg.riccati_terminal(model)?,
            Terminal::Scale(s) => q * *s,
            Terminal::Matrix(rows) => Weight::Full(rows.clone()).matrix(n, "mpc.terminal")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which model the closed-loop controller linearizes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerModel {
    #[default]
    Gp,
    /// Finite-difference linearization of an analytic model, which may
    /// differ from the simulated plant.
    Analytic(PlantSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Initial state; zeros when absent.
    pub x0: Option<Vec<f64>>,
    pub steps: usize,
    pub goal_dims: Vec<usize>,
    /// Goal sequence on `goal_dims`; the next goal is issued once the state
    /// is within `goal_radius` of the current one, and the run ends after
    /// the last goal is reached.
    pub goals: Vec<Vec<f64>>,
    pub goal_radius: f64,
    pub reference_clip: Option<f64>,
    pub disturbances: DisturbanceSpec,
    /// Process noise added to each simulated transition.
    pub noise_scale: f64,
    pub model: ControllerModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            x0: None,
            steps: 200,
            goal_dims: Vec::new(),
            goals: Vec::new(),
            goal_radius: default_goal_radius(),
            reference_clip: None,
            disturbances: DisturbanceSpec::default(),
            noise_scale: 0.0,
            model: ControllerModel::Gp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: usize,
    /// The two state coordinates spanned by the grid.
    pub dims: [usize; 2],
    /// Grid extent; defaults to the random-collection ranges of `dims`.
    pub ranges: Option<[[f64; 2]; 2]>,
    /// Values of the remaining state coordinates (zeros when absent).
    pub base: Option<Vec<f64>>,
    /// Held input (zeros when absent).
    pub input: Option<Vec<f64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            resolution: 100,
            dims: [0, 1],
            ranges: None,
            base: None,
            input: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Training-set sizes to time.
    pub sizes: Vec<usize>,
    /// Timed policy steps per size.
    pub steps: usize,
    /// Largest acceptable median step time, ms.
    pub threshold_ms: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![1, 100, 200, 300],
            steps: 60,
            threshold_ms: 50.0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-block consistency checks.
    pub fn validate(&self) -> Result<()> {
        let plant = self.plant.build()?;
        let (n, m) = (plant.state_dim(), plant.input_dim());
        let gp_dim = n - plant.excluded_dims().len() + m;
        self.kernel
            .validate(gp_dim)
            .map_err(|e| CliError::Config(format!("kernel: {e} (the model input has {gp_dim} coordinates)")))?;
        if !(self.dataset.dt > 0.0) {
            return Err(CliError::Config("dataset.dt must be positive".into()));
        }
        if !(self.dataset.noise_scale >= 0.0) {
            return Err(CliError::Config("dataset.noise_scale must be non-negative".into()));
        }
        if self.dataset.cluster == Some(0) {
            return Err(CliError::Config("dataset.cluster must be at least 1".into()));
        }
        let check_len = |len: usize, want: usize, what: &str| -> Result<()> {
            if len == want {
                Ok(())
            } else {
                Err(CliError::Config(format!("{what} has length {len}, expected {want}")))
            }
        };
        let check_dims = |dims: &[usize], what: &str| -> Result<()> {
            match dims.iter().find(|&&d| d >= n) {
                Some(d) => Err(CliError::Config(format!(
                    "{what} refers to state coordinate {d} of {n}"
                ))),
                None => Ok(()),
            }
        };
        match &self.dataset.collection {
            Collection::Random(r) => {
                if r.count == 0 {
                    return Err(CliError::Config(
                        "dataset.collection.random.count must be at least 1".into(),
                    ));
                }
                check_len(r.state_ranges.len(), n, "dataset state_ranges")?;
                check_len(r.input_ranges.len(), m, "dataset input_ranges")?;
            }
            Collection::OnPolicy(p) => {
                if self.mpc.is_none() {
                    return Err(CliError::Config("on-policy collection needs an mpc block".into()));
                }
                check_len(p.x0.len(), n, "dataset x0")?;
                check_len(p.goal_ranges.len(), p.goal_dims.len(), "dataset goal_ranges")?;
                check_dims(&p.goal_dims, "dataset goal_dims")?;
                if p.steps == 0 {
                    return Err(CliError::Config(
                        "dataset.collection.on_policy.steps must be at least 1".into(),
                    ));
                }
            }
        }
        if let Some(mpc) = &self.mpc {
            check_len(mpc.x_goal.len(), n, "mpc.x_goal")?;
            check_len(mpc.u_lo.len(), m, "mpc.u_lo")?;
            check_len(mpc.u_hi.len(), m, "mpc.u_hi")?;
            mpc.q.matrix(n, "mpc.q")?;
            mpc.r.matrix(m, "mpc.r")?;
            if let Terminal::Matrix(rows) = &mpc.terminal {
                Weight::Full(rows.clone()).matrix(n, "mpc.terminal")?;
            }
        }
        self.qp.validate()?;
        if let Some(x0) = &self.run.x0 {
            check_len(x0.len(), n, "run.x0")?;
        }
        check_dims(&self.run.goal_dims, "run.goal_dims")?;
        for g in &self.run.goals {
            check_len(g.len(), self.run.goal_dims.len(), "run goal")?;
        }
        self.run.disturbances.validate(n)?;
        if let ControllerModel::Analytic(spec) = &self.run.model {
            let model = spec.build()?;
            if model.state_dim() != n || model.input_dim() != m {
                return Err(CliError::Config(
                    "run.model has different dimensions from the plant".into(),
                ));
            }
        }
        check_dims(&self.evalgrid.dims, "evalgrid.dims")?;
        if let Some(base) = &self.evalgrid.base {
            check_len(base.len(), n, "evalgrid.base")?;
        }
        if let Some(u) = &self.evalgrid.input {
            check_len(u.len(), m, "evalgrid.input")?;
        }
        Ok(())
    }

    /// Seed for collection and hyperparameter restarts.
    pub fn seed(&self, overridden: Option<u64>) -> u64 {
        overridden.unwrap_or(self.dataset.seed)
    }

    pub fn mpc_block(&self) -> Result<&MpcBlock> {
        self.mpc
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs an mpc block in the config".into()))
    }
}
