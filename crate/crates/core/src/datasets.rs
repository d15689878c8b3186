//! Transition datasets: random and closed-loop collection, Ward-linkage
//! subsampling and CSV persistence.
//!
//! On disk a dataset is a CSV file with header
//! `x0,…,x{n-1},u0,…,u{m-1},xn0,…,xn{n-1}` (one transition per row, 17
//! significant digits) plus a sidecar `<name>.meta.json` holding
//! `{"dt", "n", "m", "angle_dims", "excluded_dims"}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::plants::{step_hold_noisy, Plant};

pub mod cluster;

/// RK4 substeps per sampling period used for every simulated transition.
pub const SUBSTEPS: usize = 10;
const MAX_REDRAWS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
    pub dt: f64,
}

impl Transition {
    /// `x_next - x`.
    pub fn displacement(&self) -> Vec<f64> {
        self.x_next.iter().zip(&self.x).map(|(a, b)| a - b).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub m: usize,
    pub dt: f64,
    pub angle_dims: Vec<usize>,
    pub excluded_dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    dt: f64,
    n: usize,
    m: usize,
    angle_dims: Vec<usize>,
    excluded_dims: Vec<usize>,
}

impl Dataset {
    pub fn empty(n: usize, m: usize, dt: f64) -> Self {
        Dataset {
            transitions: Vec::new(),
            n,
            m,
            dt,
            angle_dims: Vec::new(),
            excluded_dims: Vec::new(),
        }
    }

    /// Empty dataset carrying the plant's dimensions and coordinate metadata.
    pub fn for_plant(plant: &dyn Plant, dt: f64) -> Self {
        Dataset {
            transitions: Vec::new(),
            n: plant.state_dim(),
            m: plant.input_dim(),
            dt,
            angle_dims: plant.angle_dims(),
            excluded_dims: plant.excluded_dims(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_dim(self.n, t.x.len())?;
        check_dim(self.m, t.u.len())?;
        check_dim(self.n, t.x_next.len())?;
        if t.dt != self.dt {
            return Err(Error::Input(format!(
                "transition dt {} differs from dataset dt {}",
                t.dt, self.dt
            )));
        }
        self.transitions.push(t);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Input(format!("dataset dt must be positive, got {}", self.dt)));
        }
        for &d in self.angle_dims.iter().chain(&self.excluded_dims) {
            if d >= self.n {
                return Err(Error::Input(format!("coordinate index {d} out of range")));
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.x.len() != self.n || t.u.len() != self.m || t.x_next.len() != self.n {
                return Err(Error::Input(format!("transition {i} has inconsistent dimensions")));
            }
            if t.dt != self.dt {
                return Err(Error::Input(format!("transition {i} has dt {}", t.dt)));
            }
            if t.x.iter().chain(&t.u).chain(&t.x_next).any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("transition {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Subset with the given original indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            transitions: indices.iter().map(|&i| self.transitions[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            transitions: Vec::new(),
            n: self.n,
            m: self.m,
            dt: self.dt,
            angle_dims: self.angle_dims.clone(),
            excluded_dims: self.excluded_dims.clone(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        (0..self.n)
            .map(|i| format!("x{i}"))
            .chain((0..self.m).map(|i| format!("u{i}")))
            .chain((0..self.n).map(|i| format!("xn{i}")))
            .collect()
    }

    /// Writes `path` and its `.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).map_err(csv_io)?;
        for t in &self.transitions {
            let row: Vec<String> =
                t.x.iter()
                    .chain(&t.u)
                    .chain(&t.x_next)
                    .map(|v| format!("{v:.16e}"))
                    .collect();
            w.write_record(&row).map_err(csv_io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path, &bytes)?;
        let meta = Meta {
            dt: self.dt,
            n: self.n,
            m: self.m,
            angle_dims: self.angle_dims.clone(),
            excluded_dims: self.excluded_dims.clone(),
        };
        write_atomic(&meta_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let meta_file = meta_path(path);
        let meta: Meta = serde_json::from_slice(&fs::read(&meta_file)?)
            .map_err(|e| Error::Schema(format!("{}: {e}", meta_file.display())))?;
        let mut ds = Dataset {
            transitions: Vec::new(),
            n: meta.n,
            m: meta.m,
            dt: meta.dt,
            angle_dims: meta.angle_dims,
            excluded_dims: meta.excluded_dims,
        };

        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(csv_err)?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let expected = ds.header();
        for col in &expected {
            if !header.contains(col) {
                return Err(Error::Schema(format!("missing column `{col}`")));
            }
        }
        if header.len() != expected.len() {
            return Err(Error::Schema(format!(
                "expected {} columns for n = {}, m = {}, found {}",
                expected.len(),
                ds.n,
                ds.m,
                header.len()
            )));
        }
        let order: Vec<usize> = expected
            .iter()
            .map(|c| header.iter().position(|h| h == c).unwrap())
            .collect();

        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != expected.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", expected.len(), rec.len()),
                });
            }
            let mut vals = Vec::with_capacity(order.len());
            for &c in &order {
                let field = rec[c].trim();
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{field}` is not a number"),
                })?;
                vals.push(v);
            }
            let (n, m) = (ds.n, ds.m);
            ds.transitions.push(Transition {
                x: vals[..n].to_vec(),
                u: vals[n..n + m].to_vec(),
                x_next: vals[n + m..].to_vec(),
                dt: ds.dt,
            });
        }
        ds.validate()?;
        Ok(ds)
    }
}

/// `dir/name.csv` → `dir/name.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

/// Writes to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().map(|e| e.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Closed interval `[lo, hi]` for uniform sampling.
pub type Range = (f64, f64);

fn draw(rng: &mut impl Rng, ranges: &[Range]) -> Vec<f64> {
    ranges
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..hi) })
        .collect()
}

fn check_ranges(ranges: &[Range], what: &str) -> Result<()> {
    for &(lo, hi) in ranges {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Input(format!(
                "{what} range [{lo}, {hi}] is not a finite ordered interval"
            )));
        }
    }
    Ok(())
}

/// I.i.d. uniform `(x, u)` draws, each pushed through one sample-and-hold step.
#[allow(clippy::too_many_arguments)]
pub fn collect_random(
    plant: &dyn Plant,
    state_ranges: &[Range],
    input_ranges: &[Range],
    count: usize,
    dt: f64,
    seed: u64,
    noise_scale: f64,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Input("cannot collect an empty dataset (count = 0)".into()));
    }
    check_dim(plant.state_dim(), state_ranges.len())?;
    check_dim(plant.input_dim(), input_ranges.len())?;
    check_ranges(state_ranges, "state")?;
    check_ranges(input_ranges, "input")?;
    if !(dt > 0.0) {
        return Err(Error::Input(format!("dt must be positive, got {dt}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::for_plant(plant, dt);
    while ds.len() < count {
        let mut attempts = 0;
        loop {
            let x = draw(&mut rng, state_ranges);
            let u = draw(&mut rng, input_ranges);
            let xv = DVector::from_vec(x.clone());
            let uv = DVector::from_vec(u.clone());
            match step_hold_noisy(plant, &xv, &uv, dt, SUBSTEPS, noise_scale, &mut rng) {
                Ok(next) => {
                    ds.push(Transition {
                        x,
                        u,
                        x_next: next.as_slice().to_vec(),
                        dt,
                    })?;
                    break;
                }
                Err(Error::IntegrationBlowup { .. }) if attempts < MAX_REDRAWS => attempts += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ds)
}

/// Something that maps `(t, x)` to an input.
pub trait Controller {
    fn control(&mut self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> Controller for F
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    fn control(&mut self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self(t, x)
    }
}

/// Output of [`collect_trajectory`].
#[derive(Clone, Debug)]
pub struct Rollout {
    pub dataset: Dataset,
    /// Start time of each logged transition.
    pub times: Vec<f64>,
    /// Set when the plant diverged and the log stops early.
    pub truncated: bool,
}

/// Closed-loop rollout logging one transition per control period.
#[allow(clippy::too_many_arguments)]
pub fn collect_trajectory(
    plant: &dyn Plant,
    controller: &mut dyn Controller,
    x0: &DVector<f64>,
    steps: usize,
    dt: f64,
    seed: u64,
    noise_scale: f64,
) -> Result<Rollout> {
    if steps == 0 {
        return Err(Error::Input("steps must be at least 1".into()));
    }
    check_dim(plant.state_dim(), x0.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::for_plant(plant, dt);
    let mut times = Vec::with_capacity(steps);
    let mut x = x0.clone();
    let mut truncated = false;
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = controller.control(t, &x)?;
        match step_hold_noisy(plant, &x, &u, dt, SUBSTEPS, noise_scale, &mut rng) {
            Ok(next) => {
                ds.push(Transition {
                    x: x.as_slice().to_vec(),
                    u: u.as_slice().to_vec(),
                    x_next: next.as_slice().to_vec(),
                    dt,
                })?;
                times.push(t);
                x = next;
            }
            Err(Error::IntegrationBlowup { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Rollout {
        dataset: ds,
        times,
        truncated,
    })
}

/// Ward-linkage subsample to `k` representatives.
///
/// Each transition is embedded as its state (angles as `(cos, sin)`,
/// excluded coordinates dropped) followed by its input, and every feature is
/// standardized. The tree is cut at `k` clusters and the member closest to
/// each cluster centroid is kept (lowest index on ties). The result is in
/// ascending original order.
pub fn subsample_clusters(dataset: &Dataset, k: usize) -> Result<Dataset> {
    let idx = cluster::representatives(&embed(dataset), k)?;
    Ok(dataset.select(&idx))
}

/// Standardized clustering features, one row per transition.
pub fn embed(dataset: &Dataset) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = dataset
        .transitions
        .iter()
        .map(|t| {
            let mut f = Vec::with_capacity(dataset.n + dataset.m + dataset.angle_dims.len());
            for (i, &v) in t.x.iter().enumerate() {
                if dataset.excluded_dims.contains(&i) {
                    continue;
                }
                if dataset.angle_dims.contains(&i) {
                    f.push(v.cos());
                    f.push(v.sin());
                } else {
                    f.push(v);
                }
            }
            f.extend_from_slice(&t.u);
            f
        })
        .collect();
    standardize(&mut rows);
    rows
}

fn standardize(rows: &mut [Vec<f64>]) {
    let Some(first) = rows.first() else { return };
    let dim = first.len();
    let count = rows.len() as f64;
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / count;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / count;
        let sd = var.sqrt();
        // Treat features constant up to rounding as constant.
        let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
        for r in rows.iter_mut() {
            r[j] = (r[j] - mean) / scale;
        }
    }
}
