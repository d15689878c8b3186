//! Multi-output Gaussian process regression on flow-map displacements.
//!
//! Every output shares the kernel and the training inputs, so one Cholesky
//! factor serves all of them. Training targets are `x_next - x` and the prior
//! mean is zero ("no motion"). State coordinates listed in
//! `excluded_dims` are dropped from the GP input.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{write_atomic, Dataset};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::kernels::KernelSpec;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: KernelSpec,
    noise_var: f64,
    /// Diagonal jitter actually added on top of `noise_var`.
    jitter: f64,
    /// Training inputs, one column per point (`d × M`).
    inputs: DMatrix<f64>,
    /// `M × n` displacements.
    targets: DMatrix<f64>,
    /// Lower factor of `K + (σ_ε + jitter) I`.
    chol: DMatrix<f64>,
    /// `(K + σ_ε I)⁻¹ Y`, `M × n`.
    alpha: DMatrix<f64>,
    dt: f64,
    n: usize,
    m: usize,
    excluded_dims: Vec<usize>,
}

/// Drops `excluded` state coordinates and appends the input.
pub fn gp_input(x: &[f64], u: &[f64], excluded: &[usize]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(i))
        .map(|(_, v)| *v)
        .chain(u.iter().copied())
        .collect()
}

impl GpModel {
    /// Fits the GP to the displacements in `dataset`.
    pub fn fit(dataset: &Dataset, kernel: &KernelSpec, noise_var: f64) -> Result<GpModel> {
        if dataset.is_empty() {
            return Err(Error::Input("cannot fit a GP to an empty dataset".into()));
        }
        dataset.validate()?;
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::Input(format!("noise variance must be ≥ 0, got {noise_var}")));
        }
        let d = dataset.n - dataset.excluded_dims.len() + dataset.m;
        kernel.validate(d)?;

        let mm = dataset.len();
        let mut inputs = DMatrix::zeros(d, mm);
        let mut targets = DMatrix::zeros(mm, dataset.n);
        for (i, t) in dataset.transitions.iter().enumerate() {
            let s = gp_input(&t.x, &t.u, &dataset.excluded_dims);
            inputs.set_column(i, &DVector::from_vec(s));
            for (j, v) in t.displacement().into_iter().enumerate() {
                targets[(i, j)] = v;
            }
        }
        Self::from_parts(
            kernel.clone(),
            noise_var,
            inputs,
            targets,
            dataset.dt,
            dataset.n,
            dataset.m,
            dataset.excluded_dims.clone(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        kernel: KernelSpec,
        noise_var: f64,
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        dt: f64,
        n: usize,
        m: usize,
        excluded_dims: Vec<usize>,
    ) -> Result<GpModel> {
        if !(dt > 0.0) {
            return Err(Error::Input(format!("dt must be positive, got {dt}")));
        }
        let gram = gram_matrix(&kernel, &inputs);
        let (chol, alpha, jitter) = factor_with_jitter(&gram, noise_var, &targets)?;
        Ok(GpModel {
            kernel,
            noise_var,
            jitter,
            inputs,
            targets,
            chol,
            alpha,
            dt,
            n,
            m,
            excluded_dims,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
    pub fn jitter(&self) -> f64 {
        self.jitter
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn state_dim(&self) -> usize {
        self.n
    }
    pub fn input_dim(&self) -> usize {
        self.m
    }
    pub fn excluded_dims(&self) -> &[usize] {
        &self.excluded_dims
    }
    /// Number of training points.
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }
    /// GP input dimension.
    pub fn input_size(&self) -> usize {
        self.inputs.nrows()
    }
    /// Training inputs as an `M × d` matrix.
    pub fn training_inputs(&self) -> DMatrix<f64> {
        self.inputs.transpose()
    }
    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }
    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// GP input for the state/input pair.
    pub fn input(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        check_dim(self.m, u.len())?;
        Ok(gp_input(x, u, &self.excluded_dims))
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        check_dim(self.input_size(), s.len())?;
        check_finite(s, "GP input")
    }

    fn cross_cov(&self, s: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.inputs.column_iter().map(|c| self.kernel.value(s, c.as_slice())),
        )
    }

    /// Posterior mean displacement `μ(s)`, one entry per state coordinate.
    pub fn predict_mean(&self, s: &[f64]) -> Result<DVector<f64>> {
        self.check_input(s)?;
        Ok(self.alpha.tr_mul(&self.cross_cov(s)))
    }

    /// Posterior variance shared by all outputs, clamped at zero.
    pub fn predict_variance(&self, s: &[f64]) -> Result<f64> {
        self.check_input(s)?;
        let k = self.cross_cov(s);
        let v = self
            .chol
            .solve_lower_triangular(&k)
            .ok_or(Error::IllConditionedGram { jitter: self.jitter })?;
        let prior = self.kernel.value(s, s);
        Ok((prior - v.norm_squared()).max(0.0))
    }

    /// `∂μ/∂s`, an `n × d` matrix.
    pub fn predict_mean_jacobian(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.mean_and_jacobian(s)?.1)
    }

    /// Mean and its Jacobian in one pass over the training set.
    pub fn mean_and_jacobian(&self, s: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_input(s)?;
        let d = self.input_size();
        let n = self.n;
        let mut mean = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, d);
        let mut grad = vec![0.0; d];
        for (i, col) in self.inputs.column_iter().enumerate() {
            let k = self.kernel.value_and_grad(s, col.as_slice(), &mut grad);
            for j in 0..n {
                let a = self.alpha[(i, j)];
                if a == 0.0 {
                    continue;
                }
                mean[j] += a * k;
                for (c, g) in grad.iter().enumerate() {
                    jac[(j, c)] += a * g;
                }
            }
        }
        Ok((mean, jac))
    }

    /// Jacobian with respect to the full `(x, u)`; excluded state columns are zero.
    pub fn full_jacobian(&self, x: &[f64], u: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = self.input(x, u)?;
        let (mean, jac) = self.mean_and_jacobian(&s)?;
        let mut full = DMatrix::zeros(self.n, self.n + self.m);
        let mut src = 0;
        for col in 0..self.n + self.m {
            if col < self.n && self.excluded_dims.contains(&col) {
                continue;
            }
            full.set_column(col, &jac.column(src));
            src += 1;
        }
        Ok((mean, full))
    }

    /// `Σ_j [-½ y_jᵀ α_j - Σ_i log L_ii - (M/2) log 2π]`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let mm = self.len() as f64;
        let log_det_half: f64 = self.chol.diagonal().iter().map(|v| v.ln()).sum();
        let n_out = self.targets.ncols() as f64;
        let fit: f64 = self
            .targets
            .column_iter()
            .zip(self.alpha.column_iter())
            .map(|(y, a)| y.dot(&a))
            .sum();
        -0.5 * fit - n_out * (log_det_half + 0.5 * mm * (2.0 * PI).ln())
    }

    /// Writes the JSON header at `path` and the matrices to `<stem>.bin`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bin_path = bin_path(path);
        let mut blocks = Vec::new();
        let mut bytes = Vec::new();
        let inputs_rm = self.inputs.clone(); // d × M column-major == M × d row-major
        let mut push_block = |name: &str, rows: usize, cols: usize, data: Vec<f64>| {
            blocks.push(BlockHeader {
                name: name.into(),
                rows,
                cols,
                offset: bytes.len(),
            });
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        };
        push_block("inputs", self.len(), self.input_size(), inputs_rm.as_slice().to_vec());
        push_block("targets", self.len(), self.n, row_major(&self.targets));
        push_block("alpha", self.len(), self.n, row_major(&self.alpha));
        push_block("chol", self.len(), self.len(), row_major(&self.chol));

        let header = BundleHeader {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            kernel: self.kernel.clone(),
            noise_var: self.noise_var,
            jitter: self.jitter,
            dt: self.dt,
            n: self.n,
            m: self.m,
            excluded_dims: self.excluded_dims.clone(),
            binary: bin_path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            blocks,
        };
        write_atomic(&bin_path, &bytes)?;
        write_atomic(path, serde_json::to_string_pretty(&header)?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GpModel> {
        let header: BundleHeader =
            serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        if header.format != BUNDLE_FORMAT || header.version != BUNDLE_VERSION {
            return Err(Error::Schema(format!(
                "unsupported bundle {} v{}",
                header.format, header.version
            )));
        }
        let bytes = fs::read(path.with_file_name(&header.binary))?;
        let block = |name: &str| -> Result<DMatrix<f64>> {
            let b = header
                .blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::Schema(format!("bundle has no `{name}` block")))?;
            let len = b.rows * b.cols * 8;
            let raw = bytes
                .get(b.offset..b.offset + len)
                .ok_or_else(|| Error::Schema(format!("`{name}` block exceeds binary file")))?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(DMatrix::from_row_slice(b.rows, b.cols, &vals))
        };
        let inputs = block("inputs")?.transpose();
        let targets = block("targets")?;
        let alpha = block("alpha")?;
        let chol = block("chol")?;
        let mm = inputs.ncols();
        let d = header.n - header.excluded_dims.len() + header.m;
        if inputs.nrows() != d
            || targets.shape() != (mm, header.n)
            || alpha.shape() != (mm, header.n)
            || chol.shape() != (mm, mm)
        {
            return Err(Error::Schema("bundle matrix shapes are inconsistent".into()));
        }
        header.kernel.validate(d)?;
        let model = GpModel {
            kernel: header.kernel,
            noise_var: header.noise_var,
            jitter: header.jitter,
            inputs,
            targets,
            chol,
            alpha,
            dt: header.dt,
            n: header.n,
            m: header.m,
            excluded_dims: header.excluded_dims,
        };
        let gram = gram_matrix(&model.kernel, &model.inputs);
        if !residual_ok(&gram, model.noise_var + model.jitter, &model.alpha, &model.targets) {
            return Err(Error::Schema("bundle weights do not solve the stored system".into()));
        }
        Ok(model)
    }
}

const BUNDLE_FORMAT: &str = "gpmpc-gp";
const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleHeader {
    format: String,
    version: u32,
    kernel: KernelSpec,
    noise_var: f64,
    jitter: f64,
    dt: f64,
    n: usize,
    m: usize,
    excluded_dims: Vec<usize>,
    binary: String,
    blocks: Vec<BlockHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockHeader {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the binary file.
    offset: usize,
}

/// `model.json` → `model.bin`.
pub fn bin_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn gram_matrix(kernel: &KernelSpec, inputs: &DMatrix<f64>) -> DMatrix<f64> {
    let mm = inputs.ncols();
    let mut gram = DMatrix::zeros(mm, mm);
    for i in 0..mm {
        gram[(i, i)] = kernel.value(inputs.column(i).as_slice(), inputs.column(i).as_slice());
        for j in 0..i {
            let v = kernel.value(inputs.column(i).as_slice(), inputs.column(j).as_slice());
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    gram
}

fn residual_ok(gram: &DMatrix<f64>, diag: f64, alpha: &DMatrix<f64>, targets: &DMatrix<f64>) -> bool {
    let mut sys = gram.clone();
    for i in 0..sys.nrows() {
        sys[(i, i)] += diag;
    }
    let resid = (&sys * alpha - targets).amax();
    resid <= 1e-8 * (1.0 + targets.amax())
}

/// Cholesky of `K + (σ_ε + jitter) I` with the escalating jitter policy.
fn factor_with_jitter(
    gram: &DMatrix<f64>,
    noise_var: f64,
    targets: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let mm = gram.nrows();
    let scale = gram.trace() / mm as f64;
    let mut jitter = if noise_var > 0.0 { 0.0 } else { JITTER_START * scale };
    loop {
        let mut sys = gram.clone();
        for i in 0..mm {
            sys[(i, i)] += noise_var + jitter;
        }
        if let Some(ch) = Cholesky::new(sys) {
            let alpha = ch.solve(targets);
            if alpha.iter().all(|v| v.is_finite()) && residual_ok(gram, noise_var + jitter, &alpha, targets) {
                return Ok((ch.unpack(), alpha, jitter));
            }
        }
        jitter = if jitter == 0.0 {
            JITTER_START * scale
        } else {
            jitter * 10.0
        };
        if jitter > JITTER_MAX * scale * (1.0 + 1e-9) {
            return Err(Error::IllConditionedGram { jitter: jitter / 10.0 });
        }
    }
}

/// Box on hyperparameters (applied to every one of them).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for HyperBounds {
    fn default() -> Self {
        HyperBounds {
            lower: 1e-2,
            upper: 1e2,
        }
    }
}

/// Multi-start Nelder–Mead on the log marginal likelihood in log-hyperparameter
/// space. Restart 0 starts at the template; the rest start uniformly in the box.
pub fn fit_hyperparameters(
    dataset: &Dataset,
    template: &KernelSpec,
    noise_var: f64,
    bounds: HyperBounds,
    restarts: usize,
    seed: u64,
) -> Result<KernelSpec> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot fit hyperparameters on an empty dataset".into()));
    }
    if !(bounds.lower > 0.0 && bounds.upper >= bounds.lower) {
        return Err(Error::Input(format!("invalid hyperparameter bounds {bounds:?}")));
    }
    let (lo, hi) = (bounds.lower.ln(), bounds.upper.ln());
    let start = template.log_params();
    if start.is_empty() {
        return Ok(template.clone());
    }
    let objective = |p: &[f64]| -> f64 {
        let clamped: Vec<f64> = p.iter().map(|v| v.clamp(lo, hi)).collect();
        template
            .with_log_params(&clamped)
            .and_then(|k| GpModel::fit(dataset, &k, noise_var))
            .map(|m| -m.log_marginal_likelihood())
            .unwrap_or(f64::INFINITY)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..restarts.max(1) {
        let x0: Vec<f64> = if r == 0 {
            start.iter().map(|v| v.clamp(lo, hi)).collect()
        } else {
            start.iter().map(|_| rng.random_range(lo..=hi)).collect()
        };
        let (x, fx) = nelder_mead(&objective, &x0, 0.5, 60 * x0.len() + 100, 1e-7);
        if fx.is_finite() && best.as_ref().is_none_or(|(b, _)| fx < *b) {
            best = Some((fx, x));
        }
    }
    match best {
        Some((_, p)) => {
            let clamped: Vec<f64> = p.iter().map(|v| v.clamp(lo, hi)).collect();
            template.with_log_params(&clamped)
        }
        None => Err(Error::IllConditionedGram { jitter: JITTER_MAX }),
    }
}

/// Minimal Nelder–Mead simplex search.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize, ftol: f64) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = dim + 1;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fbest, fworst) = (simplex[0].1, simplex[dim].1);
        if fworst.is_finite() && (fworst - fbest).abs() <= ftol * (1.0 + fbest.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|p| p.0[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].0.clone();
        let refl = lerp(&centroid, &worst, -1.0);
        let fr = f(&refl);
        evals += 1;
        if fr < simplex[0].1 {
            let exp = lerp(&centroid, &worst, -2.0);
            let fe = f(&exp);
            evals += 1;
            simplex[dim] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (refl, fr);
        } else {
            let (target, ft) = if fr < simplex[dim].1 {
                (&refl, fr)
            } else {
                (&worst, simplex[dim].1)
            };
            let con = lerp(&centroid, target, 0.5);
            let fc = f(&con);
            evals += 1;
            if fc < ft {
                simplex[dim] = (con, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    p.0 = lerp(&best, &p.0, 0.5);
                    p.1 = f(&p.0);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
