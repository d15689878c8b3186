//! Stationary kernels with analytic gradients in the first argument.
//!
//! A [`KernelSpec`] is a small tree: RBF and periodic leaves, and product
//! nodes whose factors act on disjoint groups of input coordinates. The
//! pendulum kernel, for instance, is a periodic factor on the angle times an
//! RBF factor on the angular rate:
//!
//! ```
//! use gpmpc::kernels::KernelSpec;
//! let k: KernelSpec = serde_json::from_str(
//!     r#"{"product":[{"dims":[0],"periodic":{"omega":6.283185307,"ell":1.0}},
//!                    {"dims":[1],"rbf":{"sigma":1.0}}]}"#,
//! ).unwrap();
//! k.validate(2).unwrap();
//! assert_eq!(k.eval(&[0.3, 1.0], &[0.3, 1.0]).unwrap(), 1.0);
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    Rbf(Rbf),
    Periodic(Periodic),
    Product(Vec<Factor>),
}

/// `exp(-‖(s - s') / σ‖² / 2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rbf {
    pub sigma: Lengthscale,
}

/// A single lengthscale shared by every coordinate, or one per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lengthscale {
    Shared(f64),
    Ard(Vec<f64>),
}

/// `exp(-2 Σ sin²(π (s - s') / ω) / ℓ²)` with period `ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Periodic {
    pub omega: f64,
    pub ell: f64,
}

/// One factor of a product kernel, restricted to the coordinates in `dims`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub dims: Vec<usize>,
    #[serde(flatten)]
    pub kernel: KernelSpec,
}

impl Lengthscale {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        match self {
            Lengthscale::Shared(s) => *s,
            Lengthscale::Ard(v) => v[i],
        }
    }
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Self {
        KernelSpec::Rbf(Rbf {
            sigma: Lengthscale::Shared(sigma),
        })
    }

    pub fn rbf_ard(sigmas: Vec<f64>) -> Self {
        KernelSpec::Rbf(Rbf {
            sigma: Lengthscale::Ard(sigmas),
        })
    }

    pub fn periodic(omega: f64, ell: f64) -> Self {
        KernelSpec::Periodic(Periodic { omega, ell })
    }

    pub fn product(factors: Vec<(Vec<usize>, KernelSpec)>) -> Self {
        KernelSpec::Product(
            factors
                .into_iter()
                .map(|(dims, kernel)| Factor { dims, kernel })
                .collect(),
        )
    }

    /// Input dimension fixed by the kernel itself, if any.
    ///
    /// Shared-lengthscale leaves accept any dimension and return `None`.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Rbf(Rbf {
                sigma: Lengthscale::Ard(v),
            }) => Some(v.len()),
            KernelSpec::Rbf(_) | KernelSpec::Periodic(_) => None,
            KernelSpec::Product(fs) => Some(fs.iter().map(|f| f.dims.len()).sum()),
        }
    }

    /// Checks hyperparameter positivity and, for products, that the factor
    /// coordinate sets partition `0..dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::Input("kernel input dimension must be positive".into()));
        }
        match self {
            KernelSpec::Rbf(rbf) => match &rbf.sigma {
                Lengthscale::Shared(s) => positive(*s, "rbf sigma"),
                Lengthscale::Ard(v) => {
                    if v.len() != dim {
                        return Err(Error::Input(format!(
                            "rbf has {} lengthscales for {dim} inputs",
                            v.len()
                        )));
                    }
                    v.iter().try_for_each(|s| positive(*s, "rbf sigma"))
                }
            },
            KernelSpec::Periodic(p) => {
                positive(p.omega, "periodic omega")?;
                positive(p.ell, "periodic ell")
            }
            KernelSpec::Product(factors) => {
                if factors.is_empty() {
                    return Err(Error::Input("product kernel has no factors".into()));
                }
                let mut seen = vec![false; dim];
                for f in factors {
                    if f.dims.is_empty() {
                        return Err(Error::Input("product factor with no dims".into()));
                    }
                    for &d in &f.dims {
                        if d >= dim {
                            return Err(Error::Input(format!(
                                "product factor coordinate {d} out of range for {dim} inputs"
                            )));
                        }
                        if seen[d] {
                            return Err(Error::Input(format!("coordinate {d} claimed by two product factors")));
                        }
                        seen[d] = true;
                    }
                    f.kernel.validate(f.dims.len())?;
                }
                if let Some(missing) = seen.iter().position(|s| !s) {
                    return Err(Error::Input(format!(
                        "coordinate {missing} not covered by any product factor"
                    )));
                }
                Ok(())
            }
        }
    }

    fn check_inputs(&self, s: &[f64], sp: &[f64]) -> Result<()> {
        check_dim(s.len(), sp.len())?;
        if let Some(d) = self.fixed_dim() {
            check_dim(d, s.len())?;
        }
        check_finite(s, "kernel input")?;
        check_finite(sp, "kernel input")
    }

    /// `k(s, s')`.
    pub fn eval(&self, s: &[f64], sp: &[f64]) -> Result<f64> {
        self.check_inputs(s, sp)?;
        Ok(self.value(s, sp))
    }

    /// `∂k(s, s')/∂s`.
    pub fn grad_first(&self, s: &[f64], sp: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(s, sp)?;
        let mut grad = vec![0.0; s.len()];
        self.value_and_grad(s, sp, &mut grad);
        Ok(grad)
    }

    /// Unchecked evaluation; inputs must already be validated.
    pub(crate) fn value(&self, s: &[f64], sp: &[f64]) -> f64 {
        match self {
            KernelSpec::Rbf(rbf) => {
                let mut r2 = 0.0;
                for i in 0..s.len() {
                    let d = (s[i] - sp[i]) / rbf.sigma.get(i);
                    r2 += d * d;
                }
                (-0.5 * r2).exp()
            }
            KernelSpec::Periodic(p) => {
                let mut acc = 0.0;
                for i in 0..s.len() {
                    let sn = (PI * (s[i] - sp[i]) / p.omega).sin();
                    acc += sn * sn;
                }
                (-2.0 * acc / (p.ell * p.ell)).exp()
            }
            KernelSpec::Product(factors) => {
                let mut buf_a = Vec::new();
                let mut buf_b = Vec::new();
                factors
                    .iter()
                    .map(|f| {
                        gather(&f.dims, s, &mut buf_a);
                        gather(&f.dims, sp, &mut buf_b);
                        f.kernel.value(&buf_a, &buf_b)
                    })
                    .product()
            }
        }
    }

    /// Unchecked evaluation writing `∂k/∂s` into `grad`; returns `k`.
    pub(crate) fn value_and_grad(&self, s: &[f64], sp: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            KernelSpec::Rbf(rbf) => {
                let mut r2 = 0.0;
                for i in 0..s.len() {
                    let sig = rbf.sigma.get(i);
                    let d = s[i] - sp[i];
                    r2 += (d / sig) * (d / sig);
                    grad[i] = -d / (sig * sig);
                }
                let k = (-0.5 * r2).exp();
                grad.iter_mut().for_each(|g| *g *= k);
                k
            }
            KernelSpec::Periodic(p) => {
                // d/ds sin²(π d / ω) = (π / ω) sin(2π d / ω); smooth through d = 0.
                let scale = -2.0 * PI / (p.omega * p.ell * p.ell);
                let mut acc = 0.0;
                for i in 0..s.len() {
                    let phase = PI * (s[i] - sp[i]) / p.omega;
                    let sn = phase.sin();
                    acc += sn * sn;
                    grad[i] = scale * (2.0 * phase).sin();
                }
                let k = (-2.0 * acc / (p.ell * p.ell)).exp();
                grad.iter_mut().for_each(|g| *g *= k);
                k
            }
            KernelSpec::Product(factors) => {
                let mut values = Vec::with_capacity(factors.len());
                let mut grads: Vec<Vec<f64>> = Vec::with_capacity(factors.len());
                let mut buf_a = Vec::new();
                let mut buf_b = Vec::new();
                for f in factors {
                    gather(&f.dims, s, &mut buf_a);
                    gather(&f.dims, sp, &mut buf_b);
                    let mut g = vec![0.0; f.dims.len()];
                    values.push(f.kernel.value_and_grad(&buf_a, &buf_b, &mut g));
                    grads.push(g);
                }
                // Product rule with prefix/suffix products (no division by factors).
                let nf = factors.len();
                let mut suffix = vec![1.0; nf + 1];
                for c in (0..nf).rev() {
                    suffix[c] = suffix[c + 1] * values[c];
                }
                let mut prefix = 1.0;
                for (c, f) in factors.iter().enumerate() {
                    let others = prefix * suffix[c + 1];
                    for (j, &d) in f.dims.iter().enumerate() {
                        grad[d] = others * grads[c][j];
                    }
                    prefix *= values[c];
                }
                suffix[0]
            }
        }
    }

    /// Positive hyperparameters in log space, depth first.
    ///
    /// Periods are structural (they encode that a coordinate is an angle) and
    /// are not exposed for optimization.
    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::Rbf(rbf) => match &rbf.sigma {
                Lengthscale::Shared(s) => out.push(s.ln()),
                Lengthscale::Ard(v) => out.extend(v.iter().map(|s| s.ln())),
            },
            KernelSpec::Periodic(p) => out.push(p.ell.ln()),
            KernelSpec::Product(fs) => fs.iter().for_each(|f| f.kernel.collect_params(out)),
        }
    }

    /// Copy of `self` with hyperparameters replaced from log space, in the
    /// order produced by [`KernelSpec::log_params`].
    pub fn with_log_params(&self, params: &[f64]) -> Result<KernelSpec> {
        let mut out = self.clone();
        let used = out.assign_params(params);
        if used != params.len() {
            return Err(Error::Input(format!(
                "kernel has {used} hyperparameters, got {}",
                params.len()
            )));
        }
        Ok(out)
    }

    fn assign_params(&mut self, params: &[f64]) -> usize {
        match self {
            KernelSpec::Rbf(rbf) => match &mut rbf.sigma {
                Lengthscale::Shared(s) => {
                    if let Some(p) = params.first() {
                        *s = p.exp();
                    }
                    1
                }
                Lengthscale::Ard(v) => {
                    for (s, p) in v.iter_mut().zip(params) {
                        *s = p.exp();
                    }
                    v.len()
                }
            },
            KernelSpec::Periodic(p) => {
                if let Some(v) = params.first() {
                    p.ell = v.exp();
                }
                1
            }
            KernelSpec::Product(fs) => {
                let mut used = 0;
                for f in fs {
                    used += f.kernel.assign_params(params.get(used..).unwrap_or(&[]));
                }
                used
            }
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} must be finite and positive, got {v}")))
    }
}

#[inline]
fn gather(dims: &[usize], src: &[f64], buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(dims.iter().map(|&d| src[d]));
}
