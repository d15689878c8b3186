//! Affine models of the flow map: `x⁺ ≈ Ad x + Bd u + Cd` around an anchor,
//! and exact conversion to and from the continuous form `ẋ ≈ A x + B u + C`.
//!
//! Both conversions go through the augmented matrix
//!
//! ```text
//! exp([[A, B, C], [0, 0, 0], [0, 0, 0]] dt) = [[Ad, Bd, Cd], [0, I, 0], [0, 0, 1]]
//! ```
//!
//! which stays well defined when `A` or `Ad - I` is singular.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::gp::GpModel;
use crate::matfun::{expm, logm};
use crate::plants::{jacobian_fd, OutputMap, Plant};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLinearization {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub cd: DVector<f64>,
    pub dt: f64,
    pub x_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousLinearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub x_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
}

impl ContinuousLinearization {
    /// `A x + B u + C`, the affine estimate of `ẋ`.
    pub fn apply(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.c
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl DiscreteLinearization {
    pub fn state_dim(&self) -> usize {
        self.ad.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.bd.ncols()
    }

    /// `Ad x + Bd u + Cd`.
    pub fn apply(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.ad * x + &self.bd * u + &self.cd
    }

    /// Row-major JSON dump for inspection.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "dt": self.dt,
            "x_bar": self.x_bar.as_slice(),
            "u_bar": self.u_bar.as_slice(),
            "Ad": rows_of(&self.ad),
            "Bd": rows_of(&self.bd),
            "Cd": self.cd.as_slice(),
        })
    }
}

/// `(Ad, Bd, Cd)` from the GP mean and its Jacobian at `(x̄, ū)`.
///
/// `Ad = I + ∂h/∂x`, `Bd = ∂h/∂u`, `Cd = h + x̄ - Ad x̄ - Bd ū`. Rows listed by
/// `output_map` (positions the GP does not model) are replaced by the map's
/// displacement and Jacobian.
pub fn local_discrete(
    model: &GpModel,
    output_map: Option<&dyn OutputMap>,
    x_bar: &[f64],
    u_bar: &[f64],
) -> Result<DiscreteLinearization> {
    let n = model.state_dim();
    let m = model.input_dim();
    let (mut h, mut jac) = model.full_jacobian(x_bar, u_bar)?;
    if let Some(map) = output_map {
        let (disp, rows) = map.displacement(x_bar, u_bar, model.dt());
        for (i, &r) in map.rows().iter().enumerate() {
            h[r] = disp[i];
            jac.set_row(r, &rows.row(i));
        }
    }
    let xb = DVector::from_column_slice(x_bar);
    let ub = DVector::from_column_slice(u_bar);
    let ad = DMatrix::identity(n, n) + jac.columns(0, n);
    let bd = jac.columns(n, m).into_owned();
    let cd = &h + &xb - &ad * &xb - &bd * &ub;
    Ok(DiscreteLinearization {
        ad,
        bd,
        cd,
        dt: model.dt(),
        x_bar: xb,
        u_bar: ub,
    })
}

/// Top block row of `expm([[A, B, C], [0, 0, 0]] dt)`.
pub fn continuous_to_discrete(cl: &ContinuousLinearization, dt: f64) -> Result<DiscreteLinearization> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Input(format!("dt must be positive, got {dt}")));
    }
    let n = cl.a.nrows();
    let m = cl.b.ncols();
    check_dim(n, cl.a.ncols())?;
    check_dim(n, cl.b.nrows())?;
    check_dim(n, cl.c.len())?;
    let mut aug = DMatrix::zeros(n + m + 1, n + m + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&cl.a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(&cl.b * dt));
    aug.view_mut((0, n + m), (n, 1)).copy_from(&(&cl.c * dt));
    let e = expm(&aug)?;
    Ok(DiscreteLinearization {
        ad: e.view((0, 0), (n, n)).into_owned(),
        bd: e.view((0, n), (n, m)).into_owned(),
        cd: e.view((0, n + m), (n, 1)).column(0).into_owned(),
        dt,
        x_bar: cl.x_bar.clone(),
        u_bar: cl.u_bar.clone(),
    })
}

/// Principal logarithm of `[[Ad, Bd, Cd], [0, I, 0], [0, 0, 1]]`, top block row over `dt`.
pub fn discrete_to_continuous(dl: &DiscreteLinearization) -> Result<ContinuousLinearization> {
    let n = dl.ad.nrows();
    let m = dl.bd.ncols();
    check_dim(n, dl.ad.ncols())?;
    check_dim(n, dl.bd.nrows())?;
    check_dim(n, dl.cd.len())?;
    if !(dl.dt > 0.0) {
        return Err(Error::Input(format!("dt must be positive, got {}", dl.dt)));
    }
    let mut aug = DMatrix::identity(n + m + 1, n + m + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&dl.ad);
    aug.view_mut((0, n), (n, m)).copy_from(&dl.bd);
    aug.view_mut((0, n + m), (n, 1)).copy_from(&dl.cd);
    let l = logm(&aug)? / dl.dt;
    Ok(ContinuousLinearization {
        a: l.view((0, 0), (n, n)).into_owned(),
        b: l.view((0, n), (n, m)).into_owned(),
        c: l.view((0, n + m), (n, 1)).column(0).into_owned(),
        x_bar: dl.x_bar.clone(),
        u_bar: dl.u_bar.clone(),
    })
}

/// Source of discrete affine models along a candidate trajectory.
pub trait Linearizer: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn linearize(&self, x_bar: &[f64], u_bar: &[f64]) -> Result<DiscreteLinearization>;
}

/// Linearizations of a fitted GP, optionally completing unmodelled rows.
pub struct GpLinearizer<'a> {
    pub model: &'a GpModel,
    pub output_map: Option<&'a dyn OutputMap>,
}

impl<'a> GpLinearizer<'a> {
    pub fn new(model: &'a GpModel, output_map: Option<&'a dyn OutputMap>) -> Self {
        GpLinearizer { model, output_map }
    }
}

impl Linearizer for GpLinearizer<'_> {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }
    fn dt(&self) -> f64 {
        self.model.dt()
    }
    fn linearize(&self, x_bar: &[f64], u_bar: &[f64]) -> Result<DiscreteLinearization> {
        local_discrete(self.model, self.output_map, x_bar, u_bar)
    }
}

/// Linearizations of a known vector field: finite-difference Jacobians,
/// then exact discretization.
pub struct AnalyticLinearizer<'a> {
    pub plant: &'a dyn Plant,
    pub dt: f64,
    pub eps: f64,
}

impl<'a> AnalyticLinearizer<'a> {
    pub fn new(plant: &'a dyn Plant, dt: f64) -> Self {
        AnalyticLinearizer { plant, dt, eps: 1e-6 }
    }

    pub fn continuous(&self, x_bar: &[f64], u_bar: &[f64]) -> Result<ContinuousLinearization> {
        check_dim(self.plant.state_dim(), x_bar.len())?;
        check_dim(self.plant.input_dim(), u_bar.len())?;
        check_finite(x_bar, "anchor state")?;
        check_finite(u_bar, "anchor input")?;
        let x = DVector::from_column_slice(x_bar);
        let u = DVector::from_column_slice(u_bar);
        let (a, b) = jacobian_fd(self.plant, &x, &u, self.eps);
        let c = self.plant.f(&x, &u) - &a * &x - &b * &u;
        Ok(ContinuousLinearization {
            a,
            b,
            c,
            x_bar: x,
            u_bar: u,
        })
    }
}

impl Linearizer for AnalyticLinearizer<'_> {
    fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn linearize(&self, x_bar: &[f64], u_bar: &[f64]) -> Result<DiscreteLinearization> {
        continuous_to_discrete(&self.continuous(x_bar, u_bar)?, self.dt)
    }
}
