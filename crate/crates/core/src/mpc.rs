//! Finite-horizon optimal control over time-varying affine models and the
//! receding-horizon policy that re-linearizes along the shifted previous
//! solution at every step.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linearize::{DiscreteLinearization, Linearizer};
use crate::matfun::riccati_horizon;
use crate::qpsolve::{self, QPProblem, Settings, Status, Triplets, INF};

/// Iterations of the terminal-weight Riccati recursion.
pub const RICCATI_ITERS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct MPCConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Terminal weight.
    pub p: DMatrix<f64>,
    pub x_goal: DVector<f64>,
    /// Soft state box; infinite entries are unconstrained.
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    /// Hard input box.
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    /// Cost per unit of state-box violation.
    pub slack_penalty: f64,
    pub dt: f64,
    pub qp: Settings,
}

impl MPCConfig {
    /// Unconstrained states, the given input box and `P = Q`.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, u_lo: DVector<f64>, u_hi: DVector<f64>, dt: f64) -> Self {
        let n = q.nrows();
        MPCConfig {
            horizon: 20,
            p: q.clone(),
            q,
            r,
            x_goal: DVector::zeros(n),
            x_lo: DVector::from_element(n, f64::NEG_INFINITY),
            x_hi: DVector::from_element(n, f64::INFINITY),
            u_lo,
            u_hi,
            slack_penalty: 1e4,
            dt,
            qp: Settings::default(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.input_dim();
        if self.horizon == 0 {
            return Err(Error::Input("horizon must be at least 1".into()));
        }
        if self.q.shape() != (n, n) || self.p.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(Error::Input(format!(
                "weights have shapes Q {:?}, P {:?}, R {:?}",
                self.q.shape(),
                self.p.shape(),
                self.r.shape()
            )));
        }
        for (v, len, what) in [
            (&self.x_goal, n, "x_goal"),
            (&self.x_lo, n, "x_lo"),
            (&self.x_hi, n, "x_hi"),
            (&self.u_lo, m, "u_lo"),
            (&self.u_hi, m, "u_hi"),
        ] {
            if v.len() != len {
                return Err(Error::Input(format!("{what} has length {}, expected {len}", v.len())));
            }
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::Input(format!("{what} contains NaN")));
            }
        }
        check_finite(self.x_goal.as_slice(), "x_goal")?;
        for (lo, hi, what) in [(&self.x_lo, &self.x_hi, "state"), (&self.u_lo, &self.u_hi, "input")] {
            if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
                return Err(Error::Input(format!("{what} box has lower bound above upper bound")));
            }
        }
        for (mat, what) in [(&self.q, "Q"), (&self.r, "R"), (&self.p, "P")] {
            check_finite(mat.as_slice(), what)?;
            if (mat - mat.transpose()).amax() > 1e-12 * mat.amax().max(1.0) {
                return Err(Error::Input(format!("{what} is not symmetric")));
            }
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::Input("R must be positive definite".into()));
        }
        if !(self.slack_penalty > 0.0) {
            return Err(Error::Input("slack penalty must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Input(format!("dt must be positive, got {}", self.dt)));
        }
        self.qp.validate()
    }

    /// Terminal weight from the Riccati recursion on the model linearized at
    /// `(x_goal, 0)`.
    pub fn riccati_terminal(&self, model: &dyn Linearizer) -> Result<DMatrix<f64>> {
        let u0 = vec![0.0; self.input_dim()];
        let dl = model.linearize(self.x_goal.as_slice(), &u0)?;
        riccati_horizon(&dl.ad, &dl.bd, &self.q, &self.r, RICCATI_ITERS)
    }
}

/// Planned states `x_0 … x_N` and inputs `u_0 … u_{N-1}` with their cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Index map of the decision vector and constraint rows of one FTOCP.
///
/// Variables: `x_0 … x_N`, then `u_0 … u_{N-1}`, then one slack per
/// soft-constrained state coordinate at each stage `1 … N`. Rows: initial
/// condition, dynamics, input boxes, soft state rows, slack nonnegativity.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// State coordinates with at least one finite bound.
    pub soft: Vec<usize>,
    /// Input coordinates with at least one finite bound.
    pub boxed: Vec<usize>,
    /// Soft rows per stage (one per finite bound side).
    soft_rows: Vec<(usize, bool)>,
}

impl Layout {
    fn new(cfg: &MPCConfig) -> Layout {
        let finite = |v: f64| v.abs() < INF;
        let soft: Vec<usize> = (0..cfg.state_dim())
            .filter(|&j| finite(cfg.x_lo[j]) || finite(cfg.x_hi[j]))
            .collect();
        let mut soft_rows = Vec::new();
        for (s, &j) in soft.iter().enumerate() {
            if finite(cfg.x_hi[j]) {
                soft_rows.push((s, true));
            }
            if finite(cfg.x_lo[j]) {
                soft_rows.push((s, false));
            }
        }
        Layout {
            n: cfg.state_dim(),
            m: cfg.input_dim(),
            horizon: cfg.horizon,
            boxed: (0..cfg.input_dim())
                .filter(|&j| finite(cfg.u_lo[j]) || finite(cfg.u_hi[j]))
                .collect(),
            soft,
            soft_rows,
        }
    }

    pub fn x(&self, k: usize) -> usize {
        k * self.n
    }

    pub fn u(&self, k: usize) -> usize {
        (self.horizon + 1) * self.n + k * self.m
    }

    /// Slack of soft coordinate `s` at stage `k ≥ 1`.
    pub fn slack(&self, k: usize, s: usize) -> usize {
        (self.horizon + 1) * self.n + self.horizon * self.m + (k - 1) * self.soft.len() + s
    }

    pub fn num_vars(&self) -> usize {
        self.slack(self.horizon + 1, 0)
    }

    /// Row groups as `(first row, rows per stage, stages)`.
    fn row_groups(&self) -> [(usize, usize, usize); 5] {
        let nn = self.horizon;
        let init = (0, self.n, 1);
        let dynamics = (self.n, self.n, nn);
        let inputs = (dynamics.0 + self.n * nn, self.boxed.len(), nn);
        let states = (inputs.0 + self.boxed.len() * nn, self.soft_rows.len(), nn);
        let slacks = (states.0 + self.soft_rows.len() * nn, self.soft.len(), nn);
        [init, dynamics, inputs, states, slacks]
    }

    pub fn num_rows(&self) -> usize {
        let last = self.row_groups()[4];
        last.0 + last.1 * last.2
    }
}

/// A built FTOCP: the QP, its layout and the constant dropped from the cost.
#[derive(Clone, Debug)]
pub struct Ftocp {
    pub qp: QPProblem,
    pub layout: Layout,
    pub constant: f64,
}

impl Ftocp {
    /// Unpacks a primal solution into a trajectory costed with `objective + constant`.
    pub fn trajectory(&self, z: &[f64], objective: f64) -> Trajectory {
        let l = &self.layout;
        Trajectory {
            states: (0..=l.horizon)
                .map(|k| DVector::from_column_slice(&z[l.x(k)..l.x(k) + l.n]))
                .collect(),
            inputs: (0..l.horizon)
                .map(|k| DVector::from_column_slice(&z[l.u(k)..l.u(k) + l.m]))
                .collect(),
            cost: objective + self.constant,
        }
    }
}

fn push_block(t: &mut Triplets, r0: usize, c0: usize, m: &DMatrix<f64>, scale: f64) {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            t.push(r0 + r, c0 + c, scale * m[(r, c)]);
        }
    }
}

/// Sparse QP for horizon `N` over the affine models `lins[k]`.
///
/// Cost `Σ_k (x_k - g)ᵀQ(x_k - g) + u_kᵀRu_k + (x_N - g)ᵀP(x_N - g) + ρ_s Σ s`,
/// dynamics `x_{k+1} = Ad_k x_k + Bd_k u_k + Cd_k`, hard input boxes, soft
/// state boxes `x_lo - s ≤ x_k ≤ x_hi + s` for `k ≥ 1`, and `x_0 = x_t`.
pub fn build_ftocp(cfg: &MPCConfig, lins: &[DiscreteLinearization], x_t: &DVector<f64>) -> Result<Ftocp> {
    cfg.validate()?;
    let (n, m, nn) = (cfg.state_dim(), cfg.input_dim(), cfg.horizon);
    if lins.len() != nn {
        return Err(Error::Input(format!(
            "expected {nn} linearizations, got {}",
            lins.len()
        )));
    }
    check_dim(n, x_t.len())?;
    check_finite(x_t.as_slice(), "initial state")?;
    for (k, dl) in lins.iter().enumerate() {
        if (dl.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
            return Err(Error::Input(format!(
                "linearization {k} has dt {} but the controller runs at {}",
                dl.dt, cfg.dt
            )));
        }
        if dl.ad.shape() != (n, n) || dl.bd.shape() != (n, m) || dl.cd.len() != n {
            return Err(Error::Input(format!("linearization {k} has inconsistent shapes")));
        }
    }
    let layout = Layout::new(cfg);
    let nv = layout.num_vars();
    let mut p = Triplets::new(nv, nv);
    let mut q = vec![0.0; nv];
    let qg = &cfg.q * &cfg.x_goal;
    let pg = &cfg.p * &cfg.x_goal;
    for k in 0..nn {
        push_block(&mut p, layout.x(k), layout.x(k), &cfg.q, 2.0);
        push_block(&mut p, layout.u(k), layout.u(k), &cfg.r, 2.0);
        for j in 0..n {
            q[layout.x(k) + j] = -2.0 * qg[j];
        }
    }
    push_block(&mut p, layout.x(nn), layout.x(nn), &cfg.p, 2.0);
    for j in 0..n {
        q[layout.x(nn) + j] = -2.0 * pg[j];
    }
    for k in 1..=nn {
        for s in 0..layout.soft.len() {
            q[layout.slack(k, s)] = cfg.slack_penalty;
        }
    }
    let constant = nn as f64 * cfg.x_goal.dot(&qg) + cfg.x_goal.dot(&pg);

    let rows = layout.num_rows();
    let mut a = Triplets::new(rows, nv);
    let mut lo = vec![0.0; rows];
    let mut hi = vec![0.0; rows];
    let groups = layout.row_groups();
    for j in 0..n {
        a.push(j, layout.x(0) + j, 1.0);
        lo[j] = x_t[j];
        hi[j] = x_t[j];
    }
    let (dyn0, _, _) = groups[1];
    for (k, dl) in lins.iter().enumerate() {
        let r0 = dyn0 + k * n;
        for j in 0..n {
            a.push(r0 + j, layout.x(k + 1) + j, 1.0);
            lo[r0 + j] = dl.cd[j];
            hi[r0 + j] = dl.cd[j];
        }
        push_block(&mut a, r0, layout.x(k), &dl.ad, -1.0);
        push_block(&mut a, r0, layout.u(k), &dl.bd, -1.0);
    }
    let (in0, nb, _) = groups[2];
    for k in 0..nn {
        for (i, &j) in layout.boxed.iter().enumerate() {
            let r = in0 + k * nb + i;
            a.push(r, layout.u(k) + j, 1.0);
            lo[r] = cfg.u_lo[j];
            hi[r] = cfg.u_hi[j];
        }
    }
    let (st0, ns, _) = groups[3];
    let (sl0, nsl, _) = groups[4];
    for k in 1..=nn {
        for (i, &(s, upper)) in layout.soft_rows.iter().enumerate() {
            let j = layout.soft[s];
            let r = st0 + (k - 1) * ns + i;
            a.push(r, layout.x(k) + j, 1.0);
            if upper {
                a.push(r, layout.slack(k, s), -1.0);
                lo[r] = f64::NEG_INFINITY;
                hi[r] = cfg.x_hi[j];
            } else {
                a.push(r, layout.slack(k, s), 1.0);
                lo[r] = cfg.x_lo[j];
                hi[r] = f64::INFINITY;
            }
        }
        for s in 0..nsl {
            let r = sl0 + (k - 1) * nsl + s;
            a.push(r, layout.slack(k, s), 1.0);
            lo[r] = 0.0;
            hi[r] = f64::INFINITY;
        }
    }
    Ok(Ftocp {
        qp: QPProblem { p, q, a, l: lo, u: hi },
        layout,
        constant,
    })
}

/// Cost of a trajectory with slacks set to the box violation.
pub fn trajectory_cost(cfg: &MPCConfig, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
    let nn = inputs.len();
    let mut j = 0.0;
    for k in 0..nn {
        let e = &states[k] - &cfg.x_goal;
        j += e.dot(&(&cfg.q * &e)) + inputs[k].dot(&(&cfg.r * &inputs[k]));
    }
    let e = &states[nn] - &cfg.x_goal;
    j += e.dot(&(&cfg.p * &e));
    for x in &states[1..] {
        for i in 0..x.len() {
            let lo_finite = cfg.x_lo[i].abs() < INF;
            let hi_finite = cfg.x_hi[i].abs() < INF;
            if !lo_finite && !hi_finite {
                continue;
            }
            let over = if hi_finite {
                x[i] - cfg.x_hi[i]
            } else {
                f64::NEG_INFINITY
            };
            let under = if lo_finite {
                cfg.x_lo[i] - x[i]
            } else {
                f64::NEG_INFINITY
            };
            j += cfg.slack_penalty * over.max(under).max(0.0);
        }
    }
    j
}

/// Mutable state of the receding-horizon loop.
#[derive(Clone, Debug, Default)]
pub struct PolicyState {
    pub t: usize,
    pub previous: Option<Trajectory>,
    /// Candidate states `x̄_0 … x̄_N` (empty until the first step).
    pub x_bar: Vec<DVector<f64>>,
    /// Candidate inputs `ū_0 … ū_{N-1}`.
    pub u_bar: Vec<DVector<f64>>,
    /// Linearizations along the current candidate.
    pub lins: Vec<DiscreteLinearization>,
    warm: Option<(Vec<f64>, Vec<f64>, Layout)>,
}

impl PolicyState {
    pub fn new() -> Self {
        PolicyState::default()
    }

    /// Explicit initial candidate used at `t = 0`.
    pub fn with_initial_guess(states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != inputs.len() + 1 || inputs.is_empty() {
            return Err(Error::Input(format!(
                "initial guess needs N + 1 states and N inputs, got {} and {}",
                states.len(),
                inputs.len()
            )));
        }
        Ok(PolicyState {
            x_bar: states,
            u_bar: inputs,
            ..PolicyState::default()
        })
    }

    /// Shift the previous optimum by one step, duplicating the last entries.
    fn shift_candidate(&mut self) {
        if let Some(prev) = &self.previous {
            let nn = prev.inputs.len();
            self.x_bar = (0..=nn).map(|k| prev.states[(k + 1).min(nn)].clone()).collect();
            self.u_bar = (0..nn).map(|k| prev.inputs[(k + 1).min(nn - 1)].clone()).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub t: usize,
    pub cost: f64,
    /// `x*_{1}` of the new plan.
    pub predicted_next: DVector<f64>,
    pub qp_iterations: usize,
    pub qp_status: Status,
    pub solve_ms: f64,
    pub linearize_ms: f64,
    pub linearizations: usize,
}

/// One step of the receding-horizon policy: shift, re-linearize, solve,
/// store, and return the first input clamped to the input box.
pub fn policy_step(
    ps: &mut PolicyState,
    model: &dyn Linearizer,
    cfg: &MPCConfig,
    x_t: &DVector<f64>,
) -> Result<(DVector<f64>, StepDiagnostics)> {
    let (n, m, nn) = (cfg.state_dim(), cfg.input_dim(), cfg.horizon);
    check_dim(n, model.state_dim())?;
    check_dim(m, model.input_dim())?;
    check_dim(n, x_t.len())?;
    if ps.t > 0 {
        ps.shift_candidate();
    } else if ps.x_bar.is_empty() {
        ps.x_bar = vec![x_t.clone(); nn + 1];
        ps.u_bar = vec![DVector::zeros(m); nn];
    }
    if ps.x_bar.len() != nn + 1 || ps.u_bar.len() != nn {
        return Err(Error::Input(format!(
            "candidate has {} states and {} inputs for horizon {nn}",
            ps.x_bar.len(),
            ps.u_bar.len()
        )));
    }

    let t_lin = Instant::now();
    ps.lins = (0..nn)
        .map(|k| model.linearize(ps.x_bar[k].as_slice(), ps.u_bar[k].as_slice()))
        .collect::<Result<_>>()?;
    let linearize_ms = t_lin.elapsed().as_secs_f64() * 1e3;

    let t_qp = Instant::now();
    let ftocp = build_ftocp(cfg, &ps.lins, x_t)?;
    let mut solver = qpsolve::QpSolver::new(&ftocp.qp, &cfg.qp)?;
    if let Some((z, y, layout)) = &ps.warm {
        if *layout == ftocp.layout {
            solver.warm_start(&shift_primal(z, layout, x_t), &shift_dual(y, layout))?;
        }
    }
    let sol = solver.solve()?;
    let solve_ms = t_qp.elapsed().as_secs_f64() * 1e3;
    if sol.status == Status::PrimalInfeasible {
        return Err(Error::IllPosed(format!(
            "finite-horizon problem reported infeasible at step {}",
            ps.t
        )));
    }
    if sol.z.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllPosed(format!(
            "QP returned non-finite values at step {}",
            ps.t
        )));
    }
    let traj = ftocp.trajectory(&sol.z, sol.objective);
    let u = DVector::from_fn(m, |j, _| traj.inputs[0][j].clamp(cfg.u_lo[j], cfg.u_hi[j]));
    let diag = StepDiagnostics {
        t: ps.t,
        cost: traj.cost,
        predicted_next: traj.states[1].clone(),
        qp_iterations: sol.iterations,
        qp_status: sol.status,
        solve_ms,
        linearize_ms,
        linearizations: ps.lins.len(),
    };
    ps.warm = Some((sol.z, sol.y, ftocp.layout));
    ps.previous = Some(traj);
    ps.t += 1;
    Ok((u, diag))
}

/// Shift a primal vector one stage forward, duplicating the final stage.
fn shift_primal(z: &[f64], l: &Layout, x_t: &DVector<f64>) -> Vec<f64> {
    let mut out = z.to_vec();
    let nn = l.horizon;
    let mut shift = |start: usize, size: usize, stages: usize| {
        for k in 0..stages {
            let src = (k + 1).min(stages - 1);
            for i in 0..size {
                out[start + k * size + i] = z[start + src * size + i];
            }
        }
    };
    shift(l.x(0), l.n, nn + 1);
    shift(l.u(0), l.m, nn);
    if !l.soft.is_empty() {
        shift(l.slack(1, 0), l.soft.len(), nn);
    }
    out[..l.n].copy_from_slice(x_t.as_slice());
    out
}

fn shift_dual(y: &[f64], l: &Layout) -> Vec<f64> {
    let mut out = y.to_vec();
    for (start, size, stages) in l.row_groups() {
        for k in 0..stages {
            let src = (k + 1).min(stages - 1);
            for i in 0..size {
                out[start + k * size + i] = y[start + src * size + i];
            }
        }
    }
    out
}

/// One row of the closed-loop log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub predicted_next: DVector<f64>,
    /// `‖x(t+1) - x*_{t+1|t}‖₂`; NaN until the next state is known.
    pub one_step_err: f64,
    pub cost: f64,
    pub qp_iters: usize,
    pub solve_ms: f64,
    pub qp_status: Status,
}

pub fn log_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("x{i}")));
    h.extend((0..m).map(|i| format!("u{i}")));
    h.extend((0..n).map(|i| format!("xp{i}")));
    h.extend(["one_step_err", "J", "qp_iters", "solve_ms", "qp_status"].map(String::from));
    h
}

pub fn write_log(out: &mut dyn Write, n: usize, m: usize, records: &[LogRecord]) -> Result<()> {
    writeln!(out, "{}", log_header(n, m).join(","))?;
    for r in records {
        let mut row = vec![format!("{}", r.t)];
        row.extend(r.x.iter().map(|v| format!("{v:.17e}")));
        row.extend(r.u.iter().map(|v| format!("{v:.17e}")));
        row.extend(r.predicted_next.iter().map(|v| format!("{v:.17e}")));
        row.push(format!("{:.17e}", r.one_step_err));
        row.push(format!("{:.17e}", r.cost));
        row.push(r.qp_iters.to_string());
        row.push(format!("{:.3}", r.solve_ms));
        row.push(r.qp_status.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn save_log(path: &Path, n: usize, m: usize, records: &[LogRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_log(&mut buf, n, m, records)?;
    crate::datasets::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::AnalyticLinearizer;
    use crate::plants::{Pendulum, PendulumConfig};
    use std::sync::Mutex;

    fn dl(ad: DMatrix<f64>, bd: DMatrix<f64>, cd: DVector<f64>, dt: f64) -> DiscreteLinearization {
        let (n, m) = (ad.nrows(), bd.ncols());
        DiscreteLinearization {
            ad,
            bd,
            cd,
            dt,
            x_bar: DVector::zeros(n),
            u_bar: DVector::zeros(m),
        }
    }

    /// Fixed affine model that records every anchor it is asked for.
    struct Recorder {
        lin: DiscreteLinearization,
        anchors: Mutex<Vec<(DVector<f64>, DVector<f64>)>>,
    }

    impl Linearizer for Recorder {
        fn state_dim(&self) -> usize {
            self.lin.ad.nrows()
        }
        fn input_dim(&self) -> usize {
            self.lin.bd.ncols()
        }
        fn dt(&self) -> f64 {
            self.lin.dt
        }
        fn linearize(&self, x: &[f64], u: &[f64]) -> Result<DiscreteLinearization> {
            self.anchors
                .lock()
                .unwrap()
                .push((DVector::from_column_slice(x), DVector::from_column_slice(u)));
            Ok(self.lin.clone())
        }
    }

    fn double_integrator(dt: f64) -> DiscreteLinearization {
        dl(
            DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
            DVector::zeros(2),
            dt,
        )
    }

    fn di_config(dt: f64) -> MPCConfig {
        let mut cfg = MPCConfig::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0])),
            DMatrix::identity(1, 1),
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
            dt,
        );
        cfg.horizon = 10;
        cfg
    }

    #[test]
    fn one_step_closed_form() {
        let ad = DMatrix::from_row_slice(2, 2, &[1.1, 0.2, -0.3, 0.9]);
        let bd = DMatrix::from_row_slice(2, 1, &[0.1, 0.4]);
        let cd = DVector::from_vec(vec![0.05, -0.02]);
        let mut cfg = MPCConfig::new(
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 1, 0.5),
            DVector::from_element(1, -100.0),
            DVector::from_element(1, 100.0),
            0.1,
        );
        cfg.horizon = 1;
        cfg.p = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0]);
        cfg.x_goal = DVector::from_vec(vec![0.3, -0.1]);
        let x_t = DVector::from_vec(vec![1.0, -0.5]);
        let f = build_ftocp(&cfg, &[dl(ad.clone(), bd.clone(), cd.clone(), 0.1)], &x_t).unwrap();
        let sol = qpsolve::solve_qp(&f.qp, &cfg.qp).unwrap();
        let traj = f.trajectory(&sol.z, sol.objective);
        let h = &cfg.r + bd.transpose() * &cfg.p * &bd;
        let rhs = bd.transpose() * &cfg.p * (&ad * &x_t + &cd - &cfg.x_goal);
        let u = -h.lu().solve(&rhs).unwrap();
        assert!((traj.inputs[0][0] - u[0]).abs() < 1e-5);
        let recomputed = trajectory_cost(&cfg, &traj.states, &traj.inputs);
        assert!((traj.cost - recomputed).abs() < 1e-8 * recomputed.abs().max(1.0));
    }

    #[test]
    fn nothing_to_do() {
        let mut cfg = di_config(0.1);
        cfg.x_goal = DVector::from_vec(vec![0.7, 0.0]);
        let x_t = cfg.x_goal.clone();
        let lins = vec![dl(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DVector::zeros(2), 0.1); cfg.horizon];
        let f = build_ftocp(&cfg, &lins, &x_t).unwrap();
        let sol = qpsolve::solve_qp(&f.qp, &cfg.qp).unwrap();
        let traj = f.trajectory(&sol.z, sol.objective);
        assert!(traj.inputs.iter().all(|u| u[0].abs() < 1e-8));
        assert!(traj.cost.abs() < 1e-8);
    }

    #[test]
    fn saturates_when_goal_needs_more_torque() {
        // Hold the pendulum horizontal: gravity torque m g l exceeds 0.6.
        let pend = Pendulum::new(PendulumConfig::default()).unwrap();
        let lin = AnalyticLinearizer::new(&pend, 0.05);
        let mut cfg = MPCConfig::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0])),
            DMatrix::identity(1, 1),
            DVector::from_element(1, -0.6),
            DVector::from_element(1, 0.6),
            0.05,
        );
        cfg.x_goal = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]);
        cfg.x_lo = DVector::from_vec(vec![-6.0, -8.0]);
        cfg.x_hi = DVector::from_vec(vec![6.0, 8.0]);
        let x_t = cfg.x_goal.clone();
        let mut ps = PolicyState::new();
        let (u, d) = policy_step(&mut ps, &lin, &cfg, &x_t).unwrap();
        assert_eq!(d.qp_status, Status::Solved);
        assert!((u[0] + 0.6).abs() < 1e-6 || (u[0] - 0.6).abs() < 1e-6, "u = {}", u[0]);
        let traj = ps.previous.as_ref().unwrap();
        assert!(traj.inputs.iter().all(|v| v[0].abs() <= 0.6 + 1e-6));
    }

    #[test]
    fn anchors_follow_guess_then_shift() {
        let rec = Recorder {
            lin: double_integrator(0.1),
            anchors: Mutex::new(Vec::new()),
        };
        let cfg = di_config(0.1);
        let nn = cfg.horizon;
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let mut ps = PolicyState::new();
        policy_step(&mut ps, &rec, &cfg, &x0).unwrap();
        {
            let a = rec.anchors.lock().unwrap();
            assert_eq!(a.len(), nn);
            for (x, u) in a.iter() {
                assert_eq!(x, &x0);
                assert_eq!(u[0], 0.0);
            }
        }
        let prev = ps.previous.clone().unwrap();
        rec.anchors.lock().unwrap().clear();
        let x1 = prev.states[1].clone();
        policy_step(&mut ps, &rec, &cfg, &x1).unwrap();
        let a = rec.anchors.lock().unwrap();
        for k in 0..nn {
            assert_eq!(a[k].0, prev.states[k + 1]);
            assert_eq!(a[k].1, prev.inputs[(k + 1).min(nn - 1)]);
        }
        assert_eq!(ps.x_bar[nn], prev.states[nn]);
        assert_eq!(ps.x_bar.len(), nn + 1);
        assert_eq!(ps.u_bar.len(), nn);
    }

    #[test]
    fn double_integrator_regulates() {
        let rec = Recorder {
            lin: double_integrator(0.1),
            anchors: Mutex::new(Vec::new()),
        };
        let mut cfg = di_config(0.1);
        cfg.p = cfg.riccati_terminal(&rec).unwrap();
        let mut x = DVector::from_vec(vec![2.0, 0.0]);
        let mut ps = PolicyState::new();
        for _ in 0..100 {
            let (u, d) = policy_step(&mut ps, &rec, &cfg, &x).unwrap();
            assert!(u[0].abs() <= 1.0);
            let recomputed = trajectory_cost(
                &cfg,
                &ps.previous.as_ref().unwrap().states,
                &ps.previous.as_ref().unwrap().inputs,
            );
            assert!((d.cost - recomputed).abs() < 1e-6 * recomputed.max(1.0));
            x = rec.lin.apply(&x, &u);
        }
        assert!(x.norm() < 1e-3, "{x}");
    }

    #[test]
    fn rejects_mismatched_dt() {
        let cfg = di_config(0.1);
        let lins = vec![double_integrator(0.05); cfg.horizon];
        assert!(matches!(
            build_ftocp(&cfg, &lins, &DVector::zeros(2)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn log_layout() {
        let rec = LogRecord {
            t: 0.05,
            x: DVector::from_vec(vec![1.0, 2.0]),
            u: DVector::from_vec(vec![0.5]),
            predicted_next: DVector::from_vec(vec![1.1, 2.1]),
            one_step_err: 0.01,
            cost: 3.0,
            qp_iters: 12,
            solve_ms: 0.4,
            qp_status: Status::Solved,
        };
        let mut buf = Vec::new();
        write_log(&mut buf, 2, 1, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t,x0,x1,u0,xp0,xp1,one_step_err,J,qp_iters,solve_ms,qp_status"
        );
        assert_eq!(lines[1].split(',').count(), 11);
        assert!(lines[1].ends_with(",12,0.400,solved"));
    }
}
