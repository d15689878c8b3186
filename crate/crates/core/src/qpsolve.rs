//! Sparse convex QP solver:
//!
//! ```text
//! minimize ½ zᵀ P z + qᵀ z   subject to   l ≤ A z ≤ u
//! ```
//!
//! Operator splitting (ADMM) in the style of OSQP: Ruiz equilibration,
//! over-relaxation, a per-row penalty (stiffer on equality rows), adaptive
//! penalty updates, a primal-infeasibility certificate and an optional polish
//! step on the detected active set. Each iteration solves one quasi-definite
//! KKT system with a cached LDLᵀ factor, refactored only when the penalty
//! changes.

pub mod ldl;
pub mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use ldl::{Envelope, Ldl};
pub use sparse::{Csr, Triplets};

/// Bounds at or beyond this magnitude are treated as infinite.
pub const INF: f64 = 1e20;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const RUIZ_ITERS: usize = 10;
const POLISH_DELTA: f64 = 1e-9;
const POLISH_REFINE: usize = 3;
const POLISH_INTERVAL: usize = 25;
const POLISH_ROUNDS: usize = 6;
/// Active-set changes during polishing below this multiple of `eps_abs` are ignored.
const POLISH_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Iterations between penalty updates; 0 disables adaptation.
    pub adaptive_rho_interval: usize,
    pub scaling: bool,
    pub polish: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-5,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho_interval: 25,
            scaling: true,
            polish: true,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0 && self.eps_abs + self.eps_rel > 0.0) {
            return Err(Error::Input(
                "qp tolerances must be non-negative and not both zero".into(),
            ));
        }
        if !pos(self.eps_prim_inf) || !pos(self.rho) || !pos(self.sigma) {
            return Err(Error::Input("qp eps_prim_inf, rho and sigma must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::Input(format!("qp alpha must lie in (0, 2), got {}", self.alpha)));
        }
        if self.max_iter == 0 {
            return Err(Error::Input("qp max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QPProblem {
    /// Symmetric PSD, both triangles stored.
    pub p: Triplets,
    pub q: Vec<f64>,
    pub a: Triplets,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QPProblem {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let mc = self.l.len();
        if n == 0 {
            return Err(Error::Input("QP has no variables".into()));
        }
        if self.p.nrows != n || self.p.ncols != n {
            return Err(Error::Input(format!(
                "P is {}x{}, expected {n}x{n}",
                self.p.nrows, self.p.ncols
            )));
        }
        if self.a.nrows != mc || self.a.ncols != n || self.u.len() != mc {
            return Err(Error::Input(format!(
                "A is {}x{} with {} lower / {} upper bounds, expected {mc}x{n}",
                self.a.nrows,
                self.a.ncols,
                mc,
                self.u.len()
            )));
        }
        for t in [&self.p, &self.a] {
            if t.entries
                .iter()
                .any(|&(r, c, v)| r >= t.nrows || c >= t.ncols || !v.is_finite())
            {
                return Err(Error::Input("matrix entry out of range or non-finite".into()));
            }
        }
        if self.q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("q has non-finite entries".into()));
        }
        for i in 0..mc {
            let (l, u) = (self.l[i], self.u[i]);
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::Input(format!(
                    "constraint {i}: lower bound {l} exceeds upper bound {u}"
                )));
            }
        }
        let p = self.p.to_csr();
        for r in 0..n {
            for (c, v) in p.row(r) {
                let vt = csr_get(&p, c, r);
                if (v - vt).abs() > 1e-12 * v.abs().max(vt.abs()).max(1.0) {
                    return Err(Error::Input(format!("P is not symmetric at ({r}, {c})")));
                }
            }
        }
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let mut pz = vec![0.0; z.len()];
        self.p.to_csr().mul_vec(z, &mut pz);
        0.5 * dot(z, &pz) + dot(&self.q, z)
    }
}

fn csr_get(m: &Csr, r: usize, c: usize) -> f64 {
    let span = m.indptr[r]..m.indptr[r + 1];
    match m.indices[span.clone()].binary_search(&c) {
        Ok(k) => m.data[span.start + k],
        Err(_) => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Solved => "solved",
            Status::MaxIterations => "max_iterations",
            Status::PrimalInfeasible => "primal_infeasible",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QPSolution {
    /// Primal solution.
    pub z: Vec<f64>,
    /// Dual solution; `y_i > 0` at an active upper bound, `< 0` at a lower.
    pub y: Vec<f64>,
    pub status: Status,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub polished: bool,
}

pub fn solve_qp(problem: &QPProblem, settings: &Settings) -> Result<QPSolution> {
    QpSolver::new(problem, settings)?.solve()
}

/// Same as [`solve_qp`] but starting from a previous `(z, y)`.
pub fn solve_qp_warm(problem: &QPProblem, settings: &Settings, z: &[f64], y: &[f64]) -> Result<QPSolution> {
    let mut s = QpSolver::new(problem, settings)?;
    s.warm_start(z, y)?;
    s.solve()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum RowKind {
    Free,
    Equality,
    Inequality,
}

/// ADMM state for one problem. Everything below lives in the scaled space
/// `P̄ = c D P D`, `q̄ = c D q`, `Ā = E A D`, `l̄ = E l`, `ū = E u`.
pub struct QpSolver {
    settings: Settings,
    n: usize,
    mc: usize,
    p: Csr,
    q: Vec<f64>,
    a: Csr,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
    kind: Vec<RowKind>,
    rho: f64,
    rho_vec: Vec<f64>,
    env: Envelope,
    ldl: Ldl,
    x: Vec<f64>,
    w: Vec<f64>,
    y: Vec<f64>,
    /// Last active-set guess whose polish was rejected.
    failed_guess: Option<Vec<(usize, f64, f64)>>,
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
    /// Normalized ratios used by the penalty update.
    prim_rel: f64,
    dual_rel: f64,
}

impl QpSolver {
    pub fn new(problem: &QPProblem, settings: &Settings) -> Result<QpSolver> {
        problem.validate()?;
        settings.validate()?;
        let n = problem.num_vars();
        let mc = problem.num_constraints();
        let mut p = problem.p.to_csr();
        let mut a = problem.a.to_csr();
        let mut q = problem.q.clone();
        let (d, e, c) = if settings.scaling {
            ruiz(&mut p, &mut q, &mut a)
        } else {
            (vec![1.0; n], vec![1.0; mc], 1.0)
        };
        let clip = |v: f64| v.clamp(-INF, INF);
        let l: Vec<f64> = (0..mc).map(|i| clip(problem.l[i]) * e[i]).collect();
        let u: Vec<f64> = (0..mc).map(|i| clip(problem.u[i]) * e[i]).collect();
        let kind: Vec<RowKind> = (0..mc)
            .map(|i| {
                let (lo, hi) = (problem.l[i], problem.u[i]);
                if lo <= -INF && hi >= INF {
                    RowKind::Free
                } else if lo.abs() < INF && hi - lo <= 1e-12 * lo.abs().max(1.0) {
                    RowKind::Equality
                } else {
                    RowKind::Inequality
                }
            })
            .collect();

        let mut pattern: Vec<(usize, usize)> = (0..n + mc).map(|i| (i, i)).collect();
        for r in 0..n {
            pattern.extend(p.row(r).filter(|&(c, _)| c < r).map(|(c, _)| (r, c)));
        }
        for r in 0..mc {
            pattern.extend(a.row(r).map(|(c, _)| (n + r, c)));
        }
        let env = Envelope::analyze(n + mc, &pattern);

        let rho = settings.rho.clamp(RHO_MIN, RHO_MAX);
        let rho_vec = row_penalties(&kind, rho);
        let ldl = factor_kkt(&env, &p, &a, settings.sigma, &rho_vec)?;
        Ok(QpSolver {
            settings: settings.clone(),
            n,
            mc,
            p,
            q,
            a,
            l,
            u,
            d,
            e,
            c,
            kind,
            rho,
            rho_vec,
            env,
            ldl,
            x: vec![0.0; n],
            w: vec![0.0; mc],
            y: vec![0.0; mc],
            failed_guess: None,
        })
    }

    /// Starts the iteration from an unscaled primal/dual pair.
    pub fn warm_start(&mut self, z: &[f64], y: &[f64]) -> Result<()> {
        crate::error::check_dim(self.n, z.len())?;
        crate::error::check_dim(self.mc, y.len())?;
        if z.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Input("warm start has non-finite entries".into()));
        }
        for j in 0..self.n {
            self.x[j] = z[j] / self.d[j];
        }
        for i in 0..self.mc {
            self.y[i] = y[i] * self.c / self.e[i];
        }
        let mut ax = vec![0.0; self.mc];
        self.a.mul_vec(&self.x, &mut ax);
        for i in 0..self.mc {
            self.w[i] = ax[i].clamp(self.l[i], self.u[i]);
        }
        Ok(())
    }

    pub fn solve(&mut self) -> Result<QPSolution> {
        let (n, mc) = (self.n, self.mc);
        let s = self.settings.clone();
        let mut rhs = vec![0.0; n + mc];
        let mut status = Status::MaxIterations;
        let mut iterations = s.max_iter;
        let mut dy = vec![0.0; mc];

        let mut res = self.residuals(&self.x, &self.w, &self.y);
        let mut polished = false;
        for it in 1..=s.max_iter {
            for j in 0..n {
                rhs[j] = s.sigma * self.x[j] - self.q[j];
            }
            for i in 0..mc {
                rhs[n + i] = self.w[i] - self.y[i] / self.rho_vec[i];
            }
            self.ldl.solve(&mut rhs);
            for j in 0..n {
                self.x[j] = s.alpha * rhs[j] + (1.0 - s.alpha) * self.x[j];
            }
            for i in 0..mc {
                let r = self.rho_vec[i];
                let zt = self.w[i] + (rhs[n + i] - self.y[i]) / r;
                let zr = s.alpha * zt + (1.0 - s.alpha) * self.w[i];
                let wn = (zr + self.y[i] / r).clamp(self.l[i], self.u[i]);
                dy[i] = r * (zr - wn);
                self.y[i] += dy[i];
                self.w[i] = wn;
            }

            res = self.residuals(&self.x, &self.w, &self.y);
            if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
                status = Status::Solved;
                iterations = it;
                break;
            }
            if self.primal_infeasible(&dy) {
                status = Status::PrimalInfeasible;
                iterations = it;
                break;
            }
            if it % POLISH_INTERVAL == 0 && s.polish {
                // Early exit once the active set has settled.
                if let Some(r) = self.try_polish() {
                    res = r;
                    polished = true;
                    status = Status::Solved;
                    iterations = it;
                    break;
                }
            }
            if s.adaptive_rho_interval > 0 && it % s.adaptive_rho_interval == 0 {
                self.update_rho(&res)?;
            }
        }

        if status == Status::Solved && s.polish && !polished {
            if let Some(r) = self.try_polish() {
                res = r;
                polished = true;
            }
        }

        let z: Vec<f64> = (0..n).map(|j| self.x[j] * self.d[j]).collect();
        let y: Vec<f64> = if status == Status::PrimalInfeasible {
            // The certificate direction, unscaled.
            (0..mc).map(|i| dy[i] * self.e[i] / self.c).collect()
        } else {
            (0..mc).map(|i| self.y[i] * self.e[i] / self.c).collect()
        };
        let mut pz = vec![0.0; n];
        self.p.mul_vec(&self.x, &mut pz);
        let objective = (0.5 * dot(&self.x, &pz) + dot(&self.q, &self.x)) / self.c;
        Ok(QPSolution {
            z,
            y,
            status,
            iterations,
            primal_residual: res.prim,
            dual_residual: res.dual,
            objective,
            polished,
        })
    }

    fn residuals(&self, x: &[f64], w: &[f64], y: &[f64]) -> Residuals {
        let (n, mc) = (self.n, self.mc);
        let mut ax = vec![0.0; mc];
        let mut px = vec![0.0; n];
        let mut aty = vec![0.0; n];
        self.a.mul_vec(x, &mut ax);
        self.p.mul_vec(x, &mut px);
        self.a.tr_mul_vec(y, &mut aty);
        let mut prim = 0.0f64;
        let mut ax_n = 0.0f64;
        let mut w_n = 0.0f64;
        for i in 0..mc {
            let ei = 1.0 / self.e[i];
            prim = prim.max(((ax[i] - w[i]) * ei).abs());
            ax_n = ax_n.max((ax[i] * ei).abs());
            w_n = w_n.max((w[i] * ei).abs());
        }
        let mut dual = 0.0f64;
        let (mut px_n, mut aty_n, mut q_n) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..n {
            let s = 1.0 / (self.c * self.d[j]);
            dual = dual.max(((px[j] + self.q[j] + aty[j]) * s).abs());
            px_n = px_n.max((px[j] * s).abs());
            aty_n = aty_n.max((aty[j] * s).abs());
            q_n = q_n.max((self.q[j] * s).abs());
        }
        let st = &self.settings;
        let prim_scale = ax_n.max(w_n);
        let dual_scale = px_n.max(aty_n).max(q_n);
        Residuals {
            prim,
            dual,
            eps_prim: st.eps_abs + st.eps_rel * prim_scale,
            eps_dual: st.eps_abs + st.eps_rel * dual_scale,
            prim_rel: prim / prim_scale.max(1e-10),
            dual_rel: dual / dual_scale.max(1e-10),
        }
    }

    fn primal_infeasible(&self, dy: &[f64]) -> bool {
        if self.mc == 0 {
            return false;
        }
        // Unscaled certificate: δy = E δȳ / c.
        let dyu: Vec<f64> = (0..self.mc).map(|i| dy[i] * self.e[i] / self.c).collect();
        let norm = inf_norm(&dyu);
        if norm < 1e-30 {
            return false;
        }
        let eps = self.settings.eps_prim_inf;
        let mut aty = vec![0.0; self.n];
        self.a.tr_mul_vec(dy, &mut aty);
        let at_norm = (0..self.n).fold(0.0f64, |m, j| m.max((aty[j] / (self.d[j] * self.c)).abs()));
        if at_norm > eps * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..self.mc {
            let v = dyu[i];
            if v.abs() <= eps * norm {
                continue;
            }
            let bound = if v > 0.0 { self.u[i] } else { self.l[i] };
            if bound.abs() >= INF * self.e[i] {
                return false;
            }
            support += v * bound / self.e[i];
        }
        support < -eps * norm
    }

    fn update_rho(&mut self, res: &Residuals) -> Result<()> {
        let ratio = (res.prim_rel / res.dual_rel.max(1e-30)).sqrt();
        if !ratio.is_finite() || ratio == 0.0 {
            return Ok(());
        }
        let new_rho = (self.rho * ratio).clamp(RHO_MIN, RHO_MAX);
        if new_rho > 5.0 * self.rho || new_rho < self.rho / 5.0 {
            self.rho = new_rho;
            self.rho_vec = row_penalties(&self.kind, new_rho);
            self.ldl = factor_kkt(&self.env, &self.p, &self.a, self.settings.sigma, &self.rho_vec)?;
        }
        Ok(())
    }

    /// Replaces the iterate by the polished point if it meets the tolerances.
    fn try_polish(&mut self) -> Option<Residuals> {
        let guess = self.guess_active(&self.w, &self.y);
        if self.failed_guess.as_ref() == Some(&guess) {
            return None;
        }
        let Some((x, w, y)) = self.polish(guess.clone()) else {
            self.failed_guess = Some(guess);
            return None;
        };
        let r = self.residuals(&x, &w, &y);
        if r.prim <= r.eps_prim && r.dual <= r.eps_dual {
            self.x = x;
            self.w = w;
            self.y = y;
            Some(r)
        } else {
            self.failed_guess = Some(guess);
            None
        }
    }

    /// Equality-constrained QP on the guessed active set, regularized and
    /// refined. The guess is corrected primal-dual active-set style (rows
    /// that end up violated join, rows with wrong-sign multipliers leave)
    /// for a few rounds. Returns scaled `(x, w, y)`.
    fn polish(&self, mut active: Vec<(usize, f64, f64)>) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mc = self.mc;
        for _ in 0..POLISH_ROUNDS {
            let (x, y) = self.solve_reduced(&active)?;
            let mut ax = vec![0.0; mc];
            self.a.mul_vec(&x, &mut ax);
            let next = self.guess_active_tol(&ax, &y, POLISH_MARGIN * self.settings.eps_abs);
            if next == active {
                // A multiplier of the wrong sign means the active set guess is wrong.
                if active.iter().any(|&(i, _, sign)| sign * y[i] < -self.settings.eps_abs) {
                    return None;
                }
                let w: Vec<f64> = (0..mc).map(|i| ax[i].clamp(self.l[i], self.u[i])).collect();
                return Some((x, w, y));
            }
            active = next;
        }
        None
    }

    /// `(row, bound value, required multiplier sign)` for every row deemed active.
    fn guess_active(&self, w: &[f64], y: &[f64]) -> Vec<(usize, f64, f64)> {
        self.guess_active_tol(w, y, 0.0)
    }

    /// As [`Self::guess_active`], ignoring bound violations and multipliers
    /// smaller than `tol`, so round-off at a degenerate vertex cannot make
    /// a row flip in and out.
    fn guess_active_tol(&self, w: &[f64], y: &[f64], tol: f64) -> Vec<(usize, f64, f64)> {
        let mut active = Vec::new();
        for i in 0..self.mc {
            match self.kind[i] {
                RowKind::Free => {}
                RowKind::Equality => active.push((i, self.l[i], 0.0)),
                RowKind::Inequality => {
                    if w[i] - self.l[i] < -y[i] - tol {
                        active.push((i, self.l[i], -1.0));
                    } else if self.u[i] - w[i] < y[i] - tol {
                        active.push((i, self.u[i], 1.0));
                    }
                }
            }
        }
        active
    }

    /// Solves the KKT system with the `active` rows held at their bounds.
    fn solve_reduced(&self, active: &[(usize, f64, f64)]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let k = active.len();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut exact: Vec<(usize, usize, f64)> = Vec::new();
        for r in 0..n {
            for (c, v) in self.p.row(r) {
                if c <= r {
                    entries.push((r, c, v));
                }
                exact.push((r, c, v));
            }
            entries.push((r, r, POLISH_DELTA));
        }
        for (row, &(i, _, _)) in active.iter().enumerate() {
            for (c, v) in self.a.row(i) {
                entries.push((n + row, c, v));
                exact.push((n + row, c, v));
                exact.push((c, n + row, v));
            }
            entries.push((n + row, n + row, -POLISH_DELTA));
        }
        let pattern: Vec<(usize, usize)> = entries.iter().map(|e| (e.0, e.1)).collect();
        let env = Envelope::analyze(n + k, &pattern);
        let ldl = env.factor(&entries)?;

        let mut b = vec![0.0; n + k];
        for j in 0..n {
            b[j] = -self.q[j];
        }
        for (row, &(_, bound, _)) in active.iter().enumerate() {
            b[n + row] = bound;
        }
        let mut sol = b.clone();
        ldl.solve(&mut sol);
        for _ in 0..POLISH_REFINE {
            let mut r = b.clone();
            for &(i, j, v) in &exact {
                r[i] -= v * sol[j];
            }
            ldl.solve(&mut r);
            for (s, d) in sol.iter_mut().zip(&r) {
                *s += d;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut y = vec![0.0; self.mc];
        for (row, &(i, _, _)) in active.iter().enumerate() {
            y[i] = sol[n + row];
        }
        sol.truncate(n);
        Some((sol, y))
    }
}

fn row_penalties(kind: &[RowKind], rho: f64) -> Vec<f64> {
    kind.iter()
        .map(|k| match k {
            RowKind::Free => RHO_MIN,
            RowKind::Equality => (rho * RHO_EQ_SCALE).clamp(RHO_MIN, RHO_MAX),
            RowKind::Inequality => rho,
        })
        .collect()
}

fn factor_kkt(env: &Envelope, p: &Csr, a: &Csr, sigma: f64, rho: &[f64]) -> Result<Ldl> {
    let n = p.nrows;
    let mut entries = Vec::with_capacity(p.nnz() + a.nnz() + n + rho.len());
    for r in 0..n {
        entries.extend(p.row(r).filter(|&(c, _)| c <= r).map(|(c, v)| (r, c, v)));
        entries.push((r, r, sigma));
    }
    for (i, &ri) in rho.iter().enumerate() {
        entries.extend(a.row(i).map(|(c, v)| (n + i, c, v)));
        entries.push((n + i, n + i, -1.0 / ri));
    }
    env.factor(&entries)
        .ok_or_else(|| Error::IllPosed("KKT factorization hit a zero pivot".into()))
}

/// Modified Ruiz equilibration of `[[P, Aᵀ], [A, 0]]` followed by cost
/// scaling. Scales `p`, `q`, `a` in place and returns `(D, E, c)`.
fn ruiz(p: &mut Csr, q: &mut [f64], a: &mut Csr) -> (Vec<f64>, Vec<f64>, f64) {
    let n = p.nrows;
    let mc = a.nrows;
    let limit = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; mc];
    for _ in 0..RUIZ_ITERS {
        let mut nx = vec![0.0f64; n];
        let mut nz = vec![0.0f64; mc];
        for r in 0..n {
            for (c, v) in p.row(r) {
                nx[c] = nx[c].max(v.abs());
            }
        }
        for r in 0..mc {
            for (c, v) in a.row(r) {
                nx[c] = nx[c].max(v.abs());
                nz[r] = nz[r].max(v.abs());
            }
        }
        let dx: Vec<f64> = nx.iter().map(|v| 1.0 / limit(*v).sqrt()).collect();
        let dz: Vec<f64> = nz.iter().map(|v| 1.0 / limit(*v).sqrt()).collect();
        scale_csr(p, &dx, &dx);
        scale_csr(a, &dz, &dx);
        for j in 0..n {
            q[j] *= dx[j];
            d[j] *= dx[j];
        }
        for i in 0..mc {
            e[i] *= dz[i];
        }
    }
    let mut col = vec![0.0f64; n];
    for r in 0..n {
        for (c, v) in p.row(r) {
            col[c] = col[c].max(v.abs());
        }
    }
    let mean = col.iter().sum::<f64>() / n as f64;
    let c = 1.0 / limit(mean.max(inf_norm(q)));
    p.data.iter_mut().for_each(|v| *v *= c);
    q.iter_mut().for_each(|v| *v *= c);
    (d, e, c)
}

fn scale_csr(m: &mut Csr, left: &[f64], right: &[f64]) {
    for r in 0..m.nrows {
        for k in m.indptr[r]..m.indptr[r + 1] {
            m.data[k] *= left[r] * right[m.indices[k]];
        }
    }
}
