//! Dense matrix functions: exponential, principal logarithm and a
//! finite-horizon discrete Riccati iteration.
//!
//! All routines work on small dense `DMatrix<f64>` values (order ≤ 10 in
//! practice), so they favour simple, deterministic algorithms over norm
//! estimation machinery.

use nalgebra::DMatrix;

use crate::error::{check_finite, Error, Result};

/// Diagonal Padé degree used by [`expm`].
const PADE_DEGREE: usize = 8;
/// Scaling threshold: the matrix is halved until its 1-norm is below this.
const EXPM_THETA: f64 = 0.5;
/// Square roots are taken until `‖M − I‖₁` drops below this.
const LOGM_THETA: f64 = 0.25;
/// Quadrature nodes for `log(I + X)`; equivalent to a `[10/10]` Padé approximant.
const LOGM_NODES: usize = 10;
const SQRT_MAX_ITER: usize = 100;
const MAX_SQRTS: usize = 64;

pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Input(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m.as_slice(), "matrix")?;
    Ok(m.nrows())
}

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = check_square(m)?;
    let norm = norm1(m);
    let squarings = if norm > EXPM_THETA {
        (norm / EXPM_THETA).log2().ceil() as i32
    } else {
        0
    };
    let x = m / 2f64.powi(squarings);

    // c_k = (2p - k)! p! / ((2p)! k! (p - k)!), built by recurrence.
    let p = PADE_DEGREE;
    let mut coeffs = vec![1.0; p + 1];
    for k in 1..=p {
        coeffs[k] = coeffs[k - 1] * (p + 1 - k) as f64 / ((k * (2 * p + 1 - k)) as f64);
    }

    let ident = DMatrix::<f64>::identity(d, d);
    let mut num = ident.clone() * coeffs[0];
    let mut den = ident.clone() * coeffs[0];
    let mut power = ident;
    for (k, c) in coeffs.iter().enumerate().skip(1) {
        power = &power * &x;
        num += &power * *c;
        if k % 2 == 0 {
            den += &power * *c;
        } else {
            den -= &power * *c;
        }
    }
    let mut result = den
        .lu()
        .solve(&num)
        .ok_or_else(|| Error::IllPosed("singular Padé denominator in expm".into()))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Fails with [`Error::NoPrincipalLog`] when an eigenvalue lies on the closed
/// negative real axis.
pub fn logm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = check_square(m)?;
    if let Some((re, im)) = negative_real_eigenvalue(m) {
        return Err(Error::NoPrincipalLog { re, im });
    }

    let ident = DMatrix::<f64>::identity(d, d);
    let mut y = m.clone();
    let mut roots = 0;
    while norm1(&(&y - &ident)) > LOGM_THETA {
        if roots == MAX_SQRTS {
            return Err(no_log_error(m));
        }
        y = sqrtm_db(&y).ok_or_else(|| no_log_error(m))?;
        roots += 1;
    }

    let x = &y - &ident;
    let (nodes, weights) = gauss_legendre_unit(LOGM_NODES);
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for (t, w) in nodes.iter().zip(&weights) {
        let shifted = &ident + &x * *t;
        let term = shifted.lu().solve(&x).ok_or_else(|| no_log_error(m))?;
        acc += term * *w;
    }
    let out = acc * 2f64.powi(roots as i32);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(no_log_error(m))
    }
}

fn no_log_error(m: &DMatrix<f64>) -> Error {
    // Report the eigenvalue closest to the negative real axis.
    let eig = m.complex_eigenvalues();
    let worst = eig
        .iter()
        .min_by(|a, b| {
            let da = if a.re <= 0.0 { a.im.abs() } else { a.norm() };
            let db = if b.re <= 0.0 { b.im.abs() } else { b.norm() };
            da.total_cmp(&db)
        })
        .copied()
        .unwrap_or_default();
    Error::NoPrincipalLog {
        re: worst.re,
        im: worst.im,
    }
}

fn negative_real_eigenvalue(m: &DMatrix<f64>) -> Option<(f64, f64)> {
    let scale = norm1(m).max(f64::MIN_POSITIVE);
    m.complex_eigenvalues()
        .iter()
        .find(|l| l.re <= 0.0 && l.im.abs() <= 1e-12 * scale)
        .map(|l| (l.re, l.im))
}

/// Principal square root via the coupled Denman–Beavers iteration.
fn sqrtm_db(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = m.nrows();
    let mut y = m.clone();
    let mut z = DMatrix::<f64>::identity(d, d);
    for _ in 0..SQRT_MAX_ITER {
        let y_inv = y.clone().try_inverse()?;
        let z_inv = z.clone().try_inverse()?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let step = norm1(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if !y.iter().all(|v| v.is_finite()) {
            return None;
        }
        if step <= 1e-15 * norm1(&y) {
            return Some(y);
        }
    }
    None
}

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Finite-horizon Riccati iteration
/// `P ← Q + Aᵀ(P − P B (R + BᵀPB)⁻¹ BᵀP) A`, started from `P = Q`.
pub fn riccati_horizon(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    iters: usize,
) -> Result<DMatrix<f64>> {
    let n = check_square(a)?;
    let m = check_square(r)?;
    if q.shape() != (n, n) || b.shape() != (n, m) {
        return Err(Error::Input(format!(
            "riccati shapes: A {n}x{n}, B {:?}, Q {:?}, R {m}x{m}",
            b.shape(),
            q.shape()
        )));
    }
    if iters == 0 {
        return Err(Error::Input("riccati_horizon needs at least one iteration".into()));
    }
    let mut p = q.clone();
    for _ in 0..iters {
        let pb = &p * b;
        let s = r + b.transpose() * &pb;
        let rhs = pb.transpose() * a;
        let gain = s
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::IllPosed("R + BᵀPB is singular".into()))?;
        let next = q + a.transpose() * &p * a - a.transpose() * &pb * gain;
        p = (&next + next.transpose()) * 0.5;
    }
    Ok(p)
}
