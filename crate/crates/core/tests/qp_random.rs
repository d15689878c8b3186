use gpmpc::qpsolve::{solve_qp, solve_qp_warm, QPProblem, Settings, Status, Triplets};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Planted {
    qp: QPProblem,
    p: DMatrix<f64>,
    a: DMatrix<f64>,
}

/// Random strictly convex QP with equality rows and general two-sided
/// inequality rows, some active at each side.
fn planted(seed: u64, n: usize, me: usize, mi: usize) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = &g * g.transpose() + DMatrix::identity(n, n) * 0.5;
    let a = DMatrix::from_fn(me + mi, n, |_, _| rng.random_range(-1.0..1.0));
    let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let ax = &a * &x;
    let mut y = DVector::zeros(me + mi);
    let mut l = vec![0.0; me + mi];
    let mut u = vec![0.0; me + mi];
    for i in 0..me {
        l[i] = ax[i];
        u[i] = ax[i];
        y[i] = rng.random_range(-1.0..1.0);
    }
    for i in me..me + mi {
        let gap = rng.random_range(0.1..1.0);
        match rng.random_range(0..3) {
            0 => {
                l[i] = ax[i];
                u[i] = ax[i] + gap;
                y[i] = -rng.random_range(0.1..1.0);
            }
            1 => {
                l[i] = ax[i] - gap;
                u[i] = ax[i];
                y[i] = rng.random_range(0.1..1.0);
            }
            _ => {
                l[i] = ax[i] - gap;
                u[i] = ax[i] + rng.random_range(0.1..1.0);
            }
        }
    }
    let q = -(&p * &x) - a.transpose() * &y;
    Planted {
        qp: QPProblem {
            p: Triplets::from_dense(&p),
            q: q.as_slice().to_vec(),
            a: Triplets::from_dense(&a),
            l,
            u,
        },
        p,
        a,
    }
}

/// Direct solve of the KKT system with the rows in `tight` held at the
/// given values.
fn kkt_oracle(pl: &Planted, tight: &[(usize, f64)]) -> DVector<f64> {
    let n = pl.p.nrows();
    let k = tight.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&pl.p);
    let mut rhs = DVector::zeros(n + k);
    for j in 0..n {
        rhs[j] = -pl.qp.q[j];
    }
    for (r, &(i, v)) in tight.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = pl.a[(i, j)];
            kkt[(j, n + r)] = pl.a[(i, j)];
        }
        rhs[n + r] = v;
    }
    kkt.lu().solve(&rhs).unwrap().rows(0, n).into_owned()
}

#[test]
fn planted_qps_match_kkt_solve() {
    let settings = Settings::default();
    for seed in 0..100 {
        let pl = planted(seed, 12, 3, 8);
        let sol = solve_qp(&pl.qp, &settings).unwrap();
        assert_eq!(sol.status, Status::Solved, "seed {seed}");
        // Identify the active set from the bounds the returned point touches,
        // then solve the equality-constrained KKT system directly.
        let z = DVector::from_column_slice(&sol.z);
        let az = &pl.a * &z;
        let mut tight = Vec::new();
        for i in 0..pl.qp.l.len() {
            if (az[i] - pl.qp.l[i]).abs() < 1e-6 {
                tight.push((i, pl.qp.l[i]));
            } else if (az[i] - pl.qp.u[i]).abs() < 1e-6 {
                tight.push((i, pl.qp.u[i]));
            }
        }
        let oracle = kkt_oracle(&pl, &tight);
        let err = (&z - oracle).amax();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn objective_not_beaten_by_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 6;
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = &g * g.transpose();
    let q: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
    let hi: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let qp = QPProblem {
        p: Triplets::from_dense(&p),
        q,
        a: Triplets::from_dense(&DMatrix::identity(n, n)),
        l: lo.clone(),
        u: hi.clone(),
    };
    let sol = solve_qp(&qp, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Solved);
    for _ in 0..100 {
        let z: Vec<f64> = (0..n).map(|j| rng.random_range(lo[j]..hi[j])).collect();
        assert!(sol.objective <= qp.objective(&z) + 1e-9);
    }
}

#[test]
fn warm_start_from_optimum() {
    for seed in 0..10 {
        let pl = planted(100 + seed, 12, 2, 10);
        let cold = solve_qp(&pl.qp, &Settings::default()).unwrap();
        let warm = solve_qp_warm(&pl.qp, &Settings::default(), &cold.z, &cold.y).unwrap();
        assert_eq!(warm.status, Status::Solved);
        assert!(warm.iterations <= 5, "seed {seed}: {} iterations", warm.iterations);
    }
}

#[test]
fn infeasible_box_intersection() {
    // z₁ + z₂ ≥ 3 while both are boxed in [0, 1].
    let qp = QPProblem {
        p: Triplets::from_dense(&DMatrix::identity(2, 2)),
        q: vec![0.0, 0.0],
        a: Triplets::from_dense(&DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0])),
        l: vec![3.0, 0.0, 0.0],
        u: vec![f64::INFINITY, 1.0, 1.0],
    };
    let sol = solve_qp(&qp, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::PrimalInfeasible);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solved_points_are_stationary(seed in 0u64..10_000, n in 2usize..12, me in 0usize..3, mi in 0usize..10) {
        let pl = planted(seed, n, me.min(n - 1), mi);
        let settings = Settings::default();
        let sol = solve_qp(&pl.qp, &settings).unwrap();
        prop_assert_eq!(sol.status, Status::Solved);
        let z = DVector::from_column_slice(&sol.z);
        let y = DVector::from_column_slice(&sol.y);
        let q = DVector::from_column_slice(&pl.qp.q);
        let stat = &pl.p * &z + q + pl.a.transpose() * y;
        prop_assert!(stat.amax() <= 10.0 * settings.eps_abs, "{}", stat.amax());
        let az = &pl.a * &z;
        for i in 0..pl.qp.l.len() {
            prop_assert!(az[i] >= pl.qp.l[i] - 1e-5 && az[i] <= pl.qp.u[i] + 1e-5);
        }
    }
}

#[test]
fn polish_settles_at_degenerate_vertex() {
    // Three active rows meet at (1, 1) in the plane.
    let p = DMatrix::identity(2, 2);
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let qp = QPProblem {
        p: Triplets::from_dense(&p),
        q: vec![-2.0, -2.0],
        a: Triplets::from_dense(&a),
        l: vec![-10.0, -10.0, -10.0],
        u: vec![1.0, 1.0, 2.0],
    };
    let sol = solve_qp(&qp, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Solved);
    assert!(sol.polished);
    assert!(
        (sol.z[0] - 1.0).abs() < 1e-9 && (sol.z[1] - 1.0).abs() < 1e-9,
        "{:?}",
        sol.z
    );
}
