use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn base_config() -> Value {
    let pi = std::f64::consts::PI;
    json!({
        "plant": {"pendulum": {"mass": 0.25, "length": 0.5}},
        "kernel": {"product": [
            {"dims": [0], "periodic": {"omega": 2.0 * pi, "ell": 1.0}},
            {"dims": [1, 2], "rbf": {"sigma": 3.0}}
        ]},
        "dataset": {
            "dt": 0.05,
            "seed": 0,
            "collection": {"random": {
                "count": 34,
                "state_ranges": [[-pi, pi], [-5.0, 5.0]],
                "input_ranges": [[-0.6, 0.6]]
            }}
        },
        "gp": {"noise_var": 1e-6},
        "mpc": {"horizon": 20, "q": [10.0, 1.0], "r": [1.0], "x_goal": [0.0, 0.0], "u_lo": [-0.6], "u_hi": [0.6]},
        "run": {"x0": [-pi, 0.0], "steps": 40},
        "evalgrid": {"resolution": 8, "dims": [0, 1], "input": [0.0]},
        "bench": {"sizes": [1, 34], "steps": 10, "threshold_ms": 1e6}
    })
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new(cfg: &Value) -> Fixture {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("config.json");
        fs::write(&config, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
        Fixture { dir, config }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_gpmpc"))
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(self.out(out))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) -> String {
        let o = self.run(out, args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            r.unwrap()
                .iter()
                .map(|v| v.trim().parse().unwrap_or(f64::NAN))
                .collect()
        })
        .collect()
}

fn code(o: &Output) -> Option<i32> {
    o.status.code()
}

#[test]
fn seed_flag_makes_collection_reproducible() {
    let f = Fixture::new(&base_config());
    f.ok("a", &["--seed", "7", "collect"]);
    f.ok("b", &["--seed", "7", "collect"]);
    f.ok("c", &["--seed", "8", "collect"]);
    let read = |d: &str| fs::read(f.out(d).join("transitions.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn refit_is_bit_identical() {
    let f = Fixture::new(&base_config());
    f.ok("a", &["collect"]);
    let ds = f.out("a").join("transitions.csv");
    let ds = ds.to_str().unwrap();
    f.ok("m1", &["fit", "--dataset", ds]);
    f.ok("m2", &["fit", "--dataset", ds]);
    for name in ["model.json", "model.bin"] {
        assert_eq!(
            fs::read(f.out("m1").join(name)).unwrap(),
            fs::read(f.out("m2").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn existing_outputs_need_force() {
    let f = Fixture::new(&base_config());
    f.ok("a", &["collect"]);
    let before = fs::read(f.out("a").join("transitions.csv")).unwrap();
    let o = f.run("a", &["--seed", "3", "collect"]);
    assert_eq!(code(&o), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    assert_eq!(fs::read(f.out("a").join("transitions.csv")).unwrap(), before);
    f.ok("a", &["--seed", "3", "--force", "collect"]);
    assert_ne!(fs::read(f.out("a").join("transitions.csv")).unwrap(), before);
}

#[test]
fn config_errors_exit_with_one() {
    let mut cfg = base_config();
    cfg["gp"]["noise_variance"] = json!(1e-6);
    let f = Fixture::new(&cfg);
    assert_eq!(code(&f.run("a", &["collect"])), Some(1));

    let mut cfg = base_config();
    cfg["mpc"]["q"] = json!([1.0, 1.0, 1.0]);
    let f = Fixture::new(&cfg);
    assert_eq!(code(&f.run("a", &["collect"])), Some(1));

    let f = Fixture::new(&base_config());
    let missing = f.out("nowhere.csv");
    let o = f.run("a", &["fit", "--dataset", missing.to_str().unwrap()]);
    assert_eq!(code(&o), Some(1));
}

#[test]
fn zero_steps_writes_header_only_log() {
    let mut cfg = base_config();
    cfg["run"]["model"] = json!({"analytic": {"pendulum": {"mass": 0.25, "length": 0.5}}});
    let f = Fixture::new(&cfg);
    f.ok("a", &["run", "--steps", "0"]);
    let text = fs::read_to_string(f.out("a").join("run.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("t,"));
}

#[test]
fn pendulum_inputs_stay_in_box() {
    let f = Fixture::new(&base_config());
    f.ok("a", &["collect"]);
    f.ok("a", &["fit"]);
    f.ok("a", &["run"]);
    let log = rows(&f.out("a").join("run.csv"));
    assert_eq!(log.len(), 40);
    // t, x0, x1, u0, ...
    assert!(log.iter().all(|r| r[3].abs() <= 0.6 + 1e-12));
    for name in ["trajectory.gp", "angle.gp", "one_step_error.gp"] {
        assert!(f.out("a").join(name).exists(), "{name}");
    }
}

#[test]
fn zero_target_model_error_is_true_field_norm() {
    let f = Fixture::new(&base_config());
    f.ok("a", &["collect"]);
    // Rewrite every successor as the state itself: all displacements vanish.
    let path = f.out("a").join("transitions.csv");
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let header = rdr.headers().unwrap().clone();
    let mut w = csv::Writer::from_path(f.out("a").join("still.csv")).unwrap();
    w.write_record(&header).unwrap();
    for r in rdr.records() {
        let r = r.unwrap();
        w.write_record([&r[0], &r[1], &r[2], &r[0], &r[1]]).unwrap();
    }
    w.flush().unwrap();
    fs::copy(
        f.out("a").join("transitions.meta.json"),
        f.out("a").join("still.meta.json"),
    )
    .unwrap();
    let still = f.out("a").join("still.csv");
    f.ok("a", &["fit", "--dataset", still.to_str().unwrap()]);
    f.ok("a", &["evalgrid"]);
    let grid = rows(&f.out("a").join("grid.csv"));
    assert_eq!(grid.len(), 64);
    for r in &grid {
        assert!((r[2] - r[3]).abs() <= 1e-9 * r[3].max(1.0), "{r:?}");
    }
}

#[test]
fn bench_reports_each_size() {
    let f = Fixture::new(&base_config());
    f.ok("a", &["collect"]);
    f.ok("a", &["bench"]);
    let table = rows(&f.out("a").join("bench.csv"));
    assert_eq!(table.iter().map(|r| r[0] as usize).collect::<Vec<_>>(), vec![1, 34]);

    let mut cfg = base_config();
    cfg["bench"]["threshold_ms"] = json!(1e-9);
    let f = Fixture::new(&cfg);
    f.ok("a", &["collect"]);
    assert_eq!(code(&f.run("a", &["bench"])), Some(3));
    assert!(f.out("a").join("bench.csv").exists());
}
