use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smooth_traj::metrics::{Metric, MetricsTable, ResultRow};
use smooth_traj::model::Model;
use smooth_traj::training::{Checkpoint, TrainConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smooth-traj"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn smooth-traj")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        hidden_dim: 4,
        edge_hidden_dim: 3,
        attention_dim: 3,
        future_dim: 3,
        latent_hidden: 4,
        decoder_hidden: 4,
        num_modes: 2,
        kde_samples: 20,
        ..TrainConfig::default()
    }
}

struct Fixture {
    dir: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
}

fn fixture(kind: &str, scenes: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--kind", kind, "--scenes", &scenes.to_string(), "--seed", "3", "--out", p(&data)]);
    let config = dir.path().join("base.toml");
    std::fs::write(&config, tiny().to_toml()).unwrap();
    Fixture { dir, data, config }
}

#[test]
fn gen_writes_identical_files_on_repeat() {
    let f = fixture("gap", 12);
    let again = f.dir.path().join("again");
    ok(&["gen", "--kind", "gap", "--scenes", "12", "--seed", "3", "--out", p(&again)]);
    for name in ["tracks.csv", "gaps.csv"] {
        let a = std::fs::read(f.data.join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&["gen", "--kind", "bogus", "--out", "x"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--help"]), 0);
    let f = fixture("urban", 2);
    let out = f.dir.path().join("m.toml");
    assert_eq!(code(&["train", "--data", p(&f.data), "--out", p(&out), "--set", "no_such_key=1"]), 2);
    assert_eq!(code(&["train", "--data", p(&f.data), "--out", p(&out), "--set", "beta"]), 2);
    assert_eq!(code(&["train", "--data", p(&f.data), "--out", p(&out), "--set", "beta=-1"]), 2);
}

#[test]
fn missing_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("none.toml");
    let data = dir.path().join("nodata");
    assert_eq!(code(&["train", "--data", p(&data), "--out", p(&ck)]), 3);
    assert_eq!(code(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&dir.path().join("r.csv"))]), 3);
}

fn read_log(path: &Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["epoch", "nll", "kl", "smooth", "l0", "total", "wall_s"]);
    rd.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn train_logs_and_checkpoints_deterministically() {
    let f = fixture("urban", 4);
    let a = f.dir.path().join("a.toml");
    let b = f.dir.path().join("b.toml");
    for out in [&a, &b] {
        ok(&["train", "--config", p(&f.config), "--data", p(&f.data), "--out", p(out)]);
    }
    let log = read_log(&f.dir.path().join("a.toml.log.csv"));
    assert_eq!(log.len(), 2);
    for row in &log {
        assert_eq!(row[4], row[5], "beta 0 total must equal l0");
    }
    let (ca, cb) = (Checkpoint::load(&a).unwrap(), Checkpoint::load(&b).unwrap());
    assert!(ca.same_training(&cb));
    let echoed = std::fs::read_to_string(f.dir.path().join("a.toml.config.toml")).unwrap();
    assert_eq!(TrainConfig::from_toml(&echoed).unwrap(), ca.config);
}

#[test]
fn zero_epochs_checkpoint_holds_initial_parameters() {
    let f = fixture("urban", 3);
    let out = f.dir.path().join("init.toml");
    ok(&["train", "--config", p(&f.config), "--data", p(&f.data), "--out", p(&out), "--set", "epochs=0", "--set", "seed=4"]);
    let ck = Checkpoint::load(&out).unwrap();
    assert!(ck.history.is_empty());
    let init = Model::new(&ck.config.model(), 4).unwrap();
    assert_eq!(ck.model().unwrap().params.flat(), init.params.flat());
}

#[test]
fn eval_emits_four_horizons_per_metric_deterministically() {
    let f = fixture("gap", 20);
    let ck = f.dir.path().join("m.toml");
    ok(&["train", "--config", p(&f.config), "--data", p(&f.data), "--out", p(&ck)]);
    let r1 = f.dir.path().join("r1.csv");
    let r2 = f.dir.path().join("r2.csv");
    for r in [&r1, &r2] {
        ok(&["eval", "--checkpoint", p(&ck), "--data", p(&f.data), "--out", p(r), "--tag", "t"]);
    }
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    let table = MetricsTable::read_csv(&r1).unwrap();
    for m in [Metric::Fde, Metric::Ade, Metric::KdeNll] {
        let hs: Vec<f64> = table.rows().iter().filter(|r| r.metric == m).map(|r| r.horizon_s).collect();
        assert_eq!(hs, [1.0, 2.0, 3.0, 4.0], "{m}");
    }
    let bad = f.dir.path().join("bad.csv");
    assert_eq!(code(&["eval", "--checkpoint", p(&ck), "--data", p(&f.data), "--out", p(&bad), "--horizons", "1.3"]), 2);
    assert_eq!(code(&["eval", "--checkpoint", p(&ck), "--data", p(&f.data), "--out", p(&bad), "--horizons", "5"]), 2);
}

#[test]
fn sweep_fills_the_grid_resumes_and_refuses_hash_mismatch() {
    let f = fixture("gap", 60);
    let out = f.dir.path().join("sweep");
    let args = [
        "sweep", "--config", p(&f.config), "--data", p(&f.data), "--out", p(&out), "--betas", "0,1", "--observed", "10", "--seeds", "0",
    ];
    ok(&args);
    let merged = MetricsTable::read_csv(&out.join("results.csv")).unwrap();
    assert_eq!(merged.len(), 2 * 2 * 4 * 4);
    let cell = out.join("beta1_critical_nI10_seed0");
    for name in ["config.toml", "config.sha256", "checkpoint.toml", "train_log.csv", "results.csv"] {
        assert!(cell.join(name).exists(), "{name}");
    }
    let stamp = std::fs::metadata(cell.join("checkpoint.toml")).unwrap().modified().unwrap();
    let again = ok(&args);
    assert_eq!(String::from_utf8_lossy(&again.stderr).matches("skipped").count(), 4);
    assert_eq!(std::fs::metadata(cell.join("checkpoint.toml")).unwrap().modified().unwrap(), stamp);
    assert_eq!(MetricsTable::read_csv(&out.join("results.csv")).unwrap(), merged);

    let mut changed = args.to_vec();
    changed.extend(["--set", "learning_rate=0.001"]);
    let refused = run(&changed);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("hash"));
}

fn toy_results(dir: &Path, rows: &[(f64, f64, f64)]) -> PathBuf {
    let mut t = MetricsTable::new();
    for &(beta, h, v) in rows {
        t.push(ResultRow {
            model: "nI10-vehicle".into(),
            beta,
            split: "random".into(),
            metric: Metric::Fde,
            horizon_s: h,
            value: v,
            seed: 0,
        })
        .unwrap();
    }
    let path = dir.join("results.csv");
    t.write_csv(&path).unwrap();
    path
}

#[test]
fn report_bolds_column_minimum_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    toy_results(dir.path(), &[(0.0, 1.0, 0.5), (0.0, 2.0, 1.0), (1.0, 1.0, 0.6), (1.0, 2.0, 0.9)]);
    ok(&["report", "--results", p(dir.path())]);
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("| β | 1 s | 2 s |"));
    assert!(md.contains("| 0 (baseline) | **0.500** | 1.000 |"));
    assert!(md.contains("| 1 | 0.600 | **0.900** |"));
    let plot = dir.path().join("plot_fde_random_nI10-vehicle.svg");
    let svg = std::fs::read(&plot).unwrap();
    assert!(svg.starts_with(b"<svg"));
    ok(&["report", "--results", p(dir.path())]);
    assert_eq!(std::fs::read_to_string(dir.path().join("report.md")).unwrap(), md);
    assert_eq!(std::fs::read(&plot).unwrap(), svg);
}

#[test]
fn report_rejects_empty_and_malformed_results() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_results(dir.path(), &[]);
    assert_eq!(code(&["report", "--results", p(&csv)]), 3);
    std::fs::write(&csv, "model,beta,split,horizon_s,value,seed\nm,0,random,1,0.5,0\n").unwrap();
    assert_eq!(code(&["report", "--results", p(&csv)]), 3);
    assert_eq!(code(&["report", "--results", p(&dir.path().join("absent.csv"))]), 3);
}
