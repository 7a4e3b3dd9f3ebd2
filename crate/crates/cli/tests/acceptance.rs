//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p smooth-traj-cli --test acceptance`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smooth_traj::encoder::AttentionTrace;
use smooth_traj::losses::{smooth_loss, SMOOTH_EPS};
use smooth_traj::metrics::{ade, auc, fde, kde_nll, Bandwidth, Metric, MetricsTable};
use smooth_traj::model::{Model, SmoothMode};
use smooth_traj::scenes::{generate_gap, generate_urban, split_critical, split_random, DataSplit, GenConfig, SplitMethod};
use smooth_traj::training::{
    build_samples, evaluate, grad_check, measure_attention_tv, prepare, train, train_model, train_with, ModelForecaster, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn c1_zero_beta_equivalence() -> Outcome {
    let set = generate_urban(&GenConfig { num_scenes: 20, ..GenConfig::default() }, 7).unwrap();
    let split = split_random(&set, [0.8, 0.0, 0.2], 7).unwrap();
    let cfg = TrainConfig { beta: 0.0, epochs: 10, seed: 7, ..TrainConfig::default() };
    let a = train_with(&cfg, &set, &split, SmoothMode::Included, |_| {}).unwrap();
    let b = train_with(&cfg, &set, &split, SmoothMode::Absent, |_| {}).unwrap();
    let worst = a
        .history
        .iter()
        .zip(&b.history)
        .flat_map(|(x, y)| [(x.total - y.total).abs(), (x.nll - y.nll).abs(), (x.kl - y.kl).abs(), (x.l0 - y.l0).abs()])
        .fold(0.0f64, f64::max);
    let pass = a.history.len() == 10 && b.history.len() == 10 && worst <= 1e-12;
    outcome(pass, format!("max |history difference| = {worst:e} over 10 epochs"))
}

fn trace(alpha: Vec<Vec<f64>>) -> AttentionTrace {
    let k = alpha[0].len();
    AttentionTrace { alpha, present: vec![true; k] }
}

fn c2_smooth_loss_oracle() -> Outcome {
    let (n, t) = (3usize, 10usize);
    let constant: Vec<AttentionTrace> = (0..n).map(|_| trace(vec![vec![0.3, 0.7]; t])).collect();
    let c = smooth_loss(&constant).unwrap();
    let bound = SMOOTH_EPS.sqrt() * n as f64 * t as f64;
    let flip = trace(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let one = smooth_loss(std::slice::from_ref(&flip)).unwrap();
    let two = smooth_loss(&[flip.clone(), flip]).unwrap();
    let e1 = (one - 2f64.sqrt()).abs();
    let e2 = (two - 2.0 * 2f64.sqrt()).abs();
    let pass = c <= bound && e1 <= 1e-6 && e2 <= 1e-6;
    outcome(pass, format!("constant {c:e} <= {bound:e}, flip err {e1:e}, two agents err {e2:e}"))
}

fn c3_gradient_check() -> Outcome {
    let set = generate_urban(&GenConfig { num_scenes: 2, ..GenConfig::default() }, 5).unwrap();
    let std = smooth_traj::scenes::Standardizer::fit(&set, &[0, 1]).unwrap();
    let mut errs = Vec::new();
    let mut params = 0;
    for beta in [0.0, 1.0] {
        let cfg = TrainConfig { beta, ..TrainConfig::default() };
        let samples = build_samples(&set, &[0, 1], &cfg, &std).unwrap();
        let model = Model::new(&cfg.model(), 11).unwrap();
        params = model.num_params();
        errs.push(grad_check(&model, &samples[..4], &cfg, 1e-5, None, 0).unwrap());
    }
    let pass = params <= 5000 && errs.iter().all(|e| *e <= 1e-5);
    outcome(pass, format!("{params} params, max rel error beta 0: {:e}, beta 1: {:e}", errs[0], errs[1]))
}

struct Twins {
    tv: [f64; 2],
    epoch_s: [f64; 2],
}

fn twin_run(seed: u64) -> Twins {
    let set = generate_urban(&GenConfig { num_scenes: 200, ..GenConfig::default() }, seed).unwrap();
    let split = split_random(&set, [0.8, 0.0, 0.2], seed).unwrap();
    let mut tv = [0.0; 2];
    let mut epoch_s = [0.0; 2];
    for (k, beta) in [0.0, 1.0].into_iter().enumerate() {
        let cfg = TrainConfig { beta, seed, epochs: 30, ..TrainConfig::default() };
        let data = prepare(&cfg, &set, &split).unwrap();
        let mut model = Model::new(&cfg.model(), seed).unwrap();
        let h = train_model(&mut model, &data.train, &cfg, SmoothMode::Included, |_| {}).unwrap();
        epoch_s[k] = h.iter().map(|r| r.wall_s).sum::<f64>() / h.len() as f64;
        tv[k] = measure_attention_tv(&model, &data.test).unwrap();
    }
    Twins { tv, epoch_s }
}

fn c4_c5_smoothing_and_overhead() -> (Outcome, Outcome) {
    let runs: Vec<Twins> = (0..3).map(twin_run).collect();
    let reductions: Vec<f64> = runs.iter().map(|r| 1.0 - r.tv[1] / r.tv[0]).collect();
    let hits = reductions.iter().filter(|r| **r >= 0.10).count();
    let c4 = outcome(
        hits >= 2,
        format!(
            "attention TV reduction per seed: {}",
            reductions.iter().map(|r| format!("{:.1}%", 100.0 * r)).collect::<Vec<_>>().join(", ")
        ),
    );
    let base: f64 = runs.iter().map(|r| r.epoch_s[0]).sum::<f64>() / 3.0;
    let smooth: f64 = runs.iter().map(|r| r.epoch_s[1]).sum::<f64>() / 3.0;
    let ratio = smooth / base;
    let c5 = outcome(ratio <= 2.5, format!("epoch time beta 1 / beta 0 = {smooth:.3}s / {base:.3}s = {ratio:.2}"));
    (c4, c5)
}

fn c6_metric_oracles() -> Outcome {
    let pred = [[1.0, 1.0], [3.0, 4.0], [6.0, 8.0]];
    let gt = [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
    let fde_err = (fde(&pred, &gt, 3).unwrap() - 10.0).abs();
    let ade_err = (ade(&pred, &gt, 3).unwrap() - (1.0 + 5.0 + 10.0) / 3.0).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut auc_err = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..12) as f64) * 0.25).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let (pos, neg) = (labels.iter().filter(|l| **l).count(), labels.iter().filter(|l| !**l).count());
        if pos == 0 || neg == 0 {
            continue;
        }
        let mut wins = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let brute = wins / (pos * neg) as f64;
        auc_err = auc_err.max((auc(&scores, &labels).unwrap() - brute).abs());
        done += 1;
    }

    let mut kde_err = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let h = rng.random_range(1..=4);
        let samples: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|_| (0..h).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect())
            .collect();
        let anchor = rng.random_range(0..n);
        let gt: Vec<[f64; 2]> = samples[anchor]
            .iter()
            .map(|p| [p[0] + rng.random_range(-0.1..0.1), p[1] + rng.random_range(-0.1..0.1)])
            .collect();
        let mut direct = 0.0;
        for s in 0..h {
            let xs: Vec<f64> = samples.iter().map(|t| t[s][0]).collect();
            let ys: Vec<f64> = samples.iter().map(|t| t[s][1]).collect();
            let var = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
            };
            let bw = ((n as f64).powf(-1.0 / 6.0) * ((var(&xs) + var(&ys)) / 2.0).sqrt()).max(1e-3);
            let density: f64 = samples
                .iter()
                .map(|t| {
                    let d2 = (t[s][0] - gt[s][0]).powi(2) + (t[s][1] - gt[s][1]).powi(2);
                    (-d2 / (2.0 * bw * bw)).exp() / (2.0 * std::f64::consts::PI * bw * bw)
                })
                .sum::<f64>()
                / n as f64;
            direct += -density.ln();
        }
        direct /= h as f64;
        let got = kde_nll(&samples, &gt, h, Bandwidth::Scott).unwrap();
        kde_err = kde_err.max((got - direct).abs());
    }
    let pass = fde_err <= 1e-9 && ade_err <= 1e-9 && auc_err <= 1e-12 && kde_err <= 1e-9;
    outcome(pass, format!("fde {fde_err:e}, ade {ade_err:e}, auc {auc_err:e}, kde {kde_err:e}"))
}

fn c7_overfit() -> Outcome {
    let seed = 1;
    let set = generate_urban(&GenConfig { num_scenes: 10, ..GenConfig::default() }, seed).unwrap();
    let split = DataSplit {
        train: (0..10).collect(),
        val: vec![],
        test: vec![],
        method: SplitMethod::Random,
        seed,
    };
    let cfg = TrainConfig { seed, epochs: 25, learning_rate: 0.01, ..TrainConfig::default() };
    let data = prepare(&cfg, &set, &split).unwrap();
    let mut model = Model::new(&cfg.model(), seed).unwrap();
    let mut best = f64::INFINITY;
    let mut at = 0;
    for round in 1..=20 {
        train_model(&mut model, &data.train, &cfg, SmoothMode::Included, |_| {}).unwrap();
        let ade_now = data
            .train
            .iter()
            .map(|s| ade(&model.predict_most_likely(s, 8, cfg.dt).unwrap().trajectory(), &s.gt_rel, 8).unwrap())
            .sum::<f64>()
            / data.train.len() as f64;
        if ade_now < best {
            best = ade_now;
            at = round * 25;
        }
        if best < 0.3 {
            break;
        }
    }
    outcome(best < 0.3, format!("most-likely ADE {best:.4} standardized units after {at} epochs ({} samples)", data.train.len()))
}

fn gap_run(seed: u64, method: SplitMethod) -> (f64, Option<f64>) {
    let set = generate_gap(&GenConfig { num_scenes: 200, ..GenConfig::gap_default() }, seed).unwrap();
    let split = match method {
        SplitMethod::Random => split_random(&set, [0.8, 0.0, 0.2], seed).unwrap(),
        SplitMethod::Critical => split_critical(&set, 0.2).unwrap(),
    };
    let cfg = TrainConfig { seed, epochs: 30, ..TrainConfig::default() };
    let ck = train(&cfg, &set, &split).unwrap();
    let model = ck.model().unwrap();
    let f = ModelForecaster { model: &model, std: ck.standardizer, dt: cfg.dt };
    let ev = evaluate(&f, &set, &split.test, &cfg, &ck.standardizer, "m", method.as_str()).unwrap();
    let fde4 = ev.table.find("m-vehicle", Metric::Fde, 4.0).expect("vehicle fde row").value;
    let auc4 = ev.table.find("m-vehicle", Metric::Auc, 4.0).map(|r| r.value);
    (fde4, auc4)
}

fn c8_c9_gap() -> (Outcome, Outcome) {
    let mut fde_r = Vec::new();
    let mut fde_c = Vec::new();
    let mut aucs = Vec::new();
    for seed in 0..3 {
        let (f, a) = gap_run(seed, SplitMethod::Random);
        fde_r.push(f);
        aucs.push(a);
        fde_c.push(gap_run(seed, SplitMethod::Critical).0);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mr, mc) = (mean(&fde_r), mean(&fde_c));
    let c8 = outcome(mc >= mr, format!("mean FDE@4s critical {mc:.3} m vs random {mr:.3} m"));
    let c9 = match aucs.iter().copied().collect::<Option<Vec<f64>>>() {
        Some(a) => {
            let m = mean(&a);
            outcome(m >= 0.65, format!("mean random-split AUC@4s {m:.3} (per seed {a:.3?})"))
        }
        None => outcome(false, "a random-split test set had a single label"),
    };
    (c8, c9)
}

fn c10_report() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("sweep");
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    smooth_traj_cli::run(["smooth-traj", "gen", "--kind", "gap", "--scenes", "60", "--seed", "3", "--out", &s(&data)]).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        hidden_dim: 4,
        edge_hidden_dim: 3,
        attention_dim: 3,
        future_dim: 3,
        latent_hidden: 4,
        decoder_hidden: 4,
        num_modes: 2,
        kde_samples: 20,
        ..TrainConfig::default()
    };
    let cfg_path = dir.path().join("base.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    smooth_traj_cli::run([
        "smooth-traj",
        "sweep",
        "--config",
        &s(&cfg_path),
        "--data",
        &s(&data),
        "--out",
        &s(&out),
        "--splits",
        "random",
        "--observed",
        "10",
    ])
    .unwrap();
    let start = Instant::now();
    smooth_traj_cli::run(["smooth-traj", "report", "--results", &s(&out)]).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let results = MetricsTable::read_csv(&out.join("results.csv")).unwrap();
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();

    let mut problems = Vec::new();
    let metrics: std::collections::BTreeSet<Metric> = results.rows().iter().map(|r| r.metric).collect();
    let sections: Vec<&str> = md.split("\n## ").skip(1).collect();
    if sections.len() != metrics.len() {
        problems.push(format!("{} tables for {} metrics", sections.len(), metrics.len()));
    }
    for sec in &sections {
        let lines: Vec<&str> = sec.lines().filter(|l| l.starts_with('|')).collect();
        if lines.first() != Some(&"| β | 1 s | 2 s | 3 s | 4 s |") {
            problems.push(format!("header {:?}", lines.first()));
        }
        let rows: Vec<Vec<&str>> = lines[2..].iter().map(|l| l.trim_matches('|').split('|').map(str::trim).collect()).collect();
        if rows.len() != 6 || rows[0][0] != "0 (baseline)" {
            problems.push(format!("{} rows, first {:?}", rows.len(), rows.first().map(|r| r[0])));
            continue;
        }
        let higher = sec.starts_with("auc");
        for c in 1..=4 {
            let vals: Vec<f64> = rows.iter().map(|r| r[c].trim_matches('*').parse().unwrap()).collect();
            let best = vals.iter().copied().fold(if higher { f64::NEG_INFINITY } else { f64::INFINITY }, |a, b| if higher { a.max(b) } else { a.min(b) });
            for (r, v) in rows.iter().zip(&vals) {
                if r[c].starts_with("**") != (*v == best) {
                    problems.push(format!("bolding in column {c} of {}", sec.lines().next().unwrap()));
                }
            }
        }
    }
    let svgs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    if svgs != sections.len() {
        problems.push(format!("{svgs} plots for {} tables", sections.len()));
    }
    if secs >= 10.0 {
        problems.push(format!("report took {secs:.1}s"));
    }
    let pass = problems.is_empty() && metrics.len() >= 3;
    outcome(pass, format!("{} tables, {svgs} plots, {secs:.2}s {}", sections.len(), problems.join("; ")))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, start: Instant, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {status} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    };
    let t = Instant::now();
    report(1, "zero-beta equivalence", t, c1_zero_beta_equivalence());
    let t = Instant::now();
    report(2, "smooth loss oracle", t, c2_smooth_loss_oracle());
    let t = Instant::now();
    report(3, "gradient check", t, c3_gradient_check());
    let t = Instant::now();
    let (c4, c5) = c4_c5_smoothing_and_overhead();
    report(4, "smoothing effect", t, c4);
    report(5, "overhead bound", t, c5);
    let t = Instant::now();
    report(6, "metric oracles", t, c6_metric_oracles());
    let t = Instant::now();
    report(7, "trainability", t, c7_overfit());
    let t = Instant::now();
    let (c8, c9) = c8_c9_gap();
    report(8, "critical-split hardness", t, c8);
    report(9, "gap-acceptance auc", t, c9);
    let t = Instant::now();
    report(10, "report fidelity", t, c10_report());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
