use std::collections::BTreeMap;

use proptest::prelude::*;
use smooth_traj::cvae::{argmax, log_prob, GaussianStep};
use smooth_traj::encoder::AttentionTrace;
use smooth_traj::losses::{mean_attention_tv, smooth_loss, total_loss, LossConfig};
use smooth_traj::metrics::{ade, auc, auc_trapezoid, fde, kde_nll, Bandwidth};
use smooth_traj::model::Model;
use smooth_traj::scenes::{
    build_neighbor_graph, generate_gap, generate_urban, split_critical, split_random, GenConfig, SceneSet, Standardizer,
};
use smooth_traj::training::{build_samples, TrainConfig};

fn small(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn traces() -> impl Strategy<Value = Vec<AttentionTrace>> {
    (1usize..5, 2usize..8, 2usize..4).prop_flat_map(|(n, t, k)| {
        prop::collection::vec(prop::collection::vec(simplex(k), t), n)
            .prop_map(move |agents| agents.into_iter().map(|alpha| AttentionTrace { alpha, present: vec![true; k] }).collect())
    })
}

fn trajectories(n: usize, h: usize) -> impl Strategy<Value = Vec<Vec<[f64; 2]>>> {
    prop::collection::vec(prop::collection::vec([-5.0f64..5.0, -5.0f64..5.0], h), n)
}

fn gap_set(seed: u64, n: usize) -> SceneSet {
    generate_gap(&GenConfig { num_scenes: n, ..GenConfig::gap_default() }, seed).unwrap()
}

proptest! {
    #![proptest_config(small(64))]

    #[test]
    fn smooth_loss_is_nonnegative_and_agent_order_free(tr in traces(), rot in 0usize..5) {
        let a = smooth_loss(&tr).unwrap();
        let mut shuffled = tr.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        prop_assert!(a >= 0.0);
        prop_assert!((a - smooth_loss(&shuffled).unwrap()).abs() <= 1e-12 * (1.0 + a));
        prop_assert!(mean_attention_tv(&tr).unwrap() >= 0.0);
    }

    #[test]
    fn smooth_loss_adds_over_agents(tr in traces()) {
        let whole = smooth_loss(&tr).unwrap();
        let parts: f64 = tr.iter().map(|t| smooth_loss(std::slice::from_ref(t)).unwrap()).sum();
        prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole));
    }

    #[test]
    fn total_loss_is_the_weighted_sum(nll in -50.0f64..50.0, kl in 0.0f64..5.0, smooth in 0.0f64..20.0, beta in 0.0f64..10.0, w in 0.0f64..2.0) {
        let b = total_loss(nll, kl, smooth, &LossConfig { beta, kl_weight: w }).unwrap();
        let expect = nll + w * kl + beta * smooth;
        prop_assert!((b.total - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
    }

    #[test]
    fn rank_auc_matches_trapezoid_and_reverses(
        pairs in prop::collection::vec((0u8..10, any::<bool>()), 2..60)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - auc_trapezoid(&scores, &labels).unwrap()).abs() <= 1e-12);
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&neg, &labels).unwrap() - (1.0 - a)).abs() <= 1e-12);
    }

    #[test]
    fn kde_nll_is_translation_invariant(s in trajectories(12, 3), gt in prop::collection::vec([-3.0f64..3.0, -3.0f64..3.0], 3), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let shift = |p: [f64; 2]| [p[0] + dx, p[1] + dy];
        let moved: Vec<Vec<[f64; 2]>> = s.iter().map(|t| t.iter().map(|p| shift(*p)).collect()).collect();
        let gt_moved: Vec<[f64; 2]> = gt.iter().map(|p| shift(*p)).collect();
        for h in 1..=3 {
            let a = kde_nll(&s, &gt, h, Bandwidth::Scott).unwrap();
            let b = kde_nll(&moved, &gt_moved, h, Bandwidth::Scott).unwrap();
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn displacement_errors_are_bounded(p in trajectories(2, 6)) {
        let (pred, gt) = (&p[0], &p[1]);
        let d: Vec<f64> = pred.iter().zip(gt).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).collect();
        for h in 1..=6 {
            let a = ade(pred, gt, h).unwrap();
            prop_assert_eq!(fde(pred, gt, h).unwrap(), d[h - 1]);
            prop_assert!(a >= 0.0 && a <= d[..h].iter().copied().fold(0.0, f64::max) + 1e-12);
        }
    }

    #[test]
    fn gaussians_are_spd_and_log_prob_translation_invariant(
        steps in prop::collection::vec(([-5.0f64..5.0, -5.0f64..5.0], [-8.0f64..3.0, -3.0f64..3.0, -8.0f64..3.0]), 1..6),
        gt in prop::collection::vec([-5.0f64..5.0, -5.0f64..5.0], 6),
        off in [-100.0f64..100.0, -100.0f64..100.0],
    ) {
        let pos: Vec<GaussianStep> = steps.iter().map(|(m, c)| GaussianStep { mean: *m, cov_chol: *c }).collect();
        for g in &pos {
            let c = g.cov();
            prop_assert!(c[0] > 0.0 && c[0] * c[2] - c[1] * c[1] > 0.0);
            prop_assert!(g.log_det().is_finite());
        }
        let gt = &gt[..pos.len()];
        let moved: Vec<GaussianStep> = pos.iter().map(|g| GaussianStep { mean: [g.mean[0] + off[0], g.mean[1] + off[1]], ..*g }).collect();
        let gt_moved: Vec<[f64; 2]> = gt.iter().map(|p| [p[0] + off[0], p[1] + off[1]]).collect();
        let a = log_prob(&pos, gt).unwrap();
        let b = log_prob(&moved, &gt_moved).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn argmax_survives_monotone_maps(v in prop::collection::vec(-5.0f64..5.0, 1..9)) {
        let i = argmax(&v);
        prop_assert_eq!(argmax(&v.iter().map(|x| 3.0 * x + 1.0).collect::<Vec<_>>()), i);
        prop_assert_eq!(argmax(&v.iter().map(|x| x.exp()).collect::<Vec<_>>()), i);
    }
}

proptest! {
    #![proptest_config(small(12))]

    #[test]
    fn random_split_is_a_disjoint_cover(n in 1usize..40, a in 0.1f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let set = generate_urban(&GenConfig { num_scenes: n, frames_per_scene: 18, ..GenConfig::default() }, seed % 1000).unwrap();
        let total = a + b + 1.0;
        let split = split_random(&set, [a / total, b / total, 1.0 / total], seed).unwrap();
        prop_assert!(split.is_partition_of(n));
        prop_assert_eq!(split, split_random(&set, [a / total, b / total, 1.0 / total], seed).unwrap());
    }

    #[test]
    fn critical_split_holds_the_extremes(seed in 0u64..500, frac in 0.1f64..0.5) {
        let set = gap_set(seed, 30);
        let split = split_critical(&set, frac).unwrap();
        prop_assert!(split.is_partition_of(set.len()));
        let gaps = |idx: &[usize], acc: bool| -> Vec<f64> {
            idx.iter().filter_map(|&i| set.scenes[i].gap_meta).filter(|m| m.accepted == acc).map(|m| m.gap_size).collect()
        };
        let train: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
        let (ta, tr) = (gaps(&split.test, true), gaps(&split.test, false));
        if !ta.is_empty() && !tr.is_empty() {
            let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(max(&ta) <= min(&gaps(&train, true)));
            prop_assert!(min(&tr) >= max(&gaps(&train, false)));
        }
    }

    #[test]
    fn generators_are_pure(seed in any::<u64>()) {
        let cfg = GenConfig { num_scenes: 2, ..GenConfig::default() };
        prop_assert_eq!(generate_urban(&cfg, seed).unwrap(), generate_urban(&cfg, seed).unwrap());
        let gap = GenConfig { num_scenes: 2, ..GenConfig::gap_default() };
        prop_assert_eq!(generate_gap(&gap, seed).unwrap(), generate_gap(&gap, seed).unwrap());
    }

    #[test]
    fn neighbor_graph_is_label_free(seed in 0u64..1000, shift in 1u64..1000, t in 9i64..30) {
        let scene = generate_urban(&GenConfig { num_scenes: 1, ..GenConfig::default() }, seed).unwrap().scenes.remove(0);
        let focal = scene.tracks[0].agent_id;
        let relabel: BTreeMap<u64, u64> = scene
            .tracks
            .iter()
            .map(|tr| (tr.agent_id, if tr.agent_id == focal { focal } else { tr.agent_id * 7 + 1000 * shift }))
            .collect();
        let mut renamed = scene.clone();
        for tr in &mut renamed.tracks {
            tr.agent_id = relabel[&tr.agent_id];
        }
        renamed.tracks.reverse();
        let g = build_neighbor_graph(&scene, focal, t, 9, 15.0).unwrap();
        let h = build_neighbor_graph(&renamed, focal, t, 9, 15.0).unwrap();
        for (k, per_class) in g.neighbors.iter().enumerate() {
            for (s, ids) in per_class.iter().enumerate() {
                prop_assert!(!ids.contains(&focal));
                prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
                let mut mapped: Vec<u64> = ids.iter().map(|i| relabel[i]).collect();
                mapped.sort_unstable();
                prop_assert_eq!(&mapped, &h.neighbors[k][s]);
                let fp = scene.track(focal).unwrap().state_at(g.frames[s]).map(|st| st.pos());
                for id in ids {
                    let st = scene.track(*id).unwrap().state_at(g.frames[s]);
                    prop_assert!(st.is_some());
                    let (a, b) = (fp.unwrap(), st.unwrap().pos());
                    prop_assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 15.0);
                }
            }
        }
    }

    #[test]
    fn attention_rows_lie_on_the_simplex(seed in 0u64..1000) {
        let cfg = TrainConfig::default();
        let set = generate_urban(&GenConfig { num_scenes: 1, ..GenConfig::default() }, seed).unwrap();
        let std = Standardizer::fit(&set, &[0]).unwrap();
        let samples = build_samples(&set, &[0], &cfg, &std).unwrap();
        let model = Model::new(&cfg.model(), seed).unwrap();
        for s in samples.iter().take(4) {
            let (e_x, trace) = model.encode(&s.input);
            prop_assert!(e_x.iter().all(|v| v.is_finite()));
            prop_assert_eq!(trace.alpha.len(), cfg.history_steps + 1);
            for row in &trace.alpha {
                prop_assert!(row.iter().all(|a| *a > 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn config_survives_toml_round_trip(beta in 0.0f64..10.0, lr in 0.0f64..0.1, seed in 0..=i64::MAX as u64, n in 1usize..11) {
        let cfg = TrainConfig { beta, learning_rate: lr, seed, observed_steps: n, ..TrainConfig::default() };
        prop_assert!(cfg.validate().is_ok());
        prop_assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
