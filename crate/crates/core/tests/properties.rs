use std::collections::HashMap;

use p2l::calibrate::{average_ranks, spearman_rho, tune_k, EvaluationConfig, TrainingTask};
use p2l::estimator::{score_sources, select};
use p2l::{DatasetProfile, DivergenceKind, EstimatorConfig, ImprovementRecord, Role, Summarizer, SummaryVector};
use proptest::prelude::*;

fn simplex(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, dim).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect()
    })
}

fn profile(name: String, size: u64, values: Vec<f64>, role: Role) -> DatasetProfile {
    DatasetProfile {
        name,
        size,
        summary: SummaryVector {
            raw_mean: values.clone(),
            values,
            summarizer: Summarizer::Mean,
            normalized: true,
        },
        extractor_id: "prop".into(),
        role,
    }
}

/// A target and `min..8` sources sharing one dimension.
fn candidates_from(min: usize) -> impl Strategy<Value = (DatasetProfile, Vec<DatasetProfile>)> {
    (2usize..8, min..8).prop_flat_map(|(dim, n)| {
        (simplex(dim), prop::collection::vec((1u64..100_000, simplex(dim)), n)).prop_map(|(t, srcs)| {
            let target = profile("t".into(), 10, t, Role::Target);
            let sources = srcs
                .into_iter()
                .enumerate()
                .map(|(i, (size, v))| profile(format!("s{i}"), size, v, Role::Source))
                .collect();
            (target, sources)
        })
    })
}

fn candidates() -> impl Strategy<Value = (DatasetProfile, Vec<DatasetProfile>)> {
    candidates_from(2)
}

fn kind() -> impl Strategy<Value = DivergenceKind> {
    prop::sample::select(DivergenceKind::ALL.to_vec())
}

fn tasks(
    sources: &[DatasetProfile],
    targets: &[DatasetProfile],
    gains: &[Vec<f64>],
    scale: f64,
) -> Vec<TrainingTask> {
    targets
        .iter()
        .zip(gains)
        .map(|(t, g)| TrainingTask {
            target: t.clone(),
            ground_truth: sources
                .iter()
                .zip(g)
                .map(|(s, gain)| ImprovementRecord::new(&t.name, &s.name, 0.5 + scale * gain, 0.5))
                .collect(),
        })
        .collect()
}

proptest! {
    #[test]
    fn spearman_is_symmetric_and_bounded(a in prop::collection::vec(-10.0f64..10.0, 2..30), seed in any::<u64>()) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| (x * 7.0 + (seed ^ i as u64) as f64).sin()).collect();
        if let (Ok(r1), Ok(r2)) = (spearman_rho(&a, &b), spearman_rho(&b, &a)) {
            prop_assert!((r1 - r2).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r1));
        }
    }

    #[test]
    fn spearman_ignores_monotone_maps(a in prop::collection::vec(-5.0f64..5.0, 3..30), b in prop::collection::vec(-5.0f64..5.0, 3..30)) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let warped: Vec<f64> = a.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        if let Ok(r) = spearman_rho(a, b) {
            prop_assert!((spearman_rho(&warped, b).unwrap() - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn average_ranks_sum_to_the_triangle_number(a in prop::collection::vec(0u8..5, 1..40)) {
        let values: Vec<f64> = a.iter().map(|&x| f64::from(x)).collect();
        let n = values.len() as f64;
        prop_assert!((average_ranks(&values).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn scores_rederive_and_permute((target, sources) in candidates(), k in -3.0f64..0.0, kind in kind()) {
        let cfg = EstimatorConfig::new(kind, k);
        let scored = score_sources(&target, &sources, &cfg).unwrap();
        let mut got: Vec<&str> = scored.iter().map(|s| s.source_name.as_str()).collect();
        got.sort_unstable();
        let mut want: Vec<&str> = sources.iter().map(|s| s.name.as_str()).collect();
        want.sort_unstable();
        prop_assert_eq!(got, want);
        for s in &scored {
            prop_assert!((s.rederive(k) - s.score).abs() < 1e-12);
            prop_assert!((s.log_size - (s.size as f64).ln()).abs() < 1e-12);
        }
        prop_assert!(scored.windows(2).all(|w| w[0].score >= w[1].score));
        prop_assert_eq!(select(&scored).unwrap(), scored[0].source_name.clone());
    }

    #[test]
    fn scoring_ignores_source_order((target, mut sources) in candidates(), k in -3.0f64..0.0, kind in kind()) {
        let cfg = EstimatorConfig::new(kind, k);
        let a = score_sources(&target, &sources, &cfg).unwrap();
        sources.reverse();
        let b = score_sources(&target, &sources, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.source_name, &y.source_name);
            prop_assert!((x.score - y.score).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_ignores_task_order_and_gain_scale(
        (target, sources) in candidates_from(3),
        gains in prop::collection::vec(prop::collection::vec(-0.2f64..0.2, 8), 3),
        scale in 0.1f64..10.0,
    ) {
        let targets: Vec<DatasetProfile> = (0..3)
            .map(|i| {
                let mut t = target.clone();
                t.name = format!("t{i}");
                t.summary.values.rotate_left(i);
                t.summary.raw_mean.rotate_left(i);
                t
            })
            .collect();
        let eval = EvaluationConfig::default();
        let base = EstimatorConfig::new(DivergenceKind::Kl, -1.0);
        let forward = tune_k(&tasks(&sources, &targets, &gains, 1.0), &sources, &eval, &base).unwrap();
        let mut shuffled = tasks(&sources, &targets, &gains, scale);
        shuffled.reverse();
        let backward = tune_k(&shuffled, &sources, &eval, &base).unwrap();
        prop_assert_eq!(forward.best_k, backward.best_k);
        prop_assert_eq!(forward.best_distance, backward.best_distance);
        prop_assert!((forward.best_mean_rho - backward.best_mean_rho).abs() < 1e-9);
        let by_task: HashMap<_, _> = backward.per_task_rho.into_iter().collect();
        for (name, rho) in forward.per_task_rho {
            prop_assert!((by_task[&name] - rho).abs() < 1e-9);
        }
    }
}
