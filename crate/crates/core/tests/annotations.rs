use gridlab_core::importance::recompute_telemetry;
use gridlab_core::{
    aggregate, annotation_mask, convergence, convergence_many, render_points, static_grid, synth_annotators,
    Annotation, ConvergenceConfig, GridMode, GridSpec, Metric, PointAnnotation, PointClick,
};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> GridSpec {
    static_grid("stim", 64, 48, 8).unwrap()
}

fn annotation(spec: &GridSpec, participant: &str, blocks: &[usize]) -> Annotation {
    Annotation {
        participant_id: participant.into(),
        stimulus_id: spec.stimulus_id.clone(),
        grid_mode: GridMode::Static,
        selected_block_ids: blocks.iter().map(|&i| spec.blocks[i].id.clone()).collect(),
        duration_ms: 1000,
        click_count: blocks.len() as i64,
        mouse_travel_px: 0.0,
        events: vec![],
    }
}

fn selections() -> impl Strategy<Value = Vec<Vec<usize>>> {
    proptest::collection::vec(proptest::collection::btree_set(0usize..64, 0..20), 1..8)
        .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn aggregate_is_order_free_and_quantized(sel in selections(), seed in any::<u64>()) {
        let s = spec();
        let anns: Vec<Annotation> = sel.iter().enumerate()
            .map(|(k, b)| annotation(&s, &format!("p{k}"), b)).collect();
        let map = aggregate(&anns, &s).unwrap();
        let mut shuffled = anns.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&map, &aggregate(&shuffled, &s).unwrap());
        let n = anns.len() as f64;
        for &v in &map.values {
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(((v * n).round() - v * n).abs() < 1e-9);
        }
    }

    #[test]
    fn render_points_ignores_order_and_duplication(
        clicks in proptest::collection::vec((0.0f64..40.0, 0.0f64..30.0), 1..6), seed in any::<u64>()
    ) {
        let mk = |pts: &[(f64, f64)]| PointAnnotation {
            participant_id: "p".into(),
            stimulus_id: "s".into(),
            clicks: pts.iter().map(|&(x, y)| PointClick { x, y, t_ms: 0 }).collect(),
        };
        let base = render_points(&mk(&clicks), 40, 30, 4.0).unwrap();
        let mut shuffled = clicks.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut doubled = clicks.clone();
        doubled.extend_from_slice(&clicks);
        for other in [render_points(&mk(&shuffled), 40, 30, 4.0).unwrap(), render_points(&mk(&doubled), 40, 30, 4.0).unwrap()] {
            prop_assert!(base.values.iter().zip(&other.values).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}

#[test]
fn all_blocks_mask_covers_every_pixel() {
    let s = spec();
    let all: Vec<usize> = (0..64).collect();
    let mask = annotation_mask(&annotation(&s, "p", &all), &s).unwrap();
    assert_eq!(mask.count_ones(), 64 * 48);
}

#[test]
fn synth_flip_out_matches_binomial_statistics() {
    let s = static_grid("stim", 256, 256, 8).unwrap();
    let truth: Vec<String> = (0..10).map(|i| s.blocks[i * 5].id.clone()).collect();
    let anns = synth_annotators(&s, &truth, 0.0, 0.5, 10_000, 2024).unwrap();
    let extras: Vec<f64> = anns
        .iter()
        .map(|a| a.selected_block_ids.iter().filter(|id| !truth.contains(id)).count() as f64)
        .collect();
    let mean = extras.iter().sum::<f64>() / extras.len() as f64;
    let expected = 0.5 * 54.0;
    // Standard error of the mean of Binomial(54, 0.5) over 10 000 draws.
    let se = (54.0 * 0.25 / 10_000.0f64).sqrt();
    assert!((mean - expected).abs() <= 3.0 * se, "mean {mean}, expected {expected} +- {}", 3.0 * se);
    assert!(anns.iter().all(|a| truth.iter().all(|t| a.selected_block_ids.contains(t))));
}

#[test]
fn synth_is_seed_deterministic_and_consistent() {
    let s = spec();
    let truth = vec![s.blocks[3].id.clone()];
    let a = synth_annotators(&s, &truth, 0.2, 0.3, 20, 8).unwrap();
    assert_eq!(a, synth_annotators(&s, &truth, 0.2, 0.3, 20, 8).unwrap());
    assert_ne!(a, synth_annotators(&s, &truth, 0.2, 0.3, 20, 9).unwrap());
    for ann in &a {
        let (clicks, travel) = recompute_telemetry(&ann.events);
        assert_eq!((clicks as i64, travel), (ann.click_count, ann.mouse_travel_px));
    }
}

/// Cohort of `p` annotators selecting the truth blocks plus `k` distinct
/// uniformly random other blocks each.
fn cohort_with_extras(spec: &GridSpec, truth: &[usize], k: usize, p: usize, seed: u64) -> Vec<Annotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let others: Vec<usize> = (0..spec.blocks.len()).filter(|i| !truth.contains(i)).collect();
    (0..p)
        .map(|n| {
            let mut sel = truth.to_vec();
            sel.extend(others.choose_multiple(&mut rng, k).copied());
            annotation(spec, &format!("c{n}"), &sel)
        })
        .collect()
}

#[test]
fn more_random_extra_blocks_need_more_participants() {
    let s = static_grid("stim", 256, 256, 8).unwrap();
    let truth = [9, 10, 11, 17, 18, 19, 25, 26];
    const SEEDS: u64 = 6;
    // Mean over paired cohort seeds of each metric's mean_n.
    let mean_n = |k: usize| -> Vec<f64> {
        let mut acc = vec![0.0; Metric::ALL.len()];
        for seed in 0..SEEDS {
            let anns = cohort_with_extras(&s, &truth, k, 20, seed);
            let cfg = ConvergenceConfig { seed, ..Default::default() };
            for (m, r) in convergence_many(&anns, &s, &Metric::ALL, &cfg).unwrap().iter().enumerate() {
                acc[m] += r.mean_n.unwrap() / SEEDS as f64;
            }
        }
        acc
    };
    let (k0, k2, k8) = (mean_n(0), mean_n(2), mean_n(8));
    for (m, metric) in Metric::ALL.iter().enumerate() {
        assert!((k0[m] - 1.0).abs() < 1e-12, "{metric}");
        assert!(k0[m] <= k2[m] && k2[m] <= k8[m], "{metric}: {} {} {}", k0[m], k2[m], k8[m]);
    }
}

#[test]
fn final_curve_point_is_one_and_ids_do_not_matter() {
    let s = spec();
    let truth: Vec<String> = (0..6).map(|i| s.blocks[i * 3].id.clone()).collect();
    let anns = synth_annotators(&s, &truth, 0.2, 0.2, 9, 77).unwrap();
    let mut renamed = anns.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for a in &mut renamed {
        a.participant_id = format!("anon-{}", rng.random::<u32>());
    }
    let cfg = ConvergenceConfig::default();
    for metric in Metric::ALL {
        let r = convergence(&anns, &s, metric, &cfg).unwrap();
        assert_eq!(r.curve.len(), 9);
        assert!((r.curve[8].mean_similarity.unwrap() - 1.0).abs() < 1e-9, "{metric}");
        assert!(r.per_order_n.iter().all(|n| n.is_some_and(|n| n <= 9)));
        assert_eq!(r.per_order_n, convergence(&renamed, &s, metric, &cfg).unwrap().per_order_n);
    }
}

#[test]
fn single_order_reports_are_bit_reproducible() {
    let s = spec();
    let truth = vec![s.blocks[0].id.clone(), s.blocks[1].id.clone()];
    let anns = synth_annotators(&s, &truth, 0.1, 0.1, 12, 3).unwrap();
    let cfg = ConvergenceConfig {
        orders: 1,
        seed: 11,
        ..Default::default()
    };
    let a = serde_json::to_vec(&convergence_many(&anns, &s, &Metric::ALL, &cfg).unwrap()).unwrap();
    let b = serde_json::to_vec(&convergence_many(&anns, &s, &Metric::ALL, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mixed_stimuli_and_unknown_blocks_are_rejected() {
    let s = spec();
    let mut a = annotation(&s, "p", &[1]);
    let b = Annotation {
        stimulus_id: "other".into(),
        ..a.clone()
    };
    assert!(aggregate(&[a.clone(), b], &s).is_err());
    assert!(aggregate(&[], &s).is_err());
    a.selected_block_ids.push("a-edge-0".into());
    let err = annotation_mask(&a, &s).unwrap_err();
    assert!(err.to_string().contains("a-edge-0"), "{err}");
}
