use gridlab_core::metrics::{dice, jaccard, kl_divergence, spearman, ssim};
use gridlab_core::{compare, ImportanceMap, Metric, MetricOptions};
use proptest::prelude::*;

const W: u32 = 16;
const H: u32 = 14;

fn map_strategy() -> impl Strategy<Value = ImportanceMap> {
    proptest::collection::vec(0.0f64..=1.0, (W * H) as usize)
        .prop_filter("non-constant", |v| v.iter().any(|&x| x != v[0]))
        .prop_map(|v| ImportanceMap::new(W, H, v).unwrap())
}

fn map(values: Vec<f64>) -> ImportanceMap {
    ImportanceMap::new(values.len() as u32, 1, values).unwrap()
}

#[test]
fn spearman_reference_values() {
    let a = map(vec![0.1, 0.4, 0.4, 0.9, 0.0]);
    let inv = map(a.values.iter().map(|v| 1.0 - v).collect());
    assert!((spearman(&a, &a).unwrap().raw - 1.0).abs() < 1e-12);
    assert!((spearman(&a, &inv).unwrap().raw + 1.0).abs() < 1e-12);
    assert!((spearman(&map(vec![0.0, 1.0]), &map(vec![0.2, 0.9])).unwrap().raw - 1.0).abs() < 1e-12);
    // Hand-ranked with average ties: ranks a = [2, 3.5, 3.5, 5, 1], b = [1, 2, 3, 4, 5].
    let b = map(vec![0.0, 0.1, 0.2, 0.3, 0.4]);
    let (ra, rb) = ([2.0, 3.5, 3.5, 5.0, 1.0], [1.0, 2.0, 3.0, 4.0, 5.0]);
    let mean = 3.0;
    let sxy: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let sxx: f64 = ra.iter().map(|x| (x - mean) * (x - mean)).sum();
    let syy: f64 = rb.iter().map(|y| (y - mean) * (y - mean)).sum();
    let expected = sxy / (sxx * syy).sqrt();
    let got = spearman(&a, &b).unwrap();
    assert!((got.raw - expected).abs() < 1e-12);
    assert!((got.similarity01 - (expected + 1.0) / 2.0).abs() < 1e-12);
}

#[test]
fn ssim_against_offset_map_is_penalized() {
    let a = ImportanceMap::new(32, 32, (0..1024).map(|i| (i % 32) as f64 / 40.0).collect()).unwrap();
    let b = ImportanceMap::new(32, 32, a.values.iter().map(|v| (v + 0.1).min(1.0)).collect()).unwrap();
    let s = ssim(&a, &b).unwrap();
    assert!(s.raw < 1.0 && s.raw > 0.5, "{s:?}");
}

#[test]
fn ssim_window_larger_than_map_is_rejected() {
    let small = ImportanceMap::new(8, 8, vec![0.5; 64]).unwrap();
    let err = ssim(&small, &small).unwrap_err();
    assert!(err.to_string().contains("global"), "{err}");
    let opts = MetricOptions {
        global_ssim: true,
        ..Default::default()
    };
    assert_eq!(compare(Metric::Ssim, &small, &small, &opts).unwrap().similarity01, 1.0);
}

#[test]
fn kl_reference_values() {
    let a = map(vec![1.0, 0.0, 0.0, 0.0]);
    let u = map(vec![0.25; 4]);
    let ab = kl_divergence(&a, &u).unwrap().raw;
    let ba = kl_divergence(&u, &a).unwrap().raw;
    // Direct evaluation with the 1e-7 regularizer.
    let eps = 1e-7;
    let p: Vec<f64> = a.values.iter().map(|v| (v + eps) / (1.0 + 4.0 * eps)).collect();
    let q = 0.25;
    let expected: f64 = p.iter().map(|pi| pi * (pi / q).ln()).sum();
    assert!((ab - expected).abs() < 1e-9);
    assert!((ab - ba).abs() > 1.0);
    let s = kl_divergence(&a, &u).unwrap();
    assert!((s.similarity01 - (-ab).exp()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn self_similarity_is_one(m in map_strategy()) {
        for metric in Metric::ALL {
            let s = compare(metric, &m, &m, &MetricOptions::default()).unwrap();
            prop_assert!((s.similarity01 - 1.0).abs() <= 1e-9, "{} {}", metric, s.similarity01);
        }
        prop_assert!(kl_divergence(&m, &m).unwrap().raw.abs() <= 1e-9);
    }

    #[test]
    fn symmetric_metrics_and_ranges(a in map_strategy(), b in map_strategy()) {
        for metric in Metric::ALL {
            let ab = compare(metric, &a, &b, &MetricOptions::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab.similarity01));
            if metric != Metric::Kl {
                let ba = compare(metric, &b, &a, &MetricOptions::default()).unwrap();
                prop_assert!((ab.raw - ba.raw).abs() < 1e-12, "{}", metric);
            }
        }
        prop_assert!(kl_divergence(&a, &b).unwrap().raw >= 0.0);
    }

    #[test]
    fn dice_jaccard_identity(a in map_strategy(), b in map_strategy()) {
        let d = dice(&a, &b).unwrap().raw;
        let j = jaccard(&a, &b).unwrap().raw;
        prop_assert!(d >= j);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-9);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(a in map_strategy(), b in map_strategy()) {
        let t = ImportanceMap::new(W, H, a.values.iter().map(|v| v.powi(3) * 0.5 + 0.1).collect()).unwrap();
        let r1 = spearman(&a, &b).unwrap().raw;
        let r2 = spearman(&t, &b).unwrap().raw;
        prop_assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn kl_ignores_uniform_scaling(a in map_strategy(), b in map_strategy(), k in 0.05f64..1.0) {
        let scaled = ImportanceMap::new(W, H, a.values.iter().map(|v| v * k).collect()).unwrap();
        let r1 = kl_divergence(&a, &b).unwrap().raw;
        let r2 = kl_divergence(&scaled, &b).unwrap().raw;
        // The per-pixel regularizer is not scaled, so equality holds up to its size.
        prop_assert!((r1 - r2).abs() < 1e-4, "{} {}", r1, r2);
    }
}
