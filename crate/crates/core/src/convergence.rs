//! Participants-to-threshold convergence analysis and synthetic annotator cohorts.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::importance::{
    aggregate_masks, annotation_mask, common_stimulus, recompute_telemetry, Annotation, EventKind,
    ImportanceMap, InteractionEvent,
};
use crate::metrics::{prepare, Metric, MetricOptions, Target};

pub const DEFAULT_ORDERS: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceConfig {
    pub orders: usize,
    pub threshold: f64,
    pub seed: u64,
    pub metric_options: MetricOptions,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            orders: DEFAULT_ORDERS,
            threshold: DEFAULT_THRESHOLD,
            seed: 42,
            metric_options: MetricOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    /// Mean `similarity01` over the orders where the metric was defined.
    pub mean_similarity: Option<f64>,
    pub defined_orders: usize,
}

/// A prefix whose aggregate has no value under the metric (skipped, not converged).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedPrefix {
    pub order: usize,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub stimulus_id: String,
    pub metric: Metric,
    pub participants: usize,
    pub orders: usize,
    pub threshold: f64,
    pub seed: u64,
    /// Smallest prefix reaching the threshold in each order; `null` if none did.
    pub per_order_n: Vec<Option<usize>>,
    pub mean_n: Option<f64>,
    pub median_n: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub undefined_prefixes: Vec<UndefinedPrefix>,
}

/// Shuffled participant order for `order`; each order draws from its own
/// ChaCha stream so orders can be evaluated independently.
fn shuffled(participants: usize, seed: u64, order: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(order as u64);
    let mut idx: Vec<usize> = (0..participants).collect();
    idx.shuffle(&mut rng);
    idx
}

pub fn convergence(
    annotations: &[Annotation],
    spec: &GridSpec,
    metric: Metric,
    config: &ConvergenceConfig,
) -> Result<ConvergenceReport> {
    Ok(convergence_many(annotations, spec, &[metric], config)?.remove(0))
}

/// Runs the analysis for several metrics, sharing the prefix aggregates.
pub fn convergence_many(
    annotations: &[Annotation],
    spec: &GridSpec,
    metrics: &[Metric],
    config: &ConvergenceConfig,
) -> Result<Vec<ConvergenceReport>> {
    if annotations.len() < 2 {
        return Err(Error::Input(format!(
            "convergence needs at least 2 annotations, got {}",
            annotations.len()
        )));
    }
    if !(config.threshold > 0.0 && config.threshold <= 1.0) {
        return Err(Error::Input(format!(
            "threshold must lie in (0, 1], got {}",
            config.threshold
        )));
    }
    if config.orders == 0 {
        return Err(Error::Input("at least one order is required".into()));
    }
    if metrics.is_empty() {
        return Err(Error::Input("no metrics requested".into()));
    }
    let stimulus_id = common_stimulus(annotations)?.to_string();
    let masks = annotations
        .iter()
        .map(|a| annotation_mask(a, spec))
        .collect::<Result<Vec<_>>>()?;
    let p = masks.len();
    let opts = &config.metric_options;
    let reference = Target::new(prepare(&aggregate_masks(&masks)?, opts), opts.global_ssim);

    // scores[order][metric][n - 1]
    let scores: Vec<Vec<Vec<Option<f64>>>> = (0..config.orders)
        .into_par_iter()
        .map(|order| -> Result<Vec<Vec<Option<f64>>>> {
            let perm = shuffled(p, config.seed, order);
            let mut per_metric = vec![Vec::with_capacity(p); metrics.len()];
            let mut counts = vec![0u32; masks[0].bits().len()];
            for (k, &i) in perm.iter().enumerate() {
                for (c, &b) in counts.iter_mut().zip(masks[i].bits()) {
                    *c += b as u32;
                }
                let n = (k + 1) as f64;
                let prefix = ImportanceMap {
                    width: masks[0].width(),
                    height: masks[0].height(),
                    values: counts.iter().map(|&c| c as f64 / n).collect(),
                };
                let prefix = prepare(&prefix, opts);
                for (m, &metric) in metrics.iter().enumerate() {
                    let score = match reference.compare(metric, &prefix) {
                        Ok(s) => Some(s.similarity01),
                        Err(Error::UndefinedMetric(_)) => None,
                        Err(e) => return Err(e),
                    };
                    per_metric[m].push(score);
                }
            }
            Ok(per_metric)
        })
        .collect::<Result<_>>()?;

    Ok(metrics
        .iter()
        .enumerate()
        .map(|(m, &metric)| {
            let mut undefined = Vec::new();
            let per_order_n: Vec<Option<usize>> = scores
                .iter()
                .enumerate()
                .map(|(order, by_metric)| {
                    let series = &by_metric[m];
                    for (k, s) in series.iter().enumerate() {
                        if s.is_none() {
                            undefined.push(UndefinedPrefix { order, n: k + 1 });
                        }
                    }
                    series
                        .iter()
                        .position(|s| s.is_some_and(|v| v >= config.threshold))
                        .map(|k| k + 1)
                })
                .collect();
            let curve = (0..p)
                .map(|k| {
                    let defined: Vec<f64> = scores.iter().filter_map(|o| o[m][k]).collect();
                    CurvePoint {
                        n: k + 1,
                        mean_similarity: (!defined.is_empty())
                            .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                        defined_orders: defined.len(),
                    }
                })
                .collect();
            let mut reached: Vec<usize> = per_order_n.iter().flatten().copied().collect();
            reached.sort_unstable();
            ConvergenceReport {
                stimulus_id: stimulus_id.clone(),
                metric,
                participants: p,
                orders: config.orders,
                threshold: config.threshold,
                seed: config.seed,
                mean_n: (!reached.is_empty())
                    .then(|| reached.iter().sum::<usize>() as f64 / reached.len() as f64),
                median_n: median(&reached),
                per_order_n,
                curve,
                undefined_prefixes: undefined,
            }
        })
        .collect())
}

fn median(sorted: &[usize]) -> Option<f64> {
    match sorted.len() {
        0 => None,
        n if n % 2 == 1 => Some(sorted[n / 2] as f64),
        n => Some((sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0),
    }
}

/// Synthetic annotators: each keeps every truth block unless it is dropped
/// with probability `p_flip_in`, and adds each other block with probability
/// `p_flip_out`. Telemetry events walk the selected block centres in order.
pub fn synth_annotators(
    spec: &GridSpec,
    truth_block_ids: &[String],
    p_flip_in: f64,
    p_flip_out: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Annotation>> {
    for (name, p) in [("flip-in", p_flip_in), ("flip-out", p_flip_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("{name} probability {p} outside [0, 1]")));
        }
    }
    let index = spec.index_by_id();
    let unknown: Vec<&str> = truth_block_ids
        .iter()
        .map(String::as_str)
        .filter(|id| !index.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::DataIntegrity(format!(
            "truth block ids not in grid spec `{}`: {}",
            spec.stimulus_id,
            unknown.join(", ")
        )));
    }
    let truth: HashSet<&str> = truth_block_ids.iter().map(String::as_str).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let selected: Vec<String> = spec
            .blocks
            .iter()
            .filter(|b| {
                let r: f64 = rng.random();
                if truth.contains(b.id.as_str()) {
                    r >= p_flip_in
                } else {
                    r < p_flip_out
                }
            })
            .map(|b| b.id.clone())
            .collect();

        let mut events = Vec::with_capacity(selected.len() * 2);
        let mut t = 0;
        for id in &selected {
            let (cx, cy) = index[id.as_str()].center();
            let (x, y) = (cx.floor() as i64, cy.floor() as i64);
            t += 400;
            events.push(InteractionEvent { t_ms: t, kind: EventKind::Move, x, y });
            t += 100;
            events.push(InteractionEvent { t_ms: t, kind: EventKind::ToggleOn, x, y });
        }
        let (clicks, travel) = recompute_telemetry(&events);
        out.push(Annotation {
            participant_id: format!("synth-{k:03}"),
            stimulus_id: spec.stimulus_id.clone(),
            grid_mode: spec.mode,
            selected_block_ids: selected,
            duration_ms: t,
            click_count: clicks as i64,
            mouse_travel_px: travel,
            events,
        });
    }
    Ok(out)
}
