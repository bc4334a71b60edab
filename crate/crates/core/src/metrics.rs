//! Similarity between importance maps.
//!
//! Every metric reports its raw value and a `similarity01` score in `[0, 1]`
//! where comparing a map with itself gives exactly 1:
//!
//! | metric   | raw range | similarity01        |
//! |----------|-----------|---------------------|
//! | Spearman | [-1, 1]   | (raw + 1) / 2       |
//! | SSIM     | [-1, 1]   | clamp(raw, 0, 1)    |
//! | Dice     | [0, 1]    | raw                 |
//! | Jaccard  | [0, 1]    | raw                 |
//! | KL       | [0, inf)  | exp(-raw)           |

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::canny::gaussian_kernel;
use crate::error::{Error, Result};
use crate::importance::ImportanceMap;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const KL_EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Spearman,
    Ssim,
    Dice,
    Jaccard,
    Kl,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Spearman,
        Metric::Ssim,
        Metric::Dice,
        Metric::Jaccard,
        Metric::Kl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Spearman => "spearman",
            Metric::Ssim => "ssim",
            Metric::Dice => "dice",
            Metric::Jaccard => "jaccard",
            Metric::Kl => "kl",
        }
    }

    /// Parses a metric name, or `all` for every metric.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Metric::ALL.to_vec());
        }
        s.split(',').map(|m| m.trim().parse()).collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown metric `{s}`; expected spearman, ssim, dice, jaccard, kl or all"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub metric: Metric,
    pub raw: f64,
    pub similarity01: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricOptions {
    /// Threshold both maps to {0, 1} at `v >= theta` before comparing.
    pub binarize: Option<f64>,
    /// Average-pool both maps by this integer factor first (1 or `None` = off).
    pub scale: Option<u32>,
    /// Compute SSIM over the whole image as a single window.
    pub global_ssim: bool,
}

fn check_dims(a: &ImportanceMap, b: &ImportanceMap) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Input(format!(
            "map dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = avg;
        }
        start = end;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    // sqrt(s * s) == s exactly, so a self-comparison yields exactly 1.
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(a: &ImportanceMap, b: &ImportanceMap) -> Result<SimilarityScore> {
    check_dims(a, b)?;
    spearman_ranked(&ranks(&a.values), &ranks(&b.values))
}

fn spearman_ranked(ra: &[f64], rb: &[f64]) -> Result<SimilarityScore> {
    if ra.len() < 2 {
        return Err(Error::UndefinedMetric("spearman needs at least two pixels".into()));
    }
    let raw = pearson(ra, rb).ok_or_else(|| {
        Error::UndefinedMetric("spearman correlation of a constant map".into())
    })?;
    Ok(SimilarityScore {
        metric: Metric::Spearman,
        raw,
        similarity01: (raw + 1.0) / 2.0,
    })
}

/// Valid-mode separable Gaussian filter (no padding).
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    // Taps accumulate in index order, row slices at a time so the inner loops vectorize.
    let mut tmp = vec![0.0; ow * h];
    for (row, acc) in src.chunks_exact(w).zip(tmp.chunks_exact_mut(ow)) {
        for (i, &kv) in k.iter().enumerate() {
            for (o, &v) in acc.iter_mut().zip(&row[i..i + ow]) {
                *o += kv * v;
            }
        }
    }
    let mut out = vec![0.0; ow * oh];
    for (y, acc) in out.chunks_exact_mut(ow).enumerate() {
        for (i, &kv) in k.iter().enumerate() {
            for (o, &v) in acc.iter_mut().zip(&tmp[(y + i) * ow..(y + i + 1) * ow]) {
                *o += kv * v;
            }
        }
    }
    (out, ow, oh)
}

fn ssim_terms(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

fn ssim_kernel() -> Vec<f64> {
    let mut k = gaussian_kernel(SSIM_SIGMA);
    // Radius ceil(3 * 1.5) = 5 gives exactly the 11-tap window.
    debug_assert_eq!(k.len(), SSIM_WINDOW);
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn check_ssim_size(m: &ImportanceMap) -> Result<()> {
    let (w, h) = (m.width as usize, m.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "map {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window; use global SSIM instead"
        )));
    }
    Ok(())
}

/// Windowed mean and mean of squares of one map.
struct SsimMoments {
    mu: Vec<f64>,
    e_sq: Vec<f64>,
}

impl SsimMoments {
    fn of(m: &ImportanceMap, k: &[f64]) -> Self {
        let (w, h) = (m.width as usize, m.height as usize);
        let sq: Vec<f64> = m.values.iter().map(|v| v * v).collect();
        Self {
            mu: filter_valid(&m.values, w, h, k).0,
            e_sq: filter_valid(&sq, w, h, k).0,
        }
    }
}

fn ssim_from(a: &ImportanceMap, b: &ImportanceMap, ma: &SsimMoments, mb: &SsimMoments, k: &[f64]) -> SimilarityScore {
    let (w, h) = (a.width as usize, a.height as usize);
    let ab: Vec<f64> = a.values.iter().zip(&b.values).map(|(p, q)| p * q).collect();
    let e_ab = filter_valid(&ab, w, h, k).0;
    let total: f64 = (0..e_ab.len())
        .map(|i| {
            let (mu_a, mu_b) = (ma.mu[i], mb.mu[i]);
            ssim_terms(
                mu_a,
                mu_b,
                ma.e_sq[i] - mu_a * mu_a,
                mb.e_sq[i] - mu_b * mu_b,
                e_ab[i] - mu_a * mu_b,
            )
        })
        .sum();
    let raw = total / e_ab.len() as f64;
    SimilarityScore {
        metric: Metric::Ssim,
        raw,
        similarity01: raw.clamp(0.0, 1.0),
    }
}

/// Mean SSIM over all 11x11 Gaussian-weighted windows (sigma 1.5, L = 1).
pub fn ssim(a: &ImportanceMap, b: &ImportanceMap) -> Result<SimilarityScore> {
    check_dims(a, b)?;
    check_ssim_size(a)?;
    let k = ssim_kernel();
    Ok(ssim_from(a, b, &SsimMoments::of(a, &k), &SsimMoments::of(b, &k), &k))
}

/// SSIM with the whole image as one uniformly weighted window.
pub fn ssim_global(a: &ImportanceMap, b: &ImportanceMap) -> Result<SimilarityScore> {
    check_dims(a, b)?;
    let n = a.values.len() as f64;
    let ma = a.values.iter().sum::<f64>() / n;
    let mb = b.values.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    let raw = ssim_terms(ma, mb, va / n, vb / n, cov / n);
    Ok(SimilarityScore {
        metric: Metric::Ssim,
        raw,
        similarity01: raw.clamp(0.0, 1.0),
    })
}

fn min_max_sums(a: &ImportanceMap, b: &ImportanceMap) -> (f64, f64) {
    a.values
        .iter()
        .zip(&b.values)
        .fold((0.0, 0.0), |(mn, mx), (x, y)| (mn + x.min(*y), mx + x.max(*y)))
}

/// Fuzzy Dice: `2 sum min(a, b) / (sum a + sum b)`; two empty maps score 1.
pub fn dice(a: &ImportanceMap, b: &ImportanceMap) -> Result<SimilarityScore> {
    check_dims(a, b)?;
    let (mn, mx) = min_max_sums(a, b);
    // sum a + sum b == sum min + sum max
    let raw = if mn + mx == 0.0 { 1.0 } else { 2.0 * mn / (mn + mx) };
    Ok(SimilarityScore {
        metric: Metric::Dice,
        raw,
        similarity01: raw,
    })
}

/// Fuzzy Jaccard: `sum min(a, b) / sum max(a, b)`; two empty maps score 1.
pub fn jaccard(a: &ImportanceMap, b: &ImportanceMap) -> Result<SimilarityScore> {
    check_dims(a, b)?;
    let (mn, mx) = min_max_sums(a, b);
    let raw = if mx == 0.0 { 1.0 } else { mn / mx };
    Ok(SimilarityScore {
        metric: Metric::Jaccard,
        raw,
        similarity01: raw,
    })
}

fn to_distribution(m: &ImportanceMap) -> Vec<f64> {
    let total: f64 = m.values.iter().map(|v| v + KL_EPSILON).sum();
    m.values.iter().map(|v| (v + KL_EPSILON) / total).collect()
}

/// `KL(p || q)` with `p`, `q` the epsilon-regularized, sum-normalized maps.
pub fn kl_divergence(a: &ImportanceMap, b: &ImportanceMap) -> Result<SimilarityScore> {
    check_dims(a, b)?;
    Ok(kl_from(&to_distribution(a), &to_distribution(b)))
}

fn kl_from(p: &[f64], q: &[f64]) -> SimilarityScore {
    let raw = p
        .iter()
        .zip(q)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0);
    SimilarityScore {
        metric: Metric::Kl,
        raw,
        similarity01: (-raw).exp(),
    }
}

fn downsample(m: &ImportanceMap, factor: u32) -> ImportanceMap {
    let (w, h) = (m.width.div_ceil(factor), m.height.div_ceil(factor));
    let mut values = Vec::with_capacity((w * h) as usize);
    for by in 0..h {
        for bx in 0..w {
            let (mut sum, mut n) = (0.0, 0u32);
            for y in by * factor..((by + 1) * factor).min(m.height) {
                for x in bx * factor..((bx + 1) * factor).min(m.width) {
                    sum += m.get(x, y);
                    n += 1;
                }
            }
            values.push(sum / n as f64);
        }
    }
    ImportanceMap {
        width: w,
        height: h,
        values,
    }
}

fn binarize(m: &ImportanceMap, theta: f64) -> ImportanceMap {
    ImportanceMap {
        width: m.width,
        height: m.height,
        values: m
            .values
            .iter()
            .map(|&v| if v >= theta { 1.0 } else { 0.0 })
            .collect(),
    }
}

/// Applies the optional downsampling and binarization to a map.
pub fn prepare(m: &ImportanceMap, options: &MetricOptions) -> ImportanceMap {
    let mut out = match options.scale {
        Some(f) if f > 1 => downsample(m, f),
        _ => m.clone(),
    };
    if let Some(theta) = options.binarize {
        out = binarize(&out, theta);
    }
    out
}

/// Compares two maps that were already passed through [`prepare`].
pub fn compare_prepared(
    metric: Metric,
    a: &ImportanceMap,
    b: &ImportanceMap,
    global_ssim: bool,
) -> Result<SimilarityScore> {
    match metric {
        Metric::Spearman => spearman(a, b),
        Metric::Ssim if global_ssim => ssim_global(a, b),
        Metric::Ssim => ssim(a, b),
        Metric::Dice => dice(a, b),
        Metric::Jaccard => jaccard(a, b),
        Metric::Kl => kl_divergence(a, b),
    }
}

pub fn compare(
    metric: Metric,
    a: &ImportanceMap,
    b: &ImportanceMap,
    options: &MetricOptions,
) -> Result<SimilarityScore> {
    check_dims(a, b)?;
    compare_prepared(metric, &prepare(a, options), &prepare(b, options), options.global_ssim)
}

/// A fixed right-hand map for repeated comparisons. Statistics that depend
/// only on this map are computed once, on first use; scores are identical to
/// [`compare_prepared`].
pub struct Target {
    map: ImportanceMap,
    global_ssim: bool,
    ranks: OnceLock<Vec<f64>>,
    ssim: OnceLock<(Vec<f64>, SsimMoments)>,
    distribution: OnceLock<Vec<f64>>,
}

impl Target {
    /// `map` must already be passed through [`prepare`].
    pub fn new(map: ImportanceMap, global_ssim: bool) -> Self {
        Self {
            map,
            global_ssim,
            ranks: OnceLock::new(),
            ssim: OnceLock::new(),
            distribution: OnceLock::new(),
        }
    }

    pub fn map(&self) -> &ImportanceMap {
        &self.map
    }

    /// Scores `a` (prepared) against the target.
    pub fn compare(&self, metric: Metric, a: &ImportanceMap) -> Result<SimilarityScore> {
        let b = &self.map;
        check_dims(a, b)?;
        match metric {
            Metric::Spearman => {
                let rb = self.ranks.get_or_init(|| ranks(&b.values));
                spearman_ranked(&ranks(&a.values), rb)
            }
            Metric::Ssim if self.global_ssim => ssim_global(a, b),
            Metric::Ssim => {
                check_ssim_size(a)?;
                let (k, mb) = self.ssim.get_or_init(|| {
                    let k = ssim_kernel();
                    let m = SsimMoments::of(b, &k);
                    (k, m)
                });
                Ok(ssim_from(a, b, &SsimMoments::of(a, k), mb, k))
            }
            Metric::Dice => dice(a, b),
            Metric::Jaccard => jaccard(a, b),
            Metric::Kl => {
                let q = self.distribution.get_or_init(|| to_distribution(b));
                Ok(kl_from(&to_distribution(a), q))
            }
        }
    }
}
