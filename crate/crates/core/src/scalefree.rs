//! Degree-distribution analysis: log-binned histograms, discrete power-law and
//! exponential tail fits, and a preferential-attachment reference generator.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UndirectedGraph;
use crate::special::hurwitz_zeta;

/// Multiset of node degrees. Zero degrees are kept but excluded from tails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeSample {
    degrees: Vec<u64>,
    n_zero: usize,
}

impl DegreeSample {
    pub fn new(degrees: Vec<u64>) -> Result<Self> {
        if degrees.is_empty() {
            return Err(Error::Input("degree sample is empty".into()));
        }
        let n_zero = degrees.iter().filter(|&&d| d == 0).count();
        Ok(Self { degrees, n_zero })
    }

    pub fn degrees(&self) -> &[u64] {
        &self.degrees
    }

    pub fn n_zero(&self) -> usize {
        self.n_zero
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn max(&self) -> u64 {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    fn positive_sorted(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.degrees.iter().copied().filter(|&d| d > 0).collect();
        v.sort_unstable();
        v
    }

    fn tail(&self, theta_min: u64) -> Vec<u64> {
        let mut v: Vec<u64> = self.degrees.iter().copied().filter(|&d| d >= theta_min && d > 0).collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub density: f64,
    pub count: usize,
}

fn bin_edge(i: i64, bins_per_decade: u32) -> f64 {
    10f64.powf(i as f64 / bins_per_decade as f64)
}

/// Index `i` with `edge(i) <= d < edge(i + 1)`.
fn bin_index(d: u64, bins_per_decade: u32) -> i64 {
    let x = d as f64;
    let mut i = (x.log10() * bins_per_decade as f64).floor() as i64;
    while bin_edge(i, bins_per_decade) > x {
        i -= 1;
    }
    while bin_edge(i + 1, bins_per_decade) <= x {
        i += 1;
    }
    i
}

/// Histogram over logarithmically spaced bins `[10^(i/b), 10^((i+1)/b))` starting at 1.
///
/// Densities are normalized by bin width and by the number of positive degrees, so
/// `Σ density · width = 1`. Only non-empty bins are returned.
pub fn log_binned_histogram(sample: &DegreeSample, bins_per_decade: u32) -> Result<Vec<HistogramBin>> {
    if bins_per_decade == 0 {
        return Err(Error::Config("bins_per_decade must be at least 1".into()));
    }
    let positive = sample.positive_sorted();
    if positive.is_empty() {
        return Err(Error::Domain("histogram needs at least one positive degree".into()));
    }
    let total = positive.len() as f64;
    let mut bins: Vec<HistogramBin> = Vec::new();
    let mut current: Option<(i64, usize)> = None;
    let flush = |idx: i64, count: usize, bins: &mut Vec<HistogramBin>| {
        let (lo, hi) = (bin_edge(idx, bins_per_decade), bin_edge(idx + 1, bins_per_decade));
        bins.push(HistogramBin {
            lo,
            hi,
            center: (lo * hi).sqrt(),
            density: count as f64 / ((hi - lo) * total),
            count,
        });
    };
    for &d in &positive {
        let idx = bin_index(d, bins_per_decade);
        match current {
            Some((c, n)) if c == idx => current = Some((c, n + 1)),
            Some((c, n)) => {
                flush(c, n, &mut bins);
                current = Some((idx, 1));
            }
            None => current = Some((idx, 1)),
        }
    }
    if let Some((c, n)) = current {
        flush(c, n, &mut bins);
    }
    Ok(bins)
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_center,density,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.center, b.density, b.count);
    }
    out
}

/// Discrete power law `P(θ) = θ^{-α} / ζ(α, θ_min)` fitted to the tail `θ >= θ_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub theta_min: u64,
    pub log_likelihood: f64,
    pub ks_stat: f64,
    pub n_tail: usize,
    pub n_zero: usize,
}

/// Discrete exponential `P(θ) ∝ e^{-λθ}` on `θ ∈ {θ_min, θ_min + 1, …}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub lambda: f64,
    pub theta_min: u64,
    pub log_likelihood: f64,
    pub ks_stat: f64,
    pub n_tail: usize,
    pub n_zero: usize,
}

impl PowerLawFit {
    /// `P(X <= x)` of the fitted model for integer `x >= θ_min`.
    pub fn cdf(&self, x: u64) -> f64 {
        power_law_cdf(self.alpha, self.theta_min, hurwitz_zeta(self.alpha, self.theta_min as f64), x)
    }

    /// Probability mass at integer `x >= θ_min`.
    pub fn pmf(&self, x: u64) -> f64 {
        (x as f64).powf(-self.alpha) / hurwitz_zeta(self.alpha, self.theta_min as f64)
    }
}

impl ExponentialFit {
    pub fn cdf(&self, x: u64) -> f64 {
        if x < self.theta_min {
            0.0
        } else {
            1.0 - (-self.lambda * ((x - self.theta_min) as f64 + 1.0)).exp()
        }
    }

    pub fn pmf(&self, x: u64) -> f64 {
        if x < self.theta_min {
            0.0
        } else {
            (1.0 - (-self.lambda).exp()) * (-self.lambda * (x - self.theta_min) as f64).exp()
        }
    }
}

fn power_law_cdf(alpha: f64, theta_min: u64, z_min: f64, x: u64) -> f64 {
    if x < theta_min {
        return 0.0;
    }
    (1.0 - hurwitz_zeta(alpha, x as f64 + 1.0) / z_min).clamp(0.0, 1.0)
}

/// Closed-form approximate discrete MLE `1 + n / Σ ln(θ_i / (θ_min − ½))`.
///
/// Accurate for θ_min of roughly 6 and above; used to seed the exact likelihood search.
pub fn approx_alpha(tail: &[u64], theta_min: u64) -> f64 {
    let shift = theta_min as f64 - 0.5;
    let s: f64 = tail.iter().map(|&t| (t as f64 / shift).ln()).sum();
    1.0 + tail.len() as f64 / s
}

fn power_law_ll(alpha: f64, n: f64, sum_ln: f64, theta_min: u64) -> f64 {
    -n * hurwitz_zeta(alpha, theta_min as f64).ln() - alpha * sum_ln
}

/// Maximizes the concave discrete log-likelihood by golden-section search.
fn exact_alpha(tail: &[u64], theta_min: u64) -> f64 {
    let n = tail.len() as f64;
    let sum_ln: f64 = tail.iter().map(|&t| (t as f64).ln()).sum();
    let f = |a: f64| power_law_ll(a, n, sum_ln, theta_min);
    let guess = approx_alpha(tail, theta_min);
    let (mut lo, mut hi) = (1.0 + 1e-9, (2.0 * guess).clamp(4.0, 60.0));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-10 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Largest gap between the empirical tail CDF and `model_cdf`, over all integers.
///
/// Between consecutive observed values the empirical CDF is flat and the model CDF
/// non-decreasing, so checking each observed value and its predecessor suffices.
fn ks_distance(tail: &[u64], model_cdf: impl Fn(u64) -> f64) -> f64 {
    let n = tail.len() as f64;
    let mut ks: f64 = 0.0;
    let mut i = 0;
    let mut below = 0usize;
    while i < tail.len() {
        let v = tail[i];
        let mut j = i;
        while j < tail.len() && tail[j] == v {
            j += 1;
        }
        if i > 0 && v > tail[i - 1] + 1 {
            ks = ks.max((below as f64 / n - model_cdf(v - 1)).abs());
        }
        ks = ks.max((j as f64 / n - model_cdf(v)).abs());
        below = j;
        i = j;
    }
    ks
}

fn fit_power_law_at(sample: &DegreeSample, theta_min: u64) -> Result<PowerLawFit> {
    if theta_min == 0 {
        return Err(Error::Fit("theta_min must be at least 1".into()));
    }
    let tail = sample.tail(theta_min);
    if tail.len() < 2 {
        return Err(Error::Fit(format!("tail above theta_min = {theta_min} has {} entries", tail.len())));
    }
    if tail.first() == tail.last() {
        return Err(Error::Fit(format!("all {} tail degrees equal {}", tail.len(), tail[0])));
    }
    let alpha = exact_alpha(&tail, theta_min);
    let n = tail.len() as f64;
    let sum_ln: f64 = tail.iter().map(|&t| (t as f64).ln()).sum();
    let z_min = hurwitz_zeta(alpha, theta_min as f64);
    let ks = ks_distance(&tail, |x| power_law_cdf(alpha, theta_min, z_min, x));
    Ok(PowerLawFit {
        alpha,
        theta_min,
        log_likelihood: power_law_ll(alpha, n, sum_ln, theta_min),
        ks_stat: ks.clamp(0.0, 1.0),
        n_tail: tail.len(),
        n_zero: sample.n_zero(),
    })
}

/// Discrete power-law MLE on the tail `θ >= θ_min`.
///
/// Without an explicit `theta_min`, every integer cutoff from 1 up to the 95th
/// percentile of positive degrees is tried and the one with the smallest KS
/// distance wins (ties keep the smaller cutoff).
pub fn fit_power_law(sample: &DegreeSample, theta_min: Option<u64>) -> Result<PowerLawFit> {
    if let Some(t) = theta_min {
        return fit_power_law_at(sample, t);
    }
    let positive = sample.positive_sorted();
    if positive.is_empty() {
        return Err(Error::Fit("no positive degrees".into()));
    }
    let rank = ((0.95 * positive.len() as f64).ceil() as usize).clamp(1, positive.len());
    let upper = positive[rank - 1].max(1);
    let mut best: Option<PowerLawFit> = None;
    let mut last_err = None;
    for t in 1..=upper {
        match fit_power_law_at(sample, t) {
            Ok(fit) => {
                if best.as_ref().map_or(true, |b| fit.ks_stat < b.ks_stat) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Fit("no admissible theta_min".into())))
}

/// Discrete exponential MLE `λ = ln(1 + 1 / (mean − θ_min))` on the tail `θ >= θ_min`.
pub fn fit_exponential(sample: &DegreeSample, theta_min: u64) -> Result<ExponentialFit> {
    let tail: Vec<u64> = {
        let mut v: Vec<u64> = sample.degrees().iter().copied().filter(|&d| d >= theta_min).collect();
        v.sort_unstable();
        v
    };
    if tail.is_empty() {
        return Err(Error::Fit(format!("no degrees >= theta_min = {theta_min}")));
    }
    let n = tail.len() as f64;
    let excess: f64 = tail.iter().map(|&t| (t - theta_min) as f64).sum();
    let mean_excess = excess / n;
    if mean_excess <= 0.0 {
        return Err(Error::Fit(format!("tail mean equals theta_min = {theta_min}; rate diverges")));
    }
    let lambda = (1.0 + 1.0 / mean_excess).ln();
    let ll = n * (1.0 - (-lambda).exp()).ln() - lambda * excess;
    let fit = ExponentialFit {
        lambda,
        theta_min,
        log_likelihood: ll,
        ks_stat: 0.0,
        n_tail: tail.len(),
        n_zero: sample.n_zero(),
    };
    let ks = ks_distance(&tail, |x| fit.cdf(x));
    Ok(ExponentialFit { ks_stat: ks.clamp(0.0, 1.0), ..fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreferredModel {
    PowerLaw,
    Exponential,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitComparison {
    pub preferred: PreferredModel,
    /// `ll(power law) − ll(exponential)`; positive favors the power law.
    pub log_likelihood_ratio: f64,
}

pub fn compare_fits(pl: &PowerLawFit, ex: &ExponentialFit) -> Result<FitComparison> {
    if pl.theta_min != ex.theta_min || pl.n_tail != ex.n_tail {
        return Err(Error::Fit(format!(
            "fits use different tails (theta_min {} vs {}, n_tail {} vs {})",
            pl.theta_min, ex.theta_min, pl.n_tail, ex.n_tail
        )));
    }
    let r = pl.log_likelihood - ex.log_likelihood;
    let preferred = if r > 0.0 {
        PreferredModel::PowerLaw
    } else if r < 0.0 {
        PreferredModel::Exponential
    } else {
        PreferredModel::Tie
    };
    Ok(FitComparison { preferred, log_likelihood_ratio: r })
}

/// Serializable fit record: `{model, alpha|lambda, theta_min, log_likelihood, ks_stat, n_tail, n_zero}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    pub theta_min: u64,
    pub log_likelihood: f64,
    pub ks_stat: f64,
    pub n_tail: usize,
    pub n_zero: usize,
}

impl From<&PowerLawFit> for FitRecord {
    fn from(f: &PowerLawFit) -> Self {
        Self {
            model: "powerlaw".into(),
            alpha: Some(f.alpha),
            lambda: None,
            theta_min: f.theta_min,
            log_likelihood: f.log_likelihood,
            ks_stat: f.ks_stat,
            n_tail: f.n_tail,
            n_zero: f.n_zero,
        }
    }
}

impl From<&ExponentialFit> for FitRecord {
    fn from(f: &ExponentialFit) -> Self {
        Self {
            model: "exponential".into(),
            alpha: None,
            lambda: Some(f.lambda),
            theta_min: f.theta_min,
            log_likelihood: f.log_likelihood,
            ks_stat: f.ks_stat,
            n_tail: f.n_tail,
            n_zero: f.n_zero,
        }
    }
}

/// Largest degree expected in a scale-free network of `n_nodes` nodes:
/// `θ_min · n^{1/(α−1)}`.
pub fn expected_max_degree(theta_min: f64, n_nodes: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::Domain(format!("alpha must exceed 1, got {alpha}")));
    }
    if !(theta_min >= 1.0) || n_nodes == 0 {
        return Err(Error::Domain(format!("need theta_min >= 1 and n >= 1, got {theta_min}, {n_nodes}")));
    }
    Ok(theta_min * (n_nodes as f64).powf(1.0 / (alpha - 1.0)))
}

/// Preferential attachment: a clique on `m_attach + 1` nodes, then each arriving node
/// links to `m_attach` distinct existing nodes chosen with probability proportional
/// to their current degree.
pub fn generate_ba_graph(n_nodes: usize, m_attach: usize, seed: u64) -> Result<UndirectedGraph> {
    if m_attach == 0 || n_nodes <= m_attach {
        return Err(Error::Config(format!(
            "preferential attachment needs n > m >= 1, got n = {n_nodes}, m = {m_attach}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seed_nodes = m_attach + 1;
    let mut edges: Vec<(u32, u32)> = Vec::with_capacity(seed_nodes * m_attach / 2 + m_attach * n_nodes);
    // every edge endpoint appears once, so uniform draws are degree-proportional
    let mut endpoints: Vec<u32> = Vec::with_capacity(2 * edges.capacity());
    for u in 0..seed_nodes as u32 {
        for v in (u + 1)..seed_nodes as u32 {
            edges.push((u, v));
            endpoints.push(u);
            endpoints.push(v);
        }
    }
    let mut chosen: Vec<u32> = Vec::with_capacity(m_attach);
    for new in seed_nodes as u32..n_nodes as u32 {
        chosen.clear();
        while chosen.len() < m_attach {
            let t = endpoints[rng.gen_range(0..endpoints.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            edges.push((t, new));
            endpoints.push(t);
            endpoints.push(new);
        }
    }
    UndirectedGraph::from_edges(n_nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(d: &[u64]) -> DegreeSample {
        DegreeSample::new(d.to_vec()).unwrap()
    }

    #[test]
    fn one_bin_per_decade_edges() {
        let bins = log_binned_histogram(&sample(&[1, 10, 100]), 1).unwrap();
        assert_eq!(bins.len(), 3);
        assert!(bins.iter().all(|b| b.count == 1));
        assert_eq!((bins[1].lo, bins[1].hi), (10.0, 100.0));
    }

    #[test]
    fn single_value_histogram_integrates_to_one() {
        for b in 1..6 {
            let bins = log_binned_histogram(&sample(&[1]), b).unwrap();
            assert_eq!(bins.len(), 1);
            let mass: f64 = bins.iter().map(|x| x.density * (x.hi - x.lo)).sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_rejects_all_zero() {
        assert!(matches!(log_binned_histogram(&sample(&[0, 0]), 5), Err(Error::Domain(_))));
    }

    #[test]
    fn bin_index_exact_powers() {
        for b in 1..=10 {
            for p in 0..6u32 {
                let d = 10u64.pow(p);
                let i = bin_index(d, b);
                assert_eq!(i, (p * b) as i64, "d = {d}, b = {b}");
            }
        }
    }

    #[test]
    fn equal_degrees_are_degenerate() {
        assert!(matches!(fit_power_law(&sample(&[3; 50]), Some(1)), Err(Error::Fit(_))));
        assert!(matches!(fit_power_law(&sample(&[3; 50]), None), Err(Error::Fit(_))));
        assert!(matches!(fit_exponential(&sample(&[2; 10]), 2), Err(Error::Fit(_))));
        assert!(matches!(fit_power_law(&sample(&[1, 5]), Some(5)), Err(Error::Fit(_))));
    }

    #[test]
    fn exponential_closed_form() {
        let fit = fit_exponential(&sample(&[1, 2, 3, 4]), 1).unwrap();
        // mean excess 1.5
        assert!((fit.lambda - (1.0 + 1.0 / 1.5f64).ln()).abs() < 1e-15);
        let mass: f64 = (1..200).map(|x| fit.pmf(x)).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_pmf_normalizes() {
        let fit = fit_power_law(&sample(&[2, 2, 3, 5, 8, 13, 40]), Some(2)).unwrap();
        let head: f64 = (2..100_000).map(|x| fit.pmf(x)).sum();
        assert!((head + (1.0 - fit.cdf(99_999)) - 1.0).abs() < 1e-9);
        assert!(fit.alpha > 1.0);
    }

    #[test]
    fn ties_and_mismatched_tails() {
        let pl = PowerLawFit { alpha: 2.0, theta_min: 1, log_likelihood: -10.0, ks_stat: 0.1, n_tail: 5, n_zero: 0 };
        let ex = ExponentialFit { lambda: 0.5, theta_min: 1, log_likelihood: -10.0, ks_stat: 0.1, n_tail: 5, n_zero: 0 };
        let c = compare_fits(&pl, &ex).unwrap();
        assert_eq!(c.preferred, PreferredModel::Tie);
        assert_eq!(c.log_likelihood_ratio, 0.0);
        let worse = ExponentialFit { log_likelihood: -12.0, ..ex.clone() };
        assert_eq!(compare_fits(&pl, &worse).unwrap().preferred, PreferredModel::PowerLaw);
        let better = ExponentialFit { log_likelihood: -8.0, ..ex.clone() };
        assert_eq!(compare_fits(&pl, &better).unwrap().preferred, PreferredModel::Exponential);
        let other = ExponentialFit { theta_min: 2, ..ex };
        assert!(compare_fits(&pl, &other).is_err());
    }

    #[test]
    fn max_degree_formula() {
        assert!((expected_max_degree(1.0, 10_000, 3.0).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(expected_max_degree(4.0, 1, 2.5).unwrap(), 4.0);
        assert!(expected_max_degree(1.0, 10, 1.0).is_err());
        assert!(expected_max_degree(0.5, 10, 2.0).is_err());
    }

    #[test]
    fn ba_base_case_is_clique() {
        let g = generate_ba_graph(4, 3, 0).unwrap();
        assert_eq!(g.n_edges(), 6);
        assert!(g.degrees().iter().all(|&d| d == 3));
        assert!(generate_ba_graph(3, 3, 0).is_err());
        assert!(generate_ba_graph(3, 0, 0).is_err());
    }

    #[test]
    fn ba_edge_count_and_determinism() {
        for (n, m) in [(10, 1), (50, 2), (200, 4)] {
            let g = generate_ba_graph(n, m, 9).unwrap();
            assert_eq!(g.n_edges(), (m + 1) * m / 2 + m * (n - m - 1));
            assert_eq!(g.degrees().iter().sum::<u64>(), 2 * g.n_edges() as u64);
            assert_eq!(g, generate_ba_graph(n, m, 9).unwrap());
        }
    }
}
