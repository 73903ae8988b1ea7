//! Browser bindings. Each export returns a JSON string; errors become JS exceptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sfgl_core::knn::{build_knn_graph, degree_report, Metric};
use sfgl_core::scalefree::{
    compare_fits, expected_max_degree, fit_exponential, fit_power_law, generate_ba_graph, log_binned_histogram,
    DegreeSample, FitRecord,
};
use sfgl_core::{Error, Result, SparseFeatureMatrix};
use wasm_bindgen::prelude::*;

const MAX_NODES: usize = 200_000;
const MAX_KNN_NODES: usize = 3_000;

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Histogram bins, both fits, their comparison and model survival curves for plotting.
fn fit_summary(degrees: Vec<u64>, bins_per_decade: u32) -> Result<Value> {
    let sample = DegreeSample::new(degrees)?;
    let bins = log_binned_histogram(&sample, bins_per_decade)?;
    let pl = fit_power_law(&sample, None)?;
    let ex = fit_exponential(&sample, pl.theta_min)?;
    let cmp = compare_fits(&pl, &ex)?;
    let tail_frac = pl.n_tail as f64 / (sample.len() - sample.n_zero()).max(1) as f64;
    // model densities scaled to the share of positive degrees in the tail
    let curve: Vec<Value> = bins
        .iter()
        .filter(|b| b.hi > pl.theta_min as f64)
        .map(|b| {
            let x = b.center.round().max(pl.theta_min as f64) as u64;
            json!({ "x": b.center, "powerlaw": tail_frac * pl.pmf(x), "exponential": tail_frac * ex.pmf(x) })
        })
        .collect();
    Ok(json!({
        "n": sample.len(),
        "n_zero": sample.n_zero(),
        "max": sample.max(),
        "histogram": bins.iter().map(|b| json!({ "x": b.center, "density": b.density, "count": b.count })).collect::<Vec<_>>(),
        "curve": curve,
        "power_law": FitRecord::from(&pl),
        "exponential": FitRecord::from(&ex),
        "comparison": cmp,
    }))
}

pub fn ba_fit_json(n: usize, m: usize, seed: u64, bins_per_decade: u32) -> Result<Value> {
    if n > MAX_NODES {
        return Err(Error::Input(format!("at most {MAX_NODES} nodes in the browser")));
    }
    let g = generate_ba_graph(n, m, seed)?;
    let mut out = fit_summary(g.degrees(), bins_per_decade)?;
    out["n_edges"] = json!(g.n_edges());
    if let Some(alpha) = out["power_law"]["alpha"].as_f64() {
        let theta = out["power_law"]["theta_min"].as_f64().unwrap_or(1.0);
        out["expected_max"] = json!(expected_max_degree(theta, n, alpha).ok());
    }
    Ok(out)
}

/// Points uniform in the unit cube, KNN graph under `metric`, in-degree fits.
pub fn knn_fit_json(n: usize, d: usize, k: usize, metric: &str, seed: u64, bins_per_decade: u32) -> Result<Value> {
    if n > MAX_KNN_NODES {
        return Err(Error::Input(format!("at most {MAX_KNN_NODES} points in the browser")));
    }
    if d == 0 {
        return Err(Error::Input("dimension must be at least 1".into()));
    }
    let metric: Metric = metric.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>()).collect();
    let f = SparseFeatureMatrix::from_dense(n, d, &data)?;
    let g = build_knn_graph(&f, k, metric)?;
    let r = degree_report(&g);
    let mut out = fit_summary(r.in_degree.clone(), bins_per_decade)?;
    out["k"] = json!(g.k());
    out["n_undirected_edges"] = json!(r.n_undirected_edges);
    out["identity"] = json!(r.identity());
    Ok(out)
}

pub fn expected_max_json(theta_min: f64, n: usize, alpha: f64) -> Result<Value> {
    Ok(json!({ "expected_max": expected_max_degree(theta_min, n, alpha)? }))
}

/// Preferential-attachment graph with `n` nodes and `m` links per arrival.
#[wasm_bindgen]
pub fn ba_fit(n: usize, m: usize, seed: u64, bins_per_decade: u32) -> std::result::Result<String, JsValue> {
    to_js(ba_fit_json(n, m, seed, bins_per_decade))
}

/// KNN graph on random points; `metric` is cosine, euclidean or manhattan.
#[wasm_bindgen]
pub fn knn_fit(n: usize, d: usize, k: usize, metric: &str, seed: u64, bins_per_decade: u32) -> std::result::Result<String, JsValue> {
    to_js(knn_fit_json(n, d, k, metric, seed, bins_per_decade))
}

/// `θ_min · n^{1/(α−1)}`.
#[wasm_bindgen]
pub fn expected_max(theta_min: f64, n: usize, alpha: f64) -> std::result::Result<String, JsValue> {
    to_js(expected_max_json(theta_min, n, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ba_summary_is_heavy_tailed() {
        let v = ba_fit_json(5000, 3, 1, 10).unwrap();
        assert_eq!(v["n_edges"], 6 + 3 * (5000 - 4));
        assert_eq!(v["n_zero"], 0);
        assert_eq!(v["comparison"]["preferred"], "powerlaw");
        let alpha = v["power_law"]["alpha"].as_f64().unwrap();
        assert!((2.3..3.7).contains(&alpha), "alpha {alpha}");
        assert!(v["expected_max"].as_f64().unwrap() > 10.0);
        let area: f64 = sfgl_core::scalefree::log_binned_histogram(
            &DegreeSample::new(generate_ba_graph(5000, 3, 1).unwrap().degrees()).unwrap(),
            10,
        )
        .unwrap()
        .iter()
        .map(|b| b.density * (b.hi - b.lo))
        .sum();
        assert!((area - 1.0).abs() < 1e-9);
    }

    #[test]
    fn knn_summary_reports_identity() {
        for metric in ["cosine", "euclidean", "manhattan"] {
            let v = knn_fit_json(300, 4, 5, metric, 2, 10).unwrap();
            assert_eq!(v["identity"]["holds"], true, "{metric}");
            assert_eq!(v["n"], 300);
        }
        assert!(knn_fit_json(300, 4, 5, "hamming", 2, 10).is_err());
        assert!(knn_fit_json(MAX_KNN_NODES + 1, 4, 5, "cosine", 2, 10).is_err());
    }

    #[test]
    fn expected_max_matches_formula() {
        let v = expected_max_json(2.0, 10_000, 3.0).unwrap();
        assert!((v["expected_max"].as_f64().unwrap() - 200.0).abs() < 1e-9);
        assert!(expected_max_json(2.0, 10, 1.0).is_err());
    }

    #[test]
    fn same_seed_same_json() {
        assert_eq!(ba_fit_json(800, 2, 9, 8).unwrap(), ba_fit_json(800, 2, 9, 8).unwrap());
        assert_eq!(knn_fit_json(200, 3, 4, "euclidean", 9, 8).unwrap(), knn_fit_json(200, 3, 4, "euclidean", 9, 8).unwrap());
    }
}
