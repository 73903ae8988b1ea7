//! Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.
//!
//! Run with `cargo test -p sfgl-cli --test acceptance -- --nocapture --test-threads 1`
//! to see the lines in order.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfgl_core::dataset::{
    format_labels, load_features, load_labels, make_split, save_features, FeatureFormat, LabelTable, SplitStrategy,
};
use sfgl_core::gcn::{gradient_check, normalize_adjacency, GcnHyper, GcnParams};
use sfgl_core::knn::{build_knn_graph, degree_report, Metric};
use sfgl_core::pipeline::{
    import_embeddings, load_dataset, run_iteration, run_self_contained, run_stage_a, run_stage_b, train_and_evaluate,
    EmbeddingMatrix, FinetuneExport, Mode, PipelineConfig, RunReport, FINETUNE_EXPORT, REPORT_FILE,
};
use sfgl_core::scalefree::{
    compare_fits, fit_exponential, fit_power_law, generate_ba_graph, DegreeSample, PreferredModel,
};
use sfgl_core::{DenseMatrix, SparseFeatureMatrix, UndirectedGraph};

fn report(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let verdict = if pass && in_time { "PASS" } else { "FAIL" };
    println!(
        "criterion {id:>2} [{verdict}] {name}: {detail} ({:.1}s, budget {}s)",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass && in_time
}

fn cora_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora")
}

fn cora() -> (SparseFeatureMatrix, LabelTable) {
    let dir = cora_dir();
    let f = load_features(&dir.join("features.coo"), FeatureFormat::CooText).expect("cora features");
    let labels = load_labels(&dir.join("labels.txt"), f.n_rows(), None).expect("cora labels");
    (f, labels)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, density: f64, integer: bool) -> SparseFeatureMatrix {
    let mut data = vec![0.0; n * d];
    for x in &mut data {
        if rng.gen::<f64>() < density {
            *x = if integer { rng.gen_range(1..4) as f64 } else { rng.gen_range(-1.0..1.0) };
        }
    }
    SparseFeatureMatrix::from_dense(n, d, &data).unwrap()
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_01_nonreciprocal_in_degree_identity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    let mut graphs = 0;
    for _ in 0..100 {
        let n = rng.gen_range(10..=500);
        let d = rng.gen_range(2..=50);
        let k = rng.gen_range(1..=10);
        let integer = rng.gen_bool(0.3);
        let f = random_matrix(&mut rng, n, d, 0.4, integer);
        for metric in Metric::ALL {
            let g = build_knn_graph(&f, k, metric).unwrap();
            let r = degree_report(&g);
            let id = r.identity();
            // recompute from the edge set alone
            let edges: BTreeSet<(u32, u32)> = g.edges().collect();
            let undirected: BTreeSet<(u32, u32)> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
            let nonrecip = edges.iter().filter(|&&(u, v)| !edges.contains(&(v, u))).count() as i64;
            let e = undirected.len() as i64;
            let kv = (k * n) as i64;
            let ok = id.holds
                && r.n_undirected_edges as i64 == e
                && nonrecip == 2 * e - kv
                && id.sum_nonreciprocal_in as i64 == nonrecip
                && e <= kv;
            graphs += 1;
            if !ok {
                failures += 1;
            }
        }
    }
    let pass = report(
        1,
        "sum of non-reciprocal in-degrees = 2|E| - k|V|, |E| <= k|V|",
        failures == 0,
        &format!("{} of {graphs} graphs violate", failures),
        t.elapsed(),
        Duration::from_secs(30),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

fn brute_force_knn(f: &SparseFeatureMatrix, k: usize, metric: Metric) -> Vec<Vec<u32>> {
    let dense = f.to_dense();
    let n = dense.rows();
    let norm = |r: usize| dense.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
    let sim = |i: usize, j: usize| -> f64 {
        let (a, b) = (dense.row(i), dense.row(j));
        match metric {
            Metric::Cosine => {
                let (na, nb) = (norm(i), norm(j));
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
                }
            }
            Metric::Euclidean => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Manhattan => -a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
        }
    };
    let k = k.min(n - 1);
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (sim(i, j), j)).collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut top: Vec<u32> = all[..k].iter().map(|&(_, j)| j as u32).collect();
            top.sort_unstable();
            top
        })
        .collect()
}

#[test]
fn criterion_02_knn_matches_brute_force() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for inst in 0..200 {
        let n = rng.gen_range(2..=200);
        let d = rng.gen_range(1..=30);
        let k = rng.gen_range(1..=12);
        // every third instance uses small integers so that exact ties occur
        let density = rng.gen_range(0.1..0.9);
        let f = random_matrix(&mut rng, n, d, density, inst % 3 == 0);
        let metric = Metric::ALL[inst % 3];
        let g = build_knn_graph(&f, k, metric).unwrap();
        if g.out_adj() != brute_force_knn(&f, k, metric).as_slice() {
            mismatches += 1;
        }
    }
    let pass = report(
        2,
        "KNN graph equals exhaustive selection",
        mismatches == 0,
        &format!("{mismatches} of 200 instances differ"),
        t.elapsed(),
        Duration::from_secs(60),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

/// Exact discrete power-law sampler by inverse CDF over a tabulated survival function.
struct PowerLawSampler {
    theta_min: u64,
    /// `survival[i] = P(X >= theta_min + i)`.
    survival: Vec<f64>,
    alpha: f64,
}

impl PowerLawSampler {
    const TABLE: usize = 2_000_000;

    fn new(alpha: f64, theta_min: u64) -> Self {
        let last = theta_min as f64 + Self::TABLE as f64;
        // tail beyond the table by the integral plus half-term correction
        let mut tail = last.powf(1.0 - alpha) / (alpha - 1.0) + 0.5 * last.powf(-alpha);
        let mut survival = vec![0.0; Self::TABLE];
        for i in (0..Self::TABLE).rev() {
            tail += (theta_min as f64 + i as f64).powf(-alpha);
            survival[i] = tail;
        }
        let z = survival[0];
        for s in &mut survival {
            *s /= z;
        }
        Self { theta_min, survival, alpha }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        let u: f64 = 1.0 - rng.gen::<f64>();
        let s = &self.survival;
        if u < s[s.len() - 1] {
            // beyond the table: continuous approximation of the far tail
            let x0 = self.theta_min as f64 + s.len() as f64 - 0.5;
            let ratio = u / s[s.len() - 1];
            return (x0 * ratio.powf(-1.0 / (self.alpha - 1.0))).round() as u64;
        }
        // largest i with survival[i] >= u
        let i = s.partition_point(|&p| p >= u) - 1;
        self.theta_min + i as u64
    }
}

#[test]
fn criterion_03_power_law_recovery() {
    let t = Instant::now();
    let mut runs = 0;
    let mut within = 0;
    let mut pl_preferred = 0;
    let mut worst: f64 = 0.0;
    for &alpha in &[2.2, 2.8, 3.5] {
        for &theta_min in &[1u64, 3] {
            let sampler = PowerLawSampler::new(alpha, theta_min);
            for seed in 0..5 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 * seed + theta_min);
                let xs: Vec<u64> = (0..100_000).map(|_| sampler.sample(&mut rng)).collect();
                let sample = DegreeSample::new(xs).unwrap();
                let pl = fit_power_law(&sample, Some(theta_min)).unwrap();
                let ex = fit_exponential(&sample, theta_min).unwrap();
                let cmp = compare_fits(&pl, &ex).unwrap();
                runs += 1;
                let err = (pl.alpha - alpha).abs();
                worst = worst.max(err);
                if err <= 0.05 {
                    within += 1;
                }
                if cmp.preferred == PreferredModel::PowerLaw {
                    pl_preferred += 1;
                }
            }
        }
    }
    let pass = within as f64 >= 0.95 * runs as f64 && pl_preferred == runs;
    let pass = report(
        3,
        "power-law exponent recovery",
        pass,
        &format!("{within}/{runs} within 0.05 (max error {worst:.4}); power law preferred {pl_preferred}/{runs}"),
        t.elapsed(),
        Duration::from_secs(120),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_cora_cosine_in_degrees_are_power_law() {
    let t = Instant::now();
    let (f, _) = cora();
    let g = build_knn_graph(&f, 5, Metric::Cosine).unwrap();
    let sample = DegreeSample::new(g.in_degrees()).unwrap();
    let pl = fit_power_law(&sample, None).unwrap();
    let ex = fit_exponential(&sample, pl.theta_min).unwrap();
    let pass = (2.8..=3.8).contains(&pl.alpha) && pl.log_likelihood > ex.log_likelihood;
    let pass = report(
        4,
        "Cora cosine k=5 in-degree power law",
        pass,
        &format!(
            "alpha {:.4} at theta_min {} (n_tail {}), ll power law {:.2} vs exponential {:.2}",
            pl.alpha, pl.theta_min, pl.n_tail, pl.log_likelihood, ex.log_likelihood
        ),
        t.elapsed(),
        Duration::from_secs(120),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_cora_euclidean_zero_in_degree() {
    let t = Instant::now();
    let (f, _) = cora();
    let g = build_knn_graph(&f, 5, Metric::Euclidean).unwrap();
    let zeros = degree_report(&g).zero_in_degree_count();
    let pass = report(
        5,
        "Cora Euclidean k=5 zero in-degree count",
        (1600..=2500).contains(&zeros),
        &format!("{zeros} nodes with in-degree 0"),
        t.elapsed(),
        Duration::from_secs(120),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_gradient_check() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.gen_range(3..=16);
        let d = rng.gen_range(2..=8);
        let c = rng.gen_range(2..=4);
        let h = rng.gen_range(2..=8);
        let f = random_matrix(&mut rng, n, d, 0.6, false);
        let mut edges = Vec::new();
        for u in 0..n as u32 {
            for v in (u + 1)..n as u32 {
                if rng.gen_bool(0.3) {
                    edges.push((u, v));
                }
            }
        }
        let adj = normalize_adjacency(&UndirectedGraph::from_edges(n, edges).unwrap());
        let classes: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c as u32)).collect();
        let labels = LabelTable::new(c, classes.into_iter().map(Some).collect()).unwrap();
        let mut labeled: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if labeled.is_empty() {
            labeled.push(0);
        }
        let hyper = GcnHyper { hidden: h, dropout: 0.0, ..GcnHyper::default() };
        let mut params = GcnParams::glorot(d, c, hyper, &mut rng);
        for b in params.b1.iter_mut().chain(params.b2.iter_mut()) {
            *b = rng.gen_range(-0.5..0.5);
        }
        let err = gradient_check(&params, &adj, &f, &labels, &labeled, 1e-5).unwrap();
        worst = worst.max(err);
    }
    let pass = report(
        6,
        "analytic vs central-difference gradients",
        worst < 1e-4,
        &format!("max relative error {worst:.3e} over 10 instances"),
        t.elapsed(),
        Duration::from_secs(30),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_cora_gcn_accuracy() {
    let t = Instant::now();
    let (f, labels) = cora();
    let g = build_knn_graph(&f, 25, Metric::Cosine).unwrap();
    let adj = normalize_adjacency(&g.symmetrize());
    let mut accs = Vec::new();
    for seed in 0..5u64 {
        let split = make_split(&labels, 140, SplitStrategy::PerClassBalanced, seed).unwrap();
        let hyper = GcnHyper { seed, ..GcnHyper::default() };
        let model = train_and_evaluate(&f, &adj, &labels, &split, &hyper).unwrap();
        accs.push(model.metrics.test_accuracy.unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt();
    let pass = report(
        7,
        "Cora GCN on cosine k=25 graph, 140 balanced labels",
        (0.55..=0.66).contains(&mean),
        &format!("mean test accuracy {mean:.4} +- {sd:.4} over seeds 0-4 {accs:.4?}"),
        t.elapsed(),
        Duration::from_secs(300),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_preferential_attachment_reference() {
    let t = Instant::now();
    let n = 50_000;
    let g = generate_ba_graph(n, 2, 8).unwrap();
    let edges_ok = g.n_edges() == 3 + 2 * (n - 3);
    let fit = fit_power_law(&DegreeSample::new(g.degrees()).unwrap(), None).unwrap();
    let pass = report(
        8,
        "preferential attachment n=50000 m=2",
        edges_ok && (2.5..=3.5).contains(&fit.alpha),
        &format!(
            "{} edges (expected {}), alpha {:.4} at theta_min {}",
            g.n_edges(),
            3 + 2 * (n - 3),
            fit.alpha,
            fit.theta_min
        ),
        t.elapsed(),
        Duration::from_secs(120),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

/// Three noisy clusters, written as coo features plus labels.
fn write_cluster_dataset(dir: &Path, n: usize, d: usize, spread: f64, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n * d];
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        classes.push(c as u32);
        for j in 0..d {
            let centre = if j % 3 == c { 1.0 } else { 0.0 };
            let v: f64 = centre + spread * (rng.gen::<f64>() - 0.5);
            data[i * d + j] = if v > 0.15 { v } else { 0.0 };
        }
    }
    let f = SparseFeatureMatrix::from_dense(n, d, &data).unwrap();
    let fp = dir.join("features.coo");
    let lp = dir.join("labels.txt");
    save_features(&fp, &f, FeatureFormat::CooText).unwrap();
    std::fs::write(&lp, format_labels(&LabelTable::from_classes(&classes))).unwrap();
    (fp, lp)
}

fn strip_report(path: &Path) -> String {
    RunReport::load(path).unwrap().deterministic_json().unwrap()
}

#[test]
fn criterion_09_pipeline_closure() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (fp, lp) = write_cluster_dataset(dir.path(), 120, 12, 1.6, 9);
    let mut identical = true;
    let mut counts_ok = true;
    let budget = 12;
    for seed in 0..3u64 {
        let text = format!(
            "features = {}\nlabels = {}\nk = 6\nbudget = {budget}\nseed = {seed}\nepochs = 80\nlearning_rate = 0.01\n",
            fp.display(),
            lp.display()
        );
        let mut joined = PipelineConfig::parse(&text, None).unwrap();
        joined.mode = Mode::SelfContained;
        joined.out_dir = dir.path().join(format!("self-{seed}"));
        run_self_contained(&joined).unwrap();

        let mut staged = PipelineConfig::parse(&text, None).unwrap();
        staged.out_dir = dir.path().join(format!("staged-{seed}"));
        let a = run_stage_a(&staged).unwrap();
        // identity encoder: embeddings are the shallow features, written and read back
        let data = load_dataset(&staged.experiment).unwrap();
        let emb_path = dir.path().join(format!("emb-{seed}.txt"));
        EmbeddingMatrix::from_features(&data.features).unwrap().save(&emb_path).unwrap();
        let emb = import_embeddings(&emb_path, Some(data.features.n_rows())).unwrap();
        run_stage_b(&staged, &emb, &a.graph).unwrap();

        identical &= strip_report(&joined.out_dir.join(REPORT_FILE)) == strip_report(&staged.out_dir.join(REPORT_FILE));
        for out in [&joined.out_dir, &staged.out_dir] {
            let export = FinetuneExport::load(&out.join(FINETUNE_EXPORT)).unwrap();
            counts_ok &= export.n_true() == budget && export.n_pseudo() == 120 - budget && export.rows.len() == 120;
        }
    }
    let pass = report(
        9,
        "self-contained run equals stage a + identity encoder + stage b",
        identical && counts_ok,
        &format!("reports identical: {identical}; export counts m/n correct: {counts_ok}"),
        t.elapsed(),
        Duration::from_secs(60),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_synthetic_embeddings() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let n = 600;
    let (fp, lp) = write_cluster_dataset(dir.path(), n, 30, 2.2, 10);
    let text = format!("features = {}\nlabels = {}\nk = 10\nbudget = 30\nseed = 0\n", fp.display(), lp.display());
    let mut cfg = PipelineConfig::parse(&text, None).unwrap();
    cfg.out_dir = dir.path().join("out");
    let a = run_stage_a(&cfg).unwrap();
    let before = a.report.stage("a").unwrap().classifier.as_ref().unwrap().unlabeled_accuracy.unwrap();

    // class means on orthogonal axes, 6 sigma apart pairwise, unit noise
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let d = 8;
    let offset = 6.0 / 2f64.sqrt();
    let labels = load_labels(&lp, n, None).unwrap();
    let mut e = vec![0.0; n * d];
    for i in 0..n {
        let c = labels.get(i).unwrap() as usize;
        for j in 0..d {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            e[i * d + j] = z + if j == c { offset } else { 0.0 };
        }
    }
    let emb = EmbeddingMatrix::new(DenseMatrix::from_vec(n, d, e).unwrap()).unwrap();
    let b = run_stage_b(&cfg, &emb, &a.graph).unwrap();
    let final_acc = b.stage("b").unwrap().classifier.as_ref().unwrap().test_accuracy.unwrap();
    let it = run_iteration(&cfg, &emb).unwrap();
    let after = it.report.stage("iterate").unwrap().classifier.as_ref().unwrap().unlabeled_accuracy.unwrap();
    let pass = report(
        10,
        "stage b on 6-sigma Gaussian embeddings, one iteration",
        final_acc >= 0.95 && after >= before - 0.02,
        &format!("final accuracy {final_acc:.4}; pseudo-label accuracy {before:.4} -> {after:.4}"),
        t.elapsed(),
        Duration::from_secs(60),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 11

fn sfgl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sfgl")).args(args).env("SFGL_THREADS", "0").output().unwrap()
}

/// Removes wall-clock `timestamps` arrays at any depth (state files embed the report).
fn strip_timestamps(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(o) => {
            o.remove("timestamps");
            o.values_mut().for_each(strip_timestamps);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_timestamps),
        _ => {}
    }
}

/// Every file under `dir` except report timestamps, keyed by relative path.
fn artifacts(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut text = std::fs::read_to_string(&p).unwrap();
            if p.extension().is_some_and(|e| e == "json") {
                let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
                strip_timestamps(&mut v);
                text = v.to_string();
            }
            // output locations differ between the two runs by construction
            let text = text.replace(&dir.display().to_string(), "<out>");
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), text));
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_11_subcommand_determinism() {
    let t = Instant::now();
    let data = tempfile::tempdir().unwrap();
    let (fp, lp) = write_cluster_dataset(data.path(), 60, 9, 1.6, 11);
    let (fp, lp) = (fp.display().to_string(), lp.display().to_string());
    let config = data.path().join("run.conf");
    std::fs::write(
        &config,
        format!("features = {fp}\nlabels = {lp}\nk = 5\nbudget = 6\nepochs = 30\nlearning_rate = 0.01\nmode = self-contained\niterations = 1\n"),
    )
    .unwrap();
    let edges = data.path().join("real.edges");
    std::fs::write(&edges, "0 1\n1 2\n3 4\n10 20\n").unwrap();

    let mut failed = Vec::new();
    let mut runs: Vec<Vec<(String, String)>> = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let o = |name: &str| out.path().join(name).display().to_string();
        let graph_dir = o("graph");
        let train_dir = o("train");
        let emb = o("emb.txt");
        let steps: Vec<(&str, Vec<String>)> = vec![
            ("build-graph", vec!["build-graph".into(), "--features".into(), fp.clone(), "--k".into(), "5".into(), "--out".into(), graph_dir.clone()]),
            ("degrees", vec!["degrees".into(), "--graph".into(), graph_dir.clone(), "--out".into(), o("degrees")]),
            ("fit", vec!["fit".into(), "--graph".into(), graph_dir.clone(), "--model".into(), "both".into(), "--out".into(), o("fit")]),
            ("ba-gen", vec!["ba-gen".into(), "--n".into(), "300".into(), "--m".into(), "2".into(), "--seed".into(), "4".into(), "--out".into(), o("ba")]),
            ("train", vec![
                "train".into(), "--features".into(), fp.clone(), "--graph".into(), graph_dir.clone(), "--labels".into(), lp.clone(),
                "--budget".into(), "6".into(), "--seed".into(), "2".into(), "--epochs".into(), "30".into(), "--out".into(), train_dir.clone(),
            ]),
            ("pseudo-label", vec![
                "pseudo-label".into(), "--checkpoint".into(), format!("{train_dir}/checkpoint.txt"), "--features".into(), fp.clone(),
                "--graph".into(), graph_dir.clone(), "--labels".into(), lp.clone(), "--split".into(), format!("{train_dir}/split.json"),
                "--out".into(), o("pseudo"),
            ]),
            ("export-finetune", vec![
                "export-finetune".into(), "--pseudo-labels".into(), format!("{train_dir}/pseudo_labels.tsv"), "--out".into(), o("export"),
            ]),
            ("import-embeddings", vec![
                "import-embeddings".into(), "--embeddings".into(), emb.clone(), "--identity-from".into(), fp.clone(), "--out".into(), o("import"),
            ]),
            ("classify", vec![
                "classify".into(), "--embeddings".into(), emb.clone(), "--graph".into(), graph_dir.clone(), "--labels".into(), lp.clone(),
                "--split".into(), format!("{train_dir}/split.json"), "--epochs".into(), "30".into(), "--out".into(), o("classify"),
            ]),
            ("run", vec!["run".into(), "--config".into(), config.display().to_string(), "--stage".into(), "full".into(), "--out".into(), o("run")]),
            ("compare-real", vec![
                "compare-real".into(), "--config".into(), config.display().to_string(), "--edges".into(), edges.display().to_string(),
                "--out".into(), o("compare"),
            ]),
        ];
        for (name, args) in &steps {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let res = sfgl(&refs);
            if !res.status.success() {
                failed.push(format!("{name}: {}", String::from_utf8_lossy(&res.stderr).trim()));
            }
        }
        runs.push(artifacts(out.path()));
    }
    let same = runs[0] == runs[1];
    let n_files = runs[0].len();
    let differing: Vec<&str> = runs[0]
        .iter()
        .filter(|a| !runs[1].contains(a))
        .map(|(name, _)| name.as_str())
        .collect();
    let pass = report(
        11,
        "every subcommand is deterministic",
        failed.is_empty() && same && n_files > 0,
        &format!("{n_files} artifacts compared, differing: {differing:?}; failures: {failed:?}"),
        t.elapsed(),
        Duration::from_secs(120),
    );
    assert!(pass);
}
