//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! `DEO_BLESS=1` rewrites the golden end-to-end outputs under `fixtures/golden/`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use deo_core::bench::{load_benchmark, run_benchmark, sweep, BenchmarkConfig, BenchmarkData, RunSettings, System, NDCG};
use deo_core::index::{FlatIndex, RankedList};
use deo_core::metrics::{map_at_k, ndcg_at_k, Judgments};
use deo_core::optimizer::{
    closed_form_optimum, deo_gradient, deo_loss, optimize_query_embedding, DecompositionEmbeddings, OptimizationConfig,
};
use deo_core::store::{EmbeddingRecord, EmbeddingStore};
use deo_core::synthetic::{gaussian, negation_corpus, random_unit, NegationCorpusSpec};
use deo_core::vector::EmbeddingVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Weight triples as `(λ_p, λ_n, λ_o)`.
const GRID: [(f64, f64, f64); 6] = [(1.0, 1.0, 0.2), (2.0, 1.0, 0.2), (1.0, 2.0, 0.2), (1.0, 1.0, 1.0), (2.0, 1.0, 1.0), (1.0, 2.0, 1.0)];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn vector(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
    EmbeddingVector::new(gaussian(rng, d)).unwrap()
}

fn instance(rng: &mut ChaCha8Rng, d: usize, k: usize, m: usize) -> DecompositionEmbeddings {
    let original = vector(rng, d);
    let positives = (0..k).map(|_| vector(rng, d)).collect();
    let negatives = (0..m).map(|_| vector(rng, d)).collect();
    DecompositionEmbeddings::new(original, positives, negatives).unwrap()
}

fn weights(rng: &mut ChaCha8Rng, i: usize) -> OptimizationConfig {
    let (p, n, o) = if i.is_multiple_of(2) {
        GRID[(i / 2) % GRID.len()]
    } else {
        (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0))
    };
    OptimizationConfig::text().with_lambdas(p, n, o)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = [(4, 600), (64, 340), (1024, 60)];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let h = 1e-5;
    for (d, n) in dims {
        for _ in 0..n {
            let (k, m) = (rng.random_range(0..=8), rng.random_range(0..=8));
            let inputs = instance(&mut rng, d, k, m);
            let cfg = weights(&mut rng, count);
            let mut u = gaussian(&mut rng, d);
            let analytic = deo_gradient(&u, &inputs, &cfg).unwrap();
            let mut numeric = vec![0.0; d];
            for j in 0..d {
                let x = u[j];
                u[j] = x + h;
                let up = deo_loss(&u, &inputs, &cfg).unwrap();
                u[j] = x - h;
                let down = deo_loss(&u, &inputs, &cfg).unwrap();
                u[j] = x;
                numeric[j] = (up - down) / (2.0 * h);
            }
            let rel = diff(&numeric, &analytic) / l2(&analytic).max(1e-300);
            worst = worst.max(rel);
            count += 1;
        }
    }
    let elapsed = started.elapsed();
    let detail = format!("{count} instances, worst relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64());
    if count >= 1000 && worst < 1e-6 && elapsed < Duration::from_secs(10) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn closed_form_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut converged, mut total, mut worst_grad) = (0, 0, 0.0f64);
    let mut i = 0;
    while total < 200 {
        i += 1;
        let d = [4, 16, 64][i % 3];
        let (k, m) = (rng.random_range(0..=8), rng.random_range(0..=8));
        let inputs = instance(&mut rng, d, k, m).normalized().unwrap();
        let mut cfg = weights(&mut rng, i).with_steps(500);
        cfg.normalize_inputs = false;
        if inputs.curvature(&cfg) <= 0.0 {
            continue;
        }
        total += 1;
        let star = closed_form_optimum(&inputs, &cfg).unwrap();
        let g = deo_gradient(&star, &inputs, &cfg).unwrap();
        worst_grad = worst_grad.max(g.iter().fold(0.0, |a, x| a.max(x.abs())));
        let (last, _) = optimize_query_embedding(&inputs, &cfg).unwrap();
        if diff(&last, &star) <= 0.1 * diff(&inputs.original, &star) {
            converged += 1;
        }
    }
    let detail = format!("{converged}/{total} instances reduced distance by ≥90%, max |∇L(e*)| {worst_grad:.1e}");
    if converged as f64 >= 0.95 * total as f64 && worst_grad <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ranked(ids: &[String]) -> RankedList {
    RankedList::from_scores(
        ids.iter()
            .enumerate()
            .map(|(i, id)| deo_core::index::ScoredDoc {
                doc_id: id.clone(),
                score: -(i as f64),
            })
            .collect(),
    )
}

fn gold_at(rank: usize) -> (RankedList, Judgments) {
    let ids: Vec<String> = (1..=20).map(|i| if i == rank { "gold".into() } else { format!("x{i:02}") }).collect();
    (ranked(&ids), Judgments::from([("gold".to_string(), 1)]))
}

fn anchored_metrics() -> Outcome {
    let (r6, j) = gold_at(6);
    let (r1, _) = gold_at(1);
    let (at6, at1) = (ndcg_at_k(&r6, &j, 10), ndcg_at_k(&r1, &j, 10));
    let detail = format!("rank 6 → {at6:.4}, rank 1 → {at1}");
    if (at6 - 0.3562).abs() <= 0.001 && at1 == 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// DCG over the first k positions against the DCG of the ideal reordering.
fn naive_ndcg(order: &[String], rel: &[String], k: usize) -> f64 {
    let gain = |id: &String| if rel.contains(id) { 1.0 } else { 0.0 };
    let dcg: f64 = order.iter().take(k).enumerate().map(|(i, id)| gain(id) / (i as f64 + 2.0).log2()).sum();
    let mut ideal: Vec<f64> = order.iter().map(gain).collect();
    ideal.extend(rel.iter().filter(|r| !order.contains(r)).map(|_| 1.0));
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| g / (i as f64 + 2.0).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn naive_ap(order: &[String], rel: &[String], k: usize) -> f64 {
    if rel.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, id) in order.iter().take(k).enumerate() {
        if rel.contains(id) {
            let hits = order[..=i].iter().filter(|d| rel.contains(d)).count();
            total += hits as f64 / (i + 1) as f64;
        }
    }
    total / rel.len().min(k) as f64
}

/// Σ_k P(k)·Δrecall(k), rescaled from `|rel|` to `min(|rel|, k)` normalization.
fn ap_by_cutoffs(order: &[String], rel: &[String], k: usize) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for cut in 1..=k.min(order.len()) {
        let hits = order[..cut].iter().filter(|d| rel.contains(d)).count() as f64;
        let recall = hits / rel.len() as f64;
        area += (hits / cut as f64) * (recall - prev_recall);
        prev_recall = recall;
    }
    area * rel.len() as f64 / rel.len().min(k) as f64
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let mut ids: Vec<String> = (0..n).map(|i| format!("d{i:02}")).collect();
        ids.shuffle(&mut rng);
        let retrieved = rng.random_range(1..=n);
        let mut rel: Vec<String> = ids.iter().filter(|_| rng.random_bool(0.3)).cloned().collect();
        if rng.random_bool(0.2) {
            rel.push("unretrieved".into());
        }
        let order = &ids[..retrieved];
        let judgments: Judgments = rel.iter().map(|r| (r.clone(), rng.random_range(1..=3))).collect();
        let list = ranked(order);
        worst = worst.max((ndcg_at_k(&list, &judgments, 10) - naive_ndcg(order, &rel, 10)).abs());
        worst = worst.max((map_at_k(&list, &judgments, 100) - naive_ap(order, &rel, 100)).abs());
    }
    let mut cases = 0;
    for n in 1..=5usize {
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        for order in permutations(&ids) {
            for mask in 1..(1u32 << n) {
                let rel: Vec<String> = ids.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, d)| d.clone()).collect();
                let judgments: Judgments = rel.iter().map(|r| (r.clone(), 1)).collect();
                for k in 1..=6 {
                    let got = map_at_k(&ranked(&order), &judgments, k);
                    worst = worst.max((got - ap_by_cutoffs(&order, &rel, k)).abs());
                    cases += 1;
                }
            }
        }
    }
    let detail = format!("100 random instances + {cases} exhaustive MAP cases, max deviation {worst:.1e}");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn brute_force(store: &EmbeddingStore, query: &[f64], k: usize) -> Vec<String> {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let q = unit(query);
    let mut scored: Vec<(f64, &str)> = store
        .records()
        .iter()
        .map(|r| {
            let d = unit(&r.vector);
            let s: f64 = q.iter().zip(&d).map(|(a, b)| a * b).sum();
            (s.clamp(-1.0, 1.0), r.id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}

fn exact_search() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut queries = 0;
    for c in 0..50 {
        let n = rng.random_range(1..=2000);
        let d = rng.random_range(1..=128);
        let mut store = EmbeddingStore::new(d, "random");
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let mut kept: Vec<EmbeddingVector> = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            // every fifth record duplicates (possibly rescaled) an earlier vector
            let v = if i > 0 && i % 5 == 0 {
                let base = &kept[rng.random_range(0..kept.len())];
                let scale = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
                EmbeddingVector::new(base.iter().map(|x| x * scale).collect()).unwrap()
            } else {
                random_unit(&mut rng, d)
            };
            kept.push(v.clone());
            store.push(EmbeddingRecord { id: format!("doc{id:05}"), vector: v }).unwrap();
        }
        let index = FlatIndex::build(&store).unwrap();
        for qi in 0..4 {
            let query = if qi == 0 { kept[rng.random_range(0..kept.len())].to_vec() } else { gaussian(&mut rng, d) };
            let k = rng.random_range(1..=n + 5);
            let got: Vec<String> = index.search(&query, k).unwrap().ids().map(String::from).collect();
            let want = brute_force(&store, &query, k);
            if got != want {
                return Err(format!("corpus {c} (n={n}, d={d}) query {qi} k={k}: ranking differs"));
            }
            queries += 1;
        }
    }
    Ok(format!("50 corpora, {queries} queries with duplicate-vector ties, identical to brute force"))
}

fn synthetic_study() -> Outcome {
    let data = negation_corpus(&NegationCorpusSpec::default()).unwrap().into_benchmark().unwrap();
    let eval = run_benchmark(&data, &System::ALL, &OptimizationConfig::text(), &RunSettings::default(), "synthetic").unwrap();
    let mean = |s| eval.report.mean(s, NDCG).unwrap();
    let (base, deo, avg, rrf) = (mean(System::Baseline), mean(System::Deo), mean(System::AvgOnly), mean(System::RrfOnly));
    let b = &eval.report.system(System::Baseline).unwrap().per_query;
    let d = &eval.report.system(System::Deo).unwrap().per_query;
    let improved = b.keys().filter(|q| d[*q][NDCG] > b[*q][NDCG]).count() as f64 / b.len() as f64;
    let detail = format!(
        "nDCG@10 baseline {base:.3}, avg {avg:.3}, rrf {rrf:.3}, deo {deo:.3}; {:.0}% of queries improved",
        improved * 100.0
    );
    if deo - base >= 0.05 && improved >= 0.8 && deo >= rrf && rrf >= avg && avg >= base {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn zero_step_identity() -> Outcome {
    let synthetic = negation_corpus(&NegationCorpusSpec::default()).unwrap().into_benchmark().unwrap();
    let cfg = BenchmarkConfig::load(&fixture_dir().join("sweep.cfg"), &[]).unwrap();
    let fixture = load_benchmark(&cfg, None, None).unwrap();
    let mut compared = 0;
    for (name, data) in [("synthetic", &synthetic), ("fixture", &fixture)] {
        let check = |data: &BenchmarkData| -> Result<usize, String> {
            let opt = OptimizationConfig::text();
            let base = run_benchmark(data, &[System::Baseline], &opt, &RunSettings::default(), "").unwrap();
            let points = sweep(data, &opt, &[(0.2, 1.0, 1.0), (1.0, 2.0, 1.0)], &[0], &RunSettings::default(), "").unwrap();
            let base_rows = &base.report.system(System::Baseline).unwrap().per_query;
            for p in &points {
                if &p.report.system(System::Deo).unwrap().per_query != base_rows {
                    return Err(format!("{name}: λ=({},{},{}) steps=0 differs from baseline", p.lambda_o, p.lambda_p, p.lambda_n));
                }
            }
            Ok(base_rows.len() * points.len())
        };
        compared += check(data)?;
    }
    Ok(format!("{compared} per-query rows at steps = 0 identical to baseline"))
}

fn runtime() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = instance(&mut rng, 1024, 4, 4);
    let cfg = OptimizationConfig::text();
    let mut times: Vec<Duration> = (0..21)
        .map(|_| {
            let t = Instant::now();
            let out = optimize_query_embedding(&inputs, &cfg).unwrap();
            std::hint::black_box(out);
            t.elapsed()
        })
        .collect();
    times.sort();
    let median = times[times.len() / 2];
    let detail = format!("20 steps at d=1024, K=M=4: median {:.3} ms", median.as_secs_f64() * 1e3);
    if median <= Duration::from_millis(50) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deo"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("deo {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn golden_outputs() -> Outcome {
    let fixtures = fixture_dir();
    let golden = fixtures.join("golden");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = fixtures.join("bench.cfg");
    let eval_dir = tmp.path().join("eval");
    let traj_dir = tmp.path().join("trajectory");
    run_cli(&["eval", "--config", cfg.to_str().unwrap(), "--out", eval_dir.to_str().unwrap()])?;
    run_cli(&["trajectory", "--config", cfg.to_str().unwrap(), "--query-id", "q1", "--out", traj_dir.to_str().unwrap()])?;

    let mut files: Vec<(PathBuf, PathBuf)> = ["report.json", "report.csv"]
        .iter()
        .map(|f| (eval_dir.join(f), golden.join(f)))
        .collect();
    for s in System::ALL {
        let f = format!("runs/{}.trec", s.name());
        files.push((eval_dir.join(&f), golden.join(&f)));
    }
    for f in ["q1.csv", "q1.svg"] {
        files.push((traj_dir.join(f), golden.join("trajectory").join(f)));
    }
    let bless = std::env::var_os("DEO_BLESS").is_some();
    for (produced, expected) in &files {
        let bytes = std::fs::read(produced).map_err(|e| format!("{}: {e}", produced.display()))?;
        if bless {
            std::fs::create_dir_all(expected.parent().unwrap()).unwrap();
            std::fs::write(expected, &bytes).unwrap();
        }
        let want = std::fs::read(expected).map_err(|e| format!("{}: {e}", expected.display()))?;
        if bytes != want {
            return Err(format!("{} differs from {}", produced.display(), expected.display()));
        }
    }
    Ok(format!("{} output files byte-identical to the committed goldens", files.len()))
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = [4, 64, 256][i % 3];
        let (k, m) = (rng.random_range(0..=8), rng.random_range(0..=8));
        let inputs = instance(&mut rng, d, k, m);
        let mut cfg = weights(&mut rng, i).with_steps(50);
        cfg.epsilon = 0.0;
        let scaled = cfg.with_lambdas(10.0 * cfg.lambda_p, 10.0 * cfg.lambda_n, 10.0 * cfg.lambda_o);
        let (_, a) = optimize_query_embedding(&inputs, &cfg).unwrap();
        let (_, b) = optimize_query_embedding(&inputs, &scaled).unwrap();
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            worst = worst.max(x.iter().zip(y.iter()).fold(0.0, |w, (p, q)| w.max((p - q).abs())));
        }
    }
    let detail = format!("100 instances × 51 snapshots, max deviation {worst:.1e}");
    if worst <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient matches central differences", gradient_check),
        ("Adam approaches the closed-form optimum", closed_form_oracle),
        ("nDCG@10 anchor values", anchored_metrics),
        ("metrics match naive references", metric_oracles),
        ("flat search equals brute force", exact_search),
        ("synthetic negation study ordering", synthetic_study),
        ("zero-step sweep equals baseline", zero_step_identity),
        ("20-step runtime at d=1024", runtime),
        ("end-to-end golden fixture", golden_outputs),
        ("Adam invariant to λ scaling with ε=0", scale_invariance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
