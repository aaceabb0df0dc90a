//! Browser bindings over a seeded synthetic negation corpus.
//!
//! Every method returns a JSON string; the page parses it.

use deo_core::bench::{run_benchmark, sweep, BenchmarkData, RunSettings, System, NDCG};
use deo_core::optimizer::{optimize_query_embedding, OptimizationConfig};
use deo_core::pca::PcaBasis;
use deo_core::synthetic::{negation_corpus, NegationCorpusSpec};
use deo_core::trajectory::{corpus_basis, export_trajectory, render_svg, SvgStyle};
use deo_core::{Error, Result};
use serde_json::json;
use wasm_bindgen::prelude::*;

// threads are unavailable in the browser
const SINGLE: RunSettings = RunSettings {
    depth: 100,
    k_rrf: 60,
    workers: 1,
};

#[wasm_bindgen]
pub struct Demo {
    data: BenchmarkData,
    basis: PcaBasis,
}

fn settings(lambda_p: f64, lambda_n: f64, lambda_o: f64, steps: usize) -> Result<OptimizationConfig> {
    let cfg = OptimizationConfig::text().with_lambdas(lambda_p, lambda_n, lambda_o).with_steps(steps);
    cfg.validate()?;
    Ok(cfg)
}

impl Demo {
    pub fn build(seed: u64, queries: usize) -> Result<Self> {
        let spec = NegationCorpusSpec {
            seed,
            queries: queries.clamp(1, 500),
            ..NegationCorpusSpec::default()
        };
        let data = negation_corpus(&spec)?.into_benchmark()?;
        let basis = corpus_basis(&data.index)?;
        Ok(Self { data, basis })
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.data.queries.iter().map(|q| q.id.clone()).collect()
    }

    /// Optimization path of one query drawn over the corpus in the top-2 PCA plane.
    pub fn trajectory(&self, query_id: &str, lambda_p: f64, lambda_n: f64, lambda_o: f64, steps: usize) -> Result<String> {
        let cfg = settings(lambda_p, lambda_n, lambda_o, steps)?;
        let q = self
            .data
            .query(query_id)
            .ok_or_else(|| Error::Mismatch(format!("unknown query {query_id}")))?;
        let row = self.data.qrels.get(query_id).ok_or_else(|| Error::MissingGold(query_id.into()))?;
        let (_, trace) = optimize_query_embedding(&q.inputs, &cfg)?;
        let inputs = q.inputs.normalized()?;
        let export = export_trajectory(query_id, &trace, &inputs, &self.data.index, row, &self.basis)?;
        let gold = &export.gold[0];
        Ok(json!({
            "svg": render_svg(&export, &SvgStyle::default()),
            "losses": export.losses,
            "baseline_rank": gold.baseline_rank,
            "final_rank": gold.final_rank,
            "baseline_ndcg": export.baseline_ndcg,
            "final_ndcg": export.final_ndcg,
        })
        .to_string())
    }

    /// Mean nDCG@10 of every system over all queries.
    pub fn compare(&self, lambda_p: f64, lambda_n: f64, lambda_o: f64, steps: usize) -> Result<String> {
        let cfg = settings(lambda_p, lambda_n, lambda_o, steps)?;
        let eval = run_benchmark(&self.data, &System::ALL, &cfg, &SINGLE, "")?;
        let rows: Vec<_> = System::ALL
            .iter()
            .map(|&s| json!({ "system": s.name(), "ndcg": eval.report.mean(s, NDCG) }))
            .collect();
        Ok(serde_json::Value::from(rows).to_string())
    }

    /// Mean DEO nDCG@10 for every step count from 0 to `max_steps`.
    pub fn step_curve(&self, lambda_p: f64, lambda_n: f64, lambda_o: f64, max_steps: usize) -> Result<String> {
        let cfg = settings(lambda_p, lambda_n, lambda_o, 0)?;
        let steps: Vec<usize> = (0..=max_steps.min(200)).collect();
        let points = sweep(&self.data, &cfg, &[(lambda_o, lambda_p, lambda_n)], &steps, &SINGLE, "")?;
        let rows: Vec<_> = points
            .iter()
            .map(|p| json!({ "steps": p.steps, "ndcg": p.report.mean(System::Deo, NDCG) }))
            .collect();
        Ok(serde_json::Value::from(rows).to_string())
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, queries: usize) -> std::result::Result<Demo, JsError> {
        Demo::build(u64::from(seed), queries).map_err(js)
    }

    #[wasm_bindgen(js_name = queryIds)]
    pub fn query_ids_js(&self) -> Vec<String> {
        self.query_ids()
    }

    #[wasm_bindgen(js_name = trajectory)]
    pub fn trajectory_js(&self, query_id: &str, lambda_p: f64, lambda_n: f64, lambda_o: f64, steps: usize) -> std::result::Result<String, JsError> {
        self.trajectory(query_id, lambda_p, lambda_n, lambda_o, steps).map_err(js)
    }

    #[wasm_bindgen(js_name = compare)]
    pub fn compare_js(&self, lambda_p: f64, lambda_n: f64, lambda_o: f64, steps: usize) -> std::result::Result<String, JsError> {
        self.compare(lambda_p, lambda_n, lambda_o, steps).map_err(js)
    }

    #[wasm_bindgen(js_name = stepCurve)]
    pub fn step_curve_js(&self, lambda_p: f64, lambda_n: f64, lambda_o: f64, max_steps: usize) -> std::result::Result<String, JsError> {
        self.step_curve(lambda_p, lambda_n, lambda_o, max_steps).map_err(js)
    }
}
