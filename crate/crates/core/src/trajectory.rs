//! Optimization trajectories projected onto the corpus' first two principal axes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::FlatIndex;
use crate::metrics::{ndcg_at_k, relevant_set, Judgments};
use crate::optimizer::{DecompositionEmbeddings, OptimizationTrace};
use crate::pca::{pca_fit, PcaBasis};
use crate::vector::check_dim;

/// Upper bound on gray corpus points in an export.
pub const CORPUS_SAMPLE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldPoint {
    pub doc_id: String,
    pub x: f64,
    pub y: f64,
    pub baseline_rank: usize,
    pub final_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryExport {
    pub query_id: String,
    /// One point per trace snapshot, initialization first.
    pub trajectory: Vec<[f64; 2]>,
    pub losses: Vec<f64>,
    pub positives: Vec<[f64; 2]>,
    pub negatives: Vec<[f64; 2]>,
    pub gold: Vec<GoldPoint>,
    pub corpus: Vec<LabeledPoint>,
    pub baseline_ndcg: f64,
    pub final_ndcg: f64,
}

/// Two-component PCA over the index's unit vectors.
pub fn corpus_basis(index: &FlatIndex) -> Result<PcaBasis> {
    let rows: Vec<&[f64]> = (0..index.len()).map(|i| index.vector(i)).collect();
    pca_fit(&rows, 2)
}

fn project(basis: &PcaBasis, v: &[f64]) -> Result<[f64; 2]> {
    let p = basis.project(v)?;
    Ok([p[0], p[1]])
}

/// `inputs` must live in the same space as the trace (normalized if the optimizer
/// normalized its inputs).
pub fn export_trajectory(
    query_id: &str,
    trace: &OptimizationTrace,
    inputs: &DecompositionEmbeddings,
    index: &FlatIndex,
    row: &Judgments,
    basis: &PcaBasis,
) -> Result<TrajectoryExport> {
    if basis.n_components() < 2 {
        return Err(Error::InsufficientData("trajectory export needs two principal components".into()));
    }
    check_dim(index.dim(), basis.dim())?;
    check_dim(index.dim(), inputs.dim())?;
    for s in &trace.snapshots {
        check_dim(index.dim(), s.dim())?;
    }

    let mut gold_ids: Vec<&str> = relevant_set(row).into_iter().filter(|d| index.position(d).is_some()).collect();
    gold_ids.sort_unstable();
    if gold_ids.is_empty() {
        return Err(Error::MissingGold(query_id.to_string()));
    }

    let (initial, last) = (trace.initial(), trace.last());
    let mut gold = Vec::with_capacity(gold_ids.len());
    for id in gold_ids {
        let [x, y] = project(basis, index.vector(index.position(id).expect("filtered")))?;
        gold.push(GoldPoint {
            doc_id: id.to_string(),
            x,
            y,
            baseline_rank: index.rank_of(initial, id)?.expect("doc is indexed"),
            final_rank: index.rank_of(last, id)?.expect("doc is indexed"),
        });
    }

    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| index.ids()[a].cmp(&index.ids()[b]));
    let stride = index.len().div_ceil(CORPUS_SAMPLE).max(1);
    let corpus = order
        .iter()
        .step_by(stride)
        .map(|&i| {
            let [x, y] = project(basis, index.vector(i))?;
            Ok(LabeledPoint {
                id: index.ids()[i].clone(),
                x,
                y,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let proj_all = |vs: &[crate::vector::EmbeddingVector]| vs.iter().map(|v| project(basis, v)).collect::<Result<Vec<_>>>();
    Ok(TrajectoryExport {
        query_id: query_id.to_string(),
        trajectory: proj_all(&trace.snapshots)?,
        losses: trace.losses.clone(),
        positives: proj_all(&inputs.positives)?,
        negatives: proj_all(&inputs.negatives)?,
        gold,
        corpus,
        baseline_ndcg: ndcg_at_k(&index.search(initial, 10)?, row, 10),
        final_ndcg: ndcg_at_k(&index.search(last, 10)?, row, 10),
    })
}

impl TrajectoryExport {
    /// `step,x,y,loss` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,x,y,loss\n");
        for (i, ([x, y], loss)) in self.trajectory.iter().zip(&self.losses).enumerate() {
            let _ = writeln!(out, "{i},{x:.6},{y:.6},{loss:.6}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("exports serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub marker_radius: f64,
    pub legend: bool,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 480.0,
            margin: 36.0,
            marker_radius: 3.5,
            legend: true,
        }
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    sx: f64,
    sy: f64,
    left: f64,
    bottom: f64,
}

impl Frame {
    fn fit(export: &TrajectoryExport, style: &SvgStyle) -> Self {
        let pts = export
            .trajectory
            .iter()
            .chain(&export.positives)
            .chain(&export.negatives)
            .copied()
            .chain(export.gold.iter().map(|g| [g.x, g.y]))
            .chain(export.corpus.iter().map(|c| [c.x, c.y]));
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..2 {
            if !lo[k].is_finite() {
                (lo[k], hi[k]) = (-1.0, 1.0);
            }
            let pad = ((hi[k] - lo[k]) * 0.05).max(1e-9);
            lo[k] -= pad;
            hi[k] += pad;
        }
        let top = style.margin + if style.legend { 18.0 } else { 0.0 };
        Self {
            x0: lo[0],
            y0: lo[1],
            sx: (style.width - 2.0 * style.margin) / (hi[0] - lo[0]),
            sy: (style.height - top - style.margin) / (hi[1] - lo[1]),
            left: style.margin,
            bottom: style.height - style.margin,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (self.left + (p[0] - self.x0) * self.sx, self.bottom - (p[1] - self.y0) * self.sy)
    }
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    (0..10)
        .map(|i| {
            let rad = if i % 2 == 0 { r } else { r * 0.45 };
            let a = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
            format!("{:.2},{:.2}", cx + rad * a.cos(), cy + rad * a.sin())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Standalone SVG scatter plot: gray corpus, green triangles for positives, red crosses
/// for negatives, yellow stars for gold documents and the trajectory as connected dots.
pub fn render_svg(export: &TrajectoryExport, style: &SvgStyle) -> String {
    let f = Frame::fit(export, style);
    let r = style.marker_radius;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = style.width,
        h = style.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    s.push_str("<g class=\"corpus\" fill=\"#c8c8c8\">\n");
    for c in &export.corpus {
        let (x, y) = f.map([c.x, c.y]);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}"/>"#, r * 0.6);
    }
    s.push_str("</g>\n");

    s.push_str("<g class=\"negatives\" stroke=\"#d62728\" stroke-width=\"2\">\n");
    for &p in &export.negatives {
        let (x, y) = f.map(p);
        let _ = writeln!(
            s,
            r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        );
    }
    s.push_str("</g>\n");

    s.push_str("<g class=\"positives\" fill=\"#2ca02c\">\n");
    for &p in &export.positives {
        let (x, y) = f.map(p);
        let h = r * 1.4;
        let _ = writeln!(
            s,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
            x,
            y - h,
            x - h,
            y + h * 0.7,
            x + h,
            y + h * 0.7
        );
    }
    s.push_str("</g>\n");

    s.push_str("<g class=\"gold\" fill=\"#f2c80f\" stroke=\"#7a6400\">\n");
    for g in &export.gold {
        let (x, y) = f.map([g.x, g.y]);
        let _ = writeln!(s, r#"<polygon points="{}"/>"#, star(x, y, r * 2.6));
    }
    s.push_str("</g>\n");

    let mapped: Vec<(f64, f64)> = export.trajectory.iter().map(|&p| f.map(p)).collect();
    if mapped.len() > 1 {
        let pts: Vec<String> = mapped.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            s,
            r##"<polyline class="path" points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
            pts.join(" ")
        );
    }
    s.push_str("<g class=\"trajectory\" fill=\"#1f77b4\">\n");
    let last = mapped.len().saturating_sub(1).max(1) as f64;
    for (i, (x, y)) in mapped.iter().enumerate() {
        let opacity = 0.35 + 0.65 * i as f64 / last;
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill-opacity="{opacity:.3}"/>"#);
    }
    s.push_str("</g>\n");

    if style.legend {
        let rank = |pick: fn(&GoldPoint) -> usize| {
            export
                .gold
                .iter()
                .map(pick)
                .min()
                .map_or_else(|| "-".to_string(), |v| v.to_string())
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{} · gold rank {} → {} · nDCG@10 {:.3} → {:.3}</text>"#,
            style.margin,
            style.margin,
            escape(&export.query_id),
            rank(|g| g.baseline_rank),
            rank(|g| g.final_rank),
            export.baseline_ndcg,
            export.final_ndcg
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
