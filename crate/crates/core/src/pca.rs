//! Principal component analysis for projecting embeddings to a plane.
//!
//! Small dimensions use the d×d sample covariance directly; wide, short corpora
//! (d > 512 and n < d) use the n×n Gram matrix instead.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{check_dim, dot, norm, EmbeddingVector};

const GRAM_THRESHOLD: usize = 512;

/// Centered principal axes of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: EmbeddingVector,
    pub components: Vec<EmbeddingVector>,
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Coordinates of `v - mean` along each component.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        let centered: Vec<f64> = v.iter().zip(self.mean.iter()).map(|(x, m)| x - m).collect();
        Ok(self.components.iter().map(|c| dot(&centered, c)).collect())
    }

    /// Inverse of [`project`](Self::project) for the retained components.
    pub fn reconstruct(&self, coords: &[f64]) -> Result<EmbeddingVector> {
        check_dim(self.n_components(), coords.len())?;
        let mut out = self.mean.to_vec();
        for (c, &w) in self.components.iter().zip(coords) {
            for (o, x) in out.iter_mut().zip(c.iter()) {
                *o += w * x;
            }
        }
        EmbeddingVector::new(out)
    }
}

pub fn pca_fit<V: AsRef<[f64]>>(corpus: &[V], n_components: usize) -> Result<PcaBasis> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 points, got {n}")));
    }
    let d = corpus[0].as_ref().len();
    for v in corpus {
        check_dim(d, v.as_ref().len())?;
    }
    if n_components == 0 || n_components > d.min(n) {
        return Err(Error::InsufficientData(format!(
            "n_components must be in 1..={}, got {n_components}",
            d.min(n)
        )));
    }

    let mut mean = vec![0.0; d];
    for v in corpus {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| corpus[i].as_ref()[j] - mean[j]);
    let denom = (n - 1) as f64;

    let (mut axes, variances) = if d > GRAM_THRESHOLD && n < d {
        gram_axes(&centered, denom, n_components)
    } else {
        covariance_axes(&centered, denom, n_components)
    };

    for axis in &mut axes {
        orient(axis);
    }

    Ok(PcaBasis {
        mean: EmbeddingVector::new(mean)?,
        components: axes.into_iter().map(EmbeddingVector::new).collect::<Result<_>>()?,
        explained_variance: variances,
    })
}

pub fn pca_project(basis: &PcaBasis, v: &[f64]) -> Result<Vec<f64>> {
    basis.project(v)
}

/// Eigenpairs sorted by descending eigenvalue, negatives clamped to zero.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &l)| (l.max(0.0), eig.eigenvectors.column(k).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn covariance_axes(x: &DMatrix<f64>, denom: f64, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cov = (x.transpose() * x) / denom;
    let pairs = sorted_eigen(cov);
    pairs
        .into_iter()
        .take(k)
        .map(|(l, mut v)| {
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            (v, l)
        })
        .unzip()
}

fn gram_axes(x: &DMatrix<f64>, denom: f64, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = x.ncols();
    let gram = (x * x.transpose()) / denom;
    let pairs = sorted_eigen(gram);
    let tol = pairs.first().map_or(0.0, |p| p.0) * 1e-12;

    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for (l, u) in pairs.into_iter().take(k) {
        if l <= tol {
            break;
        }
        let u = DMatrix::from_column_slice(u.len(), 1, &u);
        let mut v: Vec<f64> = (x.transpose() * u).iter().copied().collect();
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        axes.push(v);
        variances.push(l);
    }
    // Zero-variance directions: complete the basis against the standard axes.
    let mut e = 0;
    while axes.len() < k && e < d {
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for a in &axes {
                let p = dot(&v, a);
                v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            axes.push(v);
            variances.push(0.0);
        }
    }
    (axes, variances)
}

/// Flips `v` so that its largest-magnitude coordinate is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
