//! Permutation-invariant data embeddings and distances between them.
//!
//! A set of trajectory embeddings is reduced to a single point on the
//! probability simplex: sum the vectors, divide by a normalizing constant
//! `M`, and apply a temperature softmax over the feature dimension. Set
//! distances use the closed-form 1-D Wasserstein metric over the feature
//! indices treated as an ordered unit-spaced support.

use serde::{Deserialize, Serialize};

use crate::encoder::TrajectoryEmbedding;
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// Which trajectory set a data embedding summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    /// The full offline dataset.
    Original,
    /// The dataset minus one cluster.
    Complement(usize),
}

impl std::fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbeddingSource::Original => write!(f, "original"),
            EmbeddingSource::Complement(c) => write!(f, "complement_{c}"),
        }
    }
}

impl std::str::FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<EmbeddingSource> {
        if s == "original" {
            return Ok(EmbeddingSource::Original);
        }
        if let Some(id) = s.strip_prefix("complement_") {
            return Ok(EmbeddingSource::Complement(id.parse().map_err(|_| {
                Error::Config(format!("bad embedding source label {s:?}"))
            })?));
        }
        Err(Error::Config(format!("bad embedding source label {s:?}")))
    }
}

/// A point on the probability simplex summarizing a trajectory set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEmbedding {
    pub probs: Vec<f64>,
    pub source: EmbeddingSource,
}

impl DataEmbedding {
    /// All entries non-negative and summing to 1 within `1e-9`.
    pub fn check_simplex(&self) -> Result<()> {
        if self.probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Contract(format!("{} embedding leaves the simplex", self.source)));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Contract(format!(
                "{} embedding sums to {sum}, expected 1",
                self.source
            )));
        }
        Ok(())
    }
}

/// Sums the embeddings (per-dimension in sorted order so any permutation of
/// the input produces identical floating point results), divides by `M`, and
/// applies a max-subtracted softmax at temperature `t_soft`.
pub fn data_embedding<'a, I>(embs: I, m: f64, t_soft: f64, source: EmbeddingSource) -> Result<DataEmbedding>
where
    I: IntoIterator<Item = &'a TrajectoryEmbedding>,
{
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::Config(format!("normalizing factor M must be positive, got {m}")));
    }
    if !(t_soft > 0.0) || !t_soft.is_finite() {
        return Err(Error::Config(format!("softmax temperature must be positive, got {t_soft}")));
    }
    let vectors: Vec<&[f64]> = embs.into_iter().map(|e| e.vector.as_slice()).collect();
    let dim = match vectors.first() {
        Some(v) => v.len(),
        None => return Err(Error::Contract("cannot embed an empty trajectory set".into())),
    };
    for v in &vectors {
        if v.len() != dim {
            return Err(Error::Dimension { expected: dim, got: v.len() });
        }
    }

    let mut scaled = vec![0.0; dim];
    let mut column = vec![0.0; vectors.len()];
    for (j, s) in scaled.iter_mut().enumerate() {
        for (c, v) in column.iter_mut().zip(&vectors) {
            *c = v[j];
        }
        column.sort_by(f64::total_cmp);
        *s = column.iter().sum::<f64>() / m;
    }

    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scaled.iter().map(|&s| ((s - max) / t_soft).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    let out = DataEmbedding { probs, source };
    out.check_simplex()?;
    Ok(out)
}

/// 1-D Wasserstein-1 distance between two simplex points, treating
/// coordinate `j` as an ordered support with unit spacing:
/// `W = sum_j |CDF_p(j) - CDF_q(j)|`.
pub fn wasserstein_simplex(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension { expected: p.len(), got: q.len() });
    }
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for j in 0..p.len().saturating_sub(1) {
        cdf_gap += p[j] - q[j];
        total += cdf_gap.abs();
    }
    Ok(total)
}

/// Total-variation distance, `0.5 * sum_j |p_j - q_j|`. Available behind the
/// metric switch for sensitivity analysis.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension { expected: p.len(), got: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Distance used between data embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplexMetric {
    Wasserstein,
    TotalVariation,
}

impl SimplexMetric {
    pub fn distance(self, p: &DataEmbedding, q: &DataEmbedding) -> Result<f64> {
        match self {
            SimplexMetric::Wasserstein => wasserstein_simplex(&p.probs, &q.probs),
            SimplexMetric::TotalVariation => total_variation(&p.probs, &q.probs),
        }
    }
}

impl std::str::FromStr for SimplexMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<SimplexMetric> {
        match s {
            "wasserstein" => Ok(SimplexMetric::Wasserstein),
            "total_variation" => Ok(SimplexMetric::TotalVariation),
            other => Err(Error::Config(format!(
                "unknown simplex metric {other:?} (expected wasserstein or total_variation)"
            ))),
        }
    }
}

impl std::fmt::Display for SimplexMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimplexMetric::Wasserstein => write!(f, "wasserstein"),
            SimplexMetric::TotalVariation => write!(f, "total_variation"),
        }
    }
}

/// Per-cluster distances rescaled so the maximum maps to exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDistances {
    pub values: Vec<(usize, f64)>,
    /// Set when every input distance was zero and normalization degenerated
    /// to all zeros.
    pub degenerate: bool,
}

pub fn normalize_distances(w: &[(usize, f64)]) -> Result<NormalizedDistances> {
    if w.is_empty() {
        return Err(Error::Contract("no distances to normalize".into()));
    }
    if w.iter().any(|&(_, d)| d < 0.0 || !d.is_finite()) {
        return Err(Error::Contract("distances must be finite and non-negative".into()));
    }
    let max = w.iter().map(|&(_, d)| d).fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(NormalizedDistances { values: w.to_vec(), degenerate: true });
    }
    Ok(NormalizedDistances {
        values: w.iter().map(|&(id, d)| (id, d / max)).collect(),
        degenerate: false,
    })
}
