//! Exact brute-force neighbor ranking under Euclidean distance, with an
//! optional NICDM correction of the distances.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::regression::DataMatrix;

/// Default neighborhood size for the NICDM local scales.
pub const DEFAULT_NICDM_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DissimilarityKind {
    Euclidean,
    Nicdm,
}

/// Query × target dissimilarities, stored row-major (one row per query).
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    values: Vec<f64>,
    num_queries: usize,
    num_targets: usize,
    kind: DissimilarityKind,
}

impl DissimilarityMatrix {
    /// Wraps raw row-major values. Entries must be finite and non-negative.
    pub fn from_rows(
        num_queries: usize,
        num_targets: usize,
        values: Vec<f64>,
        kind: DissimilarityKind,
    ) -> Result<Self> {
        if values.len() != num_queries * num_targets {
            return Err(Error::DimensionMismatch {
                context: "dissimilarity values",
                expected: num_queries * num_targets,
                found: values.len(),
            });
        }
        if num_queries == 0 || num_targets == 0 {
            return Err(Error::invalid("dissimilarity matrix must be non-empty"));
        }
        if let Some(pos) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "dissimilarity ({}, {}) = {} is not a finite non-negative value",
                pos / num_targets,
                pos % num_targets,
                values[pos]
            )));
        }
        Ok(DissimilarityMatrix {
            values,
            num_queries,
            num_targets,
            kind,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_targets(&self) -> usize {
        self.num_targets
    }

    pub fn kind(&self) -> DissimilarityKind {
        self.kind
    }

    pub fn get(&self, query: usize, target: usize) -> f64 {
        self.values[query * self.num_targets + target]
    }

    pub fn row(&self, query: usize) -> &[f64] {
        &self.values[query * self.num_targets..(query + 1) * self.num_targets]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Multiplies every entry by `factor > 0`; the kind is kept.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::invalid(format!("scale factor must be > 0, got {factor}")));
        }
        Self::from_rows(
            self.num_queries,
            self.num_targets,
            self.values.iter().map(|v| v * factor).collect(),
            self.kind,
        )
    }
}

/// Entry (i, j) is the Euclidean distance between query column i and
/// target column j. Rows are computed in parallel.
pub fn pairwise_euclidean(queries: &DataMatrix, targets: &DataMatrix) -> Result<DissimilarityMatrix> {
    if queries.row_dim() != targets.row_dim() {
        return Err(Error::DimensionMismatch {
            context: "query/target dimension",
            expected: targets.row_dim(),
            found: queries.row_dim(),
        });
    }
    let nq = queries.num_objects();
    let nt = targets.num_objects();
    let mut values = vec![0.0; nq * nt];
    par::for_each_row(&mut values, nt, |i, row| {
        let q = queries.column(i);
        for (j, out) in row.iter_mut().enumerate() {
            *out = squared_distance(q, targets.column(j)).sqrt();
        }
    });
    Ok(DissimilarityMatrix {
        values,
        num_queries: nq,
        num_targets: nt,
        kind: DissimilarityKind::Euclidean,
    })
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean of the `k` smallest values (`k <= values.len()`).
fn mean_of_k_smallest(values: &mut [f64], k: usize) -> f64 {
    values.select_nth_unstable_by(k - 1, f64::total_cmp);
    values[..k].iter().sum::<f64>() / k as f64
}

/// Non-iterative contextual dissimilarity: `d(i,j) / sqrt(μ_i ν_j)`, where
/// `μ_i` is the mean of the `k` smallest distances in row i and `ν_j` the
/// mean of the `k` smallest in column j.
pub fn nicdm(dist: &DissimilarityMatrix, k: usize) -> Result<DissimilarityMatrix> {
    if dist.kind != DissimilarityKind::Euclidean {
        return Err(Error::invalid("NICDM expects a Euclidean distance matrix"));
    }
    let max_k = dist.num_queries.min(dist.num_targets);
    if k == 0 || k > max_k {
        return Err(Error::KOutOfRange { k, max: max_k });
    }
    let nt = dist.num_targets;
    let nq = dist.num_queries;

    let row_scale = par::map_range(nq, |i| mean_of_k_smallest(&mut dist.row(i).to_vec(), k));
    let col_scale = par::map_range(nt, |j| {
        let mut col: Vec<f64> = (0..nq).map(|i| dist.get(i, j)).collect();
        mean_of_k_smallest(&mut col, k)
    });
    if let Some(i) = row_scale.iter().position(|&s| s <= 0.0) {
        return Err(Error::DegenerateScale(format!(
            "query {i} has {k} targets at distance zero"
        )));
    }
    if let Some(j) = col_scale.iter().position(|&s| s <= 0.0) {
        return Err(Error::DegenerateScale(format!(
            "target {j} has {k} queries at distance zero"
        )));
    }

    let mut values = dist.values.clone();
    par::for_each_row(&mut values, nt, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v /= (row_scale[i] * col_scale[j]).sqrt();
        }
    });
    Ok(DissimilarityMatrix {
        values,
        num_queries: nq,
        num_targets: nt,
        kind: DissimilarityKind::Nicdm,
    })
}

/// One query's targets sorted by ascending dissimilarity (ties by index).
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    target_ids: Arc<[String]>,
    entries: Vec<(usize, f64)>,
}

impl Ranking {
    /// `(target index, dissimilarity)` pairs in rank order.
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    /// The target vocabulary this ranking indexes into.
    pub fn vocabulary(&self) -> &[String] {
        &self.target_ids
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Target identifiers in rank order.
    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|&(j, _)| self.target_ids[j].as_str())
    }

    /// Indices of the first `k` targets.
    pub fn top_k(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().take(k).map(|&(j, _)| j)
    }
}

/// Target indices of one row ordered by ascending value, ties by index.
pub(crate) fn argsort_row(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    // Stable sort keeps ascending index among equal values.
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    order
}

/// Ranks every target for each query row. Query ids default to the row
/// index when `query_ids` is `None`.
pub fn rank_all(
    dist: &DissimilarityMatrix,
    target_ids: &[String],
    query_ids: Option<&[String]>,
) -> Result<Vec<Ranking>> {
    if target_ids.len() != dist.num_targets {
        return Err(Error::DimensionMismatch {
            context: "target id count",
            expected: dist.num_targets,
            found: target_ids.len(),
        });
    }
    if let Some(q) = query_ids {
        if q.len() != dist.num_queries {
            return Err(Error::DimensionMismatch {
                context: "query id count",
                expected: dist.num_queries,
                found: q.len(),
            });
        }
    }
    let vocab: Arc<[String]> = target_ids.into();
    Ok(par::map_range(dist.num_queries, |i| {
        let row = dist.row(i);
        let entries = argsort_row(row).into_iter().map(|j| (j, row[j])).collect();
        Ranking {
            query_id: query_ids.map_or_else(|| i.to_string(), |q| q[i].clone()),
            target_ids: Arc::clone(&vocab),
            entries,
        }
    }))
}
