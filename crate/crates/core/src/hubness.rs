//! k-occurrence counts and their skewness.
//!
//! `N_k(i)` is the number of queries whose top-k list contains target `i`.
//! A right-skewed `N_k` distribution means a few targets (hubs) dominate
//! the neighbor lists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::{DissimilarityMatrix, Ranking};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubnessReport {
    pub k: usize,
    pub counts: Vec<usize>,
    pub skewness: f64,
    pub num_queries: usize,
}

impl HubnessReport {
    pub fn from_rankings(rankings: &[Ranking], k: usize, num_targets: usize) -> Result<Self> {
        let counts = nk_counts(rankings, k, num_targets)?;
        Ok(HubnessReport {
            k,
            skewness: skewness(&counts),
            counts,
            num_queries: rankings.len(),
        })
    }

    pub fn from_dissimilarities(dist: &DissimilarityMatrix, k: usize) -> Result<Self> {
        let counts = nk_counts_from_dissimilarities(dist, k)?;
        Ok(HubnessReport {
            k,
            skewness: skewness(&counts),
            counts,
            num_queries: dist.num_queries(),
        })
    }
}

fn check_k(k: usize, num_targets: usize) -> Result<()> {
    if k == 0 || k > num_targets {
        return Err(Error::KOutOfRange { k, max: num_targets });
    }
    Ok(())
}

/// `counts[i]` = number of rankings whose first `k` entries include target `i`.
pub fn nk_counts(rankings: &[Ranking], k: usize, num_targets: usize) -> Result<Vec<usize>> {
    check_k(k, num_targets)?;
    if rankings.is_empty() {
        return Err(Error::invalid("N_k counts need at least one ranking"));
    }
    let mut counts = vec![0usize; num_targets];
    for r in rankings {
        if r.len() != num_targets {
            return Err(Error::DimensionMismatch {
                context: "ranking length",
                expected: num_targets,
                found: r.len(),
            });
        }
        for j in r.top_k(k) {
            counts[j] += 1;
        }
    }
    Ok(counts)
}

/// Same counts as ranking every row and calling [`nk_counts`], computed with
/// a partial selection per row. Ties are resolved by ascending target index.
pub fn nk_counts_from_dissimilarities(dist: &DissimilarityMatrix, k: usize) -> Result<Vec<usize>> {
    let nt = dist.num_targets();
    check_k(k, nt)?;
    let top: Vec<Vec<usize>> = par::map_range(dist.num_queries(), |i| {
        let row = dist.row(i);
        let mut idx: Vec<usize> = (0..nt).collect();
        if k < nt {
            idx.select_nth_unstable_by(k - 1, |&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        }
        idx.truncate(k);
        idx
    });
    let mut counts = vec![0usize; nt];
    for j in top.into_iter().flatten() {
        counts[j] += 1;
    }
    Ok(counts)
}

/// Population skewness `Σ(N − mean)³/ℓ / Var^{3/2}` with `Var = Σ(N − mean)²/ℓ`.
/// Returns 0 for a constant vector (and for an empty one).
pub fn skewness(counts: &[usize]) -> f64 {
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    skewness_f64(&values)
}

pub fn skewness_f64(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(m2, m3), &v| {
        let d = v - mean;
        (m2 + d * d, m3 + d * d * d)
    });
    let var = m2 / n;
    if var <= 0.0 {
        return 0.0;
    }
    (m3 / n) / var.powf(1.5)
}
