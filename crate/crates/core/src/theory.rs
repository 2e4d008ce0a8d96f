//! Numerical checks of the hubness/shrinkage results behind the
//! target-to-source mapping.
//!
//! * Squared-distance gap: for a zero-mean query `x` and two targets whose
//!   squared norms differ by `γσ` (σ² = Var‖y‖² = 2d s⁴), the expected gap
//!   `E‖x − y₂‖² − E‖x − y₁‖²` equals `√2 γ √d s²`.
//! * Shrinkage: a ridge fit satisfies `‖MA‖₂ ≤ ‖B‖₂`.
//! * Ball probabilities: with a radially decreasing density, a query placed
//!   farther from the origin at the same distance from its target is more
//!   likely to have that target as nearest neighbor.
//! * Two configurations: short queries against long targets produce more
//!   hubness than long queries against short targets.
//!
//! All Monte Carlo routines are seeded and split their work into fixed
//! chunks with independent streams, so results do not depend on threading.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};
use crate::hubness::HubnessReport;
use crate::neighbors::{pairwise_euclidean, squared_distance};
use crate::par;
use crate::regression::{hat_operator, spectral_norm, DataMatrix, Ridge};
use crate::rng::{self, StreamRng};

const CHUNK: usize = 4096;

/// Running mean/variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

    fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Splits `total` samples into fixed chunks, each drawing from its own
/// stream of `seed`, and merges the chunk moments in chunk order.
fn chunked_moments<F>(total: usize, seed: u64, sample: F) -> Moments
where
    F: Fn(&mut StreamRng) -> f64 + Sync + Send,
{
    let chunks = total.div_ceil(CHUNK);
    let partial = par::map_range(chunks, |c| {
        let mut rng = rng::stream(seed, c as u64 + 1);
        let len = CHUNK.min(total - c * CHUNK);
        let mut m = Moments::default();
        for _ in 0..len {
            m.push(sample(&mut rng));
        }
        m
    });
    partial.into_iter().fold(Moments::default(), Moments::merge)
}

fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v = standard_normal_vec(rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// `√2 · γ · √d · s²`.
pub fn delta_closed_form(gamma: f64, dim: usize, s2: f64) -> f64 {
    2f64.sqrt() * gamma * (dim as f64).sqrt() * s2
}

/// Standard deviation of `‖y‖²` for `y ~ N(0, s² I_d)`: `√(2d) s²`.
pub fn squared_norm_std(dim: usize, s2: f64) -> f64 {
    (2.0 * dim as f64).sqrt() * s2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaParams {
    pub gamma: f64,
    pub dim: usize,
    /// Component variance of the target distribution.
    pub s2: f64,
    /// Component variance of the zero-mean query distribution.
    pub query_s2: f64,
    pub num_samples: usize,
    pub seed: u64,
}

impl DeltaParams {
    pub fn new(gamma: f64, dim: usize, s2: f64) -> Self {
        DeltaParams {
            gamma,
            dim,
            s2,
            query_s2: 1.0,
            num_samples: 100_000,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || !(self.s2 > 0.0) || !(self.query_s2 > 0.0) || self.num_samples == 0 {
            return Err(Error::invalid(format!("invalid delta parameters {self:?}")));
        }
        if !self.gamma.is_finite() {
            return Err(Error::invalid("gamma must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// The two targets used by [`delta_monte_carlo`]: a shared random direction
/// with squared norms exactly `γσ` apart.
pub fn delta_targets(params: &DeltaParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    let mut rng = rng::stream(params.seed, 0);
    let dir = unit_vector(&mut rng, params.dim);
    let gap = params.gamma * squared_norm_std(params.dim, params.s2);
    let (q1, q2) = loop {
        let chi2: f64 = (0..params.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * z
            })
            .sum();
        let q1 = params.s2 * chi2;
        let q2 = q1 + gap;
        if q2 >= 0.0 {
            break (q1, q2);
        }
    };
    let y1 = dir.iter().map(|u| u * q1.sqrt()).collect();
    let y2 = dir.iter().map(|u| u * q2.sqrt()).collect();
    Ok((y1, y2))
}

/// Sample mean (and standard error) of `‖x − y₂‖² − ‖x − y₁‖²` over
/// `x ~ N(0, query_s2 · I)`.
pub fn delta_monte_carlo(params: &DeltaParams) -> Result<Estimate> {
    let (y1, y2) = delta_targets(params)?;
    let sd = params.query_s2.sqrt();
    let dim = params.dim;
    let m = chunked_moments(params.num_samples, params.seed, |rng| {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for i in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            let x = sd * z;
            d1 += (x - y1[i]) * (x - y1[i]);
            d2 += (x - y2[i]) * (x - y2[i]);
        }
        d2 - d1
    });
    Ok(Estimate {
        estimate: m.mean,
        std_error: (m.sample_variance() / m.n as f64).sqrt(),
    })
}

/// Empirical (unbiased) variance of `‖y‖²` over `y ~ N(0, s² I_d)`.
pub fn squared_norm_variance_mc(dim: usize, s2: f64, num_samples: usize, seed: u64) -> Result<f64> {
    if dim == 0 || !(s2 > 0.0) || num_samples < 2 {
        return Err(Error::invalid(format!(
            "need dim >= 1, s2 > 0, num_samples >= 2 (got {dim}, {s2}, {num_samples})"
        )));
    }
    let m = chunked_moments(num_samples, seed, |rng| {
        let mut q = 0.0;
        for _ in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            q += z * z;
        }
        s2 * q
    });
    Ok(m.sample_variance())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallExperimentParams {
    pub dim: usize,
    /// Size of the dataset `Y`.
    pub num_dataset: usize,
    /// Common distance from both queries to the chosen object.
    pub r: f64,
    pub norm1: f64,
    pub norm2: f64,
    pub num_trials: usize,
    pub seed: u64,
}

impl BallExperimentParams {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("ball experiment needs dim >= 2"));
        }
        if self.num_dataset == 0 || self.num_trials == 0 {
            return Err(Error::invalid("num_dataset and num_trials must be >= 1"));
        }
        if !(self.r > 0.0) {
            return Err(Error::invalid(format!("r must be > 0, got {}", self.r)));
        }
        if !(self.norm1 >= 0.0 && self.norm1 < self.norm2 && self.norm2.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 <= norm1 < norm2, got {} and {}",
                self.norm1, self.norm2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallOutcome {
    pub p1: f64,
    pub p2: f64,
    pub num_trials: usize,
}

impl BallOutcome {
    /// Binomial standard error of `p2 − p1` under the pooled proportion.
    pub fn pooled_std_error(&self) -> f64 {
        let p = 0.5 * (self.p1 + self.p2);
        (p * (1.0 - p) * 2.0 / self.num_trials as f64).sqrt()
    }
}

/// Standard-normal `y` conditioned on `lo <= ‖y‖ <= hi`.
struct ConditionedNorm {
    dim: usize,
    lo2: f64,
    hi2: f64,
    cdf_lo: f64,
    cdf_hi: f64,
    chi2: ChiSquared,
}

impl ConditionedNorm {
    fn new(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        let chi2 = ChiSquared::new(dim as f64).map_err(|e| Error::invalid(e.to_string()))?;
        let (lo2, hi2) = (lo * lo, hi * hi);
        let (cdf_lo, cdf_hi) = (chi2.cdf(lo2), chi2.cdf(hi2));
        if !(cdf_hi > cdf_lo) {
            return Err(Error::invalid(format!(
                "no standard-normal mass with norm in [{lo}, {hi}] at double precision"
            )));
        }
        Ok(ConditionedNorm {
            dim,
            lo2,
            hi2,
            cdf_lo,
            cdf_hi,
            chi2,
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if self.cdf_hi - self.cdf_lo >= 0.05 {
            // Plain rejection is cheap and exact here.
            loop {
                let y = standard_normal_vec(rng, self.dim);
                let q: f64 = y.iter().map(|v| v * v).sum();
                if q >= self.lo2 && q <= self.hi2 {
                    return y;
                }
            }
        }
        // Thin band: invert the χ² CDF by bisection inside the band.
        let u = self.cdf_lo + rng.random::<f64>() * (self.cdf_hi - self.cdf_lo);
        let (mut a, mut b) = (self.lo2, self.hi2);
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.chi2.cdf(mid) < u {
                a = mid;
            } else {
                b = mid;
            }
        }
        let q = 0.5 * (a + b);
        let dir = unit_vector(rng, self.dim);
        dir.into_iter().map(|v| v * q.sqrt()).collect()
    }
}

/// A point with norm `rho` at distance `r` from `y`, uniform on the
/// intersection of the two spheres. `y` must satisfy `|‖y‖ − r| <= rho <= ‖y‖ + r`.
fn point_on_sphere_intersection<R: Rng + ?Sized>(rng: &mut R, y: &[f64], rho: f64, r: f64) -> Vec<f64> {
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = y.iter().map(|v| v / ny).collect();
    let a = ((rho * rho - r * r + ny * ny) / (2.0 * ny)).clamp(-rho, rho);
    let h = (rho * rho - a * a).max(0.0).sqrt();
    // Uniform direction orthogonal to u.
    let w = loop {
        let mut g = standard_normal_vec(rng, y.len());
        let dot: f64 = g.iter().zip(&u).map(|(g, u)| g * u).sum();
        g.iter_mut().zip(&u).for_each(|(g, u)| *g -= dot * u);
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            g.iter_mut().for_each(|v| *v /= n);
            break g;
        }
    };
    u.iter().zip(&w).map(|(u, w)| a * u + h * w).collect()
}

/// One trial for one query norm: draw `Y` with its distinguished member `y`
/// conditioned on the geometry being feasible, place the query, and report
/// whether `y` is its nearest member of `Y`.
fn ball_trial<R: Rng + ?Sized>(
    rng: &mut R,
    cond: &ConditionedNorm,
    params: &BallExperimentParams,
    rho: f64,
) -> bool {
    let y = cond.sample(rng);
    let x = point_on_sphere_intersection(rng, &y, rho, params.r);
    let d_y = squared_distance(&x, &y);
    let mut other = vec![0.0; params.dim];
    for _ in 1..params.num_dataset {
        other
            .iter_mut()
            .for_each(|v| *v = StandardNormal.sample(rng));
        if squared_distance(&x, &other) < d_y {
            return false;
        }
    }
    true
}

/// Fraction of trials in which the chosen object is the nearest neighbor of
/// a query at norm `norm1` (p1) and at norm `norm2` (p2).
///
/// The object `y` is drawn uniformly from `Y`; since members are i.i.d. this
/// is the same as drawing it first. It is redrawn (as an exact conditional
/// draw) until a point with the requested norm exists at distance `r`. The
/// two queries use separate draws because no single `y` need admit both.
pub fn ball_experiment(params: &BallExperimentParams) -> Result<BallOutcome> {
    params.validate()?;
    let r = params.r;
    let band = |rho: f64| ConditionedNorm::new(params.dim, (rho - r).abs(), rho + r);
    let cond1 = band(params.norm1)?;
    let cond2 = band(params.norm2)?;
    let hits = par::map_range(params.num_trials, |t| {
        let mut rng1 = rng::stream(params.seed, 2 * t as u64);
        let mut rng2 = rng::stream(params.seed, 2 * t as u64 + 1);
        (
            ball_trial(&mut rng1, &cond1, params, params.norm1),
            ball_trial(&mut rng2, &cond2, params, params.norm2),
        )
    });
    let n = params.num_trials as f64;
    Ok(BallOutcome {
        p1: hits.iter().filter(|h| h.0).count() as f64 / n,
        p2: hits.iter().filter(|h| h.1).count() as f64 / n,
        num_trials: params.num_trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoConfigParams {
    pub dim: usize,
    /// Smaller standard deviation.
    pub s1: f64,
    /// Larger standard deviation.
    pub s2: f64,
    pub num_queries: usize,
    pub num_targets: usize,
    pub k: usize,
    pub seed: u64,
}

impl TwoConfigParams {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_queries == 0 || self.num_targets == 0 {
            return Err(Error::invalid("dim, num_queries and num_targets must be >= 1"));
        }
        if !(self.s1 > 0.0 && self.s1 <= self.s2 && self.s2.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < s1 <= s2, got {} and {}",
                self.s1, self.s2
            )));
        }
        if self.k == 0 || self.k > self.num_targets {
            return Err(Error::KOutOfRange {
                k: self.k,
                max: self.num_targets,
            });
        }
        Ok(())
    }
}

fn normal_matrix(dim: usize, n: usize, sd: f64, seed: u64, stream: u64) -> Result<DataMatrix> {
    let mut rng = rng::stream(seed, stream);
    let values: Vec<f64> = (0..dim * n)
        .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    DataMatrix::new(DMatrix::from_vec(dim, n, values))
}

/// N_k skewness for configuration (a) (queries sd `s1`, targets sd `s2`)
/// and configuration (b) (roles swapped), for one seed.
pub fn two_config_experiment(params: &TwoConfigParams) -> Result<(f64, f64)> {
    params.validate()?;
    let p = params;
    let skew = |q_sd: f64, t_sd: f64, stream: u64| -> Result<f64> {
        let queries = normal_matrix(p.dim, p.num_queries, q_sd, p.seed, stream)?;
        let targets = normal_matrix(p.dim, p.num_targets, t_sd, p.seed, stream + 1)?;
        let dist = pairwise_euclidean(&queries, &targets)?;
        Ok(HubnessReport::from_dissimilarities(&dist, p.k)?.skewness)
    };
    Ok((skew(p.s1, p.s2, 0)?, skew(p.s2, p.s1, 2)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoConfigSummary {
    pub per_seed: Vec<(f64, f64)>,
    pub mean_a: f64,
    pub mean_b: f64,
}

impl TwoConfigSummary {
    /// Seeds where configuration (b) is strictly less skewed.
    pub fn b_wins(&self) -> usize {
        self.per_seed.iter().filter(|(a, b)| b < a).count()
    }

    /// Seeds where configuration (a) is strictly less skewed.
    pub fn a_wins(&self) -> usize {
        self.per_seed.iter().filter(|(a, b)| a < b).count()
    }
}

/// Runs [`two_config_experiment`] for each seed (overriding `params.seed`).
pub fn two_config_over_seeds(params: &TwoConfigParams, seeds: &[u64]) -> Result<TwoConfigSummary> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    let per_seed = seeds
        .iter()
        .map(|&seed| two_config_experiment(&TwoConfigParams { seed, ..*params }))
        .collect::<Result<Vec<_>>>()?;
    let n = per_seed.len() as f64;
    Ok(TwoConfigSummary {
        mean_a: per_seed.iter().map(|p| p.0).sum::<f64>() / n,
        mean_b: per_seed.iter().map(|p| p.1).sum::<f64>() / n,
        per_seed,
    })
}

/// Two-sided exact sign-test p-value for `wins` successes out of `n`
/// non-tied pairs.
pub fn sign_test_p_value(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let binom = Binomial::new(0.5, n as u64).expect("valid binomial");
    let low = wins.min(n - wins) as u64;
    (2.0 * binom.cdf(low)).min(1.0)
}

/// One random instance of the shrinkage check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageCheck {
    pub in_dim: usize,
    pub out_dim: usize,
    pub num_objects: usize,
    pub lambda: f64,
    /// `‖MA‖₂`
    pub mapped_norm: f64,
    /// `‖B‖₂`
    pub response_norm: f64,
    /// `‖Aᵀ(AAᵀ + λI)⁻¹A‖₂`
    pub hat_norm: f64,
    /// `σ²/(σ² + λ)` with σ the largest singular value of `A`.
    pub hat_expected: f64,
}

impl ShrinkageCheck {
    pub fn ratio(&self) -> f64 {
        self.mapped_norm / self.response_norm
    }
}

/// Draws `A` (c × n) and `B` (d × n) with standard-normal entries, fits ridge
/// without centering and measures both sides of the shrinkage bound.
pub fn shrinkage_check(
    in_dim: usize,
    out_dim: usize,
    num_objects: usize,
    lambda: f64,
    seed: u64,
) -> Result<ShrinkageCheck> {
    let a = normal_matrix(in_dim, num_objects, 1.0, seed, 0)?;
    let b = normal_matrix(out_dim, num_objects, 1.0, seed, 1)?;
    let model = Ridge::new(lambda).without_centering().fit(&a, &b)?;
    let mapped = model.projection() * a.as_matrix();
    let sigma = spectral_norm(a.as_matrix());
    let hat = hat_operator(&a, lambda)?;
    Ok(ShrinkageCheck {
        in_dim,
        out_dim,
        num_objects,
        lambda,
        mapped_norm: spectral_norm(&mapped),
        response_norm: spectral_norm(b.as_matrix()),
        hat_norm: spectral_norm(&hat),
        hat_expected: sigma * sigma / (sigma * sigma + lambda),
    })
}

/// Random shrinkage instances with c, d ∈ [2, 30], n ∈ [5, 100] and λ
/// cycling through `lambdas`.
pub fn shrinkage_trials(num_trials: usize, lambdas: &[f64], seed: u64) -> Result<Vec<ShrinkageCheck>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("need at least one lambda"));
    }
    par::map_range(num_trials, |t| {
        let mut rng = rng::stream(seed, t as u64);
        let c = rng.random_range(2..=30);
        let d = rng.random_range(2..=30);
        let n = rng.random_range(5..=100);
        shrinkage_check(c, d, n, lambdas[t % lambdas.len()], rng::derive_seed(seed, t as u64))
    })
    .into_iter()
    .collect()
}

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub params: String,
    pub estimate: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub delta_samples: usize,
    pub gammas: Vec<f64>,
    pub dims: Vec<usize>,
    pub s2s: Vec<f64>,
    pub variance_cells: Vec<(usize, f64)>,
    pub variance_samples: usize,
    pub shrinkage_trials: usize,
    pub shrinkage_lambdas: Vec<f64>,
    pub ball: BallExperimentParams,
    pub two_config: TwoConfigParams,
    pub two_config_seeds: usize,
    /// Added to every closed-form Δ; nonzero only to exercise the failure path.
    pub closed_form_offset: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 20150907,
            delta_samples: 100_000,
            gammas: vec![0.5, 1.0, 2.0],
            dims: vec![10, 100],
            s2s: vec![0.5, 1.0, 2.0],
            variance_cells: vec![(1, 1.0), (10, 2.0), (50, 1.0)],
            variance_samples: 100_000,
            shrinkage_trials: 1000,
            shrinkage_lambdas: vec![0.0, 1e-3, 1.0, 1e3],
            ball: BallExperimentParams {
                dim: 2,
                num_dataset: 100,
                r: 0.5,
                norm1: 0.5,
                norm2: 2.5,
                num_trials: 10_000,
                seed: 0,
            },
            two_config: TwoConfigParams {
                dim: 300,
                s1: 1.0,
                s2: 2.0,
                num_queries: 1000,
                num_targets: 1000,
                k: 10,
                seed: 0,
            },
            two_config_seeds: 20,
            closed_form_offset: 0.0,
        }
    }
}

impl VerifyConfig {
    /// Same checks with smaller shrinkage and two-configuration workloads.
    pub fn quick() -> Self {
        let mut cfg = VerifyConfig::default();
        cfg.shrinkage_trials = 200;
        cfg.two_config.dim = 100;
        cfg.two_config.num_queries = 300;
        cfg.two_config.num_targets = 300;
        cfg.two_config_seeds = 5;
        cfg
    }
}

/// Runs every check. Sub-seeds are derived from `cfg.seed`.
pub fn run_verification(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut tag = 0u64;
    let mut next_seed = || {
        tag += 1;
        rng::derive_seed(cfg.seed, tag)
    };

    let mut delta_cells: Vec<(f64, usize, f64)> = vec![(0.0, 10, 1.0)];
    for &g in &cfg.gammas {
        for &d in &cfg.dims {
            for &s2 in &cfg.s2s {
                delta_cells.push((g, d, s2));
            }
        }
    }
    for (gamma, dim, s2) in delta_cells {
        let params = DeltaParams {
            gamma,
            dim,
            s2,
            query_s2: 1.0,
            num_samples: cfg.delta_samples,
            seed: next_seed(),
        };
        let est = delta_monte_carlo(&params)?;
        let reference = delta_closed_form(gamma, dim, s2) + cfg.closed_form_offset;
        let tolerance = 3.0 * est.std_error;
        checks.push(Check {
            name: "delta".into(),
            params: format!("gamma={gamma} d={dim} s2={s2} n={}", cfg.delta_samples),
            estimate: est.estimate,
            reference,
            tolerance,
            passed: (est.estimate - reference).abs() <= tolerance,
        });
    }

    for &(dim, s2) in &cfg.variance_cells {
        let var = squared_norm_variance_mc(dim, s2, cfg.variance_samples, next_seed())?;
        let reference = 2.0 * dim as f64 * s2 * s2;
        let tolerance = 0.05 * reference;
        checks.push(Check {
            name: "norm_variance".into(),
            params: format!("d={dim} s2={s2} n={}", cfg.variance_samples),
            estimate: var,
            reference,
            tolerance,
            passed: (var - reference).abs() <= tolerance,
        });
    }

    if cfg.shrinkage_trials > 0 {
        let trials = shrinkage_trials(cfg.shrinkage_trials, &cfg.shrinkage_lambdas, next_seed())?;
        let worst_ratio = trials.iter().map(ShrinkageCheck::ratio).fold(0.0, f64::max);
        checks.push(Check {
            name: "shrinkage".into(),
            params: format!("trials={} max ||MA||/||B||", trials.len()),
            estimate: worst_ratio,
            reference: 1.0,
            tolerance: 1e-10,
            passed: worst_ratio <= 1.0 + 1e-10,
        });
        let worst_hat = trials
            .iter()
            .map(|t| (t.hat_norm - t.hat_expected).abs())
            .fold(0.0, f64::max);
        checks.push(Check {
            name: "hat_norm".into(),
            params: format!("trials={} max |hat - s^2/(s^2+lambda)|", trials.len()),
            estimate: worst_hat,
            reference: 0.0,
            tolerance: 1e-8,
            passed: worst_hat <= 1e-8,
        });
    }

    let ball = ball_experiment(&BallExperimentParams {
        seed: next_seed(),
        ..cfg.ball
    })?;
    let se = ball.pooled_std_error();
    checks.push(Check {
        name: "ball".into(),
        params: format!(
            "d={} |Y|={} r={} norm1={} norm2={} trials={} p1={} p2={}",
            cfg.ball.dim, cfg.ball.num_dataset, cfg.ball.r, cfg.ball.norm1, cfg.ball.norm2,
            cfg.ball.num_trials, ball.p1, ball.p2
        ),
        estimate: ball.p2 - ball.p1,
        reference: 2.0 * se,
        tolerance: 2.0 * se,
        passed: ball.p2 - ball.p1 > 2.0 * se,
    });

    if cfg.two_config_seeds > 0 {
        let base = next_seed();
        let seeds: Vec<u64> = (0..cfg.two_config_seeds as u64)
            .map(|i| rng::derive_seed(base, i))
            .collect();
        let summary = two_config_over_seeds(&cfg.two_config, &seeds)?;
        let p = &cfg.two_config;
        checks.push(Check {
            name: "two_config".into(),
            params: format!(
                "d={} s1={} s2={} queries={} targets={} k={} seeds={} (estimate=mean skew b, reference=mean skew a)",
                p.dim, p.s1, p.s2, p.num_queries, p.num_targets, p.k, seeds.len()
            ),
            estimate: summary.mean_b,
            reference: summary.mean_a,
            tolerance: 0.0,
            passed: summary.mean_b < summary.mean_a,
        });
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_values() {
        assert_eq!(delta_closed_form(0.0, 7, 3.0), 0.0);
        assert_relative_eq!(delta_closed_form(1.0, 2, 1.0), 2.0, epsilon = 1e-15);
        assert_relative_eq!(delta_closed_form(2.0, 100, 0.5), 10.0 * 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn targets_have_prescribed_gap() {
        let p = DeltaParams {
            seed: 9,
            ..DeltaParams::new(1.5, 20, 0.7)
        };
        let (y1, y2) = delta_targets(&p).unwrap();
        let n1: f64 = y1.iter().map(|v| v * v).sum();
        let n2: f64 = y2.iter().map(|v| v * v).sum();
        assert_relative_eq!(n2 - n1, 1.5 * squared_norm_std(20, 0.7), max_relative = 1e-10);
    }

    #[test]
    fn zero_gap_gives_exact_zero() {
        let p = DeltaParams {
            num_samples: 5000,
            ..DeltaParams::new(0.0, 10, 1.0)
        };
        let e = delta_monte_carlo(&p).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn negative_gamma_resamples_until_feasible() {
        let p = DeltaParams {
            num_samples: 1000,
            ..DeltaParams::new(-1.0, 4, 1.0)
        };
        let (y1, y2) = delta_targets(&p).unwrap();
        let n2: f64 = y2.iter().map(|v| v * v).sum();
        let n1: f64 = y1.iter().map(|v| v * v).sum();
        assert!(n2 >= 0.0 && n2 < n1);
    }

    #[test]
    fn delta_matches_closed_form_within_three_se() {
        let p = DeltaParams {
            seed: 5,
            ..DeltaParams::new(1.0, 100, 1.0)
        };
        let e = delta_monte_carlo(&p).unwrap();
        let cf = delta_closed_form(1.0, 100, 1.0);
        assert!((e.estimate - cf).abs() <= 3.0 * e.std_error, "{e:?} vs {cf}");
    }

    #[test]
    fn delta_scales_with_s2() {
        // closed form: √2 · 10 · s²  →  28.28 vs 14.14
        let est = |s2| {
            delta_monte_carlo(&DeltaParams {
                seed: 11,
                ..DeltaParams::new(1.0, 100, s2)
            })
            .unwrap()
        };
        let (hi, lo) = (est(2.0), est(1.0));
        assert!((hi.estimate - 28.2843).abs() <= 3.0 * hi.std_error);
        assert!((lo.estimate - 14.1421).abs() <= 3.0 * lo.std_error);
        let ratio = hi.estimate / lo.estimate;
        assert!((ratio - 2.0).abs() < 0.25, "ratio {ratio}");
    }

    #[test]
    fn delta_rejects_bad_params() {
        assert!(delta_monte_carlo(&DeltaParams::new(1.0, 0, 1.0)).is_err());
        assert!(delta_monte_carlo(&DeltaParams::new(1.0, 3, 0.0)).is_err());
    }

    #[test]
    fn variance_of_squared_norm() {
        for (d, s2, seed) in [(1usize, 1.0, 1u64), (50, 1.0, 2), (10, 2.0, 3)] {
            let v = squared_norm_variance_mc(d, s2, 100_000, seed).unwrap();
            let expected = 2.0 * d as f64 * s2 * s2;
            assert!((v - expected).abs() <= 0.05 * expected, "d={d} s2={s2}: {v}");
        }
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..40].iter().for_each(|&x| a.push(x));
        xs[40..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert_relative_eq!(m.mean, all.mean, epsilon = 1e-12);
        assert_relative_eq!(m.m2, all.m2, epsilon = 1e-9);
    }

    #[test]
    fn sphere_intersection_point_has_norm_and_distance() {
        let mut rng = rng::stream(1, 0);
        let y = vec![1.0, 0.5, -0.3];
        let x = point_on_sphere_intersection(&mut rng, &y, 1.2, 0.4);
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(nx, 1.2, epsilon = 1e-12);
        assert_relative_eq!(squared_distance(&x, &y).sqrt(), 0.4, epsilon = 1e-12);
    }

    fn ball(num_dataset: usize, r: f64, trials: usize) -> BallExperimentParams {
        BallExperimentParams {
            dim: 2,
            num_dataset,
            r,
            norm1: 0.5,
            norm2: 2.5,
            num_trials: trials,
            seed: 3,
        }
    }

    #[test]
    fn ball_single_object_always_nearest() {
        let o = ball_experiment(&ball(1, 0.5, 200)).unwrap();
        assert_eq!((o.p1, o.p2), (1.0, 1.0));
    }

    #[test]
    fn ball_tiny_radius() {
        let o = ball_experiment(&ball(100, 1e-6, 2000)).unwrap();
        assert!(o.p1 >= 0.999 && o.p2 >= 0.999, "{o:?}");
    }

    #[test]
    fn ball_ordering() {
        let o = ball_experiment(&ball(100, 0.5, 4000)).unwrap();
        assert!(o.p2 > o.p1, "{o:?}");
    }

    #[test]
    fn ball_rejects_bad_geometry() {
        let mut p = ball(10, 0.5, 10);
        p.norm1 = 3.0;
        assert!(ball_experiment(&p).is_err());
        let mut p = ball(10, 0.5, 10);
        p.dim = 1;
        assert!(ball_experiment(&p).is_err());
    }

    fn two(s1: f64, s2: f64, k: usize) -> TwoConfigParams {
        TwoConfigParams {
            dim: 50,
            s1,
            s2,
            num_queries: 150,
            num_targets: 150,
            k,
            seed: 0,
        }
    }

    #[test]
    fn saturated_k_gives_zero_skew() {
        let (a, b) = two_config_experiment(&two(1.0, 2.0, 150)).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn equal_scales_are_indistinguishable() {
        let seeds: Vec<u64> = (0..20).collect();
        let s = two_config_over_seeds(&two(1.0, 1.0, 5), &seeds).unwrap();
        let n = s.a_wins() + s.b_wins();
        let p = sign_test_p_value(s.b_wins(), n);
        assert!(p >= 0.05, "sign test p = {p} ({} of {n})", s.b_wins());
    }

    #[test]
    fn swapped_scales_reduce_skew() {
        let seeds: Vec<u64> = (0..5).collect();
        let s = two_config_over_seeds(&two(1.0, 2.0, 10), &seeds).unwrap();
        assert!(s.mean_b < s.mean_a, "{s:?}");
    }

    #[test]
    fn two_config_validation() {
        assert!(two_config_experiment(&two(2.0, 1.0, 5)).is_err());
        assert!(two_config_experiment(&two(1.0, 2.0, 151)).is_err());
        assert!(two_config_over_seeds(&two(1.0, 2.0, 5), &[]).is_err());
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p_value(10, 20), 1.0);
        // P(X <= 2) for Bin(10, 1/2) = 56/1024, doubled
        assert_relative_eq!(sign_test_p_value(2, 10), 2.0 * 56.0 / 1024.0, epsilon = 1e-12);
        assert_relative_eq!(sign_test_p_value(8, 10), 2.0 * 56.0 / 1024.0, epsilon = 1e-12);
    }

    #[test]
    fn shrinkage_small_batch() {
        for t in shrinkage_trials(40, &[0.0, 1e-3, 1.0, 1e3], 17).unwrap() {
            assert!(t.ratio() <= 1.0 + 1e-10, "{t:?}");
            assert!((t.hat_norm - t.hat_expected).abs() <= 1e-8, "{t:?}");
        }
    }

    #[test]
    fn corrupted_closed_form_fails_verification() {
        let mut cfg = VerifyConfig::quick();
        cfg.delta_samples = 2000;
        cfg.shrinkage_trials = 0;
        cfg.two_config_seeds = 0;
        cfg.ball.num_trials = 500;
        cfg.closed_form_offset = 1.0;
        let checks = run_verification(&cfg).unwrap();
        let zero_row = &checks[0];
        assert_eq!(zero_row.estimate, 0.0);
        assert!(!zero_row.passed);
    }
}
