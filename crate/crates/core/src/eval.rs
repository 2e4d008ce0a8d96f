//! Ranking metrics, λ calibration by cross-validation, and the experiment
//! runner comparing the two mapping directions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::hubness::HubnessReport;
use crate::neighbors::{self, pairwise_euclidean, rank_all, Ranking};
use crate::par;
use crate::regression::{DataMatrix, Direction, Ridge};
use crate::rng;

/// Gold target identifiers per query identifier.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAssignment(BTreeMap<String, BTreeSet<String>>);

impl GoldAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, target: impl Into<String>) {
        self.0.entry(query.into()).or_default().insert(target.into());
    }

    pub fn get(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.0.get(query)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.0.iter()
    }

    fn gold_for<'a>(&'a self, ranking: &Ranking) -> Result<&'a BTreeSet<String>> {
        self.get(&ranking.query_id)
            .ok_or_else(|| Error::MissingGold(ranking.query_id.clone()))
    }
}

impl<Q: Into<String>, T: Into<String>> FromIterator<(Q, T)> for GoldAssignment {
    fn from_iter<I: IntoIterator<Item = (Q, T)>>(iter: I) -> Self {
        let mut g = GoldAssignment::new();
        for (q, t) in iter {
            g.insert(q, t);
        }
        g
    }
}

/// Mean over gold items of (gold items at or above its rank) / rank.
pub fn average_precision(ranking: &Ranking, gold: &BTreeSet<String>) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyGold(ranking.query_id.clone()));
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (pos, id) in ranking.ids().enumerate() {
        if gold.contains(id) {
            found += 1;
            sum += found as f64 / (pos + 1) as f64;
            if found == gold.len() {
                break;
            }
        }
    }
    if found < gold.len() {
        let missing = gold
            .iter()
            .find(|g| !ranking.ids().any(|id| id == g.as_str()))
            .cloned()
            .unwrap_or_default();
        return Err(Error::UnknownGoldTarget {
            query: ranking.query_id.clone(),
            target: missing,
        });
    }
    Ok(sum / gold.len() as f64)
}

/// Reciprocal rank of the first gold item (0 when none is ranked).
pub fn reciprocal_rank(ranking: &Ranking, gold: &BTreeSet<String>) -> f64 {
    ranking
        .ids()
        .position(|id| gold.contains(id))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn mean_average_precision(rankings: &[Ranking], gold: &GoldAssignment) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::invalid("MAP over zero rankings"));
    }
    let aps = par::map_slice(rankings, |r| average_precision(r, gold.gold_for(r)?))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&aps))
}

pub fn mean_reciprocal_rank(rankings: &[Ranking], gold: &GoldAssignment) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::invalid("MRR over zero rankings"));
    }
    let rrs = rankings
        .iter()
        .map(|r| Ok(reciprocal_rank(r, gold.gold_for(r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&rrs))
}

/// How top-k hits are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Over queries.
    #[default]
    Micro,
    /// Per gold class first, then over classes.
    Macro,
}

/// Fraction of queries whose top-k list contains a gold target.
pub fn top_k_accuracy(rankings: &[Ranking], gold: &GoldAssignment, k: usize) -> Result<f64> {
    top_k_accuracy_with(rankings, gold, k, Averaging::Micro)
}

pub fn top_k_accuracy_with(
    rankings: &[Ranking],
    gold: &GoldAssignment,
    k: usize,
    averaging: Averaging,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::KOutOfRange { k, max: usize::MAX });
    }
    if rankings.is_empty() {
        return Err(Error::invalid("accuracy over zero rankings"));
    }
    let mut per_class: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut hits = 0usize;
    for r in rankings {
        let g = gold.gold_for(r)?;
        let hit = r.ids().take(k).any(|id| g.contains(id));
        hits += usize::from(hit);
        for class in g {
            let e = per_class.entry(class.as_str()).or_default();
            e.0 += usize::from(hit);
            e.1 += 1;
        }
    }
    Ok(match averaging {
        Averaging::Micro => hits as f64 / rankings.len() as f64,
        Averaging::Macro => {
            let rates: Vec<f64> = per_class.values().map(|&(h, n)| h as f64 / n as f64).collect();
            mean(&rates)
        }
    })
}

/// The evaluation view of a paired dataset: unique source objects as
/// queries, unique target objects as the candidate vocabulary.
#[derive(Debug, Clone)]
pub struct ZslTask {
    pub query_ids: Vec<String>,
    pub queries: DataMatrix,
    pub target_ids: Vec<String>,
    pub targets: DataMatrix,
    pub gold: GoldAssignment,
}

impl ZslTask {
    pub fn from_dataset(ds: &PairedDataset) -> Result<Self> {
        fn first_occurrences(ids: &[String]) -> (Vec<String>, Vec<usize>) {
            let mut seen = HashMap::new();
            let mut names = Vec::new();
            let mut cols = Vec::new();
            for (j, id) in ids.iter().enumerate() {
                if seen.insert(id.as_str(), j).is_none() {
                    names.push(id.clone());
                    cols.push(j);
                }
            }
            (names, cols)
        }
        let (query_ids, qcols) = first_occurrences(ds.source_ids());
        let (target_ids, tcols) = first_occurrences(ds.target_ids());
        let gold = ds
            .source_ids()
            .iter()
            .zip(ds.target_ids())
            .map(|(s, t)| (s.clone(), t.clone()))
            .collect();
        Ok(ZslTask {
            queries: ds.source().select_columns(&qcols)?,
            targets: ds.target().select_columns(&tcols)?,
            query_ids,
            target_ids,
            gold,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Euclidean,
    Nicdm,
}

/// A mapping direction plus the dissimilarity used for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub direction: Direction,
    pub measure: Measure,
}

impl MethodSpec {
    pub const RIDGE_XY: MethodSpec = MethodSpec {
        direction: Direction::SourceToTarget,
        measure: Measure::Euclidean,
    };
    pub const RIDGE_YX: MethodSpec = MethodSpec {
        direction: Direction::TargetToSource,
        measure: Measure::Euclidean,
    };

    pub fn with_nicdm(self) -> Self {
        MethodSpec {
            measure: Measure::Nicdm,
            ..self
        }
    }

    /// Each direction with Euclidean ranking, and with NICDM too when asked.
    pub fn expand(directions: &[Direction], nicdm: bool) -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for &direction in directions {
            let m = MethodSpec {
                direction,
                measure: Measure::Euclidean,
            };
            out.push(m);
            if nicdm {
                out.push(m.with_nicdm());
            }
        }
        out
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.direction.short_name())?;
        if self.measure == Measure::Nicdm {
            f.write_str("+nicdm")?;
        }
        Ok(())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, nicdm) = match s.trim().strip_suffix("+nicdm") {
            Some(b) => (b, true),
            None => (s.trim(), false),
        };
        let spec = match base {
            "ridge-xy" => MethodSpec::RIDGE_XY,
            "ridge-yx" => MethodSpec::RIDGE_YX,
            _ => return Err(Error::UnknownMethod(s.to_string())),
        };
        Ok(if nicdm { spec.with_nicdm() } else { spec })
    }
}

/// Fits the method on `train` and ranks `task.target_ids` for every query.
///
/// Source→target maps the queries and searches in target space;
/// target→source maps the candidate targets and searches in source space.
pub fn rank_with_method(
    train: &PairedDataset,
    task: &ZslTask,
    method: MethodSpec,
    lambda: f64,
    nicdm_k: usize,
) -> Result<Vec<Ranking>> {
    let ridge = Ridge::new(lambda).direction(method.direction);
    let dist = match method.direction {
        Direction::SourceToTarget => {
            let model = ridge.fit(train.source(), train.target())?;
            pairwise_euclidean(&model.predict(&task.queries)?, &task.targets)?
        }
        Direction::TargetToSource => {
            let model = ridge.fit(train.target(), train.source())?;
            pairwise_euclidean(&task.queries, &model.predict(&task.targets)?)?
        }
    };
    let dist = match method.measure {
        Measure::Euclidean => dist,
        Measure::Nicdm => neighbors::nicdm(&dist, nicdm_k)?,
    };
    rank_all(&dist, &task.target_ids, Some(&task.query_ids))
}

/// Default λ grid: 10⁻³ … 10³.
pub fn default_lambda_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0]
}

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    pub cv_map: f64,
    /// Mean validation MAP per (deduplicated, ascending) grid value.
    pub scores: Vec<(f64, f64)>,
}

/// Partitions pair indices into `folds` groups, keeping pairs that share a
/// target in the same fold.
fn make_folds(train: &PairedDataset, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, t) in train.target_ids().iter().enumerate() {
        groups.entry(t.as_str()).or_default().push(j);
    }
    if groups.len() < folds {
        return Err(Error::invalid(format!(
            "{} distinct targets are too few for {folds} folds",
            groups.len()
        )));
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.shuffle(&mut rng::stream(seed, 0));
    let mut out = vec![Vec::new(); folds];
    for (i, g) in groups.into_iter().enumerate() {
        out[i % folds].extend(g);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// k-fold cross-validation of λ over `grid`.
///
/// Each fold's pairs are held out; their targets are the candidate
/// vocabulary, so validation mimics ranking unseen labels. Returns the grid
/// value with the highest mean validation MAP, ties going to the larger λ.
pub fn calibrate_lambda(
    train: &PairedDataset,
    method: MethodSpec,
    grid: &[f64],
    folds: usize,
    seed: u64,
    nicdm_k: usize,
) -> Result<Calibration> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    let mut grid: Vec<f64> = grid.to_vec();
    if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("lambda grid must be non-empty and non-negative"));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let fold_idx = make_folds(train, folds, seed)?;
    let splits = fold_idx
        .iter()
        .map(|held| {
            let rest: Vec<usize> = (0..train.len()).filter(|j| held.binary_search(j).is_err()).collect();
            let val = train.subset(held)?;
            Ok((train.subset(&rest)?, ZslTask::from_dataset(&val)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_cell = par::map_range(grid.len() * folds, |cell| {
        let (li, fi) = (cell / folds, cell % folds);
        let (fit_on, task) = &splits[fi];
        let rankings = rank_with_method(fit_on, task, method, grid[li], nicdm_k)?;
        mean_average_precision(&rankings, &task.gold)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    let scores: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(li, &l)| (l, mean(&per_cell[li * folds..(li + 1) * folds])))
        .collect();
    let (lambda, cv_map) = scores
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, s| if s.1 >= best.1 { s } else { best });
    Ok(Calibration {
        lambda,
        cv_map,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    CrossValidate { grid: Vec<f64>, folds: usize, seed: u64 },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::CrossValidate {
            grid: default_lambda_grid(),
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lambda: LambdaChoice,
    pub k_list: Vec<usize>,
    pub nicdm_k: usize,
    pub averaging: Averaging,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            lambda: LambdaChoice::default(),
            k_list: vec![1, 10],
            nicdm_k: neighbors::DEFAULT_NICDM_K,
            averaging: Averaging::Micro,
        }
    }
}

/// Metrics for one method on one train/test pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub lambda: f64,
    pub cv_map: Option<f64>,
    pub map: f64,
    pub acc: BTreeMap<usize, f64>,
    /// `None` when k exceeds the candidate vocabulary.
    pub nk_skewness: BTreeMap<usize, Option<f64>>,
    pub num_queries: usize,
    pub num_targets: usize,
    pub config_digest: String,
}

/// A report together with the rankings it was computed from.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub report: EvalReport,
    pub rankings: Vec<Ranking>,
    pub task: ZslTask,
}

/// SHA-256 of a value's JSON serialization, hex encoded.
pub fn digest_json<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct DigestInput<'a> {
    config: &'a ExperimentConfig,
    methods: Vec<String>,
    train_ids: &'a [String],
    test_ids: &'a [String],
    source_dim: usize,
    target_dim: usize,
}

fn experiment_digest(
    train: &PairedDataset,
    test: &PairedDataset,
    methods: &[MethodSpec],
    cfg: &ExperimentConfig,
) -> Result<String> {
    digest_json(&DigestInput {
        config: cfg,
        methods: methods.iter().map(ToString::to_string).collect(),
        train_ids: train.ids(),
        test_ids: test.ids(),
        source_dim: train.source().row_dim(),
        target_dim: train.target().row_dim(),
    })
}

fn check_compatible(train: &PairedDataset, test: &PairedDataset) -> Result<()> {
    for (context, a, b) in [
        ("source dimension", train.source().row_dim(), test.source().row_dim()),
        ("target dimension", train.target().row_dim(), test.target().row_dim()),
    ] {
        if a != b {
            return Err(Error::DimensionMismatch {
                context,
                expected: a,
                found: b,
            });
        }
    }
    Ok(())
}

/// Calibrates (if configured), fits and evaluates one method.
pub fn run_method(
    train: &PairedDataset,
    test: &PairedDataset,
    method: MethodSpec,
    cfg: &ExperimentConfig,
    config_digest: &str,
) -> Result<MethodOutcome> {
    check_compatible(train, test)?;
    if cfg.k_list.is_empty() || cfg.k_list.contains(&0) {
        return Err(Error::invalid("k list must be non-empty and positive"));
    }
    let (lambda, cv_map) = match &cfg.lambda {
        LambdaChoice::Fixed(l) => (*l, None),
        LambdaChoice::CrossValidate { grid, folds, seed } => {
            let c = calibrate_lambda(train, method, grid, *folds, *seed, cfg.nicdm_k)?;
            (c.lambda, Some(c.cv_map))
        }
    };
    let task = ZslTask::from_dataset(test)?;
    let rankings = rank_with_method(train, &task, method, lambda, cfg.nicdm_k)?;
    let map = mean_average_precision(&rankings, &task.gold)?;
    let mut acc = BTreeMap::new();
    let mut nk_skewness = BTreeMap::new();
    let vocab = task.target_ids.len();
    for &k in &cfg.k_list {
        acc.insert(k, top_k_accuracy_with(&rankings, &task.gold, k, cfg.averaging)?);
        let skew = if k <= vocab {
            Some(HubnessReport::from_rankings(&rankings, k, vocab)?.skewness)
        } else {
            None
        };
        nk_skewness.insert(k, skew);
    }
    let report = EvalReport {
        method: method.to_string(),
        lambda,
        cv_map,
        map,
        acc,
        nk_skewness,
        num_queries: rankings.len(),
        num_targets: vocab,
        config_digest: config_digest.to_string(),
    };
    Ok(MethodOutcome {
        report,
        rankings,
        task,
    })
}

/// One report per method, in the order given.
pub fn run_experiment(
    train: &PairedDataset,
    test: &PairedDataset,
    methods: &[MethodSpec],
    cfg: &ExperimentConfig,
) -> Result<Vec<EvalReport>> {
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    let digest = experiment_digest(train, test, methods, cfg)?;
    par::map_slice(methods, |&m| run_method(train, test, m, cfg, &digest).map(|o| o.report))
        .into_iter()
        .collect()
}
