//! Paired datasets: synthetic generation, splitting, embedding-file I/O,
//! lexicon pairing and random projection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::DataMatrix;
use crate::rng;

/// Significant digits written by [`write_embeddings`] unless overridden.
pub const DEFAULT_SIG_DIGITS: usize = 9;

/// Column-aligned source/target matrices. Column `j` of both matrices is
/// one pair; `ids[j]` names the pair and `source_ids[j]`/`target_ids[j]`
/// name its two sides (these may repeat across pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    source: DataMatrix,
    target: DataMatrix,
    ids: Vec<String>,
    source_ids: Vec<String>,
    target_ids: Vec<String>,
}

impl PairedDataset {
    pub fn new(
        source: DataMatrix,
        target: DataMatrix,
        ids: Vec<String>,
        source_ids: Vec<String>,
        target_ids: Vec<String>,
    ) -> Result<Self> {
        let n = source.num_objects();
        for (context, found) in [
            ("target object count", target.num_objects()),
            ("pair id count", ids.len()),
            ("source id count", source_ids.len()),
            ("target id count", target_ids.len()),
        ] {
            if found != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    found,
                });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(PairedDataset {
            source,
            target,
            ids,
            source_ids,
            target_ids,
        })
    }

    /// Pairs whose two sides share the pair identifier.
    pub fn with_shared_ids(source: DataMatrix, target: DataMatrix, ids: Vec<String>) -> Result<Self> {
        Self::new(source, target, ids.clone(), ids.clone(), ids)
    }

    pub fn source(&self) -> &DataMatrix {
        &self.source
    }

    pub fn target(&self) -> &DataMatrix {
        &self.target
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn target_ids(&self) -> &[String] {
        &self.target_ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The pairs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pick = |v: &[String]| indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        Self::new(
            self.source.select_columns(indices)?,
            self.target.select_columns(indices)?,
            pick(&self.ids),
            pick(&self.source_ids),
            pick(&self.target_ids),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_pairs: usize,
    pub latent_dim: usize,
    pub source_dim: usize,
    pub target_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// Desk-scale default; see [`SyntheticConfig::full_scale`] for the
    /// 10000 × 3000 → 300 setup.
    fn default() -> Self {
        SyntheticConfig {
            num_pairs: 2000,
            latent_dim: 1000,
            source_dim: 100,
            target_dim: 100,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn full_scale(seed: u64) -> Self {
        SyntheticConfig {
            num_pairs: 10_000,
            latent_dim: 3000,
            source_dim: 300,
            target_dim: 300,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_pairs == 0 || self.latent_dim == 0 || self.source_dim == 0 || self.target_dim == 0 {
            return Err(Error::invalid("synthetic sizes must all be >= 1"));
        }
        if self.source_dim > self.latent_dim || self.target_dim > self.latent_dim {
            return Err(Error::invalid(format!(
                "projected dimensions ({}, {}) must not exceed the latent dimension {}",
                self.source_dim, self.target_dim, self.latent_dim
            )));
        }
        Ok(())
    }
}

/// Uniform[−1, 1] matrix of shape `rows × cols` from stream `stream`.
fn uniform_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, stream);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

/// Same as [`generate_synthetic`], also returning the latent vectors.
pub fn generate_synthetic_with_latent(cfg: &SyntheticConfig) -> Result<(PairedDataset, DataMatrix)> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, 0);
    let latent: Vec<f64> = (0..cfg.latent_dim * cfg.num_pairs)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let z = DMatrix::from_vec(cfg.latent_dim, cfg.num_pairs, latent);
    let rx = uniform_matrix(cfg.source_dim, cfg.latent_dim, cfg.seed, 1);
    let ry = uniform_matrix(cfg.target_dim, cfg.latent_dim, cfg.seed, 2);
    let source = DataMatrix::new(&rx * &z)?;
    let target = DataMatrix::new(&ry * &z)?;
    let width = cfg.num_pairs.to_string().len();
    let ids = (0..cfg.num_pairs).map(|i| format!("obj{i:0width$}")).collect();
    Ok((
        PairedDataset::with_shared_ids(source, target, ids)?,
        DataMatrix::new(z)?,
    ))
}

/// Latent `z ~ N(0, I)`; `x = R_X z`, `y = R_Y z` with Uniform[−1, 1]
/// projection matrices. Deterministic in `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<PairedDataset> {
    generate_synthetic_with_latent(cfg).map(|(ds, _)| ds)
}

/// Random partition into train/test.
///
/// Pairs are grouped by target identifier and whole groups are assigned, so
/// no test target ever appears in training. With unique targets the train
/// side has exactly `⌊fraction · n⌋` pairs.
pub fn split(ds: &PairedDataset, train_fraction: f64, seed: u64) -> Result<(PairedDataset, PairedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::DegenerateSplit(format!("need at least 2 pairs, got {n}")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, t) in ds.target_ids.iter().enumerate() {
        groups.entry(t.as_str()).or_default().push(j);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.shuffle(&mut rng::stream(seed, 0));

    let want = (train_fraction * n as f64).floor() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for g in groups {
        if train.len() < want {
            train.extend(g);
        } else {
            test.extend(g);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::DegenerateSplit(format!(
            "fraction {train_fraction} of {n} pairs leaves an empty side"
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Test,
}

impl SplitSide {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitSide::Train => "train",
            SplitSide::Test => "test",
        }
    }
}

/// Writes the `(id, split)` manifest as tab-separated text with a header.
pub fn write_manifest<W: Write>(mut w: W, train: &PairedDataset, test: &PairedDataset) -> std::io::Result<()> {
    writeln!(w, "id\tsplit")?;
    for (ds, side) in [(train, SplitSide::Train), (test, SplitSide::Test)] {
        for id in ds.ids() {
            writeln!(w, "{id}\t{}", side.as_str())?;
        }
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, SplitSide)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() || (lineno == 1 && line == "id\tsplit") {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let (id, side) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `id<TAB>split`".into()))?;
        let side = match side.trim() {
            "train" => SplitSide::Train,
            "test" => SplitSide::Test,
            other => return Err(parse_err(format!("unknown split {other:?}"))),
        };
        out.push((id.to_string(), side));
    }
    Ok(out)
}

/// Applies a manifest to a dataset. Every pair must be listed exactly once.
pub fn split_by_manifest(
    ds: &PairedDataset,
    manifest: &[(String, SplitSide)],
) -> Result<(PairedDataset, PairedDataset)> {
    let mut side_of: HashMap<&str, SplitSide> = HashMap::with_capacity(manifest.len());
    for (id, side) in manifest {
        if side_of.insert(id.as_str(), *side).is_some() {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (j, id) in ds.ids().iter().enumerate() {
        match side_of.get(id.as_str()) {
            Some(SplitSide::Train) => train.push(j),
            Some(SplitSide::Test) => test.push(j),
            None => return Err(Error::invalid(format!("pair {id:?} missing from manifest"))),
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::DegenerateSplit("manifest leaves an empty side".into()));
    }
    let test_targets: HashSet<&str> = test.iter().map(|&j| ds.target_ids()[j].as_str()).collect();
    if let Some(&j) = train.iter().find(|&&j| test_targets.contains(ds.target_ids()[j].as_str())) {
        return Err(Error::DegenerateSplit(format!(
            "target {:?} appears in both train and test",
            ds.target_ids()[j]
        )));
    }
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

/// Token-labelled vectors, one column per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub vectors: DataMatrix,
}

impl Embeddings {
    pub fn new(ids: Vec<String>, vectors: DataMatrix) -> Result<Self> {
        if ids.len() != vectors.num_objects() {
            return Err(Error::DimensionMismatch {
                context: "embedding ids",
                expected: vectors.num_objects(),
                found: ids.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Embeddings { ids, vectors })
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// Parses the word-vector text format: `token v1 v2 …` per line, with an
/// optional leading `N D` header line.
pub fn read_embeddings<R: BufRead>(reader: R, origin: &Path, expected_dim: Option<usize>) -> Result<Embeddings> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut ids = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut values = Vec::new();
    let mut dim = expected_dim;
    let mut header: Option<(usize, usize)> = None;
    let mut first = true;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && fields.len() == 2 {
            if let (Ok(n), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if let Some(e) = expected_dim {
                    if e != d {
                        return Err(err(lineno, format!("header dimension {d} != expected {e}")));
                    }
                }
                header = Some((n, d));
                dim = Some(d);
                continue;
            }
        }
        let token = fields[0];
        let row = &fields[1..];
        match dim {
            Some(d) if row.len() != d => {
                return Err(err(
                    lineno,
                    format!("token {token:?} has {} values, expected {d}", row.len()),
                ));
            }
            None => {
                if row.is_empty() {
                    return Err(err(lineno, format!("token {token:?} has no values")));
                }
                dim = Some(row.len());
            }
            _ => {}
        }
        for f in row {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("non-numeric value {f:?}")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value {f:?}")));
            }
            values.push(v);
        }
        if let Some(prev) = seen.insert(token.to_string(), lineno) {
            return Err(err(lineno, format!("duplicate token {token:?} (first on line {prev})")));
        }
        ids.push(token.to_string());
    }
    let d = dim.unwrap_or(0);
    if ids.is_empty() {
        return Err(err(0, "no embeddings found".into()));
    }
    if let Some((n, _)) = header {
        if n != ids.len() {
            return Err(err(1, format!("header declares {n} tokens, found {}", ids.len())));
        }
    }
    let vectors = DataMatrix::new(DMatrix::from_vec(d, ids.len(), values))?;
    Embeddings::new(ids, vectors)
}

pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<Embeddings> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), path, expected_dim)
}

/// Writes an `N D` header followed by one `token v1 … vD` line per column,
/// each value in scientific notation with `sig_digits` significant digits.
pub fn write_embeddings<W: Write>(mut w: W, emb: &Embeddings, sig_digits: usize) -> std::io::Result<()> {
    let m = &emb.vectors;
    let prec = sig_digits.max(1) - 1;
    writeln!(w, "{} {}", m.num_objects(), m.row_dim())?;
    for (j, id) in emb.ids.iter().enumerate() {
        write!(w, "{id}")?;
        for v in m.column(j) {
            write!(w, " {v:.prec$e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_embeddings(path: &Path, emb: &Embeddings, sig_digits: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings(&mut w, emb, sig_digits)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads `source_token target_token` lines.
pub fn load_lexicon(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [s, t] => out.push((s.to_string(), t.to_string())),
            _ => {
                return Err(Error::Parse {
                    path: PathBuf::from(path),
                    line: i + 1,
                    message: format!("expected 2 fields, found {}", fields.len()),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub dataset: PairedDataset,
    /// Lexicon entries with a token missing from either embedding set.
    pub skipped: usize,
    /// Repeated entries dropped by deduplication.
    pub duplicates_removed: usize,
}

/// One aligned column pair per resolvable lexicon entry. A source token
/// listed with several targets yields several pairs. The pair id is the
/// token itself when both sides share it, else `"source target"`; kept
/// duplicates get a `#n` suffix.
pub fn pair_by_lexicon(
    src: &Embeddings,
    tgt: &Embeddings,
    lexicon: &[(String, String)],
    dedup: bool,
) -> Result<Pairing> {
    let src_index = src.index();
    let tgt_index = tgt.index();
    let mut skipped = 0;
    let mut duplicates_removed = 0;
    let mut occurrences: HashMap<(&str, &str), usize> = HashMap::new();
    let mut cols = Vec::new();
    let mut ids = Vec::new();
    let mut source_ids = Vec::new();
    let mut target_ids = Vec::new();

    for (s, t) in lexicon {
        let (Some(&si), Some(&ti)) = (src_index.get(s.as_str()), tgt_index.get(t.as_str())) else {
            skipped += 1;
            continue;
        };
        let seen = occurrences.entry((s.as_str(), t.as_str())).or_insert(0);
        *seen += 1;
        if *seen > 1 && dedup {
            duplicates_removed += 1;
            continue;
        }
        let base = if s == t { s.clone() } else { format!("{s} {t}") };
        ids.push(if *seen > 1 { format!("{base}#{seen}") } else { base });
        source_ids.push(s.clone());
        target_ids.push(t.clone());
        cols.push((si, ti));
    }
    if cols.is_empty() {
        return Err(Error::EmptyPairing { skipped });
    }
    let (si, ti): (Vec<usize>, Vec<usize>) = cols.into_iter().unzip();
    let dataset = PairedDataset::new(
        src.vectors.select_columns(&si)?,
        tgt.vectors.select_columns(&ti)?,
        ids,
        source_ids,
        target_ids,
    )?;
    Ok(Pairing {
        dataset,
        skipped,
        duplicates_removed,
    })
}

/// Identity lexicon over tokens present in both embedding sets, in source order.
pub fn shared_token_lexicon(src: &Embeddings, tgt: &Embeddings) -> Vec<(String, String)> {
    let tgt_index = tgt.index();
    src.ids
        .iter()
        .filter(|id| tgt_index.contains_key(id.as_str()))
        .map(|id| (id.clone(), id.clone()))
        .collect()
}

/// `out_dim × in_dim` matrix with Uniform[−1, 1] entries.
pub fn random_projection_matrix(out_dim: usize, in_dim: usize, seed: u64) -> DMatrix<f64> {
    uniform_matrix(out_dim, in_dim, seed, 0)
}

/// `R · m` for a given projection `R`.
pub fn project(r: &DMatrix<f64>, m: &DataMatrix) -> Result<DataMatrix> {
    if r.ncols() != m.row_dim() {
        return Err(Error::DimensionMismatch {
            context: "projection input dimension",
            expected: r.ncols(),
            found: m.row_dim(),
        });
    }
    DataMatrix::new(r * m.as_matrix())
}

/// Projects `m` to `out_dim` rows with a seeded Uniform[−1, 1] matrix.
pub fn random_project(m: &DataMatrix, out_dim: usize, seed: u64) -> Result<DataMatrix> {
    if out_dim == 0 || out_dim > m.row_dim() {
        return Err(Error::invalid(format!(
            "output dimension {out_dim} must be in 1..={}",
            m.row_dim()
        )));
    }
    project(&random_projection_matrix(out_dim, m.row_dim(), seed), m)
}
