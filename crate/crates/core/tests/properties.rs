use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::sample::subsequence;

use zshub::data::{self, Embeddings, SyntheticConfig};
use zshub::eval::{self, ExperimentConfig, GoldAssignment, MethodSpec};
use zshub::hubness::{nk_counts, skewness};
use zshub::neighbors::{nicdm, pairwise_euclidean, rank_all, DissimilarityKind, DissimilarityMatrix};
use zshub::regression::{center, hat_operator, spectral_norm, DataMatrix, Ridge};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DataMatrix> {
    prop::collection::vec(-3.0..3.0f64, rows * cols)
        .prop_map(move |v| DataMatrix::new(DMatrix::from_vec(rows, cols, v)).unwrap())
}

/// (A, B) sharing a column count.
fn pair() -> impl Strategy<Value = (DataMatrix, DataMatrix)> {
    (2usize..8, 2usize..8, 3usize..20).prop_flat_map(|(c, d, n)| (matrix(c, n), matrix(d, n)))
}

fn lambda() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 1e-4..1e4f64]
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_shrinks_mapped_observations((a, b) in pair(), l in lambda()) {
        let m = Ridge::new(l).without_centering().fit(&a, &b).unwrap();
        let mapped = m.projection() * a.as_matrix();
        prop_assert!(spectral_norm(&mapped) <= spectral_norm(b.as_matrix()) * (1.0 + 1e-10));
    }

    #[test]
    fn hat_norm_matches_singular_value((a, _) in pair(), l in lambda()) {
        let s = spectral_norm(a.as_matrix());
        let hat = spectral_norm(&hat_operator(&a, l).unwrap());
        prop_assert!((hat - s * s / (s * s + l)).abs() <= 1e-8);
        prop_assert!(hat <= 1.0 + 1e-12);
    }

    #[test]
    fn projection_norm_decreases_in_lambda((a, b) in pair(), l1 in lambda(), l2 in lambda()) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let norm = |l| Ridge::new(l).without_centering().fit(&a, &b).unwrap().projection().norm();
        prop_assert!(norm(hi) <= norm(lo) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn centering_round_trip((a, b) in pair(), l in 0.1..10.0f64, shift in -5.0..5.0f64) {
        let shifted_a = DataMatrix::new(a.add_scalar(shift)).unwrap();
        let shifted_b = DataMatrix::new(b.add_scalar(-2.0 * shift)).unwrap();
        let with_centering = Ridge::new(l).fit(&shifted_a, &shifted_b).unwrap();
        let (ca, _) = center(&a);
        let (cb, _) = center(&b);
        let on_centered = Ridge::new(l).without_centering().fit(&ca, &cb).unwrap();
        let diff = (with_centering.projection() - on_centered.projection()).amax();
        prop_assert!(diff <= 1e-10, "projection diff {diff}");

        // Predicting a training column returns M·(x − mean) + mean.
        let pred = with_centering.predict(&shifted_a).unwrap();
        let mean_b = DVector::from_iterator(b.nrows(), b.row_iter().map(|r| r.mean() - 2.0 * shift));
        let expected = on_centered.projection() * ca.as_matrix();
        for j in 0..pred.ncols() {
            let col = pred.as_matrix().column(j) - &mean_b;
            prop_assert!((col - expected.column(j)).amax() <= 1e-9);
        }
    }

    #[test]
    fn neighbor_order_survives_common_scaling(q in matrix(4, 6), t in matrix(4, 9), c in 0.1..10.0f64) {
        let tid = ids("t", 9);
        let base = rank_all(&pairwise_euclidean(&q, &t).unwrap(), &tid, None).unwrap();
        let scaled = rank_all(&pairwise_euclidean(&q.scaled(c).unwrap(), &t.scaled(c).unwrap()).unwrap(), &tid, None).unwrap();
        for (r, s) in base.iter().zip(&scaled) {
            prop_assert_eq!(r.ids().collect::<Vec<_>>(), s.ids().collect::<Vec<_>>());
        }
    }

    #[test]
    fn nicdm_ignores_global_scale(q in matrix(3, 8), t in matrix(3, 10), c in 0.01..100.0f64, k in 1usize..=8) {
        let d = pairwise_euclidean(&q, &t).unwrap();
        let base = nicdm(&d, k).unwrap();
        let scaled = nicdm(&d.scaled(c).unwrap(), k).unwrap();
        for (x, y) in base.values().iter().zip(scaled.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn rankings_are_permutations(q in matrix(3, 5), t in matrix(3, 7)) {
        let tid = ids("t", 7);
        let all: BTreeSet<&str> = tid.iter().map(String::as_str).collect();
        for r in rank_all(&pairwise_euclidean(&q, &t).unwrap(), &tid, None).unwrap() {
            let seen: Vec<&str> = r.ids().collect();
            prop_assert_eq!(seen.len(), 7);
            prop_assert_eq!(seen.into_iter().collect::<BTreeSet<_>>(), all.clone());
        }
    }

    #[test]
    fn euclidean_is_a_metric(p in matrix(5, 6)) {
        let d = pairwise_euclidean(&p, &p).unwrap();
        for i in 0..6 {
            prop_assert!(d.get(i, i) <= 1e-12);
            for j in 0..6 {
                prop_assert!((d.get(i, j) - d.get(j, i)).abs() <= 1e-12);
                for k in 0..6 {
                    prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn skewness_invariances(counts in prop::collection::vec(0usize..50, 1..40), c in 1usize..20, seed in any::<u64>()) {
        let s = skewness(&counts);
        let scaled: Vec<usize> = counts.iter().map(|x| x * c).collect();
        prop_assert!((skewness(&scaled) - s).abs() <= 1e-9 * s.abs().max(1.0));
        let mut shuffled = counts.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7919) % n);
        }
        prop_assert!((skewness(&shuffled) - s).abs() <= 1e-9 * s.abs().max(1.0));
    }

    #[test]
    fn nk_counts_sum_to_k_times_queries(q in matrix(2, 7), t in matrix(2, 9), k in 1usize..=9) {
        let r = rank_all(&pairwise_euclidean(&q, &t).unwrap(), &ids("t", 9), None).unwrap();
        prop_assert_eq!(nk_counts(&r, k, 9).unwrap().iter().sum::<usize>(), k * 7);
    }

    #[test]
    fn metrics_ignore_target_relabeling(
        values in prop::collection::vec(0.0..1.0f64, 6 * 8),
        gold_choice in prop::collection::vec(0usize..8, 6),
        perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let d = DissimilarityMatrix::from_rows(6, 8, values, DissimilarityKind::Euclidean).unwrap();
        let names = ids("t", 8);
        let relabeled: Vec<String> = perm.iter().map(|&p| names[p].clone()).collect();
        let qids = ids("q", 6);
        let r1 = rank_all(&d, &names, Some(&qids)).unwrap();
        let r2 = rank_all(&d, &relabeled, Some(&qids)).unwrap();
        let g1: GoldAssignment = qids.iter().zip(&gold_choice).map(|(q, &g)| (q.clone(), names[g].clone())).collect();
        let g2: GoldAssignment = qids.iter().zip(&gold_choice).map(|(q, &g)| (q.clone(), relabeled[g].clone())).collect();
        prop_assert_eq!(eval::mean_average_precision(&r1, &g1).unwrap(), eval::mean_average_precision(&r2, &g2).unwrap());
        for k in [1, 3, 8] {
            prop_assert_eq!(eval::top_k_accuracy(&r1, &g1, k).unwrap(), eval::top_k_accuracy(&r2, &g2, k).unwrap());
        }
    }

    #[test]
    fn split_is_a_zero_shot_partition(n in 2usize..80, fraction in 0.05..0.95f64, seed in any::<u64>()) {
        let cfg = SyntheticConfig { num_pairs: n, latent_dim: 4, source_dim: 3, target_dim: 3, seed };
        let ds = data::generate_synthetic(&cfg).unwrap();
        match data::split(&ds, fraction, seed) {
            Ok((train, test)) => {
                prop_assert_eq!(train.len(), (fraction * n as f64).floor() as usize);
                prop_assert_eq!(train.len() + test.len(), n);
                let tr: BTreeSet<&String> = train.target_ids().iter().collect();
                prop_assert!(test.target_ids().iter().all(|t| !tr.contains(t)));
                let mut all: Vec<&String> = train.ids().iter().chain(test.ids()).collect();
                all.sort();
                let mut orig: Vec<&String> = ds.ids().iter().collect();
                orig.sort();
                prop_assert_eq!(all, orig);
                let again = data::split(&ds, fraction, seed).unwrap();
                prop_assert_eq!(again.0.ids(), train.ids());
            }
            Err(_) => prop_assert!((fraction * n as f64).floor() < 1.0 || (fraction * n as f64).floor() as usize >= n),
        }
    }

    #[test]
    fn embeddings_round_trip(m in matrix(4, 5), scale in -6i32..6) {
        let m = m.scaled(10f64.powi(scale)).unwrap();
        let emb = Embeddings::new(ids("w", 5), m.clone()).unwrap();
        let mut buf = Vec::new();
        data::write_embeddings(&mut buf, &emb, data::DEFAULT_SIG_DIGITS).unwrap();
        let back = data::read_embeddings(buf.as_slice(), std::path::Path::new("mem"), Some(4)).unwrap();
        prop_assert_eq!(&back.ids, &emb.ids);
        for (x, y) in back.vectors.iter().zip(m.iter()) {
            prop_assert!((x - y).abs() <= 1e-6 * y.abs());
        }
    }

    #[test]
    fn subsets_keep_columns_aligned(picked in subsequence((0..12).collect::<Vec<usize>>(), 1..12)) {
        let ds = data::generate_synthetic(&SyntheticConfig { num_pairs: 12, latent_dim: 3, source_dim: 2, target_dim: 2, seed: 5 }).unwrap();
        let sub = ds.subset(&picked).unwrap();
        for (k, &j) in picked.iter().enumerate() {
            prop_assert_eq!(&sub.ids()[k], &ds.ids()[j]);
            prop_assert_eq!(sub.source().column(k), ds.source().column(j));
        }
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (pos, i) in idx.into_iter().enumerate() {
        r[i] = pos as f64;
    }
    r
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pearson correlation between source and latent inner products over
/// 5000 random distinct pairs.
fn gram_correlation(cfg: &SyntheticConfig) -> (f64, f64) {
    let (ds, z) = data::generate_synthetic_with_latent(cfg).unwrap();
    let n = ds.len();
    let (mut gx, mut gy, mut gz) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..5000usize {
        let i = (t * 7919) % n;
        let j = (t * 104_729 + 13) % n;
        if i == j {
            continue;
        }
        gx.push(dot(ds.source().column(i), ds.source().column(j)));
        gy.push(dot(ds.target().column(i), ds.target().column(j)));
        gz.push(dot(z.column(i), z.column(j)));
    }
    (pearson(&gx, &gz), pearson(&gy, &gz))
}

/// For `x = R z` with a d × L Uniform[−1, 1] matrix, `xᵢ·xⱼ = zᵢᵀ RᵀR zⱼ`;
/// the off-diagonal noise of `RᵀR` gives `r ≈ √(d / (d + L))`.
fn predicted_gram_correlation(d: usize, latent: usize) -> f64 {
    (d as f64 / (d + latent) as f64).sqrt()
}

#[test]
fn synthetic_gram_correlation_matches_prediction() {
    for (latent, dim) in [(1000, 100), (100, 100), (400, 200)] {
        let cfg = SyntheticConfig { num_pairs: 2000, latent_dim: latent, source_dim: dim, target_dim: dim, seed: 1 };
        let (rx, ry) = gram_correlation(&cfg);
        let expected = predicted_gram_correlation(dim, latent);
        for r in [rx, ry] {
            assert!((r - expected).abs() < 0.06, "L={latent} d={dim}: r = {r}, predicted {expected}");
        }
    }
}

#[test]
fn synthetic_gram_tracks_latent_when_dims_match_latent() {
    let cfg = SyntheticConfig { num_pairs: 2000, latent_dim: 100, source_dim: 100, target_dim: 100, seed: 1 };
    let (rx, ry) = gram_correlation(&cfg);
    assert!(rx > 0.5 && ry > 0.5, "source r = {rx}, target r = {ry}");
}

/// The desk-scale configuration keeps 100 of 1000 latent dimensions, where
/// the predicted correlation is about 0.30.
#[test]
#[ignore = "known to fail: predicted r is about 0.30 at 100 of 1000 latent dimensions"]
fn synthetic_gram_tracks_latent_gram_desk_scale() {
    let (rx, ry) = gram_correlation(&SyntheticConfig::default());
    assert!(rx > 0.5 && ry > 0.5, "source r = {rx}, target r = {ry}");
}

fn projection_spearman(points: &DataMatrix, out_dim: usize, seed: u64) -> f64 {
    let n = points.num_objects();
    let projected = data::random_project(points, out_dim, seed).unwrap();
    let before = pairwise_euclidean(points, points).unwrap();
    let after = pairwise_euclidean(&projected, &projected).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            a.push(before.get(i, j));
            b.push(after.get(i, j));
        }
    }
    pearson(&ranks(&a), &ranks(&b))
}

/// 200 points in 4096 dimensions with a 20-dimensional latent structure, so
/// their pairwise distances are spread out.
#[test]
fn random_projection_preserves_distance_order() {
    let cfg = SyntheticConfig { num_pairs: 200, latent_dim: 20, source_dim: 20, target_dim: 2, seed: 3 };
    let (_, z) = data::generate_synthetic_with_latent(&cfg).unwrap();
    let points = data::project(&data::random_projection_matrix(4096, 20, 5), &z).unwrap();
    let rho = projection_spearman(&points, 500, 11);
    assert!(rho > 0.8, "spearman {rho}");
}

/// Isotropic Gaussian points: all distances lie within about 2% of each
/// other, below the distortion of a 500-dimensional projection.
#[test]
#[ignore = "known to fail: isotropic points give a rank correlation near 0.3"]
fn random_projection_preserves_distance_order_isotropic() {
    let cfg = SyntheticConfig { num_pairs: 200, latent_dim: 4096, source_dim: 4096, target_dim: 2, seed: 3 };
    let (_, points) = data::generate_synthetic_with_latent(&cfg).unwrap();
    let rho = projection_spearman(&points, 500, 11);
    assert!(rho > 0.8, "spearman {rho}");
}

#[test]
fn identity_projection_is_a_no_op() {
    let m = DataMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap();
    assert_eq!(data::project(&DMatrix::identity(3, 3), &m).unwrap(), m);
    assert_eq!(data::random_project(&m, 2, 4).unwrap(), data::random_project(&m, 2, 4).unwrap());
}

#[test]
fn calibration_picks_the_exhaustive_argmax() {
    let ds = data::generate_synthetic(&SyntheticConfig { seed: 2, ..SyntheticConfig::default() }).unwrap();
    let (train, _) = data::split(&ds, 0.8, 2).unwrap();
    let grid = [1e-2, 1.0, 1e2];
    for method in [MethodSpec::RIDGE_XY, MethodSpec::RIDGE_YX] {
        let chosen = eval::calibrate_lambda(&train, method, &grid, 5, 9, 10).unwrap();
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        for &l in &grid {
            let single = eval::calibrate_lambda(&train, method, &[l], 5, 9, 10).unwrap();
            assert_eq!(single.lambda, l);
            if single.cv_map >= best.1 {
                best = (l, single.cv_map);
            }
        }
        assert_eq!((chosen.lambda, chosen.cv_map), best, "{method}");
    }
}

#[test]
fn experiment_is_deterministic() {
    let ds = data::generate_synthetic(&SyntheticConfig { num_pairs: 300, latent_dim: 100, source_dim: 20, target_dim: 20, seed: 4 }).unwrap();
    let (train, test) = data::split(&ds, 0.8, 4).unwrap();
    let methods = MethodSpec::expand(&[zshub::regression::Direction::SourceToTarget, zshub::regression::Direction::TargetToSource], true);
    let cfg = ExperimentConfig::default();
    let a = eval::run_experiment(&train, &test, &methods, &cfg).unwrap();
    let b = eval::run_experiment(&train, &test, &methods, &cfg).unwrap();
    assert_eq!(a, b);
    for r in &a {
        assert!(r.acc[&1] <= r.acc[&10]);
        assert!((0.0..=1.0).contains(&r.map));
    }
}
