mod common;

use centroid_overlay::dataset::PhenotypeMatrix;
use centroid_overlay::importance::{
    fit_surrogate, rank_features, shapley_exact, shapley_sampled, Aggregation, AttributionMode, ImportanceError,
    ImportanceReport, SurrogateModel,
};
use proptest::prelude::*;
use rand::Rng;

/// `v(S)` straight from the definition: impute, score by negative squared
/// distance to each class mean, softmax.
fn value_oracle(model: &SurrogateModel, x: &[f64], keep: &[bool]) -> Vec<f64> {
    let d = x.len();
    let z: Vec<f64> = (0..d).map(|j| if keep[j] { x[j] } else { model.global_means()[j] }).collect();
    let scores: Vec<f64> = (0..model.classes().len())
        .map(|c| {
            let mu = model.class_centroid(c);
            -(0..d).map(|j| (z[j] - mu[j]).powi(2)).sum::<f64>()
        })
        .collect();
    let denom: f64 = scores.iter().map(|s| s.exp()).sum();
    scores.iter().map(|s| s.exp() / denom).collect()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// Average marginal contribution over all d! orderings.
fn shapley_oracle(model: &SurrogateModel, x: &[f64], class: usize) -> Vec<f64> {
    let d = x.len();
    let perms = permutations(&(0..d).collect::<Vec<_>>());
    let mut phi = vec![0.0; d];
    for order in &perms {
        let mut keep = vec![false; d];
        let mut prev = value_oracle(model, x, &keep)[class];
        for &j in order {
            keep[j] = true;
            let next = value_oracle(model, x, &keep)[class];
            phi[j] += next - prev;
            prev = next;
        }
    }
    phi.iter().map(|v| v / perms.len() as f64).collect()
}

fn random_model(rng: &mut impl Rng, k: usize, d: usize) -> SurrogateModel {
    SurrogateModel::new(
        (0..k).map(|c| format!("c{c}")).collect(),
        (0..k).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
        (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

fn binary_obs(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| f64::from(rng.random_range(0..2u8))).collect()
}

#[test]
fn surrogate_means_match_column_mean_oracle() {
    let mut rng = common::rng(31);
    let m = common::random_matrix(&mut rng, 12, 4, 3);
    let model = fit_surrogate(&m).unwrap();
    for (c, class) in model.classes().iter().enumerate() {
        let rows: Vec<usize> = (0..12).filter(|&i| &m.row_labels()[i].class_label == class).collect();
        for j in 0..4 {
            let mean = rows.iter().map(|&i| f64::from(m.cell(i, j))).sum::<f64>() / rows.len() as f64;
            assert!((model.class_centroid(c)[j] - mean).abs() < 1e-15);
        }
    }
    for j in 0..4 {
        let mean = (0..12).map(|i| f64::from(m.cell(i, j))).sum::<f64>() / 12.0;
        assert!((model.global_means()[j] - mean).abs() < 1e-15);
    }
}

#[test]
fn extreme_classes_have_unit_centroids() {
    let m = common::matrix(&[("A", vec![1, 1, 1]), ("A", vec![1, 1, 1]), ("B", vec![0, 0, 0])]);
    let model = fit_surrogate(&m).unwrap();
    assert_eq!(model.class_centroid(0), &[1.0, 1.0, 1.0]);
    assert_eq!(model.class_centroid(1), &[0.0, 0.0, 0.0]);
    assert!(matches!(
        fit_surrogate(&common::matrix(&[("A", vec![1]), ("A", vec![0])])),
        Err(ImportanceError::SingleClass(1))
    ));
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = common::rng(32);
    for _ in 0..20 {
        let model = random_model(&mut rng, 3, 6);
        let x = binary_obs(&mut rng, 6);
        let keep: Vec<bool> = (0..6).map(|_| rng.random_bool(0.5)).collect();
        let got = model.predict_proba(&x, &keep).unwrap();
        for (a, b) in got.iter().zip(value_oracle(&model, &x, &keep)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_shapley_matches_permutation_enumeration() {
    let mut rng = common::rng(33);
    for d in [1, 3, 5] {
        let model = random_model(&mut rng, 3, d);
        let x = binary_obs(&mut rng, d);
        for c in 0..3 {
            let got = shapley_exact(&model, &x, c).unwrap();
            for (a, b) in got.iter().zip(shapley_oracle(&model, &x, c)) {
                assert!((a - b).abs() < 1e-12, "d={d} class={c}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn efficiency_in_exact_mode() {
    let mut rng = common::rng(34);
    let model = random_model(&mut rng, 4, 4);
    let x = binary_obs(&mut rng, 4);
    for c in 0..4 {
        let phi = shapley_exact(&model, &x, c).unwrap();
        let full = value_oracle(&model, &x, &[true; 4])[c];
        let empty = value_oracle(&model, &x, &[false; 4])[c];
        assert!((phi.iter().sum::<f64>() - (full - empty)).abs() < 1e-12);
    }
}

#[test]
fn dummy_feature_gets_exact_zero() {
    let mut rng = common::rng(35);
    let model = random_model(&mut rng, 3, 5);
    let mut x = binary_obs(&mut rng, 5);
    x[2] = model.global_means()[2];
    for c in 0..3 {
        assert_eq!(shapley_exact(&model, &x, c).unwrap()[2], 0.0);
        assert_eq!(shapley_sampled(&model, &x, c, 300, 9).unwrap()[2], 0.0);
    }
}

#[test]
fn symmetric_features_share_attribution() {
    let mut rng = common::rng(36);
    let d = 5;
    let mut centroids: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let mut means: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
    for c in &mut centroids {
        c[3] = c[1];
    }
    means[3] = means[1];
    let model = SurrogateModel::new(vec!["a".into(), "b".into(), "c".into()], centroids, means).unwrap();
    let mut x = binary_obs(&mut rng, d);
    x[3] = x[1];
    for c in 0..3 {
        let phi = shapley_exact(&model, &x, c).unwrap();
        assert!((phi[1] - phi[3]).abs() < 1e-12);
    }
}

#[test]
fn sampled_converges_to_exact() {
    let mut rng = common::rng(37);
    let model = random_model(&mut rng, 3, 5);
    let x = binary_obs(&mut rng, 5);
    for c in 0..3 {
        let exact = shapley_exact(&model, &x, c).unwrap();
        let sampled = shapley_sampled(&model, &x, c, 5000, 11).unwrap();
        for (a, b) in exact.iter().zip(&sampled) {
            assert!((a - b).abs() < 0.02);
        }
        assert_eq!(sampled, shapley_sampled(&model, &x, c, 5000, 11).unwrap());
    }
}

/// Two classes of ten rows; feature 0 is the class indicator, the rest noise.
fn separating_fixture(rng: &mut impl Rng) -> PhenotypeMatrix {
    let rows: Vec<(&str, Vec<u8>)> = (0..20)
        .map(|i| {
            let class = if i < 10 { "pos" } else { "neg" };
            let mut cells = vec![u8::from(i < 10)];
            cells.extend((0..4).map(|_| rng.random_range(0..2u8)));
            (class, cells)
        })
        .collect();
    common::matrix(&rows)
}

#[test]
fn separating_feature_ranks_first() {
    let mut rng = common::rng(38);
    let m = separating_fixture(&mut rng);
    let model = fit_surrogate(&m).unwrap();
    let report = rank_features(&m, &model, 100, 1, 5, Aggregation::Max).unwrap();
    assert_eq!(report.mode, AttributionMode::Exact);
    assert_eq!(report.ranking[0], 0);

    // Cross-check the aggregated table against the enumeration oracle.
    let rows = m.rows_as_f64();
    for j in 0..5 {
        for c in 0..2 {
            let mean_abs = rows.iter().map(|x| shapley_oracle(&model, x, c)[j].abs()).sum::<f64>() / 20.0;
            assert!((report.per_class[j][c] - mean_abs).abs() < 1e-12);
        }
    }
}

#[test]
fn ranking_is_permutation_and_csv_round_trips() {
    let mut rng = common::rng(39);
    let m = common::random_matrix(&mut rng, 25, 6, 3);
    let model = fit_surrogate(&m).unwrap();
    let report = rank_features(&m, &model, 50, 2, 6, Aggregation::Sum).unwrap();
    let mut sorted = report.ranking.clone();
    sorted.sort();
    assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    for w in report.ranking.windows(2) {
        assert!(report.overall[w[0]] >= report.overall[w[1]]);
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("feature,c0,c1,c2,overall\n"));
    let back = ImportanceReport::read_csv(&text).unwrap();
    assert_eq!(back.top_features(), report.top_features());
}

#[test]
fn sampled_mode_above_twenty_features() {
    let mut rng = common::rng(40);
    let m = common::random_matrix(&mut rng, 12, 22, 2);
    let model = fit_surrogate(&m).unwrap();
    let a = rank_features(&m, &model, 30, 5, 3, Aggregation::Max).unwrap();
    let b = rank_features(&m, &model, 30, 5, 3, Aggregation::Max).unwrap();
    assert_eq!(a.mode, AttributionMode::Sampled);
    assert_eq!(a, b);
    assert!(matches!(shapley_exact(&model, &m.rows_as_f64()[0], 0), Err(ImportanceError::TooManyFeatures(22))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn efficiency_dummy_and_symmetry(seed in any::<u64>(), d in 2usize..7, k in 2usize..5) {
        let mut rng = common::rng(seed);
        let model = random_model(&mut rng, k, d);
        let x = binary_obs(&mut rng, d);
        for c in 0..k {
            let phi = shapley_exact(&model, &x, c).unwrap();
            let gap = value_oracle(&model, &x, &vec![true; d])[c] - value_oracle(&model, &x, &vec![false; d])[c];
            prop_assert!((phi.iter().sum::<f64>() - gap).abs() < 1e-12);
        }

        // Make feature 0 a dummy and feature 1 a copy of feature d-1.
        let mut centroids: Vec<Vec<f64>> = (0..k).map(|c| model.class_centroid(c).to_vec()).collect();
        let mut means = model.global_means().to_vec();
        let mut x2 = x.clone();
        x2[0] = means[0];
        if d >= 3 {
            for row in &mut centroids {
                row[1] = row[d - 1];
            }
            means[1] = means[d - 1];
            x2[1] = x2[d - 1];
        }
        let twin = SurrogateModel::new(model.classes().to_vec(), centroids, means).unwrap();
        for c in 0..k {
            let phi = shapley_exact(&twin, &x2, c).unwrap();
            prop_assert_eq!(phi[0], 0.0);
            if d >= 3 {
                prop_assert!((phi[1] - phi[d - 1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampled_efficiency_is_exact_per_permutation(seed in any::<u64>(), d in 2usize..25) {
        // Every permutation telescopes to v(full) − v(empty), so the average does too.
        let mut rng = common::rng(seed);
        let model = random_model(&mut rng, 3, d);
        let x = binary_obs(&mut rng, d);
        let phi = shapley_sampled(&model, &x, 1, 20, seed).unwrap();
        let gap = value_oracle(&model, &x, &vec![true; d])[1] - value_oracle(&model, &x, &vec![false; d])[1];
        prop_assert!((phi.iter().sum::<f64>() - gap).abs() < 1e-9);
    }
}
