mod common;

use centroid_overlay::centroids::{class_centroids, feature_centroids, CentroidKind, CentroidSet};
use centroid_overlay::dataset::PhenotypeMatrix;
use centroid_overlay::embed::{Embedding, Point};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

fn embedding_for(m: &PhenotypeMatrix, coords: Vec<Point>) -> Embedding {
    Embedding {
        coords,
        row_labels: m.row_labels().to_vec(),
        loss_trace: vec![],
    }
}

fn random_case(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> (PhenotypeMatrix, Embedding) {
    let m = common::random_matrix(rng, n, d, k);
    let coords = common::random_points(rng, n, 50.0);
    let e = embedding_for(&m, coords);
    (m, e)
}

/// Brute-force group mean: for each class in first-appearance order.
fn group_mean_oracle(labels: &[&str], pts: &[Point]) -> Vec<(String, f64, f64, usize)> {
    let mut order: Vec<&str> = Vec::new();
    for l in labels {
        if !order.contains(l) {
            order.push(l);
        }
    }
    order
        .iter()
        .map(|c| {
            let idx: Vec<usize> = (0..pts.len()).filter(|&i| labels[i] == *c).collect();
            let sx: f64 = idx.iter().map(|&i| pts[i].x).sum();
            let sy: f64 = idx.iter().map(|&i| pts[i].y).sum();
            (c.to_string(), sx / idx.len() as f64, sy / idx.len() as f64, idx.len())
        })
        .collect()
}

/// Mask-and-average over rows having each feature; zero-support features skipped.
fn masked_mean_oracle(m: &PhenotypeMatrix, pts: &[Point]) -> Vec<(String, f64, f64, usize)> {
    (0..m.n_features())
        .filter_map(|j| {
            let mask: Vec<f64> = (0..m.n_rows()).map(|i| f64::from(m.cell(i, j))).collect();
            let n: f64 = mask.iter().sum();
            if n == 0.0 {
                return None;
            }
            let sx: f64 = mask.iter().zip(pts).map(|(w, p)| w * p.x).sum();
            let sy: f64 = mask.iter().zip(pts).map(|(w, p)| w * p.y).sum();
            Some((m.feature_labels()[j].clone(), sx / n, sy / n, n as usize))
        })
        .collect()
}

fn assert_matches(set: &CentroidSet, oracle: &[(String, f64, f64, usize)], tol: f64) {
    assert_eq!(set.len(), oracle.len());
    for (c, (label, x, y, count)) in set.entries.iter().zip(oracle) {
        assert_eq!(&c.label, label);
        assert_eq!(c.count, *count);
        assert!((c.x - x).abs() <= tol && (c.y - y).abs() <= tol, "{label}: ({}, {}) vs ({x}, {y})", c.x, c.y);
    }
}

#[test]
fn class_centroids_match_group_mean_oracle() {
    let mut rng = common::rng(21);
    let (m, e) = random_case(&mut rng, 12, 4, 3);
    let labels = m.class_labels();
    let set = class_centroids(&e, &labels).unwrap();
    assert!(set.entries.iter().all(|c| c.kind == CentroidKind::Class));
    assert_matches(&set, &group_mean_oracle(&labels, &e.coords), 1e-12);
}

#[test]
fn feature_centroids_match_masked_mean_oracle() {
    let mut rng = common::rng(22);
    let (m, e) = random_case(&mut rng, 10, 4, 2);
    let set = feature_centroids(&e, &m).unwrap();
    assert!(set.entries.iter().all(|c| c.kind == CentroidKind::Feature));
    assert_matches(&set, &masked_mean_oracle(&m, &e.coords), 1e-12);
}

#[test]
fn small_identity_cases() {
    let m = common::matrix(&[("A", vec![1, 1, 0]), ("A", vec![0, 1, 0]), ("S", vec![0, 1, 0])]);
    let e = embedding_for(&m, vec![Point::new(0.0, 0.0), Point::new(2.0, 2.0), Point::new(3.0, -1.0)]);
    let classes = class_centroids(&e, &m.class_labels()).unwrap();
    let a = classes.get(CentroidKind::Class, "A").unwrap();
    assert_eq!((a.x, a.y, a.count), (1.0, 1.0, 2));
    let s = classes.get(CentroidKind::Class, "S").unwrap();
    assert_eq!((s.x, s.y, s.count), (3.0, -1.0, 1));

    let features = feature_centroids(&e, &m).unwrap();
    let f0 = features.get(CentroidKind::Feature, "f0").unwrap();
    assert_eq!((f0.x, f0.y), (0.0, 0.0));
    // Present everywhere: the global mean.
    let f1 = features.get(CentroidKind::Feature, "f1").unwrap();
    assert!((f1.x - 5.0 / 3.0).abs() < 1e-15 && (f1.y - 1.0 / 3.0).abs() < 1e-15);
    // Zero support: omitted, not placed at the origin.
    assert!(features.get(CentroidKind::Feature, "f2").is_none());
}

#[test]
fn fixture_counts_follow_contract() {
    let m = common::matrix(&[("A", vec![1, 0, 0]), ("B", vec![0, 1, 0]), ("B", vec![1, 1, 0])]);
    let e = embedding_for(&m, vec![Point::new(1.0, 1.0), Point::new(2.0, 0.0), Point::new(0.0, 4.0)]);
    let set = class_centroids(&e, &m.class_labels()).unwrap().merged(feature_centroids(&e, &m).unwrap());
    assert_eq!(set.of_kind(CentroidKind::Class).count(), 2);
    assert!(set.of_kind(CentroidKind::Feature).count() <= 3);
}

#[test]
fn csv_round_trip_and_validation() {
    let mut rng = common::rng(23);
    let (m, e) = random_case(&mut rng, 15, 5, 3);
    let set = class_centroids(&e, &m.class_labels()).unwrap().merged(feature_centroids(&e, &m).unwrap());
    let mut buf = Vec::new();
    set.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("kind,label,x,y,count\n"));
    assert_eq!(CentroidSet::read_csv(&text).unwrap(), set);
    assert!(CentroidSet::read_csv("kind,label,x,y,count\nclass,A,1,1,0\n").is_err());
    assert!(CentroidSet::read_csv("kind,label,x,y,count\nclass,A,NaN,1,1\n").is_err());
    assert!(CentroidSet::read_csv("kind,label,x,y,count\nclass,A,1,1,1\nclass,A,2,2,1\n").is_err());
}

#[test]
fn misaligned_labels_are_rejected() {
    let m = common::matrix(&[("A", vec![1]), ("B", vec![0])]);
    let e = embedding_for(&m, vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]);
    assert!(class_centroids(&e, &["A"]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn mass_balance(seed in any::<u64>(), n in 2usize..40, k in 1usize..5) {
        let mut rng = common::rng(seed);
        let (m, e) = random_case(&mut rng, n.max(k), 3, k);
        let set = class_centroids(&e, &m.class_labels()).unwrap();
        let total_n = e.coords.len() as f64;
        let mean_x = e.coords.iter().map(|p| p.x).sum::<f64>() / total_n;
        let mean_y = e.coords.iter().map(|p| p.y).sum::<f64>() / total_n;
        let bx: f64 = set.entries.iter().map(|c| c.count as f64 * c.x).sum();
        let by: f64 = set.entries.iter().map(|c| c.count as f64 * c.y).sum();
        prop_assert!((bx - total_n * mean_x).abs() < 1e-9);
        prop_assert!((by - total_n * mean_y).abs() < 1e-9);
    }

    #[test]
    fn oracles_agree_on_random_fixtures(seed in any::<u64>(), n in 3usize..30, d in 1usize..7, k in 1usize..4) {
        let mut rng = common::rng(seed);
        let (m, e) = random_case(&mut rng, n.max(k), d, k);
        let labels = m.class_labels();
        assert_matches(&class_centroids(&e, &labels).unwrap(), &group_mean_oracle(&labels, &e.coords), 1e-12);
        assert_matches(&feature_centroids(&e, &m).unwrap(), &masked_mean_oracle(&m, &e.coords), 1e-12);
    }

    #[test]
    fn affine_equivariance(seed in any::<u64>(), a in 0.1f64..3.0, b in -2.0f64..2.0, tx in -100.0f64..100.0, ty in -100.0f64..100.0) {
        let mut rng = common::rng(seed);
        let (m, e) = random_case(&mut rng, 20, 4, 3);
        let map = |p: Point| Point::new(a * p.x + b * p.y + tx, -b * p.x + a * p.y + ty);
        let moved = embedding_for(&m, e.coords.iter().map(|&p| map(p)).collect());
        let labels = m.class_labels();
        for (before, after) in [
            (class_centroids(&e, &labels).unwrap(), class_centroids(&moved, &labels).unwrap()),
            (feature_centroids(&e, &m).unwrap(), feature_centroids(&moved, &m).unwrap()),
        ] {
            for (c0, c1) in before.entries.iter().zip(&after.entries) {
                let want = map(c0.point());
                prop_assert!((want.x - c1.x).abs() < 1e-9 && (want.y - c1.y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn restriction_consistency(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (m, e) = random_case(&mut rng, 16, 4, 2);
        let full = feature_centroids(&e, &m).unwrap();
        for j in 0..m.n_features() {
            let rows: Vec<usize> = (0..m.n_rows()).filter(|&i| m.cell(i, j) == 1).collect();
            if rows.is_empty() {
                continue;
            }
            let sub = PhenotypeMatrix::from_rows(
                rows.iter().map(|&i| m.row_labels()[i].clone()).collect(),
                m.feature_labels().to_vec(),
                rows.iter().map(|&i| m.row(i).to_vec()).collect(),
            ).unwrap();
            let sub_e = embedding_for(&sub, rows.iter().map(|&i| e.coords[i]).collect());
            let label = &m.feature_labels()[j];
            let a = full.get(CentroidKind::Feature, label).unwrap();
            let b = feature_centroids(&sub_e, &sub).unwrap();
            let b = b.get(CentroidKind::Feature, label).unwrap();
            prop_assert_eq!((a.x, a.y, a.count), (b.x, b.y, b.count));
        }
    }
}
