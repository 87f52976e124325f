#![allow(dead_code)]

use std::path::PathBuf;

use centroid_overlay::dataset::{PhenotypeMatrix, RowLabel};
use centroid_overlay::embed::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix from `(class, cells)` rows; variants are named `v0`, `v1`, ...
pub fn matrix(rows: &[(&str, Vec<u8>)]) -> PhenotypeMatrix {
    let d = rows.first().map_or(0, |r| r.1.len());
    PhenotypeMatrix::from_rows(
        rows.iter()
            .enumerate()
            .map(|(i, (c, _))| RowLabel {
                class_label: c.to_string(),
                variant_name: format!("v{i}"),
            })
            .collect(),
        (0..d).map(|j| format!("f{j}")).collect(),
        rows.iter().map(|r| r.1.clone()).collect(),
    )
    .unwrap()
}

/// Random binary matrix with `k` classes named `c0..`; every class appears.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> PhenotypeMatrix {
    let classes: Vec<String> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).map(|c| format!("c{c}")).collect();
    let rows: Vec<(&str, Vec<u8>)> = classes
        .iter()
        .map(|c| (c.as_str(), (0..d).map(|_| rng.random_range(0..2u8)).collect()))
        .collect();
    matrix(&rows)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
        .collect()
}

/// Mean silhouette width over all points, Euclidean distance in the plane.
pub fn silhouette<S: AsRef<str> + PartialEq>(points: &[Point], labels: &[S]) -> f64 {
    let n = points.len();
    let dist = |a: Point, b: Point| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
    let mut classes: Vec<&str> = Vec::new();
    for l in labels {
        if !classes.contains(&l.as_ref()) {
            classes.push(l.as_ref());
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: &str| {
            let (s, m) = (0..n)
                .filter(|&j| j != i && labels[j].as_ref() == c)
                .fold((0.0, 0usize), |(s, m), j| (s + dist(points[i], points[j]), m + 1));
            if m == 0 { None } else { Some(s / m as f64) }
        };
        let own = labels[i].as_ref();
        let Some(a) = mean_to(own) else { continue };
        let b = classes
            .iter()
            .filter(|&&c| c != own)
            .filter_map(|c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Elements of the parsed SVG whose `class` attribute contains `class`.
pub fn count_class(doc: &roxmltree::Document, tag: &str, class: &str) -> usize {
    elements(doc, tag, class).len()
}

pub fn elements<'a, 'i>(doc: &'a roxmltree::Document<'i>, tag: &str, class: &str) -> Vec<roxmltree::Node<'a, 'i>> {
    doc.descendants()
        .filter(|n| n.has_tag_name(tag))
        .filter(|n| n.attribute("class").is_some_and(|c| c.split_whitespace().any(|w| w == class)))
        .collect()
}

pub fn attr_f64(node: &roxmltree::Node, name: &str) -> f64 {
    node.attribute(name).unwrap().parse().unwrap()
}

/// The 45 × 12 synthetic three-class matrix built from the fixture files.
pub fn fixture_matrix() -> PhenotypeMatrix {
    use centroid_overlay::dataset::{build_matrix, load_variants_csv};
    use centroid_overlay::ontology::{parse_obo, CategorySet};
    let graph = parse_obo(&fixture_text("synthetic.obo")).unwrap();
    let cats = CategorySet::parse(&fixture_text("categories.tsv"), &graph).unwrap();
    let records = load_variants_csv(&fixture_text("variants.csv")).unwrap();
    build_matrix(&records, &graph, &cats, false).unwrap().0
}

/// Signature features per class in the fixture, by class order CA, CMT, HSP.
pub const SIGNATURES: [(&str, [&str; 3]); 3] = [
    ("CA", ["incoordination", "dysarthria", "nystagmus"]),
    ("CMT", ["hyporeflexia", "distal weakness", "pes cavus"]),
    ("HSP", ["hypertonia", "hyperreflexia", "spastic gait"]),
];
