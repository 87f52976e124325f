//! Feature ranking by Shapley attribution.
//!
//! The attributed model is a nearest-centroid classifier in feature space:
//! each class is represented by its column means, an observation scores
//! `-‖z − centroid‖²` against every class and the scores pass through a
//! softmax. A coalition `S` keeps the observed values of its features and
//! replaces the rest with the global column mean, which defines the game
//! `v(S)` = probability of a given class. Shapley values of that game are
//! computed by full subset enumeration for up to [`MAX_EXACT_FEATURES`]
//! features and by Monte-Carlo permutation sampling beyond that.
//!
//! This stands in for a gradient-boosted tree classifier with TreeSHAP; the
//! attributions are used only to choose which feature centroids to plot.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::PhenotypeMatrix;

/// Largest feature count for which subsets are enumerated exhaustively.
pub const MAX_EXACT_FEATURES: usize = 20;

pub const DEFAULT_PERMUTATIONS: usize = 200;

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("need at least two classes to attribute class membership, found {0}")]
    SingleClass(usize),
    #[error("no features")]
    NoFeatures,
    #[error("exact Shapley enumeration is limited to {MAX_EXACT_FEATURES} features, got {0}; use the sampled estimator")]
    TooManyFeatures(usize),
    #[error("top_k = {top_k} exceeds the {features} available features")]
    TopKTooLarge { top_k: usize, features: usize },
    #[error("number of permutations must be at least 1")]
    NoPermutations,
    #[error("observation has {got} values, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("class index {0} out of range")]
    UnknownClass(usize),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImportanceError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    classes: Vec<String>,
    /// `class_centroids[c][j]`: mean of column `j` over rows of class `c`.
    class_centroids: Vec<Vec<f64>>,
    global_means: Vec<f64>,
}

/// Per-class and global column means of `matrix`.
pub fn fit_surrogate(matrix: &PhenotypeMatrix) -> Result<SurrogateModel> {
    let classes = matrix.classes();
    if classes.len() < 2 {
        return Err(ImportanceError::SingleClass(classes.len()));
    }
    let d = matrix.n_features();
    let mut sums = vec![vec![0.0; d]; classes.len()];
    let mut sizes = vec![0usize; classes.len()];
    let mut totals = vec![0.0; d];
    for (i, label) in matrix.row_labels().iter().enumerate() {
        let c = classes
            .iter()
            .position(|k| k == &label.class_label)
            .expect("class list built from rows");
        sizes[c] += 1;
        for (j, &v) in matrix.row(i).iter().enumerate() {
            sums[c][j] += f64::from(v);
            totals[j] += f64::from(v);
        }
    }
    let class_centroids = sums
        .into_iter()
        .zip(&sizes)
        .map(|(row, &n)| row.into_iter().map(|s| s / n as f64).collect())
        .collect();
    let n = matrix.n_rows() as f64;
    Ok(SurrogateModel {
        classes,
        class_centroids,
        global_means: totals.into_iter().map(|t| t / n).collect(),
    })
}

impl SurrogateModel {
    /// Build directly from centroids and global means.
    pub fn new(classes: Vec<String>, class_centroids: Vec<Vec<f64>>, global_means: Vec<f64>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(ImportanceError::SingleClass(classes.len()));
        }
        let d = global_means.len();
        if let Some(bad) = class_centroids.iter().find(|c| c.len() != d) {
            return Err(ImportanceError::Dimension {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(SurrogateModel {
            classes,
            class_centroids,
            global_means,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_features(&self) -> usize {
        self.global_means.len()
    }

    pub fn class_centroid(&self, class: usize) -> &[f64] {
        &self.class_centroids[class]
    }

    pub fn global_means(&self) -> &[f64] {
        &self.global_means
    }

    fn check(&self, observation: &[f64]) -> Result<()> {
        if observation.len() != self.n_features() {
            return Err(ImportanceError::Dimension {
                expected: self.n_features(),
                got: observation.len(),
            });
        }
        Ok(())
    }

    /// Class probabilities for `observation` with features outside
    /// `coalition` replaced by their global mean.
    pub fn predict_proba(&self, observation: &[f64], coalition: &[bool]) -> Result<Vec<f64>> {
        self.check(observation)?;
        if coalition.len() != self.n_features() {
            return Err(ImportanceError::Dimension {
                expected: self.n_features(),
                got: coalition.len(),
            });
        }
        let z: Vec<f64> = observation
            .iter()
            .zip(&self.global_means)
            .zip(coalition)
            .map(|((&x, &m), &keep)| if keep { x } else { m })
            .collect();
        let scores: Vec<f64> = self
            .class_centroids
            .iter()
            .map(|mu| -z.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        Ok(softmax(&scores))
    }

    /// Squared distance of the fully imputed vector to each class centroid,
    /// and the change in that distance when feature `j` takes its observed
    /// value: `deltas[j][c]`.
    fn distance_terms(&self, observation: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = self.classes.len();
        let mut base = vec![0.0; k];
        let mut deltas = vec![vec![0.0; k]; self.n_features()];
        for (c, mu) in self.class_centroids.iter().enumerate() {
            for (j, (&m, &x)) in self.global_means.iter().zip(observation).enumerate() {
                let imputed = (m - mu[j]) * (m - mu[j]);
                let observed = (x - mu[j]) * (x - mu[j]);
                base[c] += imputed;
                deltas[j][c] = observed - imputed;
            }
        }
        (base, deltas)
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn probs_from_distances(dist: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = dist.iter().map(|d| -d).collect();
    softmax(&scores)
}

/// Exact Shapley values for every class at once: `result[j][c]`.
fn exact_all_classes(model: &SurrogateModel, observation: &[f64]) -> Result<Vec<Vec<f64>>> {
    model.check(observation)?;
    let d = model.n_features();
    if d > MAX_EXACT_FEATURES {
        return Err(ImportanceError::TooManyFeatures(d));
    }
    let k = model.classes.len();
    let (base, deltas) = model.distance_terms(observation);

    // value table over all coalitions, built by adding the lowest member
    let subsets = 1usize << d;
    let mut dist = vec![0.0; subsets * k];
    let mut value = vec![0.0; subsets * k];
    dist[..k].copy_from_slice(&base);
    for mask in 1..subsets {
        let low = mask.trailing_zeros() as usize;
        let prev = mask & (mask - 1);
        for c in 0..k {
            dist[mask * k + c] = dist[prev * k + c] + deltas[low][c];
        }
    }
    for mask in 0..subsets {
        let p = probs_from_distances(&dist[mask * k..(mask + 1) * k]);
        value[mask * k..(mask + 1) * k].copy_from_slice(&p);
    }

    // weight for a coalition of size s not containing j: s!(d-s-1)!/d!
    let weights: Vec<f64> = (0..d)
        .map(|s| 1.0 / (d as f64 * binomial(d - 1, s)))
        .collect();
    let mut phi = vec![vec![0.0; k]; d];
    for (j, row) in phi.iter_mut().enumerate() {
        let bit = 1usize << j;
        for mask in (0..subsets).filter(|m| m & bit == 0) {
            let w = weights[mask.count_ones() as usize];
            let with = (mask | bit) * k;
            let without = mask * k;
            for c in 0..k {
                row[c] += w * (value[with + c] - value[without + c]);
            }
        }
    }
    Ok(phi)
}

fn binomial(n: usize, r: usize) -> f64 {
    let r = r.min(n - r);
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Monte-Carlo permutation estimate for every class at once: `result[j][c]`.
fn sampled_all_classes(
    model: &SurrogateModel,
    observation: &[f64],
    num_permutations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    model.check(observation)?;
    if num_permutations == 0 {
        return Err(ImportanceError::NoPermutations);
    }
    let d = model.n_features();
    let k = model.classes.len();
    let (base, deltas) = model.distance_terms(observation);
    let empty = probs_from_distances(&base);

    let mut order: Vec<usize> = (0..d).collect();
    let mut phi = vec![vec![0.0; k]; d];
    let mut dist = vec![0.0; k];
    for _ in 0..num_permutations {
        order.shuffle(rng);
        dist.copy_from_slice(&base);
        let mut prev = empty.clone();
        for &j in &order {
            for c in 0..k {
                dist[c] += deltas[j][c];
            }
            let next = probs_from_distances(&dist);
            for c in 0..k {
                phi[j][c] += next[c] - prev[c];
            }
            prev = next;
        }
    }
    let scale = 1.0 / num_permutations as f64;
    for row in &mut phi {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(phi)
}

fn column(phi: Vec<Vec<f64>>, class: usize) -> Vec<f64> {
    phi.into_iter().map(|row| row[class]).collect()
}

/// Exact Shapley values of `v(S) = P(class | observation restricted to S)`.
pub fn shapley_exact(model: &SurrogateModel, observation: &[f64], class: usize) -> Result<Vec<f64>> {
    if class >= model.classes.len() {
        return Err(ImportanceError::UnknownClass(class));
    }
    Ok(column(exact_all_classes(model, observation)?, class))
}

/// Permutation-sampling estimate of [`shapley_exact`]; deterministic in `seed`.
pub fn shapley_sampled(
    model: &SurrogateModel,
    observation: &[f64],
    class: usize,
    num_permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if class >= model.classes.len() {
        return Err(ImportanceError::UnknownClass(class));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(column(
        sampled_all_classes(model, observation, num_permutations, &mut rng)?,
        class,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// A feature's score is its largest per-class mean |attribution|.
    #[default]
    Max,
    Sum,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "max" => Ok(Aggregation::Max),
            "sum" => Ok(Aggregation::Sum),
            other => Err(format!("unknown aggregation `{other}` (expected max or sum)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributionMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub features: Vec<String>,
    pub classes: Vec<String>,
    /// `per_class[j][c]`: mean |attribution| of feature `j` towards class `c`.
    pub per_class: Vec<Vec<f64>>,
    pub overall: Vec<f64>,
    /// Feature indices by descending overall score; ties keep column order.
    pub ranking: Vec<usize>,
    pub top_k: usize,
    pub mode: AttributionMode,
}

/// Attribute every class probability for every observation and aggregate
/// mean absolute attributions per (feature, class).
pub fn rank_features(
    matrix: &PhenotypeMatrix,
    model: &SurrogateModel,
    num_permutations: usize,
    seed: u64,
    top_k: usize,
    aggregation: Aggregation,
) -> Result<ImportanceReport> {
    let d = matrix.n_features();
    if d == 0 {
        return Err(ImportanceError::NoFeatures);
    }
    if model.n_features() != d {
        return Err(ImportanceError::Dimension {
            expected: model.n_features(),
            got: d,
        });
    }
    if top_k > d {
        return Err(ImportanceError::TopKTooLarge { top_k, features: d });
    }
    let mode = if d <= MAX_EXACT_FEATURES {
        AttributionMode::Exact
    } else {
        AttributionMode::Sampled
    };
    let rows = matrix.rows_as_f64();
    let per_row: Vec<Vec<Vec<f64>>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, obs)| match mode {
            AttributionMode::Exact => exact_all_classes(model, obs),
            AttributionMode::Sampled => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
                sampled_all_classes(model, obs, num_permutations, &mut rng)
            }
        })
        .collect::<Result<_>>()?;

    let k = model.classes.len();
    let mut per_class = vec![vec![0.0; k]; d];
    for phi in &per_row {
        for (acc, row) in per_class.iter_mut().zip(phi) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v.abs();
            }
        }
    }
    let n = rows.len() as f64;
    for row in &mut per_class {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let overall: Vec<f64> = per_class
        .iter()
        .map(|row| match aggregation {
            Aggregation::Max => row.iter().copied().fold(0.0, f64::max),
            Aggregation::Sum => row.iter().sum(),
        })
        .collect();
    let mut ranking: Vec<usize> = (0..d).collect();
    ranking.sort_by(|&a, &b| overall[b].total_cmp(&overall[a]));

    Ok(ImportanceReport {
        features: matrix.feature_labels().to_vec(),
        classes: model.classes.clone(),
        per_class,
        overall,
        ranking,
        top_k,
        mode,
    })
}

impl ImportanceReport {
    /// Labels of the `top_k` highest-ranked features.
    pub fn top_features(&self) -> Vec<String> {
        self.ranking
            .iter()
            .take(self.top_k)
            .map(|&j| self.features[j].clone())
            .collect()
    }

    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        let j = self.features.iter().position(|f| f == feature)?;
        self.ranking.iter().position(|&r| r == j)
    }

    /// `feature,<class...>,overall`, rows in ranking order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["feature".to_string()];
        header.extend(self.classes.iter().cloned());
        header.push("overall".into());
        w.write_record(&header).map_err(csv_error)?;
        for &j in &self.ranking {
            let mut rec = vec![self.features[j].clone()];
            rec.extend(self.per_class[j].iter().map(f64::to_string));
            rec.push(self.overall[j].to_string());
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read back a report written by [`ImportanceReport::write_csv`]. The
    /// file order becomes the ranking; `top_k` is set to all features.
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(csv_error)?.clone();
        let n = header.len();
        if n < 3 || &header[0] != "feature" || &header[n - 1] != "overall" {
            return Err(ImportanceError::Csv {
                line: 1,
                message: "expected header `feature,<classes...>,overall`".into(),
            });
        }
        let classes: Vec<String> = header.iter().skip(1).take(n - 2).map(str::to_string).collect();
        let mut features = Vec::new();
        let mut per_class = Vec::new();
        let mut overall = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let nums = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>().map_err(|_| ImportanceError::Csv {
                        line,
                        message: format!("bad number `{s}`"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            features.push(rec[0].to_string());
            overall.push(nums[nums.len() - 1]);
            per_class.push(nums[..nums.len() - 1].to_vec());
        }
        let d = features.len();
        Ok(ImportanceReport {
            features,
            classes,
            per_class,
            overall,
            ranking: (0..d).collect(),
            top_k: d,
            mode: if d <= MAX_EXACT_FEATURES {
                AttributionMode::Exact
            } else {
                AttributionMode::Sampled
            },
        })
    }
}

fn csv_error(err: csv::Error) -> ImportanceError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => ImportanceError::Io(e),
        kind => ImportanceError::Csv {
            line,
            message: format!("{kind:?}"),
        },
    }
}
