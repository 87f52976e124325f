//! Exact t-SNE in two dimensions.
//!
//! Pairwise affinities are computed for every pair (O(N²) memory and time per
//! iteration), which is the right trade-off at a few hundred observations.
//! All reductions run sequentially in a fixed index order so a run is
//! bit-reproducible for a given seed and configuration.

use std::collections::HashMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{PhenotypeMatrix, RowLabel};

const PROB_FLOOR: f64 = 1e-12;
const INIT_STD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("perplexity {perplexity} must be below N - 1 = {limit}")]
    PerplexityTooLarge { perplexity: f64, limit: usize },
    #[error("invalid embedding configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite coordinates")]
    NonFiniteCoords,
    #[error("non-finite loss at iteration {iteration} (max |gradient| = {max_abs_gradient})")]
    NonFiniteLoss {
        iteration: usize,
        max_abs_gradient: f64,
    },
    #[error("coordinates missing for variant `{0}`")]
    MissingVariant(String),
    #[error("coordinates given for unknown variant `{0}`")]
    UnexpectedVariant(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn sq_dist(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Dense symmetric N×N matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "row {i} is not of length {n}");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Squared euclidean distances between all pairs of rows. On 0/1 rows this
/// equals the Hamming distance.
pub fn pairwise_sq_distances(rows: &[Vec<f64>]) -> Result<SquareMatrix> {
    let n = rows.len();
    if n < 2 {
        return Err(EmbedError::TooFewPoints { needed: 2, got: n });
    }
    let mut out = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..i {
            let d: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationStatus {
    Converged,
    /// Iteration budget exhausted; the closest precision found is returned.
    MaxIters,
    /// Every neighbor is equidistant, so the distribution is uniform for all
    /// precisions and the target perplexity cannot be met.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Gaussian precision `1 / (2σ²)`.
    pub beta: f64,
    pub probs: Vec<f64>,
    /// `2^H(probs)` with `H` in bits.
    pub perplexity: f64,
    pub status: CalibrationStatus,
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

fn gaussian_row(dist: &[f64], shift: f64, beta: f64) -> Vec<f64> {
    let mut p: Vec<f64> = dist.iter().map(|&d| (-beta * (d - shift)).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// Find the Gaussian precision whose conditional neighbor distribution over
/// `dist` (squared distances to the other N − 1 points) has the requested
/// perplexity, by bracket expansion followed by bisection.
pub fn calibrate_conditional(
    dist: &[f64],
    perplexity: f64,
    tolerance: f64,
    max_iters: usize,
) -> Result<Calibration> {
    let count = dist.len();
    if count == 0 {
        return Err(EmbedError::TooFewPoints { needed: 2, got: 1 });
    }
    if !(perplexity > 0.0) || perplexity > count as f64 {
        return Err(EmbedError::PerplexityTooLarge {
            perplexity,
            limit: count,
        });
    }
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let max = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min == 0.0 {
        let probs = vec![1.0 / count as f64; count];
        let achieved = 2f64.powf(entropy_bits(&probs));
        let status = if (achieved - perplexity).abs() <= tolerance {
            CalibrationStatus::Converged
        } else {
            CalibrationStatus::Degenerate
        };
        return Ok(Calibration {
            beta: 1.0,
            probs,
            perplexity: achieved,
            status,
        });
    }

    let mean_gap = dist.iter().map(|d| d - min).sum::<f64>() / count as f64;
    let mut beta = 1.0 / mean_gap;
    let mut lo = 0.0;
    let mut hi: Option<f64> = None;
    let mut best: Option<(f64, Calibration)> = None;

    for _ in 0..max_iters.max(1) {
        let probs = gaussian_row(dist, min, beta);
        let achieved = 2f64.powf(entropy_bits(&probs));
        let err = achieved - perplexity;
        if best.as_ref().is_none_or(|(e, _)| err.abs() < *e) {
            best = Some((
                err.abs(),
                Calibration {
                    beta,
                    probs,
                    perplexity: achieved,
                    status: CalibrationStatus::MaxIters,
                },
            ));
        }
        if err.abs() <= tolerance {
            let (_, mut cal) = best.expect("just set");
            cal.status = CalibrationStatus::Converged;
            return Ok(cal);
        }
        if err > 0.0 {
            // distribution too flat: sharpen
            lo = beta;
            beta = match hi {
                Some(h) => 0.5 * (lo + h),
                None => beta * 2.0,
            };
        } else {
            hi = Some(beta);
            beta = 0.5 * (lo + beta);
        }
    }
    Ok(best.expect("at least one iteration").1)
}

/// Optimizer and calibration settings. Defaults follow the usual exact
/// t-SNE schedule with perplexity 50.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration_factor: f64,
    pub exaggeration_iters: usize,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
    pub perplexity_tolerance: f64,
    pub calibration_max_iters: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            perplexity: 50.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration_factor: 12.0,
            exaggeration_iters: 250,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch_iter: 250,
            seed: 42,
            perplexity_tolerance: 1e-5,
            calibration_max_iters: 50,
        }
    }
}

impl EmbeddingConfig {
    /// Check the configuration against a dataset of `n` observations.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: &str| Err(EmbedError::InvalidConfig(msg.to_string()));
        if n < 4 {
            return Err(EmbedError::TooFewPoints { needed: 4, got: n });
        }
        if !(self.perplexity > 0.0) {
            return bad("perplexity must be positive");
        }
        if self.perplexity >= (n - 1) as f64 {
            return Err(EmbedError::PerplexityTooLarge {
                perplexity: self.perplexity,
                limit: n - 1,
            });
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.exaggeration_factor >= 1.0) {
            return bad("exaggeration factor must be at least 1");
        }
        if self.exaggeration_iters > self.iterations {
            return bad("exaggeration iterations exceed total iterations");
        }
        for m in [self.momentum_early, self.momentum_late] {
            if !(0.0..1.0).contains(&m) {
                return bad("momentum must lie in [0, 1)");
            }
        }
        if !(self.perplexity_tolerance > 0.0) {
            return bad("perplexity tolerance must be positive");
        }
        if self.calibration_max_iters == 0 {
            return bad("calibration iterations must be positive");
        }
        Ok(())
    }
}

/// Calibration outcome over all rows, for reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CalibrationSummary {
    pub unconverged: usize,
    pub degenerate: usize,
}

/// Symmetrized joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn joint_affinities(
    distances: &SquareMatrix,
    perplexity: f64,
    tolerance: f64,
    max_iters: usize,
) -> Result<(SquareMatrix, CalibrationSummary)> {
    let n = distances.n();
    if n < 2 {
        return Err(EmbedError::TooFewPoints { needed: 2, got: n });
    }
    let mut conditional = SquareMatrix::zeros(n);
    let mut summary = CalibrationSummary::default();
    let mut others = Vec::with_capacity(n - 1);
    for i in 0..n {
        others.clear();
        others.extend((0..n).filter(|&j| j != i).map(|j| distances.get(i, j)));
        let cal = calibrate_conditional(&others, perplexity, tolerance, max_iters)?;
        match cal.status {
            CalibrationStatus::Converged => {}
            CalibrationStatus::MaxIters => summary.unconverged += 1,
            CalibrationStatus::Degenerate => summary.degenerate += 1,
        }
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            conditional.set(i, j, cal.probs[k]);
        }
    }
    if summary.unconverged > 0 {
        log::warn!("perplexity calibration hit the iteration limit on {} rows", summary.unconverged);
    }
    if summary.degenerate > 0 {
        log::warn!("{} rows have equidistant neighbors; using uniform affinities", summary.degenerate);
    }

    let norm = 2.0 * n as f64;
    let mut p = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..i {
            let v = (conditional.get(i, j) + conditional.get(j, i)) / norm;
            p.set(i, j, v);
            p.set(j, i, v);
        }
    }
    Ok((p, summary))
}

/// Unnormalized Student-t kernel `w_ij = 1 / (1 + ‖y_i − y_j‖²)` and its
/// off-diagonal total.
struct StudentKernel {
    w: SquareMatrix,
    total: f64,
}

impl StudentKernel {
    fn new(coords: &[Point]) -> Self {
        let n = coords.len();
        let mut w = SquareMatrix::zeros(n);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..i {
                let v = 1.0 / (1.0 + coords[i].sq_dist(&coords[j]));
                w.set(i, j, v);
                w.set(j, i, v);
                total += 2.0 * v;
            }
        }
        StudentKernel { w, total }
    }

    fn kl(&self, p: &SquareMatrix) -> f64 {
        let n = p.n();
        let mut kl = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = p.get(i, j);
                let qij = (self.w.get(i, j) / self.total).max(PROB_FLOOR);
                kl += pij * (pij.max(PROB_FLOOR) / qij).ln();
            }
        }
        kl.max(0.0)
    }

    fn gradient(&self, p: &SquareMatrix, coords: &[Point], exaggeration: f64) -> Vec<Point> {
        let n = coords.len();
        let mut grad = vec![Point::new(0.0, 0.0); n];
        for (i, g) in grad.iter_mut().enumerate() {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = self.w.get(i, j);
                let coef = (exaggeration * p.get(i, j) - w / self.total) * w;
                g.x += coef * (coords[i].x - coords[j].x);
                g.y += coef * (coords[i].y - coords[j].y);
            }
            g.x *= 4.0;
            g.y *= 4.0;
        }
        grad
    }
}

fn check_inputs(p: &SquareMatrix, coords: &[Point]) -> Result<()> {
    if p.n() != coords.len() {
        return Err(EmbedError::InvalidConfig(format!(
            "affinity matrix is {}x{} but there are {} points",
            p.n(),
            p.n(),
            coords.len()
        )));
    }
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(EmbedError::NonFiniteCoords);
    }
    Ok(())
}

/// `KL(P ‖ Q)` for the Student-t similarities `Q` of `coords`, with both
/// probabilities floored at 1e-12 inside the logarithm.
pub fn kl_divergence(p: &SquareMatrix, coords: &[Point]) -> Result<f64> {
    check_inputs(p, coords)?;
    Ok(StudentKernel::new(coords).kl(p))
}

/// Analytic gradient of [`kl_divergence`] with respect to `coords`.
pub fn kl_gradient(p: &SquareMatrix, coords: &[Point]) -> Result<Vec<Point>> {
    check_inputs(p, coords)?;
    Ok(StudentKernel::new(coords).gradient(p, coords, 1.0))
}

/// Joint Student-t similarities `q_ij` of `coords`.
pub fn student_t_affinities(coords: &[Point]) -> SquareMatrix {
    let k = StudentKernel::new(coords);
    k.w.scaled(1.0 / k.total)
}

/// Coordinates aligned with matrix rows plus the per-iteration loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: Vec<Point>,
    pub row_labels: Vec<RowLabel>,
    /// KL divergence against the un-exaggerated affinities after each
    /// iteration; entry `k` belongs to iteration `k + 1`.
    pub loss_trace: Vec<f64>,
}

/// Embed the rows of `matrix` in two dimensions.
pub fn run_tsne(matrix: &PhenotypeMatrix, config: &EmbeddingConfig) -> Result<Embedding> {
    let rows = matrix.rows_as_f64();
    let (coords, loss_trace) = tsne_points(&rows, config)?;
    Ok(Embedding {
        coords,
        row_labels: matrix.row_labels().to_vec(),
        loss_trace,
    })
}

/// [`run_tsne`] on raw real-valued rows; returns coordinates and loss trace.
pub fn tsne_points(rows: &[Vec<f64>], config: &EmbeddingConfig) -> Result<(Vec<Point>, Vec<f64>)> {
    let n = rows.len();
    config.validate(n)?;
    if config.perplexity > (n - 1) as f64 / 3.0 {
        log::warn!(
            "perplexity {} is large for {} observations (more than (N - 1) / 3)",
            config.perplexity,
            n
        );
    }

    let distances = pairwise_sq_distances(rows)?;
    let (p, _) = joint_affinities(
        &distances,
        config.perplexity,
        config.perplexity_tolerance,
        config.calibration_max_iters,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut coords: Vec<Point> = (0..n)
        .map(|_| Point::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();

    let mut update = vec![Point::new(0.0, 0.0); n];
    let mut gains = vec![Point::new(1.0, 1.0); n];
    let mut kernel = StudentKernel::new(&coords);
    let mut trace = Vec::with_capacity(config.iterations);

    for iteration in 1..=config.iterations {
        let exaggeration = if iteration <= config.exaggeration_iters {
            config.exaggeration_factor
        } else {
            1.0
        };
        let momentum = if iteration <= config.momentum_switch_iter {
            config.momentum_early
        } else {
            config.momentum_late
        };
        let grad = kernel.gradient(&p, &coords, exaggeration);
        if iteration % 100 == 0 {
            debug_assert_translation_invariant(&grad);
        }

        for i in 0..n {
            let (g, u, gain) = (grad[i], &mut update[i], &mut gains[i]);
            gain.x = adapt_gain(gain.x, g.x, u.x);
            gain.y = adapt_gain(gain.y, g.y, u.y);
            u.x = momentum * u.x - config.learning_rate * gain.x * g.x;
            u.y = momentum * u.y - config.learning_rate * gain.y * g.y;
            coords[i].x += u.x;
            coords[i].y += u.y;
        }

        kernel = StudentKernel::new(&coords);
        let kl = kernel.kl(&p);
        if !kl.is_finite() || coords.iter().any(|c| !c.is_finite()) {
            let max_abs_gradient = grad
                .iter()
                .flat_map(|g| [g.x.abs(), g.y.abs()])
                .fold(0.0, f64::max);
            return Err(EmbedError::NonFiniteLoss {
                iteration,
                max_abs_gradient,
            });
        }
        trace.push(kl);
    }
    Ok((coords, trace))
}

/// Per-coordinate step-size gain: grow when the gradient keeps pointing
/// against the last update, shrink when it flips.
fn adapt_gain(gain: f64, grad: f64, update: f64) -> f64 {
    if (grad > 0.0) != (update > 0.0) {
        gain + 0.2
    } else {
        (gain * 0.8).max(MIN_GAIN)
    }
}

fn debug_assert_translation_invariant(grad: &[Point]) {
    let (sx, sy) = grad.iter().fold((0.0, 0.0), |(a, b), g| (a + g.x, b + g.y));
    let scale: f64 = grad.iter().map(|g| g.x.abs() + g.y.abs()).sum();
    debug_assert!(
        sx.abs() <= 1e-9 * scale + 1e-12 && sy.abs() <= 1e-9 * scale + 1e-12,
        "gradient rows do not sum to zero: ({sx}, {sy})"
    );
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Embedding {
        Embedding {
            coords: self.coords.iter().map(|c| Point::new(c.x + dx, c.y + dy)).collect(),
            row_labels: self.row_labels.clone(),
            loss_trace: self.loss_trace.clone(),
        }
    }

    /// `variant,x,y` with shortest round-trip decimal formatting.
    pub fn write_coords_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variant", "x", "y"]).map_err(csv_error)?;
        for (label, c) in self.row_labels.iter().zip(&self.coords) {
            w.write_record([label.variant_name.as_str(), &c.x.to_string(), &c.y.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `iter,kl`, iterations numbered from 1.
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "kl"]).map_err(csv_error)?;
        for (k, kl) in self.loss_trace.iter().enumerate() {
            w.write_record([(k + 1).to_string(), kl.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild an embedding for `matrix` from a coords CSV. Every matrix
    /// variant must appear exactly once; file order does not matter.
    pub fn from_coords_csv(text: &str, matrix: &PhenotypeMatrix) -> Result<Embedding> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(csv_error)?.clone();
        if header.iter().collect::<Vec<_>>() != ["variant", "x", "y"] {
            return Err(EmbedError::Csv {
                line: 1,
                message: format!("expected header `variant,x,y`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut by_name: HashMap<String, Point> = HashMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| EmbedError::Csv {
                    line,
                    message: format!("bad coordinate `{s}`"),
                })
            };
            let point = Point::new(parse(&rec[1])?, parse(&rec[2])?);
            if !point.is_finite() {
                return Err(EmbedError::NonFiniteCoords);
            }
            if by_name.insert(rec[0].to_string(), point).is_some() {
                return Err(EmbedError::Csv {
                    line,
                    message: format!("duplicate variant `{}`", &rec[0]),
                });
            }
        }
        let mut coords = Vec::with_capacity(matrix.n_rows());
        for label in matrix.row_labels() {
            match by_name.remove(&label.variant_name) {
                Some(p) => coords.push(p),
                None => return Err(EmbedError::MissingVariant(label.variant_name.clone())),
            }
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(EmbedError::UnexpectedVariant(extra.clone()));
        }
        Ok(Embedding {
            coords,
            row_labels: matrix.row_labels().to_vec(),
            loss_trace: Vec::new(),
        })
    }
}

fn csv_error(err: csv::Error) -> EmbedError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => EmbedError::Io(e),
        kind => EmbedError::Csv {
            line,
            message: format!("{kind:?}"),
        },
    }
}
