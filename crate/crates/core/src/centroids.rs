//! Class and feature centroids in embedding coordinates.
//!
//! A class centroid is the mean position of the observations carrying that
//! class label; a feature centroid is the mean position of the observations
//! that have the feature, regardless of class.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::PhenotypeMatrix;
use crate::embed::{Embedding, Point};

#[derive(Debug, Error)]
pub enum CentroidError {
    #[error("no observations")]
    Empty,
    #[error("{coords} coordinate rows but {labels} labels")]
    Misaligned { coords: usize, labels: usize },
    #[error("non-finite coordinates")]
    NonFinite,
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CentroidError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CentroidKind {
    Class,
    Feature,
}

impl fmt::Display for CentroidKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CentroidKind::Class => "class",
            CentroidKind::Feature => "feature",
        })
    }
}

impl FromStr for CentroidKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "class" => Ok(CentroidKind::Class),
            "feature" => Ok(CentroidKind::Feature),
            other => Err(format!("unknown centroid kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub kind: CentroidKind,
    pub label: String,
    pub x: f64,
    pub y: f64,
    /// Number of observations averaged (N_c or N_f); always at least 1.
    pub count: usize,
}

impl Centroid {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CentroidSet {
    pub entries: Vec<Centroid>,
}

impl CentroidSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, kind: CentroidKind, label: &str) -> Option<&Centroid> {
        self.entries.iter().find(|c| c.kind == kind && c.label == label)
    }

    pub fn of_kind(&self, kind: CentroidKind) -> impl Iterator<Item = &Centroid> {
        self.entries.iter().filter(move |c| c.kind == kind)
    }

    /// Concatenate two sets; entries of `other` whose (kind, label) already
    /// exists are skipped.
    pub fn merged(mut self, other: CentroidSet) -> CentroidSet {
        let mut keys: HashSet<(CentroidKind, String)> =
            self.entries.iter().map(|c| (c.kind, c.label.clone())).collect();
        for c in other.entries {
            if keys.insert((c.kind, c.label.clone())) {
                self.entries.push(c);
            }
        }
        self
    }

    /// Keep only the feature centroids whose labels are in `keep`; class
    /// centroids are untouched.
    pub fn retain_features(&mut self, keep: &[String]) {
        self.entries
            .retain(|c| c.kind == CentroidKind::Class || keep.iter().any(|k| k == &c.label));
    }

    /// `kind,label,x,y,count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "label", "x", "y", "count"]).map_err(csv_error)?;
        for c in &self.entries {
            w.write_record([
                c.kind.to_string(),
                c.label.clone(),
                c.x.to_string(),
                c.y.to_string(),
                c.count.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<CentroidSet> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(csv_error)?.clone();
        if header.iter().collect::<Vec<_>>() != ["kind", "label", "x", "y", "count"] {
            return Err(CentroidError::Csv {
                line: 1,
                message: "expected header `kind,label,x,y,count`".into(),
            });
        }
        let mut set = CentroidSet::default();
        let mut keys = HashSet::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |message: String| CentroidError::Csv { line, message };
            let kind: CentroidKind = rec[0].parse().map_err(bad)?;
            let x: f64 = rec[2].parse().map_err(|_| bad(format!("bad x `{}`", &rec[2])))?;
            let y: f64 = rec[3].parse().map_err(|_| bad(format!("bad y `{}`", &rec[3])))?;
            let count: usize = rec[4].parse().map_err(|_| bad(format!("bad count `{}`", &rec[4])))?;
            if count == 0 {
                return Err(bad("count must be at least 1".into()));
            }
            if !x.is_finite() || !y.is_finite() {
                return Err(CentroidError::NonFinite);
            }
            if !keys.insert((kind, rec[1].to_string())) {
                return Err(bad(format!("duplicate {kind} centroid `{}`", &rec[1])));
            }
            set.entries.push(Centroid {
                kind,
                label: rec[1].to_string(),
                x,
                y,
                count,
            });
        }
        Ok(set)
    }
}

fn mean_of(points: impl Iterator<Item = Point>) -> Option<(Point, usize)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p.x;
        sy += p.y;
        n += 1;
    }
    (n > 0).then(|| (Point::new(sx / n as f64, sy / n as f64), n))
}

/// One centroid per distinct label, in order of first appearance.
pub fn class_centroids<S: AsRef<str>>(embedding: &Embedding, labels: &[S]) -> Result<CentroidSet> {
    if embedding.is_empty() {
        return Err(CentroidError::Empty);
    }
    if embedding.len() != labels.len() {
        return Err(CentroidError::Misaligned {
            coords: embedding.len(),
            labels: labels.len(),
        });
    }
    if embedding.coords.iter().any(|c| !c.is_finite()) {
        return Err(CentroidError::NonFinite);
    }
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        members
            .entry(label)
            .or_insert_with(|| {
                order.push(label);
                Vec::new()
            })
            .push(i);
    }
    let entries = order
        .into_iter()
        .map(|label| {
            let (c, count) = mean_of(members[label].iter().map(|&i| embedding.coords[i]))
                .expect("every class has a member");
            Centroid {
                kind: CentroidKind::Class,
                label: label.to_string(),
                x: c.x,
                y: c.y,
                count,
            }
        })
        .collect();
    Ok(CentroidSet { entries })
}

/// One centroid per feature with at least one present cell, in column order.
/// Features nobody has are left out (and logged).
pub fn feature_centroids(embedding: &Embedding, matrix: &PhenotypeMatrix) -> Result<CentroidSet> {
    if embedding.len() != matrix.n_rows() {
        return Err(CentroidError::Misaligned {
            coords: embedding.len(),
            labels: matrix.n_rows(),
        });
    }
    if embedding.coords.iter().any(|c| !c.is_finite()) {
        return Err(CentroidError::NonFinite);
    }
    let mut entries = Vec::new();
    for (j, label) in matrix.feature_labels().iter().enumerate() {
        let having = (0..matrix.n_rows())
            .filter(|&i| matrix.cell(i, j) == 1)
            .map(|i| embedding.coords[i]);
        match mean_of(having) {
            Some((c, count)) => entries.push(Centroid {
                kind: CentroidKind::Feature,
                label: label.clone(),
                x: c.x,
                y: c.y,
                count,
            }),
            None => log::warn!("feature `{label}` is absent from every observation; no centroid"),
        }
    }
    Ok(CentroidSet { entries })
}

fn csv_error(err: csv::Error) -> CentroidError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => CentroidError::Io(e),
        kind => CentroidError::Csv {
            line,
            message: format!("{kind:?}"),
        },
    }
}
