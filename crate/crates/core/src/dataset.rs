//! Labeled observations, the binary class-labeled feature matrix and its
//! CSV persistence.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use thiserror::Error;

use crate::ontology::{reduce_terms, CategorySet, OntologyError, OntologyGraph};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: duplicate variant `{variant}`")]
    DuplicateVariant { variant: String, line: u64 },
    #[error("line {line}: empty {field}")]
    EmptyField { field: &'static str, line: u64 },
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("Disorder element #{0} has no Name child")]
    DisorderWithoutName(usize),
    #[error("no records to build a matrix from")]
    NoRecords,
    #[error("duplicate feature label `{0}`")]
    DuplicateFeature(String),
    #[error("line {line}: cell `{value}` is not 0 or 1")]
    BadCell { value: String, line: u64 },
    #[error("variant `{variant}`: {source}")]
    Ontology {
        variant: String,
        #[source]
        source: OntologyError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One observation: a named variant of a class, coded as ontology terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantRecord {
    pub class_label: String,
    pub variant_name: String,
    pub term_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RowLabel {
    pub class_label: String,
    pub variant_name: String,
}

fn csv_error(err: csv::Error) -> DatasetError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => DatasetError::Io(e),
        kind => DatasetError::Csv {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Read `class,variant,terms` CSV where `terms` is a `|`-separated list.
pub fn load_variants_csv(text: &str) -> Result<Vec<VariantRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != ["class", "variant", "terms"] {
        return Err(DatasetError::Header {
            expected: "class,variant,terms".into(),
            found: found.join(","),
        });
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let class_label = row[0].trim().to_string();
        let variant_name = row[1].trim().to_string();
        if class_label.is_empty() {
            return Err(DatasetError::EmptyField { field: "class", line });
        }
        if variant_name.is_empty() {
            return Err(DatasetError::EmptyField { field: "variant", line });
        }
        if !seen.insert(variant_name.clone()) {
            return Err(DatasetError::DuplicateVariant {
                variant: variant_name,
                line,
            });
        }
        let term_ids = row[2]
            .split('|')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        records.push(VariantRecord {
            class_label,
            variant_name,
            term_ids,
        });
    }
    Ok(records)
}

/// Read an Orphadata-style phenotype export. Every `Disorder` element yields
/// one record named by its first direct `Name` child, with one term per
/// `HPOId` descendant. The class label is not in the file and is supplied
/// by the caller.
pub fn load_orphadata_xml(text: &str, class_label: &str) -> Result<Vec<VariantRecord>> {
    let doc = roxmltree::Document::parse(text).map_err(|e| DatasetError::Xml(e.to_string()))?;
    let mut records = Vec::new();
    for (n, disorder) in doc
        .descendants()
        .filter(|node| node.has_tag_name("Disorder"))
        .enumerate()
    {
        let name = disorder
            .children()
            .find(|c| c.has_tag_name("Name"))
            .and_then(|c| c.text())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or(DatasetError::DisorderWithoutName(n + 1))?;
        let term_ids = disorder
            .descendants()
            .filter(|d| d.has_tag_name("HPOId"))
            .filter_map(|d| d.text())
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        records.push(VariantRecord {
            class_label: class_label.to_string(),
            variant_name: name.to_string(),
            term_ids,
        });
    }
    Ok(records)
}

/// N observations by d binary category features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhenotypeMatrix {
    rows: Vec<RowLabel>,
    features: Vec<String>,
    cells: Vec<u8>,
}

impl PhenotypeMatrix {
    /// Build from dense rows. Every cell must be 0 or 1, row lengths must
    /// match the feature count, and variant names must be unique.
    pub fn from_rows(rows: Vec<RowLabel>, features: Vec<String>, cells: Vec<Vec<u8>>) -> Result<Self> {
        let mut labels = HashSet::new();
        for f in &features {
            if !labels.insert(f.as_str()) {
                return Err(DatasetError::DuplicateFeature(f.clone()));
            }
        }
        let mut variants = HashSet::new();
        let mut flat = Vec::with_capacity(rows.len() * features.len());
        for (i, (label, row)) in rows.iter().zip(&cells).enumerate() {
            let line = i as u64 + 2;
            if !variants.insert(label.variant_name.as_str()) {
                return Err(DatasetError::DuplicateVariant {
                    variant: label.variant_name.clone(),
                    line,
                });
            }
            if row.len() != features.len() {
                return Err(DatasetError::Csv {
                    line,
                    message: format!("expected {} cells, found {}", features.len(), row.len()),
                });
            }
            if let Some(v) = row.iter().find(|&&v| v > 1) {
                return Err(DatasetError::BadCell {
                    value: v.to_string(),
                    line,
                });
            }
            flat.extend_from_slice(row);
        }
        if rows.len() != cells.len() {
            return Err(DatasetError::Csv {
                line: 0,
                message: format!("{} row labels but {} cell rows", rows.len(), cells.len()),
            });
        }
        Ok(PhenotypeMatrix {
            rows,
            features,
            cells: flat,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn row_labels(&self) -> &[RowLabel] {
        &self.rows
    }

    pub fn feature_labels(&self) -> &[String] {
        &self.features
    }

    pub fn class_labels(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.class_label.as_str()).collect()
    }

    /// Distinct class labels in order of first appearance.
    pub fn classes(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.class_label.as_str()))
            .map(|r| r.class_label.clone())
            .collect()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let d = self.features.len();
        &self.cells[i * d..(i + 1) * d]
    }

    pub fn cell(&self, i: usize, j: usize) -> u8 {
        self.cells[i * self.features.len() + j]
    }

    /// Number of rows with feature `j` present.
    pub fn support(&self, j: usize) -> usize {
        (0..self.n_rows()).filter(|&i| self.cell(i, j) == 1).count()
    }

    pub fn rows_as_f64(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows())
            .map(|i| self.row(i).iter().map(|&v| f64::from(v)).collect())
            .collect()
    }

    /// `class,variant,<features...>` with `0`/`1` cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["class", "variant"];
        header.extend(self.features.iter().map(String::as_str));
        w.write_record(&header).map_err(csv_error)?;
        for (i, label) in self.rows.iter().enumerate() {
            let mut rec = vec![label.class_label.clone(), label.variant_name.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(csv_error)?.clone();
        if header.len() < 2 || &header[0] != "class" || &header[1] != "variant" {
            return Err(DatasetError::Header {
                expected: "class,variant,<features...>".into(),
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        let features: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let mut row = Vec::with_capacity(features.len());
            for value in rec.iter().skip(2) {
                row.push(match value {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(DatasetError::BadCell {
                            value: other.to_string(),
                            line,
                        })
                    }
                });
            }
            rows.push(RowLabel {
                class_label: rec[0].to_string(),
                variant_name: rec[1].to_string(),
            });
            cells.push(row);
        }
        Self::from_rows(rows, features, cells)
    }
}

/// Per-record outcome of term reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordReport {
    pub variant_name: String,
    pub mapped_categories: usize,
    pub dropped: usize,
    pub unknown: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub records: Vec<RecordReport>,
}

impl IngestReport {
    pub fn total_dropped(&self) -> usize {
        self.records.iter().map(|r| r.dropped).sum()
    }

    pub fn total_unknown(&self) -> usize {
        self.records.iter().map(|r| r.unknown).sum()
    }

    pub fn empty_rows(&self) -> usize {
        self.records.iter().filter(|r| r.mapped_categories == 0).count()
    }

    /// `variant,categories,dropped,unknown` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variant", "categories", "dropped", "unknown"])
            .map_err(csv_error)?;
        for r in &self.records {
            w.write_record([
                r.variant_name.clone(),
                r.mapped_categories.to_string(),
                r.dropped.to_string(),
                r.unknown.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reduce each record's terms to categories and binary-code them.
/// Rows with no mappable term are kept as all-zero rows.
pub fn build_matrix(
    records: &[VariantRecord],
    graph: &OntologyGraph,
    categories: &CategorySet,
    strict: bool,
) -> Result<(PhenotypeMatrix, IngestReport)> {
    if records.is_empty() {
        return Err(DatasetError::NoRecords);
    }
    let d = categories.len();
    let mut rows = Vec::with_capacity(records.len());
    let mut cells = Vec::with_capacity(records.len());
    let mut report = IngestReport::default();
    for rec in records {
        let reduction = reduce_terms(graph, categories, &rec.term_ids, strict).map_err(|source| {
            DatasetError::Ontology {
                variant: rec.variant_name.clone(),
                source,
            }
        })?;
        let mut row = vec![0u8; d];
        for &j in &reduction.categories {
            row[j] = 1;
        }
        if reduction.categories.is_empty() {
            log::warn!("variant `{}` has no mappable terms; keeping an all-zero row", rec.variant_name);
        }
        report.records.push(RecordReport {
            variant_name: rec.variant_name.clone(),
            mapped_categories: reduction.categories.len(),
            dropped: reduction.dropped,
            unknown: reduction.unknown.len(),
        });
        rows.push(RowLabel {
            class_label: rec.class_label.clone(),
            variant_name: rec.variant_name.clone(),
        });
        cells.push(row);
    }
    let features = categories.labels().map(str::to_string).collect();
    let matrix = PhenotypeMatrix::from_rows(rows, features, cells)?;
    Ok((matrix, report))
}

/// Count of rows with each feature present, per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    pub classes: Vec<String>,
    pub features: Vec<String>,
    /// `counts[class][feature]`
    pub counts: Vec<Vec<usize>>,
}

impl FrequencyTable {
    pub fn count(&self, class: &str, feature: &str) -> Option<usize> {
        let c = self.classes.iter().position(|x| x == class)?;
        let f = self.features.iter().position(|x| x == feature)?;
        Some(self.counts[c][f])
    }

    pub fn feature_total(&self, j: usize) -> usize {
        self.counts.iter().map(|row| row[j]).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty() || self.features.is_empty()
    }

    /// `class,feature,count` CSV, classes outer, features inner.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "feature", "count"]).map_err(csv_error)?;
        for (c, class) in self.classes.iter().enumerate() {
            for (f, feature) in self.features.iter().enumerate() {
                w.write_record([class.as_str(), feature.as_str(), &self.counts[c][f].to_string()])
                    .map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(csv_error)?.clone();
        if header.iter().collect::<Vec<_>>() != ["class", "feature", "count"] {
            return Err(DatasetError::Header {
                expected: "class,feature,count".into(),
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        let mut classes: Vec<String> = Vec::new();
        let mut features: Vec<String> = Vec::new();
        let mut entries = HashMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let count: usize = rec[2].parse().map_err(|_| DatasetError::Csv {
                line,
                message: format!("bad count `{}`", &rec[2]),
            })?;
            if !classes.iter().any(|c| c == &rec[0]) {
                classes.push(rec[0].to_string());
            }
            if !features.iter().any(|f| f == &rec[1]) {
                features.push(rec[1].to_string());
            }
            entries.insert((rec[0].to_string(), rec[1].to_string()), count);
        }
        let counts = classes
            .iter()
            .map(|c| {
                features
                    .iter()
                    .map(|f| entries.get(&(c.clone(), f.clone())).copied().unwrap_or(0))
                    .collect()
            })
            .collect();
        Ok(FrequencyTable {
            classes,
            features,
            counts,
        })
    }
}

pub fn class_feature_frequencies(matrix: &PhenotypeMatrix) -> FrequencyTable {
    let classes = matrix.classes();
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let d = matrix.n_features();
    let mut counts = vec![vec![0usize; d]; classes.len()];
    for (i, label) in matrix.row_labels().iter().enumerate() {
        let c = index[label.class_label.as_str()];
        for (j, &v) in matrix.row(i).iter().enumerate() {
            counts[c][j] += usize::from(v);
        }
    }
    FrequencyTable {
        classes,
        features: matrix.feature_labels().to_vec(),
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::parse_obo;

    #[test]
    fn csv_single_record() {
        let recs = load_variants_csv("class,variant,terms\nCMT,CMT1A,HP:1|HP:2\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].term_ids, vec!["HP:1", "HP:2"]);
    }

    #[test]
    fn csv_empty_terms_and_quoting() {
        let text = "class,variant,terms\nCA,\"SCA, type 1\",\nCA,SCA2, HP:1 | HP:3 \n";
        let recs = load_variants_csv(text).unwrap();
        assert_eq!(recs[0].variant_name, "SCA, type 1");
        assert!(recs[0].term_ids.is_empty());
        assert_eq!(recs[1].term_ids, vec!["HP:1", "HP:3"]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            load_variants_csv("class,variant\nA,B\n"),
            Err(DatasetError::Header { .. })
        ));
        assert!(matches!(
            load_variants_csv("class,variant,terms,extra\nA,B,,\n"),
            Err(DatasetError::Header { .. })
        ));
        assert!(matches!(
            load_variants_csv("class,variant,terms\nA,B,\nA,B,\n"),
            Err(DatasetError::DuplicateVariant { line: 3, .. })
        ));
        assert!(matches!(
            load_variants_csv("class,variant,terms\nA,B\n"),
            Err(DatasetError::Csv { line: 2, .. })
        ));
    }

    #[test]
    fn xml_records() {
        let xml = r#"<JDBOR><DisorderList count="1">
          <Disorder id="1"><OrphaCode>99</OrphaCode><Name lang="en">Ataxia X</Name>
            <DisorderType><Name lang="en">Disease</Name></DisorderType>
            <HPODisorderAssociationList>
              <HPODisorderAssociation><HPO><HPOId>HP:0001251</HPOId><HPOTerm>Ataxia</HPOTerm></HPO></HPODisorderAssociation>
              <HPODisorderAssociation><HPO><HPOId>HP:0001260</HPOId></HPO></HPODisorderAssociation>
            </HPODisorderAssociationList>
          </Disorder></DisorderList></JDBOR>"#;
        let recs = load_orphadata_xml(xml, "CA").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].variant_name, "Ataxia X");
        assert_eq!(recs[0].class_label, "CA");
        assert_eq!(recs[0].term_ids, vec!["HP:0001251", "HP:0001260"]);

        assert!(load_orphadata_xml("<DisorderList count=\"0\"/>", "CA").unwrap().is_empty());
        assert!(matches!(load_orphadata_xml("<a><b></a>", "CA"), Err(DatasetError::Xml(_))));
        assert!(matches!(
            load_orphadata_xml("<L><Disorder><HPOId>HP:1</HPOId></Disorder></L>", "CA"),
            Err(DatasetError::DisorderWithoutName(1))
        ));
    }

    fn small_world() -> (OntologyGraph, CategorySet) {
        let g = parse_obo(
            "[Term]\nid: R\n\n[Term]\nid: C1\nis_a: R\n\n[Term]\nid: C2\nis_a: R\n\n[Term]\nid: a\nis_a: C1\n\n[Term]\nid: b\nis_a: a\n\n[Term]\nid: c\nis_a: C2\n",
        )
        .unwrap();
        let cats = CategorySet::new(&g, vec![("C1".into(), "one".into()), ("C2".into(), "two".into())]).unwrap();
        (g, cats)
    }

    fn rec(class: &str, name: &str, terms: &[&str]) -> VariantRecord {
        VariantRecord {
            class_label: class.into(),
            variant_name: name.into(),
            term_ids: terms.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn matrix_rows_and_report() {
        let (g, cats) = small_world();
        let recs = vec![
            rec("X", "v1", &["a", "b"]),
            rec("X", "v2", &["R", "zzz"]),
            rec("Y", "v3", &["c", "b"]),
        ];
        let (m, report) = build_matrix(&recs, &g, &cats, false).unwrap();
        assert_eq!(m.row(0), &[1, 0]);
        assert_eq!(m.row(1), &[0, 0]);
        assert_eq!(m.row(2), &[1, 1]);
        assert_eq!(report.records[1].dropped, 1);
        assert_eq!(report.records[1].unknown, 1);
        assert_eq!(report.empty_rows(), 1);
        assert!(build_matrix(&recs, &g, &cats, true).is_err());
        assert!(matches!(build_matrix(&[], &g, &cats, false), Err(DatasetError::NoRecords)));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let (g, cats) = small_world();
        let recs = vec![rec("X, quoted", "v\"1", &["a"]), rec("Y", "v2", &["c"])];
        let (m, _) = build_matrix(&recs, &g, &cats, false).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("class,variant,one,two\n"));
        assert_eq!(PhenotypeMatrix::read_csv(&text).unwrap(), m);
        assert!(matches!(
            PhenotypeMatrix::read_csv("class,variant,f\nA,b,2\n"),
            Err(DatasetError::BadCell { .. })
        ));
    }

    #[test]
    fn frequencies_single_row_and_symmetry() {
        let m = PhenotypeMatrix::from_rows(
            vec![RowLabel { class_label: "A".into(), variant_name: "a1".into() }],
            vec!["f1".into(), "f2".into()],
            vec![vec![0, 1]],
        )
        .unwrap();
        let t = class_feature_frequencies(&m);
        assert_eq!(t.count("A", "f2"), Some(1));
        assert_eq!(t.count("A", "f1"), Some(0));

        let m = PhenotypeMatrix::from_rows(
            vec![
                RowLabel { class_label: "A".into(), variant_name: "a1".into() },
                RowLabel { class_label: "B".into(), variant_name: "b1".into() },
            ],
            vec!["f1".into(), "f2".into()],
            vec![vec![1, 1], vec![1, 1]],
        )
        .unwrap();
        let t = class_feature_frequencies(&m);
        assert_eq!(t.counts[0], t.counts[1]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = FrequencyTable::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.counts, t.counts);
    }
}
