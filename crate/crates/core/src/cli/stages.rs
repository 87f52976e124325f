//! Pipeline stages. Each stage reads its inputs from disk and writes its
//! outputs into an output directory, so any stage can be re-run on its own.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::error::{CliError, Result};
use crate::centroids::{class_centroids, feature_centroids, CentroidSet};
use crate::dataset::{
    build_matrix, class_feature_frequencies, load_orphadata_xml, load_variants_csv, FrequencyTable,
    IngestReport, PhenotypeMatrix,
};
use crate::embed::{run_tsne, Embedding, EmbeddingConfig};
use crate::importance::{fit_surrogate, rank_features, Aggregation, ImportanceReport};
use crate::ontology::{parse_obo, CategorySet};
use crate::render::{render_importance_bars, render_scatter, render_stacked_bars, Layer, PlotSpec};

pub const MATRIX_FILE: &str = "matrix.csv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.csv";
pub const FREQUENCY_FILE: &str = "frequencies.csv";
pub const COORDS_FILE: &str = "coords.csv";
pub const LOSS_FILE: &str = "loss_trace.csv";
pub const CENTROIDS_FILE: &str = "centroids.csv";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const SCATTER_FILE: &str = "scatter.svg";
pub const FREQUENCY_CHART_FILE: &str = "frequency_bars.svg";
pub const IMPORTANCE_CHART_FILE: &str = "importance_bars.svg";
pub const MANIFEST_FILE: &str = "manifest.tsv";

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn to_bytes<E: std::fmt::Display>(f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), E>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(buf)
}

pub fn load_matrix(path: &Path) -> Result<PhenotypeMatrix> {
    PhenotypeMatrix::read_csv(&read(path)?).map_err(|e| CliError::in_file(path, e))
}

pub fn load_embedding(coords: &Path, matrix: &PhenotypeMatrix) -> Result<Embedding> {
    Embedding::from_coords_csv(&read(coords)?, matrix).map_err(|e| match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", coords.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestArgs {
    pub ontology: PathBuf,
    pub categories: PathBuf,
    /// `class,variant,terms` CSV files.
    pub data: Vec<PathBuf>,
    /// Orphadata XML files with the class label each file's disorders get.
    pub orphadata: Vec<(String, PathBuf)>,
    pub out_dir: PathBuf,
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub matrix: PhenotypeMatrix,
    pub report: IngestReport,
}

/// Ontology + observations + categories → matrix, ingestion report and
/// per-class feature frequencies.
pub fn cmd_ingest(args: &IngestArgs) -> Result<IngestOutcome> {
    if args.data.is_empty() && args.orphadata.is_empty() {
        return Err(CliError::Usage("no observation files given (use --data or --orphadata)".into()));
    }
    let graph = parse_obo(&read(&args.ontology)?).map_err(|e| CliError::in_file(&args.ontology, e))?;
    let categories =
        CategorySet::parse(&read(&args.categories)?, &graph).map_err(|e| CliError::in_file(&args.categories, e))?;

    let mut records = Vec::new();
    for path in &args.data {
        records.extend(load_variants_csv(&read(path)?).map_err(|e| CliError::in_file(path, e))?);
    }
    for (class, path) in &args.orphadata {
        records.extend(load_orphadata_xml(&read(path)?, class).map_err(|e| CliError::in_file(path, e))?);
    }
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.variant_name.as_str()) {
            return Err(CliError::Input(format!(
                "variant `{}` appears in more than one input row",
                r.variant_name
            )));
        }
    }

    let (matrix, report) = build_matrix(&records, &graph, &categories, args.strict)?;
    let freq = class_feature_frequencies(&matrix);
    write(&args.out_dir.join(MATRIX_FILE), &to_bytes(|b| matrix.write_csv(b))?)?;
    write(&args.out_dir.join(INGEST_REPORT_FILE), &to_bytes(|b| report.write_csv(b))?)?;
    write(&args.out_dir.join(FREQUENCY_FILE), &to_bytes(|b| freq.write_csv(b))?)?;
    log::info!(
        "{} observations x {} features; {} terms without a category, {} unknown terms, {} empty rows",
        matrix.n_rows(),
        matrix.n_features(),
        report.total_dropped(),
        report.total_unknown(),
        report.empty_rows()
    );
    Ok(IngestOutcome { matrix, report })
}

/// Matrix CSV → coords and loss-trace CSVs.
pub fn cmd_embed(matrix_path: &Path, out_dir: &Path, config: &EmbeddingConfig) -> Result<Embedding> {
    let matrix = load_matrix(matrix_path)?;
    let embedding = run_tsne(&matrix, config)?;
    write(&out_dir.join(COORDS_FILE), &to_bytes(|b| embedding.write_coords_csv(b))?)?;
    write(&out_dir.join(LOSS_FILE), &to_bytes(|b| embedding.write_loss_csv(b))?)?;
    Ok(embedding)
}

/// Matrix + coords → class and feature centroids in one CSV.
pub fn cmd_centroids(matrix_path: &Path, coords_path: &Path, out_dir: &Path) -> Result<CentroidSet> {
    let matrix = load_matrix(matrix_path)?;
    let embedding = load_embedding(coords_path, &matrix)?;
    let set = class_centroids(&embedding, &matrix.class_labels())?.merged(feature_centroids(&embedding, &matrix)?);
    write(&out_dir.join(CENTROIDS_FILE), &to_bytes(|b| set.write_csv(b))?)?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceArgs {
    pub permutations: usize,
    pub seed: u64,
    pub top_k: usize,
    pub aggregation: Aggregation,
}

/// Matrix → per-class Shapley importance CSV, sorted by overall score.
pub fn cmd_importance(matrix_path: &Path, out_dir: &Path, args: &ImportanceArgs) -> Result<ImportanceReport> {
    if args.top_k == 0 {
        return Err(CliError::Usage("top_k must be at least 1".into()));
    }
    let matrix = load_matrix(matrix_path)?;
    let model = fit_surrogate(&matrix).map_err(|e| CliError::in_file(matrix_path, e))?;
    let top_k = args.top_k.min(matrix.n_features());
    if top_k < args.top_k {
        log::warn!("top_k {} exceeds the {} features; using {}", args.top_k, matrix.n_features(), top_k);
    }
    log::info!("attributions are computed for a nearest-centroid softmax surrogate classifier");
    let report = rank_features(&matrix, &model, args.permutations, args.seed, top_k, args.aggregation)?;
    write(&out_dir.join(IMPORTANCE_FILE), &to_bytes(|b| report.write_csv(b))?)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    Scatter,
    FrequencyBars,
    ImportanceBars,
}

impl std::str::FromStr for Chart {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "scatter" => Ok(Chart::Scatter),
            "frequency-bars" => Ok(Chart::FrequencyBars),
            "importance-bars" => Ok(Chart::ImportanceBars),
            other => Err(format!("unknown chart `{other}` (expected scatter, frequency-bars, importance-bars)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotArgs {
    pub chart: Chart,
    pub matrix: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub centroids: Option<PathBuf>,
    pub importance: Option<PathBuf>,
    pub frequencies: Option<PathBuf>,
    pub top_k: usize,
    pub output: PathBuf,
    pub spec: PlotSpec,
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("{what} requires --{flag}")))
}

/// Render one SVG figure.
pub fn cmd_plot(args: &PlotArgs) -> Result<String> {
    let svg = match args.chart {
        Chart::Scatter => {
            let matrix = load_matrix(required(&args.matrix, "matrix", "a scatter plot")?)?;
            let embedding = load_embedding(required(&args.coords, "coords", "a scatter plot")?, &matrix)?;
            let wants_centroids = args.spec.layers.contains(&Layer::ClassCentroids)
                || args.spec.layers.contains(&Layer::FeatureCentroids);
            let centroids = match (&args.centroids, wants_centroids) {
                (Some(path), _) => {
                    let mut set = CentroidSet::read_csv(&read(path)?).map_err(|e| CliError::in_file(path, e))?;
                    if let Some(imp) = &args.importance {
                        let mut report =
                            ImportanceReport::read_csv(&read(imp)?).map_err(|e| CliError::in_file(imp, e))?;
                        report.top_k = args.top_k.min(report.features.len());
                        set.retain_features(&report.top_features());
                    }
                    Some(set)
                }
                (None, true) => {
                    return Err(CliError::Usage("centroid layers require --centroids".into()));
                }
                (None, false) => None,
            };
            let labels = matrix.class_labels();
            render_scatter(&embedding, Some(&labels), centroids.as_ref(), &args.spec)?
        }
        Chart::FrequencyBars => {
            let freq = match (&args.frequencies, &args.matrix) {
                (Some(path), _) => FrequencyTable::read_csv(&read(path)?).map_err(|e| CliError::in_file(path, e))?,
                (None, Some(path)) => class_feature_frequencies(&load_matrix(path)?),
                (None, None) => {
                    return Err(CliError::Usage("frequency bars require --frequencies or --matrix".into()))
                }
            };
            render_stacked_bars(&freq, &args.spec)?
        }
        Chart::ImportanceBars => {
            let path = required(&args.importance, "importance", "importance bars")?;
            let report = ImportanceReport::read_csv(&read(path)?).map_err(|e| CliError::in_file(path, e))?;
            let top_k = args.top_k.min(report.features.len());
            render_importance_bars(&report, top_k, &args.spec)?
        }
    };
    write(&args.output, svg.as_bytes())?;
    Ok(svg)
}

/// Everything `run` needs, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub ingest: IngestArgs,
    pub embedding: EmbeddingConfig,
    pub importance: ImportanceArgs,
    pub plot: PlotSpec,
}

/// All stages in order, then a manifest of every output with its SHA-256.
/// Stops at the first failing stage; whatever was written stays on disk.
pub fn cmd_run(config: &PipelineConfig) -> Result<Vec<(String, String)>> {
    let out = &config.ingest.out_dir;
    cmd_ingest(&config.ingest)?;
    let matrix = out.join(MATRIX_FILE);
    cmd_embed(&matrix, out, &config.embedding)?;
    cmd_centroids(&matrix, &out.join(COORDS_FILE), out)?;
    cmd_importance(&matrix, out, &config.importance)?;

    let plot = |chart, output: &str, centroids: bool| PlotArgs {
        chart,
        matrix: Some(matrix.clone()),
        coords: Some(out.join(COORDS_FILE)),
        centroids: centroids.then(|| out.join(CENTROIDS_FILE)),
        importance: Some(out.join(IMPORTANCE_FILE)),
        frequencies: Some(out.join(FREQUENCY_FILE)),
        top_k: config.importance.top_k,
        output: out.join(output),
        spec: config.plot.clone(),
    };
    cmd_plot(&plot(Chart::Scatter, SCATTER_FILE, true))?;
    cmd_plot(&plot(Chart::FrequencyBars, FREQUENCY_CHART_FILE, false))?;
    cmd_plot(&plot(Chart::ImportanceBars, IMPORTANCE_CHART_FILE, false))?;

    let files = [
        MATRIX_FILE,
        INGEST_REPORT_FILE,
        FREQUENCY_FILE,
        COORDS_FILE,
        LOSS_FILE,
        CENTROIDS_FILE,
        IMPORTANCE_FILE,
        SCATTER_FILE,
        FREQUENCY_CHART_FILE,
        IMPORTANCE_CHART_FILE,
    ];
    let manifest = manifest_entries(out, &files)?;
    write(&out.join(MANIFEST_FILE), render_manifest(&manifest).as_bytes())?;
    Ok(manifest)
}

/// `(relative path, hex SHA-256)` for each file, sorted by path.
pub fn manifest_entries(dir: &Path, files: &[&str]) -> Result<Vec<(String, String)>> {
    let mut entries = files
        .iter()
        .map(|name| {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            Ok((name.to_string(), hex::encode(Sha256::digest(&bytes))))
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

pub fn render_manifest(entries: &[(String, String)]) -> String {
    entries.iter().map(|(path, hash)| format!("{path}\t{hash}\n")).collect()
}
