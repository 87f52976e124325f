//! Command-line front end. Every subcommand is a thin wrapper over one of
//! the stage functions in [`stages`], so the library can drive the same
//! pipeline without spawning a process.

mod config;
mod error;
mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigMap, DEFAULT_RUN_LAYERS};
pub use error::{CliError, Result};
pub use stages::{
    cmd_centroids, cmd_embed, cmd_importance, cmd_ingest, cmd_plot, cmd_run, manifest_entries, render_manifest,
    Chart, ImportanceArgs, IngestArgs, IngestOutcome, PipelineConfig, PlotArgs, CENTROIDS_FILE, COORDS_FILE,
    FREQUENCY_CHART_FILE, FREQUENCY_FILE, IMPORTANCE_CHART_FILE, IMPORTANCE_FILE, INGEST_REPORT_FILE, LOSS_FILE,
    MANIFEST_FILE, MATRIX_FILE, SCATTER_FILE,
};

use crate::embed::EmbeddingConfig;
use crate::importance::{Aggregation, DEFAULT_PERMUTATIONS};
use crate::render::{parse_layers, PlotSpec};

#[derive(Debug, Parser)]
#[command(name = "centroids", version, about = "Phenotype embeddings with class and feature centroid overlays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Map ontology terms onto categories and build the binary matrix.
    Ingest(IngestCmd),
    /// Embed the matrix rows in two dimensions with t-SNE.
    Embed(EmbedCmd),
    /// Compute class and feature centroids from an embedding.
    Centroids(CentroidsCmd),
    /// Rank features by Shapley attribution of a surrogate classifier.
    Importance(ImportanceCmd),
    /// Render an SVG chart.
    Plot(PlotCmd),
    /// Run every stage from a configuration file.
    Run(RunCmd),
}

#[derive(Debug, Args)]
pub struct IngestCmd {
    #[arg(long)]
    pub ontology: PathBuf,
    /// Category file: one term id per line, optionally followed by a tab and a label.
    #[arg(long)]
    pub categories: PathBuf,
    /// CSV with columns class,variant,terms (repeatable).
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Orphadata XML as CLASS=PATH (repeatable).
    #[arg(long, value_parser = parse_class_path)]
    pub orphadata: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Fail on term ids missing from the ontology instead of skipping them.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct TsneOpts {
    #[arg(long, default_value_t = 50.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 200.0)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 12.0)]
    pub exaggeration_factor: f64,
    #[arg(long, default_value_t = 250)]
    pub exaggeration_iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub momentum_early: f64,
    #[arg(long, default_value_t = 0.8)]
    pub momentum_late: f64,
    #[arg(long, default_value_t = 250)]
    pub momentum_switch_iter: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub perplexity_tolerance: f64,
    #[arg(long, default_value_t = 50)]
    pub calibration_max_iters: usize,
}

impl TsneOpts {
    fn config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            perplexity: self.perplexity,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            exaggeration_factor: self.exaggeration_factor,
            exaggeration_iters: self.exaggeration_iters,
            momentum_early: self.momentum_early,
            momentum_late: self.momentum_late,
            momentum_switch_iter: self.momentum_switch_iter,
            seed: self.seed,
            perplexity_tolerance: self.perplexity_tolerance,
            calibration_max_iters: self.calibration_max_iters,
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedCmd {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub tsne: TsneOpts,
}

#[derive(Debug, Args)]
pub struct CentroidsCmd {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub coords: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportanceCmd {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Sampled permutations per observation when there are more than 20 features.
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// How per-class scores combine into one: max or sum.
    #[arg(long, default_value = "max")]
    pub aggregation: Aggregation,
}

#[derive(Debug, Args)]
pub struct StyleOpts {
    /// Comma-separated layers: markers, class_colors, class_centroids, feature_centroids.
    #[arg(long, default_value = "markers")]
    pub layers: String,
    #[arg(long, default_value_t = 800.0)]
    pub width: f64,
    #[arg(long, default_value_t = 600.0)]
    pub height: f64,
    #[arg(long, default_value_t = 50.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 4.0)]
    pub marker_radius: f64,
    #[arg(long, default_value_t = 9.0)]
    pub centroid_marker_radius: f64,
    #[arg(long, default_value_t = 10.0)]
    pub font_size: f64,
    #[arg(long, default_value_t = 6.0)]
    pub label_offset: f64,
    /// Comma-separated colors; defaults to a ten-color qualitative palette.
    #[arg(long)]
    pub palette: Option<String>,
}

impl StyleOpts {
    fn spec(&self) -> Result<PlotSpec> {
        let layers = parse_layers(&self.layers).map_err(CliError::Usage)?;
        let palette = match &self.palette {
            Some(p) => p.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect(),
            None => PlotSpec::default().palette,
        };
        let spec = PlotSpec {
            width: self.width,
            height: self.height,
            margin: self.margin,
            marker_radius: self.marker_radius,
            centroid_marker_radius: self.centroid_marker_radius,
            layers,
            palette,
            font_size: self.font_size,
            label_offset: self.label_offset,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct PlotCmd {
    /// scatter, frequency-bars or importance-bars.
    #[arg(long)]
    pub chart: Chart,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub coords: Option<PathBuf>,
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// Importance CSV; on a scatter plot it limits feature centroids to the top features.
    #[arg(long)]
    pub importance: Option<PathBuf>,
    #[arg(long)]
    pub frequencies: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub style: StyleOpts,
}

#[derive(Debug, Args)]
pub struct RunCmd {
    /// key = value configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a configuration key, e.g. --set perplexity=30 (repeatable).
    #[arg(long = "set", value_parser = parse_key_value)]
    pub overrides: Vec<(String, String)>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strict: bool,
}

fn parse_class_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (class, path) = s.split_once('=').ok_or("expected CLASS=PATH")?;
    if class.trim().is_empty() {
        return Err("empty class label".into());
    }
    Ok((class.trim().to_string(), PathBuf::from(path.trim())))
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    let (key, value) = s.split_once('=').ok_or("expected KEY=VALUE")?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

/// Resolve a `run` invocation into a full pipeline configuration.
pub fn resolve_run(cmd: &RunCmd) -> Result<PipelineConfig> {
    let text = stages::read(&cmd.config)?;
    let base = cmd.config.parent().unwrap_or(Path::new("."));
    let mut map = ConfigMap::parse(&text, base)?;

    // Repeated list keys on the command line replace the file's list as a whole.
    let mut grouped: Vec<(String, Vec<String>)> = Vec::new();
    for (key, value) in &cmd.overrides {
        match grouped.iter_mut().find(|(k, _)| k == key) {
            Some((_, values)) => values.push(value.clone()),
            None => grouped.push((key.clone(), vec![value.clone()])),
        }
    }
    for (key, values) in grouped {
        map.set(&key, values)?;
    }
    if let Some(dir) = &cmd.out_dir {
        map.set("out_dir", vec![dir.to_string_lossy().into_owned()])?;
    }
    if let Some(seed) = cmd.seed {
        map.set("seed", vec![seed.to_string()])?;
    }
    if cmd.strict {
        map.set("strict", vec!["true".into()])?;
    }
    map.resolve()
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => {
            cmd_ingest(&IngestArgs {
                ontology: c.ontology,
                categories: c.categories,
                data: c.data,
                orphadata: c.orphadata,
                out_dir: c.out_dir,
                strict: c.strict,
            })?;
        }
        Command::Embed(c) => {
            cmd_embed(&c.matrix, &c.out_dir, &c.tsne.config())?;
        }
        Command::Centroids(c) => {
            cmd_centroids(&c.matrix, &c.coords, &c.out_dir)?;
        }
        Command::Importance(c) => {
            cmd_importance(
                &c.matrix,
                &c.out_dir,
                &ImportanceArgs {
                    permutations: c.permutations,
                    seed: c.seed,
                    top_k: c.top_k,
                    aggregation: c.aggregation,
                },
            )?;
        }
        Command::Plot(c) => {
            if c.top_k == 0 {
                return Err(CliError::Usage("--top-k must be at least 1".into()));
            }
            let spec = c.style.spec()?;
            cmd_plot(&PlotArgs {
                chart: c.chart,
                matrix: c.matrix,
                coords: c.coords,
                centroids: c.centroids,
                importance: c.importance,
                frequencies: c.frequencies,
                top_k: c.top_k,
                output: c.output,
                spec,
            })?;
        }
        Command::Run(c) => {
            let config = resolve_run(&c)?;
            let manifest = cmd_run(&config)?;
            print!("{}", render_manifest(&manifest));
        }
    }
    Ok(())
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
