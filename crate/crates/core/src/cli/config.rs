//! `key = value` pipeline configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::error::{CliError, Result};
use super::stages::{ImportanceArgs, IngestArgs, PipelineConfig};
use crate::embed::EmbeddingConfig;
use crate::importance::{Aggregation, DEFAULT_PERMUTATIONS};
use crate::render::{parse_layers, PlotSpec};

/// Keys that may repeat; every occurrence is kept.
const LIST_KEYS: &[&str] = &["data", "orphadata"];

const KNOWN_KEYS: &[&str] = &[
    "ontology",
    "categories",
    "data",
    "orphadata",
    "out_dir",
    "strict",
    "perplexity",
    "iterations",
    "learning_rate",
    "exaggeration_factor",
    "exaggeration_iters",
    "momentum_early",
    "momentum_late",
    "momentum_switch_iter",
    "seed",
    "perplexity_tolerance",
    "calibration_max_iters",
    "permutations",
    "importance_seed",
    "top_k",
    "aggregation",
    "layers",
    "width",
    "height",
    "margin",
    "marker_radius",
    "centroid_marker_radius",
    "font_size",
    "label_offset",
    "palette",
];

pub const DEFAULT_RUN_LAYERS: &str = "markers,class_colors,class_centroids,feature_centroids";

/// Raw key/value pairs. Relative paths are resolved against `base_dir`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, Vec<String>>,
    base_dir: PathBuf,
}

impl ConfigMap {
    /// Parse `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut map = ConfigMap {
            values: BTreeMap::new(),
            base_dir: base_dir.to_path_buf(),
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
            map.insert(key.trim(), value.trim(), n + 1)?;
        }
        Ok(map)
    }

    fn insert(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::Usage(format!("config line {line}: unknown key `{key}`")));
        }
        let slot = self.values.entry(key.to_string()).or_default();
        if LIST_KEYS.contains(&key) {
            slot.push(value.to_string());
        } else if slot.is_empty() {
            slot.push(value.to_string());
        } else {
            return Err(CliError::Usage(format!("config line {line}: key `{key}` given twice")));
        }
        Ok(())
    }

    /// Replace a key's value(s) from the command line. Paths given this way
    /// stay relative to the working directory.
    pub fn set(&mut self, key: &str, values: Vec<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::Usage(format!("unknown configuration key `{key}`")));
        }
        let values = if is_path_key(key) {
            values
                .into_iter()
                .map(|v| absolutize(&v))
                .collect()
        } else {
            values
        };
        self.values.insert(key.to_string(), values);
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).and_then(|v| v.last()).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| CliError::Usage(format!("missing required configuration key `{key}`")))
    }

    fn path(&self, value: &str) -> PathBuf {
        let p = PathBuf::from(value);
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Usage(format!("configuration key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    /// Resolve every setting, applying defaults for the optional ones.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let ontology = self.path(self.require("ontology")?);
        let categories = self.path(self.require("categories")?);
        let out_dir = self.path(self.require("out_dir")?);
        let data: Vec<PathBuf> = self
            .values
            .get("data")
            .map(|v| v.iter().map(|p| self.path(p)).collect())
            .unwrap_or_default();
        let orphadata = self
            .values
            .get("orphadata")
            .map(|v| {
                v.iter()
                    .map(|entry| {
                        let (class, path) = entry.split_once('=').ok_or_else(|| {
                            CliError::Usage(format!("orphadata entry `{entry}` must be CLASS=PATH"))
                        })?;
                        Ok((class.trim().to_string(), self.path(path.trim())))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?
            .unwrap_or_default();
        if data.is_empty() && orphadata.is_empty() {
            return Err(CliError::Usage(
                "missing required configuration key `data` (or `orphadata`)".into(),
            ));
        }

        let d = EmbeddingConfig::default();
        let embedding = EmbeddingConfig {
            perplexity: self.parsed("perplexity", d.perplexity)?,
            iterations: self.parsed("iterations", d.iterations)?,
            learning_rate: self.parsed("learning_rate", d.learning_rate)?,
            exaggeration_factor: self.parsed("exaggeration_factor", d.exaggeration_factor)?,
            exaggeration_iters: self.parsed("exaggeration_iters", d.exaggeration_iters)?,
            momentum_early: self.parsed("momentum_early", d.momentum_early)?,
            momentum_late: self.parsed("momentum_late", d.momentum_late)?,
            momentum_switch_iter: self.parsed("momentum_switch_iter", d.momentum_switch_iter)?,
            seed: self.parsed("seed", d.seed)?,
            perplexity_tolerance: self.parsed("perplexity_tolerance", d.perplexity_tolerance)?,
            calibration_max_iters: self.parsed("calibration_max_iters", d.calibration_max_iters)?,
        };
        let importance = ImportanceArgs {
            permutations: self.parsed("permutations", DEFAULT_PERMUTATIONS)?,
            seed: self.parsed("importance_seed", embedding.seed)?,
            top_k: self.parsed("top_k", 10usize)?,
            aggregation: self.parsed("aggregation", Aggregation::Max)?,
        };
        if importance.top_k == 0 {
            return Err(CliError::Usage("configuration key `top_k` must be at least 1".into()));
        }

        let p = PlotSpec::default();
        let layers = parse_layers(self.get("layers").unwrap_or(DEFAULT_RUN_LAYERS))
            .map_err(|e| CliError::Usage(format!("configuration key `layers`: {e}")))?;
        let palette = match self.get("palette") {
            Some(v) => v.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect(),
            None => p.palette.clone(),
        };
        let plot = PlotSpec {
            width: self.parsed("width", p.width)?,
            height: self.parsed("height", p.height)?,
            margin: self.parsed("margin", p.margin)?,
            marker_radius: self.parsed("marker_radius", p.marker_radius)?,
            centroid_marker_radius: self.parsed("centroid_marker_radius", p.centroid_marker_radius)?,
            layers,
            palette,
            font_size: self.parsed("font_size", p.font_size)?,
            label_offset: self.parsed("label_offset", p.label_offset)?,
        };
        plot.validate().map_err(CliError::from)?;

        Ok(PipelineConfig {
            ingest: IngestArgs {
                ontology,
                categories,
                data,
                orphadata,
                out_dir,
                strict: self.parsed("strict", false)?,
            },
            embedding,
            importance,
            plot,
        })
    }
}

fn is_path_key(key: &str) -> bool {
    matches!(key, "ontology" | "categories" | "data" | "out_dir")
}

fn absolutize(value: &str) -> String {
    let p = Path::new(value);
    if p.is_absolute() {
        return value.to_string();
    }
    std::env::current_dir()
        .map(|cwd| cwd.join(p).to_string_lossy().into_owned())
        .unwrap_or_else(|_| value.to_string())
}
