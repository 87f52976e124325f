//! Deterministic SVG figures: the embedding scatter plot with class and
//! feature centroid overlays, the stacked per-class feature frequency chart,
//! and the per-class importance bar chart.
//!
//! Output is plain SVG 1.1 text built with fixed numeric formatting, so the
//! same inputs always produce the same bytes.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::centroids::{Centroid, CentroidKind, CentroidSet};
use crate::dataset::FrequencyTable;
use crate::embed::{Embedding, Point};
use crate::importance::ImportanceReport;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("embedding has no observations")]
    EmptyEmbedding,
    #[error("layer `{0}` requested but its input was not provided")]
    MissingLayerInput(Layer),
    #[error("no layers selected")]
    NoLayers,
    #[error("frequency table is empty")]
    EmptyTable,
    #[error("top_k = {top_k} exceeds the {features} available features")]
    TopKTooLarge { top_k: usize, features: usize },
    #[error("invalid plot settings: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, RenderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Markers,
    ClassColors,
    ClassCentroids,
    FeatureCentroids,
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layer::Markers => "markers",
            Layer::ClassColors => "class_colors",
            Layer::ClassCentroids => "class_centroids",
            Layer::FeatureCentroids => "feature_centroids",
        })
    }
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "markers" => Ok(Layer::Markers),
            "class_colors" => Ok(Layer::ClassColors),
            "class_centroids" => Ok(Layer::ClassCentroids),
            "feature_centroids" => Ok(Layer::FeatureCentroids),
            other => Err(format!(
                "unknown layer `{other}` (expected markers, class_colors, class_centroids, feature_centroids)"
            )),
        }
    }
}

/// Parse a comma-separated layer list such as `markers,class_colors`.
pub fn parse_layers(text: &str) -> std::result::Result<BTreeSet<Layer>, String> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Layer::from_str)
        .collect()
}

pub const DEFAULT_PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

const NEUTRAL_MARKER: &str = "#808080";
const FEATURE_CENTROID_FILL: &str = "#ffffff";
const INK: &str = "#222222";

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub marker_radius: f64,
    pub centroid_marker_radius: f64,
    pub layers: BTreeSet<Layer>,
    pub palette: Vec<String>,
    pub font_size: f64,
    pub label_offset: f64,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            width: 800.0,
            height: 600.0,
            margin: 50.0,
            marker_radius: 4.0,
            centroid_marker_radius: 9.0,
            layers: [Layer::Markers].into_iter().collect(),
            palette: DEFAULT_PALETTE.iter().map(|s| s.to_string()).collect(),
            font_size: 10.0,
            label_offset: 6.0,
        }
    }
}

impl PlotSpec {
    pub fn with_layers(mut self, layers: &[Layer]) -> Self {
        self.layers = layers.iter().copied().collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RenderError::InvalidSpec(m.to_string()));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("width and height must be positive");
        }
        if !(self.margin >= 0.0 && self.margin < self.width.min(self.height) / 2.0) {
            return bad("margin must be below half the smaller dimension");
        }
        if !(self.marker_radius > 0.0 && self.centroid_marker_radius > 0.0 && self.font_size > 0.0) {
            return bad("radii and font size must be positive");
        }
        if self.palette.is_empty() {
            return bad("palette is empty");
        }
        Ok(())
    }

    fn color(&self, index: usize) -> &str {
        &self.palette[index % self.palette.len()]
    }
}

/// Map from embedding units to SVG pixels: one uniform scale (aspect kept),
/// x increasing to the right and y flipped so larger values sit higher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewTransform {
    scale: f64,
    data_center: Point,
    view_center: Point,
}

impl ViewTransform {
    /// Fit the bounding box of `points` into the margin-inset viewport.
    pub fn fit(points: &[Point], spec: &PlotSpec) -> ViewTransform {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        let inner_w = spec.width - 2.0 * spec.margin;
        let inner_h = spec.height - 2.0 * spec.margin;
        let (span_x, span_y) = (x1 - x0, y1 - y0);
        let scale = match (span_x > 0.0, span_y > 0.0) {
            (true, true) => (inner_w / span_x).min(inner_h / span_y),
            (true, false) => inner_w / span_x,
            (false, true) => inner_h / span_y,
            (false, false) => 1.0,
        };
        ViewTransform {
            scale,
            data_center: Point::new(0.5 * (x0 + x1), 0.5 * (y0 + y1)),
            view_center: Point::new(spec.width / 2.0, spec.height / 2.0),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.view_center.x + (p.x - self.data_center.x) * self.scale,
            self.view_center.y - (p.y - self.data_center.y) * self.scale,
        )
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" || s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn text_width(text: &str, font_size: f64) -> f64 {
    0.6 * font_size * text.chars().count() as f64
}

fn open_svg(spec: &PlotSpec) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"{f}\">",
        w = num(spec.width),
        h = num(spec.height),
        f = num(spec.font_size)
    );
    let _ = writeln!(s, "<rect class=\"background\" x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>", num(spec.width), num(spec.height));
    s
}

/// Horizontal legend row of colored squares starting at (`x`, `y`).
fn legend(s: &mut String, entries: &[(String, String)], x: f64, y: f64, spec: &PlotSpec) {
    s.push_str("<g class=\"legend\">\n");
    let box_size = spec.font_size;
    let mut cx = x;
    for (label, color) in entries {
        let _ = writeln!(
            s,
            "<rect class=\"legend-swatch\" x=\"{}\" y=\"{}\" width=\"{b}\" height=\"{b}\" fill=\"{}\"/>",
            num(cx),
            num(y),
            color,
            b = num(box_size)
        );
        let _ = writeln!(
            s,
            "<text class=\"legend-label\" x=\"{}\" y=\"{}\" fill=\"{INK}\">{}</text>",
            num(cx + box_size + 4.0),
            num(y + box_size * 0.85),
            escape(label)
        );
        cx += box_size + 4.0 + text_width(label, spec.font_size) + 14.0;
    }
    s.push_str("</g>\n");
}

struct PlacedLabel {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl PlacedLabel {
    fn overlaps(&self, other: &PlacedLabel) -> bool {
        self.x < other.x + other.w && other.x < self.x + self.w && self.y < other.y + other.h && other.y < self.y + self.h
    }
}

/// Scatter plot of the embedding with the requested overlay layers.
///
/// `class_labels` is required for [`Layer::ClassColors`] and `centroids` for
/// either centroid layer. Every observation becomes one `circle.marker`;
/// every drawn centroid becomes one ringed `circle.centroid` plus a
/// `text.centroid-label`.
pub fn render_scatter<S: AsRef<str>>(
    embedding: &Embedding,
    class_labels: Option<&[S]>,
    centroids: Option<&CentroidSet>,
    spec: &PlotSpec,
) -> Result<String> {
    spec.validate()?;
    if spec.layers.is_empty() {
        return Err(RenderError::NoLayers);
    }
    if embedding.is_empty() {
        return Err(RenderError::EmptyEmbedding);
    }
    let has = |l: Layer| spec.layers.contains(&l);
    if has(Layer::ClassColors) && class_labels.is_none() {
        return Err(RenderError::MissingLayerInput(Layer::ClassColors));
    }
    for layer in [Layer::ClassCentroids, Layer::FeatureCentroids] {
        if has(layer) && centroids.is_none() {
            return Err(RenderError::MissingLayerInput(layer));
        }
    }
    if let Some(labels) = class_labels {
        if labels.len() != embedding.len() {
            return Err(RenderError::InvalidSpec(format!(
                "{} class labels for {} observations",
                labels.len(),
                embedding.len()
            )));
        }
    }

    // class colors by first appearance among observations, then centroids
    let mut class_order: Vec<String> = Vec::new();
    if let Some(labels) = class_labels {
        for l in labels {
            if !class_order.iter().any(|c| c == l.as_ref()) {
                class_order.push(l.as_ref().to_string());
            }
        }
    }
    if let Some(set) = centroids {
        for c in set.of_kind(CentroidKind::Class) {
            if !class_order.contains(&c.label) {
                class_order.push(c.label.clone());
            }
        }
    }
    let color_of: HashMap<&str, &str> = class_order
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), spec.color(i)))
        .collect();

    let mut drawn: Vec<&Centroid> = Vec::new();
    if let Some(set) = centroids {
        if has(Layer::FeatureCentroids) {
            drawn.extend(set.of_kind(CentroidKind::Feature));
        }
        if has(Layer::ClassCentroids) {
            drawn.extend(set.of_kind(CentroidKind::Class));
        }
    }

    let mut extent: Vec<Point> = Vec::new();
    if has(Layer::Markers) {
        extent.extend(embedding.coords.iter().copied());
    }
    extent.extend(drawn.iter().map(|c| c.point()));
    if extent.is_empty() {
        // only class_colors requested, or centroid layers with nothing in them
        extent.extend(embedding.coords.iter().copied());
    }
    let view = ViewTransform::fit(&extent, spec);

    let mut s = open_svg(spec);
    let (left, right) = (spec.margin, spec.width - spec.margin);
    let (top, bottom) = (spec.margin, spec.height - spec.margin);
    s.push_str("<g class=\"axes\">\n");
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{INK}\" stroke-width=\"1\"/>",
        num(left),
        num(bottom),
        num(right),
        num(bottom)
    );
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{INK}\" stroke-width=\"1\"/>",
        num(left),
        num(bottom),
        num(left),
        num(top)
    );
    let _ = writeln!(
        s,
        "<text class=\"axis-label\" x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{INK}\">Dimension 1 (arbitrary units)</text>",
        num((left + right) / 2.0),
        num(bottom + spec.margin * 0.6)
    );
    let ylab = Point::new(left - spec.margin * 0.4, (top + bottom) / 2.0);
    let _ = writeln!(
        s,
        "<text class=\"axis-label\" x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" fill=\"{INK}\" transform=\"rotate(-90 {x} {y})\">Dimension 2 (arbitrary units)</text>",
        x = num(ylab.x),
        y = num(ylab.y)
    );
    s.push_str("</g>\n");

    if has(Layer::Markers) {
        s.push_str("<g class=\"markers\">\n");
        for (i, p) in embedding.coords.iter().enumerate() {
            let q = view.apply(*p);
            let fill = match (has(Layer::ClassColors), class_labels) {
                (true, Some(labels)) => color_of[labels[i].as_ref()],
                _ => NEUTRAL_MARKER,
            };
            let _ = writeln!(
                s,
                "<circle class=\"marker\" cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{fill}\" fill-opacity=\"0.75\"/>",
                num(q.x),
                num(q.y),
                num(spec.marker_radius)
            );
        }
        s.push_str("</g>\n");
    }

    if !drawn.is_empty() {
        s.push_str("<g class=\"centroids\">\n");
        for c in &drawn {
            let q = view.apply(c.point());
            let (class, fill) = match c.kind {
                CentroidKind::Class => ("centroid class-centroid", color_of[c.label.as_str()]),
                CentroidKind::Feature => ("centroid feature-centroid", FEATURE_CENTROID_FILL),
            };
            let _ = writeln!(
                s,
                "<circle class=\"{class}\" cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{fill}\" stroke=\"{INK}\" stroke-width=\"2\"/>",
                num(q.x),
                num(q.y),
                num(spec.centroid_marker_radius)
            );
        }
        s.push_str("</g>\n");

        // labels placed in label order, pushed down until clear of earlier ones
        let mut order: Vec<&Centroid> = drawn.clone();
        order.sort_by(|a, b| a.label.cmp(&b.label).then(a.kind.cmp(&b.kind)));
        let mut placed: Vec<PlacedLabel> = Vec::new();
        s.push_str("<g class=\"centroid-labels\">\n");
        for c in order {
            let q = view.apply(c.point());
            let mut label = PlacedLabel {
                x: q.x + spec.centroid_marker_radius + spec.label_offset,
                y: q.y - spec.font_size / 2.0,
                w: text_width(&c.label, spec.font_size),
                h: spec.font_size,
            };
            // try rows below and above in turn, preferring ones inside the frame
            let step = spec.font_size + 2.0;
            let home = label.y;
            let (lo, hi) = (spec.margin, spec.height - spec.margin);
            let fits = |l: &PlacedLabel| !placed.iter().any(|p| p.overlaps(l));
            let inside = |l: &PlacedLabel| l.y >= lo && l.y + l.h <= hi;
            let mut fallback = None;
            for k in 0..(4 * placed.len() + 2) {
                let shift = if k % 2 == 0 { (k / 2) as f64 } else { -(((k + 1) / 2) as f64) };
                label.y = home + shift * step;
                if fits(&label) {
                    if inside(&label) {
                        fallback = None;
                        break;
                    }
                    fallback.get_or_insert(label.y);
                }
            }
            if let Some(y) = fallback {
                label.y = y;
            }
            let weight = if c.kind == CentroidKind::Class { "bold" } else { "normal" };
            let _ = writeln!(
                s,
                "<text class=\"centroid-label\" x=\"{}\" y=\"{}\" font-weight=\"{weight}\" fill=\"{INK}\">{}</text>",
                num(label.x),
                num(label.y + spec.font_size * 0.85),
                escape(&c.label)
            );
            placed.push(label);
        }
        s.push_str("</g>\n");
    }

    if has(Layer::ClassColors) {
        let entries: Vec<(String, String)> = class_order
            .iter()
            .map(|c| (c.clone(), color_of[c.as_str()].to_string()))
            .collect();
        legend(&mut s, &entries, left, spec.margin * 0.3, spec);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Stacked bar chart: one column per feature (largest total first), one
/// segment per class in class order, heights linear in counts.
pub fn render_stacked_bars(freq: &FrequencyTable, spec: &PlotSpec) -> Result<String> {
    spec.validate()?;
    if freq.is_empty() {
        return Err(RenderError::EmptyTable);
    }
    let d = freq.features.len();
    let mut columns: Vec<usize> = (0..d).collect();
    columns.sort_by_key(|&j| std::cmp::Reverse(freq.feature_total(j)));
    let max_total = columns.iter().map(|&j| freq.feature_total(j)).max().unwrap_or(0);

    let longest = freq.features.iter().map(|f| text_width(f, spec.font_size)).fold(0.0, f64::max);
    let label_band = (longest * std::f64::consts::FRAC_1_SQRT_2 + spec.font_size).min(spec.height * 0.35);
    let left = spec.margin;
    let right = spec.width - spec.margin;
    let top = spec.margin;
    let baseline = spec.height - spec.margin - label_band;
    let inner_h = (baseline - top).max(1.0);
    let unit = if max_total > 0 { inner_h / max_total as f64 } else { 0.0 };
    let slot = (right - left) / d as f64;
    let bar_w = slot * 0.8;

    let mut s = open_svg(spec);
    s.push_str("<g class=\"axes\">\n");
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{INK}\" stroke-width=\"1\"/>",
        num(left),
        num(baseline),
        num(right),
        num(baseline)
    );
    let _ = writeln!(
        s,
        "<text class=\"axis-label\" x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" fill=\"{INK}\" transform=\"rotate(-90 {x} {y})\">Observations with feature</text>",
        x = num(left - spec.margin * 0.4),
        y = num((top + baseline) / 2.0)
    );
    s.push_str("</g>\n<g class=\"bars\">\n");
    for (slot_index, &j) in columns.iter().enumerate() {
        let x = left + slot_index as f64 * slot + (slot - bar_w) / 2.0;
        let mut y = baseline;
        for (c, class) in freq.classes.iter().enumerate() {
            let count = freq.counts[c][j];
            let h = count as f64 * unit;
            y -= h;
            let _ = writeln!(
                s,
                "<rect class=\"segment\" data-class=\"{}\" data-feature=\"{}\" data-count=\"{count}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                escape(class),
                escape(&freq.features[j]),
                num(x),
                num(y),
                num(bar_w),
                num(h),
                spec.color(c)
            );
        }
        let lx = x + bar_w / 2.0;
        let ly = baseline + spec.font_size;
        let _ = writeln!(
            s,
            "<text class=\"feature-label\" x=\"{x}\" y=\"{y}\" text-anchor=\"end\" fill=\"{INK}\" transform=\"rotate(-45 {x} {y})\">{}</text>",
            escape(&freq.features[j]),
            x = num(lx),
            y = num(ly)
        );
    }
    s.push_str("</g>\n");
    let entries: Vec<(String, String)> = freq
        .classes
        .iter()
        .enumerate()
        .map(|(c, name)| (name.clone(), spec.color(c).to_string()))
        .collect();
    legend(&mut s, &entries, left, spec.margin * 0.3, spec);
    s.push_str("</svg>\n");
    Ok(s)
}

/// Horizontal grouped bars for the `top_k` highest-ranked features: one bar
/// per class, length linear in mean |attribution|, the longest bar spanning
/// the full plotting width.
pub fn render_importance_bars(report: &ImportanceReport, top_k: usize, spec: &PlotSpec) -> Result<String> {
    spec.validate()?;
    let d = report.features.len();
    if top_k > d {
        return Err(RenderError::TopKTooLarge { top_k, features: d });
    }
    let shown: Vec<usize> = report.ranking.iter().take(top_k).copied().collect();
    let k = report.classes.len().max(1);
    let max_value = shown
        .iter()
        .flat_map(|&j| report.per_class[j].iter().copied())
        .fold(0.0, f64::max);

    let longest = shown
        .iter()
        .map(|&j| text_width(&report.features[j], spec.font_size))
        .fold(0.0, f64::max);
    let left = spec.margin + longest + spec.label_offset;
    let right = spec.width - spec.margin;
    let top = spec.margin;
    let bottom = spec.height - spec.margin;
    let full = (right - left).max(1.0);
    let unit = if max_value > 0.0 { full / max_value } else { 0.0 };
    let row_h = if shown.is_empty() { 0.0 } else { (bottom - top) / shown.len() as f64 };
    let bar_h = row_h * 0.8 / k as f64;

    let mut s = open_svg(spec);
    s.push_str("<g class=\"axes\">\n");
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{INK}\" stroke-width=\"1\"/>",
        num(left),
        num(top),
        num(left),
        num(bottom)
    );
    let _ = writeln!(
        s,
        "<text class=\"axis-label\" x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{INK}\">mean |Shapley value| per class</text>",
        num((left + right) / 2.0),
        num(bottom + spec.margin * 0.6)
    );
    s.push_str("</g>\n<g class=\"bars\">\n");
    for (row, &j) in shown.iter().enumerate() {
        let y0 = top + row as f64 * row_h + row_h * 0.1;
        for (c, class) in report.classes.iter().enumerate() {
            let value = report.per_class[j][c];
            let _ = writeln!(
                s,
                "<rect class=\"bar\" data-feature=\"{}\" data-class=\"{}\" data-value=\"{value}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                escape(&report.features[j]),
                escape(class),
                num(left),
                num(y0 + c as f64 * bar_h),
                num(value * unit),
                num(bar_h),
                spec.color(c)
            );
        }
        let _ = writeln!(
            s,
            "<text class=\"feature-label\" x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"{INK}\">{}</text>",
            num(left - spec.label_offset),
            num(top + (row as f64 + 0.5) * row_h + spec.font_size * 0.35),
            escape(&report.features[j])
        );
    }
    s.push_str("</g>\n");
    let entries: Vec<(String, String)> = report
        .classes
        .iter()
        .enumerate()
        .map(|(c, name)| (name.clone(), spec.color(c).to_string()))
        .collect();
    legend(&mut s, &entries, spec.margin, spec.margin * 0.3, spec);
    s.push_str("</svg>\n");
    Ok(s)
}
