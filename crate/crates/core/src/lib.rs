//! Annotated 2D scatter plots for ontology-coded, labeled observations.
//!
//! The pipeline reduces ontology terms to category features by subsumption
//! ([`ontology`], [`dataset`]), embeds the binary feature matrix with exact
//! t-SNE ([`embed`]), computes class and feature centroids in the embedding
//! ([`centroids`]), ranks features by Shapley attribution under a
//! nearest-centroid surrogate ([`importance`]) and renders SVG figures
//! ([`render`]). [`cli`] wires the stages together and persists every
//! intermediate as CSV.

pub mod centroids;
pub mod cli;
pub mod dataset;
pub mod embed;
pub mod importance;
pub mod ontology;
pub mod render;

pub use centroids::{class_centroids, feature_centroids, Centroid, CentroidKind, CentroidSet};
pub use dataset::{build_matrix, FrequencyTable, PhenotypeMatrix, RowLabel, VariantRecord};
pub use embed::{run_tsne, Embedding, EmbeddingConfig, Point};
pub use importance::{rank_features, ImportanceReport, SurrogateModel};
pub use ontology::{parse_obo, CategorySet, OntologyGraph};
pub use render::{Layer, PlotSpec};
