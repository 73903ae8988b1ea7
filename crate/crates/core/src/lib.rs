//! Graph construction, scale-free analysis and graph convolutional
//! pseudo-labeling for text classification on k-nearest-neighbor graphs.

pub mod dataset;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod knn;
pub mod pipeline;
pub mod scalefree;
pub mod sparse;
pub mod special;

pub use error::{Error, Result};
pub use graph::UndirectedGraph;
pub use knn::{build_knn_graph, degree_report, DegreeReport, DirectedKnnGraph, Metric};
pub use sparse::{DenseMatrix, SparseFeatureMatrix};
