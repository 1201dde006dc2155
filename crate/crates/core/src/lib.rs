//! Phase identification of smart meters from interval voltage and power.
//!
//! Pipeline: [`ingest`] loads and cleans meter data, [`segmentation`]
//! selects jointly low-power runs per meter pair, [`correlation`] turns them
//! into a correlation-distance matrix, [`clustering`] builds a dendrogram,
//! [`labeling`] assigns phases by majority vote. [`ensemble`] combines
//! partitions from many segmentation settings for unlabeled feeders, and
//! [`circuit`] / [`synth`] simulate secondary circuits and whole feeders.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod circuit;
pub mod clustering;
pub mod correlation;
pub mod ensemble;
pub mod error;
pub mod ingest;
pub mod labeling;
pub mod phase;
pub mod pipeline;
pub mod segmentation;
pub mod synth;

pub use cache::DistanceCache;
pub use circuit::{
    monte_carlo_pcc, solve_secondary, BinPcc, CircuitSample, ConnectionType, LoadBin, MonteCarloConfig,
    SecondaryCircuit,
};
pub use clustering::{agglomerative_cluster, cluster_sweep, cut, Dendrogram, Linkage, Partition};
pub use correlation::{correlation_distance, pairwise_distance_matrix, pcc, DistanceMatrix};
pub use ensemble::{
    build_ensemble, cluster_graph, co_association, cts_matrix, final_partition, AnalysisOptions, Ensemble,
    SimilarityMatrix,
};
pub use error::{Error, ErrorCategory, Result};
pub use ingest::{
    drop_sparse_meters, load_meter_csv, normalize_voltages, read_meter_csv, FeederDataset, IngestConfig, MeterSeries,
};
pub use labeling::{majority_vote, score, AccuracyReport, PhaseAssignment};
pub use phase::Phase;
pub use segmentation::{joint_segments, low_power_mask, SegmentParams, SegmentSet};
pub use synth::{generate_synthetic_feeder, SyntheticFeeder, SyntheticFeederConfig, TruthRecord};
