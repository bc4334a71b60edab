//! Static and adaptive grid segmentation of chart images, importance map
//! aggregation from patch-click annotations, similarity metrics, and
//! participant convergence analysis.

pub mod canny;
pub mod convergence;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod importance;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod raster;
pub mod region;
pub mod text;

pub use canny::{canny_edges, CannyParams};
pub use convergence::{
    convergence, convergence_many, synth_annotators, ConvergenceConfig, ConvergenceReport, CurvePoint,
    UndefinedPrefix,
};
pub use error::{Error, Result, MIN_TILE_SIZE};
pub use grid::{Block, GridMode, GridSpec, RegionLabel, TileRect};
pub use importance::{
    aggregate, annotation_mask, render_points, telemetry_stats, Annotation, EventKind, ImportanceMap,
    InteractionEvent, PointAnnotation, PointClick, TelemetryStats,
};
pub use metrics::{compare, Metric, MetricOptions, SimilarityScore};
pub use optimizer::{
    adaptive_grid, enumerate_candidates, greedy_fallback, solve_min_partition, AdaptiveGrid, BinaryGrid,
    CandidateBlock, PartitionSolution, RegionReport, SolveStatus, SolverOptions,
};
pub use pipeline::{build_grids, stimulus_id, GridBuild, PipelineParams};
pub use raster::{BinaryMask, Raster};
pub use region::{
    label_tiles, static_grid, LabelParams, TextBox, TextSource, TileGrid, DEFAULT_STATIC_N, DEFAULT_TILE_SIZE,
};
pub use text::{detect_text_heuristic, TextHeuristicParams};
