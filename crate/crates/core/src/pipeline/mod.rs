//! Tiled inference, experiment drivers and report rendering.

mod experiments;
pub mod render;
mod tiling;

pub use experiments::{
    abs_rel_by_domain, dump_gates, gates_from_csv, gates_to_csv, load_confusion_csv, metric_table, plot_gates,
    run_experiment, run_variant, Datasets, ExperimentConfig, ExperimentKind, ExperimentReport,
    GateDump, Variant, VariantResult, DIAGONAL_BAND, GATE_CSV_HEADER, OVERLAP_WINDOW,
};
pub use tiling::{direct_inference, infer_depth, plan_tiles, tiled_inference, DepthPredictor, ModelPredictor, TilePlan};
