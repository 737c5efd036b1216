//! Experiment families, their specs and report emission.

mod families;
mod plots;
mod report;
mod spec;
mod stats;

pub use families::{
    ablation_cells, run_ablation, run_desync, run_family, run_label_ratio, run_noise, run_one, run_saliency, run_stats,
    saliency_arm, split_corpus, AblationRow, DesyncRow, ExperimentResults, Heatmap, NoiseRow, RatioRow, RunSummary,
    SaliencyArm, SaliencyStats, Waveform, ZeroColumns,
};
pub use plots::{box_chart, heatmap_png, line_chart, Series};
pub use report::{emit_report, load_report, ExperimentReport};
pub use spec::{AblationGrid, ExperimentSpec, Family, StatsConfig};
pub use stats::{run_stats_validation, two_sample_ks, StatsResult};
