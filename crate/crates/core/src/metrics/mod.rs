//! Evaluation metrics for generated group dances.

pub mod dancer;
pub mod frechet;
pub mod group;
pub mod report;

pub use dancer::{generation_diversity, mmc_beat_alignment, motion_change_curve, pfc};
pub use frechet::frechet_distance;
pub use group::{gmc, gmr, group_features, tif};
pub use report::{EvalInput, Metric, MetricRegistry, MetricReport, MetricValue};
