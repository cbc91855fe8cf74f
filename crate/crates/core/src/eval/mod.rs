//! Unweighted metrics, cross-validation and hypnogram output.

mod cv;
mod hypnogram;
mod metrics;

pub use cv::{cross_validate, fold_assignment, CvConfig, CvReport, FoldResult, Scheme, REPORT_FORMAT_VERSION};
pub use hypnogram::{hypnogram_svg, hypnogram_text, render_hypnogram};
pub use metrics::{confusion, score, ClassMetrics, ConfusionMatrix, MetricReport};
