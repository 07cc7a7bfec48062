//! Evaluation of long open-loop continuations against real ones: feature
//! envelopes over sliding windows with out-of-envelope rates, prefix
//! divergence curves under partner-swap controls, and paired
//! nonparametric statistics.

mod divergence;
mod error;
mod partner;
mod render;
mod report;
mod stability;
mod stats;
mod summary;
mod window;

pub use divergence::{prefix_divergence, tau_grid, DivMetric, DivergenceCurves, MetricCurves, Pairing};
pub use error::{EvalError, Result};
pub use partner::PartnerMap;
pub use render::render_csvs;
pub use report::{evaluate, Continuation, EvalConfig, EvalReport, Qualitative, TaskReport};
pub use stability::{scalar_features, stability_curves, window_features, EnvelopeCurve, StabilityCurves, MIN_REAL_RUNS};
pub use stats::{
    average_ranks, bootstrap_ci, median, quantile, wilcoxon_exact_p, wilcoxon_normal_p, wilcoxon_signed_rank,
    BootstrapCi, Wilcoxon, EXACT_MAX_N, MIN_NONZERO,
};
pub use summary::{specificity_summary, StatRow};
pub use window::{WindowGrid, MIN_WINDOWS};
