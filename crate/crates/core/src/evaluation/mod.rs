//! Metrics, calibration, significance tests and the robustness protocols.

pub mod calibration;
pub mod metrics;
pub mod protocols;
pub mod report;
pub mod stats;

pub use calibration::{calibration, Calibration, ECE_BINS, NLL_FLOOR};
pub use metrics::{accuracy_macro_f1, movie_confusion_rate, Confusion, MOVIE_CLASSES};
pub use protocols::{
    cross_frequency, cross_task, dominant_prediction, fold_summary, loso, split_by_task,
    test_set_at_rate, FoldResult, FoldSummary, LosoReport, RateResult, SkippedFold, TaskRow,
};
pub use report::{EvalReport, Predictions};
pub use stats::{
    incomplete_beta, ln_gamma, mcnemar, paired_t_test, student_t_two_sided, t_test_from_summary,
    McNemar, TTest,
};
