//! Phase and tool metrics, evaluation reports and figure files.

pub mod image;
mod metrics;
mod predict;
mod report;

pub use metrics::{
    argmax, average_precision, confusion_matrix, cooccurrence_counts, cooccurrence_diff,
    cooccurrence_matrix, f1, mean_abs_diff, mean_average_precision, phase_pr_re, video_accuracy,
    CountMatrix, PhaseScores,
};
pub use predict::{
    predict_video, predict_videos, predictions_header, read_predictions, write_predictions,
    PredictionRecord,
};
pub use report::{
    evaluate_records, evaluate_run, read_matrix_csv, write_report, EvalReport, PooledScores,
    VideoScore, VideoTruth,
};
