//! Structural similarity, Inception Score and checkpoint evaluation.

mod classifier;
mod evaluate;
mod inception;
mod ssim;

pub use classifier::{
    cross_entropy, log_softmax, ClassifierConfig, ShapeClassifier, CLASSIFIER_META,
    CLASSIFIER_WEIGHTS,
};
pub use evaluate::{
    evaluate, generate_for_samples, score_generated, upsample_to, EvalOptions, Generated,
    MetricsReport, SampleMetrics, Summary,
};
pub use inception::{
    default_splits, inception_score, inception_score_from_predictions, ClassifierHandle,
};
pub use ssim::{ssim, ssim_from_stats, ssim_gray, SsimMode, SsimParams};
