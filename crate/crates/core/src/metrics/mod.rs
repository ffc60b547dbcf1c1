//! AUC/accuracy, operation counts, timing and the ablation harness.

pub mod ablation;
pub mod auc;
pub mod eval;
pub mod flops;
pub mod timing;

pub use ablation::{ablation_run, mean_auc, write_ablation, AblationPlan, AblationRow};
pub use auc::{accuracy, pairwise_auc, roc_auc};
pub use eval::{bench_inference, evaluate, write_bag_scores, EvalReport};
pub use flops::{count_flops, FlopsBreakdown};
pub use timing::{linear_fit, time_runs, LinearFit, TimingStats};
