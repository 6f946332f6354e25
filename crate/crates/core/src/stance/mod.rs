//! Downstream stance classification, scoring and significance testing.

pub mod classifier;
pub mod experiment;
pub mod metrics;
pub mod stats;

pub use classifier::{finetune, train_stance, LabeledEmbeddings, StanceArch, StanceClassifierParams, StanceConfig};
pub use experiment::{run_experiment, EvalResult, ExperimentInputs, ExperimentReport, ExperimentSettings, MlsdShots, Regime, RegimeKind};
pub use metrics::{evaluate, macro_f1, ClassScores, ConfusionMatrix, Evaluation};
pub use stats::{paired_t_test, TTest};
