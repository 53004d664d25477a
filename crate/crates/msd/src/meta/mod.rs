//! Meta-learning: the inner-loop update operator, MAML/first-order
//! meta-gradients, the multi-view self-distillation objective, and the outer
//! training/evaluation loops.

pub mod eval;
pub mod inner;
pub mod losses;
pub mod maml;
pub mod train;

pub use eval::{meta_test, EvalOptions};
pub use inner::{expand_task_params, inner_update, inner_update_fn, InnerLoopConfig};
pub use losses::{classification_loss, knowledge_consistency, ConsistencyOutput};
pub use maml::{
    maml_meta_gradient, maml_task_gradient, msd_inner, msd_task_gradient, msd_total_loss,
    outer_step, MsdLoss, MsdLossOptions, TaskGradient,
};
pub use train::{meta_train, Algo, EpisodeConfig, MetaConfig, TrainInputs, TrainOutput};
