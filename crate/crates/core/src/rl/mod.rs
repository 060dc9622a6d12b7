//! Learned AV control: environment, soft actor-critic and evaluation.

pub mod env;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod sac;
pub mod train;

pub use env::{reward, ControlUnitEnv, EnvConfig, RewardInputs, RewardParams, RlState, StepResult};
pub use policy::PolicyFunction;
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::{actor_gradient, actor_objective, LossReport, Sac, SacHyper};
pub use train::{
    eval_seeds, evaluate, moving_average, train, write_curve, ControllerChoice, CurvePoint, EvalReport, EvalRun,
    PolicyController, TrainConfig, TrainOutcome,
};
