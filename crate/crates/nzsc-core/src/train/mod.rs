//! Training: generalized advantage estimation, independent PPO, and the
//! regime drivers built on them.

pub mod curriculum;
pub mod gae;
pub mod ppo;

pub use curriculum::CurriculumSchedule;
pub use gae::compute_gae;
pub use ppo::{
    ppo_loss_grad, ppo_update, prepare_agent_data, AgentTrainData, LossStats, PpoConfig,
    PpoTrainer, TrainError, UpdateStats,
};
pub mod regimes;

pub use regimes::{
    diversify_population, mep_population_rewards, train_mep_learner, train_self_play,
    LearnerOutcome, MepConfig, MetricsLog, MixturePolicy, PartnerPriorities, PolicyPair,
    TrainOutcome, TrainRecord,
};
