//! Generic Dec-POMDP contract.
//!
//! Every game in this crate is fully cooperative with a fixed horizon: all
//! agents receive the same scalar reward each step, and `done` is true
//! exactly when the step counter reaches the horizon. Observations are flat
//! real vectors so one policy architecture serves every environment.

use crate::rng::RngStream;
use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

/// Maximum number of action heads any environment uses (movement + token
/// guess in the largest case).
pub const MAX_ACTION_HEADS: usize = 2;

/// One agent's action: one index per action head. Environments with a
/// single head read only `[0]`.
pub type AgentAction = [usize; MAX_ACTION_HEADS];

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("episode already finished (t = {t}, horizon = {horizon})")]
    EpisodeFinished { t: usize, horizon: usize },
    #[error("agent {agent} head {head}: action {action} out of range (size {size})")]
    ActionOutOfRange { agent: usize, head: usize, action: usize, size: usize },
    #[error("joint action has {got} entries, environment has {want} agents")]
    JointActionArity { got: usize, want: usize },
    #[error("dimension mismatch: {what} is {got}, expected {want}")]
    DimensionMismatch { what: &'static str, got: usize, want: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// A fixed-horizon cooperative Dec-POMDP with a shared discrete action space.
///
/// `reset` draws from the initial state distribution; `step` applies a joint
/// action; `observe` is a pure function of the state (all randomness enters
/// at reset/step and is stored in the state, including per-episode noisy
/// instance copies), so repeated observation is free and side-effect free.
pub trait Environment: Sync {
    type State: Send + Sync;

    fn num_agents(&self) -> usize;
    /// Sizes of the shared action heads; most games have exactly one head.
    fn action_dims(&self) -> &[usize];
    fn observation_dim(&self) -> usize;
    fn horizon(&self) -> usize;

    fn reset(&self, rng: &mut RngStream) -> Self::State;
    fn step(
        &self,
        state: &mut Self::State,
        joint: &[AgentAction],
        rng: &mut RngStream,
    ) -> Result<StepOutcome, EnvError>;
    fn observe(&self, state: &Self::State, agent: usize, out: &mut [f32]);

    /// Whether the most recently applied step satisfied the game's
    /// coordination predicate (same lever, co-located mining, mirrored
    /// correct guess). False before any step.
    fn coordinated(&self, state: &Self::State) -> bool;

    fn check_joint(&self, joint: &[AgentAction]) -> Result<(), EnvError> {
        if joint.len() != self.num_agents() {
            return Err(EnvError::JointActionArity { got: joint.len(), want: self.num_agents() });
        }
        for (agent, action) in joint.iter().enumerate() {
            for (head, &size) in self.action_dims().iter().enumerate() {
                if action[head] >= size {
                    return Err(EnvError::ActionOutOfRange {
                        agent,
                        head,
                        action: action[head],
                        size,
                    });
                }
            }
        }
        Ok(())
    }

    /// Observation vector as a fresh allocation; the batched path writes
    /// into preallocated buffers instead.
    fn observe_vec(&self, state: &Self::State, agent: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.observation_dim()];
        self.observe(state, agent, &mut out);
        out
    }
}

/// One logical step record; the batched rollout stores the same fields
/// struct-of-arrays style in [`crate::rollout::EpisodeBatch`].
#[derive(Debug, Clone)]
pub struct Transition {
    pub observations: Vec<Vec<f32>>,
    pub joint_action: Vec<AgentAction>,
    pub reward: f64,
    pub done: bool,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
}

/// Anything that can map a batch of observations to action-head logits and
/// state values while advancing a recurrent hidden state. Implemented by the
/// actor-critic network; test doubles implement it directly.
pub trait BatchPolicy: Sync {
    fn obs_dim(&self) -> usize;
    fn head_sizes(&self) -> &[usize];
    fn hidden_dim(&self) -> usize;
    /// `obs` is (batch, obs_dim), `hidden` is (batch, hidden_dim) and is
    /// advanced in place. Returns per-head logits and per-row values.
    fn step_batch(
        &self,
        obs: ArrayView2<f32>,
        hidden: &mut Array2<f32>,
    ) -> (Vec<Array2<f32>>, Array1<f32>);
}

/// Ignores observations and emits uniform logits over every head. Useful as
/// a behavioural baseline and for seed-for-seed rollout comparisons where
/// observation spaces differ.
pub struct UniformRandomPolicy {
    pub obs_dim: usize,
    pub heads: Vec<usize>,
}

impl BatchPolicy for UniformRandomPolicy {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn head_sizes(&self) -> &[usize] {
        &self.heads
    }
    fn hidden_dim(&self) -> usize {
        1
    }
    fn step_batch(
        &self,
        obs: ArrayView2<f32>,
        _hidden: &mut Array2<f32>,
    ) -> (Vec<Array2<f32>>, Array1<f32>) {
        let batch = obs.nrows();
        let logits = self.heads.iter().map(|&k| Array2::zeros((batch, k))).collect();
        (logits, Array1::zeros(batch))
    }
}
