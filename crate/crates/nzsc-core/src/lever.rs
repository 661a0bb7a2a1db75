//! One-shot and iterated noisy lever games, the n-agent generalization, and
//! the label symmetry used by randomized-relabeling training.
//!
//! Each episode draws one reward per lever from the prior. All agents earn
//! that lever's reward when every one of them pulls the same lever;
//! any mismatch pays the penalty. In the iterated game the matched reward is
//! granted every timestep the agents match, and from t = 1 each agent also
//! observes the levers the others pulled last step.

use crate::env::{AgentAction, Environment, EnvError, StepOutcome};
use crate::meta::{
    EnvFamily, GroundTruthSupport, MetaEnv, MetaState, NoiseModel, StateSpaceDescriptor,
};
use crate::rng::{tag, RngStream};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SymmetryError {
    #[error("permutation {0:?} is not a bijection on 0..{1}")]
    NotABijection(Vec<usize>, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeverConfig {
    pub num_levers: usize,
    pub num_agents: usize,
    pub r_mean: f64,
    pub sigma_star: f64,
    pub penalty: f64,
    pub horizon: usize,
    /// Use a uniform prior over `r_mean ± 3 sigma_star` per lever instead of
    /// the gaussian prior.
    pub flat_prior: bool,
}

impl LeverConfig {
    pub fn one_shot() -> Self {
        Self {
            num_levers: 3,
            num_agents: 2,
            r_mean: 5.0,
            sigma_star: 2.0,
            penalty: -2.0,
            horizon: 1,
            flat_prior: false,
        }
    }

    pub fn iterated() -> Self {
        Self { horizon: 16, ..Self::one_shot() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.num_levers < 2 {
            return Err(format!("need at least 2 levers, got {}", self.num_levers));
        }
        if self.num_agents < 2 {
            return Err(format!("need at least 2 agents, got {}", self.num_agents));
        }
        if self.horizon < 1 {
            return Err("horizon must be at least 1".into());
        }
        if self.sigma_star < 0.0 {
            return Err("sigma_star must be nonnegative".into());
        }
        Ok(())
    }

    /// Scale constant that maps lever values into roughly [-1, 1] for
    /// observations; also the half-width of the flat prior.
    pub fn value_scale(&self) -> f64 {
        (3.0 * self.sigma_star).max(1.0)
    }

    pub fn flat_bounds(&self) -> (f64, f64) {
        let half = 3.0 * self.sigma_star;
        (self.r_mean - half, self.r_mean + half)
    }
}

/// A concrete lever game: one reward per lever.
#[derive(Clone, Debug, PartialEq)]
pub struct LeverInstance {
    pub rewards: Vec<f64>,
}

#[derive(Debug)]
pub struct LeverState {
    t: usize,
    /// Lever pulled by each agent at the previous step.
    last: Option<Vec<usize>>,
    matched: bool,
}

/// Observation slot layout for the lever family, used both to build
/// observations and to permute them consistently under label symmetries.
/// Values come first, then one one-hot block per other agent, then the time
/// feature; wrapper-level noise features follow after `family_dim`.
#[derive(Clone, Copy, Debug)]
pub struct LeverObsLayout {
    pub num_levers: usize,
    pub num_agents: usize,
}

impl LeverObsLayout {
    pub fn family_dim(&self) -> usize {
        self.num_levers + (self.num_agents - 1) * self.num_levers + 1
    }

    pub fn value_slots(&self) -> std::ops::Range<usize> {
        0..self.num_levers
    }

    /// One-hot block for the k-th other agent (k in 0..num_agents-1).
    pub fn action_block(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.num_levers + k * self.num_levers;
        start..start + self.num_levers
    }

    pub fn time_slot(&self) -> usize {
        self.family_dim() - 1
    }
}

#[derive(Clone, Debug)]
pub struct LeverFamily {
    pub cfg: LeverConfig,
    heads: [usize; 1],
}

impl LeverFamily {
    pub fn new(cfg: LeverConfig) -> Self {
        cfg.validate().expect("invalid lever config");
        let heads = [cfg.num_levers];
        Self { cfg, heads }
    }

    pub fn layout(&self) -> LeverObsLayout {
        LeverObsLayout { num_levers: self.cfg.num_levers, num_agents: self.cfg.num_agents }
    }

    fn corrupt_rewards(&self, rewards: &mut [f64], noise: &NoiseModel, rng: &mut RngStream) {
        match noise {
            NoiseModel::AdditiveGaussian { sigma } => {
                for r in rewards.iter_mut() {
                    *r += sigma * rng.normal();
                }
            }
            NoiseModel::Composite(parts) => {
                for p in parts {
                    self.corrupt_rewards(rewards, p, rng);
                }
            }
            // View-size and speed noise have no meaning for levers.
            _ => {}
        }
    }
}

impl EnvFamily for LeverFamily {
    type Instance = LeverInstance;
    type State = LeverState;

    fn num_agents(&self) -> usize {
        self.cfg.num_agents
    }
    fn action_dims(&self) -> &[usize] {
        &self.heads
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn obs_dim(&self) -> usize {
        self.layout().family_dim()
    }

    fn ground_truth_support(&self) -> GroundTruthSupport {
        if self.cfg.flat_prior {
            GroundTruthSupport {
                name: "lever-flat".into(),
                bounds: Some(vec![self.cfg.flat_bounds(); self.cfg.num_levers]),
            }
        } else {
            GroundTruthSupport { name: "lever-gaussian".into(), bounds: None }
        }
    }

    fn sample_instance(&self, rng: &mut RngStream) -> LeverInstance {
        let rewards = (0..self.cfg.num_levers)
            .map(|_| {
                if self.cfg.flat_prior {
                    let (lo, hi) = self.cfg.flat_bounds();
                    rng.uniform_in(lo, hi)
                } else {
                    rng.normal_scaled(self.cfg.r_mean, self.cfg.sigma_star)
                }
            })
            .collect();
        LeverInstance { rewards }
    }

    fn corrupt(
        &self,
        truth: &LeverInstance,
        noise: &NoiseModel,
        _agent: usize,
        rng: &mut RngStream,
    ) -> LeverInstance {
        let mut copy = truth.clone();
        self.corrupt_rewards(&mut copy.rewards, noise, rng);
        copy
    }

    fn init_state(&self, _truth: &LeverInstance, _rng: &mut RngStream) -> LeverState {
        LeverState { t: 0, last: None, matched: false }
    }

    fn apply(
        &self,
        truth: &LeverInstance,
        state: &mut LeverState,
        joint: &[AgentAction],
        _rng: &mut RngStream,
    ) -> f64 {
        let levers: Vec<usize> = joint.iter().map(|a| a[0]).collect();
        let matched = levers.iter().all(|&l| l == levers[0]);
        let reward = if matched { truth.rewards[levers[0]] } else { self.cfg.penalty };
        state.matched = matched;
        state.last = Some(levers);
        state.t += 1;
        reward
    }

    fn coordinated(&self, _truth: &LeverInstance, state: &LeverState) -> bool {
        state.matched
    }

    fn observe(&self, own_copy: &LeverInstance, state: &LeverState, agent: usize, out: &mut [f32]) {
        let layout = self.layout();
        out.fill(0.0);
        let scale = self.cfg.value_scale();
        for (slot, &v) in out[layout.value_slots()].iter_mut().zip(&own_copy.rewards) {
            *slot = ((v - self.cfg.r_mean) / scale) as f32;
        }
        if let Some(last) = &state.last {
            let mut k = 0;
            for (other, &lever) in last.iter().enumerate() {
                if other == agent {
                    continue;
                }
                let block = layout.action_block(k);
                out[block.start + lever] = 1.0;
                k += 1;
            }
        }
        out[layout.time_slot()] = state.t as f32 / self.cfg.horizon as f32;
    }

    fn steps_taken(&self, state: &LeverState) -> usize {
        state.t
    }

    fn noise_feature_dim(&self) -> usize {
        self.cfg.num_agents
    }

    fn state_descriptor(&self) -> StateSpaceDescriptor {
        StateSpaceDescriptor {
            components: vec![
                ("lever_rewards".into(), self.cfg.num_levers),
                ("last_joint_action".into(), self.cfg.num_agents),
                ("step".into(), 1),
            ],
            atoms: None,
        }
    }
}

/// A bijection on lever labels; `map[j]` is the new label of lever `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPermutation {
    map: Vec<usize>,
}

impl LabelPermutation {
    pub fn new(map: Vec<usize>) -> Result<Self, SymmetryError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &m in &map {
            if m >= n || seen[m] {
                return Err(SymmetryError::NotABijection(map.clone(), n));
            }
            seen[m] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    #[must_use]
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (j, &m) in self.map.iter().enumerate() {
            inv[m] = j;
        }
        Self { map: inv }
    }

    /// All permutations of `n` labels in a deterministic order.
    pub fn all(n: usize) -> Vec<Self> {
        let mut out = Vec::new();
        let mut current: Vec<usize> = (0..n).collect();
        permute_rec(&mut current, 0, &mut out);
        out
    }

    /// New label of an action.
    pub fn apply_action(&self, action: usize) -> usize {
        self.map[action]
    }

    /// Push a lever-indexed vector forward: slot `map[j]` of the output gets
    /// slot `j` of the input.
    pub fn apply_values<T: Copy + Default>(&self, values: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); values.len()];
        for (j, &v) in values.iter().enumerate() {
            out[self.map[j]] = v;
        }
        out
    }

    fn apply_slice_in_place(&self, slice: &mut [f32]) {
        let permuted = self.apply_values(slice);
        slice.copy_from_slice(&permuted);
    }
}

fn permute_rec(current: &mut Vec<usize>, k: usize, out: &mut Vec<LabelPermutation>) {
    if k == current.len() {
        out.push(LabelPermutation { map: current.clone() });
        return;
    }
    for i in k..current.len() {
        current.swap(k, i);
        permute_rec(current, k + 1, out);
        current.swap(k, i);
    }
    out.sort_by(|a, b| a.map.cmp(&b.map));
    out.dedup();
}

/// Relabel an instance's rewards.
pub fn permute_instance(perm: &LabelPermutation, instance: &LeverInstance) -> LeverInstance {
    LeverInstance { rewards: perm.apply_values(&instance.rewards) }
}

/// Relabel the lever-indexed slots of an observation (reward values and
/// every last-action one-hot block); time and noise features are untouched.
pub fn permute_observation(perm: &LabelPermutation, layout: &LeverObsLayout, obs: &mut [f32]) {
    perm.apply_slice_in_place(&mut obs[layout.value_slots()]);
    for k in 0..layout.num_agents - 1 {
        perm.apply_slice_in_place(&mut obs[layout.action_block(k)]);
    }
}

/// Lever environment that relabels every agent's interface except agent 0
/// with an independent random label permutation each episode, so learned
/// policies cannot rely on arbitrary label conventions.
#[derive(Clone, Debug)]
pub struct SymmetrizedLeverEnv {
    pub inner: MetaEnv<LeverFamily>,
    pub symmetries: Vec<LabelPermutation>,
}

impl SymmetrizedLeverEnv {
    pub fn new(inner: MetaEnv<LeverFamily>, symmetries: Vec<LabelPermutation>) -> Self {
        assert!(!symmetries.is_empty(), "symmetry set must not be empty");
        let levers = inner.family().cfg.num_levers;
        assert!(symmetries.iter().all(|p| p.len() == levers));
        Self { inner, symmetries }
    }

    /// The full symmetry group of the game.
    pub fn with_all_symmetries(inner: MetaEnv<LeverFamily>) -> Self {
        let levers = inner.family().cfg.num_levers;
        Self::new(inner, LabelPermutation::all(levers))
    }

    fn layout(&self) -> LeverObsLayout {
        self.inner.family().layout()
    }
}

pub struct SymmetrizedLeverState {
    pub inner: MetaState<LeverFamily>,
    /// Per-agent relabeling for this episode; slot 0 is the identity.
    pub perms: Vec<LabelPermutation>,
}

impl Environment for SymmetrizedLeverEnv {
    type State = SymmetrizedLeverState;

    fn num_agents(&self) -> usize {
        self.inner.num_agents()
    }
    fn action_dims(&self) -> &[usize] {
        self.inner.action_dims()
    }
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn reset(&self, rng: &mut RngStream) -> Self::State {
        let mut sym_rng = rng.derive(tag::SYMMETRY);
        let n = self.inner.num_agents();
        let levers = self.inner.family().cfg.num_levers;
        let mut perms = Vec::with_capacity(n);
        perms.push(LabelPermutation::identity(levers));
        for _ in 1..n {
            perms.push(self.symmetries[sym_rng.index(self.symmetries.len())].clone());
        }
        SymmetrizedLeverState { inner: self.inner.reset(rng), perms }
    }

    fn step(
        &self,
        state: &mut Self::State,
        joint: &[AgentAction],
        rng: &mut RngStream,
    ) -> Result<StepOutcome, EnvError> {
        self.check_joint(joint)?;
        // Each agent acts in its own relabeled copy of the game; translate
        // back to canonical labels before applying the dynamics.
        let canonical: Vec<AgentAction> = joint
            .iter()
            .zip(&state.perms)
            .map(|(a, perm)| {
                let mut c = *a;
                c[0] = perm.inverse().apply_action(a[0]);
                c
            })
            .collect();
        self.inner.step(&mut state.inner, &canonical, rng)
    }

    fn observe(&self, state: &Self::State, agent: usize, out: &mut [f32]) {
        self.inner.observe(&state.inner, agent, out);
        permute_observation(&state.perms[agent], &self.layout(), out);
    }

    fn coordinated(&self, state: &Self::State) -> bool {
        self.inner.coordinated(&state.inner)
    }
}
