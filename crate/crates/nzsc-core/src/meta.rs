//! Reduction of noisy coordination problems to common-knowledge ones.
//!
//! A [`MetaEnv`] wraps a parameterized game family: each episode it draws a
//! ground-truth instance, gives every agent an independently corrupted copy,
//! and runs the dynamics on the truth while observations are computed
//! against each agent's private copy. The meta state is `(base state, E*)`
//! and agent `i`'s observation is `(base observation, E_i)`; rewards and
//! transitions come from `E*` only. The instance component is held in an
//! immutable field, so cross-instance transitions (which would have
//! probability zero) are unrepresentable rather than merely asserted.

use crate::env::{AgentAction, EnvError, Environment, StepOutcome};
use crate::rng::{tag, RngStream};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetaError {
    #[error("invalid noise model: {0}")]
    InvalidNoiseModel(String),
    #[error("noise source count {got} does not match agent count {want}")]
    AgentCountMismatch { got: usize, want: usize },
    #[error("state space cannot be described: {0}")]
    Undescribable(String),
}

/// Conditional distribution of an agent's observed instance copy given the
/// ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    /// Additive zero-mean gaussian on real-valued instance parameters.
    AdditiveGaussian { sigma: f64 },
    /// Categorical over view-size offsets, `(offset, probability)`.
    CategoricalViewSize { probs: Vec<(i64, f64)> },
    /// Own trait observed exactly; partner traits not observed at all.
    SpeedIdentity,
    Composite(Vec<NoiseModel>),
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), MetaError> {
        match self {
            NoiseModel::AdditiveGaussian { sigma } => {
                if !sigma.is_finite() || *sigma < 0.0 {
                    return Err(MetaError::InvalidNoiseModel(format!("sigma {sigma}")));
                }
            }
            NoiseModel::CategoricalViewSize { probs } => {
                let total: f64 = probs.iter().map(|&(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(MetaError::InvalidNoiseModel(format!(
                        "categorical mass {total} != 1"
                    )));
                }
                if probs.iter().any(|&(_, p)| p < 0.0) {
                    return Err(MetaError::InvalidNoiseModel("negative probability".into()));
                }
            }
            NoiseModel::SpeedIdentity => {}
            NoiseModel::Composite(parts) => {
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    /// True when corrupting with this model returns the truth unchanged.
    pub fn is_identity(&self) -> bool {
        match self {
            NoiseModel::AdditiveGaussian { sigma } => *sigma == 0.0,
            NoiseModel::CategoricalViewSize { probs } => {
                probs.iter().all(|&(off, p)| off == 0 || p == 0.0)
            }
            NoiseModel::SpeedIdentity => true,
            NoiseModel::Composite(parts) => parts.iter().all(NoiseModel::is_identity),
        }
    }

    /// Scalar summary used for observation features (the gaussian sigma).
    pub fn scalar_param(&self) -> Option<f64> {
        match self {
            NoiseModel::AdditiveGaussian { sigma } => Some(*sigma),
            NoiseModel::Composite(parts) => parts.iter().find_map(NoiseModel::scalar_param),
            _ => None,
        }
    }

    /// Interpolate toward the identity map for curriculum training:
    /// `scale` 0 is noise-free, 1 is the full model.
    #[must_use]
    pub fn scaled(&self, scale: f64) -> NoiseModel {
        let s = scale.clamp(0.0, 1.0);
        match self {
            NoiseModel::AdditiveGaussian { sigma } => {
                NoiseModel::AdditiveGaussian { sigma: sigma * s }
            }
            NoiseModel::CategoricalViewSize { probs } => {
                let mut out: Vec<(i64, f64)> =
                    probs.iter().map(|&(off, p)| (off, s * p)).collect();
                // Move the removed mass onto the exact offset.
                let exact_boost = 1.0 - s;
                if let Some(slot) = out.iter_mut().find(|(off, _)| *off == 0) {
                    slot.1 += exact_boost;
                } else {
                    out.push((0, exact_boost));
                }
                NoiseModel::CategoricalViewSize { probs: out }
            }
            NoiseModel::SpeedIdentity => NoiseModel::SpeedIdentity,
            NoiseModel::Composite(parts) => {
                NoiseModel::Composite(parts.iter().map(|p| p.scaled(s)).collect())
            }
        }
    }

    /// The view-size observation noise: 0.5 on the true size, 0.15 on each
    /// of the adjacent sizes, 0.1 on each size two away.
    pub fn standard_view_noise() -> NoiseModel {
        NoiseModel::CategoricalViewSize {
            probs: vec![(0, 0.5), (-1, 0.15), (1, 0.15), (-2, 0.1), (2, 0.1)],
        }
    }
}

/// A distribution over noise models, resampled each episode under
/// meta-regime training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseMetaDistribution {
    /// sigma ~ Uniform[0, max] additive gaussian.
    SigmaUniform { max: f64 },
    PointMass(NoiseModel),
}

impl NoiseMetaDistribution {
    pub fn sample(&self, rng: &mut RngStream) -> NoiseModel {
        match self {
            NoiseMetaDistribution::SigmaUniform { max } => {
                NoiseModel::AdditiveGaussian { sigma: rng.uniform_in(0.0, *max) }
            }
            NoiseMetaDistribution::PointMass(model) => model.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), MetaError> {
        match self {
            NoiseMetaDistribution::SigmaUniform { max } => {
                if !max.is_finite() || *max < 0.0 {
                    return Err(MetaError::InvalidNoiseModel(format!("sigma range {max}")));
                }
                Ok(())
            }
            NoiseMetaDistribution::PointMass(model) => model.validate(),
        }
    }
}

/// Per-agent noise configuration: fixed for self-play and plain noisy
/// training, a meta-distribution for meta-regime training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseSource {
    Fixed(NoiseModel),
    Meta(NoiseMetaDistribution),
}

impl NoiseSource {
    fn resolve(&self, rng: &mut RngStream) -> NoiseModel {
        match self {
            NoiseSource::Fixed(model) => model.clone(),
            NoiseSource::Meta(dist) => dist.sample(rng),
        }
    }

    pub fn validate(&self) -> Result<(), MetaError> {
        match self {
            NoiseSource::Fixed(model) => model.validate(),
            NoiseSource::Meta(dist) => dist.validate(),
        }
    }
}

/// Description of the support of the ground-truth distribution carried by a
/// family (explicit bounds for flat priors).
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthSupport {
    pub name: String,
    pub bounds: Option<Vec<(f64, f64)>>,
}

/// One common encoding that covers every instance of a family without
/// leaking instance identity beyond what observations reveal.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceDescriptor {
    /// Named components with their encoding widths.
    pub components: Vec<(String, usize)>,
    /// Discrete atoms when the state sets are small enough to enumerate.
    pub atoms: Option<BTreeSet<String>>,
}

impl StateSpaceDescriptor {
    pub fn width(&self) -> usize {
        self.components.iter().map(|&(_, w)| w).sum()
    }

    /// Union of the state spaces of two family members.
    pub fn union(&self, other: &StateSpaceDescriptor) -> Result<StateSpaceDescriptor, MetaError> {
        match (&self.atoms, &other.atoms) {
            (Some(a), Some(b)) => {
                let atoms: BTreeSet<String> = a.union(b).cloned().collect();
                let mut components = self.components.clone();
                for c in &other.components {
                    if !components.contains(c) {
                        components.push(c.clone());
                    }
                }
                Ok(StateSpaceDescriptor { components, atoms: Some(atoms) })
            }
            _ => {
                if self.components == other.components {
                    Ok(self.clone())
                } else {
                    Err(MetaError::Undescribable(
                        "non-enumerable state sets with different parameterizations".into(),
                    ))
                }
            }
        }
    }
}

/// A parameterized Dec-POMDP family: the ground-truth distribution over
/// instances, instance corruption, and the base game rules.
///
/// `obs_dim` already includes the agent's view of its own noisy copy (the
/// copy is delivered as constant features at every step, which is an
/// equivalent, strictly easier form of revealing it once at the start).
/// Wrapper-level noise-parameter features are separate.
pub trait EnvFamily: Sync {
    type Instance: Clone + PartialEq + std::fmt::Debug + Send + Sync;
    type State: Send + Sync;

    fn num_agents(&self) -> usize;
    fn action_dims(&self) -> &[usize];
    fn horizon(&self) -> usize;
    fn obs_dim(&self) -> usize;

    fn ground_truth_support(&self) -> GroundTruthSupport;
    fn sample_instance(&self, rng: &mut RngStream) -> Self::Instance;
    /// Draw agent `agent`'s noisy copy `E_i ~ P(E_i | E*)`. The agent index
    /// matters where the corruption concerns how this agent sees the
    /// others' traits.
    fn corrupt(
        &self,
        truth: &Self::Instance,
        noise: &NoiseModel,
        agent: usize,
        rng: &mut RngStream,
    ) -> Self::Instance;

    fn init_state(&self, truth: &Self::Instance, rng: &mut RngStream) -> Self::State;
    /// One transition under the ground-truth rules; returns the common
    /// reward. The state tracks its own step index and last joint action.
    fn apply(
        &self,
        truth: &Self::Instance,
        state: &mut Self::State,
        joint: &[AgentAction],
        rng: &mut RngStream,
    ) -> f64;
    fn coordinated(&self, truth: &Self::Instance, state: &Self::State) -> bool;
    fn observe(&self, own_copy: &Self::Instance, state: &Self::State, agent: usize, out: &mut [f32]);
    fn steps_taken(&self, state: &Self::State) -> usize;

    /// Number of noise-parameter features the wrapper appends per agent
    /// (own sigma first, then one estimate per partner); zero for families
    /// whose uncertainty is a trait already encoded in `observe`.
    fn noise_feature_dim(&self) -> usize {
        0
    }

    fn state_descriptor(&self) -> StateSpaceDescriptor;
}

/// The common-knowledge wrapper. See module docs.
#[derive(Clone, Debug)]
pub struct MetaEnv<F: EnvFamily> {
    family: F,
    noise: Vec<NoiseSource>,
    /// Normalizer for sigma features and clamp bound for partner estimates.
    sigma_max: f64,
    /// Curriculum multiplier applied to every noise model at episode start.
    noise_scale: f64,
    /// Partner-sigma feature misspecification: the estimate each agent sees
    /// is drawn from N(sigma_partner, z^2), clamped to [0, sigma_max].
    partner_sigma_z: f64,
}

pub struct MetaState<F: EnvFamily> {
    pub truth: F::Instance,
    pub noisy: Vec<F::Instance>,
    pub base: F::State,
    /// Resolved (scaled) per-agent noise models for this episode.
    pub models: Vec<NoiseModel>,
    noise_features: Vec<Vec<f32>>,
    done: bool,
}

impl<F: EnvFamily> MetaEnv<F> {
    /// Build the common-knowledge wrapper from a family and per-agent noise
    /// sources. Fails if the source count does not match the agent count or
    /// any model is invalid.
    pub fn new(family: F, noise: Vec<NoiseSource>, sigma_max: f64) -> Result<Self, MetaError> {
        if noise.len() != family.num_agents() {
            return Err(MetaError::AgentCountMismatch {
                got: noise.len(),
                want: family.num_agents(),
            });
        }
        for source in &noise {
            source.validate()?;
        }
        Ok(Self { family, noise, sigma_max, noise_scale: 1.0, partner_sigma_z: 0.0 })
    }

    pub fn family(&self) -> &F {
        &self.family
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Set the curriculum noise multiplier (clamped to [0, 1]).
    pub fn set_noise_scale(&mut self, scale: f64) {
        self.noise_scale = scale.clamp(0.0, 1.0);
    }

    /// Enable evaluation-time misspecification of the partner-sigma feature.
    pub fn set_partner_sigma_z(&mut self, z: f64) {
        assert!(z >= 0.0 && z.is_finite());
        self.partner_sigma_z = z;
    }

    /// Draw `(E*, [E_1..E_n])` exactly as `reset` does, without building the
    /// base state. Exposed for distribution-level tests.
    pub fn sample_instance(&self, rng: &RngStream) -> (F::Instance, Vec<F::Instance>) {
        let mut inst_rng = rng.derive(tag::INSTANCE);
        let truth = self.family.sample_instance(&mut inst_rng);
        let mut noise_rng = rng.derive(tag::NOISE);
        let (noisy, _models) = self.draw_noisy(&truth, &mut noise_rng);
        (truth, noisy)
    }

    fn draw_noisy(
        &self,
        truth: &F::Instance,
        noise_rng: &mut RngStream,
    ) -> (Vec<F::Instance>, Vec<NoiseModel>) {
        let models: Vec<NoiseModel> =
            self.noise.iter().map(|s| s.resolve(noise_rng).scaled(self.noise_scale)).collect();
        let noisy = models
            .iter()
            .enumerate()
            .map(|(agent, m)| self.family.corrupt(truth, m, agent, noise_rng))
            .collect();
        (noisy, models)
    }

    fn noise_features(&self, models: &[NoiseModel], rng: &mut RngStream) -> Vec<Vec<f32>> {
        let dim = self.family.noise_feature_dim();
        let n = self.family.num_agents();
        if dim == 0 {
            return vec![Vec::new(); n];
        }
        debug_assert_eq!(dim, n, "sigma features are one per agent");
        let sigmas: Vec<f64> = models.iter().map(|m| m.scalar_param().unwrap_or(0.0)).collect();
        (0..n)
            .map(|i| {
                let mut feats = Vec::with_capacity(dim);
                feats.push((sigmas[i] / self.sigma_max) as f32);
                for (j, &sigma_j) in sigmas.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let estimate = if self.partner_sigma_z > 0.0 {
                        (sigma_j + self.partner_sigma_z * rng.normal()).clamp(0.0, self.sigma_max)
                    } else {
                        sigma_j
                    };
                    feats.push((estimate / self.sigma_max) as f32);
                }
                feats
            })
            .collect()
    }
}

impl<F: EnvFamily> Environment for MetaEnv<F> {
    type State = MetaState<F>;

    fn num_agents(&self) -> usize {
        self.family.num_agents()
    }
    fn action_dims(&self) -> &[usize] {
        self.family.action_dims()
    }
    fn observation_dim(&self) -> usize {
        self.family.obs_dim() + self.family.noise_feature_dim()
    }
    fn horizon(&self) -> usize {
        self.family.horizon()
    }

    fn reset(&self, rng: &mut RngStream) -> Self::State {
        let mut inst_rng = rng.derive(tag::INSTANCE);
        let truth = self.family.sample_instance(&mut inst_rng);
        let mut noise_rng = rng.derive(tag::NOISE);
        let (noisy, models) = self.draw_noisy(&truth, &mut noise_rng);
        let noise_features = self.noise_features(&models, &mut noise_rng);
        // The base state draws from the parent stream, exactly as the
        // unwrapped instance environment does; instance and noise draws stay
        // on derived substreams so the two consume identical dynamics draws.
        let base = self.family.init_state(&truth, rng);
        MetaState { truth, noisy, base, models, noise_features, done: false }
    }

    fn step(
        &self,
        state: &mut Self::State,
        joint: &[AgentAction],
        rng: &mut RngStream,
    ) -> Result<StepOutcome, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeFinished {
                t: self.family.steps_taken(&state.base),
                horizon: self.horizon(),
            });
        }
        self.check_joint(joint)?;
        let reward = self.family.apply(&state.truth, &mut state.base, joint, rng);
        let done = self.family.steps_taken(&state.base) >= self.horizon();
        state.done = done;
        Ok(StepOutcome { reward, done })
    }

    fn observe(&self, state: &Self::State, agent: usize, out: &mut [f32]) {
        let split = self.family.obs_dim();
        self.family.observe(&state.noisy[agent], &state.base, agent, &mut out[..split]);
        out[split..].copy_from_slice(&state.noise_features[agent]);
    }

    fn coordinated(&self, state: &Self::State) -> bool {
        self.family.coordinated(&state.truth, &state.base)
    }
}

/// A single fixed instance run as a plain environment: the degenerate
/// reduction with a point-mass ground truth and identity noise. Observations
/// use the truth as the agent's copy and carry no noise features.
#[derive(Clone, Debug)]
pub struct SingleInstanceEnv<F: EnvFamily> {
    pub family: F,
    pub instance: F::Instance,
}

pub struct SingleInstanceState<F: EnvFamily> {
    base: F::State,
    done: bool,
}

impl<F: EnvFamily> Environment for SingleInstanceEnv<F> {
    type State = SingleInstanceState<F>;

    fn num_agents(&self) -> usize {
        self.family.num_agents()
    }
    fn action_dims(&self) -> &[usize] {
        self.family.action_dims()
    }
    fn observation_dim(&self) -> usize {
        self.family.obs_dim()
    }
    fn horizon(&self) -> usize {
        self.family.horizon()
    }

    fn reset(&self, rng: &mut RngStream) -> Self::State {
        SingleInstanceState { base: self.family.init_state(&self.instance, rng), done: false }
    }

    fn step(
        &self,
        state: &mut Self::State,
        joint: &[AgentAction],
        rng: &mut RngStream,
    ) -> Result<StepOutcome, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeFinished {
                t: self.family.steps_taken(&state.base),
                horizon: self.horizon(),
            });
        }
        self.check_joint(joint)?;
        let reward = self.family.apply(&self.instance, &mut state.base, joint, rng);
        let done = self.family.steps_taken(&state.base) >= self.horizon();
        state.done = done;
        Ok(StepOutcome { reward, done })
    }

    fn observe(&self, state: &Self::State, agent: usize, out: &mut [f32]) {
        self.family.observe(&self.instance, &state.base, agent, out);
    }

    fn coordinated(&self, state: &Self::State) -> bool {
        self.family.coordinated(&self.instance, &state.base)
    }
}
