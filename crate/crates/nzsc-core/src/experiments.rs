//! Named training runs and a checkpoint cache.
//!
//! A [`RunSpec`] identifies a training run (game, regime, own noise trait,
//! seed, step budget); [`ArtifactStore::ensure`] returns its checkpoint,
//! training it on first use and loading it from disk afterwards.
//! Population-based regimes recursively ensure their self-play populations
//! first. A process-wide gate serializes training so concurrent callers do
//! not oversubscribe the machine; evaluation never takes the gate.

use crate::config::{AnyEnv, EnvId, Regime, SIGMA_MAX};
use crate::grid::cee::Speed;
use crate::neural::{Checkpoint, CheckpointHeader, PolicyNetwork, TraitDescriptor};
use crate::train::{
    diversify_population, train_mep_learner, train_self_play, CurriculumSchedule, MepConfig,
    MetricsLog, PolicyPair, PpoConfig, TrainError,
};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// Seed base for the self-play populations that back population-based
/// regimes; fixed so every learner sees the same partners.
pub const POPULATION_SEED_BASE: u64 = 9000;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub env: EnvId,
    pub regime: Regime,
    /// The noise model / trait this run's agents train under.
    pub own_trait: TraitDescriptor,
    pub seed: u64,
    pub num_agents: usize,
    pub flat_prior: bool,
    pub total_timesteps: u64,
    /// Step budget for the self-play population runs a population-based
    /// regime depends on (defaults to `total_timesteps`).
    pub population_timesteps: u64,
    pub mep: MepConfig,
}

impl RunSpec {
    pub fn lever(
        env: EnvId,
        regime: Regime,
        own_trait: TraitDescriptor,
        seed: u64,
        total_timesteps: u64,
    ) -> Self {
        Self {
            env,
            regime,
            own_trait,
            seed,
            num_agents: 2,
            flat_prior: false,
            total_timesteps,
            population_timesteps: total_timesteps,
            mep: MepConfig::default(),
        }
    }

    pub fn meta_sigma_trait() -> TraitDescriptor {
        TraitDescriptor::LeverSigmaRange { lo: 0.0, hi: SIGMA_MAX }
    }

    /// Filesystem-safe cache key covering everything that affects the run.
    pub fn key(&self) -> String {
        let trait_part = self
            .own_trait
            .label()
            .replace(['=', '~', '[', ']', ','], "-")
            .replace('.', "p");
        let flat = if self.flat_prior { "_flat" } else { "" };
        let mep_part = match (self.env, self.regime) {
            (EnvId::Cee | EnvId::Sse, Regime::Nzsc | Regime::MetaNzsc) => format!(
                "_pop{}a{}b{}f{}pt{}",
                self.mep.population_size,
                self.mep.alpha,
                self.mep.beta,
                self.mep.stage1_fraction,
                self.population_timesteps
            )
            .replace('.', "p"),
            _ => String::new(),
        };
        format!(
            "{}_{}_{}_n{}{}_t{}{}_s{}",
            self.env.as_str(),
            self.regime.as_str(),
            trait_part,
            self.num_agents,
            flat,
            self.total_timesteps,
            mep_part,
            self.seed
        )
    }

    pub fn ppo(&self) -> PpoConfig {
        let mut ppo = self.env.default_ppo();
        ppo.total_timesteps = self.total_timesteps;
        ppo
    }

    fn traits_per_slot(&self) -> Vec<TraitDescriptor> {
        vec![self.own_trait.clone(); self.num_agents]
    }

    fn build_env(&self, symmetrize: bool) -> Result<AnyEnv, TrainError> {
        AnyEnv::build(
            self.env,
            self.num_agents,
            self.flat_prior,
            &self.traits_per_slot(),
            symmetrize,
            0.0,
        )
        .map_err(|e| TrainError::Config(e.to_string()))
    }
}

pub struct ArtifactStore {
    root: PathBuf,
    gate: Mutex<()>,
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), gate: Mutex::new(()) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, spec: &RunSpec) -> PathBuf {
        self.root.join(format!("{}.ckpt", spec.key()))
    }

    fn try_load(&self, spec: &RunSpec) -> Option<Arc<Checkpoint>> {
        let path = self.path_for(spec);
        if !path.exists() {
            return None;
        }
        Checkpoint::load(&path).ok().map(Arc::new)
    }

    /// Return the checkpoint for `spec`, training it if it is not cached.
    pub fn ensure(&self, spec: &RunSpec) -> Result<Arc<Checkpoint>, TrainError> {
        if let Some(ckpt) = self.try_load(spec) {
            return Ok(ckpt);
        }
        // Dependencies are built outside the gate so recursion cannot
        // deadlock; each dependency takes the gate for its own training.
        let deps = self.dependencies(spec)?;
        let gate = self.gate.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(ckpt) = self.try_load(spec) {
            return Ok(ckpt);
        }
        let ckpt = self.train(spec, &deps)?;
        ckpt.save(&self.path_for(spec))?;
        drop(gate);
        Ok(Arc::new(ckpt))
    }

    /// Checkpoints this run trains against, in pool order.
    pub fn dependencies(&self, spec: &RunSpec) -> Result<Vec<Arc<Checkpoint>>, TrainError> {
        match (spec.env, spec.regime) {
            // Lever regimes are single runs: plain self-play, or self-play
            // over the relabeled / meta-noise environment.
            (EnvId::OsNlg | EnvId::INlg, _) => Ok(Vec::new()),
            (EnvId::Cee | EnvId::Sse, Regime::SelfPlay) => Ok(Vec::new()),
            (EnvId::Cee | EnvId::Sse, Regime::Nzsc) => {
                // Homogeneous self-play population with the learner's trait.
                (0..spec.mep.population_size as u64)
                    .map(|i| {
                        self.ensure(&RunSpec {
                            regime: Regime::SelfPlay,
                            seed: POPULATION_SEED_BASE + i,
                            total_timesteps: spec.population_timesteps,
                            population_timesteps: spec.population_timesteps,
                            mep: MepConfig::default(),
                            ..spec.clone()
                        })
                    })
                    .collect()
            }
            (EnvId::Cee | EnvId::Sse, Regime::MetaNzsc) => {
                // Pool: one self-play run per trait class, an extra seed of
                // the weakest class, plus that class's best-response
                // learner.
                let traits: Vec<TraitDescriptor> = match spec.env {
                    EnvId::Cee => Speed::ALL
                        .iter()
                        .map(|&speed| TraitDescriptor::CeeSpeed { speed })
                        .collect(),
                    _ => vec![
                        TraitDescriptor::SseView { view: 4 },
                        TraitDescriptor::SseView { view: 6 },
                        TraitDescriptor::SseView { view: 8 },
                    ],
                };
                let weakest = traits.last().unwrap().clone();
                let mut deps = Vec::new();
                for t in &traits {
                    deps.push(self.ensure(&RunSpec {
                        regime: Regime::SelfPlay,
                        own_trait: t.clone(),
                        seed: POPULATION_SEED_BASE,
                        total_timesteps: spec.population_timesteps,
                        population_timesteps: spec.population_timesteps,
                        mep: MepConfig::default(),
                        ..spec.clone()
                    })?);
                }
                deps.push(self.ensure(&RunSpec {
                    regime: Regime::SelfPlay,
                    own_trait: weakest.clone(),
                    seed: POPULATION_SEED_BASE + 1,
                    total_timesteps: spec.population_timesteps,
                    population_timesteps: spec.population_timesteps,
                    mep: MepConfig::default(),
                    ..spec.clone()
                })?);
                deps.push(self.ensure(&RunSpec {
                    regime: Regime::Nzsc,
                    own_trait: weakest,
                    seed: 0,
                    ..spec.clone()
                })?);
                Ok(deps)
            }
        }
    }

    fn metrics_log(&self, spec: &RunSpec) -> MetricsLog {
        let path = self.root.join("logs").join(format!("{}.jsonl", spec.key()));
        MetricsLog::to_file(&path).unwrap_or_else(|_| MetricsLog::disabled())
    }

    fn train(&self, spec: &RunSpec, deps: &[Arc<Checkpoint>]) -> Result<Checkpoint, TrainError> {
        let ppo = spec.ppo();
        let mut log = self.metrics_log(spec);
        match (spec.env, spec.regime) {
            (EnvId::OsNlg | EnvId::INlg, regime) => {
                // NZSC and meta-NZSC lever training are self-play over the
                // relabeled (and, for meta, noise-resampling) environment.
                let symmetrize = regime != Regime::SelfPlay;
                let mut env = spec.build_env(symmetrize)?;
                let out = train_self_play(&mut env, &ppo, spec.seed, &mut log, |_, _| {})?;
                Ok(assemble(spec, &ppo, out.nets))
            }
            (EnvId::Cee | EnvId::Sse, Regime::SelfPlay) => {
                let mut env = spec.build_env(false)?;
                let out = train_self_play(&mut env, &ppo, spec.seed, &mut log, |_, _| {})?;
                Ok(assemble(spec, &ppo, out.nets))
            }
            (EnvId::Cee | EnvId::Sse, Regime::Nzsc) => {
                let nets = self.train_population_learner(spec, deps, &ppo, &mut log, false)?;
                Ok(assemble(spec, &ppo, nets))
            }
            (EnvId::Cee | EnvId::Sse, Regime::MetaNzsc) => {
                let nets = self.train_population_learner(spec, deps, &ppo, &mut log, true)?;
                Ok(assemble(spec, &ppo, nets))
            }
        }
    }

    /// Two-stage population training: diversify the pool with the
    /// population-entropy reward, then train a best-response learner with
    /// prioritized partner sampling. The noise curriculum applies to both
    /// stages. `meta` resamples both agents' traits each episode.
    fn train_population_learner(
        &self,
        spec: &RunSpec,
        deps: &[Arc<Checkpoint>],
        ppo: &PpoConfig,
        log: &mut MetricsLog,
        meta: bool,
    ) -> Result<Vec<PolicyNetwork<f32>>, TrainError> {
        if deps.is_empty() {
            return Err(TrainError::EmptyPopulation);
        }
        let mut population: Vec<PolicyPair> = deps
            .iter()
            .map(|ckpt| PolicyPair {
                nets: (0..ckpt.agents.len()).map(|i| ckpt.network::<f32>(i)).collect(),
            })
            .collect();

        let curriculum = CurriculumSchedule::standard();
        let env_trait = if meta {
            match spec.env {
                EnvId::Cee => TraitDescriptor::CeeSpeedAny,
                _ => TraitDescriptor::SseViewAny,
            }
        } else {
            spec.own_trait.clone()
        };
        let build = |t: &TraitDescriptor| -> Result<AnyEnv, TrainError> {
            AnyEnv::build(spec.env, 2, spec.flat_prior, &[t.clone(), t.clone()], false, 0.0)
                .map_err(|e| TrainError::Config(e.to_string()))
        };

        // Stage 1: shaped continuation of the population, round-robin. The
        // meta regime trains against the expanded pool as-is (its members
        // were already diversified when they were built).
        let stage1_total = if meta {
            0
        } else {
            (spec.total_timesteps as f64 * spec.mep.stage1_fraction).round() as u64
        };
        if stage1_total > 0 {
            let mut stage1_ppo = ppo.clone();
            stage1_ppo.total_timesteps = stage1_total;
            let mut env = build(&env_trait)?;
            diversify_population(
                &mut env,
                &mut population,
                &stage1_ppo,
                &spec.mep,
                spec.seed ^ 0x5747_4531,
                log,
                |env, p| env.set_noise_scale(curriculum.multiplier(p)),
            )?;
        }

        // Stage 2: the learner.
        let mut stage2_ppo = ppo.clone();
        stage2_ppo.total_timesteps =
            spec.total_timesteps.saturating_sub(stage1_total).max(1);
        let mut env = build(&env_trait)?;
        let out = train_mep_learner(
            &mut env,
            &population,
            &stage2_ppo,
            &spec.mep,
            spec.seed,
            log,
            |env, p| env.set_noise_scale(curriculum.multiplier(p)),
        )?;
        Ok(vec![out.net])
    }
}

fn assemble(spec: &RunSpec, ppo: &PpoConfig, nets: Vec<PolicyNetwork<f32>>) -> Checkpoint {
    let shape = nets[0].shape.clone();
    let header = CheckpointHeader {
        env_id: spec.env.as_str().into(),
        regime: spec.regime.as_str().into(),
        seed: spec.seed,
        num_agents: spec.num_agents,
        obs_dim: shape.obs_dim,
        fc_dim: shape.fc_dim,
        hidden_dim: shape.hidden_dim,
        heads: shape.heads.clone(),
        traits: vec![spec.own_trait.clone(); nets.len()],
        param_counts: nets.iter().map(|n| n.params.len()).collect(),
        total_timesteps: ppo.total_timesteps,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    Checkpoint::new(header, nets.iter().map(|n| n.params_f32()).collect())
}
