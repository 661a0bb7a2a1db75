//! Experiment configuration: environment ids, regimes, the TOML config
//! tree with environment-variable overrides, and construction of concrete
//! environments from trait descriptors.

use crate::env::{AgentAction, Environment, EnvError, StepOutcome};
use crate::grid::cee::{CeeConfig, CeeFamily, Speed, SpeedSource};
use crate::grid::sse::{SseConfig, SseFamily, ViewSource};
use crate::lever::{LeverConfig, LeverFamily, SymmetrizedLeverEnv, SymmetrizedLeverState};
use crate::meta::{MetaEnv, MetaState, NoiseMetaDistribution, NoiseModel, NoiseSource};
use crate::neural::TraitDescriptor;
use crate::rng::RngStream;
use crate::train::{MepConfig, PpoConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    Toml(String),
    #[error("unknown environment `{0}` (expected os-nlg, i-nlg, cee, sse)")]
    UnknownEnv(String),
    #[error("unknown regime `{0}` (expected self-play, nzsc, meta-nzsc)")]
    UnknownRegime(String),
    #[error("bad trait `{got}` for {env}: {hint}")]
    BadTrait { env: String, got: String, hint: &'static str },
    #[error("override {0}: {1}")]
    BadOverride(String, String),
    #[error("{0}")]
    Invalid(String),
}

pub const SIGMA_MAX: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    OsNlg,
    INlg,
    Cee,
    Sse,
}

impl EnvId {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        match text {
            "os-nlg" => Ok(EnvId::OsNlg),
            "i-nlg" => Ok(EnvId::INlg),
            "cee" => Ok(EnvId::Cee),
            "sse" => Ok(EnvId::Sse),
            other => Err(ConfigError::UnknownEnv(other.into())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::OsNlg => "os-nlg",
            EnvId::INlg => "i-nlg",
            EnvId::Cee => "cee",
            EnvId::Sse => "sse",
        }
    }

    /// Published training hyperparameters for this game.
    pub fn default_ppo(&self) -> PpoConfig {
        match self {
            EnvId::OsNlg => PpoConfig::os_nlg(),
            EnvId::INlg => PpoConfig::i_nlg(),
            EnvId::Cee => PpoConfig::cee(),
            EnvId::Sse => PpoConfig::sse(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SelfPlay,
    Nzsc,
    MetaNzsc,
}

impl Regime {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        match text {
            "self-play" => Ok(Regime::SelfPlay),
            "nzsc" => Ok(Regime::Nzsc),
            "meta-nzsc" => Ok(Regime::MetaNzsc),
            other => Err(ConfigError::UnknownRegime(other.into())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::SelfPlay => "self-play",
            Regime::Nzsc => "nzsc",
            Regime::MetaNzsc => "meta-nzsc",
        }
    }
}

/// Top-level experiment description; every field has a default so partial
/// TOML files work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub environment: String,
    pub regime: String,
    pub num_agents: usize,
    pub flat_prior: bool,
    /// Trait grid, one entry per trained noise model: sigmas for lever
    /// games ("0", "2.5"), speed names for the mining grid, view sizes for
    /// the mirrored grid.
    pub noise_grid: Vec<String>,
    pub seeds_per_model: usize,
    pub seed: u64,
    pub eval_episodes: usize,
    /// At evaluation, each agent sees the partner's sigma through
    /// N(sigma, z^2) instead of exactly; 0 disables.
    pub misspecification_z: f64,
    /// Multiplies total training timesteps for desk-scale runs.
    pub scale: f64,
    pub out_dir: String,
    pub ppo: PpoConfig,
    pub mep: MepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            environment: "i-nlg".into(),
            regime: "self-play".into(),
            num_agents: 2,
            flat_prior: false,
            noise_grid: vec!["0".into(), "2.5".into(), "5".into()],
            seeds_per_model: 2,
            seed: 0,
            eval_episodes: 2000,
            misspecification_z: 0.0,
            scale: 1.0,
            out_dir: "runs".into(),
            ppo: PpoConfig::i_nlg(),
            mep: MepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_env(env: EnvId) -> Self {
        let noise_grid = match env {
            EnvId::OsNlg | EnvId::INlg => vec!["0".into(), "2.5".into(), "5".into()],
            EnvId::Cee => vec!["high".into(), "medium".into(), "low".into()],
            EnvId::Sse => vec!["4".into(), "6".into(), "8".into()],
        };
        Self {
            environment: env.as_str().into(),
            ppo: env.default_ppo(),
            noise_grid,
            ..Self::default()
        }
    }

    pub fn env_id(&self) -> Result<EnvId, ConfigError> {
        EnvId::parse(&self.environment)
    }

    pub fn regime_id(&self) -> Result<Regime, ConfigError> {
        Regime::parse(&self.regime)
    }

    /// Parse one grid entry into a concrete trait for this environment.
    pub fn parse_trait(&self, text: &str) -> Result<TraitDescriptor, ConfigError> {
        let env = self.env_id()?;
        match env {
            EnvId::OsNlg | EnvId::INlg => text
                .parse::<f64>()
                .ok()
                .filter(|s| (0.0..=SIGMA_MAX).contains(s))
                .map(|sigma| TraitDescriptor::LeverSigma { sigma })
                .ok_or(ConfigError::BadTrait {
                    env: self.environment.clone(),
                    got: text.into(),
                    hint: "sigma in [0, 5]",
                }),
            EnvId::Cee => match text {
                "high" => Ok(TraitDescriptor::CeeSpeed { speed: Speed::High }),
                "medium" => Ok(TraitDescriptor::CeeSpeed { speed: Speed::Medium }),
                "low" => Ok(TraitDescriptor::CeeSpeed { speed: Speed::Low }),
                _ => Err(ConfigError::BadTrait {
                    env: self.environment.clone(),
                    got: text.into(),
                    hint: "high, medium or low",
                }),
            },
            EnvId::Sse => text
                .parse::<usize>()
                .ok()
                .filter(|v| (2..=12).contains(v))
                .map(|view| TraitDescriptor::SseView { view })
                .ok_or(ConfigError::BadTrait {
                    env: self.environment.clone(),
                    got: text.into(),
                    hint: "view size in [2, 12]",
                }),
        }
    }

    /// Scaled training hyperparameters.
    pub fn effective_ppo(&self) -> PpoConfig {
        self.ppo.clone().scaled(self.scale)
    }

    /// Load from TOML with `NZSC__SECTION__KEY` environment overrides.
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Sparse keys are merged over the per-environment defaults, so a
    /// config file (or variable override) may set any single nested key.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_vars(text, std::env::vars())
    }

    pub fn from_toml_with_vars(
        text: &str,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut overlay: toml::Value =
            toml::from_str(text).map_err(|e| ConfigError::Toml(e.to_string()))?;
        apply_env_overrides(&mut overlay, vars)?;
        let env = overlay
            .get("environment")
            .and_then(|v| v.as_str())
            .map(EnvId::parse)
            .transpose()?
            .unwrap_or(EnvId::INlg);
        let mut base: toml::Value = toml::Value::try_from(ExperimentConfig::for_env(env))
            .map_err(|e| ConfigError::Toml(e.to_string()))?;
        deep_merge(&mut base, &overlay);
        base.try_into().map_err(|e: toml::de::Error| ConfigError::Toml(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Apply `NZSC__a__b = value` overrides onto a TOML tree: path segments are
/// lowercased key names joined by double underscores.
pub fn apply_env_overrides(
    value: &mut toml::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<(), ConfigError> {
    for (key, raw) in vars {
        let Some(path) = key.strip_prefix("NZSC__") else { continue };
        let segments: Vec<String> =
            path.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if segments.is_empty() {
            continue;
        }
        let mut node = &mut *value;
        for seg in &segments[..segments.len() - 1] {
            node = node
                .as_table_mut()
                .ok_or_else(|| ConfigError::BadOverride(key.clone(), "not a table".into()))?
                .entry(seg.clone())
                .or_insert(toml::Value::Table(Default::default()));
        }
        let leaf = segments.last().unwrap();
        let parsed = parse_toml_scalar(&raw);
        node.as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride(key.clone(), "not a table".into()))?
            .insert(leaf.clone(), parsed);
    }
    Ok(())
}

/// Tables merge key by key; anything else replaces.
fn deep_merge(base: &mut toml::Value, overlay: &toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn parse_toml_scalar(raw: &str) -> toml::Value {
    if let Ok(doc) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = doc.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

/// One concrete environment of any family, so evaluation code and the C
/// interface can hold environments uniformly.
pub enum AnyEnv {
    Lever(MetaEnv<LeverFamily>),
    LeverSym(SymmetrizedLeverEnv),
    Cee(MetaEnv<CeeFamily>),
    Sse(MetaEnv<SseFamily>),
}

pub enum AnyState {
    Lever(MetaState<LeverFamily>),
    LeverSym(SymmetrizedLeverState),
    Cee(MetaState<CeeFamily>),
    Sse(MetaState<SseFamily>),
}

impl AnyEnv {
    /// Build an environment whose agent slots carry the given traits.
    /// `symmetrize` wraps lever games in the per-episode label relabeling
    /// used by randomized-symmetry training.
    pub fn build(
        env: EnvId,
        num_agents: usize,
        flat_prior: bool,
        traits: &[TraitDescriptor],
        symmetrize: bool,
        misspecification_z: f64,
    ) -> Result<AnyEnv, ConfigError> {
        match env {
            EnvId::OsNlg | EnvId::INlg => {
                let mut cfg = if env == EnvId::OsNlg {
                    LeverConfig::one_shot()
                } else {
                    LeverConfig::iterated()
                };
                cfg.num_agents = num_agents;
                cfg.flat_prior = flat_prior;
                let sources: Result<Vec<NoiseSource>, ConfigError> = traits
                    .iter()
                    .map(|t| match t {
                        TraitDescriptor::LeverSigma { sigma } => {
                            Ok(NoiseSource::Fixed(NoiseModel::AdditiveGaussian { sigma: *sigma }))
                        }
                        TraitDescriptor::LeverSigmaRange { lo, hi } => {
                            if *lo != 0.0 {
                                return Err(ConfigError::Invalid(
                                    "sigma ranges start at 0".into(),
                                ));
                            }
                            Ok(NoiseSource::Meta(NoiseMetaDistribution::SigmaUniform {
                                max: *hi,
                            }))
                        }
                        other => Err(ConfigError::Invalid(format!(
                            "trait {other:?} does not fit a lever game"
                        ))),
                    })
                    .collect();
                let meta = MetaEnv::new(LeverFamily::new(cfg), sources?, SIGMA_MAX)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let mut meta = meta;
                if misspecification_z > 0.0 {
                    meta.set_partner_sigma_z(misspecification_z);
                }
                if symmetrize {
                    Ok(AnyEnv::LeverSym(SymmetrizedLeverEnv::with_all_symmetries(meta)))
                } else {
                    Ok(AnyEnv::Lever(meta))
                }
            }
            EnvId::Cee => {
                if num_agents != 2 {
                    return Err(ConfigError::Invalid("the mining grid is two-agent".into()));
                }
                let mut cfg = CeeConfig::default();
                for (slot, t) in traits.iter().enumerate() {
                    cfg.speeds[slot] = match t {
                        TraitDescriptor::CeeSpeed { speed } => SpeedSource::Fixed(*speed),
                        TraitDescriptor::CeeSpeedAny => SpeedSource::Uniform,
                        other => {
                            return Err(ConfigError::Invalid(format!(
                                "trait {other:?} does not fit the mining grid"
                            )))
                        }
                    };
                }
                let noise = cfg.default_noise();
                let meta = MetaEnv::new(
                    CeeFamily::new(cfg),
                    vec![NoiseSource::Fixed(noise); 2],
                    SIGMA_MAX,
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(AnyEnv::Cee(meta))
            }
            EnvId::Sse => {
                if num_agents != 2 {
                    return Err(ConfigError::Invalid("the mirrored grid is two-agent".into()));
                }
                let mut cfg = SseConfig::default();
                for (slot, t) in traits.iter().enumerate() {
                    cfg.views[slot] = match t {
                        TraitDescriptor::SseView { view } => ViewSource::Fixed(*view),
                        TraitDescriptor::SseViewAny => ViewSource::Uniform,
                        other => {
                            return Err(ConfigError::Invalid(format!(
                                "trait {other:?} does not fit the mirrored grid"
                            )))
                        }
                    };
                }
                let noise = cfg.default_noise();
                let meta = MetaEnv::new(
                    SseFamily::new(cfg),
                    vec![NoiseSource::Fixed(noise); 2],
                    SIGMA_MAX,
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(AnyEnv::Sse(meta))
            }
        }
    }

    pub fn set_noise_scale(&mut self, scale: f64) {
        match self {
            AnyEnv::Lever(e) => e.set_noise_scale(scale),
            AnyEnv::LeverSym(e) => e.inner.set_noise_scale(scale),
            AnyEnv::Cee(e) => e.set_noise_scale(scale),
            AnyEnv::Sse(e) => e.set_noise_scale(scale),
        }
    }
}

macro_rules! dispatch {
    ($self:expr, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::Lever($e) => $body,
            AnyEnv::LeverSym($e) => $body,
            AnyEnv::Cee($e) => $body,
            AnyEnv::Sse($e) => $body,
        }
    };
}

impl Environment for AnyEnv {
    type State = AnyState;

    fn num_agents(&self) -> usize {
        dispatch!(self, e => e.num_agents())
    }
    fn action_dims(&self) -> &[usize] {
        dispatch!(self, e => e.action_dims())
    }
    fn observation_dim(&self) -> usize {
        dispatch!(self, e => e.observation_dim())
    }
    fn horizon(&self) -> usize {
        dispatch!(self, e => e.horizon())
    }

    fn reset(&self, rng: &mut RngStream) -> AnyState {
        match self {
            AnyEnv::Lever(e) => AnyState::Lever(e.reset(rng)),
            AnyEnv::LeverSym(e) => AnyState::LeverSym(e.reset(rng)),
            AnyEnv::Cee(e) => AnyState::Cee(e.reset(rng)),
            AnyEnv::Sse(e) => AnyState::Sse(e.reset(rng)),
        }
    }

    fn step(
        &self,
        state: &mut AnyState,
        joint: &[AgentAction],
        rng: &mut RngStream,
    ) -> Result<StepOutcome, EnvError> {
        match (self, state) {
            (AnyEnv::Lever(e), AnyState::Lever(s)) => e.step(s, joint, rng),
            (AnyEnv::LeverSym(e), AnyState::LeverSym(s)) => e.step(s, joint, rng),
            (AnyEnv::Cee(e), AnyState::Cee(s)) => e.step(s, joint, rng),
            (AnyEnv::Sse(e), AnyState::Sse(s)) => e.step(s, joint, rng),
            _ => panic!("environment/state family mismatch"),
        }
    }

    fn observe(&self, state: &AnyState, agent: usize, out: &mut [f32]) {
        match (self, state) {
            (AnyEnv::Lever(e), AnyState::Lever(s)) => e.observe(s, agent, out),
            (AnyEnv::LeverSym(e), AnyState::LeverSym(s)) => e.observe(s, agent, out),
            (AnyEnv::Cee(e), AnyState::Cee(s)) => e.observe(s, agent, out),
            (AnyEnv::Sse(e), AnyState::Sse(s)) => e.observe(s, agent, out),
            _ => panic!("environment/state family mismatch"),
        }
    }

    fn coordinated(&self, state: &AnyState) -> bool {
        match (self, state) {
            (AnyEnv::Lever(e), AnyState::Lever(s)) => e.coordinated(s),
            (AnyEnv::LeverSym(e), AnyState::LeverSym(s)) => e.coordinated(s),
            (AnyEnv::Cee(e), AnyState::Cee(s)) => e.coordinated(s),
            (AnyEnv::Sse(e), AnyState::Sse(s)) => e.coordinated(s),
            _ => panic!("environment/state family mismatch"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_and_regime_ids_roundtrip() {
        for env in [EnvId::OsNlg, EnvId::INlg, EnvId::Cee, EnvId::Sse] {
            assert_eq!(EnvId::parse(env.as_str()).unwrap(), env);
        }
        for regime in [Regime::SelfPlay, Regime::Nzsc, Regime::MetaNzsc] {
            assert_eq!(Regime::parse(regime.as_str()).unwrap(), regime);
        }
        assert!(EnvId::parse("hanabi").is_err());
    }

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::for_env(EnvId::INlg);
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("environment = \"os-nlg\"").unwrap();
        assert_eq!(cfg.environment, "os-nlg");
        assert_eq!(cfg.eval_episodes, 2000);
    }

    #[test]
    fn env_overrides_reach_nested_keys() {
        let vars = vec![
            ("NZSC__PPO__TOTAL_TIMESTEPS".to_string(), "5000".to_string()),
            ("NZSC__EVAL_EPISODES".to_string(), "123".to_string()),
            ("HOME".to_string(), "/irrelevant".to_string()),
        ];
        let cfg =
            ExperimentConfig::from_toml_with_vars("environment = \"i-nlg\"", vars.into_iter())
                .unwrap();
        assert_eq!(cfg.ppo.total_timesteps, 5000);
        assert_eq!(cfg.eval_episodes, 123);
        // Untouched nested keys keep their per-environment defaults.
        assert_eq!(cfg.ppo.clip_range, 0.3);
    }

    #[test]
    fn trait_parsing_respects_the_environment() {
        let lever = ExperimentConfig::for_env(EnvId::INlg);
        assert_eq!(
            lever.parse_trait("2.5").unwrap(),
            TraitDescriptor::LeverSigma { sigma: 2.5 }
        );
        assert!(lever.parse_trait("low").is_err());
        let cee = ExperimentConfig::for_env(EnvId::Cee);
        assert_eq!(
            cee.parse_trait("low").unwrap(),
            TraitDescriptor::CeeSpeed { speed: Speed::Low }
        );
        let sse = ExperimentConfig::for_env(EnvId::Sse);
        assert_eq!(sse.parse_trait("7").unwrap(), TraitDescriptor::SseView { view: 7 });
        assert!(sse.parse_trait("1").is_err());
    }

    #[test]
    fn any_env_dispatches_to_the_right_family() {
        let traits = vec![
            TraitDescriptor::LeverSigma { sigma: 0.0 },
            TraitDescriptor::LeverSigma { sigma: 5.0 },
        ];
        let env = AnyEnv::build(EnvId::INlg, 2, false, &traits, false, 0.0).unwrap();
        assert_eq!(env.horizon(), 16);
        assert_eq!(env.action_dims(), &[3]);
        let mut rng = RngStream::new(1);
        let mut state = env.reset(&mut rng);
        let out = env.step(&mut state, &[[0, 0], [0, 0]], &mut rng).unwrap();
        assert!(!out.done);

        let speeds = vec![
            TraitDescriptor::CeeSpeed { speed: Speed::Low },
            TraitDescriptor::CeeSpeed { speed: Speed::High },
        ];
        let cee = AnyEnv::build(EnvId::Cee, 2, false, &speeds, false, 0.0).unwrap();
        assert_eq!(cee.horizon(), 32);
        assert_eq!(cee.action_dims(), &[5]);

        let views =
            vec![TraitDescriptor::SseView { view: 4 }, TraitDescriptor::SseViewAny];
        let sse = AnyEnv::build(EnvId::Sse, 2, false, &views, false, 0.0).unwrap();
        assert_eq!(sse.action_dims(), &[5, 9]);
    }
}
