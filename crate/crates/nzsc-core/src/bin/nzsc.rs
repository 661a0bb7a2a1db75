//! Command-line entry point: training, evaluation, cross-play tournaments,
//! reference oracles, and canned experiment reproductions.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nzsc_core::config::{EnvId, ExperimentConfig, Regime};
use nzsc_core::eval::export::{heatmap_triples, matrix_to_csv, matrix_to_json, write_atomic};
use nzsc_core::eval::{cross_play, CrossPlayMatrix, MatrixEntry, RunManifest};
use nzsc_core::experiments::{ArtifactStore, RunSpec};
use nzsc_core::neural::{Checkpoint, TraitDescriptor};
use nzsc_core::oracle;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "nzsc", version, about = "Coordination laboratory for noisy problem settings")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train checkpoints for an experiment configuration.
    Train {
        /// TOML config; keys fall back to per-environment defaults and may
        /// be overridden by NZSC__SECTION__KEY environment variables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Multiplies total training timesteps (desk-scale runs).
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Evaluate a checkpoint paired with itself.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Concrete evaluation trait (required for meta-trained
        /// checkpoints whose training trait is a distribution).
        #[arg(long)]
        eval_trait: Option<String>,
    },
    /// Cross-play matrix over a list of checkpoints.
    Crossplay {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint files; matrix rows and columns follow this order.
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Partner-sigma misspecification sd applied at evaluation.
        #[arg(long)]
        z: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated evaluation traits, one per checkpoint
        /// (defaults to each checkpoint's training trait).
        #[arg(long)]
        eval_traits: Option<String>,
    },
    /// Brute-force reference values, printed as JSON records with
    /// standard errors.
    Oracle {
        #[command(subcommand)]
        what: OracleCmd,
    },
    /// Chain training and evaluation for a named experiment.
    /// Ids: osnlg-optimum, selfplay-fragility, regime-gap,
    /// misspecified-noise, flat-prior, n-agent, cee-speeds.
    Reproduce {
        id: String,
        #[arg(long, default_value_t = 0.02)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Monte-Carlo E[max of k iid normals].
    Max {
        #[arg(short, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 5.0)]
        mean: f64,
        #[arg(long, default_value_t = 2.0)]
        sd: f64,
        #[arg(long, default_value_t = 2_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte-Carlo evaluation of a fixed joint strategy on the one-shot
    /// lever game (argmax, fixed:<lever>, threshold:<value>).
    Strategy {
        #[arg(long)]
        name: String,
        /// Per-agent observation noise levels.
        #[arg(long, value_delimiter = ',', default_value = "0,0")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 500_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exhaustive search over symmetric deterministic policy pairs on a
    /// discretized one-shot lever game.
    Enumerate {
        #[arg(long, default_value_t = 2)]
        levers: usize,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, default_value_t = 4)]
        bins: usize,
        #[arg(long, default_value_t = 1e7)]
        budget: f64,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }
    match cli.command {
        Command::Train { config, seed, out, scale } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            }
            if let Some(scale) = scale {
                cfg.scale = scale;
            }
            run_train(&cfg)
        }
        Command::Eval { checkpoint, episodes, seed, eval_trait } => {
            let ckpt = Arc::new(Checkpoint::load(&checkpoint)?);
            let env = EnvId::parse(&ckpt.header.env_id)?;
            let cfg = ExperimentConfig::for_env(env);
            let eval_trait = resolve_eval_trait(&cfg, &ckpt, eval_trait.as_deref())?;
            let entry = MatrixEntry::new(
                format!("{}#s{}", eval_trait.label(), ckpt.header.seed),
                eval_trait,
                ckpt,
            );
            let matrix = cross_play(&[entry], &cfg, episodes, seed)?;
            let cell = matrix.cell(0, 0);
            println!(
                "{}: return {:.3} +- {:.3}, terminal coordination {:.3} +- {:.3} ({} episodes)",
                matrix.labels[0],
                cell.mean_return,
                cell.se_return,
                cell.coordination_rate,
                cell.se_rate,
                cell.episodes
            );
            Ok(())
        }
        Command::Crossplay { config, checkpoints, episodes, z, seed, out, eval_traits } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(z) = z {
                cfg.misspecification_z = z;
            }
            let episodes = episodes.unwrap_or(cfg.eval_episodes);
            let seed = seed.unwrap_or(cfg.seed);
            let loaded: Vec<Arc<Checkpoint>> = checkpoints
                .iter()
                .map(|p| Checkpoint::load(p).map(Arc::new).map_err(anyhow::Error::from))
                .collect::<Result<_>>()?;
            cfg.environment = loaded[0].header.env_id.clone();
            let trait_overrides: Vec<Option<String>> = match eval_traits {
                Some(list) => list.split(',').map(|s| Some(s.trim().to_string())).collect(),
                None => vec![None; loaded.len()],
            };
            if trait_overrides.len() != loaded.len() {
                bail!(
                    "got {} eval traits for {} checkpoints",
                    trait_overrides.len(),
                    loaded.len()
                );
            }
            let entries: Vec<MatrixEntry> = loaded
                .iter()
                .zip(&trait_overrides)
                .map(|(ckpt, ov)| {
                    let t = resolve_eval_trait(&cfg, ckpt, ov.as_deref())?;
                    Ok(MatrixEntry::new(
                        format!("{}|{}#s{}", ckpt.header.regime, t.label(), ckpt.header.seed),
                        t,
                        ckpt.clone(),
                    ))
                })
                .collect::<Result<_>>()?;
            let matrix = cross_play(&entries, &cfg, episodes, seed)?;
            print_matrix(&matrix);
            if let Some(out) = out {
                export_matrix(&out, &matrix, &cfg)?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Oracle { what } => run_oracle(what),
        Command::Reproduce { id, scale, seed, out, episodes } => {
            run_reproduce(&id, scale, seed, out, episodes)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn resolve_eval_trait(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    over: Option<&str>,
) -> Result<TraitDescriptor> {
    if let Some(text) = over {
        return Ok(cfg.parse_trait(text)?);
    }
    match &ckpt.header.traits[0] {
        t @ (TraitDescriptor::LeverSigma { .. }
        | TraitDescriptor::CeeSpeed { .. }
        | TraitDescriptor::SseView { .. }) => Ok(t.clone()),
        other => bail!(
            "checkpoint trained under {} needs --eval-trait to pick a concrete model",
            other.label()
        ),
    }
}

fn run_train(cfg: &ExperimentConfig) -> Result<()> {
    let env = cfg.env_id()?;
    let regime = cfg.regime_id()?;
    let ppo = cfg.effective_ppo();
    let out_dir = PathBuf::from(&cfg.out_dir);
    let store = ArtifactStore::new(out_dir.join("checkpoints"));
    let mut manifest = RunManifest::begin(cfg, cfg.seed);

    let traits: Vec<TraitDescriptor> = match regime {
        Regime::MetaNzsc if matches!(env, EnvId::OsNlg | EnvId::INlg) => {
            vec![RunSpec::meta_sigma_trait()]
        }
        Regime::MetaNzsc => vec![match env {
            EnvId::Cee => TraitDescriptor::CeeSpeedAny,
            _ => TraitDescriptor::SseViewAny,
        }],
        _ => cfg
            .noise_grid
            .iter()
            .map(|t| cfg.parse_trait(t).map_err(anyhow::Error::from))
            .collect::<Result<_>>()?,
    };

    for own_trait in &traits {
        for s in 0..cfg.seeds_per_model as u64 {
            let spec = RunSpec {
                env,
                regime,
                own_trait: own_trait.clone(),
                seed: cfg.seed + s,
                num_agents: cfg.num_agents,
                flat_prior: cfg.flat_prior,
                total_timesteps: ppo.total_timesteps,
                population_timesteps: ppo.total_timesteps,
                mep: cfg.mep.clone(),
            };
            let path = store.path_for(&spec);
            println!("training {}", spec.key());
            let ckpt = store.ensure(&spec)?;
            println!(
                "  -> {} ({} agents, {} steps)",
                path.display(),
                ckpt.agents.len(),
                ckpt.header.total_timesteps
            );
            manifest.checkpoints.push(path);
            manifest.metrics.push(store.root().join("logs").join(format!("{}.jsonl", spec.key())));
        }
    }
    manifest.finish(&out_dir.join("manifest.json"))?;
    println!("wrote {}", out_dir.join("manifest.json").display());
    Ok(())
}

fn run_oracle(what: OracleCmd) -> Result<()> {
    match what {
        OracleCmd::Max { k, mean, sd, samples, seed } => {
            let est = oracle::mc_expected_max(k, mean, sd, samples, seed)?;
            println!(
                "{}",
                serde_json::json!({
                    "oracle": "expected-max", "k": k, "mean": mean, "sd": sd,
                    "value": est.value, "std_error": est.std_error, "samples": est.samples,
                })
            );
        }
        OracleCmd::Strategy { name, sigmas, samples, seed } => {
            let strategy = oracle::FixedStrategy::parse(&name)?;
            let cfg = nzsc_core::lever::LeverConfig::one_shot();
            let eval = oracle::eval_fixed_strategy(strategy, &sigmas, &cfg, samples, seed);
            println!(
                "{}",
                serde_json::json!({
                    "oracle": "fixed-strategy", "strategy": name, "sigmas": sigmas,
                    "mean_return": eval.mean_return.value,
                    "return_std_error": eval.mean_return.std_error,
                    "coordination_rate": eval.coordination_rate.value,
                    "rate_std_error": eval.coordination_rate.std_error,
                    "samples": eval.mean_return.samples,
                })
            );
        }
        OracleCmd::Enumerate { levers, sigma, bins, budget } => {
            let cfg = nzsc_core::lever::LeverConfig {
                num_levers: levers,
                ..nzsc_core::lever::LeverConfig::one_shot()
            };
            let result = oracle::enumerate_joint_policies(&cfg, sigma, bins, budget)?;
            println!(
                "{}",
                serde_json::json!({
                    "oracle": "policy-enumeration", "levers": levers, "sigma": sigma,
                    "bins": bins, "best_return": result.best_return,
                    "best_coordination": result.best_coordination,
                    "policies_searched": result.policies_searched,
                })
            );
        }
    }
    Ok(())
}

fn print_matrix(matrix: &CrossPlayMatrix) {
    println!("{}", matrix_to_csv(matrix));
    println!(
        "diagonal mean return {:.3}, off-diagonal {:.3}, min coordination {:.3}",
        matrix.diagonal_mean_return(),
        matrix.off_diagonal_mean_return(),
        matrix.min_coordination()
    );
}

fn export_matrix(dir: &Path, matrix: &CrossPlayMatrix, cfg: &ExperimentConfig) -> Result<()> {
    write_atomic(&dir.join("matrix.csv"), matrix_to_csv(matrix).as_bytes())?;
    write_atomic(&dir.join("matrix.json"), matrix_to_json(matrix, cfg).as_bytes())?;
    write_atomic(&dir.join("heatmap.dat"), heatmap_triples(matrix).as_bytes())?;
    Ok(())
}

const LEVER_STEPS: u64 = 20_000_000;
const CEE_STEPS: u64 = 300_000_000;

fn run_reproduce(
    id: &str,
    scale: f64,
    seed: u64,
    out: Option<PathBuf>,
    episodes: usize,
) -> Result<()> {
    let out = out.unwrap_or_else(|| PathBuf::from("runs").join(id));
    let store = ArtifactStore::new(out.join("checkpoints"));
    let lever_steps = (LEVER_STEPS as f64 * scale).round().max(1.0) as u64;
    match id {
        "osnlg-optimum" => {
            let spec = RunSpec::lever(
                EnvId::OsNlg,
                Regime::SelfPlay,
                TraitDescriptor::LeverSigma { sigma: 0.0 },
                seed,
                lever_steps,
            );
            let ckpt = store.ensure(&spec)?;
            let cfg = ExperimentConfig::for_env(EnvId::OsNlg);
            let entry = MatrixEntry::new(
                format!("sigma=0#s{seed}"),
                TraitDescriptor::LeverSigma { sigma: 0.0 },
                ckpt,
            );
            let matrix = cross_play(&[entry], &cfg, episodes, seed)?;
            let optimum = 5.0 + 2.0 * oracle::expected_max_standard_normal(3).unwrap();
            println!(
                "self-play return {:.3} vs noiseless oracle optimum {optimum:.3} ({:.1}%)",
                matrix.cell(0, 0).mean_return,
                100.0 * matrix.cell(0, 0).mean_return / optimum
            );
            export_matrix(&out, &matrix, &cfg)?;
        }
        "selfplay-fragility" => {
            let entries = lever_grid_entries(
                &store,
                EnvId::INlg,
                Regime::SelfPlay,
                &[2.5],
                &[seed, seed + 1, seed + 2],
                lever_steps,
                false,
            )?;
            let cfg = ExperimentConfig::for_env(EnvId::INlg);
            let matrix = cross_play(&entries, &cfg, episodes, seed)?;
            print_matrix(&matrix);
            export_matrix(&out, &matrix, &cfg)?;
        }
        "regime-gap" => {
            let seeds = [seed, seed + 1, seed + 2];
            let cfg = ExperimentConfig::for_env(EnvId::INlg);
            for (s0, s5) in [(0.0, 0.0), (0.0, 5.0)] {
                let mut total = 0.0;
                let mut count = 0;
                for &a in &seeds {
                    for &b in &seeds {
                        if a == b {
                            continue;
                        }
                        let row = meta_lever_entry(&store, EnvId::INlg, s0, a, lever_steps)?;
                        let col = meta_lever_entry(&store, EnvId::INlg, s5, b, lever_steps)?;
                        let m = cross_play(&[row, col], &cfg, episodes / 4, seed)?;
                        total += m.cell(0, 1).mean_return;
                        count += 1;
                    }
                }
                println!(
                    "meta-trained cross-play return at (sigma {s0}, sigma {s5}): {:.3}",
                    total / count as f64
                );
            }
        }
        "misspecified-noise" => {
            let seeds = [seed, seed + 1, seed + 2];
            let entries: Vec<MatrixEntry> = seeds
                .iter()
                .map(|&s| meta_lever_entry(&store, EnvId::INlg, 2.5, s, lever_steps))
                .collect::<Result<_>>()?;
            for z in [0.0, 0.5, 2.0] {
                let mut cfg = ExperimentConfig::for_env(EnvId::INlg);
                cfg.misspecification_z = z;
                let matrix = cross_play(&entries, &cfg, episodes, seed)?;
                println!("z = {z}: mean cross-play return {:.3}", matrix.mean_return_all());
            }
        }
        "flat-prior" => {
            let cfg = ExperimentConfig::for_env(EnvId::INlg);
            for flat in [false, true] {
                let entries = lever_grid_entries(
                    &store,
                    EnvId::INlg,
                    Regime::Nzsc,
                    &[2.5],
                    &[seed, seed + 1, seed + 2],
                    lever_steps,
                    flat,
                )?;
                // Evaluation always runs under the true prior.
                let matrix = cross_play(&entries, &cfg, episodes, seed)?;
                println!(
                    "trained under {} prior: mean coordination {:.3}",
                    if flat { "flat" } else { "true" },
                    matrix.cells.iter().map(|c| c.coordination_rate).sum::<f64>()
                        / matrix.cells.len() as f64
                );
            }
        }
        "n-agent" => {
            for n in 2..=5usize {
                let rate = n_agent_rate(&store, n, 2.5, seed, lever_steps / 2, episodes)?;
                println!("n = {n}: terminal coordination {rate:.3}");
            }
        }
        "cee-speeds" => {
            let cee_steps = (CEE_STEPS as f64 * scale).round().max(1.0) as u64;
            let mut entries = Vec::new();
            for speed in nzsc_core::grid::cee::Speed::ALL {
                let spec = RunSpec {
                    env: EnvId::Cee,
                    regime: Regime::SelfPlay,
                    own_trait: TraitDescriptor::CeeSpeed { speed },
                    seed: nzsc_core::experiments::POPULATION_SEED_BASE,
                    num_agents: 2,
                    flat_prior: false,
                    total_timesteps: cee_steps,
                    population_timesteps: cee_steps,
                    mep: Default::default(),
                };
                let ckpt = store.ensure(&spec)?;
                entries.push(MatrixEntry::new(
                    format!("speed={speed}#s0"),
                    TraitDescriptor::CeeSpeed { speed },
                    ckpt,
                ));
            }
            let cfg = ExperimentConfig::for_env(EnvId::Cee);
            let matrix = cross_play(&entries, &cfg, episodes, seed)?;
            print_matrix(&matrix);
            export_matrix(&out, &matrix, &cfg)?;
        }
        other => bail!("unknown experiment id `{other}`"),
    }
    Ok(())
}

fn lever_grid_entries(
    store: &ArtifactStore,
    env: EnvId,
    regime: Regime,
    sigmas: &[f64],
    seeds: &[u64],
    steps: u64,
    flat: bool,
) -> Result<Vec<MatrixEntry>> {
    let mut entries = Vec::new();
    for &sigma in sigmas {
        for &s in seeds {
            let mut spec =
                RunSpec::lever(env, regime, TraitDescriptor::LeverSigma { sigma }, s, steps);
            spec.flat_prior = flat;
            let ckpt = store.ensure(&spec)?;
            entries.push(MatrixEntry::new(
                format!("{}|sigma={sigma}#s{s}", regime.as_str()),
                TraitDescriptor::LeverSigma { sigma },
                ckpt,
            ));
        }
    }
    Ok(entries)
}

fn meta_lever_entry(
    store: &ArtifactStore,
    env: EnvId,
    eval_sigma: f64,
    seed: u64,
    steps: u64,
) -> Result<MatrixEntry> {
    let spec = RunSpec::lever(env, Regime::MetaNzsc, RunSpec::meta_sigma_trait(), seed, steps);
    let ckpt = store.ensure(&spec)?;
    Ok(MatrixEntry::new(
        format!("meta|sigma={eval_sigma}#s{seed}"),
        TraitDescriptor::LeverSigma { sigma: eval_sigma },
        ckpt,
    ))
}

fn n_agent_rate(
    store: &ArtifactStore,
    n: usize,
    sigma: f64,
    seed: u64,
    steps: u64,
    episodes: usize,
) -> Result<f64> {
    use nzsc_core::env::BatchPolicy;
    use nzsc_core::eval::evaluate_team;
    let mut ckpts = Vec::new();
    for i in 0..n as u64 {
        let mut spec = RunSpec::lever(
            EnvId::INlg,
            Regime::Nzsc,
            TraitDescriptor::LeverSigma { sigma },
            seed + i,
            steps,
        );
        spec.num_agents = n;
        ckpts.push(store.ensure(&spec)?);
    }
    let env = nzsc_core::config::AnyEnv::build(
        EnvId::INlg,
        n,
        false,
        &vec![TraitDescriptor::LeverSigma { sigma }; n],
        false,
        0.0,
    )?;
    let nets: Vec<_> =
        ckpts.iter().enumerate().map(|(slot, c)| c.network::<f32>(slot)).collect();
    let policies: Vec<&dyn BatchPolicy> = nets.iter().map(|n| n as &dyn BatchPolicy).collect();
    let stats = evaluate_team(&env, &policies, episodes, nzsc_core::rng::RngStream::new(seed))?;
    Ok(stats.coordination_rate)
}
