//! Cross-play: every ordered pair of independently trained checkpoints is
//! evaluated as a team on fresh episodes. The ground truth is shared; each
//! agent observes through its own trained noise model (or, for checkpoints
//! trained under a noise meta-distribution, the concrete model the
//! experiment assigns for evaluation).

use crate::config::{AnyEnv, ConfigError, EnvId, ExperimentConfig};
use crate::env::{BatchPolicy, EnvError, Environment};
use crate::neural::{Checkpoint, PolicyNetwork, TraitDescriptor};
use crate::rng::{tag, RngStream};
use crate::rollout::rollout_batch;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Aggregates for one matrix cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean_return: f64,
    pub se_return: f64,
    pub coordination_rate: f64,
    pub se_rate: f64,
    pub episodes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossPlayMatrix {
    pub labels: Vec<String>,
    /// Row-major `labels.len() x labels.len()`.
    pub cells: Vec<CellStats>,
}

impl CrossPlayMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> &CellStats {
        &self.cells[row * self.labels.len() + col]
    }

    pub fn diagonal_mean_return(&self) -> f64 {
        let n = self.size();
        (0..n).map(|i| self.cell(i, i).mean_return).sum::<f64>() / n as f64
    }

    pub fn off_diagonal_mean_return(&self) -> f64 {
        let n = self.size();
        let mut total = 0.0;
        let mut count = 0usize;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    total += self.cell(r, c).mean_return;
                    count += 1;
                }
            }
        }
        total / count.max(1) as f64
    }

    pub fn mean_return_all(&self) -> f64 {
        self.cells.iter().map(|c| c.mean_return).sum::<f64>() / self.cells.len() as f64
    }

    pub fn min_coordination(&self) -> f64 {
        self.cells.iter().map(|c| c.coordination_rate).fold(f64::INFINITY, f64::min)
    }
}

/// Evaluate a fixed team on `episodes` fresh episodes. Deterministic in the
/// stream; batches are chunked to bound memory.
pub fn evaluate_team<E: Environment>(
    env: &E,
    policies: &[&dyn BatchPolicy],
    episodes: usize,
    root: RngStream,
) -> Result<CellStats, EnvError> {
    const CHUNK: usize = 1024;
    let mut remaining = episodes;
    let mut chunk_index = 0u64;
    let (mut total, mut total_sq) = (0.0f64, 0.0f64);
    let mut coordinated = 0u64;
    while remaining > 0 {
        let now = remaining.min(CHUNK);
        let batch =
            rollout_batch(env, policies, now, root.derive2(tag::EPISODE, chunk_index))?;
        for row in batch.reward.rows() {
            let ret: f64 = row.sum();
            total += ret;
            total_sq += ret * ret;
        }
        coordinated += batch.coordinated.iter().filter(|&&c| c).count() as u64;
        remaining -= now;
        chunk_index += 1;
    }
    let n = episodes as f64;
    let mean = total / n;
    let var = (total_sq / n - mean * mean).max(0.0);
    let rate = coordinated as f64 / n;
    Ok(CellStats {
        mean_return: mean,
        se_return: (var / n).sqrt(),
        coordination_rate: rate,
        se_rate: (rate * (1.0 - rate) / n).sqrt(),
        episodes: episodes as u64,
    })
}

/// One row/column of a cross-play matrix: a checkpoint plus the concrete
/// noise model it uses at evaluation time.
#[derive(Clone)]
pub struct MatrixEntry {
    pub label: String,
    pub eval_trait: TraitDescriptor,
    pub ckpt: Arc<Checkpoint>,
}

impl MatrixEntry {
    pub fn new(label: impl Into<String>, eval_trait: TraitDescriptor, ckpt: Arc<Checkpoint>) -> Self {
        Self { label: label.into(), eval_trait, ckpt }
    }

    /// The net this checkpoint contributes when seated in `slot`.
    pub fn net_for_slot(&self, slot: usize) -> PolicyNetwork<f32> {
        let idx = slot.min(self.ckpt.agents.len() - 1);
        self.ckpt.network(idx)
    }
}

/// Run every ordered pair of entries for `episodes` episodes each and
/// collect returns and terminal-step coordination rates. Checkpoints are
/// never mutated; cells use disjoint derived streams, so the matrix is a
/// pure function of (entries, config, episodes, seed).
pub fn cross_play(
    entries: &[MatrixEntry],
    cfg: &ExperimentConfig,
    episodes: usize,
    eval_seed: u64,
) -> Result<CrossPlayMatrix, EvalError> {
    let env_id = cfg.env_id()?;
    let n = entries.len();
    let root = RngStream::new(eval_seed);
    let mut cells = Vec::with_capacity(n * n);
    for (r, row) in entries.iter().enumerate() {
        for (c, col) in entries.iter().enumerate() {
            let stats = evaluate_cell(
                env_id,
                cfg,
                row,
                col,
                episodes,
                root.derive2(0x30, (r * n + c) as u64),
            )?;
            cells.push(stats);
        }
    }
    Ok(CrossPlayMatrix { labels: entries.iter().map(|e| e.label.clone()).collect(), cells })
}

fn evaluate_cell(
    env_id: EnvId,
    cfg: &ExperimentConfig,
    row: &MatrixEntry,
    col: &MatrixEntry,
    episodes: usize,
    stream: RngStream,
) -> Result<CellStats, EvalError> {
    for (name, entry) in [("row", row), ("col", col)] {
        if entry.ckpt.header.env_id != env_id.as_str() {
            return Err(EvalError::Incompatible(format!(
                "{name} checkpoint trained on {}, evaluating on {}",
                entry.ckpt.header.env_id,
                env_id.as_str()
            )));
        }
    }
    let env = AnyEnv::build(
        env_id,
        2,
        cfg.flat_prior,
        &[row.eval_trait.clone(), col.eval_trait.clone()],
        false,
        cfg.misspecification_z,
    )?;
    let net0 = row.net_for_slot(0);
    let net1 = col.net_for_slot(1);
    for (name, net) in [("row", &net0), ("col", &net1)] {
        if net.shape.obs_dim != env.observation_dim() {
            return Err(EvalError::Incompatible(format!(
                "{name} checkpoint observes {} dims, environment emits {}",
                net.shape.obs_dim,
                env.observation_dim()
            )));
        }
    }
    let policies: Vec<&dyn BatchPolicy> = vec![&net0, &net1];
    Ok(evaluate_team(&env, &policies, episodes, stream)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{CheckpointHeader, PolicyShape};

    fn lever_checkpoint(seed: u64, sigma: f64) -> Checkpoint {
        let cfg = ExperimentConfig::for_env(EnvId::INlg);
        let env = AnyEnv::build(
            EnvId::INlg,
            2,
            false,
            &[
                TraitDescriptor::LeverSigma { sigma },
                TraitDescriptor::LeverSigma { sigma },
            ],
            false,
            0.0,
        )
        .unwrap();
        let shape = PolicyShape {
            obs_dim: env.observation_dim(),
            fc_dim: 8,
            hidden_dim: 8,
            heads: vec![3],
        };
        let mut rng = RngStream::new(seed);
        let a = PolicyNetwork::<f32>::init(shape.clone(), &mut rng);
        let b = PolicyNetwork::<f32>::init(shape.clone(), &mut rng);
        let _ = cfg;
        Checkpoint::new(
            CheckpointHeader {
                env_id: "i-nlg".into(),
                regime: "self-play".into(),
                seed,
                num_agents: 2,
                obs_dim: shape.obs_dim,
                fc_dim: 8,
                hidden_dim: 8,
                heads: vec![3],
                traits: vec![TraitDescriptor::LeverSigma { sigma }; 2],
                param_counts: vec![shape.param_count(); 2],
                total_timesteps: 0,
                version: "test".into(),
            },
            vec![a.params_f32(), b.params_f32()],
        )
    }

    #[test]
    fn matrix_has_one_cell_per_ordered_pair() {
        let cfg = ExperimentConfig::for_env(EnvId::INlg);
        let entries: Vec<MatrixEntry> = (0..2)
            .map(|s| {
                MatrixEntry::new(
                    format!("sigma=1#s{s}"),
                    TraitDescriptor::LeverSigma { sigma: 1.0 },
                    Arc::new(lever_checkpoint(s, 1.0)),
                )
            })
            .collect();
        let m = cross_play(&entries, &cfg, 64, 7).unwrap();
        assert_eq!(m.size(), 2);
        assert_eq!(m.cells.len(), 4);
        for cell in &m.cells {
            assert_eq!(cell.episodes, 64);
            assert!(cell.mean_return.is_finite());
        }
    }

    #[test]
    fn matrices_are_reproducible_and_leave_checkpoints_untouched() {
        let cfg = ExperimentConfig::for_env(EnvId::INlg);
        let ckpt = Arc::new(lever_checkpoint(3, 2.5));
        let before = (*ckpt).clone();
        let entries = vec![MatrixEntry::new(
            "sigma=2.5#s3",
            TraitDescriptor::LeverSigma { sigma: 2.5 },
            ckpt.clone(),
        )];
        let a = cross_play(&entries, &cfg, 128, 11).unwrap();
        let b = cross_play(&entries, &cfg, 128, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(*ckpt, before);
    }

    #[test]
    fn self_pairing_matches_its_own_training_configuration() {
        // A checkpoint paired with itself replays its training pair, so
        // the cell must equal a direct evaluation of that pair.
        let cfg = ExperimentConfig::for_env(EnvId::INlg);
        let ckpt = Arc::new(lever_checkpoint(5, 0.0));
        let entries = vec![MatrixEntry::new(
            "sigma=0#s5",
            TraitDescriptor::LeverSigma { sigma: 0.0 },
            ckpt.clone(),
        )];
        let m = cross_play(&entries, &cfg, 256, 13).unwrap();
        let env = AnyEnv::build(
            EnvId::INlg,
            2,
            false,
            &[
                TraitDescriptor::LeverSigma { sigma: 0.0 },
                TraitDescriptor::LeverSigma { sigma: 0.0 },
            ],
            false,
            0.0,
        )
        .unwrap();
        let n0: PolicyNetwork<f32> = ckpt.network(0);
        let n1: PolicyNetwork<f32> = ckpt.network(1);
        let policies: Vec<&dyn BatchPolicy> = vec![&n0, &n1];
        let direct = evaluate_team(
            &env,
            &policies,
            256,
            RngStream::new(13).derive2(0x30, 0),
        )
        .unwrap();
        assert_eq!(m.cell(0, 0), &direct);
    }

    #[test]
    fn env_mismatch_is_rejected() {
        let mut cfg = ExperimentConfig::for_env(EnvId::Cee);
        cfg.environment = "cee".into();
        let entries = vec![MatrixEntry::new(
            "sigma=0#s0",
            TraitDescriptor::CeeSpeed { speed: crate::grid::cee::Speed::Low },
            Arc::new(lever_checkpoint(1, 0.0)),
        )];
        let err = cross_play(&entries, &cfg, 8, 1).unwrap_err();
        assert!(matches!(err, EvalError::Incompatible(_)));
    }
}
