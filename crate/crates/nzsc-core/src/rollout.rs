//! Batched lockstep episode collection.
//!
//! All environments here are fixed-horizon, so a batch of episodes can be
//! stepped in lockstep and the policy forward pass batched across episodes.
//! Each episode owns RNG streams derived from its index, which makes the
//! result a pure function of `(environment config, policy parameters, seed)`
//! no matter how many worker threads execute it.

use crate::env::{AgentAction, BatchPolicy, EnvError, Environment};
use crate::rng::{tag, RngStream};
use ndarray::{s, Array2, Array3};
use rayon::prelude::*;

/// Trajectories for one agent slot, shaped `(batch, horizon, ...)`.
#[derive(Debug, Clone)]
pub struct AgentRollout {
    pub obs: Array3<f32>,
    /// Flattened `(batch, horizon)` row-major.
    pub actions: Vec<AgentAction>,
    pub log_prob: Array2<f32>,
    pub value: Array2<f32>,
}

/// A batch of complete episodes. Rewards are common to all agents; initial
/// recurrent states are zero by construction (episodes start fresh).
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub horizon: usize,
    pub head_sizes: Vec<usize>,
    pub agents: Vec<AgentRollout>,
    pub reward: Array2<f64>,
    /// Terminal-step coordination predicate per episode.
    pub coordinated: Vec<bool>,
}

impl EpisodeBatch {
    pub fn batch_size(&self) -> usize {
        self.reward.nrows()
    }

    /// Mean undiscounted episode return.
    pub fn mean_return(&self) -> f64 {
        self.reward.sum() / self.batch_size() as f64
    }

    /// Fraction of episodes whose final step coordinated.
    pub fn coordination_rate(&self) -> f64 {
        let hits = self.coordinated.iter().filter(|&&c| c).count();
        hits as f64 / self.coordinated.len() as f64
    }
}

/// Sample from a categorical given unnormalized logits; returns the index
/// and its log-probability under the softmax.
pub fn sample_categorical(logits: &[f32], rng: &mut RngStream) -> (usize, f64) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut total = 0.0f64;
    for &l in logits {
        total += (l as f64 - max).exp();
    }
    let mut target = rng.uniform() * total;
    let mut pick = logits.len() - 1;
    for (i, &l) in logits.iter().enumerate() {
        target -= (l as f64 - max).exp();
        if target < 0.0 {
            pick = i;
            break;
        }
    }
    let logp = (logits[pick] as f64 - max) - total.ln();
    (pick, logp)
}

/// Roll `batch` complete episodes with one policy per agent slot.
///
/// Log-probabilities and values are recorded from the acting policies at
/// collection time, which is what PPO's importance ratios are taken against.
pub fn rollout_batch<E: Environment>(
    env: &E,
    policies: &[&dyn BatchPolicy],
    batch: usize,
    root: RngStream,
) -> Result<EpisodeBatch, EnvError> {
    let n = env.num_agents();
    let h = env.horizon();
    let obs_dim = env.observation_dim();
    if policies.len() != n {
        return Err(EnvError::DimensionMismatch { what: "policy count", got: policies.len(), want: n });
    }
    for p in policies {
        if p.obs_dim() != obs_dim {
            return Err(EnvError::DimensionMismatch {
                what: "policy observation dim",
                got: p.obs_dim(),
                want: obs_dim,
            });
        }
        if p.head_sizes() != env.action_dims() {
            return Err(EnvError::DimensionMismatch {
                what: "policy action heads",
                got: p.head_sizes().len(),
                want: env.action_dims().len(),
            });
        }
    }

    let mut env_rngs: Vec<RngStream> =
        (0..batch).map(|i| root.derive2(tag::EPISODE, i as u64).derive(tag::DYNAMICS)).collect();
    let mut act_rngs: Vec<RngStream> =
        (0..batch).map(|i| root.derive2(tag::EPISODE, i as u64).derive(tag::POLICY)).collect();

    let mut states: Vec<E::State> = env_rngs.par_iter_mut().map(|r| env.reset(r)).collect();

    let heads = env.action_dims().to_vec();
    let num_heads = heads.len();
    let mut agents: Vec<AgentRollout> = (0..n)
        .map(|_| AgentRollout {
            obs: Array3::zeros((batch, h, obs_dim)),
            actions: vec![[0; 2]; batch * h],
            log_prob: Array2::zeros((batch, h)),
            value: Array2::zeros((batch, h)),
        })
        .collect();
    let mut reward = Array2::<f64>::zeros((batch, h));
    let mut coordinated = vec![false; batch];

    let mut hiddens: Vec<Array2<f32>> =
        policies.iter().map(|p| Array2::zeros((batch, p.hidden_dim()))).collect();
    let mut obs_now = Array2::<f32>::zeros((batch, obs_dim));
    // Joint actions for step t, flattened (batch, agent).
    let mut joint = vec![[0usize; 2]; batch * n];

    for t in 0..h {
        for (agent, policy) in policies.iter().enumerate() {
            {
                let rows: Vec<(usize, &mut [f32])> = obs_now
                    .axis_iter_mut(ndarray::Axis(0))
                    .into_iter()
                    .enumerate()
                    .map(|(b, r)| (b, r.into_slice().expect("row-major observation buffer")))
                    .collect();
                rows.into_par_iter().for_each(|(b, row)| env.observe(&states[b], agent, row));
            }
            agents[agent].obs.slice_mut(s![.., t, ..]).assign(&obs_now);

            let (logits, values) = policy.step_batch(obs_now.view(), &mut hiddens[agent]);
            debug_assert_eq!(logits.len(), num_heads);
            let sampled: Vec<(AgentAction, f64)> = act_rngs
                .par_iter_mut()
                .enumerate()
                .with_min_len(256)
                .map(|(b, rng)| {
                    let mut logp = 0.0f64;
                    let mut action: AgentAction = [0; 2];
                    for (head, head_logits) in logits.iter().enumerate() {
                        let row = head_logits.row(b);
                        let (a, lp) =
                            sample_categorical(row.as_slice().expect("contiguous logits"), rng);
                        action[head] = a;
                        logp += lp;
                    }
                    (action, logp)
                })
                .collect();
            for (b, (action, logp)) in sampled.into_iter().enumerate() {
                joint[b * n + agent] = action;
                agents[agent].actions[b * h + t] = action;
                agents[agent].log_prob[(b, t)] = logp as f32;
                agents[agent].value[(b, t)] = values[b];
            }
        }

        let outcomes: Result<Vec<_>, EnvError> = states
            .par_iter_mut()
            .zip(env_rngs.par_iter_mut())
            .zip(joint.par_chunks(n))
            .map(|((state, rng), actions)| env.step(state, actions, rng))
            .collect();
        let outcomes = outcomes?;
        for (b, out) in outcomes.iter().enumerate() {
            debug_assert_eq!(out.done, t == h - 1, "done must fire exactly at the horizon");
            reward[(b, t)] = out.reward;
        }
        if t == h - 1 {
            coordinated = states.par_iter().map(|st| env.coordinated(st)).collect();
        }
    }

    Ok(EpisodeBatch { horizon: h, head_sizes: heads, agents, reward, coordinated })
}

/// Greedy per-row argmax logits helper used by deterministic evaluations.
pub fn argmax_row(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-row log-softmax in place; shared by tests that cross-check the
/// training-graph computation against the rollout path.
pub fn log_softmax_rows(m: &mut Array2<f32>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0f64;
        for &v in row.iter() {
            total += (v as f64 - max as f64).exp();
        }
        let log_total = total.ln() as f32;
        row.mapv_inplace(|v| v - max - log_total);
    }
}

pub fn values_f64(v: &Array2<f32>) -> Array2<f64> {
    v.mapv(|x| x as f64)
}

#[allow(unused)]
fn _assert_object_safe(_: &dyn BatchPolicy) {}
