//! Independent PPO: each agent optimizes a clipped surrogate over its own
//! trajectories with a shared-environment reward signal.

use crate::env::AgentAction;
use crate::neural::{clip_global_norm, Adam, PolicyNetwork, Scalar, Tape};
use crate::rng::RngStream;
use crate::rollout::EpisodeBatch;
use crate::train::gae::{compute_gae, GaeError};
use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iter} (agent {agent}): policy {policy_loss}, value {value_loss}, entropy {entropy}")]
    NonFinite { iter: u64, agent: usize, policy_loss: f64, value_loss: f64, entropy: f64 },
    #[error("environment: {0}")]
    Env(#[from] crate::env::EnvError),
    #[error("gae: {0}")]
    Gae(#[from] GaeError),
    #[error("config: {0}")]
    Config(String),
    #[error("population must not be empty")]
    EmptyPopulation,
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::neural::CheckpointError),
    #[error("{0}")]
    Meta(#[from] crate::meta::MetaError),
}

/// Hyperparameters for one training run. The per-environment constructors
/// carry the published defaults for each game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub lr: f64,
    pub num_envs: usize,
    pub steps_per_env: usize,
    pub total_timesteps: u64,
    pub update_epochs: usize,
    pub num_minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub fc_dim: usize,
    pub hidden_dim: usize,
    pub horizon: usize,
}

impl PpoConfig {
    pub fn os_nlg() -> Self {
        Self {
            lr: 5e-4,
            num_envs: 1024,
            steps_per_env: 2,
            total_timesteps: 20_000_000,
            update_epochs: 4,
            num_minibatches: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            fc_dim: 16,
            hidden_dim: 16,
            horizon: 1,
        }
    }

    pub fn i_nlg() -> Self {
        Self {
            steps_per_env: 32,
            update_epochs: 8,
            num_minibatches: 16,
            clip_range: 0.3,
            horizon: 16,
            ..Self::os_nlg()
        }
    }

    pub fn cee() -> Self {
        Self {
            steps_per_env: 256,
            total_timesteps: 300_000_000,
            update_epochs: 16,
            num_minibatches: 8,
            clip_range: 0.2,
            entropy_coef: 0.05,
            fc_dim: 128,
            hidden_dim: 128,
            horizon: 32,
            ..Self::os_nlg()
        }
    }

    pub fn sse() -> Self {
        Self {
            num_envs: 2048,
            steps_per_env: 128,
            total_timesteps: 500_000_000,
            update_epochs: 8,
            num_minibatches: 32,
            clip_range: 0.1,
            entropy_coef: 0.03,
            fc_dim: 768,
            hidden_dim: 768,
            horizon: 16,
            ..Self::os_nlg()
        }
    }

    /// Episodes collected per iteration.
    pub fn episodes_per_iter(&self) -> usize {
        self.num_envs * self.steps_per_env / self.horizon
    }

    pub fn iterations(&self) -> u64 {
        let per_iter = (self.num_envs * self.steps_per_env) as u64;
        self.total_timesteps.div_ceil(per_iter)
    }

    /// Multiply the training length, keeping everything else fixed.
    #[must_use]
    pub fn scaled(mut self, factor: f64) -> Self {
        self.total_timesteps = ((self.total_timesteps as f64 * factor).round() as u64).max(1);
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.num_envs == 0 || self.steps_per_env == 0 || self.horizon == 0 {
            return Err(TrainError::Config("batch dimensions must be positive".into()));
        }
        if self.steps_per_env % self.horizon != 0 && self.horizon % self.steps_per_env != 0 {
            // steps_per_env below the horizon is allowed only when it divides
            // evenly into episodes across envs; keep it simple and require
            // whole episodes per env slot.
            return Err(TrainError::Config(format!(
                "steps_per_env {} must pack whole episodes of length {}",
                self.steps_per_env, self.horizon
            )));
        }
        let episodes = self.num_envs * self.steps_per_env / self.horizon;
        if episodes % self.num_minibatches != 0 {
            return Err(TrainError::Config(format!(
                "{episodes} episodes per iteration do not split into {} minibatches",
                self.num_minibatches
            )));
        }
        Ok(())
    }
}

/// One agent slot's training view of a batch: observations, actions, the
/// log-probabilities and values recorded at collection time, and the
/// GAE-processed targets.
pub struct AgentTrainData {
    pub obs: Array3<f32>,
    pub actions: Vec<AgentAction>,
    pub old_logp: Array2<f32>,
    pub advantages: Array2<f32>,
    pub returns: Array2<f32>,
    pub heads: Vec<usize>,
}

/// Run GAE over each episode row. `rewards` is passed separately from the
/// batch so population-entropy shaping can substitute per-agent streams.
pub fn prepare_agent_data(
    batch: &EpisodeBatch,
    agent: usize,
    rewards: &Array2<f64>,
    gamma: f64,
    lambda: f64,
) -> Result<AgentTrainData, GaeError> {
    let roll = &batch.agents[agent];
    let (b, h) = (batch.batch_size(), batch.horizon);
    let mut advantages = Array2::<f32>::zeros((b, h));
    let mut returns = Array2::<f32>::zeros((b, h));
    let mut dones = vec![false; h];
    dones[h - 1] = true;
    for row in 0..b {
        let r: Vec<f64> = rewards.row(row).to_vec();
        let v: Vec<f64> = roll.value.row(row).iter().map(|&x| x as f64).collect();
        let (adv, ret) = compute_gae(&r, &v, &dones, gamma, lambda)?;
        for t in 0..h {
            advantages[(row, t)] = adv[t] as f32;
            returns[(row, t)] = ret[t] as f32;
        }
    }
    Ok(AgentTrainData {
        obs: roll.obs.clone(),
        actions: roll.actions.clone(),
        old_logp: roll.log_prob.clone(),
        advantages,
        returns,
        heads: batch.head_sizes.clone(),
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

/// Build the clipped-surrogate loss over full sequences (backpropagation
/// through time from zero initial hidden state) and return its gradient.
/// `advantages` must already be normalized if normalization is wanted.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss_grad<T: Scalar>(
    net: &PolicyNetwork<T>,
    obs: &Array3<T>,
    actions: &[AgentAction],
    old_logp: &Array2<T>,
    advantages: &Array2<T>,
    returns: &Array2<T>,
    clip_range: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> (Vec<T>, LossStats) {
    let (b, h, _obs_dim) = obs.dim();
    let _heads = &net.shape.heads;
    let mut tape = Tape::new();
    let vars = net.tape_params(&mut tape);
    let mut hidden = tape.constant(Array2::zeros((b, net.shape.hidden_dim)));

    let mut pg_terms = Vec::with_capacity(h);
    let mut vf_terms = Vec::with_capacity(h);
    let mut ent_terms = Vec::with_capacity(h);
    let mut ratio_sum = 0.0f64;
    let mut clipped = 0usize;

    for t in 0..h {
        let obs_t = tape.constant(obs.slice(s![.., t, ..]).to_owned());
        let (logits, value, next_hidden) = net.tape_step(&mut tape, &vars, obs_t, hidden);
        hidden = next_hidden;

        // Joint log-probability of the taken actions: sum over heads.
        let mut logp_t: Option<crate::neural::Var> = None;
        let mut ent_t: Option<crate::neural::Var> = None;
        for (head, &logit_var) in logits.iter().enumerate() {
            let logp_full = tape.log_softmax(logit_var);
            let idx: Vec<usize> = (0..b).map(|row| actions[row * h + t][head]).collect();
            let picked = tape.gather_col(logp_full, idx);
            logp_t = Some(match logp_t {
                Some(acc) => tape.add(acc, picked),
                None => picked,
            });
            let p = tape.exp(logp_full);
            let plogp = tape.mul(p, logp_full);
            let sum = tape.sum_cols(plogp);
            let head_ent = tape.affine(sum, -1.0, 0.0);
            ent_t = Some(match ent_t {
                Some(acc) => tape.add(acc, head_ent),
                None => head_ent,
            });
            let _ = head;
        }
        let logp_t = logp_t.expect("at least one action head");
        let ent_t = ent_t.expect("at least one action head");

        let old_t = tape.constant(old_logp.slice(s![.., t..t + 1]).to_owned());
        let adv_t = tape.constant(advantages.slice(s![.., t..t + 1]).to_owned());
        let ret_t = tape.constant(returns.slice(s![.., t..t + 1]).to_owned());

        let delta = tape.sub(logp_t, old_t);
        let ratio = tape.exp(delta);
        {
            let r = tape.value(ratio);
            for &x in r.iter() {
                let xf = x.to_f64();
                ratio_sum += xf;
                if (xf - 1.0).abs() > clip_range {
                    clipped += 1;
                }
            }
        }
        let surr1 = tape.mul(ratio, adv_t);
        let ratio_clamped = tape.clamp(ratio, 1.0 - clip_range, 1.0 + clip_range);
        let surr2 = tape.mul(ratio_clamped, adv_t);
        let surrogate = tape.min(surr1, surr2);
        pg_terms.push(tape.mean_all(surrogate));

        let vdiff = tape.sub(value, ret_t);
        let vsq = tape.mul(vdiff, vdiff);
        vf_terms.push(tape.mean_all(vsq));

        ent_terms.push(tape.mean_all(ent_t));
    }

    let fold = |tape: &mut Tape<T>, terms: &[crate::neural::Var]| {
        let mut acc = terms[0];
        for &term in &terms[1..] {
            acc = tape.add(acc, term);
        }
        tape.affine(acc, 1.0 / terms.len() as f64, 0.0)
    };
    let pg = fold(&mut tape, &pg_terms);
    let vf = fold(&mut tape, &vf_terms);
    let ent = fold(&mut tape, &ent_terms);

    // loss = -surrogate + value_coef * value_loss - entropy_coef * entropy
    let neg_pg = tape.affine(pg, -1.0, 0.0);
    let vf_scaled = tape.affine(vf, value_coef, 0.0);
    let ent_scaled = tape.affine(ent, -entropy_coef, 0.0);
    let partial = tape.add(neg_pg, vf_scaled);
    let loss = tape.add(partial, ent_scaled);

    let stats = LossStats {
        policy_loss: -tape.scalar(pg),
        value_loss: tape.scalar(vf),
        entropy: tape.scalar(ent),
        mean_ratio: ratio_sum / (b * h) as f64,
        clip_fraction: clipped as f64 / (b * h) as f64,
    };
    let grad = tape.backward(loss, net.params.len());
    (grad, stats)
}

/// One agent's learner state.
pub struct PpoTrainer {
    pub net: PolicyNetwork<f32>,
    pub adam: Adam<f32>,
}

impl PpoTrainer {
    pub fn new(net: PolicyNetwork<f32>, lr: f64) -> Self {
        let adam = Adam::new(net.params.len(), lr);
        Self { net, adam }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// |mean importance ratio - 1| on the first minibatch of the first
    /// epoch, before any parameter change; a log-prob bookkeeping check.
    pub first_ratio_deviation: f64,
}

/// Soft cap on tape memory: episodes per backward pass chosen so a
/// minibatch of long sequences does not hold gigabytes of activations.
/// Roughly 8 hidden-width arrays live per step; the budget of 128M scalars
/// keeps a tape near 512 MB while letting the batched GEMMs stay large.
fn micro_rows(horizon: usize, hidden: usize, obs_dim: usize, minibatch_rows: usize) -> usize {
    let per_row = horizon * (8 * hidden + obs_dim + 32);
    (128_000_000 / per_row.max(1)).clamp(16, minibatch_rows.max(16))
}

/// Epochs x minibatches of clipped-surrogate updates on one agent's data.
/// Minibatches are whole episodes, replayed in order from zero hidden
/// state. Advantages are normalized per minibatch.
pub fn ppo_update(
    trainer: &mut PpoTrainer,
    data: &AgentTrainData,
    cfg: &PpoConfig,
    iter: u64,
    agent: usize,
    rng: &mut RngStream,
) -> Result<UpdateStats, TrainError> {
    let (b, h, obs_dim) = data.obs.dim();
    let mb_count = cfg.num_minibatches.min(b).max(1);
    let mut order: Vec<usize> = (0..b).collect();
    let mut totals = UpdateStats::default();
    let mut first_ratio: Option<f64> = None;
    let mut updates = 0usize;

    for _epoch in 0..cfg.update_epochs {
        rng.shuffle(&mut order);
        for mb in 0..mb_count {
            let lo = mb * b / mb_count;
            let hi = (mb + 1) * b / mb_count;
            let rows = &order[lo..hi];

            let mut obs = Array3::<f32>::zeros((rows.len(), h, obs_dim));
            let mut actions = vec![[0usize; 2]; rows.len() * h];
            let mut old_logp = Array2::<f32>::zeros((rows.len(), h));
            let mut advantages = Array2::<f32>::zeros((rows.len(), h));
            let mut returns = Array2::<f32>::zeros((rows.len(), h));
            for (i, &row) in rows.iter().enumerate() {
                obs.slice_mut(s![i, .., ..]).assign(&data.obs.slice(s![row, .., ..]));
                actions[i * h..(i + 1) * h].copy_from_slice(&data.actions[row * h..(row + 1) * h]);
                old_logp.row_mut(i).assign(&data.old_logp.row(row));
                advantages.row_mut(i).assign(&data.advantages.row(row));
                returns.row_mut(i).assign(&data.returns.row(row));
            }
            // Normalize advantages over the whole minibatch.
            let count = (rows.len() * h) as f32;
            let mean = advantages.sum() / count;
            let var = advantages.iter().map(|&a| (a - mean) * (a - mean)).sum::<f32>() / count;
            let sd = var.sqrt().max(1e-8);
            advantages.mapv_inplace(|a| (a - mean) / sd);

            let micro = micro_rows(h, cfg.hidden_dim, obs_dim, rows.len());
            let mut grad = vec![0.0f32; trainer.net.params.len()];
            let mut stats_acc = LossStats::default();
            let mut start = 0usize;
            while start < rows.len() {
                let end = (start + micro).min(rows.len());
                let weight = (end - start) as f64 / rows.len() as f64;
                let (g, stats) = ppo_loss_grad(
                    &trainer.net,
                    &obs.slice(s![start..end, .., ..]).to_owned(),
                    &actions[start * h..end * h],
                    &old_logp.slice(s![start..end, ..]).to_owned(),
                    &advantages.slice(s![start..end, ..]).to_owned(),
                    &returns.slice(s![start..end, ..]).to_owned(),
                    cfg.clip_range,
                    cfg.value_coef,
                    cfg.entropy_coef,
                );
                let w = weight as f32;
                for (dst, src) in grad.iter_mut().zip(&g) {
                    *dst += src * w;
                }
                stats_acc.policy_loss += stats.policy_loss * weight;
                stats_acc.value_loss += stats.value_loss * weight;
                stats_acc.entropy += stats.entropy * weight;
                stats_acc.clip_fraction += stats.clip_fraction * weight;
                stats_acc.mean_ratio += stats.mean_ratio * weight;
                start = end;
            }

            if !(stats_acc.policy_loss.is_finite()
                && stats_acc.value_loss.is_finite()
                && stats_acc.entropy.is_finite())
            {
                return Err(TrainError::NonFinite {
                    iter,
                    agent,
                    policy_loss: stats_acc.policy_loss,
                    value_loss: stats_acc.value_loss,
                    entropy: stats_acc.entropy,
                });
            }
            if first_ratio.is_none() {
                first_ratio = Some((stats_acc.mean_ratio - 1.0).abs());
            }

            let norm = clip_global_norm(&mut grad, cfg.max_grad_norm);
            trainer.adam.step(&mut trainer.net.params, &grad);

            totals.policy_loss += stats_acc.policy_loss;
            totals.value_loss += stats_acc.value_loss;
            totals.entropy += stats_acc.entropy;
            totals.clip_fraction += stats_acc.clip_fraction;
            totals.grad_norm += norm;
            updates += 1;
        }
    }

    let k = updates.max(1) as f64;
    totals.policy_loss /= k;
    totals.value_loss /= k;
    totals.entropy /= k;
    totals.clip_fraction /= k;
    totals.grad_norm /= k;
    totals.first_ratio_deviation = first_ratio.unwrap_or(0.0);
    Ok(totals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{finite_difference_gradient, max_relative_error, PolicyShape};
    use ndarray::Array1;

    fn random_loss_inputs(
        shape: &PolicyShape,
        b: usize,
        h: usize,
        rng: &mut RngStream,
    ) -> (Array3<f64>, Vec<AgentAction>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let obs = Array3::from_shape_simple_fn((b, h, shape.obs_dim), || rng.normal());
        let mut actions = vec![[0usize; 2]; b * h];
        for a in actions.iter_mut() {
            for (head, &k) in shape.heads.iter().enumerate() {
                a[head] = rng.index(k);
            }
        }
        // Old log-probs near the initial policy's so ratios are moderate.
        let old_logp = Array2::from_shape_simple_fn((b, h), || {
            let base: f64 = shape.heads.iter().map(|&k| (1.0 / k as f64).ln()).sum();
            base + 0.1 * rng.normal()
        });
        let advantages = Array2::from_shape_simple_fn((b, h), || rng.normal());
        let returns = Array2::from_shape_simple_fn((b, h), || rng.normal() * 2.0);
        (obs, actions, old_logp, advantages, returns)
    }

    fn loss_value(
        net: &PolicyNetwork<f64>,
        obs: &Array3<f64>,
        actions: &[AgentAction],
        old_logp: &Array2<f64>,
        advantages: &Array2<f64>,
        returns: &Array2<f64>,
    ) -> f64 {
        // Recompute the loss scalar through the inference path to keep the
        // finite-difference probe independent of the tape.
        let (b, h, _) = obs.dim();
        let mut hidden = net.zero_hidden(b);
        let (mut pg, mut vf, mut ent) = (0.0, 0.0, 0.0);
        for t in 0..h {
            let (logits, value) = net.step_inference(obs.slice(s![.., t, ..]), &mut hidden);
            for row in 0..b {
                let mut logp = 0.0;
                let mut entropy = 0.0;
                for (head, logit) in logits.iter().enumerate() {
                    let l: Vec<f64> = logit.row(row).to_vec();
                    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = l.iter().map(|&x| (x - max).exp()).sum();
                    let log_total = total.ln();
                    logp += l[actions[row * h + t][head]] - max - log_total;
                    for &x in &l {
                        let lp = x - max - log_total;
                        entropy -= lp.exp() * lp;
                    }
                }
                let ratio = (logp - old_logp[(row, t)]).exp();
                let adv = advantages[(row, t)];
                let surr = (ratio * adv).min(ratio.clamp(0.8, 1.2) * adv);
                pg += surr;
                let diff = value[row] - returns[(row, t)];
                vf += diff * diff;
                ent += entropy;
            }
        }
        let n = (b * h) as f64;
        -(pg / n) + 0.5 * (vf / n) - 0.01 * (ent / n)
    }

    #[test]
    fn traced_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(41);
        let shape = PolicyShape { obs_dim: 4, fc_dim: 6, hidden_dim: 6, heads: vec![3] };
        let net = PolicyNetwork::<f64>::init(shape.clone(), &mut rng);
        let (obs, actions, old_logp, advantages, returns) =
            random_loss_inputs(&shape, 3, 4, &mut rng);

        let (grad, _) = ppo_loss_grad(&net, &obs, &actions, &old_logp, &advantages, &returns, 0.2, 0.5, 0.01);
        let f = |params: &[f64]| {
            let probe = PolicyNetwork { shape: shape.clone(), params: params.to_vec() };
            loss_value(&probe, &obs, &actions, &old_logp, &advantages, &returns)
        };
        let numeric = finite_difference_gradient(f, &net.params, 1e-5);
        let err = max_relative_error(&grad, &numeric);
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn ratio_is_one_when_old_logp_matches_current_policy() {
        // Collect old log-probs from the same network the loss replays.
        let mut rng = RngStream::new(43);
        let shape = PolicyShape { obs_dim: 4, fc_dim: 6, hidden_dim: 6, heads: vec![3] };
        let net = PolicyNetwork::<f64>::init(shape.clone(), &mut rng);
        let (b, h) = (5, 3);
        let obs = Array3::from_shape_simple_fn((b, h, 4), || rng.normal());
        let mut actions = vec![[0usize; 2]; b * h];
        let mut old_logp = Array2::<f64>::zeros((b, h));
        let mut hidden = net.zero_hidden(b);
        for t in 0..h {
            let (logits, _) = net.step_inference(obs.slice(s![.., t, ..]), &mut hidden);
            for row in 0..b {
                let l: Vec<f64> = logits[0].row(row).to_vec();
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = l.iter().map(|&x| (x - max).exp()).sum();
                let a = row % 3;
                actions[row * h + t][0] = a;
                old_logp[(row, t)] = l[a] - max - total.ln();
            }
        }
        let advantages = Array2::from_elem((b, h), 1.0);
        let returns = Array2::zeros((b, h));
        let (_, stats) =
            ppo_loss_grad(&net, &obs, &actions, &old_logp, &advantages, &returns, 0.2, 0.5, 0.01);
        assert!((stats.mean_ratio - 1.0).abs() < 1e-9, "ratio {}", stats.mean_ratio);
        assert_eq!(stats.clip_fraction, 0.0);
        // With every ratio at 1 the surrogate equals the mean advantage.
        assert!((stats.policy_loss + 1.0).abs() < 1e-9);
    }

    #[test]
    fn clipped_ratio_contribution_uses_the_boundary() {
        // Single sample, ratio 1.5, positive advantage: min(1.5 A, 1.2 A) = 1.2 A.
        let shape = PolicyShape { obs_dim: 2, fc_dim: 4, hidden_dim: 4, heads: vec![2] };
        let net = PolicyNetwork::<f64>::zeros(shape);
        // Zero net: logp = ln(1/2). Choose old_logp = logp - ln(1.5).
        let obs = Array3::zeros((1, 1, 2));
        let actions = vec![[0usize; 2]];
        let old = Array2::from_elem((1, 1), (0.5f64).ln() - 1.5f64.ln());
        let advantages = Array2::from_elem((1, 1), 2.0);
        let returns = Array2::zeros((1, 1));
        let (_, stats) =
            ppo_loss_grad(&net, &obs, &actions, &old, &advantages, &returns, 0.2, 0.5, 0.0);
        assert!((stats.policy_loss - (-1.2 * 2.0)).abs() < 1e-9);
        assert!((stats.clip_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_entropy_is_ln_of_action_count() {
        let shape = PolicyShape { obs_dim: 2, fc_dim: 4, hidden_dim: 4, heads: vec![3] };
        let net = PolicyNetwork::<f64>::zeros(shape);
        let obs = Array3::zeros((2, 1, 2));
        let actions = vec![[0usize; 2], [1, 0]];
        let old = Array2::from_elem((2, 1), (1.0f64 / 3.0).ln());
        let advantages = Array2::zeros((2, 1));
        let returns = Array2::zeros((2, 1));
        let (_, stats) =
            ppo_loss_grad(&net, &obs, &actions, &old, &advantages, &returns, 0.2, 0.5, 0.01);
        assert!((stats.entropy - 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn detached_targets_receive_no_gradient() {
        // The value head converges toward returns; returns themselves are
        // constants, so a network with zero value error has zero value-loss
        // gradient even with nonzero returns elsewhere in the graph.
        let shape = PolicyShape { obs_dim: 2, fc_dim: 4, hidden_dim: 4, heads: vec![2] };
        let net = PolicyNetwork::<f64>::zeros(shape);
        let obs = Array3::zeros((1, 1, 2));
        let actions = vec![[0usize; 2]];
        let old = Array2::from_elem((1, 1), (0.5f64).ln());
        let advantages = Array2::zeros((1, 1));
        let returns = Array2::zeros((1, 1));
        let (grad, _) =
            ppo_loss_grad(&net, &obs, &actions, &old, &advantages, &returns, 0.2, 0.5, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn update_runs_and_keeps_parameters_finite() {
        let mut rng = RngStream::new(47);
        let shape = PolicyShape { obs_dim: 4, fc_dim: 8, hidden_dim: 8, heads: vec![3] };
        let net = PolicyNetwork::<f32>::init(shape.clone(), &mut rng);
        let mut trainer = PpoTrainer::new(net, 5e-4);
        let cfg = PpoConfig {
            num_envs: 8,
            steps_per_env: 4,
            num_minibatches: 2,
            update_epochs: 2,
            horizon: 4,
            fc_dim: 8,
            hidden_dim: 8,
            ..PpoConfig::os_nlg()
        };
        let b = 8;
        let obs = Array3::from_shape_simple_fn((b, 4, 4), || rng.normal() as f32);
        let mut actions = vec![[0usize; 2]; b * 4];
        for a in actions.iter_mut() {
            a[0] = rng.index(3);
        }
        let data = AgentTrainData {
            obs,
            actions,
            old_logp: Array2::from_elem((b, 4), (1.0f32 / 3.0).ln()),
            advantages: Array2::from_shape_simple_fn((b, 4), || rng.normal() as f32),
            returns: Array2::from_shape_simple_fn((b, 4), || rng.normal() as f32),
            heads: vec![3],
        };
        let stats = ppo_update(&mut trainer, &data, &cfg, 0, 0, &mut rng).unwrap();
        assert!(stats.grad_norm > 0.0);
        assert!(trainer.net.params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn table_presets_pass_validation() {
        for cfg in [PpoConfig::os_nlg(), PpoConfig::i_nlg(), PpoConfig::cee(), PpoConfig::sse()] {
            cfg.validate().unwrap();
        }
        assert_eq!(PpoConfig::i_nlg().episodes_per_iter(), 2048);
        assert_eq!(PpoConfig::i_nlg().total_timesteps, 20_000_000);
    }

    #[test]
    fn scaling_shrinks_only_the_step_budget() {
        let cfg = PpoConfig::cee().scaled(1.0 / 30.0);
        assert_eq!(cfg.total_timesteps, 10_000_000);
        assert_eq!(cfg.num_envs, 1024);
    }

    #[allow(unused)]
    fn type_check_value_usage(v: Array1<f64>) {}
}
