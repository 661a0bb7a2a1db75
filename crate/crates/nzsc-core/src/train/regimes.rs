//! Training regime drivers: plain independent-PPO self-play (which also
//! covers randomized-relabeling and meta-noise training, since those live
//! in the environment), and population-based training with a
//! population-entropy reward and prioritized partner sampling.

use crate::env::{BatchPolicy, Environment};
use crate::neural::{PolicyNetwork, PolicyShape};
use crate::rng::RngStream;
use crate::rollout::{rollout_batch, EpisodeBatch};
use crate::train::ppo::{
    ppo_update, prepare_agent_data, PpoConfig, PpoTrainer, TrainError, UpdateStats,
};
use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

const TAG_NET_INIT: u64 = 0x20;
const TAG_ITER: u64 = 0x21;
const TAG_UPDATE: u64 = 0x22;
const TAG_PARTNER: u64 = 0x23;

/// Line-delimited JSON metrics sink.
pub struct MetricsLog {
    out: Option<std::io::BufWriter<std::fs::File>>,
}

impl MetricsLog {
    pub fn to_file(path: &std::path::Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self { out: Some(std::io::BufWriter::new(std::fs::File::create(path)?)) })
    }

    pub fn disabled() -> Self {
        Self { out: None }
    }

    pub fn record(&mut self, rec: &TrainRecord) {
        if let Some(out) = &mut self.out {
            if let Ok(line) = serde_json::to_string(rec) {
                let _ = writeln!(out, "{line}");
            }
        }
    }

    pub fn flush(&mut self) {
        if let Some(out) = &mut self.out {
            let _ = out.flush();
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: u64,
    pub step: u64,
    pub mean_return: f64,
    pub coordination_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub noise_scale: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub nets: Vec<PolicyNetwork<f32>>,
    /// Mean episode return over the last tenth of training iterations.
    pub final_return: f64,
    pub final_coordination: f64,
}

/// Independent-PPO self-play: every agent slot learns from its own
/// trajectories of a shared environment. `on_iter` runs before each
/// iteration with training progress in [0, 1] and may mutate the
/// environment (noise curricula use this).
pub fn train_self_play<E, F>(
    env: &mut E,
    cfg: &PpoConfig,
    seed: u64,
    log: &mut MetricsLog,
    mut on_iter: F,
) -> Result<TrainOutcome, TrainError>
where
    E: Environment,
    F: FnMut(&mut E, f64),
{
    cfg.validate()?;
    let root = RngStream::new(seed);
    let n = env.num_agents();
    let shape = PolicyShape {
        obs_dim: env.observation_dim(),
        fc_dim: cfg.fc_dim,
        hidden_dim: cfg.hidden_dim,
        heads: env.action_dims().to_vec(),
    };
    let mut trainers: Vec<PpoTrainer> = (0..n)
        .map(|agent| {
            let mut init_rng = root.derive2(TAG_NET_INIT, agent as u64);
            PpoTrainer::new(PolicyNetwork::init(shape.clone(), &mut init_rng), cfg.lr)
        })
        .collect();

    let iters = cfg.iterations();
    let episodes = cfg.episodes_per_iter();
    let tail_window = iters_div(iters).max(1);
    let mut tail_returns = Vec::new();
    let mut tail_coord = Vec::new();

    for iter in 0..iters {
        let progress = iter as f64 / iters.max(1) as f64;
        on_iter(env, progress);

        let policies: Vec<&dyn BatchPolicy> =
            trainers.iter().map(|t| &t.net as &dyn BatchPolicy).collect();
        let batch = rollout_batch(env, &policies, episodes, root.derive2(TAG_ITER, iter))?;

        let data: Result<Vec<_>, _> = (0..n)
            .map(|agent| prepare_agent_data(&batch, agent, &batch.reward, cfg.gamma, cfg.gae_lambda))
            .collect();
        let data = data?;

        let stats: Result<Vec<UpdateStats>, TrainError> = trainers
            .par_iter_mut()
            .zip(data.par_iter())
            .enumerate()
            .map(|(agent, (trainer, agent_data))| {
                let mut rng = root.derive2(TAG_UPDATE, iter).derive(agent as u64);
                ppo_update(trainer, agent_data, cfg, iter, agent, &mut rng)
            })
            .collect();
        let stats = stats?;

        let mean_return = batch.mean_return();
        let coord = batch.coordination_rate();
        if iters - iter <= tail_window {
            tail_returns.push(mean_return);
            tail_coord.push(coord);
        }
        log.record(&TrainRecord {
            iter,
            step: (iter + 1) * (cfg.num_envs * cfg.steps_per_env) as u64,
            mean_return,
            coordination_rate: coord,
            policy_loss: stats[0].policy_loss,
            value_loss: stats[0].value_loss,
            entropy: stats[0].entropy,
            clip_fraction: stats[0].clip_fraction,
            noise_scale: f64::NAN,
        });
    }
    log.flush();

    Ok(TrainOutcome {
        nets: trainers.into_iter().map(|t| t.net).collect(),
        final_return: mean_of(&tail_returns),
        final_coordination: mean_of(&tail_coord),
    })
}

fn iters_div(iters: u64) -> u64 {
    iters / 10
}

fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population-based training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MepConfig {
    pub population_size: usize,
    /// Weight of the population-entropy reward bonus.
    pub alpha: f64,
    /// Prioritization exponent for partner sampling.
    pub beta: f64,
    /// Fraction of the step budget spent diversifying the population
    /// before the learner stage.
    pub stage1_fraction: f64,
    /// Exponential factor for the running per-partner return means.
    pub priority_ema: f64,
}

impl Default for MepConfig {
    fn default() -> Self {
        Self {
            population_size: 8,
            alpha: 0.01,
            beta: 3.0,
            stage1_fraction: 0.25,
            priority_ema: 0.99,
        }
    }
}

/// A self-play pair of nets; the unit stored in populations.
#[derive(Clone, Debug)]
pub struct PolicyPair {
    pub nets: Vec<PolicyNetwork<f32>>,
}

/// Reward shaping with the population's average action probability:
/// `r - alpha * ln(mean_i pi_i(a | context))`, probabilities clamped below
/// at 1e-8. Each population entry contributes the net matching the agent
/// slot, replayed over that slot's observation sequence.
pub fn mep_population_rewards(
    batch: &EpisodeBatch,
    agent: usize,
    population: &[&PolicyNetwork<f32>],
    alpha: f64,
) -> Array2<f64> {
    assert!(!population.is_empty());
    let (b, h) = (batch.batch_size(), batch.horizon);
    let roll = &batch.agents[agent];
    let mut mean_prob = Array2::<f64>::zeros((b, h));
    for member in population {
        let mut hidden = member.zero_hidden(b);
        for t in 0..h {
            let obs_t = roll.obs.slice(s![.., t, ..]);
            let (logits, _) = member.step_inference(obs_t, &mut hidden);
            for row in 0..b {
                let mut prob = 1.0f64;
                for (head, head_logits) in logits.iter().enumerate() {
                    let l = head_logits.row(row);
                    let max = l.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                    let mut total = 0.0f64;
                    for &x in l.iter() {
                        total += (x as f64 - max).exp();
                    }
                    let a = roll.actions[row * h + t][head];
                    prob *= (l[a] as f64 - max).exp() / total;
                }
                mean_prob[(row, t)] += prob;
            }
        }
    }
    mean_prob.mapv_inplace(|p| p / population.len() as f64);
    let mut shaped = batch.reward.clone();
    ndarray::Zip::from(&mut shaped).and(&mean_prob).for_each(|r, &p| {
        *r -= alpha * p.max(1e-8).ln();
    });
    shaped
}

/// Routes each batch row to one of several fixed policies. Used to play a
/// mixed set of partners (and the learner itself) within one rollout.
pub struct MixturePolicy<'a> {
    pub members: Vec<&'a PolicyNetwork<f32>>,
    /// Member index per batch row.
    pub assignment: Vec<usize>,
}

impl BatchPolicy for MixturePolicy<'_> {
    fn obs_dim(&self) -> usize {
        self.members[0].shape.obs_dim
    }
    fn head_sizes(&self) -> &[usize] {
        &self.members[0].shape.heads
    }
    fn hidden_dim(&self) -> usize {
        self.members[0].shape.hidden_dim
    }

    fn step_batch(
        &self,
        obs: ArrayView2<f32>,
        hidden: &mut Array2<f32>,
    ) -> (Vec<Array2<f32>>, Array1<f32>) {
        let b = obs.nrows();
        debug_assert_eq!(self.assignment.len(), b);
        let heads = self.head_sizes().to_vec();
        let mut logits: Vec<Array2<f32>> =
            heads.iter().map(|&k| Array2::zeros((b, k))).collect();
        let mut values = Array1::zeros(b);
        for (m, member) in self.members.iter().enumerate() {
            let rows: Vec<usize> =
                (0..b).filter(|&r| self.assignment[r] == m).collect();
            if rows.is_empty() {
                continue;
            }
            let mut sub_obs = Array2::zeros((rows.len(), obs.ncols()));
            let mut sub_hidden = Array2::zeros((rows.len(), hidden.ncols()));
            for (i, &r) in rows.iter().enumerate() {
                sub_obs.row_mut(i).assign(&obs.row(r));
                sub_hidden.row_mut(i).assign(&hidden.row(r));
            }
            let (sub_logits, sub_values) = member.step_inference(sub_obs.view(), &mut sub_hidden);
            for (i, &r) in rows.iter().enumerate() {
                for (head, head_logits) in sub_logits.iter().enumerate() {
                    logits[head].row_mut(r).assign(&head_logits.row(i));
                }
                values[r] = sub_values[i];
                hidden.row_mut(r).assign(&sub_hidden.row(i));
            }
        }
        (logits, values)
    }
}

/// Running per-partner statistics for prioritized sampling: partners the
/// learner scores poorly with get more mass, `p_i ~ (R_max - R_i + 1e-3)^beta`.
#[derive(Clone, Debug)]
pub struct PartnerPriorities {
    pub running_mean: Vec<f64>,
    seen: Vec<bool>,
    ema: f64,
    beta: f64,
}

impl PartnerPriorities {
    pub fn new(count: usize, beta: f64, ema: f64) -> Self {
        Self { running_mean: vec![0.0; count], seen: vec![false; count], ema, beta }
    }

    pub fn observe(&mut self, partner: usize, mean_return: f64) {
        if self.seen[partner] {
            self.running_mean[partner] =
                self.ema * self.running_mean[partner] + (1.0 - self.ema) * mean_return;
        } else {
            self.running_mean[partner] = mean_return;
            self.seen[partner] = true;
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        // Unseen partners share the optimistic prior of the current max, so
        // they keep getting sampled early on.
        let r_max = self
            .running_mean
            .iter()
            .zip(&self.seen)
            .filter(|&(_, &s)| s)
            .map(|(&r, _)| r)
            .fold(f64::NEG_INFINITY, f64::max);
        let r_max = if r_max.is_finite() { r_max } else { 0.0 };
        self.running_mean
            .iter()
            .zip(&self.seen)
            .map(|(&r, &s)| {
                let gap = if s { (r_max - r).max(0.0) } else { r_max - r_max };
                (gap + 1e-3).powf(self.beta)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct LearnerOutcome {
    pub net: PolicyNetwork<f32>,
    pub final_return: f64,
    pub final_coordination: f64,
}

/// Best-response learner against a frozen partner pool with prioritized
/// sampling. Each episode the learner takes a random seat and the partner
/// seat is filled by a pool member drawn from the priority distribution;
/// only the learner's seat generates training data.
#[allow(clippy::too_many_arguments)]
pub fn train_mep_learner<E, F>(
    env: &mut E,
    partners: &[PolicyPair],
    cfg: &PpoConfig,
    mep: &MepConfig,
    seed: u64,
    log: &mut MetricsLog,
    mut on_iter: F,
) -> Result<LearnerOutcome, TrainError>
where
    E: Environment,
    F: FnMut(&mut E, f64),
{
    cfg.validate()?;
    if partners.is_empty() {
        return Err(TrainError::EmptyPopulation);
    }
    if env.num_agents() != 2 {
        return Err(TrainError::Config("partner training expects 2 agent seats".into()));
    }
    let root = RngStream::new(seed);
    let shape = PolicyShape {
        obs_dim: env.observation_dim(),
        fc_dim: cfg.fc_dim,
        hidden_dim: cfg.hidden_dim,
        heads: env.action_dims().to_vec(),
    };
    let mut init_rng = root.derive2(TAG_NET_INIT, 0);
    let mut learner = PpoTrainer::new(PolicyNetwork::init(shape, &mut init_rng), cfg.lr);
    let mut priorities = PartnerPriorities::new(partners.len(), mep.beta, mep.priority_ema);

    let iters = cfg.iterations();
    let episodes = cfg.episodes_per_iter();
    let tail_window = iters_div(iters).max(1);
    let (mut tail_returns, mut tail_coord) = (Vec::new(), Vec::new());

    for iter in 0..iters {
        let progress = iter as f64 / iters.max(1) as f64;
        on_iter(env, progress);

        // Seat and partner assignment per episode.
        let mut assign_rng = root.derive2(TAG_PARTNER, iter);
        let weights = priorities.weights();
        let partner_of: Vec<usize> =
            (0..episodes).map(|_| assign_rng.weighted(&weights)).collect();
        let learner_seat: Vec<usize> = (0..episodes).map(|_| assign_rng.index(2)).collect();

        // Seat 0 and seat 1 mixtures: member 0 is the learner, member i+1
        // is partner i's net for that seat.
        let build_mixture = |seat: usize| -> MixturePolicy<'_> {
            let mut members: Vec<&PolicyNetwork<f32>> = vec![&learner.net];
            for pair in partners {
                members.push(&pair.nets[seat.min(pair.nets.len() - 1)]);
            }
            let assignment: Vec<usize> = (0..episodes)
                .map(|e| if learner_seat[e] == seat { 0 } else { partner_of[e] + 1 })
                .collect();
            MixturePolicy { members, assignment }
        };
        let seat0 = build_mixture(0);
        let seat1 = build_mixture(1);
        let policies: Vec<&dyn BatchPolicy> = vec![&seat0, &seat1];
        let batch = rollout_batch(env, &policies, episodes, root.derive2(TAG_ITER, iter))?;

        // Per-partner running means from this iteration's episodes.
        let episode_returns: Vec<f64> =
            batch.reward.rows().into_iter().map(|r| r.sum()).collect();
        for p in 0..partners.len() {
            let scores: Vec<f64> = (0..episodes)
                .filter(|&e| partner_of[e] == p)
                .map(|e| episode_returns[e])
                .collect();
            if !scores.is_empty() {
                priorities.observe(p, mean_of(&scores));
            }
        }

        // Gather the learner's seat into one training view.
        let data = gather_learner_data(&batch, &learner_seat, cfg)?;
        let mut update_rng = root.derive2(TAG_UPDATE, iter);
        ppo_update(&mut learner, &data, cfg, iter, 0, &mut update_rng)?;

        let mean_return = batch.mean_return();
        let coord = batch.coordination_rate();
        if iters - iter <= tail_window {
            tail_returns.push(mean_return);
            tail_coord.push(coord);
        }
        log.record(&TrainRecord {
            iter,
            step: (iter + 1) * (cfg.num_envs * cfg.steps_per_env) as u64,
            mean_return,
            coordination_rate: coord,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            clip_fraction: 0.0,
            noise_scale: f64::NAN,
        });
    }
    log.flush();

    Ok(LearnerOutcome {
        net: learner.net,
        final_return: mean_of(&tail_returns),
        final_coordination: mean_of(&tail_coord),
    })
}

fn gather_learner_data(
    batch: &EpisodeBatch,
    learner_seat: &[usize],
    cfg: &PpoConfig,
) -> Result<crate::train::ppo::AgentTrainData, TrainError> {
    let per_seat: Vec<_> = (0..2)
        .map(|seat| prepare_agent_data(batch, seat, &batch.reward, cfg.gamma, cfg.gae_lambda))
        .collect::<Result<_, _>>()?;
    let (b, h) = (batch.batch_size(), batch.horizon);
    let obs_dim = per_seat[0].obs.dim().2;
    let mut out = crate::train::ppo::AgentTrainData {
        obs: Array3::zeros((b, h, obs_dim)),
        actions: vec![[0usize; 2]; b * h],
        old_logp: Array2::zeros((b, h)),
        advantages: Array2::zeros((b, h)),
        returns: Array2::zeros((b, h)),
        heads: batch.head_sizes.clone(),
    };
    for e in 0..b {
        let seat = learner_seat[e];
        let src = &per_seat[seat];
        out.obs.slice_mut(s![e, .., ..]).assign(&src.obs.slice(s![e, .., ..]));
        out.actions[e * h..(e + 1) * h].copy_from_slice(&src.actions[e * h..(e + 1) * h]);
        out.old_logp.row_mut(e).assign(&src.old_logp.row(e));
        out.advantages.row_mut(e).assign(&src.advantages.row(e));
        out.returns.row_mut(e).assign(&src.returns.row(e));
    }
    Ok(out)
}

/// Stage 1 of population training: continue each member in self-play with
/// the population-entropy shaped reward, one pass over the population.
#[allow(clippy::too_many_arguments)]
pub fn diversify_population<E, F>(
    env: &mut E,
    population: &mut [PolicyPair],
    cfg: &PpoConfig,
    mep: &MepConfig,
    seed: u64,
    log: &mut MetricsLog,
    mut on_iter: F,
) -> Result<(), TrainError>
where
    E: Environment,
    F: FnMut(&mut E, f64),
{
    cfg.validate()?;
    if population.is_empty() {
        return Err(TrainError::EmptyPopulation);
    }
    let root = RngStream::new(seed);
    let n = env.num_agents();
    let iters = cfg.iterations().max(1);
    let episodes = cfg.episodes_per_iter();
    let members = population.len();

    for iter in 0..iters {
        let member = (iter as usize) % members;
        let progress = iter as f64 / iters as f64;
        on_iter(env, progress);

        let mut trainers: Vec<PpoTrainer> = population[member]
            .nets
            .iter()
            .map(|net| PpoTrainer::new(net.clone(), cfg.lr))
            .collect();
        let policies: Vec<&dyn BatchPolicy> =
            trainers.iter().map(|t| &t.net as &dyn BatchPolicy).collect();
        let batch = rollout_batch(env, &policies, episodes, root.derive2(TAG_ITER, iter))?;

        // Shaped rewards against the full population, then per-agent PPO.
        let shaped: Vec<Array2<f64>> = (0..n)
            .map(|agent| {
                let slot_nets: Vec<&PolicyNetwork<f32>> = population
                    .iter()
                    .map(|pair| &pair.nets[agent.min(pair.nets.len() - 1)])
                    .collect();
                mep_population_rewards(&batch, agent, &slot_nets, mep.alpha)
            })
            .collect();
        let data: Result<Vec<_>, _> = (0..n)
            .map(|agent| prepare_agent_data(&batch, agent, &shaped[agent], cfg.gamma, cfg.gae_lambda))
            .collect();
        let data = data?;
        let result: Result<Vec<UpdateStats>, TrainError> = trainers
            .par_iter_mut()
            .zip(data.par_iter())
            .enumerate()
            .map(|(agent, (trainer, agent_data))| {
                let mut rng = root.derive2(TAG_UPDATE, iter).derive(agent as u64);
                ppo_update(trainer, agent_data, cfg, iter, agent, &mut rng)
            })
            .collect();
        result?;
        for (slot, trainer) in trainers.into_iter().enumerate() {
            population[member].nets[slot] = trainer.net;
        }

        log.record(&TrainRecord {
            iter,
            step: (iter + 1) * (cfg.num_envs * cfg.steps_per_env) as u64,
            mean_return: batch.mean_return(),
            coordination_rate: batch.coordination_rate(),
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            clip_fraction: 0.0,
            noise_scale: f64::NAN,
        });
    }
    log.flush();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lever::{LeverConfig, LeverFamily};
    use crate::meta::{MetaEnv, NoiseModel, NoiseSource};

    fn tiny_cfg() -> PpoConfig {
        PpoConfig {
            num_envs: 16,
            steps_per_env: 2,
            total_timesteps: 96,
            update_epochs: 2,
            num_minibatches: 2,
            fc_dim: 8,
            hidden_dim: 8,
            horizon: 1,
            ..PpoConfig::os_nlg()
        }
    }

    fn lever_env(sigma: f64) -> MetaEnv<LeverFamily> {
        MetaEnv::new(
            LeverFamily::new(LeverConfig::one_shot()),
            vec![NoiseSource::Fixed(NoiseModel::AdditiveGaussian { sigma }); 2],
            5.0,
        )
        .unwrap()
    }

    #[test]
    fn self_play_runs_and_returns_two_nets() {
        let mut env = lever_env(0.0);
        let out = train_self_play(&mut env, &tiny_cfg(), 7, &mut MetricsLog::disabled(), |_, _| {})
            .unwrap();
        assert_eq!(out.nets.len(), 2);
        assert!(out.final_return.is_finite());
    }

    #[test]
    fn self_play_is_deterministic_in_the_seed() {
        let run = || {
            let mut env = lever_env(1.0);
            train_self_play(&mut env, &tiny_cfg(), 11, &mut MetricsLog::disabled(), |_, _| {})
                .unwrap()
                .nets[0]
                .params
                .clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn uniform_population_bonus_is_alpha_ln_actions() {
        let env = lever_env(0.0);
        let shape = PolicyShape { obs_dim: env.observation_dim(), fc_dim: 8, hidden_dim: 8, heads: vec![3] };
        let uniform = PolicyNetwork::<f32>::zeros(shape.clone());
        let policies: Vec<&dyn BatchPolicy> = vec![&uniform, &uniform];
        let batch = rollout_batch(&env, &policies, 8, RngStream::new(3)).unwrap();
        let alpha = 0.01;
        let shaped = mep_population_rewards(&batch, 0, &[&uniform], alpha);
        let expected_bonus = alpha * 3.0f64.ln();
        for (s, r) in shaped.iter().zip(batch.reward.iter()) {
            assert!((s - r - expected_bonus).abs() < 1e-9);
        }
        // alpha = 0 leaves rewards untouched.
        let unshaped = mep_population_rewards(&batch, 0, &[&uniform], 0.0);
        assert_eq!(unshaped, batch.reward);
    }

    #[test]
    fn priority_weights_track_hard_partners() {
        let mut p = PartnerPriorities::new(2, 1.0, 0.99);
        p.observe(0, 10.0);
        p.observe(1, 0.0);
        let w = p.weights();
        // Odds roughly eps : 10, nearly all mass on the harder partner.
        assert!(w[1] / w[0] > 1000.0, "weights {w:?}");
        // beta = 0 flattens the distribution.
        let mut flat = PartnerPriorities::new(2, 0.0, 0.99);
        flat.observe(0, 10.0);
        flat.observe(1, 0.0);
        let wf = flat.weights();
        assert!((wf[0] - wf[1]).abs() < 1e-12);
    }

    #[test]
    fn mixture_policy_routes_rows_to_members() {
        let shape = PolicyShape { obs_dim: 3, fc_dim: 4, hidden_dim: 4, heads: vec![2] };
        let mut rng = RngStream::new(5);
        let a = PolicyNetwork::<f32>::init(shape.clone(), &mut rng);
        let b = PolicyNetwork::<f32>::init(shape.clone(), &mut rng);
        let obs = Array2::from_shape_simple_fn((4, 3), || rng.normal() as f32);
        let mix = MixturePolicy { members: vec![&a, &b], assignment: vec![0, 1, 0, 1] };
        let mut hidden = Array2::zeros((4, 4));
        let (logits, _) = mix.step_batch(obs.view(), &mut hidden);

        let mut ha = Array2::zeros((1, 4));
        let (la, _) = a.step_inference(obs.slice(s![0..1, ..]), &mut ha);
        assert_eq!(logits[0].row(0), la[0].row(0));
        let mut hb = Array2::zeros((1, 4));
        let (lb, _) = b.step_inference(obs.slice(s![1..2, ..]), &mut hb);
        assert_eq!(logits[0].row(1), lb[0].row(0));
    }

    #[test]
    fn learner_stage_runs_against_a_pool() {
        let mut env = lever_env(0.5);
        let shape = PolicyShape { obs_dim: env.observation_dim(), fc_dim: 8, hidden_dim: 8, heads: vec![3] };
        let mut rng = RngStream::new(9);
        let pool = vec![PolicyPair {
            nets: vec![
                PolicyNetwork::<f32>::init(shape.clone(), &mut rng),
                PolicyNetwork::<f32>::init(shape.clone(), &mut rng),
            ],
        }];
        let out = train_mep_learner(
            &mut env,
            &pool,
            &tiny_cfg(),
            &MepConfig::default(),
            13,
            &mut MetricsLog::disabled(),
            |_, _| {},
        )
        .unwrap();
        assert!(out.final_return.is_finite());
    }

    #[test]
    fn empty_population_is_rejected() {
        let mut env = lever_env(0.5);
        let err = train_mep_learner(
            &mut env,
            &[],
            &tiny_cfg(),
            &MepConfig::default(),
            13,
            &mut MetricsLog::disabled(),
            |_, _| {},
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::EmptyPopulation));
    }
}
