//! Independent reference computations: Monte-Carlo estimates with standard
//! errors, exhaustive small-scale policy search, and an O(h^2) n-step
//! advantage definition. These exist to validate the fast paths and to pin
//! expected values in tests, so none of them share code with the
//! implementations they check.

use crate::lever::LeverConfig;
use crate::rng::{tag, RngStream};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OracleError {
    #[error("need at least one variable, got k = {0}")]
    DegenerateMax(usize),
    #[error("unknown strategy `{0}` (expected argmax, fixed:<lever>, threshold:<value>)")]
    UnknownStrategy(String),
    #[error("policy enumeration budget exceeded: {policies} policies > {budget}")]
    BudgetExceeded { policies: f64, budget: f64 },
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl Estimate {
    /// Whether `claim` lies within `k` standard errors of the estimate.
    pub fn within(&self, claim: f64, k: f64) -> bool {
        (self.value - claim).abs() <= k * self.std_error
    }
}

/// E[max of k iid N(mean, sd^2)] by Monte Carlo, sharded deterministically.
pub fn mc_expected_max(
    k: usize,
    mean: f64,
    sd: f64,
    samples: u64,
    seed: u64,
) -> Result<Estimate, OracleError> {
    if k < 1 {
        return Err(OracleError::DegenerateMax(k));
    }
    const SHARDS: u64 = 64;
    let root = RngStream::new(seed);
    let per_shard = samples.div_ceil(SHARDS);
    let partials: Vec<(f64, f64, u64)> = (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = root.derive2(tag::EPISODE, shard);
            let (mut total, mut total_sq) = (0.0, 0.0);
            for _ in 0..per_shard {
                let mut best = f64::NEG_INFINITY;
                for _ in 0..k {
                    best = best.max(rng.normal_scaled(mean, sd));
                }
                total += best;
                total_sq += best * best;
            }
            (total, total_sq, per_shard)
        })
        .collect();
    // Fixed-order reduction keeps the result identical across thread counts.
    let (mut total, mut total_sq, mut n) = (0.0, 0.0, 0u64);
    for (t, t2, c) in partials {
        total += t;
        total_sq += t2;
        n += c;
    }
    let value = total / n as f64;
    let var = (total_sq / n as f64 - value * value).max(0.0);
    Ok(Estimate { value, std_error: (var / n as f64).sqrt(), samples: n })
}

/// Closed form for E[max of k iid standard normals], k <= 3.
pub fn expected_max_standard_normal(k: usize) -> Option<f64> {
    let pi = std::f64::consts::PI;
    match k {
        1 => Some(0.0),
        2 => Some(1.0 / pi.sqrt()),
        3 => Some(1.5 / pi.sqrt()),
        _ => None,
    }
}

/// Behavioural baselines for the one-shot lever game.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FixedStrategy {
    /// Pull the lever with the highest privately observed value.
    ArgmaxOwn,
    /// Always pull lever `k` (0-based).
    FixedLever(usize),
    /// Pull the first lever whose observed value exceeds the threshold,
    /// falling back to the own-observation argmax.
    ThresholdFirstAbove(f64),
}

impl FixedStrategy {
    pub fn parse(text: &str) -> Result<Self, OracleError> {
        if text == "argmax" {
            return Ok(FixedStrategy::ArgmaxOwn);
        }
        if let Some(rest) = text.strip_prefix("fixed:") {
            if let Ok(k) = rest.parse::<usize>() {
                return Ok(FixedStrategy::FixedLever(k));
            }
        }
        if let Some(rest) = text.strip_prefix("threshold:") {
            if let Ok(v) = rest.parse::<f64>() {
                return Ok(FixedStrategy::ThresholdFirstAbove(v));
            }
        }
        Err(OracleError::UnknownStrategy(text.into()))
    }

    fn choose(&self, observed: &[f64]) -> usize {
        match self {
            FixedStrategy::ArgmaxOwn => argmax(observed),
            FixedStrategy::FixedLever(k) => *k,
            FixedStrategy::ThresholdFirstAbove(th) => observed
                .iter()
                .position(|&v| v > *th)
                .unwrap_or_else(|| argmax(observed)),
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug)]
pub struct StrategyEval {
    pub mean_return: Estimate,
    pub coordination_rate: Estimate,
}

/// Monte-Carlo evaluation of every agent playing `strategy` on fresh
/// one-shot lever instances under per-agent noise levels `sigmas`.
pub fn eval_fixed_strategy(
    strategy: FixedStrategy,
    sigmas: &[f64],
    cfg: &LeverConfig,
    samples: u64,
    seed: u64,
) -> StrategyEval {
    let root = RngStream::new(seed);
    const SHARDS: u64 = 64;
    let per_shard = samples.div_ceil(SHARDS);
    let partials: Vec<(f64, f64, u64, u64)> = (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = root.derive2(tag::EPISODE, shard);
            let (mut total, mut total_sq) = (0.0, 0.0);
            let mut matches = 0u64;
            for _ in 0..per_shard {
                let truth: Vec<f64> = (0..cfg.num_levers)
                    .map(|_| {
                        if cfg.flat_prior {
                            let (lo, hi) = cfg.flat_bounds();
                            rng.uniform_in(lo, hi)
                        } else {
                            rng.normal_scaled(cfg.r_mean, cfg.sigma_star)
                        }
                    })
                    .collect();
                let picks: Vec<usize> = sigmas
                    .iter()
                    .map(|&sigma| {
                        let observed: Vec<f64> =
                            truth.iter().map(|&r| r + sigma * rng.normal()).collect();
                        strategy.choose(&observed)
                    })
                    .collect();
                let matched = picks.iter().all(|&p| p == picks[0]);
                let reward = if matched { truth[picks[0]] } else { cfg.penalty };
                if matched {
                    matches += 1;
                }
                total += reward;
                total_sq += reward * reward;
            }
            (total, total_sq, matches, per_shard)
        })
        .collect();
    let (mut total, mut total_sq, mut matches, mut n) = (0.0, 0.0, 0u64, 0u64);
    for (t, t2, m, c) in partials {
        total += t;
        total_sq += t2;
        matches += m;
        n += c;
    }
    let mean = total / n as f64;
    let var = (total_sq / n as f64 - mean * mean).max(0.0);
    let rate = matches as f64 / n as f64;
    StrategyEval {
        mean_return: Estimate { value: mean, std_error: (var / n as f64).sqrt(), samples: n },
        coordination_rate: Estimate {
            value: rate,
            std_error: (rate * (1.0 - rate) / n as f64).sqrt(),
            samples: n,
        },
    }
}

#[derive(Clone, Debug)]
pub struct EnumerationResult {
    /// Best expected return over symmetric deterministic policy pairs.
    pub best_return: f64,
    /// Probability both agents pick the same lever under the best pair.
    pub best_coordination: f64,
    /// Best policy as a table from joint observation-bin index to action.
    pub best_policy: Vec<usize>,
    pub policies_searched: u64,
}

/// Exhaustive search over symmetric deterministic policy pairs for a
/// discretized one-shot lever game, with the expected return computed by
/// numerical integration over the discretized joint distribution of truth
/// and observations. The observation for each lever is quantized into
/// `bins` equal-probability levels of its marginal distribution.
pub fn enumerate_joint_policies(
    cfg: &LeverConfig,
    sigma: f64,
    bins: usize,
    budget: f64,
) -> Result<EnumerationResult, OracleError> {
    let levers = cfg.num_levers;
    let table_size = bins.pow(levers as u32);
    let policies = (levers as f64).powi(table_size as i32);
    if policies > budget {
        return Err(OracleError::BudgetExceeded { policies, budget });
    }

    // Truth quadrature nodes per lever (midpoint rule over +-4 prior sd,
    // or exact uniform segments for the flat prior).
    const NODES: usize = 21;
    let (node_values, node_weights) = truth_nodes(cfg, NODES);

    // q[node][bin]: probability the observed value falls in `bin` given the
    // truth node, for one lever. Bin edges are marginal quantile cuts.
    let edges = bin_edges(cfg, sigma, bins);
    let mut q = vec![vec![0.0; bins]; NODES];
    for (i, &r) in node_values.iter().enumerate() {
        for b in 0..bins {
            let lo = if b == 0 { f64::NEG_INFINITY } else { edges[b - 1] };
            let hi = if b + 1 == bins { f64::INFINITY } else { edges[b] };
            q[i][b] = if sigma > 0.0 {
                normal_cdf((hi - r) / sigma) - normal_cdf((lo - r) / sigma)
            } else {
                // Noise-free observation lands exactly on the truth.
                if r > lo && r <= hi {
                    1.0
                } else {
                    0.0
                }
            };
        }
    }

    // Joint truth nodes: cartesian product over levers.
    let joint_nodes: Vec<Vec<usize>> = cartesian(NODES, levers);
    let joint_bins: Vec<Vec<usize>> = cartesian(bins, levers);

    // For each joint truth node, the probability of each joint bin tuple.
    let node_bin_prob: Vec<Vec<f64>> = joint_nodes
        .par_iter()
        .map(|node| {
            joint_bins
                .iter()
                .map(|bin| (0..levers).map(|l| q[node[l]][bin[l]]).product())
                .collect()
        })
        .collect();
    let node_weight: Vec<f64> = joint_nodes
        .iter()
        .map(|node| (0..levers).map(|l| node_weights[node[l]]).product())
        .collect();
    let node_rewards: Vec<Vec<f64>> = joint_nodes
        .iter()
        .map(|node| (0..levers).map(|l| node_values[node[l]]).collect())
        .collect();

    let total_policies = policies as u64;
    let evaluate = |policy_id: u64| -> (f64, f64) {
        let mut table = vec![0usize; table_size];
        let mut rest = policy_id;
        for slot in table.iter_mut() {
            *slot = (rest % levers as u64) as usize;
            rest /= levers as u64;
        }
        let (mut expected, mut coord) = (0.0, 0.0);
        for (n, probs) in node_bin_prob.iter().enumerate() {
            let mut action_mass = vec![0.0; levers];
            for (j, &p) in probs.iter().enumerate() {
                action_mass[table[j]] += p;
            }
            let mut match_prob = 0.0;
            let mut match_payoff = 0.0;
            for a in 0..levers {
                let p_same = action_mass[a] * action_mass[a];
                match_prob += p_same;
                match_payoff += p_same * node_rewards[n][a];
            }
            expected += node_weight[n] * (match_payoff + (1.0 - match_prob) * cfg.penalty);
            coord += node_weight[n] * match_prob;
        }
        (expected, coord)
    };

    let best = (0..total_policies)
        .into_par_iter()
        .map(|id| {
            let (value, coord) = evaluate(id);
            (id, value, coord)
        })
        .reduce(
            || (0, f64::NEG_INFINITY, 0.0),
            |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
        );

    let mut table = vec![0usize; table_size];
    let mut rest = best.0;
    for slot in table.iter_mut() {
        *slot = (rest % levers as u64) as usize;
        rest /= levers as u64;
    }
    Ok(EnumerationResult {
        best_return: best.1,
        best_coordination: best.2,
        best_policy: table,
        policies_searched: total_policies,
    })
}

fn truth_nodes(cfg: &LeverConfig, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    if cfg.flat_prior {
        let (lo, hi) = cfg.flat_bounds();
        let width = (hi - lo) / nodes as f64;
        let values = (0..nodes).map(|i| lo + (i as f64 + 0.5) * width).collect();
        (values, vec![1.0 / nodes as f64; nodes])
    } else {
        let span = 4.0 * cfg.sigma_star.max(1e-9);
        let lo = cfg.r_mean - span;
        let width = 2.0 * span / nodes as f64;
        let values: Vec<f64> = (0..nodes).map(|i| lo + (i as f64 + 0.5) * width).collect();
        let mut weights: Vec<f64> = values
            .iter()
            .map(|&v| {
                let z = (v - cfg.r_mean) / cfg.sigma_star.max(1e-9);
                (-0.5 * z * z).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        (values, weights)
    }
}

fn bin_edges(cfg: &LeverConfig, sigma: f64, bins: usize) -> Vec<f64> {
    // Equal-probability cuts of the marginal observation distribution.
    let marginal_sd = (cfg.sigma_star * cfg.sigma_star + sigma * sigma).sqrt().max(1e-9);
    (1..bins)
        .map(|b| cfg.r_mean + marginal_sd * normal_quantile(b as f64 / bins as f64))
        .collect()
}

fn cartesian(base: usize, repeat: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..repeat {
        let mut next = Vec::with_capacity(out.len() * base);
        for prefix in &out {
            for v in 0..base {
                let mut row = prefix.clone();
                row.push(v);
                next.push(row);
            }
        }
        out = next;
    }
    out
}

/// Standard normal CDF via the complementary error function (Abramowitz &
/// Stegun 7.1.26 polynomial, |error| < 1.5e-7).
pub fn normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x).exp();
    let signed = if x >= 0.0 { erf } else { -erf };
    0.5 * (1.0 + signed)
}

/// Inverse standard normal CDF (Acklam's rational approximation).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// O(h^2) reference for generalized advantage estimation: the explicit
/// (1 - lambda)-weighted blend of n-step advantages, truncated at the
/// horizon with a zero terminal bootstrap. Intentionally a different
/// formulation from the production recursion.
pub fn gae_bruteforce(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let h = rewards.len();
    assert_eq!(values.len(), h);
    let n_step = |t: usize, n: usize| -> f64 {
        let mut acc = 0.0;
        let mut discount = 1.0;
        for l in 0..n {
            acc += discount * rewards[t + l];
            discount *= gamma;
        }
        if t + n < h {
            acc += discount * values[t + n];
        }
        acc - values[t]
    };
    (0..h)
        .map(|t| {
            let max_n = h - t;
            let mut acc = 0.0;
            let mut weight = 1.0 - lambda;
            for n in 1..max_n {
                acc += weight * n_step(t, n);
                weight *= lambda;
            }
            // The remaining lambda mass rides on the full-to-horizon term.
            acc + lambda.powi((max_n - 1) as i32) * n_step(t, max_n)
        })
        .collect()
}
