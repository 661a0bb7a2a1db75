//! C ABI over the coordination laboratory: opaque environment and policy
//! handles, integer error codes, and a one-call pair evaluation. The header
//! is generated by cbindgen at build time (see `include/nzsc.h`).
//!
//! Conventions: functions return `NZSC_OK` (0) on success and a negative
//! code on failure; `nzsc_last_error` returns a thread-local message for
//! the most recent failure on that thread. Handles are created and freed by
//! this library only. No function is thread-safe on a single handle;
//! distinct handles are independent.

use libc::{c_char, c_double, c_float, c_int, size_t};
use nzsc_core::config::{AnyEnv, AnyState, ExperimentConfig};
use nzsc_core::env::{AgentAction, BatchPolicy, Environment};
use nzsc_core::eval::{cross_play, MatrixEntry};
use nzsc_core::neural::{Checkpoint, PolicyNetwork, TraitDescriptor};
use nzsc_core::rng::{tag, RngStream};
use nzsc_core::rollout::sample_categorical;
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

pub const NZSC_OK: c_int = 0;
pub const NZSC_ERR_NULL_ARGUMENT: c_int = -1;
pub const NZSC_ERR_INVALID_UTF8: c_int = -2;
pub const NZSC_ERR_CONFIG: c_int = -3;
pub const NZSC_ERR_IO: c_int = -4;
pub const NZSC_ERR_BOUNDS: c_int = -5;
pub const NZSC_ERR_STATE: c_int = -6;
pub const NZSC_ERR_PANIC: c_int = -7;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl Into<String>) {
    let text = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nzsc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

fn guard<F: FnOnce() -> c_int>(body: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            NZSC_ERR_PANIC
        }
    }
}

/// An environment plus one in-flight episode.
pub struct NzscEnv {
    env: AnyEnv,
    state: Option<AnyState>,
    rng: RngStream,
}

/// A loaded checkpoint with per-slot recurrent state, for step-by-step
/// action sampling from another language.
pub struct NzscPolicy {
    nets: Vec<PolicyNetwork<f32>>,
    hiddens: Vec<ndarray::Array2<f32>>,
    rng: RngStream,
}

unsafe fn utf8<'a>(ptr: *const c_char) -> Result<&'a str, c_int> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(NZSC_ERR_NULL_ARGUMENT);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        NZSC_ERR_INVALID_UTF8
    })
}

fn env_from_config(text: &str) -> Result<AnyEnv, c_int> {
    let cfg = ExperimentConfig::from_toml(text).map_err(|e| {
        set_error(e.to_string());
        NZSC_ERR_CONFIG
    })?;
    let env_id = cfg.env_id().map_err(|e| {
        set_error(e.to_string());
        NZSC_ERR_CONFIG
    })?;
    let mut traits = Vec::with_capacity(cfg.num_agents);
    for slot in 0..cfg.num_agents {
        let text = cfg
            .noise_grid
            .get(slot)
            .or_else(|| cfg.noise_grid.last())
            .cloned()
            .unwrap_or_else(|| "0".to_string());
        traits.push(cfg.parse_trait(&text).map_err(|e| {
            set_error(e.to_string());
            NZSC_ERR_CONFIG
        })?);
    }
    AnyEnv::build(env_id, cfg.num_agents, cfg.flat_prior, &traits, false, cfg.misspecification_z)
        .map_err(|e| {
            set_error(e.to_string());
            NZSC_ERR_CONFIG
        })
}

/// Create an environment from a TOML experiment configuration. The agent
/// slots take their noise models from `noise_grid` in order.
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string and `out` a valid
/// pointer; the returned handle must be freed with `nzsc_env_free`.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_create(
    config_toml: *const c_char,
    out: *mut *mut NzscEnv,
) -> c_int {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return NZSC_ERR_NULL_ARGUMENT;
        }
        let text = match utf8(config_toml) {
            Ok(t) => t,
            Err(code) => return code,
        };
        match env_from_config(text) {
            Ok(env) => {
                let handle = Box::new(NzscEnv { env, state: None, rng: RngStream::new(0) });
                *out = Box::into_raw(handle);
                NZSC_OK
            }
            Err(code) => code,
        }
    })
}

/// # Safety
/// `env` must be a handle from `nzsc_env_create` not yet freed (or null).
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_free(env: *mut NzscEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_num_agents(env: *const NzscEnv) -> c_int {
    if env.is_null() {
        return NZSC_ERR_NULL_ARGUMENT;
    }
    (*env).env.num_agents() as c_int
}

/// # Safety
/// `env` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_observation_dim(env: *const NzscEnv) -> c_int {
    if env.is_null() {
        return NZSC_ERR_NULL_ARGUMENT;
    }
    (*env).env.observation_dim() as c_int
}

/// # Safety
/// `env` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_horizon(env: *const NzscEnv) -> c_int {
    if env.is_null() {
        return NZSC_ERR_NULL_ARGUMENT;
    }
    (*env).env.horizon() as c_int
}

/// Write the action-head sizes into `sizes`; returns the head count, or a
/// negative error if `capacity` is too small.
///
/// # Safety
/// `env` must be valid; `sizes` must point to `capacity` writable u32s.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_action_heads(
    env: *const NzscEnv,
    sizes: *mut u32,
    capacity: c_int,
) -> c_int {
    if env.is_null() || sizes.is_null() {
        return NZSC_ERR_NULL_ARGUMENT;
    }
    let dims = (*env).env.action_dims();
    if (capacity as usize) < dims.len() {
        set_error(format!("need capacity {} for action heads", dims.len()));
        return NZSC_ERR_BOUNDS;
    }
    for (i, &d) in dims.iter().enumerate() {
        *sizes.add(i) = d as u32;
    }
    dims.len() as c_int
}

/// Start episode `episode` of stream `seed`. Identical (seed, episode)
/// pairs reproduce identical episodes.
///
/// # Safety
/// `env` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_reset(env: *mut NzscEnv, seed: u64, episode: u64) -> c_int {
    guard(|| {
        if env.is_null() {
            return NZSC_ERR_NULL_ARGUMENT;
        }
        let handle = &mut *env;
        handle.rng = RngStream::new(seed).derive2(tag::EPISODE, episode).derive(tag::DYNAMICS);
        let mut rng = handle.rng;
        handle.state = Some(handle.env.reset(&mut rng));
        handle.rng = rng;
        NZSC_OK
    })
}

/// Apply one joint action (`num_agents * num_heads` indices, agent-major).
///
/// # Safety
/// `env` must be valid and reset; `actions` must hold `actions_len` u32s;
/// `reward` and `done` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_step(
    env: *mut NzscEnv,
    actions: *const u32,
    actions_len: size_t,
    reward: *mut c_double,
    done: *mut u8,
) -> c_int {
    guard(|| {
        if env.is_null() || actions.is_null() || reward.is_null() || done.is_null() {
            return NZSC_ERR_NULL_ARGUMENT;
        }
        let handle = &mut *env;
        let Some(state) = handle.state.as_mut() else {
            set_error("environment has not been reset");
            return NZSC_ERR_STATE;
        };
        let n = handle.env.num_agents();
        let heads = handle.env.action_dims().len();
        if actions_len != n * heads {
            set_error(format!("expected {} action indices, got {actions_len}", n * heads));
            return NZSC_ERR_BOUNDS;
        }
        let mut joint: Vec<AgentAction> = vec![[0; 2]; n];
        for agent in 0..n {
            for head in 0..heads {
                joint[agent][head] = *actions.add(agent * heads + head) as usize;
            }
        }
        let mut rng = handle.rng;
        let result = handle.env.step(state, &joint, &mut rng);
        handle.rng = rng;
        match result {
            Ok(outcome) => {
                *reward = outcome.reward;
                *done = outcome.done as u8;
                NZSC_OK
            }
            Err(e) => {
                set_error(e.to_string());
                NZSC_ERR_STATE
            }
        }
    })
}

/// Fill `out` with agent `agent`'s current observation.
///
/// # Safety
/// `env` must be valid and reset; `out` must hold `len` floats with `len`
/// at least the observation dim.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_observe(
    env: *const NzscEnv,
    agent: u32,
    out: *mut c_float,
    len: size_t,
) -> c_int {
    guard(|| {
        if env.is_null() || out.is_null() {
            return NZSC_ERR_NULL_ARGUMENT;
        }
        let handle = &*env;
        let Some(state) = handle.state.as_ref() else {
            set_error("environment has not been reset");
            return NZSC_ERR_STATE;
        };
        let dim = handle.env.observation_dim();
        if (agent as usize) >= handle.env.num_agents() || len < dim {
            set_error(format!("agent {agent} or buffer {len} out of range (dim {dim})"));
            return NZSC_ERR_BOUNDS;
        }
        let buffer = std::slice::from_raw_parts_mut(out, dim);
        handle.env.observe(state, agent as usize, buffer);
        NZSC_OK
    })
}

/// Whether the most recent step satisfied the coordination predicate
/// (1/0), or a negative error.
///
/// # Safety
/// `env` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nzsc_env_coordinated(env: *const NzscEnv) -> c_int {
    if env.is_null() {
        return NZSC_ERR_NULL_ARGUMENT;
    }
    let handle = &*env;
    match handle.state.as_ref() {
        Some(state) => handle.env.coordinated(state) as c_int,
        None => {
            set_error("environment has not been reset");
            NZSC_ERR_STATE
        }
    }
}

/// Load a checkpoint for step-by-step acting.
///
/// # Safety
/// `path` must be a valid NUL-terminated path and `out` writable; free the
/// handle with `nzsc_policy_free`.
#[no_mangle]
pub unsafe extern "C" fn nzsc_policy_load(
    path: *const c_char,
    out: *mut *mut NzscPolicy,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return NZSC_ERR_NULL_ARGUMENT;
        }
        let path = match utf8(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match Checkpoint::load(Path::new(path)) {
            Ok(ckpt) => {
                let nets: Vec<PolicyNetwork<f32>> =
                    (0..ckpt.agents.len()).map(|i| ckpt.network(i)).collect();
                let hiddens = nets.iter().map(|n| n.zero_hidden(1)).collect();
                *out = Box::into_raw(Box::new(NzscPolicy {
                    nets,
                    hiddens,
                    rng: RngStream::new(0),
                }));
                NZSC_OK
            }
            Err(e) => {
                set_error(e.to_string());
                NZSC_ERR_IO
            }
        }
    })
}

/// # Safety
/// `policy` must be a handle from `nzsc_policy_load` not yet freed (or null).
#[no_mangle]
pub unsafe extern "C" fn nzsc_policy_free(policy: *mut NzscPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Number of agent nets stored in the checkpoint.
///
/// # Safety
/// `policy` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nzsc_policy_num_agents(policy: *const NzscPolicy) -> c_int {
    if policy.is_null() {
        return NZSC_ERR_NULL_ARGUMENT;
    }
    (*policy).nets.len() as c_int
}

/// Reset recurrent state (start of an episode) and reseed action sampling.
///
/// # Safety
/// `policy` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nzsc_policy_reset(policy: *mut NzscPolicy, seed: u64) -> c_int {
    guard(|| {
        if policy.is_null() {
            return NZSC_ERR_NULL_ARGUMENT;
        }
        let handle = &mut *policy;
        for (net, hidden) in handle.nets.iter().zip(handle.hiddens.iter_mut()) {
            *hidden = net.zero_hidden(1);
        }
        handle.rng = RngStream::new(seed).derive(tag::POLICY);
        NZSC_OK
    })
}

/// Advance agent `slot` one step: consume an observation, sample one action
/// index per head into `actions_out`. Returns the head count.
///
/// # Safety
/// `policy` must be valid; `obs` must hold `obs_len` floats matching the
/// network's observation dim; `actions_out` must hold `capacity` u32s.
#[no_mangle]
pub unsafe extern "C" fn nzsc_policy_act(
    policy: *mut NzscPolicy,
    slot: u32,
    obs: *const c_float,
    obs_len: size_t,
    actions_out: *mut u32,
    capacity: size_t,
) -> c_int {
    guard(|| {
        if policy.is_null() || obs.is_null() || actions_out.is_null() {
            return NZSC_ERR_NULL_ARGUMENT;
        }
        let handle = &mut *policy;
        let idx = (slot as usize).min(handle.nets.len() - 1);
        let net = &handle.nets[idx];
        if obs_len != net.shape.obs_dim {
            set_error(format!(
                "observation has {obs_len} entries, network expects {}",
                net.shape.obs_dim
            ));
            return NZSC_ERR_BOUNDS;
        }
        if capacity < net.shape.heads.len() {
            set_error(format!("need capacity {} for actions", net.shape.heads.len()));
            return NZSC_ERR_BOUNDS;
        }
        let obs_slice = std::slice::from_raw_parts(obs, obs_len);
        let obs_mat = ndarray::ArrayView2::from_shape((1, obs_len), obs_slice).unwrap();
        let (logits, _) = net.step_batch(obs_mat, &mut handle.hiddens[idx]);
        for (head, head_logits) in logits.iter().enumerate() {
            let row: Vec<f32> = head_logits.row(0).to_vec();
            let (action, _) = sample_categorical(&row, &mut handle.rng);
            *actions_out.add(head) = action as u32;
        }
        logits.len() as c_int
    })
}

/// Evaluate two checkpoints as a team: checkpoint A takes seat 0 with its
/// trained noise model, checkpoint B seat 1. Writes the mean episode return
/// and the terminal-step coordination rate.
///
/// # Safety
/// Both paths must be valid NUL-terminated strings; `mean_return` and
/// `coordination_rate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nzsc_eval_pair(
    checkpoint_a: *const c_char,
    checkpoint_b: *const c_char,
    episodes: u64,
    seed: u64,
    mean_return: *mut c_double,
    coordination_rate: *mut c_double,
) -> c_int {
    guard(|| {
        if mean_return.is_null() || coordination_rate.is_null() {
            return NZSC_ERR_NULL_ARGUMENT;
        }
        let (path_a, path_b) = match (utf8(checkpoint_a), utf8(checkpoint_b)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(code), _) | (_, Err(code)) => return code,
        };
        let load = |p: &str| -> Result<Arc<Checkpoint>, c_int> {
            Checkpoint::load(Path::new(p)).map(Arc::new).map_err(|e| {
                set_error(e.to_string());
                NZSC_ERR_IO
            })
        };
        let (a, b) = match (load(path_a), load(path_b)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(code), _) | (_, Err(code)) => return code,
        };
        let concrete = |c: &Arc<Checkpoint>| -> Result<TraitDescriptor, c_int> {
            match &c.header.traits[0] {
                t @ (TraitDescriptor::LeverSigma { .. }
                | TraitDescriptor::CeeSpeed { .. }
                | TraitDescriptor::SseView { .. }) => Ok(t.clone()),
                other => {
                    set_error(format!(
                        "checkpoint trained under {} needs a concrete evaluation model",
                        other.label()
                    ));
                    Err(NZSC_ERR_CONFIG)
                }
            }
        };
        let (ta, tb) = match (concrete(&a), concrete(&b)) {
            (Ok(ta), Ok(tb)) => (ta, tb),
            (Err(code), _) | (_, Err(code)) => return code,
        };
        let env_id = match nzsc_core::config::EnvId::parse(&a.header.env_id) {
            Ok(id) => id,
            Err(e) => {
                set_error(e.to_string());
                return NZSC_ERR_CONFIG;
            }
        };
        let cfg = ExperimentConfig::for_env(env_id);
        let entries = [MatrixEntry::new("a", ta, a), MatrixEntry::new("b", tb, b)];
        match cross_play(&entries, &cfg, episodes as usize, seed) {
            Ok(matrix) => {
                let cell = matrix.cell(0, 1);
                *mean_return = cell.mean_return;
                *coordination_rate = cell.coordination_rate;
                NZSC_OK
            }
            Err(e) => {
                set_error(e.to_string());
                NZSC_ERR_CONFIG
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lever_config() -> CString {
        CString::new("environment = \"i-nlg\"\nnoise_grid = [\"0\", \"2.5\"]").unwrap()
    }

    #[test]
    fn env_lifecycle_reset_step_observe() {
        unsafe {
            let mut env: *mut NzscEnv = std::ptr::null_mut();
            assert_eq!(nzsc_env_create(lever_config().as_ptr(), &mut env), NZSC_OK);
            assert_eq!(nzsc_env_num_agents(env), 2);
            let obs_dim = nzsc_env_observation_dim(env);
            assert!(obs_dim > 0);
            assert_eq!(nzsc_env_horizon(env), 16);
            let mut heads = [0u32; 4];
            assert_eq!(nzsc_env_action_heads(env, heads.as_mut_ptr(), 4), 1);
            assert_eq!(heads[0], 3);

            assert_eq!(nzsc_env_reset(env, 7, 0), NZSC_OK);
            let mut obs = vec![0f32; obs_dim as usize];
            assert_eq!(nzsc_env_observe(env, 0, obs.as_mut_ptr(), obs.len()), NZSC_OK);

            let actions = [1u32, 1u32];
            let (mut reward, mut done) = (0f64, 0u8);
            for t in 0..16 {
                let code = nzsc_env_step(env, actions.as_ptr(), 2, &mut reward, &mut done);
                assert_eq!(code, NZSC_OK);
                assert_eq!(done != 0, t == 15);
            }
            assert_eq!(nzsc_env_coordinated(env), 1);
            // Stepping a finished episode fails cleanly.
            let code = nzsc_env_step(env, actions.as_ptr(), 2, &mut reward, &mut done);
            assert_eq!(code, NZSC_ERR_STATE);
            let msg = CStr::from_ptr(nzsc_last_error()).to_str().unwrap();
            assert!(msg.contains("finished"), "{msg}");
            nzsc_env_free(env);
        }
    }

    #[test]
    fn same_seed_reproduces_the_episode() {
        unsafe {
            let config = lever_config();
            let run = || {
                let mut env: *mut NzscEnv = std::ptr::null_mut();
                assert_eq!(nzsc_env_create(config.as_ptr(), &mut env), NZSC_OK);
                assert_eq!(nzsc_env_reset(env, 42, 3), NZSC_OK);
                let dim = nzsc_env_observation_dim(env) as usize;
                let mut obs = vec![0f32; dim];
                assert_eq!(nzsc_env_observe(env, 1, obs.as_mut_ptr(), dim), NZSC_OK);
                nzsc_env_free(env);
                obs
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn bad_inputs_are_rejected_not_crashed() {
        unsafe {
            let mut env: *mut NzscEnv = std::ptr::null_mut();
            let bad = CString::new("environment = \"hanabi\"").unwrap();
            assert_eq!(nzsc_env_create(bad.as_ptr(), &mut env), NZSC_ERR_CONFIG);
            assert_eq!(nzsc_env_create(std::ptr::null(), &mut env), NZSC_ERR_NULL_ARGUMENT);
            let mut policy: *mut NzscPolicy = std::ptr::null_mut();
            let missing = CString::new("/nonexistent/x.ckpt").unwrap();
            assert_eq!(nzsc_policy_load(missing.as_ptr(), &mut policy), NZSC_ERR_IO);
        }
    }

    #[test]
    fn policy_roundtrip_through_a_file() {
        use nzsc_core::neural::{CheckpointHeader, PolicyShape};
        let shape = PolicyShape { obs_dim: 9, fc_dim: 8, hidden_dim: 8, heads: vec![3] };
        let mut rng = RngStream::new(5);
        let net = PolicyNetwork::<f32>::init(shape.clone(), &mut rng);
        let ckpt = Checkpoint::new(
            CheckpointHeader {
                env_id: "i-nlg".into(),
                regime: "self-play".into(),
                seed: 5,
                num_agents: 2,
                obs_dim: 9,
                fc_dim: 8,
                hidden_dim: 8,
                heads: vec![3],
                traits: vec![TraitDescriptor::LeverSigma { sigma: 0.0 }],
                param_counts: vec![shape.param_count()],
                total_timesteps: 0,
                version: "test".into(),
            },
            vec![net.params_f32()],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        ckpt.save(&path).unwrap();

        unsafe {
            let c_path = CString::new(path.display().to_string()).unwrap();
            let mut policy: *mut NzscPolicy = std::ptr::null_mut();
            assert_eq!(nzsc_policy_load(c_path.as_ptr(), &mut policy), NZSC_OK);
            assert_eq!(nzsc_policy_num_agents(policy), 1);
            assert_eq!(nzsc_policy_reset(policy, 11), NZSC_OK);
            let obs = vec![0.1f32; 9];
            let mut actions = [9u32; 2];
            let heads = nzsc_policy_act(policy, 0, obs.as_ptr(), 9, actions.as_mut_ptr(), 2);
            assert_eq!(heads, 1);
            assert!(actions[0] < 3);
            nzsc_policy_free(policy);
        }
    }
}
