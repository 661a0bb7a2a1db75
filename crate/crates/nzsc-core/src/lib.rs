//! Laboratory for coordination under misspecified problem settings.
//!
//! Agents must cooperate in a ground-truth game they each see only a noisy
//! private copy of; only the game distribution and the noise models are
//! common knowledge. The crate provides the game families (lever games and
//! two gridworlds), the common-knowledge wrapper that turns the noisy
//! problem into an ordinary one, recurrent actor-critic training under
//! several regimes, brute-force reference oracles, and a cross-play
//! tournament harness.

pub mod config;
pub mod env;
pub mod experiments;
pub mod eval;
pub mod grid;
pub mod lever;
pub mod meta;
pub mod neural;
pub mod rng;
pub mod oracle;
pub mod rollout;
pub mod train;
