//! Cross-play tournaments, robustness evaluations, and result export.

pub mod crossplay;
pub mod export;
pub mod manifest;

pub use crossplay::{
    cross_play, evaluate_team, CellStats, CrossPlayMatrix, EvalError, MatrixEntry,
};
pub use manifest::RunManifest;
