//! Result files: CSV (one row per cell), a JSON document embedding the
//! experiment configuration, and gnuplot-ready heatmap triples.

use super::crossplay::CrossPlayMatrix;
use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub fn matrix_to_csv(m: &CrossPlayMatrix) -> String {
    let mut out = String::from("row_label,col_label,mean_return,coord_rate,n_episodes,se\n");
    let n = m.size();
    for r in 0..n {
        for c in 0..n {
            let cell = m.cell(r, c);
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{},{:.6}\n",
                m.labels[r],
                m.labels[c],
                cell.mean_return,
                cell.coordination_rate,
                cell.episodes,
                cell.se_return
            ));
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
pub struct MatrixDocument {
    pub config: ExperimentConfig,
    pub matrix: CrossPlayMatrix,
}

pub fn matrix_to_json(m: &CrossPlayMatrix, cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(&MatrixDocument { config: cfg.clone(), matrix: m.clone() })
        .expect("matrix serializes")
}

pub fn matrix_from_json(text: &str) -> Result<MatrixDocument, serde_json::Error> {
    serde_json::from_str(text)
}

/// `x y value` triples (column, row, mean return), one per cell.
pub fn heatmap_triples(m: &CrossPlayMatrix) -> String {
    let mut out = String::new();
    let n = m.size();
    for r in 0..n {
        for c in 0..n {
            out.push_str(&format!("{c} {r} {:.6}\n", m.cell(r, c).mean_return));
        }
    }
    out
}

/// Write via a temporary file and rename, so partial files never appear
/// under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    std::fs::rename(&tmp, path)
}
