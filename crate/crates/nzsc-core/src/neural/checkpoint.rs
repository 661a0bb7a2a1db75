//! Checkpoint files: a key-value header followed by the agents' flat
//! parameter vectors as little-endian 32-bit floats.
//!
//! Layout: the magic line, a TOML header, a `---` separator line, then the
//! raw blob (all agents' parameters back to back, lengths per agent in the
//! header). Checkpoints are the unit exchanged by cross-play evaluation.

use super::policy::PolicyShape;
use super::tape::Scalar;
use crate::grid::cee::Speed;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &str = "NZSC-CKPT1";
const SEPARATOR: &str = "\n---\n";

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (missing magic)")]
    BadMagic,
    #[error("header: {0}")]
    Header(String),
    #[error("parameter blob has {got} bytes, header says {want}")]
    BlobLength { got: usize, want: usize },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

/// What an agent trained under, recorded per agent slot. Used to label
/// cross-play rows and to rebuild a compatible evaluation environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TraitDescriptor {
    LeverSigma { sigma: f64 },
    LeverSigmaRange { lo: f64, hi: f64 },
    CeeSpeed { speed: Speed },
    CeeSpeedAny,
    SseView { view: usize },
    SseViewAny,
}

impl TraitDescriptor {
    pub fn label(&self) -> String {
        match self {
            TraitDescriptor::LeverSigma { sigma } => format!("sigma={sigma}"),
            TraitDescriptor::LeverSigmaRange { lo, hi } => format!("sigma~U[{lo},{hi}]"),
            TraitDescriptor::CeeSpeed { speed } => format!("speed={speed}"),
            TraitDescriptor::CeeSpeedAny => "speed=any".into(),
            TraitDescriptor::SseView { view } => format!("view={view}"),
            TraitDescriptor::SseViewAny => "view=any".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub env_id: String,
    pub regime: String,
    pub seed: u64,
    pub num_agents: usize,
    pub obs_dim: usize,
    pub fc_dim: usize,
    pub hidden_dim: usize,
    pub heads: Vec<usize>,
    /// Noise model / trait each agent slot trained under.
    pub traits: Vec<TraitDescriptor>,
    pub param_counts: Vec<usize>,
    pub total_timesteps: u64,
    pub version: String,
}

impl CheckpointHeader {
    pub fn shape(&self) -> PolicyShape {
        PolicyShape {
            obs_dim: self.obs_dim,
            fc_dim: self.fc_dim,
            hidden_dim: self.hidden_dim,
            heads: self.heads.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Flat parameter vector per agent slot.
    pub agents: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn new(header: CheckpointHeader, agents: Vec<Vec<f32>>) -> Self {
        debug_assert_eq!(header.param_counts.len(), agents.len());
        Self { header, agents }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let header =
            toml::to_string(&self.header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC.as_bytes());
        bytes.push(b'\n');
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(SEPARATOR.as_bytes());
        for agent in &self.agents {
            for &p in agent {
                bytes.extend_from_slice(&p.to_le_bytes());
            }
        }
        // Write-then-rename so readers never see a half-written file.
        let tmp = path.with_extension("ckpt.tmp");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let magic_len = MAGIC.len() + 1;
        if bytes.len() < magic_len || &bytes[..MAGIC.len()] != MAGIC.as_bytes() {
            return Err(CheckpointError::BadMagic);
        }
        let sep = SEPARATOR.as_bytes();
        let split = bytes
            .windows(sep.len())
            .position(|w| w == sep)
            .ok_or_else(|| CheckpointError::Header("missing separator".into()))?;
        let header_text = std::str::from_utf8(&bytes[magic_len..split])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let header: CheckpointHeader =
            toml::from_str(header_text).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let blob = &bytes[split + sep.len()..];
        let want: usize = header.param_counts.iter().sum::<usize>() * 4;
        if blob.len() != want {
            return Err(CheckpointError::BlobLength { got: blob.len(), want });
        }
        let mut agents = Vec::with_capacity(header.param_counts.len());
        let mut cursor = 0usize;
        for &count in &header.param_counts {
            let mut params = Vec::with_capacity(count);
            for i in 0..count {
                let at = cursor + i * 4;
                params.push(f32::from_le_bytes(blob[at..at + 4].try_into().unwrap()));
            }
            agents.push(params);
            cursor += count * 4;
        }
        Ok(Self { header, agents })
    }

    /// Rebuild one agent slot's network.
    pub fn network<T: Scalar>(&self, agent: usize) -> super::policy::PolicyNetwork<T> {
        super::policy::PolicyNetwork::from_f32(self.header.shape(), &self.agents[agent])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::policy::PolicyNetwork;
    use crate::rng::RngStream;

    fn header(counts: Vec<usize>) -> CheckpointHeader {
        CheckpointHeader {
            env_id: "i-nlg".into(),
            regime: "self-play".into(),
            seed: 17,
            num_agents: 2,
            obs_dim: 9,
            fc_dim: 16,
            hidden_dim: 16,
            heads: vec![3],
            traits: vec![
                TraitDescriptor::LeverSigma { sigma: 2.5 },
                TraitDescriptor::LeverSigma { sigma: 2.5 },
            ],
            param_counts: counts,
            total_timesteps: 1000,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let shape = PolicyShape { obs_dim: 9, fc_dim: 16, hidden_dim: 16, heads: vec![3] };
        let mut rng = RngStream::new(1);
        let a = PolicyNetwork::<f32>::init(shape.clone(), &mut rng);
        let b = PolicyNetwork::<f32>::init(shape.clone(), &mut rng);
        let ckpt = Checkpoint::new(
            header(vec![shape.param_count(), shape.param_count()]),
            vec![a.params_f32(), b.params_f32()],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);
        let net: PolicyNetwork<f32> = loaded.network(0);
        assert_eq!(net.params, a.params);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let ckpt = Checkpoint::new(header(vec![4]), vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::BlobLength { .. })));
    }

    #[test]
    fn non_checkpoint_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"hello world").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn trait_labels_are_stable() {
        assert_eq!(TraitDescriptor::LeverSigma { sigma: 2.5 }.label(), "sigma=2.5");
        assert_eq!(
            TraitDescriptor::LeverSigmaRange { lo: 0.0, hi: 5.0 }.label(),
            "sigma~U[0,5]"
        );
        assert_eq!(TraitDescriptor::CeeSpeed { speed: Speed::Low }.label(), "speed=low");
    }
}
