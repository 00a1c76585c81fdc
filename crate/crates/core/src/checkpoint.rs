//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 0..8         | magic `QSACKPT\0`                        |
//! | 8..12        | format version (u32), currently 1        |
//! | 12..20       | header length `H` in bytes (u64)         |
//! | 20..20+H     | UTF-8 JSON header                        |
//! | 20+H..       | parameter blocks, back to back           |
//!
//! The header's `blocks` array lists every block as `{name, dtype, len}` in
//! payload order. Values are little-endian IEEE-754 and matrices are stored
//! row-major (`fan_in × fan_out` weights, then bias, per layer).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::nn::{Adam, AdamConfig, Head, Mlp, NnError, Scalar};
use crate::sac::{SacAgent, SacConfig};

pub const MAGIC: &[u8; 8] = b"QSACKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint stores {found} values, expected {expected}")]
    Dtype { expected: &'static str, found: String },
    #[error("block `{0}` missing from checkpoint")]
    MissingBlock(String),
    #[error("payload is {got} bytes, header describes {expected}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub dtype: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkInfo {
    pub name: String,
    pub widths: Vec<usize>,
    pub head: Head,
    pub leaky_slope: f64,
}

/// Raw container contents: a typed header plus named byte blocks.
#[derive(Debug, Clone, Default)]
struct Blocks {
    infos: Vec<BlockInfo>,
    payload: Vec<u8>,
}

impl Blocks {
    fn push<F: Scalar>(&mut self, name: &str, values: &[F]) {
        self.infos.push(BlockInfo { name: name.into(), dtype: F::DTYPE.into(), len: values.len() });
        self.payload.reserve(values.len() * F::BYTES);
        for &v in values {
            v.write_le(&mut self.payload);
        }
    }
}

struct BlockReader<'a> {
    index: BTreeMap<String, (BlockInfo, &'a [u8])>,
}

fn dtype_bytes(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "f64" => Some(8),
        _ => None,
    }
}

impl<'a> BlockReader<'a> {
    fn new(infos: &[BlockInfo], payload: &'a [u8]) -> Result<Self, CheckpointError> {
        let mut index = BTreeMap::new();
        let mut offset = 0;
        for info in infos {
            let width = dtype_bytes(&info.dtype).ok_or_else(|| CheckpointError::Dtype {
                expected: "f32 or f64",
                found: info.dtype.clone(),
            })?;
            let n = info.len * width;
            if offset + n > payload.len() {
                return Err(CheckpointError::Truncated { expected: offset + n, got: payload.len() });
            }
            index.insert(info.name.clone(), (info.clone(), &payload[offset..offset + n]));
            offset += n;
        }
        if offset != payload.len() {
            return Err(CheckpointError::Truncated { expected: offset, got: payload.len() });
        }
        Ok(Self { index })
    }

    fn take<F: Scalar>(&self, name: &str) -> Result<Vec<F>, CheckpointError> {
        let (info, bytes) = self.index.get(name).ok_or_else(|| CheckpointError::MissingBlock(name.into()))?;
        if info.dtype != F::DTYPE {
            return Err(CheckpointError::Dtype { expected: F::DTYPE, found: info.dtype.clone() });
        }
        Ok(bytes.chunks_exact(F::BYTES).map(F::read_le).collect())
    }
}

fn write_container<W: Write, H: Serialize>(mut w: W, header: &H) -> Result<W, CheckpointError> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(w)
}

fn read_container<R: Read>(mut r: R) -> Result<(Vec<u8>, Vec<u8>), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    Ok((header, payload))
}

fn network_info<F: Scalar>(name: &str, net: &Mlp<F>) -> NetworkInfo {
    NetworkInfo {
        name: name.into(),
        widths: net.widths().to_vec(),
        head: net.head(),
        leaky_slope: net.leaky_slope(),
    }
}

fn rebuild<F: Scalar>(info: &NetworkInfo, blocks: &BlockReader<'_>) -> Result<Mlp<F>, CheckpointError> {
    Ok(Mlp::from_parts(&info.widths, info.head, info.leaky_slope, blocks.take(&info.name)?)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct MlpHeader {
    kind: String,
    dtype: String,
    network: NetworkInfo,
    blocks: Vec<BlockInfo>,
}

impl<F: Scalar> Mlp<F> {
    pub fn write_to<W: Write>(&self, w: W) -> Result<(), CheckpointError> {
        let mut blocks = Blocks::default();
        blocks.push("mlp", self.params());
        let header = MlpHeader {
            kind: "mlp".into(),
            dtype: F::DTYPE.into(),
            network: network_info("mlp", self),
            blocks: blocks.infos,
        };
        let mut w = write_container(w, &header)?;
        w.write_all(&blocks.payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, CheckpointError> {
        let (header, payload) = read_container(r)?;
        let header: MlpHeader = serde_json::from_slice(&header)?;
        if header.kind != "mlp" {
            return Err(CheckpointError::Mismatch(format!("expected an mlp checkpoint, found `{}`", header.kind)));
        }
        let blocks = BlockReader::new(&header.blocks, &payload)?;
        rebuild(&header.network, &blocks)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamInfo {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentHeader {
    kind: String,
    dtype: String,
    obs_dim: usize,
    action_dim: usize,
    sac: SacConfig,
    networks: Vec<NetworkInfo>,
    optimizers: BTreeMap<String, AdamInfo>,
    run: RunConfig,
    step: u64,
    rng: Option<ChaCha8Rng>,
    blocks: Vec<BlockInfo>,
}

/// Everything needed to evaluate or inspect a trained agent.
#[derive(Debug, Clone)]
pub struct AgentCheckpoint<F> {
    pub agent: SacAgent<F>,
    pub run: RunConfig,
    /// Agent steps taken when the checkpoint was written.
    pub step: u64,
    pub rng: Option<ChaCha8Rng>,
}

const NETWORKS: [&str; 5] = ["actor", "q1", "q2", "q1_target", "q2_target"];
const OPTIMIZERS: [&str; 3] = ["actor", "q1", "q2"];

impl<F: Scalar> AgentCheckpoint<F> {
    fn nets(agent: &SacAgent<F>) -> [&Mlp<F>; 5] {
        [&agent.actor, &agent.q1, &agent.q2, &agent.q1_target, &agent.q2_target]
    }

    fn opts(agent: &SacAgent<F>) -> [&Adam<F>; 3] {
        [&agent.actor_opt, &agent.q1_opt, &agent.q2_opt]
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), CheckpointError> {
        let a = &self.agent;
        let mut blocks = Blocks::default();
        let mut networks = Vec::new();
        for (name, net) in NETWORKS.iter().zip(Self::nets(a)) {
            blocks.push(name, net.params());
            networks.push(network_info(name, net));
        }
        let mut optimizers = BTreeMap::new();
        for (name, opt) in OPTIMIZERS.iter().zip(Self::opts(a)) {
            blocks.push(&format!("{name}.adam.m"), &opt.m);
            blocks.push(&format!("{name}.adam.v"), &opt.v);
            optimizers.insert(name.to_string(), AdamInfo { config: opt.config.clone(), step: opt.step });
        }
        blocks.push("log_alpha", &[a.log_alpha]);
        blocks.push("log_alpha.adam.m", &a.alpha_opt.m);
        blocks.push("log_alpha.adam.v", &a.alpha_opt.v);
        optimizers.insert("log_alpha".into(), AdamInfo { config: a.alpha_opt.config.clone(), step: a.alpha_opt.step });

        let header = AgentHeader {
            kind: "sac_agent".into(),
            dtype: F::DTYPE.into(),
            obs_dim: a.obs_dim,
            action_dim: a.action_dim,
            sac: a.config.clone(),
            networks,
            optimizers,
            run: self.run.clone(),
            step: self.step,
            rng: self.rng.clone(),
            blocks: blocks.infos,
        };
        let mut w = write_container(w, &header)?;
        w.write_all(&blocks.payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, CheckpointError> {
        let (header, payload) = read_container(r)?;
        let h: AgentHeader = serde_json::from_slice(&header)?;
        if h.kind != "sac_agent" {
            return Err(CheckpointError::Mismatch(format!("expected a sac_agent checkpoint, found `{}`", h.kind)));
        }
        if h.dtype != F::DTYPE {
            return Err(CheckpointError::Dtype { expected: F::DTYPE, found: h.dtype });
        }
        let blocks = BlockReader::new(&h.blocks, &payload)?;
        let net = |name: &str| -> Result<Mlp<F>, CheckpointError> {
            let info = h
                .networks
                .iter()
                .find(|n| n.name == name)
                .ok_or_else(|| CheckpointError::MissingBlock(name.into()))?;
            rebuild(info, &blocks)
        };
        let adam = |name: &str| -> Result<Adam<F>, CheckpointError> {
            let info = h.optimizers.get(name).ok_or_else(|| CheckpointError::MissingBlock(format!("{name}.adam")))?;
            Ok(Adam {
                config: info.config.clone(),
                step: info.step,
                m: blocks.take(&format!("{name}.adam.m"))?,
                v: blocks.take(&format!("{name}.adam.v"))?,
            })
        };
        let alpha_info = h
            .optimizers
            .get("log_alpha")
            .ok_or_else(|| CheckpointError::MissingBlock("log_alpha.adam".into()))?;
        let log_alpha = blocks.take::<f64>("log_alpha")?;
        let agent = SacAgent {
            config: h.sac.clone(),
            obs_dim: h.obs_dim,
            action_dim: h.action_dim,
            actor: net("actor")?,
            q1: net("q1")?,
            q2: net("q2")?,
            q1_target: net("q1_target")?,
            q2_target: net("q2_target")?,
            log_alpha: *log_alpha.first().ok_or_else(|| CheckpointError::MissingBlock("log_alpha".into()))?,
            actor_opt: adam("actor")?,
            q1_opt: adam("q1")?,
            q2_opt: adam("q2")?,
            alpha_opt: Adam {
                config: alpha_info.config.clone(),
                step: alpha_info.step,
                m: blocks.take("log_alpha.adam.m")?,
                v: blocks.take("log_alpha.adam.v")?,
            },
        };
        if agent.actor.input_dim() != agent.obs_dim || agent.actor.output_dim() != 2 * agent.action_dim {
            return Err(CheckpointError::Mismatch("actor widths disagree with declared dimensions".into()));
        }
        if agent.action_dim != h.run.run.action_space.dim() {
            return Err(CheckpointError::Mismatch(format!(
                "agent has {} actions but the stored run uses {}",
                agent.action_dim, h.run.run.action_space
            )));
        }
        Ok(Self { agent, run: h.run, step: h.step, rng: h.rng })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
