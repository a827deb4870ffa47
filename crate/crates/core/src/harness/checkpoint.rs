//! Binary checkpoint format.
//!
//! ```text
//! "FARCKPT1"                      8-byte magic
//! u32 version
//! u64 len, len bytes              agent descriptor, UTF-8 JSON
//! u64 global step
//! u64 n, n x f64                  parameters
//! u64 n, n x f64                  RMSProp mean squares
//! u64 n, n x 56 bytes             rng states (seed, u128 word pos, u64 stream)
//! 32 bytes                        config hash
//! ```
//!
//! Integers and floats are little-endian; floats are stored as raw bits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{config_hash, AgentIdentity};
use crate::algorithms::{Agent, AgentSpec};
use crate::error::{CheckpointError, Error, Result};
use crate::rng::RngState;

pub const MAGIC: &[u8; 8] = b"FARCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    #[serde(flatten)]
    pub identity: AgentIdentity,
    pub rmsprop_decay: f64,
    pub rmsprop_damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: AgentDescriptor,
    pub global_step: u64,
    pub params: Vec<f64>,
    pub mean_square: Vec<f64>,
    pub rng_states: Vec<RngState>,
    pub config_hash: [u8; 32],
}

impl Checkpoint {
    /// Build a checkpoint whose hash is derived from its own descriptor.
    pub fn new(
        descriptor: AgentDescriptor,
        global_step: u64,
        params: Vec<f64>,
        mean_square: Vec<f64>,
        rng_states: Vec<RngState>,
    ) -> Self {
        let config_hash = config_hash(&descriptor.identity);
        Checkpoint {
            descriptor,
            global_step,
            params,
            mean_square,
            rng_states,
            config_hash,
        }
    }

    pub fn agent(&self) -> Result<Agent> {
        let id = &self.descriptor.identity;
        let spec = AgentSpec::new(id.algorithm, id.combination, id.env.action_space()?)?;
        Ok(Agent {
            spec,
            model: id.approximator.build()?,
            params: self.params.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let descriptor = serde_json::to_vec(&self.descriptor).expect("descriptor serializes");
        let mut out = Vec::with_capacity(
            64 + descriptor.len() + 8 * (self.params.len() + self.mean_square.len()) + 56 * self.rng_states.len(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(descriptor.len() as u64).to_le_bytes());
        out.extend_from_slice(&descriptor);
        out.extend_from_slice(&self.global_step.to_le_bytes());
        for array in [&self.params, &self.mean_square] {
            out.extend_from_slice(&(array.len() as u64).to_le_bytes());
            for x in array.iter() {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.rng_states.len() as u64).to_le_bytes());
        for s in &self.rng_states {
            out.extend_from_slice(&s.seed);
            out.extend_from_slice(&s.word_pos.to_le_bytes());
            out.extend_from_slice(&s.stream.to_le_bytes());
        }
        out.extend_from_slice(&self.config_hash);
        out
    }

    /// Parse and check internal consistency. Does not compare the hash with
    /// an external config; see [`verify_hash`](Self::verify_hash).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(CheckpointError::Truncated("magic").into());
        }
        if r.take(8, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = u32::from_le_bytes(r.array("version")?);
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            }
            .into());
        }
        let len = r.len("descriptor length", 1)?;
        let text = r.take(len, "descriptor")?;
        let descriptor: AgentDescriptor =
            serde_json::from_slice(text).map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
        let global_step = u64::from_le_bytes(r.array("global step")?);
        let params = r.floats("parameters")?;
        let mean_square = r.floats("optimizer state")?;
        let n_rng = r.len("rng count", RngState::ENCODED_LEN)?;
        let mut rng_states = Vec::with_capacity(n_rng);
        for _ in 0..n_rng {
            rng_states.push(RngState {
                seed: r.array("rng seed")?,
                word_pos: u128::from_le_bytes(r.array("rng position")?),
                stream: u64::from_le_bytes(r.array("rng stream")?),
            });
        }
        let config_hash: [u8; 32] = r.array("config hash")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos).into());
        }

        let ckpt = Checkpoint {
            descriptor,
            global_step,
            params,
            mean_square,
            rng_states,
            config_hash,
        };
        ckpt.check_consistency()?;
        Ok(ckpt)
    }

    fn check_consistency(&self) -> Result<()> {
        let arch = &self.descriptor.identity.approximator;
        arch.validate()
            .map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
        if self.params.len() != arch.num_params() {
            return Err(CheckpointError::Inconsistent(format!(
                "{} parameters stored, architecture has {}",
                self.params.len(),
                arch.num_params()
            ))
            .into());
        }
        if self.mean_square.len() != self.params.len() {
            return Err(CheckpointError::Inconsistent(format!(
                "{} optimizer entries for {} parameters",
                self.mean_square.len(),
                self.params.len()
            ))
            .into());
        }
        if config_hash(&self.descriptor.identity) != self.config_hash {
            return Err(CheckpointError::HashMismatch.into());
        }
        Ok(())
    }

    /// Compare against the hash of the config the caller intends to use.
    pub fn verify_hash(&self, expected: &[u8; 32], force: bool) -> Result<()> {
        if &self.config_hash != expected {
            if force {
                log::warn!("checkpoint config hash differs; continuing because of --force");
            } else {
                return Err(CheckpointError::HashMismatch.into());
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let slice = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    /// A u64 count whose `unit`-byte payload must fit in the remaining input.
    fn len(&mut self, what: &'static str, unit: usize) -> Result<usize, CheckpointError> {
        let n = u64::from_le_bytes(self.array(what)?);
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.checked_mul(unit as u64).is_none_or(|b| b > remaining) {
            return Err(CheckpointError::Truncated(what));
        }
        Ok(n as usize)
    }

    fn floats(&mut self, what: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let n = self.len(what, 8)?;
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("chunk of 8"))))
            .collect())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
