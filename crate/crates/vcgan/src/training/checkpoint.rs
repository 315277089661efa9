//! Checkpoint file format.
//!
//! Layout, all integers 64-bit little-endian, floats 32-bit little-endian:
//!
//! ```text
//! "VCGAN-CKPT 1\n"                        ASCII header line
//! config:      len, UTF-8 bytes           resolved-config echo
//! step:        u64
//! tensors:     count, then per entry:
//!                name-len, name bytes, rank, dims[rank], f32 data
//! optimizers:  count, then per block:
//!                name-len, name bytes, step, tensor table (same format)
//! rng state:   u64
//! checksum:    u64 FNV-1a over every preceding byte
//! ```
//!
//! The round trip is bit-exact, so resuming from a checkpoint reproduces an
//! uninterrupted run.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::diffcore::{AdamState, Moments};
use crate::models::ModelBundle;
use crate::rng::Rng;

pub const MAGIC: &str = "VCGAN-CKPT";
pub const VERSION: u64 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version `{0}`")]
    VersionMismatch(String),
    #[error("checkpoint file is truncated")]
    Truncated,
    #[error("checkpoint checksum does not match")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub type NamedTensor = (String, Vec<usize>, Vec<f32>);

/// Optimizer moment state for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerBlock {
    pub name: String,
    pub step: u64,
    /// Moments serialized as flat tensors named `<param>.m` / `<param>.v`.
    pub moments: Vec<NamedTensor>,
}

impl OptimizerBlock {
    /// Snapshot an optimizer state, sorted by parameter name so the byte
    /// stream is deterministic.
    pub fn capture(name: &str, state: &AdamState<f32>) -> Self {
        let mut names: Vec<&String> = state.moments.keys().collect();
        names.sort();
        let mut moments = Vec::with_capacity(names.len() * 2);
        for n in names {
            let m = &state.moments[n];
            moments.push((format!("{n}.m"), vec![m.m.len()], m.m.clone()));
            moments.push((format!("{n}.v"), vec![m.v.len()], m.v.clone()));
        }
        OptimizerBlock { name: name.to_string(), step: state.step, moments }
    }

    pub fn restore(&self) -> Result<AdamState<f32>, CheckpointError> {
        let mut state = AdamState::new();
        state.step = self.step;
        let mut halves: HashMap<String, (Option<Vec<f32>>, Option<Vec<f32>>)> = HashMap::new();
        for (name, _, data) in &self.moments {
            if let Some(base) = name.strip_suffix(".m") {
                halves.entry(base.to_string()).or_default().0 = Some(data.clone());
            } else if let Some(base) = name.strip_suffix(".v") {
                halves.entry(base.to_string()).or_default().1 = Some(data.clone());
            } else {
                return Err(CheckpointError::Malformed(format!(
                    "moment tensor `{name}` has no .m/.v suffix"
                )));
            }
        }
        for (base, (m, v)) in halves {
            let (m, v) = match (m, v) {
                (Some(m), Some(v)) if m.len() == v.len() => (m, v),
                _ => {
                    return Err(CheckpointError::Malformed(format!(
                        "incomplete moment pair for `{base}`"
                    )))
                }
            };
            state.moments.insert(base, Moments { m, v });
        }
        Ok(state)
    }
}

/// Everything needed to resume a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_echo: String,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
    pub optimizers: Vec<OptimizerBlock>,
    pub rng_state: u64,
}

impl Checkpoint {
    pub fn capture(
        config_echo: &str,
        step: u64,
        bundle: &ModelBundle<f32>,
        d_opt: &AdamState<f32>,
        g_opt: &AdamState<f32>,
        rng: &Rng,
    ) -> Self {
        Checkpoint {
            config_echo: config_echo.to_string(),
            step,
            tensors: bundle.named_state(),
            optimizers: vec![
                OptimizerBlock::capture("d", d_opt),
                OptimizerBlock::capture("g", g_opt),
            ],
            rng_state: rng.state(),
        }
    }

    /// Load the stored tensors into `bundle` and rebuild the optimizer and
    /// generator states.
    pub fn restore_into(
        &self,
        bundle: &ModelBundle<f32>,
    ) -> Result<(AdamState<f32>, AdamState<f32>, Rng), CheckpointError> {
        bundle
            .load_state(&self.tensors)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut d_opt = AdamState::new();
        let mut g_opt = AdamState::new();
        for block in &self.optimizers {
            match block.name.as_str() {
                "d" => d_opt = block.restore()?,
                "g" => g_opt = block.restore()?,
                other => {
                    return Err(CheckpointError::Malformed(format!(
                        "unknown optimizer block `{other}`"
                    )))
                }
            }
        }
        Ok((d_opt, g_opt, Rng::from_state(self.rng_state)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("{MAGIC} {VERSION}\n").as_bytes());
        put_u64(&mut out, self.config_echo.len() as u64);
        out.extend_from_slice(self.config_echo.as_bytes());
        put_u64(&mut out, self.step);
        put_tensor_table(&mut out, &self.tensors);
        put_u64(&mut out, self.optimizers.len() as u64);
        for block in &self.optimizers {
            put_u64(&mut out, block.name.len() as u64);
            out.extend_from_slice(block.name.as_bytes());
            put_u64(&mut out, block.step);
            put_tensor_table(&mut out, &block.moments);
        }
        put_u64(&mut out, self.rng_state);
        let checksum = fnv1a64(&out);
        put_u64(&mut out, checksum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a64(body) != stored {
            // distinguish a garbled header from a bit flip in the body
            if !body.starts_with(MAGIC.as_bytes()) {
                return Err(CheckpointError::BadMagic);
            }
            return Err(CheckpointError::ChecksumMismatch);
        }
        let mut r = Reader { bytes: body, pos: 0 };
        let header = r.line()?;
        let mut parts = header.splitn(2, ' ');
        if parts.next() != Some(MAGIC) {
            return Err(CheckpointError::BadMagic);
        }
        match parts.next() {
            Some(v) if v == VERSION.to_string() => {}
            Some(v) => return Err(CheckpointError::VersionMismatch(v.to_string())),
            None => return Err(CheckpointError::BadMagic),
        }
        let config_len = r.u64()? as usize;
        let config_echo = String::from_utf8(r.take(config_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("config echo is not UTF-8".into()))?;
        let step = r.u64()?;
        let tensors = r.tensor_table()?;
        let opt_count = r.u64()? as usize;
        let mut optimizers = Vec::with_capacity(opt_count);
        for _ in 0..opt_count {
            let name_len = r.u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("optimizer name is not UTF-8".into()))?;
            let step = r.u64()?;
            let moments = r.tensor_table()?;
            optimizers.push(OptimizerBlock { name, step, moments });
        }
        let rng_state = r.u64()?;
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes after rng state".into()));
        }
        Ok(Checkpoint { config_echo, step, tensors, optimizers, rng_state })
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor_table(out: &mut Vec<u8>, tensors: &[NamedTensor]) {
    put_u64(out, tensors.len() as u64);
    for (name, shape, data) in tensors {
        put_u64(out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_u64(out, shape.len() as u64);
        for &d in shape {
            put_u64(out, d as u64);
        }
        for &x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn line(&mut self) -> Result<&'a str, CheckpointError> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(CheckpointError::BadMagic)?;
        let s = std::str::from_utf8(&rest[..end]).map_err(|_| CheckpointError::BadMagic)?;
        self.pos += end + 1;
        Ok(s)
    }

    fn tensor_table(&mut self) -> Result<Vec<NamedTensor>, CheckpointError> {
        let count = self.u64()? as usize;
        let mut out = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = self.u64()? as usize;
            let name = String::from_utf8(self.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let rank = self.u64()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = self.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push((name, shape, data));
        }
        Ok(out)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = checkpoint.to_bytes();
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        Checkpoint {
            config_echo: "seed = 1\nsteps = 10\n".into(),
            step: 10,
            tensors: vec![
                ("enc.l0.w".into(), vec![2, 3], vec![0.5, -1.25, 3.75, 0.0, 1.0, -2.0]),
                ("enc.l0.b".into(), vec![3], vec![0.0, 0.1, -0.1]),
            ],
            optimizers: vec![OptimizerBlock {
                name: "g".into(),
                step: 10,
                moments: vec![
                    ("enc.l0.w.m".into(), vec![6], vec![0.1; 6]),
                    ("enc.l0.w.v".into(), vec![6], vec![0.2; 6]),
                ],
            }],
            rng_state: 0xDEAD_BEEF_0123_4567,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let parsed = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, ckpt);
        assert_eq!(parsed.to_bytes(), bytes);
    }

    #[test]
    fn empty_tensor_table_is_a_valid_minimal_checkpoint() {
        let ckpt = Checkpoint {
            config_echo: String::new(),
            step: 0,
            tensors: vec![],
            optimizers: vec![],
            rng_state: 1,
        };
        let parsed = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(parsed, ckpt);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn future_version_is_rejected_distinctly() {
        let ckpt = sample_checkpoint();
        let mut bytes = format!("{MAGIC} 2\n").into_bytes();
        let body_rest = &ckpt.to_bytes()[format!("{MAGIC} {VERSION}\n").len()..];
        bytes.extend_from_slice(&body_rest[..body_rest.len() - 8]);
        let checksum = fnv1a64(&bytes);
        bytes.extend_from_slice(&checksum.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::VersionMismatch(v)) if v == "2"
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample_checkpoint().to_bytes();
        // removing trailing bytes invalidates the checksum or truncates
        let cut = &bytes[..bytes.len() - 13];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(CheckpointError::ChecksumMismatch) | Err(CheckpointError::Truncated)
        ));
        assert!(matches!(Checkpoint::from_bytes(&[]), Err(CheckpointError::Truncated)));
    }

    #[test]
    fn bit_flip_fails_the_checksum() {
        let mut bytes = sample_checkpoint().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::ChecksumMismatch)
        ));
    }

    #[test]
    fn save_and_load_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn optimizer_block_round_trips_adam_state() {
        let mut state = AdamState::<f32>::new();
        state.step = 42;
        state
            .moments
            .insert("w".into(), Moments { m: vec![1.0, 2.0], v: vec![3.0, 4.0] });
        let block = OptimizerBlock::capture("d", &state);
        let restored = block.restore().unwrap();
        assert_eq!(restored.step, 42);
        assert_eq!(restored.moments["w"].m, vec![1.0, 2.0]);
        assert_eq!(restored.moments["w"].v, vec![3.0, 4.0]);
    }
}
