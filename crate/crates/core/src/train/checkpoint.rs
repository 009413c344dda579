//! Binary checkpoint: magic, format version, a JSON header describing every
//! block, the blocks as little-endian `f64`, and a SHA-256 trailer over all
//! preceding bytes. Nothing is returned unless the whole file verifies.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Cursor, EpochTrace, OnlineTrace, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::model::{BundleOptim, ModelBundle, ModelDims};
use crate::nn::AdamConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CNGANCKP";
const DIGEST_LEN: usize = 32;

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    pub optim: BundleOptim,
    pub rng: ChaCha8Rng,
    pub cursor: Cursor,
    pub offline_trace: Vec<EpochTrace>,
    pub online_trace: Vec<OnlineTrace>,
    pub report: EvalReport,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    /// Decimal, as JSON numbers cannot carry 128 bits.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct GroupHeader {
    label: String,
    blocks: Vec<(String, usize)>,
    adam: AdamConfig,
    adam_step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    dims: ModelDims,
    rng: RngState,
    cursor: Cursor,
    groups: Vec<GroupHeader>,
    offline_trace: Vec<EpochTrace>,
    online_trace: Vec<OnlineTrace>,
    report: EvalReport,
}

pub fn write_checkpoint<W: Write>(c: &Checkpoint, mut w: W) -> Result<()> {
    let groups: Vec<GroupHeader> = c
        .bundle
        .groups()
        .iter()
        .zip(c.optim.states())
        .map(|(p, st)| GroupHeader {
            label: p.label().to_string(),
            blocks: p.block_names().into_iter().zip(p.blocks().iter().map(|b| b.len())).collect(),
            adam: st.config,
            adam_step: st.step,
        })
        .collect();
    let header = Header {
        config: c.config.clone(),
        dims: c.bundle.dims,
        rng: RngState {
            seed: c.rng.get_seed().to_vec(),
            stream: c.rng.get_stream(),
            word_pos: c.rng.get_word_pos().to_string(),
        },
        cursor: c.cursor,
        groups,
        offline_trace: c.offline_trace.clone(),
        online_trace: c.online_trace.clone(),
        report: c.report.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header encoding: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (p, st) in c.bundle.groups().iter().zip(c.optim.states()) {
        for block in p.blocks().into_iter().chain(st.m.iter().map(Vec::as_slice)).chain(st.v.iter().map(Vec::as_slice)) {
            for x in block {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    w.write_all(&buf)?;
    Ok(())
}

fn take<'b>(bytes: &'b [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'b [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let mut pos = MAGIC.len();
    let version = u32::from_le_bytes(take(body, &mut pos, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch, file is corrupted".into()));
    }
    let header_len = u64::from_le_bytes(take(body, &mut pos, 8, "header length")?.try_into().unwrap());
    let header_len = usize::try_from(header_len).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let header: Header = serde_json::from_slice(take(body, &mut pos, header_len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    // Rebuild the architecture, then overwrite every block.
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let mut bundle = ModelBundle::new(header.dims, &header.config.optimizer, &mut scratch)
        .map_err(|e| Error::Checkpoint(format!("cannot rebuild model: {e}")))?;
    let mut optim = BundleOptim::new(&bundle, &header.config.optimizer);
    if header.groups.len() != 6 {
        return Err(Error::Checkpoint(format!("expected 6 parameter groups, found {}", header.groups.len())));
    }
    let mut read_block = |dst: &mut [f64], name: &str| -> Result<()> {
        let raw = take(body, &mut pos, dst.len() * 8, name)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    };
    for ((p, st), gh) in bundle.groups_mut().into_iter().zip(optim.states_mut()).zip(&header.groups) {
        let names = p.block_names();
        let shapes: Vec<(String, usize)> = names.into_iter().zip(p.blocks().iter().map(|b| b.len())).collect();
        if shapes != gh.blocks || p.label() != gh.label {
            return Err(Error::Checkpoint(format!(
                "group `{}` layout {:?} does not match the model ({:?})",
                gh.label, gh.blocks, shapes
            )));
        }
        for (block, (name, _)) in p.blocks_mut().into_iter().zip(&gh.blocks) {
            read_block(block, name)?;
        }
        for (block, (name, _)) in st.m.iter_mut().zip(&gh.blocks) {
            read_block(block, &format!("{name} first moment"))?;
        }
        for (block, (name, _)) in st.v.iter_mut().zip(&gh.blocks) {
            read_block(block, &format!("{name} second moment"))?;
        }
        st.config = gh.adam;
        st.step = gh.adam_step;
    }
    if pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing byte(s)", body.len() - pos)));
    }

    let seed: [u8; 32] = header
        .rng
        .seed
        .as_slice()
        .try_into()
        .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|e| Error::Checkpoint(format!("rng position: {e}")))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);

    Ok(Checkpoint {
        config: header.config,
        bundle,
        optim,
        rng,
        cursor: header.cursor,
        offline_trace: header.offline_trace,
        online_trace: header.online_trace,
        report: header.report,
    })
}

/// Writes via a temporary sibling and a rename, so readers never see a partial file.
pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(c, &mut buf)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&fs::read(path)?)
}
