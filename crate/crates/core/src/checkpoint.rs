//! Single-file checkpoints: one JSON header line, then the parameters and
//! memories as little-endian `f64` blocks in a fixed order:
//!
//! 1. user tower, 2. item tower, 3. rating head (each layer: weights
//!    row-major, then bias),
//! 4. profile memory (`K × d_u`, row-major),
//! 5. the `K` gradient slots (user-tower layout),
//! 6. the `K` task slots (`d_e × 2d_e`, row-major).

use std::fs;
use std::io::{BufRead, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{FeatureMemory, TaskMemory};
use crate::meta::{MetaHyper, MetaState};
use crate::model::{ModelDims, ParamSet};
use crate::numerics::{Matrix, Params};

pub const CHECKPOINT_FORMAT: &str = "coldstart-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    pub user_widths: Vec<usize>,
    pub item_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub slots: usize,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub user_schema: String,
    pub item_schema: String,
    pub hyper: MetaHyper,
    /// Number of `f64` values after the header line.
    pub payload_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: MetaState,
}

fn payload(state: &MetaState) -> Vec<f64> {
    let mut out = state.global.flatten();
    out.extend_from_slice(state.features.profiles().as_slice());
    for g in state.features.grads() {
        out.extend(g.flatten());
    }
    for s in state.tasks.slots() {
        out.extend_from_slice(s.as_slice());
    }
    out
}

impl Checkpoint {
    pub fn new(state: MetaState, seed: u64, epoch: usize, user_schema: &str, item_schema: &str) -> Self {
        let dims = state.dims();
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dims,
            user_widths: dims.user_widths(),
            item_widths: dims.item_widths(),
            head_widths: dims.head_widths(),
            slots: state.slots(),
            seed,
            epoch,
            user_schema: user_schema.into(),
            item_schema: item_schema.into(),
            hyper: state.hyper,
            payload_len: payload(&state).len(),
        };
        Self { header, state }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let values = payload(&self.state);
        if values.len() != self.header.payload_len {
            return Err(Error::Checkpoint(format!(
                "header declares {} values, state has {}",
                self.header.payload_len,
                values.len()
            )));
        }
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        out.reserve(values.len() * 8);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = bytes;
        let mut line = Vec::new();
        reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::Checkpoint(format!("cannot read header: {e}")))?;
        let header_value: serde_json::Value = serde_json::from_slice(&line)
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let format = header_value.get("format").and_then(|v| v.as_str());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint(format!("not a checkpoint (format {format:?})")));
        }
        let version = header_value.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let header: CheckpointHeader =
            serde_json::from_value(header_value).map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;

        let mut body = Vec::new();
        reader
            .read_to_end(&mut body)
            .map_err(|e| Error::Checkpoint(format!("cannot read payload: {e}")))?;
        if body.len() != header.payload_len * 8 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header declares {} values",
                body.len(),
                header.payload_len
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")))
            .collect();
        let state = rebuild(&header, &values)?;
        Ok(Self { header, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // Write-then-rename so an interrupted save never clobbers the last good checkpoint.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn rebuild(header: &CheckpointHeader, values: &[f64]) -> Result<MetaState> {
    let dims: ModelDims = header.dims;
    dims.validate()?;
    if header.user_widths != dims.user_widths()
        || header.item_widths != dims.item_widths()
        || header.head_widths != dims.head_widths()
    {
        return Err(Error::Checkpoint("layer widths disagree with the declared dimensions".into()));
    }
    let k = header.slots;
    if k == 0 {
        return Err(Error::Checkpoint("checkpoint declares zero memory slots".into()));
    }
    let mut global = ParamSet::zeros(&dims)?;
    let mut grads = vec![global.user.clone(); k];
    let profile_len = k * dims.user_dim;
    let task_len = dims.embed_dim * 2 * dims.embed_dim;
    let expected = global.num_params() + profile_len + k * grads[0].num_params() + k * task_len;
    if values.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload holds {} values, the declared shapes need {expected}",
            values.len()
        )));
    }

    let mut rest = values;
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head
    };
    let n = global.num_params();
    global.assign(take(n));
    let profiles = Matrix::from_vec(k, dims.user_dim, take(profile_len).to_vec())?;
    for g in &mut grads {
        let n = g.num_params();
        g.assign(take(n));
    }
    let tasks = (0..k)
        .map(|_| Matrix::from_vec(dims.embed_dim, 2 * dims.embed_dim, take(task_len).to_vec()))
        .collect::<Result<Vec<_>>>()?;

    let state = MetaState {
        global,
        features: FeatureMemory::new(profiles, grads)?,
        tasks: TaskMemory::new(tasks)?,
        hyper: header.hyper,
    };
    state.check_consistency()?;
    Ok(state)
}
