//! Self-describing checkpoint files.
//!
//! Layout: an 8-byte magic, a little-endian `u32` header length, a JSON
//! header (format version, run config, step, parameter manifest, optimizer
//! metadata), then a flat `f64` little-endian payload: every parameter
//! array in manifest order, followed by the Adam first and second moments
//! in the same order when optimizer state is present. Everything needed to
//! resume or evaluate — including the full [`RunConfig`] — travels in the
//! file itself.

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::optim::AdamState;
use crate::model::pipeline::Model;
use crate::model::ParamSet;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RJCKPT1\n";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    config: RunConfig,
    params: Vec<ParamEntry>,
    /// Adam step count; `None` means no optimizer state in the payload.
    optimizer_t: Option<u64>,
}

/// A loaded checkpoint: config, parameters by name, optional optimizer.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub params: Vec<(String, ArrayD<f64>)>,
    pub opt: Option<AdamState>,
}

impl Checkpoint {
    /// Rebuild the model this checkpoint was saved from and load its
    /// weights. The manifest must match the freshly registered parameters
    /// name-for-name in order.
    pub fn instantiate(&self) -> Result<(ParamSet, Model)> {
        let mut ps = ParamSet::new(self.config.run.seed);
        let model = self.config.build_model(&mut ps)?;
        if ps.len() != self.params.len() {
            return Err(Error::protocol(format!(
                "checkpoint holds {} parameters, model registers {}",
                self.params.len(),
                ps.len()
            )));
        }
        for (id, (name, value)) in ps.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            if ps.name(id) != name {
                return Err(Error::protocol(format!(
                    "checkpoint parameter order mismatch: {:?} vs model {:?}",
                    name,
                    ps.name(id)
                )));
            }
            ps.set_value(name, value.clone())?;
        }
        Ok((ps, model))
    }
}

fn write_array(w: &mut impl Write, a: &ArrayD<f64>) -> std::io::Result<()> {
    for &v in a.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array(r: &mut impl Read, shape: &[usize]) -> Result<ArrayD<f64>> {
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::protocol("checkpoint payload ended early"))?;
    let values = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), values)
        .map_err(|e| Error::protocol(format!("bad checkpoint array: {e}")))
}

/// Write a checkpoint atomically (temp file + rename in the target dir).
pub fn save_checkpoint(
    path: &Path,
    config: &RunConfig,
    ps: &ParamSet,
    step: u64,
    opt: Option<&AdamState>,
) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        step,
        config: config.clone(),
        params: ps
            .entries()
            .map(|(name, value)| ParamEntry { name: name.to_string(), shape: value.shape().to_vec() })
            .collect(),
        optimizer_t: opt.map(|s| s.t),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for id in ps.ids() {
            write_array(&mut w, ps.value(id))?;
        }
        if let Some(state) = opt {
            for a in state.m.iter().chain(state.v.iter()) {
                write_array(&mut w, a)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read and fully validate a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| Error::config(format!("cannot open checkpoint {}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::protocol("checkpoint shorter than its magic"))?;
    if &magic != MAGIC {
        return Err(Error::protocol(format!("not a checkpoint file (magic {magic:02x?})")));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::protocol("checkpoint header length missing"))?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::protocol("checkpoint header truncated"))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::protocol(format!("checkpoint header does not parse: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::protocol(format!(
            "checkpoint format version {} unsupported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    header.config.validate()?;
    let mut params = Vec::with_capacity(header.params.len());
    for entry in &header.params {
        params.push((entry.name.clone(), read_array(&mut r, &entry.shape)?));
    }
    let opt = match header.optimizer_t {
        Some(t) => {
            let mut m = Vec::with_capacity(header.params.len());
            for entry in &header.params {
                m.push(read_array(&mut r, &entry.shape)?);
            }
            let mut v = Vec::with_capacity(header.params.len());
            for entry in &header.params {
                v.push(read_array(&mut r, &entry.shape)?);
            }
            Some(AdamState { t, m, v })
        }
        None => None,
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::protocol("checkpoint has trailing bytes after payload"));
    }
    Ok(Checkpoint { config: header.config, step: header.step, params, opt })
}
