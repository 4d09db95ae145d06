//! Spectrum container: same layout idea as the table file, with three
//! payloads (AND effects, OR effects, gamma) after the header.

use super::{read_bytes, write_atomic};
use crate::interaction::{GammaSplit, InteractionSpectrum, SpectrumMeta};
use crate::lattice::LatticeVector;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8] = b"SPECF1\n";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SpectrumHeader {
    format_version: u32,
    n: u32,
    v_empty: f64,
    bound_ratio: f64,
    sample_id: String,
    epoch: u64,
    score: String,
    baseline: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    objective_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    objective_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    optimizer_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    optimizer_converged: Option<bool>,
}

pub fn write_spectrum_file(path: &Path, spectrum: &InteractionSpectrum) -> Result<()> {
    let meta = &spectrum.source_meta;
    let opt = meta.optimizer.as_ref();
    let header = SpectrumHeader {
        format_version: 1,
        n: spectrum.var_count() as u32,
        v_empty: spectrum.v_empty(),
        bound_ratio: spectrum.split().bound_ratio(),
        sample_id: meta.sample_id.clone(),
        epoch: meta.epoch,
        score: meta.score.clone(),
        baseline: meta.baseline.clone(),
        objective_initial: opt.map(|o| o.objective_initial),
        objective_final: opt.map(|o| o.objective_final),
        optimizer_iterations: opt.map(|o| o.iterations_run),
        optimizer_converged: opt.map(|o| o.converged),
    };
    let header = serde_json::to_string(&header).expect("header serializes");
    let len = spectrum.i_and().len();
    let mut bytes = Vec::with_capacity(MAGIC.len() + header.len() + 1 + len * 24);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(header.as_bytes());
    bytes.push(b'\n');
    for payload in [spectrum.i_and(), spectrum.i_or(), spectrum.split().gamma()] {
        for v in payload.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_spectrum_file(path: &Path) -> Result<InteractionSpectrum> {
    let bytes = read_bytes(path)?;
    if !bytes.starts_with(MAGIC) {
        return Err(Error::parse(path, "not a spectrum file"));
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, "missing header line"))?;
    let header: SpectrumHeader = serde_json::from_slice(&rest[..nl])
        .map_err(|e| Error::parse(path, format!("header: {e}")))?;
    if header.format_version != 1 {
        return Err(Error::parse(path, format!("unsupported version {}", header.format_version)));
    }
    let len = 1usize << header.n;
    let payload = &rest[nl + 1..];
    if payload.len() != len * 24 {
        return Err(Error::parse(
            path,
            format!("payload holds {} bytes, expected {}", payload.len(), len * 24),
        ));
    }
    let mut parts = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |count: usize| -> Vec<f64> { parts.by_ref().take(count).collect() };
    let i_and = LatticeVector::new(header.n as usize, take(len))
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let i_or = LatticeVector::new(header.n as usize, take(len))
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let gamma = LatticeVector::new(header.n as usize, take(len))
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let split = GammaSplit::new(gamma, header.bound_ratio)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    InteractionSpectrum::from_parts(
        i_and,
        i_or,
        header.v_empty,
        split,
        SpectrumMeta {
            sample_id: header.sample_id,
            epoch: header.epoch,
            score: header.score,
            baseline: header.baseline,
            optimizer: None,
        },
    )
    .map_err(|e| Error::parse(path, e.to_string()))
}
