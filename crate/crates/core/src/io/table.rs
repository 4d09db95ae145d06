//! Masked-output table container: a one-line JSON header followed by the
//! `2^n` payload floats in mask-integer order. The default container is
//! binary (little-endian f64); a structured-text twin exists for debugging.
//! Either form round-trips payloads bit-exactly.

use super::{read_bytes, write_atomic};
use crate::lattice::{MaskedOutputTable, TableMeta};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const BIN_MAGIC: &[u8] = b"MOTBL1\n";
const TXT_MAGIC: &[u8] = b"MOTTXT1\n";

/// The one mask convention this toolkit speaks.
pub const MASK_CONVENTION: &str = "bit i (LSB) = variable i present";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TableHeader {
    format_version: u32,
    n: u32,
    variable_ids: Vec<u32>,
    mask_convention: String,
    score: String,
    baseline: String,
    sample_id: String,
    epoch: u64,
    #[serde(default)]
    clamped: bool,
}

impl TableHeader {
    fn build(table: &MaskedOutputTable, variable_ids: &[u32]) -> Self {
        TableHeader {
            format_version: 1,
            n: table.var_count() as u32,
            variable_ids: variable_ids.to_vec(),
            mask_convention: MASK_CONVENTION.to_string(),
            score: table.meta.score.clone(),
            baseline: table.meta.baseline.clone(),
            sample_id: table.meta.sample_id.clone(),
            epoch: table.meta.epoch,
            clamped: table.meta.clamped,
        }
    }

    fn check(&self, path: &Path) -> Result<()> {
        if self.format_version != 1 {
            return Err(Error::parse(path, format!("unsupported version {}", self.format_version)));
        }
        if self.mask_convention != MASK_CONVENTION {
            return Err(Error::parse(path, format!("unknown mask convention '{}'", self.mask_convention)));
        }
        if !self.variable_ids.is_empty() && self.variable_ids.len() != self.n as usize {
            return Err(Error::parse(path, "variable_ids length does not match n"));
        }
        Ok(())
    }

    fn into_meta(self) -> TableMeta {
        TableMeta {
            sample_id: self.sample_id,
            epoch: self.epoch,
            score: self.score,
            baseline: self.baseline,
            clamped: self.clamped,
        }
    }
}

/// Write the binary container.
pub fn write_table_file(path: &Path, table: &MaskedOutputTable, variable_ids: &[u32]) -> Result<()> {
    let header = serde_json::to_string(&TableHeader::build(table, variable_ids))
        .expect("header serializes");
    let mut bytes = Vec::with_capacity(BIN_MAGIC.len() + header.len() + 9 + table.values().len() * 8);
    bytes.extend_from_slice(BIN_MAGIC);
    bytes.extend_from_slice(header.as_bytes());
    bytes.push(b'\n');
    for v in table.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Write the structured-text container (one value per line; values print in
/// shortest round-trip form so parsing reproduces them bit-exactly).
pub fn write_table_file_text(
    path: &Path,
    table: &MaskedOutputTable,
    variable_ids: &[u32],
) -> Result<()> {
    let header = serde_json::to_string(&TableHeader::build(table, variable_ids))
        .expect("header serializes");
    let mut text = String::with_capacity(header.len() + table.values().len() * 20);
    text.push_str(std::str::from_utf8(TXT_MAGIC).unwrap());
    text.push_str(&header);
    text.push('\n');
    for v in table.values() {
        text.push_str(&format!("{v}\n"));
    }
    write_atomic(path, text.as_bytes())
}

/// Read either container form, sniffing the magic.
pub fn read_table_file(path: &Path) -> Result<MaskedOutputTable> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(BIN_MAGIC) {
        read_binary(path, &bytes[BIN_MAGIC.len()..])
    } else if bytes.starts_with(TXT_MAGIC) {
        read_text(path, &bytes[TXT_MAGIC.len()..])
    } else {
        Err(Error::parse(path, "not a masked-output table file"))
    }
}

fn split_header(path: &Path, rest: &[u8]) -> Result<(TableHeader, usize)> {
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, "missing header line"))?;
    let header: TableHeader = serde_json::from_slice(&rest[..nl])
        .map_err(|e| Error::parse(path, format!("header: {e}")))?;
    header.check(path)?;
    Ok((header, nl + 1))
}

fn read_binary(path: &Path, rest: &[u8]) -> Result<MaskedOutputTable> {
    let (header, at) = split_header(path, rest)?;
    let payload = &rest[at..];
    let expected = 1usize << header.n;
    if payload.len() != expected * 8 {
        return Err(Error::parse(
            path,
            format!("payload holds {} bytes, expected {}", payload.len(), expected * 8),
        ));
    }
    let values: Vec<f64> =
        payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    MaskedOutputTable::new(header.n as usize, values, header.into_meta())
        .map_err(|e| Error::parse(path, e.to_string()))
}

fn read_text(path: &Path, rest: &[u8]) -> Result<MaskedOutputTable> {
    let (header, at) = split_header(path, rest)?;
    let body = std::str::from_utf8(&rest[at..]).map_err(|_| Error::parse(path, "non-utf8 body"))?;
    let expected = 1usize << header.n;
    let mut values = Vec::with_capacity(expected);
    for line in body.lines() {
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, format!("bad payload value '{line}'")))?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::parse(
            path,
            format!("payload holds {} values, expected {expected}", values.len()),
        ));
    }
    MaskedOutputTable::new(header.n as usize, values, header.into_meta())
        .map_err(|e| Error::parse(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample_table(n: usize, seed: u64) -> MaskedOutputTable {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        MaskedOutputTable::new(
            n,
            (0..1usize << n).map(|_| rng.random_range(-10.0..10.0)).collect(),
            TableMeta {
                sample_id: "s00042".into(),
                epoch: 17,
                score: "logit".into(),
                baseline: "feature-mean".into(),
                clamped: false,
            },
        )
        .unwrap()
    }

    #[test]
    fn binary_and_text_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let table = sample_table(6, 1);
        let ids: Vec<u32> = (0..6).collect();

        let bin = dir.path().join("t.motbl");
        write_table_file(&bin, &table, &ids).unwrap();
        assert_eq!(read_table_file(&bin).unwrap(), table);

        let txt = dir.path().join("t.mottxt");
        write_table_file_text(&txt, &table, &ids).unwrap();
        assert_eq!(read_table_file(&txt).unwrap(), table);
    }

    #[test]
    fn corrupt_payload_length_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.motbl");
        let table = sample_table(4, 2);
        write_table_file(&path, &table, &[0, 1, 2, 3]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_table_file(&path).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn unknown_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus");
        std::fs::write(&path, b"WHAT1\n{}").unwrap();
        assert!(read_table_file(&path).is_err());
    }
}
