//! Epoch-series manifest: which table file belongs to which (epoch, sample),
//! plus per-epoch losses and per-sample bookkeeping.

use super::write_atomic;
use crate::toy::Split;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub category: u32,
    pub split: Split,
    #[serde(default)]
    pub relabeled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRef {
    pub sample_id: String,
    /// Path relative to the manifest's directory.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEntry {
    pub epoch: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub tables: Vec<TableRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesManifest {
    pub format_version: u32,
    pub n: u32,
    pub score: String,
    pub samples: Vec<SampleRecord>,
    pub epochs: Vec<EpochEntry>,
}

impl SeriesManifest {
    pub fn new(n: u32, score: String) -> Self {
        SeriesManifest { format_version: 1, n, score, samples: Vec::new(), epochs: Vec::new() }
    }

    pub fn sample(&self, id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, json.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = super::read_bytes(path)?;
        let manifest: SeriesManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        if manifest.format_version != 1 {
            return Err(Error::parse(
                path,
                format!("unsupported version {}", manifest.format_version),
            ));
        }
        Ok(manifest)
    }

    /// Resolve a table path relative to the manifest location.
    pub fn resolve(&self, manifest_path: &Path, table: &TableRef) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&table.path)
    }

    /// Structural validation: strictly increasing epochs, every table's
    /// sample declared, consistent sample sets across epochs, files present.
    pub fn validate(&self, manifest_path: &Path) -> Result<()> {
        if !self.epochs.windows(2).all(|w| w[0].epoch < w[1].epoch) {
            return Err(Error::Manifest("epochs must be strictly increasing".into()));
        }
        let declared: BTreeSet<&str> = self.samples.iter().map(|s| s.id.as_str()).collect();
        if declared.len() != self.samples.len() {
            return Err(Error::Manifest("duplicate sample ids".into()));
        }
        let mut reference: Option<BTreeSet<&str>> = None;
        for entry in &self.epochs {
            if !entry.train_loss.is_finite() || !entry.test_loss.is_finite() {
                return Err(Error::Manifest(format!("non-finite loss at epoch {}", entry.epoch)));
            }
            let ids: BTreeSet<&str> = entry.tables.iter().map(|t| t.sample_id.as_str()).collect();
            if ids.len() != entry.tables.len() {
                return Err(Error::Manifest(format!("duplicate table at epoch {}", entry.epoch)));
            }
            for id in &ids {
                if !declared.contains(id) {
                    return Err(Error::Manifest(format!(
                        "epoch {} references undeclared sample '{id}'",
                        entry.epoch
                    )));
                }
            }
            match &reference {
                None => reference = Some(ids),
                Some(expect) => {
                    if *expect != ids {
                        return Err(Error::Manifest(format!(
                            "epoch {} covers a different sample set",
                            entry.epoch
                        )));
                    }
                }
            }
            for table in &entry.tables {
                let path = self.resolve(manifest_path, table);
                if !path.is_file() {
                    return Err(Error::Manifest(format!("missing table file {}", path.display())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_with_files(dir: &Path) -> (SeriesManifest, PathBuf) {
        use crate::lattice::{MaskedOutputTable, TableMeta};
        let mut m = SeriesManifest::new(3, "logit".into());
        m.samples.push(SampleRecord { id: "a".into(), category: 0, split: Split::Train, relabeled: false });
        for epoch in [0u64, 1, 2] {
            let rel = format!("tables/a_e{epoch}.motbl");
            let table = MaskedOutputTable::new(
                3,
                vec![epoch as f64; 8],
                TableMeta { sample_id: "a".into(), epoch, ..Default::default() },
            )
            .unwrap();
            super::super::write_table_file(&dir.join(&rel), &table, &[0, 1, 2]).unwrap();
            m.epochs.push(EpochEntry {
                epoch,
                train_loss: 0.5,
                test_loss: 0.6,
                tables: vec![TableRef { sample_id: "a".into(), path: rel }],
            });
        }
        let path = dir.join("run.manifest.json");
        (m, path)
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let (m, path) = manifest_with_files(dir.path());
        m.write(&path).unwrap();
        let back = SeriesManifest::read(&path).unwrap();
        assert_eq!(m, back);
        back.validate(&path).unwrap();
    }

    #[test]
    fn validation_catches_inconsistencies() {
        let dir = tempfile::tempdir().unwrap();
        let (mut m, path) = manifest_with_files(dir.path());
        m.write(&path).unwrap();

        // missing file
        let mut broken = m.clone();
        broken.epochs[1].tables[0].path = "tables/nope.motbl".into();
        assert!(broken.validate(&path).is_err());

        // undeclared sample
        let mut broken = m.clone();
        broken.epochs[0].tables[0].sample_id = "ghost".into();
        assert!(broken.validate(&path).is_err());

        // out-of-order epochs
        m.epochs.swap(0, 2);
        assert!(m.validate(&path).is_err());
    }

    #[test]
    fn identical_manifests_serialize_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (m, path) = manifest_with_files(dir.path());
        m.write(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        m.write(&path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }
}
