//! File formats: masked-output tables, spectrum files, the epoch-series
//! manifest, and plot-ready CSV emission. All writers go through a
//! temp-file-plus-rename so concurrent workers never expose partial files.

mod csv_out;
mod manifest;
mod spectrum;
mod table;

pub use csv_out::{
    write_epoch_series_csv, write_fusiform_csv, write_order_profile_csv, write_phase_report,
    write_similarity_csv,
};
pub use manifest::{EpochEntry, SampleRecord, SeriesManifest, TableRef};
pub use spectrum::{read_spectrum_file, write_spectrum_file};
pub use table::{read_table_file, write_table_file, write_table_file_text, MASK_CONVENTION};

use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Write a file atomically: to a temp sibling first, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
