//! Plot-ready CSV emission. Every writer starts with a versioned comment
//! line and a fixed header row so downstream plotting scripts stay stable;
//! floats print in shortest round-trip form, which also makes the bytes
//! deterministic.

use super::write_atomic;
use crate::dynamics::{EpochRecord, PhaseReport};
use crate::metrics::OrderProfile;
use crate::Result;
use std::fmt::Write as _;
use std::path::Path;

/// order, j_pos, j_neg, count, one row per order.
pub fn write_order_profile_csv(path: &Path, profile: &OrderProfile) -> Result<()> {
    let mut out = String::new();
    out.push_str("# orders-csv v1\n");
    out.push_str("order,j_pos,j_neg,count\n");
    for k in 1..=profile.var_count() {
        writeln!(out, "{k},{},{},{}", profile.j_pos(k), profile.j_neg(k), profile.salient_count(k))
            .unwrap();
    }
    write_atomic(path, out.as_bytes())
}

/// order, similarity, the per-order generalization curve.
pub fn write_similarity_csv(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# jaccard-csv v1\n");
    out.push_str("order,similarity\n");
    for (k, sim) in curve {
        writeln!(out, "{k},{sim}").unwrap();
    }
    write_atomic(path, out.as_bytes())
}

/// epoch, mean_order, j_pos_1..n, j_neg_1..n, train_loss, test_loss, gap.
pub fn write_epoch_series_csv(path: &Path, series: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# epochs-csv v1\n");
    let n = series.first().map(|r| r.profile.var_count()).unwrap_or(0);
    out.push_str("epoch,mean_order");
    for k in 1..=n {
        write!(out, ",j_pos_{k}").unwrap();
    }
    for k in 1..=n {
        write!(out, ",j_neg_{k}").unwrap();
    }
    out.push_str(",train_loss,test_loss,gap\n");
    for rec in series {
        write!(out, "{},{}", rec.epoch, rec.profile.mean_salient_order()).unwrap();
        for k in 1..=n {
            write!(out, ",{}", rec.profile.j_pos(k)).unwrap();
        }
        for k in 1..=n {
            write!(out, ",{}", rec.profile.j_neg(k)).unwrap();
        }
        writeln!(out, ",{},{},{}", rec.train_loss, rec.test_loss, rec.gap()).unwrap();
    }
    write_atomic(path, out.as_bytes())
}

/// order, mc_pos, mc_neg, expected_pos, expected_neg.
pub fn write_fusiform_csv(
    path: &Path,
    mc: &[(f64, f64)],
    expected: &[(f64, f64)],
) -> Result<()> {
    let mut out = String::new();
    out.push_str("# fusiform-csv v1\n");
    out.push_str("order,mc_pos,mc_neg,expected_pos,expected_neg\n");
    for k in 1..mc.len().min(expected.len()) {
        writeln!(out, "{k},{},{},{},{}", mc[k].0, mc[k].1, expected[k].0, expected[k].1).unwrap();
    }
    write_atomic(path, out.as_bytes())
}

/// The phase report as a structured text record.
pub fn write_phase_report(path: &Path, report: &PhaseReport) -> Result<()> {
    let mut out = String::new();
    out.push_str("phase-report v1\n");
    writeln!(out, "transition_epoch: {}", report.transition_label()).unwrap();
    writeln!(
        out,
        "gap_rise_epoch: {}",
        report.gap_rise_epoch.map(|e| e.to_string()).unwrap_or_else(|| "none".into())
    )
    .unwrap();
    writeln!(
        out,
        "alignment_offset: {}",
        report.alignment_offset.map(|o| o.to_string()).unwrap_or_else(|| "n/a".into())
    )
    .unwrap();
    writeln!(out, "phase1_trend: {}", report.phase1_trend).unwrap();
    writeln!(
        out,
        "phase2_trend: {}",
        report.phase2_trend.map(|t| t.to_string()).unwrap_or_else(|| "n/a".into())
    )
    .unwrap();
    write_atomic(path, out.as_bytes())
}
