//! Epoch-series aggregation and phase detection.
//!
//! Training shows two phases in the order profile: the mean salient order
//! first falls (noise interactions of medium/high order get suppressed) and
//! then rises again (increasingly complex interactions get learned). The
//! detector takes the argmin of the smoothed mean-order series as the phase
//! boundary and compares it against the epoch where the train/test loss gap
//! starts to climb.

use crate::metrics::{is_unimodal, pairwise_sum, OrderProfile};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One epoch's aggregate order profile and losses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub profile: OrderProfile,
    pub train_loss: f64,
    pub test_loss: f64,
}

impl EpochRecord {
    pub fn gap(&self) -> f64 {
        self.test_loss - self.train_loss
    }
}

/// Result of the phase-transition analysis over one epoch series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// Epoch whose smoothed mean salient order is minimal; `None` when the
    /// minimum sits on the final epoch (phase 2 not entered).
    pub transition_epoch: Option<u64>,
    /// First epoch where the smoothed gap starts a sustained climb.
    pub gap_rise_epoch: Option<u64>,
    /// `transition_epoch - gap_rise_epoch`, when both exist.
    pub alignment_offset: Option<i64>,
    /// Fitted slope of the smoothed mean order per epoch, up to the
    /// transition (0 when fewer than two points).
    pub phase1_trend: f64,
    /// Same from the transition on; `None` when phase 2 was not entered.
    pub phase2_trend: Option<f64>,
    /// Mean salient order per record after smoothing, for reporting.
    pub smoothed_mean_order: Vec<(u64, f64)>,
}

impl PhaseReport {
    pub fn transition_label(&self) -> String {
        match self.transition_epoch {
            Some(e) => e.to_string(),
            None => "not-entered".to_string(),
        }
    }
}

/// Elementwise mean of several profiles (same n); the mean salient order of
/// the aggregate is recomputed from the aggregated strengths.
pub fn aggregate_epoch(profiles: &[OrderProfile]) -> Result<OrderProfile> {
    let Some(first) = profiles.first() else {
        return Err(Error::NotEnoughData { needed: 1, got: 0, what: "profiles" });
    };
    let n = first.var_count();
    if profiles.iter().any(|p| p.var_count() != n) {
        return Err(Error::DimensionMismatch("profiles disagree on n".into()));
    }
    let count = profiles.len() as f64;
    let mut j_pos = vec![0.0; n + 1];
    let mut j_neg = vec![0.0; n + 1];
    let mut counts = vec![0.0; n + 1];
    let mut column = vec![0.0; profiles.len()];
    for k in 0..=n {
        for (i, p) in profiles.iter().enumerate() {
            column[i] = p.j_pos(k);
        }
        j_pos[k] = pairwise_sum(&column) / count;
        for (i, p) in profiles.iter().enumerate() {
            column[i] = p.j_neg(k);
        }
        j_neg[k] = pairwise_sum(&column) / count;
        for (i, p) in profiles.iter().enumerate() {
            column[i] = p.salient_count(k);
        }
        counts[k] = pairwise_sum(&column) / count;
    }
    Ok(OrderProfile::from_parts(n, j_pos, j_neg, counts))
}

/// Centered moving average with window truncation at the boundaries.
pub fn centered_moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Least-squares slope of y against x; 0 when fewer than two points.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    sxy / sxx
}

/// Relative threshold on the smoothed gap's forward difference for the
/// gap-rise epoch.
pub const GAP_RISE_THETA: f64 = 0.05;

/// Locate the phase transition and the loss-gap rise in an epoch series.
///
/// Records are sorted and de-duplicated by epoch first. The transition is
/// the argmin of the `window`-smoothed mean salient order (first index on
/// ties); a minimum on the final record means phase 2 was never entered.
/// The gap rise is the first record after the smoothed gap's minimum that
/// sits at least `GAP_RISE_THETA * (max gap - min gap)` above that minimum
/// and stays there for `window` consecutive records. The relative threshold
/// makes the rule invariant to affine rescaling of the losses, and the
/// level-crossing form keeps it meaningful on non-uniformly spaced
/// checkpoint grids.
pub fn detect_transition(series: &[EpochRecord], smooth_window: usize) -> Result<PhaseReport> {
    let mut records: Vec<&EpochRecord> = series.iter().collect();
    records.sort_by_key(|r| r.epoch);
    records.dedup_by_key(|r| r.epoch);
    if records.len() < 3 {
        return Err(Error::NotEnoughData { needed: 3, got: records.len(), what: "epochs" });
    }
    let window = smooth_window.max(1);
    let epochs: Vec<u64> = records.iter().map(|r| r.epoch).collect();
    let mean_orders: Vec<f64> = records.iter().map(|r| r.profile.mean_salient_order()).collect();
    let smoothed = centered_moving_average(&mean_orders, window);

    let argmin = smoothed
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let entered = argmin + 1 != smoothed.len();
    let transition_epoch = entered.then(|| epochs[argmin]);

    // gap rise on the smoothed gap series
    let gaps: Vec<f64> = records.iter().map(|r| r.gap()).collect();
    let sgaps = centered_moving_average(&gaps, window);
    let (lo, hi) = sgaps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| {
        (lo.min(g), hi.max(g))
    });
    let gap_argmin = sgaps
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let level = lo + GAP_RISE_THETA * (hi - lo);
    let mut gap_rise_epoch = None;
    for i in gap_argmin..sgaps.len() {
        let run_end = (i + window).min(sgaps.len());
        if run_end - i == window && sgaps[i..run_end].iter().all(|&g| g > level) {
            gap_rise_epoch = Some(epochs[i]);
            break;
        }
    }

    let xs: Vec<f64> = epochs.iter().map(|&e| e as f64).collect();
    let (phase1_trend, phase2_trend) = if entered {
        (
            linear_slope(&xs[..=argmin], &smoothed[..=argmin]),
            Some(linear_slope(&xs[argmin..], &smoothed[argmin..])),
        )
    } else {
        (linear_slope(&xs, &smoothed), None)
    };

    let alignment_offset = match (transition_epoch, gap_rise_epoch) {
        (Some(t), Some(g)) => Some(t as i64 - g as i64),
        _ => None,
    };

    Ok(PhaseReport {
        transition_epoch,
        gap_rise_epoch,
        alignment_offset,
        phase1_trend,
        phase2_trend,
        smoothed_mean_order: epochs.into_iter().zip(smoothed).collect(),
    })
}

/// Check the untrained-network profile: total per-order strength must be
/// unimodal (after window-3 smoothing) with the peak within `tolerance`
/// orders of n/2. Returns the pass flag and the peak order.
pub fn initial_fusiform_check(record: &EpochRecord, tolerance: f64) -> (bool, usize) {
    let profile = &record.profile;
    let n = profile.var_count();
    let strengths: Vec<f64> = (1..=n).map(|k| profile.strength(k)).collect();
    let smoothed = centered_moving_average(&strengths, 3);
    let (unimodal, peak_idx) = is_unimodal(&smoothed, 1e-9);
    let peak_order = peak_idx + 1;
    let centered = (peak_order as f64 - n as f64 / 2.0).abs() <= tolerance;
    (unimodal && centered, peak_order)
}
