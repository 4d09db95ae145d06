//! AND-OR decomposition of a masked-output table.
//!
//! The table's output on each masked sample splits as
//! `v(x_T) = v_and(x_T) + v_or(x_T) + v(empty)` with
//! `v_and(x_T) = 0.5 (v(x_T) - v(empty)) + gamma_T` and
//! `v_or(x_T) = 0.5 (v(x_T) - v(empty)) - gamma_T`. The AND effects are the
//! Möbius transform of `v_and`; the OR effects come from the complement
//! kernel applied to `v_or`. The free per-mask parameter `gamma_T` is either
//! fixed at zero or optimized so the combined interaction spectrum has the
//! smallest L1 mass, under a box constraint tied to the table's dynamic
//! range.

use crate::lattice::{
    complement_reindex_in_place, mobius_in_place, superset_mobius_in_place, zeta_in_place,
    LatticeVector, MaskedOutputTable, SubsetMask,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// The per-mask split parameter and the ratio defining its box constraint:
/// `|gamma_T| <= bound_ratio * max_T |v(x_T) - v(empty)|`.
#[derive(Clone, Debug)]
pub struct GammaSplit {
    gamma: LatticeVector,
    bound_ratio: f64,
}

impl GammaSplit {
    pub fn new(gamma: LatticeVector, bound_ratio: f64) -> Result<Self> {
        if !bound_ratio.is_finite() || bound_ratio < 0.0 {
            return Err(Error::InvalidConfig(format!("bound ratio {bound_ratio} must be >= 0")));
        }
        if gamma[0] != 0.0 {
            return Err(Error::InvalidConfig("gamma at the empty mask must be 0".into()));
        }
        Ok(GammaSplit { gamma, bound_ratio })
    }

    pub fn zero(n: usize) -> Result<Self> {
        Ok(GammaSplit { gamma: LatticeVector::zeros(n)?, bound_ratio: DEFAULT_BOUND_RATIO })
    }

    pub fn gamma(&self) -> &LatticeVector {
        &self.gamma
    }

    pub fn bound_ratio(&self) -> f64 {
        self.bound_ratio
    }

    /// Check the box constraint against the table that this split is for.
    fn check_against(&self, table: &MaskedOutputTable) -> Result<()> {
        if self.gamma.var_count() != table.var_count() {
            return Err(Error::VarCountMismatch(self.gamma.var_count(), table.var_count()));
        }
        let bound = self.bound_ratio * table.delta_scale();
        // Tiny slack so splits sitting exactly on the boundary survive
        // floating-point round-trips.
        let slack = 1e-12 * bound.max(1.0);
        for (mask, &g) in self.gamma.as_slice().iter().enumerate() {
            if g.abs() > bound + slack {
                return Err(Error::ConstraintViolation { mask, value: g, bound });
            }
        }
        Ok(())
    }
}

pub const DEFAULT_BOUND_RATIO: f64 = 0.5;

/// Optimizer bookkeeping attached to a sparsified spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub objective_initial: f64,
    pub objective_final: f64,
    pub iterations_run: usize,
    /// False when the iteration budget ran out before the stall criterion.
    pub converged: bool,
    /// Best objective seen after each iteration; non-increasing.
    pub trace: Vec<f64>,
}

/// Provenance of one spectrum.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub sample_id: String,
    pub epoch: u64,
    pub score: String,
    pub baseline: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub optimizer: Option<OptimizerTrace>,
}

impl From<&crate::lattice::TableMeta> for SpectrumMeta {
    fn from(m: &crate::lattice::TableMeta) -> Self {
        SpectrumMeta {
            sample_id: m.sample_id.clone(),
            epoch: m.epoch,
            score: m.score.clone(),
            baseline: m.baseline.clone(),
            optimizer: None,
        }
    }
}

/// The AND and OR interaction effects of one sample, plus the split that
/// produced them. Effects at the empty mask are pinned to zero.
#[derive(Clone, Debug)]
pub struct InteractionSpectrum {
    n: usize,
    i_and: LatticeVector,
    i_or: LatticeVector,
    v_empty: f64,
    split: GammaSplit,
    pub source_meta: SpectrumMeta,
}

impl InteractionSpectrum {
    pub fn var_count(&self) -> usize {
        self.n
    }

    pub fn i_and(&self) -> &LatticeVector {
        &self.i_and
    }

    pub fn i_or(&self) -> &LatticeVector {
        &self.i_or
    }

    pub fn v_empty(&self) -> f64 {
        self.v_empty
    }

    pub fn split(&self) -> &GammaSplit {
        &self.split
    }

    /// Combined L1 mass over non-empty subsets, the sparsifier objective.
    pub fn l1_objective(&self) -> f64 {
        self.i_and.l1_nonempty() + self.i_or.l1_nonempty()
    }

    /// Largest |effect| across both branches.
    pub fn max_abs_effect(&self) -> f64 {
        self.i_and.max_abs_nonempty().max(self.i_or.max_abs_nonempty())
    }

    /// Rebuild a spectrum from raw parts (used by the file reader).
    pub fn from_parts(
        i_and: LatticeVector,
        i_or: LatticeVector,
        v_empty: f64,
        split: GammaSplit,
        source_meta: SpectrumMeta,
    ) -> Result<Self> {
        let n = i_and.var_count();
        if i_or.var_count() != n || split.gamma.var_count() != n {
            return Err(Error::VarCountMismatch(n, i_or.var_count()));
        }
        Ok(InteractionSpectrum { n, i_and, i_or, v_empty, split, source_meta })
    }
}

/// Saliency threshold rule. The relative rule keys off the largest absolute
/// effect in the spectrum, so one setting works across samples and epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TauRule {
    Relative(f64),
    Absolute(f64),
}

pub const DEFAULT_TAU_RATIO: f64 = 0.05;

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Relative(DEFAULT_TAU_RATIO)
    }
}

impl TauRule {
    pub fn resolve(&self, spectrum: &InteractionSpectrum) -> f64 {
        match *self {
            TauRule::Relative(r) => r * spectrum.max_abs_effect(),
            TauRule::Absolute(v) => v,
        }
    }
}

impl std::fmt::Display for TauRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TauRule::Relative(r) => write!(f, "rel:{r}"),
            TauRule::Absolute(v) => write!(f, "abs:{v}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

/// Split a table into AND and OR interaction effects under a given gamma.
pub fn decompose(table: &MaskedOutputTable, split: &GammaSplit) -> Result<InteractionSpectrum> {
    split.check_against(table)?;
    let n = table.var_count();
    let len = 1usize << n;
    let v0 = table.empty_value();
    let gamma = split.gamma.as_slice();

    let mut v_and = vec![0.0; len];
    let mut v_or = vec![0.0; len];
    for m in 0..len {
        let base = 0.5 * (table.values()[m] - v0);
        v_and[m] = base + gamma[m];
        v_or[m] = base - gamma[m];
    }

    mobius_in_place(&mut v_and);
    complement_reindex_in_place(&mut v_or);
    mobius_in_place(&mut v_or);
    for v in &mut v_or {
        *v = -*v;
    }
    // Effects at the empty set are defined as zero and excluded downstream.
    v_and[0] = 0.0;
    v_or[0] = 0.0;

    Ok(InteractionSpectrum {
        n,
        i_and: LatticeVector::new(n, v_and)?,
        i_or: LatticeVector::new(n, v_or)?,
        v_empty: v0,
        split: split.clone(),
        source_meta: SpectrumMeta::from(&table.meta),
    })
}

// ---------------------------------------------------------------------------
// Sparsification
// ---------------------------------------------------------------------------

/// Configuration for the L1 sparsifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparsifierConfig {
    /// Box-constraint ratio for gamma.
    pub bound_ratio: f64,
    /// Budget of outer descent passes.
    pub iterations: usize,
    /// Initial smoothing width for the subgradient direction, as a fraction
    /// of the table's dynamic range; annealed towards zero when a pass
    /// stalls.
    pub smoothing_init: f64,
    /// How many top-magnitude effects per branch get a targeted transfer
    /// direction each pass.
    pub top_k: usize,
    /// Reserved for stochastic tie-breaking; the default scheme is
    /// deterministic and ignores it.
    pub seed: u64,
}

impl Default for SparsifierConfig {
    fn default() -> Self {
        SparsifierConfig {
            bound_ratio: DEFAULT_BOUND_RATIO,
            iterations: 5_000,
            smoothing_init: 0.25,
            top_k: 4,
            seed: 0,
        }
    }
}

impl SparsifierConfig {
    /// Cheaper settings for batch analysis over many tables: a tight pass
    /// budget with the same descent scheme.
    pub fn fast() -> Self {
        SparsifierConfig { iterations: 48, top_k: 2, ..Default::default() }
    }
}

/// Optimizer state: gamma, the interaction tables it induces, and the
/// objective. The objective is convex and piecewise linear in gamma, so
/// descent steps use exact line searches: along any direction `d` the
/// objective is `sum_i |a_i + t b_i|`, minimized at a weighted median of the
/// breakpoints.
struct DescentState {
    base: Vec<f64>,
    gamma: Vec<f64>,
    i_and: Vec<f64>,
    i_or: Vec<f64>,
    objective: f64,
    bound: f64,
    // scratch
    b_and: Vec<f64>,
    b_or: Vec<f64>,
    breakpoints: Vec<(f64, f64)>,
}

impl DescentState {
    fn new(table: &MaskedOutputTable, bound: f64) -> Self {
        let len = 1usize << table.var_count();
        let v0 = table.empty_value();
        let base: Vec<f64> = table.values().iter().map(|v| 0.5 * (v - v0)).collect();
        let mut st = DescentState {
            base,
            gamma: vec![0.0; len],
            i_and: vec![0.0; len],
            i_or: vec![0.0; len],
            objective: 0.0,
            bound,
            b_and: vec![0.0; len],
            b_or: vec![0.0; len],
            breakpoints: Vec::with_capacity(2 * len),
        };
        st.refresh();
        st
    }

    /// Recompute interactions and objective from gamma.
    fn refresh(&mut self) {
        let len = self.base.len();
        for m in 0..len {
            self.i_and[m] = self.base[m] + self.gamma[m];
            self.i_or[m] = self.base[m] - self.gamma[m];
        }
        mobius_in_place(&mut self.i_and);
        complement_reindex_in_place(&mut self.i_or);
        mobius_in_place(&mut self.i_or);
        for v in &mut self.i_or {
            *v = -*v;
        }
        self.i_and[0] = 0.0;
        self.i_or[0] = 0.0;
        self.objective =
            self.i_and[1..].iter().map(|v| v.abs()).sum::<f64>()
                + self.i_or[1..].iter().map(|v| v.abs()).sum::<f64>();
    }

    /// Smoothed subgradient of the objective, pulled back to gamma space.
    /// `mu = 0` gives a plain sign subgradient.
    fn smoothed_subgradient(&mut self, mu: f64, out: &mut [f64]) {
        let len = self.base.len();
        let slope = |v: f64| if mu > 0.0 { (v / mu).clamp(-1.0, 1.0) } else { v.signum() };
        for m in 0..len {
            self.b_and[m] = slope(self.i_and[m]);
            self.b_or[m] = slope(self.i_or[m]);
        }
        self.b_and[0] = 0.0;
        self.b_or[0] = 0.0;
        superset_mobius_in_place(&mut self.b_and);
        superset_mobius_in_place(&mut self.b_or);
        complement_reindex_in_place(&mut self.b_or);
        for m in 0..len {
            // d|I_and|/dgamma = M^T s_and; d|I_or|/dgamma = +R M^T s_or
            // (two sign flips cancel: I_or = -M R (base - gamma)).
            out[m] = -(self.b_and[m] + self.b_or[m]);
        }
        out[0] = 0.0;
    }

    /// Exactly minimize the objective along `gamma + t * d` within the box;
    /// returns the improvement. Accepts the step only if it helps.
    fn line_search(&mut self, d: &[f64]) -> f64 {
        let len = self.base.len();
        // feasible t range from the box
        let mut t_lo = f64::NEG_INFINITY;
        let mut t_hi = f64::INFINITY;
        for m in 1..len {
            if d[m] > 0.0 {
                t_hi = t_hi.min((self.bound - self.gamma[m]) / d[m]);
                t_lo = t_lo.max((-self.bound - self.gamma[m]) / d[m]);
            } else if d[m] < 0.0 {
                t_hi = t_hi.min((-self.bound - self.gamma[m]) / d[m]);
                t_lo = t_lo.max((self.bound - self.gamma[m]) / d[m]);
            }
        }
        // NaN-propagating guard: any malformed bound kills the search.
        if t_lo.partial_cmp(&t_hi) != Some(std::cmp::Ordering::Less) {
            return 0.0;
        }

        // response of each interaction to the direction
        self.b_and.copy_from_slice(d);
        mobius_in_place(&mut self.b_and);
        self.b_or.copy_from_slice(d);
        complement_reindex_in_place(&mut self.b_or);
        mobius_in_place(&mut self.b_or);
        // I_or(t) = I_or - t * (-M R d) => slope is +M R d

        self.breakpoints.clear();
        for m in 1..len {
            for (a, b) in [(self.i_and[m], self.b_and[m]), (self.i_or[m], self.b_or[m])] {
                if b != 0.0 {
                    self.breakpoints.push((-a / b, b.abs()));
                }
            }
        }
        if self.breakpoints.is_empty() {
            return 0.0;
        }
        self.breakpoints.sort_unstable_by(|x, y| x.0.total_cmp(&y.0));

        // f'(t) = sum w_i sgn(t - r_i): the minimum sits at the weighted
        // median of the breakpoints.
        let total: f64 = self.breakpoints.iter().map(|&(_, w)| w).sum();
        let mut t_star = self.breakpoints.last().unwrap().0;
        let mut cum = 0.0;
        for &(r, w) in self.breakpoints.iter() {
            cum += w;
            if 2.0 * cum >= total {
                t_star = r;
                break;
            }
        }
        let t = t_star.clamp(t_lo, t_hi);
        if t == 0.0 {
            return 0.0;
        }

        // exact objective at t, using the linear responses
        let mut new_obj = 0.0;
        for m in 1..len {
            new_obj += (self.i_and[m] + t * self.b_and[m]).abs();
            new_obj += (self.i_or[m] + t * self.b_or[m]).abs();
        }
        if new_obj >= self.objective {
            return 0.0;
        }
        let gain = self.objective - new_obj;
        for m in 1..len {
            self.gamma[m] = (self.gamma[m] + t * d[m]).clamp(-self.bound, self.bound);
        }
        self.refresh();
        gain
    }

    /// Indices of the `k` largest |values|, skipping the empty mask. Ties
    /// prefer the larger mask: a misparked pattern's fingerprint has equal
    /// magnitudes on all subsets of its support, and the support itself is
    /// the one worth transferring.
    fn top_masks(values: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (1..values.len()).collect();
        idx.sort_unstable_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(b.cmp(&a)));
        idx.truncate(k);
        idx.retain(|&m| values[m] != 0.0);
        idx
    }
}

/// Optimize gamma for the sparsest interactions, then decompose.
///
/// First-order descent on the convex piecewise-linear L1 objective: each
/// pass runs exact line searches along (a) the branch-transfer axis
/// `gamma = t * (v - v_empty)/2`, (b) the smoothing-annealed subgradient, and
/// (c) targeted transfer directions for the largest effects of each branch
/// (`[[S subset T]]` resp. `[[S meets T]]`, whose Möbius images move exactly
/// one coefficient on their own branch). Every accepted step lowers the
/// objective, so the trace is non-increasing and the result never exceeds
/// the objective at gamma = 0.
pub fn sparsify(table: &MaskedOutputTable, cfg: &SparsifierConfig) -> Result<InteractionSpectrum> {
    if !cfg.bound_ratio.is_finite() || cfg.bound_ratio < 0.0 {
        return Err(Error::InvalidConfig(format!("bound ratio {} must be >= 0", cfg.bound_ratio)));
    }
    if cfg.iterations == 0 || !cfg.smoothing_init.is_finite() || cfg.smoothing_init < 0.0 {
        return Err(Error::InvalidConfig("iterations must be positive, smoothing >= 0".into()));
    }
    let n = table.var_count();
    let len = 1usize << n;
    let range = table.delta_scale();
    let bound = cfg.bound_ratio * range;

    let mut st = DescentState::new(table, bound);
    let objective_initial = st.objective;
    let mut trace = Vec::with_capacity(64);
    trace.push(st.objective);

    let stall_tol = 1e-12 * range.max(1.0);
    // The matching identity at the argmax mask forces the objective to be at
    // least the dynamic range; hitting it certifies optimality.
    let floor = range;
    let mu_floor = 1e-12 * range.max(1.0);
    let mut mu = cfg.smoothing_init * range;
    let mut converged = range == 0.0 || bound == 0.0 || st.objective <= stall_tol;
    let mut passes = 0usize;
    let mut dir = vec![0.0; len];

    while !converged && passes < cfg.iterations {
        passes += 1;
        let mut gained = 0.0;

        // branch-transfer axis
        dir.copy_from_slice(&st.base);
        gained += st.line_search(&dir);

        // smoothed subgradient
        st.smoothed_subgradient(mu, &mut dir);
        gained += st.line_search(&dir);

        // Targeted transfers for dominating effects. A misparked pattern
        // leaves a compact fingerprint inside its own support on the wrong
        // branch (an OR pattern shows up in the AND branch as the signed
        // inclusion-exclusion of its subsets, and vice versa), so for every
        // dominating mask both transfer kinds are tried.
        let mut candidates = DescentState::top_masks(&st.i_and, cfg.top_k);
        candidates.extend(DescentState::top_masks(&st.i_or, cfg.top_k));
        candidates.sort_unstable();
        candidates.dedup();
        for m in candidates {
            let s = m as u32;
            // gamma -= t [[S subset T]] moves I_and(S) alone on the AND side
            for (t_mask, slot) in dir.iter_mut().enumerate() {
                *slot = if t_mask as u32 & s == s { -1.0 } else { 0.0 };
            }
            gained += st.line_search(&dir);
            // gamma -= t [[S meets T]] moves I_or(S) alone on the OR side
            for (t_mask, slot) in dir.iter_mut().enumerate() {
                *slot = if t_mask as u32 & s != 0 { -1.0 } else { 0.0 };
            }
            gained += st.line_search(&dir);
        }

        trace.push(st.objective);
        if st.objective <= floor * (1.0 + 1e-12) {
            converged = true;
            break;
        }
        // Relative stall: progress below a ppb of the objective means this
        // smoothing level is exhausted.
        if gained <= stall_tol.max(1e-9 * st.objective) {
            if mu <= mu_floor {
                converged = true;
                break;
            }
            mu = (mu / 8.0).max(mu_floor);
        }
    }

    let objective_final = st.objective;
    let gamma = std::mem::take(&mut st.gamma);
    let split = GammaSplit::new(LatticeVector::new(n, gamma)?, cfg.bound_ratio)?;
    let mut spectrum = decompose(table, &split)?;
    spectrum.source_meta.optimizer = Some(OptimizerTrace {
        objective_initial,
        objective_final,
        iterations_run: passes,
        converged,
        trace,
    });
    Ok(spectrum)
}

// ---------------------------------------------------------------------------
// Saliency
// ---------------------------------------------------------------------------

/// Masks whose absolute effect strictly exceeds `tau`, per branch. The empty
/// set is never included.
pub fn salient_sets(
    spectrum: &InteractionSpectrum,
    tau: f64,
) -> (BTreeSet<SubsetMask>, BTreeSet<SubsetMask>) {
    let n = spectrum.n;
    let mut and_set = BTreeSet::new();
    let mut or_set = BTreeSet::new();
    for m in 1..1usize << n {
        let mask = SubsetMask::new(m as u32, n).expect("mask in range");
        if spectrum.i_and[m].abs() > tau {
            and_set.insert(mask);
        }
        if spectrum.i_or[m].abs() > tau {
            or_set.insert(mask);
        }
    }
    (and_set, or_set)
}

// ---------------------------------------------------------------------------
// Universal matching
// ---------------------------------------------------------------------------

/// Reconstruction accuracy of a spectrum against its source table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub n: usize,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    /// max(1, max_T |v(x_T)|), the scale the tolerance is relative to.
    pub scale: f64,
    pub worst_mask: u32,
    pub restricted_to_salient: bool,
    pub tau: f64,
}

impl MatchReport {
    pub fn relative_max_error(&self) -> f64 {
        self.max_abs_error / self.scale
    }
}

/// Check that every masked output is reconstructed by the interaction
/// effects: `v(x_T) = sum_{S subset of T, S != empty} I_and(S) +
/// sum_{S: S intersects T} I_or(S) + v(empty)`. With `restrict_to_salient`,
/// only effects above `tau` enter the sums.
pub fn verify_universal_matching(
    spectrum: &InteractionSpectrum,
    table: &MaskedOutputTable,
    restrict_to_salient: bool,
    tau: f64,
) -> Result<MatchReport> {
    let n = spectrum.n;
    if table.var_count() != n {
        return Err(Error::VarCountMismatch(n, table.var_count()));
    }
    let len = 1usize << n;
    let full = len - 1;

    let mut and_part: Vec<f64> = spectrum.i_and.as_slice().to_vec();
    let mut or_part: Vec<f64> = spectrum.i_or.as_slice().to_vec();
    if restrict_to_salient {
        for m in 1..len {
            if and_part[m].abs() <= tau {
                and_part[m] = 0.0;
            }
            if or_part[m].abs() <= tau {
                or_part[m] = 0.0;
            }
        }
    }
    and_part[0] = 0.0;
    or_part[0] = 0.0;

    let or_total: f64 = or_part.iter().sum();
    // zeta gives subset sums; OR contributions come in through the
    // complement: sum_{S ∩ T != empty} = total - sum_{S subset of N\T}.
    zeta_in_place(&mut and_part);
    zeta_in_place(&mut or_part);

    let mut max_err = 0.0f64;
    let mut worst = 0u32;
    let mut sum_err = 0.0f64;
    for t in 0..len {
        let recon = and_part[t] + (or_total - or_part[full ^ t]) + spectrum.v_empty;
        let err = (recon - table.values()[t]).abs();
        sum_err += err;
        if err > max_err {
            max_err = err;
            worst = t as u32;
        }
    }
    let scale = table.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(MatchReport {
        n,
        max_abs_error: max_err,
        mean_abs_error: sum_err / len as f64,
        scale,
        worst_mask: worst,
        restricted_to_salient: restrict_to_salient,
        tau: if restrict_to_salient { tau } else { 0.0 },
    })
}

// ---------------------------------------------------------------------------
// Stability conditions
// ---------------------------------------------------------------------------

/// Outcome of the three relative-stability checks behind the sparsity bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConditions {
    /// Condition 1: no AND effect above `tol` beyond order `max_order`.
    pub cond1_pass: bool,
    pub cond1_max_order: usize,
    pub cond1_worst_mask: Option<u32>,
    pub cond1_worst_value: f64,
    /// Condition 2: mean output lift is non-decreasing in the unmasked count.
    pub cond2_pass: bool,
    /// Witness (k', k) with k' < k and u(k) < u(k') - tol, if any.
    pub cond2_witness: Option<(usize, usize)>,
    /// u[k] = mean over |S| = k of v(x_S) - v(empty).
    pub mean_lift: Vec<f64>,
    /// Condition 3: smallest p > 0 with u(k') >= (k'/k)^p u(k) for all
    /// k' <= k, found on a log grid then refined by bisection.
    pub cond3_pass: bool,
    pub cond3_p: Option<f64>,
    pub cond3_witness: Option<(usize, usize)>,
}

const COND3_GRID_LO: f64 = 0.1;
const COND3_GRID_HI: f64 = 10.0;
const COND3_GRID_POINTS: usize = 41;
const COND3_BISECT_STEPS: usize = 60;

fn cond3_feasible(u: &[f64], p: f64, tol: f64) -> Option<(usize, usize)> {
    let n = u.len() - 1;
    for k in 1..=n {
        for kp in 1..k {
            let floor = (kp as f64 / k as f64).powf(p) * u[k];
            if u[kp] < floor - tol {
                return Some((kp, k));
            }
        }
    }
    None
}

/// Per-order mean lift of a table: `u[k] = E_{|S|=k}[v(x_S) - v(empty)]`.
pub fn mean_lift_by_order(table: &MaskedOutputTable) -> Vec<f64> {
    let n = table.var_count();
    let v0 = table.empty_value();
    let mut sums = vec![0.0f64; n + 1];
    let mut counts = vec![0u64; n + 1];
    for (m, &v) in table.values().iter().enumerate() {
        let k = (m as u32).count_ones() as usize;
        sums[k] += v - v0;
        counts[k] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

/// Evaluate the three stability conditions on a table and its spectrum.
pub fn check_stability_conditions(
    table: &MaskedOutputTable,
    spectrum: &InteractionSpectrum,
    max_order: usize,
    tol: f64,
) -> Result<StabilityConditions> {
    let n = table.var_count();
    if spectrum.var_count() != n {
        return Err(Error::VarCountMismatch(spectrum.var_count(), n));
    }
    if max_order > n {
        return Err(Error::OrderOutOfRange { k: max_order, n });
    }

    // Condition 1: high-order AND effects absent.
    let mut worst_mask = None;
    let mut worst_value = 0.0f64;
    for m in 1..1usize << n {
        if (m as u32).count_ones() as usize > max_order {
            let v = spectrum.i_and[m].abs();
            if v > worst_value {
                worst_value = v;
                worst_mask = Some(m as u32);
            }
        }
    }
    let cond1_pass = worst_value <= tol;

    // Condition 2: monotone mean lift.
    let u = mean_lift_by_order(table);
    let mut cond2_witness = None;
    let mut worst_drop = tol;
    for k in 1..=n {
        for kp in 0..k {
            let drop = u[kp] - u[k];
            if drop > worst_drop {
                worst_drop = drop;
                cond2_witness = Some((kp, k));
            }
        }
    }
    let cond2_pass = cond2_witness.is_none();

    // Condition 3: polynomial lower bound on the decay.
    let mut cond3_p = None;
    let mut cond3_witness = None;
    let mut prev_infeasible: Option<f64> = None;
    let log_lo = COND3_GRID_LO.ln();
    let log_hi = COND3_GRID_HI.ln();
    for i in 0..COND3_GRID_POINTS {
        let p = (log_lo + (log_hi - log_lo) * i as f64 / (COND3_GRID_POINTS - 1) as f64).exp();
        match cond3_feasible(&u, p, tol) {
            None => {
                let refined = match prev_infeasible {
                    Some(mut lo) => {
                        let mut hi = p;
                        for _ in 0..COND3_BISECT_STEPS {
                            let mid = 0.5 * (lo + hi);
                            if cond3_feasible(&u, mid, tol).is_none() {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        hi
                    }
                    None => p, // feasible from the grid floor on
                };
                cond3_p = Some(refined);
                break;
            }
            Some(w) => {
                prev_infeasible = Some(p);
                cond3_witness = Some(w);
            }
        }
    }
    let cond3_pass = cond3_p.is_some();
    if cond3_pass {
        cond3_witness = None;
    }

    Ok(StabilityConditions {
        cond1_pass,
        cond1_max_order: max_order,
        cond1_worst_mask: if cond1_pass { None } else { worst_mask },
        cond1_worst_value: worst_value,
        cond2_pass,
        cond2_witness,
        mean_lift: u,
        cond3_pass,
        cond3_p,
        cond3_witness,
    })
}

/// The exponent range the salient-count bound `O(n^kappa / tau)` is
/// empirically expected to fall into.
pub const KAPPA_EMPIRICAL_RANGE: (f64, f64) = (0.9, 1.2);

/// Counting summary used by the sparsity-bound study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub tau: f64,
    pub salient_count: usize,
    pub n: usize,
    pub conditions: Option<StabilityConditions>,
}

impl SparsityReport {
    pub fn from_spectrum(spectrum: &InteractionSpectrum, tau: f64) -> Self {
        let (a, o) = salient_sets(spectrum, tau);
        SparsityReport { tau, salient_count: a.len() + o.len(), n: spectrum.var_count(), conditions: None }
    }

    /// True when a fitted exponent sits in the empirically expected range.
    pub fn kappa_in_expected_range(kappa: f64) -> bool {
        (KAPPA_EMPIRICAL_RANGE.0..=KAPPA_EMPIRICAL_RANGE.1).contains(&kappa)
    }
}

/// Fit `log(count * tau) = log c + kappa * log n` by least squares over
/// observations from at least three distinct variable counts. Returns
/// `(kappa, rms_residual)`.
pub fn estimate_kappa(reports: &[(usize, f64, usize)]) -> Result<(f64, f64)> {
    let distinct: BTreeSet<usize> = reports.iter().map(|r| r.0).collect();
    if distinct.len() < 3 {
        return Err(Error::NotEnoughData { needed: 3, got: distinct.len(), what: "distinct n values" });
    }
    let mut xs = Vec::with_capacity(reports.len());
    let mut ys = Vec::with_capacity(reports.len());
    for &(n, tau, count) in reports {
        if n == 0 || !tau.is_finite() || tau <= 0.0 || count == 0 {
            return Err(Error::InvalidConfig(format!(
                "kappa fit needs n >= 1, tau > 0, count >= 1; got ({n}, {tau}, {count})"
            )));
        }
        xs.push((n as f64).ln());
        ys.push((count as f64 * tau).ln());
    }
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let kappa = sxy / sxx;
    let intercept = my - kappa * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + kappa * x);
            r * r
        })
        .sum();
    Ok((kappa, (rss / len).sqrt()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lattice::TableMeta;

    pub(crate) fn table(n: usize, values: Vec<f64>) -> MaskedOutputTable {
        MaskedOutputTable::new(n, values, TableMeta::default()).unwrap()
    }

    pub(crate) fn rand_table(n: usize, seed: u64) -> MaskedOutputTable {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        table(n, (0..1usize << n).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    /// v(x_T) = amp iff `planted` is a subset of T.
    pub(crate) fn planted_and_table(n: usize, planted: u32, amp: f64) -> MaskedOutputTable {
        let values = (0..1usize << n)
            .map(|m| if m as u32 & planted == planted { amp } else { 0.0 })
            .collect();
        table(n, values)
    }

    /// v(x_T) = amp iff `planted` intersects T.
    pub(crate) fn planted_or_table(n: usize, planted: u32, amp: f64) -> MaskedOutputTable {
        let values = (0..1usize << n)
            .map(|m| if m as u32 & planted != 0 { amp } else { 0.0 })
            .collect();
        table(n, values)
    }

    #[test]
    fn decompose_constant_table_is_all_zero() {
        let t = table(4, vec![3.0; 16]);
        let s = decompose(&t, &GammaSplit::zero(4).unwrap()).unwrap();
        assert_eq!(s.v_empty(), 3.0);
        assert!(s.i_and().as_slice().iter().all(|&v| v == 0.0));
        assert!(s.i_or().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decompose_all_mass_to_and_reduces_to_mobius() {
        // gamma_T = 0.5 (v(x_T) - v(empty)) puts everything in the AND branch.
        let t = table(2, vec![0.0, 1.0, 2.0, 5.0]);
        let gamma: Vec<f64> = t.values().iter().map(|v| 0.5 * (v - t.empty_value())).collect();
        let split = GammaSplit::new(LatticeVector::new(2, gamma).unwrap(), 0.5).unwrap();
        let s = decompose(&t, &split).unwrap();
        assert!(s.i_or().as_slice().iter().all(|&v| v.abs() < 1e-12));
        let expect = [0.0, 1.0, 2.0, 2.0];
        for m in 0..4 {
            assert!((s.i_and()[m] - expect[m]).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_holds_for_random_split() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
        let t = rand_table(6, 23);
        let bound = DEFAULT_BOUND_RATIO * t.delta_scale();
        let mut gamma = vec![0.0; 64];
        for g in gamma.iter_mut().skip(1) {
            *g = rng.random_range(-bound..bound);
        }
        let split = GammaSplit::new(LatticeVector::new(6, gamma).unwrap(), DEFAULT_BOUND_RATIO).unwrap();
        let s = decompose(&t, &split).unwrap();
        let report = verify_universal_matching(&s, &t, false, 0.0).unwrap();
        assert!(report.max_abs_error < 1e-9 * report.scale, "{report:?}");
    }

    #[test]
    fn matching_holds_for_100_random_tables_n_le_10() {
        for n in [4usize, 7, 10] {
            for seed in 0..(if n == 10 { 20 } else { 40 }) {
                let t = rand_table(n, 1000 + seed);
                let s = decompose(&t, &GammaSplit::zero(n).unwrap()).unwrap();
                let report = verify_universal_matching(&s, &t, false, 0.0).unwrap();
                assert!(report.max_abs_error < 1e-9 * report.scale);
            }
        }
    }

    #[test]
    fn decompose_is_linear_in_the_table_at_gamma_zero() {
        let t1 = rand_table(5, 31);
        let t2 = rand_table(5, 37);
        let (a, b) = (1.75, -0.6);
        let combined = table(
            5,
            t1.values().iter().zip(t2.values()).map(|(x, y)| a * x + b * y).collect(),
        );
        let split = GammaSplit::zero(5).unwrap();
        let s1 = decompose(&t1, &split).unwrap();
        let s2 = decompose(&t2, &split).unwrap();
        let sc = decompose(&combined, &split).unwrap();
        for m in 0..32usize {
            assert!((sc.i_and()[m] - (a * s1.i_and()[m] + b * s2.i_and()[m])).abs() < 1e-9);
            assert!((sc.i_or()[m] - (a * s1.i_or()[m] + b * s2.i_or()[m])).abs() < 1e-9);
        }
    }

    #[test]
    fn decompose_rejects_bad_inputs() {
        let t = rand_table(4, 5);
        // dimension mismatch
        assert!(decompose(&t, &GammaSplit::zero(5).unwrap()).is_err());
        // constraint violation
        let mut g = vec![0.0; 16];
        g[3] = 100.0 * t.delta_scale();
        let split = GammaSplit::new(LatticeVector::new(4, g).unwrap(), 0.5).unwrap();
        assert!(matches!(decompose(&t, &split), Err(Error::ConstraintViolation { .. })));
        // gamma at empty must be zero
        let mut g = vec![0.0; 16];
        g[0] = 0.5;
        assert!(GammaSplit::new(LatticeVector::new(4, g).unwrap(), 0.5).is_err());
    }

    #[test]
    fn sparsify_constant_table_is_zero_objective() {
        let t = table(5, vec![-1.5; 32]);
        let s = sparsify(&t, &SparsifierConfig::default()).unwrap();
        assert_eq!(s.l1_objective(), 0.0);
        let tr = s.source_meta.optimizer.as_ref().unwrap();
        assert_eq!(tr.objective_final, 0.0);
        assert!(tr.converged);
    }

    #[test]
    fn sparsify_planted_and_recovers_single_interaction() {
        let planted = 0b000111u32;
        let t = planted_and_table(6, planted, 5.0);
        let cfg = SparsifierConfig::default();
        let s = sparsify(&t, &cfg).unwrap();
        let obj = s.l1_objective();
        // Analytic floor: the objective can never drop below
        // max_T |v(x_T) - v(empty)| (matching identity at that T).
        assert!(obj >= 5.0 - 1e-9);
        assert!(obj <= 5.0 * 1.05, "objective {obj} above 5% of the floor");
        assert!(s.i_and()[planted as usize] > 4.5);
        // every other effect is small
        for m in 1..64usize {
            if m as u32 != planted {
                assert!(s.i_and()[m].abs() < 0.25, "AND {m}: {}", s.i_and()[m]);
            }
            assert!(s.i_or()[m].abs() < 0.25, "OR {m}: {}", s.i_or()[m]);
        }
        // wrong branch carries < 5% of the total mass
        assert!(s.i_or().l1_nonempty() < 0.05 * obj);
    }

    #[test]
    fn sparsify_planted_or_recovers_single_interaction() {
        let planted = 0b000011u32;
        let t = planted_or_table(6, planted, 3.0);
        let s = sparsify(&t, &SparsifierConfig::default()).unwrap();
        let obj = s.l1_objective();
        assert!(obj >= 3.0 - 1e-9);
        assert!(obj <= 3.0 * 1.05, "objective {obj}");
        assert!(s.i_or()[planted as usize] > 2.7);
        assert!(s.i_and().l1_nonempty() < 0.05 * obj);
    }

    #[test]
    fn sparsify_never_beats_gamma_zero_and_trace_monotone() {
        for seed in 0..5 {
            let t = rand_table(5, 400 + seed);
            let zero_obj = decompose(&t, &GammaSplit::zero(5).unwrap()).unwrap().l1_objective();
            let cfg = SparsifierConfig { iterations: 800, ..Default::default() };
            let s = sparsify(&t, &cfg).unwrap();
            assert!(s.l1_objective() <= zero_obj + 1e-12);
            let tr = s.source_meta.optimizer.as_ref().unwrap();
            assert!(tr.trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
            // matching still holds at the optimized split
            let report = verify_universal_matching(&s, &t, false, 0.0).unwrap();
            assert!(report.max_abs_error < 1e-9 * report.scale);
        }
    }

    #[test]
    fn sparsify_rejects_negative_bound() {
        let t = rand_table(3, 9);
        let cfg = SparsifierConfig { bound_ratio: -1.0, ..Default::default() };
        assert!(sparsify(&t, &cfg).is_err());
    }

    #[test]
    fn salient_sets_basics() {
        let planted = 0b000111u32;
        let t = planted_and_table(6, planted, 5.0);
        let s = sparsify(&t, &SparsifierConfig::default()).unwrap();
        let tau = TauRule::Relative(DEFAULT_TAU_RATIO).resolve(&s);
        let (and_set, or_set) = salient_sets(&s, tau);
        assert_eq!(and_set.len(), 1);
        assert_eq!(and_set.iter().next().unwrap().bits(), planted);
        assert!(or_set.is_empty());

        // everything below tau -> empty sets
        let (a, o) = salient_sets(&s, 10.0);
        assert!(a.is_empty() && o.is_empty());

        // tau = 0 returns every nonzero effect
        let (a0, o0) = salient_sets(&s, 0.0);
        let nz_and = (1..64).filter(|&m| s.i_and()[m] != 0.0).count();
        let nz_or = (1..64).filter(|&m| s.i_or()[m] != 0.0).count();
        assert_eq!(a0.len(), nz_and);
        assert_eq!(o0.len(), nz_or);
    }

    #[test]
    fn salient_cardinality_non_increasing_in_tau() {
        let t = rand_table(6, 77);
        let s = decompose(&t, &GammaSplit::zero(6).unwrap()).unwrap();
        let mut last = usize::MAX;
        for i in 0..20 {
            let tau = s.max_abs_effect() * i as f64 / 19.0;
            let (a, o) = salient_sets(&s, tau);
            let cnt = a.len() + o.len();
            assert!(cnt <= last);
            last = cnt;
        }
    }

    #[test]
    fn restricted_matching_error_bounded_by_dropped_mass() {
        let t = planted_and_table(6, 0b000111, 5.0);
        let s = sparsify(&t, &SparsifierConfig::default()).unwrap();
        let tau = 0.25;
        let report = verify_universal_matching(&s, &t, true, tau).unwrap();
        assert!(report.max_abs_error < 0.25, "{report:?}");
    }

    #[test]
    fn zeroed_effect_shows_up_as_matching_error_at_supersets() {
        let t = rand_table(5, 91);
        let s = decompose(&t, &GammaSplit::zero(5).unwrap()).unwrap();
        // pick the largest AND effect and zero it out by hand
        let (mask, magnitude) = (1..32usize)
            .map(|m| (m, s.i_and()[m].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let mut tampered_and = s.i_and().clone();
        tampered_and[mask] = 0.0;
        let tampered = InteractionSpectrum::from_parts(
            tampered_and,
            s.i_or().clone(),
            s.v_empty(),
            s.split().clone(),
            s.source_meta.clone(),
        )
        .unwrap();
        let report = verify_universal_matching(&tampered, &t, false, 0.0).unwrap();
        assert!((report.max_abs_error - magnitude).abs() < 1e-9);
        assert_eq!(report.worst_mask & mask as u32, mask as u32, "worst T must contain S");
    }

    #[test]
    fn stability_linear_positive_table() {
        // v(x_T) = sum of w_i over T with positive weights; u(k) = k * mean(w).
        let n = 6;
        let w = [0.5, 0.9, 1.3, 0.7, 1.1, 0.4];
        let values: Vec<f64> = (0..1usize << n)
            .map(|m| (0..n).filter(|&i| m & (1 << i) != 0).map(|i| w[i]).sum())
            .collect();
        let t = table(n, values);
        let s = decompose(&t, &GammaSplit::zero(n).unwrap()).unwrap();
        let c = check_stability_conditions(&t, &s, 1, 1e-9).unwrap();
        assert!(c.cond2_pass, "{c:?}");
        assert!(c.cond3_pass);
        let p = c.cond3_p.unwrap();
        assert!((p - 1.0).abs() < 0.1, "p = {p}");
        let mean_w = w.iter().sum::<f64>() / n as f64;
        for k in 0..=n {
            assert!((c.mean_lift[k] - k as f64 * mean_w).abs() < 1e-9);
        }
    }

    #[test]
    fn stability_constant_table_passes_non_strictly() {
        let t = table(5, vec![2.0; 32]);
        let s = decompose(&t, &GammaSplit::zero(5).unwrap()).unwrap();
        let c = check_stability_conditions(&t, &s, 5, 1e-9).unwrap();
        assert!(c.cond1_pass && c.cond2_pass && c.cond3_pass);
        assert!(c.mean_lift.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn stability_detects_monotonicity_violation_with_witness() {
        // u(k) follows [0, 1, 4, 2, 5, 6, 7]: the dip at k=3 violates (2,3).
        let n = 6;
        let by_order = [0.0, 1.0, 4.0, 2.0, 5.0, 6.0, 7.0];
        let values: Vec<f64> =
            (0..1usize << n).map(|m| by_order[(m as u32).count_ones() as usize]).collect();
        let t = table(n, values);
        let s = decompose(&t, &GammaSplit::zero(n).unwrap()).unwrap();
        let c = check_stability_conditions(&t, &s, n, 1e-6).unwrap();
        assert!(!c.cond2_pass);
        assert_eq!(c.cond2_witness, Some((2, 3)));
    }

    #[test]
    fn kappa_fit_recovers_planted_exponent() {
        // counts = c * n^1.0 / tau exactly
        let tau = 0.05;
        let reports: Vec<(usize, f64, usize)> =
            [6usize, 8, 10, 12].iter().map(|&n| (n, tau, (3.0 * n as f64 / tau).round() as usize)).collect();
        let (kappa, _res) = estimate_kappa(&reports).unwrap();
        assert!((kappa - 1.0).abs() < 2e-3, "kappa = {kappa}");
    }

    #[test]
    fn kappa_fit_with_noise_stays_near_planted() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let tau = 0.02;
        let reports: Vec<(usize, f64, usize)> = [6usize, 8, 10, 12, 14, 16]
            .iter()
            .map(|&n| {
                let noise = 1.0 + rng.random_range(-0.01..0.01);
                (n, tau, (2.0 * (n as f64).powf(1.2) * noise / tau).round() as usize)
            })
            .collect();
        let (kappa, _) = estimate_kappa(&reports).unwrap();
        assert!((1.1..=1.3).contains(&kappa), "kappa = {kappa}");
    }

    #[test]
    fn kappa_fit_rejects_degenerate_inputs() {
        // only two distinct n values even though three points are given
        let reports = vec![(8, 0.05, 100), (8, 0.05, 120), (10, 0.05, 130)];
        assert!(estimate_kappa(&reports).is_err());
    }
}
