//! Per-order interaction strengths, interaction vectorization, Jaccard
//! generalization similarity, and the Gaussian-noise baselines for a freshly
//! initialized network.

use crate::interaction::{salient_sets, InteractionSpectrum};
use crate::lattice::{binomial, k_subset_masks};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Strengths of the salient interactions of one spectrum (or an aggregate),
/// bucketed by order. `j_pos[k] >= 0` collects positive salient effects of
/// order `k`, `j_neg[k] <= 0` the negative ones; both branches pooled.
/// Counts are f64 so aggregates can carry fractional means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderProfile {
    n: usize,
    j_pos: Vec<f64>,
    j_neg: Vec<f64>,
    salient_count: Vec<f64>,
}

impl OrderProfile {
    pub fn zeros(n: usize) -> Self {
        OrderProfile {
            n,
            j_pos: vec![0.0; n + 1],
            j_neg: vec![0.0; n + 1],
            salient_count: vec![0.0; n + 1],
        }
    }

    pub(crate) fn from_parts(n: usize, j_pos: Vec<f64>, j_neg: Vec<f64>, salient_count: Vec<f64>) -> Self {
        OrderProfile { n, j_pos, j_neg, salient_count }
    }

    pub fn var_count(&self) -> usize {
        self.n
    }

    pub fn j_pos(&self, k: usize) -> f64 {
        self.j_pos[k]
    }

    pub fn j_neg(&self, k: usize) -> f64 {
        self.j_neg[k]
    }

    pub fn salient_count(&self, k: usize) -> f64 {
        self.salient_count[k]
    }

    /// Total strength at order k: j_pos(k) - j_neg(k) (both contribute
    /// positively).
    pub fn strength(&self, k: usize) -> f64 {
        self.j_pos[k] - self.j_neg[k]
    }

    pub fn total_strength(&self) -> f64 {
        (1..=self.n).map(|k| self.strength(k)).sum()
    }

    /// Strength-weighted mean order: sum_k k*(j_pos - j_neg) / sum_k (j_pos -
    /// j_neg); zero when there is no salient mass at all.
    pub fn mean_salient_order(&self) -> f64 {
        let total = self.total_strength();
        if total <= 0.0 {
            return 0.0;
        }
        (1..=self.n).map(|k| k as f64 * self.strength(k)).sum::<f64>() / total
    }
}

/// Per-order salient strengths of one spectrum at threshold `tau`.
pub fn order_profile(spectrum: &InteractionSpectrum, tau: f64) -> OrderProfile {
    let n = spectrum.var_count();
    let mut profile = OrderProfile::zeros(n);
    let (and_set, or_set) = salient_sets(spectrum, tau);
    for (set, effects) in [(&and_set, spectrum.i_and()), (&or_set, spectrum.i_or())] {
        for mask in set.iter() {
            let k = mask.order() as usize;
            let v = effects.get(*mask);
            profile.j_pos[k] += v.max(0.0);
            profile.j_neg[k] += v.min(0.0);
            profile.salient_count[k] += 1.0;
        }
    }
    profile
}

/// Which effects go into an interaction vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    And,
    Or,
    /// Elementwise `I_and + I_or`.
    Sum,
}

/// All order-`k` effects of one spectrum over the canonical enumeration of
/// k-subsets (ascending mask integer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderVector {
    pub n: usize,
    pub k: usize,
    pub values: Vec<f64>,
}

pub fn vectorize_order(spectrum: &InteractionSpectrum, k: usize, branch: Branch) -> Result<OrderVector> {
    let n = spectrum.var_count();
    if k == 0 || k > n {
        return Err(Error::OrderOutOfRange { k, n });
    }
    let values = k_subset_masks(n, k)
        .into_iter()
        .map(|m| {
            let m = m as usize;
            match branch {
                Branch::And => spectrum.i_and()[m],
                Branch::Or => spectrum.i_or()[m],
                Branch::Sum => spectrum.i_and()[m] + spectrum.i_or()[m],
            }
        })
        .collect();
    Ok(OrderVector { n, k, values })
}

/// Mean order-`k` interaction vector over the samples of one category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMeanVector {
    pub category: u32,
    pub mean: OrderVector,
    pub sample_count: usize,
}

/// Pairwise (cascade) summation; keeps category means stable when many
/// samples are averaged.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        len => {
            let (a, b) = values.split_at(len / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Average the order-`k` vectors of one category's samples.
pub fn category_mean(category: u32, vectors: &[OrderVector]) -> Result<CategoryMeanVector> {
    if vectors.is_empty() {
        return Err(Error::NotEnoughData { needed: 1, got: 0, what: "sample vectors" });
    }
    let (n, k, d) = (vectors[0].n, vectors[0].k, vectors[0].values.len());
    if vectors.iter().any(|v| v.n != n || v.k != k || v.values.len() != d) {
        return Err(Error::DimensionMismatch("category samples disagree on (n, k)".into()));
    }
    let mut mean = vec![0.0; d];
    let mut column = vec![0.0; vectors.len()];
    for (j, slot) in mean.iter_mut().enumerate() {
        for (i, v) in vectors.iter().enumerate() {
            column[i] = v.values[j];
        }
        *slot = pairwise_sum(&column) / vectors.len() as f64;
    }
    Ok(CategoryMeanVector {
        category,
        mean: OrderVector { n, k, values: mean },
        sample_count: vectors.len(),
    })
}

/// Jaccard similarity of two signed interaction vectors.
///
/// Each vector `w` is projected to the non-negative `[max(w,0); max(-w,0)]`
/// (length 2d), then the ratio `||min||_1 / ||max||_1` is returned. Two
/// all-zero vectors count as identical (similarity 1).
pub fn jaccard_similarity(a: &OrderVector, b: &OrderVector) -> Result<f64> {
    if a.n != b.n || a.k != b.k || a.values.len() != b.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "jaccard on (n={}, k={}, d={}) vs (n={}, k={}, d={})",
            a.n,
            a.k,
            a.values.len(),
            b.n,
            b.k,
            b.values.len()
        )));
    }
    let mut min_sum = 0.0;
    let mut max_sum = 0.0;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        // positive halves
        let (xp, yp) = (x.max(0.0), y.max(0.0));
        min_sum += xp.min(yp);
        max_sum += xp.max(yp);
        // negative halves
        let (xn, yn) = ((-x).max(0.0), (-y).max(0.0));
        min_sum += xn.min(yn);
        max_sum += xn.max(yn);
    }
    if max_sum == 0.0 {
        return Ok(1.0);
    }
    Ok(min_sum / max_sum)
}

/// Per-order mean Jaccard similarity between matching train/test category
/// means. Both sides must cover exactly the same (k, category) pairs.
pub fn generalization_curve(
    train_means: &[CategoryMeanVector],
    test_means: &[CategoryMeanVector],
) -> Result<Vec<(usize, f64)>> {
    use std::collections::BTreeMap;
    let key = |v: &CategoryMeanVector| (v.mean.k, v.category);
    let train: BTreeMap<_, _> = train_means.iter().map(|v| (key(v), v)).collect();
    let test: BTreeMap<_, _> = test_means.iter().map(|v| (key(v), v)).collect();
    if train.len() != train_means.len() || test.len() != test_means.len() {
        return Err(Error::CategoryMismatch("duplicate (k, category) entries".into()));
    }
    let train_keys: Vec<_> = train.keys().copied().collect();
    let test_keys: Vec<_> = test.keys().copied().collect();
    if train_keys != test_keys {
        return Err(Error::CategoryMismatch(format!(
            "train has {} pairs, test has {}, and they differ",
            train_keys.len(),
            test_keys.len()
        )));
    }
    let mut by_order: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (k_c, tr) in &train {
        let te = test[k_c];
        let sim = jaccard_similarity(&tr.mean, &te.mean)?;
        by_order.entry(k_c.0).or_default().push(sim);
    }
    Ok(by_order
        .into_iter()
        .map(|(k, sims)| (k, pairwise_sum(&sims) / sims.len() as f64))
        .collect())
}

/// Closed-form per-order expectations when every interaction is i.i.d.
/// Gaussian noise with standard deviation `sigma`: the positive strength of
/// order k has mean `C(n,k) * sigma / sqrt(2*pi)` and the negative strength
/// its negation. Binomial counts make the curve fusiform in k.
pub fn noise_strength_expectation(n: usize, k: usize, sigma: f64) -> (f64, f64) {
    let e_pos = binomial(n, k) as f64 * sigma / (2.0 * std::f64::consts::PI).sqrt();
    (e_pos, -e_pos)
}

/// Per-order empirical means of the positive/negative interaction strengths
/// under i.i.d. Gaussian interactions, estimated over `trials` draws of the
/// whole lattice.
///
/// Each trial uses its own counter-derived RNG stream, so trials run in
/// parallel yet the totals are bit-identical for a fixed seed.
pub fn fusiform_monte_carlo(
    n: usize,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if n == 0 || n > crate::lattice::MAX_VARS {
        return Err(Error::VarCountOutOfRange(n));
    }
    if trials == 0 {
        return Err(Error::NotEnoughData { needed: 1, got: 0, what: "trials" });
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidConfig(format!("sigma {sigma} must be >= 0")));
    }
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let per_trial: Vec<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64 + 1);
            let mut sums = vec![(0.0, 0.0); n + 1];
            for k in 1..=n {
                let count = binomial(n, k);
                let (pos, neg) = &mut sums[k];
                for _ in 0..count {
                    let draw: f64 = if sigma == 0.0 { 0.0 } else { normal.sample(&mut rng) };
                    *pos += draw.max(0.0);
                    *neg += draw.min(0.0);
                }
            }
            sums
        })
        .collect();

    // Deterministic reduction: sum per order across trials in trial order.
    let mut out = vec![(0.0, 0.0); n + 1];
    let mut column = vec![0.0; trials];
    for k in 1..=n {
        for (i, t) in per_trial.iter().enumerate() {
            column[i] = t[k].0;
        }
        out[k].0 = pairwise_sum(&column) / trials as f64;
        for (i, t) in per_trial.iter().enumerate() {
            column[i] = t[k].1;
        }
        out[k].1 = pairwise_sum(&column) / trials as f64;
    }
    Ok(out)
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman_rank_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} points", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::NotEnoughData { needed: 2, got: xs.len(), what: "points" });
    }
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &slot in &idx[i..=j] {
                ranks[slot] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// True when the sequence rises to a single peak and falls after it. Used
/// for the fusiform shape checks. Returns the peak index as well.
pub fn is_unimodal(values: &[f64], rel_tol: f64) -> (bool, usize) {
    if values.is_empty() {
        return (false, 0);
    }
    let peak = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let eps = rel_tol * values[peak].abs().max(f64::MIN_POSITIVE);
    let rising = values[..=peak].windows(2).all(|w| w[1] >= w[0] - eps);
    let falling = values[peak..].windows(2).all(|w| w[1] <= w[0] + eps);
    (rising && falling, peak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{decompose, sparsify, GammaSplit, InteractionSpectrum, SparsifierConfig, TauRule};
    use crate::lattice::{LatticeVector, MaskedOutputTable, TableMeta};
    use proptest::prelude::*;

    fn spectrum_from_effects(n: usize, and_fx: &[(u32, f64)], or_fx: &[(u32, f64)]) -> InteractionSpectrum {
        let mut ia = LatticeVector::zeros(n).unwrap();
        let mut io = LatticeVector::zeros(n).unwrap();
        for &(m, v) in and_fx {
            ia[m as usize] = v;
        }
        for &(m, v) in or_fx {
            io[m as usize] = v;
        }
        InteractionSpectrum::from_parts(ia, io, 0.0, GammaSplit::zero(n).unwrap(), Default::default())
            .unwrap()
    }

    #[test]
    fn order_profile_direct_definition() {
        // salient effects: I_and({0}) = 2, I_and({1}) = -1, I_or({0,1}) = 3
        let s = spectrum_from_effects(2, &[(0b01, 2.0), (0b10, -1.0)], &[(0b11, 3.0)]);
        let p = order_profile(&s, 0.5);
        assert_eq!(p.j_pos(1), 2.0);
        assert_eq!(p.j_neg(1), -1.0);
        assert_eq!(p.j_pos(2), 3.0);
        assert_eq!(p.j_neg(2), 0.0);
        assert_eq!(p.salient_count(1), 2.0);
        assert_eq!(p.salient_count(2), 1.0);
    }

    #[test]
    fn order_profile_zero_spectrum_is_zero() {
        let s = spectrum_from_effects(3, &[], &[]);
        let p = order_profile(&s, 0.0);
        assert_eq!(p.total_strength(), 0.0);
        assert_eq!(p.mean_salient_order(), 0.0);
    }

    #[test]
    fn order_profile_of_planted_and() {
        let t = MaskedOutputTable::new(
            6,
            (0..64u32).map(|m| if m & 0b111 == 0b111 { 5.0 } else { 0.0 }).collect(),
            TableMeta::default(),
        )
        .unwrap();
        let s = sparsify(&t, &SparsifierConfig::default()).unwrap();
        let tau = TauRule::default().resolve(&s);
        let p = order_profile(&s, tau);
        assert!((p.j_pos(3) - 5.0).abs() < 0.3);
        for k in [1usize, 2, 4, 5, 6] {
            assert!(p.strength(k) < 0.3, "order {k}: {}", p.strength(k));
        }
        assert!((p.mean_salient_order() - 3.0).abs() < 0.2);
    }

    #[test]
    fn profile_total_strength_equals_salient_l1_mass() {
        let t = crate::interaction::tests::rand_table(6, 99);
        let s = decompose(&t, &GammaSplit::zero(6).unwrap()).unwrap();
        for tau_frac in [0.0, 0.05, 0.3] {
            let tau = tau_frac * s.max_abs_effect();
            let p = order_profile(&s, tau);
            let (and_set, or_set) = crate::interaction::salient_sets(&s, tau);
            let expected: f64 = and_set.iter().map(|m| s.i_and().get(*m).abs()).sum::<f64>()
                + or_set.iter().map(|m| s.i_or().get(*m).abs()).sum::<f64>();
            assert!((p.total_strength() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn vectorize_follows_canonical_enumeration() {
        let s = spectrum_from_effects(3, &[(0b001, 1.0), (0b010, 2.0), (0b100, 3.0)], &[]);
        let v = vectorize_order(&s, 1, Branch::And).unwrap();
        assert_eq!(v.values, vec![1.0, 2.0, 3.0]);
        let v3 = vectorize_order(&s, 3, Branch::And).unwrap();
        assert_eq!(v3.values.len(), 1);
        assert!(vectorize_order(&s, 4, Branch::And).is_err());
        assert!(vectorize_order(&s, 0, Branch::And).is_err());
    }

    #[test]
    fn vectorize_sum_branch_adds_effects() {
        let s = spectrum_from_effects(3, &[(0b011, 1.5)], &[(0b011, -0.5)]);
        let v = vectorize_order(&s, 2, Branch::Sum).unwrap();
        // k-subsets of order 2 in mask order: 0b011, 0b101, 0b110
        assert_eq!(v.values, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn vectorize_planted_and_peaks_at_planted_mask() {
        let t = MaskedOutputTable::new(
            6,
            (0..64u32).map(|m| if m & 0b111 == 0b111 { 5.0 } else { 0.0 }).collect(),
            TableMeta::default(),
        )
        .unwrap();
        let s = sparsify(&t, &SparsifierConfig::default()).unwrap();
        let v = vectorize_order(&s, 3, Branch::And).unwrap();
        let masks = k_subset_masks(6, 3);
        let best = v
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert_eq!(masks[best], 0b111);
        assert!(v.values[best] > 4.5);
    }

    #[test]
    fn jaccard_identity_and_sign_symmetry() {
        let a = OrderVector { n: 4, k: 2, values: vec![1.0, -2.0, 0.5, 0.0, 0.0, 3.0] };
        assert_eq!(jaccard_similarity(&a, &a).unwrap(), 1.0);
        let neg = OrderVector { n: 4, k: 2, values: a.values.iter().map(|v| -v).collect() };
        assert_eq!(jaccard_similarity(&a, &neg).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_hand_example() {
        let a = OrderVector { n: 2, k: 1, values: vec![1.0, -1.0] };
        let b = OrderVector { n: 2, k: 1, values: vec![0.5, -2.0] };
        // projections: [1,0,0,1] vs [0.5,0,0,2] -> min 1.5, max 3
        assert!((jaccard_similarity(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn jaccard_zero_zero_convention() {
        let z = OrderVector { n: 3, k: 1, values: vec![0.0; 3] };
        assert_eq!(jaccard_similarity(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn jaccard_rejects_mismatched_dims() {
        let a = OrderVector { n: 3, k: 1, values: vec![0.0; 3] };
        let b = OrderVector { n: 3, k: 2, values: vec![0.0; 3] };
        assert!(jaccard_similarity(&a, &b).is_err());
    }

    #[test]
    fn generalization_curve_identity_and_negation() {
        let mk = |c: u32, k: usize, vals: Vec<f64>| CategoryMeanVector {
            category: c,
            mean: OrderVector { n: 4, k, values: vals },
            sample_count: 3,
        };
        let train = vec![
            mk(0, 1, vec![1.0, 0.0, -1.0, 2.0]),
            mk(1, 1, vec![0.0, 1.0, 1.0, 0.0]),
            mk(0, 2, vec![0.5; 6]),
            mk(1, 2, vec![-0.5; 6]),
        ];
        let curve = generalization_curve(&train, &train).unwrap();
        assert_eq!(curve, vec![(1, 1.0), (2, 1.0)]);

        let test: Vec<CategoryMeanVector> = train
            .iter()
            .map(|v| CategoryMeanVector {
                category: v.category,
                mean: OrderVector {
                    n: v.mean.n,
                    k: v.mean.k,
                    values: v.mean.values.iter().map(|x| -x).collect(),
                },
                sample_count: v.sample_count,
            })
            .collect();
        let curve = generalization_curve(&train, &test).unwrap();
        assert_eq!(curve, vec![(1, 0.0), (2, 0.0)]);
    }

    #[test]
    fn generalization_curve_rejects_unmatched_categories() {
        let mk = |c: u32, k: usize| CategoryMeanVector {
            category: c,
            mean: OrderVector { n: 4, k, values: vec![1.0; 4] },
            sample_count: 1,
        };
        let train = vec![mk(0, 1), mk(1, 1)];
        let test = vec![mk(0, 1), mk(2, 1)];
        assert!(generalization_curve(&train, &test).is_err());
    }

    #[test]
    fn category_mean_matches_naive_average() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(8);
        let vectors: Vec<OrderVector> = (0..100)
            .map(|_| OrderVector { n: 5, k: 2, values: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect() })
            .collect();
        let mean = category_mean(3, &vectors).unwrap();
        for j in 0..10 {
            let naive: f64 = vectors.iter().map(|v| v.values[j]).sum::<f64>() / 100.0;
            assert!((mean.mean.values[j] - naive).abs() < 1e-12);
        }
        assert_eq!(mean.sample_count, 100);
    }

    #[test]
    fn noise_strength_closed_form_values() {
        let (p, n_) = noise_strength_expectation(10, 5, 1.0);
        assert!((p - 252.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
        assert!((p - 100.5335).abs() < 1e-3);
        assert_eq!(n_, -p);
        assert_eq!(noise_strength_expectation(10, 5, 0.0), (0.0, 0.0));
        // linear in sigma
        let (p2, _) = noise_strength_expectation(10, 5, 2.5);
        assert!((p2 - 2.5 * p).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_matches_closed_form_small() {
        let n = 6;
        let sigma = 1.0;
        let mc = fusiform_monte_carlo(n, sigma, 20_000, 42).unwrap();
        for k in 1..=n {
            let (e_pos, e_neg) = noise_strength_expectation(n, k, sigma);
            let (m_pos, m_neg) = mc[k];
            assert!((m_pos - e_pos).abs() / e_pos < 0.03, "k={k}: {m_pos} vs {e_pos}");
            assert!((m_neg - e_neg).abs() / e_pos < 0.03);
        }
    }

    #[test]
    fn monte_carlo_deterministic_for_fixed_seed() {
        let a = fusiform_monte_carlo(5, 1.0, 1, 7).unwrap();
        let b = fusiform_monte_carlo(5, 1.0, 1, 7).unwrap();
        assert_eq!(a, b);
        let c = fusiform_monte_carlo(5, 1.0, 500, 7).unwrap();
        let d = fusiform_monte_carlo(5, 1.0, 500, 7).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn monte_carlo_error_shrinks_with_trials() {
        // fixed seeds; aggregate error across orders must drop with 16x trials
        let n = 8;
        let err = |trials: usize| -> f64 {
            let mc = fusiform_monte_carlo(n, 1.0, trials, 1234).unwrap();
            (1..=n)
                .map(|k| {
                    let (e, _) = noise_strength_expectation(n, k, 1.0);
                    (mc[k].0 - e).abs()
                })
                .sum()
        };
        let coarse = err(500);
        let fine = err(8_000);
        assert!(fine < coarse * 0.6, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn monte_carlo_shape_is_fusiform() {
        let mc = fusiform_monte_carlo(10, 1.0, 5_000, 3).unwrap();
        let strengths: Vec<f64> = (1..=10).map(|k| mc[k].0).collect();
        let (unimodal, peak) = is_unimodal(&strengths, 1e-9);
        assert!(unimodal);
        assert_eq!(peak + 1, 5); // C(10,k) peaks at k=5
    }

    #[test]
    fn spearman_basics() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_rank_correlation(&xs, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rank_correlation(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // monotone despite nonlinearity
        assert!((spearman_rank_correlation(&xs, &[1.0, 8.0, 27.0, 64.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn prop_jaccard_bounded_symmetric(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let d = 10;
            let a = OrderVector { n: 5, k: 2, values: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect() };
            let b = OrderVector { n: 5, k: 2, values: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect() };
            let ab = jaccard_similarity(&a, &b).unwrap();
            let ba = jaccard_similarity(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn prop_jaccard_scale_invariant(seed in 0u64..300, c in 0.01f64..50.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let d = 8;
            let a = OrderVector { n: 4, k: 2, values: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect() };
            let b = OrderVector { n: 4, k: 2, values: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect() };
            let sa = OrderVector { n: 4, k: 2, values: a.values.iter().map(|v| c * v).collect() };
            let sb = OrderVector { n: 4, k: 2, values: b.values.iter().map(|v| c * v).collect() };
            let plain = jaccard_similarity(&a, &b).unwrap();
            let scaled = jaccard_similarity(&sa, &sb).unwrap();
            prop_assert!((plain - scaled).abs() < 1e-9);
        }

        #[test]
        fn prop_jaccard_one_iff_identical_projection(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = OrderVector { n: 4, k: 1, values: vals.clone() };
            let mut perturbed = vals.clone();
            perturbed[0] += 0.25;
            let b = OrderVector { n: 4, k: 1, values: perturbed };
            prop_assert_eq!(jaccard_similarity(&a, &a).unwrap(), 1.0);
            prop_assert!(jaccard_similarity(&a, &b).unwrap() < 1.0);
        }
    }
}
