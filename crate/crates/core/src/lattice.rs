//! Subset-mask arithmetic and fast transforms over the Boolean lattice of
//! `n` input variables.
//!
//! Mask convention: bit `i` (LSB first) set means variable `i` is present in
//! the subset. A table over all subsets of `n` variables is stored as a flat
//! `Vec<f64>` of length `2^n` indexed by mask integer, so `values[0]` is the
//! empty set and `values[2^n - 1]` the full set.
//!
//! All transforms run in `O(n * 2^n)` via the in-place butterfly over one bit
//! at a time and are exact inverses of each other in exact arithmetic.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hard cap on the variable count: a `2^24` table of f64 is ~134 MB.
pub const MAX_VARS: usize = 24;

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_VARS {
        return Err(Error::VarCountOutOfRange(n));
    }
    Ok(())
}

/// One subset of the variable index set `{0, .., n-1}`, encoded as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SubsetMask {
    bits: u32,
    n: u8,
}

impl SubsetMask {
    pub fn new(bits: u32, n: usize) -> Result<Self> {
        check_n(n)?;
        if u64::from(bits) >= (1u64 << n) {
            return Err(Error::InvalidConfig(format!("mask {bits:#x} out of range for n={n}")));
        }
        Ok(SubsetMask { bits, n: n as u8 })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(0, n)
    }

    pub fn full(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(SubsetMask { bits: full_mask(n), n: n as u8 })
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn var_count(self) -> usize {
        self.n as usize
    }

    /// Number of variables in the subset (the interaction order).
    #[inline]
    pub fn order(self) -> u32 {
        self.bits.count_ones()
    }

    #[inline]
    pub fn contains(self, var: usize) -> bool {
        var < self.n as usize && self.bits & (1 << var) != 0
    }

    #[inline]
    pub fn is_subset_of(self, other: SubsetMask) -> bool {
        self.bits & !other.bits == 0
    }

    #[inline]
    pub fn intersects(self, other: SubsetMask) -> bool {
        self.bits & other.bits != 0
    }

    pub fn complement(self) -> SubsetMask {
        SubsetMask { bits: self.bits ^ full_mask(self.n as usize), n: self.n }
    }

    /// Member variable indices, ascending.
    pub fn vars(self) -> impl Iterator<Item = usize> {
        let bits = self.bits;
        (0..self.n as usize).filter(move |i| bits & (1 << i) != 0)
    }

    /// All `2^n` subsets of an `n`-variable ground set, in mask order.
    pub fn all(n: usize) -> Result<impl Iterator<Item = SubsetMask>> {
        check_n(n)?;
        Ok((0..1u32 << n).map(move |bits| SubsetMask { bits, n: n as u8 }))
    }
}

impl std::fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, v) in self.vars().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "}}")
    }
}

#[inline]
pub(crate) fn full_mask(n: usize) -> u32 {
    ((1u64 << n) - 1) as u32
}

/// Iterate all submasks of `set` (including 0 and `set` itself) via the
/// carry-rippler trick. Yields masks in increasing order.
pub fn submasks(set: u32) -> impl Iterator<Item = u32> {
    let mut sub = 0u32;
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let cur = sub;
        sub = sub.wrapping_sub(set) & set;
        done = sub == 0;
        Some(cur)
    })
}

/// `2^n` real coefficients indexed by subset mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeVector {
    n: usize,
    coeffs: Vec<f64>,
}

impl LatticeVector {
    pub fn new(n: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_n(n)?;
        let expected = 1usize << n;
        if coeffs.len() != expected {
            return Err(Error::LengthMismatch { expected, got: coeffs.len() });
        }
        if let Some(index) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(LatticeVector { n, coeffs })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(LatticeVector { n, coeffs: vec![0.0; 1 << n] })
    }

    #[inline]
    pub fn var_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        // a well-formed vector always holds 2^n >= 2 entries
        false
    }

    #[inline]
    pub fn get(&self, mask: SubsetMask) -> f64 {
        self.coeffs[mask.bits() as usize]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    /// Sum of |coeff| over non-empty subsets.
    pub fn l1_nonempty(&self) -> f64 {
        self.coeffs[1..].iter().map(|v| v.abs()).sum()
    }

    /// Largest |coeff| over non-empty subsets.
    pub fn max_abs_nonempty(&self) -> f64 {
        self.coeffs[1..].iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<usize> for LatticeVector {
    type Output = f64;
    fn index(&self, mask: usize) -> &f64 {
        &self.coeffs[mask]
    }
}

impl std::ops::IndexMut<usize> for LatticeVector {
    fn index_mut(&mut self, mask: usize) -> &mut f64 {
        &mut self.coeffs[mask]
    }
}

/// Metadata carried along with a masked-output table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub sample_id: String,
    pub epoch: u64,
    /// Output-score definition tag, e.g. "logit" or "logodds".
    pub score: String,
    /// Masking-baseline tag, e.g. "feature-mean".
    pub baseline: String,
    /// Set when a log-odds score had to be clamped away from p in {0, 1}.
    #[serde(default)]
    pub clamped: bool,
}

/// All `2^n` scalar outputs of one model on one sample, indexed by subset
/// mask: `values[m]` is the output with exactly the variables in `m` left
/// unmasked. `values[0]` is the fully masked sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedOutputTable {
    n: usize,
    values: Vec<f64>,
    pub meta: TableMeta,
}

impl MaskedOutputTable {
    pub fn new(n: usize, values: Vec<f64>, meta: TableMeta) -> Result<Self> {
        check_n(n)?;
        let expected = 1usize << n;
        if values.len() != expected {
            return Err(Error::LengthMismatch { expected, got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(MaskedOutputTable { n, values, meta })
    }

    #[inline]
    pub fn var_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Output on the fully masked sample.
    #[inline]
    pub fn empty_value(&self) -> f64 {
        self.values[0]
    }

    /// Largest |v(x_T) - v(empty)| over all masks; the table's dynamic range.
    pub fn delta_scale(&self) -> f64 {
        let v0 = self.values[0];
        self.values.iter().fold(0.0f64, |m, v| m.max((v - v0).abs()))
    }

    pub fn to_lattice_vector(&self) -> LatticeVector {
        LatticeVector { n: self.n, coeffs: self.values.clone() }
    }
}

// ---------------------------------------------------------------------------
// Fast transforms
// ---------------------------------------------------------------------------

/// In-place subset Möbius: a[S] <- sum_{T subset of S} (-1)^{|S|-|T|} a[T].
pub(crate) fn mobius_in_place(a: &mut [f64]) {
    let len = a.len();
    debug_assert!(len.is_power_of_two());
    let mut bit = 1;
    while bit < len {
        for mask in 0..len {
            if mask & bit != 0 {
                a[mask] -= a[mask ^ bit];
            }
        }
        bit <<= 1;
    }
}

/// In-place subset zeta: a[T] <- sum_{S subset of T} a[S]. Inverse of
/// [`mobius_in_place`].
pub(crate) fn zeta_in_place(a: &mut [f64]) {
    let len = a.len();
    debug_assert!(len.is_power_of_two());
    let mut bit = 1;
    while bit < len {
        for mask in 0..len {
            if mask & bit != 0 {
                a[mask] += a[mask ^ bit];
            }
        }
        bit <<= 1;
    }
}

/// In-place superset Möbius: a[T] <- sum_{S superset of T} (-1)^{|S|-|T|} a[S].
/// This is the adjoint of [`mobius_in_place`] and is used for subgradients.
pub(crate) fn superset_mobius_in_place(a: &mut [f64]) {
    let len = a.len();
    debug_assert!(len.is_power_of_two());
    let mut bit = 1;
    while bit < len {
        for mask in 0..len {
            if mask & bit == 0 {
                a[mask] -= a[mask | bit];
            }
        }
        bit <<= 1;
    }
}

/// Reindex by complement: out[m] = a[full ^ m].
pub(crate) fn complement_reindex_in_place(a: &mut [f64]) {
    let len = a.len();
    let full = len - 1;
    for m in 0..len / 2 {
        a.swap(m, full ^ m);
    }
}

/// Möbius transform over the subset lattice:
/// `g(S) = sum_{T subset of S} (-1)^{|S|-|T|} f(T)` for every `S`.
pub fn mobius_transform(f: &LatticeVector) -> LatticeVector {
    let mut out = f.clone();
    mobius_in_place(&mut out.coeffs);
    out
}

/// Zeta transform, the exact inverse of [`mobius_transform`]:
/// `f(T) = sum_{S subset of T} g(S)`.
pub fn zeta_transform(g: &LatticeVector) -> LatticeVector {
    let mut out = g.clone();
    zeta_in_place(&mut out.coeffs);
    out
}

/// The OR-interaction kernel: `g(S) = -sum_{T subset of S} (-1)^{|S|-|T|} h(N\T)`,
/// i.e. a complement reindex followed by the Möbius transform and negation.
pub fn superset_complement_transform(h: &LatticeVector) -> LatticeVector {
    let mut out = h.clone();
    complement_reindex_in_place(&mut out.coeffs);
    mobius_in_place(&mut out.coeffs);
    for v in &mut out.coeffs {
        *v = -*v;
    }
    out
}

/// Adjoint of the Möbius transform (superset Möbius), as a public op for
/// callers that assemble their own first-order schemes.
pub fn superset_mobius_transform(u: &LatticeVector) -> LatticeVector {
    let mut out = u.clone();
    superset_mobius_in_place(&mut out.coeffs);
    out
}

/// Binomial coefficient C(n, k); exact for n <= 24.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut num = 1u64;
    for i in 0..k {
        num = num * (n - i) as u64 / (i + 1) as u64
    }
    num
}

/// Masks of the k-subsets of an n-variable set in ascending mask-integer
/// order (Gosper's hack).
pub fn k_subset_masks(n: usize, k: usize) -> Vec<u32> {
    assert!(n <= MAX_VARS && k <= n);
    if k == 0 {
        return vec![0];
    }
    let mut out = Vec::with_capacity(binomial(n, k) as usize);
    let limit = 1u32 << n;
    let mut mask = (1u32 << k) - 1;
    while mask < limit {
        out.push(mask);
        // Gosper's hack: next k-subset in ascending order. n <= 24 keeps
        // mask + c well inside u32.
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((mask ^ r) >> 2) / c) | r;
    }
    out
}
