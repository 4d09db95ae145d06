//! Masking semantics: evaluate a network on all `2^m` masked versions of one
//! sample, replacing masked features by their dataset-mean baselines.

use super::data::Sample;
use super::net::ToyNetwork;
use crate::lattice::{MaskedOutputTable, TableMeta};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// How the scalar model output is read off the class scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreDefinition {
    /// Pre-normalization score of the ground-truth class.
    Logit,
    /// log(p / (1 - p)) of the ground-truth class probability.
    LogOdds,
}

impl std::fmt::Display for ScoreDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreDefinition::Logit => write!(f, "logit"),
            ScoreDefinition::LogOdds => write!(f, "logodds"),
        }
    }
}

impl std::str::FromStr for ScoreDefinition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(ScoreDefinition::Logit),
            "logodds" => Ok(ScoreDefinition::LogOdds),
            other => Err(Error::InvalidConfig(format!("unknown score definition '{other}'"))),
        }
    }
}

const LOG_ODDS_CLAMP: f64 = 1e-12;

/// Evaluate the network on every masked version of a sample.
///
/// `variables` picks which features participate in masking (at most 12, so
/// at most 4096 forward passes); bit `i` of a mask set means
/// `variables[i]` keeps its true value, clear means it is replaced by its
/// baseline. Features outside `variables` always keep their true values.
pub fn emit_masked_table(
    network: &ToyNetwork,
    sample: &Sample,
    baselines: &[f64],
    variables: &[usize],
    score: ScoreDefinition,
    epoch: u64,
) -> Result<MaskedOutputTable> {
    let m = variables.len();
    if m == 0 || m > 12 {
        return Err(Error::InvalidConfig(format!("can mask 1..=12 variables, got {m}")));
    }
    let n_features = sample.features.len();
    if baselines.len() != n_features {
        return Err(Error::DimensionMismatch(format!(
            "{} baselines for {} features",
            baselines.len(),
            n_features
        )));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for &v in variables {
            if v >= n_features {
                return Err(Error::InvalidConfig(format!("variable {v} beyond feature count")));
            }
            if !seen.insert(v) {
                return Err(Error::InvalidConfig(format!("variable {v} listed twice")));
            }
        }
    }
    if sample.label >= network.class_count() {
        return Err(Error::InvalidConfig(format!(
            "label {} out of range for {} classes",
            sample.label,
            network.class_count()
        )));
    }

    let mut clamped = false;
    let mut values = Vec::with_capacity(1 << m);
    let mut features = sample.features.clone();
    for mask in 0..1u32 << m {
        for (bit, &var) in variables.iter().enumerate() {
            features[var] = if mask & (1 << bit) != 0 { sample.features[var] } else { baselines[var] };
        }
        let v = match score {
            ScoreDefinition::Logit => network.logits(&features)[sample.label],
            ScoreDefinition::LogOdds => {
                let p = network.softmax(&features)[sample.label];
                let p_safe = p.clamp(LOG_ODDS_CLAMP, 1.0 - LOG_ODDS_CLAMP);
                if p_safe != p {
                    clamped = true;
                }
                (p_safe / (1.0 - p_safe)).ln()
            }
        };
        values.push(v);
    }

    MaskedOutputTable::new(
        m,
        values,
        TableMeta {
            sample_id: sample.id.clone(),
            epoch,
            score: score.to_string(),
            baseline: "feature-mean".to_string(),
            clamped,
        },
    )
}

/// Draw the masking variable subset for one sample: a seeded choice of
/// `m` features, fixed per (seed, sample id) so every epoch sees the same
/// subset.
pub fn masked_variables_for(sample_id: &str, n_features: usize, m: usize, seed: u64) -> Vec<usize> {
    use rand::{Rng, SeedableRng};
    let mut hash = 0xcbf29ce484222325u64;
    for b in sample_id.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ hash);
    let mut pool: Vec<usize> = (0..n_features).collect();
    for i in (1..pool.len()).rev() {
        let j = rng.random_range(0..=i);
        pool.swap(i, j);
    }
    let mut vars: Vec<usize> = pool.into_iter().take(m.min(n_features)).collect();
    vars.sort_unstable();
    vars
}
