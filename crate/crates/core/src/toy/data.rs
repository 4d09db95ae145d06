//! Synthetic datasets with planted AND/OR label structure, and the
//! lowest-confidence relabeling scheme for studying memorization.

use super::net::ToyNetwork;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A planted label rule over the binary on/off pattern of the features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlantedRule {
    /// Fires when every listed feature is on.
    And(Vec<usize>),
    /// Fires when any listed feature is on.
    Or(Vec<usize>),
}

impl PlantedRule {
    fn fires(&self, pattern: &[bool]) -> bool {
        match self {
            PlantedRule::And(vars) => vars.iter().all(|&v| pattern[v]),
            PlantedRule::Or(vars) => vars.iter().any(|&v| pattern[v]),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            PlantedRule::And(vars) | PlantedRule::Or(vars) => vars.iter().copied().max(),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            PlantedRule::And(vars) | PlantedRule::Or(vars) => vars.is_empty(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
    /// Category the sample was generated for (its clean label).
    pub category: u32,
    pub split: Split,
    /// Label was flipped by generator-level label noise.
    pub noisy_label: bool,
    /// Label was rewritten by [`inject_label_noise`].
    pub relabeled: bool,
}

/// Generator settings. Labels follow a decision list over the planted rules:
/// the first rule that fires names the class (1-based); none firing is class
/// 0. Classes are balanced by per-sample rejection sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_features: usize,
    pub rules: Vec<PlantedRule>,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Gaussian feature noise around the on/off levels.
    pub feature_noise: f64,
    /// Fraction of train labels flipped to a random other class.
    pub label_noise_fraction: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn class_count(&self) -> usize {
        self.rules.len() + 1
    }

    fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_features > 12 {
            return Err(Error::DatasetSpec(format!("n_features {} not in 1..=12", self.n_features)));
        }
        if self.rules.is_empty() {
            return Err(Error::DatasetSpec("need at least one planted rule".into()));
        }
        for rule in &self.rules {
            if rule.is_empty() {
                return Err(Error::DatasetSpec("planted rule with no variables".into()));
            }
            if let Some(max) = rule.max_var() {
                if max >= self.n_features {
                    return Err(Error::DatasetSpec(format!(
                        "planted rule uses variable {max}, beyond n_features {}",
                        self.n_features
                    )));
                }
            }
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::DatasetSpec("need train and test samples".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise_fraction) {
            return Err(Error::DatasetSpec("label_noise_fraction outside [0, 1]".into()));
        }
        if !self.feature_noise.is_finite() || self.feature_noise < 0.0 {
            return Err(Error::DatasetSpec("feature_noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// A generated dataset plus the per-feature masking baselines (feature means
/// over all samples).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub samples: Vec<Sample>,
    pub baselines: Vec<f64>,
    pub spec: DatasetSpec,
}

impl ToyDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count()
    }

    fn recompute_baselines(samples: &[Sample], n_features: usize) -> Vec<f64> {
        let mut means = vec![0.0; n_features];
        for s in samples {
            for (m, v) in means.iter_mut().zip(&s.features) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= samples.len() as f64;
        }
        means
    }
}

fn label_of(pattern: &[bool], rules: &[PlantedRule]) -> usize {
    rules.iter().position(|r| r.fires(pattern)).map(|i| i + 1).unwrap_or(0)
}

/// Generate a dataset from the spec; fully determined by the seed.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<ToyDataset> {
    spec.validate()?;
    let classes = spec.class_count();
    let total = spec.train_samples + spec.test_samples;
    let noise = Normal::new(0.0, spec.feature_noise.max(f64::MIN_POSITIVE)).expect("valid noise");
    let mut samples = Vec::with_capacity(total);

    for idx in 0..total {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        rng.set_stream(idx as u64 + 1);
        let target = idx % classes;
        // rejection-sample the on/off pattern until the decision list lands
        // on the target class; caps are generous since every class has
        // positive probability under uniform patterns
        let mut pattern = vec![false; spec.n_features];
        let mut found = false;
        for _ in 0..100_000 {
            for slot in pattern.iter_mut() {
                *slot = rng.random_bool(0.5);
            }
            if label_of(&pattern, &spec.rules) == target {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::DatasetSpec(format!(
                "class {target} is unreachable under the planted rules"
            )));
        }
        let features = pattern
            .iter()
            .map(|&on| {
                let level = if on { 1.0 } else { 0.0 };
                level + if spec.feature_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 }
            })
            .collect();
        samples.push(Sample {
            id: format!("s{idx:05}"),
            features,
            label: target,
            category: target as u32,
            split: Split::Test, // assigned below
            noisy_label: false,
            relabeled: false,
        });
    }

    // seeded shuffle, then split
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ SPLIT_SEED_TAG);
    shuffle(&mut order, &mut rng);
    for (rank, &idx) in order.iter().enumerate() {
        samples[idx].split = if rank < spec.train_samples { Split::Train } else { Split::Test };
    }

    // generator-level label noise on the train split
    if spec.label_noise_fraction > 0.0 {
        let train_ids: Vec<usize> = (0..total).filter(|&i| samples[i].split == Split::Train).collect();
        let flips = (spec.label_noise_fraction * train_ids.len() as f64).floor() as usize;
        let mut pool = train_ids;
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ LABEL_SEED_TAG);
        shuffle(&mut pool, &mut rng);
        for &idx in pool.iter().take(flips) {
            let old = samples[idx].label;
            let offset = rng.random_range(1..classes);
            samples[idx].label = (old + offset) % classes;
            samples[idx].noisy_label = true;
        }
    }

    let baselines = ToyDataset::recompute_baselines(&samples, spec.n_features);
    Ok(ToyDataset { samples, baselines, spec: spec.clone() })
}

// Fisher-Yates with our own rng so the draw sequence is pinned.
fn shuffle(order: &mut [usize], rng: &mut ChaCha12Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

// Stream tags so the split and label-noise draws stay independent of the
// per-sample streams.
const SPLIT_SEED_TAG: u64 = 0x73706c6974; // "split"
const LABEL_SEED_TAG: u64 = 0x6c6162656c; // "label"

/// Outcome of a relabeling pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub relabeled_indices: Vec<usize>,
    /// Confidence ties were broken by sample index (e.g. untrained model).
    pub tie_break_used: bool,
}

/// For each class, relabel the `count_per_class` train samples on which the
/// model has the lowest ground-truth confidence to the model's second-best
/// class. The test split is untouched.
pub fn inject_label_noise(
    dataset: &ToyDataset,
    model: &ToyNetwork,
    count_per_class: usize,
) -> Result<(ToyDataset, InjectionReport)> {
    let classes = dataset.class_count();
    if model.class_count() != classes {
        return Err(Error::DimensionMismatch(format!(
            "model has {} classes, dataset {}",
            model.class_count(),
            classes
        )));
    }
    let mut out = dataset.clone();
    let mut relabeled_indices = Vec::new();
    let mut tie_break_used = false;

    for class in 0..classes {
        let mut ranked: Vec<(usize, f64)> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == Split::Train && s.label == class)
            .map(|(i, s)| (i, model.softmax(&s.features)[class]))
            .collect();
        if count_per_class > ranked.len() {
            return Err(Error::InvalidConfig(format!(
                "count_per_class {count_per_class} exceeds class {class} train size {}",
                ranked.len()
            )));
        }
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if ranked.windows(2).any(|w| w[0].1 == w[1].1) {
            tie_break_used = true;
        }
        for &(idx, _) in ranked.iter().take(count_per_class) {
            let p = model.softmax(&dataset.samples[idx].features);
            let mut order: Vec<usize> = (0..classes).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            let second_best = order[1];
            out.samples[idx].label = second_best;
            out.samples[idx].relabeled = true;
            relabeled_indices.push(idx);
        }
    }
    relabeled_indices.sort_unstable();
    Ok((out, InjectionReport { relabeled_indices, tie_break_used }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::net::NetConfig;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            n_features: 6,
            rules: vec![PlantedRule::And(vec![0, 1]), PlantedRule::Or(vec![2, 3])],
            train_samples: 60,
            test_samples: 90,
            feature_noise: 0.2,
            label_noise_fraction: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = generate_dataset(&spec()).unwrap();
        let b = generate_dataset(&spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 150);
        assert_eq!(a.split(Split::Train).count(), 60);
        for class in 0..3usize {
            let count = a.samples.iter().filter(|s| s.category == class as u32).count();
            assert_eq!(count, 50);
        }
    }

    #[test]
    fn zero_label_noise_labels_match_planted_rule() {
        let d = generate_dataset(&spec()).unwrap();
        assert!(d.samples.iter().all(|s| !s.noisy_label && s.label as u32 == s.category));
    }

    #[test]
    fn label_noise_flips_requested_fraction_of_train() {
        let mut s = spec();
        s.label_noise_fraction = 0.25;
        let d = generate_dataset(&s).unwrap();
        let flipped = d.samples.iter().filter(|x| x.noisy_label).count();
        assert_eq!(flipped, 15); // floor(0.25 * 60)
        assert!(d.samples.iter().filter(|x| x.noisy_label).all(|x| x.split == Split::Train));
        assert!(d.samples.iter().filter(|x| x.noisy_label).all(|x| x.label as u32 != x.category));
    }

    #[test]
    fn baselines_are_feature_means() {
        let d = generate_dataset(&spec()).unwrap();
        for f in 0..6 {
            let mean: f64 =
                d.samples.iter().map(|s| s.features[f]).sum::<f64>() / d.samples.len() as f64;
            assert!((d.baselines[f] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec();
        s.rules = vec![PlantedRule::And(vec![0, 9])];
        assert!(generate_dataset(&s).is_err());
        let mut s = spec();
        s.rules = vec![];
        assert!(generate_dataset(&s).is_err());
        let mut s = spec();
        s.n_features = 13;
        assert!(generate_dataset(&s).is_err());
        let mut s = spec();
        s.label_noise_fraction = 1.5;
        assert!(generate_dataset(&s).is_err());
    }

    #[test]
    fn injection_zero_count_is_identity() {
        let d = generate_dataset(&spec()).unwrap();
        let net = ToyNetwork::new(NetConfig { input: 6, hidden: vec![8], classes: 3, seed: 4 }).unwrap();
        let (out, report) = inject_label_noise(&d, &net, 0).unwrap();
        assert_eq!(out, d);
        assert!(report.relabeled_indices.is_empty());
    }

    #[test]
    fn injection_relabels_lowest_confidence_to_second_best() {
        let d = generate_dataset(&spec()).unwrap();
        let net = ToyNetwork::new(NetConfig { input: 6, hidden: vec![8], classes: 3, seed: 4 }).unwrap();
        let k = 3usize;
        let (out, report) = inject_label_noise(&d, &net, k).unwrap();
        assert_eq!(report.relabeled_indices.len(), k * 3);
        for &idx in &report.relabeled_indices {
            let sample = &out.samples[idx];
            assert!(sample.relabeled);
            assert_eq!(sample.split, Split::Train);
            // relabeled to the model's second-best class for that sample
            let p = net.softmax(&sample.features);
            let mut order: Vec<usize> = (0..3).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
            assert_eq!(sample.label, order[1]);
        }
        // chosen ones are exactly the bottom-k by confidence within each class
        for class in 0..3usize {
            let mut ranked: Vec<(usize, f64)> = d
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.split == Split::Train && s.label == class)
                .map(|(i, s)| (i, net.softmax(&s.features)[class]))
                .collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let expected: std::collections::BTreeSet<usize> =
                ranked.iter().take(k).map(|&(i, _)| i).collect();
            let got: std::collections::BTreeSet<usize> = report
                .relabeled_indices
                .iter()
                .copied()
                .filter(|&i| d.samples[i].label == class)
                .collect();
            assert_eq!(expected, got);
        }
    }

    #[test]
    fn untrained_uniform_model_ties_are_flagged_and_index_ordered() {
        let d = generate_dataset(&spec()).unwrap();
        let mut net =
            ToyNetwork::new(NetConfig { input: 6, hidden: vec![8], classes: 3, seed: 4 }).unwrap();
        for layer in &mut net.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let k = 2;
        let (_, report) = inject_label_noise(&d, &net, k).unwrap();
        assert!(report.tie_break_used);
        // with all confidences equal, the lowest sample indices are chosen
        for class in 0..3usize {
            let expected: Vec<usize> = d
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.split == Split::Train && s.label == class)
                .map(|(i, _)| i)
                .take(k)
                .collect();
            let got: Vec<usize> = report
                .relabeled_indices
                .iter()
                .copied()
                .filter(|&i| d.samples[i].label == class)
                .collect();
            assert_eq!(expected, got);
        }
    }

    #[test]
    fn injection_rejects_oversized_count() {
        let d = generate_dataset(&spec()).unwrap();
        let net = ToyNetwork::new(NetConfig { input: 6, hidden: vec![8], classes: 3, seed: 4 }).unwrap();
        assert!(inject_label_noise(&d, &net, 1000).is_err());
    }
}
