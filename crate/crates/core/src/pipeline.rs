//! End-to-end experiment drivers: train a toy model, emit masked-output
//! tables at every checkpoint into a manifest, and run the interaction
//! analyses over such a manifest. The CLI subcommands and the acceptance
//! suite both sit on top of these.

use crate::dynamics::{aggregate_epoch, detect_transition, EpochRecord, PhaseReport};
use crate::interaction::{
    decompose, sparsify, GammaSplit, InteractionSpectrum, SparsifierConfig, TauRule,
};
use crate::io::{
    read_table_file, write_table_file, EpochEntry, SampleRecord, SeriesManifest, TableRef,
};
use crate::lattice::MaskedOutputTable;
use crate::metrics::{
    category_mean, generalization_curve, order_profile, vectorize_order, Branch, OrderProfile,
    OrderVector,
};
use crate::toy::{
    emit_masked_table, generate_dataset, inject_label_noise, train, DatasetSpec, NetConfig,
    PlantedRule, Sample, ScoreDefinition, Split, ToyDataset, ToyNetwork, TrainConfig, TrainRun,
};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// How gamma is chosen when tables are decomposed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum GammaMode {
    Zero,
    Sparsify(SparsifierConfig),
}

impl GammaMode {
    pub fn spectrum(&self, table: &MaskedOutputTable) -> Result<InteractionSpectrum> {
        match self {
            GammaMode::Zero => decompose(table, &GammaSplit::zero(table.var_count())?),
            GammaMode::Sparsify(cfg) => sparsify(table, cfg),
        }
    }
}

/// Which replacement value masking uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskBaseline {
    /// Per-feature dataset mean (the default rule carried by the dataset).
    DatasetMean,
    /// Zero, the features' "off" level. For on/off feature generators the
    /// mean sits at the point of maximal ambiguity, so the off level is the
    /// faithful analogue of masking an input away.
    Zero,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// How many train-split samples to analyze (drawn round-robin per
    /// category with a seeded shuffle).
    pub analyzed_train: usize,
    /// Same for the test split.
    pub analyzed_test: usize,
    /// How many features participate in masking per sample.
    pub mask_vars: usize,
    pub score: ScoreDefinition,
    pub baseline: MaskBaseline,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    /// The two-phase study setup: 10 masked variables, a planted pairwise
    /// rule with mildly noisy labels, and a wide net trained long enough to
    /// memorize them. The rule is learned within the first handful of
    /// epochs; the label noise then drags increasingly complex interactions
    /// in while the loss gap opens.
    pub fn phenomenon_default(seed: u64) -> Self {
        let dataset = DatasetSpec {
            n_features: 10,
            rules: vec![PlantedRule::And(vec![0, 1])],
            train_samples: 384,
            test_samples: 512,
            feature_noise: 0.15,
            label_noise_fraction: 0.15,
            seed,
        };
        ExperimentConfig {
            net: NetConfig {
                input: dataset.n_features,
                hidden: vec![64, 64],
                classes: dataset.class_count(),
                seed: seed ^ 0x6e6574, // "net"
            },
            train: TrainConfig::new(256, 0.05, 8, seed ^ 0x736764), // "sgd"
            analysis: AnalysisConfig {
                analyzed_train: 24,
                analyzed_test: 24,
                mask_vars: 10,
                score: ScoreDefinition::Logit,
                baseline: MaskBaseline::Zero,
            },
            dataset,
        }
    }
}

/// A finished emission: the manifest plus the in-memory artifacts.
pub struct EmittedRun {
    pub manifest_path: PathBuf,
    pub manifest: SeriesManifest,
    pub dataset: ToyDataset,
    pub run: TrainRun,
}

/// Seeded per-category draw of analysis samples from one split.
fn pick_analysis_samples<'a>(
    dataset: &'a ToyDataset,
    split: Split,
    count: usize,
    seed: u64,
    prefer_relabeled: bool,
) -> Vec<&'a Sample> {
    use rand::SeedableRng;
    let mut by_category: BTreeMap<u32, Vec<&Sample>> = BTreeMap::new();
    for s in dataset.split(split) {
        by_category.entry(s.category).or_default().push(s);
    }
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x616e616c); // "analysis"
    for pool in by_category.values_mut() {
        if prefer_relabeled {
            // alternate relabeled and clean so group comparisons have
            // support on both sides whatever the quota
            let mut relabeled: Vec<&Sample> = pool.iter().copied().filter(|s| s.relabeled).collect();
            let mut clean: Vec<&Sample> = pool.iter().copied().filter(|s| !s.relabeled).collect();
            shuffle_slice(&mut relabeled, &mut rng);
            shuffle_slice(&mut clean, &mut rng);
            pool.clear();
            let mut r = relabeled.into_iter();
            let mut c = clean.into_iter();
            loop {
                match (r.next(), c.next()) {
                    (None, None) => break,
                    (a, b) => pool.extend(a.into_iter().chain(b)),
                }
            }
        } else {
            shuffle_slice(pool, &mut rng);
        }
    }
    // round-robin across categories until the quota is filled
    let mut picked = Vec::with_capacity(count);
    let mut offset = 0usize;
    while picked.len() < count {
        let mut any = false;
        for pool in by_category.values() {
            if picked.len() == count {
                break;
            }
            if let Some(s) = pool.get(offset) {
                picked.push(*s);
                any = true;
            }
        }
        if !any {
            break; // split exhausted
        }
        offset += 1;
    }
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    picked
}

fn shuffle_slice<'a>(slice: &mut [&'a Sample], rng: &mut rand_chacha::ChaCha12Rng) {
    use rand::Rng;
    for i in (1..slice.len()).rev() {
        let j = rng.random_range(0..=i);
        slice.swap(i, j);
    }
}

/// Train on the dataset and emit one table per (checkpoint epoch, analyzed
/// sample) under `out_dir`, plus checkpoint weight blobs, the full loss
/// curve, and the series manifest.
pub fn run_and_emit(cfg: &ExperimentConfig, out_dir: &Path) -> Result<EmittedRun> {
    let dataset = generate_dataset(&cfg.dataset)?;
    let network = ToyNetwork::new(cfg.net.clone())?;
    let run = train(network, &dataset, &cfg.train)?;
    emit_run(cfg, dataset, run, out_dir)
}

/// Emission half of [`run_and_emit`], reusable with a pre-built dataset/run.
pub fn emit_run(
    cfg: &ExperimentConfig,
    dataset: ToyDataset,
    run: TrainRun,
    out_dir: &Path,
) -> Result<EmittedRun> {
    let n_features = cfg.dataset.n_features;
    let m = cfg.analysis.mask_vars;
    if m == 0 || m > n_features {
        return Err(Error::InvalidConfig(format!(
            "mask_vars {m} not in 1..={n_features}"
        )));
    }

    let has_relabeled = dataset.samples.iter().any(|s| s.relabeled);
    let mut analyzed = pick_analysis_samples(
        &dataset,
        Split::Train,
        cfg.analysis.analyzed_train,
        cfg.dataset.seed,
        has_relabeled,
    );
    analyzed.extend(pick_analysis_samples(
        &dataset,
        Split::Test,
        cfg.analysis.analyzed_test,
        cfg.dataset.seed,
        false,
    ));
    if analyzed.is_empty() {
        return Err(Error::InvalidConfig("no samples selected for analysis".into()));
    }

    // fixed masking subset per sample, reused across all epochs
    let variables: Vec<(String, Vec<usize>)> = analyzed
        .iter()
        .map(|s| {
            let vars = if m == n_features {
                (0..n_features).collect()
            } else {
                crate::toy::masked_variables_for(&s.id, n_features, m, cfg.dataset.seed)
            };
            (s.id.clone(), vars)
        })
        .collect();

    let losses_by_epoch: BTreeMap<u64, (f64, f64)> =
        run.losses.iter().map(|&(e, tr, te)| (e, (tr, te))).collect();

    // one job per (checkpoint, sample)
    let jobs: Vec<(u64, &ToyNetwork, &Sample, &[usize])> = run
        .checkpoints
        .iter()
        .flat_map(|cp| {
            analyzed.iter().zip(&variables).map(move |(s, (_, vars))| {
                (cp.epoch, &cp.network, *s, vars.as_slice())
            })
        })
        .collect();
    let baselines: Vec<f64> = match cfg.analysis.baseline {
        MaskBaseline::DatasetMean => dataset.baselines.clone(),
        MaskBaseline::Zero => vec![0.0; n_features],
    };
    let table_dir = out_dir.join("tables");
    jobs.par_iter().try_for_each(|&(epoch, net, sample, vars)| -> Result<()> {
        let table = emit_masked_table(net, sample, &baselines, vars, cfg.analysis.score, epoch)?;
        let ids: Vec<u32> = vars.iter().map(|&v| v as u32).collect();
        write_table_file(&table_dir.join(table_file_name(&sample.id, epoch)), &table, &ids)
    })?;

    // checkpoint weight blobs
    for cp in &run.checkpoints {
        crate::io::write_atomic(
            &out_dir.join("checkpoints").join(format!("e{:04}.toynet", cp.epoch)),
            &cp.network.to_blob(),
        )?;
    }

    // full loss curve for plotting
    {
        let mut csv = String::from("# losses-csv v1\nepoch,train_loss,test_loss,gap\n");
        for &(e, tr, te) in &run.losses {
            csv.push_str(&format!("{e},{tr},{te},{}\n", te - tr));
        }
        crate::io::write_atomic(&out_dir.join("losses_full.csv"), csv.as_bytes())?;
    }

    let mut manifest = SeriesManifest::new(m as u32, cfg.analysis.score.to_string());
    manifest.samples = analyzed
        .iter()
        .map(|s| SampleRecord {
            id: s.id.clone(),
            category: s.category,
            split: s.split,
            relabeled: s.relabeled,
        })
        .collect();
    manifest.epochs = run
        .checkpoints
        .iter()
        .map(|cp| {
            let (train_loss, test_loss) = losses_by_epoch[&cp.epoch];
            EpochEntry {
                epoch: cp.epoch,
                train_loss,
                test_loss,
                tables: analyzed
                    .iter()
                    .map(|s| TableRef {
                        sample_id: s.id.clone(),
                        path: format!("tables/{}", table_file_name(&s.id, cp.epoch)),
                    })
                    .collect(),
            }
        })
        .collect();

    let manifest_path = out_dir.join("series.manifest.json");
    manifest.write(&manifest_path)?;
    Ok(EmittedRun { manifest_path, manifest, dataset, run })
}

fn table_file_name(sample_id: &str, epoch: u64) -> String {
    format!("{sample_id}_e{epoch:04}.motbl")
}

/// Train a clean reference model, relabel the lowest-confidence train
/// samples per class to the model's second-best class, retrain from scratch
/// on the noisy dataset, and emit that run. The analyzed train set keeps all
/// relabeled samples first so clean-vs-relabeled comparisons have support.
pub fn run_noisy_label_experiment(
    cfg: &ExperimentConfig,
    count_per_class: usize,
    pretrain_epochs: u64,
    out_dir: &Path,
) -> Result<EmittedRun> {
    let dataset = generate_dataset(&cfg.dataset)?;
    let reference = ToyNetwork::new(cfg.net.clone())?;
    let pretrain_cfg = TrainConfig::new(pretrain_epochs, cfg.train.lr, cfg.train.batch_size, cfg.train.seed);
    let pretrained = train(reference, &dataset, &pretrain_cfg)?;
    let (noisy, _report) =
        inject_label_noise(&dataset, &pretrained.final_checkpoint().network, count_per_class)?;

    // fresh network, fresh training on the relabeled data
    let retrain_net = ToyNetwork::new(NetConfig { seed: cfg.net.seed ^ 0x7265, ..cfg.net.clone() })?;
    let run = train(retrain_net, &noisy, &cfg.train)?;
    emit_run(cfg, noisy, run, out_dir)
}

/// Per-epoch aggregate profiles and the phase report for a manifest.
pub struct SeriesAnalysis {
    pub records: Vec<EpochRecord>,
    pub report: PhaseReport,
}

fn spectra_at_entry(
    manifest_path: &Path,
    manifest: &SeriesManifest,
    entry: &EpochEntry,
    gamma: &GammaMode,
    keep: impl Fn(&SampleRecord) -> bool + Sync,
) -> Result<Vec<(SampleRecord, InteractionSpectrum)>> {
    let refs: Vec<&TableRef> = entry
        .tables
        .iter()
        .filter(|t| manifest.sample(&t.sample_id).map(&keep).unwrap_or(false))
        .collect();
    refs.par_iter()
        .map(|t| {
            let record = manifest.sample(&t.sample_id).expect("filtered above").clone();
            let table = read_table_file(&manifest.resolve(manifest_path, t))?;
            Ok((record, gamma.spectrum(&table)?))
        })
        .collect()
}

/// Aggregate the train-split samples of every epoch and run the transition
/// detector.
pub fn analyze_series(
    manifest_path: &Path,
    gamma: &GammaMode,
    tau: TauRule,
    smooth_window: usize,
) -> Result<SeriesAnalysis> {
    let manifest = SeriesManifest::read(manifest_path)?;
    manifest.validate(manifest_path)?;
    let mut records = Vec::with_capacity(manifest.epochs.len());
    for entry in &manifest.epochs {
        let spectra =
            spectra_at_entry(manifest_path, &manifest, entry, gamma, |s| s.split == Split::Train)?;
        if spectra.is_empty() {
            return Err(Error::Manifest("no train-split samples to analyze".into()));
        }
        let profiles: Vec<OrderProfile> =
            spectra.iter().map(|(_, sp)| order_profile(sp, tau.resolve(sp))).collect();
        records.push(EpochRecord {
            epoch: entry.epoch,
            profile: aggregate_epoch(&profiles)?,
            train_loss: entry.train_loss,
            test_loss: entry.test_loss,
        });
    }
    let report = detect_transition(&records, smooth_window)?;
    Ok(SeriesAnalysis { records, report })
}

/// Per-order train/test category-mean Jaccard similarity at one epoch
/// (default: the last).
///
/// Each order-k category mean concatenates the AND and OR branch vectors
/// (length 2*C(n,k)): summing the branches per subset lets opposite-signed
/// AND/OR pairs cancel and injects noise at the sparse high orders, while
/// the concatenation keeps both distributions intact.
pub fn jaccard_curve_at_epoch(
    manifest_path: &Path,
    gamma: &GammaMode,
    epoch: Option<u64>,
) -> Result<Vec<(usize, f64)>> {
    let manifest = SeriesManifest::read(manifest_path)?;
    manifest.validate(manifest_path)?;
    let entry = match epoch {
        Some(e) => manifest
            .epochs
            .iter()
            .find(|en| en.epoch == e)
            .ok_or_else(|| Error::Manifest(format!("epoch {e} not in manifest")))?,
        None => manifest.epochs.last().ok_or_else(|| Error::Manifest("empty manifest".into()))?,
    };
    let spectra = spectra_at_entry(manifest_path, &manifest, entry, gamma, |_| true)?;
    let n = manifest.n as usize;

    let mut means = BTreeMap::<(Split, usize, u32), Vec<OrderVector>>::new();
    for (record, spectrum) in &spectra {
        for k in 1..=n {
            let and_part = vectorize_order(spectrum, k, Branch::And)?;
            let or_part = vectorize_order(spectrum, k, Branch::Or)?;
            let concat = OrderVector {
                n,
                k,
                values: and_part.values.into_iter().chain(or_part.values).collect(),
            };
            means.entry((record.split, k, record.category)).or_default().push(concat);
        }
    }
    // categories present in both splits at every order
    let common: Vec<(usize, u32)> = means
        .keys()
        .filter(|(split, _, _)| *split == Split::Train)
        .map(|&(_, k, c)| (k, c))
        .filter(|&(k, c)| means.contains_key(&(Split::Test, k, c)))
        .collect();
    if common.is_empty() {
        return Err(Error::Manifest("no category present in both splits".into()));
    }
    let side = |split: Split| -> Result<Vec<_>> {
        common
            .iter()
            .map(|&(k, c)| category_mean(c, &means[&(split, k, c)]))
            .collect()
    };
    generalization_curve(&side(Split::Train)?, &side(Split::Test)?)
}

/// Aggregate per-order profile of the clean and relabeled train groups at
/// one epoch (default: the last), for the strength-distribution comparison.
///
/// A relative tau rule resolves to one shared threshold for the whole
/// comparison (the rule's ratio times the mean of the per-sample maxima):
/// per-sample thresholds would rescale every sample to its own largest
/// effect and wash out exactly the cross-group contrast being measured.
pub fn group_profiles_at_epoch(
    manifest_path: &Path,
    gamma: &GammaMode,
    tau: TauRule,
    epoch: Option<u64>,
) -> Result<(OrderProfile, OrderProfile)> {
    let manifest = SeriesManifest::read(manifest_path)?;
    manifest.validate(manifest_path)?;
    let entry = match epoch {
        Some(e) => manifest
            .epochs
            .iter()
            .find(|en| en.epoch == e)
            .ok_or_else(|| Error::Manifest(format!("epoch {e} not in manifest")))?,
        None => manifest.epochs.last().ok_or_else(|| Error::Manifest("empty manifest".into()))?,
    };
    let spectra =
        spectra_at_entry(manifest_path, &manifest, entry, gamma, |s| s.split == Split::Train)?;
    if spectra.is_empty() {
        return Err(Error::Manifest("no train-split samples in the manifest".into()));
    }
    let shared_tau = match tau {
        TauRule::Absolute(v) => v,
        TauRule::Relative(r) => {
            r * spectra.iter().map(|(_, s)| s.max_abs_effect()).sum::<f64>()
                / spectra.len() as f64
        }
    };
    let mut clean = Vec::new();
    let mut relabeled = Vec::new();
    for (record, spectrum) in &spectra {
        let profile = order_profile(spectrum, shared_tau);
        if record.relabeled {
            relabeled.push(profile);
        } else {
            clean.push(profile);
        }
    }
    if clean.is_empty() || relabeled.is_empty() {
        return Err(Error::Manifest(
            "need both clean and relabeled train samples in the manifest".into(),
        ));
    }
    Ok((aggregate_epoch(&clean)?, aggregate_epoch(&relabeled)?))
}

/// Mean salient order of the clean vs relabeled train-split groups at one
/// epoch (default: the last). Returns (clean, relabeled).
pub fn group_mean_orders_at_epoch(
    manifest_path: &Path,
    gamma: &GammaMode,
    tau: TauRule,
    epoch: Option<u64>,
) -> Result<(f64, f64)> {
    let (clean, relabeled) = group_profiles_at_epoch(manifest_path, gamma, tau, epoch)?;
    Ok((clean.mean_salient_order(), relabeled.mean_salient_order()))
}

/// Write a small synthetic series whose mean salient order follows a V over
/// epochs and whose loss gap rises after the vertex: planted single-AND
/// tables of orders 5,3,1,2,4 at n=6. Meant for demos and smoke tests;
/// analyze it with the sparsifying gamma mode.
pub fn write_synthetic_v_series(out_dir: &Path) -> Result<PathBuf> {
    use crate::lattice::TableMeta;
    let orders = [5usize, 3, 1, 2, 4];
    let gaps = [0.00, 0.01, 0.02, 0.35, 0.80];
    let n = 6usize;
    let mut manifest = SeriesManifest::new(n as u32, "logit".into());
    manifest.samples.push(SampleRecord {
        id: "v0".into(),
        category: 0,
        split: Split::Train,
        relabeled: false,
    });
    for (i, (&order, &gap)) in orders.iter().zip(&gaps).enumerate() {
        let planted = ((1u32 << order) - 1) << (n - order);
        let values: Vec<f64> = (0..1u32 << n)
            .map(|m| if m & planted == planted { 5.0 } else { 0.0 })
            .collect();
        let table = MaskedOutputTable::new(
            n,
            values,
            TableMeta {
                sample_id: "v0".into(),
                epoch: i as u64,
                score: "logit".into(),
                baseline: "feature-mean".into(),
                clamped: false,
            },
        )?;
        let rel = format!("tables/v0_e{i:04}.motbl");
        let ids: Vec<u32> = (0..n as u32).collect();
        write_table_file(&out_dir.join(&rel), &table, &ids)?;
        manifest.epochs.push(EpochEntry {
            epoch: i as u64,
            train_loss: 0.5,
            test_loss: 0.5 + gap,
            tables: vec![TableRef { sample_id: "v0".into(), path: rel }],
        });
    }
    let path = out_dir.join("series.manifest.json");
    manifest.write(&path)?;
    Ok(path)
}
