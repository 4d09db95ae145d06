use andor_core::dynamics::initial_fusiform_check;
use andor_core::interaction::{
    check_stability_conditions, decompose, estimate_kappa, salient_sets, sparsify,
    verify_universal_matching, GammaSplit, SparsifierConfig, TauRule,
};
use andor_core::io::{
    read_spectrum_file, read_table_file, write_atomic, write_epoch_series_csv,
    write_order_profile_csv, write_phase_report, write_similarity_csv, write_spectrum_file,
};
use andor_core::lattice::{
    mobius_transform, zeta_transform, LatticeVector, MaskedOutputTable, TableMeta,
};
use andor_core::pipeline::{
    analyze_series, group_profiles_at_epoch, jaccard_curve_at_epoch, run_and_emit,
    run_noisy_label_experiment, ExperimentConfig, GammaMode,
};
use andor_core::toy::ScoreDefinition;
use clap::{Args, ValueEnum};
use std::fmt::Write as _;
use std::path::PathBuf;

pub type CmdResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GammaArg {
    Zero,
    Sparsify,
}

#[derive(Args, Debug, Clone)]
pub struct GammaOpts {
    /// Gamma handling: fixed at zero or optimized for sparsity.
    #[arg(long, value_enum, default_value = "sparsify")]
    gamma: GammaArg,
    /// Gamma box-constraint ratio.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Sparsifier pass budget.
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    /// Seed reserved for stochastic tie-breaking in the sparsifier.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GammaOpts {
    fn mode(&self) -> GammaMode {
        match self.gamma {
            GammaArg::Zero => GammaMode::Zero,
            GammaArg::Sparsify => GammaMode::Sparsify(SparsifierConfig {
                bound_ratio: self.rho,
                iterations: self.iters,
                seed: self.seed,
                ..SparsifierConfig::default()
            }),
        }
    }
}

/// `rel:<r>` (fraction of the largest effect) or `abs:<v>`.
fn parse_tau(s: &str) -> Result<TauRule, String> {
    let (kind, value) = s.split_once(':').ok_or("expected rel:<r> or abs:<v>")?;
    let value: f64 = value.parse().map_err(|_| format!("bad tau value '{value}'"))?;
    if !value.is_finite() || value < 0.0 {
        return Err("tau must be >= 0".into());
    }
    match kind {
        "rel" => Ok(TauRule::Relative(value)),
        "abs" => Ok(TauRule::Absolute(value)),
        other => Err(format!("unknown tau kind '{other}'")),
    }
}

fn out_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(crate::default_out)
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Masked-output table files.
    #[arg(required = true)]
    tables: Vec<PathBuf>,
    #[command(flatten)]
    gamma: GammaOpts,
    /// Saliency threshold rule.
    #[arg(long, value_parser = parse_tau, default_value = "rel:0.05")]
    tau: TauRule,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn extract(args: ExtractArgs) -> CmdResult {
    use rayon::prelude::*;
    let dir = out_dir(&args.out);
    let mode = args.gamma.mode();
    // independent files go through the worker pool; results are reported in
    // input order so the summary stays deterministic
    let results: Vec<Result<String, String>> = args
        .tables
        .par_iter()
        .map(|path| extract_one(path, &mode, args.tau, &dir).map_err(|e| e.to_string()))
        .collect();
    let mut summary = String::from("# extract-csv v1\nfile,n,salient_and,salient_or,tau,match_max_err,objective,top_and,top_or\n");
    let mut failures = 0usize;
    for (path, result) in args.tables.iter().zip(results) {
        match result {
            Ok(line) => {
                println!("{line}");
                summary.push_str(&line);
                summary.push('\n');
            }
            Err(err) => {
                eprintln!("error: {}: {err}", path.display());
                failures += 1;
            }
        }
    }
    write_atomic(&dir.join("extract_summary.csv"), summary.as_bytes())?;
    if failures > 0 {
        return Err(format!("{failures} of {} tables failed", args.tables.len()).into());
    }
    Ok(())
}

fn extract_one(
    path: &std::path::Path,
    mode: &GammaMode,
    tau: TauRule,
    dir: &std::path::Path,
) -> Result<String, Box<dyn std::error::Error>> {
    let table = read_table_file(path)?;
    let spectrum = mode.spectrum(&table)?;
    let resolved_tau = tau.resolve(&spectrum);
    let (and_set, or_set) = salient_sets(&spectrum, resolved_tau);
    let report = verify_universal_matching(&spectrum, &table, false, 0.0)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
    write_spectrum_file(&dir.join(format!("{stem}.specf")), &spectrum)?;
    // strongest salient set per branch, for the summary
    let top = |set: &std::collections::BTreeSet<andor_core::lattice::SubsetMask>,
               effects: &andor_core::lattice::LatticeVector| {
        set.iter()
            .max_by(|a, b| effects.get(**a).abs().total_cmp(&effects.get(**b).abs()))
            .map(|m| m.to_string())
            .unwrap_or_else(|| "-".into())
    };
    Ok(format!(
        "{},{},{},{},{},{},{},{},{}",
        path.display(),
        table.var_count(),
        and_set.len(),
        or_set.len(),
        resolved_tau,
        report.max_abs_error,
        spectrum.l1_objective(),
        top(&and_set, spectrum.i_and()),
        top(&or_set, spectrum.i_or()),
    ))
}

// ---------------------------------------------------------------------------
// orders
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct OrdersArgs {
    /// Spectrum files.
    #[arg(required = true)]
    spectra: Vec<PathBuf>,
    #[arg(long, value_parser = parse_tau, default_value = "rel:0.05")]
    tau: TauRule,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn orders(args: OrdersArgs) -> CmdResult {
    let mut profiles = Vec::new();
    for path in &args.spectra {
        let spectrum = read_spectrum_file(path)?;
        profiles.push(andor_core::metrics::order_profile(&spectrum, args.tau.resolve(&spectrum)));
    }
    let aggregate = andor_core::dynamics::aggregate_epoch(&profiles)?;
    let path = out_dir(&args.out).join("orders.csv");
    write_order_profile_csv(&path, &aggregate)?;
    println!("wrote {} ({} spectra, mean salient order {})", path.display(), profiles.len(), aggregate.mean_salient_order());
    Ok(())
}

// ---------------------------------------------------------------------------
// jaccard
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct JaccardArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    gamma: GammaOpts,
    /// Epoch to analyze (default: last in the manifest).
    #[arg(long)]
    epoch: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn jaccard(args: JaccardArgs) -> CmdResult {
    let curve = jaccard_curve_at_epoch(&args.manifest, &args.gamma.mode(), args.epoch)?;
    let path = out_dir(&args.out).join("jaccard.csv");
    write_similarity_csv(&path, &curve)?;
    println!("wrote {}", path.display());
    for (k, sim) in &curve {
        println!("order {k}: {sim:.4}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// dynamics
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct DynamicsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    gamma: GammaOpts,
    #[arg(long, value_parser = parse_tau, default_value = "rel:0.05")]
    tau: TauRule,
    /// Smoothing window (records) for the detector.
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn dynamics(args: DynamicsArgs) -> CmdResult {
    let analysis = analyze_series(&args.manifest, &args.gamma.mode(), args.tau, args.window)?;
    let dir = out_dir(&args.out);
    write_epoch_series_csv(&dir.join("epochs.csv"), &analysis.records)?;
    write_phase_report(&dir.join("phase_report.txt"), &analysis.report)?;
    println!("transition_epoch: {}", analysis.report.transition_label());
    println!(
        "gap_rise_epoch: {}",
        analysis.report.gap_rise_epoch.map(|e| e.to_string()).unwrap_or_else(|| "none".into())
    );
    println!(
        "alignment_offset: {}",
        analysis.report.alignment_offset.map(|o| o.to_string()).unwrap_or_else(|| "n/a".into())
    );
    println!("wrote {} and {}", dir.join("epochs.csv").display(), dir.join("phase_report.txt").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Monte Carlo trials for the noise-baseline check.
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

struct CheckSheet {
    failures: usize,
}

impl CheckSheet {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        if pass {
            println!("[ok]   {name}: {detail}");
        } else {
            println!("[FAIL] {name}: {detail}");
            self.failures += 1;
        }
    }
}

pub fn verify(args: VerifyArgs) -> CmdResult {
    use rand::{Rng, SeedableRng};
    let mut sheet = CheckSheet { failures: 0 };
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(args.seed);

    // Möbius/zeta round trips against the naive triple loop
    let mut worst_naive = 0.0f64;
    for n in 1..=8usize {
        let vals: Vec<f64> = (0..1usize << n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = LatticeVector::new(n, vals.clone())?;
        let fast = mobius_transform(&f);
        for s in 0..1usize << n {
            let mut acc = 0.0;
            for t in 0..=s {
                if t & s == t {
                    let sign = if ((s.count_ones() - (t as u32).count_ones()) % 2) == 0 { 1.0 } else { -1.0 };
                    acc += sign * vals[t];
                }
            }
            worst_naive = worst_naive.max((fast[s] - acc).abs());
        }
    }
    sheet.check("mobius vs naive (n<=8)", worst_naive < 1e-10, format!("max err {worst_naive:.2e}"));

    let mut worst_rt = 0.0f64;
    {
        let vals: Vec<f64> = (0..1usize << 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = LatticeVector::new(12, vals.clone())?;
        let back = zeta_transform(&mobius_transform(&f));
        for (a, b) in back.as_slice().iter().zip(&vals) {
            worst_rt = worst_rt.max((a - b).abs());
        }
    }
    sheet.check("round trip (n=12)", worst_rt < 1e-10, format!("max err {worst_rt:.2e}"));

    // universal matching on random tables, both gamma modes
    let mut worst_match = 0.0f64;
    for _ in 0..20 {
        let vals: Vec<f64> = (0..256).map(|_| rng.random_range(-2.0..2.0)).collect();
        let table = MaskedOutputTable::new(8, vals, TableMeta::default())?;
        for spectrum in [
            decompose(&table, &GammaSplit::zero(8)?)?,
            sparsify(&table, &SparsifierConfig::fast())?,
        ] {
            let report = verify_universal_matching(&spectrum, &table, false, 0.0)?;
            worst_match = worst_match.max(report.max_abs_error / report.scale);
        }
    }
    sheet.check("universal matching (n=8)", worst_match < 1e-9, format!("max rel err {worst_match:.2e}"));

    // sparsifier recovers planted structures at their floors
    {
        let planted = 0b111u32;
        let and_vals: Vec<f64> =
            (0..64u32).map(|m| if m & planted == planted { 5.0 } else { 0.0 }).collect();
        let and_table = MaskedOutputTable::new(6, and_vals, TableMeta::default())?;
        let s = sparsify(&and_table, &SparsifierConfig::default())?;
        let ok_and = s.l1_objective() <= 5.0 * 1.05 && s.i_and()[0b111] > 4.5;
        let or_vals: Vec<f64> = (0..64u32).map(|m| if m & 0b11 != 0 { 5.0 } else { 0.0 }).collect();
        let or_table = MaskedOutputTable::new(6, or_vals, TableMeta::default())?;
        let s2 = sparsify(&or_table, &SparsifierConfig::default())?;
        let ok_or = s2.l1_objective() <= 5.0 * 1.05 && s2.i_or()[0b11] > 4.5;
        sheet.check(
            "sparsifier planted floors",
            ok_and && ok_or,
            format!("AND obj {:.4}, OR obj {:.4}", s.l1_objective(), s2.l1_objective()),
        );
    }

    // stability conditions: linear table passes with p near 1, dip fails at (2,3)
    {
        let n = 6;
        let w = [0.5, 0.9, 1.3, 0.7, 1.1, 0.4];
        let vals: Vec<f64> = (0..1usize << n)
            .map(|m| (0..n).filter(|&i| m & (1 << i) != 0).map(|i| w[i]).sum())
            .collect();
        let table = MaskedOutputTable::new(n, vals, TableMeta::default())?;
        let spectrum = decompose(&table, &GammaSplit::zero(n)?)?;
        let cond = check_stability_conditions(&table, &spectrum, 1, 1e-9)?;
        let p = cond.cond3_p.unwrap_or(f64::NAN);
        let pass_linear = cond.cond1_pass && cond.cond2_pass && cond.cond3_pass && (p - 1.0).abs() <= 0.1;

        let by_order = [0.0, 1.0, 4.0, 2.0, 5.0, 6.0, 7.0];
        let vals: Vec<f64> =
            (0..1usize << n).map(|m| by_order[(m as u32).count_ones() as usize]).collect();
        let table = MaskedOutputTable::new(n, vals, TableMeta::default())?;
        let spectrum = decompose(&table, &GammaSplit::zero(n)?)?;
        let cond2 = check_stability_conditions(&table, &spectrum, n, 1e-6)?;
        let pass_dip = !cond2.cond2_pass && cond2.cond2_witness == Some((2, 3));
        sheet.check(
            "stability conditions",
            pass_linear && pass_dip,
            format!("linear p {p:.4}, dip witness {:?}", cond2.cond2_witness),
        );
    }

    // Gaussian-noise baseline: Monte Carlo vs closed form
    {
        let n = 10;
        let mc = andor_core::metrics::fusiform_monte_carlo(n, 1.0, args.trials, args.seed)?;
        let mut worst = 0.0f64;
        for k in 1..=n {
            let (e_pos, _) = andor_core::metrics::noise_strength_expectation(n, k, 1.0);
            worst = worst.max((mc[k].0 - e_pos).abs() / e_pos);
            worst = worst.max((mc[k].1 + e_pos).abs() / e_pos);
        }
        let strengths: Vec<f64> = (1..=n).map(|k| mc[k].0).collect();
        let (unimodal, peak) = andor_core::metrics::is_unimodal(&strengths, 1e-9);
        sheet.check(
            "noise baseline Monte Carlo",
            worst < 0.02 && unimodal && peak + 1 == 5,
            format!("max rel err {worst:.4}, peak order {}", peak + 1),
        );
    }

    // kappa fit sanity
    {
        let reports: Vec<(usize, f64, usize)> =
            [6usize, 8, 10, 12].iter().map(|&n| (n, 0.05, (4.0 * n as f64 / 0.05).round() as usize)).collect();
        let (kappa, _) = estimate_kappa(&reports)?;
        sheet.check("kappa fit", (kappa - 1.0).abs() < 0.01, format!("planted 1.0, fitted {kappa:.4}"));
    }

    if sheet.failures > 0 {
        return Err(format!("{} checks failed", sheet.failures).into());
    }
    println!("all checks passed");
    Ok(())
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    epochs: u64,
    /// Output score definition.
    #[arg(long, default_value = "logit", value_parser = parse_score)]
    score: ScoreDefinition,
    /// Relabel this many lowest-confidence train samples per class (using a
    /// pretrained reference model) and train on the noisy labels.
    #[arg(long)]
    label_noise_per_class: Option<usize>,
    /// Epochs for the reference model behind --label-noise-per-class.
    #[arg(long, default_value_t = 64)]
    pretrain_epochs: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_score(s: &str) -> Result<ScoreDefinition, String> {
    s.parse().map_err(|e: andor_core::Error| e.to_string())
}

pub fn train_toy(args: TrainToyArgs) -> CmdResult {
    let dir = out_dir(&args.out);
    let mut cfg = ExperimentConfig::phenomenon_default(args.seed);
    cfg.train.epochs = args.epochs;
    cfg.train.checkpoint_epochs = andor_core::toy::checkpoint_epochs(args.epochs);
    cfg.analysis.score = args.score;
    let emitted = match args.label_noise_per_class {
        Some(count) => run_noisy_label_experiment(&cfg, count, args.pretrain_epochs, &dir)?,
        None => run_and_emit(&cfg, &dir)?,
    };
    println!("wrote {}", emitted.manifest_path.display());
    println!(
        "epochs: {}, analyzed samples: {}, final losses: train {:.4} test {:.4}",
        emitted.manifest.epochs.len(),
        emitted.manifest.samples.len(),
        emitted.run.losses.last().unwrap().1,
        emitted.run.losses.last().unwrap().2,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// emit-plots
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EmitPlotsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    gamma: GammaOpts,
    #[arg(long, value_parser = parse_tau, default_value = "rel:0.05")]
    tau: TauRule,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn emit_plots(args: EmitPlotsArgs) -> CmdResult {
    let dir = out_dir(&args.out);
    let mode = args.gamma.mode();
    let analysis = analyze_series(&args.manifest, &mode, args.tau, args.window)?;

    // loss panel
    let mut fig1b = String::from("# fig1b-csv v1\nepoch,train_loss,test_loss,gap\n");
    for rec in &analysis.records {
        writeln!(fig1b, "{},{},{},{}", rec.epoch, rec.train_loss, rec.test_loss, rec.gap()).unwrap();
    }
    write_atomic(&dir.join("fig1b_losses.csv"), fig1b.as_bytes())?;

    // per-epoch per-order strengths
    let n = analysis.records.first().map(|r| r.profile.var_count()).unwrap_or(0);
    let mut fig2 = String::from("# fig2-csv v1\nepoch,order,j_pos,j_neg\n");
    for rec in &analysis.records {
        for k in 1..=n {
            writeln!(fig2, "{},{k},{},{}", rec.epoch, rec.profile.j_pos(k), rec.profile.j_neg(k))
                .unwrap();
        }
    }
    write_atomic(&dir.join("fig2_orders.csv"), fig2.as_bytes())?;

    // generalization curve at the final epoch
    let curve = jaccard_curve_at_epoch(&args.manifest, &mode, None)?;
    write_similarity_csv(&dir.join("fig3_jaccard.csv"), &curve)?;

    // clean vs relabeled comparison, when the run has relabeled samples
    match group_profiles_at_epoch(&args.manifest, &mode, args.tau, None) {
        Ok((clean, relabeled)) => {
            let mut fig4 = String::from("# fig4-csv v1\norder,strength_clean,strength_relabeled\n");
            for k in 1..=clean.var_count() {
                writeln!(fig4, "{k},{},{}", clean.strength(k), relabeled.strength(k)).unwrap();
            }
            write_atomic(&dir.join("fig4_label_noise.csv"), fig4.as_bytes())?;
            println!(
                "mean salient order: clean {:.3}, relabeled {:.3}",
                clean.mean_salient_order(),
                relabeled.mean_salient_order()
            );
        }
        Err(_) => println!("no relabeled samples in manifest; skipping fig4_label_noise.csv"),
    }

    write_phase_report(&dir.join("phase_report.txt"), &analysis.report)?;
    write_epoch_series_csv(&dir.join("epochs.csv"), &analysis.records)?;

    // epoch-0 shape check for reference
    let (fusiform_pass, peak) = initial_fusiform_check(&analysis.records[0], 1.0);
    println!("epoch-0 fusiform: {} (peak order {peak})", if fusiform_pass { "pass" } else { "fail" });
    println!("transition_epoch: {}", analysis.report.transition_label());
    println!("wrote plot CSVs under {}", dir.display());
    Ok(())
}
