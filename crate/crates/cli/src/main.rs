//! Command-line surface for the nodule attribute scoring experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use anct_core::attributes::{Attribute, ATTRIBUTE_COUNT};
use anct_core::data::{
    compute_dataset_stats, load_volume, make_folds, synth_generate, write_stats, DatasetManifest,
    NoduleSample, SynthConfig, FOLD_COUNT,
};
use anct_core::eval::{
    denormalized_predictions, evaluate_with_records, forward_records_jsonl, paired_t_test,
    write_attn_json, write_eval_csv, CaamCorrMode, EvalReport, TTestResult,
};
use anct_core::model::{load_checkpoint, save_checkpoint, ChannelPreset, NoduleModel};
use anct_core::train::{run_fold, train_model, TrainConfig};

#[derive(Parser)]
#[command(
    name = "anct",
    about = "Attention-enhanced multi-task scoring of lung-nodule attributes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic nodule corpus.
    Synth(SynthArgs),
    /// Train one model on a dataset (optionally one fold's training split).
    Train(TrainArgs),
    /// Run the full 5-fold protocol, or compare two finished runs.
    Xval(XvalArgs),
    /// Evaluate a checkpoint on a dataset or held-out fold.
    Eval(EvalArgs),
    /// Score one volume file with a checkpoint.
    Predict(PredictArgs),
    /// Dump per-nodule attention records and the attention report.
    AttnExport(AttnExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of nodules.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated raters per nodule (1 stores exact scores).
    #[arg(long, default_value_t = 1)]
    raters: usize,
    /// Output directory for volumes and manifest.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TrainOverrides {
    /// JSON config file (training + model sections); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Auxiliary-loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Disable slice attention.
    #[arg(long)]
    no_sam: bool,
    /// Disable cross-attribute mixing (and specialisation).
    #[arg(long)]
    no_caam: bool,
    /// Disable the auxiliary heads and loss.
    #[arg(long)]
    no_ascmm: bool,
    /// Disable online augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Backbone preset: paper or tiny.
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated attribute subset entering the loss.
    #[arg(long)]
    attributes: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and reports.
    #[arg(long)]
    out: PathBuf,
    /// Train on the training side of this fold instead of the whole set.
    #[arg(long)]
    fold_test: Option<usize>,
    /// Seed of the fold assignment (shared across variants).
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct XvalArgs {
    #[arg(long, required_unless_present = "compare_a")]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
    /// First finished xval run directory for comparison mode.
    #[arg(long, requires = "compare_b")]
    compare_a: Option<PathBuf>,
    /// Second finished xval run directory for comparison mode.
    #[arg(long, requires = "compare_a")]
    compare_b: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict evaluation to this held-out fold.
    #[arg(long)]
    fold_test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
    /// Correlate attention weight rows or columns.
    #[arg(long, default_value = "rows")]
    corr_mode: String,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Volume file to score.
    #[arg(long)]
    volume: PathBuf,
}

#[derive(Args)]
struct AttnExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fold_test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
    #[arg(long, default_value = "rows")]
    corr_mode: String,
}

/// Anything the user got wrong (flags, config, dataset contracts): exit 1.
/// Failures while executing a valid request: exit 2.
#[derive(Debug)]
enum CliFail {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

fn validation<E: Into<anyhow::Error>>(e: E) -> CliFail {
    CliFail::Validation(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> CliFail {
    CliFail::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Xval(args) => cmd_xval(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::AttnExport(args) => cmd_attn_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliFail::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliFail::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Resolved invocation written into every run directory.
#[derive(Serialize, Deserialize)]
struct ResolvedRun {
    command: String,
    data: Option<PathBuf>,
    fold_test: Option<usize>,
    fold_seed: Option<u64>,
    train: TrainConfig,
}

fn resolve_train_config(overrides: &TrainOverrides) -> Result<TrainConfig> {
    let mut config: TrainConfig = match &overrides.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = overrides.epochs {
        config.epochs = v;
    }
    if let Some(v) = overrides.lr {
        config.lr = v;
    }
    if let Some(v) = overrides.seed {
        config.seed = v;
    }
    if let Some(v) = overrides.lambda {
        config.model.lambda = v;
    }
    if overrides.no_sam {
        config.model.enable_sam = false;
    }
    if overrides.no_caam {
        config.model.enable_caam = false;
        config.model.enable_ascmm = false;
    }
    if overrides.no_ascmm {
        config.model.enable_ascmm = false;
    }
    if overrides.no_augment {
        config.augment = false;
    }
    if let Some(preset) = &overrides.preset {
        config.model.preset = match preset.as_str() {
            "paper" => ChannelPreset::Paper,
            "tiny" => ChannelPreset::Tiny,
            other => bail!("unknown preset {other:?} (expected paper or tiny)"),
        };
    }
    if let Some(list) = &overrides.attributes {
        let mut attrs = Vec::new();
        for name in list.split(',') {
            let name = name.trim();
            let attr = Attribute::from_name(name)
                .ok_or_else(|| anyhow!("unknown attribute {name:?}"))?;
            attrs.push(attr);
        }
        config.model.active_attributes = attrs;
    }
    config.validate()?;
    Ok(config)
}

fn ensure_out_dir(path: &Path) -> Result<(), CliFail> {
    fs::create_dir_all(path)
        .with_context(|| format!("creating output directory {}", path.display()))
        .map_err(runtime)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliFail> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn load_dataset(path: &Path) -> Result<(DatasetManifest, Vec<NoduleSample>), CliFail> {
    let manifest = DatasetManifest::load(path).map_err(validation)?;
    let samples = manifest.load_samples().map_err(validation)?;
    Ok((manifest, samples))
}

/// Split samples into (train, test) of a fold; `None` keeps everything in
/// the training side.
fn fold_sides(
    samples: Vec<NoduleSample>,
    fold_test: Option<usize>,
    fold_seed: u64,
) -> Result<(Vec<NoduleSample>, Vec<NoduleSample>), CliFail> {
    let Some(fold) = fold_test else {
        return Ok((samples, Vec::new()));
    };
    if fold >= FOLD_COUNT {
        return Err(validation(anyhow!(
            "fold index {fold} out of range (0..{FOLD_COUNT})"
        )));
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = make_folds(&ids, fold_seed).map_err(validation)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if split.fold_of(&s.id) == Some(fold) {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, test))
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliFail> {
    if args.count == 0 {
        return Err(validation(anyhow!("--count must be at least 1")));
    }
    if args.raters == 0 {
        return Err(validation(anyhow!("--raters must be at least 1")));
    }
    ensure_out_dir(&args.out)?;
    let cfg = SynthConfig {
        count: args.count,
        seed: args.seed,
        rater_count: args.raters,
    };
    let manifest = synth_generate(&cfg, &args.out).map_err(runtime)?;
    write_json(
        &serde_json::json!({
            "command": "synth",
            "count": args.count,
            "seed": args.seed,
            "raters": args.raters,
        }),
        &args.out.join("synth.json"),
    )?;
    println!(
        "wrote {} volumes and manifest.jsonl to {}",
        manifest.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliFail> {
    let config = resolve_train_config(&args.overrides).map_err(validation)?;
    let (_, samples) = load_dataset(&args.data)?;
    let (train_set, _) = fold_sides(samples, args.fold_test, args.fold_seed)?;
    if train_set.is_empty() {
        return Err(validation(anyhow!("training split is empty")));
    }
    ensure_out_dir(&args.out)?;
    write_json(
        &ResolvedRun {
            command: "train".into(),
            data: Some(args.data.clone()),
            fold_test: args.fold_test,
            fold_seed: args.fold_test.map(|_| args.fold_seed),
            train: config.clone(),
        },
        &args.out.join("config.json"),
    )?;

    let stats =
        compute_dataset_stats(train_set.iter().map(|s| &s.volume.slices)).map_err(runtime)?;
    write_stats(&stats, &args.out.join("stats.json")).map_err(runtime)?;
    let (model, report) = train_model::<f32>(&train_set, &stats, &config).map_err(runtime)?;
    save_checkpoint(
        &model.params,
        &model.config,
        Some(&stats),
        &args.out.join("model.ckpt"),
    )
    .map_err(runtime)?;
    // wall time goes to its own file so every other artifact is
    // reproducible byte for byte
    fs::write(
        args.out.join("timing.log"),
        format!("wall_time_secs: {:.3}\n", report.wall_time_secs),
    )
    .map_err(runtime)?;
    write_json(
        &serde_json::json!({
            "seed": report.seed,
            "epochs": report.epoch_losses.len(),
            "epoch_losses": report.epoch_losses,
            "final_loss": report.epoch_losses.last(),
        }),
        &args.out.join("report.json"),
    )?;
    println!(
        "trained {} epochs on {} nodules; final mean loss {:.6}",
        report.epoch_losses.len(),
        train_set.len(),
        report.epoch_losses.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn parse_corr_mode(s: &str) -> Result<CaamCorrMode, CliFail> {
    match s {
        "rows" => Ok(CaamCorrMode::Rows),
        "columns" => Ok(CaamCorrMode::Columns),
        other => Err(validation(anyhow!(
            "unknown correlation mode {other:?} (expected rows or columns)"
        ))),
    }
}

fn evaluate_checkpoint(
    ckpt_path: &Path,
    data: &Path,
    fold_test: Option<usize>,
    fold_seed: u64,
) -> Result<(EvalReport, Vec<anct_core::model::ForwardRecord>, Vec<NoduleSample>), CliFail> {
    let ckpt = load_checkpoint::<f32>(ckpt_path).map_err(validation)?;
    let stats = ckpt.stats.ok_or_else(|| {
        validation(anyhow!(
            "checkpoint carries no intensity statistics; use one written by train"
        ))
    })?;
    let (_, samples) = load_dataset(data)?;
    let (train_side, test_side) = fold_sides(samples, fold_test, fold_seed)?;
    let eval_set = if fold_test.is_some() { test_side } else { train_side };
    if eval_set.is_empty() {
        return Err(validation(anyhow!("evaluation set is empty")));
    }
    let model = NoduleModel {
        config: ckpt.config,
        params: ckpt.params,
    };
    let (report, records) =
        evaluate_with_records(&model, &stats, &eval_set).map_err(runtime)?;
    Ok((report, records, eval_set))
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliFail> {
    let corr_mode = parse_corr_mode(&args.corr_mode)?;
    let (report, records, samples) =
        evaluate_checkpoint(&args.ckpt, &args.data, args.fold_test, args.fold_seed)?;
    ensure_out_dir(&args.out)?;
    write_eval_csv(&report, &args.out.join("eval.csv")).map_err(runtime)?;
    write_attn_json(&records, &samples, corr_mode, &args.out.join("attn.json"))
        .map_err(runtime)?;
    write_json(&report, &args.out.join("eval.json"))?;
    println!(
        "evaluated {} nodules; mean MAE {:.4}",
        report.nodule_count, report.mean_mae
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliFail> {
    let ckpt = load_checkpoint::<f32>(&args.ckpt).map_err(validation)?;
    let stats = ckpt
        .stats
        .ok_or_else(|| validation(anyhow!("checkpoint carries no intensity statistics")))?;
    let volume = load_volume(&args.volume).map_err(validation)?;
    let normalized =
        anct_core::data::normalize_intensity(&volume.slices, &stats).map_err(runtime)?;
    let m = volume.depth();
    let input = normalized
        .reshaped(&[m, 64, 64, 1])
        .expect("unit axis keeps the element count");
    let model = NoduleModel {
        config: ckpt.config,
        params: ckpt.params,
    };
    let record = model.forward(&input).map_err(runtime)?;
    let scores = denormalized_predictions(&record);
    for attr in Attribute::ALL {
        println!("{}: {:.3}", attr.name(), scores[attr.index()]);
    }
    Ok(())
}

fn cmd_attn_export(args: AttnExportArgs) -> Result<(), CliFail> {
    let corr_mode = parse_corr_mode(&args.corr_mode)?;
    let (_, records, samples) =
        evaluate_checkpoint(&args.ckpt, &args.data, args.fold_test, args.fold_seed)?;
    ensure_out_dir(&args.out)?;
    let jsonl = forward_records_jsonl(&records, &samples).map_err(runtime)?;
    fs::write(args.out.join("records.jsonl"), jsonl).map_err(runtime)?;
    write_attn_json(&records, &samples, corr_mode, &args.out.join("attn.json"))
        .map_err(runtime)?;
    println!("exported {} records to {}", records.len(), args.out.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FoldSummary {
    fold: usize,
    mean_mae: f64,
    per_attribute_mae: [f64; ATTRIBUTE_COUNT],
}

fn cmd_xval(args: XvalArgs) -> Result<(), CliFail> {
    if let (Some(a), Some(b)) = (&args.compare_a, &args.compare_b) {
        return cmd_xval_compare(a, b, &args.out);
    }
    let data = args
        .data
        .as_ref()
        .ok_or_else(|| validation(anyhow!("--data is required to run the protocol")))?;
    let config = resolve_train_config(&args.overrides).map_err(validation)?;
    let (_, samples) = load_dataset(data)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = make_folds(&ids, args.fold_seed).map_err(validation)?;
    ensure_out_dir(&args.out)?;
    write_json(
        &ResolvedRun {
            command: "xval".into(),
            data: Some(data.clone()),
            fold_test: None,
            fold_seed: Some(args.fold_seed),
            train: config.clone(),
        },
        &args.out.join("config.json"),
    )?;

    let mut summaries = Vec::new();
    let mut per_fold_mean = Vec::new();
    for fold in 0..split.fold_count {
        let outcome = run_fold::<f32>(&samples, &config, &split, fold).map_err(runtime)?;
        let fold_dir = args.out.join(format!("fold{fold}"));
        ensure_out_dir(&fold_dir)?;
        save_checkpoint(
            &outcome.model.params,
            &outcome.model.config,
            Some(&outcome.stats),
            &fold_dir.join("model.ckpt"),
        )
        .map_err(runtime)?;
        write_stats(&outcome.stats, &fold_dir.join("stats.json")).map_err(runtime)?;
        write_eval_csv(&outcome.eval, &fold_dir.join("eval.csv")).map_err(runtime)?;
        write_json(&outcome.eval, &fold_dir.join("eval.json"))?;
        summaries.push(FoldSummary {
            fold,
            mean_mae: outcome.eval.mean_mae,
            per_attribute_mae: outcome.eval.per_attribute_mae,
        });
        per_fold_mean.push(outcome.eval.mean_mae);
        println!("fold {fold}: mean MAE {:.4}", outcome.eval.mean_mae);
    }
    let aggregate = per_fold_mean.iter().sum::<f64>() / per_fold_mean.len() as f64;
    write_json(
        &serde_json::json!({
            "per_fold": summaries,
            "aggregate_mean_mae": aggregate,
        }),
        &args.out.join("xval.json"),
    )?;
    println!("aggregate mean MAE {aggregate:.4}");
    Ok(())
}

/// Join two finished xval run directories on nodule id and test whether
/// their per-nodule mean absolute errors differ.
fn cmd_xval_compare(a: &Path, b: &Path, out: &Path) -> Result<(), CliFail> {
    let load_errors = |dir: &Path| -> Result<Vec<(String, [f64; ATTRIBUTE_COUNT])>, CliFail> {
        // a single-split eval directory or a full xval run directory
        let mut report_paths: Vec<PathBuf> = Vec::new();
        if dir.join("eval.json").is_file() {
            report_paths.push(dir.join("eval.json"));
        } else {
            for fold in 0..FOLD_COUNT {
                let path = dir.join(format!("fold{fold}/eval.json"));
                if path.is_file() {
                    report_paths.push(path);
                }
            }
        }
        let mut entries = Vec::new();
        for path in report_paths {
            let text = fs::read_to_string(&path).map_err(runtime)?;
            let report: EvalReport = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(validation)?;
            for nodule in report.per_nodule {
                entries.push((nodule.id, nodule.abs_errors));
            }
        }
        if entries.is_empty() {
            return Err(validation(anyhow!(
                "{} holds no eval.json or fold*/eval.json reports",
                dir.display()
            )));
        }
        Ok(entries)
    };
    let errors_a = load_errors(a)?;
    let mut errors_b: std::collections::HashMap<String, [f64; ATTRIBUTE_COUNT]> =
        load_errors(b)?.into_iter().collect();

    let mut series_a = Vec::new();
    let mut series_b = Vec::new();
    let mut per_attr_a: Vec<Vec<f64>> = vec![Vec::new(); ATTRIBUTE_COUNT];
    let mut per_attr_b: Vec<Vec<f64>> = vec![Vec::new(); ATTRIBUTE_COUNT];
    for (id, ea) in &errors_a {
        let Some(eb) = errors_b.remove(id) else {
            return Err(validation(anyhow!(
                "nodule {id:?} present in {} but not {}; were the runs split identically?",
                a.display(),
                b.display()
            )));
        };
        series_a.push(ea.iter().sum::<f64>() / ATTRIBUTE_COUNT as f64);
        series_b.push(eb.iter().sum::<f64>() / ATTRIBUTE_COUNT as f64);
        for i in 0..ATTRIBUTE_COUNT {
            per_attr_a[i].push(ea[i]);
            per_attr_b[i].push(eb[i]);
        }
    }
    let overall = paired_t_test(&series_a, &series_b).map_err(runtime)?;
    #[derive(Serialize)]
    struct AttrTest {
        attribute: &'static str,
        mae_a: f64,
        mae_b: f64,
        t: f64,
        p: f64,
    }
    let mut per_attribute = Vec::new();
    for attr in Attribute::ALL {
        let i = attr.index();
        let r: Option<TTestResult> = paired_t_test(&per_attr_a[i], &per_attr_b[i]).ok();
        per_attribute.push(AttrTest {
            attribute: attr.name(),
            mae_a: mean(&per_attr_a[i]),
            mae_b: mean(&per_attr_b[i]),
            t: r.as_ref().map(|r| r.t).unwrap_or(f64::NAN),
            p: r.as_ref().map(|r| r.p).unwrap_or(f64::NAN),
        });
    }
    ensure_out_dir(out)?;
    write_json(
        &serde_json::json!({
            "run_a": a,
            "run_b": b,
            "nodules": overall.n,
            "mean_abs_error_a": mean(&series_a),
            "mean_abs_error_b": mean(&series_b),
            "t": overall.t,
            "p": overall.p,
            "significant_at_0_05": overall.p < 0.05,
            "per_attribute": per_attribute,
        }),
        &out.join("comparison.json"),
    )?;
    println!(
        "paired t-test over {} nodules: t = {:.4}, p = {:.6}",
        overall.n, overall.t, overall.p
    );
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}
