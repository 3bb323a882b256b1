//! Command-line experiment harness.
//!
//! Every run lands in its own directory under the output root (flag
//! `--out-root`, env `RESDISTILL_OUT`, default `runs/`) holding the resolved
//! `config.json`, `report.json`, `losses.jsonl`, and the model checkpoint.
//! The seed fully determines every artifact.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use resdistill::attention::{export_heatmap, grad_cam, AttentionMode};
use resdistill::backbone::{Model, ModelConfig};
use resdistill::data::{
    degrade, generate_synthetic, load_image, load_manifest, DatasetManifest, MagnificationFactor,
    Split,
};
use resdistill::losses::{Alignment, DistillConfig};
use resdistill::metrics::evaluate_split;
use resdistill::trainer::{
    code_version, distill_student, mean_std, train_teacher, MultiSeedReport, RunReport,
    TrainConfig, TrainOutcome,
};
use resdistill::{Error, Result};

/// Everything needed to reproduce one experiment. Defaults apply field by
/// field; unknown keys in a config file are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentConfig {
    model: ModelConfig,
    train: TrainConfig,
    /// Dataset manifest CSV path.
    manifest: Option<PathBuf>,
    /// Frozen teacher checkpoint, for distillation runs.
    teacher_checkpoint: Option<PathBuf>,
    /// Filled in when artifacts are written.
    code_version: Option<String>,
}

#[derive(Parser)]
#[command(name = "resdistill", version, about = "Resolution distillation experiments")]
struct Cli {
    /// Root directory for run artifacts.
    #[arg(long, global = true, env = "RESDISTILL_OUT", default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment config; command-line flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest CSV.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated seeds; one run (and run subdirectory) per seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Magnification reduction factor: 1, 2, 4, or 8.
    #[arg(long)]
    magnification: Option<MagnificationFactor>,
    /// Run directory name under the output root.
    #[arg(long)]
    name: Option<String>,
    /// Parallel workers for multi-seed fan-out.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Clone)]
struct DistillArgs {
    /// Frozen teacher checkpoint (overrides the config file).
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    alpha_fm: Option<f64>,
    #[arg(long)]
    alpha_at: Option<f64>,
    #[arg(long)]
    alpha_kd: Option<f64>,
    /// Route the distillation slot through the softmax-regression baseline.
    #[arg(long)]
    sr: bool,
    /// raw, minmax, or relu_minmax.
    #[arg(long)]
    attention_mode: Option<AttentionMode>,
    /// Bilinearly align student grids instead of requiring equal sizes.
    #[arg(long)]
    feature_interp: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic grating dataset with a manifest.
    SynthData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default: <out-root>/dataset).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a teacher at full resolution with plain cross-entropy.
    TeacherTrain {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train a student against a frozen teacher.
    Distill {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        distill: DistillArgs,
    },
    /// Sweep alpha_FM, then alpha_AT with the FM winner fixed.
    Grid {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        distill: DistillArgs,
        /// Comma-separated alpha grid.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0])]
        alphas: Vec<f64>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "1")]
        magnification: MagnificationFactor,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-class attention heatmaps for a few samples.
    AttentionExport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Sample indices within the split.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3])]
        samples: Vec<usize>,
        #[arg(long, default_value = "1")]
        magnification: MagnificationFactor,
        #[arg(long, default_value = "relu_minmax")]
        mode: AttentionMode,
        /// Output PNG side length in pixels.
        #[arg(long, default_value_t = 128)]
        out_size: usize,
        #[arg(long, default_value = "attention")]
        name: String,
    },
    /// Aggregate persisted reports into a comparison table (text + CSV).
    Report {
        /// Directory scanned recursively for report.json files.
        #[arg(long)]
        runs: PathBuf,
        /// CSV output path (default: <runs>/report.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", error_prefix(&e));
            ExitCode::FAILURE
        }
    }
}

/// Stable machine-readable prefix per failure family.
fn error_prefix(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "error[config]",
        Error::Data(_) => "error[data]",
        Error::Checkpoint(_) => "error[checkpoint]",
        Error::Io(_) => "error[io]",
        _ => "error[runtime]",
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::SynthData {
            classes,
            per_class,
            size,
            seed,
            out,
        } => {
            let dir = out.unwrap_or_else(|| cli.out_root.join("dataset"));
            let manifest = generate_synthetic(per_class, classes, size, seed, &dir)?;
            println!(
                "wrote {} images and {} to {}",
                manifest.records.len(),
                "manifest.csv",
                dir.display()
            );
            Ok(())
        }
        Cmd::TeacherTrain { run } => {
            let plan = resolve_run(&run, None, "teacher")?;
            execute_runs(&cli.out_root, &plan, |exp, manifest| {
                train_teacher(&exp.model, &exp.train, manifest)
            })
        }
        Cmd::Distill { run, distill } => {
            let plan = resolve_run(&run, Some(&distill), "distill")?;
            // With every weight at zero this is a plain student run and no
            // teacher is involved.
            let plain = plan
                .exp
                .train
                .distill
                .as_ref()
                .is_none_or(|d| d.is_plain());
            if plain {
                execute_runs(&cli.out_root, &plan, |exp, manifest| {
                    resdistill::trainer::run_training(&exp.model, &exp.train, manifest, None)
                })
            } else {
                let teacher_path = plan.teacher_path()?;
                execute_runs(&cli.out_root, &plan, move |exp, manifest| {
                    let teacher = load_teacher(&teacher_path)?;
                    distill_student(&teacher, &exp.model, &exp.train, manifest)
                })
            }
        }
        Cmd::Grid {
            run,
            distill,
            alphas,
        } => run_grid(&cli.out_root, &run, &distill, &alphas),
        Cmd::Eval {
            checkpoint,
            manifest,
            split,
            magnification,
            out,
        } => {
            let model = Model::<f32>::load_checkpoint(&checkpoint)?;
            let manifest = load_manifest(&manifest)?;
            let result = evaluate_split(&model, &manifest, split, magnification)?;
            let json = serde_json::json!({
                "split": split.to_string(),
                "magnification": magnification.get(),
                "accuracy": result.accuracy,
                "kappa": result.kappa,
                "per_class_accuracy": result.per_class_accuracy,
                "code_version": code_version(),
            });
            let text = serde_json::to_string_pretty(&json).expect("serializable");
            println!("{text}");
            if let Some(path) = out {
                fs::write(path, text)?;
            }
            Ok(())
        }
        Cmd::AttentionExport {
            checkpoint,
            manifest,
            split,
            samples,
            magnification,
            mode,
            out_size,
            name,
        } => attention_export(
            &cli.out_root.join(name),
            &checkpoint,
            &manifest,
            split,
            &samples,
            magnification,
            mode,
            out_size,
        ),
        Cmd::Report { runs, csv } => {
            let csv_path = csv.unwrap_or_else(|| runs.join("report.csv"));
            aggregate_reports(&runs, &csv_path)
        }
    }
}

struct RunPlan {
    exp: ExperimentConfig,
    manifest: DatasetManifest,
    seeds: Vec<u64>,
    name: String,
    jobs: usize,
}

impl RunPlan {
    fn teacher_path(&self) -> Result<PathBuf> {
        self.exp.teacher_checkpoint.clone().ok_or_else(|| {
            Error::Config("distillation needs --teacher or teacher_checkpoint".into())
        })
    }
}

fn read_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("malformed config {}: {e}", path.display())))
}

/// Defaults, then the config file, then command-line flags.
fn resolve_run(
    args: &RunArgs,
    distill: Option<&DistillArgs>,
    kind: &str,
) -> Result<RunPlan> {
    let mut exp = match &args.config {
        Some(path) => read_config_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.epochs {
        exp.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        exp.train.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        exp.train.learning_rate = v;
    }
    if let Some(v) = args.magnification {
        exp.train.magnification = v;
    }
    if let Some(v) = &args.manifest {
        exp.manifest = Some(v.clone());
    }
    if let Some(d) = distill {
        let mut cfg = exp.train.distill.take().unwrap_or_default();
        if let Some(v) = d.alpha_fm {
            cfg.alpha_fm = v;
        }
        if let Some(v) = d.alpha_at {
            cfg.alpha_at = v;
        }
        if let Some(v) = d.alpha_kd {
            cfg.alpha_kd = v;
        }
        if d.sr {
            cfg.use_sr = true;
        }
        if let Some(v) = d.attention_mode {
            cfg.attention_mode = v;
        }
        if d.feature_interp {
            cfg.alignment = Alignment::FeatureInterp;
        }
        exp.train.distill = Some(cfg);
        if let Some(t) = &d.teacher {
            exp.teacher_checkpoint = Some(t.clone());
        }
    }
    exp.train.validate()?;
    exp.model.validate()?;

    let manifest_path = exp
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no dataset manifest given (--manifest)".into()))?;
    let manifest = load_manifest(&manifest_path)?;
    if exp.model.num_classes != manifest.num_classes() && args.config.is_none() {
        // Convenience: without an explicit config, follow the dataset.
        exp.model.num_classes = manifest.num_classes();
    }
    if exp.model.input_size != manifest.base_size && args.config.is_none() {
        exp.model.input_size = manifest.base_size;
    }

    let seeds = args.seeds.clone().unwrap_or_else(|| vec![exp.train.seed]);
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let name = args.name.clone().unwrap_or_else(|| {
        format!("{kind}-f{}", exp.train.magnification)
    });
    Ok(RunPlan {
        exp,
        manifest,
        seeds,
        name,
        jobs: args.jobs.max(1),
    })
}

fn load_teacher(path: &Path) -> Result<Model<f32>> {
    let mut teacher = Model::<f32>::load_checkpoint(path)?;
    teacher.freeze();
    Ok(teacher)
}

/// Simple bounded fan-out over items; results keep input order.
fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let n = items.len();
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("no poisoned slot").expect("worker filled slot"))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_run_artifacts(dir: &Path, exp: &ExperimentConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut resolved = exp.clone();
    resolved.code_version = Some(code_version());
    write_json(&dir.join("config.json"), &resolved)?;
    write_json(&dir.join("report.json"), &outcome.report)?;
    fs::write(dir.join("losses.jsonl"), outcome.loss_log.join("\n") + "\n")?;
    outcome.model.save_checkpoint(&dir.join("model.atdm"))?;
    Ok(())
}

/// One run per seed, fanned out over `jobs` workers, plus an aggregate file
/// when more than one seed is involved.
fn execute_runs<F>(out_root: &Path, plan: &RunPlan, run_one: F) -> Result<()>
where
    F: Fn(&ExperimentConfig, &DatasetManifest) -> Result<TrainOutcome> + Sync,
{
    let base = out_root.join(&plan.name);
    let reports = parallel_map(&plan.seeds, plan.jobs, |&seed| {
        let mut exp = plan.exp.clone();
        exp.train.seed = seed;
        let outcome = run_one(&exp, &plan.manifest)?;
        let dir = base.join(format!("seed{seed}"));
        write_run_artifacts(&dir, &exp, &outcome)?;
        println!(
            "seed {seed}: test accuracy {:.4}, kappa {:.4} -> {}",
            outcome.report.test_accuracy,
            outcome.report.test_kappa,
            dir.display()
        );
        Ok(outcome.report)
    })?;
    if reports.len() > 1 {
        let accs: Vec<f64> = reports.iter().map(|r| r.test_accuracy).collect();
        let kappas: Vec<f64> = reports.iter().map(|r| r.test_kappa).collect();
        let (am, astd) = mean_std(&accs);
        let (km, kstd) = mean_std(&kappas);
        let agg = MultiSeedReport {
            seeds: plan.seeds.clone(),
            test_accuracy_mean: am,
            test_accuracy_std: astd,
            test_kappa_mean: km,
            test_kappa_std: kstd,
            reports,
        };
        write_json(&base.join("aggregate.json"), &agg)?;
        println!(
            "aggregate over {} seeds: accuracy {:.4} +/- {:.4}, kappa {:.4} +/- {:.4}",
            agg.seeds.len(),
            am,
            astd,
            km,
            kstd
        );
    }
    Ok(())
}

/// Independent sweep per term with the other fixed: alpha_FM first, then
/// alpha_AT at the FM winner. Ties in validation kappa go to the smaller
/// alpha; each candidate run persists its own artifact directory.
fn run_grid(
    out_root: &Path,
    run: &RunArgs,
    distill: &DistillArgs,
    alphas: &[f64],
) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("grid search needs a non-empty alpha set".into()));
    }
    let mut plan = resolve_run(run, Some(distill), "grid")?;
    if plan.exp.train.distill.is_none() {
        plan.exp.train.distill = Some(DistillConfig::default());
    }
    let teacher_path = plan.teacher_path()?;
    let base_distill = plan.exp.train.distill.clone().expect("set above");
    let mut sorted = alphas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let base = out_root.join(&plan.name);

    let run_candidate = |label: &str, cfg: DistillConfig| -> Result<(f64, f64)> {
        // (selected-epoch validation kappa, alpha) aggregated over the seeds.
        let alpha_tag = label.to_string();
        let mut exp = plan.exp.clone();
        exp.train.distill = Some(cfg);
        let reports = parallel_map(&plan.seeds, plan.jobs, |&seed| {
            let mut exp = exp.clone();
            exp.train.seed = seed;
            let teacher = load_teacher(&teacher_path)?;
            let outcome = distill_student(&teacher, &exp.model, &exp.train, &plan.manifest)?;
            let dir = base.join(&alpha_tag).join(format!("seed{seed}"));
            write_run_artifacts(&dir, &exp, &outcome)?;
            Ok(outcome.report)
        })?;
        let kappas: Vec<f64> = reports
            .iter()
            .map(|r| r.epochs[r.selected_epoch - 1].val_kappa)
            .collect();
        let (mean, _) = mean_std(&kappas);
        Ok((mean, 0.0))
    };

    let sweep = |term: &str, make: &dyn Fn(f64) -> DistillConfig| -> Result<f64> {
        let mut best: Option<(f64, f64)> = None; // (kappa, alpha)
        for &alpha in &sorted {
            let label = format!("{term}_{alpha}");
            let (kappa, _) = run_candidate(&label, make(alpha))?;
            println!("{label}: mean validation kappa {kappa:.4}");
            if best.map(|(k, _)| kappa > k).unwrap_or(true) {
                best = Some((kappa, alpha));
            }
        }
        Ok(best.expect("non-empty grid").1)
    };

    let best_fm = sweep("fm", &|alpha| DistillConfig {
        alpha_fm: alpha,
        ..base_distill.clone()
    })?;
    let best_at = sweep("at", &|alpha| DistillConfig {
        alpha_fm: best_fm,
        alpha_at: alpha,
        ..base_distill.clone()
    })?;

    let mut best_exp = plan.exp.clone();
    best_exp.train.distill = Some(DistillConfig {
        alpha_fm: best_fm,
        alpha_at: best_at,
        ..base_distill
    });
    best_exp.code_version = Some(code_version());
    fs::create_dir_all(&base)?;
    write_json(&base.join("best_config.json"), &best_exp)?;
    println!("grid winner: alpha_fm {best_fm}, alpha_at {best_at} -> {}", base.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn attention_export(
    dir: &Path,
    checkpoint: &Path,
    manifest_path: &Path,
    split: Split,
    samples: &[usize],
    magnification: MagnificationFactor,
    mode: AttentionMode,
    out_size: usize,
) -> Result<()> {
    let model = Model::<f32>::load_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest_path)?;
    let indices = manifest.split_indices(split);
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for &s in samples {
        let &record_idx = indices.get(s).ok_or_else(|| {
            Error::Config(format!(
                "sample {s} out of range for split {split} ({} records)",
                indices.len()
            ))
        })?;
        let record = &manifest.records[record_idx];
        let image = degrade(&load_image(&record.path)?, magnification)?;
        let mut batch = vec![0f32; 0];
        batch.extend_from_slice(image.data());
        let mut shape = vec![1usize];
        shape.extend_from_slice(image.shape());
        let batch = resdistill::tensor::Tensor::from_vec(&shape, batch)?;
        let g = resdistill::tensor::Graph::new();
        let rec = model.forward_with_features(&g, &batch)?;
        let maps = grad_cam(&g, &rec, mode, false)?;
        let probs = rec.probs.data();
        let predicted = (0..model.config.num_classes)
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
            .expect("at least two classes");
        for class in 0..model.config.num_classes {
            let file = dir.join(format!("sample{s}_class{class}.png"));
            let info = export_heatmap(&maps, 0, class, out_size, &file)?;
            entries.push(serde_json::json!({
                "sample": s,
                "split": split.to_string(),
                "image": record.path.display().to_string(),
                "label": record.label,
                "predicted": predicted,
                "class": class,
                "file": file.file_name().unwrap().to_string_lossy(),
                "clamped_negative": info.clamped_negative,
            }));
        }
    }
    write_json(
        &dir.join("heatmaps.json"),
        &serde_json::json!({
            "mode": mode.to_string(),
            "magnification": magnification.get(),
            "code_version": code_version(),
            "entries": entries,
        }),
    )?;
    println!("wrote {} heatmaps to {}", entries.len(), dir.display());
    Ok(())
}

fn collect_reports(dir: &Path, out: &mut Vec<RunReport>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_reports(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "report.json") {
            let text = fs::read_to_string(&path)?;
            let report: RunReport = serde_json::from_str(&text).map_err(|e| {
                Error::Data(format!("unreadable report {}: {e}", path.display()))
            })?;
            out.push(report);
        }
    }
    Ok(())
}

/// Human-readable label for the loss preset of a run.
fn preset_label(cfg: &TrainConfig) -> String {
    let Some(d) = &cfg.distill else {
        return "baseline".into();
    };
    if d.is_plain() {
        return "baseline".into();
    }
    let mut parts = Vec::new();
    if d.alpha_fm > 0.0 {
        parts.push("fm");
    }
    if d.alpha_at > 0.0 {
        parts.push("at");
    }
    if d.alpha_kd > 0.0 {
        parts.push(if d.use_sr { "sr" } else { "kd" });
    }
    parts.join("+")
}

fn aggregate_reports(root: &Path, csv_path: &Path) -> Result<()> {
    let mut reports = Vec::new();
    collect_reports(root, &mut reports)?;
    if reports.is_empty() {
        return Err(Error::Data(format!(
            "no report.json files under {}",
            root.display()
        )));
    }
    // Group by (preset, magnification), collecting per-seed test metrics.
    let mut groups: Vec<(String, u32, Vec<&RunReport>)> = Vec::new();
    for r in &reports {
        let key = (preset_label(&r.train), r.train.magnification.get());
        match groups.iter_mut().find(|(p, m, _)| *p == key.0 && *m == key.1) {
            Some((_, _, v)) => v.push(r),
            None => groups.push((key.0, key.1, vec![r])),
        }
    }
    groups.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));

    let mut csv = String::from(
        "preset,magnification,seeds,accuracy_mean,accuracy_std,kappa_mean,kappa_std\n",
    );
    println!(
        "{:<12} {:>4} {:>6} {:>18} {:>18}",
        "preset", "mag", "seeds", "accuracy", "kappa"
    );
    for (preset, mag, runs) in &groups {
        let accs: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let kappas: Vec<f64> = runs.iter().map(|r| r.test_kappa).collect();
        let (am, astd) = mean_std(&accs);
        let (km, kstd) = mean_std(&kappas);
        println!(
            "{preset:<12} {mag:>4} {:>6} {am:>11.4} +/- {astd:.3} {km:>11.4} +/- {kstd:.3}",
            runs.len()
        );
        csv.push_str(&format!(
            "{preset},{mag},{},{am},{astd},{km},{kstd}\n",
            runs.len()
        ));
    }
    fs::write(csv_path, csv)?;
    println!("csv -> {}", csv_path.display());
    Ok(())
}
