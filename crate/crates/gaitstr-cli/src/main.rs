//! Command-line runner: dataset generation, training, retrieval
//! evaluation, standalone skeleton refinement and plotting.
//!
//! Every artifact-producing command writes a `run_manifest.json` beside its
//! outputs recording the command, resolved configuration, seed and paths.
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! data error.

mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gaitstr::archive::{build_dataset, write_skeleton, write_skeleton_jsonl, DatasetManifest};
use gaitstr::config::{resolve_configs, FlatConfig};
use gaitstr::error::GaitError;
use gaitstr::eval::{evaluate_retrieval, mpjpe, view_matrix_eval, FeatureIndex};
use gaitstr::refine::ModelConfig;
use gaitstr::skeleton::{inject_jitter, smooth_average, smooth_gaussian, GaitSample};
use gaitstr::synth::DatasetSpec;
use gaitstr::train::{
    embed_features, prepare_sample, MetricsLog, TrainConfig, TrainDataset, Trainer,
};

#[derive(Parser)]
#[command(name = "gaitstr", version, about = "Multimodal gait recognition runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic walking dataset.
    Generate(GenerateArgs),
    /// Train a recognition model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint with a retrieval protocol.
    Eval(EvalArgs),
    /// Refine skeletons with a trained model and score them.
    Refine(RefineArgs),
    /// Render silhouettes and skeleton overlays to images.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    ids: usize,
    #[arg(long, default_value_t = 4)]
    seqs: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    /// Comma-separated view tags in degrees.
    #[arg(long, default_value = "090")]
    views: String,
    /// Comma-separated condition tags.
    #[arg(long, default_value = "clean,carried,widened")]
    conditions: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value overrides applied after the file.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Resume from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Retrieval protocol: simple (clean gallery, other conditions probe)
    /// or view-matrix.
    #[arg(long, default_value = "simple")]
    protocol: String,
    /// Corrupt test skeletons before embedding.
    #[arg(long, default_value_t = 0.0)]
    jitter_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter_magnitude: f64,
    #[arg(long, default_value_t = 0)]
    jitter_seed: u64,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Corrupt skeletons first; the stored ones become the clean reference
    /// for the error table.
    #[arg(long, default_value_t = 0.0)]
    jitter_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter_magnitude: f64,
    #[arg(long, default_value_t = 0)]
    jitter_seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sample index in the manifest.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Comma-separated frame indices.
    #[arg(long, default_value = "0")]
    frames: String,
    /// Directory of refined skeleton archives to overlay.
    #[arg(long)]
    refined: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version are successful exits.
            if e.kind() == clap::error::ErrorKind::DisplayHelp
                || e.kind() == clap::error::ErrorKind::DisplayVersion
            {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    let started = Instant::now();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a, started),
        Command::Train(a) => cmd_train(a, started),
        Command::Eval(a) => cmd_eval(a, started),
        Command::Refine(a) => cmd_refine(a, started),
        Command::Plot(a) => cmd_plot(a, started),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            GaitError::Config(_) | GaitError::ConfigLine { .. } | GaitError::InvalidInput(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

type CmdResult = Result<(), GaitError>;

fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    detail: serde_json::Value,
    seed: u64,
    started: Instant,
) -> CmdResult {
    let manifest = serde_json::json!({
        "command": command,
        "detail": detail,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_clock_sec": started.elapsed().as_secs_f64(),
        "finished_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    std::fs::write(
        out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn cmd_generate(a: GenerateArgs, started: Instant) -> CmdResult {
    std::fs::create_dir_all(&a.out)?;
    let spec = DatasetSpec {
        n_ids: a.ids,
        seqs_per_id: a.seqs,
        frames: a.frames,
        views: split_list(&a.views),
        conditions: split_list(&a.conditions),
        seed: a.seed,
    };
    let manifest = build_dataset(&a.out, &spec)?;
    println!(
        "wrote {} samples under {}",
        manifest.entries.len(),
        a.out.display()
    );
    let detail = serde_json::json!({
        "ids": a.ids,
        "seqs": a.seqs,
        "frames": a.frames,
        "views": split_list(&a.views),
        "conditions": split_list(&a.conditions),
        "manifest": DatasetManifest::manifest_path(&a.out),
    });
    write_run_manifest(&a.out, "generate", detail, a.seed, started)?;
    println!("manifest: {}", a.out.join("run_manifest.json").display());
    Ok(())
}

fn load_split(data: &Path, split: &str) -> Result<Vec<GaitSample>, GaitError> {
    let manifest = DatasetManifest::load(data)?;
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        out.push(manifest.load_sample(e)?);
    }
    if out.is_empty() {
        return Err(GaitError::Protocol(format!(
            "dataset {} has no '{split}' samples",
            data.display()
        )));
    }
    Ok(out)
}

fn cmd_train(a: TrainArgs, started: Instant) -> CmdResult {
    std::fs::create_dir_all(&a.out)?;
    let mut flat = match &a.config {
        Some(p) => FlatConfig::from_file(p)?,
        None => FlatConfig::default(),
    };
    flat.apply_overrides(&a.set)?;

    let train_samples = load_split(&a.data, "train")?;
    let data = TrainDataset::from_samples(train_samples)?;

    let mut trainer = match &a.resume {
        Some(ckpt) => {
            let (mut trainer, classes) = Trainer::load_checkpoint(ckpt)?;
            if classes != data.class_of_identity {
                return Err(GaitError::Config(
                    "checkpoint identity map does not match the dataset".into(),
                ));
            }
            let (model_config, train_config) = resolve_configs(
                flat,
                trainer.model.config.clone(),
                trainer.train_config.clone(),
            )?;
            if model_config != trainer.model.config {
                return Err(GaitError::Config(
                    "model configuration cannot change when resuming".into(),
                ));
            }
            trainer.set_train_config(train_config)?;
            trainer
        }
        None => {
            let (mut model_config, train_config) =
                resolve_configs(flat, ModelConfig::default(), TrainConfig::default())?;
            model_config.num_classes = data.num_identities();
            Trainer::new(model_config, train_config)?
        }
    };

    let mut log = MetricsLog::default();
    trainer.run(&data, &mut log)?;

    let ckpt_path = a.out.join("checkpoint.gck");
    trainer.save_checkpoint(&ckpt_path, &data.class_of_identity)?;
    std::fs::write(a.out.join("metrics.csv"), log.to_csv())?;
    println!("checkpoint: {}", ckpt_path.display());
    println!("metrics: {}", a.out.join("metrics.csv").display());

    let detail = serde_json::json!({
        "data": a.data,
        "resume": a.resume,
        "iterations": trainer.iteration,
        "model_config": trainer.model.config,
        "train_config": trainer.train_config,
    });
    let seed = trainer.train_config.seed;
    write_run_manifest(&a.out, "train", detail, seed, started)?;
    Ok(())
}

fn feature_index(
    trainer: &Trainer,
    samples: &[GaitSample],
    frames: usize,
) -> Result<FeatureIndex, GaitError> {
    let features = embed_features(&trainer.model, samples, frames)?;
    Ok(FeatureIndex {
        features,
        labels: samples.iter().map(|s| s.identity).collect(),
        views: samples.iter().map(|s| s.view.clone()).collect(),
        conditions: samples.iter().map(|s| s.condition.clone()).collect(),
    })
}

fn cmd_eval(a: EvalArgs, started: Instant) -> CmdResult {
    std::fs::create_dir_all(&a.out)?;
    let (trainer, _) = Trainer::load_checkpoint(&a.checkpoint)?;
    let frames = trainer.train_config.frames;
    let mut samples = load_split(&a.data, "test")?;
    if a.jitter_rate > 0.0 {
        for (i, s) in samples.iter_mut().enumerate() {
            let (j, _) = inject_jitter(
                &s.joints,
                a.jitter_rate,
                a.jitter_magnitude,
                gaitstr::seed::mix(a.jitter_seed, &[gaitstr::seed::label("eval"), i as u64]),
            )?;
            s.joints = j;
        }
    }
    let index = feature_index(&trainer, &samples, frames)?;

    match a.protocol.as_str() {
        "simple" => {
            let gallery_rows: Vec<usize> = (0..index.len())
                .filter(|&i| index.conditions[i] == "clean")
                .collect();
            let probe_rows: Vec<usize> = (0..index.len())
                .filter(|&i| index.conditions[i] != "clean")
                .collect();
            if gallery_rows.is_empty() || probe_rows.is_empty() {
                return Err(GaitError::Protocol(
                    "simple protocol needs clean gallery samples and non-clean probes".into(),
                ));
            }
            let report =
                evaluate_retrieval(&index.select(&probe_rows), &index.select(&gallery_rows))?;
            std::fs::write(a.out.join("report.csv"), report.to_csv())?;
            println!(
                "rank-1 {:.4}  mAP {:.4}  mINP {:.4}",
                report.rank1(),
                report.map,
                report.minp
            );
            println!("report: {}", a.out.join("report.csv").display());
        }
        "view-matrix" => {
            let vm = view_matrix_eval(&index, &index)?;
            std::fs::write(a.out.join("view_matrix.csv"), vm.to_csv())?;
            println!("grand mean rank-1 {:.4}", vm.grand_mean);
            println!("matrix: {}", a.out.join("view_matrix.csv").display());
        }
        other => {
            return Err(GaitError::InvalidInput(format!(
                "unknown protocol '{other}' (expected simple or view-matrix)"
            )))
        }
    }
    let detail = serde_json::json!({
        "checkpoint": a.checkpoint,
        "data": a.data,
        "protocol": a.protocol,
        "jitter_rate": a.jitter_rate,
        "jitter_magnitude": a.jitter_magnitude,
    });
    write_run_manifest(&a.out, "eval", detail, a.jitter_seed, started)?;
    Ok(())
}

fn cmd_refine(a: RefineArgs, started: Instant) -> CmdResult {
    std::fs::create_dir_all(a.out.join("skeletons"))?;
    let (trainer, _) = Trainer::load_checkpoint(&a.checkpoint)?;
    let frames = trainer.train_config.frames;
    let samples = load_split(&a.data, "test")?;

    let mut table = String::from("sample,identity,condition,raw,average,gaussian,refined\n");
    let mut sums = [0.0f64; 4];
    for (i, sample) in samples.iter().enumerate() {
        let clean = prepare_sample(sample, frames, 0.0, 0.0, 0)?;
        let mut observed = clean.clone();
        if a.jitter_rate > 0.0 {
            let (j, _) = inject_jitter(
                &observed.joints,
                a.jitter_rate,
                a.jitter_magnitude,
                gaitstr::seed::mix(a.jitter_seed, &[gaitstr::seed::label("refine"), i as u64]),
            )?;
            observed.joints = j;
        }
        let (refined, _) = trainer.model.refine(&observed)?;

        let stem = format!("id{:03}_sample{:03}", sample.identity, i);
        write_skeleton(&a.out.join(format!("skeletons/{stem}.gsk")), &refined)?;
        write_skeleton_jsonl(&a.out.join(format!("skeletons/{stem}.jsonl")), &refined)?;

        if a.jitter_rate > 0.0 {
            let raw = mpjpe(&observed.joints, &clean.joints)?;
            let avg = mpjpe(&smooth_average(&observed.joints, 3)?, &clean.joints)?;
            let gau = mpjpe(&smooth_gaussian(&observed.joints, 3, 1.0)?, &clean.joints)?;
            let refd = mpjpe(&refined, &clean.joints)?;
            table.push_str(&format!(
                "{stem},{},{},{raw:.6},{avg:.6},{gau:.6},{refd:.6}\n",
                sample.identity, sample.condition
            ));
            sums[0] += raw;
            sums[1] += avg;
            sums[2] += gau;
            sums[3] += refd;
        }
    }
    if a.jitter_rate > 0.0 {
        let n = samples.len() as f64;
        table.push_str(&format!(
            "mean,,,{:.6},{:.6},{:.6},{:.6}\n",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n
        ));
        std::fs::write(a.out.join("mpjpe_table.csv"), &table)?;
        println!(
            "mpjpe  raw {:.5}  average {:.5}  gaussian {:.5}  refined {:.5}",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n
        );
    }
    println!("refined skeletons under {}", a.out.join("skeletons").display());
    let detail = serde_json::json!({
        "checkpoint": a.checkpoint,
        "data": a.data,
        "jitter_rate": a.jitter_rate,
        "jitter_magnitude": a.jitter_magnitude,
        "samples": samples.len(),
    });
    write_run_manifest(&a.out, "refine", detail, a.jitter_seed, started)?;
    Ok(())
}

fn cmd_plot(a: PlotArgs, started: Instant) -> CmdResult {
    std::fs::create_dir_all(&a.out)?;
    let manifest = DatasetManifest::load(&a.data)?;
    let entry = manifest.entries.get(a.sample).ok_or_else(|| {
        GaitError::InvalidInput(format!(
            "sample {} out of range ({} in manifest)",
            a.sample,
            manifest.entries.len()
        ))
    })?;
    let sample = manifest.load_sample(entry)?;

    let refined = match &a.refined {
        Some(dir) => {
            let stem = format!("id{:03}_sample{:03}", entry.identity, a.sample);
            Some(gaitstr::archive::read_skeleton(
                &dir.join(format!("skeletons/{stem}.gsk")),
            )?)
        }
        None => None,
    };

    let frames: Vec<usize> = split_list(&a.frames)
        .iter()
        .map(|f| {
            f.parse::<usize>()
                .map_err(|_| GaitError::InvalidInput(format!("bad frame index '{f}'")))
        })
        .collect::<Result<_, _>>()?;
    for &f in &frames {
        if f >= sample.joints.frames() {
            return Err(GaitError::InvalidInput(format!(
                "frame {f} out of range ({} frames)",
                sample.joints.frames()
            )));
        }
        let sil = plot::silhouette_frame(&sample.silhouettes, f);
        sil.save(a.out.join(format!("sil_f{f:03}.png")))
            .map_err(|e| GaitError::Format(e.to_string()))?;
        let refined_at = refined.as_ref().filter(|r| f < r.frames());
        let overlay = plot::skeleton_overlay(&sample.joints, refined_at, f);
        overlay
            .save(a.out.join(format!("skeleton_f{f:03}.png")))
            .map_err(|e| GaitError::Format(e.to_string()))?;
    }
    println!("wrote {} frame images under {}", frames.len(), a.out.display());
    let detail = serde_json::json!({
        "data": a.data,
        "sample": a.sample,
        "frames": frames,
        "refined": a.refined,
    });
    write_run_manifest(&a.out, "plot", detail, 0, started)?;
    Ok(())
}
