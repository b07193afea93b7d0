//! Command-line front end.
//!
//! Five subcommands cover the full workflow: `mix` renders a noisy/clean
//! dataset from source pools, `train` runs either training stage, `enhance`
//! applies a serial chain to WAV files, `eval` scores a chain against a
//! rendered dataset, and `ablate` runs the five standard chain
//! configurations side by side. Every command is deterministic for a fixed
//! seed and config: reruns overwrite their outputs with identical bytes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio::{read_wav, write_wav, AudioClip, WavFormat};
use crate::chain::{Chain, ChainSpec, CheckpointSet};
use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, StageKind};
use crate::datagen::{
    build_manifest, load_pool, mixture_file_names, render_dataset, DataRecipe, DatasetManifest,
};
use crate::error::{DiscoganError, Result};
use crate::metrics::{evaluate_dataset, EvalItem, MetricReport, BUCKETS};
use crate::trainer::{frozen_from_checkpoint, load_rendered, Stage1Trainer, Stage2Trainer};

/// Row-failure budget for `eval` and `ablate`: beyond this fraction the
/// command exits nonzero even though the report is still written.
const FAILURE_BUDGET: f64 = 0.10;

/// The five standard chain configurations, in report order.
const ABLATION_CHAINS: [&str; 5] = ["gan_nocond", "disc,gan_nocond", "gan", "disc,gan", "gan,disc"];

#[derive(Parser)]
#[command(
    name = "discogan",
    about = "Speech enhancement with a latent-conditioned GAN",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a noisy/clean training or evaluation set from source pools.
    Mix(MixArgs),
    /// Train one stage and write checkpoints plus a loss log.
    Train(TrainArgs),
    /// Enhance a WAV file or directory with a serial chain.
    Enhance(EnhanceArgs),
    /// Score a chain on a rendered dataset and write a metric report.
    Eval(EvalArgs),
    /// Evaluate the five standard chain configurations side by side.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct MixArgs {
    /// Directory of clean-speech WAV files.
    #[arg(long)]
    clean: PathBuf,
    /// Directory of noise WAV files.
    #[arg(long)]
    noise: PathBuf,
    /// Directory of room impulse responses (required when
    /// --reverb-fraction > 0).
    #[arg(long)]
    rir: Option<PathBuf>,
    /// Output directory for WAV pairs and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Number of mixtures to draw.
    #[arg(long)]
    count: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 3.0)]
    duration: f64,
    /// Lower edge of the target-SNR range in dB.
    #[arg(long, default_value_t = -25.0, allow_negative_numbers = true)]
    snr_min: f64,
    /// Upper edge of the target-SNR range in dB.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_max: f64,
    /// Fraction of mixtures convolved with a room impulse response.
    #[arg(long, default_value_t = 0.0)]
    reverb_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split name recorded in the manifest.
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Training stage: disc | gan | gan_nocond.
    #[arg(long)]
    stage: String,
    /// Config file (TOML). Exactly one of --config/--toy unless resuming.
    #[arg(long, conflicts_with = "toy")]
    config: Option<PathBuf>,
    /// Use the built-in small preset instead of a config file.
    #[arg(long)]
    toy: bool,
    /// Directory of rendered mixture/reference pairs (from `mix`).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's RNG seed.
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
    /// Override the config's total step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Resume from a checkpoint (its embedded config wins).
    #[arg(long, conflicts_with_all = ["config", "toy"])]
    resume: Option<PathBuf>,
    /// First-stage checkpoint; required for stages gan and gan_nocond.
    #[arg(long)]
    disc_ckpt: Option<PathBuf>,
    #[command(flatten)]
    device: DeviceArg,
}

#[derive(Args)]
struct ChainArgs {
    /// Comma-separated stages, e.g. `gan` or `disc,gan`.
    #[arg(long)]
    chain: String,
    /// Checkpoint for `disc` stages.
    #[arg(long)]
    disc_ckpt: Option<PathBuf>,
    /// Checkpoint for `gan` stages.
    #[arg(long)]
    gan_ckpt: Option<PathBuf>,
    /// Checkpoint for `gan_nocond` stages.
    #[arg(long)]
    nocond_ckpt: Option<PathBuf>,
}

impl ChainArgs {
    fn load(&self) -> Result<Chain> {
        let spec = ChainSpec::parse(&self.chain)?;
        self.set().load_chain(&spec)
    }

    fn set(&self) -> CheckpointSet {
        CheckpointSet {
            disc: self.disc_ckpt.clone(),
            gan: self.gan_ckpt.clone(),
            gan_nocond: self.nocond_ckpt.clone(),
        }
    }
}

#[derive(Args)]
struct DeviceArg {
    /// Compute device. Only `cpu` is available.
    #[arg(long, default_value = "cpu")]
    device: String,
}

impl DeviceArg {
    fn check(&self) -> Result<()> {
        if self.device != "cpu" {
            return Err(DiscoganError::Config(format!(
                "device '{}' is not available; this build runs on cpu only",
                self.device
            )));
        }
        Ok(())
    }
}

#[derive(Args)]
struct EnhanceArgs {
    /// Input WAV file or directory of WAV files.
    #[arg(long)]
    input: PathBuf,
    /// Output file (file input) or directory (directory input).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    device: DeviceArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset manifest written by `mix`.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding the rendered pairs the manifest describes.
    #[arg(long)]
    data: PathBuf,
    /// Output path for the report table.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    device: DeviceArg,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset manifest written by `mix`.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding the rendered pairs the manifest describes.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for per-chain reports and the comparison table.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint for `disc` stages.
    #[arg(long)]
    disc_ckpt: Option<PathBuf>,
    /// Checkpoint for `gan` stages.
    #[arg(long)]
    gan_ckpt: Option<PathBuf>,
    /// Checkpoint for `gan_nocond` stages.
    #[arg(long)]
    nocond_ckpt: Option<PathBuf>,
    #[command(flatten)]
    device: DeviceArg,
}

/// Entry point for the binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parses and executes `args` (the first element is the program name).
/// Returns the process exit code instead of exiting, so tests can drive
/// the full command surface in-process.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; clap knows their exit codes.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Mix(a) => cmd_mix(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_mix(a: MixArgs) -> Result<i32> {
    let clean_pool = load_pool(&a.clean)?;
    let noise_pool = load_pool(&a.noise)?;
    let rir_pool = match &a.rir {
        Some(dir) => load_pool(dir)?,
        None => Vec::new(),
    };
    let ids = |pool: &[(String, AudioClip)]| -> Vec<String> {
        pool.iter().map(|(id, _)| id.clone()).collect()
    };
    let recipe = DataRecipe {
        count: a.count,
        duration: a.duration,
        snr_range: (a.snr_min, a.snr_max),
        reverb_fraction: a.reverb_fraction,
        seed: a.seed,
    };
    let manifest =
        build_manifest(&recipe, &ids(&clean_pool), &ids(&noise_pool), &ids(&rir_pool), &a.split)?;
    render_dataset(&manifest, &clean_pool, &noise_pool, &rir_pool, &a.out)?;
    let manifest_path = a.out.join("manifest.jsonl");
    manifest.save(&manifest_path)?;
    println!(
        "rendered {} pairs ({} split) into {}",
        manifest.entries.len(),
        manifest.split,
        a.out.display()
    );
    Ok(0)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    a.device.check()?;
    let stage = StageKind::parse(&a.stage)?;
    let data = load_rendered(&a.data)?;

    // Resolve the config: resume wins, then --config, then --toy.
    let resume_ck = a.resume.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
    let mut cfg = match (&resume_ck, &a.config, a.toy) {
        (Some(ck), _, _) => ck.config.clone(),
        (None, Some(path), _) => RunConfig::load(path)?,
        (None, None, true) => RunConfig::toy(),
        (None, None, false) => {
            return Err(DiscoganError::Config(
                "pass --config <file> or --toy (or --resume <checkpoint>)".into(),
            ))
        }
    };
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    cfg.validate()?;

    match stage {
        StageKind::Disc => {
            let mut trainer = match &resume_ck {
                Some(ck) => {
                    let mut t = Stage1Trainer::from_checkpoint(ck)?;
                    if let Some(steps) = a.steps {
                        t.cfg.train.steps = steps;
                    }
                    t
                }
                None => Stage1Trainer::new(&cfg),
            };
            let run = trainer.run(&data, &a.out)?;
            let last = run.records.last().map(|r| r.loss);
            println!(
                "stage disc: {} steps, final loss {:?}, checkpoint {}",
                trainer.completed_steps(),
                last,
                run.checkpoint.display()
            );
        }
        StageKind::Gan | StageKind::GanNocond => {
            let mut trainer = match &resume_ck {
                Some(ck) => {
                    let mut t = Stage2Trainer::from_checkpoint(ck)?;
                    if let Some(steps) = a.steps {
                        t.cfg.train.steps = steps;
                    }
                    t
                }
                None => {
                    let disc_path = a.disc_ckpt.as_ref().ok_or_else(|| {
                        DiscoganError::Config(format!(
                            "stage {} needs --disc-ckpt from a completed disc run",
                            stage.name()
                        ))
                    })?;
                    let frozen = frozen_from_checkpoint(&Checkpoint::load(disc_path)?)?;
                    Stage2Trainer::new(&cfg, stage, frozen)?
                }
            };
            if trainer.kind != stage {
                return Err(DiscoganError::Checkpoint(format!(
                    "resume checkpoint holds stage {}, not {}",
                    trainer.kind.name(),
                    stage.name()
                )));
            }
            let run = trainer.run(&data, &a.out)?;
            let last = run.records.last().map(|r| r.total);
            println!(
                "stage {}: {} steps, final loss {:?}, checkpoint {}",
                stage.name(),
                trainer.completed_steps(),
                last,
                run.checkpoint.display()
            );
        }
    }
    Ok(0)
}

fn cmd_enhance(a: EnhanceArgs) -> Result<i32> {
    a.device.check()?;
    let chain = a.chain.load()?;
    if a.input.is_dir() {
        let mut names: Vec<String> = std::fs::read_dir(&a.input)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(DiscoganError::InvalidInput(format!(
                "no .wav files in {}",
                a.input.display()
            )));
        }
        std::fs::create_dir_all(&a.out)?;
        for name in &names {
            let clip = read_wav(&a.input.join(name))?;
            let enhanced = chain.enhance(&clip)?;
            write_wav(&enhanced, &a.out.join(name), WavFormat::Float32)?;
        }
        println!("enhanced {} files with chain {}", names.len(), chain.spec());
    } else {
        let clip = read_wav(&a.input)?;
        let enhanced = chain.enhance(&clip)?;
        if let Some(parent) = a.out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        write_wav(&enhanced, &a.out, WavFormat::Float32)?;
        println!("enhanced {} with chain {}", a.input.display(), chain.spec());
    }
    Ok(0)
}

/// Scores one chain against a rendered dataset. Enhancement failures are
/// recorded per clip and excluded from the means, matching the scorer's
/// handling of malformed rows.
fn eval_report(chain: &Chain, manifest: &DatasetManifest, data_dir: &Path) -> Result<MetricReport> {
    let mut items = Vec::new();
    let mut enhance_failures = Vec::new();
    for (i, spec) in manifest.entries.iter().enumerate() {
        let (mix_name, ref_name) = mixture_file_names(i);
        let mixture = read_wav(&data_dir.join(&mix_name))?;
        let reference = read_wav(&data_dir.join(&ref_name))?;
        let clip_id = format!("{i:05}");
        match chain.enhance(&mixture) {
            Ok(enhanced) => items.push(EvalItem {
                clip_id,
                reference,
                mixture,
                enhanced,
                target_snr: Some(spec.target_snr),
            }),
            Err(e) => enhance_failures.push((clip_id, e.to_string())),
        }
    }
    let mut report = evaluate_dataset(&items);
    report.failures.extend(enhance_failures);
    Ok(report)
}

fn over_failure_budget(report: &MetricReport, attempted: usize) -> bool {
    attempted > 0 && report.failures.len() as f64 > FAILURE_BUDGET * attempted as f64
}

/// Fixed-width bucket summary for the console.
fn bucket_console_table(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>6} {:>11} {:>11} {:>11} {:>12} {:>17}\n",
        "bucket", "count", "delta_snr", "si_sdr", "seg_snr", "fw_seg_snr", "delta_fw_seg_snr"
    ));
    for b in &report.buckets {
        out.push_str(&format!(
            "{:<12} {:>6} {:>11.3} {:>11.3} {:>11.3} {:>12.3} {:>17.3}\n",
            b.bucket, b.count, b.delta_snr, b.si_sdr, b.seg_snr, b.fw_seg_snr, b.delta_fw_seg_snr
        ));
    }
    out
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    a.device.check()?;
    let chain = a.chain.load()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = eval_report(&chain, &manifest, &a.data)?;

    print!("{}", bucket_console_table(&report));
    if !report.failures.is_empty() {
        println!("{} of {} rows failed", report.failures.len(), manifest.entries.len());
    }
    if let Some(parent) = a.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&a.out, report.to_table())?;
    println!("report written to {}", a.out.display());

    Ok(if over_failure_budget(&report, manifest.entries.len()) { 1 } else { 0 })
}

/// File name for one chain's report inside the ablation output directory.
fn ablation_report_name(spec: &ChainSpec) -> String {
    format!("report_{}.txt", spec.label().replace('+', "_"))
}

/// Comparison table over the completed chains: one block per metric, one
/// row per chain, one column per bucket. Missing buckets print `-`.
fn ablation_table(results: &[(ChainSpec, MetricReport)]) -> String {
    let metrics: [(&str, fn(&crate::metrics::BucketSummary) -> f64); 3] = [
        ("delta_snr", |b| b.delta_snr),
        ("si_sdr", |b| b.si_sdr),
        ("delta_fw_seg_snr", |b| b.delta_fw_seg_snr),
    ];
    let mut out = String::new();
    for (name, pick) in metrics {
        out.push_str(&format!("# {name}\n"));
        out.push_str("chain");
        for bucket in BUCKETS {
            out.push_str(&format!("\t{bucket}"));
        }
        out.push('\n');
        for (spec, report) in results {
            out.push_str(&spec.label());
            for bucket in BUCKETS {
                match report.buckets.iter().find(|b| b.bucket == bucket) {
                    Some(b) => out.push_str(&format!("\t{}", pick(b))),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

fn cmd_ablate(a: AblateArgs) -> Result<i32> {
    a.device.check()?;
    let set = CheckpointSet {
        disc: a.disc_ckpt.clone(),
        gan: a.gan_ckpt.clone(),
        gan_nocond: a.nocond_ckpt.clone(),
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    std::fs::create_dir_all(&a.out)?;

    let mut results: Vec<(ChainSpec, MetricReport)> = Vec::new();
    let mut missing: Vec<(String, String)> = Vec::new();
    let mut over_budget = false;
    for chain_str in ABLATION_CHAINS {
        let spec = ChainSpec::parse(chain_str).expect("built-in chain list is valid");
        let chain = match set.load_chain(&spec) {
            Ok(c) => c,
            Err(e) => {
                missing.push((spec.label(), e.to_string()));
                continue;
            }
        };
        let report = eval_report(&chain, &manifest, &a.data)?;
        std::fs::write(a.out.join(ablation_report_name(&spec)), report.to_table())?;
        over_budget |= over_failure_budget(&report, manifest.entries.len());
        results.push((spec, report));
    }

    let table = ablation_table(&results);
    std::fs::write(a.out.join("ablation.txt"), &table)?;
    for (spec, report) in &results {
        println!("chain {spec}");
        print!("{}", bucket_console_table(report));
    }
    println!("comparison written to {}", a.out.join("ablation.txt").display());
    for (label, why) in &missing {
        eprintln!("missing configuration {label}: {why}");
    }
    Ok(if missing.is_empty() && !over_budget { 0 } else { 1 })
}
