use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sctreid::config::{FlatConfig, RawConfig};
use sctreid::datasets::{load_manifest, synthesize_sct_dataset, validate_sct, DatasetManifest, SynthConfig};
use sctreid::evaluation::cmc_svg;
use sctreid::experiments::{run_ablation, run_k_sweep, split_configs, Benchmark, DEFAULT_SWEEP_KS};
use sctreid::parallel::Exec;
use sctreid::trainer::{latest_checkpoint, Checkpoint, LossReport, Stage, TrainConfig, TrainData, Trainer};
use sctreid::{Error, Result};

#[derive(Parser)]
#[command(name = "sctreid", version, about = "Re-identification training for single-camera target domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override; repeatable, wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long, env = "SCTREID_OUTPUT_ROOT", default_value = "sctreid-out")]
    out: PathBuf,
    /// Run data-parallel kernels on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark: source, SCT target, query and gallery manifests.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a source and a target manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding source.jsonl and target.jsonl.
        #[arg(long)]
        data: PathBuf,
        /// Continue from the latest checkpoint in the output directory, or from this checkpoint.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on query and gallery manifests.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory; defaults to the latest one under the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the five cumulative component variants and tabulate them.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Benchmark directory; synthesised from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Re-run the identity-consistency stage for several cluster counts.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint that has finished the style-alignment stage; trained when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "k", value_delimiter = ',')]
        ks: Vec<usize>,
    },
}

fn raw_config(common: &Common) -> Result<RawConfig> {
    let raw = match &common.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    raw.with_overrides(&common.overrides)
}

fn exec(common: &Common) -> Exec {
    if common.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

const SPLITS: [&str; 4] = ["source", "target", "query", "gallery"];

fn manifest(dir: &Path, split: &str) -> Result<DatasetManifest> {
    load_manifest(&dir.join(format!("{split}.jsonl")))
}

struct Loaded {
    source: DatasetManifest,
    target: DatasetManifest,
    query: DatasetManifest,
    gallery: DatasetManifest,
}

impl Loaded {
    fn from_dir(dir: &Path) -> Result<Self> {
        Ok(Self {
            source: manifest(dir, "source")?,
            target: manifest(dir, "target")?,
            query: manifest(dir, "query")?,
            gallery: manifest(dir, "gallery")?,
        })
    }

    fn bench(&self) -> Benchmark<'_> {
        Benchmark {
            source: &self.source,
            target: &self.target,
            query: &self.query,
            gallery: &self.gallery,
        }
    }
}

/// Splits a combined config into synthesis and training parts.
fn split_config(common: &Common) -> Result<(SynthConfig, TrainConfig)> {
    split_configs(raw_config(common)?)
}

fn benchmark_data(common: &Common, data: &Option<PathBuf>, synth: &SynthConfig) -> Result<Loaded> {
    match data {
        Some(dir) => Loaded::from_dir(dir),
        None => {
            let ds = synthesize_sct_dataset(synth, common.seed)?;
            Ok(Loaded {
                source: ds.source,
                target: ds.target,
                query: ds.query,
                gallery: ds.gallery,
            })
        }
    }
}

fn cmd_synth(common: &Common) -> Result<()> {
    let cfg = SynthConfig::from_raw(&raw_config(common)?)?;
    let ds = synthesize_sct_dataset(&cfg, common.seed)?;
    create_dir(&common.out)?;
    for (name, m) in SPLITS.iter().zip([&ds.source, &ds.target, &ds.query, &ds.gallery]) {
        m.save(&common.out.join(format!("{name}.jsonl")))?;
    }
    write(&common.out.join("synth_config.toml"), &cfg.to_toml())?;
    let report = to_json(&validate_sct(&ds.target))?;
    write(&common.out.join("sct_report.json"), &report)?;
    print!("{report}");
    Ok(())
}

/// Keeps the log lines of epochs before `epoch`.
fn truncate_log(path: &Path, epoch: usize) -> Result<()> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: LossReport = serde_json::from_str(line)?;
        if r.epoch < epoch {
            kept += line;
            kept.push('\n');
        }
    }
    write(path, &kept)
}

fn cmd_train(common: &Common, data: &Path, resume: &Option<PathBuf>) -> Result<()> {
    let source = manifest(data, "source")?;
    let target = manifest(data, "target")?;
    let train_data = TrainData {
        source: &source,
        target: &target,
    };
    let log_path = common.out.join("loss_log.jsonl");
    let trainer = match resume {
        Some(path) => {
            let dir = if path.as_os_str().is_empty() {
                latest_checkpoint(&common.out.join("checkpoints"))?
            } else {
                path.clone()
            };
            let t = Trainer::resume(&dir, train_data)?;
            truncate_log(&log_path, t.epoch())?;
            eprintln!("resuming at epoch {} from {}", t.epoch(), dir.display());
            t
        }
        None => {
            let cfg = TrainConfig::from_raw(&raw_config(common)?)?;
            for stale in [common.out.join("checkpoints"), common.out.join("pseudo_labels")] {
                if stale.exists() {
                    std::fs::remove_dir_all(&stale).map_err(|e| Error::io(&stale, e))?;
                }
            }
            if log_path.exists() {
                std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
            }
            Trainer::new(cfg, train_data, common.seed)?
        }
    };
    create_dir(&common.out)?;
    write(&common.out.join("train_config.toml"), &trainer.config().to_toml())?;
    let mut trainer = trainer_with(trainer, common);
    trainer.run()?;
    let summary = serde_json::json!({
        "epochs": trainer.epoch(),
        "checksum": trainer.params().checksum(),
    });
    println!("{summary}");
    Ok(())
}

fn trainer_with<'a>(t: Trainer<'a>, common: &Common) -> Trainer<'a> {
    t.with_exec(exec(common)).with_output(common.out.clone())
}

fn cmd_eval(common: &Common, data: &Path, checkpoint: &Option<PathBuf>) -> Result<()> {
    let dir = match checkpoint {
        Some(p) => p.clone(),
        None => latest_checkpoint(&common.out.join("checkpoints"))?,
    };
    let loaded = Loaded::from_dir(data)?;
    let ck = Checkpoint::load(&dir)?;
    let mut trainer = Trainer::from_checkpoint(
        &ck,
        TrainData {
            source: &loaded.source,
            target: &loaded.target,
        },
    )?
    .with_exec(exec(common));
    if !common.overrides.is_empty() || common.config.is_some() {
        let mut raw = RawConfig::from_str(&ck.config)?;
        for (k, v) in raw_config(common)?.iter() {
            raw.insert(k, v.clone());
        }
        trainer.set_config(TrainConfig::from_raw(&raw)?)?;
    }
    let report = trainer.evaluate(&loaded.query, &loaded.gallery)?;
    create_dir(&common.out)?;
    let json = to_json(&report)?;
    write(&common.out.join("metrics.json"), &json)?;
    write(&common.out.join("cmc.svg"), &cmc_svg("CMC", &report.cmc, 20))?;
    print!("{json}");
    Ok(())
}

fn cmd_ablate(common: &Common, data: &Option<PathBuf>) -> Result<()> {
    let (synth, train) = split_config(common)?;
    let loaded = benchmark_data(common, data, &synth)?;
    let report = run_ablation(&train, loaded.bench(), common.seed, exec(common))?;
    create_dir(&common.out)?;
    write(&common.out.join("ablation.json"), &to_json(&report)?)?;
    let table = report.table();
    write(&common.out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_sweep_k(common: &Common, data: &Option<PathBuf>, checkpoint: &Option<PathBuf>, ks: &[usize]) -> Result<()> {
    let (synth, train) = split_config(common)?;
    let loaded = benchmark_data(common, data, &synth)?;
    let ks = if ks.is_empty() { DEFAULT_SWEEP_KS.to_vec() } else { ks.to_vec() };
    let n = loaded.target.len();
    if let Some(&k) = ks.iter().find(|&&k| k > n) {
        return Err(Error::Config(format!("k = {k} exceeds the {n} target training samples")));
    }
    let base = match checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None => {
            let mut t = Trainer::new(
                train.clone(),
                TrainData {
                    source: &loaded.source,
                    target: &loaded.target,
                },
                common.seed,
            )?
            .with_exec(exec(common));
            t.run_until(train.schedule.bounds(Stage::Icl).0)?;
            t.checkpoint()
        }
    };
    let report = run_k_sweep(&base, &train, loaded.bench(), &ks, exec(common))?;
    create_dir(&common.out)?;
    let json = to_json(&report)?;
    write(&common.out.join("sweep_k.json"), &json)?;
    write(&common.out.join("sweep_k.svg"), &report.svg())?;
    for p in &report.points {
        println!(
            "k = {:>5}  Rank-1 {:6.2}  mAP {:6.2}{}",
            p.k,
            100.0 * p.metrics.rank(1),
            100.0 * p.metrics.map,
            if p.degenerate { "  (degenerate: one sample per cluster)" } else { "" }
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { common } => cmd_synth(common),
        Command::Train { common, data, resume } => cmd_train(common, data, resume),
        Command::Eval { common, data, checkpoint } => cmd_eval(common, data, checkpoint),
        Command::Ablate { common, data } => cmd_ablate(common, data),
        Command::SweepK {
            common,
            data,
            checkpoint,
            ks,
        } => cmd_sweep_k(common, data, checkpoint, ks),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
