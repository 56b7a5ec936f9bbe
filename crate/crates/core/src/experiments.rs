//! Multi-run drivers: the cumulative component ablation and the cluster
//! count sweep. Runs that share a prefix of the schedule share its training.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{FlatConfig, RawConfig};
use crate::datasets::{DatasetManifest, SynthConfig};
use crate::evaluation::{line_svg, MetricsReport, Series};
use crate::parallel::Exec;
use crate::trainer::{Checkpoint, Stage, TrainConfig, TrainData, Trainer, Variant};
use crate::{Error, Result};

/// Flat TOML holding the synthesis and training keys of the reference benchmark.
pub const REFERENCE_CONFIG: &str = include_str!("../configs/reference.toml");

/// Seed the reference ablation is reported for.
pub const REFERENCE_SEED: u64 = 7;

/// Splits [`REFERENCE_CONFIG`] into its synthesis and training halves.
pub fn reference_configs() -> Result<(SynthConfig, TrainConfig)> {
    split_configs(RawConfig::from_str(REFERENCE_CONFIG)?)
}

/// Synthesis keys go to [`SynthConfig`], everything else to [`TrainConfig`].
pub fn split_configs(mut raw: RawConfig) -> Result<(SynthConfig, TrainConfig)> {
    let synth = raw.take_known::<SynthConfig>();
    Ok((SynthConfig::from_raw(&synth)?, TrainConfig::from_raw(&raw)?))
}

/// Training and test manifests for one benchmark.
#[derive(Debug, Clone, Copy)]
pub struct Benchmark<'a> {
    pub source: &'a DatasetManifest,
    pub target: &'a DatasetManifest,
    pub query: &'a DatasetManifest,
    pub gallery: &'a DatasetManifest,
}

impl<'a> Benchmark<'a> {
    fn train_data(&self) -> TrainData<'a> {
        TrainData {
            source: self.source,
            target: self.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub metrics: MetricsReport,
    /// Final-parameter checksum of this variant.
    pub checksum: String,
}

/// Published Rank-1 figures shown next to the synthetic results for context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub setting: String,
    pub baseline_rank1: f64,
    pub full_rank1: f64,
    pub reproduced: bool,
}

impl Default for ReferenceFigures {
    fn default() -> Self {
        Self {
            setting: "Market-1501 -> DukeMTMC-SCT".into(),
            baseline_rank1: 66.8,
            full_rank1: 83.0,
            reproduced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    pub reference: ReferenceFigures,
    pub seconds: f64,
}

impl AblationReport {
    /// Fixed-width text table with Rank-1, Rank-5 and mAP in percent.
    pub fn table(&self) -> String {
        let mut out = format!("{:<28} {:>7} {:>7} {:>7}\n", "variant", "R1", "R5", "mAP");
        for r in &self.rows {
            out += &format!(
                "{:<28} {:>7.2} {:>7.2} {:>7.2}\n",
                r.label,
                100.0 * r.metrics.rank(1),
                100.0 * r.metrics.rank(5),
                100.0 * r.metrics.map
            );
        }
        out += &format!(
            "reference ({}): Rank-1 {:.1} -> {:.1}; not reproduced by this synthetic benchmark\n",
            self.reference.setting, self.reference.baseline_rank1, self.reference.full_rank1
        );
        out
    }
}

fn branch<'a>(
    ck: &Checkpoint,
    data: TrainData<'a>,
    config: &TrainConfig,
    variant: Variant,
    exec: Exec,
) -> Result<Trainer<'a>> {
    let mut t = Trainer::from_checkpoint(ck, data)?.with_exec(exec);
    t.set_config(TrainConfig {
        variant,
        ..config.clone()
    })?;
    Ok(t)
}

/// Trains the five cumulative variants. The pre-training stages are run
/// once and shared; the full variant continues the style-alignment run.
pub fn run_ablation(config: &TrainConfig, bench: Benchmark, seed: u64, exec: Exec) -> Result<AblationReport> {
    let start = Instant::now();
    let data = bench.train_data();
    let ladder = Variant::ablation_ladder();
    let pre_end = config.schedule.bounds(Stage::PretrainCamera).1;
    let cscm_end = config.schedule.bounds(Stage::CscmFda).1;

    let mut pre = Trainer::new(
        TrainConfig {
            variant: ladder[0].1,
            ..config.clone()
        },
        data,
        seed,
    )?
    .with_exec(exec);
    pre.run_until(pre_end)?;
    let pre_ck = pre.checkpoint();

    let evaluate = |label: &str, variant: Variant, t: &Trainer| -> Result<AblationRow> {
        let metrics = t.evaluate(bench.query, bench.gallery)?;
        log::info!("{label}: mAP {:.4}", metrics.map);
        Ok(AblationRow {
            label: label.to_string(),
            variant,
            metrics,
            checksum: t.params().checksum(),
        })
    };

    let mut rows = vec![evaluate(ladder[0].0, ladder[0].1, &pre)?];
    let mut fda_state = None;
    for (i, &(label, variant)) in ladder.iter().enumerate().skip(1).take(3) {
        let mut t = branch(&pre_ck, data, config, variant, exec)?;
        t.run_until(cscm_end)?;
        rows.push(evaluate(label, variant, &t)?);
        if i == 3 {
            fda_state = Some(t.checkpoint());
        }
    }
    let (label, variant) = ladder[4];
    let mut full = branch(&fda_state.expect("fda variant ran"), data, config, variant, exec)?;
    full.run()?;
    rows.push(evaluate(label, variant, &full)?);

    Ok(AblationReport {
        seed,
        rows,
        reference: ReferenceFigures::default(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub metrics: MetricsReport,
    /// `k` equals the number of target samples: every sample is its own cluster.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Rank-1 and mAP against `k`.
    pub fn svg(&self) -> String {
        let series = |label: &str, f: fn(&MetricsReport) -> f64| Series {
            label: label.into(),
            points: self.points.iter().map(|p| (p.k as f64, f(&p.metrics))).collect(),
        };
        line_svg(
            "retrieval vs cluster count",
            "k",
            "score",
            &[series("Rank-1", |m| m.rank(1)), series("mAP", |m| m.map)],
        )
    }
}

pub const DEFAULT_SWEEP_KS: [usize; 2] = [700, 1500];

/// Re-runs the identity-consistency stage for each `k`, starting from a
/// state that has completed the style-alignment stage.
pub fn run_k_sweep(
    base: &Checkpoint,
    config: &TrainConfig,
    bench: Benchmark,
    ks: &[usize],
    exec: Exec,
) -> Result<SweepReport> {
    let n = bench.target.len();
    if let Some(&k) = ks.iter().find(|&&k| k > n || k == 0) {
        return Err(Error::Config(format!(
            "k = {k} is outside [1, {n}] for {n} target training samples"
        )));
    }
    let icl_start = config.schedule.bounds(Stage::Icl).0;
    if base.epoch < icl_start {
        return Err(Error::Config(format!(
            "the sweep needs a checkpoint at or after epoch {icl_start}, got epoch {}",
            base.epoch
        )));
    }
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut t = Trainer::from_checkpoint(base, bench.train_data())?.with_exec(exec);
        t.set_config(TrainConfig {
            k,
            variant: Variant::FULL,
            ..config.clone()
        })?;
        t.reset_identity_consistency();
        t.rewind_to(icl_start);
        t.run()?;
        points.push(SweepPoint {
            k,
            metrics: t.evaluate(bench.query, bench.gallery)?,
            degenerate: k == n,
        });
    }
    Ok(SweepReport {
        seed: base.seed,
        points,
    })
}
