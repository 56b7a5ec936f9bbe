use serde::{Deserialize, Serialize};

use super::optim::OptimizerConfig;
use super::schedule::{LrScope, StageMode, StageSchedule};
use crate::config::{ConfigValue, FlatConfig};
use crate::datasets::PkPolicy;
use crate::encoder::Architecture;
use crate::evaluation::Matching;
use crate::{Error, Result};

/// Which method components are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub frt: bool,
    pub ipl: bool,
    pub fda: bool,
    pub icl: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        frt: true,
        ipl: true,
        fda: true,
        icl: true,
    };

    /// The five cumulative ablation variants with their row labels.
    pub fn ablation_ladder() -> [(&'static str, Variant); 5] {
        let off = Variant {
            frt: false,
            ipl: false,
            fda: false,
            icl: false,
        };
        [
            ("Baseline", off),
            ("Baseline+FRT", Variant { frt: true, ..off }),
            (
                "Baseline+FRT+IPL",
                Variant {
                    frt: true,
                    ipl: true,
                    ..off
                },
            ),
            (
                "Baseline+FRT+IPL+FDA",
                Variant {
                    icl: false,
                    ..Variant::FULL
                },
            ),
            ("Baseline+FRT+IPL+FDA+ICL", Variant::FULL),
        ]
    }

    pub fn uses_cscm_stage(&self) -> bool {
        self.frt || self.ipl || self.fda
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: StageSchedule,
    pub optimizer: OptimizerConfig,
    pub mode: StageMode,
    pub lr_scope: LrScope,
    pub variant: Variant,
    pub iters_per_epoch: usize,
    pub source_batch: PkPolicy,
    pub target_batch: PkPolicy,
    pub margin: f64,
    pub keep_fraction: f64,
    pub k: usize,
    pub style_eps: f64,
    /// Whether the camera pre-training stage also updates the encoder.
    pub camera_pretrain_encoder: bool,
    pub encoder_width: usize,
    pub encoder_locals: usize,
    pub encoder_hidden: usize,
    pub encoder_arch: Architecture,
    pub encoder_bias: bool,
    pub classifier_init_std: f64,
    /// Norm of the cluster classifier rows when seeded from centroids; 0 keeps a random init.
    pub cluster_classifier_scale: f64,
    pub checkpoint_every: usize,
    pub matching: Matching,
    pub require_sct: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: StageSchedule::default(),
            optimizer: OptimizerConfig::default(),
            mode: StageMode::Sequential,
            lr_scope: LrScope::Global,
            variant: Variant::FULL,
            iters_per_epoch: 8,
            source_batch: PkPolicy::default(),
            target_batch: PkPolicy::default(),
            margin: 0.3,
            keep_fraction: 0.5,
            k: 700,
            style_eps: crate::ccflm::DEFAULT_EPS,
            camera_pretrain_encoder: true,
            encoder_width: 32,
            encoder_locals: 2,
            encoder_hidden: 64,
            encoder_arch: Architecture::ToyMlp,
            encoder_bias: true,
            classifier_init_std: 0.01,
            cluster_classifier_scale: 1.0,
            checkpoint_every: 1,
            matching: Matching::Global,
            require_sct: true,
        }
    }
}

fn parse_enum<T>(key: &str, v: &ConfigValue, table: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    let s = v.as_str(key)?;
    table
        .iter()
        .find(|(name, _)| *name == s)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("{key} must be one of {}, got `{s}`", names.join(", ")))
        })
}

const MODES: [(&str, StageMode); 2] = [
    ("sequential", StageMode::Sequential),
    ("interleaved", StageMode::Interleaved),
];
const SCOPES: [(&str, LrScope); 2] = [("global", LrScope::Global), ("stage", LrScope::Stage)];
const ARCHES: [(&str, Architecture); 2] = [
    ("toy-mlp", Architecture::ToyMlp),
    ("small-conv", Architecture::SmallConv),
];
const MATCHING: [(&str, Matching); 2] = [
    ("global", Matching::Global),
    ("concatenated", Matching::Concatenated),
];

fn name_of<T: PartialEq + Copy>(table: &[(&'static str, T)], v: T) -> &'static str {
    table.iter().find(|(_, t)| *t == v).map(|(n, _)| *n).expect("listed")
}

impl FlatConfig for TrainConfig {
    const KEYS: &'static [&'static str] = &[
        "pretrain_id_epochs",
        "pretrain_cam_epochs",
        "cscm_epochs",
        "icl_epochs",
        "warmup_epochs",
        "decay_epochs",
        "decay_factor",
        "momentum",
        "weight_decay",
        "encoder_lr",
        "classifier_lr",
        "mode",
        "lr_scope",
        "frt",
        "ipl",
        "fda",
        "icl",
        "iters_per_epoch",
        "source_groups",
        "source_instances",
        "target_groups",
        "target_instances",
        "margin",
        "keep_fraction",
        "k",
        "style_eps",
        "camera_pretrain_encoder",
        "encoder_width",
        "encoder_locals",
        "encoder_hidden",
        "encoder_arch",
        "encoder_bias",
        "classifier_init_std",
        "cluster_classifier_scale",
        "checkpoint_every",
        "matching",
        "require_sct",
    ];

    fn set_key(&mut self, key: &str, v: &ConfigValue) -> Result<()> {
        match key {
            "pretrain_id_epochs" => self.schedule.pretrain_id_epochs = v.as_usize(key)?,
            "pretrain_cam_epochs" => self.schedule.pretrain_cam_epochs = v.as_usize(key)?,
            "cscm_epochs" => self.schedule.cscm_epochs = v.as_usize(key)?,
            "icl_epochs" => self.schedule.icl_epochs = v.as_usize(key)?,
            "warmup_epochs" => self.schedule.warmup_epochs = v.as_usize(key)?,
            "decay_epochs" => self.schedule.decay_epochs = v.as_usize_list(key)?,
            "decay_factor" => self.schedule.decay_factor = v.as_f64(key)?,
            "momentum" => self.optimizer.momentum = v.as_f64(key)?,
            "weight_decay" => self.optimizer.weight_decay = v.as_f64(key)?,
            "encoder_lr" => self.optimizer.encoder_lr = v.as_f64(key)?,
            "classifier_lr" => self.optimizer.classifier_lr = v.as_f64(key)?,
            "mode" => self.mode = parse_enum(key, v, &MODES)?,
            "lr_scope" => self.lr_scope = parse_enum(key, v, &SCOPES)?,
            "frt" => self.variant.frt = v.as_bool(key)?,
            "ipl" => self.variant.ipl = v.as_bool(key)?,
            "fda" => self.variant.fda = v.as_bool(key)?,
            "icl" => self.variant.icl = v.as_bool(key)?,
            "iters_per_epoch" => self.iters_per_epoch = v.as_usize(key)?,
            "source_groups" => self.source_batch.groups = v.as_usize(key)?,
            "source_instances" => self.source_batch.instances = v.as_usize(key)?,
            "target_groups" => self.target_batch.groups = v.as_usize(key)?,
            "target_instances" => self.target_batch.instances = v.as_usize(key)?,
            "margin" => self.margin = v.as_f64(key)?,
            "keep_fraction" => self.keep_fraction = v.as_f64(key)?,
            "k" => self.k = v.as_usize(key)?,
            "style_eps" => self.style_eps = v.as_f64(key)?,
            "camera_pretrain_encoder" => self.camera_pretrain_encoder = v.as_bool(key)?,
            "encoder_width" => self.encoder_width = v.as_usize(key)?,
            "encoder_locals" => self.encoder_locals = v.as_usize(key)?,
            "encoder_hidden" => self.encoder_hidden = v.as_usize(key)?,
            "encoder_arch" => self.encoder_arch = parse_enum(key, v, &ARCHES)?,
            "encoder_bias" => self.encoder_bias = v.as_bool(key)?,
            "classifier_init_std" => self.classifier_init_std = v.as_f64(key)?,
            "cluster_classifier_scale" => self.cluster_classifier_scale = v.as_f64(key)?,
            "checkpoint_every" => self.checkpoint_every = v.as_usize(key)?,
            "matching" => self.matching = parse_enum(key, v, &MATCHING)?,
            "require_sct" => self.require_sct = v.as_bool(key)?,
            _ => unreachable!("key filtered by from_raw"),
        }
        Ok(())
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.schedule;
        let o = &self.optimizer;
        let quoted = |x: &str| format!("\"{x}\"");
        let decay: Vec<String> = s.decay_epochs.iter().map(|d| d.to_string()).collect();
        vec![
            ("pretrain_id_epochs", s.pretrain_id_epochs.to_string()),
            ("pretrain_cam_epochs", s.pretrain_cam_epochs.to_string()),
            ("cscm_epochs", s.cscm_epochs.to_string()),
            ("icl_epochs", s.icl_epochs.to_string()),
            ("warmup_epochs", s.warmup_epochs.to_string()),
            ("decay_epochs", format!("[{}]", decay.join(", "))),
            ("decay_factor", format!("{:?}", s.decay_factor)),
            ("momentum", format!("{:?}", o.momentum)),
            ("weight_decay", format!("{:?}", o.weight_decay)),
            ("encoder_lr", format!("{:?}", o.encoder_lr)),
            ("classifier_lr", format!("{:?}", o.classifier_lr)),
            ("mode", quoted(name_of(&MODES, self.mode))),
            ("lr_scope", quoted(name_of(&SCOPES, self.lr_scope))),
            ("frt", self.variant.frt.to_string()),
            ("ipl", self.variant.ipl.to_string()),
            ("fda", self.variant.fda.to_string()),
            ("icl", self.variant.icl.to_string()),
            ("iters_per_epoch", self.iters_per_epoch.to_string()),
            ("source_groups", self.source_batch.groups.to_string()),
            ("source_instances", self.source_batch.instances.to_string()),
            ("target_groups", self.target_batch.groups.to_string()),
            ("target_instances", self.target_batch.instances.to_string()),
            ("margin", format!("{:?}", self.margin)),
            ("keep_fraction", format!("{:?}", self.keep_fraction)),
            ("k", self.k.to_string()),
            ("style_eps", format!("{:?}", self.style_eps)),
            ("camera_pretrain_encoder", self.camera_pretrain_encoder.to_string()),
            ("encoder_width", self.encoder_width.to_string()),
            ("encoder_locals", self.encoder_locals.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("encoder_arch", quoted(name_of(&ARCHES, self.encoder_arch))),
            ("encoder_bias", self.encoder_bias.to_string()),
            ("classifier_init_std", format!("{:?}", self.classifier_init_std)),
            ("cluster_classifier_scale", format!("{:?}", self.cluster_classifier_scale)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("matching", quoted(name_of(&MATCHING, self.matching))),
            ("require_sct", self.require_sct.to_string()),
        ]
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.optimizer.validate()?;
        if self.iters_per_epoch == 0 {
            return Err(Error::Config("iters_per_epoch must be positive".into()));
        }
        if self.variant.ipl && !self.variant.frt {
            return Err(Error::Config("ipl needs frt: the promotion losses read the recombined halves".into()));
        }
        if !(self.margin >= 0.0) || !(self.style_eps > 0.0) || !(self.classifier_init_std > 0.0) {
            return Err(Error::Config(
                "margin must be >= 0; style_eps and classifier_init_std must be > 0".into(),
            ));
        }
        if self.cluster_classifier_scale < 0.0 {
            return Err(Error::Config("cluster_classifier_scale must be >= 0".into()));
        }
        if self.k == 0 && self.variant.icl {
            return Err(Error::Config("k must be positive".into()));
        }
        Ok(())
    }

    /// Last epoch (exclusive) that the enabled components need.
    pub fn final_epoch(&self) -> usize {
        use super::schedule::Stage;
        let s = &self.schedule;
        if self.variant.icl {
            s.bounds(Stage::Icl).1
        } else if self.variant.uses_cscm_stage() {
            s.bounds(Stage::CscmFda).1
        } else {
            s.bounds(Stage::PretrainCamera).1
        }
    }
}
