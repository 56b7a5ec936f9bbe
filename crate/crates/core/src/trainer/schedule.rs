use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Training phases in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PretrainIdentity,
    PretrainCamera,
    /// Channel recombination losses plus style alignment.
    CscmFda,
    /// Target-domain identity consistency.
    Icl,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::PretrainIdentity,
        Stage::PretrainCamera,
        Stage::CscmFda,
        Stage::Icl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PretrainIdentity => "pretrain_id",
            Stage::PretrainCamera => "pretrain_cam",
            Stage::CscmFda => "cscm_fda",
            Stage::Icl => "icl",
        }
    }
}

/// Consecutive stage lengths and the global-epoch learning-rate policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub pretrain_id_epochs: usize,
    pub pretrain_cam_epochs: usize,
    pub cscm_epochs: usize,
    pub icl_epochs: usize,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            pretrain_id_epochs: 100,
            pretrain_cam_epochs: 100,
            cscm_epochs: 100,
            icl_epochs: 100,
            warmup_epochs: 10,
            decay_epochs: vec![40, 70],
            decay_factor: 0.1,
        }
    }
}

impl StageSchedule {
    fn lengths(&self) -> [usize; 4] {
        [
            self.pretrain_id_epochs,
            self.pretrain_cam_epochs,
            self.cscm_epochs,
            self.icl_epochs,
        ]
    }

    /// `[start, end)` of a stage.
    pub fn bounds(&self, stage: Stage) -> (usize, usize) {
        let lengths = self.lengths();
        let i = Stage::ALL.iter().position(|&s| s == stage).expect("known stage");
        let start: usize = lengths[..i].iter().sum();
        (start, start + lengths[i])
    }

    pub fn total_epochs(&self) -> usize {
        self.lengths().iter().sum()
    }

    pub fn stage_at(&self, epoch: usize) -> Option<Stage> {
        Stage::ALL.into_iter().find(|&s| {
            let (a, b) = self.bounds(s);
            (a..b).contains(&epoch)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::Config("decay_factor must be positive".into()));
        }
        if self.total_epochs() == 0 {
            return Err(Error::Config("the schedule has no epochs".into()));
        }
        Ok(())
    }

    /// Linear warm-up from `base/10` over `warmup_epochs`, then a cumulative
    /// `decay_factor` at every listed decay epoch.
    pub fn lr_at(&self, epoch: usize, base_lr: f64) -> f64 {
        let warm = if epoch < self.warmup_epochs {
            0.1 + 0.9 * epoch as f64 / self.warmup_epochs as f64
        } else {
            1.0
        };
        let decays = self.decay_epochs.iter().filter(|&&d| epoch >= d).count();
        base_lr * warm * self.decay_factor.powi(decays as i32)
    }
}

/// Whether warm-up and decay epochs count from zero or from each stage start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScope {
    #[default]
    Global,
    Stage,
}

impl StageSchedule {
    /// `lr_at` with the epoch counted according to `scope`.
    pub fn scoped_lr_at(&self, epoch: usize, base_lr: f64, scope: LrScope) -> f64 {
        let local = match (scope, self.stage_at(epoch)) {
            (LrScope::Stage, Some(stage)) => epoch - self.bounds(stage).0,
            _ => epoch,
        };
        self.lr_at(local, base_lr)
    }
}

/// How style alignment and identity consistency share the final stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    /// Style alignment in the third stage, identity consistency in the fourth.
    #[default]
    Sequential,
    /// The fourth stage also takes a style-alignment step before every
    /// identity-consistency step.
    Interleaved,
}
