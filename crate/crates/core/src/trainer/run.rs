use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{checkpoint_dir, Checkpoint};
use super::config::TrainConfig;
use super::optim::Sgd;
use super::schedule::{Stage, StageMode};
use crate::ccflm::{
    cluster_identity_loss, cluster_target_features, icl_total, intra_camera_identity_loss,
    intra_camera_labels, style_total_loss, target_triplet_loss, PseudoLabelTable, StyleContext,
};
use crate::config::{FlatConfig, RawConfig};
use crate::cscm::{ipl_confusion_loss, ipl_identity_loss, ipl_total, FrtState, UniformTargets};
use crate::datasets::{sample_minibatch, validate_sct, DatasetManifest, MiniBatch, PkSampler};
use crate::encoder::{
    pretrain_camera_loss, pretrain_identity_loss, BatchFeatures, Encoder, EncoderConfig,
    ForwardCache, LossGrads,
};
use crate::evaluation::{evaluate_encoder, MetricsReport};
use crate::parallel::Exec;
use crate::params::{names, normal_init, ParamStore};
use crate::{Error, Result};

/// Per-epoch means of every loss term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub stage: Stage,
    pub terms: BTreeMap<String, f64>,
    pub lr_encoder: f64,
    pub lr_classifier: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<String>,
}

/// Training manifests.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub source: &'a DatasetManifest,
    pub target: &'a DatasetManifest,
}

struct Prepared {
    source_inputs: Array2<f64>,
    target_inputs: Array2<f64>,
    source_sampler: PkSampler,
    target_sampler: PkSampler,
    target_ids: Vec<String>,
    source_ids: Vec<String>,
    intra_classes: usize,
    uniform: UniformTargets,
}

/// Owns the parameters and optimiser state of one training run.
pub struct Trainer<'a> {
    config: TrainConfig,
    seed: u64,
    data: TrainData<'a>,
    prepared: Prepared,
    encoder: Encoder,
    params: ParamStore,
    sgd: Sgd,
    rng: ChaCha8Rng,
    epoch: usize,
    frt: Option<FrtState>,
    table: Option<PseudoLabelTable>,
    exec: Exec,
    out_dir: Option<PathBuf>,
    reports: Vec<LossReport>,
}

struct Forwarded {
    features: BatchFeatures,
    cache: ForwardCache,
}

fn step_terms(acc: &mut BTreeMap<String, f64>, lg: &LossGrads, epoch: usize) -> Result<()> {
    for (k, &v) in &lg.terms {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: k.clone(),
                epoch,
            });
        }
        *acc.entry(k.clone()).or_default() += v;
    }
    if !lg.value.is_finite() {
        return Err(Error::NonFinite {
            term: "total".into(),
            epoch,
        });
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: TrainData<'a>, seed: u64) -> Result<Self> {
        config.validate()?;
        let prepared = Self::prepare(&config, data)?;
        let encoder = Encoder::new(Self::encoder_config(&config, data.source)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        encoder.init_params(&mut params, &mut rng);
        let n = config.encoder_width;
        let std = config.classifier_init_std;
        params.insert(names::W_ID, normal_init(data.source.num_identities, n, std, &mut rng));
        let cameras = data.source.num_cameras + data.target.num_cameras;
        params.insert(names::W_CAM, normal_init(cameras, n, std, &mut rng));
        let sgd = Sgd::new(config.optimizer.momentum, config.optimizer.weight_decay);
        Ok(Self {
            config,
            seed,
            data,
            prepared,
            encoder,
            params,
            sgd,
            rng,
            epoch: 0,
            frt: None,
            table: None,
            exec: Exec::default(),
            out_dir: None,
            reports: Vec::new(),
        })
    }

    /// Restores a run from a checkpoint directory; the configuration stored there wins.
    pub fn resume(dir: &Path, data: TrainData<'a>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?, data)
    }

    pub fn from_checkpoint(ck: &Checkpoint, data: TrainData<'a>) -> Result<Self> {
        let config = TrainConfig::from_raw(&RawConfig::from_str(&ck.config)?)?;
        let mut t = Self::new(config, data, ck.seed)?;
        for name in t.params.names() {
            match ck.params.get(name) {
                None => return Err(Error::Checkpoint(format!("checkpoint lacks parameter {name}"))),
                Some(v) if v.dim() != t.params.tensor(name).dim() => {
                    return Err(Error::Checkpoint(format!("parameter {name} has the wrong shape")))
                }
                Some(_) => {}
            }
        }
        t.params = ck.params.clone();
        t.sgd.buffers = ck.momentum.clone();
        t.rng = ck.rng.clone();
        t.epoch = ck.epoch;
        t.frt = ck.frt.clone();
        Ok(t)
    }

    fn encoder_config(config: &TrainConfig, source: &DatasetManifest) -> Result<EncoderConfig> {
        let ec = EncoderConfig {
            width: config.encoder_width,
            locals: config.encoder_locals,
            hidden: config.encoder_hidden,
            architecture: config.encoder_arch,
            input_shape: source.input_shape.clone(),
            bias: config.encoder_bias,
        };
        ec.validate()?;
        Ok(ec)
    }

    fn prepare(config: &TrainConfig, data: TrainData) -> Result<Prepared> {
        if data.source.input_shape != data.target.input_shape {
            return Err(Error::Data("source and target inputs differ in shape".into()));
        }
        if config.require_sct {
            let report = validate_sct(data.target);
            if !report.is_sct {
                return Err(Error::Data(format!(
                    "target manifest violates the single-camera constraint for identities {:?}",
                    report.violating_identity_ids
                )));
            }
        }
        let (_, intra_classes) = intra_camera_labels(data.target);
        Ok(Prepared {
            source_inputs: data.source.inputs(),
            target_inputs: data.target.inputs(),
            source_sampler: PkSampler::by_identity(data.source, config.source_batch)?,
            target_sampler: PkSampler::by_intra_camera_class(data.target, config.target_batch)?,
            source_ids: data.source.samples.iter().map(|s| s.sample_id.clone()).collect(),
            target_ids: data.target.samples.iter().map(|s| s.sample_id.clone()).collect(),
            intra_classes,
            uniform: UniformTargets::new(
                data.source.num_identities,
                data.source.num_cameras + data.target.num_cameras,
            ),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Directory for the loss log, checkpoints and pseudo-label dumps.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn reports(&self) -> &[LossReport] {
        &self.reports
    }

    pub fn frt(&self) -> Option<&FrtState> {
        self.frt.as_ref()
    }

    pub fn pseudo_labels(&self) -> Option<&PseudoLabelTable> {
        self.table.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.epoch,
            seed: self.seed,
            config: self.config.to_toml(),
            rng: self.rng.clone(),
            params: self.params.clone(),
            momentum: self.sgd.buffers.clone(),
            frt: self.frt.clone(),
        }
    }

    /// Replaces the configuration while keeping the learned state; used to
    /// branch several continuations from one checkpoint.
    pub fn set_config(&mut self, config: TrainConfig) -> Result<()> {
        config.validate()?;
        if config.encoder_width != self.config.encoder_width
            || config.encoder_locals != self.config.encoder_locals
            || config.encoder_hidden != self.config.encoder_hidden
            || config.encoder_arch != self.config.encoder_arch
            || config.encoder_bias != self.config.encoder_bias
        {
            return Err(Error::Config("the encoder cannot change mid-run".into()));
        }
        self.prepared = Self::prepare(&config, self.data)?;
        self.config = config;
        Ok(())
    }

    /// Drops everything created for the target-identity stage.
    pub fn reset_identity_consistency(&mut self) {
        for name in [names::W_T_ID, names::W_T_INTRA] {
            self.params.remove(name);
            self.sgd.reset(name);
        }
        self.table = None;
    }

    /// Sets the next epoch to run; parameters are left as they are.
    pub fn rewind_to(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.final_epoch())
    }

    /// Runs epochs until `end` (exclusive) or the end of the enabled stages.
    pub fn run_until(&mut self, end: usize) -> Result<()> {
        let end = end.min(self.config.final_epoch());
        while self.epoch < end {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn evaluate(&self, query: &DatasetManifest, gallery: &DatasetManifest) -> Result<MetricsReport> {
        evaluate_encoder(
            &self.encoder,
            &self.params,
            query,
            gallery,
            self.config.matching,
            self.exec,
        )
    }

    fn forward(&self, inputs: &Array2<f64>, rows: &[usize]) -> Result<Forwarded> {
        let x = inputs.select(Axis(0), rows);
        let (features, cache) = self.encoder.forward(&self.params, x.view())?;
        Ok(Forwarded { features, cache })
    }

    fn all_features(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.encoder.forward(&self.params, inputs.view())?.0.global)
    }

    fn enter_cscm(&mut self, events: &mut Vec<String>) -> Result<()> {
        if self.frt.is_some() {
            return Ok(());
        }
        let features = self.all_features(&self.prepared.source_inputs)?;
        let cameras: Vec<usize> = self.data.source.samples.iter().map(|s| s.camera).collect();
        let frt = FrtState::build(
            features.view(),
            &self.prepared.source_ids,
            &cameras,
            self.params.tensor(names::W_ID).view(),
            self.params.tensor(names::W_CAM).view(),
            self.config.keep_fraction,
            self.exec,
        )?;
        let fallbacks = frt.routes.iter().filter(|r| r.camera_fallback).count();
        events.push(format!(
            "built channel masks for {} source samples ({} camera fallbacks)",
            frt.routes.len(),
            fallbacks
        ));
        self.frt = Some(frt);
        Ok(())
    }

    fn enter_icl(&mut self, epoch: usize, events: &mut Vec<String>) -> Result<()> {
        let n = self.config.encoder_width;
        if !self.params.contains(names::W_T_ID) {
            let std = self.config.classifier_init_std;
            let k = self.config.k;
            let intra = self.prepared.intra_classes;
            self.params.insert(names::W_T_ID, normal_init(k, n, std, &mut self.rng));
            self.params.insert(names::W_T_INTRA, normal_init(intra, n, std, &mut self.rng));
            events.push(format!(
                "created {} ({k} x {n}) and {} ({intra} x {n})",
                names::W_T_ID,
                names::W_T_INTRA
            ));
        }
        if self.frt.is_none() {
            self.enter_cscm(events)?;
        }
        let features = self.all_features(&self.prepared.target_inputs)?;
        let cluster_seed = self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let table = cluster_target_features(
            features.view(),
            self.data.target,
            self.config.k,
            cluster_seed,
            epoch,
            self.exec,
        )?;
        if self.config.cluster_classifier_scale > 0.0 {
            let w = self.params.get_mut(names::W_T_ID).expect("created above");
            for (r, c) in table.centroids.rows().into_iter().enumerate() {
                w.row_mut(r).assign(&(&c * self.config.cluster_classifier_scale));
            }
            self.sgd.reset(names::W_T_ID);
        }
        let used = table.centroids.nrows();
        events.push(format!("clustered target features into {used} of {} clusters", table.k));
        if used == self.data.target.len() {
            events.push("degenerate clustering: one sample per cluster".into());
        }
        if let Some(dir) = &self.out_dir {
            let folder = dir.join("pseudo_labels");
            std::fs::create_dir_all(&folder).map_err(|e| Error::io(&folder, e))?;
            table.write_jsonl(&folder.join(format!("epoch-{epoch:04}.jsonl")))?;
        }
        self.table = Some(table);
        Ok(())
    }

    fn run_epoch(&mut self) -> Result<()> {
        let epoch = self.epoch;
        let stage = self
            .config
            .schedule
            .stage_at(epoch)
            .ok_or_else(|| Error::Config(format!("epoch {epoch} lies outside the schedule")))?;
        let mut events = Vec::new();
        if epoch == self.config.schedule.bounds(stage).0 {
            events.push(format!("entering stage {}", stage.name()));
        }
        match stage {
            Stage::CscmFda => self.enter_cscm(&mut events)?,
            Stage::Icl => self.enter_icl(epoch, &mut events)?,
            _ => {}
        }
        for e in &events {
            log::info!("epoch {epoch}: {e}");
        }
        let (schedule, scope) = (&self.config.schedule, self.config.lr_scope);
        let lr_encoder = schedule.scoped_lr_at(epoch, self.config.optimizer.encoder_lr, scope);
        let lr_classifier = schedule.scoped_lr_at(epoch, self.config.optimizer.classifier_lr, scope);
        let mut sums = BTreeMap::new();
        for _ in 0..self.config.iters_per_epoch {
            let batch = sample_minibatch(
                &self.prepared.source_sampler,
                &self.prepared.target_sampler,
                &mut self.rng,
            );
            match (stage, self.config.mode) {
                (Stage::Icl, StageMode::Interleaved) if self.config.variant.fda => {
                    self.iteration(Stage::CscmFda, &batch, epoch, lr_encoder, lr_classifier, &mut sums)?;
                    self.iteration(Stage::Icl, &batch, epoch, lr_encoder, lr_classifier, &mut sums)?;
                }
                _ => self.iteration(stage, &batch, epoch, lr_encoder, lr_classifier, &mut sums)?,
            }
        }
        let iters = self.config.iters_per_epoch as f64;
        let terms = sums.into_iter().map(|(k, v)| (k, v / iters)).collect();
        let report = LossReport {
            epoch,
            stage,
            terms,
            lr_encoder,
            lr_classifier,
            events,
        };
        self.epoch += 1;
        if let Some(dir) = self.out_dir.clone() {
            self.persist(&dir, &report)?;
        }
        self.reports.push(report);
        Ok(())
    }

    fn persist(&self, dir: &Path, report: &LossReport) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join("loss_log.jsonl");
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        writeln!(log, "{}", serde_json::to_string(report)?).map_err(|e| Error::io(&log_path, e))?;
        let every = self.config.checkpoint_every;
        let last = self.epoch == self.config.final_epoch();
        if every > 0 && (self.epoch % every == 0 || last) {
            let root = dir.join("checkpoints");
            let target = checkpoint_dir(&root, self.epoch);
            self.checkpoint().save(&target)?;
            let marker = root.join("LATEST");
            let name = target.file_name().expect("named").to_string_lossy().to_string();
            std::fs::write(&marker, &name).map_err(|e| Error::io(&marker, e))?;
            // Keep the two most recent checkpoints.
            if self.epoch > every {
                let stale = checkpoint_dir(&root, self.epoch.saturating_sub(2 * every));
                if stale != target && stale.exists() {
                    std::fs::remove_dir_all(&stale).map_err(|e| Error::io(&stale, e))?;
                }
            }
        }
        Ok(())
    }

    fn iteration(
        &mut self,
        stage: Stage,
        batch: &MiniBatch,
        epoch: usize,
        lr_encoder: f64,
        lr_classifier: f64,
        sums: &mut BTreeMap<String, f64>,
    ) -> Result<()> {
        let src = self.forward(&self.prepared.source_inputs, &batch.source)?;
        let tgt = self.forward(&self.prepared.target_inputs, &batch.target)?;
        let source_labels: Vec<usize> = batch
            .source
            .iter()
            .map(|&i| self.data.source.samples[i].identity)
            .collect();
        let (loss, trainable): (LossGrads, Vec<&'static str>) = match stage {
            Stage::PretrainIdentity => (
                pretrain_identity_loss(
                    &src.features,
                    self.params.tensor(names::W_ID).view(),
                    &source_labels,
                    self.config.margin,
                )?,
                vec![names::W_ID],
            ),
            Stage::PretrainCamera => {
                let sc: Vec<usize> = batch.source.iter().map(|&i| self.data.source.samples[i].camera).collect();
                let tc: Vec<usize> = batch.target.iter().map(|&i| self.data.target.samples[i].camera).collect();
                (
                    pretrain_camera_loss(
                        src.features.global.view(),
                        tgt.features.global.view(),
                        self.params.tensor(names::W_CAM).view(),
                        &sc,
                        &tc,
                        self.data.source.num_cameras,
                    )?,
                    vec![names::W_CAM],
                )
            }
            Stage::CscmFda => (self.cscm_loss(&src.features, &tgt.features, batch, &source_labels)?, vec![]),
            Stage::Icl => (
                self.icl_loss(&tgt.features, batch, epoch)?,
                vec![names::W_T_ID, names::W_T_INTRA],
            ),
        };
        step_terms(sums, &loss, epoch)?;

        let mut grads = ParamStore::new();
        let train_encoder = stage != Stage::PretrainCamera || self.config.camera_pretrain_encoder;
        if train_encoder {
            for (f, g) in [(&src, &loss.source), (&tgt, &loss.target)] {
                if let Some(g) = g {
                    let mut full = f.features.zeros_like();
                    full.add_assign(g);
                    self.encoder.backward(&self.params, &f.cache, &full, &mut grads);
                }
            }
        }
        for name in &trainable {
            if let Some(g) = loss.params.get(name) {
                grads.accumulate(name, g);
            }
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite {
                term: format!("gradient of {}", stage.name()),
                epoch,
            });
        }
        let encoder_names = self.encoder.param_names();
        self.sgd.step(&mut self.params, &grads, |name| {
            if encoder_names.contains(&name) {
                lr_encoder
            } else {
                lr_classifier
            }
        });
        Ok(())
    }

    fn style_context(&self) -> Result<StyleContext<'_>> {
        let frt = self
            .frt
            .as_ref()
            .ok_or_else(|| Error::Config("channel masks are built at the start of the recombination stage".into()))?;
        Ok(StyleContext {
            w_id: self.params.tensor(names::W_ID).view(),
            frt,
            uniform_camera: self.prepared.uniform.camera.view(),
            eps: self.config.style_eps,
        })
    }

    fn cscm_loss(
        &self,
        source: &BatchFeatures,
        target: &BatchFeatures,
        batch: &MiniBatch,
        labels: &[usize],
    ) -> Result<LossGrads> {
        let v = self.config.variant;
        let ctx = self.style_context()?;
        let frt = ctx.frt;
        let mut out = LossGrads::default();
        if v.frt {
            let routes: Vec<usize> = batch.source.iter().map(|&i| frt.routes[i].identity_index).collect();
            let cameras: Vec<usize> = batch.source.iter().map(|&i| frt.routes[i].camera_index).collect();
            let identity = ipl_identity_loss(source, &routes, frt, labels, &cameras)?;
            let promoted = if v.ipl {
                let confusion = ipl_confusion_loss(source, &routes, frt, &self.prepared.uniform)?;
                ipl_total(identity, confusion)
            } else {
                let mut only = identity;
                let value = only.value;
                only.term("L_pro", value);
                only
            };
            out.merge(promoted);
        }
        if v.fda {
            out.merge(style_total_loss(source, target, labels, &ctx)?);
        }
        Ok(out)
    }

    fn icl_loss(&self, target: &BatchFeatures, batch: &MiniBatch, epoch: usize) -> Result<LossGrads> {
        let table = self
            .table
            .as_ref()
            .ok_or_else(|| Error::Data("no pseudo-label table for this epoch".into()))?;
        let ids: Vec<String> = batch.target.iter().map(|&i| self.prepared.target_ids[i].clone()).collect();
        let ctx = self.style_context()?;
        Ok(icl_total([
            intra_camera_identity_loss(target, &ids, table, self.params.tensor(names::W_T_INTRA).view())?,
            target_triplet_loss(target, &ids, table, self.config.margin)?,
            cluster_identity_loss(target, &ids, table, epoch, self.params.tensor(names::W_T_ID).view(), &ctx)?,
        ]))
    }
}
