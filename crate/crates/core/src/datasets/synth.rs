//! Synthetic SCT benchmark generator.
//!
//! Each identity owns a latent prototype. A fixed random mixing matrix maps
//! prototypes into input space; every domain adds its own offset, and every
//! camera applies its own affine style (per-channel gain and shift) whose
//! magnitude is `style_shift`. With `render_shift > 0` the target domain
//! renders prototypes through a perturbed mixing matrix, so identity evidence
//! sits in partly different input directions than on the source. The target training split places each identity
//! under exactly one camera; the target query/gallery splits use fresh
//! identities observed under every target camera.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DatasetManifest, Domain, InputMode, Split};
use crate::config::{ConfigValue, FlatConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub mode: InputMode,
    pub source_identities: usize,
    pub source_cameras: usize,
    pub source_per_id: usize,
    pub target_identities: usize,
    pub target_cameras: usize,
    pub target_per_id: usize,
    pub target_sct: bool,
    pub test_identities: usize,
    pub test_per_camera: usize,
    /// Input width in feature mode.
    pub input_dim: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub latent_dim: usize,
    pub style_shift: f64,
    pub domain_shift: f64,
    /// Weight of a second random mixing matrix blended into the target rendering.
    pub render_shift: f64,
    pub noise: f64,
    /// Cluster count planned downstream; 0 disables the feasibility check.
    pub clusters: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mode: InputMode::Feature,
            source_identities: 20,
            source_cameras: 4,
            source_per_id: 8,
            target_identities: 20,
            target_cameras: 4,
            target_per_id: 6,
            target_sct: true,
            test_identities: 20,
            test_per_camera: 2,
            input_dim: 32,
            image_h: 8,
            image_w: 4,
            image_c: 3,
            latent_dim: 8,
            style_shift: 1.5,
            domain_shift: 1.0,
            render_shift: 0.0,
            noise: 0.3,
            clusters: 0,
        }
    }
}

impl FlatConfig for SynthConfig {
    const KEYS: &'static [&'static str] = &[
        "input_mode",
        "source_identities",
        "source_cameras",
        "source_per_id",
        "target_identities",
        "target_cameras",
        "target_per_id",
        "target_sct",
        "test_identities",
        "test_per_camera",
        "input_dim",
        "image_h",
        "image_w",
        "image_c",
        "latent_dim",
        "style_shift",
        "domain_shift",
        "render_shift",
        "noise",
        "clusters",
    ];

    fn set_key(&mut self, key: &str, v: &ConfigValue) -> Result<()> {
        match key {
            "input_mode" => {
                self.mode = match v.as_str(key)?.as_str() {
                    "feature" => InputMode::Feature,
                    "image" => InputMode::Image,
                    other => {
                        return Err(Error::Config(format!(
                            "input_mode must be `feature` or `image`, got `{other}`"
                        )))
                    }
                }
            }
            "source_identities" => self.source_identities = v.as_usize(key)?,
            "source_cameras" => self.source_cameras = v.as_usize(key)?,
            "source_per_id" => self.source_per_id = v.as_usize(key)?,
            "target_identities" => self.target_identities = v.as_usize(key)?,
            "target_cameras" => self.target_cameras = v.as_usize(key)?,
            "target_per_id" => self.target_per_id = v.as_usize(key)?,
            "target_sct" => self.target_sct = v.as_bool(key)?,
            "test_identities" => self.test_identities = v.as_usize(key)?,
            "test_per_camera" => self.test_per_camera = v.as_usize(key)?,
            "input_dim" => self.input_dim = v.as_usize(key)?,
            "image_h" => self.image_h = v.as_usize(key)?,
            "image_w" => self.image_w = v.as_usize(key)?,
            "image_c" => self.image_c = v.as_usize(key)?,
            "latent_dim" => self.latent_dim = v.as_usize(key)?,
            "style_shift" => self.style_shift = v.as_f64(key)?,
            "domain_shift" => self.domain_shift = v.as_f64(key)?,
            "render_shift" => self.render_shift = v.as_f64(key)?,
            "noise" => self.noise = v.as_f64(key)?,
            "clusters" => self.clusters = v.as_usize(key)?,
            _ => unreachable!("key filtered by from_raw"),
        }
        Ok(())
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mode = match self.mode {
            InputMode::Feature => "\"feature\"",
            InputMode::Image => "\"image\"",
        };
        vec![
            ("input_mode", mode.to_string()),
            ("source_identities", self.source_identities.to_string()),
            ("source_cameras", self.source_cameras.to_string()),
            ("source_per_id", self.source_per_id.to_string()),
            ("target_identities", self.target_identities.to_string()),
            ("target_cameras", self.target_cameras.to_string()),
            ("target_per_id", self.target_per_id.to_string()),
            ("target_sct", self.target_sct.to_string()),
            ("test_identities", self.test_identities.to_string()),
            ("test_per_camera", self.test_per_camera.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("image_h", self.image_h.to_string()),
            ("image_w", self.image_w.to_string()),
            ("image_c", self.image_c.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("style_shift", format!("{:?}", self.style_shift)),
            ("domain_shift", format!("{:?}", self.domain_shift)),
            ("render_shift", format!("{:?}", self.render_shift)),
            ("noise", format!("{:?}", self.noise)),
            ("clusters", self.clusters.to_string()),
        ]
    }
}

impl SynthConfig {
    pub fn input_shape(&self) -> Vec<usize> {
        match self.mode {
            InputMode::Feature => vec![self.input_dim],
            InputMode::Image => vec![self.image_h, self.image_w, self.image_c],
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("source_identities", self.source_identities),
            ("source_cameras", self.source_cameras),
            ("source_per_id", self.source_per_id),
            ("target_identities", self.target_identities),
            ("target_cameras", self.target_cameras),
            ("target_per_id", self.target_per_id),
            ("test_identities", self.test_identities),
            ("test_per_camera", self.test_per_camera),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.input_shape().iter().any(|&d| d == 0) {
            return Err(Error::Config("input shape must be non-empty".into()));
        }
        for (name, v) in [
            ("style_shift", self.style_shift),
            ("domain_shift", self.domain_shift),
            ("render_shift", self.render_shift),
            ("noise", self.noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.clusters > self.target_identities {
            return Err(Error::Config(format!(
                "infeasible: {} clusters requested but only {} target identities",
                self.clusters, self.target_identities
            )));
        }
        if self.test_per_camera * self.target_cameras < 2 {
            return Err(Error::Config(
                "test split needs at least two observations per identity".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub source: DatasetManifest,
    pub target: DatasetManifest,
    pub query: DatasetManifest,
    pub gallery: DatasetManifest,
}

struct CameraStyle {
    gain: Array1<f64>,
    shift: Array1<f64>,
}

struct World {
    mixing: Array2<f64>,
    noise: f64,
}

impl World {
    fn render(
        &self,
        prototype: &Array1<f64>,
        domain_offset: &Array1<f64>,
        style: &CameraStyle,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let clean = self.mixing.dot(prototype) + domain_offset;
        let styled = &style.gain * &clean + &style.shift;
        styled
            .iter()
            .map(|&v| v + self.noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

fn random_direction(width: usize, magnitude: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let v: Array1<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.dot(&v).sqrt().max(1e-12);
    v * (magnitude / norm)
}

fn camera_styles(
    cfg: &SynthConfig,
    cameras: usize,
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<CameraStyle> {
    (0..cameras)
        .map(|_| match cfg.mode {
            InputMode::Feature => {
                let gain = (0..width)
                    .map(|_| 1.0 + 0.25 * cfg.style_shift * rng.random_range(-1.0..1.0))
                    .map(|g: f64| g.max(0.1))
                    .collect();
                let shift = random_direction(width, cfg.style_shift * (width as f64).sqrt() / 2.0, rng);
                CameraStyle { gain, shift }
            }
            InputMode::Image => {
                // Colour cast: one gain and one shift per colour channel.
                let c = cfg.image_c;
                let gains: Vec<f64> = (0..c)
                    .map(|_| (1.0 + 0.25 * cfg.style_shift * rng.random_range(-1.0..1.0)).max(0.1))
                    .collect();
                let shifts: Vec<f64> = (0..c)
                    .map(|_| cfg.style_shift * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                CameraStyle {
                    gain: (0..width).map(|i| gains[i % c]).collect(),
                    shift: (0..width).map(|i| shifts[i % c]).collect(),
                }
            }
        })
        .collect()
}

fn prototypes(count: usize, latent: usize, rng: &mut ChaCha8Rng) -> Vec<Array1<f64>> {
    (0..count)
        .map(|_| (0..latent).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Generates the four splits deterministically from `seed`.
pub fn synthesize_sct_dataset(cfg: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width: usize = cfg.input_shape().iter().product();
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let mixing = Array2::from_shape_simple_fn((width, cfg.latent_dim), || {
        scale * rng.sample::<f64, _>(StandardNormal)
    });
    // Separate stream: the perturbation never disturbs the main draw order.
    let mut aux = ChaCha8Rng::seed_from_u64(seed);
    aux.set_stream(1);
    let perturbation = Array2::from_shape_simple_fn((width, cfg.latent_dim), || {
        scale * aux.sample::<f64, _>(StandardNormal)
    });
    let blend = (1.0 + cfg.render_shift * cfg.render_shift).sqrt();
    let target_world = World {
        mixing: (&mixing + &(perturbation * cfg.render_shift)) / blend,
        noise: cfg.noise,
    };
    let world = World {
        mixing,
        noise: cfg.noise,
    };
    let domain_magnitude = cfg.domain_shift * (width as f64).sqrt() / 2.0;
    let source_offset = Array1::zeros(width);
    let target_offset = random_direction(width, domain_magnitude, &mut rng);
    let source_styles = camera_styles(cfg, cfg.source_cameras, width, &mut rng);
    let target_styles = camera_styles(cfg, cfg.target_cameras, width, &mut rng);
    let source_protos = prototypes(cfg.source_identities, cfg.latent_dim, &mut rng);
    let target_protos = prototypes(cfg.target_identities, cfg.latent_dim, &mut rng);
    let test_protos = prototypes(cfg.test_identities, cfg.latent_dim, &mut rng);
    let shape = cfg.input_shape();

    let mut raw = Vec::new();
    for (y, proto) in source_protos.iter().enumerate() {
        for i in 0..cfg.source_per_id {
            // Round-robin cameras, offset per identity so camera coverage is balanced.
            let cam = (y + i) % cfg.source_cameras;
            let x = world.render(proto, &source_offset, &source_styles[cam], &mut rng);
            raw.push((format!("src-{:05}", raw.len()), x, y as u64, cam as u64));
        }
    }
    let source = DatasetManifest::from_raw_samples(
        Domain::Source,
        cfg.mode,
        Split::Train,
        shape.clone(),
        false,
        raw,
    )?;

    let mut raw = Vec::new();
    for (y, proto) in target_protos.iter().enumerate() {
        for i in 0..cfg.target_per_id {
            let cam = if cfg.target_sct {
                y % cfg.target_cameras
            } else {
                (y + i) % cfg.target_cameras
            };
            let x = target_world.render(proto, &target_offset, &target_styles[cam], &mut rng);
            raw.push((format!("tgt-{:05}", raw.len()), x, y as u64, cam as u64));
        }
    }
    let target = DatasetManifest::from_raw_samples(
        Domain::Target,
        cfg.mode,
        Split::Train,
        shape.clone(),
        cfg.target_sct,
        raw,
    )?;

    let mut query_raw = Vec::new();
    let mut gallery_raw = Vec::new();
    for (y, proto) in test_protos.iter().enumerate() {
        for cam in 0..cfg.target_cameras {
            for i in 0..cfg.test_per_camera {
                let x = target_world.render(proto, &target_offset, &target_styles[cam], &mut rng);
                if i == 0 {
                    query_raw.push((format!("qry-{:05}", query_raw.len()), x, y as u64, cam as u64));
                } else {
                    gallery_raw.push((format!("gal-{:05}", gallery_raw.len()), x, y as u64, cam as u64));
                }
            }
        }
    }
    if gallery_raw.is_empty() {
        // One observation per camera: every query still has cross-camera matches
        // when the gallery holds the same observations.
        gallery_raw = query_raw
            .iter()
            .enumerate()
            .map(|(i, (_, x, y, c))| (format!("gal-{i:05}"), x.clone(), *y, *c))
            .collect();
    }
    let query = DatasetManifest::from_raw_samples(
        Domain::Target,
        cfg.mode,
        Split::Query,
        shape.clone(),
        false,
        query_raw,
    )?;
    let gallery = DatasetManifest::from_raw_samples(
        Domain::Target,
        cfg.mode,
        Split::Gallery,
        shape,
        false,
        gallery_raw,
    )?;
    Ok(SyntheticDataset {
        source,
        target,
        query,
        gallery,
    })
}
