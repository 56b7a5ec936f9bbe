use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sct::validate_sct;
use crate::{Error, Result};

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Precomputed vectors of width `input_shape[0]`.
    Feature,
    /// Tiny images stored `H × W × C`, row-major.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Query,
    Gallery,
}

/// One observation with dense identity and camera labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonSample {
    pub sample_id: String,
    pub input: Vec<f64>,
    pub identity: usize,
    pub camera: usize,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub domain: Domain,
    pub mode: InputMode,
    pub split: Split,
    pub input_shape: Vec<usize>,
    /// Declares that no identity appears under more than one camera.
    pub sct: bool,
    pub samples: Vec<PersonSample>,
    pub num_identities: usize,
    pub num_cameras: usize,
    /// Dense identity index → label as written in the file.
    pub identity_labels: Vec<u64>,
    /// Dense camera index → label as written in the file.
    pub camera_labels: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    manifest: Header,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    domain: Domain,
    mode: InputMode,
    #[serde(default)]
    split: Split,
    input_shape: Vec<usize>,
    num_samples: usize,
    #[serde(default)]
    num_identities: Option<usize>,
    #[serde(default)]
    num_cameras: Option<usize>,
    #[serde(default)]
    sct: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleLine {
    id: String,
    identity: u64,
    camera: u64,
    domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<Vec<f64>>,
    /// Raw little-endian f32 file, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

impl DatasetManifest {
    /// Builds a manifest from samples whose labels may be sparse; labels are
    /// re-densified in ascending order of the original values.
    pub fn from_raw_samples(
        domain: Domain,
        mode: InputMode,
        split: Split,
        input_shape: Vec<usize>,
        sct: bool,
        raw: Vec<(String, Vec<f64>, u64, u64)>,
    ) -> Result<Self> {
        let width: usize = input_shape.iter().product();
        check_shape(mode, &input_shape)?;
        let mut seen = HashSet::new();
        for (id, input, _, _) in &raw {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate sample_id `{id}`")));
            }
            if input.len() != width {
                return Err(Error::Shape(format!(
                    "sample `{id}` has {} values, manifest declares {width}",
                    input.len()
                )));
            }
            if input.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample `{id}` has non-finite input")));
            }
        }
        let identity_labels = dense_labels(raw.iter().map(|r| r.2));
        let camera_labels = dense_labels(raw.iter().map(|r| r.3));
        let id_index: BTreeMap<u64, usize> = identity_labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect();
        let cam_index: BTreeMap<u64, usize> = camera_labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect();
        let samples = raw
            .into_iter()
            .map(|(sample_id, input, y, c)| PersonSample {
                sample_id,
                input,
                identity: id_index[&y],
                camera: cam_index[&c],
                domain,
            })
            .collect();
        let manifest = DatasetManifest {
            domain,
            mode,
            split,
            input_shape,
            sct,
            samples,
            num_identities: identity_labels.len(),
            num_cameras: camera_labels.len(),
            identity_labels,
            camera_labels,
        };
        if sct {
            let report = validate_sct(&manifest);
            if !report.is_sct {
                return Err(Error::Data(format!(
                    "manifest is flagged SCT but {} identities appear under several cameras \
                     (first: {:?})",
                    report.violating_identity_ids.len(),
                    report.violating_identity_ids.first()
                )));
            }
        }
        Ok(manifest)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Rows of raw inputs, in sample order.
    pub fn inputs(&self) -> ndarray::Array2<f64> {
        let w = self.input_width();
        let mut out = ndarray::Array2::zeros((self.samples.len(), w));
        for (mut row, s) in out.rows_mut().into_iter().zip(&self.samples) {
            row.assign(&ndarray::ArrayView1::from(&s.input[..]));
        }
        out
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.sample_id == sample_id)
    }
}

fn dense_labels(labels: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut v: Vec<u64> = labels.collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn check_shape(mode: InputMode, shape: &[usize]) -> Result<()> {
    let ok = match mode {
        InputMode::Feature => shape.len() == 1 && shape[0] > 0,
        InputMode::Image => shape.len() == 3 && shape.iter().all(|&d| d > 0),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "input_shape {shape:?} is invalid for mode {mode:?}"
        )))
    }
}

/// Parses manifest text. `base_dir` resolves `path` payloads.
pub fn parse_manifest(text: &str, base_dir: Option<&Path>) -> Result<DatasetManifest> {
    parse_lines(
        text.lines().map(|l| Ok(l.to_string())),
        base_dir,
    )
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let lines = BufReader::new(file)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)));
    parse_lines(lines, path.parent())
}

fn parse_lines(
    lines: impl Iterator<Item = Result<String>>,
    base_dir: Option<&Path>,
) -> Result<DatasetManifest> {
    let mut header: Option<Header> = None;
    let mut raw = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            let parsed: HeaderLine = serde_json::from_str(&line).map_err(|e| {
                Error::Data(format!("line {}: bad manifest header: {e}", lineno + 1))
            })?;
            if parsed.manifest.version != MANIFEST_VERSION {
                return Err(Error::Data(format!(
                    "unsupported manifest version {}",
                    parsed.manifest.version
                )));
            }
            check_shape(parsed.manifest.mode, &parsed.manifest.input_shape)?;
            header = Some(parsed.manifest);
            continue;
        };
        let s: SampleLine = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: bad sample: {e}", lineno + 1)))?;
        if s.domain != h.domain {
            return Err(Error::Data(format!(
                "sample `{}` has domain {:?}, manifest is {:?}",
                s.id, s.domain, h.domain
            )));
        }
        let input = match (h.mode, s.feature, s.image, s.path) {
            (InputMode::Feature, Some(f), None, None) => f,
            (InputMode::Image, None, Some(px), None) => px,
            (_, None, None, Some(p)) => read_blob(base_dir, &p)?,
            (mode, f, i, p) => {
                return Err(Error::Shape(format!(
                    "sample `{}`: payload (feature={}, image={}, path={}) does not match mode {mode:?}",
                    s.id,
                    f.is_some(),
                    i.is_some(),
                    p.is_some()
                )))
            }
        };
        raw.push((s.id, input, s.identity, s.camera));
    }
    let header = header.ok_or_else(|| Error::Data("empty manifest".into()))?;
    if raw.len() != header.num_samples {
        return Err(Error::Data(format!(
            "header declares {} samples, found {}",
            header.num_samples,
            raw.len()
        )));
    }
    let m = DatasetManifest::from_raw_samples(
        header.domain,
        header.mode,
        header.split,
        header.input_shape,
        header.sct,
        raw,
    )?;
    if let Some(n) = header.num_identities {
        if n != m.num_identities {
            return Err(Error::Data(format!(
                "header declares {n} identities, found {}",
                m.num_identities
            )));
        }
    }
    if let Some(n) = header.num_cameras {
        if n != m.num_cameras {
            return Err(Error::Data(format!(
                "header declares {n} cameras, found {}",
                m.num_cameras
            )));
        }
    }
    Ok(m)
}

fn read_blob(base_dir: Option<&Path>, rel: &str) -> Result<Vec<f64>> {
    let path = match base_dir {
        Some(d) => d.join(rel),
        None => Path::new(rel).to_path_buf(),
    };
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Shape(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes a manifest with inline payloads and the original (pre-densification) labels.
pub fn write_manifest(manifest: &DatasetManifest, out: &mut impl Write) -> Result<()> {
    let header = HeaderLine {
        manifest: Header {
            version: MANIFEST_VERSION,
            domain: manifest.domain,
            mode: manifest.mode,
            split: manifest.split,
            input_shape: manifest.input_shape.clone(),
            num_samples: manifest.samples.len(),
            num_identities: Some(manifest.num_identities),
            num_cameras: Some(manifest.num_cameras),
            sct: manifest.sct,
        },
    };
    let io_err = |e| Error::io("<manifest writer>", e);
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n").map_err(io_err)?;
    for s in &manifest.samples {
        let (feature, image) = match manifest.mode {
            InputMode::Feature => (Some(s.input.clone()), None),
            InputMode::Image => (None, Some(s.input.clone())),
        };
        let line = SampleLine {
            id: s.sample_id.clone(),
            identity: manifest.identity_labels[s.identity],
            camera: manifest.camera_labels[s.camera],
            domain: s.domain,
            feature,
            image,
            path: None,
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        write_manifest(self, &mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        write_manifest(self, &mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }
}
