//! Keypoint dataset ingestion, stream derivation, and augmentation.
//!
//! A dataset on disk is a directory with a `manifest.json` (ordered gloss
//! list, split membership, per-sample file names) and one JSON file per
//! sample holding the four keypoint channels as `T x D x N` nested arrays.

mod graphs;
mod synthetic;
mod words;

pub use graphs::{ChannelGraphSpecs, ChannelGraphs, GraphSpec, SkeletonGraph};
pub use synthetic::{generate_synthetic, ClassPattern, SyntheticDataset, SyntheticSpec};
pub use words::{load_word_embeddings, save_word_embeddings, WordEmbeddingTable};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("sample {id}: {detail}")]
    Sample { id: String, detail: String },
    #[error("word vectors, line {line}: {detail}")]
    WordParse { line: usize, detail: String },
    #[error("glosses missing from word vectors: {}", .0.join(", "))]
    MissingGlosses(Vec<String>),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid skeleton graph: {0}")]
    InvalidGraph(String),
    #[error("{0}")]
    Invalid(String),
}

/// The four keypoint groups, each fed to its own backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Body,
    LeftHand,
    RightHand,
    Mouth,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Body,
        Channel::LeftHand,
        Channel::RightHand,
        Channel::Mouth,
    ];

    /// Fixed keypoint layout: body 17, each hand 21, mouth 40.
    pub fn node_count(self) -> usize {
        match self {
            Channel::Body => 17,
            Channel::LeftHand | Channel::RightHand => 21,
            Channel::Mouth => 40,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Channel::Body => "body",
            Channel::LeftHand => "left_hand",
            Channel::RightHand => "right_hand",
            Channel::Mouth => "mouth",
        }
    }
}

/// Per-channel `[T, D, N]` sequences sharing one `T` and one `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub body: Tensor,
    pub left_hand: Tensor,
    pub right_hand: Tensor,
    pub mouth: Tensor,
}

impl ChannelSet {
    pub fn get(&self, ch: Channel) -> &Tensor {
        match ch {
            Channel::Body => &self.body,
            Channel::LeftHand => &self.left_hand,
            Channel::RightHand => &self.right_hand,
            Channel::Mouth => &self.mouth,
        }
    }

    pub fn map(&self, mut f: impl FnMut(Channel, &Tensor) -> Tensor) -> ChannelSet {
        ChannelSet {
            body: f(Channel::Body, &self.body),
            left_hand: f(Channel::LeftHand, &self.left_hand),
            right_hand: f(Channel::RightHand, &self.right_hand),
            mouth: f(Channel::Mouth, &self.mouth),
        }
    }
}

/// One labelled sign clip as per-channel keypoint sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSample {
    pub sample_id: String,
    /// Vocabulary index in `[0, V)`; `None` for unlabeled clips.
    pub label: Option<usize>,
    pub fps: f64,
    pub channels: ChannelSet,
}

impl KeypointSample {
    pub fn t_len(&self) -> usize {
        self.channels.body.shape()[0]
    }

    pub fn coord_dim(&self) -> usize {
        self.channels.body.shape()[1]
    }

    fn validate(&self, vocab_size: Option<usize>) -> Result<(), DataError> {
        let err = |detail: String| DataError::Sample {
            id: self.sample_id.clone(),
            detail,
        };
        let t = self.t_len();
        let d = self.coord_dim();
        if t == 0 {
            return Err(err("empty sequence".into()));
        }
        for ch in Channel::ALL {
            let shape = self.channels.get(ch).shape();
            if shape.len() != 3 {
                return Err(err(format!("{} is not a T x D x N array", ch.key())));
            }
            if shape[2] != ch.node_count() {
                return Err(err(format!(
                    "{} expects {} nodes, got {}",
                    ch.key(),
                    ch.node_count(),
                    shape[2]
                )));
            }
            if shape[0] != t {
                return Err(err(format!(
                    "{} has {} frames but body has {t}",
                    ch.key(),
                    shape[0]
                )));
            }
            if shape[1] != d {
                return Err(err(format!(
                    "{} has D={} but body has D={d}",
                    ch.key(),
                    shape[1]
                )));
            }
            if !self.channels.get(ch).all_finite() {
                return Err(err(format!("{} contains non-finite values", ch.key())));
            }
        }
        if let (Some(label), Some(v)) = (self.label, vocab_size) {
            if label >= v {
                return Err(err(format!("label {label} outside vocabulary [0, {v})")));
            }
        }
        Ok(())
    }
}

/// Input feature derivation; each kind yields an independently trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl StreamKind {
    pub const ALL: [StreamKind; 4] = [
        StreamKind::Joint,
        StreamKind::Bone,
        StreamKind::JointMotion,
        StreamKind::BoneMotion,
    ];

    pub fn key(self) -> &'static str {
        match self {
            StreamKind::Joint => "joint",
            StreamKind::Bone => "bone",
            StreamKind::JointMotion => "joint_motion",
            StreamKind::BoneMotion => "bone_motion",
        }
    }
}

impl std::str::FromStr for StreamKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(StreamKind::Joint),
            "bone" => Ok(StreamKind::Bone),
            "joint_motion" | "joint-motion" => Ok(StreamKind::JointMotion),
            "bone_motion" | "bone-motion" => Ok(StreamKind::BoneMotion),
            other => Err(format!(
                "unknown stream '{other}' (expected joint, bone, joint_motion or bone_motion)"
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest + sample files

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Ordered gloss list; defines V and the label indexing.
    pub glosses: Vec<String>,
    pub splits: BTreeMap<String, Vec<String>>,
    /// sample id -> file path relative to the dataset directory
    pub samples: BTreeMap<String, String>,
}

impl Manifest {
    pub fn vocab_size(&self) -> usize {
        self.glosses.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleFile {
    sample_id: String,
    fps: f64,
    label: Option<usize>,
    channels: BTreeMap<String, Vec<Vec<Vec<f64>>>>,
}

fn nested_to_tensor(id: &str, key: &str, data: &[Vec<Vec<f64>>]) -> Result<Tensor, DataError> {
    let err = |detail: String| DataError::Sample {
        id: id.to_string(),
        detail,
    };
    let t = data.len();
    if t == 0 {
        return Err(err(format!("{key} has no frames")));
    }
    let d = data[0].len();
    let n = data[0].first().map_or(0, Vec::len);
    let mut values = Vec::with_capacity(t * d * n);
    for (ti, frame) in data.iter().enumerate() {
        if frame.len() != d {
            return Err(err(format!("{key} frame {ti} has {} rows, expected {d}", frame.len())));
        }
        for row in frame {
            if row.len() != n {
                return Err(err(format!("{key} frame {ti} has ragged rows")));
            }
            values.extend_from_slice(row);
        }
    }
    Tensor::new(vec![t, d, n], values).map_err(|e| err(e.to_string()))
}

fn tensor_to_nested(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let (frames, d, n) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    (0..frames)
        .map(|ti| {
            (0..d)
                .map(|di| {
                    (0..n)
                        .map(|ni| t.values()[(ti * d + di) * n + ni])
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let path = dir.join("manifest.json");
    let body = fs::read_to_string(&path).map_err(|source| DataError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|e| DataError::Parse {
        path,
        detail: e.to_string(),
    })
}

fn load_sample(dir: &Path, rel: &str, id: &str, vocab: usize) -> Result<KeypointSample, DataError> {
    let path = dir.join(rel);
    let body = fs::read_to_string(&path).map_err(|source| DataError::Io {
        path: path.clone(),
        source,
    })?;
    let file: SampleFile = serde_json::from_str(&body).map_err(|e| DataError::Parse {
        path,
        detail: e.to_string(),
    })?;
    let fetch = |ch: Channel| -> Result<Tensor, DataError> {
        let data = file.channels.get(ch.key()).ok_or_else(|| DataError::Sample {
            id: id.to_string(),
            detail: format!("missing channel '{}'", ch.key()),
        })?;
        nested_to_tensor(id, ch.key(), data)
    };
    let sample = KeypointSample {
        sample_id: file.sample_id.clone(),
        label: file.label,
        fps: file.fps,
        channels: ChannelSet {
            body: fetch(Channel::Body)?,
            left_hand: fetch(Channel::LeftHand)?,
            right_hand: fetch(Channel::RightHand)?,
            mouth: fetch(Channel::Mouth)?,
        },
    };
    sample.validate(Some(vocab))?;
    Ok(sample)
}

/// Load every sample of `split`, validated against the manifest vocabulary.
/// An empty split yields an empty list.
pub fn load_dataset(dir: &Path, split: &str) -> Result<Vec<KeypointSample>, DataError> {
    let manifest = load_manifest(dir)?;
    load_split(dir, &manifest, split)
}

pub fn load_split(
    dir: &Path,
    manifest: &Manifest,
    split: &str,
) -> Result<Vec<KeypointSample>, DataError> {
    let ids = manifest
        .splits
        .get(split)
        .ok_or_else(|| DataError::Invalid(format!("unknown split '{split}'")))?;
    let vocab = manifest.vocab_size();
    ids.iter()
        .map(|id| {
            let rel = manifest.samples.get(id).ok_or_else(|| DataError::Sample {
                id: id.clone(),
                detail: "listed in split but not in sample table".into(),
            })?;
            load_sample(dir, rel, id, vocab)
        })
        .collect()
}

/// Write a dataset directory (manifest + one JSON file per sample).
/// Output is byte-deterministic for identical inputs.
pub fn save_dataset(
    dir: &Path,
    glosses: &[String],
    splits: &[(&str, &[KeypointSample])],
) -> Result<(), DataError> {
    let io_err = |path: &Path, source: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let samples_dir = dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| io_err(&samples_dir, e))?;
    let mut manifest = Manifest {
        format_version: 1,
        glosses: glosses.to_vec(),
        splits: BTreeMap::new(),
        samples: BTreeMap::new(),
    };
    for (split, samples) in splits {
        let ids: Vec<String> = samples.iter().map(|s| s.sample_id.clone()).collect();
        manifest.splits.insert((*split).to_string(), ids);
        for s in *samples {
            let rel = format!("samples/{}.json", s.sample_id);
            manifest.samples.insert(s.sample_id.clone(), rel.clone());
            let mut channels = BTreeMap::new();
            for ch in Channel::ALL {
                channels.insert(ch.key().to_string(), tensor_to_nested(s.channels.get(ch)));
            }
            let file = SampleFile {
                sample_id: s.sample_id.clone(),
                fps: s.fps,
                label: s.label,
                channels,
            };
            let path = dir.join(&rel);
            let body = serde_json::to_string(&file).expect("sample serializes");
            fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        }
    }
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, body).map_err(|e| io_err(&path, e))
}

// ---------------------------------------------------------------------------
// Stream derivation, resampling, augmentation

/// Derive an input stream from raw joints.
///
/// joint: identity. bone: per node `x[n] - x[parent(n)]`, roots zero.
/// joint_motion: `m[t] = x[t+1] - x[t]`, last frame zero. bone_motion:
/// motion of the bone stream.
pub fn derive_stream(
    sample: &KeypointSample,
    kind: StreamKind,
    graphs: &ChannelGraphs,
) -> KeypointSample {
    let channels = match kind {
        StreamKind::Joint => sample.channels.clone(),
        StreamKind::Bone => sample
            .channels
            .map(|ch, t| bone_of(t, &graphs.for_channel(ch).bone_parent)),
        StreamKind::JointMotion => sample.channels.map(|_, t| motion_of(t)),
        StreamKind::BoneMotion => sample
            .channels
            .map(|ch, t| motion_of(&bone_of(t, &graphs.for_channel(ch).bone_parent))),
    };
    KeypointSample {
        sample_id: sample.sample_id.clone(),
        label: sample.label,
        fps: sample.fps,
        channels,
    }
}

fn bone_of(x: &Tensor, parent: &[Option<usize>]) -> Tensor {
    let (t_len, d, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    debug_assert_eq!(parent.len(), n);
    let xv = x.values();
    Tensor::from_fn(&[t_len, d, n], |i| {
        let node = i % n;
        match parent[node] {
            Some(p) => xv[i] - xv[i - node + p],
            None => 0.0,
        }
    })
}

fn motion_of(x: &Tensor) -> Tensor {
    let (t_len, d, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let frame = d * n;
    let xv = x.values();
    Tensor::from_fn(&[t_len, d, n], |i| {
        if i >= (t_len - 1) * frame {
            0.0
        } else {
            xv[i + frame] - xv[i]
        }
    })
}

/// Select frames at `floor(i * T / T_target)`; upsampling repeats frames.
pub fn resample_length(sample: &KeypointSample, t_target: usize) -> KeypointSample {
    assert!(t_target >= 1, "target length must be positive");
    let t_len = sample.t_len();
    let channels = sample.channels.map(|_, x| {
        let (d, n) = (x.shape()[1], x.shape()[2]);
        let frame = d * n;
        let xv = x.values();
        let mut values = Vec::with_capacity(t_target * frame);
        for i in 0..t_target {
            let src = (i * t_len / t_target).min(t_len - 1);
            values.extend_from_slice(&xv[src * frame..(src + 1) * frame]);
        }
        Tensor::new(vec![t_target, d, n], values).expect("resample is shape-consistent")
    });
    KeypointSample {
        sample_id: sample.sample_id.clone(),
        label: sample.label,
        fps: sample.fps,
        channels,
    }
}

/// Subtract the body root keypoint (node 0) of each frame from every channel,
/// spatial dims only. Normalises global position per frame.
pub fn center_on_body_root(sample: &KeypointSample) -> KeypointSample {
    let body = &sample.channels.body;
    let (t_len, d, n_body) = (body.shape()[0], body.shape()[1], body.shape()[2]);
    let spatial = d.min(2);
    let mut root = vec![0.0; t_len * spatial];
    for t in 0..t_len {
        for s in 0..spatial {
            root[t * spatial + s] = body.values()[(t * d + s) * n_body];
        }
    }
    let channels = sample.channels.map(|_, x| {
        let n = x.shape()[2];
        let xv = x.values();
        Tensor::from_fn(x.shape(), |i| {
            let t = i / (d * n);
            let dim = (i / n) % d;
            if dim < spatial {
                xv[i] - root[t * spatial + dim]
            } else {
                xv[i]
            }
        })
    });
    KeypointSample {
        sample_id: sample.sample_id.clone(),
        label: sample.label,
        fps: sample.fps,
        channels,
    }
}

/// Training-time keypoint augmentation ranges. A single rotation angle,
/// scale factor and shift vector are drawn per call and applied identically
/// to all channels and frames, in the first two coordinate dims.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Max |angle| in degrees.
    pub rotation_deg: f64,
    /// Multiplicative scale range (lo, hi).
    pub scale: (f64, f64),
    /// Max |shift| per spatial dim.
    pub shift: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            scale: (0.9, 1.1),
            shift: 0.1,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: (1.0, 1.0),
            shift: 0.0,
        }
    }
}

pub fn augment(
    sample: &KeypointSample,
    params: &AugmentParams,
    rng: &mut ChaCha8Rng,
) -> KeypointSample {
    let angle = rng
        .random_range(-params.rotation_deg..=params.rotation_deg)
        .to_radians();
    let scale = rng.random_range(params.scale.0..=params.scale.1);
    let shift_x = rng.random_range(-params.shift..=params.shift);
    let shift_y = rng.random_range(-params.shift..=params.shift);
    transform_keypoints(sample, angle, scale, (shift_x, shift_y))
}

/// Rotate (radians), scale, then shift every keypoint in the first two
/// coordinate dims, identically across channels and frames.
pub fn transform_keypoints(
    sample: &KeypointSample,
    angle: f64,
    scale: f64,
    shift: (f64, f64),
) -> KeypointSample {
    assert!(
        sample.coord_dim() >= 2,
        "rotation needs at least two coordinate dims"
    );
    let (shift_x, shift_y) = shift;
    let (cos_a, sin_a) = (angle.cos(), angle.sin());
    let channels = sample.channels.map(|_, t| {
        let (frames, d, n) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mut values = t.values().to_vec();
        for f in 0..frames {
            for node in 0..n {
                let ix = (f * d) * n + node;
                let iy = (f * d + 1) * n + node;
                let (x, y) = (values[ix], values[iy]);
                values[ix] = scale * (x * cos_a - y * sin_a) + shift_x;
                values[iy] = scale * (x * sin_a + y * cos_a) + shift_y;
            }
        }
        Tensor::new(t.shape().to_vec(), values).expect("augment preserves shape")
    });
    KeypointSample {
        sample_id: sample.sample_id.clone(),
        label: sample.label,
        fps: sample.fps,
        channels,
    }
}


/// Ground-truth localisation windows, `sample id -> [t_start, t_end)`.
pub fn save_windows(
    path: &Path,
    windows: &BTreeMap<String, (usize, usize)>,
) -> Result<(), DataError> {
    let body = serde_json::to_string_pretty(windows).expect("windows serialize");
    fs::write(path, body).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_windows(path: &Path) -> Result<BTreeMap<String, (usize, usize)>, DataError> {
    let body = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
