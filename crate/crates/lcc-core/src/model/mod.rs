//! Sequence encoders and the multi-channel sign model.
//!
//! Each keypoint channel runs through its own backbone (left and right hands
//! share one) producing spatially pooled per-timestep features; a fully
//! connected projection fuses the channels into a global representation.
//! Either an embedding head per channel scores the features against its own
//! vocabulary table, or a single cross-entropy baseline head classifies the
//! pooled global features.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, ParamSet};
use crate::data::{
    self, AugmentParams, Channel, ChannelGraphs, DataError, KeypointSample, StreamKind,
};
use crate::head::{
    combined_loss, concept_loss, concept_similarity_matrix, embedding_class_vectors, head_forward,
    one_hot, recognition_loss, DropMaskSpec, EmbeddingDims, HeadOutputs, LccEmbeddingTable,
    LossWeights,
};
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Config(String),
}

/// Registered sequence encoders. Both produce the same `[T', C]` contract,
/// so heads and checkpoints are encoder-agnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Blocks of graph convolution -> ReLU -> strided temporal convolution,
    /// then mean over the node axis.
    StGcn,
    /// Per-frame MLP over flattened keypoints with strided temporal
    /// subsampling; a deliberately simple second encoder behind the same
    /// contract.
    FrameMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Output channels per block; the last entry is the feature dim C.
    pub channels: Vec<usize>,
    /// Temporal stride per block; their product is the temporal reduction.
    pub strides: Vec<usize>,
    pub window: usize,
    pub dilation: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::StGcn,
            channels: vec![16, 32, 64],
            strides: vec![1, 2, 2],
            window: 5,
            dilation: 1,
        }
    }
}

impl BackboneConfig {
    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    pub fn temporal_reduction(&self) -> usize {
        self.strides.iter().product()
    }

    /// `T' = ceil(T / product(strides))`; successive ceil divisions compose.
    pub fn out_len(&self, t: usize) -> usize {
        t.div_ceil(self.temporal_reduction())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(ModelError::Config(format!(
                "backbone needs matching non-empty channels/strides, got {:?} / {:?}",
                self.channels, self.strides
            )));
        }
        if self.channels.iter().any(|&c| c == 0) || self.strides.iter().any(|&s| s == 0) {
            return Err(ModelError::Config(
                "backbone channels and strides must be positive".into(),
            ));
        }
        if self.window == 0 || self.dilation == 0 {
            return Err(ModelError::Config(
                "backbone window and dilation must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Embedding heads with the contrastive recognition + concept losses.
    Lcc,
    /// Cross entropy on pooled global features (the comparison baseline).
    Ce,
}

/// Ablation switches for the auxiliary heads; the global head is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadToggles {
    pub hands: bool,
    pub mouth: bool,
    pub pose: bool,
}

impl Default for HeadToggles {
    fn default() -> Self {
        Self {
            hands: true,
            mouth: true,
            pose: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub loss_mode: LossMode,
    pub loss: LossWeights,
    /// Extra vocabulary slots beyond the target classes.
    pub extended_slots: usize,
    /// Variation vectors per vocabulary item.
    pub variations: usize,
    pub coord_dim: usize,
    pub sequence_length: usize,
    pub root_center: bool,
    pub heads: HeadToggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            loss_mode: LossMode::Lcc,
            loss: LossWeights::default(),
            extended_slots: 10,
            variations: 5,
            coord_dim: 3,
            sequence_length: 64,
            root_center: true,
            heads: HeadToggles::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.backbone.validate()?;
        if self.loss.tau <= 0.0 {
            return Err(ModelError::Config(format!(
                "temperature must be positive, got {}",
                self.loss.tau
            )));
        }
        if self.extended_slots == 0 || self.variations == 0 {
            return Err(ModelError::Config(
                "extended_slots and variations must be positive".into(),
            ));
        }
        if self.coord_dim < 2 {
            return Err(ModelError::Config(
                "coord_dim must be at least 2".into(),
            ));
        }
        if self.sequence_length == 0 {
            return Err(ModelError::Config("sequence_length must be positive".into()));
        }
        Ok(())
    }
}

/// The four embedding heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadId {
    Global,
    Hands,
    Mouth,
    Pose,
}

impl HeadId {
    pub const ALL: [HeadId; 4] = [HeadId::Global, HeadId::Hands, HeadId::Mouth, HeadId::Pose];

    pub fn key(self) -> &'static str {
        match self {
            HeadId::Global => "global",
            HeadId::Hands => "hands",
            HeadId::Mouth => "mouth",
            HeadId::Pose => "pose",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerHead<T> {
    pub global: T,
    pub hands: Option<T>,
    pub mouth: Option<T>,
    pub pose: Option<T>,
}

impl<T> PerHead<T> {
    pub fn get(&self, id: HeadId) -> Option<&T> {
        match id {
            HeadId::Global => Some(&self.global),
            HeadId::Hands => self.hands.as_ref(),
            HeadId::Mouth => self.mouth.as_ref(),
            HeadId::Pose => self.pose.as_ref(),
        }
    }
}

pub struct ForwardOutputs {
    /// Per-head outputs in embedding-head mode.
    pub heads: Option<PerHead<HeadOutputs>>,
    /// The graph-bound (unmasked) embedding table leaf of each enabled head;
    /// the concept loss must reuse these nodes so both loss paths accumulate
    /// onto one gradient per table.
    pub tables: Option<PerHead<Tensor>>,
    /// Class logits in baseline mode.
    pub logits: Option<Tensor>,
    pub z_global: Tensor,
    pub z_hands: Tensor,
    pub z_mouth: Tensor,
    pub z_pose: Tensor,
}

/// Scalar loss components of one forward pass, for logging.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub rec: PerHead<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept: Option<PerHead<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub glosses: Vec<String>,
    pub stream: StreamKind,
    pub config: ModelConfig,
    pub graphs: data::ChannelGraphSpecs,
}

/// The complete multi-channel model: per-channel backbones, fusion, and
/// either the embedding heads or the baseline classifier.
pub struct SignModel {
    pub config: ModelConfig,
    pub glosses: Vec<String>,
    pub stream: StreamKind,
    pub graphs: ChannelGraphs,
    pub params: ParamSet,
}

const BACKBONE_PREFIXES: [&str; 3] = ["hands", "mouth", "pose"];

impl SignModel {
    pub fn new(
        config: ModelConfig,
        glosses: Vec<String>,
        stream: StreamKind,
        graphs: ChannelGraphs,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if glosses.is_empty() {
            return Err(ModelError::Config("empty vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = config.coord_dim;

        for prefix in BACKBONE_PREFIXES {
            let node_count = match prefix {
                "hands" => graphs.hand.node_count,
                "mouth" => graphs.mouth.node_count,
                _ => graphs.body.node_count,
            };
            let in_dim = match config.backbone.kind {
                BackboneKind::StGcn => d,
                BackboneKind::FrameMlp => d * node_count,
            };
            register_backbone(&mut params, &config.backbone, prefix, in_dim, &mut rng)?;
        }

        let c = config.backbone.out_channels();
        params.insert("fusion.w", glorot(&mut rng, &[3 * c, c]), true)?;
        params.insert("fusion.b", Tensor::zeros(&[c]), true)?;

        match config.loss_mode {
            LossMode::Lcc => {
                let dims = EmbeddingDims {
                    target_vocab: glosses.len(),
                    extended_slots: config.extended_slots,
                    variations: config.variations,
                    channels: c,
                };
                for id in HeadId::ALL {
                    let table = LccEmbeddingTable::init(dims, &mut rng)?;
                    // cosine targets must keep their norms; never decayed
                    params.insert(format!("head.{}.E", id.key()), table.table, false)?;
                }
            }
            LossMode::Ce => {
                params.insert("baseline.w", glorot(&mut rng, &[c, glosses.len()]), true)?;
                params.insert("baseline.b", Tensor::zeros(&[glosses.len()]), true)?;
            }
        }

        Ok(Self {
            config,
            glosses,
            stream,
            graphs,
            params,
        })
    }

    pub fn embedding_dims(&self) -> EmbeddingDims {
        EmbeddingDims {
            target_vocab: self.glosses.len(),
            extended_slots: self.config.extended_slots,
            variations: self.config.variations,
            channels: self.config.backbone.out_channels(),
        }
    }

    /// Resample, optionally center and augment, then derive this model's
    /// input stream.
    pub fn prepare(
        &self,
        sample: &KeypointSample,
        augment: Option<(&AugmentParams, &mut ChaCha8Rng)>,
    ) -> KeypointSample {
        let s = data::resample_length(sample, self.config.sequence_length);
        let s = if self.config.root_center {
            data::center_on_body_root(&s)
        } else {
            s
        };
        let s = match augment {
            Some((params, rng)) => data::augment(&s, params, rng),
            None => s,
        };
        data::derive_stream(&s, self.stream, &self.graphs)
    }

    /// Register every parameter as a graph leaf, returning them in set order.
    fn bind(&self, g: &mut Graph) -> Vec<Tensor> {
        (0..self.params.len())
            .map(|i| g.leaf(&self.params.entry(i).tensor))
            .collect()
    }

    fn bound<'a>(&self, bound: &'a [Tensor], name: &str) -> &'a Tensor {
        &bound[self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not registered"))]
    }

    /// Forward pass over a prepared sample. `mask` enables drop-feature
    /// masking (training only).
    pub fn forward(
        &self,
        g: &mut Graph,
        sample: &KeypointSample,
        mask: Option<&DropMaskSpec>,
    ) -> Result<ForwardOutputs, TensorError> {
        let bound = self.bind(g);
        self.forward_bound(g, sample, mask, &bound)
    }

    /// Forward pass against parameter leaves already registered in `g`, in
    /// parameter-set order. Gradient checking drives the model through this.
    pub fn forward_bound(
        &self,
        g: &mut Graph,
        sample: &KeypointSample,
        mask: Option<&DropMaskSpec>,
        bound: &[Tensor],
    ) -> Result<ForwardOutputs, TensorError> {
        let bound = bound.to_vec();
        let run_backbone = |g: &mut Graph, ch: Channel, prefix: &str| -> Result<Tensor, TensorError> {
            let x = g.constant(sample.channels.get(ch));
            let adjacency = &self.graphs.for_channel(ch).normalized_adjacency;
            backbone_forward(
                g,
                &x,
                &self.config.backbone,
                adjacency,
                |name| self.bound(&bound, &format!("backbone.{prefix}.{name}")).clone(),
            )
        };
        let z_left = run_backbone(g, Channel::LeftHand, "hands")?;
        let z_right = run_backbone(g, Channel::RightHand, "hands")?;
        let z_mouth = run_backbone(g, Channel::Mouth, "mouth")?;
        let z_pose = run_backbone(g, Channel::Body, "pose")?;
        let (z_hands, z_global) = fuse_channels(
            g,
            &z_left,
            &z_right,
            &z_mouth,
            &z_pose,
            self.bound(&bound, "fusion.w"),
            self.bound(&bound, "fusion.b"),
        )?;

        match self.config.loss_mode {
            LossMode::Lcc => {
                let dims = self.embedding_dims();
                let weights = &self.config.loss;
                let head_out = |g: &mut Graph,
                                id: HeadId,
                                z: &Tensor|
                 -> Result<(HeadOutputs, Tensor), TensorError> {
                    let table = self.bound(&bound, &format!("head.{}.E", id.key())).clone();
                    let out = head_forward(g, z, &table, &dims, weights, mask)?;
                    Ok((out, table))
                };
                let (global, global_table) = head_out(g, HeadId::Global, &z_global)?;
                let hands = self
                    .config
                    .heads
                    .hands
                    .then(|| head_out(g, HeadId::Hands, &z_hands))
                    .transpose()?;
                let mouth = self
                    .config
                    .heads
                    .mouth
                    .then(|| head_out(g, HeadId::Mouth, &z_mouth))
                    .transpose()?;
                let pose = self
                    .config
                    .heads
                    .pose
                    .then(|| head_out(g, HeadId::Pose, &z_pose))
                    .transpose()?;
                let (hands, hands_table) = hands.map_or((None, None), |(o, t)| (Some(o), Some(t)));
                let (mouth, mouth_table) = mouth.map_or((None, None), |(o, t)| (Some(o), Some(t)));
                let (pose, pose_table) = pose.map_or((None, None), |(o, t)| (Some(o), Some(t)));
                Ok(ForwardOutputs {
                    heads: Some(PerHead {
                        global,
                        hands,
                        mouth,
                        pose,
                    }),
                    tables: Some(PerHead {
                        global: global_table,
                        hands: hands_table,
                        mouth: mouth_table,
                        pose: pose_table,
                    }),
                    logits: None,
                    z_global,
                    z_hands,
                    z_mouth,
                    z_pose,
                })
            }
            LossMode::Ce => {
                let logits = baseline_forward(
                    g,
                    &z_global,
                    self.bound(&bound, "baseline.w"),
                    self.bound(&bound, "baseline.b"),
                )?;
                Ok(ForwardOutputs {
                    heads: None,
                    tables: None,
                    logits: Some(logits),
                    z_global,
                    z_hands,
                    z_mouth,
                    z_pose,
                })
            }
        }
    }

    /// Scalar training objective: the unweighted sum of the per-head
    /// combined losses, or the baseline cross entropy.
    pub fn training_loss(
        &self,
        g: &mut Graph,
        out: &ForwardOutputs,
        label: usize,
        s_f: Option<&Tensor>,
    ) -> Result<(Tensor, LossValues), TensorError> {
        let v = self.glosses.len();
        match self.config.loss_mode {
            LossMode::Lcc => {
                let heads = out.heads.as_ref().expect("lcc forward has heads");
                let tables = out.tables.as_ref().expect("lcc forward has tables");
                let weights = &self.config.loss;
                let s_f = s_f.expect("embedding-head training needs word similarities");
                let s_f = match s_f.node() {
                    Some(_) => s_f.clone(),
                    None => g.constant(s_f),
                };
                let dims = self.embedding_dims();
                let target = g.constant(&one_hot(v, label));
                let mut total: Option<Tensor> = None;
                let mut rec = PerHead::<f64>::default();
                let mut concept = PerHead::<f64>::default();
                for id in HeadId::ALL {
                    let Some(ho) = heads.get(id) else { continue };
                    let l_rec = recognition_loss(g, &ho.q_hat, &target)?;
                    let table_leaf = tables.get(id).expect("enabled head has a table");
                    let class_vecs = embedding_class_vectors(g, table_leaf, &dims)?;
                    let s_e = concept_similarity_matrix(g, &class_vecs)?;
                    let l_concept = concept_loss(g, &s_e, &s_f)?;
                    let combined = combined_loss(g, &l_rec, &l_concept, weights)?;
                    match id {
                        HeadId::Global => {
                            rec.global = l_rec.scalar_value();
                            concept.global = l_concept.scalar_value();
                        }
                        HeadId::Hands => {
                            rec.hands = Some(l_rec.scalar_value());
                            concept.hands = Some(l_concept.scalar_value());
                        }
                        HeadId::Mouth => {
                            rec.mouth = Some(l_rec.scalar_value());
                            concept.mouth = Some(l_concept.scalar_value());
                        }
                        HeadId::Pose => {
                            rec.pose = Some(l_rec.scalar_value());
                            concept.pose = Some(l_concept.scalar_value());
                        }
                    }
                    total = Some(match total {
                        None => combined,
                        Some(acc) => g.add(&acc, &combined)?,
                    });
                }
                let total = total.expect("global head always enabled");
                Ok((
                    total.clone(),
                    LossValues {
                        total: total.scalar_value(),
                        rec,
                        concept: Some(concept),
                    },
                ))
            }
            LossMode::Ce => {
                let logits = out.logits.as_ref().expect("ce forward has logits");
                let loss = cross_entropy_loss(g, logits, label)?;
                Ok((
                    loss.clone(),
                    LossValues {
                        total: loss.scalar_value(),
                        rec: PerHead {
                            global: loss.scalar_value(),
                            ..PerHead::default()
                        },
                        concept: None,
                    },
                ))
            }
        }
    }

    /// Class scores for evaluation: the existence vector of the global head,
    /// or softmax of the baseline logits.
    pub fn scores(&self, sample: &KeypointSample) -> Result<Vec<f64>, TensorError> {
        let mut g = Graph::new(0);
        let out = self.forward(&mut g, sample, None)?;
        match self.config.loss_mode {
            LossMode::Lcc => Ok(out
                .heads
                .expect("lcc forward has heads")
                .global
                .q_hat
                .values()
                .to_vec()),
            LossMode::Ce => {
                let logits = out.logits.expect("ce forward has logits");
                let probs = g.softmax(&logits, 0, 1.0)?;
                Ok(probs.values().to_vec())
            }
        }
    }

    /// Predicted label: argmax of the global scores, ties to the lowest index.
    pub fn predict(&self, prepared: &KeypointSample) -> Result<usize, TensorError> {
        let scores = self.scores(prepared)?;
        Ok(argmax(&scores))
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            glosses: self.glosses.clone(),
            stream: self.stream,
            config: self.config.clone(),
            graphs: self.graphs.to_specs(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        checkpoint::save(path, &self.meta(), &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let ckpt = checkpoint::load::<ModelMeta>(path)?;
        let graphs = ChannelGraphs::from_specs(&ckpt.meta.graphs)?;
        let mut model = SignModel::new(
            ckpt.meta.config,
            ckpt.meta.glosses,
            ckpt.meta.stream,
            graphs,
            0,
        )?;
        model.params.load_records(&ckpt.tensors)?;
        Ok(model)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let (fan_in, fan_out) = match *shape {
        [i, o] => (i, o),
        [w, i, o] => (w * i, w * o),
        _ => unreachable!("glorot is used for 2-D and 3-D weights"),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

fn register_backbone(
    params: &mut ParamSet,
    cfg: &BackboneConfig,
    prefix: &str,
    in_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(), ModelError> {
    let mut c_in = in_dim;
    for (i, &c_out) in cfg.channels.iter().enumerate() {
        match cfg.kind {
            BackboneKind::StGcn => {
                params.insert(
                    format!("backbone.{prefix}.block{i}.gcn_w"),
                    glorot(rng, &[c_in, c_out]),
                    true,
                )?;
                params.insert(
                    format!("backbone.{prefix}.block{i}.gcn_b"),
                    Tensor::zeros(&[c_out]),
                    true,
                )?;
                params.insert(
                    format!("backbone.{prefix}.block{i}.tconv_w"),
                    glorot(rng, &[cfg.window, c_out, c_out]),
                    true,
                )?;
                params.insert(
                    format!("backbone.{prefix}.block{i}.tconv_b"),
                    Tensor::zeros(&[c_out]),
                    true,
                )?;
            }
            BackboneKind::FrameMlp => {
                params.insert(
                    format!("backbone.{prefix}.block{i}.w"),
                    glorot(rng, &[c_in, c_out]),
                    true,
                )?;
                params.insert(
                    format!("backbone.{prefix}.block{i}.b"),
                    Tensor::zeros(&[c_out]),
                    true,
                )?;
            }
        }
        c_in = c_out;
    }
    Ok(())
}

/// Run one channel's `[T, D, N]` input through the configured encoder to
/// spatially pooled `[T', C]` features.
pub fn backbone_forward(
    g: &mut Graph,
    x: &Tensor,
    cfg: &BackboneConfig,
    adjacency: &Tensor,
    param: impl Fn(&str) -> Tensor,
) -> Result<Tensor, TensorError> {
    match cfg.kind {
        BackboneKind::StGcn => st_gcn_forward(g, x, cfg, adjacency, param),
        BackboneKind::FrameMlp => frame_mlp_forward(g, x, cfg, param),
    }
}

fn st_gcn_forward(
    g: &mut Graph,
    x: &Tensor,
    cfg: &BackboneConfig,
    adjacency: &Tensor,
    param: impl Fn(&str) -> Tensor,
) -> Result<Tensor, TensorError> {
    let n = x.shape()[2];
    let adj = g.constant(adjacency);
    // [T, D, N] -> [N, T, D]: node-major keeps the temporal convolutions
    // batched per node with no further transposes
    let mut h = g.transpose(x, &[2, 0, 1])?;
    for (i, (&c_out, &stride)) in cfg.channels.iter().zip(&cfg.strides).enumerate() {
        let (t_len, c_in) = (h.shape()[1], h.shape()[2]);
        let w = param(&format!("block{i}.gcn_w"));
        let b = param(&format!("block{i}.gcn_b"));
        let flat = g.reshape(&h, &[n * t_len, c_in])?;
        let hw = g.matmul(&flat, &w)?;
        let hw = g.add(&hw, &b)?;
        let mixed = {
            let rows = g.reshape(&hw, &[n, t_len * c_out])?;
            let agg = g.matmul(&adj, &rows)?;
            g.reshape(&agg, &[n, t_len, c_out])?
        };
        let act = g.relu(&mixed)?;
        let tw = param(&format!("block{i}.tconv_w"));
        let tb = param(&format!("block{i}.tconv_b"));
        h = g.conv1d_temporal(&act, &tw, Some(&tb), stride, cfg.dilation, cfg.window)?;
    }
    // spatial global average pooling over the node axis
    g.mean(&h, 0)
}

fn frame_mlp_forward(
    g: &mut Graph,
    x: &Tensor,
    cfg: &BackboneConfig,
    param: impl Fn(&str) -> Tensor,
) -> Result<Tensor, TensorError> {
    let (t_len, d, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut h = g.reshape(x, &[t_len, d * n])?;
    for (i, (&_c_out, &stride)) in cfg.channels.iter().zip(&cfg.strides).enumerate() {
        let w = param(&format!("block{i}.w"));
        let b = param(&format!("block{i}.b"));
        let lin = g.matmul(&h, &w)?;
        let lin = g.add(&lin, &b)?;
        h = g.relu(&lin)?;
        if stride > 1 {
            let t_in = h.shape()[0];
            let t_out = t_in.div_ceil(stride);
            let select = Tensor::from_fn(&[t_out, t_in], |idx| {
                let (row, col) = (idx / t_in, idx % t_in);
                if col == row * stride {
                    1.0
                } else {
                    0.0
                }
            });
            let sel = g.constant(&select);
            h = g.matmul(&sel, &h)?;
        }
    }
    Ok(h)
}

/// Average the two hand features and project the concatenated channels back
/// to the shared width: `z_global = FC(concat(z_hands, z_mouth, z_pose))`.
pub fn fuse_channels(
    g: &mut Graph,
    z_left: &Tensor,
    z_right: &Tensor,
    z_mouth: &Tensor,
    z_pose: &Tensor,
    proj_w: &Tensor,
    proj_b: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    for (name, z) in [("mouth", z_mouth), ("pose", z_pose), ("right hand", z_right)] {
        if z.shape() != z_left.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "fuse_channels",
                detail: format!(
                    "{name} features {:?} vs left hand {:?}",
                    z.shape(),
                    z_left.shape()
                ),
            });
        }
    }
    let sum = g.add(&z_left.clone(), z_right)?;
    let z_hands = g.scale(&sum, 0.5)?;
    let cat = g.concat(&[&z_hands, z_mouth, z_pose], 1)?;
    let proj = g.matmul(&cat, proj_w)?;
    let z_global = g.add(&proj, proj_b)?;
    Ok((z_hands, z_global))
}

/// Baseline classifier: pool over time, then a linear map to class logits.
pub fn baseline_forward(
    g: &mut Graph,
    z_hat: &Tensor,
    w: &Tensor,
    b: &Tensor,
) -> Result<Tensor, TensorError> {
    let pooled = g.mean(z_hat, 0)?; // [C]
    let row = g.reshape(&pooled, &[1, pooled.numel()])?;
    let logits = g.matmul(&row, w)?;
    let logits = g.add(&logits, b)?;
    g.reshape(&logits, &[b.numel()])
}

/// Categorical cross entropy of logits against a class index.
pub fn cross_entropy_loss(
    g: &mut Graph,
    logits: &Tensor,
    label: usize,
) -> Result<Tensor, TensorError> {
    let probs = g.softmax(logits, 0, 1.0)?;
    let safe = g.clamp(&probs, 1e-12, 1.0)?;
    let logp = g.log(&safe)?;
    let target = g.constant(&one_hot(logits.numel(), label));
    let picked = g.mul(&logp, &target)?;
    let total = g.sum(&picked, 0)?;
    g.scale(&total, -1.0)
}

#[cfg(test)]
mod tests;
