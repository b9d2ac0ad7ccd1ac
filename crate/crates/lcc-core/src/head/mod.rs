//! The contrastive concept embedding head.
//!
//! An explicit per-class embedding table is matched against per-timestep
//! backbone features by cosine similarity (mean plus max over the per-class
//! variations), sharpened by a temperature softmax, and reduced to a
//! clip-level existence vector by normalising the temporally-summed
//! in-vocabulary mass. Training couples a BCE recognition loss on that
//! vector with an MSE between the table's class-similarity matrix and the
//! word-vector similarity matrix. Extended slots beyond the target
//! vocabulary absorb background, transitions, and out-of-vocabulary signs,
//! which is what makes the per-timestep distribution localise the sign.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Tensor, TensorError};

/// Denominator guard for clips whose mass sits entirely on extended slots.
pub const EXISTENCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    /// V, the target vocabulary size.
    pub target_vocab: usize,
    /// Extra slots beyond the target vocabulary (V' = V + extended_slots).
    pub extended_slots: usize,
    /// M, the number of variation vectors per vocabulary item.
    pub variations: usize,
    /// C, the feature channel count shared with the backbone output.
    pub channels: usize,
}

impl EmbeddingDims {
    pub fn extended_vocab(&self) -> usize {
        self.target_vocab + self.extended_slots
    }

    pub fn table_shape(&self) -> [usize; 3] {
        [self.channels, self.extended_vocab(), self.variations]
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.target_vocab == 0
            || self.extended_slots == 0
            || self.variations == 0
            || self.channels == 0
        {
            return Err(TensorError::InvalidAttr {
                op: "embedding_table",
                detail: format!("all dims must be positive: {self:?}"),
            });
        }
        Ok(())
    }
}

/// The learnable embedding table E of shape `[C, V', M]`. Slots `[0, V)` are
/// the target classes, `[V, V')` the extended background slots.
#[derive(Debug, Clone)]
pub struct LccEmbeddingTable {
    pub dims: EmbeddingDims,
    pub table: Tensor,
}

impl LccEmbeddingTable {
    /// Seeded normal init with std `1/sqrt(C)`, so cosines start at unit
    /// scale. Guaranteed nonzero variation norms.
    pub fn init(dims: EmbeddingDims, rng: &mut ChaCha8Rng) -> Result<Self, TensorError> {
        dims.validate()?;
        let std = 1.0 / (dims.channels as f64).sqrt();
        let shape = dims.table_shape();
        let mut table;
        loop {
            let t = Tensor::from_fn(&shape, |_| {
                // Box-Muller on two uniforms keeps the dependency surface small
                let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                std * (-2.0 * u1.ln()).sqrt() * u2.cos()
            });
            table = t;
            if variation_norms_nonzero(&table, &dims) {
                break;
            }
        }
        Ok(Self {
            dims,
            table: table.with_requires_grad(true),
        })
    }
}

fn variation_norms_nonzero(table: &Tensor, dims: &EmbeddingDims) -> bool {
    let (c, vp, m) = (dims.channels, dims.extended_vocab(), dims.variations);
    let tv = table.values();
    for v in 0..vp {
        for var in 0..m {
            let norm: f64 = (0..c).map(|ch| tv[(ch * vp + v) * m + var].powi(2)).sum();
            if norm == 0.0 {
                return false;
            }
        }
    }
    true
}

/// Per-clip head outputs: aggregated similarities `c_hat` (`[T', V']`, each
/// entry in [-2, 2]), the per-timestep distribution `q`, and the clip-level
/// existence vector `q_hat` over the target vocabulary.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub c_hat: Tensor,
    pub q: Tensor,
    pub q_hat: Tensor,
}

impl HeadOutputs {
    /// Total in-vocabulary probability mass; near zero means the existence
    /// denominator ran on its guard and the clip was all background.
    pub fn in_vocab_mass(&self, target_vocab: usize) -> f64 {
        let (t_len, vp) = (self.q.shape()[0], self.q.shape()[1]);
        let qv = self.q.values();
        (0..t_len)
            .map(|t| qv[t * vp..t * vp + target_vocab].iter().sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the concept similarity loss.
    pub alpha: f64,
    /// Weight of the recognition loss.
    pub beta: f64,
    /// Softmax temperature.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 10.0,
            tau: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropMaskSpec {
    pub enabled: bool,
    /// Probability a feature channel is zeroed (identically in z and E).
    pub p_channel: f64,
    /// Probability a time row of z is zeroed.
    pub p_temporal: f64,
}

impl Default for DropMaskSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            p_channel: 0.1,
            p_temporal: 0.1,
        }
    }
}

fn selector_in_vocab(dims: &EmbeddingDims) -> Tensor {
    // [V', V] with ones on (j, j): matmul drops the extended columns
    let (vp, v) = (dims.extended_vocab(), dims.target_vocab);
    Tensor::from_fn(&[vp, v], |i| if i / v == i % v { 1.0 } else { 0.0 })
}

/// Aggregated similarity scores between per-timestep features and every
/// vocabulary slot: mean plus max of the cosine across the M variations.
/// Ties in the max route their gradient to the lowest variation index.
pub fn similarity_scores(
    g: &mut Graph,
    z_hat: &Tensor,
    table: &Tensor,
    dims: &EmbeddingDims,
) -> Result<Tensor, TensorError> {
    if z_hat.shape().len() != 2 || z_hat.shape()[1] != dims.channels {
        return Err(TensorError::ShapeMismatch {
            op: "similarity_scores",
            detail: format!(
                "features {:?} vs embedding channels {}",
                z_hat.shape(),
                dims.channels
            ),
        });
    }
    if table.shape() != dims.table_shape() {
        return Err(TensorError::ShapeMismatch {
            op: "similarity_scores",
            detail: format!(
                "table {:?} vs expected {:?}",
                table.shape(),
                dims.table_shape()
            ),
        });
    }
    let vp = dims.extended_vocab();
    let m = dims.variations;
    let t_len = z_hat.shape()[0];
    let by_slot = g.transpose(table, &[1, 2, 0])?; // [V', M, C]
    let flat = g.reshape(&by_slot, &[vp * m, dims.channels])?;
    let cos = g.cosine_similarity(z_hat, &flat, 1)?; // [T', V' * M]
    let cube = g.reshape(&cos, &[t_len, vp, m])?;
    let mean = g.mean(&cube, 2)?;
    let max = g.max(&cube, 2)?;
    g.add(&mean, &max)
}

/// Per-timestep distribution over the extended vocabulary:
/// `softmax(c_hat / tau)` independently per timestep.
pub fn temporal_distribution(
    g: &mut Graph,
    c_hat: &Tensor,
    tau: f64,
) -> Result<Tensor, TensorError> {
    g.softmax(c_hat, 1, tau)
}

/// Clip-level existence vector: per target class, its temporal probability
/// mass normalised by the total in-vocabulary mass. Extended columns never
/// contribute, so `q_hat` sums to one and ignores background.
pub fn recognition_head(
    g: &mut Graph,
    q: &Tensor,
    dims: &EmbeddingDims,
) -> Result<Tensor, TensorError> {
    let sel = g.constant(&selector_in_vocab(dims));
    let in_vocab = g.matmul(q, &sel)?; // [T', V]
    let per_class = g.sum(&in_vocab, 0)?; // [V]
    let total = g.sum(&per_class, 0)?;
    let eps = g.constant(&Tensor::scalar(EXISTENCE_EPS));
    let guarded = g.add(&total, &eps)?;
    g.div(&per_class, &guarded)
}

/// Mean BCE between the existence vector and a one-hot target.
pub fn recognition_loss(
    g: &mut Graph,
    q_hat: &Tensor,
    target: &Tensor,
) -> Result<Tensor, TensorError> {
    g.bce_mean(q_hat, target)
}

/// Pairwise cosine similarity matrix of a `[V, d]` vector table. Symmetric,
/// diagonal exactly 1.
pub fn concept_similarity_matrix(g: &mut Graph, vectors: &Tensor) -> Result<Tensor, TensorError> {
    if vectors.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "concept_similarity_matrix",
            detail: format!("expected [V, d], got {:?}", vectors.shape()),
        });
    }
    let (v, d) = (vectors.shape()[0], vectors.shape()[1]);
    for row in 0..v {
        let norm: f64 = vectors.values()[row * d..(row + 1) * d]
            .iter()
            .map(|x| x * x)
            .sum();
        if norm == 0.0 {
            return Err(TensorError::InvalidAttr {
                op: "concept_similarity_matrix",
                detail: format!("row {row} has zero norm"),
            });
        }
    }
    g.cosine_similarity(vectors, vectors, 1)
}

/// Per-class embedding vectors for the concept loss: mean over the M
/// variations of the target-vocabulary slots, inside the graph so gradients
/// reach the table.
pub fn embedding_class_vectors(
    g: &mut Graph,
    table: &Tensor,
    dims: &EmbeddingDims,
) -> Result<Tensor, TensorError> {
    let by_slot = g.transpose(table, &[1, 2, 0])?; // [V', M, C]
    let mean = g.mean(&by_slot, 1)?; // [V', C]
    let sel = Tensor::from_fn(&[dims.target_vocab, dims.extended_vocab()], |i| {
        let (row, col) = (
            i / dims.extended_vocab(),
            i % dims.extended_vocab(),
        );
        if row == col {
            1.0
        } else {
            0.0
        }
    });
    let sel = g.constant(&sel);
    g.matmul(&sel, &mean) // [V, C]
}

/// Mean squared error between the embedding and word similarity matrices.
pub fn concept_loss(g: &mut Graph, s_e: &Tensor, s_f: &Tensor) -> Result<Tensor, TensorError> {
    g.mse_mean(s_e, s_f)
}

/// `alpha * l_concept + beta * l_rec`.
pub fn combined_loss(
    g: &mut Graph,
    l_rec: &Tensor,
    l_concept: &Tensor,
    w: &LossWeights,
) -> Result<Tensor, TensorError> {
    let a = g.scale(l_concept, w.alpha)?;
    let b = g.scale(l_rec, w.beta)?;
    g.add(&a, &b)
}

pub(crate) fn sample_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<usize> {
    (0..n)
        .filter(|_| rng.random_range(0.0..1.0) < p)
        .collect()
}

/// Zero a random channel subset identically in the features and the table,
/// and independently zero random time rows of the features. No rescaling:
/// cosine similarity is scale-invariant in the surviving channels.
pub fn drop_feature_mask(
    g: &mut Graph,
    z_hat: &Tensor,
    table: &Tensor,
    dims: &EmbeddingDims,
    spec: &DropMaskSpec,
) -> Result<(Tensor, Tensor), TensorError> {
    if !spec.enabled {
        return Ok((z_hat.clone(), table.clone()));
    }
    let t_len = z_hat.shape()[0];
    let channel_hits;
    let time_hits;
    {
        let rng = g.rng();
        channel_hits = sample_mask(rng, dims.channels, spec.p_channel);
        time_hits = sample_mask(rng, t_len, spec.p_temporal);
    }
    let mut z = z_hat.clone();
    let mut e = table.clone();
    if !channel_hits.is_empty() {
        z = g.mask_zero(&z, 1, &channel_hits)?;
        e = g.mask_zero(&e, 0, &channel_hits)?;
    }
    if !time_hits.is_empty() {
        z = g.mask_zero(&z, 0, &time_hits)?;
    }
    Ok((z, e))
}

/// Full head pass: optional drop masking, similarity aggregation, temperature
/// softmax, existence head.
pub fn head_forward(
    g: &mut Graph,
    z_hat: &Tensor,
    table: &Tensor,
    dims: &EmbeddingDims,
    weights: &LossWeights,
    mask: Option<&DropMaskSpec>,
) -> Result<HeadOutputs, TensorError> {
    let (z, e) = match mask {
        Some(spec) => drop_feature_mask(g, z_hat, table, dims, spec)?,
        None => (z_hat.clone(), table.clone()),
    };
    let c_hat = similarity_scores(g, &z, &e, dims)?;
    let q = temporal_distribution(g, &c_hat, weights.tau)?;
    let q_hat = recognition_head(g, &q, dims)?;
    Ok(HeadOutputs { c_hat, q, q_hat })
}

pub fn one_hot(v: usize, label: usize) -> Tensor {
    Tensor::from_fn(&[v], |i| if i == label { 1.0 } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Localisation

/// Temporal localisation read off the per-timestep distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Localisation {
    /// Per timestep, the summed probability mass on extended slots.
    pub background: Vec<f64>,
    /// `[T'][V]` in-vocabulary probabilities.
    pub per_class: Vec<Vec<f64>>,
    /// Maximal `[t_start, t_end)` runs where the target class is the argmax.
    /// Empty when no target was given.
    pub segments: Vec<(usize, usize)>,
}

/// Analyse a per-timestep distribution `q` (`[T', V']`): background mass,
/// per-class activations, and the maximal runs where `target` wins the
/// argmax (ties break to the lowest index).
pub fn localise(
    q: &Tensor,
    target_vocab: usize,
    target: Option<usize>,
) -> Result<Localisation, TensorError> {
    let (t_len, vp) = (q.shape()[0], q.shape()[1]);
    if target_vocab > vp {
        return Err(TensorError::ShapeMismatch {
            op: "localise",
            detail: format!("target vocab {target_vocab} exceeds distribution width {vp}"),
        });
    }
    if let Some(t) = target {
        if t >= target_vocab {
            return Err(TensorError::InvalidAttr {
                op: "localise",
                detail: format!("target {t} outside vocabulary [0, {target_vocab})"),
            });
        }
    }
    let qv = q.values();
    let mut background = Vec::with_capacity(t_len);
    let mut per_class = Vec::with_capacity(t_len);
    let mut argmax = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let row = &qv[t * vp..(t + 1) * vp];
        background.push(row[target_vocab..].iter().sum());
        per_class.push(row[..target_vocab].to_vec());
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        argmax.push(best);
    }
    let segments = match target {
        None => Vec::new(),
        Some(target) => {
            let mut segs = Vec::new();
            let mut start = None;
            for (t, &a) in argmax.iter().enumerate() {
                match (a == target, start) {
                    (true, None) => start = Some(t),
                    (false, Some(s)) => {
                        segs.push((s, t));
                        start = None;
                    }
                    _ => {}
                }
            }
            if let Some(s) = start {
                segs.push((s, t_len));
            }
            segs
        }
    };
    Ok(Localisation {
        background,
        per_class,
        segments,
    })
}

/// Intersection over union between the union of predicted segments (in
/// feature steps of `frames_per_step` frames) and a ground-truth frame
/// window.
pub fn temporal_iou(
    segments: &[(usize, usize)],
    window: (usize, usize),
    frames_per_step: usize,
) -> f64 {
    let mut intersection = 0usize;
    let mut covered = 0usize;
    for &(s, e) in segments {
        let (fs, fe) = (s * frames_per_step, e * frames_per_step);
        covered += fe - fs;
        let lo = fs.max(window.0);
        let hi = fe.min(window.1);
        intersection += hi.saturating_sub(lo);
    }
    let union = covered + (window.1 - window.0) - intersection;
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

// ---------------------------------------------------------------------------
// CSV exports

/// Similarity matrix as CSV in gloss order, 9 significant digits.
pub fn similarity_matrix_csv(matrix: &Tensor, glosses: &[String]) -> String {
    let v = glosses.len();
    debug_assert_eq!(matrix.shape(), &[v, v]);
    let mut out = String::from("gloss");
    for g in glosses {
        out.push(',');
        out.push_str(g);
    }
    out.push('\n');
    for (i, g) in glosses.iter().enumerate() {
        out.push_str(g);
        for j in 0..v {
            out.push(',');
            out.push_str(&format!("{:.8e}", matrix.values()[i * v + j]));
        }
        out.push('\n');
    }
    out
}

/// Per-sample localisation CSV: one row per timestep with the background
/// mass, the target-class probability, and the argmax class id.
pub fn localisation_csv(q: &Tensor, target_vocab: usize, target: Option<usize>) -> String {
    let (t_len, vp) = (q.shape()[0], q.shape()[1]);
    let qv = q.values();
    let mut out = String::from("t,background,q_target,argmax_class\n");
    for t in 0..t_len {
        let row = &qv[t * vp..(t + 1) * vp];
        let background: f64 = row[target_vocab..].iter().sum();
        let q_target = target.map(|c| row[c]).unwrap_or(f64::NAN);
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        let q_target = if q_target.is_nan() {
            String::new()
        } else {
            format!("{q_target:.8e}")
        };
        out.push_str(&format!("{t},{background:.8e},{q_target},{best}\n"));
    }
    out
}
