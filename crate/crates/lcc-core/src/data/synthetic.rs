//! Seed-deterministic synthetic datasets with known localisation windows.
//!
//! Every sample is a shared rest pose plus Gaussian noise, with one
//! class-specific sinusoidal motion pattern added over a random time window.
//! Word vectors are unit vectors built so classes in the same concept group
//! have cosine >= 0.9 while cross-group cosines stay near zero.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Channel, ChannelSet, DataError, KeypointSample, WordEmbeddingTable};
use crate::tensor::Tensor;

const COORD_DIM: usize = 3; // x, y, confidence
const GROUP_JITTER: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// V, the number of target classes.
    pub classes: usize,
    /// Frames per generated clip.
    pub t_len: usize,
    /// Min/max length of the embedded class pattern.
    pub signal_window: (usize, usize),
    pub noise_scale: f64,
    /// Optional partition of classes into meaning groups; classes sharing a
    /// group get highly similar word vectors. `None` means every class is
    /// its own group.
    pub concept_groups: Option<Vec<Vec<usize>>>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub word_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            t_len: 64,
            signal_window: (20, 40),
            noise_scale: 0.25,
            concept_groups: None,
            train_per_class: 40,
            val_per_class: 10,
            test_per_class: 10,
            word_dim: 48,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: String| Err(DataError::InvalidSpec(msg));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        let (lo, hi) = self.signal_window;
        if lo < 2 || lo > hi || hi > self.t_len {
            return fail(format!(
                "signal window ({lo}, {hi}) must satisfy 2 <= min <= max <= T={}",
                self.t_len
            ));
        }
        if self.train_per_class == 0 {
            return fail("train_per_class must be positive".into());
        }
        if let Some(groups) = &self.concept_groups {
            let mut seen = vec![false; self.classes];
            for class in groups.iter().flatten() {
                if *class >= self.classes || std::mem::replace(&mut seen[*class], true) {
                    return fail(format!(
                        "concept groups must partition 0..{}; class {class} repeated or out of range",
                        self.classes
                    ));
                }
            }
            if seen.iter().any(|s| !s) {
                return fail("concept groups must cover every class".into());
            }
        }
        Ok(())
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        self.concept_groups
            .clone()
            .unwrap_or_else(|| (0..self.classes).map(|j| vec![j]).collect())
    }
}

/// One coordinate's motion inside the window: a class-specific pose offset
/// (the held part of the sign) plus a sinusoidal movement component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub offset: f64,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl Sinusoid {
    fn eval(&self, t_rel: f64) -> f64 {
        self.offset + self.amp * (2.0 * std::f64::consts::PI * self.freq * t_rel + self.phase).sin()
    }
}

/// Fixed per-class motion pattern: one sinusoid per (channel, node, spatial
/// dim), evaluated over the normalised window time `t_rel in [0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPattern {
    /// Indexed `[channel in Channel::ALL order][node][spatial dim]`.
    pub coeffs: Vec<Vec<[Sinusoid; 2]>>,
}

impl ClassPattern {
    pub fn eval(&self, channel_idx: usize, node: usize, dim: usize, t_rel: f64) -> f64 {
        self.coeffs[channel_idx][node][dim].eval(t_rel)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub glosses: Vec<String>,
    pub train: Vec<KeypointSample>,
    pub val: Vec<KeypointSample>,
    pub test: Vec<KeypointSample>,
    pub words: WordEmbeddingTable,
    /// sample id -> ground-truth `[t_start, t_end)` pattern window.
    pub windows: BTreeMap<String, (usize, usize)>,
    /// The per-class patterns the samples were built from.
    pub patterns: Vec<ClassPattern>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // One shared rest pose; background frames look alike across classes.
    let rest: Vec<Vec<[f64; 2]>> = Channel::ALL
        .iter()
        .map(|ch| {
            (0..ch.node_count())
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect()
        })
        .collect();

    let patterns: Vec<ClassPattern> = (0..spec.classes)
        .map(|_| ClassPattern {
            coeffs: Channel::ALL
                .iter()
                .map(|ch| {
                    (0..ch.node_count())
                        .map(|_| {
                            [0, 1].map(|_| {
                                let signed = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
                                    let magnitude = rng.random_range(lo..=hi);
                                    if rng.random_range(0.0..1.0) < 0.5 {
                                        -magnitude
                                    } else {
                                        magnitude
                                    }
                                };
                                Sinusoid {
                                    offset: signed(&mut rng, 0.6, 1.4),
                                    amp: signed(&mut rng, 0.3, 0.8),
                                    freq: rng.random_range(0.75..=2.5),
                                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                                }
                            })
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();

    let glosses: Vec<String> = (0..spec.classes).map(|j| format!("class{j:02}")).collect();
    let words = group_word_vectors(spec, &mut rng)?;

    let mut windows = BTreeMap::new();
    let mut make_split = |name: &str, per_class: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(per_class * spec.classes);
        for class in 0..spec.classes {
            for idx in 0..per_class {
                let id = format!("{name}_c{class:02}_{idx:03}");
                let (lo, hi) = spec.signal_window;
                let w = rng.random_range(lo..=hi);
                let start = rng.random_range(0..=spec.t_len - w);
                windows.insert(id.clone(), (start, start + w));
                out.push(build_sample(spec, &rest, &patterns[class], id, class, start, w, rng));
            }
        }
        out
    };
    let train = make_split("train", spec.train_per_class, &mut rng);
    let val = make_split("val", spec.val_per_class, &mut rng);
    let test = make_split("test", spec.test_per_class, &mut rng);

    Ok(SyntheticDataset {
        glosses,
        train,
        val,
        test,
        words,
        windows,
        patterns,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_sample(
    spec: &SyntheticSpec,
    rest: &[Vec<[f64; 2]>],
    pattern: &ClassPattern,
    sample_id: String,
    label: usize,
    start: usize,
    window: usize,
    rng: &mut ChaCha8Rng,
) -> KeypointSample {
    let t_len = spec.t_len;
    let mut tensors = Vec::with_capacity(4);
    for (ci, ch) in Channel::ALL.iter().enumerate() {
        let n = ch.node_count();
        let mut values = vec![0.0; t_len * COORD_DIM * n];
        for t in 0..t_len {
            let in_window = t >= start && t < start + window;
            let t_rel = (t as f64 - start as f64) / window as f64;
            for d in 0..2 {
                for node in 0..n {
                    let noise: f64 = Distribution::<f64>::sample(&StandardNormal, rng);
                    let mut v = rest[ci][node][d] + spec.noise_scale * noise;
                    if in_window {
                        v += pattern.eval(ci, node, d, t_rel);
                    }
                    values[(t * COORD_DIM + d) * n + node] = v;
                }
            }
            for node in 0..n {
                values[(t * COORD_DIM + 2) * n + node] = 1.0;
            }
        }
        tensors.push(Tensor::new(vec![t_len, COORD_DIM, n], values).expect("synthetic shape"));
    }
    let mut it = tensors.into_iter();
    KeypointSample {
        sample_id,
        label: Some(label),
        fps: 25.0,
        channels: ChannelSet {
            body: it.next().unwrap(),
            left_hand: it.next().unwrap(),
            right_hand: it.next().unwrap(),
            mouth: it.next().unwrap(),
        },
    }
}

/// Unit word vectors: orthonormal per-group bases plus a small in-group
/// jitter, so within-group cosine is >= 0.9 and cross-group cosine is O(Є²).
fn group_word_vectors(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> Result<WordEmbeddingTable, DataError> {
    let groups = spec.groups();
    let dim = spec.word_dim.max(groups.len() + 8);
    let bases = orthonormal_basis(rng, groups.len(), dim);

    let mut rows = vec![Vec::new(); spec.classes];
    for (g, members) in groups.iter().enumerate() {
        for &class in members {
            // jitter orthogonal to every base so cross-group dots stay tiny
            let mut jitter = gaussian_vec(rng, dim);
            for base in &bases {
                project_out(&mut jitter, base);
            }
            normalize(&mut jitter);
            let mut v: Vec<f64> = bases[g]
                .iter()
                .zip(&jitter)
                .map(|(&b, &j)| b + GROUP_JITTER * j)
                .collect();
            normalize(&mut v);
            rows[class] = v;
        }
    }
    let glosses: Vec<String> = (0..spec.classes).map(|j| format!("class{j:02}")).collect();
    WordEmbeddingTable::new(glosses, dim, rows)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| Distribution::<f64>::sample(&StandardNormal, rng))
        .collect()
}

fn project_out(v: &mut [f64], base: &[f64]) {
    let dot: f64 = v.iter().zip(base).map(|(&a, &b)| a * b).sum();
    for (vi, &bi) in v.iter_mut().zip(base) {
        *vi -= dot * bi;
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    debug_assert!(norm > 1e-9, "degenerate vector during word construction");
    for x in v {
        *x /= norm;
    }
}

fn orthonormal_basis(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(count);
    while bases.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for b in &bases {
            project_out(&mut v, b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        bases.push(v);
    }
    bases
}
