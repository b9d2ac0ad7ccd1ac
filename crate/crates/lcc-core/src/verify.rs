//! Gradient verification suites behind the `gradcheck` command: every
//! catalog op against central differences, the composite embedding-head
//! path, and a tiny end-to-end model.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ChannelGraphs, ChannelSet, KeypointSample, SkeletonGraph, StreamKind};
use crate::head::{
    combined_loss, concept_loss, concept_similarity_matrix, embedding_class_vectors, head_forward,
    one_hot, recognition_loss, EmbeddingDims, LossWeights,
};
use crate::model::{BackboneConfig, BackboneKind, HeadToggles, LossMode, ModelConfig, SignModel};
use crate::tensor::{grad_check, grad_check_fn, Op, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).with_requires_grad(true)
}

/// Random values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], floor: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let magnitude = rng.random_range(floor..1.5);
        if rng.random_range(0.0..1.0) < 0.5 {
            -magnitude
        } else {
            magnitude
        }
    })
    .with_requires_grad(true)
}

/// Random values with pairwise gaps along the last axis, so max has a
/// unique argmax everywhere.
fn well_separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let last = *shape.last().unwrap();
    let mut t = Vec::with_capacity(shape.iter().product());
    let rows: usize = shape.iter().product::<usize>() / last;
    for _ in 0..rows {
        let mut vals: Vec<f64> = (0..last)
            .map(|i| i as f64 * 0.35 + rng.random_range(0.0..0.3))
            .collect();
        // deterministic shuffle via the rng keeps the gaps but mixes order
        for i in (1..vals.len()).rev() {
            let j = rng.random_range(0..=i);
            vals.swap(i, j);
        }
        t.extend(vals);
    }
    Tensor::new(shape.to_vec(), t)
        .expect("shape consistent")
        .with_requires_grad(true)
}

fn dims_for(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(2..5), rng.random_range(2..5))
}

/// Gradient-check every op in the catalog over `instances` random cases
/// each. Step 1e-3, tolerance 1e-4.
pub fn ops_suite(seed: u64, instances: usize) -> Result<Vec<CheckReport>, TensorError> {
    let step = 1e-3;
    let tolerance = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    type Case = Box<dyn FnMut(&mut ChaCha8Rng) -> (Op, Vec<Tensor>)>;
    let cases: Vec<(&str, Case)> = vec![
        ("matmul", Box::new(|r| {
            let (m, k) = dims_for(r);
            let n = r.random_range(2..5);
            (Op::Matmul, vec![uniform(r, &[m, k], -1.5, 1.5), uniform(r, &[k, n], -1.5, 1.5)])
        })),
        ("add", Box::new(|r| {
            let (m, n) = dims_for(r);
            match r.random_range(0..3) {
                0 => (Op::Add, vec![uniform(r, &[m, n], -1.5, 1.5), uniform(r, &[m, n], -1.5, 1.5)]),
                1 => (Op::Add, vec![uniform(r, &[m, n], -1.5, 1.5), uniform(r, &[n], -1.5, 1.5)]),
                _ => (Op::Add, vec![uniform(r, &[m, n], -1.5, 1.5), uniform(r, &[], -1.5, 1.5)]),
            }
        })),
        ("sub", Box::new(|r| {
            let (m, n) = dims_for(r);
            (Op::Sub, vec![uniform(r, &[m, n], -1.5, 1.5), uniform(r, &[n], -1.5, 1.5)])
        })),
        ("mul_elementwise", Box::new(|r| {
            let (m, n) = dims_for(r);
            (Op::MulElem, vec![uniform(r, &[m, n], -1.5, 1.5), uniform(r, &[m, n], -1.5, 1.5)])
        })),
        ("div", Box::new(|r| {
            let (m, n) = dims_for(r);
            let denom = match r.random_range(0..3) {
                0 => away_from_zero(r, &[m, n], 0.4),
                1 => away_from_zero(r, &[n], 0.4),
                _ => away_from_zero(r, &[], 0.4),
            };
            (Op::Div, vec![uniform(r, &[m, n], -1.5, 1.5), denom])
        })),
        ("scale", Box::new(|r| {
            let (m, n) = dims_for(r);
            let factor = r.random_range(-2.0..2.0);
            (Op::Scale { factor }, vec![uniform(r, &[m, n], -1.5, 1.5)])
        })),
        ("concat", Box::new(|r| {
            let (m, n) = dims_for(r);
            let k = r.random_range(1..4);
            (
                Op::Concat { axis: 1 },
                vec![uniform(r, &[m, n], -1.5, 1.5), uniform(r, &[m, k], -1.5, 1.5)],
            )
        })),
        ("mean", Box::new(|r| {
            let (m, n) = dims_for(r);
            let k = r.random_range(2..4);
            let axis = r.random_range(0..3);
            (Op::Mean { axis }, vec![uniform(r, &[m, n, k], -1.5, 1.5)])
        })),
        ("max", Box::new(|r| {
            let (m, n) = dims_for(r);
            (Op::Max { axis: 1 }, vec![well_separated(r, &[m, n])])
        })),
        ("sum", Box::new(|r| {
            let (m, n) = dims_for(r);
            let axis = r.random_range(0..2);
            (Op::Sum { axis }, vec![uniform(r, &[m, n], -1.5, 1.5)])
        })),
        ("relu", Box::new(|r| {
            let (m, n) = dims_for(r);
            (Op::Relu, vec![away_from_zero(r, &[m, n], 0.05)])
        })),
        ("log", Box::new(|r| {
            let (m, n) = dims_for(r);
            (Op::Log, vec![uniform(r, &[m, n], 0.2, 2.0)])
        })),
        ("conv1d_temporal", Box::new(|r| {
            let b = r.random_range(1..3);
            let t = r.random_range(4..9);
            let (ci, co) = dims_for(r);
            let window = r.random_range(1..4);
            let stride = r.random_range(1..3);
            let dilation = r.random_range(1..3);
            (
                Op::Conv1dTemporal { stride, dilation, window },
                vec![
                    uniform(r, &[b, t, ci], -1.5, 1.5),
                    uniform(r, &[window, ci, co], -1.5, 1.5),
                    uniform(r, &[co], -0.5, 0.5),
                ],
            )
        })),
        ("softmax", Box::new(|r| {
            let (m, n) = dims_for(r);
            let temperature = r.random_range(0.05..2.0);
            (
                Op::Softmax { axis: 1, temperature },
                vec![uniform(r, &[m, n], -1.0, 1.0)],
            )
        })),
        ("cosine_similarity", Box::new(|r| {
            let (p, q) = dims_for(r);
            let c = r.random_range(2..6);
            (
                Op::CosineSimilarity { axis: 1 },
                vec![away_from_zero(r, &[p, c], 0.2), away_from_zero(r, &[q, c], 0.2)],
            )
        })),
        ("bce_mean", Box::new(|r| {
            let n = r.random_range(2..8);
            // binary targets match the one-hot use and keep the gradient
            // away from cancellation, where truncation error would dominate
            let targets = Tensor::from_fn(&[n], |_| {
                if r.random_range(0.0..1.0) < 0.5 { 1.0 } else { 0.0 }
            })
            .with_requires_grad(true);
            (Op::BceMean, vec![uniform(r, &[n], 0.1, 0.9), targets])
        })),
        ("mse_mean", Box::new(|r| {
            let (m, n) = dims_for(r);
            (
                Op::MseMean,
                vec![uniform(r, &[m, n], -1.5, 1.5), uniform(r, &[m, n], -1.5, 1.5)],
            )
        })),
        ("clamp", Box::new(|r| {
            let (m, n) = dims_for(r);
            // keep every value at least one step away from the clamp knees
            let x = Tensor::from_fn(&[m, n], |_| {
                let v: f64 = r.random_range(-1.5..1.5);
                if v.abs() < 0.55 { v.signum() * 0.4 } else { v }
            })
            .with_requires_grad(true);
            (Op::Clamp { lo: -0.5, hi: 0.5 }, vec![x])
        })),
        ("mask_zero", Box::new(|r| {
            let (m, n) = dims_for(r);
            let axis = r.random_range(0..2);
            let dim = if axis == 0 { m } else { n };
            let indices: Vec<usize> = (0..dim).filter(|_| r.random_range(0.0..1.0) < 0.4).collect();
            (Op::MaskZero { axis, indices }, vec![uniform(r, &[m, n], -1.5, 1.5)])
        })),
        ("reshape", Box::new(|r| {
            let (m, n) = dims_for(r);
            (
                Op::Reshape { shape: vec![n * m] },
                vec![uniform(r, &[m, n], -1.5, 1.5)],
            )
        })),
        ("transpose", Box::new(|r| {
            let (m, n) = dims_for(r);
            let k = r.random_range(2..4);
            let perms: [[usize; 3]; 5] = [
                [1, 0, 2],
                [2, 0, 1],
                [1, 2, 0],
                [2, 1, 0],
                [0, 2, 1],
            ];
            let perm = perms[r.random_range(0..perms.len())].to_vec();
            (Op::Transpose { perm }, vec![uniform(r, &[m, n, k], -1.5, 1.5)])
        })),
    ];

    for (name, mut gen) in cases {
        let mut max_error = 0.0f64;
        for _ in 0..instances {
            let (op, inputs) = gen(&mut rng);
            let err = grad_check(&op, &inputs, step)?;
            max_error = max_error.max(err);
        }
        reports.push(CheckReport {
            name: name.to_string(),
            max_error,
            tolerance,
            instances,
        });
    }
    Ok(reports)
}

/// Composite head path (similarity -> temperature softmax -> existence head
/// -> BCE, plus the concept path) checked against finite differences.
pub fn head_suite(seed: u64, instances: usize) -> Result<Vec<CheckReport>, TensorError> {
    let tolerance = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error = 0.0f64;
    for _ in 0..instances {
        let dims = EmbeddingDims {
            target_vocab: rng.random_range(2..5),
            extended_slots: rng.random_range(1..4),
            variations: rng.random_range(1..4),
            channels: rng.random_range(3..7),
        };
        let t_len = rng.random_range(2..5);
        let weights = LossWeights {
            alpha: rng.random_range(0.5..6.0),
            beta: rng.random_range(0.5..12.0),
            tau: rng.random_range(0.08..0.6),
        };
        let label = rng.random_range(0..dims.target_vocab);
        let z = away_from_zero(&mut rng, &[t_len, dims.channels], 0.1);
        let table = away_from_zero(&mut rng, &dims.table_shape(), 0.1);
        let s_f = {
            let v = dims.target_vocab;
            Tensor::from_fn(&[v, v], |i| {
                if i / v == i % v {
                    1.0
                } else {
                    0.35
                }
            })
        };
        let err = grad_check_fn(&[z, table], 1e-4, |g, leaves| {
            let (z, e) = (&leaves[0], &leaves[1]);
            let out = head_forward(g, z, e, &dims, &weights, None)?;
            let target = g.constant(&one_hot(dims.target_vocab, label));
            let l_rec = recognition_loss(g, &out.q_hat, &target)?;
            let class_vecs = embedding_class_vectors(g, e, &dims)?;
            let s_e = concept_similarity_matrix(g, &class_vecs)?;
            let sf = g.constant(&s_f);
            let l_concept = concept_loss(g, &s_e, &sf)?;
            combined_loss(g, &l_rec, &l_concept, &weights)
        })?;
        max_error = max_error.max(err);
    }
    Ok(vec![CheckReport {
        name: "head_composite".into(),
        max_error,
        tolerance,
        instances,
    }])
}

/// Whole-model gradient check on a tiny configuration (two-node graphs,
/// T = 6, C <= 4), tolerance 1e-3.
pub fn end_to_end_suite(seed: u64, instances: usize) -> Result<Vec<CheckReport>, TensorError> {
    let tolerance = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiny_graph = || SkeletonGraph::new(2, &[(0, 1)], &[], &[(1, 0)]).expect("tiny graph");
    let graphs = ChannelGraphs {
        body: tiny_graph(),
        hand: tiny_graph(),
        mouth: tiny_graph(),
    };
    let config = ModelConfig {
        backbone: BackboneConfig {
            kind: BackboneKind::StGcn,
            channels: vec![3, 4],
            strides: vec![1, 2],
            window: 3,
            dilation: 1,
        },
        loss_mode: LossMode::Lcc,
        // moderate temperature: at tau = 0.1 the extended slots get
        // gradients of order e^-40, far below the relative-error floor,
        // and the comparison degenerates to noise over the floor
        loss: LossWeights {
            tau: 0.4,
            ..LossWeights::default()
        },
        extended_slots: 2,
        variations: 2,
        coord_dim: 2,
        sequence_length: 6,
        root_center: false,
        heads: HeadToggles::default(),
    };
    let glosses = vec!["a".to_string(), "b".to_string()];
    let model = SignModel::new(config, glosses, StreamKind::Joint, graphs, seed)
        .expect("tiny model builds");
    let s_f = Tensor::from_fn(&[2, 2], |i| if i % 3 == 0 { 1.0 } else { 0.3 });

    let mut max_error = 0.0f64;
    for _ in 0..instances {
        let mk = |rng: &mut ChaCha8Rng| Tensor::from_fn(&[6, 2, 2], |_| rng.random_range(-1.0..1.0));
        let sample = KeypointSample {
            sample_id: "gradcheck".into(),
            label: Some(1),
            fps: 25.0,
            channels: ChannelSet {
                body: mk(&mut rng),
                left_hand: mk(&mut rng),
                right_hand: mk(&mut rng),
                mouth: mk(&mut rng),
            },
        };
        // Check at a generic random point. The deterministic init puts exact
        // zeros into the biases, which leaves some relu inputs exactly on
        // their kink, where the subgradient and the symmetric difference
        // legitimately disagree.
        let inputs: Vec<Tensor> = model
            .params
            .iter()
            .map(|e| {
                Tensor::from_fn(e.tensor.shape(), |_| rng.random_range(-0.8..0.8))
                    .with_requires_grad(true)
            })
            .collect();
        let err = grad_check_fn(&inputs, 1e-4, |g, leaves| {
            let out = model.forward_bound(g, &sample, None, leaves)?;
            let sf = g.constant(&s_f);
            let (loss, _) = model.training_loss(g, &out, 1, Some(&sf))?;
            Ok(loss)
        })?;
        max_error = max_error.max(err);
    }
    Ok(vec![CheckReport {
        name: "end_to_end_tiny_model".into(),
        max_error,
        tolerance,
        instances,
    }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_catalog_op_passes_quick_gradcheck() {
        for report in ops_suite(3, 8).unwrap() {
            assert!(
                report.passed(),
                "{}: max error {} > {}",
                report.name,
                report.max_error,
                report.tolerance
            );
        }
    }

    #[test]
    fn head_composite_passes_quick_gradcheck() {
        for report in head_suite(4, 3).unwrap() {
            assert!(report.passed(), "{}: {}", report.name, report.max_error);
        }
    }

    #[test]
    fn end_to_end_passes_quick_gradcheck() {
        for report in end_to_end_suite(5, 1).unwrap() {
            assert!(report.passed(), "{}: {}", report.name, report.max_error);
        }
    }
}
