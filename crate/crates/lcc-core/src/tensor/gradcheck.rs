//! Central finite-difference verification of reverse-mode gradients.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Op, Tensor, TensorError};

const DENOM_FLOOR: f64 = 1e-8;
const WEIGHT_SEED: u64 = 0x1cc0_57a7;

/// Compare analytic gradients of a scalar-valued graph function against
/// central differences `(f(x+h) - f(x-h)) / 2h` for every element of every
/// `requires_grad` input. Returns the maximum relative error, with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// The inputs are registered as graph leaves (in order) before `f` runs; `f`
/// receives the registered leaf tensors and must deterministically build a
/// scalar loss from them, since it is re-evaluated on perturbed copies.
pub fn grad_check_fn<F>(inputs: &[Tensor], step: f64, f: F) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Tensor]) -> Result<Tensor, TensorError>,
{
    assert!(step > 0.0, "finite-difference step must be positive");

    let run = |xs: &[Tensor]| -> Result<(Graph, Tensor), TensorError> {
        let mut g = Graph::new(0);
        let leaves: Vec<Tensor> = xs.iter().map(|t| g.leaf(t)).collect();
        let loss = f(&mut g, &leaves)?;
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        Ok((g, loss))
    };

    let (graph, loss) = run(inputs)?;
    let grads = graph.backward(loss.node().ok_or(TensorError::Detached)?)?;

    let mut max_err = 0.0f64;
    for (slot, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = grads
            .get(slot)
            .expect("requires_grad leaf has a gradient entry");
        for e in 0..input.numel() {
            let x = input.values()[e];
            let mut plus: Vec<Tensor> = inputs.to_vec();
            plus[slot] = input.with_value_at(e, x + step);
            let mut minus: Vec<Tensor> = inputs.to_vec();
            minus[slot] = input.with_value_at(e, x - step);
            let numeric = (run(&plus)?.1.scalar_value() - run(&minus)?.1.scalar_value())
                / (2.0 * step);
            let a = analytic.values()[e];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            max_err = max_err.max((a - numeric).abs() / denom);
        }
    }
    Ok(max_err)
}

/// Gradient-check a single catalog op. The op output is contracted to a
/// scalar through a fixed random weighting so every output element
/// participates in the loss.
pub fn grad_check(op: &Op, inputs: &[Tensor], step: f64) -> Result<f64, TensorError> {
    let probe = {
        let mut g = Graph::new(0);
        let leaves: Vec<Tensor> = inputs.iter().map(|t| g.leaf(t)).collect();
        let refs: Vec<&Tensor> = leaves.iter().collect();
        g.forward(op.clone(), &refs)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(WEIGHT_SEED);
    let weights = Tensor::from_fn(&[probe.numel()], |_| rng.random_range(0.25..1.75));

    let op = op.clone();
    grad_check_fn(inputs, step, move |g, leaves| {
        let refs: Vec<&Tensor> = leaves.iter().collect();
        let out = g.forward(op.clone(), &refs)?;
        let n = out.numel();
        let flat = g.reshape(&out, &[n])?;
        let w = g.constant(&weights);
        let weighted = g.mul(&flat, &w)?;
        g.sum(&weighted, 0)
    })
}
