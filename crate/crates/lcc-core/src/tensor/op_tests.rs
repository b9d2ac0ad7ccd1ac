use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], values: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), values.to_vec()).unwrap()
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5)).with_requires_grad(true)
}

#[test]
fn softmax_matches_direct_evaluation() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[2], &[0.1, 0.0]));
    let y = g.softmax(&x, 0, 0.1).unwrap();
    // softmax of [1, 0]
    let e = std::f64::consts::E;
    assert!((y.values()[0] - e / (1.0 + e)).abs() < 1e-15);
    assert!((y.values()[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
    assert!((y.values()[0] - 0.7311).abs() < 1e-4);
}

#[test]
fn cosine_of_parallel_vectors_is_one() {
    let mut g = Graph::new(0);
    let a = g.leaf(&t(&[2], &[1.0, 2.0]));
    let b = g.leaf(&t(&[2], &[2.0, 4.0]));
    let c = g.cosine_similarity(&a, &b, 0).unwrap();
    assert!(c.shape().is_empty());
    assert!((c.scalar_value() - 1.0).abs() < 1e-15);
}

#[test]
fn cosine_zero_norm_slice_gives_zero_and_zero_gradient() {
    let mut g = Graph::new(0);
    let a = g.leaf(&t(&[2, 2], &[0.0, 0.0, 1.0, 0.0]).with_requires_grad(true));
    let b = g.leaf(&t(&[1, 2], &[3.0, 4.0]).with_requires_grad(true));
    let c = g.cosine_similarity(&a, &b, 1).unwrap();
    assert_eq!(c.values()[0], 0.0);
    assert!((c.values()[1] - 0.6).abs() < 1e-15);
    let flat = g.reshape(&c, &[2]).unwrap();
    let loss = g.sum(&flat, 0).unwrap();
    let grads = g.backward(loss.node().unwrap()).unwrap();
    let da = grads.get(a.node().unwrap()).unwrap();
    assert_eq!(&da.values()[..2], &[0.0, 0.0]);
}

#[test]
fn cosine_self_similarity_diagonal_is_exactly_one() {
    let mut g = Graph::new(7);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = g.leaf(&randn(&mut rng, &[4, 3]));
    let s = g.cosine_similarity(&x, &x, 1).unwrap();
    for i in 0..4 {
        assert_eq!(s.at(&[i, i]), 1.0);
        for j in 0..4 {
            assert_eq!(s.at(&[i, j]), s.at(&[j, i]), "symmetry at ({i},{j})");
            assert!(s.at(&[i, j]).abs() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn mean_reduces_named_axis() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[2, 2], &[1.0, 3.0, 3.0, 5.0]));
    let m = g.mean(&x, 0).unwrap();
    assert_eq!(m.shape(), &[2]);
    assert_eq!(m.values(), &[2.0, 4.0]);
}

#[test]
fn backward_of_mean_is_one_over_n() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[4], &[1.0, 2.0, 3.0, 4.0]).with_requires_grad(true));
    let m = g.mean(&x, 0).unwrap();
    let grads = g.backward(m.node().unwrap()).unwrap();
    let dx = grads.get(x.node().unwrap()).unwrap();
    assert_eq!(dx.values(), &[0.25; 4]);
}

#[test]
fn backward_of_sum_of_squares_is_two_x() {
    let mut g = Graph::new(0);
    let x = g.leaf(&Tensor::scalar(3.0).with_requires_grad(true));
    let x2 = g.mul(&x, &x).unwrap();
    let loss = g.reshape(&x2, &[]).unwrap();
    let grads = g.backward(loss.node().unwrap()).unwrap();
    assert_eq!(grads.get(x.node().unwrap()).unwrap().values(), &[6.0]);
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
    let unused = g.leaf(&t(&[3], &[1.0, 1.0, 1.0]).with_requires_grad(true));
    let loss = g.mean(&x, 0).unwrap();
    let grads = g.backward(loss.node().unwrap()).unwrap();
    assert_eq!(
        grads.get(unused.node().unwrap()).unwrap().values(),
        &[0.0, 0.0, 0.0]
    );
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
    let err = g.backward(x.node().unwrap()).unwrap_err();
    assert!(matches!(err, TensorError::NonScalarLoss { .. }));
}

#[test]
fn shape_mismatch_names_the_op() {
    let mut g = Graph::new(0);
    let a = g.leaf(&t(&[2, 3], &[0.0; 6]));
    let b = g.leaf(&t(&[2, 3], &[0.0; 6]));
    let err = g.matmul(&a, &b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul"), "message: {msg}");
    assert!(msg.contains('3') && msg.contains('2'), "message: {msg}");
}

#[test]
fn matmul_known_product() {
    let mut g = Graph::new(0);
    let a = g.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.leaf(&t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let c = g.matmul(&a, &b).unwrap();
    assert_eq!(c.values(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn conv1d_output_length_is_ceil_t_over_stride() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new(0);
    let x = g.leaf(&randn(&mut rng, &[16, 3]));
    let w = g.leaf(&randn(&mut rng, &[5, 3, 4]));
    let y = g.conv1d_temporal(&x, &w, None, 2, 1, 5).unwrap();
    assert_eq!(y.shape(), &[8, 4]);
    let x2 = g.leaf(&randn(&mut rng, &[2, 15, 3]));
    let y2 = g.conv1d_temporal(&x2, &w, None, 4, 1, 5).unwrap();
    assert_eq!(y2.shape(), &[2, 4, 4]);
}

#[test]
fn conv1d_center_tap_identity_passes_input_through() {
    // delta kernel: only the center tap copies channel i to channel i
    let mut w_vals = vec![0.0; 5 * 2 * 2];
    for i in 0..2 {
        w_vals[(2 * 2 + i) * 2 + i] = 1.0;
    }
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[4, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
    let w = g.leaf(&t(&[5, 2, 2], &w_vals));
    let y = g.conv1d_temporal(&x, &w, None, 1, 1, 5).unwrap();
    assert_eq!(y.values(), x.values());
}

#[test]
fn concat_then_backward_splits_gradient() {
    let mut g = Graph::new(0);
    let a = g.leaf(&t(&[2, 1], &[1.0, 2.0]).with_requires_grad(true));
    let b = g.leaf(&t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]).with_requires_grad(true));
    let c = g.concat(&[&a, &b], 1).unwrap();
    assert_eq!(c.shape(), &[2, 3]);
    assert_eq!(c.values(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let flat = g.reshape(&c, &[6]).unwrap();
    let w = g.constant(&t(&[6], &[1.0, 10.0, 100.0, 1000.0, 10000.0, 100000.0]));
    let wc = g.mul(&flat, &w).unwrap();
    let loss = g.sum(&wc, 0).unwrap();
    let grads = g.backward(loss.node().unwrap()).unwrap();
    assert_eq!(grads.get(a.node().unwrap()).unwrap().values(), &[1.0, 1000.0]);
    assert_eq!(
        grads.get(b.node().unwrap()).unwrap().values(),
        &[10.0, 100.0, 10000.0, 100000.0]
    );
}

#[test]
fn max_tie_routes_gradient_to_lowest_index() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[3], &[2.0, 2.0, 1.0]).with_requires_grad(true));
    let m = g.max(&x, 0).unwrap();
    assert_eq!(m.scalar_value(), 2.0);
    let grads = g.backward(m.node().unwrap()).unwrap();
    assert_eq!(grads.get(x.node().unwrap()).unwrap().values(), &[1.0, 0.0, 0.0]);
}

#[test]
fn mask_zero_clears_whole_slices() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_requires_grad(true));
    let y = g.mask_zero(&x, 1, &[1]).unwrap();
    assert_eq!(y.values(), &[1.0, 0.0, 3.0, 4.0, 0.0, 6.0]);
    let flat = g.reshape(&y, &[6]).unwrap();
    let s = g.sum(&flat, 0).unwrap();
    let grads = g.backward(s.node().unwrap()).unwrap();
    assert_eq!(
        grads.get(x.node().unwrap()).unwrap().values(),
        &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]
    );
}

#[test]
fn div_and_add_support_scalar_and_row_broadcast() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[2, 2], &[2.0, 4.0, 6.0, 8.0]));
    let row = g.leaf(&t(&[2], &[2.0, 4.0]));
    let s = g.leaf(&Tensor::scalar(2.0));
    let d = g.div(&x, &row).unwrap();
    assert_eq!(d.values(), &[1.0, 1.0, 3.0, 2.0]);
    let d2 = g.div(&x, &s).unwrap();
    assert_eq!(d2.values(), &[1.0, 2.0, 3.0, 4.0]);
    let a = g.add(&x, &row).unwrap();
    assert_eq!(a.values(), &[4.0, 8.0, 8.0, 12.0]);
}

#[test]
fn bce_of_uniform_prediction_is_ln_two() {
    let mut g = Graph::new(0);
    let p = g.leaf(&t(&[2], &[0.5, 0.5]));
    let y = g.leaf(&t(&[2], &[1.0, 0.0]));
    let loss = g.bce_mean(&p, &y).unwrap();
    assert!((loss.scalar_value() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn mse_of_ones_vs_identity_matrix() {
    let mut g = Graph::new(0);
    let a = g.leaf(&Tensor::full(&[2, 2], 1.0));
    let b = g.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let loss = g.mse_mean(&a, &b).unwrap();
    assert_eq!(loss.scalar_value(), 0.5);
}

#[test]
fn transpose_moves_axes() {
    let mut g = Graph::new(0);
    let x = g.leaf(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let y = g.transpose(&x, &[1, 0]).unwrap();
    assert_eq!(y.shape(), &[3, 2]);
    assert_eq!(y.values(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    let z = g.leaf(&Tensor::from_fn(&[2, 3, 4], |i| i as f64));
    let zt = g.transpose(&z, &[2, 0, 1]).unwrap();
    assert_eq!(zt.shape(), &[4, 2, 3]);
    assert_eq!(zt.at(&[1, 0, 2]), z.at(&[0, 2, 1]));
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new(42);
        let x = g.leaf(&randn(&mut rng, &[3, 4]));
        let w = g.leaf(&randn(&mut rng, &[4, 2]));
        let h = g.matmul(&x, &w).unwrap();
        let h = g.relu(&h).unwrap();
        let s = g.softmax(&h, 1, 0.5).unwrap();
        let flat = g.reshape(&s, &[6]).unwrap();
        let loss = g.mean(&flat, 0).unwrap();
        let grads = g.backward(loss.node().unwrap()).unwrap();
        (
            loss.scalar_value(),
            grads.get(x.node().unwrap()).unwrap().values().to_vec(),
        )
    };
    let (l1, g1) = build();
    let (l2, g2) = build();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1.len(), g2.len());
    for (a, b) in g1.iter().zip(g2.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn grad_check_elementwise_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = randn(&mut rng, &[3, 3]);
    let b = randn(&mut rng, &[3, 3]);
    let err = grad_check(&Op::MulElem, &[a, b], 1e-3).unwrap();
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn grad_check_softmax_low_temperature() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = randn(&mut rng, &[8]);
    let err = grad_check(
        &Op::Softmax {
            axis: 0,
            temperature: 0.1,
        },
        &[x],
        1e-4,
    )
    .unwrap();
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn grad_check_scale_by_zero_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = randn(&mut rng, &[5]);
    let err = grad_check(&Op::Scale { factor: 0.0 }, &[x], 1e-3).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_conv1d_with_bias_and_stride() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = randn(&mut rng, &[2, 7, 3]);
    let w = randn(&mut rng, &[3, 3, 4]);
    let b = randn(&mut rng, &[4]);
    let op = Op::Conv1dTemporal {
        stride: 2,
        dilation: 1,
        window: 3,
    };
    let err = grad_check(&op, &[x, w, b], 1e-3).unwrap();
    assert!(err <= 1e-4, "max relative error {err}");
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in proptest::collection::vec(-10.0f64..10.0, 2..24), temp in 0.05f64..2.0) {
        let n = values.len();
        let mut g = Graph::new(0);
        let x = g.leaf(&Tensor::new(vec![n], values).unwrap());
        let s = g.softmax(&x, 0, temp).unwrap();
        let total: f64 = s.values().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(s.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cosine_stays_in_unit_interval(a in proptest::collection::vec(-5.0f64..5.0, 6), b in proptest::collection::vec(-5.0f64..5.0, 6)) {
        let mut g = Graph::new(0);
        let x = g.leaf(&Tensor::new(vec![2, 3], a).unwrap());
        let y = g.leaf(&Tensor::new(vec![2, 3], b).unwrap());
        let c = g.cosine_similarity(&x, &y, 1).unwrap();
        for &v in c.values() {
            prop_assert!(v.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn reduction_shapes_drop_exactly_one_axis(d0 in 1usize..5, d1 in 1usize..5, d2 in 1usize..5, axis in 0usize..3) {
        let shape = vec![d0, d1, d2];
        let mut g = Graph::new(0);
        let x = g.leaf(&Tensor::from_fn(&shape, |i| i as f64));
        for (out, reducer) in [
            g.mean(&x, axis).unwrap(),
            g.sum(&x, axis).unwrap(),
            g.max(&x, axis).unwrap(),
        ]
        .into_iter()
        .zip(["mean", "sum", "max"])
        {
            let mut want = shape.clone();
            want.remove(axis);
            prop_assert_eq!(out.shape(), want.as_slice(), "{}", reducer);
        }
    }

    #[test]
    fn gradient_shape_matches_parameter_shape(rows in 1usize..4, cols in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64((rows * 10 + cols) as u64);
        let mut g = Graph::new(0);
        let x = g.leaf(&randn(&mut rng, &[rows, cols]));
        let w = g.leaf(&randn(&mut rng, &[cols, 2]));
        let y = g.matmul(&x, &w).unwrap();
        let flat = g.reshape(&y, &[rows * 2]).unwrap();
        let loss = g.mean(&flat, 0).unwrap();
        let grads = g.backward(loss.node().unwrap()).unwrap();
        prop_assert_eq!(grads.get(x.node().unwrap()).unwrap().shape(), x.shape());
        prop_assert_eq!(grads.get(w.node().unwrap()).unwrap().shape(), w.shape());
    }
}
