use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{generate_synthetic, SkeletonGraph, SyntheticSpec};
use crate::tensor::grad_check_fn;

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        kind: BackboneKind::StGcn,
        channels: vec![4, 6],
        strides: vec![1, 2],
        window: 3,
        dilation: 1,
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        backbone: tiny_backbone(),
        loss_mode: LossMode::Lcc,
        loss: LossWeights::default(),
        extended_slots: 2,
        variations: 2,
        coord_dim: 3,
        sequence_length: 8,
        root_center: true,
        heads: HeadToggles::default(),
    }
}

fn tiny_data() -> crate::data::SyntheticDataset {
    generate_synthetic(&SyntheticSpec {
        classes: 3,
        t_len: 8,
        signal_window: (3, 5),
        noise_scale: 0.2,
        concept_groups: None,
        train_per_class: 2,
        val_per_class: 1,
        test_per_class: 1,
        word_dim: 12,
        seed: 5,
    })
    .unwrap()
}

fn tiny_model(mode: LossMode) -> SignModel {
    let data = tiny_data();
    let config = ModelConfig {
        loss_mode: mode,
        ..tiny_config()
    };
    SignModel::new(
        config,
        data.glosses.clone(),
        StreamKind::Joint,
        ChannelGraphs::default_layout(),
        42,
    )
    .unwrap()
}

#[test]
fn strides_give_ceil_temporal_reduction() {
    let cfg = BackboneConfig {
        strides: vec![2, 2],
        channels: vec![4, 4],
        ..tiny_backbone()
    };
    assert_eq!(cfg.out_len(16), 4);
    assert_eq!(cfg.out_len(15), 4);
    assert_eq!(cfg.out_len(17), 5);
}

#[test]
fn constant_input_with_identity_weights_gives_constant_rows() {
    // one block, D=C=3, identity gcn weights, delta temporal kernel
    let cfg = BackboneConfig {
        kind: BackboneKind::StGcn,
        channels: vec![3],
        strides: vec![1],
        window: 3,
        dilation: 1,
    };
    let graphs = ChannelGraphs::default_layout();
    let mut g = Graph::new(0);
    let x = g.constant(&Tensor::full(&[6, 3, 17], 0.8));
    let eye = g.constant(&Tensor::from_fn(&[3, 3], |i| {
        if i / 3 == i % 3 {
            1.0
        } else {
            0.0
        }
    }));
    let mut delta = vec![0.0; 3 * 3 * 3];
    for c in 0..3 {
        delta[(3 + c) * 3 + c] = 1.0; // center tap only
    }
    let delta = g.constant(&Tensor::new(vec![3, 3, 3], delta).unwrap());
    let zeros = g.constant(&Tensor::zeros(&[3]));
    let z = backbone_forward(&mut g, &x, &cfg, &graphs.body.normalized_adjacency, |name| {
        match name {
            "block0.gcn_w" => eye.clone(),
            "block0.gcn_b" | "block0.tconv_b" => zeros.clone(),
            "block0.tconv_w" => delta.clone(),
            other => panic!("unexpected parameter {other}"),
        }
    })
    .unwrap();
    assert_eq!(z.shape(), &[6, 3]);
    let first = &z.values()[..3];
    for t in 1..6 {
        assert_eq!(&z.values()[t * 3..(t + 1) * 3], first, "row {t}");
    }
}

#[test]
fn fusion_examples() {
    let mut g = Graph::new(0);
    let l = g.leaf(&Tensor::from_fn(&[4, 3], |i| i as f64));
    let r = g.leaf(&Tensor::from_fn(&[4, 3], |i| i as f64));
    let m = g.leaf(&Tensor::from_fn(&[4, 3], |i| (i * 2) as f64));
    let p = g.leaf(&Tensor::from_fn(&[4, 3], |i| (i * 3) as f64));
    let w = g.leaf(&Tensor::zeros(&[9, 3]));
    let b = g.leaf(&Tensor::zeros(&[3]));
    let (z_hands, z_global) = fuse_channels(&mut g, &l, &r, &m, &p, &w, &b).unwrap();
    // left == right -> hands equals either
    assert_eq!(z_hands.values(), l.values());
    // zero projection weights -> zero global features regardless of input
    assert!(z_global.values().iter().all(|&v| v == 0.0));
    assert_eq!(z_global.shape(), &[4, 3]);

    let short = g.leaf(&Tensor::zeros(&[3, 3]));
    let err = fuse_channels(&mut g, &l, &r, &short, &p, &w, &b).unwrap_err();
    assert!(err.to_string().contains("fuse_channels"));
}

#[test]
fn hand_swap_leaves_fused_features_bitwise_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = Tensor::from_fn(&[4, 3], |_| rng.random_range(-1.0..1.0));
    let r = Tensor::from_fn(&[4, 3], |_| rng.random_range(-1.0..1.0));
    let m = Tensor::from_fn(&[4, 3], |_| rng.random_range(-1.0..1.0));
    let p = Tensor::from_fn(&[4, 3], |_| rng.random_range(-1.0..1.0));
    let w = Tensor::from_fn(&[9, 3], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::from_fn(&[3], |_| rng.random_range(-1.0..1.0));
    let run = |a: &Tensor, bq: &Tensor| {
        let mut g = Graph::new(0);
        let (al, bl) = (g.leaf(a), g.leaf(bq));
        let (ml, pl) = (g.leaf(&m), g.leaf(&p));
        let (wl, bl2) = (g.leaf(&w), g.leaf(&b));
        let (zh, zg) = fuse_channels(&mut g, &al, &bl, &ml, &pl, &wl, &bl2).unwrap();
        (zh.values().to_vec(), zg.values().to_vec())
    };
    let (h1, g1) = run(&l, &r);
    let (h2, g2) = run(&r, &l);
    for (a, b) in h1.iter().zip(&h2).chain(g1.iter().zip(&g2)) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn baseline_head_examples() {
    let mut g = Graph::new(0);
    // constant over time: pooled vector equals that row
    let z = g.leaf(&Tensor::from_fn(&[5, 4], |i| (i % 4) as f64));
    let w = g.leaf(&Tensor::zeros(&[4, 3]));
    let b = g.leaf(&Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
    let logits = baseline_forward(&mut g, &z, &w, &b).unwrap();
    assert_eq!(logits.shape(), &[3]);
    assert_eq!(logits.values(), &[0.5, -1.0, 2.0]);
}

#[test]
fn cross_entropy_matches_direct_evaluation() {
    let mut g = Graph::new(0);
    let logits = g.leaf(&Tensor::new(vec![3], vec![1.0, 0.0, -1.0]).unwrap());
    let loss = cross_entropy_loss(&mut g, &logits, 0).unwrap();
    let z: f64 = [1.0f64, 0.0, -1.0].iter().map(|v| v.exp()).sum();
    let direct = -(1.0f64.exp() / z).ln();
    assert!((loss.scalar_value() - direct).abs() < 1e-12);
}

#[test]
fn mouth_perturbation_does_not_touch_hand_or_pose_features() {
    let model = tiny_model(LossMode::Lcc);
    let data = tiny_data();
    let base = model.prepare(&data.train[0], None);
    let mut poked = base.clone();
    poked.channels.mouth = {
        let t = &base.channels.mouth;
        Tensor::from_fn(t.shape(), |i| t.values()[i] + if i == 7 { 0.5 } else { 0.0 })
    };
    let run = |s: &KeypointSample| {
        let mut g = Graph::new(0);
        let out = model.forward(&mut g, s, None).unwrap();
        (
            out.z_hands.values().to_vec(),
            out.z_pose.values().to_vec(),
            out.z_mouth.values().to_vec(),
            out.z_global.values().to_vec(),
        )
    };
    let (h1, p1, m1, g1) = run(&base);
    let (h2, p2, m2, g2) = run(&poked);
    assert_eq!(h1, h2, "hand features must not change");
    assert_eq!(p1, p2, "pose features must not change");
    assert_ne!(m1, m2, "mouth features must change");
    assert_ne!(g1, g2, "global features must change");
}

#[test]
fn lcc_and_ce_heads_share_the_backbone_contract() {
    let data = tiny_data();
    let lcc = tiny_model(LossMode::Lcc);
    let mut ce = tiny_model(LossMode::Ce);
    // move the backbone + fusion weights from the lcc model into the ce
    // model; both consume the identical z contract
    for name in [
        "fusion.w",
        "fusion.b",
    ] {
        let src = lcc.params.get(name).unwrap().clone();
        let idx = ce.params.position(name).unwrap();
        ce.params.entry_mut(idx).tensor = src;
    }
    for entry_idx in 0..lcc.params.len() {
        let entry = lcc.params.entry(entry_idx);
        if entry.name.starts_with("backbone.") {
            let idx = ce.params.position(&entry.name).unwrap();
            ce.params.entry_mut(idx).tensor = entry.tensor.clone();
        }
    }
    let s = lcc.prepare(&data.train[0], None);
    let mut g1 = Graph::new(0);
    let o1 = lcc.forward(&mut g1, &s, None).unwrap();
    let mut g2 = Graph::new(0);
    let o2 = ce.forward(&mut g2, &s, None).unwrap();
    assert_eq!(o1.z_global.values(), o2.z_global.values());
}

#[test]
fn overall_loss_sums_enabled_heads_only() {
    let data = tiny_data();
    let run = |heads: HeadToggles| {
        let config = ModelConfig {
            heads,
            ..tiny_config()
        };
        let model = SignModel::new(
            config,
            data.glosses.clone(),
            StreamKind::Joint,
            ChannelGraphs::default_layout(),
            42,
        )
        .unwrap();
        let s = model.prepare(&data.train[0], None);
        let mut g = Graph::new(0);
        let out = model.forward(&mut g, &s, None).unwrap();
        let s_f = g.constant(&Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.1 }));
        let (_, values) = model
            .training_loss(&mut g, &out, s.label.unwrap(), Some(&s_f))
            .unwrap();
        values
    };
    let all = run(HeadToggles::default());
    let no_mouth = run(HeadToggles {
        mouth: false,
        ..HeadToggles::default()
    });
    assert!(all.rec.mouth.is_some());
    assert!(no_mouth.rec.mouth.is_none());
    let w = LossWeights::default();
    let mouth_term = w.beta * all.rec.mouth.unwrap()
        + w.alpha * all.concept.as_ref().unwrap().mouth.unwrap();
    assert!(
        (all.total - no_mouth.total - mouth_term).abs() < 1e-9,
        "disabling the mouth head removes exactly its term: {} vs {}",
        all.total,
        no_mouth.total + mouth_term
    );
}

#[test]
fn prediction_is_argmax_with_low_tie_break() {
    assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    assert_eq!(argmax(&[0.5, 0.5]), 0);
}

#[test]
fn checkpoints_roundtrip_and_reject_vocab_mismatch() {
    let model = tiny_model(LossMode::Lcc);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt.json");
    model.save(&path).unwrap();
    let loaded = SignModel::load(&path).unwrap();
    assert_eq!(loaded.glosses, model.glosses);
    for i in 0..model.params.len() {
        assert_eq!(
            loaded.params.entry(i).tensor.values(),
            model.params.entry(i).tensor.values(),
            "param {}",
            model.params.entry(i).name
        );
    }
    let data = tiny_data();
    let s = model.prepare(&data.test[0], None);
    assert_eq!(model.scores(&s).unwrap(), loaded.scores(&s).unwrap());
}

#[test]
fn frame_mlp_backbone_satisfies_the_same_contract() {
    let data = tiny_data();
    let config = ModelConfig {
        backbone: BackboneConfig {
            kind: BackboneKind::FrameMlp,
            channels: vec![8, 6],
            strides: vec![1, 2],
            window: 1,
            dilation: 1,
        },
        ..tiny_config()
    };
    let model = SignModel::new(
        config,
        data.glosses.clone(),
        StreamKind::Joint,
        ChannelGraphs::default_layout(),
        42,
    )
    .unwrap();
    let s = model.prepare(&data.train[0], None);
    let mut g = Graph::new(0);
    let out = model.forward(&mut g, &s, None).unwrap();
    assert_eq!(out.z_global.shape(), &[4, 6]); // ceil(8 / 2) x C
    let scores = model.scores(&s).unwrap();
    assert_eq!(scores.len(), 3);
}

#[test]
fn end_to_end_gradients_match_finite_differences_on_tiny_config() {
    // tiny everything: N<=4 via a custom graph, T=6, C<=4
    let graphs = ChannelGraphs {
        body: SkeletonGraph::new(2, &[(0, 1)], &[], &[(1, 0)]).unwrap(),
        hand: SkeletonGraph::new(2, &[(0, 1)], &[], &[(1, 0)]).unwrap(),
        mouth: SkeletonGraph::new(2, &[(0, 1)], &[], &[(1, 0)]).unwrap(),
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
    let model = SignModel::new(config, glosses, StreamKind::Joint, graphs, 11).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mk = |rng: &mut ChaCha8Rng| Tensor::from_fn(&[6, 2, 2], |_| rng.random_range(-1.0..1.0));
    let sample = KeypointSample {
        sample_id: "t".into(),
        label: Some(1),
        fps: 25.0,
        channels: crate::data::ChannelSet {
            body: mk(&mut rng),
            left_hand: mk(&mut rng),
            right_hand: mk(&mut rng),
            mouth: mk(&mut rng),
        },
    };
    let s_f = Tensor::from_fn(&[2, 2], |i| if i % 3 == 0 { 1.0 } else { 0.3 });

    // random evaluation point: zero-initialised biases put relu inputs
    // exactly on their kink, where subgradient and central difference differ
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
        let s_f = g.constant(&s_f);
        let (loss, _) = model.training_loss(g, &out, 1, Some(&s_f))?;
        Ok(loss)
    })
    .unwrap();
    assert!(err <= 1e-3, "max relative error {err}");
}
