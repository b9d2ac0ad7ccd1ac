use super::*;
use crate::data::{generate_synthetic, ChannelGraphs, StreamKind, SyntheticSpec};
use crate::head::LossWeights;
use crate::model::{BackboneConfig, BackboneKind, HeadToggles, ModelConfig};

fn scalar_params(value: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::scalar(value), false).unwrap();
    p
}

#[test]
fn adam_with_zero_gradient_only_decays() {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::scalar(2.0), true).unwrap();
    let mut state = OptimizerState::new(&p);
    adam_step(&mut p, &[vec![0.0]], &mut state, 0.1, 0.01);
    // zero moments, zero update; only the decoupled decay term moves w
    let expected = 2.0 - 0.1 * 0.01 * 2.0;
    assert!((p.get("w").unwrap().scalar_value() - expected).abs() < 1e-15);
}

#[test]
fn first_adam_step_moves_by_lr_times_sign() {
    let mut p = scalar_params(0.0);
    let mut state = OptimizerState::new(&p);
    adam_step(&mut p, &[vec![0.5]], &mut state, 0.001, 0.0);
    let got = p.get("w").unwrap().scalar_value();
    assert!((got + 0.001).abs() < 1e-8, "got {got}");
}

#[test]
fn step_counter_increments_once_per_call() {
    let mut p = scalar_params(0.0);
    let mut state = OptimizerState::new(&p);
    for expect in 1..=3 {
        adam_step(&mut p, &[vec![0.1]], &mut state, 0.001, 0.0);
        assert_eq!(state.step, expect);
    }
}

#[test]
fn warmup_is_linear_then_cosine_decays_to_near_zero() {
    let config = TrainConfig {
        epochs: 100,
        base_lr: 0.0012,
        schedule: Schedule::WarmupCosine { warmup_epochs: 10 },
        ..TrainConfig::default()
    };
    assert!((lr_at(&config, 5) - 0.0006).abs() < 1e-15);
    assert!((lr_at(&config, 10) - 0.0012).abs() < 1e-15);
    let tail = lr_at(&config, 99);
    assert!(tail > 0.0 && tail < 0.0012 * 0.01, "tail lr {tail}");
}

#[test]
fn multistep_applies_factor_per_passed_milestone() {
    let config = TrainConfig {
        epochs: 25,
        base_lr: 0.0012,
        schedule: Schedule::Multistep {
            milestones: vec![10, 20],
            factor: 0.1,
        },
        ..TrainConfig::default()
    };
    assert!((lr_at(&config, 5) - 0.0012).abs() < 1e-18);
    assert!((lr_at(&config, 15) - 0.00012).abs() < 1e-18);
    assert!((lr_at(&config, 20) - 0.000012).abs() < 1e-18);
}

#[test]
fn topk_metrics_match_hand_counts() {
    // predictions [0, 1, 1] vs labels [0, 1, 0]
    let scores = vec![
        vec![0.8, 0.2],
        vec![0.3, 0.7],
        vec![0.1, 0.9],
    ];
    let labels = vec![0, 1, 0];
    let (per_k, counts) = topk_metrics(&scores, &labels, 2, &[1]).unwrap();
    assert!((per_k[0].instance - 2.0 / 3.0).abs() < 1e-15);
    assert!((per_k[0].class_mean - 0.75).abs() < 1e-15);
    assert_eq!(counts, vec![2, 1]);
}

#[test]
fn exhaustive_k_gives_perfect_metrics() {
    let scores = vec![vec![0.1, 0.5, 0.4], vec![0.9, 0.05, 0.05]];
    let labels = vec![2, 1];
    let (per_k, _) = topk_metrics(&scores, &labels, 3, &[3]).unwrap();
    assert_eq!(per_k[0].instance, 1.0);
    assert_eq!(per_k[0].class_mean, 1.0);
}

#[test]
fn top1_never_exceeds_top5() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let v = rng.random_range(6..12);
        let n = rng.random_range(1..30);
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..v).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
        let (per_k, _) = topk_metrics(&scores, &labels, v, &[1, 5]).unwrap();
        assert!(per_k[0].instance <= per_k[1].instance);
        assert!(per_k[0].class_mean <= per_k[1].class_mean);
    }
}

#[test]
fn ensemble_examples() {
    let a = vec![0.6, 0.4];
    let b = vec![0.2, 0.8];
    let mean = ensemble_streams(&[a.clone(), b], None).unwrap();
    assert!((mean[0] - 0.4).abs() < 1e-15);
    assert!((mean[1] - 0.6).abs() < 1e-15);

    let single = ensemble_streams(&[a.clone()], None).unwrap();
    assert_eq!(single, a);

    let same = ensemble_streams(&[a.clone(), a.clone()], None).unwrap();
    for (x, y) in same.iter().zip(&a) {
        assert!((x - y).abs() < 1e-15);
    }

    let err = ensemble_streams(&[vec![0.1], vec![0.1, 0.2]], None).unwrap_err();
    assert!(err.to_string().contains("mismatched"));
}

fn quick_setup() -> (SignModel, crate::data::SyntheticDataset) {
    let data = generate_synthetic(&SyntheticSpec {
        classes: 2,
        t_len: 8,
        signal_window: (3, 5),
        noise_scale: 0.2,
        concept_groups: None,
        train_per_class: 2,
        val_per_class: 1,
        test_per_class: 1,
        word_dim: 12,
        seed: 4,
    })
    .unwrap();
    let config = ModelConfig {
        backbone: BackboneConfig {
            kind: BackboneKind::StGcn,
            channels: vec![4, 6],
            strides: vec![1, 2],
            window: 3,
            dilation: 1,
        },
        loss_mode: crate::model::LossMode::Lcc,
        loss: LossWeights::default(),
        extended_slots: 2,
        variations: 2,
        coord_dim: 3,
        sequence_length: 8,
        root_center: true,
        heads: HeadToggles::default(),
    };
    let model = SignModel::new(
        config,
        data.glosses.clone(),
        StreamKind::Joint,
        ChannelGraphs::default_layout(),
        7,
    )
    .unwrap();
    (model, data)
}

fn quick_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        epochs: 2,
        base_lr: 0.002,
        weight_decay: 1e-4,
        schedule: Schedule::Multistep {
            milestones: vec![],
            factor: 0.1,
        },
        seed: 3,
        augment: Some(AugmentParams::default()),
        drop_mask: DropMaskSpec {
            enabled: true,
            p_channel: 0.1,
            p_temporal: 0.1,
        },
    }
}

#[test]
fn fit_takes_one_step_per_batch_and_logs_every_epoch() {
    let (model, data) = quick_setup();
    let result = fit(
        model,
        &data.train,
        &data.val,
        Some(&data.words),
        &quick_train_config(),
    )
    .unwrap();
    // 4 samples, batch 2 -> 2 steps per epoch, 2 epochs
    assert_eq!(result.optimizer_steps, 4);
    assert_eq!(result.log.len(), 2);
    let best_from_log = result
        .log
        .iter()
        .map(|r| r.val_top1)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(result.best_val_top1, best_from_log);
    assert!(result.log.iter().all(|r| r.loss_total.is_finite()));
    assert!(result.log[0].loss_concept.is_some());
}

#[test]
fn fit_is_bitwise_deterministic_under_a_fixed_seed() {
    let run = || {
        let (model, data) = quick_setup();
        let result = fit(
            model,
            &data.train,
            &data.val,
            Some(&data.words),
            &quick_train_config(),
        )
        .unwrap();
        let log_json: Vec<String> = result
            .log
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        let params: Vec<Vec<u64>> = result
            .model
            .params
            .iter()
            .map(|e| e.tensor.values().iter().map(|v| v.to_bits()).collect())
            .collect();
        (log_json, params)
    };
    let (log1, p1) = run();
    let (log2, p2) = run();
    assert_eq!(log1, log2);
    assert_eq!(p1, p2);
}

#[test]
fn embedding_tables_are_excluded_from_weight_decay() {
    let (model, _) = quick_setup();
    for entry in model.params.iter() {
        if entry.name.starts_with("head.") {
            assert!(!entry.decay, "{} must not decay", entry.name);
        }
    }
}

#[test]
fn empty_dataset_evaluation_is_rejected() {
    let (model, _) = quick_setup();
    let err = evaluate(&model, &[]).unwrap_err();
    assert!(err.to_string().contains("empty"));
}
