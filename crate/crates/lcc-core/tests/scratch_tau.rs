use lcc_core::data::*;
use lcc_core::head::*;
use lcc_core::model::*;
use lcc_core::train::*;

fn spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        classes: 10,
        t_len: 64,
        signal_window: (6, 10),
        noise_scale: 0.3,
        concept_groups: None,
        train_per_class: 12,
        val_per_class: 6,
        test_per_class: 6,
        word_dim: 48,
        seed,
    }
}

fn model_config(tau: f64) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            kind: BackboneKind::StGcn,
            channels: vec![8, 16],
            strides: vec![2, 2],
            window: 5,
            dilation: 1,
        },
        loss_mode: LossMode::Lcc,
        loss: LossWeights { alpha: 5.0, beta: 10.0, tau },
        extended_slots: 10,
        variations: 5,
        coord_dim: 3,
        sequence_length: 64,
        root_center: true,
        heads: HeadToggles::default(),
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 12,
        base_lr: 0.003,
        weight_decay: 1e-4,
        schedule: Schedule::WarmupCosine { warmup_epochs: 2 },
        seed,
        augment: Some(AugmentParams::default()),
        drop_mask: DropMaskSpec { enabled: true, p_channel: 0.1, p_temporal: 0.25 },
    }
}

#[test]
#[ignore]
fn tau_contrast() {
    for seed in [7u64, 8, 9] {
        let data = generate_synthetic(&spec(seed)).unwrap();
        let mut finals = Vec::new();
        for tau in [0.1, 0.5] {
            let model = SignModel::new(model_config(tau), data.glosses.clone(), StreamKind::Joint, ChannelGraphs::default_layout(), 42).unwrap();
            let r = fit(model, &data.train, &data.val, Some(&data.words), &train_config(1)).unwrap();
            let series: Vec<f64> = r.log.iter().map(|x| x.val_top1).collect();
            eprintln!("seed {seed} tau {tau}: {:?}", series.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
            finals.push(*series.last().unwrap());
        }
        eprintln!("seed {seed}: final tau0.1 {} vs tau0.5 {}", finals[0], finals[1]);
    }
}
