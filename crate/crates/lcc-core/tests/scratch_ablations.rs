use lcc_core::data::*;
use lcc_core::head::*;
use lcc_core::model::*;
use lcc_core::tensor::Graph;
use lcc_core::train::*;
use std::time::Instant;

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 10,
        t_len: 64,
        signal_window: (20, 40),
        noise_scale: 0.25,
        concept_groups: Some((0..5).map(|g| vec![2 * g, 2 * g + 1]).collect()),
        train_per_class: 40,
        val_per_class: 10,
        test_per_class: 10,
        word_dim: 48,
        seed: 7,
    }
}

fn model_config(mode: LossMode, tau: f64, alpha: f64) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            kind: BackboneKind::StGcn,
            channels: vec![8, 16],
            strides: vec![2, 2],
            window: 5,
            dilation: 1,
        },
        loss_mode: mode,
        loss: LossWeights { alpha, beta: 10.0, tau },
        extended_slots: 10,
        variations: 5,
        coord_dim: 3,
        sequence_length: 64,
        root_center: true,
        heads: HeadToggles::default(),
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        epochs: 20,
        base_lr: 0.003,
        weight_decay: 1e-4,
        schedule: Schedule::WarmupCosine { warmup_epochs: 3 },
        seed: 1,
        augment: Some(AugmentParams::default()),
        drop_mask: DropMaskSpec { enabled: true, p_channel: 0.1, p_temporal: 0.25 },
    }
}

fn mse_s_e_vs_s_f(model: &SignModel, words: &WordEmbeddingTable) -> f64 {
    let mut g = Graph::new(0);
    let table = g.constant(model.params.get("head.global.E").unwrap());
    let dims = model.embedding_dims();
    let vecs = embedding_class_vectors(&mut g, &table, &dims).unwrap();
    let s_e = concept_similarity_matrix(&mut g, &vecs).unwrap();
    let s_f = word_similarity_matrix(words).unwrap();
    let sf = g.constant(&s_f);
    concept_loss(&mut g, &s_e, &sf).unwrap().scalar_value()
}

#[test]
#[ignore]
fn ablations() {
    let data = generate_synthetic(&spec()).unwrap();
    let graphs = ChannelGraphs::default_layout;

    // CE baseline
    let t = Instant::now();
    let ce = SignModel::new(model_config(LossMode::Ce, 0.1, 5.0), data.glosses.clone(), StreamKind::Joint, graphs(), 42).unwrap();
    let ce_fit = fit(ce, &data.train, &data.val, None, &train_config()).unwrap();
    let m = evaluate(&ce_fit.model, &data.test).unwrap();
    eprintln!("CE: test top1 {:.3} top5 {:.3} in {:.0?} (val curve last: {:.3})", m.top1_instance, m.top5_instance, t.elapsed(), ce_fit.log.last().unwrap().val_top1);

    // alpha = 0 run (same seed) for the concept-alignment contrast
    let t = Instant::now();
    let a0 = SignModel::new(model_config(LossMode::Lcc, 0.1, 0.0), data.glosses.clone(), StreamKind::Joint, graphs(), 42).unwrap();
    let init_mse_a0 = mse_s_e_vs_s_f(&a0, &data.words);
    let a0_fit = fit(a0, &data.train, &data.val, Some(&data.words), &train_config()).unwrap();
    let a0_mse = mse_s_e_vs_s_f(&a0_fit.model, &data.words);
    eprintln!("alpha=0: init MSE {:.4} final MSE {:.4}, val_top1 {:.3}, {:.0?}", init_mse_a0, a0_mse, a0_fit.best_val_top1, t.elapsed());

    // alpha = 5 reference MSE (same seed)
    let t = Instant::now();
    let a5 = SignModel::new(model_config(LossMode::Lcc, 0.1, 5.0), data.glosses.clone(), StreamKind::Joint, graphs(), 42).unwrap();
    let init_mse_a5 = mse_s_e_vs_s_f(&a5, &data.words);
    let a5_fit = fit(a5, &data.train, &data.val, Some(&data.words), &train_config()).unwrap();
    let a5_mse = mse_s_e_vs_s_f(&a5_fit.model, &data.words);
    eprintln!("alpha=5: init MSE {:.4} final MSE {:.4}, val_top1 {:.3}, {:.0?}", init_mse_a5, a5_mse, a5_fit.best_val_top1, t.elapsed());
    eprintln!("ratio a5/a0: {:.4}", a5_mse / a0_mse);

    // within vs cross group S_E for the alpha=5 model
    {
        let mut g = Graph::new(0);
        let table = g.constant(a5_fit.model.params.get("head.global.E").unwrap());
        let dims = a5_fit.model.embedding_dims();
        let vecs = embedding_class_vectors(&mut g, &table, &dims).unwrap();
        let s_e = concept_similarity_matrix(&mut g, &vecs).unwrap();
        let (mut within, mut cross) = (Vec::new(), Vec::new());
        for i in 0..10 {
            for j in 0..10 {
                if i == j { continue; }
                if i / 2 == j / 2 { within.push(s_e.at(&[i, j])); } else { cross.push(s_e.at(&[i, j])); }
            }
        }
        let wm: f64 = within.iter().sum::<f64>() / within.len() as f64;
        let cm: f64 = cross.iter().sum::<f64>() / cross.len() as f64;
        eprintln!("S_E within-group mean {:.3} cross-group mean {:.3}", wm, cm);
    }

    // tau = 0.5 run
    let t = Instant::now();
    let t5 = SignModel::new(model_config(LossMode::Lcc, 0.5, 5.0), data.glosses.clone(), StreamKind::Joint, graphs(), 42).unwrap();
    let t5_fit = fit(t5, &data.train, &data.val, Some(&data.words), &train_config()).unwrap();
    eprintln!("tau=0.5: val per epoch: {:?}", t5_fit.log.iter().map(|r| (r.val_top1 * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    eprintln!("tau=0.5: best val {:.3}, {:.0?}", t5_fit.best_val_top1, t.elapsed());
}
