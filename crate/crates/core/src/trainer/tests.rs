use super::*;
use crate::grapher::ModelConfig;
use crate::model::predict;
use crate::prompts::PromptConfig;

fn tiny_model() -> ModelConfig {
    ModelConfig { image_h: 8, image_w: 8, channels: 3, patch_size: 4, d: 8, d_ff: 16, blocks: 2, k: 2, ..ModelConfig::default() }
}

fn tiny_data(n_train: usize, n_val: usize, seed: u64) -> SplitData {
    let spec = SyntheticSpec { image_h: 8, image_w: 8, n_train, n_val, min_cycles: 1.0, max_cycles: 2.0, noise: 0.3, ..SyntheticSpec::default() };
    synthetic(&spec, seed)
}

fn setup(seed: u64) -> (BackboneParams, PromptParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bb = BackboneParams::init(tiny_model(), &mut rng).unwrap();
    let p = PromptParams::init(PromptConfig { m: 2, r: 2, ..PromptConfig::default() }, 8, 2, &mut rng).unwrap();
    (bb, p)
}

#[test]
fn adamw_first_step_matches_scalar_oracle() {
    // loss θ², θ₀ = 1, lr 0.1, weight decay 0.05
    let (lr, wd, eps) = (0.1, 0.05, 1e-8);
    let g = 2.0;
    let m = 0.1 * g / (1.0 - 0.9);
    let v = 0.001 * g * g / (1.0 - 0.999);
    let want = 1.0 * (1.0 - lr * wd) - lr * m / (f64::sqrt(v) + eps);

    let mut theta = Tensor::new([1], vec![1.0]).unwrap();
    let mut opt = AdamW::new(wd);
    opt.step(&mut [&mut theta], &[vec![g]], lr);
    assert_eq!(theta.data()[0], want);
    assert!((1.0 - theta.data()[0] - lr).abs() < lr * wd + 1e-6);
}

#[test]
fn zero_lr_leaves_everything_unchanged() {
    let (bb, mut p) = setup(1);
    let data = tiny_data(4, 0, 1);
    let mut head = init_head(8, 2);
    head.data_mut()[0] = 0.3;
    let (p0, h0) = (p.clone(), head.clone());
    let mut opt = AdamW::new(0.05);
    let imgs = BatchInput::Images(data.train.images.iter().collect());
    train_step(&imgs, &data.train.labels, &bb, Some(&mut p), &mut head, &mut opt, 0.0, None).unwrap();
    assert_eq!(p, p0);
    assert_eq!(head, h0);
}

#[test]
fn backbone_is_untouched_by_training() {
    let (bb, mut p) = setup(2);
    let before = bb.checksum();
    let snapshot = bb.clone();
    let data = tiny_data(4, 0, 2);
    let mut head = init_head(8, 2);
    let mut opt = AdamW::new(0.05);
    for _ in 0..10 {
        let imgs = BatchInput::Images(data.train.images.iter().collect());
        train_step(&imgs, &data.train.labels, &bb, Some(&mut p), &mut head, &mut opt, 1e-2, None).unwrap();
    }
    assert_eq!(bb.checksum(), before);
    assert_eq!(bb, snapshot);
}

#[test]
fn unfrozen_backbone_is_refused() {
    let (mut bb, mut p) = setup(3);
    bb.frozen = false;
    let data = tiny_data(2, 0, 3);
    let imgs = BatchInput::Images(data.train.images.iter().collect());
    let err = train_step(&imgs, &data.train.labels, &bb, Some(&mut p), &mut init_head(8, 2), &mut AdamW::new(0.0), 1e-3, None);
    assert!(matches!(err, Err(Error::Config { .. })));
}

#[test]
fn non_finite_loss_names_the_tensor() {
    let (bb, mut p) = setup(4);
    p.blocks[1].p_e.data_mut()[3] = f64::NAN;
    let data = tiny_data(2, 0, 4);
    let imgs = BatchInput::Images(data.train.images.iter().collect());
    let err = train_step(&imgs, &data.train.labels, &bb, Some(&mut p), &mut init_head(8, 2), &mut AdamW::new(0.0), 0.5, None)
        .unwrap_err();
    match err {
        Error::NonFiniteLoss { step, lr, tensor } => {
            assert_eq!((step, lr), (1, 0.5));
            assert_eq!(tensor, "block1.p_e");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn evaluate_cases() {
    let (bb, _) = setup(5);
    let empty = Dataset { images: vec![], labels: vec![], classes: 2 };
    assert!(evaluate(&empty, &bb, None, &init_head(8, 2)).is_err());

    // memorise four samples with a probe
    let data = tiny_data(4, 0, 5);
    let mut head = init_head(8, 2);
    let cfg = TrainConfig { lr: 0.5, epochs: 200, batch_size: 4, weight_decay: 0.0, ..TrainConfig::default() };
    let out = fit(&bb, None, &mut head, &data, &cfg, |_| Ok(())).unwrap();
    assert_eq!(out.metrics.last().unwrap().train_acc, 1.0);
    assert_eq!(evaluate(&data.train, &bb, None, &head).unwrap(), 1.0);

    // adversarial labels
    let preds: Vec<usize> = data.train.images.iter().map(|im| predict(im, &bb, None, &head).unwrap()).collect();
    let flipped = Dataset { labels: preds.iter().map(|p| 1 - p).collect(), ..data.train.clone() };
    assert_eq!(evaluate(&flipped, &bb, None, &head).unwrap(), 0.0);
}

#[test]
fn random_head_is_near_chance() {
    let (bb, _) = setup(6);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let n = 400;
    let head = Tensor::randn([8, 10], 1.0, &mut rng);
    let images: Vec<Tensor> = (0..n).map(|_| Tensor::randn([8, 8, 3], 1.0, &mut rng)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..10)).collect();
    let acc = evaluate(&Dataset { images, labels, classes: 10 }, &bb, None, &head).unwrap();
    let sigma = (0.1 * 0.9 / n as f64).sqrt();
    assert!((acc - 0.1).abs() <= 3.0 * sigma, "accuracy {acc}");
}

#[test]
fn fit_is_deterministic_and_reports_every_epoch() {
    let data = tiny_data(8, 4, 7);
    let cfg = TrainConfig { epochs: 3, batch_size: 4, lr: 1e-2, seed: 7, ..TrainConfig::default() };
    let run = || {
        let (bb, mut p) = setup(7);
        let mut head = init_head(8, 2);
        let mut seen = Vec::new();
        let out = fit(&bb, Some(&mut p), &mut head, &data, &cfg, |m| {
            seen.push(m.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, out.metrics);
        (out, p, head)
    };
    let (a, pa, ha) = run();
    let (b, pb, hb) = run();
    assert_eq!(a, b);
    assert_eq!((pa, ha), (pb, hb));
    assert_eq!(a.metrics.len(), 3);
    assert_eq!(a.metrics[0].lr, 1e-2);
    assert!(a.best_epoch >= 1 && a.best_val_acc >= a.metrics.iter().map(|m| m.val_acc).fold(0.0, f64::max));
}

#[test]
fn training_loss_falls_over_the_first_epochs() {
    let data = tiny_data(16, 0, 8);
    let (bb, mut p) = setup(8);
    let mut head = init_head(8, 2);
    let mut opt = AdamW::new(0.05);
    let mut losses = vec![dataset_loss(&data.train, &bb, Some(&p), &head).unwrap()];
    for _ in 0..5 {
        for chunk in (0..16).collect::<Vec<_>>().chunks(4) {
            let imgs = BatchInput::Images(chunk.iter().map(|&i| &data.train.images[i]).collect());
            let labels: Vec<usize> = chunk.iter().map(|&i| data.train.labels[i]).collect();
            train_step(&imgs, &labels, &bb, Some(&mut p), &mut head, &mut opt, 1e-2, None).unwrap();
        }
        losses.push(dataset_loss(&data.train, &bb, Some(&p), &head).unwrap());
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(1e-3, 0, 20), 1e-3);
    assert!((cosine_lr(1e-3, 10, 20) - 5e-4).abs() < 1e-15);
    assert!(cosine_lr(1e-3, 19, 20) > 0.0);
}

#[test]
fn train_config_validation() {
    TrainConfig::default().validate().unwrap();
    for (cfg, field) in [
        (TrainConfig { lr: 0.0, ..TrainConfig::default() }, "train.lr"),
        (TrainConfig { epochs: 0, ..TrainConfig::default() }, "train.epochs"),
        (TrainConfig { batch_size: 0, ..TrainConfig::default() }, "train.batch_size"),
        (TrainConfig { weight_decay: -1.0, ..TrainConfig::default() }, "train.weight_decay"),
        (TrainConfig { grad_clip: Some(0.0), ..TrainConfig::default() }, "train.grad_clip"),
    ] {
        assert!(cfg.validate().unwrap_err().to_string().contains(field));
    }
}

#[test]
fn metrics_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m/metrics.jsonl");
    let mut w = MetricsWriter::create(&path).unwrap();
    let m = EpochMetrics { epoch: 1, lr: 1e-3, train_loss: 0.69, train_acc: 0.5, val_acc: 0.25 };
    w.append(&m).unwrap();
    w.append(&EpochMetrics { epoch: 2, ..m.clone() }).unwrap();
    let back = read_metrics(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], m);
}
