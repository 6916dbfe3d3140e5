use relamix::data::{
    chronological_split, make_windows, synth_series, Standardizer, SynthKind, SynthParams, TimeSeries, WindowMode, WindowSample,
    WindowSpec,
};
use relamix::model::{Ablation, ModelConfig};
use relamix::numerics::{Matrix, SeededRng};
use relamix::trainer::*;

fn small_model(horizon: usize) -> ModelConfig {
    ModelConfig {
        window_len: 8,
        horizon,
        input_dim: 5,
        output_dim: 5,
        bottleneck_dim: 8,
        model_dim: 16,
        ..ModelConfig::default()
    }
}

fn sine_windows(len: usize, cfg: &ModelConfig) -> WindowSets {
    let clean = synth_series(SynthKind::SineMixture, len, 11, &SynthParams::default()).unwrap();
    let p = prepare_data(&clean, 0.0, 1, [0.7, 0.15, 0.15], cfg.window_len + cfg.horizon).unwrap();
    p.windows(window_spec(cfg)).unwrap()
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        max_epochs: 4,
        max_batches_per_epoch: Some(10),
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_histories() {
    let cfg = small_model(2);
    let w = sine_windows(1200, &cfg);
    let run = || {
        let m = Forecaster::new(ModelKind::Relamix(Ablation::Full), &cfg, 3).unwrap();
        train(m, &quick_train(), &w.train, &w.val).unwrap()
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    let bits = |f: &Forecaster| f.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ha.epochs_run(), 4);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let cfg = small_model(1);
    let w = sine_windows(1000, &cfg);
    for kind in [ModelKind::Relamix(Ablation::NoResidual), ModelKind::Linear] {
        let m = Forecaster::new(kind, &cfg, 5).unwrap();
        let before = m.params().to_vec();
        let tc = TrainConfig {
            learning_rate: 0.0,
            patience: 100,
            ..quick_train()
        };
        let (m, h) = train(m, &tc, &w.train, &w.val).unwrap();
        assert_eq!(m.params(), &before[..]);
        let v0 = h.epochs[0].val_loss;
        assert!(h.epochs.iter().all(|e| e.val_loss == v0));
    }
}

#[test]
fn sine_smoke_run_reduces_training_loss_tenfold() {
    // regression bound calibrated once on this configuration
    let cfg = ModelConfig {
        horizon: 1,
        ..ModelConfig::default()
    };
    let w = sine_windows(4000, &cfg);
    let m = Forecaster::new(ModelKind::Relamix(Ablation::Full), &cfg, 1).unwrap();
    let initial = validation_loss(&m, &w.train, 256).unwrap();
    let tc = TrainConfig {
        max_epochs: 50,
        max_batches_per_epoch: Some(20),
        seed: 4,
        ..TrainConfig::default()
    };
    let (_, h) = train(m, &tc, &w.train, &w.val).unwrap();
    let last = h.epochs.last().unwrap().train_loss;
    assert!(h.epochs_run() <= 50);
    assert!(last < 0.1 * initial, "final {last} vs initial {initial}");
}

#[test]
fn best_parameters_are_restored() {
    let cfg = small_model(1);
    let w = sine_windows(1200, &cfg);
    let m = Forecaster::new(ModelKind::Relamix(Ablation::Full), &cfg, 2).unwrap();
    let tc = TrainConfig {
        max_epochs: 8,
        learning_rate: 0.05,
        max_batches_per_epoch: Some(5),
        ..quick_train()
    };
    let (m, h) = train(m, &tc, &w.train, &w.val).unwrap();
    let min = h
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min)
        .min(h.best_val_loss);
    assert_eq!(h.best_val_loss, min);
    assert_eq!(validation_loss(&m, &w.val, 7).unwrap(), h.best_val_loss);
}

#[test]
fn early_stopping_respects_patience() {
    let cfg = small_model(1);
    let w = sine_windows(1000, &cfg);
    let m = Forecaster::new(ModelKind::Linear, &cfg, 2).unwrap();
    // a zero step never improves on the initial validation loss
    let tc = TrainConfig {
        learning_rate: 0.0,
        patience: 3,
        max_epochs: 50,
        ..quick_train()
    };
    let (_, h) = train(m, &tc, &w.train, &w.val).unwrap();
    assert_eq!(h.epochs_run(), 3);
    assert_eq!(h.best_epoch, 0);
}

#[test]
fn evaluation_is_pure_and_deterministic() {
    let cfg = small_model(5);
    let w = sine_windows(1200, &cfg);
    let m = Forecaster::new(ModelKind::Relamix(Ablation::Full), &cfg, 8).unwrap();
    let (m, _) = train(m, &quick_train(), &w.train, &w.val).unwrap();
    let before = m.params().to_vec();
    let a = evaluate(&m, &w.test, 16).unwrap();
    let b = evaluate(&m, &w.test, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(m.params(), &before[..]);
    assert!(a.metrics.r2.unwrap() <= 1.0);
}

#[test]
fn injected_perfect_predictions_score_zero() {
    let t = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 7.0]).unwrap();
    let m = metrics(&t, &t).unwrap();
    assert_eq!((m.mse, m.mae, m.r2), (0.0, 0.0, Some(1.0)));
}

#[test]
fn non_finite_loss_names_the_batch() {
    let cfg = small_model(1);
    let mut w = sine_windows(1000, &cfg);
    let m = Forecaster::new(ModelKind::Linear, &cfg, 2).unwrap();
    for s in &mut w.train {
        s.target.set(0, 0, 1e300);
    }
    let tc = TrainConfig {
        shuffle: false,
        ..quick_train()
    };
    let err = train(m, &tc, &w.train, &w.val).unwrap_err().to_string();
    assert!(err.contains("non-finite") && err.contains("batch 0"), "{err}");
}

#[test]
fn invalid_train_config_is_rejected() {
    let cfg = small_model(1);
    let w = sine_windows(1000, &cfg);
    for tc in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { patience: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
    ] {
        let m = Forecaster::new(ModelKind::Linear, &cfg, 2).unwrap();
        assert!(train(m, &tc, &w.train, &w.val).is_err());
    }
    let m = Forecaster::new(ModelKind::Linear, &cfg, 2).unwrap();
    assert!(train(m, &TrainConfig::default(), &[], &w.val).is_err());
    let m = Forecaster::new(ModelKind::Linear, &cfg, 2).unwrap();
    assert!(evaluate(&m, &[], 8).is_err());
}

/// Gaussian random walk in every column, step standard deviation `sigma`.
fn random_walk(len: usize, sigma: f64, seed: u64) -> TimeSeries {
    let mut rng = SeededRng::new(seed);
    let mut values = Matrix::zeros(len, 5);
    for t in 1..len {
        for c in 0..5 {
            let v = values.get(t - 1, c) + sigma * rng.normal();
            values.set(t, c, v);
        }
    }
    TimeSeries::ohlcv(0, values).unwrap()
}

#[test]
fn persistence_on_a_random_walk_reaches_the_step_variance() {
    // one-step persistence error of a random walk is the step variance
    let sigma = 0.3;
    let series = random_walk(200_000, sigma, 21);
    let cfg = small_model(1);
    let spec = WindowSpec {
        input_len: cfg.window_len,
        horizon: 1,
        output_dim: 5,
    };
    let w: Vec<WindowSample> = make_windows(&series, &series, spec, WindowMode::Eval).unwrap();
    let m = Forecaster::new(ModelKind::Persistence, &cfg, 0).unwrap();
    let ev = evaluate(&m, &w, 512).unwrap();
    let expected = sigma * sigma;
    assert!((ev.metrics.mse / expected - 1.0).abs() < 0.03, "{}", ev.metrics.mse);
    // MAE of a normal step is sigma·sqrt(2/π)
    let mae = sigma * (2.0 / std::f64::consts::PI).sqrt();
    assert!((ev.metrics.mae / mae - 1.0).abs() < 0.03);
}

#[test]
fn grid_cardinality_and_shared_masks() {
    let cfg = GridConfig {
        model: small_model(1),
        train: TrainConfig {
            max_epochs: 1,
            max_batches_per_epoch: Some(2),
            ..TrainConfig::default()
        },
        data: DataConfig {
            source: DataSource::synth(SynthKind::GbmOhlcv, Some(600), 3),
            ..DataConfig::default()
        },
        models: vec!["full".into(), "persistence".into()],
        ..GridConfig::default()
    };
    assert_eq!(cfg.cell_count().unwrap(), 24);
    let clean = cfg.data.source.load().unwrap();
    let mut seen = 0;
    let out = run_grid(&cfg, &clean, |_| seen += 1).unwrap();
    assert_eq!(seen, 24);
    assert!(out.failures.is_empty());
    assert_eq!(out.reports.len(), 24);
    for r in &out.reports {
        let twin = out
            .reports
            .iter()
            .find(|o| o.model != r.model && o.delay_ratio == r.delay_ratio && o.seed == r.seed)
            .unwrap();
        assert_eq!(r.mask_hash, twin.mask_hash);
    }
    let masks: std::collections::BTreeSet<&str> =
        out.reports.iter().map(|r| r.mask_hash.as_str()).collect();
    assert_eq!(masks.len(), 3);
    // canonical order: ReLaMix first, ratios ascending
    assert_eq!(out.reports[0].model, "relamix");
    assert_eq!(out.reports[23].model, "persistence");
    assert!(out.reports[..12].windows(2).all(|p| p[0].sort_key() <= p[1].sort_key()));
}

#[test]
fn relamix_param_counts_follow_the_head() {
    let cfg = GridConfig {
        train: TrainConfig {
            max_epochs: 1,
            max_batches_per_epoch: Some(1),
            ..TrainConfig::default()
        },
        data: DataConfig {
            source: DataSource::synth(SynthKind::GbmOhlcv, Some(800), 3),
            ..DataConfig::default()
        },
        delay_ratios: vec![0.15],
        models: vec!["full".into()],
        ..GridConfig::default()
    };
    let clean = cfg.data.source.load().unwrap();
    let out = run_grid(&cfg, &clean, |_| {}).unwrap();
    let p: Vec<usize> = out.reports.iter().map(|r| r.params).collect();
    let d: Vec<usize> = p.windows(2).map(|w| w[1] - w[0]).collect();
    assert_eq!(d, vec![660, 330, 495]);
}

#[test]
fn failing_cells_do_not_abort_the_grid() {
    let cfg = GridConfig {
        model: small_model(1),
        train: TrainConfig {
            max_epochs: 1,
            max_batches_per_epoch: Some(1),
            ..TrainConfig::default()
        },
        data: DataConfig {
            source: DataSource::synth(SynthKind::GbmOhlcv, Some(300), 3),
            ..DataConfig::default()
        },
        delay_ratios: vec![0.15],
        // k = 60 leaves no room for a window in each 45-row split
        horizons: vec![1, 60],
        models: vec!["linear".into()],
        ..GridConfig::default()
    };
    let clean = cfg.data.source.load().unwrap();
    let out = run_grid(&cfg, &clean, |_| {}).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].k, 60);
    assert!(!out.failures[0].numeric);
}

#[test]
fn report_csv_round_trips() {
    let cfg = GridConfig {
        model: small_model(1),
        train: TrainConfig {
            max_epochs: 1,
            max_batches_per_epoch: Some(1),
            ..TrainConfig::default()
        },
        data: DataConfig {
            source: DataSource::synth(SynthKind::GbmOhlcv, Some(500), 3),
            ..DataConfig::default()
        },
        delay_ratios: vec![0.35],
        horizons: vec![1, 5],
        raw_metrics: true,
        ..GridConfig::default()
    };
    let clean = cfg.data.source.load().unwrap();
    let out = run_grid(&cfg, &clean, |_| {}).unwrap();
    assert!(out.reports.iter().all(|r| r.raw.is_some()));
    let mut buf = Vec::new();
    write_reports_csv(&out.reports, &mut buf).unwrap();
    let back = read_reports_csv(&buf[..]).unwrap();
    assert_eq!(back, out.reports);

    let table = render_table(&out.reports, false).unwrap();
    assert!(table.contains("35%/k=5") && table.contains("Params"));
    assert!(!table.contains('\x1b'));
}

#[test]
fn raw_metrics_rescale_by_feature_variance() {
    // per feature, raw error = std_f * standardized error
    let cfg = GridConfig {
        model: small_model(3),
        train: TrainConfig {
            max_epochs: 2,
            max_batches_per_epoch: Some(3),
            ..TrainConfig::default()
        },
        data: DataConfig {
            source: DataSource::synth(SynthKind::GbmOhlcv, Some(600), 5),
            ..DataConfig::default()
        },
        delay_ratios: vec![0.25],
        horizons: vec![3],
        models: vec!["full".into(), "persistence".into()],
        raw_metrics: true,
        ..GridConfig::default()
    };
    let clean = cfg.data.source.load().unwrap();
    let out = run_grid(&cfg, &clean, |_| {}).unwrap();
    let [train_part, _, _] = chronological_split(&clean, cfg.data.split, 1).unwrap();
    let scaler = Standardizer::fit(&train_part).unwrap();
    assert_eq!(out.reports.len(), 2);
    for r in &out.reports {
        let raw = r.raw.as_ref().unwrap();
        for (f, (z, x)) in r.per_feature.iter().zip(&raw.per_feature).enumerate() {
            let s = scaler.std[f];
            assert_eq!(z.feature, x.feature);
            assert!((x.metrics.mse - s * s * z.metrics.mse).abs() <= 1e-9 * x.metrics.mse);
            assert!((x.metrics.mae - s * z.metrics.mae).abs() <= 1e-9 * x.metrics.mae);
            let (a, b) = (x.metrics.r2.unwrap(), z.metrics.r2.unwrap());
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
