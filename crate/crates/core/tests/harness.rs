mod common;

use cnnflow::cfd::{init_cavity, CavitySolver, SolverParams};
use cnnflow::harness::{
    make_targets, max_error, monitor_residuals, predict_regressive, predict_sequential, read_metrics_csv,
    repit_switch, run_matrix, threshold_horizon, train, write_metrics_csv, write_summary_csv, EvaluationSeries,
    ExperimentConfig, GenerationMode, HyperParams, MetricsRecord, ModelMeta, Normalizer, ResidualNorms,
    ResidualThresholds, SplitConfig, Strategy, SwitchDecision, ThresholdConfig, METRICS_HEADER,
    SOLVER_PAIR_RESIDUAL_BOUNDS,
};
use cnnflow::nets::{load_checkpoint, ModelKind, Network, NetworkSpec};
use cnnflow::{Error, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn cavity_records(nx: usize, ny: usize, n: usize) -> (SolverParams, Vec<Tensor>) {
    let p = SolverParams::default().with_grid(nx, ny);
    let mut s = init_cavity(&p).unwrap();
    let mut solver = CavitySolver::new(p.clone()).unwrap();
    let records = (0..n)
        .map(|_| {
            s = solver.step(&s).unwrap();
            s.to_tensor()
        })
        .collect();
    (p, records)
}

fn small_net(kind: ModelKind, n: usize, seed: u64) -> Network {
    let spec = NetworkSpec::new(kind, n, n).with_base_channels(2).with_hidden_channels(2);
    let spec = if kind.is_sequence() { spec.with_seq_len(3) } else { spec };
    Network::build(spec, seed).unwrap()
}

fn record(step: usize, t: f64, ux: f64, uy: f64) -> MetricsRecord {
    MetricsRecord {
        step,
        max_err_t: t,
        max_err_ux: ux,
        max_err_uy: uy,
        res_mass: 0.0,
        res_mom: 0.0,
        res_heat: 0.0,
    }
}

fn norms(mass: f64, momentum: f64, heat: f64) -> ResidualNorms {
    ResidualNorms { mass, momentum, heat }
}

#[test]
fn absolute_targets_of_a_frozen_sequence_equal_inputs() {
    let (_, mut records) = cavity_records(16, 12, 3);
    let frozen = records[2].clone();
    records.extend(std::iter::repeat(frozen).take(9));
    let split = SplitConfig::new(4, 4, 4);
    let data = make_targets(&records, &split, Strategy::Absolute, 1).unwrap();
    // Samples 2 and 3 pair two copies of the frozen state.
    for s in 2..data.train.len() {
        assert_eq!(data.train.inputs(s)[0], *data.train.target(s));
    }
}

#[test]
fn difference_target_of_identical_states_is_the_normalized_zero() {
    let (_, mut records) = cavity_records(16, 12, 4);
    let last = records[3].clone();
    records.extend(std::iter::repeat(last).take(8));
    let split = SplitConfig::new(5, 4, 3);
    let data = make_targets(&records, &split, Strategy::Difference, 1).unwrap();
    let diff = data.normalizer.diff.expect("difference bounds");
    let target = data.train.target(3);
    let n = target.len() / 3;
    for (c, r) in diff.as_array().iter().enumerate() {
        let zero = -r.min / (r.max - r.min);
        for v in &target.data()[c * n..(c + 1) * n] {
            assert!((v - zero).abs() < 1e-15, "channel {c}: {v} vs {zero}");
        }
    }
}

#[test]
fn windows_and_split_bookkeeping() {
    let (_, records) = cavity_records(16, 12, 40);
    let split = SplitConfig::new(20, 10, 10);
    let data = make_targets(&records, &split, Strategy::Absolute, 5).unwrap();
    assert_eq!(data.train.len(), 20 - 5);
    assert_eq!(data.val.len(), 10 - 5);
    assert_eq!(data.train.record_indices(0), 0..=5);
    assert_eq!(data.val.record_indices(4), 24..=29);

    let skipped = SplitConfig::new(20, 10, 5).with_skip(5);
    assert_eq!(skipped.train_range(), 5..25);
    assert_eq!(skipped.val_range(), 25..35);
    assert_eq!(skipped.test_range(), 35..40);
    let data = make_targets(&records, &skipped, Strategy::Absolute, 1).unwrap();
    assert_eq!(data.train.record_indices(0), 5..=6);
    assert_eq!(data.normalizer, Normalizer::fit(&records[5..25], Strategy::Absolute).unwrap());
}

#[test]
fn split_overflow_is_a_config_error() {
    let (_, records) = cavity_records(16, 12, 10);
    let err = make_targets(&records, &SplitConfig::new(6, 3, 3), Strategy::Absolute, 1).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "split"), "{err:?}");
    let err = make_targets(&records, &SplitConfig::new(5, 3, 2), Strategy::Absolute, 3).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "n_val"), "{err:?}");
}

#[test]
fn normalization_round_trips() {
    let (_, records) = cavity_records(16, 12, 30);
    let norm = Normalizer::fit(&records[..20], Strategy::Difference).unwrap();
    let mut rng = common::rng(5);
    for x in &records {
        let back = norm.denormalize_state(&norm.normalize_state(x).unwrap()).unwrap();
        assert!(back.max_abs_diff(x).unwrap() < 1e-12 * 310.0);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
    let d = Tensor::from_fn(records[0].shape(), |_| rng.gen_range(-0.01..0.01));
    let back = norm.denormalize_diff(&norm.normalize_diff(&d).unwrap()).unwrap();
    assert!(back.max_abs_diff(&d).unwrap() < 1e-12);
    // State bounds map onto [0, 1].
    let z = norm.normalize_state(&records[7]).unwrap();
    assert!(z.data().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
}

#[test]
fn one_sample_is_memorized() {
    let (_, records) = cavity_records(8, 8, 6);
    let split = SplitConfig::new(2, 2, 2);
    let data = make_targets(&records, &split, Strategy::Absolute, 1).unwrap();
    assert_eq!(data.train.len(), 1);
    let spec = NetworkSpec::new(ModelKind::UnetSmall, 8, 8).with_base_channels(8);
    let mut net = Network::build(spec, 3).unwrap();
    let hyper = HyperParams {
        epochs: 600,
        batch_size: 1,
        patience: 600,
        ..HyperParams::default()
    };
    let report = train(&mut net, &data.train, &data.train, &hyper, 3).unwrap();
    let last = *report.train_loss.last().unwrap();
    assert!(last < 1e-4, "final train loss {last}");
    assert!(last < report.train_loss[0]);
}

#[test]
fn zero_learning_rate_is_rejected_and_leaves_parameters() {
    let (_, records) = cavity_records(8, 8, 6);
    let data = make_targets(&records, &SplitConfig::new(2, 2, 2), Strategy::Absolute, 1).unwrap();
    let mut net = small_net(ModelKind::Autoencoder, 8, 1);
    let before = net.params().values();
    let hyper = HyperParams {
        learning_rate: 0.0,
        ..HyperParams::default()
    };
    let err = train(&mut net, &data.train, &data.val, &hyper, 1).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err:?}");
    assert_eq!(net.params().values(), before);
}

#[test]
fn training_is_deterministic() {
    let (_, records) = cavity_records(16, 16, 16);
    let split = SplitConfig::new(8, 4, 4);
    let hyper = HyperParams {
        epochs: 3,
        batch_size: 3,
        ..HyperParams::default()
    };
    let run = |seed| {
        let data = make_targets(&records, &split, Strategy::Difference, 3).unwrap();
        let mut net = small_net(ModelKind::ConvlstmUnet, 16, 9);
        let report = train(&mut net, &data.train, &data.val, &hyper, seed).unwrap();
        (report.train_loss, report.val_loss, net.params().values())
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4).0, run(5).0);
}

#[test]
fn training_never_reads_test_records() {
    let (_, records) = cavity_records(16, 16, 30);
    let split = SplitConfig::new(12, 6, 6).with_skip(4);
    let hyper = HyperParams {
        epochs: 2,
        ..HyperParams::default()
    };
    let data = make_targets(&records, &split, Strategy::Absolute, 3).unwrap();
    let mut net = small_net(ModelKind::ConvlstmUnet, 16, 2);
    let report = train(&mut net, &data.train, &data.val, &hyper, 2).unwrap();
    let train_range = split.train_range();
    assert!(report.seen_records.iter().all(|k| train_range.contains(k)));
    assert_eq!(report.seen_records.len(), 12);
    assert!(split.test_range().all(|k| !report.seen_records.contains(&k)));
}

#[test]
fn rollout_counts_and_first_step_agreement() {
    let (_, records) = cavity_records(16, 16, 20);
    for kind in [ModelKind::Unet, ModelKind::ConvlstmUnet] {
        let net = small_net(kind, 16, 4);
        let w = net.input_window();
        for strategy in Strategy::ALL {
            let norm = Normalizer::fit(&records[..12], strategy).unwrap();
            let test = &records[12..];
            let seq = predict_sequential(&net, strategy, &norm, test).unwrap();
            assert_eq!(seq.len(), test.len() - w);
            let reg = predict_regressive(&net, strategy, &norm, &test[..w], 1).unwrap();
            assert_eq!(reg.len(), 1);
            assert_eq!(reg[0], seq[0]);
            let long = predict_regressive(&net, strategy, &norm, &test[..w], 6).unwrap();
            assert_eq!(long.len(), 6);
            assert_eq!(long[0], seq[0]);
        }
    }
}

#[test]
fn rollout_rejects_mismatched_inputs() {
    let (_, records) = cavity_records(16, 16, 8);
    let net = small_net(ModelKind::ConvlstmUnet, 16, 4);
    let norm = Normalizer::fit(&records, Strategy::Absolute).unwrap();
    assert!(matches!(
        predict_regressive(&net, Strategy::Absolute, &norm, &records[..1], 2),
        Err(Error::Dimension(_))
    ));
    assert!(predict_sequential(&net, Strategy::Difference, &norm, &records).is_err());
}

/// A UNet whose head always emits the normalized zero difference.
fn zero_difference_net(norm: &Normalizer) -> Network {
    let mut net = small_net(ModelKind::UnetSmall, 16, 8);
    let diff = norm.diff.unwrap();
    let store = net.params_mut();
    let w = store.find("head.weight").expect("head weight");
    store.get_mut(w).value.fill(0.0);
    let b = store.find("head.bias").expect("head bias");
    let logits: Vec<f64> = diff
        .as_array()
        .iter()
        .map(|r| {
            let z = -r.min / (r.max - r.min);
            (z / (1.0 - z)).ln()
        })
        .collect();
    store.get_mut(b).value = Tensor::new(&[3], logits).unwrap();
    net
}

#[test]
fn zero_difference_net_keeps_the_state() {
    let (_, records) = cavity_records(16, 16, 12);
    let norm = Normalizer::fit(&records[..8], Strategy::Difference).unwrap();
    let net = zero_difference_net(&norm);
    let seq = predict_sequential(&net, Strategy::Difference, &norm, &records[8..]).unwrap();
    for (pred, input) in seq.iter().zip(&records[8..]) {
        assert!(pred.max_abs_diff(input).unwrap() < 1e-10);
    }
    let reg = predict_regressive(&net, Strategy::Difference, &norm, &records[8..9], 25).unwrap();
    for pred in &reg {
        assert!(pred.max_abs_diff(&records[8]).unwrap() < 1e-9);
    }
}

#[test]
fn regressive_divergence_reports_the_step() {
    let (_, records) = cavity_records(16, 16, 6);
    let norm = Normalizer::fit(&records, Strategy::Absolute).unwrap();
    let mut net = small_net(ModelKind::UnetSmall, 16, 8);
    let store = net.params_mut();
    let b = store.find("head.bias").unwrap();
    store.get_mut(b).value.fill(f64::NAN);
    let err = predict_regressive(&net, Strategy::Absolute, &norm, &records[..1], 3).unwrap_err();
    assert!(matches!(err, Error::RolloutDiverged { step: 1 }), "{err:?}");
}

#[test]
fn max_error_examples() {
    let (_, records) = cavity_records(16, 12, 2);
    let truth = &records[1];
    let e = max_error(truth, truth).unwrap();
    assert_eq!((e.t, e.u_x, e.u_y), (0.0, 0.0, 0.0));
    let mut pred = truth.clone();
    let n = 16 * 12;
    pred.data_mut()[2 * n + 40] += 0.2;
    let e = max_error(&pred, truth).unwrap();
    assert!((e.t - 0.2).abs() < 1e-12);
    assert_eq!((e.u_x, e.u_y), (0.0, 0.0));
    pred.data_mut()[n + 3] -= 0.05;
    assert!((max_error(&pred, truth).unwrap().u_y - 0.05).abs() < 1e-15);
    assert!(matches!(max_error(&records[0], &Tensor::zeros(&[3, 4, 4])), Err(Error::Dimension(_))));
}

#[test]
fn threshold_horizon_examples() {
    let tau = ThresholdConfig::default();
    let series = vec![record(1, 0.1, 0.0, 0.0), record(2, 0.3, 0.0, 0.0), record(3, 0.5, 0.0, 0.0)];
    let h = threshold_horizon(&series, &tau);
    assert_eq!((h.t, h.u_x, h.u_y), (Some(3), None, None));
    let below = vec![record(1, 0.39, 0.02, 0.024)];
    let h = threshold_horizon(&below, &tau);
    assert_eq!((h.t, h.u_x, h.u_y), (None, None, None));
}

fn horizon_key(h: Option<usize>) -> usize {
    h.unwrap_or(usize::MAX)
}

proptest! {
    #[test]
    fn raising_a_threshold_never_shortens_the_horizon(
        errs in prop::collection::vec(0.0f64..1.0, 1..40),
        lo in 0.0f64..1.0,
        bump in 0.0f64..0.5,
    ) {
        let series: Vec<MetricsRecord> =
            errs.iter().enumerate().map(|(k, &e)| record(k + 1, e, e / 10.0, e / 20.0)).collect();
        let a = ThresholdConfig { t: lo + 1e-9, u_x: lo / 10.0 + 1e-9, u_y: lo / 20.0 + 1e-9 };
        let b = ThresholdConfig { t: a.t + bump, u_x: a.u_x + bump / 10.0, u_y: a.u_y + bump / 20.0 };
        let (ha, hb) = (threshold_horizon(&series, &a), threshold_horizon(&series, &b));
        prop_assert!(horizon_key(hb.t) >= horizon_key(ha.t));
        prop_assert!(horizon_key(hb.u_x) >= horizon_key(ha.u_x));
        prop_assert!(horizon_key(hb.u_y) >= horizon_key(ha.u_y));
    }

    #[test]
    fn lowering_the_residual_threshold_never_delays_the_switch(
        steps in prop::collection::vec(0.0f64..1.0, 1..40),
        high in 0.1f64..40.0,
        frac in 0.0f64..1.0,
    ) {
        let mut acc = 0.0;
        let series: Vec<ResidualNorms> = steps
            .iter()
            .map(|d| {
                acc += d;
                norms(acc, acc, acc)
            })
            .collect();
        let low = high * frac.max(1e-3);
        let at = |x: f64| ResidualThresholds { mass: x, momentum: x, heat: x };
        let key = |d: SwitchDecision| match d {
            SwitchDecision::ContinueDl => usize::MAX,
            SwitchDecision::SwitchToCfd { step } => step,
        };
        let s_high = key(repit_switch(&series, &at(high)).unwrap());
        let s_low = key(repit_switch(&series, &at(low)).unwrap());
        prop_assert!(s_low <= s_high);
    }
}

#[test]
fn repit_switch_examples() {
    let tau = ResidualThresholds {
        mass: 1.0,
        momentum: 1.0,
        heat: 1.0,
    };
    let quiet = vec![norms(0.5, 0.5, 0.5); 12];
    assert_eq!(repit_switch(&quiet, &tau).unwrap(), SwitchDecision::ContinueDl);
    let mut spiked = quiet.clone();
    spiked[6].momentum = 3.0;
    assert_eq!(repit_switch(&spiked, &tau).unwrap(), SwitchDecision::SwitchToCfd { step: 7 });
    let bad = ResidualThresholds { heat: 0.0, ..tau };
    assert!(matches!(repit_switch(&quiet, &bad), Err(Error::Config { .. })));
    let d = ResidualThresholds::default();
    assert_eq!(d.mass, 10.0 * SOLVER_PAIR_RESIDUAL_BOUNDS.mass);
    assert_eq!(d.heat, 10.0 * SOLVER_PAIR_RESIDUAL_BOUNDS.heat);
}

#[test]
fn monitor_residuals_of_constant_and_solver_sequences() {
    let p = SolverParams::default().with_grid(16, 12);
    let still = Tensor::from_fn(&[3, 12, 16], |k| if k < 2 * 16 * 12 { 0.0 } else { 295.0 });
    let r = monitor_residuals(&[still.clone(), still.clone(), still.clone()], &p).unwrap();
    assert_eq!(r.len(), 2);
    for n in &r {
        assert_eq!((n.mass, n.heat), (0.0, 0.0));
    }
    assert!(matches!(monitor_residuals(&[still], &p), Err(Error::Usage(_))));

    let (p, records) = cavity_records(64, 64, 30);
    for n in monitor_residuals(&records, &p).unwrap() {
        assert!(n.mass <= SOLVER_PAIR_RESIDUAL_BOUNDS.mass);
        assert!(n.momentum <= SOLVER_PAIR_RESIDUAL_BOUNDS.momentum);
        assert!(n.heat <= SOLVER_PAIR_RESIDUAL_BOUNDS.heat);
    }
}

#[test]
fn metrics_csv_schema_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut series = Vec::new();
    for model in ModelKind::ALL {
        for strategy in Strategy::ALL {
            for mode in GenerationMode::ALL {
                let records = (1..=4)
                    .map(|k| MetricsRecord {
                        step: k,
                        max_err_t: 0.1 * k as f64,
                        max_err_ux: 0.01 * k as f64,
                        max_err_uy: 1.0 / 3.0,
                        res_mass: 1e-3,
                        res_mom: 2e-3,
                        res_heat: 5.0,
                    })
                    .collect();
                series.push(EvaluationSeries {
                    model,
                    strategy,
                    mode,
                    records,
                });
            }
        }
    }
    let metrics = dir.path().join("metrics.csv");
    write_metrics_csv(&metrics, &series).unwrap();
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "model,strategy,mode,step,max_err_T,max_err_ux,max_err_uy,res_mass,res_mom,res_heat"
    );
    assert_eq!(METRICS_HEADER, text.lines().next().unwrap());
    assert_eq!(text.lines().count(), 1 + 16 * 4);
    assert_eq!(read_metrics_csv(&metrics).unwrap(), series);

    let summary = dir.path().join("summary.csv");
    write_summary_csv(&summary, &series, &ThresholdConfig::default()).unwrap();
    let text = std::fs::read_to_string(&summary).unwrap();
    assert_eq!(text.lines().count(), 1 + 16);
    let first = text.lines().nth(1).unwrap();
    assert!(first.starts_with("autoencoder,absolute,sequential,0.4"), "{first}");
    assert!(first.ends_with(",none,3,1"), "{first}");
}

#[test]
fn experiment_matrix_is_reproducible_and_isolated() {
    let (p, records) = cavity_records(16, 16, 26);
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 21;
    cfg.split = SplitConfig::new(8, 7, 7).with_skip(2);
    cfg.spec.base_channels = 2;
    cfg.spec.hidden_channels = 2;
    cfg.spec.seq_len = 3;
    cfg.hyper.epochs = 2;
    cfg.hyper.batch_size = 4;

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_matrix(&cfg, &p, &records, 1, Some(a.path())).unwrap();
    let second = run_matrix(&cfg, &p, &records, 2, Some(b.path())).unwrap();
    assert_eq!(first.len(), 8);
    for (x, y) in first.iter().zip(&second) {
        assert_eq!(x.meta, y.meta);
        assert_eq!(x.report.train_loss, y.report.train_loss);
        assert_eq!(x.series, y.series);
        assert_eq!(x.series.len(), 2);
        let test = cfg.split.test_range();
        assert!(x.report.seen_records.iter().all(|k| !test.contains(k)));
        let w = x.network.input_window();
        assert!(x.series.iter().all(|s| s.records.len() == cfg.split.n_test - w));
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for required in [
        "metrics.csv",
        "summary.csv",
        "unet_difference.nckp",
        "unet_difference.meta.toml",
        "unet_difference.loss.csv",
        "bars_absolute.svg",
        "errors_difference_T.svg",
        "residuals_heat.svg",
    ] {
        assert!(names.iter().any(|n| n == required), "missing {required} in {names:?}");
    }
    for name in &names {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(x == y, "{name} differs between runs");
    }
    let ckpt = a.path().join("convlstm_unet_absolute.nckp");
    let net = load_checkpoint(&ckpt).unwrap();
    assert_eq!(net.params().values(), first[6].network.params().values());
    let meta = ModelMeta::read(&ModelMeta::path_for(&ckpt)).unwrap();
    assert_eq!(meta, first[6].meta);
}
