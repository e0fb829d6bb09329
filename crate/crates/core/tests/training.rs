use std::fs;

use tritrans::data::{synth_generate, Sample};
use tritrans::metrics::MetricReport;
use tritrans::params::ParamStore;
use tritrans::tensor::Tensor;
use tritrans::trainer::{ablate, evaluate_checkpoint, load_model, params_from, score, Adam, Trainer, Variant};
use tritrans::{Error, ModelConfig, TrainConfig, TriTransNet};

fn tiny() -> TrainConfig {
    let model = ModelConfig { input_size: 32, channels: [4, 8, 8, 8, 8], transition_channels: 4, embed_dim: 8, heads: 2, layers: 1, ..ModelConfig::desk() };
    TrainConfig { model, batch: 2, ..TrainConfig::desk() }
}

fn data(n: usize) -> Vec<Sample> {
    synth_generate(42, n, 32).unwrap()
}

#[test]
fn adam_first_step_closed_form() {
    let mut reg = tritrans::params::ParamRegistry::default();
    reg.add("w", &[4], tritrans::params::Init::Ones);
    let mut store: ParamStore<f64> = reg.init(0);
    let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
    adam.update(&mut store, &[Tensor::zeros(&[4])], 0.1).unwrap();
    assert!(store.values()[0].data().iter().all(|&v| v == 1.0));

    let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
    let g = Tensor::from_f64(&[4], &[0.5, -2.0, 1e-3, 7.0]).unwrap();
    adam.update(&mut store, &[g.clone()], 0.01).unwrap();
    for (p, gi) in store.values()[0].data().iter().zip(g.data()) {
        assert!(((1.0 - p) - 0.01 * gi.signum()).abs() < 1e-6, "{p}");
    }
}

#[test]
fn adam_rejects_nan_with_parameter_name() {
    let mut reg = tritrans::params::ParamRegistry::default();
    reg.add("layer.weight", &[2], tritrans::params::Init::Ones);
    let mut store: ParamStore<f64> = reg.init(0);
    let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
    let err = adam.update(&mut store, &[Tensor::from_f64(&[2], &[1.0, f64::NAN]).unwrap()], 0.1).unwrap_err();
    assert!(matches!(&err, Error::Numerical(m) if m.contains("layer.weight")), "{err}");
    assert_eq!(adam.step, 0);
}

#[test]
fn equal_seeds_give_identical_parameters_after_ten_steps() {
    let samples = data(4);
    let cfg = TrainConfig { max_steps: Some(10), augment: true, ..tiny() };
    let run = || {
        let mut t = Trainer::<f32>::new(cfg.clone()).unwrap();
        t.run(&samples, None, |_| {}).unwrap();
        t.params
    };
    let (a, b) = (run(), run());
    assert_eq!(a.values(), b.values());
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig::paper();
    assert_eq!(cfg.lr_at_epoch(0), 1e-5);
    assert_eq!(cfg.lr_at_epoch(59), 1e-5);
    assert!((cfg.lr_at_epoch(60) - 1e-6).abs() < 1e-20);
    assert!((cfg.lr_at_epoch(120) - 1e-7).abs() < 1e-20);
    assert_eq!(cfg.batch, 3);
    assert_eq!(cfg.epochs, 150);

    // The logged rate follows the epoch boundaries.
    let samples = data(2);
    let mut t = Trainer::<f32>::new(TrainConfig { epochs: 3, lr_decay_every: 1, lr: 1e-3, ..tiny() }).unwrap();
    let log = t.run(&samples, None, |_| {}).unwrap();
    let lrs: Vec<f64> = log.iter().map(|e| e.lr).collect();
    assert_eq!(lrs.len(), 3);
    assert!((lrs[1] - 1e-4).abs() < 1e-15 && (lrs[2] - 1e-5).abs() < 1e-15);
    assert_eq!(log.iter().map(|e| e.epoch).collect::<Vec<_>>(), [0, 1, 2]);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let samples = data(5);
    let cfg = TrainConfig { max_steps: Some(8), augment: true, seed: 3, ..tiny() };

    let mut full = Trainer::<f32>::new(cfg.clone()).unwrap();
    let full_log = full.run(&samples, None, |_| {}).unwrap();

    let path = dir.path().join("half.trit");
    let mut first = Trainer::<f32>::new(TrainConfig { max_steps: Some(3), ..cfg.clone() }).unwrap();
    let mut log = first.run(&samples, Some(&path), |_| {}).unwrap();
    let mut resumed = Trainer::<f32>::resume(&path).unwrap();
    assert_eq!(resumed.adam.step, 3);
    resumed.config.max_steps = Some(8);
    log.extend(resumed.run(&samples, None, |_| {}).unwrap());

    let text = |l: &[tritrans::trainer::LogEntry]| l.iter().map(|e| e.to_string()).collect::<Vec<_>>();
    assert_eq!(text(&log), text(&full_log));
    assert_eq!(resumed.params.values(), full.params.values());
}

#[test]
fn numerical_failure_keeps_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.trit");
    let samples = data(4);
    let mut t = Trainer::<f32>::new(TrainConfig { max_steps: Some(2), ..tiny() }).unwrap();
    t.run(&samples, Some(&path), |_| {}).unwrap();
    let before = fs::read(&path).unwrap();

    t.config.max_steps = Some(6);
    t.config.checkpoint_every = 1;
    for v in t.params.values_mut() {
        *v = v.map(|_| f32::NAN);
    }
    let err = t.run(&samples, Some(&path), |_| {}).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("ck.trit"), "{err}");
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn loss_decreases_on_a_frozen_batch() {
    let samples = data(2);
    for variant in ["ttem=on", "ttem=off", "decoder=single", "fusion=add", "k=2"] {
        let cfg = Variant::parse(variant).unwrap().apply(&TrainConfig { lr: 2e-4, ..tiny() }).unwrap();
        let mut t = Trainer::<f32>::new(cfg).unwrap();
        // One sample per epoch, so every step sees the same batch.
        let one = &samples[..1];
        let losses: Vec<f64> = (0..21).map(|_| t.step(one).unwrap().loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{variant}: {losses:?}");
        }
    }
}

#[test]
fn evaluation_of_reference_predictions() {
    let samples = data(3);
    let gts: Vec<Tensor<f64>> = samples.iter().map(|s| s.gt.cast::<f64>().reshape(&[32, 32]).unwrap()).collect();
    let r: MetricReport = score("gt", &gts, &samples).unwrap();
    assert_eq!(r.mae, 0.0);
    assert!((r.fmeasure.unwrap() - 1.0).abs() <= 1e-6);
    assert!((r.smeasure - 1.0).abs() <= 1e-6);
    let halves = vec![Tensor::full(&[32, 32], 0.5); 3];
    assert!((score("half", &halves, &samples).unwrap().mae - 0.5).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.trit");
    let samples = data(2);
    let mut t = Trainer::<f32>::new(TrainConfig { max_steps: Some(1), ..tiny() }).unwrap();
    t.run(&samples, Some(&path), |_| {}).unwrap();

    let (cfg, model, params) = load_model::<f32>(&path).unwrap();
    assert_eq!(cfg.model, t.config.model);
    assert_eq!(params.values(), t.params.values());
    assert_eq!(model.registry().count(), t.model.registry().count());
    assert!(evaluate_checkpoint(&path, &samples, "train").is_ok());

    let ck = t.to_checkpoint();
    let wider = TriTransNet::new(&ModelConfig { transition_channels: 8, ..t.config.model.clone() }).unwrap();
    let err = params_from::<f32>(&wider, &ck).unwrap_err();
    assert!(matches!(&err, Error::CheckpointMismatch(m) if m.contains("scale.transition")), "{err}");
    let no_ttem = TriTransNet::new(&ModelConfig { ttem: false, ..t.config.model.clone() }).unwrap();
    assert!(matches!(params_from::<f32>(&no_ttem, &ck), Err(Error::CheckpointMismatch(_))));
    let add = TriTransNet::new(&ModelConfig { fusion: tritrans::FusionMode::Add, ..t.config.model.clone() }).unwrap();
    assert!(matches!(params_from::<f32>(&add, &ck), Err(Error::CheckpointMismatch(_))));
}

#[test]
fn ablation_grid_contract() {
    let samples = data(2);
    let base = TrainConfig { max_steps: Some(1), ..tiny() };
    assert!(ablate(&[], &base, &samples, &samples, |_, _| {}).unwrap().is_empty());
    assert!(matches!(Variant::parse("colour=on"), Err(Error::Config { .. })));
    assert!(Variant::parse("decoder=double").unwrap().apply(&base).is_err());
    let grid = [Variant::parse("ttem=off").unwrap(), Variant::parse("k=2,decoder=single").unwrap()];
    let out = ablate(&grid, &base, &samples, &samples, |_, _| {}).unwrap();
    assert_eq!(out.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["ttem=off", "k=2,decoder=single"]);
    assert!(out.iter().all(|(_, r)| r.images == 2));
}

#[test]
fn census_grows_with_k_only_outside_shared_weights() {
    let shared = |k| {
        let m = TriTransNet::new(&ModelConfig { levels: k, input_size: 8 << (6 - k), ..ModelConfig::desk() }).unwrap();
        (m.registry().count_prefix("ttem.shared."), m.registry().count_prefix("decoder."))
    };
    let (s2, d2) = shared(2);
    let (s4, d4) = shared(4);
    assert_eq!(s2, s4);
    assert_eq!(d4 / 4, d2 / 2);
}
