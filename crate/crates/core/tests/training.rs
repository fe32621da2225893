use camtrap_core::domain::argmax;
use camtrap_core::imbalance::{EmphasisQueues, EmphasisSampler, Oversampler, UniformSampler};
use camtrap_core::manifest::{split_by_event, Dataset, SplitSpec};
use camtrap_core::model::{examples_from, fit, top1_accuracy, Example, HeadLayout, ModelState, TrainConfig};
use camtrap_core::synthgen::{generate, oracle_label, SynthConfig};
use camtrap_core::{Error, Execution};

fn two_class() -> (SynthConfig, Dataset, Dataset) {
    let cfg = SynthConfig {
        n_classes: 2,
        feature_dim: 8,
        empty_fraction: 0.0,
        images_per_event: [1.0, 0.0, 0.0],
        noise_rate: 0.0,
        n_events: 200,
        seed: 5,
        class_separation: 6.0,
        ..SynthConfig::default()
    };
    let d = generate(&cfg).unwrap();
    let (train, test) = split_by_event(
        &d,
        &SplitSpec {
            train_fraction: 0.7,
            seed: 1,
        },
    )
    .unwrap();
    (cfg, train, test)
}

fn examples(d: &Dataset, layout: &HeadLayout) -> Vec<Example> {
    examples_from(d, layout, None).unwrap()
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        seed: 3,
        hidden: vec![16],
        ..TrainConfig::scaled(20, 10, 0.05)
    }
}

#[test]
fn separable_two_class_reaches_95_percent() {
    let (synth, train, test) = two_class();
    let oracle_hits = test
        .images()
        .filter(|i| Some(oracle_label(&i.features, &synth).unwrap()) == i.label.as_ref().unwrap().species)
        .count();
    let n_test = test.images().count();
    assert!(oracle_hits as f64 / n_test as f64 >= 0.99);

    let layout = HeadLayout::multitask(2);
    let (tr, te) = (examples(&train, &layout), examples(&test, &layout));
    let cfg = desk_config();
    let state = ModelState::new(8, layout, &cfg).unwrap();
    let mut sampler = UniformSampler::new(tr.len()).unwrap();
    let out = fit(state, &tr, &te, &cfg, &mut sampler).unwrap();
    let best = out.best.as_ref().unwrap();
    assert!(best.test_top1 >= 0.95, "test top-1 {}", best.test_top1);
    assert_eq!(out.history.len(), 20);
}

#[test]
fn best_snapshot_is_max_over_epochs() {
    let (_, train, test) = two_class();
    let layout = HeadLayout::one_stage(2);
    let (tr, te) = (examples(&train, &layout), examples(&test, &layout));
    let cfg = TrainConfig {
        epochs: 8,
        schedule: TrainConfig::scaled(8, 3, 0.02).schedule,
        epoch_size: 3,
        ..desk_config()
    };
    let state = ModelState::new(8, layout, &cfg).unwrap();
    let mut sampler = UniformSampler::new(tr.len()).unwrap();
    let out = fit(state, &tr, &te, &cfg, &mut sampler).unwrap();
    let best = out.best.unwrap();
    let max = out.history.iter().map(|r| r.test_top1).fold(f64::MIN, f64::max);
    assert_eq!(best.test_top1, max);
    let first_max = out.history.iter().find(|r| r.test_top1 == max).unwrap();
    assert_eq!(best.epoch, first_max.epoch);
    assert_eq!(top1_accuracy(&best.network, &te, Execution::Sequential).unwrap(), max);
    for ex in &te {
        let p = best.network.forward(&ex.features).unwrap();
        for head in p.heads() {
            assert!((head.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (_, train, test) = two_class();
    let layout = HeadLayout::multitask(2);
    let (tr, te) = (examples(&train, &layout), examples(&test, &layout));
    let mut cfg = desk_config();
    cfg.epochs = 3;
    cfg.schedule = TrainConfig::scaled(3, 1, 0.0).schedule;
    let state = ModelState::new(8, layout, &cfg).unwrap();
    let initial = state.network.clone();
    let init_acc = top1_accuracy(&initial, &te, Execution::default()).unwrap();
    let mut sampler = UniformSampler::new(tr.len()).unwrap();
    let out = fit(state, &tr, &te, &cfg, &mut sampler).unwrap();
    assert_eq!(out.network, initial);
    assert!(out.history.iter().all(|r| r.test_top1 == init_acc));
}

#[test]
fn fixed_seed_is_deterministic_across_execution_modes() {
    let (_, train, test) = two_class();
    let layout = HeadLayout::multitask(2);
    let (tr, te) = (examples(&train, &layout), examples(&test, &layout));
    let mut cfg = desk_config();
    cfg.epochs = 4;
    cfg.schedule = TrainConfig::scaled(4, 1, 0.05).schedule;
    let run = |exec| {
        let state = ModelState::new(8, layout.clone(), &cfg).unwrap();
        let queues = EmphasisQueues::with_defaults(tr.len()).unwrap();
        let mut sampler = EmphasisSampler::new(tr.len(), queues).unwrap();
        camtrap_core::model::fit_with(state, &tr, &te, &cfg, &mut sampler, exec).unwrap()
    };
    let a = run(Execution::Parallel);
    let b = run(Execution::Sequential);
    let c = run(Execution::Parallel);
    assert_eq!(a.network, b.network);
    assert_eq!(a.network, c.network);
    assert_eq!(a.history, b.history);
}

#[test]
fn oversampler_drives_training() {
    let (_, train, test) = two_class();
    let layout = HeadLayout::one_stage(2);
    let (tr, te) = (examples(&train, &layout), examples(&test, &layout));
    let classes: Vec<usize> = tr.iter().map(|e| e.target.primary().unwrap()).collect();
    let mut sampler = Oversampler::new(&classes, 2).unwrap();
    let cfg = desk_config();
    let state = ModelState::new(8, layout, &cfg).unwrap();
    let out = fit(state, &tr, &te, &cfg, &mut sampler).unwrap();
    assert!(out.best.unwrap().test_top1 >= 0.9);
}

#[test]
fn divergence_reports_epoch() {
    let (_, train, test) = two_class();
    let layout = HeadLayout::one_stage(2);
    let mut tr = examples(&train, &layout);
    let te = examples(&test, &layout);
    for e in &mut tr {
        e.features[0] = f64::NAN;
    }
    let cfg = desk_config();
    let state = ModelState::new(8, layout, &cfg).unwrap();
    let mut sampler = UniformSampler::new(tr.len()).unwrap();
    match fit(state, &tr, &te, &cfg, &mut sampler) {
        Err(Error::Diverged { epoch, batch }) => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("expected divergence, got {:?}", other.map(|s| s.epoch)),
    }
}

#[test]
fn predictions_argmax_matches_accuracy_helper() {
    let (_, train, test) = two_class();
    let layout = HeadLayout::binary();
    let _ = train;
    let te = examples(&test, &layout);
    let cfg = desk_config();
    let state = ModelState::new(8, layout, &cfg).unwrap();
    let xs: Vec<Vec<f64>> = te.iter().map(|e| e.features.clone()).collect();
    let preds = state.network.predict_batch(&xs).unwrap();
    let hits = preds
        .iter()
        .zip(&te)
        .filter(|(p, e)| Some(argmax(&p.primary())) == e.target.primary())
        .count();
    let acc = top1_accuracy(&state.network, &te, Execution::default()).unwrap();
    assert_eq!(acc, hits as f64 / te.len() as f64);
}
