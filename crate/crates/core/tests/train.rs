use panet::autograd::ParamStore;
use panet::data::{synth_phantom, PhantomConfig, Sample};
use panet::losses::LossKind;
use panet::metrics::evaluate;
use panet::train::{
    ablate, ablation_grid, cross_validate, mean_sd, train, AblationTable, AdamState, PreparedData, TrainConfig,
    TrainSeeds, Trainer,
};
use panet::{Error, Tensor};

fn tiny(size: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.base_channels = 4;
    cfg.model.input_height = size;
    cfg.model.input_width = size;
    cfg.epochs = 1;
    cfg.num_phantoms = 4;
    cfg.folds = 2;
    cfg
}

fn one_phantom(size: usize) -> Sample {
    let cfg = PhantomConfig {
        height: size,
        width: size,
        seed: 1,
        ..Default::default()
    };
    synth_phantom(&cfg, "p").unwrap()
}

#[test]
fn adam_first_steps_follow_closed_form() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true).unwrap();
    let frozen = store.add("stat", Tensor::new(&[1], vec![7.0]).unwrap(), false).unwrap();
    let g = [0.3, -4.0, 1e-3];
    let mut adam = AdamState::new(&store);
    let lr = 0.01;
    let mut want = [1.0, -2.0, 0.5];
    for _ in 0..2 {
        store.get_mut(id).grad.data_mut().copy_from_slice(&g);
        store.get_mut(frozen).grad.data_mut()[0] = 1.0;
        adam.step(&mut store, lr).unwrap();
        // A constant gradient keeps both bias-corrected moments at g and g².
        for (w, gi) in want.iter_mut().zip(g) {
            *w -= lr * gi / (gi.abs() + 1e-8);
        }
        for (got, w) in store.get(id).value.data().iter().zip(want) {
            assert!((got - w).abs() < 1e-15, "{got} vs {w}");
        }
    }
    assert_eq!(store.get(frozen).value.data(), &[7.0]);
    assert_eq!(adam.t, 2);
}

#[test]
fn training_loss_decreases() {
    let mut cfg = tiny(64);
    cfg.model.base_channels = 8;
    let s = one_phantom(64);
    let mut t = Trainer::new(&cfg, 1).unwrap();
    let before = t.loss(&[&s]).unwrap();
    for _ in 0..50 {
        t.step(&[&s]).unwrap();
    }
    let after = t.loss(&[&s]).unwrap();
    assert!(after < before, "{before} -> {after}");
    let dice = evaluate(&s.mask, &t.segment(&s.image).unwrap()).unwrap().dice;
    assert!(dice > 0.5, "dice {dice}");
}

#[test]
fn zero_epochs_rejected() {
    let mut cfg = tiny(32);
    cfg.epochs = 0;
    assert!(cfg.validate().is_err());
    assert!(train(&cfg, &[one_phantom(32)], TrainSeeds::from_seed(0), None, |_| {}).is_err());
    let mut c = TrainConfig::default();
    c.batch_size = 0;
    assert!(c.validate().is_err());
    assert!(TrainConfig::default().apply_override("epochs=zero").is_err());
}

#[test]
fn identical_runs_are_bit_identical() {
    let mut cfg = tiny(32);
    cfg.epochs = 2;
    let samples: Vec<Sample> = (0..3)
        .map(|i| {
            let pc = PhantomConfig {
                height: 32,
                width: 32,
                seed: i,
                ..Default::default()
            };
            synth_phantom(&pc, format!("p{i}")).unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = train(&cfg, &samples, TrainSeeds::from_seed(11), Some(&path), |_| {}).unwrap();
        (out.history, std::fs::read(path).unwrap())
    };
    let (ha, ca) = run("a.ckpt");
    let (hb, cb) = run("b.ckpt");
    assert_eq!(ha, hb);
    assert_eq!(ca, cb);
    assert_eq!(ha.len(), 2);
    assert_eq!(ha[0].steps, 2);
    let other = train(&cfg, &samples, TrainSeeds::from_seed(12), None, |_| {}).unwrap();
    assert_ne!(ha, other.history);
}

#[test]
fn nan_parameter_reports_divergence() {
    let cfg = tiny(32);
    let s = one_phantom(32);
    let mut t = Trainer::new(&cfg, 2).unwrap();
    let id = t.model.params.iter().find(|(_, p)| p.trainable).map(|(id, _)| id).unwrap();
    t.model.params.get_mut(id).value.data_mut()[0] = f32::NAN;
    let before = t.model.params.clone();
    // ReLU maps NaN to zero, so the poison may surface in the gradient
    // rather than the loss; either way the step must refuse to update.
    match t.step(&[&s]) {
        Err(Error::Diverged { loss, .. }) => assert!(!loss.is_finite()),
        Err(Error::NonFinite(name)) => assert_eq!(name, before.get(id).name),
        other => panic!("expected divergence, got {other:?}"),
    }
    for ((_, a), (_, b)) in before.iter().zip(t.model.params.iter()).skip(1) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }

    let mut t = Trainer::new(&cfg, 2).unwrap();
    let last = t.model.params.iter().filter(|(_, p)| p.trainable).last().map(|(id, _)| id).unwrap();
    t.model.params.get_mut(last).value.data_mut().fill(f32::NAN);
    assert!(matches!(t.step(&[&s]), Err(Error::Diverged { .. })));
}

#[test]
fn tiny_cross_validation_report() {
    let cfg = tiny(32);
    let data = PreparedData::new(&cfg).unwrap();
    assert_eq!(data.augmented.iter().map(Vec::len).sum::<usize>(), 24);
    let mut events = 0;
    let report = cross_validate(&cfg, &data, "cv", None, &mut |_| events += 1).unwrap();
    assert_eq!(events, 2 * (1 + cfg.epochs));
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.folds.len(), 2);
    assert!(report.folds.iter().all(|f| f.train_samples == 12));

    let dice: Vec<f64> = report.rows.iter().map(|r| r.raw.dice).collect();
    let agg = mean_sd(&dice);
    assert_eq!(agg, report.before_postprocess.dice);
    let mean = dice.iter().sum::<f64>() / 4.0;
    let sd = (dice.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!((agg.mean - mean).abs() < 1e-12 && (agg.sd - sd).abs() < 1e-12);
    let post: Vec<f64> = report.rows.iter().map(|r| r.post.dice).collect();
    assert_eq!(mean_sd(&post), report.after_postprocess.dice);

    let csv = report.to_csv();
    assert!(csv.starts_with("fold,id,stage,dice,iou,acc,mhd,flags\n"));
    assert_eq!(csv.lines().count(), 1 + 8);
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert!(json.get("before_postprocess").is_some() && json.get("after_postprocess").is_some());
    assert!(json.get("wall_clock_secs").is_none());
}

#[test]
fn ablation_grid_shape() {
    let grid = ablation_grid(LossKind::Dice);
    assert_eq!(grid.iter().filter(|r| r.0 == AblationTable::Modules).count(), 5);
    assert_eq!(grid.iter().filter(|r| r.0 == AblationTable::Losses).count(), 3);
    let base = grid[0];
    assert_eq!((base.2, base.3, base.4), (false, false, false));

    let cfg = tiny(32);
    let data = PreparedData::new(&cfg).unwrap();
    let report = ablate(&cfg, &data, None, &mut |_| {}).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert_eq!(report.reports.len(), 6);
    assert_eq!(report.split, data.split);
    for r in &report.reports {
        let tests: Vec<_> = r.folds.iter().map(|f| f.test.clone()).collect();
        let want: Vec<_> = data.split.folds.iter().map(|f| f.test.clone()).collect();
        assert_eq!(tests, want);
    }
    let full = &report.rows[3];
    let full_post = &report.rows[4];
    let dice_row = &report.rows[7];
    assert_eq!(full.report, dice_row.report);
    assert_eq!(full.metrics, dice_row.metrics);
    assert_eq!(full_post.report, full.report);
    assert_eq!(report.rows_of(AblationTable::Losses).count(), 3);
    assert_eq!(report.to_csv().lines().count(), 9);
}
