use qsim_core::bkd::{
    bkd_train, block_forward_fp, BkdConfig, Dataset, Model, QModel, QuantSetup, TrainState,
};
use qsim_core::harness::pipeline::{build_model, fp_layer_inputs, load_data, scaling_plans};
use qsim_core::harness::{calibrate_model, run_pipeline, ExperimentConfig};
use qsim_core::rng::{streams, RngStream};
use qsim_core::CalibMethod;

/// Calibrated full-precision / quantized model pair for `cfg`.
fn setup(cfg: &ExperimentConfig) -> (Model, QModel, Dataset) {
    let gen = load_data(cfg).unwrap();
    let data = Dataset::from_steps(&gen.steps).unwrap();
    let model = build_model(cfg, &gen).unwrap();
    let inputs = fp_layer_inputs(&model, &data.x).unwrap();
    let plans = scaling_plans(&model, &inputs, cfg.scaler, cfg.alpha, cfg.sq_floor).unwrap();
    let qs = QuantSetup {
        bits_w: cfg.bits_w,
        bits_a: cfg.bits_a,
        act_method: cfg.act_calib,
        weight_method: cfg.weight_calib,
        grid_points: cfg.grid_points,
    };
    let q = calibrate_model(&model, &plans, &inputs, &data, &qs).unwrap();
    (model, q, data)
}

fn small(blocks: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.data.timesteps = 4;
    c.data.samples = 48;
    c.data.channels = 8;
    c.model.width = 8;
    c.model.blocks = blocks;
    c.grid_points = 20;
    c.bkd.iters = 20;
    c.bkd.batch_size = 16;
    c
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_unchanged() {
    let cfg = small(2);
    let (model, q0, data) = setup(&cfg);
    let bkd = BkdConfig {
        lr_qparams: 0.0,
        lr_weights: 0.0,
        ..cfg.bkd.clone()
    };
    let mut q = q0.clone();
    let rep = bkd_train(&model, &mut q, &data, &bkd, RngStream::new(1, streams::TRAINING)).unwrap();
    assert_eq!(q, q0);
    for b in &rep.blocks {
        assert_eq!(b.mse_trained, b.mse_calibrated);
    }
    // Full-batch steps see the same data every time, so the loss is constant.
    let mut state = TrainState::new(q0.blocks[0].clone(), &bkd);
    let target = block_forward_fp(&model.blocks[0], &data.x).unwrap();
    for _ in 0..5 {
        state.train_step(&data.x, &data.idx, &target, 1).unwrap();
    }
    assert_eq!(state.block, q0.blocks[0]);
    assert!(state.losses.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn timestep_isolation() {
    let cfg = small(1);
    let (model, q, data) = setup(&cfg);
    let target = block_forward_fp(&model.blocks[0], &data.x).unwrap();
    let mut state = TrainState::new(q.blocks[0].clone(), &cfg.bkd);
    // A first full step gives every lane Adam momentum.
    state.train_step(&data.x, &data.idx, &target, 1).unwrap();
    let before = state.block.clone();
    let rows: Vec<usize> = (0..data.rows())
        .filter(|&r| matches!(data.idx.as_slice()[r], 1 | 3))
        .collect();
    let (xs, ts, is) = (data.x.select_rows(&rows), target.select_rows(&rows), data.idx.select(&rows));
    for _ in 0..10 {
        state.train_step(&xs, &is, &ts, 1).unwrap();
    }
    for (a, b) in state.block.layers.iter().zip(&before.layers) {
        for t in [1, 3] {
            assert_eq!(a.act_q.delta[t].to_bits(), b.act_q.delta[t].to_bits());
            assert_eq!(a.act_q.zero_point[t].to_bits(), b.act_q.zero_point[t].to_bits());
        }
        assert_ne!(a.act_q.delta[0], b.act_q.delta[0]);
        assert_ne!(a.act_q.delta[2], b.act_q.delta[2]);
    }
}

#[test]
fn block_locality() {
    // Block 1 of a two-block model trains exactly as the same block alone:
    // nothing downstream feeds back into it.
    let cfg = small(2);
    let (model, q, data) = setup(&cfg);
    let stream = RngStream::new(5, streams::TRAINING);
    let mut both = q.clone();
    bkd_train(&model, &mut both, &data, &cfg.bkd, stream).unwrap();

    let head = Model {
        spec: qsim_core::bkd::ModelSpec {
            timesteps: model.spec.timesteps,
            blocks: model.spec.blocks[..1].to_vec(),
        },
        blocks: model.blocks[..1].to_vec(),
    };
    let mut alone = QModel { blocks: q.blocks[..1].to_vec() };
    bkd_train(&head, &mut alone, &data, &cfg.bkd, stream).unwrap();
    assert_eq!(both.blocks[0], alone.blocks[0]);
    assert_ne!(both.blocks[0], q.blocks[0]);
    assert_ne!(both.blocks[1], q.blocks[1]);

    // A training step on block 2 touches only block 2's parameters.
    let x2 = block_forward_fp(&model.blocks[0], &data.x).unwrap();
    let target = block_forward_fp(&model.blocks[1], &x2).unwrap();
    let mut state = TrainState::new(q.blocks[1].clone(), &cfg.bkd);
    let untouched = q.blocks[0].clone();
    state.train_step(&x2, &data.idx, &target, 2).unwrap();
    assert_eq!(q.blocks[0], untouched);
}

#[test]
fn loss_history_is_deterministic() {
    let cfg = small(2);
    let a = run_pipeline(&cfg).unwrap();
    let b = run_pipeline(&cfg).unwrap();
    let bits = |r: &qsim_core::harness::PipelineReport| -> Vec<u64> {
        r.train.blocks.iter().flat_map(|b| b.losses.iter().map(|l| l.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.train.blocks[0].losses.len(), cfg.bkd.iters);
}

#[test]
fn delta_stays_positive() {
    let mut cfg = small(1);
    cfg.bkd.lr_qparams = 1.0;
    cfg.bkd.iters = 30;
    let (model, mut q, data) = setup(&cfg);
    bkd_train(&model, &mut q, &data, &cfg.bkd, RngStream::new(2, streams::TRAINING)).unwrap();
    for l in &q.blocks[0].layers {
        assert!(l.w_delta.iter().chain(&l.act_q.delta).all(|&d| d > 0.0));
    }
}

/// Mean of the first and last `w` entries.
fn ends(losses: &[f64], w: usize) -> (f64, f64) {
    let head = losses[..w].iter().sum::<f64>() / w as f64;
    let tail = losses[losses.len() - w..].iter().sum::<f64>() / w as f64;
    (head, tail)
}

#[test]
fn eight_bit_single_block_loss_trends_down() {
    let mut cfg = ExperimentConfig {
        bits_w: 8,
        bits_a: 8,
        ..ExperimentConfig::default()
    };
    cfg.model.blocks = 1;
    cfg.bkd.iters = 200;
    let (model, mut q, data) = setup(&cfg);
    let rep = bkd_train(&model, &mut q, &data, &cfg.bkd, RngStream::new(cfg.seed, streams::TRAINING)).unwrap();
    let b = &rep.blocks[0];
    let (head, tail) = ends(&b.losses, 20);
    println!(
        "8-bit block: calibrated {:.3e} trained {:.3e}; smoothed loss first 20 {head:.3e} last 20 {tail:.3e}",
        b.mse_calibrated, b.mse_trained
    );
    assert!(tail <= head, "smoothed loss rose: {head:e} -> {tail:e}");
}

#[test]
fn two_block_width_16_regression() {
    let mut cfg = ExperimentConfig::default();
    cfg.data.channels = 16;
    cfg.model.width = 16;
    let (model, mut q, data) = setup(&cfg);
    let rep = bkd_train(&model, &mut q, &data, &cfg.bkd, RngStream::new(cfg.seed, streams::TRAINING)).unwrap();
    let b = &rep.blocks[1];
    let ratio = b.mse_trained / b.mse_calibrated;
    println!("block 2: {:.4e} -> {:.4e} (ratio {ratio:.3})", b.mse_calibrated, b.mse_trained);
    assert!(ratio <= 0.5, "block-2 ratio {ratio:.3} > 0.5");
}

#[test]
fn max_min_activation_calibration_also_trains() {
    let mut cfg = small(1);
    cfg.act_calib = CalibMethod::MaxMin;
    let (model, mut q, data) = setup(&cfg);
    let rep = bkd_train(&model, &mut q, &data, &cfg.bkd, RngStream::new(0, streams::TRAINING)).unwrap();
    assert!(rep.blocks[0].mse_trained.is_finite());
}
