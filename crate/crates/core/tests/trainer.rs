use std::path::Path;

use tta_core::data::{Batch, TextureFamily};
use tta_core::model::{ModelConfig, Synthesis};
use tta_core::params::ParamStore;
use tta_core::trainer::checkpoint::{Checkpoint, Value, MAGIC};
use tta_core::trainer::{train, Adam, LogRecord, RunConfig, TrainConfig, TrainOptions, TrainState};
use tta_core::{Error, Tensor};

/// Toy model at 32x32 with a light discriminator: fast enough for unit tests.
fn small(seed: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            input_size: 32,
            base_channels: 4,
            levels: 2,
            disc_channels: vec![4, 8, 8, 8],
            seed,
            ..ModelConfig::toy()
        },
        train: TrainConfig {
            batch_size: 2,
            steps: 10,
            seed,
            eval_images: 2,
            checkpoint_every: 0,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn adam_matches_scalar_reference() {
    // minimize (x - 1)^2 from x = 0.2
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::new(&[1], vec![0.2]).unwrap()).unwrap();
    let mut opt = Adam::new(&store, 1e-2, 0.5, 0.9);
    let (mut x, mut m, mut v) = (0.2f64, 0.0f64, 0.0f64);
    for t in 1..=5 {
        let g = 2.0 * (store.get(id).data()[0] as f64 - 1.0);
        opt.step(&mut store, &[Tensor::new(&[1], vec![g as f32]).unwrap()]).unwrap();
        let gr = 2.0 * (x - 1.0);
        m = 0.5 * m + 0.5 * gr;
        v = 0.9 * v + 0.1 * gr * gr;
        let mh = m / (1.0 - 0.5f64.powi(t));
        let vh = v / (1.0 - 0.9f64.powi(t));
        x -= 1e-2 * mh / (vh.sqrt() + 1e-8);
        let got = store.get(id).data()[0] as f64;
        assert!((got - x).abs() <= 1e-7, "step {t}: {got} vs {x}");
    }
}

#[test]
fn adam_rejects_mismatched_gradients() {
    let mut store = ParamStore::new();
    store.add("x", Tensor::zeros(&[2]).unwrap()).unwrap();
    let mut opt = Adam::new(&store, 1e-3, 0.9, 0.999);
    assert!(opt.step(&mut store, &[]).is_err());
    assert!(opt.step(&mut store, &[Tensor::zeros(&[3]).unwrap()]).is_err());
}

#[test]
fn checkpoint_container_round_trips() {
    let mut ck = Checkpoint::new();
    ck.insert("a/w", Value::F32(Tensor::new(&[2, 2], vec![1.0, -2.5, f32::MIN_POSITIVE, 3.0]).unwrap()));
    ck.insert("n", Value::U64(vec![7, u64::MAX]));
    ck.insert("text", Value::Bytes(b"hello".to_vec()));
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
    assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
    // first entry: name length 3, "a/w", tag 0, rank 2, dims 2 and 2, then 1.0
    assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
    assert_eq!(&bytes[20..23], b"a/w");
    assert_eq!(bytes[23], 0);
    assert_eq!(&bytes[24..28], &2u32.to_le_bytes());
    assert_eq!(&bytes[28..36], &2u64.to_le_bytes());
    assert_eq!(&bytes[44..48], &1.0f32.to_le_bytes());
    let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.u64s("n").unwrap(), [7, u64::MAX]);
    assert!(back.u64("n").is_err());
    assert!(back.tensor("text").is_err());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad, Path::new("mem")).unwrap_err().to_string().contains("magic"));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    let mut newer = bytes;
    newer[8] = 9;
    assert!(Checkpoint::from_bytes(&newer, Path::new("mem")).unwrap_err().to_string().contains("version"));
}

#[test]
fn config_presets_overrides_and_unknown_keys() {
    let text = r#"
[model]
preset = "toy"
synthesis = "weighted"
seed = 4

[model.attention]
swap_patch = 3

[model.loss_weights]
style = 50.0

[train]
steps = 12
families = ["checker"]
manifest = "data/list.tsv"
"#;
    let cfg = RunConfig::parse(text, Path::new("/runs")).unwrap();
    assert_eq!(cfg.model.base_channels, 8);
    assert_eq!(cfg.model.synthesis, Synthesis::Weighted);
    assert_eq!(cfg.model.attention.swap_patch, 3);
    assert_eq!(cfg.model.attention.sim_patch, 3);
    assert_eq!(cfg.model.loss_weights.style, 50.0);
    assert_eq!(cfg.model.loss_weights.per, 0.1);
    assert_eq!(cfg.train.steps, 12);
    assert_eq!(cfg.train.batch_size, 4);
    assert_eq!(cfg.train.families, [TextureFamily::Checker]);
    assert_eq!(cfg.train.manifest.as_deref(), Some(Path::new("/runs/data/list.tsv")));

    let again = RunConfig::parse(&cfg.to_toml().unwrap(), Path::new("/elsewhere")).unwrap();
    assert_eq!(again, cfg);

    let full = RunConfig::parse("[model]\npreset = \"full-256\"\n[train]\npreset = \"full\"\n", Path::new(".")).unwrap();
    assert_eq!((full.model.input_size, full.train.batch_size), (256, 16));

    for bad in [
        "[model]\nlevles = 3\n",
        "[train]\nstep = 3\n",
        "[model.attention]\nswap = 3\n",
        "[other]\nx = 1\n",
        "[model]\npreset = \"huge\"\n",
        "[model]\ninput_size = 48\nlevels = 4\n",
        "[train]\nbatch_size = 0\n",
    ] {
        assert!(matches!(RunConfig::parse(bad, Path::new(".")), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn zero_learning_rates_leave_parameters_unchanged() {
    let mut cfg = small(1);
    cfg.train.lr_g = 0.0;
    cfg.train.lr_d = 0.0;
    let mut state = TrainState::new(cfg).unwrap();
    let (g, d) = (state.generator.params.fingerprint(), state.discriminator.params.fingerprint());
    for _ in 0..3 {
        state.advance().unwrap();
    }
    assert_eq!(state.generator.params.fingerprint(), g);
    assert_eq!(state.discriminator.params.fingerprint(), d);
    assert_eq!(state.step, 3);
}

#[test]
fn updates_touch_only_their_own_network() {
    let mut cfg = small(2);
    cfg.train.lr_g = 0.0;
    let mut state = TrainState::new(cfg.clone()).unwrap();
    let (g, d) = (state.generator.params.fingerprint(), state.discriminator.params.fingerprint());
    state.advance().unwrap();
    assert_eq!(state.generator.params.fingerprint(), g);
    assert_ne!(state.discriminator.params.fingerprint(), d);

    cfg.train.lr_g = 1e-4;
    cfg.train.lr_d = 0.0;
    let mut state = TrainState::new(cfg).unwrap();
    let (g, d) = (state.generator.params.fingerprint(), state.discriminator.params.fingerprint());
    state.advance().unwrap();
    assert_ne!(state.generator.params.fingerprint(), g);
    assert_eq!(state.discriminator.params.fingerprint(), d);
}

fn constant_image_run(cfg: RunConfig) -> Vec<f32> {
    let mut state = TrainState::new(cfg).unwrap();
    // one constant-color image under one fixed mask
    let mut gt = Tensor::zeros(&[2, 3, 32, 32]).unwrap();
    for (i, v) in gt.data_mut().iter_mut().enumerate() {
        *v = [0.4, -0.3, 0.1][(i / 1024) % 3];
    }
    let template = state.batch(tta_core::data::Split::Train, 0).unwrap();
    let batch = Batch::new(gt, template.mask).unwrap();
    (0..50).map(|_| state.train_step(&batch).unwrap().rec).collect()
}

fn assert_strictly_decreasing(seed: u64, recs: &[f32]) {
    let bumps: Vec<usize> = (1..recs.len()).filter(|&i| recs[i] >= recs[i - 1]).collect();
    assert!(bumps.is_empty(), "seed {seed}: l_rec failed to decrease at steps {bumps:?}: {recs:?}");
}

// Default perceptual and style weights, adversary off.  The style term is
// weighted 100x and dominates the objective, so l_rec is not what the
// optimizer primarily descends; this is known to fail for some seeds.
#[test]
fn reconstruction_loss_strictly_decreases_without_adversary() {
    for seed in 0..5 {
        let mut cfg = small(seed);
        cfg.model.loss_weights.adv = 0.0;
        assert_strictly_decreasing(seed, &constant_image_run(cfg));
    }
}

#[test]
fn reconstruction_only_objective_strictly_decreases() {
    for seed in 0..5 {
        let mut cfg = small(seed);
        let w = &mut cfg.model.loss_weights;
        (w.adv, w.per, w.style) = (0.0, 0.0, 0.0);
        assert_strictly_decreasing(seed, &constant_image_run(cfg));
    }
}

#[test]
fn nonfinite_loss_aborts_with_diagnostic() {
    let mut state = TrainState::new(small(3)).unwrap();
    let id = state.generator.params.find("generator/head/rgb/feature_bias").unwrap();
    state.generator.params.get_mut(id).data_mut()[0] = f32::NAN;
    match state.advance() {
        Err(Error::NonFinite { step, detail }) => {
            assert_eq!(step, 1);
            assert!(detail.contains("l_d") && detail.contains("pred range"), "{detail}");
        }
        other => panic!("expected a non-finite error, got {:?}", other.map(|r| r.to_line())),
    }
}

#[test]
fn resumed_run_reproduces_uninterrupted_losses_bitwise() {
    let cfg = small(5);
    let dir = tempfile::tempdir().unwrap();
    let full = train(&cfg, &TrainOptions::default()).unwrap();

    let first = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        stop_at: Some(4),
        ..TrainOptions::default()
    };
    let a = train(&cfg, &first).unwrap();
    let ckpt = a.final_checkpoint.clone().unwrap();
    let resumed = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        resume: Some(ckpt),
        ..TrainOptions::default()
    };
    let b = train(&cfg, &resumed).unwrap();
    let joined: Vec<LogRecord> = a.log.iter().chain(&b.log).copied().collect();
    assert_eq!(joined.len(), 10);
    for (x, y) in joined.iter().zip(&full.log) {
        assert_eq!(x.to_line(), y.to_line());
        assert_eq!(x.total.to_bits(), y.total.to_bits());
    }
    assert_eq!(b.state.generator.params.fingerprint(), full.state.generator.params.fingerprint());

    let log = std::fs::read_to_string(dir.path().join("train_log.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LogRecord::HEADER);
    assert_eq!(lines.len(), 11);
    for (line, rec) in lines[1..].iter().zip(&full.log) {
        assert_eq!(*line, rec.to_line());
    }
    assert!(dir.path().join("final.ckpt").exists());
    assert!(dir.path().join("metrics.tsv").exists());
    assert!(dir.path().join("samples/final.png").exists());
}

#[test]
fn checkpoint_restores_full_state() {
    let mut state = TrainState::new(small(6)).unwrap();
    state.advance().unwrap();
    state.advance().unwrap();
    let ck = state.to_checkpoint().unwrap();
    let back = TrainState::from_checkpoint(&ck, None).unwrap();
    assert_eq!(back.step, 2);
    assert_eq!(back.opt_g.t, 2);
    assert_eq!(back.config, state.config);
    assert_eq!(back.generator.params.fingerprint(), state.generator.params.fingerprint());
    for (a, b) in back.discriminator.layers.iter().zip(&state.discriminator.layers) {
        assert_eq!(a.u, b.u);
    }
    assert_eq!(back.extractor.seed, state.extractor.seed);
    let mut other = small(6);
    other.model.base_channels = 8;
    assert!(matches!(TrainState::from_checkpoint(&ck, Some(&other)), Err(Error::Config(_))));
}

#[test]
fn periodic_checkpoints_and_samples_are_written() {
    let mut cfg = small(7);
    cfg.train.steps = 4;
    cfg.train.checkpoint_every = 2;
    let dir = tempfile::tempdir().unwrap();
    let out = train(
        &cfg,
        &TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    for f in ["checkpoints/step_000002.ckpt", "checkpoints/step_000004.ckpt", "samples/step_000002.png"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let strip = tta_core::data::load_image(dir.path().join("samples/step_000004.png")).unwrap();
    assert_eq!(strip.shape(), [1, 3, 32, 96]);
    assert_eq!(out.report.rows.len(), 2);
}

#[test]
fn ablation_reports_every_variant() {
    let mut cfg = small(8);
    cfg.train.steps = 2;
    let report = tta_core::trainer::ablate(&cfg, &[Synthesis::Tta, Synthesis::Off], &TrainOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.get(Synthesis::Off).unwrap().l1_hole.is_finite());
    assert!(report.to_tsv().contains("\noff\t"));
}
