//! Alternating discriminator/generator optimization, checkpoints and
//! reproducible runs.
//!
//! Batch `k` of a run is a pure function of `(train.seed, k)`, so a resumed
//! run sees exactly the batches an uninterrupted one would.

pub mod adam;
pub mod checkpoint;
pub mod config;

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, Value};
pub use config::{RunConfig, TrainConfig};

use crate::data::{self, image, Batch, MaskSpec, Source, Split};
use crate::error::{Error, Result};
use crate::losses::{adv_d_loss, adv_g_loss, perceptual_loss, rec_loss, style_loss, total_loss, LossParts, PerceptualExtractor};
use crate::metrics::MetricReport;
use crate::model::{build, composite, composite_tensor, Discriminator, Generator, Synthesis};
use crate::params::{Bound, ParamStore};
use crate::tensor::{kernels, Tape, Tensor, Var};

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub rec: f32,
    pub adv_g: f32,
    pub adv_d: f32,
    pub per: f32,
    pub style: f32,
    pub total: f32,
}

impl LogRecord {
    pub const HEADER: &'static str = "step\tl_rec\tl_g\tl_d\tl_per\tl_style\ttotal";

    /// Shortest round-trip decimal forms, so equal lines mean equal bits.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step, self.rec, self.adv_g, self.adv_d, self.per, self.style, self.total
        )
    }
}

/// Everything that determines the next training step.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: RunConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub extractor: PerceptualExtractor,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Completed steps.
    pub step: u64,
    source: Source,
    masks: MaskSpec,
}

fn grads_of(tape: &Tape, bound: &Bound, loss: &Var) -> Result<Vec<Tensor>> {
    let g = tape.backward(loss)?;
    Ok(bound.iter().map(|(_, v)| g.wrt(v)).collect())
}

fn extractor_seed(cfg: &RunConfig) -> u64 {
    cfg.train.extractor_seed.unwrap_or_else(|| data::mix(cfg.model.seed ^ 0x7065_7263))
}

fn load_source(cfg: &TrainConfig, size: usize) -> Result<Source> {
    let Some(manifest) = &cfg.manifest else {
        return Ok(Source::Procedural(cfg.families.clone()));
    };
    let entries = data::read_manifest(manifest)?;
    let mut images = Vec::with_capacity(entries.len());
    for e in entries {
        let img = data::load_image(&e.path)?;
        if img.shape() != [1, 3, size, size] {
            return Err(Error::Parameter(format!(
                "{} is {:?}, expected {size}x{size}",
                e.path.display(),
                &img.shape()[2..]
            )));
        }
        images.push(img);
    }
    Ok(Source::Images(images))
}

fn nonfinite(step: u64, parts: &[(&str, f32)], pred: &Tensor) -> Error {
    let mut detail = String::new();
    for (name, v) in parts {
        let _ = write!(detail, "{name}={v} ");
    }
    let (lo, hi) = pred.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let _ = write!(detail, "pred range [{lo}, {hi}], pred finite {}", pred.is_finite());
    Error::NonFinite { step, detail }
}

impl TrainState {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (generator, discriminator) = build(&config.model)?;
        let t = &config.train;
        let opt_g = Adam::new(&generator.params, t.lr_g, t.beta1, t.beta2);
        let opt_d = Adam::new(&discriminator.params, t.lr_d, t.beta1, t.beta2);
        let extractor = PerceptualExtractor::new(extractor_seed(&config));
        let source = load_source(t, config.model.input_size)?;
        let masks = MaskSpec {
            min_ratio: t.mask_min_ratio,
            max_ratio: t.mask_max_ratio,
            ..MaskSpec::for_size(config.model.input_size)
        };
        Ok(Self {
            config,
            generator,
            discriminator,
            extractor,
            opt_g,
            opt_d,
            step: 0,
            source,
            masks,
        })
    }

    /// Training batch `index` (0-based).
    pub fn batch(&self, split: Split, index: u64) -> Result<Batch> {
        let t = &self.config.train;
        data::make_batch(&self.source, &self.masks, self.config.model.input_size, t.batch_size, t.seed, split, index)
    }

    /// Draws the next training batch and runs one step on it.
    pub fn advance(&mut self) -> Result<LogRecord> {
        let batch = self.batch(Split::Train, self.step)?;
        self.train_step(&batch)
    }

    /// One discriminator update on detached inputs, then one generator
    /// update against the refreshed discriminator.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LogRecord> {
        let step = self.step + 1;
        let n = batch.len();
        let tape = Tape::new();
        let pg = self.generator.params.bind(&tape, true);
        let gt = tape.constant(batch.gt.clone());
        let pred = self.generator.forward(&pg, &tape.constant(batch.z.clone()), &batch.mask)?.pred;
        let comp = composite(&pred, &gt, &batch.mask)?;

        let g_print = cfg!(debug_assertions).then(|| self.generator.params.fingerprint());
        let d_tape = Tape::new();
        let pd = self.discriminator.params.bind(&d_tape, true);
        // real and fake share one forward so each step advances the power
        // iteration once
        let both = kernels::concat(&[&batch.gt, comp.value()], 0)?;
        let masks = kernels::concat(&[&batch.mask, &batch.mask], 0)?;
        let scores = self.discriminator.forward(&pd, &d_tape.constant(both), &masks, true)?;
        let l_d = adv_d_loss(&scores.slice(0, 0, n)?, &scores.slice(0, n, n)?)?;
        let ld = l_d.value().item();
        if !ld.is_finite() {
            return Err(nonfinite(step, &[("l_d", ld)], pred.value()));
        }
        let gd = grads_of(&d_tape, &pd, &l_d)?;
        self.opt_d.step(&mut self.discriminator.params, &gd)?;
        if let Some(before) = g_print {
            assert_eq!(before, self.generator.params.fingerprint(), "discriminator update touched the generator");
        }

        let d_print = cfg!(debug_assertions).then(|| self.discriminator.params.fingerprint());
        let pd = self.discriminator.params.bind(&tape, false);
        let fake = self.discriminator.forward(&pd, &comp, &batch.mask, false)?;
        let parts = LossParts {
            rec: rec_loss(&gt, &pred)?,
            adv: adv_g_loss(&fake),
            per: perceptual_loss(&self.extractor, &gt, &pred)?,
            style: style_loss(&self.extractor, &comp, &pred)?,
        };
        let total = total_loss(&self.config.model.loss_weights, &parts)?;
        let record = LogRecord {
            step,
            rec: parts.rec.value().item(),
            adv_g: parts.adv.value().item(),
            adv_d: ld,
            per: parts.per.value().item(),
            style: parts.style.value().item(),
            total: total.value().item(),
        };
        if !record.total.is_finite() {
            let named = [
                ("l_rec", record.rec),
                ("l_g", record.adv_g),
                ("l_d", record.adv_d),
                ("l_per", record.per),
                ("l_style", record.style),
                ("total", record.total),
            ];
            return Err(nonfinite(step, &named, pred.value()));
        }
        let gg = grads_of(&tape, &pg, &total)?;
        self.opt_g.step(&mut self.generator.params, &gg)?;
        if let Some(before) = d_print {
            assert_eq!(before, self.discriminator.params.fingerprint(), "generator update touched the discriminator");
        }
        self.step = step;
        Ok(record)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.insert("config", Value::Bytes(self.config.to_toml()?.into_bytes()));
        ck.insert("state/step", Value::U64(vec![self.step]));
        // the batch stream is positional: its whole state is (seed, step)
        ck.insert("rng/stream", Value::U64(vec![self.config.train.seed, self.step]));
        ck.insert("extractor/seed", Value::U64(vec![extractor_seed(&self.config)]));
        put_store(&mut ck, &self.generator.params, &self.opt_g, "optim/generator");
        put_store(&mut ck, &self.discriminator.params, &self.opt_d, "optim/discriminator");
        for (i, layer) in self.discriminator.layers.iter().enumerate() {
            let u = Tensor::new(&[layer.u.len()], layer.u.clone())?;
            ck.insert(format!("discriminator/{i}/conv/u"), Value::F32(u));
        }
        Ok(ck)
    }

    /// Rebuilds a state from a checkpoint.  When `config` is given, its
    /// model section must equal the stored one; its train section replaces
    /// the stored one (so a run can be extended).
    pub fn from_checkpoint(ck: &Checkpoint, config: Option<&RunConfig>) -> Result<Self> {
        let text = String::from_utf8(ck.bytes("config")?.to_vec())
            .map_err(|_| Error::Parameter("checkpoint config is not UTF-8".into()))?;
        let stored = RunConfig::parse(&text, Path::new(""))?;
        let cfg = match config {
            Some(c) if c.model != stored.model => {
                return Err(Error::Config(vec!["model section differs from the checkpoint's".into()]));
            }
            Some(c) => RunConfig {
                model: stored.model,
                train: c.train.clone(),
            },
            None => stored,
        };
        let seed = ck.u64("extractor/seed")?;
        let mut state = Self::new(cfg)?;
        if extractor_seed(&state.config) != seed {
            state.extractor = PerceptualExtractor::new(seed);
        }
        state.step = ck.u64("state/step")?;
        take_store(ck, &mut state.generator.params, &mut state.opt_g, "optim/generator")?;
        take_store(ck, &mut state.discriminator.params, &mut state.opt_d, "optim/discriminator")?;
        for (i, layer) in state.discriminator.layers.iter_mut().enumerate() {
            let u = ck.tensor(&format!("discriminator/{i}/conv/u"))?;
            if u.numel() != layer.u.len() {
                return Err(Error::Parameter(format!("discriminator/{i}/conv/u has the wrong length")));
            }
            layer.u = u.data().to_vec();
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path, config: Option<&RunConfig>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, config)
    }

    /// Metrics of the composited output on the first `count` held-out images.
    pub fn evaluate(&self, count: usize) -> Result<MetricReport> {
        let mut report = MetricReport::default();
        let mut index = 0;
        while report.rows.len() < count {
            let batch = self.batch(Split::Holdout, index)?;
            let (pred, _) = self.generator.infer(&batch.z, &batch.mask)?;
            let comp = composite_tensor(&pred, &batch.gt, &batch.mask)?;
            for i in 0..batch.len().min(count - report.rows.len()) {
                let (g, c) = (batch.sample(i)?, slice_sample(&comp, i)?);
                report.push(format!("holdout_{index}_{i}"), &g.gt, &c, &g.mask)?;
            }
            index += 1;
        }
        Ok(report)
    }

    /// `original | masked | inpainted` strip of held-out sample 0.
    pub fn sample_strip(&self) -> Result<Tensor> {
        let batch = self.batch(Split::Holdout, 0)?.sample(0)?;
        let (pred, _) = self.generator.infer(&batch.z, &batch.mask)?;
        let comp = composite_tensor(&pred, &batch.gt, &batch.mask)?;
        image::triptych(&[&batch.gt, &batch.z, &comp])
    }
}

fn slice_sample(t: &Tensor, i: usize) -> Result<Tensor> {
    let [_, c, h, w] = t.dims4("slice_sample")?;
    Tensor::new(&[1, c, h, w], t.data()[i * c * h * w..][..c * h * w].to_vec())
}

fn put_store(ck: &mut Checkpoint, store: &ParamStore, opt: &Adam, opt_prefix: &str) {
    ck.insert(format!("{opt_prefix}/t"), Value::U64(vec![opt.t]));
    for (i, (name, value)) in store.iter().enumerate() {
        ck.insert(name, Value::F32(value.clone()));
        ck.insert(format!("{opt_prefix}/m/{name}"), Value::F32(opt.m[i].clone()));
        ck.insert(format!("{opt_prefix}/v/{name}"), Value::F32(opt.v[i].clone()));
    }
}

fn take_store(ck: &Checkpoint, store: &mut ParamStore, opt: &mut Adam, opt_prefix: &str) -> Result<()> {
    opt.t = ck.u64(&format!("{opt_prefix}/t"))?;
    let ids: Vec<_> = store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let name = store.name(id).to_string();
        let fetch = |key: &str| -> Result<Tensor> {
            let t = ck.tensor(key)?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::Parameter(format!(
                    "checkpoint {key} has shape {:?}, model expects {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            Ok(t.clone())
        };
        let value = fetch(&name)?;
        opt.m[i] = fetch(&format!("{opt_prefix}/m/{name}"))?;
        opt.v[i] = fetch(&format!("{opt_prefix}/v/{name}"))?;
        *store.get_mut(id) = value;
    }
    Ok(())
}

/// The stored run config and generator of a checkpoint, without the data
/// source, discriminator or optimizer state; enough for inference.
pub fn load_generator(path: &Path) -> Result<(RunConfig, Generator)> {
    let ck = Checkpoint::load(path)?;
    let text = String::from_utf8(ck.bytes("config")?.to_vec())
        .map_err(|_| Error::Parameter("checkpoint config is not UTF-8".into()))?;
    let cfg = RunConfig::parse(&text, Path::new(""))?;
    let (mut generator, _) = build(&cfg.model)?;
    let ids: Vec<_> = generator.params.ids().collect();
    for id in ids {
        let t = ck.tensor(generator.params.name(id))?;
        if t.shape() != generator.params.get(id).shape() {
            return Err(Error::Parameter(format!(
                "checkpoint {} has shape {:?}, model expects {:?}",
                generator.params.name(id),
                t.shape(),
                generator.params.get(id).shape()
            )));
        }
        *generator.params.get_mut(id) = t.clone();
    }
    Ok((cfg, generator))
}

/// Where and how a run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Logs, checkpoints, samples and metrics land here; nothing is written
    /// when absent.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Halt after this many completed steps (before `train.steps`).
    pub stop_at: Option<u64>,
    /// Print a progress line to stderr every this many steps.
    pub progress: Option<u64>,
}

pub struct TrainOutcome {
    pub state: TrainState,
    /// Records of the steps run by this call.
    pub log: Vec<LogRecord>,
    pub report: MetricReport,
    pub final_checkpoint: Option<PathBuf>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Runs (or resumes) training, then scores the held-out images.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let mut state = match &opts.resume {
        Some(path) => TrainState::load(path, Some(cfg))?,
        None => TrainState::new(cfg.clone())?,
    };
    let target = opts.stop_at.unwrap_or(cfg.train.steps).min(cfg.train.steps);
    let mut log_file = None;
    if let Some(dir) = &opts.out_dir {
        for sub in ["checkpoints", "samples"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| io_err(&dir.join(sub), e))?;
        }
        let path = dir.join("train_log.tsv");
        let fresh = state.step == 0 || !path.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        if fresh {
            writeln!(f, "{}", LogRecord::HEADER).map_err(|e| io_err(&path, e))?;
        }
        log_file = Some((path, f));
    }

    let mut log = Vec::new();
    while state.step < target {
        let record = match state.advance() {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                if let Some(dir) = &opts.out_dir {
                    let dump = dir.join(format!("nonfinite_step_{:06}.txt", state.step + 1));
                    let _ = fs::write(&dump, format!("{e}\nconfig:\n{}", state.config.to_toml().unwrap_or_default()));
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some((path, f)) = &mut log_file {
            writeln!(f, "{}", record.to_line()).map_err(|e| io_err(path, e))?;
        }
        if let Some(every) = opts.progress.filter(|&k| k > 0) {
            if record.step % every == 0 {
                eprintln!("step {} {}", record.step, record.to_line());
            }
        }
        log.push(record);
        let every = cfg.train.checkpoint_every;
        if let (Some(dir), true) = (&opts.out_dir, every > 0 && state.step % every == 0) {
            state.save(&dir.join(format!("checkpoints/step_{:06}.ckpt", state.step)))?;
            image::save_image(dir.join(format!("samples/step_{:06}.png", state.step)), &state.sample_strip()?)?;
        }
    }

    let report = state.evaluate(cfg.train.eval_images.max(1))?;
    let mut final_checkpoint = None;
    if let Some(dir) = &opts.out_dir {
        let path = dir.join(if state.step >= cfg.train.steps { "final.ckpt".to_string() } else { format!("checkpoints/step_{:06}.ckpt", state.step) });
        state.save(&path)?;
        final_checkpoint = Some(path);
        image::save_image(dir.join("samples/final.png"), &state.sample_strip()?)?;
        let metrics = dir.join("metrics.tsv");
        fs::write(&metrics, report.to_tsv()).map_err(|e| io_err(&metrics, e))?;
    }
    Ok(TrainOutcome {
        state,
        log,
        report,
        final_checkpoint,
    })
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Synthesis,
    pub l1_full: f64,
    pub l1_hole: f64,
    pub ms_ssim: f64,
    /// Mean total loss over the last 50 steps.
    pub final_total: f64,
}

#[derive(Clone, Debug, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, variant: Synthesis) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant\tl1_full\tl1_hole\tms_ssim\tfinal_total\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.variant.name(),
                r.l1_full,
                r.l1_hole,
                r.ms_ssim,
                r.final_total
            );
        }
        s
    }
}

/// Trains each variant from the same seeds and scores it on the same
/// held-out images.  Each variant's artifacts go to `out_dir/<variant>`.
pub fn ablate(cfg: &RunConfig, variants: &[Synthesis], opts: &TrainOptions) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for &variant in variants {
        let mut run = cfg.clone();
        run.model.synthesis = variant;
        let sub = TrainOptions {
            out_dir: opts.out_dir.as_ref().map(|d| d.join(variant.name())),
            resume: None,
            ..opts.clone()
        };
        let out = train(&run, &sub)?;
        let [full, hole, ms] = out.report.summary();
        let tail = &out.log[out.log.len().saturating_sub(50)..];
        let final_total = tail.iter().map(|r| r.total as f64).sum::<f64>() / tail.len().max(1) as f64;
        report.rows.push(AblationRow {
            variant,
            l1_full: full.0,
            l1_hole: hole.0,
            ms_ssim: ms.0,
            final_total,
        });
    }
    if let Some(dir) = &opts.out_dir {
        let path = dir.join("ablation.tsv");
        fs::write(&path, report.to_tsv()).map_err(|e| io_err(&path, e))?;
    }
    Ok(report)
}
