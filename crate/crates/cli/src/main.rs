//! `tta`: masks, training, inference, evaluation and attention benchmarks.
//!
//! Failures print one line `error[<kind>]: <message>` to stderr and exit
//! with 2 (usage), 3 (data) or 4 (numeric failure).

mod bench;

use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use tta_core::data::{self, MaskSpec};
use tta_core::metrics::MetricReport;
use tta_core::model::{composite_tensor, Synthesis};
use tta_core::trainer::{self, RunConfig, TrainOptions};
use tta_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numeric,
}

impl Kind {
    fn code(self) -> u8 {
        match self {
            Kind::Usage => 2,
            Kind::Data => 3,
            Kind::Numeric => 4,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub msg: String,
}

impl Failure {
    pub fn new(kind: Kind, msg: impl Into<String>) -> Self {
        Self { kind, msg: msg.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one line, so callers can split on the first ": "
        write!(f, "error[{}]: {}", self.kind.tag(), self.msg.replace('\n', " "))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::Config(_) => Kind::Usage,
            Error::NonFinite { .. } => Kind::Numeric,
            _ => Kind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "tta", version, about = "Texture transform attention inpainting at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate free-form hole masks and a manifest.
    Masks(MasksArgs),
    /// Train (or resume) a model.
    Train(TrainArgs),
    /// Fill the holes of one image with a trained generator.
    Inpaint(InpaintArgs),
    /// Score a trained generator over a manifest or the held-out stream.
    Eval(EvalArgs),
    /// Time argmax swap against weighted-sum attention and check the oracle.
    BenchAttention(bench::BenchArgs),
    /// Train synthesis variants under identical seeds and compare them.
    Ablate(AblateArgs),
}

#[derive(clap::Args, Debug)]
struct MasksArgs {
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0.10)]
    min_ratio: f32,
    #[arg(long, default_value_t = 0.40)]
    max_ratio: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// TOML run config; the toy preset when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    /// Progress line interval in steps (0 disables).
    #[arg(long, default_value_t = 100)]
    progress: u64,
}

#[derive(clap::Args, Debug)]
struct InpaintArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Single-channel mask, white = hole.
    #[arg(long)]
    mask: PathBuf,
    /// Output image, relative to --out-dir.
    #[arg(long, default_value = "inpainted.png")]
    out: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// `path<TAB>seed<TAB>family` lines; each image gets the mask drawn from
    /// its seed.  The held-out procedural stream is used when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Held-out images to score without a manifest; the run's setting when absent.
    #[arg(long)]
    count: Option<usize>,
    /// Report file, relative to --out-dir.
    #[arg(long, default_value = "metrics.tsv")]
    out_report: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated variants out of tta, tta_unnormalized, weighted, concat, off.
    #[arg(long, value_delimiter = ',', default_value = "tta,tta_unnormalized,weighted,concat,off")]
    toggles: Vec<String>,
    #[arg(long, default_value = "ablation")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    progress: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Swap,
    Weighted,
    Both,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", Failure::new(Kind::Usage, first));
            return ExitCode::from(Kind::Usage.code());
        }
    };
    let outcome = match cli.command {
        Command::Masks(a) => masks(a),
        Command::Train(a) => train(a),
        Command::Inpaint(a) => inpaint(a),
        Command::Eval(a) => eval(a),
        Command::BenchAttention(a) => bench::run(a),
        Command::Ablate(a) => ablate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.kind.code())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(Kind::Data, format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

pub fn write_file(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

/// `path` inside `out_dir`; absolute paths are accepted only when they
/// already lie there, and `..` may not climb out.
pub fn under(out_dir: &Path, path: &Path) -> CliResult<PathBuf> {
    let inside = if path.is_absolute() {
        path.starts_with(out_dir)
    } else {
        let mut depth = 0i32;
        path.components().all(|c| {
            match c {
                Component::ParentDir => depth -= 1,
                Component::Normal(_) => depth += 1,
                _ => {}
            }
            depth >= 0
        })
    };
    if !inside {
        return Err(Failure::new(
            Kind::Usage,
            format!("{} is outside --out-dir {}", path.display(), out_dir.display()),
        ));
    }
    Ok(if path.is_absolute() { path.to_path_buf() } else { out_dir.join(path) })
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::toy(),
    })
}

/// Seed of mask `i` of a `masks` run.
pub fn mask_seed(seed: u64, i: usize) -> u64 {
    data::mix(data::mix(seed ^ 0x6d61_736b).wrapping_add(i as u64))
}

fn masks(a: MasksArgs) -> CliResult {
    let spec = MaskSpec {
        min_ratio: a.min_ratio,
        max_ratio: a.max_ratio,
        ..MaskSpec::for_size(a.size)
    };
    let problems = spec.violations();
    if !problems.is_empty() {
        return Err(Failure::new(Kind::Usage, problems.join("; ")));
    }
    ensure_dir(&a.out_dir)?;
    let mut entries = Vec::with_capacity(a.count);
    let mut ratios = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let seed = mask_seed(a.seed, i);
        let mask = data::generate_mask(&spec.with_seed(seed))?;
        let name = format!("mask_{i:04}.png");
        data::save_mask(a.out_dir.join(&name), &mask)?;
        ratios.push(data::hole_ratio(&mask));
        entries.push((name, seed, "mask".to_string()));
    }
    let manifest = a.out_dir.join("masks.tsv");
    write_file(&manifest, &data::format_manifest(&entries))?;
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| (l.min(r), h.max(r)));
    if a.count > 0 {
        println!("wrote {} masks to {} (hole ratio {lo:.3}..{hi:.3})", a.count, a.out_dir.display());
    }
    println!("manifest {}", manifest.display());
    Ok(())
}

fn print_report(report: &MetricReport) {
    let [full, hole, ms] = report.summary();
    println!(
        "{} images: l1_full {:.5} ± {:.5}  l1_hole {:.5} ± {:.5}  ms_ssim {:.5} ± {:.5}",
        report.rows.len(),
        full.0,
        full.1,
        hole.0,
        hole.1,
        ms.0,
        ms.1
    );
}

fn train(a: TrainArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    let opts = TrainOptions {
        out_dir: Some(a.out_dir.clone()),
        resume: a.resume,
        stop_at: None,
        progress: Some(a.progress),
    };
    let started = Instant::now();
    let out = trainer::train(&cfg, &opts)?;
    println!(
        "trained to step {} in {:.1}s; final checkpoint {}",
        out.state.step,
        started.elapsed().as_secs_f64(),
        out.final_checkpoint.as_deref().unwrap_or(Path::new("-")).display()
    );
    print_report(&out.report);
    Ok(())
}

fn inpaint(a: InpaintArgs) -> CliResult {
    let out_path = under(&a.out_dir, &a.out)?;
    let (cfg, generator) = trainer::load_generator(&a.ckpt)?;
    let gt = data::load_image(&a.image)?;
    let mask = data::load_mask(&a.mask)?;
    if gt.shape()[2..] != mask.shape()[2..] {
        return Err(Failure::new(
            Kind::Data,
            format!("image is {:?} but mask is {:?}", &gt.shape()[2..], &mask.shape()[2..]),
        ));
    }
    let ratio = data::hole_ratio(&mask);
    let (lo, hi) = (cfg.train.mask_min_ratio as f64, cfg.train.mask_max_ratio as f64);
    if !(lo..=hi).contains(&ratio) {
        eprintln!("warning: hole ratio {ratio:.3} is outside the trained band [{lo:.2}, {hi:.2}]");
    }
    let batch = data::Batch::new(gt, mask)?;
    let started = Instant::now();
    let (pred, _) = generator.infer(&batch.z, &batch.mask)?;
    let elapsed = started.elapsed();
    let comp = composite_tensor(&pred, &batch.gt, &batch.mask)?;
    if let Some(parent) = out_path.parent() {
        ensure_dir(parent)?;
    }
    data::save_image(&out_path, &comp)?;
    println!(
        "inpainted {}x{} (hole ratio {ratio:.3}) in {:.1} ms -> {}",
        comp.dim(3),
        comp.dim(2),
        elapsed.as_secs_f64() * 1e3,
        out_path.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let report_path = under(&a.out_dir, &a.out_report)?;
    let report = match &a.manifest {
        Some(manifest) => {
            let (cfg, generator) = trainer::load_generator(&a.ckpt)?;
            let entries = data::read_manifest(manifest)?;
            let mut report = MetricReport::default();
            for e in entries {
                let gt = data::load_image(&e.path)?;
                if gt.dim(2) != gt.dim(3) {
                    return Err(Failure::new(Kind::Data, format!("{} is not square", e.path.display())));
                }
                let spec = MaskSpec {
                    min_ratio: cfg.train.mask_min_ratio,
                    max_ratio: cfg.train.mask_max_ratio,
                    ..MaskSpec::for_size(gt.dim(2))
                };
                let mask = data::generate_mask(&spec.with_seed(e.seed))?;
                let batch = data::Batch::new(gt, mask)?;
                let (pred, _) = generator.infer(&batch.z, &batch.mask)?;
                let comp = composite_tensor(&pred, &batch.gt, &batch.mask)?;
                let name = e.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                report.push(name, &batch.gt, &comp, &batch.mask)?;
            }
            report
        }
        None => {
            let state = trainer::TrainState::load(&a.ckpt, None)?;
            state.evaluate(a.count.unwrap_or(state.config.train.eval_images))?
        }
    };
    if report.rows.is_empty() {
        return Err(Failure::new(Kind::Data, "nothing to evaluate"));
    }
    if let Some(parent) = report_path.parent() {
        ensure_dir(parent)?;
    }
    write_file(&report_path, &report.to_tsv())?;
    print_report(&report);
    println!("report {}", report_path.display());
    Ok(())
}

fn ablate(a: AblateArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    let variants = a
        .toggles
        .iter()
        .map(|t| {
            Synthesis::parse(t.trim()).ok_or_else(|| {
                let known: Vec<&str> = Synthesis::ALL.iter().map(|v| v.name()).collect();
                Failure::new(Kind::Usage, format!("unknown toggle {t:?} (expected one of {})", known.join(", ")))
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let opts = TrainOptions {
        out_dir: Some(a.out_dir.clone()),
        progress: Some(a.progress),
        ..TrainOptions::default()
    };
    let report = trainer::ablate(&cfg, &variants, &opts)?;
    print!("{}", report.to_tsv());
    println!("report {}", a.out_dir.join("ablation.tsv").display());
    Ok(())
}
