//! Command-line front end: training, restoration, evaluation, invertibility
//! verification and the mutual-information demo.

pub mod config;
pub mod pnm;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use irae_core::check::round_trip_error;
use irae_core::info::{self, FiniteMap};
use irae_core::metrics::{evaluate_pair, MetricReport};
use irae_core::model::{load_checkpoint, save_checkpoint, IraeConfig, IraeModel, Precision};
use irae_core::synth::synthetic_image;
use irae_core::train::{train_with, History};
use irae_core::{Real, Tensor};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "irae", version, about = "Invertible restoring autoencoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a per-epoch history log.
    Train(TrainArgs),
    /// Run a checkpoint over input images and write the restored images.
    Restore(RestoreArgs),
    /// PSNR/SSIM table between two sets of images matched by file name.
    Eval(EvalArgs),
    /// Round-trip invertibility check of a fresh or saved model.
    Verify(VerifyArgs),
    /// Exhaustive information-preservation check on small discrete maps.
    MiDemo,
    /// Apply a degradation to every image in a directory.
    Degrade(DegradeArgs),
    /// Write seeded synthetic images.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key = value config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set hidden=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for s in &self.sets {
            cfg.set_assignment(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub restored: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Also write the table to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Verify this checkpoint instead of a freshly built random model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Square input size.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command, writing
/// reports to `out`. Returns the process exit code.
pub fn run_with<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock())
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a, out),
        Command::Restore(a) => cmd_restore(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::MiDemo => cmd_mi_demo(out),
        Command::Degrade(a) => cmd_degrade(a, out),
        Command::GenData(a) => cmd_gen_data(a, out),
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    ensure!(jobs >= 1, "--jobs must be at least 1");
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn file_name(p: &Path) -> Result<&std::ffi::OsStr> {
    p.file_name().with_context(|| format!("{} has no file name", p.display()))
}

fn load_dataset(dir: &Path) -> Result<Vec<Tensor<f64>>> {
    let paths = pnm::list_images(dir)?;
    ensure!(!paths.is_empty(), "no .pgm/.ppm images in {}", dir.display());
    paths.iter().map(pnm::load_image).collect()
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(d) = a.dataset {
        cfg.dataset = Some(d);
    }
    if let Some(d) = a.output_dir {
        cfg.output_dir = Some(d);
    }
    if let Some(c) = a.checkpoint {
        cfg.checkpoint = Some(c);
    }
    if let Some(e) = a.epochs {
        cfg.epochs_max = e;
    }
    cfg.validate_for_training()?;
    let images = load_dataset(cfg.dataset.as_deref().expect("validated"))?;
    let (checkpoint, history) = match (&cfg.output_dir, &cfg.checkpoint) {
        (Some(dir), ckpt) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join("run.cfg"), cfg.to_config_string())?;
            (
                ckpt.clone().unwrap_or_else(|| dir.join("model.irae")),
                dir.join("history.jsonl"),
            )
        }
        (None, Some(ckpt)) => (ckpt.clone(), ckpt.with_extension("history.jsonl")),
        (None, None) => unreachable!("validated"),
    };
    let summary = match cfg.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &images, &checkpoint, &history)?,
        Precision::F64 => train_typed::<f64>(&cfg, &images, &checkpoint, &history)?,
    };
    writeln!(out, "{summary}")?;
    writeln!(out, "checkpoint: {}", checkpoint.display())?;
    writeln!(out, "history: {}", history.display())?;
    Ok(0)
}

fn train_typed<T: Real>(
    cfg: &RunConfig,
    images: &[Tensor<f64>],
    checkpoint: &Path,
    history_path: &Path,
) -> Result<String> {
    let images: Vec<Tensor<T>> = images.iter().map(Tensor::cast).collect();
    let model = IraeModel::<T>::build(cfg.model_config())?;
    let mut history_file = fs::File::create(history_path)
        .with_context(|| format!("creating {}", history_path.display()))?;
    let mut write_err = None;
    let outcome = train_with(model, &images, &cfg.train_config(), |r| {
        let line = History {
            records: vec![r.clone()],
        }
        .to_jsonl();
        if let Err(e) = history_file.write_all(line.as_bytes()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing history");
    }
    save_checkpoint(&outcome.model, checkpoint)?;
    Ok(format!(
        "stopped: {:?} after {} epochs; best val PSNR {:.4} dB at epoch {} (initial {:.4} dB)",
        outcome.stop,
        outcome.history.records.len(),
        outcome.best_val_psnr,
        outcome.best_epoch.map_or("-".into(), |e| e.to_string()),
        outcome.initial_val_psnr
    ))
}

/// Loads a checkpoint in the precision recorded in the file.
enum AnyModel {
    F32(IraeModel<f32>),
    F64(IraeModel<f64>),
}

fn load_any(path: &Path) -> Result<AnyModel> {
    let m: IraeModel<f64> =
        load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(match m.config().precision {
        Precision::F32 => AnyModel::F32(m.cast()),
        Precision::F64 => AnyModel::F64(m),
    })
}

fn restore_one<T: Real>(model: &IraeModel<T>, input: &Path, output: &Path) -> Result<()> {
    let y: Tensor<T> = pnm::load_image(input)?;
    let x = model
        .forward(&y)
        .with_context(|| format!("restoring {}", input.display()))?;
    pnm::save_image(&x, output)
}

fn cmd_restore(a: RestoreArgs, out: &mut dyn Write) -> Result<i32> {
    let model = load_any(&a.checkpoint)?;
    let inputs = if a.input.is_dir() {
        pnm::list_images(&a.input)?
    } else {
        vec![a.input.clone()]
    };
    ensure!(!inputs.is_empty(), "no input images in {}", a.input.display());
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let jobs: Vec<(PathBuf, PathBuf)> = inputs
        .iter()
        .map(|p| Ok((p.clone(), a.output.join(file_name(p)?))))
        .collect::<Result<_>>()?;
    pool(a.jobs)?.install(|| {
        jobs.par_iter().try_for_each(|(i, o)| match &model {
            AnyModel::F32(m) => restore_one(m, i, o),
            AnyModel::F64(m) => restore_one(m, i, o),
        })
    })?;
    writeln!(out, "restored {} images into {}", jobs.len(), a.output.display())?;
    Ok(0)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let restored = pnm::list_images(&a.restored)?;
    ensure!(!restored.is_empty(), "no images in {}", a.restored.display());
    let pairs: Vec<(String, PathBuf, PathBuf)> = restored
        .into_iter()
        .map(|r| {
            let name = file_name(&r)?.to_owned();
            let t = a.truth.join(&name);
            ensure!(t.is_file(), "no ground truth {} for {}", t.display(), r.display());
            Ok((name.to_string_lossy().into_owned(), r, t))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<(String, f64, f64)> = pool(a.jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|(name, r, t)| {
                let r: Tensor<f64> = pnm::load_image(r)?;
                let t: Tensor<f64> = pnm::load_image(t)?;
                let (p, s) = evaluate_pair(&r, &t).with_context(|| format!("evaluating {name}"))?;
                Ok((name.clone(), p, s.unwrap_or(f64::NAN)))
            })
            .collect::<Result<_>>()
    })?;
    let mut report = MetricReport::default();
    for (name, p, s) in rows {
        report.push(name, p, s);
    }
    let table = report.to_table();
    out.write_all(table.as_bytes())?;
    if let Some(path) = a.output {
        fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn verify_typed<T: Real>(model: &IraeModel<T>, a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let bound = if T::BITS == 64 { 1e-8 } else { 1e-4 };
    let cfg = model.config();
    writeln!(
        out,
        "model: K={} L={} hidden={} channels={} precision={} params={}",
        cfg.k,
        cfg.levels,
        cfg.hidden,
        cfg.in_channels,
        T::BITS,
        model.param_count()
    )?;
    let err = round_trip_error(model, [cfg.in_channels, a.size, a.size], a.trials, a.seed.wrapping_add(1))?;
    let ok = err < bound;
    writeln!(out, "trials: {} at {}x{}", a.trials, a.size, a.size)?;
    writeln!(out, "max round-trip error: {err:.3e}")?;
    writeln!(out, "{} (bound {bound:e})", if ok { "PASS" } else { "FAIL" })?;
    Ok(if ok { 0 } else { 1 })
}

fn cmd_verify(a: VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    ensure!(a.trials >= 1, "--trials must be at least 1");
    match &a.checkpoint {
        Some(p) => match load_any(p)? {
            AnyModel::F32(m) => verify_typed(&m, &a, out),
            AnyModel::F64(m) => verify_typed(&m, &a, out),
        },
        None => {
            let cfg = IraeConfig {
                k: a.k,
                levels: a.levels,
                hidden: a.hidden,
                in_channels: a.channels,
                precision: a.precision,
                seed: a.seed,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            match a.precision {
                Precision::F32 => {
                    let mut m = IraeModel::<f32>::build(cfg)?;
                    m.randomize(&mut rng);
                    verify_typed(&m, &a, out)
                }
                Precision::F64 => {
                    let mut m = IraeModel::<f64>::build(cfg)?;
                    m.randomize(&mut rng);
                    verify_typed(&m, &a, out)
                }
            }
        }
    }
}

fn cmd_mi_demo(out: &mut dyn Write) -> Result<i32> {
    let mut ok = true;
    writeln!(out, "scenario\tinjective\tH(X)\tI(X;f(X))\tloss\tP(x|z)=1")?;
    let scenarios: Vec<(&str, Vec<f64>, FiniteMap)> = vec![
        ("identity on 4", info::uniform(4), FiniteMap::identity(4)),
        ("x mod 2 on 4", info::uniform(4), FiniteMap::new(vec![0, 1, 0, 1], 2)?),
        ("constant on 4", info::uniform(4), FiniteMap::new(vec![0; 4], 1)?),
        ("reversal on 8", info::uniform(8), FiniteMap::new((0..8).rev().collect(), 8)?),
    ];
    for (name, px, f) in &scenarios {
        let r = info::proposition1_check(px, f)?;
        ok &= r.consistent();
        writeln!(
            out,
            "{name}\t{}\t{:.12}\t{:.12}\t{:.12}\t{}",
            r.injective, r.h_x, r.mi, r.loss, r.posterior_certain
        )?;
    }
    let px = info::uniform(4);
    let (mut injective, mut total, mut min_loss) = (0, 0, f64::INFINITY);
    for f in FiniteMap::enumerate_all(4, 4) {
        let r = info::proposition1_check(&px, &f)?;
        ok &= r.consistent();
        total += 1;
        if r.injective {
            injective += 1;
            ok &= (r.mi - 2.0).abs() <= info::PROB_TOL;
        } else {
            min_loss = min_loss.min(r.loss);
        }
    }
    writeln!(
        out,
        "all maps on |X|=4: {total} maps, {injective} injective (I = H = 2 bits), smallest loss of a non-injective map {min_loss:.6} bits"
    )?;
    writeln!(out, "{}", if ok { "PASS" } else { "FAIL" })?;
    Ok(if ok { 0 } else { 1 })
}

fn cmd_degrade(a: DegradeArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.cfg.resolve()?;
    let spec = cfg.degradation();
    spec.validate()?;
    let inputs = pnm::list_images(&a.input)?;
    ensure!(!inputs.is_empty(), "no images in {}", a.input.display());
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    for (i, p) in inputs.iter().enumerate() {
        let x: Tensor<f64> = pnm::load_image(p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let d = spec.apply(&x, &mut rng)?;
        pnm::save_image(&d.y, a.output.join(file_name(p)?))?;
    }
    writeln!(out, "degraded {} images with {spec:?}", inputs.len())?;
    Ok(0)
}

fn cmd_gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    ensure!(a.count >= 1 && a.size >= 1, "count and size must be positive");
    let ext = match a.channels {
        1 => "pgm",
        3 => "ppm",
        c => bail!("--channels must be 1 or 3, got {c}"),
    };
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let width = a.count.to_string().len();
    for i in 0..a.count {
        let img: Tensor<f64> = synthetic_image(a.channels, a.size, a.size, &mut rng);
        pnm::save_image(&img, a.output.join(format!("{i:0width$}.{ext}")))?;
    }
    writeln!(out, "wrote {} images to {}", a.count, a.output.display())?;
    Ok(0)
}
