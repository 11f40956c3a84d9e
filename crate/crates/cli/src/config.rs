//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. Keys:
//!
//! ```text
//! task        denoise | jpeg | inpaint
//! blind       true | false        (denoise: draw sigma from [sigma_lo, sigma_hi])
//! sigma, sigma_lo, sigma_hi       noise levels on the 0-255 scale
//! quality     JPEG quality factor 1..=100
//! mask_h, mask_w                  inpainting hole size
//! k, levels, hidden, channels     architecture
//! precision   f32 | f64
//! epochs_max, batch_size, seed, val_fraction, clip_norm
//! dataset, checkpoint, output_dir paths
//! ```

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use irae_core::degrade::DegradationSpec;
use irae_core::model::{IraeConfig, Precision};
use irae_core::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Denoise,
    Jpeg,
    Inpaint,
}

impl FromStr for Task {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "denoise" => Task::Denoise,
            "jpeg" => Task::Jpeg,
            "inpaint" => Task::Inpaint,
            _ => bail!("unknown task {s:?} (expected denoise, jpeg or inpaint)"),
        })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Denoise => "denoise",
            Task::Jpeg => "jpeg",
            Task::Inpaint => "inpaint",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub blind: bool,
    pub sigma: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub quality: u8,
    pub mask_h: usize,
    pub mask_w: usize,
    pub k: usize,
    pub levels: usize,
    pub hidden: usize,
    pub channels: usize,
    pub precision: Precision,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub clip_norm: Option<f64>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = IraeConfig::default();
        Self {
            task: Task::Denoise,
            blind: false,
            sigma: 25.0,
            sigma_lo: 0.0,
            sigma_hi: 55.0,
            quality: 40,
            mask_h: 16,
            mask_w: 16,
            k: model.k,
            levels: model.levels,
            hidden: model.hidden,
            channels: model.in_channels,
            precision: model.precision,
            epochs_max: 100,
            batch_size: 16,
            seed: 0,
            val_fraction: 0.1,
            clip_norm: None,
            dataset: None,
            checkpoint: None,
            output_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("bad value {value:?} for {key}: {e}"))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "task" => self.task = parse(key, v)?,
            "blind" => self.blind = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "sigma_lo" => self.sigma_lo = parse(key, v)?,
            "sigma_hi" => self.sigma_hi = parse(key, v)?,
            "quality" => self.quality = parse(key, v)?,
            "mask_h" => self.mask_h = parse(key, v)?,
            "mask_w" => self.mask_w = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "levels" => self.levels = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "precision" => self.precision = parse(key, v)?,
            "epochs_max" => self.epochs_max = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "clip_norm" => self.clip_norm = Some(parse(key, v)?),
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "output_dir" => self.output_dir = Some(PathBuf::from(v)),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .with_context(|| format!("expected key=value, got {assignment:?}"))?;
        self.set(k.trim(), v.trim())
    }

    /// Parses config text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.set_assignment(line).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Every key in a fixed order; unset optional keys are omitted.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| writeln!(s, "{k} = {v}").unwrap();
        kv("task", &self.task);
        kv("blind", &self.blind);
        kv("sigma", &self.sigma);
        kv("sigma_lo", &self.sigma_lo);
        kv("sigma_hi", &self.sigma_hi);
        kv("quality", &self.quality);
        kv("mask_h", &self.mask_h);
        kv("mask_w", &self.mask_w);
        kv("k", &self.k);
        kv("levels", &self.levels);
        kv("hidden", &self.hidden);
        kv("channels", &self.channels);
        kv("precision", &self.precision);
        kv("epochs_max", &self.epochs_max);
        kv("batch_size", &self.batch_size);
        kv("seed", &self.seed);
        kv("val_fraction", &self.val_fraction);
        if let Some(c) = self.clip_norm {
            kv("clip_norm", &c);
        }
        for (k, p) in [
            ("dataset", &self.dataset),
            ("checkpoint", &self.checkpoint),
            ("output_dir", &self.output_dir),
        ] {
            if let Some(p) = p {
                kv(k, &p.display());
            }
        }
        s
    }

    pub fn model_config(&self) -> IraeConfig {
        IraeConfig {
            k: self.k,
            levels: self.levels,
            hidden: self.hidden,
            in_channels: self.channels,
            precision: self.precision,
            seed: self.seed,
        }
    }

    pub fn degradation(&self) -> DegradationSpec {
        match self.task {
            Task::Denoise if self.blind => DegradationSpec::BlindAwgn {
                lo: self.sigma_lo,
                hi: self.sigma_hi,
            },
            Task::Denoise => DegradationSpec::Awgn { sigma: self.sigma },
            Task::Jpeg => DegradationSpec::Jpeg {
                quality: self.quality,
            },
            Task::Inpaint => DegradationSpec::Inpaint {
                mask_h: self.mask_h,
                mask_w: self.mask_w,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.degradation(), self.epochs_max)
            .with_seed(self.seed)
            .with_batch_size(self.batch_size);
        t.val_fraction = self.val_fraction;
        t.clip_norm = self.clip_norm;
        t
    }

    /// Checks the settings needed by `train`. Numeric limits are checked by
    /// the model and degradation types.
    pub fn validate_for_training(&self) -> Result<()> {
        self.model_config().validate()?;
        self.degradation().validate()?;
        ensure!(self.epochs_max >= 1, "epochs_max must be at least 1");
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        let dataset = self.dataset.as_ref().context("no dataset directory configured")?;
        ensure!(dataset.is_dir(), "dataset directory {} does not exist", dataset.display());
        ensure!(
            self.checkpoint.is_some() || self.output_dir.is_some(),
            "configure a checkpoint path or an output directory"
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse_str("# desk run\nk = 4\nhidden=32\n\ntask = jpeg\nquality = 10\n").unwrap();
        assert_eq!((cfg.k, cfg.levels, cfg.hidden), (4, 2, 32));
        assert_eq!(cfg.degradation(), DegradationSpec::Jpeg { quality: 10 });
        let mut b = cfg.clone();
        b.set_assignment("blind=true").unwrap();
        b.set("task", "denoise").unwrap();
        assert_eq!(b.degradation(), DegradationSpec::BlindAwgn { lo: 0.0, hi: 55.0 });
    }

    #[test]
    fn errors_name_the_problem() {
        let e = format!("{:#}", RunConfig::parse_str("k = 4\nfoo = 1").unwrap_err());
        assert!(e.contains("line 2") && e.contains("foo"), "{e}");
        let e = format!("{:#}", RunConfig::parse_str("k = four").unwrap_err());
        assert!(e.contains("k"), "{e}");
        assert!(RunConfig::parse_str("task").is_err());
    }

    #[test]
    fn training_validation_checks_paths() {
        let mut cfg = RunConfig::default();
        cfg.output_dir = Some("/tmp".into());
        assert!(cfg.validate_for_training().is_err());
        cfg.dataset = Some("/definitely/not/here".into());
        assert!(cfg.validate_for_training().unwrap_err().to_string().contains("does not exist"));
        cfg.dataset = Some(std::env::temp_dir());
        cfg.validate_for_training().unwrap();
        cfg.k = 0;
        assert!(cfg.validate_for_training().is_err());
    }

    fn path() -> impl Strategy<Value = Option<PathBuf>> {
        proptest::option::of("[a-zA-Z0-9_./-]([a-zA-Z0-9_. /-]{0,20}[a-zA-Z0-9_./-])?".prop_map(PathBuf::from))
    }

    fn config() -> impl Strategy<Value = RunConfig> {
        (
            (
                prop_oneof![Just(Task::Denoise), Just(Task::Jpeg), Just(Task::Inpaint)],
                any::<bool>(),
                0.0f64..100.0,
                0.0f64..50.0,
                0.0f64..100.0,
                1u8..=100,
                1usize..64,
                1usize..64,
            ),
            (
                1usize..20,
                1usize..4,
                1usize..128,
                1usize..4,
                prop_oneof![Just(Precision::F32), Just(Precision::F64)],
                1usize..500,
                1usize..64,
                any::<u64>(),
            ),
            (0.0f64..0.9, proptest::option::of(0.01f64..10.0), path(), path(), path()),
        )
            .prop_map(|(a, b, c)| RunConfig {
                task: a.0,
                blind: a.1,
                sigma: a.2,
                sigma_lo: a.3,
                sigma_hi: a.4,
                quality: a.5,
                mask_h: a.6,
                mask_w: a.7,
                k: b.0,
                levels: b.1,
                hidden: b.2,
                channels: b.3,
                precision: b.4,
                epochs_max: b.5,
                batch_size: b.6,
                seed: b.7,
                val_fraction: c.0,
                clip_norm: c.1,
                dataset: c.2,
                checkpoint: c.3,
                output_dir: c.4,
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(cfg in config()) {
            let text = cfg.to_config_string();
            let back = RunConfig::parse_str(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_config_string(), text);
        }
    }
}
