//! Run configuration parsed from flat `key = value` text.
//!
//! A run file is plain text: one `key = value` pair per line, `#` starts a
//! comment, blank lines are ignored. Unknown keys are rejected so typos
//! cannot silently fall back to defaults. Command-line overrides use the
//! same keys with `--key=value` spelling (hyphens map to underscores).

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;

use crate::attention::AttentionKind;
use crate::backbone::{BackboneConfig, StageSpec};
use crate::data::{load_fer_csv, synth_dataset, AugmentConfig, Sample, Split, FER_CLASSES, FER_SIDE};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::mix_seed;
use crate::train::{Monitor, SchedulerKind, TrainPlan};

/// Where training and evaluation samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Procedurally generated striped-pattern classes; no files needed.
    Synth,
    /// The 48x48 grayscale facial-expression CSV with a `Usage` split column.
    Fer,
}

impl DataSource {
    pub fn label(self) -> &'static str {
        match self {
            DataSource::Synth => "synth",
            DataSource::Fer => "fer",
        }
    }
}

/// Every knob of a run, with a usable default for each.
///
/// Defaults describe a small synthetic-data run: 7 classes of 32x32
/// grayscale images, a 16/32/64/128 backbone with TripSE1 attention, and a
/// 30-epoch RAdam schedule starting at lr 0.001 with a plateau scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `data`: `synth` or `fer`. Default `synth`.
    pub data: DataSource,
    /// `fer_csv`: path of the dataset CSV, required when `data = fer`. Default empty.
    pub fer_csv: String,
    /// `classes`: number of synthetic classes. Default 7. Ignored for `fer` (always 7).
    pub classes: usize,
    /// `per_class`: synthetic training samples per class. Default 200.
    pub per_class: usize,
    /// `val_per_class`: synthetic validation and test samples per class. Default 40.
    pub val_per_class: usize,
    /// `image_size`: square image side. Default 32. Must be 48 when `data = fer`.
    pub image_size: usize,
    /// `noise`: synthetic pixel noise amplitude in [0, 0.15]. Default 0.05.
    pub noise: f64,
    /// `data_seed`: seed for synthetic generation. Default 7.
    pub data_seed: u64,
    /// `augment`: enable training-time augmentation. Default false.
    pub augment: bool,
    /// `hflip_prob`: horizontal flip probability when augmenting. Default 0.5.
    pub hflip_prob: f64,
    /// `rotation`: max rotation in degrees; angles drawn from [-rotation, rotation]. Default 10.
    pub rotation: f64,
    /// `aug_seed`: seed for augmentation draws. Default 1.
    pub aug_seed: u64,
    /// `attention`: `none`, `se`, `ta`, or `tripse1`..`tripse4`. Default `tripse1`.
    pub attention: AttentionKind,
    /// `widths`: four comma-separated stage widths. Default `16,32,64,128`.
    pub widths: [usize; 4],
    /// `depth`: blocks per stage. Default 1.
    pub depth: usize,
    /// `downsample`: four comma-separated flags, one per stage entry. Default `false,true,true,true`.
    pub downsample: [bool; 4],
    /// `se_ratio`: SE reduction ratio, or `auto` to pick the variant default
    /// (16 for everything except TripSE4, which defaults to 1). Default `auto`.
    pub se_ratio: Option<usize>,
    /// `kernel`: gate convolution kernel size (odd). Default 7.
    pub kernel: usize,
    /// `seed`: model initialization seed. Default 0.
    pub seed: u64,
    /// `epochs`: training epochs. Default 30.
    pub epochs: usize,
    /// `batch_size`: samples per optimizer step. Default 32.
    pub batch_size: usize,
    /// `lr`: initial learning rate. Default 0.001.
    pub lr: f64,
    /// `scheduler`: `plateau` or `step`. Default `plateau`.
    pub scheduler: SchedulerKind,
    /// `factor`: multiplicative learning-rate drop. Default 0.1.
    pub factor: f64,
    /// `patience`: plateau epochs without improvement before a drop. Default 3.
    pub patience: usize,
    /// `period`: epochs between drops for the step scheduler. Default 10.
    pub period: usize,
    /// `min_lr`: learning-rate floor. Default 0.000001.
    pub min_lr: f64,
    /// `monitor`: `val_acc` or `val_loss` as the plateau signal. Default `val_acc`.
    pub monitor: Monitor,
    /// `target_acc`: stop early once train accuracy reaches this; 0 disables. Default 0.
    pub target_acc: f64,
    /// `record_timing`: write wall-clock seconds into the metrics CSV.
    /// Default false so repeated runs produce byte-identical CSVs.
    pub record_timing: bool,
    /// `checkpoint_every`: epochs between `last.tsew` snapshots. Default 1.
    pub checkpoint_every: usize,
    /// `output_dir`: where metrics, checkpoints, and the resolved config go. Default `runs/default`.
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            data: DataSource::Synth,
            fer_csv: String::new(),
            classes: 7,
            per_class: 200,
            val_per_class: 40,
            image_size: 32,
            noise: 0.05,
            data_seed: 7,
            augment: false,
            hflip_prob: 0.5,
            rotation: 10.0,
            aug_seed: 1,
            attention: AttentionKind::TripSe1,
            widths: [16, 32, 64, 128],
            depth: 1,
            downsample: [false, true, true, true],
            se_ratio: None,
            kernel: 7,
            seed: 0,
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            scheduler: SchedulerKind::Plateau,
            factor: 0.1,
            patience: 3,
            period: 10,
            min_lr: 1e-6,
            monitor: Monitor::ValAccuracy,
            target_acc: 0.0,
            record_timing: false,
            checkpoint_every: 1,
            output_dir: "runs/default".into(),
        }
    }
}

fn parse<T>(key: &str, value: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse \"{value}\": {e}")))
}

fn parse4<T>(key: &str, value: &str) -> Result<[T; 4]>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "{key}: expected 4 comma-separated values, got {} in \"{value}\"",
            parts.len()
        )));
    }
    let mut it = parts.into_iter();
    Ok([
        parse(key, it.next().unwrap())?,
        parse(key, it.next().unwrap())?,
        parse(key, it.next().unwrap())?,
        parse(key, it.next().unwrap())?,
    ])
}

fn join4<T: std::fmt::Display>(values: &[T; 4]) -> String {
    format!("{},{},{},{}", values[0], values[1], values[2], values[3])
}

impl RunConfig {
    /// Parses a complete config from text, starting from the defaults.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values. `#` starts
    /// a comment; blank lines are skipped. Errors carry 1-based line numbers.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got \"{line}\"",
                    idx + 1
                )));
            };
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", idx + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies a single `--key=value` (or bare `key=value`) override.
    /// Hyphens in the key are treated as underscores, so `--se-ratio=1`
    /// targets the `se_ratio` field.
    pub fn apply_override(&mut self, arg: &str) -> Result<()> {
        let body = arg.strip_prefix("--").unwrap_or(arg);
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Config(format!(
                "override \"{arg}\" must look like --key=value"
            )));
        };
        self.set(&key.trim().replace('-', "_"), value.trim())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => {
                self.data = match value {
                    "synth" => DataSource::Synth,
                    "fer" => DataSource::Fer,
                    other => {
                        return Err(Error::Config(format!(
                            "data: expected synth or fer, got \"{other}\""
                        )))
                    }
                }
            }
            "fer_csv" => self.fer_csv = value.to_string(),
            "classes" => self.classes = parse(key, value)?,
            "per_class" => self.per_class = parse(key, value)?,
            "val_per_class" => self.val_per_class = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "hflip_prob" => self.hflip_prob = parse(key, value)?,
            "rotation" => self.rotation = parse(key, value)?,
            "aug_seed" => self.aug_seed = parse(key, value)?,
            "attention" => self.attention = value.parse()?,
            "widths" => self.widths = parse4(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "downsample" => self.downsample = parse4(key, value)?,
            "se_ratio" => {
                self.se_ratio = if value == "auto" {
                    None
                } else {
                    let r: usize = parse(key, value)?;
                    if r == 0 {
                        return Err(Error::Config("se_ratio must be >= 1".into()));
                    }
                    Some(r)
                }
            }
            "kernel" => self.kernel = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "scheduler" => {
                self.scheduler = match value {
                    "plateau" => SchedulerKind::Plateau,
                    "step" => SchedulerKind::Step,
                    other => {
                        return Err(Error::Config(format!(
                            "scheduler: expected plateau or step, got \"{other}\""
                        )))
                    }
                }
            }
            "factor" => self.factor = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "period" => self.period = parse(key, value)?,
            "min_lr" => self.min_lr = parse(key, value)?,
            "monitor" => {
                self.monitor = match value {
                    "val_acc" => Monitor::ValAccuracy,
                    "val_loss" => Monitor::ValLoss,
                    other => {
                        return Err(Error::Config(format!(
                            "monitor: expected val_acc or val_loss, got \"{other}\""
                        )))
                    }
                }
            }
            "target_acc" => self.target_acc = parse(key, value)?,
            "record_timing" => self.record_timing = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "output_dir" => self.output_dir = value.to_string(),
            other => return Err(Error::Config(format!("unknown key \"{other}\""))),
        }
        Ok(())
    }

    /// The reduction ratio in effect: the explicit `se_ratio` if given,
    /// otherwise 16, except TripSE4 which defaults to 1 because its branch
    /// SE blocks see very few rotational channels.
    pub fn resolved_se_ratio(&self) -> usize {
        self.se_ratio.unwrap_or(match self.attention {
            AttentionKind::TripSe4 => 1,
            _ => 16,
        })
    }

    /// Cross-field checks that individual setters cannot perform.
    pub fn validate(&self) -> Result<()> {
        if self.data == DataSource::Fer {
            if self.fer_csv.is_empty() {
                return Err(Error::Config(
                    "data = fer requires fer_csv to point at the dataset file".into(),
                ));
            }
            if self.image_size != FER_SIDE {
                return Err(Error::Config(format!(
                    "data = fer requires image_size = {FER_SIDE}, got {}",
                    self.image_size
                )));
            }
        }
        Ok(())
    }

    /// Renders every field, in a fixed order, as reparseable `key = value`
    /// text. `se_ratio` is printed as the resolved number rather than
    /// `auto`, so the emitted file pins down exactly what ran.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "data = {}", self.data.label());
        let _ = writeln!(s, "fer_csv = {}", self.fer_csv);
        let _ = writeln!(s, "classes = {}", self.classes);
        let _ = writeln!(s, "per_class = {}", self.per_class);
        let _ = writeln!(s, "val_per_class = {}", self.val_per_class);
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "hflip_prob = {}", self.hflip_prob);
        let _ = writeln!(s, "rotation = {}", self.rotation);
        let _ = writeln!(s, "aug_seed = {}", self.aug_seed);
        let _ = writeln!(s, "attention = {}", self.attention);
        let _ = writeln!(s, "widths = {}", join4(&self.widths));
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "downsample = {}", join4(&self.downsample));
        let _ = writeln!(s, "se_ratio = {}", self.resolved_se_ratio());
        let _ = writeln!(s, "kernel = {}", self.kernel);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "scheduler = {}", match self.scheduler {
            SchedulerKind::Plateau => "plateau",
            SchedulerKind::Step => "step",
        });
        let _ = writeln!(s, "factor = {}", self.factor);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "period = {}", self.period);
        let _ = writeln!(s, "min_lr = {}", self.min_lr);
        let _ = writeln!(s, "monitor = {}", match self.monitor {
            Monitor::ValAccuracy => "val_acc",
            Monitor::ValLoss => "val_loss",
        });
        let _ = writeln!(s, "target_acc = {}", self.target_acc);
        let _ = writeln!(s, "record_timing = {}", self.record_timing);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "output_dir = {}", self.output_dir);
        s
    }

    /// Builds the model configuration these settings describe.
    pub fn to_backbone(&self) -> Result<BackboneConfig> {
        self.validate()?;
        let num_classes = match self.data {
            DataSource::Fer => FER_CLASSES,
            DataSource::Synth => self.classes,
        };
        let cfg = BackboneConfig {
            in_channels: 1,
            num_classes,
            stages: [
                StageSpec::new(self.widths[0], self.depth, self.downsample[0]),
                StageSpec::new(self.widths[1], self.depth, self.downsample[1]),
                StageSpec::new(self.widths[2], self.depth, self.downsample[2]),
                StageSpec::new(self.widths[3], self.depth, self.downsample[3]),
            ],
            attention: self.attention,
            reduction: self.resolved_se_ratio(),
            kernel: self.kernel,
            input_size: (self.image_size, self.image_size),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds the training plan these settings describe.
    pub fn to_plan(&self) -> Result<TrainPlan> {
        let plan = TrainPlan {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            scheduler: self.scheduler,
            factor: self.factor,
            patience: self.patience,
            period: self.period,
            min_lr: self.min_lr,
            monitor: self.monitor,
            augment: self.augment.then(|| AugmentConfig {
                hflip_prob: self.hflip_prob,
                rotation_degrees: (-self.rotation, self.rotation),
                target_size: (self.image_size, self.image_size),
                seed: self.aug_seed,
            }),
            seed: self.seed,
            record_timing: self.record_timing,
            checkpoint_every: self.checkpoint_every,
            target_train_acc: (self.target_acc > 0.0).then_some(self.target_acc),
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Loads (train, val, test) splits from the configured source.
    pub fn load_data<E: Element>(
        &self,
    ) -> Result<(Vec<Sample<E>>, Vec<Sample<E>>, Vec<Sample<E>>)> {
        self.validate()?;
        match self.data {
            DataSource::Synth => {
                let size = (self.image_size, self.image_size);
                let train = synth_dataset(
                    self.classes,
                    self.per_class,
                    size,
                    self.noise,
                    self.data_seed,
                )?;
                let val = synth_dataset(
                    self.classes,
                    self.val_per_class,
                    size,
                    self.noise,
                    mix_seed(self.data_seed, 1),
                )?;
                let test = synth_dataset(
                    self.classes,
                    self.val_per_class,
                    size,
                    self.noise,
                    mix_seed(self.data_seed, 2),
                )?;
                Ok((train, val, test))
            }
            DataSource::Fer => {
                let file = File::open(&self.fer_csv).map_err(|e| {
                    Error::Data(format!("cannot open {}: {e}", self.fer_csv))
                })?;
                let rows = load_fer_csv(BufReader::new(file))?;
                let mut train = Vec::new();
                let mut val = Vec::new();
                let mut test = Vec::new();
                for (sample, split) in rows {
                    match split {
                        Split::Train => train.push(sample),
                        Split::Val => val.push(sample),
                        Split::Test => test.push(sample),
                    }
                }
                Ok((train, val, test))
            }
        }
    }
}
