//! Epoch loop, evaluation, and full training runs with checkpoint resume.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use crate::autodiff::no_grad;
use crate::backbone::MiniBackbone;
use crate::checkpoint::{read_u32, read_u64, write_u32, write_u64};
use crate::data::{augment, batches, stack, AugmentConfig, Sample};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::{mix_seed, seeded_rng};
use crate::tensor::Tensor;
use crate::train::loss::cross_entropy;
use crate::train::metrics::{Metrics, METRICS_HEADER};
use crate::train::radam::RAdam;
use crate::train::scheduler::{Scheduler, SchedulerKind};

const PROGRESS_MAGIC: &[u8; 4] = b"PRG1";

/// Which validation signal the plateau schedule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    ValAccuracy,
    ValLoss,
}

/// Everything a training run needs besides the model and the data.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler: SchedulerKind,
    /// Multiplier applied at each learning-rate drop.
    pub factor: f64,
    /// Plateau only: epochs without improvement before a drop.
    pub patience: usize,
    /// Step only: epochs between drops.
    pub period: usize,
    pub min_lr: f64,
    pub monitor: Monitor,
    pub augment: Option<AugmentConfig>,
    /// Seeds the per-epoch batch shuffle.
    pub seed: u64,
    /// When false the `seconds` metric stays 0 and repeated runs write
    /// byte-identical CSV files.
    pub record_timing: bool,
    /// Epochs between full training-state checkpoints (0 disables them).
    pub checkpoint_every: usize,
    /// Stop once an epoch's training accuracy reaches this value.
    pub target_train_acc: Option<f64>,
}

impl Default for TrainPlan {
    fn default() -> TrainPlan {
        TrainPlan {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            scheduler: SchedulerKind::Plateau,
            factor: 0.1,
            patience: 3,
            period: 10,
            min_lr: 1e-6,
            monitor: Monitor::ValAccuracy,
            augment: None,
            seed: 0,
            record_timing: false,
            checkpoint_every: 1,
            target_train_acc: None,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.build_scheduler().map(|_| ())
    }

    pub fn build_scheduler(&self) -> Result<Scheduler> {
        match self.scheduler {
            SchedulerKind::Plateau => Scheduler::plateau(self.factor, self.patience, self.min_lr),
            SchedulerKind::Step => Scheduler::step_every(self.factor, self.period, self.min_lr),
        }
    }
}

fn argmax_rows<E: Element>(logits: &Tensor<E>) -> Result<Vec<usize>> {
    let (rows, classes) = logits.shape().dims2()?;
    let data = logits.to_vec();
    let mut picks = Vec::with_capacity(rows);
    for row in 0..rows {
        let slot = &data[row * classes..(row + 1) * classes];
        let mut best = 0;
        for (k, &v) in slot.iter().enumerate() {
            if v > slot[best] {
                best = k;
            }
        }
        picks.push(best);
    }
    Ok(picks)
}

/// Runs one epoch of optimization over `data` and returns its metrics.
///
/// Augmentation (when configured) and the batch shuffle both derive their
/// randomness from the epoch index, so epoch `e` of a run is reproducible in
/// isolation. Training accuracy is measured on the training-mode logits of
/// each batch as it is consumed. The returned `val_acc` is 0; callers fill
/// it in after validation.
pub fn train_epoch<E: Element>(
    model: &MiniBackbone<E>,
    data: &[Sample<E>],
    opt: &mut RAdam<E>,
    plan: &TrainPlan,
    epoch: usize,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let started = Instant::now();

    let epoch_data: Vec<Sample<E>> = match &plan.augment {
        Some(a) => {
            let mut rng = seeded_rng(mix_seed(a.seed, epoch as u64));
            data.iter()
                .map(|s| augment(s, a, &mut rng))
                .collect::<Result<_>>()?
        }
        None => data.to_vec(),
    };

    let shuffle_seed = mix_seed(plan.seed, epoch as u64);
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for (images, labels) in batches(&epoch_data, plan.batch_size, shuffle_seed, false)? {
        opt.zero_grads();
        let logits = model.forward(&images, true)?;
        let loss = cross_entropy(&logits, &labels)?;
        loss.backward()?;
        opt.step()?;

        let n = labels.len();
        loss_sum += loss.to_vec()[0].to_f64() * n as f64;
        correct += argmax_rows(&logits)?
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
        seen += n;
    }

    let seconds = if plan.record_timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    Ok(Metrics {
        epoch,
        train_loss: loss_sum / seen as f64,
        train_acc: correct as f64 / seen as f64,
        val_acc: 0.0,
        lr: opt.lr(),
        seconds,
    })
}

/// Accuracy and mean loss of an evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
    pub n: usize,
}

/// Eval-mode forward over `data` in its stored order; accuracy is the mean
/// of argmax hits and loss the mean cross-entropy. No gradients are recorded.
pub fn evaluate<E: Element>(
    model: &MiniBackbone<E>,
    data: &[Sample<E>],
    batch_size: usize,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::argument("batch size must be >= 1"));
    }
    no_grad(|| {
        let mut correct = 0usize;
        let mut loss_sum = 0.0f64;
        for chunk in data.chunks(batch_size) {
            let (images, labels) = stack(chunk)?;
            let logits = model.forward(&images, false)?;
            loss_sum += cross_entropy(&logits, &labels)?.to_vec()[0].to_f64() * labels.len() as f64;
            correct += argmax_rows(&logits)?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
        }
        Ok(EvalReport {
            accuracy: correct as f64 / data.len() as f64,
            loss: loss_sum / data.len() as f64,
            n: data.len(),
        })
    })
}

/// Writes model weights, optimizer state, scheduler state, and run progress
/// as one resumable checkpoint stream.
pub fn save_train_state<E: Element, W: Write>(
    w: &mut W,
    model: &MiniBackbone<E>,
    opt: &RAdam<E>,
    sched: &Scheduler,
    epoch: usize,
    best_val_acc: f64,
    best_epoch: usize,
) -> Result<()> {
    model.save_weights(w)?;
    opt.write_state(w)?;
    sched.write_state(w)?;
    w.write_all(PROGRESS_MAGIC)?;
    write_u32(w, epoch as u32)?;
    write_u64(w, best_val_acc.to_bits())?;
    write_u32(w, best_epoch as u32)?;
    Ok(())
}

/// Restores a stream written by [`save_train_state`] into `model` and `opt`,
/// returning the rebuilt scheduler and `(epoch, best_val_acc, best_epoch)`.
pub fn load_train_state<E: Element, R: Read>(
    r: &mut R,
    model: &MiniBackbone<E>,
    opt: &mut RAdam<E>,
) -> Result<(Scheduler, usize, f64, usize)> {
    model.load_weights(r)?;
    opt.read_state(r)?;
    let sched = Scheduler::read_state(r)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated stream before progress magic".into()))?;
    if &magic != PROGRESS_MAGIC {
        return Err(Error::Format(format!(
            "bad progress magic {magic:?}, expected {PROGRESS_MAGIC:?}"
        )));
    }
    let epoch = read_u32(r)? as usize;
    let best_val_acc = f64::from_bits(read_u64(r)?);
    let best_epoch = read_u32(r)? as usize;
    Ok((sched, epoch, best_val_acc, best_epoch))
}

/// Summary of a completed [`run_training`] call.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Metrics of the epochs executed by this call (not restored ones).
    pub history: Vec<Metrics>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
}

/// Trains `model` for `plan.epochs` epochs with validation after each one.
///
/// When `out_dir` is given the run writes `metrics.csv` (appending on
/// resume), `best.tsew` with the weights of the best validation epoch, and
/// `last.tsew` with the full resumable state every `checkpoint_every`
/// epochs and at the end. `resume_from` restores such a `last.tsew`; the
/// continued run reproduces the uninterrupted one bit for bit.
pub fn run_training<E: Element>(
    model: &MiniBackbone<E>,
    train_data: &[Sample<E>],
    val_data: &[Sample<E>],
    plan: &TrainPlan,
    out_dir: Option<&Path>,
    resume_from: Option<&Path>,
) -> Result<TrainReport> {
    plan.validate()?;
    let mut opt = RAdam::new(model.params(), plan.lr)?;
    let mut sched = plan.build_scheduler()?;
    let mut start_epoch = 1;
    let mut best_val_acc = 0.0f64;
    let mut best_epoch = 0usize;

    if let Some(path) = resume_from {
        let bytes = fs::read(path)?;
        let mut cursor = bytes.as_slice();
        let (restored, epoch, best_acc, best_ep) = load_train_state(&mut cursor, model, &mut opt)?;
        sched = restored;
        start_epoch = epoch + 1;
        best_val_acc = best_acc;
        best_epoch = best_ep;
    }

    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("metrics.csv");
            let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
            let mut file = fs::OpenOptions::new().create(true).append(true).open(&path)?;
            if fresh {
                writeln!(file, "{METRICS_HEADER}")?;
            }
            Some(file)
        }
        None => None,
    };

    let mut history = Vec::new();
    for epoch in start_epoch..=plan.epochs {
        let mut metrics = train_epoch(model, train_data, &mut opt, plan, epoch)?;
        let report = evaluate(model, val_data, plan.batch_size)?;
        metrics.val_acc = report.accuracy;

        if report.accuracy > best_val_acc {
            best_val_acc = report.accuracy;
            best_epoch = epoch;
            if let Some(dir) = out_dir {
                let mut file = fs::File::create(dir.join("best.tsew"))?;
                model.save_weights(&mut file)?;
            }
        }

        let monitored = match plan.monitor {
            Monitor::ValAccuracy => report.accuracy,
            Monitor::ValLoss => -report.loss,
        };
        let next_lr = sched.epoch_end(opt.lr(), monitored);
        opt.set_lr(next_lr);

        if let Some(file) = csv.as_mut() {
            writeln!(file, "{}", metrics.csv_row())?;
            file.flush()?;
        }
        let target_hit = plan
            .target_train_acc
            .is_some_and(|t| metrics.train_acc >= t);
        if let Some(dir) = out_dir {
            let due = plan.checkpoint_every > 0 && epoch % plan.checkpoint_every == 0;
            if due || epoch == plan.epochs || target_hit {
                let mut file = fs::File::create(dir.join("last.tsew"))?;
                save_train_state(&mut file, model, &opt, &sched, epoch, best_val_acc, best_epoch)?;
            }
        }
        history.push(metrics);
        if target_hit {
            break;
        }
    }

    Ok(TrainReport {
        history,
        best_val_acc,
        best_epoch,
    })
}
