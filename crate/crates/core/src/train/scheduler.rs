//! Learning-rate schedules driven by end-of-epoch signals.

use std::io::{Read, Write};

use crate::checkpoint::{read_u32, read_u64, write_u32, write_u64};
use crate::error::{Error, Result};

const SCHED_MAGIC: &[u8; 4] = b"SCH1";

/// Which schedule drives the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    /// Multiply by `factor` after `patience` epochs without metric improvement.
    Plateau,
    /// Multiply by `factor` every `period` epochs.
    Step,
}

/// Learning-rate scheduler. Call [`epoch_end`](Self::epoch_end) once per
/// epoch; the return value is the learning rate for the next epoch.
///
/// The plateau schedule treats its metric as higher-is-better and counts an
/// epoch as an improvement only when the metric strictly exceeds the best
/// seen so far. The first metric always becomes the best. A drop resets the
/// patience counter but keeps the best, so recovering to a value below the
/// old best does not count as improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduler {
    kind: SchedulerKind,
    factor: f64,
    patience: usize,
    period: usize,
    min_lr: f64,
    best: Option<f64>,
    since_improve: usize,
    epochs_seen: usize,
}

impl Scheduler {
    pub fn plateau(factor: f64, patience: usize, min_lr: f64) -> Result<Scheduler> {
        Scheduler::validate_common(factor, min_lr)?;
        if patience == 0 {
            return Err(Error::argument("plateau patience must be >= 1"));
        }
        Ok(Scheduler {
            kind: SchedulerKind::Plateau,
            factor,
            patience,
            period: 0,
            min_lr,
            best: None,
            since_improve: 0,
            epochs_seen: 0,
        })
    }

    pub fn step_every(factor: f64, period: usize, min_lr: f64) -> Result<Scheduler> {
        Scheduler::validate_common(factor, min_lr)?;
        if period == 0 {
            return Err(Error::argument("step period must be >= 1"));
        }
        Ok(Scheduler {
            kind: SchedulerKind::Step,
            factor,
            patience: 0,
            period,
            min_lr,
            best: None,
            since_improve: 0,
            epochs_seen: 0,
        })
    }

    fn validate_common(factor: f64, min_lr: f64) -> Result<()> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::argument(format!(
                "decay factor must lie in (0, 1), got {factor}"
            )));
        }
        if !(min_lr.is_finite() && min_lr >= 0.0) {
            return Err(Error::argument(format!(
                "min_lr must be non-negative, got {min_lr}"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    /// Feeds one epoch's result and returns the learning rate to use next.
    /// `metric` is higher-is-better and only consulted by the plateau kind.
    pub fn epoch_end(&mut self, lr: f64, metric: f64) -> f64 {
        self.epochs_seen += 1;
        let dropped = match self.kind {
            SchedulerKind::Step => self.epochs_seen % self.period == 0,
            SchedulerKind::Plateau => {
                let improved = self.best.is_none_or(|best| metric > best);
                if improved {
                    self.best = Some(metric);
                    self.since_improve = 0;
                    false
                } else {
                    self.since_improve += 1;
                    if self.since_improve >= self.patience {
                        self.since_improve = 0;
                        true
                    } else {
                        false
                    }
                }
            }
        };
        if dropped {
            (lr * self.factor).max(self.min_lr)
        } else {
            lr
        }
    }

    /// Serializes the full schedule state for exact resume.
    pub fn write_state<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SCHED_MAGIC)?;
        let kind = match self.kind {
            SchedulerKind::Plateau => 0u8,
            SchedulerKind::Step => 1u8,
        };
        w.write_all(&[kind])?;
        write_u64(w, self.factor.to_bits())?;
        write_u32(w, self.patience as u32)?;
        write_u32(w, self.period as u32)?;
        write_u64(w, self.min_lr.to_bits())?;
        match self.best {
            Some(best) => {
                w.write_all(&[1])?;
                write_u64(w, best.to_bits())?;
            }
            None => {
                w.write_all(&[0])?;
                write_u64(w, 0)?;
            }
        }
        write_u32(w, self.since_improve as u32)?;
        write_u32(w, self.epochs_seen as u32)?;
        Ok(())
    }

    /// Restores state written by [`write_state`](Self::write_state).
    pub fn read_state<R: Read>(r: &mut R) -> Result<Scheduler> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated stream before scheduler magic".into()))?;
        if &magic != SCHED_MAGIC {
            return Err(Error::Format(format!(
                "bad scheduler magic {magic:?}, expected {SCHED_MAGIC:?}"
            )));
        }
        let mut kind_byte = [0u8; 1];
        r.read_exact(&mut kind_byte)
            .map_err(|_| Error::Format("truncated stream inside scheduler state".into()))?;
        let kind = match kind_byte[0] {
            0 => SchedulerKind::Plateau,
            1 => SchedulerKind::Step,
            other => {
                return Err(Error::Format(format!("unknown scheduler kind byte {other}")));
            }
        };
        let factor = f64::from_bits(read_u64(r)?);
        let patience = read_u32(r)? as usize;
        let period = read_u32(r)? as usize;
        let min_lr = f64::from_bits(read_u64(r)?);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)
            .map_err(|_| Error::Format("truncated stream inside scheduler state".into()))?;
        let best_bits = read_u64(r)?;
        let best = (flag[0] == 1).then(|| f64::from_bits(best_bits));
        let since_improve = read_u32(r)? as usize;
        let epochs_seen = read_u32(r)? as usize;
        Ok(Scheduler {
            kind,
            factor,
            patience,
            period,
            min_lr,
            best,
            since_improve,
            epochs_seen,
        })
    }
}
