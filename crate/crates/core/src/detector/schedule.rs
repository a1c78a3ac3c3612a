use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer and plateau learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub drop_factor: f64,
    pub plateau_patience: usize,
    /// Minimum absolute gain in validation accuracy that counts as progress.
    pub plateau_threshold: f64,
    pub lr_min: f64,
    pub max_epochs: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 64,
            lr_initial: 1e-4,
            drop_factor: 0.1,
            plateau_patience: 5,
            plateau_threshold: 0.001,
            lr_min: 1e-6,
            max_epochs: 400,
        }
    }
}

/// Patience for runs on fewer training classes (2, 4, 8 or 16).
pub fn patience_for_classes(n_classes: usize) -> Result<usize> {
    match n_classes {
        2 => Ok(50),
        4 => Ok(25),
        8 => Ok(13),
        16 => Ok(7),
        _ => Err(Error::InvalidArgument(format!("no patience preset for {n_classes} classes (expected 2, 4, 8 or 16)"))),
    }
}

/// Patience for runs on a fraction of the training data (10, 20, 40 or 80 percent).
pub fn patience_for_data_percent(percent: u32) -> Result<usize> {
    match percent {
        10 => Ok(50),
        20 => Ok(25),
        40 => Ok(13),
        80 => Ok(7),
        _ => Err(Error::InvalidArgument(format!("no patience preset for {percent}% of the data (expected 10, 20, 40 or 80)"))),
    }
}

impl TrainSchedule {
    pub fn with_patience(mut self, patience: usize) -> Self {
        self.plateau_patience = patience;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.drop_factor > 0.0 && self.drop_factor < 1.0) {
            return bad(format!("drop_factor {} must lie in (0, 1)", self.drop_factor));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_initial) {
            return bad(format!("need 0 < lr_min ({}) <= lr_initial ({})", self.lr_min, self.lr_initial));
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be at least 1".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum SchedulerEvent {
    Continue,
    Drop { lr: f64 },
    Terminate,
}

/// Plateau detector over per-epoch validation accuracy.
///
/// The first epoch at each learning rate sets the reference and counts toward
/// patience. An epoch improves on the reference iff its accuracy is at least
/// `best + plateau_threshold`. After `plateau_patience` epochs without
/// improvement the rate drops by `drop_factor` and the reference resets; if
/// the dropped rate would fall below `lr_min`, training terminates instead.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    schedule: TrainSchedule,
    drops: i32,
    best: Option<f64>,
    since: usize,
}

impl PlateauScheduler {
    pub fn new(schedule: &TrainSchedule) -> Self {
        PlateauScheduler { schedule: schedule.clone(), drops: 0, best: None, since: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr_after(self.drops)
    }

    fn lr_after(&self, drops: i32) -> f64 {
        self.schedule.lr_initial * self.schedule.drop_factor.powi(drops)
    }

    /// Records one epoch's validation accuracy and says what happens next.
    pub fn observe(&mut self, val_acc: f64) -> SchedulerEvent {
        let improved = match self.best {
            None => true,
            Some(best) => val_acc >= best + self.schedule.plateau_threshold - 1e-12,
        };
        if improved {
            self.best = Some(val_acc);
            self.since = 1;
            return SchedulerEvent::Continue;
        }
        self.since += 1;
        if self.since < self.schedule.plateau_patience {
            return SchedulerEvent::Continue;
        }
        let next = self.lr_after(self.drops + 1);
        if next < self.schedule.lr_min * (1.0 - 1e-9) {
            return SchedulerEvent::Terminate;
        }
        self.drops += 1;
        self.best = None;
        self.since = 0;
        SchedulerEvent::Drop { lr: next }
    }
}

/// Learning rate used at each epoch when the scheduler is driven by `trace`,
/// and the 1-based epoch after which training stopped (if it did).
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReplay {
    pub lrs: Vec<f64>,
    pub terminated_after: Option<usize>,
}

pub fn replay_schedule(trace: &[f64], schedule: &TrainSchedule) -> ScheduleReplay {
    let mut sched = PlateauScheduler::new(schedule);
    let mut lrs = Vec::new();
    for (i, &acc) in trace.iter().enumerate().take(schedule.max_epochs) {
        lrs.push(sched.lr());
        if sched.observe(acc) == SchedulerEvent::Terminate {
            return ScheduleReplay { lrs, terminated_after: Some(i + 1) };
        }
    }
    ScheduleReplay { lrs, terminated_after: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increasing_trace_keeps_initial_rate() {
        let trace: Vec<f64> = (0..60).map(|i| 0.5 + i as f64 * 0.005).collect();
        let r = replay_schedule(&trace, &TrainSchedule::default());
        assert!(r.lrs.iter().all(|&lr| lr == 1e-4));
        assert_eq!(r.terminated_after, None);
    }

    #[test]
    fn five_flat_epochs_drop_the_rate() {
        let r = replay_schedule(&[0.7; 6], &TrainSchedule::default());
        assert_eq!(&r.lrs[..5], &[1e-4; 5]);
        assert!((r.lrs[5] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn plateau_at_minimum_rate_terminates() {
        let r = replay_schedule(&[0.7; 40], &TrainSchedule::default());
        assert_eq!(r.terminated_after, Some(15));
        assert!((r.lrs[14] - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn sub_threshold_gains_do_not_count() {
        let trace: Vec<f64> = (0..5).map(|i| 0.7 + i as f64 * 0.0002).collect();
        let mut s = PlateauScheduler::new(&TrainSchedule::default());
        let events: Vec<_> = trace.iter().map(|&a| s.observe(a)).collect();
        assert!(matches!(events[4], SchedulerEvent::Drop { .. }));
    }

    #[test]
    fn presets_and_validation() {
        assert_eq!([2, 4, 8, 16].map(|n| patience_for_classes(n).unwrap()), [50, 25, 13, 7]);
        assert_eq!([10, 20, 40, 80].map(|p| patience_for_data_percent(p).unwrap()), [50, 25, 13, 7]);
        assert!(patience_for_classes(3).is_err());
        TrainSchedule::default().validate().unwrap();
        let mut s = TrainSchedule::default();
        s.drop_factor = 1.0;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::default();
        s.lr_min = 1e-3;
        assert!(s.validate().is_err());
    }
}
