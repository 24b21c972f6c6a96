//! Validation-loss driven learning-rate reduction and early stopping.

use serde::{Deserialize, Serialize};

/// Smallest decrease of the validation loss that counts as improvement.
pub const MIN_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 5,
            min_lr: 1e-6,
        }
    }
}

/// Tracks the best loss seen and how many epochs have passed without
/// beating it by at least [`MIN_DELTA`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stagnation {
    pub best: f64,
    pub bad_epochs: usize,
}

impl Default for Stagnation {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }
}

impl Stagnation {
    /// Records one epoch; returns whether it improved on the best loss.
    pub fn observe(&mut self, loss: f64) -> bool {
        if self.best - loss >= MIN_DELTA {
            self.best = loss;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }
}

/// Multiplies the learning rate by `factor` once `patience` epochs pass
/// without improvement, then starts counting again. Never goes below
/// `min_lr` and never raises a rate that already sits under it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub cfg: PlateauConfig,
    pub lr: f64,
    track: Stagnation,
}

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: PlateauConfig) -> Self {
        Self {
            cfg,
            lr,
            track: Stagnation::default(),
        }
    }

    /// Feeds one validation loss and returns the rate for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        self.track.observe(val_loss);
        if self.track.bad_epochs >= self.cfg.patience {
            let reduced = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
            if reduced < self.lr {
                self.lr = reduced;
            }
            self.track.bad_epochs = 0;
        }
        self.lr
    }
}

/// Learning rate in force after each epoch of a validation-loss history.
pub fn plateau_schedule(val_history: &[f64], lr: f64, cfg: PlateauConfig) -> Vec<f64> {
    let mut sched = PlateauScheduler::new(lr, cfg);
    val_history.iter().map(|&l| sched.step(l)).collect()
}

/// Signals a stop once `patience` consecutive epochs fail to improve.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    track: Stagnation,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            track: Stagnation::default(),
        }
    }

    /// Returns `(improved, stop)` for this epoch.
    pub fn step(&mut self, val_loss: f64) -> (bool, bool) {
        let improved = self.track.observe(val_loss);
        (improved, self.track.bad_epochs >= self.patience)
    }
}
