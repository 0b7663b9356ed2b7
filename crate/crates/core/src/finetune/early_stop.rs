//! Validation-loss early stopping.

/// Tracks the lowest validation loss seen. An epoch counts as progress only
/// when it undercuts that minimum by more than `tolerance`; training halts
/// after `patience` consecutive epochs without progress.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    tolerance: f64,
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Halt,
}

impl EarlyStopper {
    pub fn new(tolerance: f64, patience: usize) -> Self {
        Self {
            tolerance,
            patience: patience.max(1),
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
            epoch: 0,
        }
    }

    /// Records the next epoch's validation loss (epochs count from 1).
    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = self.best - val_loss > self.tolerance;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = self.epoch;
        }
        if improved {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if self.stale >= self.patience {
            StopDecision::Halt
        } else {
            StopDecision::Continue
        }
    }

    /// Epoch with the minimal validation loss so far, first on ties; 0 before
    /// any observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn epochs_seen(&self) -> usize {
        self.epoch
    }
}

/// Replays `losses` through the rule, capped at `max_epochs`. Returns the
/// last epoch run and the best epoch, both 1-based.
pub fn trace(losses: &[f64], tolerance: f64, patience: usize, max_epochs: usize) -> (usize, usize) {
    let mut s = EarlyStopper::new(tolerance, patience);
    for &l in losses.iter().take(max_epochs) {
        if s.observe(l) == StopDecision::Halt {
            break;
        }
    }
    (s.epochs_seen(), s.best_epoch())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slow_descent_halts_at_eleven() {
        let losses: Vec<f64> = (0..30).map(|i| 1.0 - 0.005 * i as f64).collect();
        assert_eq!(trace(&losses, 0.05, 10, 100), (11, 11));
    }

    #[test]
    fn steady_descent_runs_to_cap() {
        let losses: Vec<f64> = (0..20).map(|i| 3.0 - 0.1 * i as f64).collect();
        assert_eq!(trace(&losses, 0.05, 10, 20), (20, 20));
    }

    #[test]
    fn single_epoch_cap() {
        assert_eq!(trace(&[0.7, 0.1], 0.05, 10, 1), (1, 1));
    }

    #[test]
    fn best_epoch_is_argmin_not_last_improvement() {
        // epoch 2 improves by 0.5; epoch 4 is lower but within tolerance
        let losses = [1.0, 0.5, 0.6, 0.48, 0.7, 0.7];
        assert_eq!(trace(&losses, 0.05, 3, 100), (5, 4));
    }
}
