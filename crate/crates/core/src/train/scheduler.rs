/// Reduces the learning rate after `patience` consecutive epochs without a
/// strict improvement of the best validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    stale_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            stale_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one validation loss and returns the learning rate for the
    /// next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default() -> PlateauScheduler {
        PlateauScheduler::new(1e-4, 0.2, 20, 5e-5)
    }

    #[test]
    fn improving_losses_keep_rate() {
        let mut s = default();
        for i in 0..100 {
            assert_eq!(s.observe(1.0 - i as f64 * 1e-3), 1e-4);
        }
    }

    #[test]
    fn twenty_flat_epochs_floor_the_rate() {
        let mut s = default();
        s.observe(0.5);
        for _ in 0..19 {
            assert_eq!(s.observe(0.5), 1e-4);
        }
        assert_eq!(s.observe(0.5), 5e-5);
        for _ in 0..100 {
            assert_eq!(s.observe(0.5), 5e-5);
        }
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 3, 0.01);
        s.observe(1.0);
        s.observe(1.0);
        s.observe(1.0);
        s.observe(0.9);
        s.observe(0.95);
        s.observe(0.95);
        assert_eq!(s.lr, 1.0);
        assert_eq!(s.observe(0.95), 0.5);
        assert_eq!(s.best(), 0.9);
    }

    #[test]
    fn nan_never_counts_as_improvement() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 1, 0.01);
        s.observe(1.0);
        assert_eq!(s.observe(f64::NAN), 0.5);
    }
}
