use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Divides the learning rate when the monitored loss stalls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub factor: f64,
    pub best_loss: f64,
    pub epochs_since_improve: usize,
    /// Minimum decrease that counts as an improvement.
    pub threshold: f64,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self {
            patience: 5,
            factor: 0.1,
            best_loss: f64::INFINITY,
            epochs_since_improve: 0,
            threshold: 1e-8,
        }
    }
}

impl PlateauSchedule {
    pub fn new(patience: usize, factor: f64) -> Result<Self> {
        if patience == 0 || !(factor > 0.0 && factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau schedule needs patience >= 1 and factor in (0, 1), got {patience} and {factor}"
            )));
        }
        Ok(Self {
            patience,
            factor,
            ..Default::default()
        })
    }

    /// Records one epoch's loss and returns the factor to apply to the
    /// learning rate (1 when unchanged).
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best_loss - self.threshold {
            self.best_loss = loss;
            self.epochs_since_improve = 0;
            return 1.0;
        }
        self.epochs_since_improve += 1;
        if self.epochs_since_improve >= self.patience {
            self.epochs_since_improve = 0;
            self.factor
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(losses: &[f64]) -> Vec<f64> {
        let mut s = PlateauSchedule::default();
        let mut lr = 1.0;
        losses
            .iter()
            .map(|&l| {
                lr *= s.step(l);
                lr
            })
            .collect()
    }

    #[test]
    fn improving_losses_keep_lr() {
        assert_eq!(run(&[1.0, 0.9, 0.8]), vec![1.0; 3]);
    }

    #[test]
    fn five_flat_epochs_divide_by_ten() {
        let lrs = run(&[1.0; 6]);
        assert_eq!(&lrs[..5], &[1.0; 5]);
        assert!((lrs[5] - 0.1).abs() < 1e-15);
        let lrs = run(&[1.0; 11]);
        assert!((lrs[10] - 0.01).abs() < 1e-15);
        assert!((lrs[9] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(PlateauSchedule::new(0, 0.1).is_err());
        assert!(PlateauSchedule::new(5, 1.0).is_err());
        assert!(PlateauSchedule::new(5, 0.1).is_ok());
    }

    proptest! {
        #[test]
        fn lr_never_increases_and_is_bounded(losses in proptest::collection::vec(0.0f64..2.0, 1..60)) {
            let lrs = run(&losses);
            let mut prev = 1.0;
            for (e, &lr) in lrs.iter().enumerate() {
                prop_assert!(lr <= prev);
                let floor = 10f64.powi(-(((e + 1) / 5) as i32));
                prop_assert!(lr >= floor * (1.0 - 1e-12));
                prev = lr;
            }
        }
    }
}
