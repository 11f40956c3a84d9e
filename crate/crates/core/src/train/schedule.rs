use serde::{Deserialize, Serialize};

/// A learning rate held as `mantissa * 10^-exp10` so that repeated division
/// by five produces exactly the decimal values 4e-5, 8e-6, 1.6e-6, ...
/// rather than accumulating binary rounding error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecimalRate {
    pub mantissa: u64,
    pub exp10: u32,
}

impl DecimalRate {
    pub const fn new(mantissa: u64, exp10: u32) -> Self {
        Self { mantissa, exp10 }
    }

    pub fn value(self) -> f64 {
        // both operands are exact, so the quotient is the correctly rounded decimal
        self.mantissa as f64 / 10f64.powi(self.exp10 as i32)
    }

    /// `self / 5`, computed as `2 * self / 10`.
    pub fn fifth(self) -> Self {
        Self::new(self.mantissa * 2, self.exp10 + 1)
    }
}

/// Step learning-rate schedule with plateau decay.
///
/// Rate 1e-3 for epochs `1..=50`, 2e-4 from epoch 51. After that, each run of
/// 10 epochs without a new best validation PSNR divides the rate by 5 and
/// resets the counter. Training stops once the rate falls below 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: DecimalRate,
    pub second: DecimalRate,
    pub warm_epochs: usize,
    pub patience: usize,
    pub min_lr: f64,
    rate: DecimalRate,
    best_val_psnr: f64,
    epochs_since_improve: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::new(DecimalRate::new(1, 3), DecimalRate::new(2, 4), 50, 10, 1e-6)
    }
}

impl LrSchedule {
    pub fn new(
        initial: DecimalRate,
        second: DecimalRate,
        warm_epochs: usize,
        patience: usize,
        min_lr: f64,
    ) -> Self {
        Self {
            initial,
            second,
            warm_epochs,
            patience,
            min_lr,
            rate: initial,
            best_val_psnr: f64::NEG_INFINITY,
            epochs_since_improve: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.rate.value()
    }

    pub fn rate(&self) -> DecimalRate {
        self.rate
    }

    pub fn best_val_psnr(&self) -> f64 {
        self.best_val_psnr
    }

    pub fn epochs_since_improve(&self) -> usize {
        self.epochs_since_improve
    }

    /// Rate for 1-based `epoch`, given the validation PSNR measured just
    /// before it (after the previous epoch, or on the initial model for
    /// epoch 1). Returns `(lr, stop)`.
    pub fn step(&mut self, epoch: usize, val_psnr: f64) -> (f64, bool) {
        let improved = val_psnr > self.best_val_psnr;
        if improved {
            self.best_val_psnr = val_psnr;
        }
        if epoch <= self.warm_epochs {
            self.rate = self.initial;
        } else if epoch == self.warm_epochs + 1 {
            self.rate = self.second;
            self.epochs_since_improve = 0;
        } else {
            self.epochs_since_improve = if improved { 0 } else { self.epochs_since_improve + 1 };
            if self.epochs_since_improve >= self.patience {
                self.rate = self.rate.fifth();
                self.epochs_since_improve = 0;
            }
        }
        let lr = self.lr();
        (lr, lr < self.min_lr)
    }
}

/// Free-function form of [`LrSchedule::step`].
pub fn run_schedule(epoch: usize, val_psnr: f64, sched: &mut LrSchedule) -> (f64, bool) {
    sched.step(epoch, val_psnr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn phases() {
        let mut s = LrSchedule::default();
        for e in 1..=50 {
            assert_eq!(s.step(e, e as f64), (1e-3, false));
        }
        assert_eq!(s.step(51, 0.0), (2e-4, false));
    }

    #[test]
    fn plateau_decay_chain() {
        let mut s = LrSchedule::default();
        for e in 1..=51 {
            s.step(e, 30.0);
        }
        let mut e = 52;
        let mut seen = Vec::new();
        loop {
            let (lr, stop) = s.step(e, 10.0);
            e += 1;
            if seen.last() != Some(&lr) {
                seen.push(lr);
            }
            if stop {
                break;
            }
        }
        assert_eq!(seen, vec![2e-4, 4e-5, 8e-6, 1.6e-6, 3.2e-7]);
        // each decay needs exactly 10 stale epochs
        assert_eq!(e, 52 + 40);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = LrSchedule::default();
        for e in 1..=51 {
            s.step(e, 20.0);
        }
        for e in 52..61 {
            s.step(e, 20.0);
        }
        assert_eq!(s.epochs_since_improve(), 9);
        assert_eq!(s.step(61, 21.0).0, 2e-4);
        assert_eq!(s.epochs_since_improve(), 0);
    }

    #[test]
    fn decimal_fifths_are_exact() {
        let r = DecimalRate::new(2, 4);
        assert_eq!(r.fifth().value(), 4e-5);
        assert_eq!(r.fifth().fifth().fifth().value(), 1.6e-6);
    }

    proptest! {
        #[test]
        fn replayable_and_nonincreasing(psnrs in proptest::collection::vec(0.0f64..40.0, 1..150)) {
            let run = |p: &[f64]| {
                let mut s = LrSchedule::default();
                p.iter().enumerate().map(|(i, &v)| s.step(i + 1, v)).collect::<Vec<_>>()
            };
            let a = run(&psnrs);
            prop_assert_eq!(&a, &run(&psnrs));
            for w in a.windows(2) {
                prop_assert!(w[1].0 <= w[0].0);
            }
            prop_assert!(a.iter().all(|(lr, _)| *lr > 0.0));
        }
    }
}
