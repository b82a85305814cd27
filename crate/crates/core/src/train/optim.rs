use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::nn::Param;
use crate::zoo::Model;

/// Adam with bias correction and no weight decay.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    /// First and second moments, in trainable-parameter visit order.
    moments: Vec<(ArrayD<f32>, ArrayD<f32>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Updates every trainable tensor that has a gradient, then clears
    /// gradients.
    pub fn step(&mut self, model: &mut Model) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (self.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        let mut slot = 0;
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |p: &mut Param| {
            if !p.wants_grad() {
                return;
            }
            if moments.len() == slot {
                moments.push((
                    ArrayD::zeros(p.value.raw_dim()),
                    ArrayD::zeros(p.value.raw_dim()),
                ));
            }
            let (m, v) = &mut moments[slot];
            slot += 1;
            let Some(g) = p.grad.take() else { return };
            Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(&g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
                });
        });
    }
}

/// Multiplies the learning rate by `factor` when the monitored loss has
/// gone more than `patience` consecutive epochs without a new minimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauScheduler {
    factor: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Returns the learning rate for the next epoch.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return lr * self.factor;
        }
        lr
    }
}

/// Tracks the best score and signals a stop after `patience` epochs
/// without a strict improvement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch score; returns true when it is a new best.
    pub fn observe(&mut self, score: f64) -> bool {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_reduces_after_patience() {
        let mut s = PlateauScheduler::new(0.1, 2);
        let mut lr = 1e-3;
        let mut seq = Vec::new();
        for loss in [1.0, 0.9, 0.95, 0.91, 0.92, 0.5, 0.6, 0.6, 0.7] {
            lr = s.step(loss, lr);
            seq.push(lr);
        }
        let want = [1e-3, 1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4, 1e-4, 1e-5];
        for (a, b) in seq.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{seq:?}");
        }
    }

    #[test]
    fn early_stop_patience_zero_stops_at_once() {
        let mut e = EarlyStopping::new(0);
        assert!(e.observe(0.5));
        assert!(e.should_stop());
    }

    #[test]
    fn early_stop_counts_stale_epochs() {
        let mut e = EarlyStopping::new(2);
        assert!(e.observe(0.5));
        assert!(!e.observe(0.5));
        assert!(!e.should_stop());
        assert!(!e.observe(0.4));
        assert!(e.should_stop());
        assert_eq!(e.best(), Some(0.5));
    }
}
