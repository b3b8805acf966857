//! Learning-rate schedule and the epoch-level stopping rules.
//!
//! The one-cycle value is computed per optimizer step; the plateau rule
//! maintains a multiplicative `lr_scale` that is applied on top of it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneCycleConfig {
    /// Fraction of the phase spent warming up.
    pub pct_start: f64,
    /// Starting rate is `max_lr / div_start`.
    pub div_start: f64,
    /// Final rate is `max_lr / div_final`.
    pub div_final: f64,
}

impl Default for OneCycleConfig {
    fn default() -> Self {
        Self {
            pct_start: 0.25,
            div_start: 25.0,
            div_final: 1e4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 3,
            factor: 0.5,
            min_delta: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 6,
            min_delta: 0.0,
        }
    }
}

/// Half-cosine interpolation from `from` (t = 0) to `to` (t = 1).
fn cosine(from: f64, to: f64, t: f64) -> f64 {
    to + (from - to) * (1.0 + (PI * t).cos()) / 2.0
}

/// One-cycle learning rate at `step` of `total_steps`.
///
/// Rises from `max_lr / div_start` to `max_lr` over the first
/// `round(pct_start * total_steps)` steps, then anneals to
/// `max_lr / div_final` at `total_steps`. Both legs are half cosines.
pub fn one_cycle_lr(
    step: usize,
    total_steps: usize,
    max_lr: f64,
    pct_start: f64,
    div_start: f64,
    div_final: f64,
) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Param(format!("step {step} exceeds total_steps {total_steps}")));
    }
    let warmup = (pct_start * total_steps as f64).round() as usize;
    let lr = if step <= warmup {
        if warmup == 0 {
            max_lr
        } else {
            cosine(max_lr / div_start, max_lr, step as f64 / warmup as f64)
        }
    } else {
        let t = (step - warmup) as f64 / (total_steps - warmup) as f64;
        cosine(max_lr, max_lr / div_final, t)
    };
    Ok(lr)
}

/// `true` when `val_loss` beats `best` by more than `min_delta`. Anything
/// beats an empty history.
pub fn is_improvement(val_loss: f64, best: Option<f64>, min_delta: f64) -> bool {
    best.is_none_or(|b| val_loss < b - min_delta)
}

/// Records one epoch's validation loss.
///
/// Epochs that fail to improve on the running minimum by more than
/// `min_delta` count towards `patience`; reaching it multiplies `lr_scale`
/// by `factor` and restarts the count. `best_val_loss` always tracks the
/// running minimum.
pub fn plateau_step(state: &mut TrainState, val_loss: f64, cfg: &PlateauConfig) {
    if is_improvement(val_loss, state.best_val_loss, cfg.min_delta) {
        state.plateau_wait = 0;
    } else {
        state.plateau_wait += 1;
        if state.plateau_wait >= cfg.patience {
            state.lr_scale *= cfg.factor;
            state.plateau_wait = 0;
        }
    }
    state.best_val_loss = Some(state.best_val_loss.map_or(val_loss, |b| b.min(val_loss)));
    state.phase_val_losses.push(val_loss);
}

/// Trailing epochs of the current phase without an improvement larger than
/// `min_delta` over the running minimum.
pub fn epochs_since_improvement(state: &TrainState, min_delta: f64) -> usize {
    let mut best = state.phase_start_best;
    let mut since = 0;
    for &v in &state.phase_val_losses {
        if is_improvement(v, best, min_delta) {
            since = 0;
        } else {
            since += 1;
        }
        best = Some(best.map_or(v, |b| b.min(v)));
    }
    since
}

pub fn early_stop_check(state: &TrainState, cfg: &EarlyStopConfig) -> bool {
    epochs_since_improvement(state, cfg.min_delta) >= cfg.patience
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(losses: &[f64], plateau: &PlateauConfig, stop: &EarlyStopConfig) -> (TrainState, Vec<bool>) {
        let mut s = TrainState::default();
        let mut stops = Vec::new();
        for &l in losses {
            plateau_step(&mut s, l, plateau);
            stops.push(early_stop_check(&s, stop));
        }
        (s, stops)
    }

    #[test]
    fn one_cycle_landmarks() {
        let lr = |s| one_cycle_lr(s, 100, 1e-3, 0.25, 25.0, 1e4).unwrap();
        assert!((lr(0) - 1e-3 / 25.0).abs() < 1e-12);
        assert!((lr(25) - 1e-3).abs() < 1e-12);
        assert!((lr(100) - 1e-7).abs() < 1e-12);
        assert!((lr(62) - (lr(63))).abs() < 1e-4);
        assert!(matches!(
            one_cycle_lr(101, 100, 1e-3, 0.25, 25.0, 1e4),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn descent_midpoint() {
        // warmup 25 of 125 steps; descent midpoint at step 75
        let v = one_cycle_lr(75, 125, 1e-3, 0.2, 25.0, 1e4).unwrap();
        assert!((v - 5.0005e-4).abs() < 1e-12);
    }

    #[test]
    fn plateau_examples() {
        let stop = EarlyStopConfig::default();
        let (s, _) = run(&[1.0, 0.9, 0.8, 0.7], &PlateauConfig::default(), &stop);
        assert_eq!(s.lr_scale, 1.0);
        let p = PlateauConfig {
            patience: 2,
            factor: 0.5,
            min_delta: 0.0,
        };
        let mut s = TrainState::default();
        plateau_step(&mut s, 1.0, &p);
        plateau_step(&mut s, 1.0, &p);
        assert_eq!(s.lr_scale, 1.0);
        plateau_step(&mut s, 1.0, &p);
        assert_eq!(s.lr_scale, 0.5);
        plateau_step(&mut s, 1.0, &p);
        plateau_step(&mut s, 1.0, &p);
        assert_eq!(s.lr_scale, 0.25);
    }

    #[test]
    fn early_stop_examples() {
        let p = PlateauConfig::default();
        let cfg = EarlyStopConfig {
            patience: 3,
            min_delta: 0.0,
        };
        let (_, stops) = run(&[1.0, 0.9, 0.8, 0.7, 0.6], &p, &cfg);
        assert!(stops.iter().all(|s| !s));
        let (_, stops) = run(&[1.0; 4], &p, &cfg);
        assert_eq!(stops, [false, false, false, true]);
        let cfg = EarlyStopConfig {
            patience: 3,
            min_delta: 0.05,
        };
        let (s, stops) = run(&[1.00, 0.97, 0.94, 0.91], &p, &cfg);
        assert_eq!(stops, [false, false, false, true]);
        assert_eq!(s.best_val_loss, Some(0.91));
    }
}
