//! Uniform scalar quantization with a per-channel step schedule
//! `step_i = q_s · exp(α·i)`, and the additive uniform-noise proxy used while
//! training.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantSchedule {
    base_step: f64,
    alpha: f64,
    steps: Vec<f64>,
}

/// Builds the schedule `q_s · exp(α·i)` for `i = 0..n`.
pub fn channel_schedule(base_step: f64, alpha: f64, n: usize) -> Result<QuantSchedule> {
    if !(base_step > 0.0) || !base_step.is_finite() {
        return Err(Error::BadStep(base_step));
    }
    if !alpha.is_finite() {
        return Err(Error::BadStep(alpha));
    }
    let steps: Vec<f64> = (0..n).map(|i| base_step * libm::exp(alpha * i as f64)).collect();
    if let Some(&s) = steps.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::BadStep(s));
    }
    Ok(QuantSchedule {
        base_step,
        alpha,
        steps,
    })
}

impl QuantSchedule {
    pub fn base_step(&self) -> f64 {
        self.base_step
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `∂ step_i / ∂α = i · step_i`.
    pub fn alpha_gradient(&self) -> Vec<f64> {
        self.steps.iter().enumerate().map(|(i, s)| i as f64 * s).collect()
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.steps.len() {
            return Err(Error::DimMismatch {
                expected: self.steps.len(),
                got: n,
            });
        }
        Ok(())
    }
}

/// `round(x_i / step_i)`, ties away from zero.
pub fn quantize(x: &[f64], sched: &QuantSchedule) -> Result<Vec<i32>> {
    sched.check(x.len())?;
    x.iter()
        .zip(&sched.steps)
        .enumerate()
        .map(|(channel, (v, s))| {
            let q = (v / s).round();
            if q.is_finite() && q.abs() <= i32::MAX as f64 {
                Ok(q as i32)
            } else {
                Err(Error::Overflow { channel })
            }
        })
        .collect()
}

/// `symbol_i · step_i`.
pub fn dequantize(symbols: &[i32], sched: &QuantSchedule) -> Result<Vec<f64>> {
    sched.check(symbols.len())?;
    Ok(symbols.iter().zip(&sched.steps).map(|(q, s)| *q as f64 * s).collect())
}

/// `x_i + u_i` with `u_i ~ U(−step_i/2, step_i/2)`.
pub fn noise_proxy(x: &[f64], sched: &QuantSchedule, rng: &mut impl Rng) -> Result<Vec<f64>> {
    sched.check(x.len())?;
    Ok(x.iter()
        .zip(&sched.steps)
        .map(|(v, s)| v + s * (rng.random::<f64>() - 0.5))
        .collect())
}
