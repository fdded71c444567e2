//! Static per-channel Gaussian entropy model and a range coder driven by it.
//!
//! The same Gaussian interval masses feed both the differentiable rate
//! estimate ([`rate_bits`]) and, after quantization to 16-bit frequencies,
//! the actual coder ([`encode_symbols`] / [`decode_symbols`]).

mod range_coder;
mod tables;

pub use range_coder::{RangeDecoder, RangeEncoder, FREQ_BITS, FREQ_TOTAL};
pub use tables::{
    decode_symbols, decode_with_tables, encode_symbols, encode_with_tables, model_information_bits, FrequencyTable,
    MAX_HALF_WIDTH,
};

use std::f64::consts::{LN_2, SQRT_2};

use crate::error::{Error, Result};
use crate::quant::QuantSchedule;

/// Per-symbol probability floor used by the rate estimate.
pub const PROB_FLOOR: f64 = 9.094_947_017_729_282e-13; // 2^-40

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEntropyModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl GaussianEntropyModel {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(Error::DimMismatch {
                expected: mean.len(),
                got: scale.len(),
            });
        }
        if let Some(&s) = scale.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Inconsistent(format!("entropy scale must be positive, got {s}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Inconsistent("non-finite entropy mean".into()));
        }
        Ok(Self { mean, scale })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Applies `map` to every parameter; used to round to storage precision.
    pub fn map_values(&mut self, map: impl Fn(f64) -> f64) {
        self.mean.iter_mut().for_each(|v| *v = map(*v));
        self.scale.iter_mut().for_each(|v| *v = map(*v));
    }

    /// One frequency table per channel.
    pub fn tables(&self, sched: &QuantSchedule) -> Result<Vec<FrequencyTable>> {
        if sched.len() != self.len() {
            return Err(Error::DimMismatch {
                expected: self.len(),
                got: sched.len(),
            });
        }
        Ok((0..self.len())
            .map(|i| FrequencyTable::build(self.mean[i], self.scale[i], sched.steps()[i]))
            .collect())
    }
}

/// `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

#[inline]
fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// `Φ(hi) − Φ(lo)`, evaluated on the tail that keeps precision.
pub fn interval_mass(lo: f64, hi: f64) -> f64 {
    let m = if lo >= 0.0 {
        0.5 * (libm::erfc(lo / SQRT_2) - libm::erfc(hi / SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (libm::erfc(-hi / SQRT_2) - libm::erfc(-lo / SQRT_2))
    } else {
        1.0 - 0.5 * libm::erfc(-lo / SQRT_2) - 0.5 * libm::erfc(hi / SQRT_2)
    };
    m.max(0.0)
}

/// Bits of one dequantized value and their partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolBits {
    pub bits: f64,
    pub d_value: f64,
    pub d_mean: f64,
    /// Derivative w.r.t. `ln σ`.
    pub d_log_scale: f64,
    pub d_step: f64,
}

/// `−log₂(Φ((x−μ+Δ/2)/σ) − Φ((x−μ−Δ/2)/σ))`, floored at 2⁻⁴⁰ probability.
/// Derivatives are zero where the floor is active.
pub fn symbol_bits(value: f64, mean: f64, scale: f64, step: f64) -> SymbolBits {
    let hi = (value - mean + 0.5 * step) / scale;
    let lo = (value - mean - 0.5 * step) / scale;
    let p = interval_mass(lo, hi);
    if p < PROB_FLOOR {
        return SymbolBits {
            bits: -PROB_FLOOR.log2(),
            d_value: 0.0,
            d_mean: 0.0,
            d_log_scale: 0.0,
            d_step: 0.0,
        };
    }
    let (phi_hi, phi_lo) = (normal_pdf(hi), normal_pdf(lo));
    let k = -1.0 / (p * LN_2);
    let dp_dvalue = (phi_hi - phi_lo) / scale;
    SymbolBits {
        bits: -p.log2(),
        d_value: k * dp_dvalue,
        d_mean: -k * dp_dvalue,
        d_log_scale: k * (lo * phi_lo - hi * phi_hi),
        d_step: k * (phi_hi + phi_lo) / (2.0 * scale),
    }
}

/// Estimated bits for one vector of dequantized values.
pub fn rate_bits(values: &[f64], model: &GaussianEntropyModel, sched: &QuantSchedule) -> Result<f64> {
    if values.len() != model.len() || sched.len() != model.len() {
        return Err(Error::DimMismatch {
            expected: model.len(),
            got: if values.len() != model.len() {
                values.len()
            } else {
                sched.len()
            },
        });
    }
    Ok((0..values.len())
        .map(|i| symbol_bits(values[i], model.mean[i], model.scale[i], sched.steps()[i]).bits)
        .sum())
}

/// Estimated bits for every row of a table of dequantized values.
pub fn rate_bits_table(
    values: &crate::linalg::Matrix,
    model: &GaussianEntropyModel,
    sched: &QuantSchedule,
) -> Result<f64> {
    let mut total = 0.0;
    for r in values.row_iter() {
        total += rate_bits(r, model, sched)?;
    }
    Ok(total)
}
