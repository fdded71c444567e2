//! Seeded "low-rank plus sparse spikes" attribute tables.
//!
//! Each row is `U·diag(√λ)·z + s + ε` with `z ~ N(0, I)`, `U` an orthonormal
//! `D×rank` basis, `s` a vector with exactly `k` nonzero spikes and `ε`
//! white noise. The columns of `U` are low-frequency cosines perturbed by a
//! Gaussian jitter and re-orthonormalized, so fixed frequency transforms
//! compact energy partially and the KLT fully.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dct_matrix, dot, AttributeTable, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub channels: usize,
    pub rank: usize,
    /// Eigenvalue `i` is `top_std² · (i+1)^(−exponent)`.
    pub exponent: f64,
    pub top_std: f64,
    /// Spikes per row.
    pub spikes: usize,
    /// Mean spike magnitude.
    pub spike_scale: f64,
    pub noise_std: f64,
    /// Perturbation of the cosine basis before orthonormalization.
    pub basis_jitter: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The reference source: 20000 rows, 50 channels, rank 15, 5 spikes per row.
    pub fn standard(seed: u64) -> Self {
        Self {
            rows: 20_000,
            channels: 50,
            rank: 15,
            exponent: 2.2,
            top_std: 1.0,
            spikes: 5,
            spike_scale: 0.05,
            noise_std: 0.002,
            basis_jitter: 0.35,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: self.rows,
            });
        }
        if self.channels == 0 || self.rank > self.channels || self.spikes > self.channels {
            return Err(Error::BadSize(format!(
                "need rank {} and spikes {} within {} channels",
                self.rank, self.spikes, self.channels
            )));
        }
        for (name, v) in [
            ("exponent", self.exponent),
            ("top_std", self.top_std),
            ("spike_scale", self.spike_scale),
            ("noise_std", self.noise_std),
            ("basis_jitter", self.basis_jitter),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Eigenvalues of the low-rank part, decreasing.
    pub fn spectrum(&self) -> Vec<f64> {
        (0..self.rank)
            .map(|i| self.top_std * self.top_std * ((i + 1) as f64).powf(-self.exponent))
            .collect()
    }

    /// Per-channel variance added by spikes and noise.
    pub fn floor_variance(&self) -> f64 {
        // spike magnitude is scale·(½ + u), E[(½ + u)²] = 13/12
        self.spikes as f64 / self.channels as f64 * self.spike_scale * self.spike_scale * 13.0 / 12.0
            + self.noise_std * self.noise_std
    }
}

/// Orthonormal `D×rank` basis of jittered cosines.
pub fn source_basis(channels: usize, rank: usize, jitter: f64, rng: &mut impl Rng) -> Result<Matrix> {
    let dct = dct_matrix(channels)?;
    let scale = jitter / (channels as f64).sqrt();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(rank);
    for k in 0..rank {
        let mut v: Vec<f64> = dct
            .row(k)
            .iter()
            .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for _ in 0..2 {
            for u in &cols {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        cols.push(v);
    }
    Ok(Matrix::from_fn(channels, rank, |i, j| cols[j][i]))
}

pub fn synth_source(spec: &SyntheticSpec) -> Result<AttributeTable> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let basis = source_basis(spec.channels, spec.rank, spec.basis_jitter, &mut rng)?;
    let amp: Vec<f64> = spec.spectrum().iter().map(|l| l.sqrt()).collect();
    let mut out = Matrix::zeros(spec.rows, spec.channels);
    let mut z = vec![0.0; spec.rank];
    for i in 0..spec.rows {
        for (zk, a) in z.iter_mut().zip(&amp) {
            *zk = a * rng.sample::<f64, _>(StandardNormal);
        }
        let row = out.row_mut(i);
        for (c, v) in row.iter_mut().enumerate() {
            *v = dot(basis.row(c), &z);
        }
        if spec.spikes > 0 {
            for c in sample(&mut rng, spec.channels, spec.spikes) {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                row[c] += sign * spec.spike_scale * (0.5 + rng.random::<f64>());
            }
        }
        if spec.noise_std > 0.0 {
            for v in row.iter_mut() {
                *v += spec.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(out)
}
