//! Refinement layer: learned linear measurements of the base-layer residual,
//! decoded by an unfolded ISTA network.
//!
//! Analysis is `y = A r`. Synthesis starts from `β⁰ = 0` and runs one ISTA
//! update per layer with per-layer, per-atom steps `η_k` and thresholds `τ_k`:
//!
//! ```text
//! β^{k+1} = S_{τ_k}( β^k − η_k ⊙ (AD)ᵀ (AD β^k − ŷ) )
//! r̂       = D β^{N_u}
//! ```
//!
//! [`ista_solve`] is the classic solver with a single scalar step and
//! threshold `ηγ`; an unfolded model whose layers all carry those values
//! reproduces it exactly.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{norm2, spectral_norm_sq, Matrix};

/// Shape of a refinement model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefinementDims {
    /// Input (residual) dimension `D`.
    pub channels: usize,
    /// Number of measurements `N_t`.
    pub measurements: usize,
    /// Dictionary width `N_d`.
    pub atoms: usize,
    /// Unfolded layers `N_u`.
    pub layers: usize,
}

impl RefinementDims {
    /// `N_t·D + D·N_d + 2·N_u·N_d`.
    pub fn param_count(&self) -> usize {
        self.measurements * self.channels + self.channels * self.atoms + 2 * self.layers * self.atoms
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.atoms == 0 {
            return Err(Error::BadSize("refinement needs nonzero channels and atoms".into()));
        }
        if self.measurements == 0 || self.measurements >= self.channels {
            return Err(Error::BadSize(format!(
                "measurements {} must be in 1..{} (compressive)",
                self.measurements, self.channels
            )));
        }
        if self.layers == 0 {
            return Err(Error::BadSize("at least one unfolded layer required".into()));
        }
        Ok(())
    }
}

/// Step sizes and thresholds of one unfolded layer, one entry per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct IstaLayer {
    pub step: Vec<f64>,
    pub threshold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementModel {
    measure: Matrix,
    dict: Matrix,
    layers: Vec<IstaLayer>,
    /// Cached `A·D`.
    effective: Matrix,
}

impl RefinementModel {
    pub fn new(measure: Matrix, dict: Matrix, layers: Vec<IstaLayer>) -> Result<Self> {
        let dims = RefinementDims {
            channels: measure.cols(),
            measurements: measure.rows(),
            atoms: dict.cols(),
            layers: layers.len(),
        };
        dims.validate()?;
        if dict.rows() != dims.channels {
            return Err(Error::DimMismatch {
                expected: dims.channels,
                got: dict.rows(),
            });
        }
        for layer in &layers {
            for v in [&layer.step, &layer.threshold] {
                if v.len() != dims.atoms {
                    return Err(Error::DimMismatch {
                        expected: dims.atoms,
                        got: v.len(),
                    });
                }
            }
            if let Some(&t) = layer.threshold.iter().find(|t| !(**t >= 0.0)) {
                return Err(Error::BadThreshold(t));
            }
            if let Some(&s) = layer.step.iter().find(|s| !(**s > 0.0)) {
                return Err(Error::BadStep(s));
            }
        }
        if !measure.is_finite() || !dict.is_finite() {
            return Err(Error::Inconsistent("non-finite refinement weights".into()));
        }
        let effective = measure.matmul(&dict);
        Ok(Self {
            measure,
            dict,
            layers,
            effective,
        })
    }

    /// Scaled-Gaussian initialization: `A` and `D` entries drawn with std
    /// `1/√D`, rows of `A` normalized, every step at `1/L` for
    /// `L = ‖(AD)ᵀAD‖₂`, and every threshold at `threshold`.
    pub fn init(dims: RefinementDims, threshold: f64, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let std = 1.0 / (dims.channels as f64).sqrt();
        let mut measure = Matrix::from_fn(dims.measurements, dims.channels, |_, _| {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        for i in 0..measure.rows() {
            let n = norm2(measure.row(i));
            measure.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        let dict = Matrix::from_fn(dims.channels, dims.atoms, |_, _| {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        let lip = spectral_norm_sq(&measure.matmul(&dict));
        let layer = IstaLayer {
            step: vec![1.0 / lip; dims.atoms],
            threshold: vec![threshold; dims.atoms],
        };
        Self::new(measure, dict, vec![layer; dims.layers])
    }

    pub fn dims(&self) -> RefinementDims {
        RefinementDims {
            channels: self.measure.cols(),
            measurements: self.measure.rows(),
            atoms: self.dict.cols(),
            layers: self.layers.len(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.dims().param_count()
    }

    pub fn measure(&self) -> &Matrix {
        &self.measure
    }

    pub fn dict(&self) -> &Matrix {
        &self.dict
    }

    pub fn layers(&self) -> &[IstaLayer] {
        &self.layers
    }

    /// Applies `map` to every parameter; used to round to storage precision.
    pub fn map_values(&mut self, map: impl Fn(f64) -> f64) {
        self.measure.data_mut().iter_mut().for_each(|v| *v = map(*v));
        self.dict.data_mut().iter_mut().for_each(|v| *v = map(*v));
        for l in &mut self.layers {
            l.step.iter_mut().for_each(|v| *v = map(*v));
            l.threshold.iter_mut().for_each(|v| *v = map(*v));
        }
        self.effective = self.measure.matmul(&self.dict);
    }

    /// `y = A r`.
    pub fn analyze(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.measure.cols() {
            return Err(Error::DimMismatch {
                expected: self.measure.cols(),
                got: r.len(),
            });
        }
        Ok(self.measure.mul_vec(r))
    }

    /// Runs the unfolded layers on `ŷ` and returns the sparse code `β^{N_u}`.
    pub fn sparse_code(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.measure.rows() {
            return Err(Error::DimMismatch {
                expected: self.measure.rows(),
                got: y.len(),
            });
        }
        let mut beta = vec![0.0; self.dict.cols()];
        for layer in &self.layers {
            beta = layer_update(&beta, &self.effective, y, &layer.step, &layer.threshold);
        }
        Ok(beta)
    }

    /// `r̂ = D β^{N_u}`.
    pub fn synthesize(&self, y: &[f64]) -> Result<Vec<f64>> {
        let beta = self.sparse_code(y)?;
        Ok(self.dict.mul_vec(&beta))
    }
}

/// One ISTA update with per-atom step and threshold.
fn layer_update(beta: &[f64], effective: &Matrix, y: &[f64], step: &[f64], threshold: &[f64]) -> Vec<f64> {
    let mut resid = effective.mul_vec(beta);
    for (r, yi) in resid.iter_mut().zip(y) {
        *r -= yi;
    }
    let grad = effective.tmul_vec(&resid);
    beta.iter()
        .zip(&grad)
        .zip(step.iter().zip(threshold))
        .map(|((b, g), (s, t))| shrink(b - s * g, *t))
        .collect()
}

#[inline]
pub(crate) fn shrink(z: f64, tau: f64) -> f64 {
    if z > tau {
        z - tau
    } else if z < -tau {
        z + tau
    } else {
        0.0
    }
}

/// Element-wise `sign(z)·max(|z| − τ, 0)`.
pub fn soft_threshold(z: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
    if z.len() != tau.len() {
        return Err(Error::DimMismatch {
            expected: z.len(),
            got: tau.len(),
        });
    }
    if let Some(&t) = tau.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::BadThreshold(t));
    }
    Ok(z.iter().zip(tau).map(|(z, t)| shrink(*z, *t)).collect())
}

/// `½‖ŷ − ADβ‖² + γ‖β‖₁`.
pub fn ista_objective(y: &[f64], measure: &Matrix, dict: &Matrix, gamma: f64, beta: &[f64]) -> f64 {
    let pred = measure.mul_vec(&dict.mul_vec(beta));
    let fit: f64 = pred.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum();
    0.5 * fit + gamma * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Plain ISTA from `β⁰ = 0` with scalar step `η` and threshold `ηγ`.
///
/// Requires `η < 2/L` with `L` the largest eigenvalue of `(AD)ᵀ(AD)`.
pub fn ista_solve(y: &[f64], measure: &Matrix, dict: &Matrix, gamma: f64, eta: f64, iters: usize) -> Result<Vec<f64>> {
    ista_solve_observed(y, measure, dict, gamma, eta, iters, |_| {})
}

/// [`ista_solve`] that hands every iterate to `observe`.
pub fn ista_solve_observed(
    y: &[f64],
    measure: &Matrix,
    dict: &Matrix,
    gamma: f64,
    eta: f64,
    iters: usize,
    mut observe: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    if measure.cols() != dict.rows() {
        return Err(Error::DimMismatch {
            expected: measure.cols(),
            got: dict.rows(),
        });
    }
    if y.len() != measure.rows() {
        return Err(Error::DimMismatch {
            expected: measure.rows(),
            got: y.len(),
        });
    }
    if !(gamma >= 0.0) {
        return Err(Error::BadThreshold(gamma));
    }
    let effective = measure.matmul(dict);
    let bound = 2.0 / spectral_norm_sq(&effective);
    if !(eta > 0.0 && eta < bound) {
        return Err(Error::StepTooLarge { step: eta, bound });
    }
    let n = dict.cols();
    let step = vec![eta; n];
    let threshold = vec![eta * gamma; n];
    let mut beta = vec![0.0; n];
    for _ in 0..iters {
        beta = layer_update(&beta, &effective, y, &step, &threshold);
        observe(&beta);
    }
    Ok(beta)
}

/// Lipschitz constant of `ŷ ↦ r̂` for the unfolded synthesis.
///
/// With `L = ‖(AD)ᵀAD‖₂` and `a_k = η_max,k·L`, a perturbation of `ŷ` by `δ`
/// moves `r̂` by at most `(∏_k (1 + a_k) − 1) · ‖D‖₂ / ‖AD‖₂ · ‖δ‖`.
pub fn lipschitz_bound(model: &RefinementModel) -> f64 {
    let gram = spectral_norm_sq(&model.effective);
    if gram == 0.0 {
        return 0.0;
    }
    let growth: f64 = model
        .layers
        .iter()
        .map(|l| 1.0 + l.step.iter().cloned().fold(0.0, f64::max) * gram)
        .product();
    (growth - 1.0) * spectral_norm_sq(&model.dict).sqrt() / gram.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
    }

    fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b)
    }

    /// Dense linear solve by Gaussian elimination with partial pivoting.
    #[allow(clippy::needless_range_loop)]
    fn solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = a.row(i).to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())
                .unwrap();
            m.swap(c, p);
            for r in (c + 1)..n {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = ((r + 1)..n).map(|k| m[r][k] * x[k]).sum();
            x[r] = (m[r][n] - s) / m[r][r];
        }
        x
    }

    #[test]
    fn param_counts() {
        let d = RefinementDims {
            channels: 50,
            measurements: 15,
            atoms: 50,
            layers: 6,
        };
        assert_eq!(d.param_count(), 3850);
        assert_eq!(RefinementDims { layers: 0, ..d }.param_count(), 3250);
    }

    #[test]
    fn analyze_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = RefinementModel::init(
            RefinementDims {
                channels: 3,
                measurements: 2,
                atoms: 3,
                layers: 2,
            },
            0.01,
            &mut rng,
        )
        .unwrap();
        assert_eq!(model.analyze(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        let rows = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let id = RefinementModel::new(
            rows,
            Matrix::identity(3),
            vec![IstaLayer {
                step: vec![0.5; 3],
                threshold: vec![0.0; 3],
            }],
        )
        .unwrap();
        assert_eq!(id.analyze(&[4.0, 5.0, 6.0]).unwrap(), vec![4.0, 5.0]);
        assert!(matches!(id.analyze(&[1.0]), Err(Error::DimMismatch { .. })));
        for _ in 0..50 {
            let r: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let y = model.analyze(&r).unwrap();
            assert!(norm2(&y) <= model.measure().frobenius_norm() * norm2(&r) + 1e-12);
        }
    }

    #[test]
    fn soft_threshold_examples() {
        assert!((soft_threshold(&[1.2], &[0.5]).unwrap()[0] - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(&[-0.3], &[0.5]).unwrap(), vec![0.0]);
        let z = [-3.0, -0.1, 0.0, 2.5];
        assert_eq!(soft_threshold(&z, &[0.0; 4]).unwrap(), z.to_vec());
        assert!(matches!(soft_threshold(&[1.0], &[-0.1]), Err(Error::BadThreshold(_))));
    }

    #[test]
    fn ista_zero_measurements_stay_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian(4, 8, 0.3, &mut rng);
        let d = gaussian(8, 8, 0.3, &mut rng);
        let eta = 1.0 / spectral_norm_sq(&a.matmul(&d));
        ista_solve_observed(&[0.0; 4], &a, &d, 0.1, eta, 20, |b| {
            assert!(b.iter().all(|v| *v == 0.0))
        })
        .unwrap();
    }

    #[test]
    fn ista_rejects_large_step() {
        let a = Matrix::identity(2);
        let d = Matrix::identity(2);
        assert!(matches!(
            ista_solve(&[1.0, 1.0], &a, &d, 0.0, 2.5, 3),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn ista_without_penalty_solves_square_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::identity(4).add(&gaussian(4, 4, 0.15, &mut rng));
        let d = Matrix::identity(4).add(&gaussian(4, 4, 0.15, &mut rng));
        let y: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let eta = 1.0 / spectral_norm_sq(&a.matmul(&d));
        let beta = ista_solve(&y, &a, &d, 0.0, eta, 10_000).unwrap();
        let direct = solve(&a.matmul(&d), &y);
        let fit = a.matmul(&d).mul_vec(&beta);
        let resid: f64 = fit.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(resid < 1e-6, "{resid}");
        assert!(relative_gap(&beta, &direct) < 1e-6);
    }

    #[test]
    fn ista_recovers_one_sparse_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian(8, 16, 1.0, &mut rng);
        let d = Matrix::identity(16);
        let true_idx = 11;
        let true_val = 1.3;
        let y: Vec<f64> = a.column(true_idx).iter().map(|v| v * true_val).collect();

        // enumerate every single-atom support and keep the best least-squares fit
        let (best, coef) = (0..16)
            .map(|j| {
                let col = a.column(j);
                let c = dot(&col, &y) / dot(&col, &col);
                let res: f64 = col.iter().zip(&y).map(|(a, y)| (y - c * a).powi(2)).sum();
                (j, c, res)
            })
            .min_by(|x, y| x.2.partial_cmp(&y.2).unwrap())
            .map(|(j, c, _)| (j, c))
            .unwrap();
        assert_eq!(best, true_idx);

        // on a one-atom support the lasso optimum is c − γ/‖a_j‖²
        let gamma = 0.05;
        let col = a.column(best);
        let shrunk = coef - gamma / dot(&col, &col);
        let eta = 1.0 / spectral_norm_sq(&a);
        let beta = ista_solve(&y, &a, &d, gamma, eta, 20_000).unwrap();
        let support: Vec<usize> = (0..16).filter(|&j| beta[j] != 0.0).collect();
        assert_eq!(support, vec![best]);
        assert!((beta[best] - shrunk).abs() < 1e-6, "{} vs {shrunk}", beta[best]);
    }

    #[test]
    fn ista_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let a = gaussian(6, 12, 0.4, &mut rng);
            let d = gaussian(12, 12, 0.4, &mut rng);
            let y: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            let bound = 2.0 / spectral_norm_sq(&a.matmul(&d));
            // steps up to just below the stability bound
            let eta = bound * (0.2 + 0.079 * trial as f64);
            let mut prev = ista_objective(&y, &a, &d, 0.05, &[0.0; 12]);
            ista_solve_observed(&y, &a, &d, 0.05, eta, 200, |b| {
                let f = ista_objective(&y, &a, &d, 0.05, b);
                assert!(f <= prev + 1e-12 * prev.abs(), "objective rose {prev} -> {f}");
                prev = f;
            })
            .unwrap();
        }
    }

    #[test]
    fn unfolded_zero_input_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = RefinementModel::init(
            RefinementDims {
                channels: 10,
                measurements: 4,
                atoms: 10,
                layers: 6,
            },
            0.05,
            &mut rng,
        )
        .unwrap();
        assert!(m.synthesize(&[0.0; 4]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tied_unfolded_network_equals_ista() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for layers in [1usize, 3, 6] {
            let a = gaussian(5, 12, 0.3, &mut rng);
            let d = gaussian(12, 9, 0.3, &mut rng);
            let eta = 0.9 / spectral_norm_sq(&a.matmul(&d));
            let gamma = 0.02;
            let layer = IstaLayer {
                step: vec![eta; 9],
                threshold: vec![eta * gamma; 9],
            };
            let model = RefinementModel::new(a.clone(), d.clone(), vec![layer; layers]).unwrap();
            let y: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let beta = ista_solve(&y, &a, &d, gamma, eta, layers).unwrap();
            assert_eq!(model.sparse_code(&y).unwrap(), beta);
            assert_eq!(model.synthesize(&y).unwrap(), d.mul_vec(&beta));
        }
    }

    #[test]
    fn unfolded_synthesis_is_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = RefinementModel::init(
            RefinementDims {
                channels: 20,
                measurements: 6,
                atoms: 20,
                layers: 4,
            },
            0.02,
            &mut rng,
        )
        .unwrap();
        let c = lipschitz_bound(&m);
        for _ in 0..200 {
            let y: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            let delta: Vec<f64> = (0..6).map(|_| 1e-3 * rng.sample::<f64, _>(StandardNormal)).collect();
            let y2: Vec<f64> = y.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let r1 = m.synthesize(&y).unwrap();
            let r2 = m.synthesize(&y2).unwrap();
            let diff: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a - b).collect();
            assert!(norm2(&diff) <= c * norm2(&delta) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn constructor_validates() {
        let a = Matrix::identity(3).leading_columns(3);
        let layer = IstaLayer {
            step: vec![0.1; 3],
            threshold: vec![0.0; 3],
        };
        // not compressive
        assert!(RefinementModel::new(a, Matrix::identity(3), vec![layer.clone()]).is_err());
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0]]);
        let bad = IstaLayer {
            step: vec![0.1; 3],
            threshold: vec![-0.1, 0.0, 0.0],
        };
        assert!(matches!(
            RefinementModel::new(a.clone(), Matrix::identity(3), vec![bad]),
            Err(Error::BadThreshold(_))
        ));
        assert!(RefinementModel::new(a, Matrix::identity(3), vec![]).is_err());
    }
}
