//! Base layer: a channel-wise orthonormal transform with top-`M` truncation.
//!
//! The KLT variant fits its basis to the data (eigenvectors of the sample
//! covariance). The DCT, Haar and identity variants use fixed, data-agnostic
//! bases and exist as baselines. All variants subtract the fitted column
//! mean before analysis:
//!
//! ```text
//! θ   = Vᵀ (f − m),   θ_p = θ[..M]
//! f̂   = V[:, ..M] θ̂_p + m
//! ```

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::linalg::{covariance, dct_matrix, haar_matrix, sym_eig, AttributeTable, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    Dct,
    Haar,
    Klt,
}

impl TransformKind {
    pub fn code(self) -> u8 {
        match self {
            TransformKind::Identity => 0,
            TransformKind::Dct => 1,
            TransformKind::Haar => 2,
            TransformKind::Klt => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => TransformKind::Identity,
            1 => TransformKind::Dct,
            2 => TransformKind::Haar,
            3 => TransformKind::Klt,
            _ => return None,
        })
    }

    /// Whether the basis is data-dependent and therefore has to be transmitted.
    pub fn stores_basis(self) -> bool {
        self == TransformKind::Klt
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Dct => "dct",
            TransformKind::Haar => "haar",
            TransformKind::Klt => "klt",
        }
    }
}

/// Fitted base-layer transform.
#[derive(Debug, Clone)]
pub struct BaseLayer {
    kind: TransformKind,
    mean: Vec<f64>,
    /// `D×D`, basis vectors as columns ordered by decreasing coefficient variance (KLT).
    basis: Matrix,
    /// Per-coefficient variance on the fitting sample; the eigenvalues for KLT.
    variances: Vec<f64>,
    rank: usize,
}

/// Equality over the transmitted parts; fitting-sample variances are ignored.
impl PartialEq for BaseLayer {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.rank == other.rank && self.mean == other.mean && self.basis == other.basis
    }
}

/// Fits a KLT on `x` and keeps the leading `rank` coefficients.
pub fn fit_klt(x: &AttributeTable, rank: usize) -> Result<BaseLayer> {
    check_rank(rank, x.cols())?;
    let s = covariance(x)?;
    let eig = sym_eig(&s)?;
    Ok(BaseLayer {
        kind: TransformKind::Klt,
        mean: x.column_means(),
        basis: eig.vectors,
        variances: eig.values,
        rank,
    })
}

/// Fits a base layer of any kind. Fixed transforms only fit the mean.
pub fn fit_base(kind: TransformKind, x: &AttributeTable, rank: usize) -> Result<BaseLayer> {
    if kind == TransformKind::Klt {
        return fit_klt(x, rank);
    }
    check_rank(rank, x.cols())?;
    let basis = fixed_basis(kind, x.cols())?;
    let s = covariance(x)?;
    let variances = basis.matmul_tn(&s.matmul(&basis));
    Ok(BaseLayer {
        kind,
        mean: x.column_means(),
        variances: (0..x.cols()).map(|i| variances.get(i, i)).collect(),
        basis,
        rank,
    })
}

fn check_rank(rank: usize, d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::BadSize("table has no channels".into()));
    }
    if rank == 0 || rank > d {
        return Err(Error::BadSize(format!("rank {rank} outside 1..={d}")));
    }
    Ok(())
}

/// Basis matrix (columns = basis vectors) of a data-agnostic transform.
pub fn fixed_basis(kind: TransformKind, d: usize) -> Result<Matrix> {
    match kind {
        TransformKind::Identity => Ok(Matrix::identity(d)),
        TransformKind::Dct => Ok(dct_matrix(d)?.transpose()),
        TransformKind::Haar => Ok(haar_basis(d).transpose()),
        TransformKind::Klt => Err(Error::BadSize("KLT basis is data-dependent".into())),
    }
}

/// Single-level Haar analysis rows for any `d ≥ 1`: low-pass rows of each
/// channel pair, an unpaired trailing channel (odd `d`) passed through, then
/// the high-pass rows. Equal to [`haar_matrix`] when `d` is a power of two.
pub fn haar_basis(d: usize) -> Matrix {
    if d.is_power_of_two() {
        if let Ok(m) = haar_matrix(d) {
            return m;
        }
    }
    let pairs = d / 2;
    let w = 1.0 / SQRT_2;
    let mut m = Matrix::zeros(d, d);
    for k in 0..pairs {
        m.set(k, 2 * k, w);
        m.set(k, 2 * k + 1, w);
    }
    let mut next = pairs;
    if d % 2 == 1 {
        m.set(next, d - 1, 1.0);
        next += 1;
    }
    for k in 0..pairs {
        m.set(next + k, 2 * k, w);
        m.set(next + k, 2 * k + 1, -w);
    }
    m
}

impl BaseLayer {
    /// Reassembles a base layer from transmitted parts.
    pub fn from_parts(kind: TransformKind, mean: Vec<f64>, basis: Matrix, rank: usize) -> Result<Self> {
        let d = mean.len();
        check_rank(rank, d)?;
        if basis.shape() != (d, d) {
            return Err(Error::DimMismatch {
                expected: d * d,
                got: basis.rows() * basis.cols(),
            });
        }
        Ok(Self {
            kind,
            mean,
            basis,
            variances: vec![f64::NAN; d],
            rank,
        })
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Coefficient variances on the fitting sample (NaN if reassembled from a bitstream).
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Retained basis columns `V[:, ..M]`.
    pub fn retained_basis(&self) -> Matrix {
        self.basis.leading_columns(self.rank)
    }

    /// Applies `map` to every transmitted value; used to round parameters to storage precision.
    /// Fixed bases are regenerated by the decoder and left untouched.
    pub fn map_values(&mut self, map: impl Fn(f64) -> f64) {
        self.mean.iter_mut().for_each(|v| *v = map(*v));
        if self.kind.stores_basis() {
            self.basis.data_mut().iter_mut().for_each(|v| *v = map(*v));
        }
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(Error::DimMismatch { expected, got });
        }
        Ok(())
    }

    /// All `D` coefficients `Vᵀ(f − m)`.
    pub fn analyze_full(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f.len(), self.dim())?;
        Ok(self.project(f, self.dim()))
    }

    /// Leading `M` coefficients `θ_p`.
    pub fn analyze(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f.len(), self.dim())?;
        Ok(self.project(f, self.rank))
    }

    fn project(&self, f: &[f64], keep: usize) -> Vec<f64> {
        let mut theta = vec![0.0; keep];
        for (i, (v, m)) in f.iter().zip(&self.mean).enumerate() {
            let c = v - m;
            let row = &self.basis.row(i)[..keep];
            for (t, v) in theta.iter_mut().zip(row) {
                *t += v * c;
            }
        }
        theta
    }

    /// `V[:, ..M] θ̂_p + m`.
    pub fn synthesize(&self, theta_p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(theta_p.len(), self.rank)?;
        let d = self.dim();
        let mut f = Vec::with_capacity(d);
        for i in 0..d {
            let row = &self.basis.row(i)[..self.rank];
            let mut acc = 0.0;
            for (v, t) in row.iter().zip(theta_p) {
                acc += v * t;
            }
            f.push(acc + self.mean[i]);
        }
        Ok(f)
    }

    /// Row-wise [`analyze_full`](Self::analyze_full) over a table.
    pub fn analyze_table_full(&self, x: &AttributeTable) -> Result<Matrix> {
        self.check_len(x.cols(), self.dim())?;
        let mut out = Matrix::zeros(x.rows(), self.dim());
        for (i, r) in x.row_iter().enumerate() {
            out.row_mut(i).copy_from_slice(&self.project(r, self.dim()));
        }
        Ok(out)
    }
}

/// `r = f − f̂_base`.
pub fn residual(f: &[f64], f_base: &[f64]) -> Result<Vec<f64>> {
    if f.len() != f_base.len() {
        return Err(Error::DimMismatch {
            expected: f.len(),
            got: f_base.len(),
        });
    }
    Ok(f.iter().zip(f_base).map(|(a, b)| a - b).collect())
}

/// Sum of the `m` largest entries over the total.
pub fn top_energy_fraction(energy: &[f64], m: usize) -> f64 {
    let mut e = energy.to_vec();
    e.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let total: f64 = e.iter().sum();
    e.iter().take(m).sum::<f64>() / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{energy_per_channel, pearson_abs};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn correlated_table(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = Matrix::from_fn(d, d, |i, j| if j <= i { 1.0 / (1.0 + (i - j) as f64) } else { 0.2 });
        let z = Matrix::from_fn(n, d, |_, j| {
            rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64).powf(-0.7)
        });
        let mut x = z.matmul_nt(&mix);
        for i in 0..n {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v += 0.1 * j as f64;
            }
        }
        x
    }

    #[test]
    fn iid_normal_eigenvalues_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Matrix::from_fn(5000, 4, |_, _| rng.sample(StandardNormal));
        let b = fit_klt(&x, 4).unwrap();
        for v in b.variances() {
            assert!((v - 1.0).abs() < 0.2, "{v}");
        }
    }

    #[test]
    fn duplicated_column_gives_zero_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let rows: Vec<[f64; 2]> = (0..300)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                [v, v]
            })
            .collect();
        let b = fit_klt(&Matrix::from_rows(&rows), 1).unwrap();
        assert!(b.variances()[1].abs() < 1e-12 * b.variances()[0]);
    }

    #[test]
    fn refit_on_own_coefficients_is_signed_permutation() {
        let x = correlated_table(3000, 6, 23);
        let b = fit_klt(&x, 6).unwrap();
        let theta = b.analyze_table_full(&x).unwrap();
        let b2 = fit_klt(&theta, 6).unwrap();
        let prod = b.basis().matmul_tn(b.basis());
        assert!(prod.sub(&Matrix::identity(6)).max_abs() < 1e-10);
        // coefficient table is already decorrelated: its own basis is ±I
        let v2 = b2.basis();
        for j in 0..6 {
            let col = v2.column(j);
            let big = col.iter().filter(|v| (v.abs() - 1.0).abs() < 1e-6).count();
            let small = col.iter().filter(|v| v.abs() < 1e-6).count();
            assert_eq!((big, small), (1, 5), "column {j}: {col:?}");
        }
    }

    #[test]
    fn analyze_examples() {
        let x = correlated_table(100, 3, 24);
        let b = fit_klt(&x, 2).unwrap();
        assert!(b.analyze(b.mean()).unwrap().iter().all(|v| *v == 0.0));

        let id = BaseLayer::from_parts(TransformKind::Identity, vec![0.0; 3], Matrix::identity(3), 2).unwrap();
        assert_eq!(id.analyze(&[5.0, 7.0, 9.0]).unwrap(), vec![5.0, 7.0]);
        assert!(matches!(id.analyze(&[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn full_rank_round_trip() {
        let x = correlated_table(200, 5, 25);
        let b = fit_klt(&x, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..20 {
            let f: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect();
            let back = b.synthesize(&b.analyze(&f).unwrap()).unwrap();
            let err = back.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9);
            assert!(residual(&f, &back).unwrap().iter().all(|r| r.abs() < 1e-9));
        }
    }

    #[test]
    fn synthesize_zero_gives_mean() {
        let x = correlated_table(100, 4, 27);
        let b = fit_klt(&x, 2).unwrap();
        assert_eq!(b.synthesize(&[0.0, 0.0]).unwrap(), b.mean().to_vec());
        assert!(matches!(b.synthesize(&[0.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn truncation_error_equals_discarded_eigenvalues() {
        let x = correlated_table(5000, 8, 28);
        for m in [1usize, 3, 6] {
            let b = fit_klt(&x, m).unwrap();
            let mut sq = 0.0;
            for r in x.row_iter() {
                let rec = b.synthesize(&b.analyze(r).unwrap()).unwrap();
                sq += r.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            let mse = sq / (x.rows() - 1) as f64;
            let tail: f64 = b.variances()[m..].iter().sum();
            assert!((mse - tail).abs() < 1e-9 * tail.max(1e-12), "m={m}: {mse} vs {tail}");
        }
    }

    #[test]
    fn residual_orthogonal_to_retained_basis() {
        let x = correlated_table(400, 6, 29);
        let b = fit_klt(&x, 3).unwrap();
        for r in x.row_iter().take(50) {
            let res = residual(r, &b.synthesize(&b.analyze(r).unwrap()).unwrap()).unwrap();
            for j in 0..3 {
                let c: f64 = b.basis().column(j).iter().zip(&res).map(|(v, r)| v * r).sum();
                assert!(c.abs() < 1e-9);
            }
        }
        assert!(residual(b.mean(), &b.synthesize(&[0.0; 3]).unwrap())
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(matches!(residual(&[1.0], &[1.0, 2.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn klt_decorrelates_and_orders_energy() {
        let x = correlated_table(4000, 10, 30);
        let b = fit_klt(&x, 10).unwrap();
        let theta = b.analyze_table_full(&x).unwrap();
        assert!(pearson_abs(&theta).unwrap().max_off_diagonal() < 1e-6);
        let e = energy_per_channel(&theta).unwrap();
        assert!(e.windows(2).all(|w| w[0] >= w[1] - 1e-15));
        // energy proportional to the fitting eigenvalues
        let total: f64 = b.variances().iter().sum();
        for (ei, lam) in e.iter().zip(b.variances()) {
            assert!((ei - lam / total).abs() < 1e-10);
        }
    }

    #[test]
    fn klt_dominates_fixed_transforms_in_energy_compaction() {
        let x = correlated_table(3000, 16, 31);
        let klt = fit_klt(&x, 16).unwrap();
        let klt_e = energy_per_channel(&klt.analyze_table_full(&x).unwrap()).unwrap();
        for kind in [TransformKind::Dct, TransformKind::Haar, TransformKind::Identity] {
            let fixed = fit_base(kind, &x, 16).unwrap();
            let e = energy_per_channel(&fixed.analyze_table_full(&x).unwrap()).unwrap();
            for m in 1..16 {
                assert!(
                    top_energy_fraction(&klt_e, m) >= top_energy_fraction(&e, m) - 1e-12,
                    "{kind:?} m={m}"
                );
            }
        }
    }

    #[test]
    fn haar_basis_matches_power_of_two_and_is_orthonormal() {
        assert_eq!(haar_basis(8), haar_matrix(8).unwrap());
        for d in [1usize, 3, 6, 50] {
            let h = haar_basis(d);
            assert!(h.matmul_nt(&h).sub(&Matrix::identity(d)).max_abs() < 1e-12, "d={d}");
        }
    }
}
