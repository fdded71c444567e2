//! Rate-distortion curves and the Bjøntegaard delta rate.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub bits: f64,
    /// `−20·log₁₀(rmse/range)`, higher is better.
    pub distortion_db: f64,
}

/// Points sorted by increasing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self> {
        if points
            .iter()
            .any(|p| !(p.bits > 0.0) || !p.bits.is_finite() || !p.distortion_db.is_finite())
        {
            return Err(Error::BadSize(
                "R-D points need positive finite rate and finite distortion".into(),
            ));
        }
        points.sort_by(|a, b| a.bits.total_cmp(&b.bits));
        if points.windows(2).any(|w| w[1].bits <= w[0].bits) {
            return Err(Error::BadSize("R-D rates must be distinct".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.distortion_db), hi.max(p.distortion_db))
            })
    }

    /// Pairs of adjacent points where the higher-rate point is also worse.
    pub fn pareto_violations(&self) -> usize {
        self.points
            .windows(2)
            .filter(|w| w[1].distortion_db < w[0].distortion_db)
            .count()
    }
}

/// Least-squares cubic `Σ c_k t^k` through `(t, y)`.
#[allow(clippy::needless_range_loop)]
fn fit_cubic(t: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    let mut a = [[0.0f64; 5]; 4];
    for (ti, yi) in t.iter().zip(y) {
        let pw = [1.0, *ti, ti * ti, ti * ti * ti];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][4] += pw[r] * yi;
        }
    }
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty");
        if a[piv][col].abs() < 1e-14 {
            return Err(Error::BadSize("R-D points too degenerate for a cubic fit".into()));
        }
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok([
        a[0][4] / a[0][0],
        a[1][4] / a[1][1],
        a[2][4] / a[2][2],
        a[3][4] / a[3][3],
    ])
}

/// Mean of the cubic over `t ∈ [−1, 1]`.
fn mean_on_unit(c: &[f64; 4]) -> f64 {
    // odd powers integrate to zero
    c[0] + c[2] / 3.0
}

/// Average rate difference of `test` relative to `anchor` in percent, over
/// their shared distortion interval. Negative means `test` needs fewer bits.
pub fn bd_rate(test: &RdCurve, anchor: &RdCurve) -> Result<f64> {
    for c in [test, anchor] {
        if c.len() < 4 {
            return Err(Error::InsufficientData {
                needed: 4,
                got: c.len(),
            });
        }
    }
    let (tl, th) = test.range();
    let (al, ah) = anchor.range();
    let (lo, hi) = (tl.max(al), th.min(ah));
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
    let fit = |c: &RdCurve| {
        let t: Vec<f64> = c.points.iter().map(|p| (p.distortion_db - mid) / half).collect();
        let y: Vec<f64> = c.points.iter().map(|p| p.bits.log10()).collect();
        fit_cubic(&t, &y)
    };
    let delta = mean_on_unit(&fit(test)?) - mean_on_unit(&fit(anchor)?);
    Ok(100.0 * (10f64.powf(delta) - 1.0))
}
