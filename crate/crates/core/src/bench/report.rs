//! Inter-channel correlation and energy compaction of raw channels and of
//! DCT, Haar and KLT coefficients.

use crate::base::{fit_base, TransformKind};
use crate::error::Result;
use crate::linalg::{energy_per_channel, pearson_abs, AttributeTable, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisBlock {
    /// `raw`, `dct`, `haar` or `klt`.
    pub name: &'static str,
    pub pearson: Matrix,
    /// Sums to one.
    pub energy: Vec<f64>,
}

/// One block per transform, computed on the mean-removed table. The KLT is
/// fitted on `x` itself.
pub fn analysis_report(x: &AttributeTable) -> Result<Vec<AnalysisBlock>> {
    [
        ("raw", TransformKind::Identity),
        ("dct", TransformKind::Dct),
        ("haar", TransformKind::Haar),
        ("klt", TransformKind::Klt),
    ]
    .into_iter()
    .map(|(name, kind)| {
        let base = fit_base(kind, x, x.cols())?;
        let coeffs = base.analyze_table_full(x)?;
        Ok(AnalysisBlock {
            name,
            pearson: pearson_abs(&coeffs)?,
            energy: energy_per_channel(&coeffs)?,
        })
    })
    .collect()
}
