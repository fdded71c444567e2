//! Coding methods compared in R-D sweeps, and single sweep points measured
//! from actual container bytes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::bdrate::{RdCurve, RdPoint};
use crate::base::TransformKind;
use crate::bitstream;
use crate::codec::CodecBundle;
use crate::error::{Error, Result};
use crate::linalg::AttributeTable;
use crate::refinement::RefinementDims;
use crate::train::{train, StreamSpec, TrainConfig};

/// λ grid used when none is given.
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.002, 0.004, 0.008, 0.015];
/// Base coefficients kept by the truncated methods.
pub const DEFAULT_RETAINED: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Raw channels quantized directly.
    None,
    Dct,
    Haar,
    /// KLT keeping the leading coefficients, no refinement.
    KltTrunc,
    /// KLT keeping every coefficient.
    KltAll,
    /// Truncated KLT plus the compressed-sensing refinement.
    ShtcFull,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::None,
        Method::Dct,
        Method::Haar,
        Method::KltTrunc,
        Method::KltAll,
        Method::ShtcFull,
    ];
    pub const DEFAULT_SET: [Method; 5] = [
        Method::None,
        Method::Dct,
        Method::Haar,
        Method::KltTrunc,
        Method::ShtcFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Dct => "dct",
            Method::Haar => "haar",
            Method::KltTrunc => "klt-trunc",
            Method::KltAll => "klt-all",
            Method::ShtcFull => "shtc-full",
        }
    }

    /// Stream layout for a `channels`-wide table.
    pub fn spec(self, channels: usize, retained: usize, refinement: RefinementShape) -> Result<StreamSpec> {
        let m = retained.min(channels);
        let spec = match self {
            Method::None => StreamSpec::base_only(channels, TransformKind::Identity, channels),
            Method::Dct => StreamSpec::base_only(channels, TransformKind::Dct, channels),
            Method::Haar => StreamSpec::base_only(channels, TransformKind::Haar, channels),
            Method::KltTrunc => StreamSpec::base_only(channels, TransformKind::Klt, m),
            Method::KltAll => StreamSpec::base_only(channels, TransformKind::Klt, channels),
            Method::ShtcFull => {
                StreamSpec::base_only(channels, TransformKind::Klt, m).with_refinement(RefinementDims {
                    channels,
                    measurements: refinement.measurements.min(channels.saturating_sub(1)),
                    atoms: refinement.atoms.unwrap_or(channels),
                    layers: refinement.layers,
                })
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Refinement shape; atoms default to the channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefinementShape {
    pub measurements: usize,
    pub atoms: Option<usize>,
    pub layers: usize,
}

impl Default for RefinementShape {
    fn default() -> Self {
        Self {
            measurements: 15,
            atoms: None,
            layers: 6,
        }
    }
}

/// Everything a sweep point needs besides the table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub train: TrainConfig,
    pub retained: usize,
    pub refinement: RefinementShape,
}

impl SweepConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            train,
            retained: DEFAULT_RETAINED,
            refinement: RefinementShape::default(),
        }
    }
}

/// Measured outcome of one trained and encoded method at one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub method: Method,
    pub lambda: f64,
    /// Total container size in bits.
    pub bits: f64,
    pub distortion_db: f64,
    pub l1: f64,
    pub rmse: f64,
    pub model_bytes: usize,
    pub payload_bytes: usize,
    /// Noise-free model estimate of the coded symbols, in bits.
    pub estimate_bits: f64,
}

/// `−20·log₁₀(rmse / range)` with `range` the value span of `reference`.
pub fn distortion_db(reference: &AttributeTable, decoded: &AttributeTable) -> (f64, f64, f64) {
    let n = reference.data().len().max(1) as f64;
    let (mut l1, mut sq) = (0.0, 0.0);
    for (a, b) in reference.data().iter().zip(decoded.data()) {
        l1 += (a - b).abs();
        sq += (a - b) * (a - b);
    }
    let rmse = (sq / n).sqrt();
    let (lo, hi) = reference
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    let db = if rmse == 0.0 {
        f64::INFINITY
    } else {
        -20.0 * (rmse / range).log10()
    };
    (l1 / n, rmse, db)
}

/// Trains `method` at `lambda` and measures the encoded container.
pub fn run_point(x: &AttributeTable, method: Method, lambda: f64, cfg: &SweepConfig) -> Result<PointResult> {
    let spec = method.spec(x.cols(), cfg.retained, cfg.refinement)?;
    let mut tc = cfg.train.clone();
    tc.lambda = lambda;
    let out = train(x, &[spec], &tc)?;
    let bundle = CodecBundle::new(out.into_iter().map(|o| o.codec).collect())?;
    let (payloads, recon) = bundle.encode(x)?;
    let rows = u32::try_from(x.rows()).map_err(|_| Error::BadSize("too many rows".into()))?;
    let (bytes, counts) = bitstream::to_bytes(&bundle, &payloads, rows)?;
    let (l1, rmse, db) = distortion_db(x, &recon);
    Ok(PointResult {
        method,
        lambda,
        bits: bytes.len() as f64 * 8.0,
        distortion_db: db,
        l1,
        rmse,
        model_bytes: counts.model_bytes,
        payload_bytes: counts.payload_bytes,
        estimate_bits: bundle.estimate_bits(x)?,
    })
}

/// One curve per method. Failed points are skipped and reported as warnings.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<PointResult>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn curve(&self, method: Method) -> Result<RdCurve> {
        RdCurve::new(
            self.points
                .iter()
                .filter(|p| p.method == method)
                .map(|p| RdPoint {
                    bits: p.bits,
                    distortion_db: p.distortion_db,
                })
                .collect(),
        )
    }
}

/// Runs every `(method, λ)` pair; jobs run on the current rayon pool and
/// results come back in input order.
pub fn sweep(x: &AttributeTable, methods: &[Method], lambdas: &[f64], cfg: &SweepConfig) -> SweepResult {
    let jobs: Vec<(Method, f64)> = methods
        .iter()
        .flat_map(|m| lambdas.iter().map(move |l| (*m, *l)))
        .collect();
    let results: Vec<Result<PointResult>> = jobs.par_iter().map(|(m, l)| run_point(x, *m, *l, cfg)).collect();
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for ((m, l), r) in jobs.iter().zip(results) {
        match r {
            Ok(p) => points.push(p),
            Err(e) => warnings.push(format!("{m} at lambda {l}: {e}")),
        }
    }
    let mut result = SweepResult { points, warnings };
    for m in methods {
        if result.curve(*m).is_ok_and(|c| c.pareto_violations() > 0) {
            result
                .warnings
                .push(format!("{m}: rate and distortion both rise between adjacent points"));
        }
    }
    result
}

/// Convenience for one method over a λ grid.
pub fn baseline_rd(
    x: &AttributeTable,
    method: Method,
    lambdas: &[f64],
    cfg: &SweepConfig,
) -> Result<(RdCurve, SweepResult)> {
    let r = sweep(x, &[method], lambdas, cfg);
    Ok((r.curve(method)?, r))
}
