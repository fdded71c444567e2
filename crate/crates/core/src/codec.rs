//! Trained codec: base layer, optional refinement, and the quantizer and
//! entropy model of each latent. Encoding and decoding share every
//! arithmetic step past quantization, so the decoder reproduces the
//! encoder's reconstruction bit for bit.

use rayon::prelude::*;

use crate::base::BaseLayer;
use crate::entropy::{decode_with_tables, encode_with_tables, symbol_bits, FrequencyTable, GaussianEntropyModel};
use crate::error::{Error, Result};
use crate::linalg::{AttributeTable, Matrix};
use crate::quant::{channel_schedule, dequantize, quantize, QuantSchedule};
use crate::refinement::RefinementModel;

/// Rounds to the nearest `f32`, the storage precision of every parameter.
pub fn to_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Quantizer and entropy model of one latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCoder {
    schedule: QuantSchedule,
    model: GaussianEntropyModel,
}

impl LatentCoder {
    pub fn new(schedule: QuantSchedule, model: GaussianEntropyModel) -> Result<Self> {
        if schedule.len() != model.len() {
            return Err(Error::DimMismatch {
                expected: model.len(),
                got: schedule.len(),
            });
        }
        Ok(Self { schedule, model })
    }

    /// Builds the coder from raw parameters, as read from a bitstream.
    pub fn from_parts(base_step: f64, alpha: f64, mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let schedule = channel_schedule(base_step, alpha, mean.len())?;
        Self::new(schedule, GaussianEntropyModel::new(mean, scale)?)
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    pub fn schedule(&self) -> &QuantSchedule {
        &self.schedule
    }

    pub fn model(&self) -> &GaussianEntropyModel {
        &self.model
    }

    fn snap(&mut self) -> Result<()> {
        let mut model = self.model.clone();
        model.map_values(to_f32);
        self.schedule = channel_schedule(
            to_f32(self.schedule.base_step()),
            to_f32(self.schedule.alpha()),
            model.len(),
        )?;
        self.model = GaussianEntropyModel::new(model.mean().to_vec(), model.scale().to_vec())?;
        Ok(())
    }

    fn tables(&self) -> Result<Vec<FrequencyTable>> {
        self.model.tables(&self.schedule)
    }

    fn bits(&self, values: &[f64]) -> f64 {
        let (mu, sigma, steps) = (self.model.mean(), self.model.scale(), self.schedule.steps());
        (0..values.len())
            .map(|j| symbol_bits(values[j], mu[j], sigma[j], steps[j]).bits)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub model: RefinementModel,
    pub latent: LatentCoder,
}

/// Codec of one attribute stream (a contiguous block of table columns).
#[derive(Debug, Clone, PartialEq)]
pub struct StreamCodec {
    base: BaseLayer,
    base_latent: LatentCoder,
    refinement: Option<Refinement>,
}

/// Symbols and reconstruction of one row.
struct RowCode {
    symbols: Vec<i32>,
    recon: Vec<f64>,
    bits: f64,
}

impl StreamCodec {
    pub fn new(base: BaseLayer, base_latent: LatentCoder, refinement: Option<Refinement>) -> Result<Self> {
        if base_latent.len() != base.rank() {
            return Err(Error::Inconsistent(format!(
                "base latent has {} channels, base layer keeps {}",
                base_latent.len(),
                base.rank()
            )));
        }
        if let Some(r) = &refinement {
            let dims = r.model.dims();
            if dims.channels != base.dim() {
                return Err(Error::Inconsistent(format!(
                    "refinement expects {} channels, stream has {}",
                    dims.channels,
                    base.dim()
                )));
            }
            if r.latent.len() != dims.measurements {
                return Err(Error::Inconsistent(
                    "refinement latent does not match measurement count".into(),
                ));
            }
        }
        Ok(Self {
            base,
            base_latent,
            refinement,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &BaseLayer {
        &self.base
    }

    pub fn base_latent(&self) -> &LatentCoder {
        &self.base_latent
    }

    pub fn refinement(&self) -> Option<&Refinement> {
        self.refinement.as_ref()
    }

    /// Symbols coded per row: `M`, plus `N_t` with refinement.
    pub fn symbols_per_row(&self) -> usize {
        self.base_latent.len() + self.refinement.as_ref().map_or(0, |r| r.latent.len())
    }

    /// Rounds every parameter to `f32`.
    pub fn snap_to_f32(&mut self) -> Result<()> {
        self.base.map_values(to_f32);
        self.base_latent.snap()?;
        if let Some(r) = &mut self.refinement {
            r.model.map_values(to_f32);
            r.latent.snap()?;
        }
        Ok(())
    }

    fn tables(&self) -> Result<Vec<FrequencyTable>> {
        let mut t = self.base_latent.tables()?;
        if let Some(r) = &self.refinement {
            t.extend(r.latent.tables()?);
        }
        Ok(t)
    }

    fn reconstruct(&self, base_symbols: &[i32], refine_symbols: &[i32]) -> Result<Vec<f64>> {
        let theta = dequantize(base_symbols, self.base_latent.schedule())?;
        let mut f = self.base.synthesize(&theta)?;
        if let Some(r) = &self.refinement {
            let y = dequantize(refine_symbols, r.latent.schedule())?;
            for (v, d) in f.iter_mut().zip(r.model.synthesize(&y)?) {
                *v += d;
            }
        }
        Ok(f)
    }

    fn encode_row(&self, f: &[f64]) -> Result<RowCode> {
        let theta = self.base.analyze(f)?;
        let q = quantize(&theta, self.base_latent.schedule())?;
        let theta_hat = dequantize(&q, self.base_latent.schedule())?;
        let mut bits = self.base_latent.bits(&theta_hat);
        let mut symbols = q;
        let base_len = symbols.len();
        if let Some(r) = &self.refinement {
            let f_base = self.base.synthesize(&theta_hat)?;
            let resid: Vec<f64> = f.iter().zip(&f_base).map(|(a, b)| a - b).collect();
            let y = r.model.analyze(&resid)?;
            let qy = quantize(&y, r.latent.schedule())?;
            bits += r.latent.bits(&dequantize(&qy, r.latent.schedule())?);
            symbols.extend(qy);
        }
        let recon = self.reconstruct(&symbols[..base_len], &symbols[base_len..])?;
        Ok(RowCode { symbols, recon, bits })
    }

    fn check_cols(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    fn code_rows(&self, x: &Matrix) -> Result<Vec<RowCode>> {
        self.check_cols(x)?;
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.encode_row(x.row(i)))
            .collect()
    }

    /// Entropy-coded payload and the reconstruction a decoder will produce.
    pub fn encode(&self, x: &Matrix) -> Result<(Payload, Matrix)> {
        let rows = self.code_rows(x)?;
        let mut symbols = Vec::with_capacity(rows.len() * self.symbols_per_row());
        let mut recon = Matrix::zeros(x.rows(), self.dim());
        for (i, r) in rows.iter().enumerate() {
            symbols.extend_from_slice(&r.symbols);
            recon.row_mut(i).copy_from_slice(&r.recon);
        }
        let bytes = encode_with_tables(&symbols, &self.tables()?)?;
        Ok((
            Payload {
                symbols: symbols.len() as u32,
                bytes,
            },
            recon,
        ))
    }

    /// Noise-free model estimate of the payload size in bits.
    pub fn estimate_bits(&self, x: &Matrix) -> Result<f64> {
        Ok(self.code_rows(x)?.iter().map(|r| r.bits).sum())
    }

    pub fn decode(&self, payload: &Payload, rows: usize) -> Result<Matrix> {
        let per_row = self.symbols_per_row();
        if payload.symbols as usize != rows * per_row {
            return Err(Error::Inconsistent(format!(
                "payload holds {} symbols, expected {} rows × {per_row}",
                payload.symbols, rows
            )));
        }
        let symbols = decode_with_tables(&payload.bytes, payload.symbols as usize, &self.tables()?)?;
        let m = self.base_latent.len();
        let out: Result<Vec<Vec<f64>>> = symbols
            .par_chunks(per_row.max(1))
            .map(|s| self.reconstruct(&s[..m], &s[m..]))
            .collect();
        let out = out?;
        let mut table = Matrix::zeros(rows, self.dim());
        for (i, r) in out.iter().enumerate().take(rows) {
            table.row_mut(i).copy_from_slice(r);
        }
        Ok(table)
    }
}

/// Entropy-coded symbols of one stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub symbols: u32,
    pub bytes: Vec<u8>,
}

/// Codecs for the column blocks of a table, in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecBundle {
    streams: Vec<StreamCodec>,
}

impl CodecBundle {
    pub fn new(streams: Vec<StreamCodec>) -> Result<Self> {
        if streams.is_empty() {
            return Err(Error::Inconsistent("bundle has no streams".into()));
        }
        Ok(Self { streams })
    }

    pub fn streams(&self) -> &[StreamCodec] {
        &self.streams
    }

    pub fn dim(&self) -> usize {
        self.streams.iter().map(|s| s.dim()).sum()
    }

    fn blocks<'a>(&'a self, x: &'a Matrix) -> Result<impl Iterator<Item = (&'a StreamCodec, Matrix)> + 'a> {
        if x.cols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.cols(),
            });
        }
        let mut start = 0;
        Ok(self.streams.iter().map(move |s| {
            let block = x.column_block(start, s.dim());
            start += s.dim();
            (s, block)
        }))
    }

    /// Payload per stream and the reconstruction of the whole table.
    pub fn encode(&self, x: &AttributeTable) -> Result<(Vec<Payload>, Matrix)> {
        let mut payloads = Vec::new();
        let mut recons = Vec::new();
        for (s, block) in self.blocks(x)? {
            let (p, r) = s.encode(&block)?;
            payloads.push(p);
            recons.push(r);
        }
        let refs: Vec<&Matrix> = recons.iter().collect();
        Ok((payloads, Matrix::hstack(&refs)))
    }

    pub fn estimate_bits(&self, x: &AttributeTable) -> Result<f64> {
        let mut total = 0.0;
        for (s, block) in self.blocks(x)? {
            total += s.estimate_bits(&block)?;
        }
        Ok(total)
    }

    pub fn decode(&self, payloads: &[Payload], rows: usize) -> Result<Matrix> {
        if payloads.len() != self.streams.len() {
            return Err(Error::Inconsistent(format!(
                "{} payloads for {} streams",
                payloads.len(),
                self.streams.len()
            )));
        }
        let parts: Result<Vec<Matrix>> = self
            .streams
            .iter()
            .zip(payloads)
            .map(|(s, p)| s.decode(p, rows))
            .collect();
        let parts = parts?;
        let refs: Vec<&Matrix> = parts.iter().collect();
        Ok(Matrix::hstack(&refs))
    }

    pub fn snap_to_f32(&mut self) -> Result<()> {
        self.streams.iter_mut().try_for_each(|s| s.snap_to_f32())
    }
}
