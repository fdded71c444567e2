//! Joint rate-distortion training of one attribute stream.
//!
//! Per batch of `B` rows of a `D`-channel stream the loss is
//!
//! ```text
//! ( ‖f − f̂‖₁ + λ·bits(θ̃_p) + λ_e·‖r − r̂‖₁ + λ_r·bits(ỹ) ) / (B·D)
//! ```
//!
//! where tildes are latents with uniform noise added and hats the decoded
//! values. The reconstruction path uses straight-through rounding by default
//! ([`QuantMode::Ste`]); [`QuantMode::Noise`] puts the noise proxy there as
//! well, which makes the loss piecewise smooth for gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod tape;

use std::f64::consts::LN_2;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::base::{fit_base, BaseLayer, TransformKind};
use crate::codec::{LatentCoder, Refinement, StreamCodec};
use crate::entropy::GaussianEntropyModel;
use crate::error::{Error, Result};
use crate::linalg::{norm2, spectral_norm_sq, AttributeTable, Matrix};
use crate::quant::channel_schedule;
use crate::refinement::{IstaLayer, RefinementDims, RefinementModel};
use adam::{clip_global_norm, Adam, AdamConfig};
use tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Straight-through rounding on the reconstruction path, noise on rates.
    Ste,
    /// Additive uniform noise everywhere.
    Noise,
}

/// What one stream's codec consists of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSpec {
    pub channels: usize,
    pub kind: TransformKind,
    /// Base coefficients kept (`M`).
    pub retained: usize,
    pub refinement: Option<RefinementDims>,
}

impl StreamSpec {
    pub fn base_only(channels: usize, kind: TransformKind, retained: usize) -> Self {
        Self {
            channels,
            kind,
            retained,
            refinement: None,
        }
    }

    pub fn with_refinement(mut self, dims: RefinementDims) -> Self {
        self.refinement = Some(dims);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.retained == 0 || self.retained > self.channels {
            return Err(Error::Config(format!(
                "retained coefficients {} outside 1..={}",
                self.retained, self.channels
            )));
        }
        if let Some(r) = &self.refinement {
            r.validate()?;
            if r.channels != self.channels {
                return Err(Error::Config(format!(
                    "refinement channels {} differ from stream channels {}",
                    r.channels, self.channels
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lambda_e: f64,
    /// Refinement rate weight; `max(λ/4, 0.001)` when unset.
    pub lambda_r: Option<f64>,
    pub learning_rate: f64,
    /// Cosine decay ends at `learning_rate · final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Basis refit period in joint mode.
    pub refit_period: usize,
    pub log_every: usize,
    pub quant: QuantMode,
    /// Also optimize the table rows, anchored to the originals.
    pub joint: bool,
    pub grad_clip: f64,
}

impl TrainConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            lambda_e: 0.03,
            lambda_r: None,
            learning_rate: 0.01,
            final_lr_fraction: 0.05,
            iterations: 3000,
            batch_size: 256,
            seed: 0,
            refit_period: 500,
            log_every: 100,
            quant: QuantMode::Ste,
            joint: false,
            grad_clip: 10.0,
        }
    }

    /// Cosine-decayed step size at iteration `iter`.
    pub fn learning_rate_at(&self, iter: usize) -> f64 {
        let progress = iter as f64 / self.iterations.max(1) as f64;
        let floor = self.final_lr_fraction;
        self.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }

    pub fn lambda_r(&self) -> f64 {
        self.lambda_r.unwrap_or((self.lambda / 4.0).max(0.001))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        for (name, v) in [("lambda_e", self.lambda_e), ("lambda_r", self.lambda_r())] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config(format!(
                "final_lr_fraction must lie in [0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.refit_period == 0 || self.log_every == 0 {
            return Err(Error::Config("refit_period and log_every must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// One training log line; bits are per row, ℓ₁ terms per entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub bits_base: f64,
    pub bits_refine: f64,
    pub l1_total: f64,
    pub l1_residual: f64,
}

impl LogRecord {
    pub const CSV_HEADER: &'static str = "iter,loss,bits_base,bits_refine,l1_total,l1_residual";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.loss, self.bits_base, self.bits_refine, self.l1_total, self.l1_residual
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub codec: StreamCodec,
    pub log: Vec<LogRecord>,
    /// The co-adapted table in joint mode.
    pub table: Option<Matrix>,
}

/// Slots of a latent's parameters in the parameter list.
#[derive(Debug, Clone, Copy)]
struct LatentSlots {
    log_base: usize,
    alpha: usize,
    mean: usize,
    log_scale: usize,
}

#[derive(Debug, Clone)]
struct RefineSlots {
    measure: usize,
    dict: usize,
    log_step: Vec<usize>,
    raw_threshold: Vec<usize>,
    latent: LatentSlots,
}

#[derive(Debug, Clone)]
struct Layout {
    base: LatentSlots,
    refine: Option<RefineSlots>,
}

/// Trainable state of one stream.
#[derive(Debug, Clone)]
pub struct StreamState {
    base: BaseLayer,
    params: Vec<Matrix>,
    layout: Layout,
}

/// Constant per-batch inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Rows as coded.
    pub coded: Matrix,
    /// Rows the distortion is measured against.
    pub anchor: Matrix,
    /// `U(−½, ½)` draws for the base latent, `B×M`.
    pub base_noise: Matrix,
    /// Draws for the refinement latent, `B×N_t` (empty without refinement).
    pub refine_noise: Matrix,
}

/// Weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lambda: c.lambda,
            lambda_e: c.lambda_e,
            lambda_r: c.lambda_r(),
        }
    }
}

/// Nodes of one forward pass.
#[derive(Debug)]
pub struct LossGraph {
    pub tape: Tape,
    pub loss: Var,
    pub params: Vec<Var>,
    pub coded: Var,
    bits_base: Var,
    bits_refine: Option<Var>,
    l1_total: Var,
    l1_residual: Option<Var>,
}

fn softplus_inv(y: f64) -> f64 {
    // ln(eʸ − 1)
    y + (-(-y).exp()).ln_1p()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// High-rate step giving equal marginal ℓ₁ distortion and `λ`-weighted bits.
fn initial_step(lambda: f64) -> f64 {
    4.0 * lambda / LN_2
}

fn std_per_column(x: &Matrix) -> Vec<f64> {
    let n = x.rows().max(1) as f64;
    let means = x.column_means();
    let mut var = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for (j, v) in r.iter().enumerate() {
            var[j] += (v - means[j]).powi(2);
        }
    }
    var.iter().map(|v| (v / n).sqrt()).collect()
}

fn row(v: Vec<f64>) -> Matrix {
    let n = v.len();
    Matrix::new(1, n, v).expect("row")
}

fn one(v: f64) -> Matrix {
    Matrix::new(1, 1, vec![v]).expect("scalar")
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() - 0.5)
}

/// Rows used to initialize statistics; at most 4096.
fn init_sample(x: &Matrix, rng: &mut ChaCha8Rng) -> Matrix {
    if x.rows() <= 4096 {
        return x.clone();
    }
    let mut idx = sample(rng, x.rows(), 4096).into_vec();
    idx.sort_unstable();
    x.select_rows(&idx)
}

impl StreamState {
    /// Fits the base transform on `x` and initializes every learnable parameter.
    pub fn init(x: &AttributeTable, spec: &StreamSpec, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        if x.cols() != spec.channels {
            return Err(Error::DimMismatch {
                expected: spec.channels,
                got: x.cols(),
            });
        }
        let base = fit_base(spec.kind, x, spec.retained)?;
        let sample_rows = init_sample(x, rng);
        let step = initial_step(cfg.lambda);

        let mut params = Vec::new();
        let latent = |params: &mut Vec<Matrix>, values: &Matrix| {
            let n = values.cols();
            let stds = std_per_column(values);
            let slots = LatentSlots {
                log_base: params.len(),
                alpha: params.len() + 1,
                mean: params.len() + 2,
                log_scale: params.len() + 3,
            };
            params.push(one(step.ln()));
            params.push(one(0.0));
            params.push(row(vec![0.0; n]));
            params.push(row(stds.iter().map(|s| s.max(0.5 * step).ln()).collect()));
            slots
        };

        let centered = Matrix::from_fn(sample_rows.rows(), x.cols(), |i, j| {
            sample_rows.get(i, j) - base.mean()[j]
        });
        let theta = centered.matmul(&base.retained_basis());
        let base_slots = latent(&mut params, &theta);

        let refine = match spec.refinement {
            None => None,
            Some(dims) => {
                let theta_hat = Matrix::from_fn(theta.rows(), theta.cols(), |i, j| {
                    (theta.get(i, j) / step).round() * step
                });
                let resid = centered.sub(&theta_hat.matmul_nt(&base.retained_basis()));

                let std = 1.0 / (dims.channels as f64).sqrt();
                let mut measure = Matrix::from_fn(dims.measurements, dims.channels, |_, _| {
                    std * rng.sample::<f64, _>(StandardNormal)
                });
                for i in 0..measure.rows() {
                    let n = norm2(measure.row(i));
                    measure.row_mut(i).iter_mut().for_each(|v| *v /= n);
                }
                let dict = if dims.atoms == dims.channels
                    && spec.kind == TransformKind::Klt
                    && spec.retained < spec.channels
                {
                    // atoms spanning the discarded subspace: (I − V_M V_Mᵀ) e_j
                    let v = base.retained_basis();
                    Matrix::identity(dims.channels).sub(&v.matmul_nt(&v))
                } else {
                    Matrix::from_fn(dims.channels, dims.atoms, |_, _| {
                        std * rng.sample::<f64, _>(StandardNormal)
                    })
                };
                let effective = measure.matmul(&dict);
                let eta = 1.0 / spectral_norm_sq(&effective).max(1e-12);

                let y = resid.matmul_nt(&measure);
                let latent_slots = latent(&mut params, &y);

                // first-layer responses set the threshold scale
                let z = y.matmul(&effective).scale(eta);
                let mut mags: Vec<f64> = z.data().iter().map(|v| v.abs()).collect();
                mags.sort_by(|a, b| a.total_cmp(b));
                let tau = mags.get(mags.len() / 2).copied().unwrap_or(0.0).max(1e-6);

                let measure_slot = params.len();
                params.push(measure);
                let dict_slot = params.len();
                params.push(dict);
                let mut log_step = Vec::new();
                let mut raw_threshold = Vec::new();
                for _ in 0..dims.layers {
                    log_step.push(params.len());
                    params.push(row(vec![eta.ln(); dims.atoms]));
                    raw_threshold.push(params.len());
                    params.push(row(vec![softplus_inv(tau); dims.atoms]));
                }
                Some(RefineSlots {
                    measure: measure_slot,
                    dict: dict_slot,
                    log_step,
                    raw_threshold,
                    latent: latent_slots,
                })
            }
        };
        Ok(Self {
            base,
            params,
            layout: Layout {
                base: base_slots,
                refine,
            },
        })
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn base(&self) -> &BaseLayer {
        &self.base
    }

    pub fn refinement_dims(&self) -> Option<RefinementDims> {
        self.layout.refine.as_ref().map(|r| RefinementDims {
            channels: self.base.dim(),
            measurements: self.params[r.measure].rows(),
            atoms: self.params[r.dict].cols(),
            layers: r.log_step.len(),
        })
    }

    /// Draws the noise matrices for `coded`/`anchor` rows.
    pub fn batch(&self, coded: Matrix, anchor: Matrix, rng: &mut ChaCha8Rng) -> Batch {
        let b = coded.rows();
        let base_noise = uniform(b, self.base.rank(), rng);
        let nt = self.refinement_dims().map_or(0, |d| d.measurements);
        let refine_noise = uniform(b, nt, rng);
        Batch {
            coded,
            anchor,
            base_noise,
            refine_noise,
        }
    }

    /// Forward pass recorded on a fresh tape.
    pub fn loss(&self, batch: &Batch, w: LossWeights, mode: QuantMode) -> LossGraph {
        let mut t = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|m| t.leaf(m.clone())).collect();
        let coded = t.leaf(batch.coded.clone());
        let anchor = t.leaf(batch.anchor.clone());
        let mean = t.leaf(row(self.base.mean().to_vec()));
        let basis = t.leaf(self.base.retained_basis());
        let (b, d) = batch.coded.shape();
        let norm = 1.0 / (b * d) as f64;

        let quantized = |t: &mut Tape, x: Var, slots: LatentSlots, noise: &Matrix| {
            let n = t.value(x).cols();
            let steps = t.schedule(p[slots.log_base], p[slots.alpha], n);
            let u = t.leaf(noise.clone());
            let jitter = t.mul_row(u, steps);
            let noisy = t.add(x, jitter);
            let bits = t.gaussian_bits(noisy, p[slots.mean], p[slots.log_scale], steps);
            let hat = match mode {
                QuantMode::Ste => t.ste_round(x, steps),
                QuantMode::Noise => noisy,
            };
            (hat, bits)
        };

        let centered = t.sub_row(coded, mean);
        let theta = t.matmul(centered, basis);
        let (theta_hat, bits_base) = quantized(&mut t, theta, self.layout.base, &batch.base_noise);
        let synth = t.matmul_nt(theta_hat, basis);
        let f_base = t.add_row(synth, mean);

        let mut f_hat = f_base;
        let mut bits_refine = None;
        let mut l1_residual = None;
        if let Some(r) = &self.layout.refine {
            let resid = t.sub(coded, f_base);
            let y = t.matmul_nt(resid, p[r.measure]);
            let (y_hat, bits) = quantized(&mut t, y, r.latent, &batch.refine_noise);
            let effective = t.matmul(p[r.measure], p[r.dict]);
            let mut beta: Option<Var> = None;
            for (ls, rt) in r.log_step.iter().zip(&r.raw_threshold) {
                let eta = t.exp(p[*ls]);
                let tau = t.softplus(p[*rt]);
                // gradient of ½‖ADβ − ŷ‖² is ((ADβ − ŷ)·AD) row-wise
                let misfit = match beta {
                    Some(bv) => {
                        let pred = t.matmul_nt(bv, effective);
                        t.sub(pred, y_hat)
                    }
                    None => t.scale(y_hat, -1.0),
                };
                let grad = t.matmul(misfit, effective);
                let stepped = t.mul_row(grad, eta);
                let z = match beta {
                    Some(bv) => t.sub(bv, stepped),
                    None => t.scale(stepped, -1.0),
                };
                beta = Some(t.soft_threshold(z, tau));
            }
            let r_hat = t.matmul_nt(beta.expect("at least one layer"), p[r.dict]);
            let miss = t.sub(resid, r_hat);
            l1_residual = Some(t.sum_abs(miss));
            bits_refine = Some(bits);
            f_hat = t.add(f_base, r_hat);
        }
        let err = t.sub(anchor, f_hat);
        let l1_total = t.sum_abs(err);

        let mut total = l1_total;
        let rate = t.scale(bits_base, w.lambda);
        total = t.add(total, rate);
        if let (Some(l1r), Some(br)) = (l1_residual, bits_refine) {
            let a = t.scale(l1r, w.lambda_e);
            total = t.add(total, a);
            let c = t.scale(br, w.lambda_r);
            total = t.add(total, c);
        }
        let loss = t.scale(total, norm);
        LossGraph {
            tape: t,
            loss,
            params: p,
            coded,
            bits_base,
            bits_refine,
            l1_total,
            l1_residual,
        }
    }

    /// Re-fits the base transform on `x`, keeping every other parameter.
    fn refit(&mut self, x: &Matrix) -> Result<()> {
        self.base = fit_base(self.base.kind(), x, self.base.rank())?;
        Ok(())
    }

    /// Freezes the current parameters into a codec, rounded to `f32`.
    pub fn to_codec(&self) -> Result<StreamCodec> {
        let latent = |s: LatentSlots| -> Result<LatentCoder> {
            let p = &self.params;
            let schedule = channel_schedule(
                libm::exp(p[s.log_base].data()[0]),
                p[s.alpha].data()[0],
                p[s.mean].cols(),
            )?;
            let model = GaussianEntropyModel::new(
                p[s.mean].data().to_vec(),
                p[s.log_scale].data().iter().map(|v| libm::exp(*v)).collect(),
            )?;
            LatentCoder::new(schedule, model)
        };
        let refinement = match &self.layout.refine {
            None => None,
            Some(r) => {
                let layers = r
                    .log_step
                    .iter()
                    .zip(&r.raw_threshold)
                    .map(|(ls, rt)| IstaLayer {
                        step: self.params[*ls].data().iter().map(|v| libm::exp(*v)).collect(),
                        threshold: self.params[*rt].data().iter().map(|v| softplus(*v)).collect(),
                    })
                    .collect();
                let model = RefinementModel::new(self.params[r.measure].clone(), self.params[r.dict].clone(), layers)?;
                Some(Refinement {
                    model,
                    latent: latent(r.latent)?,
                })
            }
        };
        let mut codec = StreamCodec::new(self.base.clone(), latent(self.layout.base)?, refinement)?;
        codec.snap_to_f32()?;
        Ok(codec)
    }
}

impl LossGraph {
    pub fn value(&self) -> f64 {
        self.tape.scalar(self.loss)
    }

    fn record(&self, iter: usize) -> LogRecord {
        let (b, d) = self.tape.value(self.coded).shape();
        let rows = b as f64;
        let entries = (b * d) as f64;
        LogRecord {
            iter,
            loss: self.value(),
            bits_base: self.tape.scalar(self.bits_base) / rows,
            bits_refine: self.bits_refine.map_or(0.0, |v| self.tape.scalar(v) / rows),
            l1_total: self.tape.scalar(self.l1_total) / entries,
            l1_residual: self.l1_residual.map_or(0.0, |v| self.tape.scalar(v) / entries),
        }
    }
}

/// Trains a codec for the table `x` of a single stream.
pub fn train_stream(x: &AttributeTable, spec: &StreamSpec, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if x.rows() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: x.rows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = StreamState::init(x, spec, cfg, &mut rng)?;
    let shapes: Vec<(usize, usize)> = state.params.iter().map(|m| m.shape()).collect();
    let table_slot = shapes.len();
    let mut all_shapes = shapes.clone();
    if cfg.joint {
        all_shapes.push(x.shape());
    }
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate), &all_shapes);
    let mut table = cfg.joint.then(|| x.clone());
    let batch_size = cfg.batch_size.min(x.rows());
    let weights = LossWeights::from(cfg);
    let mut log = Vec::new();

    for iter in 0..cfg.iterations {
        if let Some(tab) = &table {
            if iter > 0 && iter % cfg.refit_period == 0 {
                state.refit(tab)?;
            }
        }
        let idx = sample(&mut rng, x.rows(), batch_size).into_vec();
        let anchor = x.select_rows(&idx);
        let coded = table.as_ref().map_or_else(|| anchor.clone(), |t| t.select_rows(&idx));
        let batch = state.batch(coded, anchor, &mut rng);
        let graph = state.loss(&batch, weights, cfg.quant);
        let value = graph.value();
        if !value.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                detail: format!("loss {value}; {:?}", graph.record(iter)),
            });
        }
        if iter % cfg.log_every == 0 || iter + 1 == cfg.iterations {
            log.push(graph.record(iter));
        }

        let mut grads = graph.tape.backward(graph.loss);
        let mut flat: Vec<Matrix> = graph
            .params
            .iter()
            .zip(&shapes)
            .map(|(v, s)| grads.take_or_zero(*v, *s))
            .collect();
        if table.is_some() {
            flat.push(grads.take_or_zero(graph.coded, batch.coded.shape()));
        }
        if let Some(bad) = flat.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: iter,
                detail: format!("non-finite gradient in parameter {bad}"),
            });
        }
        clip_global_norm(&mut flat, cfg.grad_clip);
        adam.set_learning_rate(cfg.learning_rate_at(iter));
        adam.begin_step();
        for (k, g) in flat.iter().enumerate().take(shapes.len()) {
            adam.update(k, &mut state.params[k], g);
        }
        if let Some(tab) = &mut table {
            adam.update_rows(table_slot, tab, &idx, &flat[table_slot]);
        }
    }
    if let Some(tab) = &table {
        state.refit(tab)?;
    }
    Ok(TrainOutput {
        codec: state.to_codec()?,
        log,
        table,
    })
}

/// Splits `x` into consecutive column blocks per `specs` and trains each.
pub fn train(x: &AttributeTable, specs: &[StreamSpec], cfg: &TrainConfig) -> Result<Vec<TrainOutput>> {
    let total: usize = specs.iter().map(|s| s.channels).sum();
    if total != x.cols() {
        return Err(Error::DimMismatch {
            expected: total,
            got: x.cols(),
        });
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(specs.len());
    for (k, spec) in specs.iter().enumerate() {
        let block = x.column_block(start, spec.channels);
        start += spec.channels;
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(k as u64);
        out.push(train_stream(&block, spec, &c)?);
    }
    Ok(out)
}
