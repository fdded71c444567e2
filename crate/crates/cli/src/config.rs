//! Run configuration: a TOML file, then command-line overrides.

use std::path::Path;

use serde::Deserialize;
use shtc_core::base::TransformKind;
use shtc_core::bench::rd::{RefinementShape, SweepConfig, DEFAULT_LAMBDAS};
use shtc_core::bench::{Method, SyntheticSpec};
use shtc_core::refinement::RefinementDims;
use shtc_core::train::{QuantMode, StreamSpec, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Refuse to run without an explicit seed, and pin one worker thread.
    pub reproducible: bool,
    pub threads: Option<usize>,
    pub train: TrainSection,
    pub stream: StreamSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub lambda_e: f64,
    pub lambda_r: Option<f64>,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub refit_period: usize,
    pub log_every: usize,
    /// `ste` or `noise`.
    pub quant: String,
    pub joint: bool,
    pub grad_clip: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    /// Preset layout; overrides the fields below when set.
    pub method: Option<String>,
    /// `identity`, `dct`, `haar` or `klt`.
    pub kind: String,
    pub retained: usize,
    pub refine: bool,
    pub measurements: usize,
    pub atoms: Option<usize>,
    pub layers: usize,
    /// Trailing channels coded as a separate base-only identity stream.
    pub scaling_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub methods: Vec<String>,
    pub lambdas: Vec<f64>,
    pub rows: usize,
    pub channels: usize,
    pub rank: usize,
    pub exponent: f64,
    pub spikes: usize,
    pub spike_scale: f64,
    pub noise_std: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(0.004);
        Self {
            lambda: t.lambda,
            lambda_e: t.lambda_e,
            lambda_r: None,
            learning_rate: t.learning_rate,
            final_lr_fraction: t.final_lr_fraction,
            iterations: t.iterations,
            batch_size: t.batch_size,
            refit_period: t.refit_period,
            log_every: t.log_every,
            quant: "ste".into(),
            joint: false,
            grad_clip: t.grad_clip,
        }
    }
}

impl Default for StreamSection {
    fn default() -> Self {
        let r = RefinementShape::default();
        Self {
            method: None,
            kind: "klt".into(),
            retained: 15,
            refine: true,
            measurements: r.measurements,
            atoms: None,
            layers: r.layers,
            scaling_channels: 0,
        }
    }
}

impl Default for BenchSection {
    fn default() -> Self {
        let s = SyntheticSpec::standard(0);
        Self {
            methods: Method::DEFAULT_SET.iter().map(|m| m.name().to_string()).collect(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            rows: s.rows,
            channels: s.channels,
            rank: s.rank,
            exponent: s.exponent,
            spikes: s.spikes,
            spike_scale: s.spike_scale,
            noise_std: s.noise_std,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub lambda: Option<Vec<f64>>,
    pub method: Option<Vec<String>>,
}

pub fn parse_kind(s: &str) -> CliResult<TransformKind> {
    match s {
        "identity" | "none" => Ok(TransformKind::Identity),
        "dct" => Ok(TransformKind::Dct),
        "haar" => Ok(TransformKind::Haar),
        "klt" => Ok(TransformKind::Klt),
        _ => Err(CliError::Config(format!("stream.kind: unknown transform `{s}`"))),
    }
}

pub fn parse_method(s: &str) -> CliResult<Method> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        CliError::Config(format!("unknown method `{s}`; expected one of {}", names.join(", ")))
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    /// Applies overrides then validates everything that can be checked
    /// without data.
    pub fn resolve(mut self, o: &Overrides) -> CliResult<Self> {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        } else if let Ok(v) = std::env::var("SHTC_THREADS") {
            let t = v
                .parse()
                .map_err(|_| CliError::Config(format!("SHTC_THREADS: not a thread count: `{v}`")))?;
            self.threads = Some(t);
        }
        if let Some(l) = &o.lambda {
            if let [one] = l.as_slice() {
                self.train.lambda = *one;
            }
            self.bench.lambdas = l.clone();
        }
        if let Some(m) = &o.method {
            if let [one] = m.as_slice() {
                self.stream.method = Some(one.clone());
            }
            self.bench.methods = m.clone();
        }
        if self.reproducible {
            if self.seed.is_none() {
                return Err(CliError::Config("seed: required when reproducible = true".into()));
            }
            self.threads = Some(1);
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads: must be at least 1".into()));
        }
        self.train_config()?.validate()?;
        parse_kind(&self.stream.kind)?;
        if let Some(m) = &self.stream.method {
            parse_method(m)?;
        }
        for m in &self.bench.methods {
            parse_method(m)?;
        }
        if self.bench.lambdas.is_empty() {
            return Err(CliError::Config("bench.lambdas: at least one value needed".into()));
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let t = &self.train;
        let quant = match t.quant.as_str() {
            "ste" => QuantMode::Ste,
            "noise" => QuantMode::Noise,
            q => {
                return Err(CliError::Config(format!(
                    "train.quant: expected `ste` or `noise`, got `{q}`"
                )))
            }
        };
        Ok(TrainConfig {
            lambda: t.lambda,
            lambda_e: t.lambda_e,
            lambda_r: t.lambda_r,
            learning_rate: t.learning_rate,
            final_lr_fraction: t.final_lr_fraction,
            iterations: t.iterations,
            batch_size: t.batch_size,
            seed: self.seed(),
            refit_period: t.refit_period,
            log_every: t.log_every,
            quant,
            joint: t.joint,
            grad_clip: t.grad_clip,
        })
    }

    pub fn refinement_shape(&self) -> RefinementShape {
        RefinementShape {
            measurements: self.stream.measurements,
            atoms: self.stream.atoms,
            layers: self.stream.layers,
        }
    }

    /// Stream layout for a table with `channels` columns.
    pub fn stream_specs(&self, channels: usize) -> CliResult<Vec<StreamSpec>> {
        let s = &self.stream;
        if s.scaling_channels >= channels {
            return Err(CliError::Data(format!(
                "stream.scaling_channels = {} leaves no feature channels in a {channels}-column table",
                s.scaling_channels
            )));
        }
        let d = channels - s.scaling_channels;
        let feature = match &s.method {
            Some(m) => parse_method(m)?.spec(d, s.retained, self.refinement_shape())?,
            None => {
                let kind = parse_kind(&s.kind)?;
                let base = StreamSpec::base_only(d, kind, s.retained.min(d));
                if s.refine {
                    base.with_refinement(RefinementDims {
                        channels: d,
                        measurements: s.measurements,
                        atoms: s.atoms.unwrap_or(d),
                        layers: s.layers,
                    })
                } else {
                    base
                }
            }
        };
        feature.validate()?;
        let mut specs = vec![feature];
        if s.scaling_channels > 0 {
            specs.push(StreamSpec::base_only(
                s.scaling_channels,
                TransformKind::Identity,
                s.scaling_channels,
            ));
        }
        Ok(specs)
    }

    pub fn sweep_config(&self) -> CliResult<SweepConfig> {
        let mut c = SweepConfig::new(self.train_config()?);
        c.retained = self.stream.retained;
        c.refinement = self.refinement_shape();
        Ok(c)
    }

    pub fn methods(&self) -> CliResult<Vec<Method>> {
        self.bench.methods.iter().map(|m| parse_method(m)).collect()
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let b = &self.bench;
        SyntheticSpec {
            rows: b.rows,
            channels: b.channels,
            rank: b.rank,
            exponent: b.exponent,
            spikes: b.spikes,
            spike_scale: b.spike_scale,
            noise_std: b.noise_std,
            seed: self.seed(),
            ..SyntheticSpec::standard(self.seed())
        }
    }
}
