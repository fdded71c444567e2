//! Central finite-difference check of the training loss gradient.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LossWeights, QuantMode, StreamSpec, StreamState, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::AttributeTable;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub slot: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    /// Draws rejected because `x ± h` crossed a kink.
    pub resampled: usize,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.probes.iter().map(|p| p.relative_error).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic and central-difference gradients of the loss with
/// respect to `probes` randomly chosen parameter entries, on one fixed batch.
/// A draw is rejected and redrawn whenever the loss at `θ ± h` takes a
/// different piecewise branch than at `θ`.
pub fn check_gradients(
    x: &AttributeTable,
    spec: &StreamSpec,
    cfg: &TrainConfig,
    mode: QuantMode,
    probes: usize,
    h: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = StreamState::init(x, spec, cfg, &mut rng)?;
    // move away from the symmetric initial point so every parameter matters
    for p in state.params_mut() {
        p.data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.05 * (rng.random::<f64>() - 0.5));
    }
    let rows = cfg.batch_size.min(x.rows());
    let mut idx = sample(&mut rng, x.rows(), rows).into_vec();
    idx.sort_unstable();
    let coded = x.select_rows(&idx);
    let batch = state.batch(coded.clone(), coded, &mut rng);
    let w = LossWeights::from(cfg);

    let graph = state.loss(&batch, w, mode);
    let base_sig = graph.tape.branch_signature();
    let mut grads = graph.tape.backward(graph.loss);
    let analytic: Vec<_> = graph
        .params
        .iter()
        .zip(state.params())
        .map(|(v, m)| grads.take_or_zero(*v, m.shape()))
        .collect();

    let sizes: Vec<usize> = state.params().iter().map(|m| m.data().len()).collect();
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(probes);
    let mut resampled = 0;
    while out.len() < probes {
        if resampled > 50 * probes.max(1) {
            return Err(Error::Inconsistent(format!(
                "only {} of {probes} probes avoided kinks",
                out.len()
            )));
        }
        let mut flat = rng.random_range(0..total);
        let mut slot = 0;
        while flat >= sizes[slot] {
            flat -= sizes[slot];
            slot += 1;
        }
        let orig = state.params()[slot].data()[flat];
        let eval = |v: f64, state: &mut StreamState| {
            state.params_mut()[slot].data_mut()[flat] = v;
            let g = state.loss(&batch, w, mode);
            (g.value(), g.tape.branch_signature())
        };
        let (up, su) = eval(orig + h, &mut state);
        let (down, sd) = eval(orig - h, &mut state);
        state.params_mut()[slot].data_mut()[flat] = orig;
        if su != base_sig || sd != base_sig {
            resampled += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[slot].data()[flat];
        out.push(Probe {
            slot,
            index: flat,
            analytic: a,
            numeric,
            relative_error: relative_error(a, numeric, 1e-6),
        });
    }
    Ok(GradCheckReport { probes: out, resampled })
}
