use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shtc_core::base::TransformKind;
use shtc_core::linalg::Matrix;
use shtc_core::refinement::RefinementDims;
use shtc_core::train::gradcheck::check_gradients;
use shtc_core::train::{QuantMode, StreamSpec, TrainConfig};

fn toy(rows: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = Matrix::from_fn(d, d, |i, j| if j <= i { 1.0 / (1 + i - j) as f64 } else { 0.1 });
    let z = Matrix::from_fn(rows, d, |_, j| (rng.random::<f64>() - 0.5) / (1 + j) as f64);
    let mut x = z.matmul_nt(&mix);
    for i in 0..rows {
        let c = rng.random_range(0..d);
        x.row_mut(i)[c] += 0.3;
    }
    x
}

fn full_spec(d: usize) -> StreamSpec {
    StreamSpec::base_only(d, TransformKind::Klt, 3).with_refinement(RefinementDims {
        channels: d,
        measurements: 4,
        atoms: d,
        layers: 3,
    })
}

#[test]
fn full_pipeline_matches_central_differences() {
    let x = toy(64, 8, 11);
    let mut cfg = TrainConfig::new(0.01);
    cfg.batch_size = 16;
    cfg.seed = 5;
    let r = check_gradients(&x, &full_spec(8), &cfg, QuantMode::Noise, 50, 1e-6).unwrap();
    assert_eq!(r.probes.len(), 50);
    assert!(
        r.max_relative_error() < 1e-4,
        "{:#?}",
        r.probes
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    );
}

#[test]
fn fixed_transform_base_layers_match() {
    // straight-through rounding is a deliberate estimator, so only noise mode
    let x = toy(64, 8, 12);
    let mut cfg = TrainConfig::new(0.004);
    cfg.batch_size = 16;
    for kind in [TransformKind::Dct, TransformKind::Haar, TransformKind::Identity] {
        let r = check_gradients(&x, &StreamSpec::base_only(8, kind, 8), &cfg, QuantMode::Noise, 30, 1e-6).unwrap();
        assert!(r.max_relative_error() < 1e-4, "{kind:?}: {}", r.max_relative_error());
    }
}
