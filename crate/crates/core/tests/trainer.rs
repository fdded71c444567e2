use shtc_core::base::TransformKind;
use shtc_core::bench::{synth_source, SyntheticSpec};
use shtc_core::bitstream;
use shtc_core::codec::CodecBundle;
use shtc_core::linalg::Matrix;
use shtc_core::refinement::RefinementDims;
use shtc_core::train::{train, train_stream, StreamSpec, TrainConfig};

fn small(seed: u64) -> Matrix {
    synth_source(&SyntheticSpec {
        rows: 3000,
        channels: 12,
        rank: 4,
        spikes: 2,
        spike_scale: 0.1,
        ..SyntheticSpec::standard(seed)
    })
    .unwrap()
}

fn full(d: usize) -> StreamSpec {
    StreamSpec::base_only(d, TransformKind::Klt, 4).with_refinement(RefinementDims {
        channels: d,
        measurements: 4,
        atoms: d,
        layers: 3,
    })
}

fn cfg(lambda: f64) -> TrainConfig {
    let mut c = TrainConfig::new(lambda);
    c.iterations = 400;
    c.batch_size = 128;
    c
}

#[test]
fn identical_rows_cost_almost_nothing() {
    let row: Vec<f64> = (0..6).map(|j| 0.1 * j as f64 - 0.2).collect();
    let x = Matrix::from_fn(500, 6, |_, j| row[j]);
    let out = train_stream(&x, &StreamSpec::base_only(6, TransformKind::Klt, 6), &cfg(0.004)).unwrap();
    let bundle = CodecBundle::new(vec![out.codec]).unwrap();
    let (payloads, recon) = bundle.encode(&x).unwrap();
    let bits = bundle.estimate_bits(&x).unwrap() / x.rows() as f64;
    assert!(bits < 0.1, "{bits} bits/row");
    assert!(
        payloads[0].bytes.len() < 16,
        "{} payload bytes",
        payloads[0].bytes.len()
    );
    let err = recon.sub(&x).max_abs();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn higher_lambda_spends_fewer_bits() {
    let x = small(1);
    let bits: Vec<f64> = [0.002, 0.008, 0.03]
        .iter()
        .map(|&l| {
            let out = train(&x, &[full(12)], &cfg(l)).unwrap();
            let b = CodecBundle::new(out.into_iter().map(|o| o.codec).collect()).unwrap();
            b.estimate_bits(&x).unwrap()
        })
        .collect();
    assert!(bits.windows(2).all(|w| w[1] < w[0]), "{bits:?}");
}

#[test]
fn same_seed_same_bytes() {
    let x = small(2);
    let run = |seed| {
        let mut c = cfg(0.004);
        c.seed = seed;
        let out = train(&x, &[full(12)], &c).unwrap();
        let b = CodecBundle::new(out.into_iter().map(|o| o.codec).collect()).unwrap();
        let (p, _) = b.encode(&x).unwrap();
        bitstream::to_bytes(&b, &p, x.rows() as u32).unwrap().0
    };
    let a = run(3);
    assert_eq!(a, run(3));
    assert_ne!(a, run(4));
}

#[test]
fn encoded_size_tracks_the_rate_estimate() {
    let x = small(3);
    for spec in [full(12), StreamSpec::base_only(12, TransformKind::Dct, 12)] {
        let out = train(&x, &[spec], &cfg(0.004)).unwrap();
        let b = CodecBundle::new(out.into_iter().map(|o| o.codec).collect()).unwrap();
        let (p, _) = b.encode(&x).unwrap();
        let actual = p[0].bytes.len() as f64;
        let est = b.estimate_bits(&x).unwrap() / 8.0;
        assert!(
            actual <= est * 1.05 + 64.0 && actual >= est * 0.95 - 64.0,
            "{actual} vs {est}"
        );
    }
}

#[test]
fn log_terms_are_nonnegative_and_loss_falls() {
    let x = small(4);
    let mut c = cfg(0.004);
    c.log_every = 50;
    let out = train_stream(&x, &full(12), &c).unwrap();
    assert_eq!(out.log.len(), 400 / 50 + 1);
    for r in &out.log {
        assert!(
            r.loss >= 0.0 && r.bits_base >= 0.0 && r.bits_refine >= 0.0 && r.l1_total >= 0.0 && r.l1_residual >= 0.0
        );
    }
    assert!(out.log.last().unwrap().loss < out.log[0].loss);
}

#[test]
fn heavier_residual_weight_does_not_hurt_residual_fit() {
    let x = small(5);
    let run = |le: f64| {
        let mut c = cfg(0.004);
        c.lambda_e = le;
        let out = train_stream(&x, &full(12), &c).unwrap();
        let tail = &out.log[out.log.len() - 3..];
        tail.iter().map(|r| r.l1_residual).sum::<f64>() / tail.len() as f64
    };
    let (one, two) = (run(0.03), run(0.06));
    println!("residual l1: lambda_e 0.03 -> {one}, 0.06 -> {two}");
    assert!(two <= one * 1.05, "{one} vs {two}");
}

#[test]
fn joint_mode_returns_the_adapted_table() {
    let x = small(6);
    let mut c = cfg(0.004);
    c.joint = true;
    c.refit_period = 100;
    let out = train_stream(&x, &full(12), &c).unwrap();
    let t = out.table.expect("joint table");
    assert_eq!(t.shape(), x.shape());
    assert!(t.is_finite());
}

#[test]
fn rejects_bad_configs() {
    let x = small(7);
    let mut c = cfg(0.0);
    assert!(train_stream(&x, &full(12), &c).is_err());
    c = cfg(0.004);
    c.batch_size = 0;
    assert!(train_stream(&x, &full(12), &c).is_err());
    assert!(train(&x, &[full(10)], &cfg(0.004)).is_err());
    assert!(train_stream(&x.select_rows(&[0]), &full(12), &cfg(0.004)).is_err());
}
