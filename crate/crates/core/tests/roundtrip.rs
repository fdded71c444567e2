use shtc_core::base::TransformKind;
use shtc_core::bench::{synth_source, SyntheticSpec};
use shtc_core::bitstream;
use shtc_core::codec::CodecBundle;
use shtc_core::refinement::RefinementDims;
use shtc_core::train::{train, StreamSpec, TrainConfig};

#[test]
fn trained_bundle_survives_the_container() {
    let x = synth_source(&SyntheticSpec {
        rows: 1500,
        channels: 16,
        rank: 5,
        spikes: 2,
        ..SyntheticSpec::standard(9)
    })
    .unwrap();
    let specs = [
        StreamSpec::base_only(10, TransformKind::Klt, 4).with_refinement(RefinementDims {
            channels: 10,
            measurements: 4,
            atoms: 10,
            layers: 2,
        }),
        StreamSpec::base_only(6, TransformKind::Identity, 6),
    ];
    let mut cfg = TrainConfig::new(0.004);
    cfg.iterations = 200;
    let out = train(&x, &specs, &cfg).unwrap();
    let bundle = CodecBundle::new(out.into_iter().map(|o| o.codec).collect()).unwrap();
    let (payloads, recon) = bundle.encode(&x).unwrap();
    let (bytes, counts) = bitstream::to_bytes(&bundle, &payloads, x.rows() as u32).unwrap();
    assert_eq!(counts.total_bytes, bytes.len());

    let c = bitstream::from_bytes(&bytes).unwrap();
    assert_eq!(c.rows as usize, x.rows());
    let decoded = c.bundle.decode(&c.payloads, x.rows()).unwrap();
    assert_eq!(decoded, recon);
    assert_eq!(c.bundle, bundle);

    let report = bitstream::mdl_report_bytes(&bytes).unwrap();
    assert_eq!(
        report.counts.model_bytes + report.counts.payload_bytes + report.counts.overhead_bytes,
        bytes.len()
    );
}

#[test]
fn wrong_width_is_rejected() {
    let x = synth_source(&SyntheticSpec {
        rows: 200,
        channels: 8,
        rank: 3,
        spikes: 1,
        ..SyntheticSpec::standard(1)
    })
    .unwrap();
    let mut cfg = TrainConfig::new(0.004);
    cfg.iterations = 20;
    let out = train(&x, &[StreamSpec::base_only(8, TransformKind::Dct, 8)], &cfg).unwrap();
    let bundle = CodecBundle::new(out.into_iter().map(|o| o.codec).collect()).unwrap();
    assert!(bundle.encode(&x.column_block(0, 7)).is_err());
}
