//! `.shtc` container: a codec bundle (the model, `L(M)`) followed by the
//! entropy-coded payload of every stream (`L(D|M)`).
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! header   "SHTC" | u16 version | u16 streams | u32 rows | u32 crc32(previous 12 bytes)
//! stream   five blocks, each  u32 len | content | u32 crc32(content)
//!   dims        u8 kind, u8 refined, u16 D, M, N_t, N_d, N_u
//!   transform   f32 mean[D], f32 basis[D×D] (KLT only, row-major)
//!   refinement  f32 A[N_t×D], D[D×N_d], then per layer step[N_d], threshold[N_d]
//!   entropy     per latent: f32 q_s, α, μ[n], σ[n]  (base, then refinement)
//!   payload     u32 symbol count, coded bytes
//! ```
//!
//! See `docs/format.md` for the byte-level description.

use std::path::Path;

use crate::base::{fixed_basis, BaseLayer, TransformKind};
use crate::codec::{CodecBundle, LatentCoder, Payload, Refinement, StreamCodec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::refinement::{IstaLayer, RefinementModel};

pub const MAGIC: &[u8; 4] = b"SHTC";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 16;
/// Length prefix plus checksum around every block.
pub const BLOCK_OVERHEAD: usize = 8;
pub const BLOCKS_PER_STREAM: usize = 5;
const DIMS_BYTES: usize = 12;

const BLOCK_NAMES: [&str; BLOCKS_PER_STREAM] = ["dims", "transform", "refinement", "entropy", "payload"];

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub bundle: CodecBundle,
    pub payloads: Vec<Payload>,
    pub rows: u32,
}

/// Byte split of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamBytes {
    pub dims: usize,
    pub transform: usize,
    pub refinement: usize,
    pub entropy: usize,
    pub payload: usize,
}

impl StreamBytes {
    /// `L(M)`: every model block.
    pub fn model(&self) -> usize {
        self.dims + self.transform + self.refinement + self.entropy
    }
}

/// Byte accounting of a written container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteCounts {
    pub streams: Vec<StreamBytes>,
    pub model_bytes: usize,
    pub payload_bytes: usize,
    pub overhead_bytes: usize,
    pub total_bytes: usize,
}

impl ByteCounts {
    fn from_streams(streams: Vec<StreamBytes>) -> Self {
        let model_bytes = streams.iter().map(|s| s.model()).sum();
        let payload_bytes = streams.iter().map(|s| s.payload).sum();
        let overhead_bytes = HEADER_BYTES + streams.len() * BLOCKS_PER_STREAM * BLOCK_OVERHEAD;
        Self {
            model_bytes,
            payload_bytes,
            overhead_bytes,
            total_bytes: model_bytes + payload_bytes + overhead_bytes,
            streams,
        }
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn put_block(out: &mut Vec<u8>, content: &[u8]) {
    out.extend_from_slice(&(content.len() as u32).to_le_bytes());
    out.extend_from_slice(content);
    out.extend_from_slice(&crc32fast::hash(content).to_le_bytes());
}

fn u16_dim(v: usize, what: &str) -> Result<[u8; 2]> {
    u16::try_from(v)
        .map(u16::to_le_bytes)
        .map_err(|_| Error::Inconsistent(format!("{what} = {v} exceeds the 16-bit field")))
}

fn latent_bytes(out: &mut Vec<u8>, l: &LatentCoder) {
    put_f32s(out, &[l.schedule().base_step(), l.schedule().alpha()]);
    put_f32s(out, l.model().mean());
    put_f32s(out, l.model().scale());
}

fn stream_blocks(s: &StreamCodec, payload: &Payload) -> Result<[Vec<u8>; BLOCKS_PER_STREAM]> {
    let base = s.base();
    let refine = s.refinement();
    let dims = refine.map(|r| r.model.dims());

    let mut d = Vec::with_capacity(DIMS_BYTES);
    d.push(base.kind().code());
    d.push(u8::from(refine.is_some()));
    d.extend(u16_dim(base.dim(), "D")?);
    d.extend(u16_dim(base.rank(), "M")?);
    d.extend(u16_dim(dims.map_or(0, |x| x.measurements), "N_t")?);
    d.extend(u16_dim(dims.map_or(0, |x| x.atoms), "N_d")?);
    d.extend(u16_dim(dims.map_or(0, |x| x.layers), "N_u")?);

    let mut t = Vec::new();
    put_f32s(&mut t, base.mean());
    if base.kind().stores_basis() {
        put_f32s(&mut t, base.basis().data());
    }

    let mut r = Vec::new();
    if let Some(rf) = refine {
        put_f32s(&mut r, rf.model.measure().data());
        put_f32s(&mut r, rf.model.dict().data());
        for layer in rf.model.layers() {
            put_f32s(&mut r, &layer.step);
            put_f32s(&mut r, &layer.threshold);
        }
    }

    let mut e = Vec::new();
    latent_bytes(&mut e, s.base_latent());
    if let Some(rf) = refine {
        latent_bytes(&mut e, &rf.latent);
    }

    let mut p = Vec::with_capacity(4 + payload.bytes.len());
    p.extend_from_slice(&payload.symbols.to_le_bytes());
    p.extend_from_slice(&payload.bytes);
    Ok([d, t, r, e, p])
}

/// Serializes a bundle and its payloads. A bundle on its own is stored with
/// `rows = 0` and empty payloads.
pub fn to_bytes(bundle: &CodecBundle, payloads: &[Payload], rows: u32) -> Result<(Vec<u8>, ByteCounts)> {
    if payloads.len() != bundle.streams().len() {
        return Err(Error::Inconsistent(format!(
            "{} payloads for {} streams",
            payloads.len(),
            bundle.streams().len()
        )));
    }
    let count = u16::try_from(payloads.len()).map_err(|_| Error::Inconsistent("too many streams".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());

    let mut streams = Vec::new();
    for (s, p) in bundle.streams().iter().zip(payloads) {
        let blocks = stream_blocks(s, p)?;
        streams.push(StreamBytes {
            dims: blocks[0].len(),
            transform: blocks[1].len(),
            refinement: blocks[2].len(),
            entropy: blocks[3].len(),
            payload: blocks[4].len(),
        });
        for b in &blocks {
            put_block(&mut out, b);
        }
    }
    let counts = ByteCounts::from_streams(streams);
    debug_assert_eq!(counts.total_bytes, out.len());
    Ok((out, counts))
}

pub fn write(path: impl AsRef<Path>, bundle: &CodecBundle, payloads: &[Payload], rows: u32) -> Result<ByteCounts> {
    let (bytes, counts) = to_bytes(bundle, payloads, rows)?;
    std::fs::write(path, bytes)?;
    Ok(counts)
}

/// Writes a bundle without payload.
pub fn write_bundle(path: impl AsRef<Path>, bundle: &CodecBundle) -> Result<ByteCounts> {
    let empty = vec![
        Payload {
            symbols: 0,
            bytes: Vec::new()
        };
        bundle.streams().len()
    ];
    write(path, bundle, &empty, 0)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn block(&mut self, name: &'static str) -> Result<Reader<'a>> {
        let len = self.u32()? as usize;
        let content = self.take(len)?;
        let crc = self.u32()?;
        if crc32fast::hash(content) != crc {
            return Err(Error::Checksum(name));
        }
        Ok(Reader { data: content, pos: 0 })
    }

    fn finish(&self, name: &str) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Inconsistent(format!(
                "{name} block has {} bytes, layout needs {}",
                self.data.len(),
                self.pos
            )));
        }
        Ok(())
    }
}

fn read_latent(r: &mut Reader<'_>, n: usize) -> Result<LatentCoder> {
    let head = r.f32s(2)?;
    let mean = r.f32s(n)?;
    let scale = r.f32s(n)?;
    LatentCoder::from_parts(head[0], head[1], mean, scale)
}

fn read_stream(r: &mut Reader<'_>) -> Result<(StreamCodec, Payload, StreamBytes)> {
    let mut blocks = Vec::with_capacity(BLOCKS_PER_STREAM);
    for name in BLOCK_NAMES {
        blocks.push(r.block(name)?);
    }
    let sizes = StreamBytes {
        dims: blocks[0].data.len(),
        transform: blocks[1].data.len(),
        refinement: blocks[2].data.len(),
        entropy: blocks[3].data.len(),
        payload: blocks[4].data.len(),
    };
    let [mut d, mut t, mut rf, mut e, mut p]: [Reader<'_>; BLOCKS_PER_STREAM] =
        blocks.try_into().map_err(|_| Error::Truncated)?;

    let kind_code = d.take(1)?[0];
    let kind = TransformKind::from_code(kind_code)
        .ok_or_else(|| Error::Inconsistent(format!("unknown transform code {kind_code}")))?;
    let refined = match d.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Inconsistent(format!("refinement flag {other}"))),
    };
    let dim = d.u16()? as usize;
    let rank = d.u16()? as usize;
    let (nt, nd, nu) = (d.u16()? as usize, d.u16()? as usize, d.u16()? as usize);
    d.finish("dims")?;

    let mean = t.f32s(dim)?;
    let basis = if kind.stores_basis() {
        Matrix::new(dim, dim, t.f32s(dim * dim)?)?
    } else {
        fixed_basis(kind, dim)?
    };
    t.finish("transform")?;
    let base = BaseLayer::from_parts(kind, mean, basis, rank)?;

    let base_latent = read_latent(&mut e, rank)?;
    let refinement = if refined {
        let measure = Matrix::new(nt, dim, rf.f32s(nt * dim)?)?;
        let dict = Matrix::new(dim, nd, rf.f32s(dim * nd)?)?;
        let mut layers = Vec::with_capacity(nu);
        for _ in 0..nu {
            layers.push(IstaLayer {
                step: rf.f32s(nd)?,
                threshold: rf.f32s(nd)?,
            });
        }
        Some(Refinement {
            model: RefinementModel::new(measure, dict, layers)?,
            latent: read_latent(&mut e, nt)?,
        })
    } else {
        if nt + nd + nu != 0 {
            return Err(Error::Inconsistent("refinement dims set on a base-only stream".into()));
        }
        None
    };
    rf.finish("refinement")?;
    e.finish("entropy")?;

    let symbols = p.u32()?;
    let bytes = p.data[p.pos..].to_vec();
    let codec = StreamCodec::new(base, base_latent, refinement)?;
    Ok((codec, Payload { symbols, bytes }, sizes))
}

fn parse(bytes: &[u8]) -> Result<(Container, ByteCounts)> {
    let mut r = Reader { data: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| Error::BadMagic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let count = r.u16()? as usize;
    let rows = r.u32()?;
    let crc = r.u32()?;
    if crc32fast::hash(&bytes[..12]) != crc {
        return Err(Error::Checksum("header"));
    }
    let mut streams = Vec::with_capacity(count);
    let mut payloads = Vec::with_capacity(count);
    let mut sizes = Vec::with_capacity(count);
    for _ in 0..count {
        let (s, p, z) = read_stream(&mut r)?;
        streams.push(s);
        payloads.push(p);
        sizes.push(z);
    }
    if r.pos != bytes.len() {
        return Err(Error::Inconsistent(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((
        Container {
            bundle: CodecBundle::new(streams)?,
            payloads,
            rows,
        },
        ByteCounts::from_streams(sizes),
    ))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
    parse(bytes).map(|(c, _)| c)
}

pub fn read(path: impl AsRef<Path>) -> Result<Container> {
    from_bytes(&std::fs::read(path)?)
}

/// Model/data split of a container.
#[derive(Debug, Clone, PartialEq)]
pub struct MdlReport {
    pub rows: u32,
    pub counts: ByteCounts,
    pub file_bytes: usize,
}

impl MdlReport {
    pub fn bits_per_row(&self) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        self.file_bytes as f64 * 8.0 / self.rows as f64
    }

    /// Plain-text table, one line per stream plus a total.
    pub fn to_table(&self) -> String {
        let mut s = String::from("stream,model_bytes,refinement_bytes,payload_bytes\n");
        for (i, b) in self.counts.streams.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{}\n", b.model(), b.refinement, b.payload));
        }
        s.push_str(&format!(
            "total,{},{},{}\nfile_bytes,{}\noverhead_bytes,{}\nbits_per_row,{}\n",
            self.counts.model_bytes,
            self.counts.streams.iter().map(|b| b.refinement).sum::<usize>(),
            self.counts.payload_bytes,
            self.file_bytes,
            self.counts.overhead_bytes,
            self.bits_per_row()
        ));
        s
    }
}

pub fn mdl_report_bytes(bytes: &[u8]) -> Result<MdlReport> {
    let (c, counts) = parse(bytes)?;
    Ok(MdlReport {
        rows: c.rows,
        counts,
        file_bytes: bytes.len(),
    })
}

pub fn mdl_report(path: impl AsRef<Path>) -> Result<MdlReport> {
    mdl_report_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::fit_base;
    use crate::entropy::GaussianEntropyModel;
    use crate::quant::channel_schedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn latent(n: usize, rng: &mut ChaCha8Rng) -> LatentCoder {
        let s = channel_schedule(rng.random_range(0.01..1.0), rng.random_range(-0.1..0.1), n).unwrap();
        let m = GaussianEntropyModel::new(
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.random_range(0.05..2.0)).collect(),
        )
        .unwrap();
        LatentCoder::new(s, m).unwrap()
    }

    fn random_stream(rng: &mut ChaCha8Rng) -> StreamCodec {
        let d = rng.random_range(2..9);
        let kinds = [
            TransformKind::Identity,
            TransformKind::Dct,
            TransformKind::Haar,
            TransformKind::Klt,
        ];
        let kind = kinds[rng.random_range(0..4)];
        let x = Matrix::from_fn(20, d, |_, _| rng.random_range(-1.0..1.0));
        let rank = rng.random_range(1..=d);
        let base = fit_base(kind, &x, rank).unwrap();
        let refinement = if rng.random_bool(0.5) {
            let dims = crate::refinement::RefinementDims {
                channels: d,
                measurements: rng.random_range(1..d),
                atoms: rng.random_range(1..7),
                layers: rng.random_range(1..4),
            };
            let model = RefinementModel::init(dims, 0.01, rng).unwrap();
            Some(Refinement {
                model,
                latent: latent(dims.measurements, rng),
            })
        } else {
            None
        };
        let mut s = StreamCodec::new(base, latent(rank, rng), refinement).unwrap();
        s.snap_to_f32().unwrap();
        s
    }

    fn minimal() -> CodecBundle {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 3.5], [0.0, 1.0]]);
        let base = fit_base(TransformKind::Klt, &x, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = StreamCodec::new(base, latent(1, &mut rng), None).unwrap();
        s.snap_to_f32().unwrap();
        CodecBundle::new(vec![s]).unwrap()
    }

    #[test]
    fn golden_minimal_bundle() {
        let b = minimal();
        let (bytes, counts) = to_bytes(
            &b,
            &[Payload {
                symbols: 0,
                bytes: vec![],
            }],
            0,
        )
        .unwrap();
        // dims 12 + mean 2·4 + basis 4·4 + entropy (2 + 2)·4
        assert_eq!(counts.model_bytes, 52);
        assert_eq!(counts.payload_bytes, 4);
        // header 16 + five blocks × 8
        assert_eq!(bytes.len(), 112);
        assert_eq!(&bytes[..4], b"SHTC");
        assert_eq!(from_bytes(&bytes).unwrap().bundle, b);
    }

    #[test]
    fn klt_basis_cost_for_fifty_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_fn(200, 50, |_, _| rng.random_range(-1.0..1.0));
        let base = fit_base(TransformKind::Klt, &x, 15).unwrap();
        let s = StreamCodec::new(base, latent(15, &mut rng), None).unwrap();
        let b = CodecBundle::new(vec![s]).unwrap();
        let (_, counts) = to_bytes(
            &b,
            &[Payload {
                symbols: 0,
                bytes: vec![],
            }],
            0,
        )
        .unwrap();
        assert_eq!(counts.streams[0].transform, 50 * 4 + 50 * 50 * 4);
    }

    #[test]
    fn random_bundles_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..3);
            let streams: Vec<StreamCodec> = (0..n).map(|_| random_stream(&mut rng)).collect();
            let payloads: Vec<Payload> = (0..n)
                .map(|_| Payload {
                    symbols: rng.random_range(0..100),
                    bytes: (0..rng.random_range(0..40)).map(|_| rng.random()).collect(),
                })
                .collect();
            let b = CodecBundle::new(streams).unwrap();
            let (bytes, counts) = to_bytes(&b, &payloads, 7).unwrap();
            assert_eq!(counts.total_bytes, bytes.len());
            let c = from_bytes(&bytes).unwrap();
            assert_eq!(c.bundle, b);
            assert_eq!(c.payloads, payloads);
            assert_eq!(c.rows, 7);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let b = minimal();
        let p = Payload {
            symbols: 3,
            bytes: vec![9, 8, 7, 6, 5],
        };
        let (bytes, _) = to_bytes(&b, &[p], 3).unwrap();
        let mut bad = bytes.clone();
        let last = bad.len() - 6;
        bad[last] ^= 0x10;
        assert!(matches!(from_bytes(&bad), Err(Error::Checksum("payload"))));

        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(from_bytes(&v), Err(Error::VersionUnsupported(2))));

        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(from_bytes(&m), Err(Error::BadMagic)));

        for cut in [3, 10, 20, bytes.len() - 1] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(Error::Truncated | Error::BadMagic)),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn mdl_totals() {
        let b = minimal();
        let (bytes, _) = to_bytes(
            &b,
            &[Payload {
                symbols: 2,
                bytes: vec![1, 2, 3],
            }],
            2,
        )
        .unwrap();
        let r = mdl_report_bytes(&bytes).unwrap();
        assert_eq!(
            r.counts.model_bytes + r.counts.payload_bytes,
            r.file_bytes - r.counts.overhead_bytes
        );
        assert_eq!(r.counts.streams[0].refinement, 0);
        assert_eq!(r, mdl_report_bytes(&bytes).unwrap());
    }
}
