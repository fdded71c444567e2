//! Per-channel frequency tables derived from the Gaussian model, and the
//! symbol stream coder built on them.
//!
//! Each table covers `center ± W` where `center = round(μ/Δ)` and
//! `W = clamp(⌈8σ/Δ⌉ + 1, 1, 4096)`, plus one escape symbol. Escaped values
//! follow as two raw 16-bit chunks.

use super::range_coder::{RangeDecoder, RangeEncoder, FREQ_TOTAL};
use super::{interval_mass, GaussianEntropyModel};
use crate::error::{Error, Result};
use crate::quant::QuantSchedule;

pub const MAX_HALF_WIDTH: i64 = 4096;
const TAIL_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    lowest: i64,
    /// Cumulative starts; `cum.len() == symbols + 2` with the escape last.
    cum: Vec<u32>,
}

impl FrequencyTable {
    pub fn build(mean: f64, scale: f64, step: f64) -> Self {
        let width = ((TAIL_SIGMAS * scale / step).ceil() + 1.0).clamp(1.0, MAX_HALF_WIDTH as f64) as i64;
        let limit = i32::MAX as i64 - width;
        let center = ((mean / step).round().clamp(-limit as f64, limit as f64)) as i64;
        let lowest = center - width;
        let count = (2 * width + 1) as usize;
        let nsym = count + 1;

        let mut probs = Vec::with_capacity(nsym);
        let mut total = 0.0;
        for j in 0..count {
            let x = (lowest + j as i64) as f64 * step;
            let p = interval_mass((x - mean - 0.5 * step) / scale, (x - mean + 0.5 * step) / scale);
            total += p;
            probs.push(p);
        }
        probs.push((1.0 - total).max(0.0));

        let spare = (FREQ_TOTAL as usize - nsym) as f64;
        let mut freq: Vec<u32> = probs.iter().map(|p| 1 + (p * spare).floor() as u32).collect();
        let used: u32 = freq.iter().sum();
        let argmax = freq
            .iter()
            .enumerate()
            .fold(0, |best, (i, f)| if *f > freq[best] { i } else { best });
        freq[argmax] += FREQ_TOTAL - used;

        let mut cum = Vec::with_capacity(nsym + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in &freq {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        Self { lowest, cum }
    }

    fn escape_index(&self) -> usize {
        self.cum.len() - 2
    }

    fn index_of(&self, symbol: i32) -> Option<usize> {
        let off = symbol as i64 - self.lowest;
        (off >= 0 && (off as usize) < self.escape_index()).then_some(off as usize)
    }

    fn interval(&self, index: usize) -> (u32, u32) {
        (self.cum[index], self.cum[index + 1] - self.cum[index])
    }

    /// Bits the coder spends on `symbol`, ignoring the final flush.
    pub fn cost_bits(&self, symbol: i32) -> f64 {
        match self.index_of(symbol) {
            Some(i) => -(self.interval(i).1 as f64 / FREQ_TOTAL as f64).log2(),
            None => -(self.interval(self.escape_index()).1 as f64 / FREQ_TOTAL as f64).log2() + 32.0,
        }
    }

    fn encode(&self, enc: &mut RangeEncoder, symbol: i32) {
        match self.index_of(symbol) {
            Some(i) => {
                let (start, freq) = self.interval(i);
                enc.encode(start, freq);
            }
            None => {
                let (start, freq) = self.interval(self.escape_index());
                enc.encode(start, freq);
                let raw = symbol as u32;
                enc.encode_raw16(raw >> 16);
                enc.encode_raw16(raw & 0xFFFF);
            }
        }
    }

    fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<i32> {
        let t = dec.target()?;
        // index with cum[i] <= t < cum[i+1]
        let i = self.cum.partition_point(|c| *c <= t) - 1;
        let (start, freq) = self.interval(i);
        dec.update(start, freq);
        if i == self.escape_index() {
            let hi = dec.decode_raw16()?;
            let lo = dec.decode_raw16()?;
            Ok(((hi << 16) | lo) as i32)
        } else {
            Ok((self.lowest + i as i64) as i32)
        }
    }
}

/// Codes `symbols` with `tables[k % tables.len()]` for the `k`th symbol.
pub fn encode_with_tables(symbols: &[i32], tables: &[FrequencyTable]) -> Result<Vec<u8>> {
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    if tables.is_empty() {
        return Err(Error::BadSize("no frequency tables".into()));
    }
    let mut enc = RangeEncoder::new();
    for (k, s) in symbols.iter().enumerate() {
        tables[k % tables.len()].encode(&mut enc, *s);
    }
    Ok(enc.finish())
}

pub fn decode_with_tables(bytes: &[u8], count: usize, tables: &[FrequencyTable]) -> Result<Vec<i32>> {
    if count == 0 {
        if !bytes.is_empty() {
            return Err(Error::Decode("trailing bytes after empty symbol stream".into()));
        }
        return Ok(Vec::new());
    }
    if tables.is_empty() {
        return Err(Error::BadSize("no frequency tables".into()));
    }
    let mut dec = RangeDecoder::new(bytes);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        out.push(tables[k % tables.len()].decode(&mut dec)?);
    }
    dec.finish()?;
    Ok(out)
}

/// Codes symbol vectors laid out row-major, one channel per model entry.
pub fn encode_symbols(symbols: &[i32], model: &GaussianEntropyModel, sched: &QuantSchedule) -> Result<Vec<u8>> {
    let tables = model.tables(sched)?;
    check_layout(symbols.len(), tables.len())?;
    encode_with_tables(symbols, &tables)
}

pub fn decode_symbols(
    bytes: &[u8],
    count: usize,
    model: &GaussianEntropyModel,
    sched: &QuantSchedule,
) -> Result<Vec<i32>> {
    let tables = model.tables(sched)?;
    check_layout(count, tables.len())?;
    decode_with_tables(bytes, count, &tables)
}

fn check_layout(count: usize, channels: usize) -> Result<()> {
    if count > 0 && (channels == 0 || !count.is_multiple_of(channels)) {
        return Err(Error::BadSize(format!(
            "{count} symbols do not fill rows of {channels} channels"
        )));
    }
    Ok(())
}

/// `Σ −log₂ p̂(s)` under the quantized tables; a lower bound on coded bits.
pub fn model_information_bits(symbols: &[i32], tables: &[FrequencyTable]) -> f64 {
    symbols
        .iter()
        .enumerate()
        .map(|(k, s)| tables[k % tables.len()].cost_bits(*s))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::rate_bits;
    use crate::quant::{channel_schedule, dequantize, quantize};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_symbols(
        rows: usize,
        mean: &[f64],
        scale: &[f64],
        sched: &QuantSchedule,
        seed: u64,
    ) -> (Vec<i32>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut syms = Vec::new();
        let mut values = Vec::new();
        for _ in 0..rows {
            let x: Vec<f64> = mean
                .iter()
                .zip(scale)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let q = quantize(&x, sched).unwrap();
            values.push(dequantize(&q, sched).unwrap());
            syms.extend(q);
        }
        (syms, values)
    }

    #[test]
    fn tables_sum_to_total() {
        for (m, s, st) in [
            (0.0, 1.0, 1.0),
            (3.7, 0.01, 5.0),
            (-2.0, 100.0, 0.001),
            (1e9, 1.0, 1e-3),
        ] {
            let t = FrequencyTable::build(m, s, st);
            assert_eq!(*t.cum.last().unwrap(), FREQ_TOTAL);
            assert!(t.cum.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn empty_stream_is_empty() {
        let t = vec![FrequencyTable::build(0.0, 1.0, 1.0)];
        assert!(encode_with_tables(&[], &t).unwrap().is_empty());
        assert!(decode_with_tables(&[], 0, &t).unwrap().is_empty());
    }

    #[test]
    fn matched_model_length_tracks_estimate() {
        let mean = [0.0, 0.3, -1.0, 2.0, 0.0];
        let scale = [1.0, 0.5, 2.0, 0.8, 0.05];
        let sched = channel_schedule(0.25, 0.1, 5).unwrap();
        let model = GaussianEntropyModel::new(mean.to_vec(), scale.to_vec()).unwrap();
        let rows = 20_000; // 1e5 symbols
        let (syms, values) = gaussian_symbols(rows, &mean, &scale, &sched, 11);
        let bytes = encode_symbols(&syms, &model, &sched).unwrap();
        let estimate: f64 = values.iter().map(|v| rate_bits(v, &model, &sched).unwrap()).sum();
        let actual = bytes.len() as f64 * 8.0;
        let slack = (estimate * 0.01).max(16.0);
        assert!(actual <= estimate + slack, "actual {actual} estimate {estimate}");
        assert!(actual >= estimate * 0.98, "actual {actual} estimate {estimate}");

        let info = model_information_bits(&syms, &model.tables(&sched).unwrap());
        assert!(actual >= info, "{actual} < {info}");
        assert_eq!(decode_symbols(&bytes, syms.len(), &model, &sched).unwrap(), syms);
    }

    #[test]
    fn all_zero_symbols_are_nearly_free() {
        let sched = channel_schedule(5.0, 0.0, 4).unwrap();
        let model = GaussianEntropyModel::new(vec![0.0; 4], vec![0.1; 4]).unwrap();
        let syms = vec![0i32; 40_000];
        let bytes = encode_symbols(&syms, &model, &sched).unwrap();
        let per_symbol = bytes.len() as f64 * 8.0 / syms.len() as f64;
        assert!(per_symbol < 0.02, "{per_symbol}");
        assert_eq!(decode_symbols(&bytes, syms.len(), &model, &sched).unwrap(), syms);
    }

    #[test]
    fn escape_values_round_trip() {
        let tables = vec![
            FrequencyTable::build(0.0, 0.1, 1.0),
            FrequencyTable::build(5.0, 1.0, 0.5),
        ];
        let syms = vec![0, 10, i32::MAX, -7, i32::MIN, 9, 1, 100_000];
        let bytes = encode_with_tables(&syms, &tables).unwrap();
        assert_eq!(decode_with_tables(&bytes, syms.len(), &tables).unwrap(), syms);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let sched = channel_schedule(1.0, 0.0, 3).unwrap();
        let model = GaussianEntropyModel::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(
            encode_symbols(&[1, 2], &model, &sched),
            Err(Error::BadSize(_))
        ));
    }

    #[test]
    fn truncated_stream_fails() {
        let tables = vec![FrequencyTable::build(0.0, 3.0, 0.1)];
        let syms: Vec<i32> = (0..2000).map(|i| (i * 7919 % 61) - 30).collect();
        let bytes = encode_with_tables(&syms, &tables).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        let r = decode_with_tables(cut, syms.len(), &tables);
        assert!(r.is_err() || r.unwrap() != syms);
    }

    proptest! {
        #[test]
        fn round_trip(
            syms in proptest::collection::vec(-300i32..300, 0..400),
            mean in -5.0f64..5.0,
            scale in 0.01f64..50.0,
            step in 0.05f64..4.0,
        ) {
            let tables = vec![FrequencyTable::build(mean, scale, step), FrequencyTable::build(-mean, scale * 0.3, step)];
            let bytes = encode_with_tables(&syms, &tables).unwrap();
            prop_assert_eq!(decode_with_tables(&bytes, syms.len(), &tables).unwrap(), syms.clone());
            if !syms.is_empty() {
                prop_assert!(bytes.len() as f64 * 8.0 >= model_information_bits(&syms, &tables));
            }
        }
    }
}
