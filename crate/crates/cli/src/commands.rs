//! Subcommand bodies. Each takes resolved inputs and writes only below `out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use shtc_core::bench::rd::distortion_db;
use shtc_core::bench::{analysis_report, bd_rate, sweep, synth_source};
use shtc_core::bitstream::{self, ByteCounts};
use shtc_core::codec::CodecBundle;
use shtc_core::imagemetric::{ycbcr_loss_with, ColorMatrix, Image, LossWeights};
use shtc_core::linalg::AttributeTable;
use shtc_core::train::{train, LogRecord};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::table_io::{read_table, write_table};

pub const MODEL_FILE: &str = "model.shtcm";
pub const LOG_FILE: &str = "train_log.csv";
pub const ENCODED_FILE: &str = "table.shtc";
pub const RD_FILE: &str = "rd_curve.csv";
pub const BD_FILE: &str = "bd_rate.csv";

fn ensure_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))
}

fn rows_u32(x: &AttributeTable) -> CliResult<u32> {
    u32::try_from(x.rows()).map_err(|_| CliError::Data(format!("{} rows exceed the container limit", x.rows())))
}

fn counts_json(c: &ByteCounts, rows: u32) -> Value {
    let per_row = |b: usize| if rows == 0 { 0.0 } else { b as f64 * 8.0 / rows as f64 };
    json!({
        "model_bytes": c.model_bytes,
        "payload_bytes": c.payload_bytes,
        "overhead_bytes": c.overhead_bytes,
        "total_bytes": c.total_bytes,
        "model_bits_per_row": per_row(c.model_bytes),
        "payload_bits_per_row": per_row(c.payload_bytes),
        "bits_per_row": per_row(c.total_bytes),
    })
}

/// Trains a bundle on `input`; writes the model container and the training log.
pub fn fit(input: &Path, cfg: &RunConfig, out: &Path) -> CliResult<Value> {
    let x = read_table(input)?;
    let specs = cfg.stream_specs(x.cols())?;
    let outputs = train(&x, &specs, &cfg.train_config()?)?;
    ensure_dir(out)?;
    let mut log = format!("stream,{}\n", LogRecord::CSV_HEADER);
    for (k, o) in outputs.iter().enumerate() {
        for r in &o.log {
            let _ = writeln!(log, "{k},{}", r.csv_line());
        }
    }
    fs::write(out.join(LOG_FILE), log)?;
    let bundle = CodecBundle::new(outputs.into_iter().map(|o| o.codec).collect())?;
    let model = out.join(MODEL_FILE);
    let counts = bitstream::write_bundle(&model, &bundle)?;
    let params: usize = bundle
        .streams()
        .iter()
        .filter_map(|s| s.refinement())
        .map(|r| r.model.param_count())
        .sum();
    Ok(json!({
        "model": model.display().to_string(),
        "model_bytes": counts.model_bytes,
        "refinement_params": params,
        "streams": bundle.streams().len(),
    }))
}

fn load_bundle(model: &Path) -> CliResult<CodecBundle> {
    if !model.exists() {
        return Err(CliError::Data(format!("{}: no such file", model.display())));
    }
    Ok(bitstream::read(model)?.bundle)
}

/// Encodes `input` with a fitted model into `out/table.shtc`.
pub fn encode(input: &Path, model: &Path, out: &Path) -> CliResult<Value> {
    let x = read_table(input)?;
    let bundle = load_bundle(model)?;
    if bundle.dim() != x.cols() {
        return Err(CliError::Data(format!(
            "model codes {} channels, table has {}",
            bundle.dim(),
            x.cols()
        )));
    }
    let (payloads, _) = bundle.encode(&x)?;
    ensure_dir(out)?;
    let path = out.join(ENCODED_FILE);
    let rows = rows_u32(&x)?;
    let counts = bitstream::write(&path, &bundle, &payloads, rows)?;
    Ok(json!({
        "file": path.display().to_string(),
        "rows": rows,
        "bytes": counts_json(&counts, rows),
    }))
}

/// Decodes a `.shtc` file to `out/<name>`.
pub fn decode(file: &Path, out: &Path, name: &str) -> CliResult<Value> {
    if !file.exists() {
        return Err(CliError::Data(format!("{}: no such file", file.display())));
    }
    let c = bitstream::read(file)?;
    let x = c.bundle.decode(&c.payloads, c.rows as usize)?;
    ensure_dir(out)?;
    let path = out.join(name);
    write_table(&path, &x)?;
    Ok(json!({ "file": path.display().to_string(), "rows": x.rows(), "cols": x.cols() }))
}

/// Distortion of `decoded` against `original`, plus the rate split when the
/// container is given.
pub fn eval(original: &Path, decoded: &Path, container: Option<&Path>) -> CliResult<Value> {
    let a = read_table(original)?;
    let b = read_table(decoded)?;
    if a.shape() != b.shape() {
        return Err(CliError::Data(format!("shape {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (l1, rmse, db) = distortion_db(&a, &b);
    let mut v = json!({
        "rows": a.rows(),
        "cols": a.cols(),
        "l1": l1,
        "rmse": rmse,
        "distortion_db": if db.is_finite() { json!(db) } else { json!("inf") },
    });
    if let Some(p) = container {
        let r = bitstream::mdl_report(p)?;
        v["bits_per_row"] = json!(r.bits_per_row());
        v["mdl"] = counts_json(&r.counts, r.rows);
    }
    Ok(v)
}

fn bench_table(input: Option<&Path>, cfg: &RunConfig) -> CliResult<AttributeTable> {
    match input {
        Some(p) => read_table(p),
        None => Ok(synth_source(&cfg.synthetic_spec())?),
    }
}

/// R-D sweep over methods and λ; writes `rd_curve.csv` and `bd_rate.csv`.
pub fn bench(input: Option<&Path>, cfg: &RunConfig, out: &Path) -> CliResult<(Value, Vec<String>)> {
    let x = bench_table(input, cfg)?;
    let methods = cfg.methods()?;
    let result = sweep(&x, &methods, &cfg.bench.lambdas, &cfg.sweep_config()?);
    ensure_dir(out)?;

    let mut rd = csv::Writer::from_path(out.join(RD_FILE)).map_err(|e| CliError::Data(e.to_string()))?;
    rd.write_record(["method", "lambda", "bits", "distortion_db"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for p in &result.points {
        rd.write_record([
            p.method.name().to_string(),
            p.lambda.to_string(),
            p.bits.to_string(),
            p.distortion_db.to_string(),
        ])
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    rd.flush()?;

    let mut bd = csv::Writer::from_path(out.join(BD_FILE)).map_err(|e| CliError::Data(e.to_string()))?;
    bd.write_record(["test", "anchor", "bd_rate_percent", "note"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut pairs = Vec::new();
    for t in &methods {
        for a in &methods {
            if t == a {
                continue;
            }
            let (value, note) = match (result.curve(*t), result.curve(*a)) {
                (Ok(ct), Ok(ca)) => match bd_rate(&ct, &ca) {
                    Ok(v) => (v.to_string(), String::new()),
                    Err(e) => ("NA".to_string(), e.to_string()),
                },
                (Err(e), _) | (_, Err(e)) => ("NA".to_string(), e.to_string()),
            };
            pairs.push(json!({ "test": t.name(), "anchor": a.name(), "bd_rate_percent": value }));
            bd.write_record([t.name(), a.name(), value.as_str(), note.as_str()])
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
    }
    bd.flush()?;
    let summary = json!({
        "rows": x.rows(),
        "points": result.points.len(),
        "rd_curve": out.join(RD_FILE).display().to_string(),
        "bd_rate": pairs,
    });
    Ok((summary, result.warnings))
}

fn write_matrix(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_record(header).map_err(|e| CliError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Correlation and energy CSVs for raw, DCT, Haar and KLT coefficients.
pub fn report(input: Option<&Path>, cfg: &RunConfig, out: &Path) -> CliResult<Value> {
    let x = bench_table(input, cfg)?;
    let blocks = analysis_report(&x)?;
    ensure_dir(out)?;
    let d = x.cols();
    let header: Vec<String> = (0..d).map(|j| format!("c{j}")).collect();
    let mut files: Vec<PathBuf> = Vec::new();
    for b in &blocks {
        let p = out.join(format!("pearson_{}.csv", b.name));
        write_matrix(
            &p,
            &header,
            (0..d).map(|i| b.pearson.row(i).iter().map(|v| v.to_string()).collect()),
        )?;
        files.push(p);
    }
    let mut eh = vec!["transform".to_string()];
    eh.extend(header.iter().cloned());
    let ep = out.join("energy.csv");
    write_matrix(
        &ep,
        &eh,
        blocks.iter().map(|b| {
            let mut r = vec![b.name.to_string()];
            r.extend(b.energy.iter().map(|v| v.to_string()));
            r
        }),
    )?;
    files.push(ep);
    let off: Value = blocks
        .iter()
        .map(|b| (b.name.to_string(), json!(b.pearson.max_off_diagonal())))
        .collect::<serde_json::Map<_, _>>()
        .into();
    Ok(json!({
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "max_off_diagonal": off,
    }))
}

pub fn read_ppm(path: &Path) -> CliResult<Image> {
    let img = image::ImageReader::open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .with_guessed_format()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if img.format() != Some(image::ImageFormat::Pnm) {
        return Err(CliError::Data(format!("{}: not a PPM image", path.display())));
    }
    let rgb = img
        .decode()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(Image::from_rgb8(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.as_raw(),
    )?)
}

pub fn image_metric(reference: &Path, decoded: &Path) -> CliResult<Value> {
    let a = read_ppm(reference)?;
    let b = read_ppm(decoded)?;
    let w = LossWeights::default();
    let t = ycbcr_loss_with(&a, &b, &w, &ColorMatrix::BT601)?;
    let (wy, wcb, wcr, wl, wtb, wtr) = w.as_tuple();
    Ok(json!({
        "loss": t.total,
        "l1_y": t.l1_y,
        "l1_cb": t.l1_cb,
        "l1_cr": t.l1_cr,
        "l1_laplacian_y": t.l1_laplacian,
        "tv_cb": t.tv_cb,
        "tv_cr": t.tv_cr,
        "weights": [wy, wcb, wcr, wl, wtb, wtr],
    }))
}

/// Methods parsed from a comma list.
pub fn split_methods(s: &str) -> Vec<String> {
    s.split(',')
        .map(|m| m.trim().to_string())
        .filter(|m| !m.is_empty())
        .collect()
}
