//! CSV writers. Floats use Rust's shortest round-trip formatting, so equal
//! inputs produce byte-identical files.

use std::io::Write;
use std::path::Path;

use tinyicenet_core::dataflow::{CycleReport, LayerConfigs, ResourceReport};
use tinyicenet_core::eval::EvalReport;
use tinyicenet_core::quant::SweepRow;
use tinyicenet_core::train::HistoryRow;

use crate::error::{Error, Result};

fn write_rows<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

fn to_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf).map_err(Error::io(path))
}

pub fn write_history<W: Write>(out: W, rows: &[HistoryRow]) -> Result<()> {
    write_rows(
        out,
        &["epoch", "step", "loss", "lr", "val_f1"],
        rows.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.step.to_string(),
                r.loss.to_string(),
                r.lr.to_string(),
                r.val_f1.map(|v| v.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    write_rows(out, &["bits", "f1"], rows.iter().map(|r| vec![r.bits.to_string(), r.f1.to_string()]))
}

/// One row per scene, then `aggregate,<valid pixels>,<pooled f1>`.
pub fn write_eval<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let total: u64 = report.per_scene.iter().map(|s| s.valid_pixels).sum();
    let rows = report
        .per_scene
        .iter()
        .map(|s| vec![s.id.clone(), s.valid_pixels.to_string(), s.f1.to_string()])
        .chain(std::iter::once(vec!["aggregate".into(), total.to_string(), report.aggregate.value.to_string()]));
    write_rows(out, &["scene_id", "valid_pixels", "f1"], rows)
}

pub fn write_cycles<W: Write>(out: W, report: &CycleReport) -> Result<()> {
    write_rows(
        out,
        &["layer", "variant", "uf_in", "uf_out", "prime", "steady", "total"],
        report.layers.iter().map(|e| {
            vec![
                e.layer.to_string(),
                e.variant.name().into(),
                e.uf_in.to_string(),
                e.uf_out.to_string(),
                e.prime_cycles.to_string(),
                e.steady_cycles.to_string(),
                e.total_cycles.to_string(),
            ]
        }),
    )
}

/// Per-layer rows followed by a `total` row.
pub fn write_resources<W: Write>(out: W, report: &ResourceReport) -> Result<()> {
    let row =
        |name: String, e: &tinyicenet_core::dataflow::ResourceEntry| vec![name, e.mac_units.to_string(), e.buffer_bits.to_string(), e.weight_bits.to_string()];
    let rows = report
        .layers
        .iter()
        .map(|e| row(e.layer.to_string(), e))
        .chain(std::iter::once(row("total".into(), &report.total)));
    write_rows(out, &["layer", "mac_units", "buffer_bits", "weight_bits"], rows)
}

pub fn write_configs<W: Write>(out: W, configs: &LayerConfigs) -> Result<()> {
    write_rows(
        out,
        &["layer", "variant", "uf_in", "uf_out", "act_bits", "act_frac_bits", "weight_bits", "acc_bits"],
        configs.iter().map(|(i, c)| {
            vec![
                i.to_string(),
                c.variant.name().into(),
                c.uf_in.to_string(),
                c.uf_out.to_string(),
                c.act.bits.to_string(),
                c.act.frac_bits.to_string(),
                c.weight_bits.to_string(),
                c.acc_bits.to_string(),
            ]
        }),
    )
}

pub fn save_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    to_file(path, |b| write_history(b, rows))
}

pub fn save_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    to_file(path, |b| write_sweep(b, rows))
}

pub fn save_eval(path: &Path, report: &EvalReport) -> Result<()> {
    to_file(path, |b| write_eval(b, report))
}

pub fn save_cycles(path: &Path, report: &CycleReport) -> Result<()> {
    to_file(path, |b| write_cycles(b, report))
}

pub fn save_resources(path: &Path, report: &ResourceReport) -> Result<()> {
    to_file(path, |b| write_resources(b, report))
}

pub fn save_configs(path: &Path, configs: &LayerConfigs) -> Result<()> {
    to_file(path, |b| write_configs(b, configs))
}

/// Reads a sweep CSV back.
pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<(u32, f64)>()
        .map(|row| row.map(|(bits, f1)| SweepRow { bits, f1 }).map_err(Error::from))
        .collect()
}

/// Concatenates CSV files in long format: `source,row,column,value`, one line
/// per cell, sources in the order given.
pub fn merge<W: Write>(out: W, inputs: &[&Path]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "row", "column", "value"])?;
    for path in inputs {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            for (col, val) in header.iter().zip(rec.iter()) {
                w.write_record([source.as_str(), &i.to_string(), col, val])?;
            }
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Reads a dataflow config CSV as written by [`write_configs`].
pub fn read_configs(path: &Path) -> Result<LayerConfigs> {
    use tinyicenet_core::dataflow::{DataflowConfig, Variant};
    use tinyicenet_core::FixedFormat;

    type Row = (usize, String, usize, usize, u32, i32, u32, u32);
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .map(|row| {
            let (layer, variant, uf_in, uf_out, act_bits, act_frac, weight_bits, acc_bits) = row?;
            let variant =
                Variant::parse(&variant).ok_or_else(|| Error::Header(format!("{}: unknown variant {variant:?} for layer {layer}", path.display())))?;
            let mut cfg = DataflowConfig::new(variant, uf_in, uf_out, FixedFormat::new(act_bits, act_frac)?, weight_bits);
            cfg.acc_bits = acc_bits;
            Ok((layer, cfg))
        })
        .collect()
}
