//! CSV rows and the plain-text summary.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use bitfusion::energy::{account_counters, EnergyBreakdown, EnergyTable};
use bitfusion::sim::{Counters, RunReport};
use serde::Serialize;

/// One row of `report.csv`: a block, or the `total` line.
#[derive(Debug, Serialize)]
pub struct BlockRow {
    pub block: String,
    pub name: String,
    pub cycles: u64,
    pub compute_cycles: u64,
    pub instructions: u64,
    pub multiplies: u64,
    pub brick_ops: u64,
    pub max_ops: u64,
    pub ibuf_reads: u64,
    pub ibuf_writes: u64,
    pub obuf_reads: u64,
    pub obuf_writes: u64,
    pub wbuf_reads: u64,
    pub wbuf_writes: u64,
    pub offchip_load_bits: u64,
    pub offchip_store_bits: u64,
    pub overflows: u64,
    pub energy_pj: f64,
}

impl BlockRow {
    pub fn new(block: String, name: String, c: &Counters, table: &EnergyTable) -> Self {
        let b = &c.buffers;
        let o = &c.offchip;
        Self {
            block,
            name,
            cycles: c.cycles,
            compute_cycles: c.compute_cycles,
            instructions: c.instructions,
            multiplies: c.total_multiplies(),
            brick_ops: c.brick_ops,
            max_ops: c.max_ops,
            ibuf_reads: b.ibuf.array_reads,
            ibuf_writes: b.ibuf.array_writes,
            obuf_reads: b.obuf.array_reads,
            obuf_writes: b.obuf.array_writes,
            wbuf_reads: b.wbuf.array_reads,
            wbuf_writes: b.wbuf.array_writes,
            offchip_load_bits: o.ibuf.load_bits + o.obuf.load_bits + o.wbuf.load_bits,
            offchip_store_bits: o.ibuf.store_bits + o.obuf.store_bits + o.wbuf.store_bits,
            overflows: c.overflows,
            energy_pj: account_counters(c, table).total(),
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: u64,
    pub batch: u64,
    pub bandwidth: u64,
    pub cycles: u64,
    pub offchip_bits: u64,
    pub weight_bits_per_inference: f64,
    pub energy_pj: f64,
}

pub fn block_rows(report: &RunReport, names: &[String], table: &EnergyTable) -> Vec<BlockRow> {
    let mut rows: Vec<BlockRow> = report
        .blocks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let name = names.get(i).cloned().unwrap_or_default();
            BlockRow::new(i.to_string(), name, c, table)
        })
        .collect();
    rows.push(BlockRow::new("total".into(), String::new(), &report.total, table));
    rows
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(contents)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn summary(report: &RunReport, energy: &EnergyBreakdown, frequency_mhz: f64) -> String {
    let t = &report.total;
    let mut s = String::new();
    let us = t.cycles as f64 / frequency_mhz;
    s += &format!("blocks          {}\n", report.blocks.len());
    s += &format!("batch           {}\n", report.batch);
    s += &format!("cycles          {} ({us:.3} us)\n", t.cycles);
    s += &format!("instructions    {}\n", t.instructions);
    s += &format!("multiplies      {}\n", t.total_multiplies());
    for (cfg, n) in &t.multiplies {
        s += &format!("  {cfg:<13} {n}\n");
    }
    s += &format!("offchip bits    {}\n", t.offchip_bits());
    s += &format!("weight bits/inf {:.1}\n", report.weight_bits_per_inference());
    s += &format!("overflows       {}\n", t.overflows);
    s += &format!("energy          {:.1} pJ\n", energy.total());
    let shares = energy.shares();
    for (i, (name, v)) in EnergyBreakdown::COMPONENTS.iter().zip(energy.values()).enumerate() {
        let pct = shares.map_or(0.0, |sh| sh[i] * 100.0);
        s += &format!("  {name:<13} {v:.1} pJ ({pct:.1}%)\n");
    }
    s
}
