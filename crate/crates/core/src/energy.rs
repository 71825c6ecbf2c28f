//! Per-access energy accounting over simulator counters.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Counters, RunReport};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing energy table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("energy table entry `{0}` must be a finite value >= 0")]
    Negative(&'static str),
    #[error("frequency_mhz must be positive")]
    Frequency,
}

/// Energy costs. Units: pJ per event, pJ per bit, mW and MHz.
///
/// The defaults are illustrative placeholders, not measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyTable {
    /// pJ per 2-bit brick multiply.
    pub brick_op_pj: f64,
    /// pJ per shift-add tree level activation.
    pub shift_add_pj: f64,
    /// pJ per bit read or written, per scratchpad.
    pub ibuf_bit_pj: f64,
    pub obuf_bit_pj: f64,
    pub wbuf_bit_pj: f64,
    /// pJ per bit moved to or from off-chip memory.
    pub dram_bit_pj: f64,
    /// pJ per row-register fill (input or weight buffer read).
    pub row_fill_pj: f64,
    pub static_mw: f64,
    pub frequency_mhz: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        Self::ILLUSTRATIVE
    }
}

impl EnergyTable {
    /// Illustrative default table, not taken from any synthesized design.
    pub const ILLUSTRATIVE: EnergyTable = EnergyTable {
        brick_op_pj: 0.015,
        shift_add_pj: 0.01,
        ibuf_bit_pj: 0.06,
        obuf_bit_pj: 0.06,
        wbuf_bit_pj: 0.08,
        dram_bit_pj: 15.0,
        row_fill_pj: 0.02,
        static_mw: 20.0,
        frequency_mhz: 500.0,
    };

    pub const ZERO: EnergyTable = EnergyTable {
        brick_op_pj: 0.0,
        shift_add_pj: 0.0,
        ibuf_bit_pj: 0.0,
        obuf_bit_pj: 0.0,
        wbuf_bit_pj: 0.0,
        dram_bit_pj: 0.0,
        row_fill_pj: 0.0,
        static_mw: 0.0,
        frequency_mhz: 500.0,
    };

    fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("brick_op_pj", self.brick_op_pj),
            ("shift_add_pj", self.shift_add_pj),
            ("ibuf_bit_pj", self.ibuf_bit_pj),
            ("obuf_bit_pj", self.obuf_bit_pj),
            ("wbuf_bit_pj", self.wbuf_bit_pj),
            ("dram_bit_pj", self.dram_bit_pj),
            ("row_fill_pj", self.row_fill_pj),
            ("static_mw", self.static_mw),
            ("frequency_mhz", self.frequency_mhz),
        ]
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        for (k, v) in self.entries() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(EnergyError::Negative(k));
            }
        }
        if self.frequency_mhz <= 0.0 {
            return Err(EnergyError::Frequency);
        }
        Ok(())
    }

    /// Parses `key = value` lines; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, EnergyError> {
        let t: EnergyTable = toml::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn from_file(path: &Path) -> Result<Self, EnergyError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnergyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The table named by `arch` (or the default), clocked at the arch
    /// frequency.
    pub fn for_arch(arch: &crate::arch::ArchConfig) -> Result<Self, EnergyError> {
        let mut t = match &arch.energy_table {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        t.frequency_mhz = arch.frequency_mhz;
        t.validate()?;
        Ok(t)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("table serializes")
    }
}

/// Energy per component, in pJ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub compute: f64,
    pub ibuf: f64,
    pub obuf: f64,
    pub wbuf: f64,
    pub dram: f64,
    pub leakage: f64,
}

impl EnergyBreakdown {
    pub const COMPONENTS: [&'static str; 6] = ["compute", "ibuf", "obuf", "wbuf", "dram", "leakage"];

    pub fn values(&self) -> [f64; 6] {
        [self.compute, self.ibuf, self.obuf, self.wbuf, self.dram, self.leakage]
    }

    pub fn dynamic(&self) -> f64 {
        self.compute + self.ibuf + self.obuf + self.wbuf + self.dram
    }

    pub fn total(&self) -> f64 {
        self.dynamic() + self.leakage
    }

    /// Fraction of the total per component; `None` when nothing was spent.
    pub fn shares(&self) -> Option<[f64; 6]> {
        let t = self.total();
        (t > 0.0).then(|| self.values().map(|v| v / t))
    }
}

/// Energy of one set of counters.
pub fn account_counters(c: &Counters, t: &EnergyTable) -> EnergyBreakdown {
    let b = &c.buffers;
    let bits = |x: &crate::sim::BufferCounters| (x.bits_read + x.bits_written) as f64;
    let fills = (b.ibuf.array_reads + b.wbuf.array_reads) as f64;
    EnergyBreakdown {
        compute: c.brick_ops as f64 * t.brick_op_pj + c.shift_add_ops as f64 * t.shift_add_pj + fills * t.row_fill_pj,
        ibuf: bits(&b.ibuf) * t.ibuf_bit_pj,
        obuf: bits(&b.obuf) * t.obuf_bit_pj,
        wbuf: bits(&b.wbuf) * t.wbuf_bit_pj,
        dram: c.offchip_bits() as f64 * t.dram_bit_pj,
        // mW * us = nJ
        leakage: t.static_mw * c.cycles as f64 / t.frequency_mhz * 1000.0,
    }
}

pub fn account(report: &RunReport, table: &EnergyTable) -> EnergyBreakdown {
    account_counters(&report.total, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{BufferCounters, Traffic};

    fn sample() -> Counters {
        let mut c = Counters {
            cycles: 1000,
            brick_ops: 400,
            shift_add_ops: 100,
            ..Counters::default()
        };
        c.buffers.ibuf = BufferCounters {
            array_reads: 10,
            array_writes: 4,
            bits_read: 320,
            bits_written: 128,
        };
        c.buffers.wbuf.array_reads = 5;
        c.buffers.wbuf.bits_read = 160;
        c.buffers.obuf.bits_written = 64;
        c.offchip.ibuf = Traffic {
            load_words: 16,
            load_bits: 128,
            ..Traffic::default()
        };
        c.offchip.obuf.store_bits = 32;
        c
    }

    #[test]
    fn hand_computed_fixture() {
        let t = EnergyTable {
            brick_op_pj: 0.5,
            shift_add_pj: 1.0,
            ibuf_bit_pj: 0.25,
            obuf_bit_pj: 0.5,
            wbuf_bit_pj: 0.125,
            dram_bit_pj: 10.0,
            row_fill_pj: 2.0,
            static_mw: 10.0,
            frequency_mhz: 500.0,
        };
        let e = account_counters(&sample(), &t);
        // 400*0.5 + 100*1 + 15*2
        assert_eq!(e.compute, 330.0);
        // 448 bits * 0.25
        assert_eq!(e.ibuf, 112.0);
        assert_eq!(e.obuf, 32.0);
        assert_eq!(e.wbuf, 20.0);
        // 160 bits * 10
        assert_eq!(e.dram, 1600.0);
        // 10 mW for 2 us
        assert_eq!(e.leakage, 20_000.0);
        let s = e.shares().unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_counters_spend_nothing() {
        let e = account_counters(&Counters::default(), &EnergyTable::default());
        assert_eq!(e.dynamic(), 0.0);
        assert_eq!(e.shares(), None);
    }

    #[test]
    fn linear_in_counters() {
        let t = EnergyTable::default();
        let a = account_counters(&sample(), &t);
        let mut c = sample();
        c.merge(&sample());
        let b = account_counters(&c, &t);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.0 * x - y).abs() < 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn parses_partial_tables() {
        let t = EnergyTable::parse("dram_bit_pj = 3.5\nstatic_mw = 0\n").unwrap();
        assert_eq!(t.dram_bit_pj, 3.5);
        assert_eq!(t.brick_op_pj, EnergyTable::ILLUSTRATIVE.brick_op_pj);
        assert!(EnergyTable::parse("dram_bit_pj = -1").is_err());
        assert!(EnergyTable::parse("frequency_mhz = 0").is_err());
        assert!(EnergyTable::parse("bogus = 1").is_err());
        assert_eq!(EnergyTable::parse(&t.to_toml()).unwrap(), t);
    }
}
