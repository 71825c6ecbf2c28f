use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::array::ScratchpadKind;

/// One value per scratchpad.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerBuffer<T> {
    pub ibuf: T,
    pub obuf: T,
    pub wbuf: T,
}

impl<T> PerBuffer<T> {
    pub fn get(&self, kind: ScratchpadKind) -> &T {
        match kind {
            ScratchpadKind::Ibuf => &self.ibuf,
            ScratchpadKind::Obuf => &self.obuf,
            ScratchpadKind::Wbuf => &self.wbuf,
        }
    }

    pub fn get_mut(&mut self, kind: ScratchpadKind) -> &mut T {
        match kind {
            ScratchpadKind::Ibuf => &mut self.ibuf,
            ScratchpadKind::Obuf => &mut self.obuf,
            ScratchpadKind::Wbuf => &mut self.wbuf,
        }
    }
}

impl<T: AddAssign + Copy> AddAssign for PerBuffer<T> {
    fn add_assign(&mut self, o: Self) {
        self.ibuf += o.ibuf;
        self.obuf += o.obuf;
        self.wbuf += o.wbuf;
    }
}

/// On-chip accesses of one scratchpad. Input and weight buffer reads are
/// row-register fills; output buffer figures count 32-bit entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferCounters {
    pub array_reads: u64,
    pub array_writes: u64,
    pub bits_read: u64,
    pub bits_written: u64,
}

impl AddAssign for BufferCounters {
    fn add_assign(&mut self, o: Self) {
        self.array_reads += o.array_reads;
        self.array_writes += o.array_writes;
        self.bits_read += o.bits_read;
        self.bits_written += o.bits_written;
    }
}

/// Off-chip traffic (loads move memory to chip, stores the reverse).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub load_words: u64,
    pub load_bits: u64,
    pub store_words: u64,
    pub store_bits: u64,
}

impl Traffic {
    pub fn bits(&self) -> u64 {
        self.load_bits + self.store_bits
    }
}

impl AddAssign for Traffic {
    fn add_assign(&mut self, o: Self) {
        self.load_words += o.load_words;
        self.load_bits += o.load_bits;
        self.store_words += o.store_words;
        self.store_bits += o.store_bits;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub cycles: u64,
    /// Busy cycles of the array and post units.
    pub compute_cycles: u64,
    pub steady_cycles: u64,
    pub fill_cycles: u64,
    pub decode_cycles: u64,
    pub instructions: u64,
    /// Array or post-unit invocations.
    pub regions: u64,
    pub buffers: PerBuffer<BufferCounters>,
    pub offchip: PerBuffer<Traffic>,
    /// Off-chip traffic by tensor name.
    pub tensors: BTreeMap<String, Traffic>,
    /// Multiplies by fusion configuration (`"8x2"`).
    pub multiplies: BTreeMap<String, u64>,
    pub brick_ops: u64,
    pub shift_add_ops: u64,
    pub max_ops: u64,
    pub overflows: u64,
}

impl Counters {
    pub fn merge(&mut self, o: &Counters) {
        self.cycles += o.cycles;
        self.compute_cycles += o.compute_cycles;
        self.steady_cycles += o.steady_cycles;
        self.fill_cycles += o.fill_cycles;
        self.decode_cycles += o.decode_cycles;
        self.instructions += o.instructions;
        self.regions += o.regions;
        self.buffers += o.buffers;
        self.offchip += o.offchip;
        for (k, v) in &o.tensors {
            *self.tensors.entry(k.clone()).or_default() += *v;
        }
        for (k, v) in &o.multiplies {
            *self.multiplies.entry(k.clone()).or_default() += v;
        }
        self.brick_ops += o.brick_ops;
        self.shift_add_ops += o.shift_add_ops;
        self.max_ops += o.max_ops;
        self.overflows += o.overflows;
    }

    pub fn total_multiplies(&self) -> u64 {
        self.multiplies.values().sum()
    }

    pub fn offchip_bits(&self) -> u64 {
        ScratchpadKind::ALL.iter().map(|&k| self.offchip.get(k).bits()).sum()
    }

    /// Off-chip bits moved for one tensor (0 if it never moved).
    pub fn tensor_bits(&self, name: &str) -> u64 {
        self.tensors.get(name).map_or(0, Traffic::bits)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub batch: u64,
    pub total: Counters,
    pub blocks: Vec<Counters>,
}

impl RunReport {
    pub fn new(batch: u64) -> Self {
        Self {
            batch,
            ..Self::default()
        }
    }

    pub fn push(&mut self, block: Counters) {
        self.total.merge(&block);
        self.blocks.push(block);
    }

    /// Combines reports of independent runs; block lists are concatenated.
    pub fn merge(&mut self, o: &RunReport) {
        self.total.merge(&o.total);
        self.blocks.extend(o.blocks.iter().cloned());
        self.batch = self.batch.max(o.batch);
    }

    pub fn cycles(&self) -> u64 {
        self.total.cycles
    }

    /// Off-chip weight-buffer bits divided by the batch size.
    pub fn weight_bits_per_inference(&self) -> f64 {
        self.total.offchip.wbuf.bits() as f64 / self.batch.max(1) as f64
    }
}
