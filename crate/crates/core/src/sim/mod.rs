//! Block executor with cycle and access accounting.
//!
//! Execution follows the level structure of a block (see [`crate::isa`]).
//! The loops nested below the deepest level holding an `ld-mem`/`st-mem`
//! form the *compute region*: one array (or post-unit) invocation covers
//! every iteration of those loops. Region loops are classified by their
//! on-chip strides:
//!
//! * output stride, no input stride: output columns;
//! * output and input stride: independent input vectors;
//! * weight stride, no output stride: the reduction;
//! * input stride only: a pooling window (max over vectors).
//!
//! In a `max` block every loop without an output stride is reduced by max.
//!
//! Loops outside the region that move input or weights but not outputs are
//! outer reductions. While all of them sit at iteration 0 the output buffer
//! starts from zero (its `ld-mem` is skipped); once all sit at their last
//! iteration the post stage (pooling, activation, requantization) runs and
//! the final store moves `out_bits` per element instead of 32.
//!
//! Timing is event based. Transfers share one in-order memory channel,
//! taking `latency + ceil(bits / bandwidth)` cycles each. A load waits for
//! its buffer slot (the region that used the load two back, or one back
//! without double buffering); a region waits for the loads it reads; a
//! store waits for the region that produced its data. A block costs one
//! decode cycle per instruction plus the time until both the channel and
//! the array are idle.

mod report;

use std::collections::BTreeMap;

use thiserror::Error;

pub use report::{BufferCounters, Counters, PerBuffer, RunReport, Traffic};

use crate::arch::ArchConfig;
use crate::array::{activate_requant, column_post, ArrayError, ArrayGeometry, ScratchpadKind, SystolicArray};
use crate::image::{ImageError, Memory};
use crate::isa::{validate, AddrTarget, ComputeOp, Instruction, InstructionBlock, LoopId, LoopInfo, Setup};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid block:\n{0}")]
    Invalid(String),
    #[error("no iterator for loop {0}")]
    MissingIterator(LoopId),
    #[error("instruction {index}: {buf} transfer declares {declared} words but covers {actual}")]
    WordCount {
        index: usize,
        buf: &'static str,
        declared: u32,
        actual: usize,
    },
    #[error("{buf} overflow: element {addr} beyond capacity of {capacity} elements")]
    ScratchpadOverflow { buf: &'static str, addr: u64, capacity: u64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Memory(#[from] ImageError),
    #[error(transparent)]
    Array(#[from] ArrayError),
}

/// `base + sum(iterator[id] * stride[id])`.
pub fn gen_address(
    base: u64,
    iterators: &BTreeMap<LoopId, u64>,
    strides: &BTreeMap<LoopId, u64>,
) -> Result<u64, SimError> {
    strides.iter().try_fold(base, |acc, (id, stride)| {
        let it = iterators.get(id).ok_or(SimError::MissingIterator(*id))?;
        Ok(acc + it * stride)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryModel {
    /// Bits per cycle.
    pub bandwidth: u64,
    /// Cycles before a transfer starts moving data.
    pub latency: u64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        Self {
            bandwidth: 128,
            latency: 0,
        }
    }
}

impl MemoryModel {
    pub fn transfer_cycles(&self, bits: u64) -> u64 {
        if bits == 0 {
            0
        } else {
            self.latency + bits.div_ceil(self.bandwidth.max(1))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub geometry: ArrayGeometry,
    /// Per-slot capacities in bits.
    pub capacity_bits: PerBuffer<u64>,
    pub memory: MemoryModel,
    pub double_buffering: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::from(&ArchConfig::default())
    }
}

impl From<&ArchConfig> for SimConfig {
    fn from(a: &ArchConfig) -> Self {
        Self {
            geometry: a.geometry(),
            capacity_bits: PerBuffer {
                ibuf: a.ibuf_bits,
                obuf: a.obuf_bits,
                wbuf: a.wbuf_bits,
            },
            memory: MemoryModel {
                bandwidth: a.bandwidth,
                latency: a.latency,
            },
            double_buffering: a.double_buffering,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LoadEvent {
    ready: u64,
    consumed: Option<u64>,
}

/// Execution state of one block.
#[derive(Debug, Clone, Default)]
pub struct MachineState {
    /// Current iteration of each loop, by loop id.
    pub iterators: BTreeMap<LoopId, u64>,
    /// Scratchpad contents by element address.
    pub buffers: PerBuffer<Vec<i64>>,
    /// Cycles of every block run so far.
    pub cycle: u64,
    mem_free: u64,
    comp_free: u64,
    last_region_end: u64,
    last_store_end: u64,
    loads: PerBuffer<Vec<LoadEvent>>,
}

impl MachineState {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset_block(&mut self) {
        let cycle = self.cycle;
        *self = Self {
            cycle,
            ..Self::default()
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Column,
    Vector,
    Reduce,
    Window,
}

struct Walker<'a> {
    block: &'a InstructionBlock,
    setup: Setup,
    loops: Vec<LoopInfo>,
    /// Strides per loop index, per stream (buf.* then mem.*).
    strides: Vec<[u64; 6]>,
    prologue: Vec<Vec<usize>>,
    epilogue: Vec<Vec<usize>>,
    region_level: usize,
    outer_reductions: Vec<usize>,
    iters: Vec<u64>,
    footprints: BTreeMap<(usize, ScratchpadKind), Vec<(u64, u64)>>,
    cfg: &'a SimConfig,
    state: &'a mut MachineState,
    mem: &'a mut Memory,
    out: Counters,
}

fn stream(t: AddrTarget) -> usize {
    let b = match t.buf {
        ScratchpadKind::Ibuf => 0,
        ScratchpadKind::Obuf => 1,
        ScratchpadKind::Wbuf => 2,
    };
    match t.space {
        crate::isa::Space::Buf => b,
        crate::isa::Space::Mem => 3 + b,
    }
}

const BI: usize = 0;
const BO: usize = 1;
const BW: usize = 2;

/// Runs one block against `mem`, returning its counters.
pub fn run_block(
    block: &InstructionBlock,
    state: &mut MachineState,
    mem: &mut Memory,
    cfg: &SimConfig,
) -> Result<Counters, SimError> {
    let report = validate(block);
    if !report.is_ok() {
        return Err(SimError::Invalid(report.to_string()));
    }
    let setup = *block.setup().expect("validated block has a setup");
    let loops = block.loops();
    let strides = loops
        .iter()
        .map(|l| {
            let mut s = [0u64; 6];
            for t in AddrTarget::all() {
                s[stream(t)] = block.stride(t, l.id);
            }
            s
        })
        .collect::<Vec<_>>();

    let levels = block.levels();
    let mut prologue = vec![Vec::new(); levels.len()];
    let mut epilogue = vec![Vec::new(); levels.len()];
    let mut region_level = 0;
    for (d, level) in levels.iter().enumerate() {
        for &i in &level.body {
            match block.instructions[i] {
                Instruction::LdMem { .. } | Instruction::RdBuf { .. } => prologue[d].push(i),
                Instruction::StMem { .. } | Instruction::WrBuf { .. } => epilogue[d].push(i),
                _ => {}
            }
            if matches!(block.instructions[i], Instruction::LdMem { .. } | Instruction::StMem { .. }) {
                region_level = d;
            }
        }
    }
    let outer_reductions = (0..region_level)
        .filter(|&l| {
            let s = &strides[l];
            loops[l].iterations > 1
                && s[BO] == 0
                && s[3 + BO] == 0
                && (s[BI] | s[BW] | s[3 + BI] | s[3 + BW]) != 0
        })
        .collect();

    state.reset_block();
    let mut w = Walker {
        block,
        setup,
        iters: vec![0; loops.len()],
        loops,
        strides,
        prologue,
        epilogue,
        region_level,
        outer_reductions,
        footprints: BTreeMap::new(),
        cfg,
        state,
        mem,
        out: Counters::default(),
    };
    w.walk(0)?;

    let decode = block.instructions.len() as u64;
    let busy = w.state.mem_free.max(w.state.comp_free);
    w.out.instructions = decode;
    w.out.decode_cycles = decode;
    w.out.cycles = decode + busy;
    w.state.cycle += w.out.cycles;
    Ok(w.out)
}

/// Runs blocks in order. `batch` only labels the report (per-inference
/// figures divide by it); the blocks already cover the whole batch.
pub fn run_network(
    blocks: &[InstructionBlock],
    mem: &mut Memory,
    cfg: &SimConfig,
    batch: u64,
) -> Result<RunReport, SimError> {
    let mut state = MachineState::new();
    let mut report = RunReport::new(batch.max(1));
    for b in blocks {
        report.push(run_block(b, &mut state, mem, cfg)?);
    }
    Ok(report)
}

impl Walker<'_> {
    fn walk(&mut self, d: usize) -> Result<(), SimError> {
        for i in self.prologue[d].clone() {
            self.exec(d, i)?;
        }
        if d == self.region_level {
            self.region()?;
        } else {
            for it in 0..self.loops[d].iterations as u64 {
                self.iters[d] = it;
                self.state.iterators.insert(self.loops[d].id, it);
                self.walk(d + 1)?;
            }
            self.iters[d] = 0;
            self.state.iterators.remove(&self.loops[d].id);
        }
        for i in self.epilogue[d].clone() {
            self.exec(d, i)?;
        }
        Ok(())
    }

    fn first(&self, d: usize) -> bool {
        self.outer_reductions.iter().filter(|&&l| l < d).all(|&l| self.iters[l] == 0)
    }

    fn last(&self, d: usize) -> bool {
        self.outer_reductions
            .iter()
            .filter(|&&l| l < d)
            .all(|&l| self.iters[l] + 1 == self.loops[l].iterations as u64)
    }

    /// Address contribution of the loops enclosing level `d`.
    fn outer(&self, d: usize, s: usize) -> u64 {
        (0..d).map(|l| self.iters[l] * self.strides[l][s]).sum()
    }

    fn elem_bits(&self, kind: ScratchpadKind) -> u32 {
        match kind {
            ScratchpadKind::Ibuf => self.setup.input_bits.bits(),
            ScratchpadKind::Wbuf => self.setup.weight_bits.bits(),
            ScratchpadKind::Obuf => 32,
        }
    }

    fn capacity(&self, kind: ScratchpadKind) -> u64 {
        self.cfg.capacity_bits.get(kind) / self.elem_bits(kind) as u64
    }

    fn buf_write(&mut self, kind: ScratchpadKind, addr: u64, v: i64) -> Result<(), SimError> {
        let cap = self.capacity(kind);
        if addr >= cap {
            return Err(SimError::ScratchpadOverflow {
                buf: kind.name(),
                addr,
                capacity: cap,
            });
        }
        let buf = self.state.buffers.get_mut(kind);
        if buf.len() <= addr as usize {
            buf.resize(addr as usize + 1, 0);
        }
        buf[addr as usize] = v;
        Ok(())
    }

    fn buf_read(&self, kind: ScratchpadKind, addr: u64) -> Result<i64, SimError> {
        let cap = self.capacity(kind);
        if addr >= cap {
            return Err(SimError::ScratchpadOverflow {
                buf: kind.name(),
                addr,
                capacity: cap,
            });
        }
        Ok(self.state.buffers.get(kind).get(addr as usize).copied().unwrap_or(0))
    }

    fn exec(&mut self, d: usize, index: usize) -> Result<(), SimError> {
        match self.block.instructions[index] {
            Instruction::LdMem { buf, words } => self.transfer(d, index, buf, words, true),
            Instruction::StMem { buf, words } => self.transfer(d, index, buf, words, false),
            _ => Ok(()),
        }
    }

    fn transfer(&mut self, d: usize, index: usize, kind: ScratchpadKind, words: u32, load: bool) -> Result<(), SimError> {
        if load && kind == ScratchpadKind::Obuf && self.first(d) {
            return Ok(());
        }
        let block = self.block;
        let fp = self
            .footprints
            .entry((d, kind))
            .or_insert_with(|| block.footprint(d, kind))
            .clone();
        if fp.len() != words as usize {
            return Err(SimError::WordCount {
                index,
                buf: kind.name(),
                declared: words,
                actual: fp.len(),
            });
        }
        let (ms, bs) = (stream(AddrTarget::mem(kind)), stream(AddrTarget::on_chip(kind)));
        let mem_base = self.setup.base(kind) + self.outer(d, ms);
        let buf_base = self.outer(d, bs);
        for &(m, b) in &fp {
            if load {
                let v = self.mem.load(mem_base + m)?;
                self.buf_write(kind, buf_base + b, v)?;
            } else {
                let v = self.buf_read(kind, buf_base + b)?;
                self.mem.store(mem_base + m, v)?;
            }
        }

        let n = fp.len() as u64;
        let bits_per = if !load && kind == ScratchpadKind::Obuf && self.last(d) {
            self.setup.post.requant.out_bits
        } else {
            self.elem_bits(kind)
        } as u64;
        let bits = n * bits_per;
        let tensor = fp
            .first()
            .and_then(|&(m, _)| self.mem.region_at(mem_base + m))
            .map_or_else(|| "(unmapped)".to_string(), |r| r.name.clone());
        let mut t = Traffic::default();
        let access = self.cfg.geometry.buffer_access_bits as u64;
        let onchip_bits = n * self.elem_bits(kind) as u64;
        let rows = if kind == ScratchpadKind::Obuf { n } else { onchip_bits.div_ceil(access) };
        let bc = self.out.buffers.get_mut(kind);
        if load {
            t.load_words = n;
            t.load_bits = bits;
            bc.array_writes += rows;
            bc.bits_written += onchip_bits;
        } else {
            t.store_words = n;
            t.store_bits = bits;
            bc.array_reads += rows;
            bc.bits_read += onchip_bits;
        }
        *self.out.offchip.get_mut(kind) += t;
        if n > 0 {
            *self.out.tensors.entry(tensor).or_default() += t;
        }

        let dur = self.cfg.memory.transfer_cycles(bits);
        let st = &mut *self.state;
        if load {
            let loads = st.loads.get(kind);
            let back = if self.cfg.double_buffering { 2 } else { 1 };
            let slot_free = loads
                .len()
                .checked_sub(back)
                .map_or(0, |j| loads[j].consumed.unwrap_or(loads[j].ready));
            let start = st.mem_free.max(slot_free);
            st.mem_free = start + dur;
            let ready = st.mem_free;
            st.loads.get_mut(kind).push(LoadEvent { ready, consumed: None });
        } else {
            let start = st.mem_free.max(st.last_region_end);
            st.mem_free = start + dur;
            st.last_store_end = st.mem_free;
        }
        Ok(())
    }

    fn region(&mut self) -> Result<(), SimError> {
        let Some(op) = self.block.compute_op() else {
            return Ok(());
        };
        let region: Vec<usize> = (self.region_level..self.loops.len()).collect();
        if region.iter().any(|&l| self.loops[l].iterations == 0) {
            return Ok(());
        }
        let active: Vec<usize> = region.into_iter().filter(|&l| self.loops[l].iterations > 1).collect();
        let d = self.region_level;
        let base = [self.outer(d, BI), self.outer(d, BO), self.outer(d, BW)];
        let (first, last) = (self.first(d), self.last(d));

        let cycles = match op {
            ComputeOp::MulAdd => self.mul_add(&active, base, first, last)?,
            ComputeOp::Max => self.max(&active, base, first, last)?,
        };

        let st = &mut *self.state;
        let mut start = st.comp_free;
        for kind in ScratchpadKind::ALL {
            if let Some(l) = st.loads.get(kind).last() {
                start = start.max(l.ready);
            }
        }
        if !self.cfg.double_buffering {
            start = start.max(st.last_store_end);
        }
        let end = start + cycles;
        st.comp_free = end;
        st.last_region_end = end;
        for kind in ScratchpadKind::ALL {
            if let Some(l) = st.loads.get_mut(kind).last_mut() {
                l.consumed = Some(end);
            }
        }
        self.out.regions += 1;
        self.out.compute_cycles += cycles;
        Ok(())
    }

    /// All offset combinations of a loop group, as `[ibuf, obuf, wbuf]`.
    fn combos(&self, group: &[usize]) -> Vec<[u64; 3]> {
        let mut out = vec![[0u64; 3]];
        for &l in group {
            let s = self.strides[l];
            out = out
                .iter()
                .flat_map(|c| {
                    (0..self.loops[l].iterations as u64)
                        .map(move |i| [c[0] + i * s[BI], c[1] + i * s[BO], c[2] + i * s[BW]])
                })
                .collect();
        }
        out
    }

    fn mul_add(&mut self, active: &[usize], base: [u64; 3], first: bool, last: bool) -> Result<u64, SimError> {
        let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for &l in active {
            let s = self.strides[l];
            let role = match (s[BO] != 0, s[BI] != 0, s[BW] != 0) {
                (true, false, _) => Role::Column,
                (true, true, false) => Role::Vector,
                (false, _, true) => Role::Reduce,
                (false, true, false) => Role::Window,
                (true, true, true) => {
                    return Err(SimError::Unsupported(format!(
                        "loop {} moves input, weight and output addresses together",
                        self.loops[l].id
                    )))
                }
                (false, false, false) => {
                    return Err(SimError::Unsupported(format!(
                        "compute-region loop {} has no on-chip stride",
                        self.loops[l].id
                    )))
                }
            };
            groups.entry(role as u8).or_default().push(l);
        }
        let group = |r: Role| groups.get(&(r as u8)).cloned().unwrap_or_default();
        let (cols, vecs, reds, wins) = (
            self.combos(&group(Role::Column)),
            self.combos(&group(Role::Vector)),
            self.combos(&group(Role::Reduce)),
            self.combos(&group(Role::Window)),
        );
        let windowed = !group(Role::Window).is_empty();
        if windowed && !(first && last && self.outer_reductions.is_empty()) {
            return Err(SimError::Unsupported(
                "pooling window inside a region whose reduction is split across tiles".into(),
            ));
        }
        if windowed && self.setup.post.pooling != crate::array::Pooling::Max {
            return Err(SimError::Unsupported("pooling window without max pooling".into()));
        }

        let mut inputs = Vec::with_capacity(vecs.len() * wins.len());
        for v in &vecs {
            for w in &wins {
                let row = reds
                    .iter()
                    .map(|k| self.buf_read(ScratchpadKind::Ibuf, base[BI] + v[BI] + w[BI] + k[BI]))
                    .collect::<Result<Vec<_>, _>>()?;
                inputs.push(row);
            }
        }
        let weights = reds
            .iter()
            .map(|k| {
                cols.iter()
                    .map(|c| self.buf_read(ScratchpadKind::Wbuf, base[BW] + k[BW] + c[BW]))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;

        let config = self.setup.config();
        let mut array = SystolicArray::new(self.cfg.geometry)?;
        let g = array.run_gemm(&inputs, &weights, config, self.setup.signs())?;
        let post = self.setup.post;
        let mut obuf_reads = 0;
        let mut obuf_writes = 0;
        for (vi, v) in vecs.iter().enumerate() {
            for (ci, c) in cols.iter().enumerate() {
                let addr = base[BO] + v[BO] + c[BO];
                let value = if windowed {
                    let psums: Vec<i32> = (0..wins.len()).map(|wi| g.outputs[vi * wins.len() + wi][ci]).collect();
                    column_post(&psums, &post)
                } else {
                    let mut acc = g.outputs[vi][ci];
                    if !first {
                        let prev = self.buf_read(ScratchpadKind::Obuf, addr)? as i32;
                        let (sum, of) = prev.overflowing_add(acc);
                        self.out.overflows += of as u64;
                        acc = sum;
                        obuf_reads += 1;
                    }
                    if last {
                        activate_requant(acc as i64, &post)
                    } else {
                        acc as i64
                    }
                };
                self.buf_write(ScratchpadKind::Obuf, addr, value)?;
                obuf_writes += 1;
            }
        }

        let s = g.stats;
        let access = self.cfg.geometry.buffer_access_bits as u64;
        let b = &mut self.out.buffers;
        b.ibuf.array_reads += s.ibuf_reads;
        b.ibuf.bits_read += s.ibuf_reads * access;
        b.wbuf.array_reads += s.wbuf_reads;
        b.wbuf.bits_read += s.wbuf_reads * access;
        b.obuf.array_reads += obuf_reads;
        b.obuf.bits_read += obuf_reads * 32;
        b.obuf.array_writes += obuf_writes;
        b.obuf.bits_written += obuf_writes * 32;
        self.out.steady_cycles += s.steady_cycles;
        self.out.fill_cycles += s.fill_cycles;
        if s.multiplies > 0 {
            *self.out.multiplies.entry(config.to_string()).or_default() += s.multiplies;
        }
        self.out.brick_ops += s.brick_ops;
        self.out.shift_add_ops += s.shift_add_ops;
        self.out.overflows += s.overflows;
        Ok(s.cycles)
    }

    fn max(&mut self, active: &[usize], base: [u64; 3], first: bool, last: bool) -> Result<u64, SimError> {
        let (mut outs, mut reds) = (Vec::new(), Vec::new());
        for &l in active {
            let s = self.strides[l];
            if s[BO] != 0 {
                outs.push(l);
            } else if s[BI] != 0 {
                reds.push(l);
            } else {
                return Err(SimError::Unsupported(format!(
                    "compute-region loop {} has no input or output stride",
                    self.loops[l].id
                )));
            }
        }
        let (outs, reds) = (self.combos(&outs), self.combos(&reds));
        let post = self.setup.post;
        let mut obuf_reads = 0;
        for o in &outs {
            let mut m = i64::MIN;
            for r in &reds {
                m = m.max(self.buf_read(ScratchpadKind::Ibuf, base[BI] + o[BI] + r[BI])?);
            }
            let addr = base[BO] + o[BO];
            if !first {
                m = m.max(self.buf_read(ScratchpadKind::Obuf, addr)?);
                obuf_reads += 1;
            }
            let v = if last { activate_requant(m, &post) } else { m };
            self.buf_write(ScratchpadKind::Obuf, addr, v)?;
        }
        let (o, k) = (outs.len() as u64, reds.len() as u64);
        let ibits = self.elem_bits(ScratchpadKind::Ibuf) as u64;
        let access = self.cfg.geometry.buffer_access_bits as u64;
        let b = &mut self.out.buffers;
        let ireads = (o * k * ibits).div_ceil(access);
        b.ibuf.array_reads += ireads;
        b.ibuf.bits_read += ireads * access;
        b.obuf.array_reads += obuf_reads;
        b.obuf.bits_read += obuf_reads * 32;
        b.obuf.array_writes += o;
        b.obuf.bits_written += o * 32;
        self.out.max_ops += o * k;
        let cycles = o.div_ceil(self.cfg.geometry.cols as u64) * k.max(1);
        self.out.steady_cycles += cycles;
        Ok(cycles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    #[test]
    fn gen_address_formula() {
        let it = BTreeMap::from([(1, 2), (2, 3)]);
        let st = BTreeMap::from([(1, 10), (2, 1)]);
        assert_eq!(gen_address(100, &it, &st).unwrap(), 123);
        let zero = BTreeMap::from([(1, 0), (2, 0)]);
        assert_eq!(gen_address(100, &zero, &st).unwrap(), 100);
        assert!(matches!(
            gen_address(0, &BTreeMap::new(), &st),
            Err(SimError::MissingIterator(1))
        ));
    }

    #[test]
    fn zero_iteration_loop_does_nothing() {
        let text = "\
setup ibits=8 wbits=8 obase=2 wbase=1
loop id=0 iters=0
  gen-addr target=mem.ibuf loop=0 stride=1
  ld-mem buf=ibuf words=1
  ld-mem buf=wbuf words=1
  rd-buf buf=ibuf
  rd-buf buf=wbuf
  compute op=mul-add
  wr-buf buf=obuf
  st-mem buf=obuf words=1
block-end
";
        let block = &assemble(text).unwrap()[0];
        let mut mem = Memory::new();
        mem.allocate("all", vec![3], 8, true).unwrap();
        let c = run_block(block, &mut MachineState::new(), &mut mem, &SimConfig::default()).unwrap();
        assert_eq!(c.total_multiplies(), 0);
        assert_eq!(c.offchip_bits(), 0);
        assert_eq!(c.regions, 0);
    }

    #[test]
    fn word_count_is_checked() {
        let text = "\
setup ibits=8 wbits=8
gen-addr target=mem.ibuf loop=0 stride=1
gen-addr target=buf.ibuf loop=0 stride=1
ld-mem buf=ibuf words=3
loop id=0 iters=4
block-end
";
        let block = &assemble(text).unwrap()[0];
        let mut mem = Memory::new();
        mem.allocate("x", vec![4], 8, true).unwrap();
        let e = run_block(block, &mut MachineState::new(), &mut mem, &SimConfig::default()).unwrap_err();
        assert!(matches!(e, SimError::WordCount { declared: 3, actual: 4, .. }));
    }
}
