//! The systolic array: fusion units in a `rows x cols` grid, a row of input
//! buffers on the left border, one weight buffer per unit and a pooling /
//! activation unit with an accumulator at the bottom of every column.
//!
//! Inputs are shared along a row, partial sums flow down a column. Row `r`
//! of the array handles reduction indices `[r*P, r*P + P)` of each K tile,
//! where `P` is the number of fused PEs per unit, and column `c` handles one
//! output. Successive K tiles are accumulated in the column accumulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{fusion_unit_cycle, wrap_add, Bitwidth, FusionConfig, FusionError, Signs};

pub const BRICKS_PER_UNIT: u32 = crate::fusion::BRICKS_PER_UNIT;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArrayError {
    #[error("invalid array geometry: {0}")]
    Geometry(String),
    #[error("{kind:?} access at bit {addr} (+{len}) exceeds capacity {capacity}")]
    OutOfBounds {
        kind: ScratchpadKind,
        addr: u64,
        len: u64,
        capacity: u64,
    },
    #[error("bit address {addr} is not aligned to {bits}-bit operands")]
    Misaligned { addr: u64, bits: u32 },
    #[error("{count} operands of {bits} bits exceed one {access}-bit buffer access")]
    TooWide { count: usize, bits: u32, access: u32 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: u32,
    pub cols: u32,
    /// Bits returned by one buffer data-array read.
    pub buffer_access_bits: u32,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 16,
            buffer_access_bits: 32,
        }
    }
}

impl ArrayGeometry {
    pub fn new(rows: u32, cols: u32) -> Self {
        Self {
            rows,
            cols,
            ..Self::default()
        }
    }

    pub fn bricks_per_unit(&self) -> u32 {
        BRICKS_PER_UNIT
    }

    pub fn units(&self) -> u64 {
        self.rows as u64 * self.cols as u64
    }

    /// Cycles for the first operand to reach the far corner.
    pub fn fill_cycles(&self) -> u64 {
        (self.rows + self.cols - 1) as u64
    }

    pub fn validate(&self) -> Result<(), ArrayError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ArrayError::Geometry("rows and cols must be >= 1".into()));
        }
        if self.buffer_access_bits == 0 || !self.buffer_access_bits.is_multiple_of(16) {
            return Err(ArrayError::Geometry(format!(
                "buffer access width {} is not a positive multiple of 16",
                self.buffer_access_bits
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScratchpadKind {
    Ibuf,
    Obuf,
    Wbuf,
}

impl ScratchpadKind {
    pub const ALL: [ScratchpadKind; 3] = [ScratchpadKind::Ibuf, ScratchpadKind::Obuf, ScratchpadKind::Wbuf];

    pub fn name(self) -> &'static str {
        match self {
            ScratchpadKind::Ibuf => "ibuf",
            ScratchpadKind::Obuf => "obuf",
            ScratchpadKind::Wbuf => "wbuf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ibuf" => Some(ScratchpadKind::Ibuf),
            "obuf" => Some(ScratchpadKind::Obuf),
            "wbuf" => Some(ScratchpadKind::Wbuf),
            _ => None,
        }
    }
}

/// A bit-addressed SRAM with a row register in front of its data array.
/// Operand reads go through the register; a read of the row already held
/// costs no data-array access.
#[derive(Debug, Clone)]
pub struct Scratchpad {
    kind: ScratchpadKind,
    capacity_bits: u64,
    access_bits: u32,
    words: Vec<u64>,
    row_register: Option<u64>,
    reads: u64,
    writes: u64,
}

impl Scratchpad {
    pub fn new(kind: ScratchpadKind, capacity_bits: u64, access_bits: u32) -> Self {
        Self {
            kind,
            capacity_bits,
            access_bits,
            words: vec![0; capacity_bits.div_ceil(64) as usize],
            row_register: None,
            reads: 0,
            writes: 0,
        }
    }

    pub fn kind(&self) -> ScratchpadKind {
        self.kind
    }

    pub fn capacity_bits(&self) -> u64 {
        self.capacity_bits
    }

    /// Data-array reads (row-register fills).
    pub fn reads(&self) -> u64 {
        self.reads
    }

    /// Data-array row writes.
    pub fn writes(&self) -> u64 {
        self.writes
    }

    fn check(&self, addr: u64, len: u64) -> Result<(), ArrayError> {
        if addr + len > self.capacity_bits {
            return Err(ArrayError::OutOfBounds {
                kind: self.kind,
                addr,
                len,
                capacity: self.capacity_bits,
            });
        }
        Ok(())
    }

    fn put(&mut self, addr: u64, width: u32, value: i64) {
        let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
        let v = value as u64 & mask;
        let (w, off) = ((addr / 64) as usize, (addr % 64) as u32);
        self.words[w] = (self.words[w] & !(mask << off)) | (v << off);
        if off + width > 64 {
            let spill = off + width - 64;
            let hi_mask = (1u64 << spill) - 1;
            self.words[w + 1] = (self.words[w + 1] & !hi_mask) | (v >> (width - spill));
        }
    }

    fn get(&self, addr: u64, width: u32, signed: bool) -> i64 {
        let (w, off) = ((addr / 64) as usize, (addr % 64) as u32);
        let mut v = self.words[w] >> off;
        if off + width > 64 {
            v |= self.words[w + 1] << (64 - off);
        }
        let v = if width == 64 { v } else { v & ((1u64 << width) - 1) };
        if signed && width < 64 && v >> (width - 1) & 1 == 1 {
            (v | !((1u64 << width) - 1)) as i64
        } else {
            v as i64
        }
    }

    /// Writes packed operands starting at `addr`, counting one data-array
    /// write per row touched.
    pub fn write_operands(&mut self, addr: u64, width: u32, values: &[i64]) -> Result<(), ArrayError> {
        let len = width as u64 * values.len() as u64;
        self.check(addr, len)?;
        for (i, &v) in values.iter().enumerate() {
            self.put(addr + i as u64 * width as u64, width, v);
        }
        if len > 0 {
            let a = self.access_bits as u64;
            self.writes += (addr + len - 1) / a - addr / a + 1;
        }
        self.row_register = None;
        Ok(())
    }

    /// Places operands without charging data-array writes. Used to lay out
    /// per-unit copies of data whose write was already charged by the
    /// off-chip load that delivered it.
    pub fn fill(&mut self, addr: u64, width: u32, values: &[i64]) -> Result<(), ArrayError> {
        self.check(addr, width as u64 * values.len() as u64)?;
        for (i, &v) in values.iter().enumerate() {
            self.put(addr + i as u64 * width as u64, width, v);
        }
        self.row_register = None;
        Ok(())
    }

    fn touch_row(&mut self, row: u64) {
        if self.row_register != Some(row) {
            self.row_register = Some(row);
            self.reads += 1;
        }
    }
}

/// Reads `count` little-endian packed operands of `width` bits from `addr`
/// through the row register.
pub fn extract_operands(
    sp: &mut Scratchpad,
    addr: u64,
    width: Bitwidth,
    signed: bool,
    count: usize,
) -> Result<Vec<i64>, ArrayError> {
    let bits = width.bits();
    if count as u64 * bits as u64 > sp.access_bits as u64 {
        return Err(ArrayError::TooWide {
            count,
            bits,
            access: sp.access_bits,
        });
    }
    if !addr.is_multiple_of(bits as u64) {
        return Err(ArrayError::Misaligned { addr, bits });
    }
    sp.check(addr, count as u64 * bits as u64)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let a = addr + i * bits as u64;
        sp.touch_row(a / sp.access_bits as u64);
        out.push(sp.get(a, bits, signed));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    None,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

/// Arithmetic right shift followed by saturation to `out_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub shift: u32,
    pub out_bits: u32,
    pub out_signed: bool,
}

impl Requant {
    /// Leaves 32-bit values untouched.
    pub const IDENTITY: Requant = Requant {
        shift: 0,
        out_bits: 32,
        out_signed: true,
    };

    pub fn apply(self, x: i64) -> i64 {
        let shifted = x >> self.shift.min(63);
        let (lo, hi) = crate::fusion::value_range(self.out_bits, self.out_signed);
        shifted.clamp(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostConfig {
    pub pooling: Pooling,
    pub activation: Activation,
    pub requant: Requant,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            pooling: Pooling::None,
            activation: Activation::None,
            requant: Requant::IDENTITY,
        }
    }
}

/// Accumulator plus pooling/activation/requantization at the bottom of a
/// column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ColumnPostUnit {
    pub accumulator: i32,
    pool: Option<i32>,
    pub overflows: u64,
}

impl ColumnPostUnit {
    pub fn accumulate(&mut self, psum: i32) {
        let p = wrap_add(self.accumulator, psum as i64);
        self.accumulator = p.value;
        self.overflows += p.overflowed as u64;
    }

    /// Moves the accumulator into the pooling register and clears it.
    pub fn pool_max(&mut self) {
        let v = std::mem::take(&mut self.accumulator);
        self.pool = Some(self.pool.map_or(v, |p| p.max(v)));
    }

    pub fn take_pooled(&mut self) -> Option<i32> {
        self.pool.take()
    }
}

/// Activation then requantization of one (already pooled) value.
pub fn activate_requant(x: i64, post: &PostConfig) -> i64 {
    let x = match post.activation {
        Activation::None => x,
        Activation::Relu => x.max(0),
    };
    post.requant.apply(x)
}

/// Runs a window of psums through a post unit: max pooling (when enabled),
/// activation, requantization. Without pooling the window must hold one
/// value.
pub fn column_post(psums: &[i32], post: &PostConfig) -> i64 {
    let pooled = match post.pooling {
        Pooling::Max => psums.iter().copied().max().unwrap_or(0),
        Pooling::None => {
            assert_eq!(psums.len(), 1, "pooling disabled but {} psums given", psums.len());
            psums[0]
        }
    };
    activate_requant(pooled as i64, post)
}

/// State of one fusion unit. Only the weight buffer lives in the unit.
#[derive(Debug, Clone)]
pub struct FusionUnitState {
    pub wbuf: Scratchpad,
}

/// Counters from one array invocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmStats {
    pub cycles: u64,
    pub fill_cycles: u64,
    /// Array steps times temporal cycles.
    pub steady_cycles: u64,
    pub ibuf_reads: u64,
    pub wbuf_reads: u64,
    pub multiplies: u64,
    pub brick_ops: u64,
    pub shift_add_ops: u64,
    pub overflows: u64,
}

impl GemmStats {
    pub fn merge(&mut self, o: &GemmStats) {
        self.cycles += o.cycles;
        self.fill_cycles += o.fill_cycles;
        self.steady_cycles += o.steady_cycles;
        self.ibuf_reads += o.ibuf_reads;
        self.wbuf_reads += o.wbuf_reads;
        self.multiplies += o.multiplies;
        self.brick_ops += o.brick_ops;
        self.shift_add_ops += o.shift_add_ops;
        self.overflows += o.overflows;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmOutput {
    /// `V x N` partial sums.
    pub outputs: Vec<Vec<i32>>,
    pub stats: GemmStats,
}

/// The grid of fusion units together with its border buffers.
#[derive(Debug, Clone)]
pub struct SystolicArray {
    geom: ArrayGeometry,
    units: Vec<FusionUnitState>,
    ibufs: Vec<Scratchpad>,
    columns: Vec<ColumnPostUnit>,
}

impl SystolicArray {
    pub fn new(geom: ArrayGeometry) -> Result<Self, ArrayError> {
        geom.validate()?;
        Ok(Self {
            geom,
            units: Vec::new(),
            ibufs: Vec::new(),
            columns: vec![ColumnPostUnit::default(); geom.cols as usize],
        })
    }

    pub fn geometry(&self) -> ArrayGeometry {
        self.geom
    }

    /// Multiplies each of the `V` input vectors (length `K`) with the
    /// `K x N` weight matrix.
    ///
    /// Steps run vector by vector, N tile by N tile, K tile by K tile. Each
    /// unit's weight buffer holds its slices for every (N tile, K tile) in
    /// that order; each row's input buffer holds its slices of every vector.
    pub fn run_gemm(
        &mut self,
        inputs: &[Vec<i64>],
        weights: &[Vec<i64>],
        config: FusionConfig,
        signs: Signs,
    ) -> Result<GemmOutput, ArrayError> {
        let k = weights.len();
        let n = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|row| row.len() != n) {
            return Err(ArrayError::Dimension("ragged weight matrix".into()));
        }
        if let Some(bad) = inputs.iter().find(|v| v.len() != k) {
            return Err(ArrayError::Dimension(format!(
                "input vector of length {} against {} weight rows",
                bad.len(),
                k
            )));
        }
        let v_count = inputs.len();
        let mut outputs = vec![vec![0i32; n]; v_count];
        let mut stats = GemmStats::default();
        if v_count == 0 || k == 0 || n == 0 {
            return Ok(GemmOutput { outputs, stats });
        }

        let rows = self.geom.rows as usize;
        let cols = self.geom.cols as usize;
        let access = self.geom.buffer_access_bits;
        let pes = config.fused_pe_count() as usize;
        let tc = config.temporal_cycles() as u64;
        let k_span = rows * pes;
        let k_tiles = k.div_ceil(k_span);
        let n_tiles = n.div_ceil(cols);
        let rows_used = rows.min(k.div_ceil(pes));
        let cols_used = cols.min(n);
        let (ibits, wbits) = (config.input_bits.bits(), config.weight_bits.bits());

        // Per-unit weight layout: [n_tile][k_tile][pe].
        let unit_bits = (n_tiles * k_tiles * pes) as u64 * wbits as u64;
        self.units.clear();
        for r in 0..rows_used {
            for c in 0..cols_used {
                let mut wbuf = Scratchpad::new(ScratchpadKind::Wbuf, unit_bits.next_multiple_of(access as u64), access);
                let mut vals = Vec::with_capacity(n_tiles * k_tiles * pes);
                for nt in 0..n_tiles {
                    for kt in 0..k_tiles {
                        for p in 0..pes {
                            let (ki, ni) = (kt * k_span + r * pes + p, nt * cols + c);
                            vals.push(if ki < k && ni < n { weights[ki][ni] } else { 0 });
                        }
                    }
                }
                wbuf.fill(0, wbits, &vals)?;
                self.units.push(FusionUnitState { wbuf });
            }
        }
        // Per-row input layout: [vector][k_tile][pe].
        let row_bits = (v_count * k_tiles * pes) as u64 * ibits as u64;
        self.ibufs.clear();
        for r in 0..rows_used {
            let mut ibuf = Scratchpad::new(ScratchpadKind::Ibuf, row_bits.next_multiple_of(access as u64), access);
            let mut vals = Vec::with_capacity(v_count * k_tiles * pes);
            for x in inputs {
                for kt in 0..k_tiles {
                    for p in 0..pes {
                        let ki = kt * k_span + r * pes + p;
                        vals.push(if ki < k { x[ki] } else { 0 });
                    }
                }
            }
            ibuf.fill(0, ibits, &vals)?;
            self.ibufs.push(ibuf);
        }

        let mut row_inputs = vec![Vec::new(); rows_used];
        for (vi, out) in outputs.iter_mut().enumerate() {
            for nt in 0..n_tiles {
                for kt in 0..k_tiles {
                    for (r, slot) in row_inputs.iter_mut().enumerate() {
                        let base = ((vi * k_tiles + kt) * pes) as u64 * ibits as u64;
                        *slot = read_chunked(&mut self.ibufs[r], base, config.input_bits, signs.input, pes, access)?;
                    }
                    for c in 0..cols_used {
                        let mut psum = 0i32;
                        for (r, xs) in row_inputs.iter().enumerate() {
                            let unit = &mut self.units[r * cols_used + c];
                            let base = ((nt * k_tiles + kt) * pes) as u64 * wbits as u64;
                            let ws = read_chunked(&mut unit.wbuf, base, config.weight_bits, signs.weight, pes, access)?;
                            let p = fusion_unit_cycle(xs, &ws, psum, config, signs)?;
                            stats.overflows += p.overflowed as u64;
                            psum = p.value;
                        }
                        self.columns[c].accumulate(psum);
                    }
                }
                for c in 0..cols_used {
                    let col = &mut self.columns[c];
                    if nt * cols + c < n {
                        out[nt * cols + c] = col.accumulator;
                    }
                    col.accumulator = 0;
                    stats.overflows += std::mem::take(&mut col.overflows);
                }
            }
        }

        let steps = (v_count * n_tiles * k_tiles) as u64;
        stats.steady_cycles = steps * tc;
        stats.fill_cycles = self.geom.fill_cycles();
        stats.cycles = stats.steady_cycles + stats.fill_cycles;
        stats.ibuf_reads = self.ibufs.iter().map(Scratchpad::reads).sum();
        stats.wbuf_reads = self.units.iter().map(|u| u.wbuf.reads()).sum();
        stats.multiplies = (v_count * k * n) as u64;
        stats.brick_ops = stats.multiplies * config.footprint() as u64 * tc;
        stats.shift_add_ops = stats.multiplies * config.shift_add_levels() as u64 * tc;
        Ok(GemmOutput { outputs, stats })
    }
}

fn read_chunked(
    sp: &mut Scratchpad,
    base: u64,
    width: Bitwidth,
    signed: bool,
    count: usize,
    access: u32,
) -> Result<Vec<i64>, ArrayError> {
    let per = (access / width.bits()).max(1) as usize;
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while i < count {
        let take = per.min(count - i);
        out.extend(extract_operands(sp, base + (i as u64) * width.bits() as u64, width, signed, take)?);
        i += take;
    }
    Ok(out)
}

/// Result of a single matrix-vector product on the array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatvecResult {
    pub outputs: Vec<i32>,
    pub cycles: u64,
    pub stats: GemmStats,
}

/// `outputs[j] = sum_i inputs[i] * weights[i][j]` on a fresh array.
pub fn systolic_matvec(
    inputs: &[i64],
    weights: &[Vec<i64>],
    config: FusionConfig,
    signs: Signs,
    geom: ArrayGeometry,
) -> Result<MatvecResult, ArrayError> {
    let mut array = SystolicArray::new(geom)?;
    let out = array.run_gemm(&[inputs.to_vec()], weights, config, signs)?;
    Ok(MatvecResult {
        outputs: out.outputs.into_iter().next().unwrap_or_default(),
        cycles: out.stats.cycles,
        stats: out.stats,
    })
}
