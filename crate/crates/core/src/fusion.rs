//! Composing bricks into fused processing engines.
//!
//! A fusion unit holds 16 bricks. For operands up to 8 bits the bricks are
//! grouped spatially: an `a`-bit by `b`-bit product needs `(a/2)*(b/2)`
//! bricks whose 2-bit partial products are shifted by `2i + 2j` and summed.
//! Operands of 16 bits are split into 8-bit halves and the halves are run
//! through the 8-bit spatial engine over two or four cycles.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brick::{brick_multiply, BrickOperand};

/// Bricks in one fusion unit.
pub const BRICKS_PER_UNIT: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("value {value} out of range for {bits}-bit {} operand", if *.signed { "signed" } else { "unsigned" })]
    OutOfRange { value: i64, bits: u32, signed: bool },
    #[error("unsupported bitwidth {0} (expected 2, 4, 8 or 16)")]
    BadBitwidth(u32),
    #[error("operand vector length {got} does not match {expected} fused PEs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("config {0} has a 16-bit operand and needs the temporal path")]
    NeedsTemporal(FusionConfig),
    #[error("config {0} has no 16-bit operand")]
    NotTemporal(FusionConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Bitwidth {
    B2,
    B4,
    B8,
    B16,
}

impl Bitwidth {
    pub const ALL: [Bitwidth; 4] = [Bitwidth::B2, Bitwidth::B4, Bitwidth::B8, Bitwidth::B16];

    pub fn bits(self) -> u32 {
        match self {
            Bitwidth::B2 => 2,
            Bitwidth::B4 => 4,
            Bitwidth::B8 => 8,
            Bitwidth::B16 => 16,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self, FusionError> {
        match bits {
            2 => Ok(Bitwidth::B2),
            4 => Ok(Bitwidth::B4),
            8 => Ok(Bitwidth::B8),
            16 => Ok(Bitwidth::B16),
            other => Err(FusionError::BadBitwidth(other)),
        }
    }

    /// Number of 2-bit slices.
    pub fn slices(self) -> u32 {
        self.bits() / 2
    }
}

impl TryFrom<u32> for Bitwidth {
    type Error = FusionError;
    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        Bitwidth::from_bits(bits)
    }
}

impl From<Bitwidth> for u32 {
    fn from(b: Bitwidth) -> u32 {
        b.bits()
    }
}

impl fmt::Display for Bitwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Inclusive value range of a `bits`-wide operand.
pub fn value_range(bits: u32, signed: bool) -> (i64, i64) {
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

pub fn check_range(value: i64, bits: u32, signed: bool) -> Result<(), FusionError> {
    let (lo, hi) = value_range(bits, signed);
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(FusionError::OutOfRange {
            value,
            bits,
            signed,
        })
    }
}

/// Signedness of the two operand streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Signs {
    pub input: bool,
    pub weight: bool,
}

impl Signs {
    pub const fn new(input: bool, weight: bool) -> Self {
        Self { input, weight }
    }
}

/// Operand bitwidths a fusion unit is configured for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FusionConfig {
    pub input_bits: Bitwidth,
    pub weight_bits: Bitwidth,
}

impl fmt::Display for FusionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.input_bits, self.weight_bits)
    }
}

impl FusionConfig {
    pub fn new(input_bits: Bitwidth, weight_bits: Bitwidth) -> Self {
        Self {
            input_bits,
            weight_bits,
        }
    }

    pub fn from_bits(input_bits: u32, weight_bits: u32) -> Result<Self, FusionError> {
        Ok(Self::new(
            Bitwidth::from_bits(input_bits)?,
            Bitwidth::from_bits(weight_bits)?,
        ))
    }

    /// All 16 configurations.
    pub fn all() -> impl Iterator<Item = FusionConfig> {
        Bitwidth::ALL
            .into_iter()
            .flat_map(|i| Bitwidth::ALL.into_iter().map(move |w| FusionConfig::new(i, w)))
    }

    /// The config the spatial engine runs at: both widths capped at 8.
    pub fn spatial(self) -> FusionConfig {
        let cap = |b: Bitwidth| if b == Bitwidth::B16 { Bitwidth::B8 } else { b };
        FusionConfig::new(cap(self.input_bits), cap(self.weight_bits))
    }

    /// Bricks per fused PE.
    pub fn footprint(self) -> u32 {
        let s = self.spatial();
        s.input_bits.slices() * s.weight_bits.slices()
    }

    pub fn fused_pe_count(self) -> u32 {
        BRICKS_PER_UNIT / self.footprint()
    }

    pub fn temporal_cycles(self) -> u32 {
        let halves = |b: Bitwidth| if b == Bitwidth::B16 { 2 } else { 1 };
        halves(self.input_bits) * halves(self.weight_bits)
    }

    pub fn is_temporal(self) -> bool {
        self.temporal_cycles() > 1
    }

    /// Levels of the shift-add tree a fused PE activates per cycle
    /// (each level combines up to four partial products).
    pub fn shift_add_levels(self) -> u32 {
        let mut n = self.footprint();
        let mut levels = 0;
        while n > 1 {
            n = n.div_ceil(4);
            levels += 1;
        }
        levels
    }

    /// Multiplies per unit per cycle, as a fraction `(num, den)`.
    pub fn throughput(self) -> (u32, u32) {
        (self.fused_pe_count(), self.temporal_cycles())
    }
}

/// A value split into 2-bit slices, least significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceVector {
    pub slices: Vec<BrickOperand>,
    pub source_bits: Bitwidth,
    pub source_signed: bool,
}

impl SliceVector {
    pub fn recompose(&self) -> i64 {
        self.slices
            .iter()
            .enumerate()
            .map(|(i, s)| (s.value() as i64) << (2 * i))
            .sum()
    }
}

/// Splits `value` into 2-bit slices. Only the top slice of a signed value
/// is signed; the rest are unsigned.
pub fn decompose(value: i64, bits: Bitwidth, signed: bool) -> Result<SliceVector, FusionError> {
    check_range(value, bits.bits(), signed)?;
    let n = bits.slices() as usize;
    let slices = (0..n)
        .map(|i| {
            let raw = ((value >> (2 * i)) & 0b11) as u8;
            BrickOperand::new(raw, signed && i == n - 1)
        })
        .collect();
    Ok(SliceVector {
        slices,
        source_bits: bits,
        source_signed: signed,
    })
}

/// Left-shift applied to each brick product of one fused PE. Brick `(i, j)`
/// (input slice `i`, weight slice `j`) sits at index `i * weight_slices + j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftTable {
    pub input_slices: u32,
    pub weight_slices: u32,
    pub shifts: Vec<u32>,
}

impl ShiftTable {
    pub fn get(&self, i: u32, j: u32) -> u32 {
        self.shifts[(i * self.weight_slices + j) as usize]
    }

    pub fn transpose(&self) -> ShiftTable {
        let mut shifts = Vec::with_capacity(self.shifts.len());
        for j in 0..self.weight_slices {
            for i in 0..self.input_slices {
                shifts.push(self.get(i, j));
            }
        }
        ShiftTable {
            input_slices: self.weight_slices,
            weight_slices: self.input_slices,
            shifts,
        }
    }
}

/// Shift table of the spatial engine for `config`.
pub fn shift_table(config: FusionConfig) -> ShiftTable {
    let s = config.spatial();
    let (ni, nw) = (s.input_bits.slices(), s.weight_bits.slices());
    let shifts = (0..ni)
        .flat_map(|i| (0..nw).map(move |j| 2 * i + 2 * j))
        .collect();
    ShiftTable {
        input_slices: ni,
        weight_slices: nw,
        shifts,
    }
}

/// One fused-PE multiply for operands up to 8 bits, built only from brick
/// products combined through the shift table.
pub fn fused_pe_multiply(
    x: i64,
    w: i64,
    config: FusionConfig,
    signs: Signs,
) -> Result<i64, FusionError> {
    if config.is_temporal() {
        return Err(FusionError::NeedsTemporal(config));
    }
    spatial_multiply(x, w, config, signs)
}

fn spatial_multiply(x: i64, w: i64, config: FusionConfig, signs: Signs) -> Result<i64, FusionError> {
    let xs = decompose(x, config.input_bits, signs.input)?;
    let ws = decompose(w, config.weight_bits, signs.weight)?;
    let table = shift_table(config);
    let mut acc = 0i64;
    for (i, xi) in xs.slices.iter().enumerate() {
        for (j, wj) in ws.slices.iter().enumerate() {
            let p = brick_multiply(*xi, *wj).value() as i64;
            acc += p << table.get(i as u32, j as u32);
        }
    }
    Ok(acc)
}

/// Result of a multi-cycle multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalProduct {
    pub product: i64,
    pub cycles: u32,
}

/// One 8-bit-or-narrower half of an operand, with its position.
#[derive(Debug, Clone, Copy)]
struct Half {
    value: i64,
    bits: Bitwidth,
    signed: bool,
    shift: u32,
}

fn halves(v: i64, bits: Bitwidth, signed: bool) -> Vec<Half> {
    if bits == Bitwidth::B16 {
        vec![
            Half {
                value: v & 0xff,
                bits: Bitwidth::B8,
                signed: false,
                shift: 0,
            },
            Half {
                value: v >> 8,
                bits: Bitwidth::B8,
                signed,
                shift: 8,
            },
        ]
    } else {
        vec![Half {
            value: v,
            bits,
            signed,
            shift: 0,
        }]
    }
}

/// Multiply with at least one 16-bit operand. Each cycle runs one spatial
/// multiply of 8-bit halves and accumulates it shifted by 0, 8 or 16.
/// Cycle order is (lo,lo), (hi,lo), (lo,hi), (hi,hi) with the input half
/// first.
pub fn temporal_multiply(
    x: i64,
    w: i64,
    config: FusionConfig,
    signs: Signs,
) -> Result<TemporalProduct, FusionError> {
    if !config.is_temporal() {
        return Err(FusionError::NotTemporal(config));
    }
    check_range(x, config.input_bits.bits(), signs.input)?;
    check_range(w, config.weight_bits.bits(), signs.weight)?;
    let xh = halves(x, config.input_bits, signs.input);
    let wh = halves(w, config.weight_bits, signs.weight);
    let mut acc = 0i64;
    let mut cycles = 0;
    for wp in &wh {
        for xp in &xh {
            let cfg = FusionConfig::new(xp.bits, wp.bits);
            let p = spatial_multiply(xp.value, wp.value, cfg, Signs::new(xp.signed, wp.signed))?;
            acc += p << (xp.shift + wp.shift);
            cycles += 1;
        }
    }
    debug_assert_eq!(cycles, config.temporal_cycles());
    Ok(TemporalProduct {
        product: acc,
        cycles,
    })
}

/// Exact product through whichever path `config` uses.
pub fn multiply(x: i64, w: i64, config: FusionConfig, signs: Signs) -> Result<i64, FusionError> {
    if config.is_temporal() {
        temporal_multiply(x, w, config, signs).map(|t| t.product)
    } else {
        fused_pe_multiply(x, w, config, signs)
    }
}

/// Outgoing partial sum of a fusion unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Psum {
    pub value: i32,
    /// The exact sum did not fit 32 bits and was wrapped.
    pub overflowed: bool,
}

/// Adds `v` to a 32-bit partial sum with two's-complement wrap.
pub fn wrap_add(psum: i32, v: i64) -> Psum {
    let exact = psum as i64 + v;
    Psum {
        value: exact as i32,
        overflowed: exact != (exact as i32) as i64,
    }
}

/// One fusion-unit step: every fused PE multiplies its operand pair and the
/// products are added to the incoming partial sum.
pub fn fusion_unit_cycle(
    inputs: &[i64],
    weights: &[i64],
    psum_in: i32,
    config: FusionConfig,
    signs: Signs,
) -> Result<Psum, FusionError> {
    let n = config.fused_pe_count() as usize;
    for len in [inputs.len(), weights.len()] {
        if len != n {
            return Err(FusionError::LengthMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let mut sum = 0i64;
    for (&x, &w) in inputs.iter().zip(weights) {
        sum += multiply(x, w, config, signs)?;
    }
    Ok(wrap_add(psum_in, sum))
}
