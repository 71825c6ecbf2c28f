//! Block-structured instruction set.
//!
//! A block starts with `setup`, which fixes operand bitwidths, signedness,
//! post-unit behaviour and the off-chip base address of each buffer's
//! tensor, and ends with `block-end`. Between them, each `loop` opens a new
//! nesting level that extends to the end of the block. Non-loop
//! instructions belong to the level of the closest preceding `loop` (or to
//! the top level before the first one).
//!
//! Per iteration of a level, its `ld-mem` and `rd-buf` instructions run
//! first, then the inner level runs to completion, then its `wr-buf` and
//! `st-mem` instructions. `compute` sits in the innermost level.
//!
//! `gen-addr` instructions are declarations: they give the stride a loop
//! contributes to one address stream. There are six streams, one on-chip
//! (`buf.*`) and one off-chip (`mem.*`) per buffer. Addresses are in
//! elements.

mod asm;
mod encoding;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use asm::{assemble, disassemble, AsmError, AsmErrorKind};
pub use encoding::{decode, decode_words, encode, encode_blocks, encode_instruction, DecodeError, MAGIC, VERSION};
pub use validate::{validate, Issue, ValidationReport};

use crate::array::{Activation, Pooling, PostConfig, Requant, ScratchpadKind};
use crate::fusion::{Bitwidth, FusionConfig, Signs};

pub type LoopId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Buf,
    Mem,
}

/// One of the six address streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AddrTarget {
    pub space: Space,
    pub buf: ScratchpadKind,
}

impl AddrTarget {
    pub const fn new(space: Space, buf: ScratchpadKind) -> Self {
        Self { space, buf }
    }

    pub fn mem(buf: ScratchpadKind) -> Self {
        Self::new(Space::Mem, buf)
    }

    pub fn on_chip(buf: ScratchpadKind) -> Self {
        Self::new(Space::Buf, buf)
    }

    pub fn all() -> impl Iterator<Item = AddrTarget> {
        [Space::Buf, Space::Mem]
            .into_iter()
            .flat_map(|s| ScratchpadKind::ALL.into_iter().map(move |b| AddrTarget::new(s, b)))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (space, buf) = s.split_once('.')?;
        let space = match space {
            "buf" => Space::Buf,
            "mem" => Space::Mem,
            _ => return None,
        };
        Some(Self::new(space, ScratchpadKind::parse(buf)?))
    }
}

impl fmt::Display for AddrTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let space = match self.space {
            Space::Buf => "buf",
            Space::Mem => "mem",
        };
        write!(f, "{space}.{}", self.buf.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComputeOp {
    MulAdd,
    Max,
}

impl ComputeOp {
    pub fn name(self) -> &'static str {
        match self {
            ComputeOp::MulAdd => "mul-add",
            ComputeOp::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setup {
    pub input_bits: Bitwidth,
    pub weight_bits: Bitwidth,
    pub input_signed: bool,
    pub weight_signed: bool,
    pub base_ibuf: u64,
    pub base_obuf: u64,
    pub base_wbuf: u64,
    pub post: PostConfig,
}

impl Setup {
    pub fn new(config: FusionConfig, signs: Signs) -> Self {
        Self {
            input_bits: config.input_bits,
            weight_bits: config.weight_bits,
            input_signed: signs.input,
            weight_signed: signs.weight,
            base_ibuf: 0,
            base_obuf: 0,
            base_wbuf: 0,
            post: PostConfig::default(),
        }
    }

    pub fn config(&self) -> FusionConfig {
        FusionConfig::new(self.input_bits, self.weight_bits)
    }

    pub fn signs(&self) -> Signs {
        Signs::new(self.input_signed, self.weight_signed)
    }

    pub fn base(&self, buf: ScratchpadKind) -> u64 {
        match buf {
            ScratchpadKind::Ibuf => self.base_ibuf,
            ScratchpadKind::Obuf => self.base_obuf,
            ScratchpadKind::Wbuf => self.base_wbuf,
        }
    }

    pub fn set_base(&mut self, buf: ScratchpadKind, addr: u64) {
        match buf {
            ScratchpadKind::Ibuf => self.base_ibuf = addr,
            ScratchpadKind::Obuf => self.base_obuf = addr,
            ScratchpadKind::Wbuf => self.base_wbuf = addr,
        }
    }

    pub fn with_post(mut self, pooling: Pooling, activation: Activation, requant: Requant) -> Self {
        self.post = PostConfig {
            pooling,
            activation,
            requant,
        };
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Instruction {
    Setup(Setup),
    BlockEnd { next: u32 },
    Loop { id: LoopId, iterations: u32 },
    Compute { op: ComputeOp },
    GenAddr { target: AddrTarget, loop_id: LoopId, stride: u32 },
    LdMem { buf: ScratchpadKind, words: u32 },
    StMem { buf: ScratchpadKind, words: u32 },
    RdBuf { buf: ScratchpadKind },
    WrBuf { buf: ScratchpadKind },
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::Setup(_) => "setup",
            Instruction::BlockEnd { .. } => "block-end",
            Instruction::Loop { .. } => "loop",
            Instruction::Compute { .. } => "compute",
            Instruction::GenAddr { .. } => "gen-addr",
            Instruction::LdMem { .. } => "ld-mem",
            Instruction::StMem { .. } => "st-mem",
            Instruction::RdBuf { .. } => "rd-buf",
            Instruction::WrBuf { .. } => "wr-buf",
        }
    }

    /// 64-bit words the instruction occupies in the binary format.
    pub fn words(&self) -> usize {
        match self {
            Instruction::Setup(_) => 4,
            _ => 1,
        }
    }
}

/// A loop as seen from the nest: its position, id and trip count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopInfo {
    pub index: usize,
    pub id: LoopId,
    pub iterations: u32,
}

/// Instructions of one nesting level (level 0 is the top, outside every
/// loop; level `d` is the body of the `d`-th loop).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Level {
    pub loop_info: Option<LoopInfo>,
    pub body: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionBlock {
    pub instructions: Vec<Instruction>,
}

impl InstructionBlock {
    pub fn new(instructions: Vec<Instruction>) -> Self {
        Self { instructions }
    }

    pub fn setup(&self) -> Option<&Setup> {
        self.instructions.iter().find_map(|i| match i {
            Instruction::Setup(s) => Some(s),
            _ => None,
        })
    }

    pub fn setup_mut(&mut self) -> Option<&mut Setup> {
        self.instructions.iter_mut().find_map(|i| match i {
            Instruction::Setup(s) => Some(s),
            _ => None,
        })
    }

    pub fn config(&self) -> Option<FusionConfig> {
        self.setup().map(Setup::config)
    }

    pub fn loops(&self) -> Vec<LoopInfo> {
        self.instructions
            .iter()
            .enumerate()
            .filter_map(|(index, i)| match *i {
                Instruction::Loop { id, iterations } => Some(LoopInfo { index, id, iterations }),
                _ => None,
            })
            .collect()
    }

    pub fn compute_op(&self) -> Option<ComputeOp> {
        self.instructions.iter().find_map(|i| match i {
            Instruction::Compute { op } => Some(*op),
            _ => None,
        })
    }

    /// Splits the block into nesting levels. `setup`, `block-end` and
    /// `gen-addr` are not placed in any level.
    pub fn levels(&self) -> Vec<Level> {
        let mut levels = vec![Level::default()];
        for (index, inst) in self.instructions.iter().enumerate() {
            match *inst {
                Instruction::Loop { id, iterations } => levels.push(Level {
                    loop_info: Some(LoopInfo { index, id, iterations }),
                    body: Vec::new(),
                }),
                Instruction::Setup(_) | Instruction::BlockEnd { .. } | Instruction::GenAddr { .. } => {}
                _ => levels.last_mut().expect("top level").body.push(index),
            }
        }
        levels
    }

    /// Stride of `loop_id` on one address stream (0 when not declared).
    pub fn stride(&self, target: AddrTarget, loop_id: LoopId) -> u64 {
        self.instructions
            .iter()
            .filter_map(|i| match *i {
                Instruction::GenAddr { target: t, loop_id: l, stride } if t == target && l == loop_id => {
                    Some(stride as u64)
                }
                _ => None,
            })
            .sum()
    }

    /// Distinct `(mem, buf)` offset pairs a transfer at `level` covers: the
    /// addresses produced by the loops nested inside that level, with every
    /// enclosing iterator at zero. Sorted.
    pub fn footprint(&self, level: usize, buf: ScratchpadKind) -> Vec<(u64, u64)> {
        let (mem_t, buf_t) = (AddrTarget::mem(buf), AddrTarget::on_chip(buf));
        let inner: Vec<(u32, u64, u64)> = self
            .loops()
            .into_iter()
            .skip(level)
            .map(|l| (l.iterations, self.stride(mem_t, l.id), self.stride(buf_t, l.id)))
            .filter(|&(n, m, b)| n == 0 || m != 0 || b != 0)
            .collect();
        if inner.iter().any(|&(n, _, _)| n == 0) {
            return Vec::new();
        }
        let mut pairs = vec![(0u64, 0u64)];
        for (n, m, b) in inner {
            pairs = pairs
                .iter()
                .flat_map(|&(pm, pb)| (0..n as u64).map(move |i| (pm + i * m, pb + i * b)))
                .collect();
            pairs.sort_unstable();
            pairs.dedup();
        }
        pairs
    }
}
