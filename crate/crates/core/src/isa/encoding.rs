//! Binary form: little-endian 64-bit words behind a small header.
//!
//! Header: `BFIS`, a version byte, then the word count as a little-endian
//! u32. Every instruction is one word with the opcode in bits 0..8, except
//! `setup`, which is followed by three base-address words (ibuf, obuf, wbuf).
//! Unused bits must be zero.

use thiserror::Error;

use super::{AddrTarget, ComputeOp, Instruction, InstructionBlock, Setup, Space};
use crate::array::{Activation, Pooling, PostConfig, Requant, ScratchpadKind};
use crate::fusion::Bitwidth;

pub const MAGIC: [u8; 4] = *b"BFIS";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 9;

const OP_SETUP: u8 = 0x01;
const OP_BLOCK_END: u8 = 0x02;
const OP_LOOP: u8 = 0x03;
const OP_COMPUTE: u8 = 0x04;
const OP_GEN_ADDR: u8 = 0x05;
const OP_LD_MEM: u8 = 0x06;
const OP_ST_MEM: u8 = 0x07;
const OP_RD_BUF: u8 = 0x08;
const OP_WR_BUF: u8 = 0x09;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic (not an instruction stream)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u8),
    #[error("stream truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after the last word")]
    TrailingBytes(usize),
    #[error("word {word}: unknown opcode {opcode:#04x}")]
    UnknownOpcode { word: usize, opcode: u8 },
    #[error("word {word}: reserved bits set in {raw:#018x}")]
    ReservedBits { word: usize, raw: u64 },
    #[error("word {word}: bad field `{field}`")]
    BadField { word: usize, field: &'static str },
    #[error("setup at word {0} is missing its base-address words")]
    MissingBases(usize),
    #[error("instructions after the last block-end")]
    UnterminatedBlock,
}

fn bits(x: u64, lo: u32, len: u32) -> u64 {
    (x >> lo) & ((1u64 << len) - 1)
}

fn buf_code(b: ScratchpadKind) -> u64 {
    match b {
        ScratchpadKind::Ibuf => 0,
        ScratchpadKind::Obuf => 1,
        ScratchpadKind::Wbuf => 2,
    }
}

fn width_code(b: Bitwidth) -> u64 {
    match b {
        Bitwidth::B2 => 0,
        Bitwidth::B4 => 1,
        Bitwidth::B8 => 2,
        Bitwidth::B16 => 3,
    }
}

/// Words for one instruction. Shift amounts above 63 saturate, which does
/// not change the requantized result.
pub fn encode_instruction(inst: &Instruction) -> Vec<u64> {
    let op = |code: u8| code as u64;
    match *inst {
        Instruction::Setup(s) => {
            let r = s.post.requant;
            let w = op(OP_SETUP)
                | width_code(s.input_bits) << 8
                | width_code(s.weight_bits) << 10
                | (s.input_signed as u64) << 12
                | (s.weight_signed as u64) << 13
                | ((s.post.pooling == Pooling::Max) as u64) << 14
                | ((s.post.activation == Activation::Relu) as u64) << 15
                | (r.shift.min(63) as u64) << 16
                | (r.out_bits as u64 & 0x3f) << 22
                | (r.out_signed as u64) << 28;
            vec![w, s.base_ibuf, s.base_obuf, s.base_wbuf]
        }
        Instruction::BlockEnd { next } => vec![op(OP_BLOCK_END) | (next as u64) << 32],
        Instruction::Loop { id, iterations } => vec![op(OP_LOOP) | (id as u64) << 8 | (iterations as u64) << 32],
        Instruction::Compute { op: c } => {
            let code = match c {
                ComputeOp::MulAdd => 0,
                ComputeOp::Max => 1,
            };
            vec![op(OP_COMPUTE) | code << 8]
        }
        Instruction::GenAddr { target, loop_id, stride } => vec![
            op(OP_GEN_ADDR)
                | buf_code(target.buf) << 8
                | ((target.space == Space::Mem) as u64) << 10
                | (loop_id as u64) << 16
                | (stride as u64) << 32,
        ],
        Instruction::LdMem { buf, words } => vec![op(OP_LD_MEM) | buf_code(buf) << 8 | (words as u64) << 32],
        Instruction::StMem { buf, words } => vec![op(OP_ST_MEM) | buf_code(buf) << 8 | (words as u64) << 32],
        Instruction::RdBuf { buf } => vec![op(OP_RD_BUF) | buf_code(buf) << 8],
        Instruction::WrBuf { buf } => vec![op(OP_WR_BUF) | buf_code(buf) << 8],
    }
}

/// Words for one block.
pub fn encode(block: &InstructionBlock) -> Vec<u64> {
    block.instructions.iter().flat_map(encode_instruction).collect()
}

/// A complete binary stream, header included.
pub fn encode_blocks(blocks: &[InstructionBlock]) -> Vec<u8> {
    let words: Vec<u64> = blocks.iter().flat_map(encode).collect();
    let mut out = Vec::with_capacity(HEADER_LEN + words.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(words.len() as u32).to_le_bytes());
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Decodes raw words into instructions.
pub fn decode_words(words: &[u64]) -> Result<Vec<Instruction>, DecodeError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let (inst, used) = decode_one(words, i)?;
        out.push(inst);
        i += used;
    }
    Ok(out)
}

fn decode_one(words: &[u64], word: usize) -> Result<(Instruction, usize), DecodeError> {
    let w = words[word];
    let opcode = (w & 0xff) as u8;
    let reserved = |mask: u64| {
        if w & !mask != 0 {
            Err(DecodeError::ReservedBits { word, raw: w })
        } else {
            Ok(())
        }
    };
    let buf = || match bits(w, 8, 2) {
        0 => Ok(ScratchpadKind::Ibuf),
        1 => Ok(ScratchpadKind::Obuf),
        2 => Ok(ScratchpadKind::Wbuf),
        _ => Err(DecodeError::BadField { word, field: "buf" }),
    };
    let hi = bits(w, 32, 32) as u32;
    const BUF_MASK: u64 = 0x3ff;
    const BUF_HI_MASK: u64 = 0xffff_ffff_0000_03ff;

    let inst = match opcode {
        OP_SETUP => {
            reserved(0x1fff_ffff)?;
            if words.len() < word + 4 {
                return Err(DecodeError::MissingBases(word));
            }
            let width = |lo| Bitwidth::ALL[bits(w, lo, 2) as usize];
            let out_bits = bits(w, 22, 6) as u32;
            if !(1..=32).contains(&out_bits) {
                return Err(DecodeError::BadField { word, field: "out_bits" });
            }
            let post = PostConfig {
                pooling: if bits(w, 14, 1) == 1 { Pooling::Max } else { Pooling::None },
                activation: if bits(w, 15, 1) == 1 { Activation::Relu } else { Activation::None },
                requant: Requant {
                    shift: bits(w, 16, 6) as u32,
                    out_bits,
                    out_signed: bits(w, 28, 1) == 1,
                },
            };
            let setup = Setup {
                input_bits: width(8),
                weight_bits: width(10),
                input_signed: bits(w, 12, 1) == 1,
                weight_signed: bits(w, 13, 1) == 1,
                base_ibuf: words[word + 1],
                base_obuf: words[word + 2],
                base_wbuf: words[word + 3],
                post,
            };
            return Ok((Instruction::Setup(setup), 4));
        }
        OP_BLOCK_END => {
            reserved(0xffff_ffff_0000_00ff)?;
            Instruction::BlockEnd { next: hi }
        }
        OP_LOOP => {
            reserved(0xffff_ffff_00ff_ffff)?;
            Instruction::Loop {
                id: bits(w, 8, 16) as u16,
                iterations: hi,
            }
        }
        OP_COMPUTE => {
            reserved(0xffff)?;
            let op = match bits(w, 8, 8) {
                0 => ComputeOp::MulAdd,
                1 => ComputeOp::Max,
                _ => return Err(DecodeError::BadField { word, field: "op" }),
            };
            Instruction::Compute { op }
        }
        OP_GEN_ADDR => {
            reserved(0xffff_ffff_ffff_07ff)?;
            let space = if bits(w, 10, 1) == 1 { Space::Mem } else { Space::Buf };
            Instruction::GenAddr {
                target: AddrTarget::new(space, buf()?),
                loop_id: bits(w, 16, 16) as u16,
                stride: hi,
            }
        }
        OP_LD_MEM => {
            reserved(BUF_HI_MASK)?;
            Instruction::LdMem { buf: buf()?, words: hi }
        }
        OP_ST_MEM => {
            reserved(BUF_HI_MASK)?;
            Instruction::StMem { buf: buf()?, words: hi }
        }
        OP_RD_BUF => {
            reserved(BUF_MASK)?;
            Instruction::RdBuf { buf: buf()? }
        }
        OP_WR_BUF => {
            reserved(BUF_MASK)?;
            Instruction::WrBuf { buf: buf()? }
        }
        opcode => return Err(DecodeError::UnknownOpcode { word, opcode }),
    };
    Ok((inst, 1))
}

/// Decodes a binary stream into blocks. An empty byte slice is an empty
/// program.
pub fn decode(bytes: &[u8]) -> Result<Vec<InstructionBlock>, DecodeError> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    if bytes.len() < HEADER_LEN {
        if !MAGIC.starts_with(&bytes[..bytes.len().min(4)]) {
            return Err(DecodeError::BadMagic);
        }
        return Err(DecodeError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(DecodeError::BadVersion(bytes[4]));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let expected = HEADER_LEN + count * 8;
    if bytes.len() < expected {
        return Err(DecodeError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DecodeError::TrailingBytes(bytes.len() - expected));
    }
    let words: Vec<u64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut blocks = Vec::new();
    let mut current = Vec::new();
    for inst in decode_words(&words)? {
        let end = matches!(inst, Instruction::BlockEnd { .. });
        current.push(inst);
        if end {
            blocks.push(InstructionBlock::new(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        return Err(DecodeError::UnterminatedBlock);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_zero_length_streams() {
        assert_eq!(decode(&[]).unwrap(), vec![]);
        let bytes = encode_blocks(&[]);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(decode(&bytes).unwrap(), vec![]);
    }

    #[test]
    fn unknown_opcode_is_rejected() {
        let mut bytes = encode_blocks(&[]);
        bytes[5] = 1;
        bytes.extend_from_slice(&0xffu64.to_le_bytes());
        assert_eq!(decode(&bytes), Err(DecodeError::UnknownOpcode { word: 0, opcode: 0xff }));
    }

    #[test]
    fn header_errors() {
        assert_eq!(decode(b"XXXXX\0\0\0\0"), Err(DecodeError::BadMagic));
        assert_eq!(decode(b"BFIS\x02\0\0\0\0"), Err(DecodeError::BadVersion(2)));
        assert!(matches!(decode(b"BFIS\x01\x01\0\0\0"), Err(DecodeError::Truncated { .. })));
        assert!(matches!(decode(b"BF"), Err(DecodeError::Truncated { .. })));
    }

    #[test]
    fn reserved_bits_are_checked() {
        let w = encode_instruction(&Instruction::RdBuf { buf: ScratchpadKind::Obuf })[0] | 1 << 40;
        assert!(matches!(decode_words(&[w]), Err(DecodeError::ReservedBits { .. })));
    }

    #[test]
    fn field_layout() {
        let w = encode_instruction(&Instruction::Loop { id: 7, iterations: 300 })[0];
        assert_eq!(w, 0x03 | 7 << 8 | 300 << 32);
        let w = encode_instruction(&Instruction::GenAddr {
            target: AddrTarget::mem(ScratchpadKind::Wbuf),
            loop_id: 2,
            stride: 64,
        })[0];
        assert_eq!(w, 0x05 | 2 << 8 | 1 << 10 | 2 << 16 | 64 << 32);
    }
}
