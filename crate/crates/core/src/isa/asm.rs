//! Text form of instruction blocks.
//!
//! One instruction per line: a mnemonic followed by `field=value` pairs.
//! `#` starts a comment. The README lists every field.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use super::{validate, AddrTarget, ComputeOp, Instruction, InstructionBlock, Setup};
use crate::array::{Activation, Pooling, PostConfig, Requant, ScratchpadKind};
use crate::fusion::Bitwidth;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AsmErrorKind {
    Syntax(String),
    UnknownMnemonic(String),
    UnknownField(String),
    MissingField(&'static str),
    FieldRange { field: String, value: String },
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct AsmError {
    pub line: usize,
    pub column: usize,
    pub kind: AsmErrorKind,
}

impl fmt::Display for AsmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: ", self.line, self.column)?;
        match &self.kind {
            AsmErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            AsmErrorKind::UnknownMnemonic(m) => write!(f, "unknown mnemonic `{m}`"),
            AsmErrorKind::UnknownField(m) => write!(f, "unknown field `{m}`"),
            AsmErrorKind::MissingField(m) => write!(f, "missing field `{m}`"),
            AsmErrorKind::FieldRange { field, value } => write!(f, "value `{value}` out of range for `{field}`"),
            AsmErrorKind::Invalid(m) => write!(f, "invalid block: {m}"),
        }
    }
}

struct Fields<'a> {
    line: usize,
    map: BTreeMap<&'a str, (&'a str, usize)>,
}

impl<'a> Fields<'a> {
    fn err(&self, column: usize, kind: AsmErrorKind) -> AsmError {
        AsmError {
            line: self.line,
            column,
            kind,
        }
    }

    fn take(&mut self, name: &'static str) -> Option<(&'a str, usize)> {
        self.map.remove(name)
    }

    fn num<T: TryFrom<u64>>(&mut self, name: &'static str, default: Option<T>) -> Result<T, AsmError> {
        match self.take(name) {
            None => default.ok_or_else(|| self.err(1, AsmErrorKind::MissingField(name))),
            Some((v, col)) => parse_u64(v)
                .and_then(|n| T::try_from(n).ok())
                .ok_or_else(|| self.range(name, v, col)),
        }
    }

    fn flag(&mut self, name: &'static str, default: bool) -> Result<bool, AsmError> {
        match self.take(name) {
            None => Ok(default),
            Some(("1" | "true", _)) => Ok(true),
            Some(("0" | "false", _)) => Ok(false),
            Some((v, col)) => Err(self.range(name, v, col)),
        }
    }

    fn parsed<T>(&mut self, name: &'static str, default: Option<T>, f: impl Fn(&str) -> Option<T>) -> Result<T, AsmError> {
        match self.take(name) {
            None => default.ok_or_else(|| self.err(1, AsmErrorKind::MissingField(name))),
            Some((v, col)) => f(v).ok_or_else(|| self.range(name, v, col)),
        }
    }

    fn range(&self, field: &str, value: &str, col: usize) -> AsmError {
        self.err(
            col,
            AsmErrorKind::FieldRange {
                field: field.to_string(),
                value: value.to_string(),
            },
        )
    }

    fn finish(self) -> Result<(), AsmError> {
        match self.map.iter().min_by_key(|(_, (_, c))| *c) {
            None => Ok(()),
            Some((name, (_, col))) => Err(self.err(*col, AsmErrorKind::UnknownField(name.to_string()))),
        }
    }
}

fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn bitwidth(s: &str) -> Option<Bitwidth> {
    s.parse().ok().and_then(|b| Bitwidth::from_bits(b).ok())
}

/// Parses assembly text into blocks; each block is validated.
pub fn assemble(text: &str) -> Result<Vec<InstructionBlock>, AsmError> {
    let mut blocks = Vec::new();
    let mut current: Option<(InstructionBlock, Vec<usize>)> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let code = raw.split('#').next().unwrap_or("");
        let mut tokens = tokenize(code);
        let Some((mnemonic, mcol)) = tokens.next() else {
            continue;
        };
        let mut fields = Fields {
            line,
            map: BTreeMap::new(),
        };
        for (tok, col) in tokens {
            let Some((k, v)) = tok.split_once('=') else {
                return Err(fields.err(col, AsmErrorKind::Syntax(format!("expected field=value, found `{tok}`"))));
            };
            if k.is_empty() || v.is_empty() {
                return Err(fields.err(col, AsmErrorKind::Syntax(format!("malformed field `{tok}`"))));
            }
            if fields.map.insert(k, (v, col + k.len() + 1)).is_some() {
                return Err(fields.err(col, AsmErrorKind::Syntax(format!("field `{k}` given twice"))));
            }
        }
        let inst = parse_instruction(mnemonic, mcol, &mut fields)?;
        fields.finish()?;

        match (&mut current, inst) {
            (None, Instruction::Setup(_)) => current = Some((InstructionBlock::new(vec![inst]), vec![line])),
            (None, _) => {
                return Err(AsmError {
                    line,
                    column: mcol,
                    kind: AsmErrorKind::Syntax("instruction outside a block (expected setup)".into()),
                })
            }
            (Some(_), Instruction::Setup(_)) => {
                return Err(AsmError {
                    line,
                    column: mcol,
                    kind: AsmErrorKind::Syntax("setup inside an open block (missing block-end)".into()),
                })
            }
            (Some((block, lines)), inst) => {
                block.instructions.push(inst);
                lines.push(line);
                if matches!(inst, Instruction::BlockEnd { .. }) {
                    let (block, lines) = current.take().expect("open block");
                    let report = validate(&block);
                    if let Some((at, issue)) = report.issues.first() {
                        return Err(AsmError {
                            line: at.map_or(lines[0], |i| lines[i]),
                            column: 1,
                            kind: AsmErrorKind::Invalid(issue.to_string()),
                        });
                    }
                    blocks.push(block);
                }
            }
        }
    }
    if let Some((_, lines)) = current {
        return Err(AsmError {
            line: lines[0],
            column: 1,
            kind: AsmErrorKind::Syntax("block is not terminated by block-end".into()),
        });
    }
    Ok(blocks)
}

fn tokenize(code: &str) -> impl Iterator<Item = (&str, usize)> {
    let mut pos = 0;
    code.split(|c: char| c.is_whitespace()).filter_map(move |tok| {
        let col = pos + 1;
        pos += tok.len() + 1;
        (!tok.is_empty()).then_some((tok, col))
    })
}

fn parse_instruction(mnemonic: &str, col: usize, f: &mut Fields<'_>) -> Result<Instruction, AsmError> {
    let buf = |f: &mut Fields<'_>| f.parsed("buf", None, ScratchpadKind::parse);
    Ok(match mnemonic {
        "setup" => {
            let mut s = Setup {
                input_bits: f.parsed("ibits", None, bitwidth)?,
                weight_bits: f.parsed("wbits", None, bitwidth)?,
                input_signed: f.flag("isigned", true)?,
                weight_signed: f.flag("wsigned", true)?,
                base_ibuf: f.num("ibase", Some(0))?,
                base_obuf: f.num("obase", Some(0))?,
                base_wbuf: f.num("wbase", Some(0))?,
                post: PostConfig::default(),
            };
            s.post.pooling = f.parsed("pool", Some(Pooling::None), |v| match v {
                "none" => Some(Pooling::None),
                "max" => Some(Pooling::Max),
                _ => None,
            })?;
            s.post.activation = f.parsed("act", Some(Activation::None), |v| match v {
                "none" => Some(Activation::None),
                "relu" => Some(Activation::Relu),
                _ => None,
            })?;
            s.post.requant = Requant {
                shift: f.parsed("shift", Some(0), |v| v.parse().ok().filter(|s: &u32| *s < 64))?,
                out_bits: f.parsed("obits", Some(32), |v| v.parse().ok().filter(|b: &u32| (1..=32).contains(b)))?,
                out_signed: f.flag("osigned", true)?,
            };
            Instruction::Setup(s)
        }
        "block-end" => Instruction::BlockEnd { next: f.num("next", Some(0))? },
        "loop" => Instruction::Loop {
            id: f.num("id", None)?,
            iterations: f.num("iters", None)?,
        },
        "compute" => Instruction::Compute {
            op: f.parsed("op", None, |v| match v {
                "mul-add" => Some(ComputeOp::MulAdd),
                "max" => Some(ComputeOp::Max),
                _ => None,
            })?,
        },
        "gen-addr" => Instruction::GenAddr {
            target: f.parsed("target", None, AddrTarget::parse)?,
            loop_id: f.num("loop", None)?,
            stride: f.num("stride", None)?,
        },
        "ld-mem" => Instruction::LdMem {
            buf: buf(f)?,
            words: f.num("words", None)?,
        },
        "st-mem" => Instruction::StMem {
            buf: buf(f)?,
            words: f.num("words", None)?,
        },
        "rd-buf" => Instruction::RdBuf { buf: buf(f)? },
        "wr-buf" => Instruction::WrBuf { buf: buf(f)? },
        other => {
            return Err(AsmError {
                line: f.line,
                column: col,
                kind: AsmErrorKind::UnknownMnemonic(other.to_string()),
            })
        }
    })
}

/// Canonical text for a list of blocks. Loop bodies are indented for
/// readability; indentation is ignored by the assembler.
pub fn disassemble(blocks: &[InstructionBlock]) -> String {
    let mut out = String::new();
    for (bi, block) in blocks.iter().enumerate() {
        if bi > 0 {
            out.push('\n');
        }
        let mut depth = 0usize;
        for inst in &block.instructions {
            let indent = match inst {
                Instruction::Setup(_) | Instruction::BlockEnd { .. } => 0,
                Instruction::Loop { .. } => {
                    depth += 1;
                    depth - 1
                }
                _ => depth,
            };
            let _ = writeln!(out, "{}{}", "  ".repeat(indent), render(inst));
        }
    }
    out
}

fn flag(b: bool) -> u8 {
    b as u8
}

fn render(inst: &Instruction) -> String {
    match *inst {
        Instruction::Setup(s) => format!(
            "setup ibits={} wbits={} isigned={} wsigned={} ibase={} obase={} wbase={} pool={} act={} shift={} obits={} osigned={}",
            s.input_bits,
            s.weight_bits,
            flag(s.input_signed),
            flag(s.weight_signed),
            s.base_ibuf,
            s.base_obuf,
            s.base_wbuf,
            match s.post.pooling {
                Pooling::None => "none",
                Pooling::Max => "max",
            },
            match s.post.activation {
                Activation::None => "none",
                Activation::Relu => "relu",
            },
            s.post.requant.shift,
            s.post.requant.out_bits,
            flag(s.post.requant.out_signed),
        ),
        Instruction::BlockEnd { next } => format!("block-end next={next}"),
        Instruction::Loop { id, iterations } => format!("loop id={id} iters={iterations}"),
        Instruction::Compute { op } => format!("compute op={}", op.name()),
        Instruction::GenAddr { target, loop_id, stride } => {
            format!("gen-addr target={target} loop={loop_id} stride={stride}")
        }
        Instruction::LdMem { buf, words } => format!("ld-mem buf={} words={words}", buf.name()),
        Instruction::StMem { buf, words } => format!("st-mem buf={} words={words}", buf.name()),
        Instruction::RdBuf { buf } => format!("rd-buf buf={}", buf.name()),
        Instruction::WrBuf { buf } => format!("wr-buf buf={}", buf.name()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
# minimal block
setup ibits=8 wbits=2 ibase=0 obase=64 wbase=16
loop id=0 iters=4
  gen-addr target=mem.ibuf loop=0 stride=1
  gen-addr target=mem.wbuf loop=0 stride=1
  ld-mem buf=ibuf words=1
  ld-mem buf=wbuf words=1
  rd-buf buf=ibuf
  rd-buf buf=wbuf
  rd-buf buf=obuf
  compute op=mul-add
  wr-buf buf=obuf
st-mem buf=obuf words=1   # trailing comment
block-end next=0
";

    #[test]
    fn parses_a_block() {
        let blocks = assemble(SMALL).unwrap();
        assert_eq!(blocks.len(), 1);
        let s = blocks[0].setup().unwrap();
        assert_eq!((s.input_bits.bits(), s.weight_bits.bits()), (8, 2));
        assert_eq!(blocks[0].loops().len(), 1);
    }

    #[test]
    fn empty_input_is_empty() {
        assert_eq!(assemble("").unwrap(), vec![]);
        assert_eq!(assemble("# only a comment\n\n").unwrap(), vec![]);
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let blocks = assemble(SMALL).unwrap();
        let text = disassemble(&blocks);
        let again = assemble(&text).unwrap();
        assert_eq!(again, blocks);
        assert_eq!(disassemble(&again), text);
    }

    #[test]
    fn diagnostics_carry_positions() {
        let e = assemble("setup ibits=8 wbits=2\nfrobnicate x=1\n").unwrap_err();
        assert_eq!((e.line, e.column), (2, 1));
        assert!(matches!(e.kind, AsmErrorKind::UnknownMnemonic(_)));

        let e = assemble("setup ibits=3 wbits=2\n").unwrap_err();
        assert_eq!((e.line, e.column), (1, 13));
        assert!(matches!(e.kind, AsmErrorKind::FieldRange { .. }));

        let e = assemble("setup ibits=8 wbits=2 color=red\nblock-end\n").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::UnknownField(ref f) if f == "color"));

        let e = assemble("loop id=0 iters=2\n").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::Syntax(_)));

        let e = assemble("setup ibits=8 wbits=8\nloop id=1 iters=2\nloop id=1 iters=2\nblock-end\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(matches!(e.kind, AsmErrorKind::Invalid(ref m) if m.contains("duplicate loop id 1")));

        let e = assemble("setup ibits=8 wbits=8\nloop id=1 iters=2\n").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::Syntax(_)));

        let e = assemble("setup ibits=8 wbits=8\nloop id=1\nblock-end\n").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::MissingField("iters")));
    }
}
