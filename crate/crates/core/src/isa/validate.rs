use std::collections::BTreeSet;
use std::fmt;

use super::{Instruction, InstructionBlock, LoopId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Issue {
    NoSetup,
    SetupNotFirst,
    MultipleSetups,
    NoBlockEnd,
    BlockEndNotLast,
    DuplicateLoopId(LoopId),
    UnknownLoop(LoopId),
    DuplicateGenAddr(LoopId),
    MultipleComputes,
    ComputeNotInnermost,
    BadOutputBits(u32),
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::NoSetup => write!(f, "no setup"),
            Issue::SetupNotFirst => write!(f, "setup is not the first instruction"),
            Issue::MultipleSetups => write!(f, "more than one setup"),
            Issue::NoBlockEnd => write!(f, "no block-end"),
            Issue::BlockEndNotLast => write!(f, "block-end is not the last instruction"),
            Issue::DuplicateLoopId(id) => write!(f, "duplicate loop id {id}"),
            Issue::UnknownLoop(id) => write!(f, "gen-addr references undeclared loop {id}"),
            Issue::DuplicateGenAddr(id) => write!(f, "duplicate gen-addr for loop {id} on the same stream"),
            Issue::MultipleComputes => write!(f, "more than one compute"),
            Issue::ComputeNotInnermost => write!(f, "compute is not in the innermost level"),
            Issue::BadOutputBits(b) => write!(f, "output bitwidth {b} outside 1..=32"),
        }
    }
}

/// Problems found in a block, each with the index of the offending
/// instruction (or `None` for whole-block problems).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<(Option<usize>, Issue)>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, at: Option<usize>, issue: Issue) {
        self.issues.push((at, issue));
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (at, issue) in &self.issues {
            match at {
                Some(i) => writeln!(f, "instruction {i}: {issue}")?,
                None => writeln!(f, "{issue}")?,
            }
        }
        Ok(())
    }
}

pub fn validate(block: &InstructionBlock) -> ValidationReport {
    let mut report = ValidationReport::default();
    let insts = &block.instructions;

    let setups: Vec<usize> = positions(insts, |i| matches!(i, Instruction::Setup(_)));
    match setups.first() {
        None => report.push(None, Issue::NoSetup),
        Some(&0) => {}
        Some(&i) => report.push(Some(i), Issue::SetupNotFirst),
    }
    for &i in setups.iter().skip(1) {
        report.push(Some(i), Issue::MultipleSetups);
    }
    if let Some(s) = block.setup() {
        let b = s.post.requant.out_bits;
        if !(1..=32).contains(&b) {
            report.push(setups.first().copied(), Issue::BadOutputBits(b));
        }
    }

    let ends: Vec<usize> = positions(insts, |i| matches!(i, Instruction::BlockEnd { .. }));
    match ends.as_slice() {
        [] => report.push(None, Issue::NoBlockEnd),
        [i] if *i == insts.len() - 1 => {}
        [i] => report.push(Some(*i), Issue::BlockEndNotLast),
        more => {
            for &i in more.iter().filter(|&&i| i != insts.len() - 1) {
                report.push(Some(i), Issue::BlockEndNotLast);
            }
        }
    }

    let mut declared = BTreeSet::new();
    let mut last_loop = None;
    for (i, inst) in insts.iter().enumerate() {
        if let Instruction::Loop { id, .. } = inst {
            if !declared.insert(*id) {
                report.push(Some(i), Issue::DuplicateLoopId(*id));
            }
            last_loop = Some(i);
        }
    }

    let mut seen = BTreeSet::new();
    for (i, inst) in insts.iter().enumerate() {
        if let Instruction::GenAddr { target, loop_id, .. } = inst {
            if !declared.contains(loop_id) {
                report.push(Some(i), Issue::UnknownLoop(*loop_id));
            }
            if !seen.insert((*target, *loop_id)) {
                report.push(Some(i), Issue::DuplicateGenAddr(*loop_id));
            }
        }
    }

    let computes = positions(insts, |i| matches!(i, Instruction::Compute { .. }));
    for &i in computes.iter().skip(1) {
        report.push(Some(i), Issue::MultipleComputes);
    }
    if let (Some(&c), Some(l)) = (computes.first(), last_loop) {
        if c < l {
            report.push(Some(c), Issue::ComputeNotInnermost);
        }
    }
    report
}

fn positions(insts: &[Instruction], pred: impl Fn(&Instruction) -> bool) -> Vec<usize> {
    insts
        .iter()
        .enumerate()
        .filter(|(_, i)| pred(i))
        .map(|(i, _)| i)
        .collect()
}
