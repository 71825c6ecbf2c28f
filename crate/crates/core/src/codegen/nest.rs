//! Affine loop-nest form of a layer and its emission as an instruction
//! block.

use serde::{Deserialize, Serialize};

use super::CodegenError;
use crate::array::ScratchpadKind;
use crate::isa::{AddrTarget, ComputeOp, Instruction, InstructionBlock, LoopId, Setup};
use crate::sim::PerBuffer;

/// One iteration dimension. `coef` maps it onto tensor axes as
/// `(axis, multiplier)` pairs, per tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub extent: u32,
    pub coef: PerBuffer<Vec<(usize, u64)>>,
}

impl Dim {
    pub fn new(name: &str, extent: usize) -> Self {
        Self {
            name: name.to_string(),
            extent: extent as u32,
            coef: PerBuffer::default(),
        }
    }

    pub fn on(mut self, kind: ScratchpadKind, axis: usize, mult: usize) -> Self {
        self.coef.get_mut(kind).push((axis, mult as u64));
        self
    }

    pub fn touches(&self, kind: ScratchpadKind) -> bool {
        !self.coef.get(kind).is_empty()
    }

    /// Dims that do not move the output are reduced.
    pub fn is_reduction(&self) -> bool {
        !self.touches(ScratchpadKind::Obuf)
    }
}

/// A layer as an affine loop nest over row-major tensors. The weight
/// tensor is absent (empty shape, no coefficients) for max blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopNest {
    pub dims: Vec<Dim>,
    pub shapes: PerBuffer<Vec<usize>>,
    pub names: PerBuffer<String>,
    pub op: ComputeOp,
    pub setup: Setup,
    /// Dims that must stay whole inside the compute region.
    pub pinned: Vec<usize>,
}

/// One emitted loop: a dim, or the tile-stepping half of a split dim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedLoop {
    pub dim: usize,
    pub extent: u32,
    pub scale: u64,
    pub tile: bool,
}

fn row_major(shape: &[usize]) -> Vec<u64> {
    let mut s = vec![1u64; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1] as u64;
    }
    s
}

impl LoopNest {
    pub fn kinds(&self) -> Vec<ScratchpadKind> {
        match self.op {
            ComputeOp::MulAdd => ScratchpadKind::ALL.to_vec(),
            ComputeOp::Max => vec![ScratchpadKind::Ibuf, ScratchpadKind::Obuf],
        }
    }

    pub fn elem_bits(&self, kind: ScratchpadKind) -> u64 {
        match kind {
            ScratchpadKind::Ibuf => self.setup.input_bits.bits() as u64,
            ScratchpadKind::Wbuf => self.setup.weight_bits.bits() as u64,
            ScratchpadKind::Obuf => 32,
        }
    }

    /// Elements of the bounding box a tile of sizes `tiles` spans in one
    /// tensor.
    pub fn tile_box(&self, kind: ScratchpadKind, tiles: &[u32]) -> u64 {
        self.local_extents(kind, self.dims.iter().enumerate().map(|(d, _)| (d, tiles[d], 1)))
            .iter()
            .product()
    }

    fn local_extents(&self, kind: ScratchpadKind, loops: impl Iterator<Item = (usize, u32, u64)>) -> Vec<u64> {
        let mut ext = vec![1u64; self.shapes.get(kind).len()];
        for (d, n, scale) in loops {
            for &(axis, m) in self.dims[d].coef.get(kind) {
                ext[axis] += (n.max(1) as u64 - 1) * m * scale;
            }
        }
        ext
    }

    /// Loops for the untiled form: one per dim, in dim order.
    pub fn untiled_loops(&self) -> Vec<PlannedLoop> {
        self.dims
            .iter()
            .enumerate()
            .map(|(d, dim)| PlannedLoop {
                dim: d,
                extent: dim.extent,
                scale: 1,
                tile: false,
            })
            .collect()
    }

    /// Tile loops in `order` (dim indices), then intra-tile loops in dim
    /// order.
    pub fn tiled_loops(&self, tiles: &[u32], order: &[usize]) -> Vec<PlannedLoop> {
        let mut loops: Vec<PlannedLoop> = order
            .iter()
            .map(|&d| PlannedLoop {
                dim: d,
                extent: self.dims[d].extent / tiles[d],
                scale: tiles[d] as u64,
                tile: true,
            })
            .collect();
        loops.extend(self.dims.iter().enumerate().map(|(d, _)| PlannedLoop {
            dim: d,
            extent: tiles[d],
            scale: 1,
            tile: false,
        }));
        loops
    }

    /// Emits the block. With `untiled`, every transfer sits in the
    /// innermost loop and moves a single element; otherwise each tensor's
    /// transfers sit under the deepest tile loop it depends on.
    pub fn emit(&self, loops: &[PlannedLoop], untiled: bool) -> Result<InstructionBlock, CodegenError> {
        let kinds = self.kinds();
        let n = loops.len();
        let level = |kind: ScratchpadKind| -> usize {
            if untiled {
                return n;
            }
            loops
                .iter()
                .enumerate()
                .filter(|(_, l)| l.tile && l.extent > 1 && self.dims[l.dim].touches(kind))
                .map(|(i, _)| i + 1)
                .max()
                .unwrap_or(0)
        };

        let mut insts = vec![Instruction::Setup(self.setup)];
        let mut levels = PerBuffer::<usize>::default();
        for &kind in &kinds {
            let lvl = level(kind);
            *levels.get_mut(kind) = lvl;
            let gstride = row_major(self.shapes.get(kind));
            let local = self.local_extents(kind, loops[lvl..].iter().map(|l| (l.dim, l.extent, l.scale)));
            let lstride = row_major(&local.iter().map(|&e| e as usize).collect::<Vec<_>>());
            for (i, l) in loops.iter().enumerate() {
                if l.extent <= 1 {
                    continue;
                }
                let coef = self.dims[l.dim].coef.get(kind);
                let mem: u64 = coef.iter().map(|&(a, m)| m * l.scale * gstride[a]).sum();
                let buf: u64 = if i >= lvl {
                    coef.iter().map(|&(a, m)| m * l.scale * lstride[a]).sum()
                } else {
                    0
                };
                for (space, stride) in [(AddrTarget::mem(kind), mem), (AddrTarget::on_chip(kind), buf)] {
                    if stride > 0 {
                        insts.push(Instruction::GenAddr {
                            target: space,
                            loop_id: i as LoopId,
                            stride: u32::try_from(stride)
                                .map_err(|_| CodegenError::Infeasible(format!("stride {stride} exceeds 32 bits")))?,
                        });
                    }
                }
            }
        }

        let reduction_outside = |lvl: usize| {
            loops[..lvl.min(n)]
                .iter()
                .any(|l| l.extent > 1 && self.dims[l.dim].is_reduction())
        };
        let obuf_level = *levels.get(ScratchpadKind::Obuf);
        // Untiled nests keep reductions innermost, so the running sum never
        // leaves its buffer slot and is only written through.
        let load_obuf = !untiled && reduction_outside(obuf_level);
        let words_placeholder = 0;

        for d in 0..=n {
            if d > 0 {
                let l = loops[d - 1];
                insts.push(Instruction::Loop {
                    id: (d - 1) as LoopId,
                    iterations: l.extent,
                });
            }
            for &kind in &kinds {
                if kind == ScratchpadKind::Obuf {
                    if d == obuf_level && load_obuf {
                        insts.push(Instruction::LdMem {
                            buf: kind,
                            words: words_placeholder,
                        });
                    }
                } else if *levels.get(kind) == d {
                    insts.push(Instruction::LdMem {
                        buf: kind,
                        words: words_placeholder,
                    });
                }
            }
            if d == n {
                for &kind in &kinds {
                    if kind != ScratchpadKind::Obuf {
                        insts.push(Instruction::RdBuf { buf: kind });
                    }
                }
                insts.push(Instruction::RdBuf {
                    buf: ScratchpadKind::Obuf,
                });
                insts.push(Instruction::Compute { op: self.op });
                insts.push(Instruction::WrBuf {
                    buf: ScratchpadKind::Obuf,
                });
            }
            if d == obuf_level {
                insts.push(Instruction::StMem {
                    buf: ScratchpadKind::Obuf,
                    words: words_placeholder,
                });
            }
        }
        insts.push(Instruction::BlockEnd { next: 0 });

        let mut block = InstructionBlock::new(insts);
        let fills: Vec<(usize, ScratchpadKind, usize)> = {
            let levels_of = block.levels();
            let mut v = Vec::new();
            for (d, lv) in levels_of.iter().enumerate() {
                for &i in &lv.body {
                    if let Instruction::LdMem { buf, .. } | Instruction::StMem { buf, .. } = block.instructions[i] {
                        v.push((i, buf, d));
                    }
                }
            }
            v
        };
        for (i, kind, d) in fills {
            let words = block.footprint(d, kind).len();
            let words = u32::try_from(words).map_err(|_| CodegenError::Infeasible("transfer too large".into()))?;
            match &mut block.instructions[i] {
                Instruction::LdMem { words: w, .. } | Instruction::StMem { words: w, .. } => *w = words,
                _ => unreachable!(),
            }
        }
        Ok(block)
    }
}
