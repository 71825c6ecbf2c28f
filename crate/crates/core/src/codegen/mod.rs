//! Lowering of layers to instruction blocks, with loop tiling, loop
//! ordering and layer fusion.
//!
//! A layer first becomes a [`LoopNest`]. Tiling splits every dim into a
//! tile loop and an intra-tile loop; the tile loops are ordered by the
//! schedule's stationarity and the intra-tile loops form the compute
//! region. Each tensor is transferred under the deepest tile loop it
//! depends on, so it stays on chip across every loop nested below.

pub mod network;
mod nest;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nest::{Dim, LoopNest, PlannedLoop};

use crate::arch::ArchConfig;
use crate::array::{Activation, Pooling, PostConfig, Requant, ScratchpadKind};
use crate::fusion::{Bitwidth, FusionConfig, Signs};
use crate::image::Memory;
use crate::isa::{ComputeOp, InstructionBlock, Setup};
use crate::sim::PerBuffer;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodegenError {
    #[error("invalid layer `{layer}`: {msg}")]
    Layer { layer: String, msg: String },
    #[error("infeasible schedule: {0}")]
    Infeasible(String),
    #[error("cannot fuse: {0}")]
    NotFusible(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("tensor `{0}` has no memory region")]
    Unbound(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stationarity {
    #[default]
    Output,
    Weight,
    Input,
}

impl Stationarity {
    pub const ALL: [Stationarity; 3] = [Stationarity::Output, Stationarity::Weight, Stationarity::Input];

    fn resident(self) -> ScratchpadKind {
        match self {
            Stationarity::Output => ScratchpadKind::Obuf,
            Stationarity::Weight => ScratchpadKind::Wbuf,
            Stationarity::Input => ScratchpadKind::Ibuf,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stationarity::Output => "output",
            Stationarity::Weight => "weight",
            Stationarity::Input => "input",
        }
    }
}

/// How a layer's loops are blocked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Without tiling every transfer moves one element from the innermost
    /// loop.
    pub tiled: bool,
    /// Tile sizes by dim name; missing dims are chosen automatically.
    pub tiles: BTreeMap<String, u32>,
    pub stationarity: Stationarity,
}

impl Schedule {
    pub fn untiled() -> Self {
        Self::default()
    }

    pub fn tiled(stationarity: Stationarity) -> Self {
        Self {
            tiled: true,
            tiles: BTreeMap::new(),
            stationarity,
        }
    }

    pub fn with_tile(mut self, dim: &str, size: u32) -> Self {
        self.tiles.insert(dim.to_string(), size);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Fc {
        batch: usize,
        in_features: usize,
        out_features: usize,
    },
    Conv {
        batch: usize,
        height: usize,
        width: usize,
        channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Pool {
        batch: usize,
        height: usize,
        width: usize,
        channels: usize,
        window: usize,
        stride: usize,
    },
    Activation {
        shape: Vec<usize>,
    },
    /// `steps` chained matrix-vector products sharing one square weight
    /// matrix; step `t + 1` consumes the output of step `t`.
    RecurrentGemm {
        batch: usize,
        hidden: usize,
        steps: usize,
    },
}

/// Pooling folded into the preceding convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedPool {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorNames {
    pub input: String,
    pub weights: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    pub kind: LayerKind,
    pub input_bits: Bitwidth,
    pub input_signed: bool,
    pub weight_bits: Bitwidth,
    pub weight_signed: bool,
    pub activation: Activation,
    pub requant: Requant,
    pub fused_pool: Option<FusedPool>,
    pub tensors: TensorNames,
}

impl LayerDescriptor {
    pub fn new(name: &str, kind: LayerKind, input_bits: u32, weight_bits: u32) -> Result<Self, CodegenError> {
        let bw = |b| {
            Bitwidth::from_bits(b).map_err(|e| CodegenError::Layer {
                layer: name.to_string(),
                msg: e.to_string(),
            })
        };
        Ok(Self {
            name: name.to_string(),
            kind,
            input_bits: bw(input_bits)?,
            input_signed: true,
            weight_bits: bw(weight_bits)?,
            weight_signed: true,
            activation: Activation::None,
            requant: Requant::IDENTITY,
            fused_pool: None,
            tensors: TensorNames {
                input: format!("{name}.in"),
                weights: format!("{name}.w"),
                output: format!("{name}.out"),
            },
        })
    }

    pub fn fc(name: &str, batch: usize, in_features: usize, out_features: usize, ibits: u32, wbits: u32) -> Self {
        Self::new(
            name,
            LayerKind::Fc {
                batch,
                in_features,
                out_features,
            },
            ibits,
            wbits,
        )
        .expect("valid bitwidths")
    }

    fn err(&self, msg: impl Into<String>) -> CodegenError {
        CodegenError::Layer {
            layer: self.name.clone(),
            msg: msg.into(),
        }
    }

    pub fn uses_array(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Fc { .. } | LayerKind::Conv { .. } | LayerKind::RecurrentGemm { .. }
        )
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match &self.kind {
            LayerKind::Fc { batch, in_features, .. } => vec![*batch, *in_features],
            LayerKind::Conv {
                batch,
                height,
                width,
                channels,
                ..
            }
            | LayerKind::Pool {
                batch,
                height,
                width,
                channels,
                ..
            } => vec![*batch, *height, *width, *channels],
            LayerKind::Activation { shape } => shape.clone(),
            LayerKind::RecurrentGemm { batch, hidden, .. } => vec![*batch, *hidden],
        }
    }

    /// Empty for layers without weights.
    pub fn weight_shape(&self) -> Vec<usize> {
        match &self.kind {
            LayerKind::Fc {
                in_features,
                out_features,
                ..
            } => vec![*in_features, *out_features],
            LayerKind::Conv {
                channels,
                out_channels,
                kernel,
                ..
            } => vec![*kernel, *kernel, *channels, *out_channels],
            LayerKind::RecurrentGemm { hidden, .. } => vec![*hidden, *hidden],
            _ => vec![],
        }
    }

    /// Output shape before any fused pooling.
    fn raw_output_shape(&self) -> Vec<usize> {
        match &self.kind {
            LayerKind::Fc { batch, out_features, .. } => vec![*batch, *out_features],
            LayerKind::Conv {
                batch,
                height,
                width,
                out_channels,
                kernel,
                stride,
                ..
            } => vec![
                *batch,
                out_len(*height, *kernel, *stride),
                out_len(*width, *kernel, *stride),
                *out_channels,
            ],
            LayerKind::Pool {
                batch,
                height,
                width,
                channels,
                window,
                stride,
            } => vec![
                *batch,
                out_len(*height, *window, *stride),
                out_len(*width, *window, *stride),
                *channels,
            ],
            LayerKind::Activation { shape } => shape.clone(),
            LayerKind::RecurrentGemm { batch, hidden, .. } => vec![*batch, *hidden],
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let raw = self.raw_output_shape();
        match self.fused_pool {
            Some(p) => vec![
                raw[0],
                out_len(raw[1], p.window, p.stride),
                out_len(raw[2], p.window, p.stride),
                raw[3],
            ],
            None => raw,
        }
    }

    pub fn output_bits(&self) -> u32 {
        self.requant.out_bits
    }

    pub fn validate(&self) -> Result<(), CodegenError> {
        let positive = |v: &[usize], what: &str| {
            if v.contains(&0) {
                Err(self.err(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        positive(&self.input_shape(), "input shape")?;
        positive(&self.weight_shape(), "weight shape")?;
        let window_fits = |len: usize, k: usize, s: usize| k >= 1 && s >= 1 && k <= len;
        match &self.kind {
            LayerKind::Conv {
                height,
                width,
                kernel,
                stride,
                ..
            } => {
                if !window_fits(*height, *kernel, *stride) || !window_fits(*width, *kernel, *stride) {
                    return Err(self.err("kernel does not fit the input"));
                }
            }
            LayerKind::Pool {
                height,
                width,
                window,
                stride,
                ..
            } => {
                if !window_fits(*height, *window, *stride) || !window_fits(*width, *window, *stride) {
                    return Err(self.err("window does not fit the input"));
                }
            }
            LayerKind::RecurrentGemm { steps, .. } if *steps == 0 => return Err(self.err("steps must be positive")),
            _ => {}
        }
        if let Some(p) = self.fused_pool {
            let raw = self.raw_output_shape();
            if !matches!(self.kind, LayerKind::Conv { .. })
                || !window_fits(raw[1], p.window, p.stride)
                || !window_fits(raw[2], p.window, p.stride)
            {
                return Err(self.err("fused pooling needs a convolution whose output fits the window"));
            }
        }
        let r = self.requant;
        if !(1..=32).contains(&r.out_bits) {
            return Err(self.err(format!("output bitwidth {} unsupported", r.out_bits)));
        }
        Ok(())
    }

    /// Splits recurrent layers into their per-step matrix-vector layers;
    /// other layers are returned unchanged.
    pub fn expand(&self) -> Vec<LayerDescriptor> {
        let LayerKind::RecurrentGemm { batch, hidden, steps } = self.kind else {
            return vec![self.clone()];
        };
        (0..steps)
            .map(|t| {
                let mut d = self.clone();
                d.name = format!("{}.t{t}", self.name);
                d.kind = LayerKind::Fc {
                    batch,
                    in_features: hidden,
                    out_features: hidden,
                };
                d.tensors = TensorNames {
                    input: if t == 0 {
                        self.tensors.input.clone()
                    } else {
                        format!("{}.h{}", self.name, t)
                    },
                    weights: self.tensors.weights.clone(),
                    output: if t + 1 == steps {
                        self.tensors.output.clone()
                    } else {
                        format!("{}.h{}", self.name, t + 1)
                    },
                };
                d
            })
            .collect()
    }

    fn setup(&self) -> Setup {
        let (wbits, wsigned) = if self.uses_array() {
            (self.weight_bits, self.weight_signed)
        } else {
            (self.input_bits, false)
        };
        let mut s = Setup::new(
            FusionConfig::new(self.input_bits, wbits),
            Signs::new(self.input_signed, wsigned),
        );
        s.post = PostConfig {
            pooling: if self.fused_pool.is_some() { Pooling::Max } else { Pooling::None },
            activation: self.activation,
            requant: self.requant,
        };
        s
    }

    /// The layer as a loop nest (recurrent layers must be expanded first).
    pub fn nest(&self) -> Result<LoopNest, CodegenError> {
        use ScratchpadKind::{Ibuf as I, Obuf as O, Wbuf as W};
        self.validate()?;
        let mut dims = Vec::new();
        let mut pinned = Vec::new();
        let op = if self.uses_array() { ComputeOp::MulAdd } else { ComputeOp::Max };
        match self.kind.clone() {
            LayerKind::Fc {
                batch,
                in_features,
                out_features,
            } => {
                dims.push(Dim::new("b", batch).on(I, 0, 1).on(O, 0, 1));
                dims.push(Dim::new("oc", out_features).on(W, 1, 1).on(O, 1, 1));
                dims.push(Dim::new("ic", in_features).on(I, 1, 1).on(W, 0, 1));
                if self.fused_pool.is_some() {
                    return Err(self.err("pooling cannot follow a fully-connected layer"));
                }
            }
            LayerKind::Conv {
                batch,
                channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let raw = self.raw_output_shape();
                if batch > 1 {
                    dims.push(Dim::new("n", batch).on(I, 0, 1).on(O, 0, 1));
                }
                let (ph, pw, ps) = match self.fused_pool {
                    Some(p) => {
                        let o = self.output_shape();
                        (o[1], o[2], p.stride)
                    }
                    None => (raw[1], raw[2], 1),
                };
                dims.push(Dim::new("oy", ph).on(I, 1, ps * stride).on(O, 1, 1));
                dims.push(Dim::new("ox", pw).on(I, 2, ps * stride).on(O, 2, 1));
                dims.push(Dim::new("oc", out_channels).on(W, 3, 1).on(O, 3, 1));
                if let Some(p) = self.fused_pool {
                    pinned.push(dims.len());
                    dims.push(Dim::new("wy", p.window).on(I, 1, stride));
                    pinned.push(dims.len());
                    dims.push(Dim::new("wx", p.window).on(I, 2, stride));
                }
                let red = dims.len();
                dims.push(Dim::new("ky", kernel).on(I, 1, 1).on(W, 0, 1));
                dims.push(Dim::new("kx", kernel).on(I, 2, 1).on(W, 1, 1));
                dims.push(Dim::new("ic", channels).on(I, 3, 1).on(W, 2, 1));
                if self.fused_pool.is_some() {
                    pinned.extend(red..red + 3);
                }
            }
            LayerKind::Pool {
                batch,
                channels,
                window,
                stride,
                ..
            } => {
                let o = self.output_shape();
                if batch > 1 {
                    dims.push(Dim::new("n", batch).on(I, 0, 1).on(O, 0, 1));
                }
                dims.push(Dim::new("oy", o[1]).on(I, 1, stride).on(O, 1, 1));
                dims.push(Dim::new("ox", o[2]).on(I, 2, stride).on(O, 2, 1));
                dims.push(Dim::new("c", channels).on(I, 3, 1).on(O, 3, 1));
                pinned.push(dims.len());
                dims.push(Dim::new("wy", window).on(I, 1, 1));
                pinned.push(dims.len());
                dims.push(Dim::new("wx", window).on(I, 2, 1));
            }
            LayerKind::Activation { shape } => {
                for (a, &e) in shape.iter().enumerate() {
                    dims.push(Dim::new(&format!("d{a}"), e).on(I, a, 1).on(O, a, 1));
                }
            }
            LayerKind::RecurrentGemm { .. } => {
                return Err(CodegenError::Unsupported(format!(
                    "recurrent layer `{}` lowers to several blocks; expand it first",
                    self.name
                )))
            }
        }
        let weights = self.weight_shape();
        Ok(LoopNest {
            dims,
            shapes: PerBuffer {
                ibuf: self.input_shape(),
                obuf: self.output_shape(),
                wbuf: weights,
            },
            names: PerBuffer {
                ibuf: self.tensors.input.clone(),
                obuf: self.tensors.output.clone(),
                wbuf: if self.uses_array() { self.tensors.weights.clone() } else { String::new() },
            },
            op,
            setup: self.setup(),
            pinned,
        })
    }
}

fn out_len(len: usize, window: usize, stride: usize) -> usize {
    if window > len || stride == 0 {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// A lowered layer: its descriptor, the schedule it was lowered with, the
/// resolved tile sizes (empty when untiled) and the block.
#[derive(Debug, Clone, PartialEq)]
pub struct Lowered {
    pub desc: LayerDescriptor,
    pub schedule: Schedule,
    pub nest: LoopNest,
    pub tiles: Vec<u32>,
    pub block: InstructionBlock,
}

impl Lowered {
    /// Writes the memory addresses of the layer's tensors into the setup.
    pub fn bind(&mut self, mem: &Memory) -> Result<(), CodegenError> {
        let setup = self.block.setup_mut().expect("lowered blocks have a setup");
        for kind in self.nest.kinds() {
            let name = self.nest.names.get(kind);
            let region = mem.region(name).ok_or_else(|| CodegenError::Unbound(name.clone()))?;
            setup.set_base(kind, region.addr);
        }
        Ok(())
    }

    pub fn tile(&self, dim: &str) -> Option<u32> {
        let d = self.nest.dims.iter().position(|x| x.name == dim)?;
        self.tiles.get(d).copied()
    }
}

/// Per-slot scratchpad capacities in bits.
pub fn capacities(arch: &ArchConfig) -> PerBuffer<u64> {
    PerBuffer {
        ibuf: arch.ibuf_bits,
        obuf: arch.obuf_bits,
        wbuf: arch.wbuf_bits,
    }
}

fn fits(nest: &LoopNest, tiles: &[u32], caps: &PerBuffer<u64>) -> Option<ScratchpadKind> {
    nest.kinds()
        .into_iter()
        .find(|&k| nest.tile_box(k, tiles) * nest.elem_bits(k) > *caps.get(k))
}

fn divisors_desc(n: u32) -> impl Iterator<Item = u32> {
    (1..=n).rev().filter(move |d| n.is_multiple_of(*d))
}

/// Resolves tile sizes: explicit ones are checked, pinned dims take their
/// full extent, the rest get the largest divisor of their extent that still
/// fits, innermost dim first.
pub fn choose_tiles(
    nest: &LoopNest,
    explicit: &BTreeMap<String, u32>,
    caps: &PerBuffer<u64>,
) -> Result<Vec<u32>, CodegenError> {
    for name in explicit.keys() {
        if !nest.dims.iter().any(|d| &d.name == name) {
            return Err(CodegenError::Infeasible(format!("no loop dimension named `{name}`")));
        }
    }
    let mut tiles = vec![1u32; nest.dims.len()];
    let mut fixed = vec![false; nest.dims.len()];
    for (d, dim) in nest.dims.iter().enumerate() {
        if let Some(&t) = explicit.get(&dim.name) {
            if t == 0 || dim.extent % t != 0 {
                return Err(CodegenError::Infeasible(format!(
                    "tile {t} does not divide `{}` extent {}",
                    dim.name, dim.extent
                )));
            }
            if nest.pinned.contains(&d) && t != dim.extent {
                return Err(CodegenError::Infeasible(format!(
                    "`{}` must stay whole inside the compute region",
                    dim.name
                )));
            }
            tiles[d] = t;
            fixed[d] = true;
        } else if nest.pinned.contains(&d) {
            tiles[d] = dim.extent;
            fixed[d] = true;
        }
    }
    if let Some(k) = fits(nest, &tiles, caps) {
        return Err(CodegenError::Infeasible(format!(
            "{} tile of {} elements exceeds {} bits",
            k.name(),
            nest.tile_box(k, &tiles),
            caps.get(k)
        )));
    }
    for d in (0..nest.dims.len()).rev().filter(|&d| !fixed[d]) {
        for t in divisors_desc(nest.dims[d].extent) {
            tiles[d] = t;
            if fits(nest, &tiles, caps).is_none() {
                break;
            }
        }
    }
    Ok(tiles)
}

/// Tile loops that keep the stationary tensor's dims outermost.
pub fn tile_order(nest: &LoopNest, stationarity: Stationarity) -> Vec<usize> {
    let mut keep = stationarity.resident();
    if nest.op == ComputeOp::Max && keep == ScratchpadKind::Wbuf {
        keep = ScratchpadKind::Obuf;
    }
    let (outer, inner): (Vec<usize>, Vec<usize>) = (0..nest.dims.len()).partition(|&d| nest.dims[d].touches(keep));
    outer.into_iter().chain(inner).collect()
}

/// Lowers a single-block layer.
pub fn lower(layer: &LayerDescriptor, arch: &ArchConfig, sched: &Schedule) -> Result<Lowered, CodegenError> {
    let nest = layer.nest()?;
    let (tiles, block) = if sched.tiled {
        let tiles = choose_tiles(&nest, &sched.tiles, &capacities(arch))?;
        let loops = nest.tiled_loops(&tiles, &tile_order(&nest, sched.stationarity));
        (tiles, nest.emit(&loops, false)?)
    } else {
        if !nest.pinned.is_empty() && nest.op == ComputeOp::MulAdd {
            return Err(CodegenError::Unsupported(format!(
                "`{}` has fused pooling, which needs a tiled schedule",
                layer.name
            )));
        }
        (Vec::new(), nest.emit(&nest.untiled_loops(), true)?)
    };
    let report = crate::isa::validate(&block);
    debug_assert!(report.is_ok(), "{report}");
    Ok(Lowered {
        desc: layer.clone(),
        schedule: sched.clone(),
        nest,
        tiles,
        block,
    })
}

/// Lowers any layer, expanding recurrent layers into one block per step.
pub fn lower_layer(layer: &LayerDescriptor, arch: &ArchConfig, sched: &Schedule) -> Result<Vec<Lowered>, CodegenError> {
    layer.expand().iter().map(|d| lower(d, arch, sched)).collect()
}

/// Re-lowers with tiles chosen for `caps`.
pub fn tile_loops(l: &Lowered, caps: &PerBuffer<u64>) -> Result<Lowered, CodegenError> {
    let arch = ArchConfig {
        ibuf_bits: caps.ibuf,
        obuf_bits: caps.obuf,
        wbuf_bits: caps.wbuf,
        ..ArchConfig::default()
    };
    let sched = Schedule {
        tiled: true,
        ..l.schedule.clone()
    };
    lower(&l.desc, &arch, &sched).map(|mut out| {
        out.block.setup_mut().expect("setup").clone_from(l.block.setup().expect("setup"));
        out
    })
}

/// Re-orders the tile loops of a tiled layer (same tile sizes).
pub fn order_loops(l: &Lowered, stationarity: Stationarity) -> Result<Lowered, CodegenError> {
    if !l.schedule.tiled {
        return Ok(l.clone());
    }
    let loops = l.nest.tiled_loops(&l.tiles, &tile_order(&l.nest, stationarity));
    let mut block = l.nest.emit(&loops, false)?;
    block.setup_mut().expect("setup").clone_from(l.block.setup().expect("setup"));
    Ok(Lowered {
        schedule: Schedule {
            stationarity,
            ..l.schedule.clone()
        },
        block,
        ..l.clone()
    })
}

/// The descriptor of `a` followed by `b` run as one block, when `b` only
/// needs the column post units.
pub fn fuse_descriptors(a: &LayerDescriptor, b: &LayerDescriptor) -> Result<LayerDescriptor, CodegenError> {
    if a.uses_array() && b.uses_array() {
        return Err(CodegenError::NotFusible(format!(
            "`{}` and `{}` both need the systolic array",
            a.name, b.name
        )));
    }
    if !a.uses_array() {
        return Err(CodegenError::NotFusible(format!("`{}` does not run on the array", a.name)));
    }
    if a.fused_pool.is_some() {
        return Err(CodegenError::NotFusible(format!("`{}` already uses its post units", a.name)));
    }
    if b.tensors.input != a.tensors.output || b.input_shape() != a.output_shape() {
        return Err(CodegenError::NotFusible(format!("`{}` does not consume `{}`", b.name, a.name)));
    }
    if b.requant.shift != 0 || b.requant.out_bits != a.requant.out_bits || b.requant.out_signed != a.requant.out_signed {
        return Err(CodegenError::NotFusible(format!(
            "`{}` requantizes; only shift-free post layers with matching output format fuse",
            b.name
        )));
    }
    let mut fused = a.clone();
    fused.name = format!("{}+{}", a.name, b.name);
    fused.tensors.output = b.tensors.output.clone();
    if b.activation == Activation::Relu {
        fused.activation = Activation::Relu;
    }
    match b.kind {
        LayerKind::Activation { .. } => {}
        LayerKind::Pool { window, stride, .. } => {
            if !matches!(a.kind, LayerKind::Conv { .. }) {
                return Err(CodegenError::NotFusible("pooling fuses only after a convolution".into()));
            }
            fused.fused_pool = Some(FusedPool { window, stride });
        }
        _ => unreachable!("array layers handled above"),
    }
    fused.validate()?;
    Ok(fused)
}

/// Fuses two lowered layers into one block (lowered with `a`'s schedule,
/// tiled even if `a` was not, since the pooling window must stay inside one
/// compute region).
pub fn fuse_layers(a: &Lowered, b: &Lowered, arch: &ArchConfig) -> Result<Lowered, CodegenError> {
    let desc = fuse_descriptors(&a.desc, &b.desc)?;
    let mut sched = a.schedule.clone();
    if desc.fused_pool.is_some() {
        sched.tiled = true;
    }
    lower(&desc, arch, &sched)
}

/// Loop instructions in a block.
pub fn loop_count(block: &InstructionBlock) -> usize {
    block.loops().len()
}
