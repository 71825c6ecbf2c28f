//! Network description files, whole-network compilation and the
//! reference evaluation of a network.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{fuse_descriptors, lower, CodegenError, FusedPool, LayerDescriptor, LayerKind, Lowered, Schedule, Stationarity, TensorNames};
use crate::arch::ArchConfig;
use crate::array::{Activation, Requant};
use crate::fusion::{value_range, Bitwidth};
use crate::image::{ImageError, Memory};
use crate::isa::InstructionBlock;
use crate::refmodel::{act_ref, conv_ref, gemm_ref, pool_ref, requant_ref, RefError, Tensor};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("parsing network: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("layer {index} (`{name}`): {msg}")]
    Layer { index: usize, name: String, msg: String },
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Reference(#[from] RefError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerType {
    Fc,
    Conv,
    Pool,
    Activation,
    Recurrent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    /// `[batch, features]` or `[batch, height, width, channels]`.
    pub shape: Vec<usize>,
    pub bits: u32,
    #[serde(default = "yes")]
    pub signed: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: Option<String>,
    pub kind: Option<LayerType>,
    pub out_features: Option<usize>,
    pub out_channels: Option<usize>,
    pub kernel: Option<usize>,
    pub stride: Option<usize>,
    pub window: Option<usize>,
    pub steps: Option<usize>,
    pub weight_bits: Option<u32>,
    pub weight_signed: Option<bool>,
    pub act: Option<Activation>,
    pub shift: Option<u32>,
    pub out_bits: Option<u32>,
    pub out_signed: Option<bool>,
    pub tiled: Option<bool>,
    pub stationarity: Option<Stationarity>,
    #[serde(default)]
    pub tiles: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    #[serde(default)]
    pub name: String,
    pub input: InputSpec,
    #[serde(default, rename = "layer")]
    pub layers: Vec<LayerSpec>,
}

/// Name of the network input tensor in memory.
pub const INPUT_TENSOR: &str = "input";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompileOptions {
    /// Replaces the leading (batch) dimension of the input shape.
    pub batch: Option<usize>,
    /// Merge array layers with a following activation or pooling layer.
    pub fuse: bool,
    /// Used for every layer instead of the per-layer settings.
    pub schedule: Option<Schedule>,
}

/// A compiled network: lowered layers bound to a memory image holding the
/// input and the synthetic weights.
#[derive(Debug, Clone)]
pub struct Program {
    pub layers: Vec<Lowered>,
    /// Per-layer descriptors before fusion, for reference evaluation.
    pub unfused: Vec<LayerDescriptor>,
    pub memory: Memory,
    pub output: String,
    pub batch: usize,
}

impl Program {
    pub fn blocks(&self) -> Vec<InstructionBlock> {
        self.layers.iter().map(|l| l.block.clone()).collect()
    }
}

impl Network {
    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network serializes")
    }

    /// Per-layer descriptors and schedules, shapes propagated from the
    /// input.
    pub fn descriptors(&self, opts: &CompileOptions) -> Result<Vec<(LayerDescriptor, Schedule)>, NetworkError> {
        let mut shape = self.input.shape.clone();
        if let (Some(b), Some(first)) = (opts.batch, shape.first_mut()) {
            *first = b;
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(NetworkError::Layer {
                index: 0,
                name: INPUT_TENSOR.into(),
                msg: format!("input shape {shape:?} must be non-empty and positive"),
            });
        }
        let mut bits = self.input.bits;
        let mut signed = self.input.signed;
        let mut tensor = INPUT_TENSOR.to_string();
        let mut out = Vec::new();
        for (index, spec) in self.layers.iter().enumerate() {
            let name = spec.name.clone().unwrap_or_else(|| format!("l{index}"));
            let err = |msg: String| NetworkError::Layer {
                index,
                name: name.clone(),
                msg,
            };
            let need = |v: Option<usize>, what: &str| v.ok_or_else(|| err(format!("`{what}` is required")));
            let batch = shape[0];
            let spatial = || -> Result<[usize; 3], NetworkError> {
                match shape.as_slice() {
                    [_, h, w, c] => Ok([*h, *w, *c]),
                    _ => Err(err(format!("needs a [batch, height, width, channels] input, got {shape:?}"))),
                }
            };
            let flat: usize = shape[1..].iter().product();
            let kind = match spec.kind.ok_or_else(|| err("`kind` is required".into()))? {
                LayerType::Fc => LayerKind::Fc {
                    batch,
                    in_features: flat,
                    out_features: need(spec.out_features, "out_features")?,
                },
                LayerType::Conv => {
                    let [height, width, channels] = spatial()?;
                    LayerKind::Conv {
                        batch,
                        height,
                        width,
                        channels,
                        out_channels: need(spec.out_channels, "out_channels")?,
                        kernel: need(spec.kernel, "kernel")?,
                        stride: spec.stride.unwrap_or(1),
                    }
                }
                LayerType::Pool => {
                    let [height, width, channels] = spatial()?;
                    let window = need(spec.window, "window")?;
                    LayerKind::Pool {
                        batch,
                        height,
                        width,
                        channels,
                        window,
                        stride: spec.stride.unwrap_or(window),
                    }
                }
                LayerType::Activation => LayerKind::Activation { shape: shape.clone() },
                LayerType::Recurrent => LayerKind::RecurrentGemm {
                    batch,
                    hidden: flat,
                    steps: need(spec.steps, "steps")?,
                },
            };
            let is_act = matches!(kind, LayerKind::Activation { .. });
            let mut d = LayerDescriptor::new(&name, kind, bits, spec.weight_bits.unwrap_or(8))
                .map_err(|e| err(format!("{e} (input bits come from the previous layer's out_bits)")))?;
            d.input_signed = signed;
            d.weight_signed = spec.weight_signed.unwrap_or(true);
            d.activation = spec.act.unwrap_or(if is_act { Activation::Relu } else { Activation::None });
            d.requant = Requant {
                shift: spec.shift.unwrap_or(0),
                out_bits: spec.out_bits.unwrap_or(bits),
                out_signed: spec.out_signed.unwrap_or(true),
            };
            if matches!(d.kind, LayerKind::RecurrentGemm { .. })
                && (d.requant.out_bits != bits || d.requant.out_signed != signed)
            {
                return Err(err("a recurrent layer must output its input format".into()));
            }
            d.tensors = TensorNames {
                input: tensor.clone(),
                weights: format!("{name}.w"),
                output: format!("{name}.out"),
            };
            d.validate().map_err(|e| err(e.to_string()))?;
            let sched = opts.schedule.clone().unwrap_or(Schedule {
                tiled: spec.tiled.unwrap_or(true),
                tiles: spec.tiles.clone(),
                stationarity: spec.stationarity.unwrap_or_default(),
            });
            shape = d.output_shape();
            bits = d.requant.out_bits;
            signed = d.requant.out_signed;
            tensor = d.tensors.output.clone();
            out.push((d, sched));
        }
        Ok(out)
    }

    pub fn compile(&self, arch: &ArchConfig, opts: &CompileOptions) -> Result<Program, NetworkError> {
        let descs = self.descriptors(opts)?;
        let mut expanded: Vec<(LayerDescriptor, Schedule)> = Vec::new();
        for (d, s) in &descs {
            expanded.extend(d.expand().into_iter().map(|e| (e, s.clone())));
        }
        let unfused: Vec<LayerDescriptor> = expanded.iter().map(|(d, _)| d.clone()).collect();

        let mut merged: Vec<(LayerDescriptor, Schedule)> = Vec::new();
        for (d, s) in expanded {
            if opts.fuse {
                if let Some((prev, ps)) = merged.last_mut() {
                    if let Ok(f) = fuse_descriptors(prev, &d) {
                        *prev = f;
                        if prev.fused_pool.is_some() {
                            ps.tiled = true;
                        }
                        continue;
                    }
                }
            }
            merged.push((d, s));
        }

        let mut layers = merged
            .iter()
            .map(|(d, s)| lower(d, arch, s))
            .collect::<Result<Vec<_>, _>>()?;

        let input_shape = descs
            .first()
            .map_or_else(|| self.input.shape.clone(), |(d, _)| d.input_shape());
        let input_shape = match (opts.batch, descs.is_empty()) {
            (Some(b), true) => {
                let mut s = input_shape;
                s[0] = b;
                s
            }
            _ => input_shape,
        };
        let batch = input_shape[0];
        let mut memory = Memory::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.input.seed);
        memory.allocate(INPUT_TENSOR, input_shape.clone(), self.input.bits, self.input.signed)?;
        let x = random_tensor(&mut rng, input_shape, self.input.bits, self.input.signed);
        memory.write_tensor(INPUT_TENSOR, &x)?;
        for l in &layers {
            let d = &l.desc;
            if d.uses_array() && memory.region(&d.tensors.weights).is_none() {
                let (shape, bits) = (d.weight_shape(), d.weight_bits.bits());
                memory.allocate(&d.tensors.weights, shape.clone(), bits, d.weight_signed)?;
                let w = random_tensor(&mut rng, shape, bits, d.weight_signed);
                memory.write_tensor(&d.tensors.weights, &w)?;
            }
            memory.allocate(
                &d.tensors.output,
                d.output_shape(),
                d.requant.out_bits,
                d.requant.out_signed,
            )?;
        }
        for l in &mut layers {
            l.bind(&memory)?;
        }
        let output = layers
            .last()
            .map_or_else(|| INPUT_TENSOR.to_string(), |l| l.desc.tensors.output.clone());
        Ok(Program {
            layers,
            unfused,
            memory,
            output,
            batch,
        })
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, bits: u32, signed: bool) -> Tensor {
    let (lo, hi) = value_range(bits, signed);
    let n = shape.iter().product();
    Tensor {
        shape,
        bits,
        signed,
        data: (0..n).map(|_| rng.gen_range(lo..=hi)).collect(),
    }
}

fn reshape(t: &Tensor, shape: Vec<usize>) -> Result<Tensor, RefError> {
    if shape.iter().product::<usize>() != t.len() {
        return Err(RefError::Shape(format!("cannot view {:?} as {shape:?}", t.shape)));
    }
    Ok(Tensor { shape, ..t.clone() })
}

/// Evaluates one layer with the wide-integer reference.
pub fn reference_layer(d: &LayerDescriptor, x: &Tensor, w: Option<&Tensor>) -> Result<Tensor, RefError> {
    let x = reshape(x, d.input_shape())?;
    let need_w = || w.ok_or_else(|| RefError::Shape(format!("layer `{}` needs weights", d.name)));
    let mut y = match &d.kind {
        LayerKind::Fc { .. } => gemm_ref(&x, need_w()?)?,
        LayerKind::RecurrentGemm { .. } => {
            let mut h = x;
            for step in d.expand() {
                h = reference_layer(&step, &h, w)?;
            }
            return Ok(h);
        }
        LayerKind::Conv { stride, .. } => conv_ref(&x, need_w()?, *stride)?,
        LayerKind::Pool { window, stride, .. } => pool_ref(&x, *window, *stride)?,
        LayerKind::Activation { .. } => x,
    };
    if let Some(FusedPool { window, stride }) = d.fused_pool {
        y = pool_ref(&y, window, stride)?;
    }
    if d.activation == Activation::Relu {
        y = act_ref(&y);
    }
    let r = d.requant;
    Ok(requant_ref(&y, r.shift, r.out_bits, r.out_signed))
}

/// Reference outputs of every layer, reading the input and weights from
/// `mem`.
pub fn reference(layers: &[LayerDescriptor], mem: &Memory) -> Result<BTreeMap<String, Tensor>, NetworkError> {
    let mut tensors = BTreeMap::new();
    tensors.insert(INPUT_TENSOR.to_string(), mem.read_tensor(INPUT_TENSOR)?);
    for d in layers {
        let x = tensors
            .get(&d.tensors.input)
            .cloned()
            .ok_or_else(|| ImageError::UnknownTensor(d.tensors.input.clone()))?;
        let w = if d.uses_array() {
            Some(mem.read_tensor(&d.tensors.weights)?)
        } else {
            None
        };
        let y = reference_layer(d, &x, w.as_ref())?;
        tensors.insert(d.tensors.output.clone(), y);
    }
    Ok(tensors)
}

impl Bitwidth {
    /// Parses a bit count, for configuration files.
    pub fn parse_bits(s: &str) -> Option<Bitwidth> {
        s.parse().ok().and_then(|b| Bitwidth::from_bits(b).ok())
    }
}
