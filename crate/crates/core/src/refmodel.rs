//! Wide-integer reference semantics for every layer kind.
//!
//! Nothing here slices operands; results come straight from `i64`
//! arithmetic and are wrapped to 32 bits at the end where hardware would
//! hold a 32-bit partial sum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RefError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("element {index} = {value} does not fit {bits}-bit {}", if *.signed { "signed" } else { "unsigned" })]
    Range { index: usize, value: i64, bits: u32, signed: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub bits: u32,
    pub signed: bool,
    pub data: Vec<i64>,
}

fn fits(v: i64, bits: u32, signed: bool) -> bool {
    let (lo, hi) = if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else if bits >= 63 {
        (0, i64::MAX)
    } else {
        (0, (1i64 << bits) - 1)
    };
    (lo..=hi).contains(&v)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, bits: u32, signed: bool, data: Vec<i64>) -> Result<Self, RefError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(RefError::Shape(format!("shape {shape:?} holds {n} elements, got {}", data.len())));
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| !fits(v, bits, signed)) {
            return Err(RefError::Range { index, value, bits, signed });
        }
        Ok(Self { shape, bits, signed, data })
    }

    pub fn zeros(shape: Vec<usize>, bits: u32, signed: bool) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            bits,
            signed,
            data: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn dims<const N: usize>(&self, what: &str) -> Result<[usize; N], RefError> {
        self.shape
            .as_slice()
            .try_into()
            .map_err(|_| RefError::Shape(format!("{what} must be rank {N}, got {:?}", self.shape)))
    }
}

fn wrap32(v: i64) -> i64 {
    v as i32 as i64
}

/// `a[M][K] × b[K][N]`, wrapped to 32 bits.
pub fn gemm_ref(a: &Tensor, b: &Tensor) -> Result<Tensor, RefError> {
    let [m, k] = a.dims("gemm lhs")?;
    let [k2, n] = b.dims("gemm rhs")?;
    if k != k2 {
        return Err(RefError::Shape(format!("inner dimensions {k} and {k2} differ")));
    }
    let mut out = vec![0i64; m * n];
    for i in 0..m {
        for j in 0..n {
            let acc: i64 = (0..k).map(|p| a.data[i * k + p] * b.data[p * n + j]).sum();
            out[i * n + j] = wrap32(acc);
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        bits: 32,
        signed: true,
        data: out,
    })
}

/// Valid-padding convolution. `x` is NHWC, `w` is HWIO (kh, kw, c, oc).
pub fn conv_ref(x: &Tensor, w: &Tensor, stride: usize) -> Result<Tensor, RefError> {
    let [n, h, wd, c] = x.dims("conv input")?;
    let [kh, kw, c2, oc] = w.dims("conv weights")?;
    if c != c2 {
        return Err(RefError::Shape(format!("input has {c} channels, weights expect {c2}")));
    }
    let (oh, ow) = out_extent(h, wd, kh, kw, stride)?;
    let mut out = vec![0i64; n * oh * ow * oc];
    for b in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                for o in 0..oc {
                    let mut acc = 0i64;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            for ci in 0..c {
                                let xi = ((b * h + y * stride + dy) * wd + xo * stride + dx) * c + ci;
                                let wi = ((dy * kw + dx) * c + ci) * oc + o;
                                acc += x.data[xi] * w.data[wi];
                            }
                        }
                    }
                    out[((b * oh + y) * ow + xo) * oc + o] = wrap32(acc);
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![n, oh, ow, oc],
        bits: 32,
        signed: true,
        data: out,
    })
}

fn out_extent(h: usize, w: usize, kh: usize, kw: usize, stride: usize) -> Result<(usize, usize), RefError> {
    if stride == 0 || kh == 0 || kw == 0 || kh > h || kw > w {
        return Err(RefError::Shape(format!("window {kh}x{kw} stride {stride} does not fit {h}x{w}")));
    }
    Ok(((h - kh) / stride + 1, (w - kw) / stride + 1))
}

/// Max pooling over `window`×`window` patches of an NHWC tensor.
pub fn pool_ref(x: &Tensor, window: usize, stride: usize) -> Result<Tensor, RefError> {
    let [n, h, wd, c] = x.dims("pool input")?;
    let (oh, ow) = out_extent(h, wd, window, window, stride)?;
    let mut out = vec![0i64; n * oh * ow * c];
    for b in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                for ch in 0..c {
                    let mut m = i64::MIN;
                    for dy in 0..window {
                        for dx in 0..window {
                            m = m.max(x.data[((b * h + y * stride + dy) * wd + xo * stride + dx) * c + ch]);
                        }
                    }
                    out[((b * oh + y) * ow + xo) * c + ch] = m;
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![n, oh, ow, c],
        bits: x.bits,
        signed: x.signed,
        data: out,
    })
}

pub fn act_ref(x: &Tensor) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| v.max(0)).collect(),
        ..x.clone()
    }
}

/// Arithmetic right shift, then saturation to `out_bits`.
pub fn requant_ref(x: &Tensor, shift: u32, out_bits: u32, out_signed: bool) -> Tensor {
    let (lo, hi) = if out_signed {
        (-(1i64 << (out_bits - 1)), (1i64 << (out_bits - 1)) - 1)
    } else {
        (0, (1i64 << out_bits) - 1)
    };
    let data = x
        .data
        .iter()
        .map(|&v| {
            let s = if shift >= 63 { if v < 0 { -1 } else { 0 } } else { v >> shift };
            s.clamp(lo, hi)
        })
        .collect();
    Tensor {
        shape: x.shape.clone(),
        bits: out_bits,
        signed: out_signed,
        data,
    }
}

/// Rows are output pixels (n, y, x); columns follow the HWIO weight
/// layout (dy, dx, c), so `gemm_ref(im2col(x), w reshaped)` is a conv.
pub fn im2col(x: &Tensor, kh: usize, kw: usize, stride: usize) -> Result<Tensor, RefError> {
    let [n, h, wd, c] = x.dims("im2col input")?;
    let (oh, ow) = out_extent(h, wd, kh, kw, stride)?;
    let mut data = Vec::with_capacity(n * oh * ow * kh * kw * c);
    for b in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let base = ((b * h + y * stride + dy) * wd + xo * stride + dx) * c;
                        data.extend_from_slice(&x.data[base..base + c]);
                    }
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![n * oh * ow, kh * kw * c],
        bits: x.bits,
        signed: x.signed,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, bits: u32, signed: bool, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        let (lo, hi) = if signed {
            (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
        } else {
            (0, (1i64 << bits) - 1)
        };
        Tensor::new(shape, bits, signed, (0..n).map(|_| rng.gen_range(lo..=hi)).collect()).unwrap()
    }

    // k-outer accumulation order, independent of gemm_ref's dot-product order.
    fn gemm_kij(a: &Tensor, b: &Tensor) -> Vec<i64> {
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut acc = vec![0i32; m * n];
        for p in 0..k {
            for i in 0..m {
                for j in 0..n {
                    let prod = (a.data[i * k + p] * b.data[p * n + j]) as i32;
                    acc[i * n + j] = acc[i * n + j].wrapping_add(prod);
                }
            }
        }
        acc.into_iter().map(i64::from).collect()
    }

    #[test]
    fn gemm_examples() {
        let a = Tensor::new(vec![1, 1], 4, false, vec![11]).unwrap();
        let b = Tensor::new(vec![1, 1], 4, false, vec![6]).unwrap();
        assert_eq!(gemm_ref(&a, &b).unwrap().data, vec![66]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random(vec![5, 7], 8, true, &mut rng);
        let eye = Tensor::new(vec![5, 5], 2, true, (0..25).map(|i| (i % 6 == 0) as i64).collect()).unwrap();
        assert_eq!(gemm_ref(&eye, &m).unwrap().data, m.data);

        assert!(gemm_ref(&m, &m).is_err());
    }

    #[test]
    fn gemm_matches_second_loop_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for bits in [2, 4, 8, 16] {
            for _ in 0..20 {
                let (m, k, n) = (rng.gen_range(1..9), rng.gen_range(1..40), rng.gen_range(1..9));
                let a = random(vec![m, k], bits, rng.gen(), &mut rng);
                let b = random(vec![k, n], bits, rng.gen(), &mut rng);
                assert_eq!(gemm_ref(&a, &b).unwrap().data, gemm_kij(&a, &b));
            }
        }
    }

    #[test]
    fn wraps_to_32_bits() {
        let k = 8;
        let a = Tensor::new(vec![1, k], 16, true, vec![-32768; k]).unwrap();
        let b = Tensor::new(vec![k, 1], 16, true, vec![-32768; k]).unwrap();
        let exact = k as i64 * (1 << 30);
        assert_eq!(gemm_ref(&a, &b).unwrap().data[0], exact as i32 as i64);
    }

    #[test]
    fn conv_with_ones_kernel_sums_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(vec![1, 3, 3, 4], 8, false, &mut rng);
        let w = Tensor::new(vec![1, 1, 4, 1], 2, false, vec![1; 4]).unwrap();
        let y = conv_ref(&x, &w, 1).unwrap();
        for p in 0..9 {
            assert_eq!(y.data[p], x.data[p * 4..p * 4 + 4].iter().sum::<i64>());
        }
    }

    #[test]
    fn conv_equals_gemm_on_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let (k, s) = (rng.gen_range(1..4), rng.gen_range(1..3));
            let (h, w) = (rng.gen_range(k..8), rng.gen_range(k..8));
            let (c, oc, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..3));
            let x = random(vec![n, h, w, c], 8, true, &mut rng);
            let wt = random(vec![k, k, c, oc], 4, true, &mut rng);
            let conv = conv_ref(&x, &wt, s).unwrap();
            let cols = im2col(&x, k, k, s).unwrap();
            let flat = Tensor {
                shape: vec![k * k * c, oc],
                ..wt.clone()
            };
            assert_eq!(gemm_ref(&cols, &flat).unwrap().data, conv.data);
        }
    }

    #[test]
    fn pool_act_requant() {
        let x = Tensor::new(vec![1, 2, 2, 1], 8, true, vec![3, 9, 1, 4]).unwrap();
        assert_eq!(pool_ref(&x, 2, 2).unwrap().data, vec![9]);
        assert_eq!(pool_ref(&x, 1, 1).unwrap().data, x.data);

        let y = Tensor::new(vec![3], 32, true, vec![-7, 0, 66]).unwrap();
        assert_eq!(act_ref(&y).data, vec![0, 0, 66]);
        assert_eq!(act_ref(&act_ref(&y)), act_ref(&y));
        assert_eq!(requant_ref(&y, 2, 32, true).data, vec![-2, 0, 16]);
        assert_eq!(requant_ref(&y, 0, 4, true).data, vec![-7, 0, 7]);
        assert_eq!(requant_ref(&y, 0, 4, false).data, vec![0, 0, 15]);
    }

    #[test]
    fn requant_matches_column_post() {
        use crate::array::{column_post, Activation, Pooling, PostConfig, Requant};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let v: i32 = rng.gen();
            let shift = rng.gen_range(0..40);
            let bits = rng.gen_range(1..=32);
            let signed = bits > 1 && rng.gen();
            let relu = rng.gen();
            let post = PostConfig {
                pooling: Pooling::None,
                activation: if relu { Activation::Relu } else { Activation::None },
                requant: Requant { shift, out_bits: bits, out_signed: signed },
            };
            let mut t = Tensor::new(vec![1], 32, true, vec![v as i64]).unwrap();
            if relu {
                t = act_ref(&t);
            }
            assert_eq!(column_post(&[v], &post), requant_ref(&t, shift, bits, signed).data[0]);
        }
    }

    #[test]
    fn tensor_checks_range() {
        assert!(Tensor::new(vec![1], 2, true, vec![2]).is_err());
        assert!(Tensor::new(vec![2], 2, true, vec![1]).is_err());
        assert!(Tensor::new(vec![1], 2, false, vec![3]).is_ok());
    }
}
