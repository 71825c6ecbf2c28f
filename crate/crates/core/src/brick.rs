//! The 2-bit multiply unit every other datapath element is built from.
//!
//! A brick takes two 2-bit operands, each with its own sign flag, sign
//! extends them to 3 bits and multiplies them into a 6-bit signed product.
//! Binary (0, +1) operands are unsigned 2-bit operands and ternary
//! (-1, 0, +1) operands are signed ones; there is no separate 1-bit path.

use serde::{Deserialize, Serialize};

/// Smallest and largest value a brick product can take.
pub const PRODUCT_MIN: i8 = -6;
pub const PRODUCT_MAX: i8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BrickOperand {
    bits: u8,
    signed: bool,
}

impl BrickOperand {
    /// Builds an operand from its raw 2-bit field. Only the low two bits of
    /// `bits` are kept.
    pub fn new(bits: u8, signed: bool) -> Self {
        Self {
            bits: bits & 0b11,
            signed,
        }
    }

    /// Builds an operand holding `value`, or `None` if the value does not
    /// fit in two bits under the requested signedness.
    pub fn from_value(value: i64, signed: bool) -> Option<Self> {
        let ok = if signed {
            (-2..=1).contains(&value)
        } else {
            (0..=3).contains(&value)
        };
        ok.then(|| Self::new((value & 0b11) as u8, signed))
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    pub fn signed(self) -> bool {
        self.signed
    }

    /// Integer value of the operand under its signedness.
    pub fn value(self) -> i8 {
        sign_extend(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BrickProduct(i8);

impl BrickProduct {
    pub fn value(self) -> i8 {
        self.0
    }
}

/// 3-bit two's-complement value of a 2-bit operand.
pub fn sign_extend(op: BrickOperand) -> i8 {
    let raw = op.bits as i8;
    if op.signed && raw & 0b10 != 0 {
        raw - 4
    } else {
        raw
    }
}

/// One brick multiply.
pub fn brick_multiply(x: BrickOperand, y: BrickOperand) -> BrickProduct {
    let p = sign_extend(x) * sign_extend(y);
    // 6-bit two's complement bound, checked rather than wrapped.
    assert!(
        (-32..=31).contains(&p),
        "brick product {p} does not fit 6 bits"
    );
    debug_assert!((PRODUCT_MIN..=PRODUCT_MAX).contains(&p));
    BrickProduct(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_operands() -> impl Iterator<Item = BrickOperand> {
        (0..4u8).flat_map(|b| [false, true].map(move |s| BrickOperand::new(b, s)))
    }

    #[test]
    fn sign_extension_examples() {
        assert_eq!(sign_extend(BrickOperand::new(0b11, false)), 3);
        assert_eq!(sign_extend(BrickOperand::new(0b10, true)), -2);
        assert_eq!(sign_extend(BrickOperand::new(0b01, true)), 1);
        assert_eq!(sign_extend(BrickOperand::new(0b11, true)), -1);
    }

    #[test]
    fn multiply_examples() {
        let three = BrickOperand::new(3, false);
        assert_eq!(brick_multiply(three, three).value(), 9);
        let minus_two = BrickOperand::new(0b10, true);
        assert_eq!(brick_multiply(minus_two, three).value(), -6);
        for y in all_operands() {
            assert_eq!(brick_multiply(BrickOperand::new(0, true), y).value(), 0);
        }
    }

    #[test]
    fn exhaustive_against_wide_multiply() {
        let mut seen = 0;
        for x in all_operands() {
            for y in all_operands() {
                // interpret independently of sign_extend
                let xv = if x.signed() && x.bits() >= 2 {
                    x.bits() as i64 - 4
                } else {
                    x.bits() as i64
                };
                let yv = if y.signed() && y.bits() >= 2 {
                    y.bits() as i64 - 4
                } else {
                    y.bits() as i64
                };
                let p = brick_multiply(x, y).value() as i64;
                assert_eq!(p, xv * yv, "{x:?} * {y:?}");
                assert_eq!(p, brick_multiply(y, x).value() as i64);
                assert!((-6..=9).contains(&p));
                seen += 1;
            }
        }
        assert_eq!(seen, 64);
    }

    #[test]
    fn from_value_ranges() {
        assert!(BrickOperand::from_value(-2, true).is_some());
        assert!(BrickOperand::from_value(2, true).is_none());
        assert!(BrickOperand::from_value(3, false).is_some());
        assert!(BrickOperand::from_value(-1, false).is_none());
        assert_eq!(BrickOperand::from_value(-1, true).unwrap().value(), -1);
    }
}
