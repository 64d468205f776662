//! Extended-range positive-magnitude floats: a mantissa together with a
//! power-of-two exponent, used wherever elementary symmetric polynomials or
//! combinatorial counts leave the `f64` range.

/// A real number represented as `mant * 2^exp2`.
///
/// The mantissa is kept inside a wide window around 1.0; arithmetic
/// re-normalizes lazily so the hot loops stay branch-light.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled {
    pub mant: f64,
    pub exp2: i64,
}

const UPPER: f64 = 1e150;
const LOWER: f64 = 1e-150;

/// Split a finite nonzero f64 into mantissa in [0.5, 1) and exponent.
fn frexp(x: f64) -> (f64, i64) {
    if x == 0.0 {
        return (0.0, 0);
    }
    let bits = x.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    if raw_exp == 0 {
        // subnormal: promote and recurse once
        let (m, e) = frexp(x * 2f64.powi(80));
        return (m, e - 80);
    }
    let e = raw_exp - 1022;
    let mant = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    (mant, e)
}

/// 2^e as f64 by exponent-bit construction, saturating to 0 / inf outside
/// the representable range. (`powi` is not reliable here: with large
/// negative exponents its repeated-squaring form overflows the reciprocal.)
pub(crate) fn pow2(e: i64) -> f64 {
    if e < -1074 {
        0.0
    } else if e < -1022 {
        // Subnormal range: a single mantissa bit.
        f64::from_bits(1u64 << (e + 1074))
    } else if e <= 1023 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::INFINITY
    }
}

impl Scaled {
    pub const ZERO: Scaled = Scaled { mant: 0.0, exp2: 0 };
    pub const ONE: Scaled = Scaled { mant: 1.0, exp2: 0 };

    pub fn from_f64(x: f64) -> Scaled {
        let (mant, exp2) = frexp(x);
        Scaled { mant, exp2 }
    }

    pub fn is_zero(&self) -> bool {
        self.mant == 0.0
    }

    fn renorm(mut self) -> Scaled {
        if self.mant == 0.0 {
            self.exp2 = 0;
        } else if !(LOWER..UPPER).contains(&self.mant.abs()) {
            let (m, e) = frexp(self.mant);
            self.mant = m;
            self.exp2 += e;
        }
        self
    }

    pub fn mul_f64(self, x: f64) -> Scaled {
        Scaled {
            mant: self.mant * x,
            exp2: self.exp2,
        }
        .renorm()
    }

    pub fn mul(self, other: Scaled) -> Scaled {
        Scaled {
            mant: self.mant * other.mant,
            exp2: self.exp2 + other.exp2,
        }
        .renorm()
    }

    pub fn add(self, other: Scaled) -> Scaled {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        let (hi, lo) = if self.exp2 >= other.exp2 {
            (self, other)
        } else {
            (other, self)
        };
        let shift = lo.exp2 - hi.exp2;
        if shift < -1080 {
            return hi;
        }
        Scaled {
            mant: hi.mant + lo.mant * pow2(shift),
            exp2: hi.exp2,
        }
        .renorm()
    }

    /// self / other as an ordinary f64 (may overflow/underflow if the true
    /// ratio leaves the f64 range).
    pub fn ratio(self, other: Scaled) -> f64 {
        (self.mant / other.mant) * pow2(self.exp2 - other.exp2)
    }

    /// Natural log; -inf for zero.
    pub fn ln(self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            self.mant.ln() + self.exp2 as f64 * std::f64::consts::LN_2
        }
    }

    pub fn to_f64(self) -> f64 {
        self.mant * pow2(self.exp2)
    }

    /// Integer power by repeated squaring.
    pub fn powi(self, mut n: u64) -> Scaled {
        let mut acc = Scaled::ONE;
        let mut base = self;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            n >>= 1;
        }
        acc
    }
}
