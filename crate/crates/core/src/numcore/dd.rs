//! Double-double scalar for finite-difference references.
//!
//! Addition, subtraction, multiplication and `sqrt` come from `twofloat` and
//! are accurate to roughly 1e-32 relative. Its division, reciprocal, `exp`,
//! `ln` and `f64` conversion lose precision (division to ~1e-18), so those
//! are reimplemented here. Every other `Float` method is delegated and is
//! only as accurate as `twofloat` makes it; the kernels do not use them.

use std::fmt;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};
use twofloat::TwoFloat;

#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Dd(pub TwoFloat);

impl Dd {
    pub fn hi(self) -> f64 {
        self.0.hi()
    }

    pub fn lo(self) -> f64 {
        self.0.lo()
    }

    /// Nearest `f64`.
    pub fn to_f64(self) -> f64 {
        self.0.hi() + self.0.lo()
    }
}

impl Dd {
    pub fn new(v: f64) -> Dd {
        Dd(v.into())
    }
}

fn ln2() -> Dd {
    Dd(TwoFloat::new_add(std::f64::consts::LN_2, 2.3190468138462996e-17))
}

/// Halvings applied to the reduced argument before the series.
const SQUARINGS: i32 = 8;

impl Dd {
    fn exp_impl(self) -> Dd {
        let hi = self.hi();
        if hi.is_nan() {
            return self;
        }
        if hi > 709.0 {
            return Dd::new(f64::INFINITY);
        }
        if hi < -745.0 {
            return Dd::new(0.0);
        }
        // x = k ln2 + r with |r| <= ln2 / 2, then r is shrunk by 2^SQUARINGS
        let k = (hi / ln2().hi()).round();
        let r = Dd((self - ln2() * Dd::new(k)).0 / f64::powi(2.0, SQUARINGS));
        let mut term = Dd::new(1.0);
        let mut sum = Dd::new(1.0);
        for n in 1..40 {
            term = Dd((term * r).0 / n as f64);
            sum += term;
            if term.hi().abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..SQUARINGS {
            sum = sum * sum;
        }
        Dd(sum.0 * f64::powi(2.0, k as i32))
    }

    fn ln_impl(self) -> Dd {
        let hi = self.hi();
        if !(hi > 0.0) || hi.is_infinite() {
            return Dd::new(hi.ln());
        }
        // one Newton step on exp(y) = x doubles the f64 starting accuracy
        let y = Dd::new(hi.ln());
        y + self * (-y).exp_impl() - Dd::new(1.0)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, rhs: Dd) -> Dd {
        Dd(self.0 + rhs.0)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, rhs: Dd) -> Dd {
        Dd(self.0 - rhs.0)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, rhs: Dd) -> Dd {
        Dd(self.0 * rhs.0)
    }
}

impl Div for Dd {
    type Output = Dd;
    /// Long division: three f64 quotient digits, each remainder formed in
    /// double-double.
    fn div(self, rhs: Dd) -> Dd {
        let b = rhs.hi();
        if b == 0.0 || !b.is_finite() || !self.hi().is_finite() {
            return Dd::new(self.hi() / b);
        }
        let q1 = self.hi() / b;
        let r = self.0 - rhs.0 * q1;
        let q2 = r.hi() / b;
        let r = r - rhs.0 * q2;
        let q3 = r.hi() / b;
        Dd(TwoFloat::new_add(q1, q2) + q3)
    }
}

impl Rem for Dd {
    type Output = Dd;
    fn rem(self, rhs: Dd) -> Dd {
        self - (self / rhs).trunc() * rhs
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd(-self.0)
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl $tr for Dd {
            fn $m(&mut self, rhs: Dd) {
                *self = *self $op rhs;
            }
        }
    )*};
}

assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl Zero for Dd {
    fn zero() -> Dd {
        Dd::new(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi() == 0.0
    }
}

impl One for Dd {
    fn one() -> Dd {
        Dd::new(1.0)
    }
}

impl Num for Dd {
    type FromStrRadixErr = <TwoFloat as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Dd, Self::FromStrRadixErr> {
        TwoFloat::from_str_radix(s, radix).map(Dd)
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        self.0.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.0.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(Dd::to_f64(*self))
    }
}

impl FromPrimitive for Dd {
    fn from_i64(n: i64) -> Option<Dd> {
        Some(Dd(n.into()))
    }
    fn from_u64(n: u64) -> Option<Dd> {
        Some(Dd(n.into()))
    }
    fn from_f64(n: f64) -> Option<Dd> {
        Some(Dd::new(n))
    }
}

impl NumCast for Dd {
    fn from<P: ToPrimitive>(n: P) -> Option<Dd> {
        <TwoFloat as NumCast>::from(n).map(Dd)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::LowerExp for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerExp::fmt(&self.0, f)
    }
}

macro_rules! delegate {
    ($($m:ident),* $(,)?) => {$(
        fn $m(self) -> Dd {
            Dd(Float::$m(self.0))
        }
    )*};
}

macro_rules! constant {
    ($($m:ident),* $(,)?) => {$(
        fn $m() -> Dd {
            Dd(<TwoFloat as Float>::$m())
        }
    )*};
}

macro_rules! predicate {
    ($($m:ident),* $(,)?) => {$(
        fn $m(self) -> bool {
            Float::$m(self.0)
        }
    )*};
}

impl Float for Dd {
    constant!(nan, infinity, neg_infinity, neg_zero, min_value, min_positive_value, max_value, epsilon);
    predicate!(is_nan, is_infinite, is_finite, is_normal, is_sign_positive, is_sign_negative);
    delegate!(
        floor, ceil, round, trunc, fract, abs, signum, sqrt, exp2, log2, log10, cbrt, sin, cos, tan, asin,
        acos, atan, exp_m1, ln_1p, sinh, cosh, tanh, asinh, acosh, atanh,
    );

    fn classify(self) -> FpCategory {
        self.0.classify()
    }

    fn mul_add(self, a: Dd, b: Dd) -> Dd {
        self * a + b
    }

    fn recip(self) -> Dd {
        Dd::new(1.0) / self
    }

    fn powi(self, n: i32) -> Dd {
        let mut acc = Dd::new(1.0);
        let mut base = self;
        let mut e = n.unsigned_abs();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        if n < 0 {
            acc.recip()
        } else {
            acc
        }
    }

    fn powf(self, n: Dd) -> Dd {
        (n * self.ln()).exp()
    }

    fn exp(self) -> Dd {
        self.exp_impl()
    }

    fn ln(self) -> Dd {
        self.ln_impl()
    }

    fn log(self, base: Dd) -> Dd {
        self.ln() / base.ln()
    }

    fn max(self, other: Dd) -> Dd {
        Dd(Float::max(self.0, other.0))
    }

    fn min(self, other: Dd) -> Dd {
        Dd(Float::min(self.0, other.0))
    }

    #[allow(deprecated)]
    fn abs_sub(self, other: Dd) -> Dd {
        Dd(Float::abs_sub(self.0, other.0))
    }

    fn hypot(self, other: Dd) -> Dd {
        (self * self + other * other).sqrt()
    }

    fn atan2(self, other: Dd) -> Dd {
        Dd(Float::atan2(self.0, other.0))
    }

    fn sin_cos(self) -> (Dd, Dd) {
        let (s, c) = Float::sin_cos(self.0);
        (Dd(s), Dd(c))
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        Float::integer_decode(self.0)
    }
}
