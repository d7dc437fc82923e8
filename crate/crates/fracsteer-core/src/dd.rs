//! Double-double arithmetic (~31 significant digits).
//!
//! The power series of the Mittag-Leffler and Wright-type functions on the
//! negative real axis cancel catastrophically: partial sums can exceed the
//! final value by ten orders of magnitude or more, which destroys plain f64
//! summation. Summing the series with an unevaluated hi/lo pair keeps the
//! absolute rounding noise near `maxterm * 1e-31`, small enough for every
//! tolerance used in this crate.
//!
//! The module also serves as the independent high-precision route for the
//! verification oracles in the test suites (gamma-function formula checks),
//! which is why it is public.
//!
//! Algorithms are the classical error-free transformations (Dekker, Knuth)
//! plus textbook Newton/Taylor implementations of `exp`, `ln`, `sin(pi x)`
//! and a Stirling-with-shift `ln Gamma`.

// the hi/lo constant pairs below intentionally spell out more digits than
// one f64 carries
#![allow(clippy::approx_constant, clippy::excessive_precision)]

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    /// pi to double-double precision.
    pub const PI: Dd = Dd {
        hi: 3.141592653589793116e0,
        lo: 1.224646799147353207e-16,
    };
    /// ln 2 to double-double precision.
    pub const LN2: Dd = Dd {
        hi: 6.931471805599452862e-1,
        lo: 2.319046813846299558e-17,
    };

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn new(hi: f64, lo: f64) -> Dd {
        let (s, e) = quick_two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    /// Exact product of two f64 values.
    #[inline]
    pub fn mul_f64_exact(a: f64, b: f64) -> Dd {
        let (p, e) = two_prod(a, b);
        Dd { hi: p, lo: e }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    /// Scale by 2^k (exact).
    #[inline]
    fn ldexp(self, k: i32) -> Dd {
        Dd {
            hi: libm::ldexp(self.hi, k),
            lo: libm::ldexp(self.lo, k),
        }
    }

    pub fn recip(self) -> Dd {
        Dd::ONE / self
    }

    /// exp(self), saturating to 0 / inf outside the f64 exponent range.
    pub fn exp(self) -> Dd {
        if self.hi > 709.8 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / Dd::LN2.hi).round();
        let r = self - Dd::LN2 * k;
        // |r| <= ln2/2; Taylor to 2^-110.
        let inv = inv_ints();
        let mut sum = Dd::ONE + r;
        let mut term = r;
        for i in 2..26 {
            term = term * r * inv[i];
            sum = sum + term;
        }
        sum.ldexp(k as i32)
    }

    /// Natural logarithm via one Newton step on exp (the f64 seed carries
    /// 53 bits, the step squares the error well past the working
    /// precision); requires self > 0.
    pub fn ln(self) -> Dd {
        debug_assert!(self.hi > 0.0);
        let y = Dd::from_f64(self.hi.ln());
        y + self * (-y).exp() - Dd::ONE
    }

    /// self^p for positive self.
    pub fn powf(self, p: Dd) -> Dd {
        (self.ln() * p).exp()
    }

    /// sin(pi x) for x in [0, 2); the argument is reduced by symmetry to
    /// [0, 1/2] before a Taylor evaluation.
    pub fn sinpi(self) -> Dd {
        let mut x = self;
        let mut sign = 1.0;
        if x.hi >= 1.0 {
            x = x - Dd::ONE;
            sign = -1.0;
        }
        if x.hi > 0.5 {
            x = Dd::ONE - x;
        }
        let theta = Dd::PI * x;
        let t2 = theta * theta;
        let mut term = theta;
        let mut sum = theta;
        for m in 1..18 {
            let d = (2 * m) as f64 * (2 * m + 1) as f64;
            term = term * t2 / d;
            sum = if m % 2 == 1 { sum - term } else { sum + term };
        }
        sum * sign
    }

    /// ln Gamma(self) for self > 0: argument shift to >= 24, then an
    /// eleven-term Stirling series (truncation ~5e-30 relative).
    pub fn ln_gamma(self) -> Dd {
        debug_assert!(self.hi > 0.0);
        let mut w = self;
        let mut shift = Dd::ONE;
        let mut shifted = false;
        while w.hi < 24.0 {
            shift = shift * w;
            w = w + Dd::ONE;
            shifted = true;
        }
        let u = w.recip();
        let u2 = u * u;
        let coeffs = stirling_coeffs();
        let mut series = Dd::ZERO;
        for n in (0..11).rev() {
            series = series * u2 + coeffs[n];
        }
        series = series * u;
        let ln_w = w.ln();
        let mut result = (w - Dd::from_f64(0.5)) * ln_w - w + half_ln_two_pi() + series;
        if shifted {
            result = result - shift.ln();
        }
        result
    }
}

fn half_ln_two_pi() -> Dd {
    static CELL: OnceLock<Dd> = OnceLock::new();
    *CELL.get_or_init(|| (Dd::PI * 2.0).ln() * Dd::from_f64(0.5))
}

/// Reciprocals 1/i used by the exp Taylor loop.
fn inv_ints() -> &'static [Dd; 26] {
    static CELL: OnceLock<[Dd; 26]> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = [Dd::ONE; 26];
        for (i, slot) in out.iter_mut().enumerate().skip(1) {
            *slot = Dd::ONE / (i as f64);
        }
        out
    })
}

/// Stirling-series coefficients `B_{2n} / (2n (2n-1))` as exact rationals.
fn stirling_coeffs() -> &'static [Dd; 11] {
    static CELL: OnceLock<[Dd; 11]> = OnceLock::new();
    CELL.get_or_init(|| {
        const NUM: [f64; 11] = [
            1.0, -1.0, 1.0, -1.0, 1.0, -691.0, 1.0, -3617.0, 43867.0, -174611.0, 854513.0,
        ];
        const DEN: [f64; 11] = [
            12.0, 360.0, 1260.0, 1680.0, 1188.0, 360360.0, 156.0, 122400.0, 244188.0, 125400.0,
            63756.0,
        ];
        let mut out = [Dd::ZERO; 11];
        for n in 0..11 {
            out[n] = Dd::from_f64(NUM[n]) / DEN[n];
        }
        out
    })
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, rhs: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, rhs.hi);
        let (t1, t2) = two_sum(self.lo, rhs.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl Add<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, rhs: f64) -> Dd {
        let (s1, s2) = two_sum(self.hi, rhs);
        let (hi, lo) = quick_two_sum(s1, s2 + self.lo);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, rhs: Dd) -> Dd {
        self + (-rhs)
    }
}

impl Sub<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, rhs: f64) -> Dd {
        self + (-rhs)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, rhs: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, rhs.hi);
        let p2 = p2 + self.hi * rhs.lo + self.lo * rhs.hi;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, rhs: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, rhs);
        let (hi, lo) = quick_two_sum(p1, p2 + self.lo * rhs);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, rhs: Dd) -> Dd {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * q1;
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * q2;
        let q3 = r.hi / rhs.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd { hi: s, lo: e } + q3
    }
}

impl Div<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, rhs: f64) -> Dd {
        self / Dd::from_f64(rhs)
    }
}
