//! Minimal double-double arithmetic.
//!
//! A `Dd` is an unevaluated sum `hi + lo` of two `f64` values with
//! `|lo| <= ulp(hi)/2`, giving roughly 32 significant decimal digits.
//! Only the operations needed by the Lambert-W solver are implemented:
//! add, sub, mul, div and exp. Error-free transformations follow the
//! classic Dekker/Knuth constructions; `two_prod` relies on the fused
//! multiply-add, which is exact on every target this crate supports.

/// Double-double number `hi + lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

/// Error-free sum: returns `(s, e)` with `s = fl(a + b)` and `a + b = s + e`.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Error-free sum assuming `|a| >= |b|`.
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let e = b - (s - a);
    (s, e)
}

/// Error-free product via FMA: `a * b = p + e` exactly.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    /// ln 2 to double-double precision.
    pub const LN_2: Dd = Dd {
        hi: 0.693_147_180_559_945_3,
        lo: 2.319_046_813_846_299_6e-17,
    };

    #[inline]
    pub fn new(hi: f64, lo: f64) -> Dd {
        let (s, e) = quick_two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    /// Leading component; equals the double-double value rounded to `f64`.
    #[inline]
    pub fn hi(self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn lo(self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn add(self, other: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, other.hi);
        let (t1, t2) = two_sum(self.lo, other.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (s1, s2) = quick_two_sum(s1, s2 + t2);
        Dd { hi: s1, lo: s2 }
    }

    #[inline]
    pub fn add_f64(self, other: f64) -> Dd {
        self.add(Dd::from_f64(other))
    }

    #[inline]
    pub fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, other.hi);
        let p2 = p2 + self.hi * other.lo + self.lo * other.hi;
        let (s1, s2) = quick_two_sum(p1, p2);
        Dd { hi: s1, lo: s2 }
    }

    #[inline]
    pub fn mul_f64(self, other: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, other);
        let p2 = p2 + self.lo * other;
        let (s1, s2) = quick_two_sum(p1, p2);
        Dd { hi: s1, lo: s2 }
    }

    pub fn div(self, other: Dd) -> Dd {
        let q1 = self.hi / other.hi;
        let r = self.sub(other.mul_f64(q1));
        let q2 = r.hi / other.hi;
        let r = r.sub(other.mul_f64(q2));
        let q3 = r.hi / other.hi;
        let (s1, s2) = quick_two_sum(q1, q2);
        Dd::new(s1, s2 + q3)
    }

    /// Exact scaling by a power of two.
    #[inline]
    fn ldexp(self, exp: i32) -> Dd {
        let f = (2.0f64).powi(exp);
        Dd { hi: self.hi * f, lo: self.lo * f }
    }

    /// exp(self) by argument reduction and a short Taylor series.
    ///
    /// Reduction: exp(a) = 2^m * exp(r)^512 with r = (a - m ln2)/512,
    /// so |r| <= ln2/1024 and the series converges in a few terms.
    pub fn exp(self) -> Dd {
        if self.hi <= -709.0 {
            return Dd::ZERO;
        }
        if self.hi >= 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi == 0.0 && self.lo == 0.0 {
            return Dd::ONE;
        }

        let m = (self.hi / std::f64::consts::LN_2 + 0.5).floor();
        let r = self.sub(Dd::LN_2.mul_f64(m)).ldexp(-9);

        // exp(r) - 1 by Taylor; |r| <= 6.8e-4 so ~9 terms reach 1e-33.
        let mut power = r.mul(r);
        let mut sum = r.add(power.mul_f64(0.5));
        let mut factorial = 2.0f64;
        for k in 3..=12 {
            power = power.mul(r);
            factorial *= k as f64;
            let term = power.div(Dd::from_f64(factorial));
            sum = sum.add(term);
            if term.hi.abs() < 1e-35 {
                break;
            }
        }

        // Undo the /512: (1 + s)^2 = 1 + (2s + s^2), nine times.
        for _ in 0..9 {
            sum = sum.mul_f64(2.0).add(sum.mul(sum));
        }
        sum.add_f64(1.0).ldexp(m as i32)
    }
}
