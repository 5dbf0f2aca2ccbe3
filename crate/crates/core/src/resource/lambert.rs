//! Principal-branch Lambert-W function.
//!
//! `W(x)` is the inverse of `w * exp(w)` on `w >= -1`, defined for
//! `x >= -1/e`. The solver runs Halley's iteration in `f64` from a
//! region-dependent initial guess, then polishes the root with two
//! Newton steps in double-double arithmetic so the residual
//! `|W exp(W) - x|` lands far below what a bare `f64` root can reach
//! (an `f64`-rounded root alone leaves a residual of order
//! `x * 2^-52`, i.e. ~1e-10 near x = 1e6).

use crate::dd::Dd;
use crate::error::{Error, Result};

/// Largest x for which W(x) is undefined: the branch point -1/e.
const BRANCH_POINT: f64 = -0.367_879_441_171_442_33;

/// Initial guess for Halley's iteration.
///
/// - near the branch point: series in p = sqrt(2(ex + 1)),
///   W = -1 + p - p^2/3 + 11 p^3/72 + O(p^4);
/// - small |x|: Taylor series W = x - x^2 + 3x^3/2 + O(x^4);
/// - moderate x: log(1 + x), exact at both region ends;
/// - large x: asymptotic W = L1 - L2 + L2/L1 with L1 = ln x, L2 = ln ln x.
fn initial_guess(x: f64) -> f64 {
    if x < BRANCH_POINT + 0.05 {
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 * p * p * p / 72.0
    } else if x.abs() < 0.5 {
        x * (1.0 + x * (-1.0 + 1.5 * x))
    } else if x < 10.0 {
        x.ln_1p()
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// f64 Halley iteration on f(w) = w e^w - x.
fn halley(x: f64, mut w: f64) -> f64 {
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        // Halley step: dw = f / (e^w (w+1) - (w+2) f / (2w+2))
        let denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
        let dw = if denom.is_finite() && denom != 0.0 {
            f / denom
        } else {
            f / (ew * (w + 1.0))
        };
        w -= dw;
        if dw.abs() <= 1e-16 * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

/// Principal-branch Lambert W at double-double precision.
///
/// Returns the root as an unevaluated `hi + lo` pair; `hi` is the
/// value rounded to `f64`. Errors for `x < -1/e` (no real branch).
pub fn lambert_w0_dd(x: f64) -> Result<Dd> {
    if x.is_nan() || x < BRANCH_POINT {
        return Err(Error::Domain(format!(
            "lambert_w0 requires x >= -1/e ~ {BRANCH_POINT}, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(Dd::ZERO);
    }

    let w = halley(x, initial_guess(x));
    if w == -1.0 {
        // exactly at the branch point; Newton's denominator degenerates
        return Ok(Dd::from_f64(-1.0));
    }

    // Two Newton polish steps on g(w) = w - x e^{-w} in double-double:
    //   w' = w - (w - x e^{-w}) / (1 + x e^{-w}).
    // One step already brings the residual near dd round-off; the
    // second guards the slow-converging branch-point neighbourhood.
    let x_dd = Dd::from_f64(x);
    let mut w_dd = Dd::from_f64(w);
    for _ in 0..2 {
        let t = x_dd.mul(w_dd.neg().exp());
        let num = w_dd.sub(t);
        let den = t.add_f64(1.0);
        if den.hi() == 0.0 {
            break;
        }
        w_dd = w_dd.sub(num.div(den));
    }
    Ok(w_dd)
}

/// Principal-branch Lambert W rounded to `f64`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    Ok(lambert_w0_dd(x)?.hi())
}
