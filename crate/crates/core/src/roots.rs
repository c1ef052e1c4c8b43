//! Bracketed root finding for monotone functions in double-double precision.

use crate::dd::Dd;

/// Solves `g(x) = target` on `[lo, hi]` where `g` is continuous and monotone
/// and `g(lo)`, `g(hi)` are supplied by the caller (they are usually known
/// exactly from earlier bookkeeping). Returns the bracket end with the
/// smaller residual once the bracket is shorter than `xtol` or the residual
/// is below `ftol`.
///
/// Regula falsi with the Illinois modification; a bisection step is forced
/// whenever three consecutive steps fail to halve the bracket.
pub fn solve_monotone(
    mut g: impl FnMut(Dd) -> Dd,
    lo: Dd,
    hi: Dd,
    g_lo: Dd,
    g_hi: Dd,
    target: Dd,
    xtol: f64,
    ftol: f64,
) -> Dd {
    let (mut xl, mut xr) = (lo, hi);
    let (mut fl, mut fr) = (g_lo - target, g_hi - target);
    if fl.hi == 0.0 {
        return xl;
    }
    if fr.hi == 0.0 {
        return xr;
    }
    if fl.signum() == fr.signum() {
        // target outside the bracket image: clamp to the nearer end
        return if fl.abs() <= fr.abs() { xl } else { xr };
    }
    let mut side = 0i8;
    let mut width = (xr - xl).abs();
    let mut stalls = 0;
    for _ in 0..400 {
        let w = (xr - xl).abs();
        if w.to_f64() <= xtol {
            break;
        }
        let mut x = if stalls >= 3 {
            stalls = 0;
            Dd::mid(xl, xr)
        } else {
            xr - fr * (xr - xl) / (fr - fl)
        };
        if !(x > xl.min(xr) && x < xl.max(xr)) {
            x = Dd::mid(xl, xr);
        }
        let fx = g(x) - target;
        if fx.abs().to_f64() <= ftol || fx.hi == 0.0 {
            return x;
        }
        if fx.signum() == fr.signum() {
            xr = x;
            fr = fx;
            if side == -1 {
                fl = fl.mul_f64(0.5);
            }
            side = -1;
        } else {
            xl = x;
            fl = fx;
            if side == 1 {
                fr = fr.mul_f64(0.5);
            }
            side = 1;
        }
        let nw = (xr - xl).abs();
        if nw.to_f64() > 0.5 * width.to_f64() {
            stalls += 1;
        } else {
            stalls = 0;
            width = nw;
        }
    }
    if fl.abs() <= fr.abs() {
        xl
    } else {
        xr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_root_of_two() {
        let g = |x: Dd| x * x * x;
        let x = solve_monotone(g, Dd::ONE, Dd::new(2.0), Dd::ONE, Dd::new(8.0), Dd::new(2.0), 1e-31, 0.0);
        let r = (x * x * x - Dd::new(2.0)).abs().to_f64();
        assert!(r < 1e-30, "residual {r}");
    }

    #[test]
    fn decreasing_and_flat_near_root() {
        // g(x) = 1 - x^2 on [0, 1] has a vanishing derivative at 0
        let g = |x: Dd| Dd::ONE - x * x;
        let t = Dd::new(1.0 - 1e-12);
        let x = solve_monotone(g, Dd::ZERO, Dd::ONE, Dd::ONE, Dd::ZERO, t, 1e-30, 0.0);
        assert!((x.to_f64() - (1.0 - t.hi).sqrt()).abs() < 1e-17);
    }

    #[test]
    fn clamps_outside_targets() {
        let g = |x: Dd| x;
        let x = solve_monotone(g, Dd::ZERO, Dd::ONE, Dd::ZERO, Dd::ONE, Dd::new(3.0), 1e-20, 0.0);
        assert_eq!(x, Dd::ONE);
    }
}
