//! The critical partition of the δ-neighbourhood of the critical set, hat
//! extensions, and binding periods.

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::map_model::{PiecewiseMap, PointClass, Side};

/// `r_δ = ceil(log 1/δ)` together with the snapped `δ = e^{-r_δ}`.
pub fn r_delta(delta: f64) -> Result<(u32, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Range(format!("delta must lie in (0, 1), got {delta}")));
    }
    let r = (1.0 / delta).ln().ceil().max(1.0) as u32;
    Ok((r, ring(r)))
}

/// `e^{-r}`.
#[inline]
pub fn ring(r: u32) -> f64 {
    (-(r as f64)).exp()
}

/// `I_{r,j}` next to the one-sided critical point `crit` (an index into the
/// map's critical list).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartitionIndex {
    pub crit: usize,
    pub r: u32,
    pub j: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Located {
    pub index: PartitionIndex,
    /// The point sits exactly on the critical location, or deeper than
    /// `r_max`; the index is the innermost representable one.
    pub clipped: bool,
}

#[derive(Clone, Debug)]
pub struct CriticalPartition {
    pub r_delta: u32,
    pub delta: f64,
    pub r_max: u32,
    /// (location, side) per critical point, same order as the map.
    pub points: Vec<(f64, Side)>,
}

impl CriticalPartition {
    pub fn new(map: &PiecewiseMap, delta: f64, r_max: u32) -> Result<CriticalPartition> {
        let (r_delta, delta) = r_delta(delta)?;
        if r_max <= r_delta + 1 {
            return Err(Error::Config(format!("r_max = {r_max} must exceed r_delta + 1 = {}", r_delta + 1)));
        }
        let locs = map.critical_locations();
        for w in locs.windows(2) {
            if 2.0 * delta >= w[1] - w[0] {
                return Err(Error::Config(format!(
                    "delta = {delta:e} is not below half the gap between critical points {} and {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(CriticalPartition {
            r_delta,
            delta,
            r_max,
            points: map.critical.iter().map(|c| (c.location, c.side)).collect(),
        })
    }

    pub fn r_min(&self) -> u32 {
        self.r_delta + 1
    }

    /// Width of each of the `r^2` pieces of `I_r`.
    #[inline]
    pub fn piece_width(r: u32) -> f64 {
        (ring(r - 1) - ring(r)) / (r as f64 * r as f64)
    }

    /// Distance from `c` of the boundary between `I_{r,j}` and `I_{r,j+1}`;
    /// `j = 0` is `e^{-r}` and `j = r^2` is exactly `e^{-r+1}`.
    #[inline]
    pub fn offset(r: u32, j: u32) -> f64 {
        if j >= r * r {
            ring(r - 1)
        } else {
            ring(r) + j as f64 * Self::piece_width(r)
        }
    }

    /// Inner and outer distance of `I_{r,j}` from its critical point.
    pub fn piece_offsets(&self, r: u32, j: u32) -> (f64, f64) {
        (Self::offset(r, j - 1), Self::offset(r, j))
    }

    /// The point `c + side * off` in double-double.
    #[inline]
    pub fn at_offset(&self, crit: usize, off: f64) -> Dd {
        let (c, side) = self.points[crit];
        Dd::new(c) + Dd::new(side.sign() * off)
    }

    fn sorted(&self, crit: usize, inner: f64, outer: f64) -> (Dd, Dd) {
        let (a, b) = (self.at_offset(crit, inner), self.at_offset(crit, outer));
        if a < b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// `I_{r,j}` as a sorted interval.
    pub fn piece(&self, idx: PartitionIndex) -> (Dd, Dd) {
        let (i, o) = self.piece_offsets(idx.r, idx.j);
        self.sorted(idx.crit, i, o)
    }

    /// `Δ_c` as a sorted interval (the critical point itself excluded).
    pub fn neighbourhood(&self, crit: usize) -> (Dd, Dd) {
        self.sorted(crit, 0.0, self.delta)
    }

    /// `(r, j)` with `off` in `I_{r,j}` for `0 < off < δ`; `None` outside.
    pub fn locate_offset(&self, off: Dd) -> Option<(u32, u32, bool)> {
        if !(off.hi > 0.0) || off >= Dd::new(self.delta) {
            return None;
        }
        let mut r = (-off.hi.ln()).ceil().max(self.r_min() as f64);
        if r > self.r_max as f64 {
            r = self.r_max as f64;
        }
        let mut r = r as u32;
        while r > self.r_min() && off >= Dd::new(ring(r - 1)) {
            r -= 1;
        }
        while r < self.r_max && off < Dd::new(ring(r)) {
            r += 1;
        }
        if off < Dd::new(ring(r)) {
            return Some((r, 1, true));
        }
        let w = Self::piece_width(r);
        let rr = r * r;
        let guess = ((off - Dd::new(ring(r))).to_f64() / w).floor() + 1.0;
        let mut j = guess.clamp(1.0, rr as f64) as u32;
        while j > 1 && off < Dd::new(Self::offset(r, j - 1)) {
            j -= 1;
        }
        while j < rr && off >= Dd::new(Self::offset(r, j)) {
            j += 1;
        }
        Some((r, j, false))
    }

    /// The piece containing `x`, if `x` lies in `Δ`.
    pub fn locate(&self, x: Dd) -> Option<Located> {
        for (crit, &(c, side)) in self.points.iter().enumerate() {
            let off = (x - Dd::new(c)).mul_f64(side.sign());
            if off.hi == 0.0 && off.lo == 0.0 {
                continue;
            }
            if let Some((r, j, clipped)) = self.locate_offset(off) {
                return Some(Located {
                    index: PartitionIndex { crit, r, j },
                    clipped,
                });
            }
        }
        // exactly on a critical location: innermost piece on the first side
        self.points
            .iter()
            .position(|&(c, _)| x == Dd::new(c))
            .map(|crit| Located {
                index: PartitionIndex {
                    crit,
                    r: self.r_max,
                    j: 1,
                },
                clipped: true,
            })
    }

    /// Offsets of `Î_{r,j}`; the flag is set when the hat is clipped at the
    /// critical point (innermost representable piece).
    pub fn hat_offsets(&self, r: u32, j: u32) -> (f64, f64, bool) {
        let rr = r * r;
        let (inner, clipped) = if j > 1 {
            (Self::offset(r, j - 2), false)
        } else if r < self.r_max {
            let r1 = r + 1;
            (Self::offset(r1, r1 * r1 - 1), false)
        } else {
            (0.0, true)
        };
        let outer = if j < rr {
            Self::offset(r, j + 1)
        } else if r == self.r_min() {
            // the undivided I_{r_δ}
            ring(self.r_delta - 1)
        } else {
            Self::offset(r - 1, 1)
        };
        (inner, outer, clipped)
    }

    pub fn hat(&self, idx: PartitionIndex) -> (Dd, Dd, bool) {
        let (i, o, clipped) = self.hat_offsets(idx.r, idx.j);
        let (a, b) = self.sorted(idx.crit, i, o);
        (a, b, clipped)
    }

    /// Offsets of `Î_r = I_{r+1} ∪ I_r ∪ I_{r-1}`.
    pub fn binding_hat_offsets(r: u32) -> (f64, f64) {
        (ring(r + 1), ring(r - 2))
    }
}

/// Critical orbit `c_1, c_2, ...` in double-double.
#[derive(Clone, Debug)]
pub struct CriticalOrbit {
    pub points: Vec<Dd>,
}

impl CriticalOrbit {
    /// `c_1 = f(c)` (one-sided) and forward iterates up to `len` points.
    pub fn new(map: &PiecewiseMap, crit: usize, len: usize) -> CriticalOrbit {
        let c = &map.critical[crit];
        let mut points = Vec::with_capacity(len);
        let mut y = map.one_sided_value_dd(c.one_sided());
        for _ in 0..len {
            points.push(y);
            y = map.eval_dd(y, Side::Right);
        }
        CriticalOrbit { points }
    }
}

/// Largest `k` such that `|f^{j+1}(x) - c_{j+1}| <= δ e^{-2αj}` for all
/// `j <= k`; the `bool` is set when the horizon was reached first.
pub fn binding_at(
    map: &PiecewiseMap,
    orbit: &CriticalOrbit,
    x: Dd,
    side: Side,
    alpha: f64,
    delta: f64,
    horizon: usize,
) -> (u32, bool) {
    let mut y = map.eval_dd(x, side);
    let n = horizon.min(orbit.points.len());
    for j in 0..n {
        let dev = (y - orbit.points[j]).abs().to_f64();
        if dev > delta * (-2.0 * alpha * j as f64).exp() {
            return (j.saturating_sub(1) as u32, false);
        }
        y = map.eval_dd(y, Side::Right);
    }
    (n as u32, true)
}

/// `p(r)` for the one-sided critical point `crit`, tested at the endpoints
/// and midpoint of `Î_r`.
pub fn binding_period(
    map: &PiecewiseMap,
    part: &CriticalPartition,
    orbit: &CriticalOrbit,
    crit: usize,
    r: u32,
    alpha: f64,
    horizon: usize,
) -> (u32, bool) {
    if map.critical[crit].class() == PointClass::Singular {
        return (0, false);
    }
    let (lo, hi) = CriticalPartition::binding_hat_offsets(r);
    let side = map.critical[crit].side;
    let mut p = u32::MAX;
    let mut capped = false;
    for off in [lo, 0.5 * (lo + hi), hi] {
        let x = part.at_offset(crit, off);
        let (q, cap) = binding_at(map, orbit, x, side, alpha, part.delta, horizon);
        if q < p {
            p = q;
            capped = cap;
        }
    }
    (p, capped)
}

/// Depth beyond which `f(c ± e^{-r}) - f(c)` is lost in double-double
/// rounding.
pub fn precision_depth(map: &PiecewiseMap, part: &CriticalPartition, crit: usize) -> u32 {
    let c = &map.critical[crit];
    let fc = map.one_sided_value_dd(c.one_sided());
    let floor = 2f64.powi(-90) * fc.hi.abs().max(1e-300);
    let mut r = part.r_min();
    while r < part.r_max {
        let x = part.at_offset(crit, ring(r + 1));
        let d = (map.eval_dd(x, c.side) - fc).abs().to_f64();
        if d <= floor || !d.is_finite() {
            break;
        }
        r += 1;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BindingEntry {
    pub r: u32,
    pub p: u32,
    pub capped: bool,
}

/// Binding periods per critical point for `r_δ < r <= depth`.
#[derive(Clone, Debug)]
pub struct BindingTable {
    pub alpha: f64,
    pub horizon: usize,
    /// per critical point: (precision depth, entries indexed by r - r_δ - 1)
    pub rows: Vec<(u32, Vec<BindingEntry>)>,
    pub orbits: Vec<Option<CriticalOrbit>>,
}

impl BindingTable {
    pub fn build(
        map: &PiecewiseMap,
        part: &CriticalPartition,
        alpha: f64,
        horizon: usize,
    ) -> BindingTable {
        use rayon::prelude::*;
        let n = map.critical.len();
        let orbits: Vec<Option<CriticalOrbit>> = (0..n)
            .map(|i| {
                (map.critical[i].class() == PointClass::Critical)
                    .then(|| CriticalOrbit::new(map, i, horizon + 1))
            })
            .collect();
        let rows = (0..n)
            .map(|crit| {
                let depth = precision_depth(map, part, crit);
                let entries = (part.r_min()..=depth)
                    .into_par_iter()
                    .map(|r| {
                        let (p, capped) = match &orbits[crit] {
                            Some(orbit) => binding_period(map, part, orbit, crit, r, alpha, horizon),
                            None => (0, false),
                        };
                        BindingEntry { r, p, capped }
                    })
                    .collect();
                (depth, entries)
            })
            .collect();
        BindingTable {
            alpha,
            horizon,
            rows,
            orbits,
        }
    }

    /// Deepest `r` for which binding data is trustworthy.
    pub fn depth(&self, crit: usize) -> u32 {
        self.rows[crit].0
    }

    pub fn get(&self, crit: usize, r: u32) -> Option<BindingEntry> {
        let (_, entries) = &self.rows[crit];
        let first = entries.first()?.r;
        entries.get(r.checked_sub(first)? as usize).copied()
    }

    /// `r` values at which `p(r) < p(r - 1)`.
    pub fn monotonicity_violations(&self, crit: usize) -> Vec<u32> {
        self.rows[crit]
            .1
            .windows(2)
            .filter(|w| w[1].p < w[0].p)
            .map(|w| w[1].r)
            .collect()
    }
}

/// `min over sampled x in Î_r of (1/r) log(κ |(f^{p+1})'(x)|)`.
pub fn binding_expansion_audit(
    map: &PiecewiseMap,
    part: &CriticalPartition,
    crit: usize,
    r: u32,
    p: u32,
    kappa: f64,
    samples: usize,
) -> f64 {
    let (lo, hi) = CriticalPartition::binding_hat_offsets(r);
    let side = map.critical[crit].side;
    let samples = samples.max(3);
    let mut worst = f64::INFINITY;
    for i in 0..samples {
        let t = i as f64 / (samples - 1) as f64;
        // geometric spacing resolves the inner end
        let off = lo * (hi / lo).powf(t);
        let mut x = part.at_offset(crit, off);
        let mut log_d = 0.0;
        let mut s = side;
        for _ in 0..=p {
            log_d += map.deriv_dd(x, s).abs().max(1e-300).ln();
            x = map.eval_dd(x, s);
            s = Side::Right;
        }
        worst = worst.min((kappa.ln() + log_d) / r as f64);
    }
    worst
}
