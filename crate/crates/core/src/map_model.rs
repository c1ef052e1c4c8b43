//! Piecewise maps of a compact interval with one-sided critical and singular
//! points, and the built-in example maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::expr::Expr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointClass {
    /// order >= 1: the derivative vanishes (or stays bounded for order 1)
    Critical,
    /// 0 < order < 1: the derivative blows up
    Singular,
}

/// A one-sided point `c+` or `c-`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneSided {
    pub location: f64,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: f64,
    pub side: Side,
    pub order: f64,
    /// Non-degeneracy constant `C`.
    pub constant: f64,
}

impl CriticalPoint {
    pub fn class(&self) -> PointClass {
        if self.order >= 1.0 {
            PointClass::Critical
        } else {
            PointClass::Singular
        }
    }

    pub fn one_sided(&self) -> OneSided {
        OneSided {
            location: self.location,
            side: self.side,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub expr: Expr,
}

/// A map `f: J -> J`, C^2 and strictly monotone on each branch.
///
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct PiecewiseMap {
    pub name: String,
    pub domain: (f64, f64),
    pub branches: Vec<Branch>,
    pub critical: Vec<CriticalPoint>,
    /// The transitive core, a union of closed intervals.
    pub core: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapFile {
    name: String,
    domain: [f64; 2],
    #[serde(default)]
    core: Vec<[f64; 2]>,
    branches: Vec<BranchFile>,
    #[serde(default)]
    critical: Vec<CriticalPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchFile {
    interval: [f64; 2],
    expr: String,
}

/// Result of sampling the two-sided power-law bounds near a critical point.
#[derive(Clone, Debug, PartialEq)]
pub struct NondegeneracyReport {
    /// Smallest constant for `|f(x) - f(c)| ~ |x-c|^l`.
    pub value: f64,
    /// Smallest constant for `|f'(x)| ~ |x-c|^(l-1)`.
    pub first: f64,
    /// Smallest constant for `|f''(x)| ~ |x-c|^(l-2)`.
    pub second: f64,
    pub declared: f64,
}

impl NondegeneracyReport {
    pub fn overall(&self) -> f64 {
        self.value.max(self.first).max(self.second)
    }

    pub fn passes(&self) -> bool {
        self.overall() <= self.declared
    }
}

const MONOTONE_SAMPLES: usize = 257;

impl PiecewiseMap {
    pub fn new(
        name: impl Into<String>,
        domain: (f64, f64),
        branches: Vec<Branch>,
        critical: Vec<CriticalPoint>,
        core: Vec<(f64, f64)>,
    ) -> Result<PiecewiseMap> {
        let core = if core.is_empty() { vec![domain] } else { core };
        let map = PiecewiseMap {
            name: name.into(),
            domain,
            branches,
            critical,
            core,
        };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMap(m));
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return bad(format!("domain [{a}, {b}] is not a proper interval"));
        }
        if self.branches.is_empty() {
            return bad("no branches".into());
        }
        if self.branches[0].lo != a || self.branches.last().unwrap().hi != b {
            return bad("branches do not cover the domain".into());
        }
        for w in self.branches.windows(2) {
            if w[0].hi != w[1].lo {
                return bad(format!("gap or overlap between branches at {} / {}", w[0].hi, w[1].lo));
            }
        }
        for br in &self.branches {
            if !(br.lo < br.hi) {
                return bad(format!("empty branch [{}, {}]", br.lo, br.hi));
            }
            if let Some(c) = br.expr.singular_centers().find(|&c| c > br.lo && c < br.hi) {
                return bad(format!("branch [{}, {}] is not C^2 at interior point {c}", br.lo, br.hi));
            }
        }
        let breaks = self.breakpoints();
        for (i, c) in self.critical.iter().enumerate() {
            if !(c.order > 0.0 && c.constant > 0.0) {
                return bad(format!("critical point at {} needs positive order and constant", c.location));
            }
            if !breaks.contains(&c.location) {
                return bad(format!(
                    "critical point at {} is not a branch boundary; split the branch there",
                    c.location
                ));
            }
            if self.critical[..i]
                .iter()
                .any(|d| d.location == c.location && d.side == c.side)
            {
                return bad(format!("critical point {:?} declared twice", c.one_sided()));
            }
        }
        if !self.critical.is_empty() {
            for &bp in &breaks {
                for side in [Side::Left, Side::Right] {
                    if !self.critical.iter().any(|c| c.location == bp && c.side == side) {
                        return bad(format!("branch point {bp} has no declared {side:?} critical point"));
                    }
                }
                let l = self.eval(bp, Some(Side::Left))?;
                let r = self.eval(bp, Some(Side::Right))?;
                if (l - r).abs() > 1e-12 {
                    if let Some(c) = self
                        .critical
                        .iter()
                        .find(|c| c.location == bp && c.order == 1.0)
                    {
                        return bad(format!(
                            "discontinuity at {} with bounded derivative on the {:?} side is not supported",
                            bp, c.side
                        ));
                    }
                }
            }
        }
        let span = b - a;
        for (k, br) in self.branches.iter().enumerate() {
            let mut sign = 0.0;
            for i in 1..MONOTONE_SAMPLES {
                let x = br.lo + (br.hi - br.lo) * i as f64 / MONOTONE_SAMPLES as f64;
                let d = br.expr.deriv(x);
                if d == 0.0 || !d.is_finite() {
                    return bad(format!("branch {k} has a degenerate derivative at {x}"));
                }
                if sign == 0.0 {
                    sign = d.signum();
                } else if d.signum() != sign {
                    return bad(format!("branch {k} is not monotone (derivative changes sign near {x})"));
                }
            }
            for i in 0..=MONOTONE_SAMPLES {
                let x = br.lo + (br.hi - br.lo) * i as f64 / MONOTONE_SAMPLES as f64;
                let y = br.expr.eval(x);
                if !(y >= a - 1e-9 * span && y <= b + 1e-9 * span) {
                    return bad(format!("f({x}) = {y} leaves the domain"));
                }
            }
        }
        for &(lo, hi) in &self.core {
            if !(lo < hi && lo >= a && hi <= b) {
                return bad(format!("core interval [{lo}, {hi}] is not inside the domain"));
            }
        }
        for w in self.core.windows(2) {
            if w[0].1 >= w[1].0 {
                return bad("core intervals must be sorted and disjoint".into());
            }
        }
        Ok(())
    }

    pub fn from_toml(src: &str) -> Result<PiecewiseMap> {
        let file: MapFile = toml::from_str(src)?;
        let branches = file
            .branches
            .iter()
            .map(|b| {
                Ok(Branch {
                    lo: b.interval[0],
                    hi: b.interval[1],
                    expr: Expr::parse(&b.expr)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PiecewiseMap::new(
            file.name,
            (file.domain[0], file.domain[1]),
            branches,
            file.critical,
            file.core.iter().map(|c| (c[0], c[1])).collect(),
        )
    }

    pub fn to_toml(&self) -> String {
        let file = MapFile {
            name: self.name.clone(),
            domain: [self.domain.0, self.domain.1],
            core: self.core.iter().map(|&(a, b)| [a, b]).collect(),
            branches: self
                .branches
                .iter()
                .map(|b| BranchFile {
                    interval: [b.lo, b.hi],
                    expr: b.expr.to_string(),
                })
                .collect(),
            critical: self.critical.clone(),
        };
        toml::to_string(&file).expect("map file serializes")
    }

    /// Loads `builtin:<name>` or a map file path.
    pub fn load(source: &str) -> Result<PiecewiseMap> {
        if let Some(name) = source.strip_prefix("builtin:") {
            return PiecewiseMap::builtin(name);
        }
        let src = std::fs::read_to_string(Path::new(source))?;
        PiecewiseMap::from_toml(&src)
    }

    /// `doubling`, `tripling`, `chebyshev`, `lorenz`, `combined`.
    pub fn builtin(name: &str) -> Result<PiecewiseMap> {
        match name {
            "doubling" => PiecewiseMap::uniform(2),
            "tripling" => PiecewiseMap::uniform(3),
            "chebyshev" => PiecewiseMap::chebyshev(),
            "lorenz" => PiecewiseMap::lorenz(),
            "combined" => PiecewiseMap::combined(CombinedParams::default()),
            other => Err(Error::Config(format!("unknown built-in map '{other}'"))),
        }
    }

    /// Piecewise-affine full-branch map on [-1, 1] with constant slope.
    /// No critical points; the branch boundaries are plain discontinuities.
    pub fn uniform(slope: u32) -> Result<PiecewiseMap> {
        if slope < 2 {
            return Err(Error::Config("uniform map needs slope >= 2".into()));
        }
        let s = slope as f64;
        let branches = (0..slope)
            .map(|k| {
                let lo = if k == 0 { -1.0 } else { -1.0 + 2.0 * k as f64 / s };
                let hi = if k + 1 == slope { 1.0 } else { -1.0 + 2.0 * (k + 1) as f64 / s };
                let shift = s - 2.0 * k as f64 - 1.0;
                let src = if shift < 0.0 {
                    format!("{s}*x - {}", -shift)
                } else {
                    format!("{s}*x + {shift}")
                };
                Ok(Branch {
                    lo,
                    hi,
                    expr: Expr::parse(&src)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let name = if slope == 2 {
            "doubling".to_string()
        } else {
            format!("uniform{slope}")
        };
        PiecewiseMap::new(name, (-1.0, 1.0), branches, vec![], vec![])
    }

    /// `f(x) = 1 - 2x^2` on [-1, 1].
    pub fn chebyshev() -> Result<PiecewiseMap> {
        let e = Expr::parse("1 - 2*x^2")?;
        let crit = |side| CriticalPoint {
            location: 0.0,
            side,
            order: 2.0,
            constant: 4.0,
        };
        PiecewiseMap::new(
            "chebyshev",
            (-1.0, 1.0),
            vec![
                Branch { lo: -1.0, hi: 0.0, expr: e.clone() },
                Branch { lo: 0.0, hi: 1.0, expr: e },
            ],
            vec![crit(Side::Left), crit(Side::Right)],
            vec![],
        )
    }

    /// `f(x) = sign(x) (2|x|^0.6 - 1)` on [-1, 1]; |f'| >= 1.2 everywhere.
    pub fn lorenz() -> Result<PiecewiseMap> {
        let sing = |side| CriticalPoint {
            location: 0.0,
            side,
            order: 0.6,
            constant: 2.5,
        };
        PiecewiseMap::new(
            "lorenz",
            (-1.0, 1.0),
            vec![
                Branch { lo: -1.0, hi: 0.0, expr: Expr::parse("1 - 2*|x|^0.6")? },
                Branch { lo: 0.0, hi: 1.0, expr: Expr::parse("-1 + 2*|x|^0.6")? },
            ],
            vec![sing(Side::Left), sing(Side::Right)],
            vec![],
        )
    }

    /// Odd map on [-1, 1] with a singular point at 0 and quadratic critical
    /// points at +-1/2: on (0, 1], `f(x) = -1 + a|x|^s - b x` with `b` chosen
    /// so that `f'(1/2) = 0`.
    pub fn combined(p: CombinedParams) -> Result<PiecewiseMap> {
        let s = p.singular_order;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Config("combined map: singular order must lie in (0, 1)".into()));
        }
        let peak = 0.5f64.powf(s) * (1.0 - s);
        let a = p.amplitude.unwrap_or(2.0 / peak);
        if !(a > 0.0 && a * peak <= 2.0 + 1e-12) {
            return Err(Error::Config(format!(
                "combined map: amplitude must lie in (0, {}]",
                2.0 / peak
            )));
        }
        let b = s * a * 0.5f64.powf(s - 1.0);
        let right = Expr::parse(&format!("-1 + {a}*|x|^{s} - {b}*x"))?;
        let left = Expr::parse(&format!("1 - {a}*|x|^{s} - {b}*x"))?;
        let branches = vec![
            Branch { lo: -1.0, hi: -0.5, expr: left.clone() },
            Branch { lo: -0.5, hi: 0.0, expr: left },
            Branch { lo: 0.0, hi: 0.5, expr: right.clone() },
            Branch { lo: 0.5, hi: 1.0, expr: right },
        ];
        let mut critical = Vec::new();
        for (loc, order) in [(-0.5, 2.0), (0.0, s), (0.5, 2.0)] {
            for side in [Side::Left, Side::Right] {
                critical.push(CriticalPoint {
                    location: loc,
                    side,
                    order,
                    constant: 1e12,
                });
            }
        }
        let mut map = PiecewiseMap::new("combined", (-1.0, 1.0), branches, critical, vec![])?;
        // calibrate the declared constants from the closed form
        for i in 0..map.critical.len() {
            let mut worst: f64 = 1.0;
            for radius in [0.2, 1e-3, 1e-5] {
                worst = worst.max(nondegeneracy_check(&map, i, radius, 200)?.overall());
            }
            map.critical[i].constant = (1.25 * worst * 100.0).ceil() / 100.0;
        }
        Ok(map)
    }

    /// Interior branch boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.branches[1..].iter().map(|b| b.lo).collect()
    }

    pub fn critical_locations(&self) -> Vec<f64> {
        let mut locs: Vec<f64> = self.critical.iter().map(|c| c.location).collect();
        locs.sort_by(f64::total_cmp);
        locs.dedup();
        locs
    }

    /// Largest order among critical (order >= 1) points, `l`.
    pub fn ell(&self) -> Option<f64> {
        self.critical
            .iter()
            .filter(|c| c.class() == PointClass::Critical)
            .map(|c| c.order)
            .reduce(f64::max)
    }

    /// Largest order among singular points, `l*`.
    pub fn ell_star(&self) -> Option<f64> {
        self.critical
            .iter()
            .filter(|c| c.class() == PointClass::Singular)
            .map(|c| c.order)
            .reduce(f64::max)
    }

    pub fn find_critical(&self, p: OneSided) -> Option<usize> {
        self.critical
            .iter()
            .position(|c| c.location == p.location && c.side == p.side)
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let (a, b) = self.domain;
        if x >= a && x <= b {
            Ok(())
        } else {
            Err(Error::Domain { x, lo: a, hi: b })
        }
    }

    /// Branch containing `x`; a side is required at interior branch points.
    pub fn branch_at(&self, x: f64, side: Option<Side>) -> Result<usize> {
        self.check_domain(x)?;
        let k = self.branches.partition_point(|b| b.hi <= x);
        if k < self.branches.len() && self.branches[k].lo == x && k > 0 {
            return match side {
                Some(Side::Left) => Ok(k - 1),
                Some(Side::Right) => Ok(k),
                None => Err(Error::Ambiguous(x)),
            };
        }
        Ok(k.min(self.branches.len() - 1))
    }

    /// Branch containing a double-double point; ties at branch points are
    /// broken by `side`. Points outside the domain clamp to the end branches.
    #[inline]
    pub fn branch_at_dd(&self, x: Dd, side: Side) -> usize {
        let n = self.branches.len();
        self.branches[..n - 1].partition_point(|b| {
            let hi = Dd::new(b.hi);
            hi < x || (hi == x && side == Side::Right)
        })
    }

    #[inline]
    fn branch_fast(&self, x: f64) -> usize {
        let n = self.branches.len();
        self.branches[..n - 1].partition_point(|b| b.hi <= x)
    }

    pub fn eval(&self, x: f64, side: Option<Side>) -> Result<f64> {
        let k = self.branch_at(x, side)?;
        Ok(self.branches[k].expr.eval(x))
    }

    /// f64 evaluation without checks; branch points resolve to the right.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.branches[self.branch_fast(x)].expr.eval(x)
    }

    #[inline]
    pub fn eval_dd(&self, x: Dd, side: Side) -> Dd {
        self.branches[self.branch_at_dd(x, side)].expr.eval_dd(x)
    }

    fn interior_check(&self, x: f64) -> Result<usize> {
        self.check_domain(x)?;
        if self.breakpoints().contains(&x) {
            return Err(Error::Singular(x));
        }
        self.branch_at(x, None)
    }

    pub fn deriv(&self, x: f64) -> Result<f64> {
        let k = self.interior_check(x)?;
        Ok(self.branches[k].expr.deriv(x))
    }

    pub fn deriv2(&self, x: f64) -> Result<f64> {
        let k = self.interior_check(x)?;
        Ok(self.branches[k].expr.deriv2(x))
    }

    #[inline]
    pub fn deriv_fast(&self, x: f64) -> f64 {
        self.branches[self.branch_fast(x)].expr.deriv(x)
    }

    #[inline]
    pub fn deriv_dd(&self, x: Dd, side: Side) -> f64 {
        self.branches[self.branch_at_dd(x, side)].expr.deriv_dd(x)
    }

    /// One-sided value at the ends of branch `k`, in branch order.
    pub fn branch_end_values(&self, k: usize) -> (f64, f64) {
        let b = &self.branches[k];
        (b.expr.eval(b.lo), b.expr.eval(b.hi))
    }

    /// Sorted image `f(branch k)`.
    pub fn branch_range(&self, k: usize) -> (f64, f64) {
        let (u, v) = self.branch_end_values(k);
        (u.min(v), u.max(v))
    }

    pub fn branch_increasing(&self, k: usize) -> bool {
        let (u, v) = self.branch_end_values(k);
        v > u
    }

    /// Preimage of `y` under branch `k`, if `y` lies in the branch image.
    pub fn inverse_dd(&self, k: usize, y: Dd) -> Option<Dd> {
        let b = &self.branches[k];
        let (u, v) = (b.expr.eval_dd(Dd::new(b.lo)), b.expr.eval_dd(Dd::new(b.hi)));
        if y < u.min(v) || y > u.max(v) {
            return None;
        }
        Some(b.expr.invert_dd(y, b.lo, b.hi))
    }

    /// Preimage under branch `k`, clamped to the branch when `y` falls
    /// outside its image.
    #[inline]
    pub fn inverse_clamped(&self, k: usize, y: Dd) -> Dd {
        let b = &self.branches[k];
        b.expr.invert_dd(y, b.lo, b.hi)
    }

    /// `D(x)`: distance to the nearest critical location (infinite if none).
    pub fn distance_to_crit(&self, x: f64) -> f64 {
        self.critical
            .iter()
            .map(|c| (x - c.location).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// `D(w) = sup_{x in w} D(x)`.
    pub fn distance_to_crit_interval(&self, lo: f64, hi: f64) -> f64 {
        let locs = self.critical_locations();
        let mut best = self.distance_to_crit(lo).max(self.distance_to_crit(hi));
        for w in locs.windows(2) {
            let m = 0.5 * (w[0] + w[1]);
            if m > lo && m < hi {
                best = best.max(self.distance_to_crit(m));
            }
        }
        best
    }

    /// One-sided value `f(c+)` or `f(c-)`.
    pub fn one_sided_value(&self, p: OneSided) -> f64 {
        self.eval(p.location, Some(p.side)).expect("one-sided point inside the domain")
    }

    pub fn one_sided_value_dd(&self, p: OneSided) -> Dd {
        self.eval_dd(Dd::new(p.location), p.side)
    }

    pub fn core_hull(&self) -> (f64, f64) {
        (self.core[0].0, self.core.last().unwrap().1)
    }

    pub fn in_core(&self, x: f64) -> bool {
        self.core.iter().any(|&(a, b)| x >= a && x <= b)
    }
}

/// Parameters of the combined singular + critical family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedParams {
    pub singular_order: f64,
    /// `None` picks the amplitude for which the critical values are +-1.
    pub amplitude: Option<f64>,
}

impl Default for CombinedParams {
    fn default() -> Self {
        CombinedParams {
            singular_order: 0.6,
            amplitude: None,
        }
    }
}

/// Samples the two-sided bounds of the non-degeneracy conditions on the
/// one-sided neighbourhood `(c, c +- radius)` at log-spaced offsets down to
/// `radius * 1e-3`, and returns the smallest constants that fit the samples.
pub fn nondegeneracy_check(
    map: &PiecewiseMap,
    index: usize,
    radius: f64,
    samples: usize,
) -> Result<NondegeneracyReport> {
    let c = map
        .critical
        .get(index)
        .ok_or_else(|| Error::Config(format!("no critical point with index {index}")))?;
    let s = c.side.sign();
    let far = c.location + s * radius;
    let (nlo, nhi) = (c.location.min(far), c.location.max(far));
    if nlo < map.domain.0 || nhi > map.domain.1 {
        return Err(Error::Config(format!("radius {radius} leaves the domain")));
    }
    if let Some(other) = map.breakpoints().into_iter().find(|&b| b > nlo && b < nhi || (b == far)) {
        return Err(Error::Config(format!(
            "neighbourhood of {} with radius {radius} contains another critical point {other}",
            c.location
        )));
    }
    let samples = samples.max(2);
    let branch = map.branch_at(c.location, Some(c.side))?;
    let expr = &map.branches[branch].expr;
    let fc = expr.eval_dd(Dd::new(c.location));
    let l = c.order;
    let ratio = |r: f64| if r > 0.0 { r.max(1.0 / r) } else { f64::INFINITY };
    let mut rep = NondegeneracyReport {
        value: 0.0,
        first: 0.0,
        second: 0.0,
        declared: c.constant,
    };
    for k in 0..samples {
        let t = radius * 10f64.powf(-3.0 * k as f64 / (samples - 1) as f64);
        let x = Dd::new(c.location) + Dd::new(s * t);
        let dv = (expr.eval_dd(x) - fc).abs().to_f64();
        let d1 = expr.deriv_dd(x).abs();
        let d2 = expr.deriv2((x).to_f64()).abs();
        rep.value = rep.value.max(ratio(dv / t.powf(l)));
        rep.first = rep.first.max(ratio(d1 / t.powf(l - 1.0)));
        rep.second = rep.second.max(ratio(d2 / t.powf(l - 2.0)));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let cheb = PiecewiseMap::chebyshev().unwrap();
        assert_eq!(cheb.eval(0.5, None).unwrap(), 0.5);
        assert_eq!(cheb.eval(0.0, Some(Side::Left)).unwrap(), 1.0);
        assert_eq!(cheb.eval(0.0, Some(Side::Right)).unwrap(), 1.0);
        assert!(matches!(cheb.eval(0.0, None), Err(Error::Ambiguous(_))));
        assert!(matches!(cheb.eval(1.5, None), Err(Error::Domain { .. })));

        let lor = PiecewiseMap::lorenz().unwrap();
        assert_eq!(lor.eval(0.0, Some(Side::Right)).unwrap(), -1.0);
        assert_eq!(lor.eval(0.0, Some(Side::Left)).unwrap(), 1.0);
        // approaching 0+ converges to -1
        assert!((lor.eval(1e-12, None).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn deriv_examples() {
        let cheb = PiecewiseMap::chebyshev().unwrap();
        assert_eq!(cheb.deriv(0.25).unwrap(), -1.0);
        assert_eq!(cheb.deriv2(-0.3).unwrap(), -4.0);
        assert!(matches!(cheb.deriv(0.0), Err(Error::Singular(_))));
        let lor = PiecewiseMap::lorenz().unwrap();
        assert!((lor.deriv(1.0).unwrap() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn nondegeneracy_closed_forms() {
        let cheb = PiecewiseMap::chebyshev().unwrap();
        let rep = nondegeneracy_check(&cheb, 1, 1e-2, 50).unwrap();
        // |f(x) - f(0)| = 2|x|^2, |f'| = 4|x|, |f''| = 4
        assert!((rep.value - 2.0).abs() < 1e-12);
        assert!((rep.first - 4.0).abs() < 1e-12);
        assert!((rep.second - 4.0).abs() < 1e-12);
        assert!(rep.passes());

        let lor = PiecewiseMap::lorenz().unwrap();
        let rep = nondegeneracy_check(&lor, 1, 1e-2, 50).unwrap();
        assert!((rep.value - 2.0).abs() < 1e-12);
        assert!((rep.first - 1.0 / 1.2).abs() < 1e-12 || (rep.first - 1.2).abs() < 1e-12);
        assert!((rep.second - 1.0 / 0.48).abs() < 1e-9);
        assert!(rep.passes());
    }

    #[test]
    fn wrong_order_diverges() {
        let mut cheb = PiecewiseMap::chebyshev().unwrap();
        cheb.critical[1].order = 2.1;
        let coarse = nondegeneracy_check(&cheb, 1, 1e-2, 50).unwrap();
        let fine = nondegeneracy_check(&cheb, 1, 1e-4, 50).unwrap();
        assert!(fine.value > coarse.value);
        assert!(fine.overall() > coarse.overall());
        assert!(!fine.passes());
    }

    #[test]
    fn neighbourhood_with_other_point_is_rejected() {
        let comb = PiecewiseMap::combined(CombinedParams::default()).unwrap();
        let i = comb
            .find_critical(OneSided { location: 0.0, side: Side::Right })
            .unwrap();
        assert!(matches!(nondegeneracy_check(&comb, i, 0.6, 10), Err(Error::Config(_))));
    }

    #[test]
    fn distance_examples() {
        let cheb = PiecewiseMap::chebyshev().unwrap();
        assert_eq!(cheb.distance_to_crit(0.3), 0.3);
        assert_eq!(cheb.distance_to_crit_interval(0.2, 0.3), 0.3);
        let comb = PiecewiseMap::combined(CombinedParams::default()).unwrap();
        assert!((comb.distance_to_crit(0.4) - 0.1).abs() < 1e-15);
        assert_eq!(PiecewiseMap::uniform(2).unwrap().distance_to_crit(0.1), f64::INFINITY);
    }

    #[test]
    fn toml_round_trip() {
        for name in ["doubling", "chebyshev", "lorenz", "combined"] {
            let m = PiecewiseMap::builtin(name).unwrap();
            let back = PiecewiseMap::from_toml(&m.to_toml()).unwrap();
            assert_eq!(back.critical, m.critical);
            for x in [-0.9, -0.3, 0.2, 0.77] {
                assert_eq!(back.apply(x), m.apply(x), "{name} at {x}");
            }
        }
    }

    #[test]
    fn rejects_bad_maps() {
        let missing_side = r#"
            name = "half"
            domain = [-1.0, 1.0]
            [[branches]]
            interval = [-1.0, 0.0]
            expr = "1 - 2*x^2"
            [[branches]]
            interval = [0.0, 1.0]
            expr = "1 - 2*x^2"
            [[critical]]
            location = 0.0
            side = "right"
            order = 2.0
            constant = 4.0
        "#;
        assert!(matches!(PiecewiseMap::from_toml(missing_side), Err(Error::InvalidMap(_))));

        let non_monotone = r#"
            name = "bump"
            domain = [-1.0, 1.0]
            [[branches]]
            interval = [-1.0, 1.0]
            expr = "1 - 2*x^2"
        "#;
        assert!(matches!(PiecewiseMap::from_toml(non_monotone), Err(Error::InvalidMap(_))));

        // jump with bounded derivative on both sides
        let bounded_jump = r#"
            name = "jump"
            domain = [-1.0, 1.0]
            [[branches]]
            interval = [-1.0, 0.0]
            expr = "2*x + 1"
            [[branches]]
            interval = [0.0, 1.0]
            expr = "2*x - 1"
            [[critical]]
            location = 0.0
            side = "left"
            order = 1.0
            constant = 2.0
            [[critical]]
            location = 0.0
            side = "right"
            order = 1.0
            constant = 2.0
        "#;
        assert!(matches!(PiecewiseMap::from_toml(bounded_jump), Err(Error::InvalidMap(_))));
    }

    #[test]
    fn inverse_branches() {
        let cheb = PiecewiseMap::chebyshev().unwrap();
        let y = Dd::new(0.3);
        let x = cheb.inverse_dd(1, y).unwrap();
        assert!((cheb.eval_dd(x, Side::Right) - y).abs().to_f64() < 1e-30);
        assert!((x.to_f64() - (0.35f64).sqrt()).abs() < 1e-15);
        assert!(cheb.inverse_dd(1, Dd::new(1.5)).is_none());
    }
}
