//! Statistical estimators: the invariant density, Lyapunov exponent,
//! correlation decay, central limit behaviour and the symbolic-metric checks
//! on the tower.
//!
//! Random starts come from `ChaCha8Rng::seed_from_u64(seed)` with the stream
//! set to the trial (or element) index, so results do not depend on how the
//! work is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::escape::{fit_log_linear, LogLinearFit};
use crate::expr::Expr;
use crate::map_model::PiecewiseMap;
use crate::tower::{audit_elements, separation_time, Separation, Tower};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    OrbitHistogram,
    TowerPushforward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
    pub samples: u64,
    pub estimator: Estimator,
}

impl EmpiricalMeasure {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / self.bins() as f64
    }

    pub fn density(&self, i: usize) -> f64 {
        self.masses[i] * self.bins() as f64 / (self.hi - self.lo)
    }

    /// `Σ |m_i - m'_i|` over a common grid.
    pub fn l1(&self, other: &EmpiricalMeasure) -> Result<f64> {
        if self.bins() != other.bins() || self.lo != other.lo || self.hi != other.hi {
            return Err(Error::Config("measures are on different grids".into()));
        }
        Ok(self.masses.iter().zip(&other.masses).map(|(a, b)| (a - b).abs()).sum())
    }

    /// L¹ distance to the measure with bin masses `cdf(b) - cdf(a)`.
    pub fn l1_to_cdf(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        (0..self.bins())
            .map(|i| (self.masses[i] - (cdf(self.edge(i + 1)) - cdf(self.edge(i)))).abs())
            .sum()
    }

    fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let k = ((x - self.lo) / (self.hi - self.lo) * self.bins() as f64) as usize;
        Some(k.min(self.bins() - 1))
    }

    /// Adds `mass` spread uniformly over `[u, v]`.
    fn add_spread(&mut self, u: f64, v: f64, mass: f64) {
        let (u, v) = if u <= v { (u, v) } else { (v, u) };
        let (Some(i), Some(j)) = (self.bin_of(u.max(self.lo)), self.bin_of(v.min(self.hi))) else {
            return;
        };
        if i == j || v - u <= 0.0 {
            self.masses[i] += mass;
            return;
        }
        for k in i..=j {
            let lo = self.edge(k).max(u);
            let hi = self.edge(k + 1).min(v);
            if hi > lo {
                self.masses[k] += mass * (hi - lo) / (v - u);
            }
        }
    }
}

/// Closed-form CDF of the arcsine law `(1/π)(1-x²)^{-1/2}` on `[-1, 1]`.
pub fn arcsine_cdf(x: f64) -> f64 {
    0.5 + x.clamp(-1.0, 1.0).asin() / std::f64::consts::PI
}

/// A seeded orbit that steps over the critical set and exact fixed points.
pub struct Orbit<'a> {
    map: &'a PiecewiseMap,
    rng: ChaCha8Rng,
    crit: Vec<f64>,
    pub x: f64,
    /// Times the orbit was nudged off a critical point or re-seeded.
    pub perturbations: u64,
}

impl<'a> Orbit<'a> {
    pub fn new(map: &'a PiecewiseMap, seed: u64, stream: u64) -> Orbit<'a> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let x = random_core_point(map, &mut rng);
        Orbit {
            map,
            rng,
            crit: map.critical_locations(),
            x,
            perturbations: 0,
        }
    }

    #[inline]
    pub fn step(&mut self) -> f64 {
        if self.crit.contains(&self.x) {
            self.x = self.x.next_up();
            self.perturbations += 1;
        }
        let y = self.map.apply(self.x);
        if y == self.x {
            self.perturbations += 1;
            self.x = random_core_point(self.map, &mut self.rng);
        } else {
            self.x = y;
        }
        self.x
    }

    pub fn burn(&mut self, n: u64) {
        for _ in 0..n {
            self.step();
        }
    }
}

fn random_core_point(map: &PiecewiseMap, rng: &mut ChaCha8Rng) -> f64 {
    let total: f64 = map.core.iter().map(|&(a, b)| b - a).sum();
    let mut t = rng.gen_range(0.0..total);
    for &(a, b) in &map.core {
        if t < b - a {
            return a + t;
        }
        t -= b - a;
    }
    map.core[0].0
}

/// Histogram of one seeded orbit over the core hull.
pub fn acip_orbit(map: &PiecewiseMap, n_iter: u64, burn_in: u64, bins: usize, seed: u64) -> Result<EmpiricalMeasure> {
    if bins == 0 || n_iter == 0 {
        return Err(Error::Range("bins and n_iter must be positive".into()));
    }
    let (lo, hi) = map.core_hull();
    let mut counts = vec![0u64; bins];
    let mut orbit = Orbit::new(map, seed, 0);
    orbit.burn(burn_in);
    let scale = bins as f64 / (hi - lo);
    for _ in 0..n_iter {
        let x = orbit.step();
        let k = (((x - lo) * scale) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(EmpiricalMeasure {
        lo,
        hi,
        masses: counts.iter().map(|&c| c as f64 / n_iter as f64).collect(),
        samples: n_iter,
        estimator: Estimator::OrbitHistogram,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lyapunov {
    pub value: f64,
    pub std_err: f64,
    pub samples: u64,
    pub skipped: u64,
}

/// Birkhoff average of `log|f'|` with a 20-batch standard error.
pub fn lyapunov(map: &PiecewiseMap, n_iter: u64, burn_in: u64, seed: u64) -> Result<Lyapunov> {
    const BATCHES: u64 = 20;
    if n_iter < BATCHES {
        return Err(Error::Range("need at least 20 iterates".into()));
    }
    let per = n_iter / BATCHES;
    let mut orbit = Orbit::new(map, seed, 0);
    orbit.burn(burn_in);
    let mut means = Vec::with_capacity(BATCHES as usize);
    let mut skipped = 0;
    for _ in 0..BATCHES {
        let mut s = 0.0;
        let mut k = 0u64;
        for _ in 0..per {
            let x = orbit.x;
            let d = map.deriv_fast(x).abs();
            if d > 0.0 && d.is_finite() {
                s += d.ln();
                k += 1;
            } else {
                skipped += 1;
            }
            orbit.step();
        }
        means.push(s / k.max(1) as f64);
    }
    let (m, se) = mean_and_se(&means);
    Ok(Lyapunov { value: m, std_err: se, samples: per * BATCHES, skipped })
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Function of `x` with its Hölder data.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub expr: Expr,
    pub holder_exponent: f64,
    pub holder_constant: f64,
}

impl Observable {
    /// Parses `src` and estimates the Hölder constant on a pair grid over the core.
    pub fn new(src: &str, holder_exponent: f64, map: &PiecewiseMap) -> Result<Observable> {
        if !(holder_exponent > 0.0 && holder_exponent <= 1.0) {
            return Err(Error::Range("Hölder exponent must lie in (0, 1]".into()));
        }
        let expr = Expr::parse(src)?;
        let (lo, hi) = map.core_hull();
        let grid: Vec<f64> = (0..=256).map(|i| lo + (hi - lo) * i as f64 / 256.0).collect();
        let mut c: f64 = 0.0;
        for (i, &x) in grid.iter().enumerate() {
            for &y in &grid[i + 1..] {
                let q = (expr.eval(x) - expr.eval(y)).abs() / (y - x).powf(holder_exponent);
                if q.is_finite() {
                    c = c.max(q);
                }
            }
        }
        Ok(Observable { expr, holder_exponent, holder_constant: c })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.expr.eval(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    /// `Ĉ_n`, absolute value.
    pub c: Vec<f64>,
    /// Signed covariances, used for Green–Kubo sums.
    pub signed: Vec<f64>,
    /// Batch-means standard error per lag.
    pub se: Vec<f64>,
    /// Median standard error over lags `n >= 1`.
    pub floor: f64,
    /// First lag with `Ĉ_n < 10 floor`.
    pub below_floor_at: Option<usize>,
    /// Fit over the leading lags with `Ĉ_n > 3 floor`.
    pub fit: Option<LogLinearFit>,
    pub samples: u64,
    /// Power of `f` the series was computed for.
    pub power: u32,
}

/// Single-orbit estimator of `C_n(φ, ψ)`, `n = 0..=n_max`, with 20-batch
/// noise floors. With `power > 1` the orbit of `f^power` is used.
pub fn correlation(
    map: &PiecewiseMap,
    phi: &Observable,
    psi: &Observable,
    n_max: usize,
    samples: u64,
    power: u32,
    seed: u64,
) -> Result<CorrelationSeries> {
    const BATCHES: usize = 20;
    if n_max as u64 * 10 >= samples {
        return Err(Error::Range("n_max must be below samples / 10".into()));
    }
    let power = power.max(1);
    let per = (samples as usize) / BATCHES;
    let total = per * BATCHES + n_max;
    let mut orbit = Orbit::new(map, seed, 0);
    orbit.burn(1000);
    let mut ph = Vec::with_capacity(total);
    let mut ps = Vec::with_capacity(total);
    for _ in 0..total {
        let x = orbit.x;
        ph.push(phi.eval(x));
        ps.push(psi.eval(x));
        for _ in 0..power {
            orbit.step();
        }
    }
    // per batch and lag: mean ψ, mean φ(shifted), mean product
    let batch: Vec<Vec<f64>> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let s = b * per;
            (0..=n_max)
                .map(|n| {
                    let (mut a, mut p, mut q) = (0.0, 0.0, 0.0);
                    for i in s..s + per {
                        a += ps[i] * ph[i + n];
                        p += ps[i];
                        q += ph[i + n];
                    }
                    let k = per as f64;
                    a / k - (p / k) * (q / k)
                })
                .collect()
        })
        .collect();
    let mut signed = vec![0.0; n_max + 1];
    let mut se = vec![0.0; n_max + 1];
    for n in 0..=n_max {
        let col: Vec<f64> = batch.iter().map(|b| b[n]).collect();
        let (m, e) = mean_and_se(&col);
        signed[n] = m;
        se[n] = e;
    }
    // the pooled estimate over all samples
    let k = (per * BATCHES) as f64;
    let pooled: Vec<f64> = (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let (mut a, mut p, mut q) = (0.0, 0.0, 0.0);
            for i in 0..per * BATCHES {
                a += ps[i] * ph[i + n];
                p += ps[i];
                q += ph[i + n];
            }
            a / k - (p / k) * (q / k)
        })
        .collect();
    let c: Vec<f64> = pooled.iter().map(|v| v.abs()).collect();
    let mut tail: Vec<f64> = se[1..].to_vec();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = if tail.is_empty() { se[0] } else { tail[tail.len() / 2] };
    let below_floor_at = c.iter().position(|&v| v < 10.0 * floor);
    let window_end = c.iter().position(|&v| v <= 3.0 * floor).unwrap_or(c.len());
    let data: Vec<(f64, f64)> = c[..window_end].iter().enumerate().map(|(n, &v)| (n as f64, v)).collect();
    let fit = if window_end >= 2 { fit_log_linear(&data, 0, window_end as u32 - 1) } else { None };
    Ok(CorrelationSeries {
        c,
        signed: pooled,
        se,
        floor,
        below_floor_at,
        fit,
        samples: k as u64,
        power,
    })
}

impl CorrelationSeries {
    /// `C_0 + 2 Σ C_n`, summed while `|C_n|` stays above the noise floor.
    pub fn green_kubo(&self) -> f64 {
        let mut s = self.signed[0];
        for n in 1..self.signed.len() {
            if self.signed[n].abs() <= 3.0 * self.floor {
                break;
            }
            s += 2.0 * self.signed[n];
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub sums: Vec<f64>,
    pub mean_used: f64,
    pub sigma: f64,
    pub ks: f64,
    /// `σ̂` is numerically zero: the observable looks like a coboundary.
    pub degenerate: bool,
    pub perturbations: u64,
}

/// Normalised Birkhoff sums `n^{-1/2} Σ_{i<n} (φ(x_i) - mean)` over seeded
/// independent starts, and their KS distance to `N(0, σ̂²)`.
pub fn clt_test(map: &PiecewiseMap, phi: &Observable, mean: f64, n: u64, trials: usize, burn_in: u64, seed: u64) -> Result<CltReport> {
    if trials < 2 || n == 0 {
        return Err(Error::Range("need n > 0 and at least two trials".into()));
    }
    let res: Vec<(f64, u64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut orbit = Orbit::new(map, seed, t as u64);
            orbit.burn(burn_in);
            let mut s = 0.0;
            for _ in 0..n {
                s += phi.eval(orbit.x) - mean;
                orbit.step();
            }
            (s / (n as f64).sqrt(), orbit.perturbations)
        })
        .collect();
    let sums: Vec<f64> = res.iter().map(|r| r.0).collect();
    let perturbations = res.iter().map(|r| r.1).sum();
    let m = sums.iter().sum::<f64>() / trials as f64;
    let var = sums.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
    let sigma = var.sqrt();
    let scale = sums.iter().map(|s| s.abs()).fold(0.0, f64::max).max(phi.holder_constant);
    let degenerate = !(sigma > 1e-9 * scale.max(1e-300));
    let ks = if degenerate { f64::NAN } else { ks_normal(&sums, sigma)? };
    Ok(CltReport { sums, mean_used: mean, sigma, ks, degenerate, perturbations })
}

/// Kolmogorov–Smirnov distance between the sample and `N(0, σ²)`.
pub fn ks_normal(sample: &[f64], sigma: f64) -> Result<f64> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Range(e.to_string()))?;
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = normal.cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerMeasure {
    pub measure: EmpiricalMeasure,
    /// Density of the induced invariant measure on a grid over Δ*.
    pub base_density: Vec<f64>,
    /// `Σ_ω T(ω) μ̂(ω)`.
    pub normalization: f64,
    /// Fraction of Δ* covered by elements.
    pub covered: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Induced invariant density by Ulam iteration over the tower elements, then
/// spread along each element's orbit segment.
pub fn acip_tower(map: &PiecewiseMap, tower: &Tower, base_bins: usize, bins: usize, max_iter: usize) -> Result<TowerMeasure> {
    if tower.elements.is_empty() {
        return Err(Error::Config("tower has no elements".into()));
    }
    let base = tower.base;
    let w = tower.base_width().to_f64();
    let bw = w / base_bins as f64;
    let off = |x: Dd| (x - base.0).to_f64().clamp(0.0, w);

    // piecewise-linear model of F on each element
    let models: Vec<(Vec<f64>, Vec<f64>, Vec<Dd>)> = tower
        .elements
        .par_iter()
        .map(|e| {
            let path = e.path();
            let m = ((8.0 * e.width().to_f64() / bw).ceil() as usize).clamp(4, 64);
            let pts: Vec<Dd> = (0..=m).map(|k| e.a + e.width().mul_f64(k as f64 / m as f64)).collect();
            let xs: Vec<f64> = pts.iter().map(|&p| off(p)).collect();
            let ys: Vec<f64> = pts
                .iter()
                .map(|&p| off(path.iter().fold(p, |z, &k| map.branches[k as usize].expr.eval_dd(z))))
                .collect();
            (xs, ys, pts)
        })
        .collect();

    // dense transfer matrix
    let mut p = vec![0.0f64; base_bins * base_bins];
    for (xs, ys, _) in &models {
        for s in 0..xs.len() - 1 {
            let (x0, x1, y0, y1) = (xs[s], xs[s + 1], ys[s], ys[s + 1]);
            if x1 <= x0 {
                continue;
            }
            let i0 = ((x0 / bw) as usize).min(base_bins - 1);
            let i1 = ((x1 / bw) as usize).min(base_bins - 1);
            for i in i0..=i1 {
                let u = x0.max(i as f64 * bw);
                let v = x1.min((i + 1) as f64 * bw);
                if v <= u {
                    continue;
                }
                let ya = y0 + (y1 - y0) * (u - x0) / (x1 - x0);
                let yb = y0 + (y1 - y0) * (v - x0) / (x1 - x0);
                spread_row(&mut p[i * base_bins..(i + 1) * base_bins], ya, yb, (v - u) / bw, bw);
            }
        }
    }
    let mut dens = vec![1.0 / base_bins as f64; base_bins];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        let mut next = vec![0.0; base_bins];
        for i in 0..base_bins {
            let di = dens[i];
            if di == 0.0 {
                continue;
            }
            let row = &p[i * base_bins..(i + 1) * base_bins];
            for (n, r) in next.iter_mut().zip(row) {
                *n += di * r;
            }
        }
        let s: f64 = next.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Config("transfer operator lost all mass".into()));
        }
        next.iter_mut().for_each(|v| *v /= s);
        let change: f64 = next.iter().zip(&dens).map(|(a, b)| (a - b).abs()).sum();
        dens = next;
        iterations = it + 1;
        if change < 1e-12 {
            converged = true;
            break;
        }
    }
    // dens holds bin masses; push forward
    let (lo, hi) = map.core_hull();
    let mut out = EmpiricalMeasure { lo, hi, masses: vec![0.0; bins], samples: 0, estimator: Estimator::TowerPushforward };
    let mut norm = 0.0;
    for (e, (xs, _, pts)) in tower.elements.iter().zip(&models) {
        let path = e.path();
        let weights: Vec<f64> = (0..xs.len() - 1)
            .map(|s| {
                let mid = 0.5 * (xs[s] + xs[s + 1]);
                let i = ((mid / bw) as usize).min(base_bins - 1);
                dens[i] / bw * (xs[s + 1] - xs[s])
            })
            .collect();
        let mass: f64 = weights.iter().sum();
        if mass == 0.0 {
            continue;
        }
        norm += e.return_time as f64 * mass;
        let mut z = pts.clone();
        for &k in &path {
            for s in 0..z.len() - 1 {
                out.add_spread(z[s].to_f64(), z[s + 1].to_f64(), weights[s]);
            }
            let ex = &map.branches[k as usize].expr;
            z.iter_mut().for_each(|v| *v = ex.eval_dd(*v));
        }
    }
    out.masses.iter_mut().for_each(|m| *m /= norm);
    out.samples = tower.elements.len() as u64;
    let covered = tower.elements.iter().map(|e| e.width().to_f64()).sum::<f64>() / w;
    Ok(TowerMeasure {
        measure: out,
        base_density: dens.iter().map(|d| d / bw).collect(),
        normalization: norm,
        covered,
        iterations,
        converged,
    })
}

/// Spreads `weight` over the target bins covering `[ya, yb]`.
fn spread_row(row: &mut [f64], ya: f64, yb: f64, weight: f64, bw: f64) {
    let (ya, yb) = if ya <= yb { (ya, yb) } else { (yb, ya) };
    let n = row.len();
    let j0 = ((ya / bw) as usize).min(n - 1);
    let j1 = ((yb / bw) as usize).min(n - 1);
    if j0 == j1 || yb <= ya {
        row[j0] += weight;
        return;
    }
    for (j, r) in row.iter_mut().enumerate().take(j1 + 1).skip(j0) {
        let lo = ya.max(j as f64 * bw);
        let hi = yb.min((j + 1) as f64 * bw);
        if hi > lo {
            *r += weight * (hi - lo) / (yb - ya);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicCheck {
    pub name: String,
    pub sigma: f64,
    pub constant: f64,
    /// Pairs with a resolved separation time; the constant is NaN when
    /// there are none.
    pub pairs: usize,
    /// Pairs whose separation hit the cap or unresolved mass.
    pub flagged: usize,
    /// Pairs violating `|x - y| <= |Δ*| λ'^{-s}`, flagged pairs tested with
    /// their known lower bound on `s`.
    pub cylinder_violations: usize,
}

struct PairSample {
    x: Dd,
    y: Dd,
    s: u32,
    exact: bool,
    elem: usize,
}

fn symbolic_pairs(map: &PiecewiseMap, tower: &Tower, elements: &[usize], pairs: usize, seed: u64) -> Vec<PairSample> {
    elements
        .par_iter()
        .map(|&i| {
            let e = &tower.elements[i];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e.id as u64);
            let mut fr = vec![1e-6, 0.25, 0.5, 0.75, 1.0 - 1e-6];
            fr.extend((0..pairs).map(|_| rng.gen_range(1e-6..1.0 - 1e-6)));
            fr.sort_by(|a, b| a.partial_cmp(b).unwrap());
            fr.dedup();
            let pts: Vec<Dd> = fr.iter().map(|&f| e.a + e.width().mul_f64(f)).collect();
            pts.windows(2)
                .map(|w| {
                    let sep = separation_time(map, tower, w[0], w[1], 64);
                    let exact = matches!(sep, Separation::Steps(_));
                    PairSample { x: w[0], y: w[1], s: sep.steps(), exact, elem: i }
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

fn summarize(name: &str, sigma: f64, samples: &[PairSample], tower: &Tower, lambda_prime: f64, value: impl Fn(&PairSample) -> f64) -> SymbolicCheck {
    let bw = tower.base_width().to_f64();
    let exact: Vec<&PairSample> = samples.iter().filter(|p| p.exact).collect();
    let constant = if exact.is_empty() { f64::NAN } else { exact.iter().map(|p| value(p)).fold(0.0, f64::max) };
    let cylinder_violations = samples
        .iter()
        .filter(|p| (p.x - p.y).abs().to_f64() > bw * lambda_prime.powi(-(p.s as i32)))
        .count();
    SymbolicCheck {
        name: name.into(),
        sigma,
        constant,
        pairs: exact.len(),
        flagged: samples.len() - exact.len(),
        cylinder_violations,
    }
}

fn jacobian_log(map: &PiecewiseMap, x: Dd, path: &[u8]) -> f64 {
    crate::tower::log_deriv(map, x, path).0
}

/// `max |JF(x)/JF(y) - 1| / σ^{s(x,y)}` over sampled same-element pairs.
pub fn symbolic_distortion_check(
    map: &PiecewiseMap,
    tower: &Tower,
    lambda_prime: f64,
    sigma: f64,
    elements: usize,
    pairs: usize,
    seed: u64,
) -> Result<SymbolicCheck> {
    if !(sigma > 1.0 / lambda_prime && sigma < 1.0) {
        return Err(Error::Range(format!("σ must lie in (1/λ', 1) = ({}, 1)", 1.0 / lambda_prime)));
    }
    let chosen = audit_elements(tower, elements, seed);
    let samples = symbolic_pairs(map, tower, &chosen, pairs, seed);
    Ok(summarize("symbolic_distortion", sigma, &samples, tower, lambda_prime, |p| {
        let path = tower.elements[p.elem].path();
        let r = (jacobian_log(map, p.x, &path) - jacobian_log(map, p.y, &path)).exp_m1().abs();
        r / sigma.powi(p.s as i32)
    }))
}

/// `max |φ(f^k x) - φ(f^k y)| / σ^{s(x,y)}` over sampled pairs and `k < T`.
pub fn holder_lift_check(
    map: &PiecewiseMap,
    tower: &Tower,
    phi: &Observable,
    lambda_prime: f64,
    sigma: f64,
    elements: usize,
    pairs: usize,
    seed: u64,
) -> Result<SymbolicCheck> {
    let threshold = lambda_prime.powf(-phi.holder_exponent);
    if !(sigma > threshold && sigma < 1.0) {
        return Err(Error::Range(format!("σ must lie in (λ'^(-α), 1) = ({threshold}, 1)")));
    }
    let chosen = audit_elements(tower, elements, seed);
    let samples = symbolic_pairs(map, tower, &chosen, pairs, seed);
    Ok(summarize("holder_lift", sigma, &samples, tower, lambda_prime, |p| {
        let path = tower.elements[p.elem].path();
        let (mut x, mut y) = (p.x, p.y);
        let denom = sigma.powi(p.s as i32);
        let mut c: f64 = 0.0;
        for &k in &path {
            c = c.max((phi.eval(x.to_f64()) - phi.eval(y.to_f64())).abs() / denom);
            let ex = &map.branches[k as usize].expr;
            x = ex.eval_dd(x);
            y = ex.eval_dd(y);
        }
        c
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::{ReturnConfig, TowerElement};
    use crate::map_model::{OneSided, Side};

    #[test]
    fn one_bin_holds_everything() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let m = acip_orbit(&map, 1000, 10, 1, 3).unwrap();
        assert_eq!(m.masses, vec![1.0]);
    }

    #[test]
    fn chebyshev_orbit_matches_arcsine() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let m = acip_orbit(&map, 1_000_000, 1000, 200, 7).unwrap();
        let d = m.l1_to_cdf(arcsine_cdf);
        assert!(d < 0.05, "L1 = {d}");
        let total: f64 = m.masses.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orbit_histogram_is_reproducible() {
        let map = PiecewiseMap::builtin("lorenz").unwrap();
        let a = acip_orbit(&map, 50_000, 100, 50, 11).unwrap();
        let b = acip_orbit(&map, 50_000, 100, 50, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn baseline_lyapunov_is_log_slope() {
        let map = PiecewiseMap::uniform(3).unwrap();
        let l = lyapunov(&map, 10_000, 10, 1).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-12);
        assert!(l.std_err < 1e-12);
    }

    #[test]
    fn chebyshev_lyapunov() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let l = lyapunov(&map, 2_000_000, 1000, 5).unwrap();
        assert!((l.value - 2f64.ln()).abs() < 0.02, "{l:?}");
    }

    #[test]
    fn lorenz_lyapunov_lower_bound() {
        let map = PiecewiseMap::builtin("lorenz").unwrap();
        let l = lyapunov(&map, 200_000, 1000, 5).unwrap();
        assert!(l.value >= 1.2f64.ln());
    }

    #[test]
    fn constant_observable_has_no_correlation() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let one = Observable::new("1", 1.0, &map).unwrap();
        let c = correlation(&map, &one, &one, 10, 10_000, 1, 1).unwrap();
        assert!(c.c.iter().all(|&v| v == 0.0));
        assert_eq!(one.holder_constant, 0.0);
    }

    #[test]
    fn lag_zero_is_the_covariance() {
        let map = PiecewiseMap::builtin("lorenz").unwrap();
        let x = Observable::new("x", 1.0, &map).unwrap();
        let sq = Observable::new("x^2", 1.0, &map).unwrap();
        let c = correlation(&map, &x, &sq, 5, 20_000, 1, 2).unwrap();
        // oracle: recompute the orbit and the covariance directly
        let mut orbit = Orbit::new(&map, 2, 0);
        orbit.burn(1000);
        let n = c.samples as usize;
        let xs: Vec<f64> = (0..n).map(|_| { let v = orbit.x; orbit.step(); v }).collect();
        let mean = |f: &dyn Fn(f64) -> f64| xs.iter().map(|&v| f(v)).sum::<f64>() / n as f64;
        let expected = mean(&|v| v * v * v) - mean(&|v| v) * mean(&|v| v * v);
        assert!((c.signed[0] - expected).abs() < 1e-12);
        assert!(c.fit.is_some() || c.c[1] <= 3.0 * c.floor);
    }

    #[test]
    fn correlation_symmetry() {
        let map = PiecewiseMap::builtin("lorenz").unwrap();
        let x = Observable::new("x", 1.0, &map).unwrap();
        let a = correlation(&map, &x, &x, 10, 200_000, 1, 4).unwrap();
        let b = correlation(&map, &x, &x, 10, 200_000, 1, 4).unwrap();
        for n in 0..=10 {
            assert!((a.c[n] - b.c[n]).abs() <= 2.0 * a.floor);
        }
        assert!(correlation(&map, &x, &x, 100, 1000, 1, 4).is_err());
    }

    #[test]
    fn lorenz_correlations_decay() {
        let map = PiecewiseMap::builtin("lorenz").unwrap();
        let x = Observable::new("x", 1.0, &map).unwrap();
        let c = correlation(&map, &x, &x, 30, 1_000_000, 1, 9).unwrap();
        assert!(c.below_floor_at.unwrap() <= 20);
        let fit = c.fit.unwrap();
        assert!(fit.slope < 0.0);
    }

    #[test]
    fn zero_observable_is_degenerate() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let zero = Observable::new("0", 1.0, &map).unwrap();
        let r = clt_test(&map, &zero, 0.0, 100, 50, 10, 1).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn clt_on_tripling_bump() {
        let map = PiecewiseMap::uniform(3).unwrap();
        let bump = Observable::new("1 - 4*x^2 + 3*x^4", 1.0, &map).unwrap();
        // Lebesgue mean of the bump on [-1, 1]: 1 - 4/3 + 3/5
        let mean = 1.0 - 4.0 / 3.0 + 0.6;
        let r = clt_test(&map, &bump, mean, 2000, 2000, 10, 3).unwrap();
        assert!(r.ks < 0.05, "{}", r.ks);
        assert!(!r.degenerate);
    }

    #[test]
    fn clt_is_thread_count_independent() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let x = Observable::new("x", 1.0, &map).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| clt_test(&map, &x, 0.0, 500, 64, 10, 8).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let normal = Normal::new(0.0, 2.0).unwrap();
        let v: Vec<f64> = (0..1000).map(|i| normal.inverse_cdf((i as f64 + 0.5) / 1000.0)).collect();
        let d = ks_normal(&v, 2.0).unwrap();
        assert!((d - 0.0005).abs() < 1e-9);
    }

    /// Δ* = J for the doubling map: both branches are elements with T = 1.
    fn doubling_fixture() -> (PiecewiseMap, Tower) {
        let map = PiecewiseMap::uniform(2).unwrap();
        let cfg = ReturnConfig {
            c_star: OneSided { location: -1.0, side: Side::Right },
            delta: 2.0,
            delta_star: 2.0,
            t_star: 1,
            xi: 0.5,
            windows: 1,
            worst_window: -1.0,
        };
        let el = |id, a: f64, b: f64, it: &str| TowerElement {
            id,
            a: Dd::new(a),
            b: Dd::new(b),
            escape_time: 0,
            return_time: 1,
            generation: 0,
            itinerary: it.into(),
            image_error: 0.0,
            proportion: 0.5,
            image_proportion: 0.5,
        };
        let json = serde_json::json!({
            "config": cfg,
            "base": [Dd::new(-1.0), Dd::new(1.0)],
            "elements": [el(0, -1.0, 0.0, "0"), el(1, 0.0, 1.0, "1")],
            "tail": [],
            "aborted": [],
            "limit_hit": null,
            "ledger_error": 0.0,
        });
        (map, Tower::from_json(&json.to_string()).unwrap())
    }

    #[test]
    fn unit_return_tower_gives_lebesgue() {
        let (map, tower) = doubling_fixture();
        let t = acip_tower(&map, &tower, 100, 20, 500).unwrap();
        assert!(t.converged);
        assert!((t.normalization - 1.0).abs() < 1e-12);
        for &m in &t.measure.masses {
            assert!((m - 0.05).abs() < 1e-12);
        }
        assert_eq!(t.covered, 1.0);
    }

    #[test]
    fn symbolic_checks_on_unit_return_tower() {
        let (map, tower) = doubling_fixture();
        assert!(symbolic_distortion_check(&map, &tower, 2.0, 0.4, 2, 8, 1).is_err());
        let d = symbolic_distortion_check(&map, &tower, 2.0, 0.75, 2, 8, 1).unwrap();
        assert_eq!(d.constant, 0.0);
        assert_eq!(d.cylinder_violations, 0);
        assert!(d.pairs > 0);
        let phi = Observable::new("x", 1.0, &map).unwrap();
        let h = holder_lift_check(&map, &tower, &phi, 2.0, 0.75, 2, 8, 1).unwrap();
        // |x - y| (4/3)^s with s <= log2(2/|x - y|) + 1 stays below 2 (4/3)
        assert!(h.constant > 0.0 && h.constant <= 8.0 / 3.0, "{h:?}");
        let h2 = holder_lift_check(&map, &tower, &phi, 2.0, 0.75, 2, 16, 1).unwrap();
        assert!(h2.constant <= 8.0 / 3.0);
    }

    #[test]
    fn pairs_leaving_the_tower_are_flagged() {
        let (map, mut tower) = doubling_fixture();
        // without the right element, pairs landing in (0, 1) are unresolved
        tower.elements.truncate(1);
        tower.reindex();
        let d = symbolic_distortion_check(&map, &tower, 2.0, 0.75, 1, 0, 1).unwrap();
        assert!(d.flagged > 0);
    }
}
