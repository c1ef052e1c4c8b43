//! Full returns to the base interval and the induced Markov map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::escape::{
    AbortReason, Aborted, Carved, EscapeEngine, OrbitInterval, Resolution, Resolver, State, TailRow,
};
use crate::map_model::{OneSided, PiecewiseMap, Side};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnConfig {
    pub c_star: OneSided,
    pub delta: f64,
    pub delta_star: f64,
    pub t_star: u32,
    /// Smallest `|K| / δ` over the test windows, `K` the chosen preimage.
    pub xi: f64,
    pub windows: usize,
    /// Left end of the window attaining `xi`.
    pub worst_window: f64,
}

impl ReturnConfig {
    pub fn base(&self) -> (Dd, Dd) {
        base_interval(self.c_star, self.delta_star)
    }
}

pub fn base_interval(c: OneSided, delta_star: f64) -> (Dd, Dd) {
    let c0 = Dd::new(c.location);
    match c.side {
        Side::Right => (c0, c0 + Dd::new(delta_star)),
        Side::Left => (c0 - Dd::new(delta_star), c0),
    }
}

/// A full return found inside a search interval.
#[derive(Clone, Debug, PartialEq)]
pub struct FullReturn {
    pub t0: u32,
    pub path: Vec<u8>,
    /// The component of the preimage, in the coordinates of the search interval.
    pub lo: Dd,
    pub hi: Dd,
}

/// Forward search for a component of `f^{-t}(target)` mapped diffeomorphically
/// onto the target.
pub struct ReturnSearch<'a> {
    pub map: &'a PiecewiseMap,
    pub target: (Dd, Dd),
    pub t_budget: u32,
    pub piece_budget: usize,
    breaks: Vec<Dd>,
}

impl<'a> ReturnSearch<'a> {
    pub fn new(map: &'a PiecewiseMap, target: (Dd, Dd), t_budget: u32) -> ReturnSearch<'a> {
        let breaks = map.breakpoints().into_iter().map(Dd::new).collect();
        ReturnSearch {
            map,
            target,
            t_budget,
            piece_budget: 1 << 14,
            breaks,
        }
    }

    fn pull_back(&self, y: Dd, path: &[u8]) -> Dd {
        path.iter()
            .rev()
            .fold(y, |z, &k| self.map.inverse_clamped(k as usize, z))
    }

    /// Minimal `t0`, ties broken by the longest component.
    pub fn search(&self, lo: Dd, hi: Dd) -> Option<FullReturn> {
        let (tlo, thi) = self.target;
        let mut pieces: Vec<(Vec<u8>, Dd, Dd)> = vec![(Vec::new(), lo, hi)];
        for t in 0..=self.t_budget {
            let mut best: Option<FullReturn> = None;
            for (path, qlo, qhi) in &pieces {
                if *qlo <= tlo && *qhi >= thi {
                    let (u, v) = (self.pull_back(tlo, path), self.pull_back(thi, path));
                    let (klo, khi) = if u <= v { (u, v) } else { (v, u) };
                    let (klo, khi) = (klo.max(lo), khi.min(hi));
                    if best.as_ref().is_none_or(|b| khi - klo > b.hi - b.lo) {
                        best = Some(FullReturn { t0: t, path: path.clone(), lo: klo, hi: khi });
                    }
                }
            }
            if best.is_some() || t == self.t_budget {
                return best;
            }
            let mut next = Vec::with_capacity(pieces.len() * 2);
            for (path, qlo, qhi) in pieces {
                let mut cuts = vec![qlo];
                cuts.extend(self.breaks.iter().copied().filter(|&b| b > qlo && b < qhi));
                cuts.push(qhi);
                for w in cuts.windows(2) {
                    let k = self.map.branch_at_dd(w[0], Side::Right);
                    let e = &self.map.branches[k].expr;
                    let (u, v) = (e.eval_dd(w[0]), e.eval_dd(w[1]));
                    let mut p = path.clone();
                    p.push(k as u8);
                    next.push(if u <= v { (p, u, v) } else { (p, v, u) });
                }
            }
            if next.len() > self.piece_budget {
                return None;
            }
            pieces = next;
        }
        None
    }
}

/// Chooses the base interval at `c_star`: every δ-window of the core, sliding
/// at mesh δ/10, must contain a full return in its middle third within
/// `t_budget` steps. The accepted size is halved once more.
pub fn choose_delta_star(map: &PiecewiseMap, delta: f64, c_star: OneSided, t_budget: u32) -> Result<ReturnConfig> {
    let mut windows = Vec::new();
    for &(a, b) in &map.core {
        let mut s = a;
        while s + delta < b {
            windows.push(s);
            s += delta / 10.0;
        }
        if b - a >= delta {
            windows.push(b - delta);
        }
    }
    if windows.is_empty() {
        return Err(Error::Config("core is shorter than δ".into()));
    }
    let scan = |ds: f64| -> std::result::Result<(u32, f64, f64), f64> {
        let search = ReturnSearch::new(map, base_interval(c_star, ds), t_budget);
        let found: Vec<std::result::Result<(u32, f64), f64>> = windows
            .par_iter()
            .map(|&s| {
                let lo = Dd::new(s) + Dd::new(delta / 3.0);
                let hi = Dd::new(s) + Dd::new(2.0 * delta / 3.0);
                search
                    .search(lo, hi)
                    .map(|r| (r.t0, (r.hi - r.lo).to_f64() / delta))
                    .ok_or(s)
            })
            .collect();
        let mut t_star = 0;
        let mut xi = f64::INFINITY;
        let mut worst = windows[0];
        for (r, &s) in found.into_iter().zip(&windows) {
            let (t, x) = r?;
            t_star = t_star.max(t);
            if x < xi {
                xi = x;
                worst = s;
            }
        }
        Ok((t_star, xi, worst))
    };
    let mut last_fail = windows[0];
    for m in 0..12 {
        let ds = delta / 10.0 * 0.5f64.powi(m);
        match scan(ds) {
            Ok(_) => {
                let ds = ds / 2.0;
                let (t_star, xi, worst) = scan(ds).map_err(|s| Error::ReturnSearchExhausted { lo: s, hi: s + delta })?;
                return Ok(ReturnConfig {
                    c_star,
                    delta,
                    delta_star: ds,
                    t_star,
                    xi,
                    windows: windows.len(),
                    worst_window: worst,
                });
            }
            Err(s) => last_fail = s,
        }
    }
    Err(Error::ReturnSearchExhausted { lo: last_fail, hi: last_fail + delta })
}

/// Carves full returns out of escaped intervals.
pub struct TowerResolver<'a> {
    pub search: ReturnSearch<'a>,
}

impl Resolver for TowerResolver<'_> {
    fn resolve(&self, engine: &EscapeEngine<'_>, iv: OrbitInterval) -> Resolution {
        let (lo, hi) = iv.image_sorted();
        let third = (hi - lo) / Dd::new(3.0);
        let Some(ret) = self.search.search(lo + third, hi - third) else {
            return Resolution::Failed(AbortReason::NoFullReturn);
        };
        let inc = iv.increasing();
        let pre = |y: Dd| engine.pull_back(y, &iv.branches).max(iv.a).min(iv.b);
        let (xk_lo, xk_hi) = (pre(ret.lo), pre(ret.hi));
        let (ka, kb) = if inc { (xk_lo, xk_hi) } else { (xk_hi, xk_lo) };
        let mut branches = iv.branches.clone();
        branches.extend_from_slice(&ret.path);
        let piece = Carved {
            a: ka,
            b: kb,
            parent: (iv.a, iv.b),
            parent_image: hi - lo,
            image: ret.hi - ret.lo,
            escape_time: iv.n,
            t0: ret.t0,
            branches,
            events: iv.events.clone(),
            generation: iv.generation,
        };
        let flank = |a: Dd, b: Dd, ia: Dd, ib: Dd| OrbitInterval {
            a,
            b,
            n: iv.n,
            image: (ia, ib),
            state: State::Free,
            branches: iv.branches.clone(),
            events: iv.events.clone(),
            generation: iv.generation + 1,
        };
        let (left, right) = if inc {
            (flank(iv.a, ka, iv.image.0, ret.lo), flank(kb, iv.b, ret.hi, iv.image.1))
        } else {
            (flank(iv.a, ka, iv.image.0, ret.hi), flank(kb, iv.b, ret.lo, iv.image.1))
        };
        let flanks = [left, right].into_iter().filter(|f| f.a < f.b).collect();
        Resolution::Carved { piece, flanks }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerElement {
    pub id: usize,
    pub a: Dd,
    pub b: Dd,
    pub escape_time: u32,
    pub return_time: u32,
    pub generation: u32,
    /// Branch indices of `f^k(ω)`, `k < T`, one character per step.
    pub itinerary: String,
    /// Distance of `f^T` at the endpoints from the base endpoints, relative to `|Δ*|`.
    pub image_error: f64,
    /// `|ω*| / |ω|` for the escaped interval `ω` it was carved from.
    pub proportion: f64,
    /// The same proportion measured on the images at the escape time.
    pub image_proportion: f64,
}

impl TowerElement {
    pub fn width(&self) -> Dd {
        self.b - self.a
    }

    pub fn path(&self) -> Vec<u8> {
        decode_itinerary(&self.itinerary)
    }
}

const ALPHABET: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";

pub fn encode_itinerary(path: &[u8]) -> String {
    path.iter().map(|&k| ALPHABET[k as usize] as char).collect()
}

pub fn decode_itinerary(s: &str) -> Vec<u8> {
    s.bytes()
        .map(|c| ALPHABET.iter().position(|&a| a == c).expect("itinerary symbol") as u8)
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub n: u32,
    /// `|{T > n}|` still in play (carved with larger return time, or active).
    pub unresolved: f64,
    pub aborted: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbortedMass {
    pub reason: AbortReason,
    pub time: u32,
    pub measure: Dd,
    pub count: usize,
}

fn group_aborted(aborted: &[Aborted]) -> Vec<AbortedMass> {
    let mut map = std::collections::BTreeMap::<(AbortReason, u32), (Dd, usize)>::new();
    for a in aborted {
        let e = map.entry((a.reason, a.time)).or_insert((Dd::ZERO, 0));
        e.0 += a.b - a.a;
        e.1 += 1;
    }
    map.into_iter()
        .map(|((reason, time), (measure, count))| AbortedMass { reason, time, measure, count })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tower {
    pub config: ReturnConfig,
    pub base: (Dd, Dd),
    /// Sorted by (generation, left endpoint).
    pub elements: Vec<TowerElement>,
    pub tail: Vec<TailPoint>,
    /// Aborted mass grouped by reason and iterate.
    pub aborted: Vec<AbortedMass>,
    pub limit_hit: Option<AbortReason>,
    /// Worst endpoint mismatch of the measure ledger, relative to `|Δ*|`.
    pub ledger_error: f64,
    #[serde(skip)]
    by_left: Vec<usize>,
}

impl Tower {
    pub fn base_width(&self) -> Dd {
        self.base.1 - self.base.0
    }

    pub fn gcd(&self) -> u32 {
        self.elements.iter().fold(0, |g, e| gcd(g, e.return_time))
    }

    pub fn unresolved_at(&self, n: u32) -> f64 {
        self.tail
            .iter()
            .find(|p| p.n == n)
            .or(self.tail.last().filter(|p| p.n < n))
            .map_or(0.0, |p| p.unresolved)
    }

    pub fn aborted_measure(&self) -> f64 {
        self.aborted.iter().map(|x| x.measure.to_f64()).sum()
    }

    fn index(&mut self) {
        let mut idx: Vec<usize> = (0..self.elements.len()).collect();
        idx.sort_by(|&i, &j| self.elements[i].a.partial_cmp(&self.elements[j].a).unwrap());
        self.by_left = idx;
    }

    /// Restores the lookup index after deserializing.
    pub fn reindex(&mut self) {
        self.index();
    }

    /// Element containing `x`.
    pub fn element_at(&self, x: Dd) -> Option<&TowerElement> {
        let k = self.by_left.partition_point(|&i| self.elements[i].a <= x);
        if k == 0 {
            return None;
        }
        let e = &self.elements[self.by_left[k - 1]];
        (x < e.b).then_some(e)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Tower> {
        let mut t: Tower = serde_json::from_str(s)?;
        t.index();
        Ok(t)
    }
}

pub fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Runs the escape construction on the base interval, carving a full return
/// after every escape.
pub fn build_tower(engine: &EscapeEngine<'_>, cfg: &ReturnConfig, t_budget: u32) -> Tower {
    let base = cfg.base();
    let resolver = TowerResolver {
        search: ReturnSearch::new(engine.map, base, t_budget.max(cfg.t_star)),
    };
    let run = engine.run(vec![OrbitInterval::new(base.0, base.1)], Some(&resolver));
    let bw = (base.1 - base.0).to_f64();

    let mut elements: Vec<TowerElement> = run
        .carved
        .par_iter()
        .map(|c| element_from(engine, c, base))
        .collect();
    elements.sort_by(|x, y| (x.generation, x.a).partial_cmp(&(y.generation, y.a)).unwrap());
    for (i, e) in elements.iter_mut().enumerate() {
        e.id = i;
    }

    let tail = return_tail(&run.tail, &run.carved, &run.aborted, bw);
    let ledger_error = run
        .tail
        .iter()
        .map(|r| (r.active + r.escaped + r.aborted - run.total).abs().to_f64() / bw)
        .fold(0.0, f64::max);
    let mut tower = Tower {
        config: *cfg,
        base,
        elements,
        tail,
        aborted: group_aborted(&run.aborted),
        limit_hit: run.limit_hit,
        ledger_error,
        by_left: Vec::new(),
    };
    tower.index();
    tower
}

fn element_from(engine: &EscapeEngine<'_>, c: &Carved, base: (Dd, Dd)) -> TowerElement {
    let (u, v) = (engine.push_forward(c.a, &c.branches), engine.push_forward(c.b, &c.branches));
    let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
    let bw = (base.1 - base.0).to_f64();
    let err = (lo - base.0).abs().to_f64().max((hi - base.1).abs().to_f64()) / bw;
    TowerElement {
        id: 0,
        a: c.a,
        b: c.b,
        escape_time: c.escape_time,
        return_time: c.return_time(),
        generation: c.generation,
        itinerary: encode_itinerary(&c.branches),
        image_error: err,
        proportion: ((c.b - c.a) / (c.parent.1 - c.parent.0)).to_f64(),
        image_proportion: (c.image / c.parent_image).to_f64(),
    }
}

/// `|{T > n}|` from the per-iterate ledger and the carved pieces.
fn return_tail(rows: &[TailRow], carved: &[Carved], aborted: &[Aborted], bw: f64) -> Vec<TailPoint> {
    let last_row = rows.last().map_or(0, |r| r.n);
    let max_t = carved.iter().map(|c| c.return_time()).max().unwrap_or(0);
    let end = last_row.max(max_t);
    let mut pending = vec![0.0f64; end as usize + 2];
    for c in carved {
        let w = (c.b - c.a).to_f64();
        pending[c.escape_time as usize] += w;
        pending[c.return_time() as usize] -= w;
    }
    let mut ab = vec![0.0f64; end as usize + 2];
    for a in aborted {
        ab[(a.time as usize).min(end as usize + 1)] += (a.b - a.a).to_f64();
    }
    let mut out = Vec::with_capacity(end as usize + 1);
    let mut in_flight = 0.0;
    let mut aborted_sum = 0.0;
    for n in 0..=end {
        in_flight += pending[n as usize];
        aborted_sum += ab[n as usize];
        let active = rows
            .get(n as usize)
            .filter(|r| r.n == n)
            .map_or(0.0, |r| r.active.to_f64());
        out.push(TailPoint {
            n,
            unresolved: (active + in_flight.max(0.0)) / bw,
            aborted: aborted_sum / bw,
        });
    }
    out
}

/// `log |(f^T)'(x)|` along `path`, with the orbit kept in double-double.
pub fn log_deriv(map: &PiecewiseMap, x: Dd, path: &[u8]) -> (f64, Dd) {
    let mut z = x;
    let mut acc = 0.0;
    for &k in path {
        let e = &map.branches[k as usize].expr;
        acc += e.deriv_dd(z).abs().ln();
        z = e.eval_dd(z);
    }
    (acc, z)
}

fn sample_points(e: &TowerElement, extra: usize, rng: &mut ChaCha8Rng) -> Vec<Dd> {
    let w = e.width();
    let mut fr = vec![1e-6, 0.25, 0.5, 0.75, 1.0 - 1e-6];
    fr.extend((0..extra).map(|_| rng.gen_range(1e-6..1.0 - 1e-6)));
    fr.sort_by(|a, b| a.partial_cmp(b).unwrap());
    fr.dedup();
    fr.into_iter().map(|f| e.a + w.mul_f64(f)).collect()
}

/// Elements audited by the sampling checks: the widest ones and a seeded
/// random selection.
pub fn audit_elements(tower: &Tower, count: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..tower.elements.len()).collect();
    if idx.len() <= count {
        return idx;
    }
    idx.sort_by(|&i, &j| {
        tower.elements[j].width().partial_cmp(&tower.elements[i].width()).unwrap().then(i.cmp(&j))
    });
    let mut chosen: Vec<usize> = idx[..count / 2].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = &idx[count / 2..];
    for _ in 0..count - count / 2 {
        chosen.push(rest[rng.gen_range(0..rest.len())]);
    }
    chosen.sort_unstable();
    chosen.dedup();
    chosen
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionRow {
    pub id: usize,
    pub return_time: u32,
    pub width: f64,
    /// Max of `|D(x)/D(y) - 1| / |f^T x - f^T y|` over the sampled pairs.
    pub distortion: f64,
    /// Min of `(f^T)'` over sampled points.
    pub min_expansion: f64,
    /// Max of `|f^k x - f^k y| / |f^T x - f^T y|`, `k < T`.
    pub contraction: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub rows: Vec<DistortionRow>,
    pub distortion: f64,
    pub lambda_prime: f64,
    pub k_hat: f64,
}

/// Samples the distortion, expansion and contraction constants of `f^T`.
/// `pairs` random points are added per element on top of the fixed ones.
pub fn distortion_audit(map: &PiecewiseMap, tower: &Tower, elements: &[usize], pairs: usize, seed: u64) -> Result<DistortionReport> {
    let bw = tower.base_width();
    let rows: Vec<DistortionRow> = elements
        .par_iter()
        .map(|&i| {
            let e = &tower.elements[i];
            let path = e.path();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e.id as u64);
            let pts = sample_points(e, pairs, &mut rng);
            let evals: Vec<(f64, Dd, Vec<Dd>)> = pts
                .iter()
                .map(|&x| {
                    let mut orbit = Vec::with_capacity(path.len() + 1);
                    let mut z = x;
                    orbit.push(z);
                    let mut acc = 0.0;
                    for &k in &path {
                        let ex = &map.branches[k as usize].expr;
                        acc += ex.deriv_dd(z).abs().ln();
                        z = ex.eval_dd(z);
                        orbit.push(z);
                    }
                    (acc, z, orbit)
                })
                .collect();
            let mut dist: f64 = 0.0;
            let mut contraction: f64 = 1.0;
            let mut min_exp = (bw / e.width()).to_f64();
            let mut npairs = 0;
            for (l, _, _) in &evals {
                min_exp = min_exp.min(l.exp());
            }
            for w in evals.windows(2) {
                let (lx, fx, ox) = &w[0];
                let (ly, fy, oy) = &w[1];
                let d = (*fx - *fy).abs().to_f64();
                if d == 0.0 {
                    continue;
                }
                npairs += 1;
                dist = dist.max((lx - ly).exp_m1().abs() / d);
                for k in 0..path.len() {
                    contraction = contraction.max((ox[k] - oy[k]).abs().to_f64() / d);
                }
            }
            DistortionRow {
                id: e.id,
                return_time: e.return_time,
                width: e.width().to_f64(),
                distortion: dist,
                min_expansion: min_exp,
                contraction,
                pairs: npairs,
            }
        })
        .collect();
    let distortion = rows.iter().map(|r| r.distortion).fold(0.0, f64::max);
    let lambda_prime = rows.iter().map(|r| r.min_expansion).fold(f64::INFINITY, f64::min);
    let k_hat = rows.iter().map(|r| r.contraction).fold(1.0, f64::max);
    if !(lambda_prime > 1.0) {
        return Err(Error::NotExpanding(lambda_prime));
    }
    Ok(DistortionReport { rows, distortion, lambda_prime, k_hat })
}

/// Result of comparing two points' itineraries through the tower.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Separation {
    Steps(u32),
    /// Still together after the cap.
    Capped(u32),
    /// A point fell outside the resolved elements.
    Unresolved(u32),
}

impl Separation {
    pub fn steps(self) -> u32 {
        match self {
            Separation::Steps(s) | Separation::Capped(s) | Separation::Unresolved(s) => s,
        }
    }
}

/// Number of induced-map steps before `x` and `y` land in different elements.
pub fn separation_time(map: &PiecewiseMap, tower: &Tower, x: Dd, y: Dd, cap: u32) -> Separation {
    let (mut x, mut y) = (x, y);
    for s in 0..cap {
        let (Some(ex), Some(ey)) = (tower.element_at(x), tower.element_at(y)) else {
            return Separation::Unresolved(s);
        };
        if ex.id != ey.id {
            return Separation::Steps(s);
        }
        if x == y {
            return Separation::Capped(cap);
        }
        let path = ex.path();
        x = log_deriv(map, x, &path).1;
        y = log_deriv(map, y, &path).1;
    }
    Separation::Capped(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::escape::{Limits, ThreePiecePolicy};
    use crate::partition::{BindingTable, CriticalPartition};

    fn doubling_tower() -> (PiecewiseMap, Tower) {
        let map = PiecewiseMap::uniform(2).unwrap();
        let delta = (-3.0f64).exp();
        let part = CriticalPartition::new(&map, delta, 700).unwrap();
        let binding = BindingTable::build(&map, &part, 0.05, 100);
        let c = OneSided { location: 0.0, side: Side::Right };
        let cfg = choose_delta_star(&map, delta, c, 40).unwrap();
        let limits = Limits { n_max: 40, max_intervals: 20_000, ..Limits::default() };
        let eng = EscapeEngine::new(&map, &part, &binding, ThreePiecePolicy::Chop, limits).unwrap();
        let tower = build_tower(&eng, &cfg, 40);
        (map, tower)
    }

    #[test]
    fn baseline_delta_star() {
        let map = PiecewiseMap::uniform(2).unwrap();
        let delta = (-3.0f64).exp();
        let c = OneSided { location: 0.0, side: Side::Right };
        let cfg = choose_delta_star(&map, delta, c, 40).unwrap();
        assert_eq!(cfg.delta_star, delta / 20.0);
        assert!(cfg.xi > 0.0 && cfg.xi < 1.0);
        // the worst window's component is δ*·2^{-t0} long
        let s = Dd::new(cfg.worst_window);
        let search = ReturnSearch::new(&map, cfg.base(), 40);
        let r = search
            .search(s + Dd::new(delta / 3.0), s + Dd::new(2.0 * delta / 3.0))
            .unwrap();
        let expected = cfg.delta_star * 0.5f64.powi(r.t0 as i32);
        assert!(((r.hi - r.lo).to_f64() - expected).abs() < 1e-15);
        assert!((cfg.xi - expected / delta).abs() < 1e-15);
    }

    #[test]
    fn centred_preimage_returns_in_one_step() {
        let map = PiecewiseMap::uniform(2).unwrap();
        let target = base_interval(OneSided { location: 0.0, side: Side::Right }, 0.01);
        let search = ReturnSearch::new(&map, target, 10);
        // 0.5 maps to 0 and its right neighbourhood to the target
        let r = search.search(Dd::new(0.49), Dd::new(0.52)).unwrap();
        assert_eq!(r.t0, 1);
        assert_eq!(r.lo, Dd::new(0.5));
        assert_eq!(r.hi, (Dd::new(0.01) + Dd::ONE).mul_f64(0.5));
    }

    #[test]
    fn baseline_tower_is_full_branch() {
        let (map, tower) = doubling_tower();
        assert!(tower.ledger_error < 1e-14);
        assert!(tower.elements.len() > 100);
        for e in &tower.elements {
            assert!(e.image_error < 1e-12, "{e:?}");
            // constant slope: |ω| = |Δ*| 2^{-T}
            let expected = tower.base_width().to_f64() * 0.5f64.powi(e.return_time as i32);
            assert!((e.width().to_f64() / expected - 1.0).abs() < 1e-12);
        }
        for w in tower.tail.windows(2) {
            assert!(w[1].unresolved <= w[0].unresolved + 1e-15);
        }
        let all: Vec<usize> = (0..tower.elements.len()).collect();
        let rep = distortion_audit(&map, &tower, &all, 4, 1).unwrap();
        assert_eq!(rep.distortion, 0.0);
        let t_min = tower.elements.iter().map(|e| e.return_time).min().unwrap();
        assert!((rep.lambda_prime - 2f64.powi(t_min as i32)).abs() < 1e-9 * rep.lambda_prime);
        assert!(rep.k_hat >= 1.0);
    }

    #[test]
    fn separation_in_different_elements_is_zero() {
        let (map, tower) = doubling_tower();
        let e0 = &tower.elements[0];
        let e1 = tower.elements.iter().find(|e| e.id != e0.id).unwrap();
        let s = separation_time(&map, &tower, Dd::mid(e0.a, e0.b), Dd::mid(e1.a, e1.b), 30);
        assert_eq!(s, Separation::Steps(0));
        let x = Dd::mid(e0.a, e0.b);
        assert_eq!(separation_time(&map, &tower, x, x, 30), Separation::Capped(30));
    }

    #[test]
    fn itinerary_codec() {
        let p = vec![0u8, 1, 9, 10, 35, 61];
        assert_eq!(decode_itinerary(&encode_itinerary(&p)), p);
    }

    #[test]
    fn json_round_trip() {
        let (_, tower) = doubling_tower();
        let back = Tower::from_json(&tower.to_json().unwrap()).unwrap();
        assert_eq!(back.elements, tower.elements);
        let e = &tower.elements[3];
        assert_eq!(back.element_at(Dd::mid(e.a, e.b)).unwrap().id, e.id);
    }
}
