//! Sampling audits of the expansion, recurrence and density hypotheses.

use rayon::prelude::*;

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::map_model::{nondegeneracy_check, OneSided, PiecewiseMap, PointClass, Side};

/// Golden-ratio jitter for grid sampling.
pub(crate) fn jitter(i: usize) -> f64 {
    const PHI: f64 = 0.618_033_988_749_894_9;
    (0.5 + i as f64 * PHI).fract()
}

/// Low-discrepancy points spread over the core.
pub fn core_samples(map: &PiecewiseMap, count: usize) -> Vec<f64> {
    let total: f64 = map.core.iter().map(|&(a, b)| b - a).sum();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut t = (i as f64 + jitter(i)) / count as f64 * total;
        for &(a, b) in &map.core {
            if t <= b - a {
                out.push(a + t);
                break;
            }
            t -= b - a;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockWitness {
    pub x: f64,
    pub n: usize,
    /// `log |(f^n)'(x)|`
    pub log_deriv: f64,
    /// The block starts in `f(Δ)` or ends in `Δ`.
    pub strong: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct H1Report {
    /// Largest λ for which every block satisfies its inequality with the
    /// candidate κ.
    pub lambda_hat: f64,
    /// Largest κ for which every block satisfies its inequality with the
    /// candidate λ.
    pub kappa_hat: f64,
    pub witness: BlockWitness,
    pub blocks: usize,
    pub candidate: (f64, f64),
    pub pass: bool,
}

fn in_delta(map: &PiecewiseMap, delta: f64, x: f64) -> bool {
    map.distance_to_crit(x) <= delta
}

/// Images `f(Δ_c)` of the one-sided neighbourhoods.
fn image_of_delta(map: &PiecewiseMap, delta: f64) -> Vec<(f64, f64)> {
    map.critical
        .iter()
        .map(|c| {
            let u = map.one_sided_value(c.one_sided());
            let x = c.location + c.side.sign() * delta;
            let v = map.branches[map.branch_at(c.location, Some(c.side)).unwrap()]
                .expr
                .eval(x);
            (u.min(v), u.max(v))
        })
        .collect()
}

/// Audits `|(f^n)'(x)| >= κ δ e^{λn}` (and the `κ e^{λn}` variant) over all
/// orbit blocks outside `Δ` of length up to `max_block_len`, started from
/// `samples` points of the core.
pub fn check_h1(
    map: &PiecewiseMap,
    delta: f64,
    max_block_len: usize,
    samples: usize,
    candidate: (f64, f64),
) -> Result<H1Report> {
    let (lambda_c, kappa_c) = candidate;
    if !(kappa_c > 0.0) {
        return Err(Error::Range("kappa candidate must be positive".into()));
    }
    let f_delta = image_of_delta(map, delta);
    let starts: Vec<(usize, f64)> = core_samples(map, samples)
        .into_iter()
        .enumerate()
        .filter(|&(_, x)| !in_delta(map, delta, x))
        .collect();
    if starts.is_empty() || max_block_len == 0 {
        return Err(Error::Config("no sample points outside the critical neighbourhood".into()));
    }
    let log_delta = delta.ln();
    let log_kappa = kappa_c.ln();

    // per start: (min λ-bound, witness), (min log κ-bound), block count
    let per_start: Vec<((f64, usize, BlockWitness), f64, usize)> = starts
        .par_iter()
        .map(|&(idx, x0)| {
            let strong_start = f_delta.iter().any(|&(a, b)| x0 >= a && x0 <= b);
            let mut x = x0;
            let mut l = 0.0;
            let mut best_lambda = (f64::INFINITY, idx, BlockWitness { x: x0, n: 0, log_deriv: 0.0, strong: false });
            let mut best_logk = f64::INFINITY;
            let mut count = 0;
            for n in 1..=max_block_len {
                l += map.deriv_fast(x).abs().max(1e-300).ln();
                x = map.apply(x);
                let ends_in = in_delta(map, delta, x);
                let strong = strong_start || ends_in;
                let s = if strong { 0.0 } else { log_delta };
                let lam = (l - s - log_kappa) / n as f64;
                if lam < best_lambda.0 {
                    best_lambda = (lam, idx, BlockWitness { x: x0, n, log_deriv: l, strong });
                }
                best_logk = best_logk.min(l - s - lambda_c * n as f64);
                count += 1;
                if ends_in {
                    break;
                }
            }
            (best_lambda, best_logk, count)
        })
        .collect();

    let mut lambda_hat = (f64::INFINITY, usize::MAX);
    let mut witness = None;
    let mut log_kappa_hat = f64::INFINITY;
    let mut blocks = 0;
    for ((lam, idx, w), lk, count) in per_start {
        if lam < lambda_hat.0 || (lam == lambda_hat.0 && idx < lambda_hat.1) {
            lambda_hat = (lam, idx);
            witness = Some(w);
        }
        log_kappa_hat = log_kappa_hat.min(lk);
        blocks += count;
    }
    Ok(H1Report {
        lambda_hat: lambda_hat.0,
        kappa_hat: log_kappa_hat.exp(),
        witness: witness.expect("at least one block"),
        blocks,
        candidate,
        pass: lambda_c <= lambda_hat.0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct H2Row {
    pub crit: usize,
    /// Smallest recurrence rate α compatible with the observed orbit.
    pub alpha_min: f64,
    pub alpha_witness: usize,
    /// `min_k (1/k) log |(f^k)'(c_1)|`
    pub lambda_hat: f64,
    pub lambda_witness: usize,
    pub horizon: usize,
    pub candidate: (f64, f64),
    pub pass: bool,
}

/// Follows each critical orbit for `horizon` steps. Vacuous for maps
/// without critical points of order >= 1.
pub fn check_h2(
    map: &PiecewiseMap,
    delta: f64,
    alpha: f64,
    lambda: f64,
    horizon: usize,
) -> Result<Vec<H2Row>> {
    if horizon == 0 {
        return Err(Error::Range("horizon must be at least 1".into()));
    }
    let breaks = map.breakpoints();
    let mut rows = Vec::new();
    for (i, c) in map.critical.iter().enumerate() {
        if c.class() != PointClass::Critical {
            continue;
        }
        let mut y = map.one_sided_value_dd(c.one_sided());
        let mut log_d = 0.0;
        let mut row = H2Row {
            crit: i,
            alpha_min: f64::NEG_INFINITY,
            alpha_witness: 0,
            lambda_hat: f64::INFINITY,
            lambda_witness: 0,
            horizon,
            candidate: (alpha, lambda),
            pass: false,
        };
        for k in 1..=horizon {
            let dist = map
                .critical
                .iter()
                .map(|d| (y - Dd::new(d.location)).abs().to_f64())
                .fold(f64::INFINITY, f64::min);
            if dist == 0.0 || breaks.iter().any(|&b| y == Dd::new(b)) {
                return Err(Error::CriticalOrbitHit { location: c.location, k });
            }
            let a = (delta.ln() - dist.ln()) / k as f64;
            if a > row.alpha_min {
                row.alpha_min = a;
                row.alpha_witness = k;
            }
            log_d += map.deriv_dd(y, Side::Right).abs().max(1e-300).ln();
            let rate = log_d / k as f64;
            if rate < row.lambda_hat {
                row.lambda_hat = rate;
                row.lambda_witness = k;
            }
            y = map.eval_dd(y, Side::Right);
        }
        row.pass = alpha >= row.alpha_min && lambda <= row.lambda_hat;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct H3Report {
    pub c_star: OneSided,
    /// Largest gap between consecutive preimages (of depth <= t) inside the
    /// core, for t = 0, 1, ...
    pub profile: Vec<f64>,
    pub nodes: Vec<usize>,
    /// Preimages within `mesh` of a critical location or branch point.
    pub near_critical: Vec<(f64, usize)>,
    /// Some preimage coincides with a critical location.
    pub hits_critical: bool,
    /// Preimages where `|f'|` is below 1e-8.
    pub ill_conditioned: usize,
    /// The node budget stopped the tree before the requested depth.
    pub truncated: bool,
    pub mesh: f64,
    pub pass: bool,
}

fn max_gap(core: &[(f64, f64)], sorted: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for &(a, b) in core {
        let lo = sorted.partition_point(|&x| x < a);
        let hi = sorted.partition_point(|&x| x <= b);
        let inside = &sorted[lo..hi];
        if inside.is_empty() {
            worst = worst.max(b - a);
            continue;
        }
        worst = worst.max(inside[0] - a).max(b - inside[inside.len() - 1]);
        for w in inside.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    worst
}

/// Backward orbit tree of `c*` along branch inverses; the pass flag needs
/// the final gap to be below `mesh` and no preimage to hit another
/// critical location.
pub fn check_h3(
    map: &PiecewiseMap,
    c_star: OneSided,
    depth: usize,
    mesh: f64,
    max_nodes: usize,
) -> Result<H3Report> {
    let (a, b) = map.domain;
    if !(c_star.location >= a && c_star.location <= b) {
        return Err(Error::Domain { x: c_star.location, lo: a, hi: b });
    }
    let specials: Vec<f64> = {
        let mut v = map.critical_locations();
        v.extend(map.breakpoints());
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let crit_locs = map.critical_locations();
    let mut all = vec![c_star.location];
    let mut frontier = vec![Dd::new(c_star.location)];
    let mut profile = vec![max_gap(&map.core, &all)];
    let mut nodes = vec![1];
    let mut near = Vec::new();
    let mut hits = false;
    let mut ill = 0;
    let mut truncated = false;
    let mut total = 1usize;
    for t in 1..=depth {
        let mut next = Vec::new();
        for &y in &frontier {
            for k in 0..map.branches.len() {
                if let Some(x) = map.inverse_dd(k, y) {
                    let xf = x.to_f64();
                    if crit_locs.iter().any(|&c| x == Dd::new(c)) {
                        hits = true;
                    }
                    if specials.iter().any(|&c| (xf - c).abs() < mesh) {
                        near.push((xf, t));
                    }
                    let d = map.branches[k].expr.deriv_dd(x);
                    if d.abs() < 1e-8 {
                        ill += 1;
                    }
                    next.push(x);
                }
            }
        }
        total += next.len();
        if total > max_nodes {
            truncated = true;
            break;
        }
        all.extend(next.iter().map(|x| x.to_f64()));
        all.sort_by(f64::total_cmp);
        profile.push(max_gap(&map.core, &all));
        nodes.push(next.len());
        frontier = next;
    }
    let pass = !hits && profile.last().is_some_and(|&g| g < 1.0) && !truncated;
    Ok(H3Report {
        c_star,
        profile,
        nodes,
        near_critical: near,
        hits_critical: hits,
        ill_conditioned: ill,
        truncated,
        mesh,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NondegeneracyRow {
    pub crit: usize,
    pub radius: f64,
    pub measured: f64,
    pub declared: f64,
    pub pass: bool,
}

/// Runs the non-degeneracy check at each radius that fits between the
/// critical points.
pub fn check_nondegeneracy(map: &PiecewiseMap, radii: &[f64], samples: usize) -> Vec<NondegeneracyRow> {
    let mut rows = Vec::new();
    for crit in 0..map.critical.len() {
        for &radius in radii {
            if let Ok(rep) = nondegeneracy_check(map, crit, radius, samples) {
                rows.push(NondegeneracyRow {
                    crit,
                    radius,
                    measured: rep.overall(),
                    declared: rep.declared,
                    pass: rep.passes(),
                });
            }
        }
    }
    rows
}

/// Everything the check stage measures.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub nondegeneracy: Vec<NondegeneracyRow>,
    pub h1: H1Report,
    pub h2: Vec<H2Row>,
    pub h3: H3Report,
}

impl HypothesisReport {
    pub fn pass(&self) -> bool {
        self.nondegeneracy.iter().all(|r| r.pass)
            && self.h1.pass
            && self.h2.iter().all(|r| r.pass)
            && self.h3.pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h1_lorenz_has_global_expansion() {
        let m = PiecewiseMap::lorenz().unwrap();
        let rep = check_h1(&m, (-4.0f64).exp(), 30, 2000, (0.1, 1.0)).unwrap();
        assert!(rep.lambda_hat >= 1.2f64.ln() - 1e-12, "{}", rep.lambda_hat);
        assert!(rep.pass);
    }

    #[test]
    fn h1_baseline_is_the_slope() {
        let m = PiecewiseMap::uniform(2).unwrap();
        let delta = (-5.0f64).exp();
        let rep = check_h1(&m, delta, 20, 500, (0.5, 1.0 / delta)).unwrap();
        assert!((rep.lambda_hat - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn h1_lambda_shrinks_with_longer_blocks() {
        let m = PiecewiseMap::chebyshev().unwrap();
        let delta = 0.05;
        let short = check_h1(&m, delta, 5, 1000, (0.1, 1.0)).unwrap();
        let long = check_h1(&m, delta, 25, 1000, (0.1, 1.0)).unwrap();
        assert!(long.lambda_hat <= short.lambda_hat);
        assert!(long.lambda_hat > 0.0);
        assert!(long.witness.n >= 1);
    }

    #[test]
    fn h1_rejects_empty_samples() {
        let m = PiecewiseMap::chebyshev().unwrap();
        assert!(matches!(check_h1(&m, 0.9, 5, 10, (0.1, 1.0)), Err(Error::Config(_))));
    }

    #[test]
    fn h2_chebyshev_telescopes() {
        let m = PiecewiseMap::chebyshev().unwrap();
        for n in [1, 60, 1000] {
            let rows = check_h2(&m, (-5.0f64).exp(), 0.05, 1.0, n).unwrap();
            assert_eq!(rows.len(), 2);
            for r in rows {
                assert!((r.lambda_hat - 4f64.ln()).abs() < 1e-12);
                assert!(r.alpha_min < 0.0);
                assert!(r.pass);
            }
        }
        let lor = PiecewiseMap::lorenz().unwrap();
        assert!(check_h2(&lor, 0.01, 0.05, 1.0, 10).unwrap().is_empty());
    }

    #[test]
    fn h3_chebyshev_profile_decreases() {
        let m = PiecewiseMap::chebyshev().unwrap();
        let c = OneSided { location: 0.0, side: Side::Right };
        let rep = check_h3(&m, c, 12, 1e-3, 1 << 20).unwrap();
        assert_eq!(rep.profile[0], 1.0);
        for w in rep.profile.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(rep.profile[12] < 0.01);
        assert!(!rep.hits_critical);
        assert!(rep.pass);
    }
}
