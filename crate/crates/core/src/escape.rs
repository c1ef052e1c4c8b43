//! The escape-partition algorithm: free and bound iterates, essential and
//! inessential returns, chopping along the critical partition, and escape
//! detection.
//!
//! Intervals are tracked in the coordinates of the starting interval. The
//! image `f^n(ω)` is advanced one step at a time in double-double; partition
//! points of `ω` are found by pulling targets back through the recorded
//! branch itinerary.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::map_model::{PiecewiseMap, Side};
use crate::partition::{BindingTable, CriticalPartition, PartitionIndex};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    /// Last iterate that is processed.
    pub n_max: u32,
    pub max_intervals: usize,
    /// Intervals narrower than this (in starting coordinates) are aborted.
    pub min_width: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            n_max: 200,
            max_intervals: 2_000_000,
            min_width: 1e-14,
        }
    }
}

/// What to do when the image meets exactly three adjacent pieces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreePiecePolicy {
    #[default]
    Chop,
    Inessential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnKind {
    Essential,
    Inessential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnEvent {
    pub time: u32,
    pub kind: ReturnKind,
    pub crit: usize,
    pub r: u32,
    pub j: u32,
    pub p: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum State {
    Free,
    /// Bound for every iterate up to and including this one.
    BoundUntil(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    IterationLimit,
    IntervalLimit,
    MinWidth,
    PrecisionExhausted,
    NoFullReturn,
    Drift,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AbortReason::IterationLimit => "iteration limit",
            AbortReason::IntervalLimit => "interval limit",
            AbortReason::MinWidth => "below minimum width",
            AbortReason::PrecisionExhausted => "precision exhausted",
            AbortReason::NoFullReturn => "no full return",
            AbortReason::Drift => "numeric drift",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct OrbitInterval {
    pub a: Dd,
    pub b: Dd,
    pub n: u32,
    /// `(f^n(a), f^n(b))`
    pub image: (Dd, Dd),
    pub state: State,
    /// Branch index of `f^i(ω)` for `i < n`.
    pub branches: Vec<u8>,
    pub events: Vec<ReturnEvent>,
    pub generation: u32,
}

impl OrbitInterval {
    pub fn new(a: Dd, b: Dd) -> OrbitInterval {
        OrbitInterval {
            a,
            b,
            n: 0,
            image: (a, b),
            state: State::Free,
            branches: Vec::new(),
            events: Vec::new(),
            generation: 0,
        }
    }

    pub fn width(&self) -> Dd {
        self.b - self.a
    }

    pub fn image_sorted(&self) -> (Dd, Dd) {
        let (u, v) = self.image;
        if u <= v {
            (u, v)
        } else {
            (v, u)
        }
    }

    pub fn image_width(&self) -> Dd {
        (self.image.1 - self.image.0).abs()
    }

    pub fn increasing(&self) -> bool {
        self.image.0 <= self.image.1
    }
}

#[derive(Clone, Debug)]
pub struct Escaped {
    pub a: Dd,
    pub b: Dd,
    pub time: u32,
    pub image: (Dd, Dd),
    pub events: Vec<ReturnEvent>,
    pub generation: u32,
}

#[derive(Clone, Debug)]
pub struct Aborted {
    pub a: Dd,
    pub b: Dd,
    pub time: u32,
    pub reason: AbortReason,
}

/// A piece carved out of an escaped interval that returns onto the base
/// interval after `t0` further steps.
#[derive(Clone, Debug)]
pub struct Carved {
    pub a: Dd,
    pub b: Dd,
    /// The escaped interval it was cut from, and that interval's image length.
    pub parent: (Dd, Dd),
    pub parent_image: Dd,
    /// Length of the piece's image at the escape time.
    pub image: Dd,
    pub escape_time: u32,
    pub t0: u32,
    pub branches: Vec<u8>,
    pub events: Vec<ReturnEvent>,
    pub generation: u32,
}

impl Carved {
    pub fn return_time(&self) -> u32 {
        self.escape_time + self.t0
    }
}

pub enum Resolution {
    Carved { piece: Carved, flanks: Vec<OrbitInterval> },
    Failed(AbortReason),
}

/// Handles an interval at its escape time (full returns in the tower).
pub trait Resolver: Sync {
    fn resolve(&self, engine: &EscapeEngine<'_>, iv: OrbitInterval) -> Resolution;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub a: f64,
    pub b: f64,
    pub event: ReturnEvent,
}

/// Per-iterate measure ledger.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TailRow {
    pub n: u32,
    /// Mass still in play after iterate `n` was processed.
    pub active: Dd,
    /// Cumulative mass escaped (or carved) at times `<= n`.
    pub escaped: Dd,
    pub aborted: Dd,
}

#[derive(Clone, Debug, Default)]
pub struct EscapeRun {
    pub total: Dd,
    pub tail: Vec<TailRow>,
    pub escaped: Vec<Escaped>,
    pub carved: Vec<Carved>,
    pub aborted: Vec<Aborted>,
    pub events: Vec<EventRecord>,
    /// A resource limit stopped the run early.
    pub limit_hit: Option<AbortReason>,
    pub intervals_processed: usize,
}

impl EscapeRun {
    pub fn aborted_measure(&self) -> Dd {
        self.aborted.iter().fold(Dd::ZERO, |s, x| s + (x.b - x.a))
    }

    /// Aborted mass other than what was still active when `n_max` was
    /// reached.
    pub fn lost_measure(&self) -> Dd {
        self.aborted
            .iter()
            .filter(|x| x.reason != AbortReason::IterationLimit)
            .fold(Dd::ZERO, |s, x| s + (x.b - x.a))
    }

    /// `Σ|escaped| + Σ|carved| + Σ|aborted| + active - |ω₀|` at the end.
    pub fn ledger_error(&self) -> f64 {
        let last = self.tail.last().cloned().unwrap_or_default();
        (last.active + last.escaped + last.aborted - self.total).abs().to_f64()
    }
}

#[derive(Default)]
struct StepOut {
    next: Vec<OrbitInterval>,
    escaped: Vec<Escaped>,
    carved: Vec<Carved>,
    aborted: Vec<Aborted>,
    events: Vec<EventRecord>,
}

enum SegKind {
    Host(PartitionIndex),
    Partial(PartitionIndex),
    Stub,
    Remainder(AbortReason),
}

struct Seg {
    lo: Dd,
    hi: Dd,
    kind: SegKind,
}

pub struct EscapeEngine<'a> {
    pub map: &'a PiecewiseMap,
    pub part: &'a CriticalPartition,
    pub binding: &'a BindingTable,
    pub policy: ThreePiecePolicy,
    pub limits: Limits,
    pub record_events: bool,
    breaks: Vec<f64>,
    /// Per critical point: deepest ring that is still resolved.
    depth: Vec<u32>,
}

impl<'a> EscapeEngine<'a> {
    pub fn new(
        map: &'a PiecewiseMap,
        part: &'a CriticalPartition,
        binding: &'a BindingTable,
        policy: ThreePiecePolicy,
        limits: Limits,
    ) -> Result<EscapeEngine<'a>> {
        if map.branches.len() > u8::MAX as usize {
            return Err(Error::Config("at most 255 branches are supported".into()));
        }
        if !(limits.min_width > 0.0) {
            return Err(Error::Range("min_width must be positive".into()));
        }
        let depth = (0..map.critical.len())
            .map(|c| binding.depth(c).min(part.r_max))
            .collect();
        Ok(EscapeEngine {
            map,
            part,
            binding,
            policy,
            limits,
            record_events: false,
            breaks: map.breakpoints(),
            depth,
        })
    }

    pub fn delta(&self) -> f64 {
        self.part.delta
    }

    /// Pulls `y` back through the branches `path` (last step first).
    pub fn pull_back(&self, y: Dd, path: &[u8]) -> Dd {
        path.iter()
            .rev()
            .fold(y, |z, &k| self.map.inverse_clamped(k as usize, z))
    }

    /// Pushes `x` forward along `path`.
    pub fn push_forward(&self, x: Dd, path: &[u8]) -> Dd {
        path.iter()
            .fold(x, |z, &k| self.map.branches[k as usize].expr.eval_dd(z))
    }

    /// Branch that contains the interior of the sorted interval `(lo, hi)`.
    pub fn branch_of(&self, lo: Dd, hi: Dd) -> Option<usize> {
        let k = self.map.branch_at_dd(lo, Side::Right);
        (hi <= Dd::new(self.map.branches[k].hi)).then_some(k)
    }

    fn advance(&self, mut iv: OrbitInterval, out: &mut StepOut) {
        let (lo, hi) = iv.image_sorted();
        let Some(k) = self.branch_of(lo, hi) else {
            out.aborted.push(Aborted { a: iv.a, b: iv.b, time: iv.n, reason: AbortReason::Drift });
            return;
        };
        let e = &self.map.branches[k].expr;
        iv.image = (e.eval_dd(iv.image.0), e.eval_dd(iv.image.1));
        iv.branches.push(k as u8);
        iv.n += 1;
        if iv.image.0 == iv.image.1 {
            out.aborted.push(Aborted { a: iv.a, b: iv.b, time: iv.n, reason: AbortReason::PrecisionExhausted });
            return;
        }
        out.next.push(iv);
    }

    fn binding_p(&self, crit: usize, r: u32) -> Option<u32> {
        self.binding.get(crit, r).map(|e| e.p)
    }

    fn record(&self, iv: &OrbitInterval, ev: ReturnEvent, out: &mut StepOut) {
        if self.record_events {
            out.events.push(EventRecord { a: iv.a.to_f64(), b: iv.b.to_f64(), event: ev });
        }
    }

    /// Offsets `(o1, o2)` of `image ∩ Δ_crit`, if the overlap has positive length.
    fn overlap_offsets(&self, crit: usize, lo: Dd, hi: Dd) -> Option<(Dd, Dd)> {
        let (dlo, dhi) = self.part.neighbourhood(crit);
        let (l, h) = (lo.max(dlo), hi.min(dhi));
        if !(l < h) {
            return None;
        }
        let (c, side) = self.part.points[crit];
        let c = Dd::new(c);
        Some(match side {
            Side::Right => (l - c, h - c),
            Side::Left => (c - h, c - l),
        })
    }

    /// Piece containing offset `o` from below, i.e. with `inner < o <= outer`.
    fn piece_below(&self, o: Dd) -> (u32, u32, bool) {
        if o >= Dd::new(self.part.delta) {
            let r = self.part.r_min();
            return (r, r * r, false);
        }
        let (r, j, clipped) = self.part.locate_offset(o).expect("offset inside Δ");
        if !clipped && o == Dd::new(CriticalPartition::offset(r, j - 1)) {
            return self.step_in(r, j).map_or((r, j, true), |(r, j)| (r, j, false));
        }
        (r, j, clipped)
    }

    fn step_in(&self, r: u32, j: u32) -> Option<(u32, u32)> {
        if j > 1 {
            Some((r, j - 1))
        } else if r < self.part.r_max {
            Some((r + 1, (r + 1) * (r + 1)))
        } else {
            None
        }
    }

    /// Number of pieces between two (r, j) positions, saturating.
    fn pieces_between(outer: (u32, u32), inner: (u32, u32)) -> u64 {
        let (ro, jo) = outer;
        let (ri, ji) = inner;
        if ro == ri {
            return (jo - ji + 1) as u64;
        }
        let mut n = jo as u64 + (ri as u64 * ri as u64 - ji as u64 + 1);
        for r in ro + 1..ri {
            n = n.saturating_add(r as u64 * r as u64);
        }
        n
    }

    /// Processes one interval at its current iterate.
    fn process(&self, iv: OrbitInterval, resolver: Option<&dyn Resolver>, out: &mut StepOut) {
        let mut queue = vec![iv];
        while let Some(iv) = queue.pop() {
            if iv.width() < Dd::new(self.limits.min_width) {
                out.aborted.push(Aborted { a: iv.a, b: iv.b, time: iv.n, reason: AbortReason::MinWidth });
                continue;
            }
            if let State::BoundUntil(m) = iv.state {
                if iv.n <= m {
                    self.advance(iv, out);
                    continue;
                }
            }
            let mut iv = iv;
            iv.state = State::Free;
            let n = iv.n;
            let (lo, hi) = iv.image_sorted();
            let width = hi - lo;
            if width >= Dd::new(self.part.delta) {
                match resolver {
                    None => out.escaped.push(Escaped {
                        a: iv.a,
                        b: iv.b,
                        time: n,
                        image: iv.image,
                        events: iv.events,
                        generation: iv.generation,
                    }),
                    Some(res) => {
                        let (a, b) = (iv.a, iv.b);
                        match res.resolve(self, iv) {
                            Resolution::Carved { piece, flanks } => {
                                out.carved.push(piece);
                                queue.extend(flanks);
                            }
                            Resolution::Failed(reason) => {
                                out.aborted.push(Aborted { a, b, time: n, reason })
                            }
                        }
                    }
                }
                continue;
            }
            if self.map.critical.is_empty() {
                let cuts: Vec<f64> = self
                    .breaks
                    .iter()
                    .copied()
                    .filter(|&c| Dd::new(c) > lo && Dd::new(c) < hi)
                    .collect();
                if !cuts.is_empty() {
                    queue.extend(self.cut(&iv, &cuts));
                    continue;
                }
                self.advance(iv, out);
                continue;
            }
            // pieces met on each side of the critical set
            let mut sides = Vec::new();
            for crit in 0..self.map.critical.len() {
                if let Some((o1, o2)) = self.overlap_offsets(crit, lo, hi) {
                    sides.push((crit, o1, o2));
                }
            }
            if sides.is_empty() {
                self.advance(iv, out);
                continue;
            }
            if sides.len() == 1 {
                let (crit, o1, o2) = sides[0];
                if o1.hi > 0.0 {
                    let (ri, ji, ci) = self.part.locate_offset(o1).expect("inside Δ");
                    let (ro, jo, _) = self.piece_below(o2);
                    let count = if ci { u64::MAX } else { Self::pieces_between((ro, jo), (ri, ji)) };
                    let limit = match self.policy {
                        ThreePiecePolicy::Chop => 2,
                        ThreePiecePolicy::Inessential => 3,
                    };
                    if count <= limit {
                        let Some(p) = (ro <= self.depth[crit]).then(|| self.binding_p(crit, ro)).flatten() else {
                            out.aborted.push(Aborted { a: iv.a, b: iv.b, time: n, reason: AbortReason::PrecisionExhausted });
                            continue;
                        };
                        let ev = ReturnEvent { time: n, kind: ReturnKind::Inessential, crit, r: ro, j: jo, p };
                        self.record(&iv, ev, out);
                        iv.events.push(ev);
                        iv.state = State::BoundUntil(n + p);
                        self.advance(iv, out);
                        continue;
                    }
                }
            }
            self.chop(iv, lo, hi, &sides, &mut queue, out);
        }
    }

    /// Splits at branch points of a map without critical points.
    fn cut(&self, iv: &OrbitInterval, cuts: &[f64]) -> Vec<OrbitInterval> {
        let inc = iv.increasing();
        let (lo, hi) = iv.image_sorted();
        let mut ys = vec![lo];
        ys.extend(cuts.iter().map(|&c| Dd::new(c)));
        ys.push(hi);
        self.children_from_cuts(iv, &ys, inc)
            .into_iter()
            .map(|(a, b, ilo, ihi)| OrbitInterval {
                a,
                b,
                n: iv.n,
                image: if inc { (ilo, ihi) } else { (ihi, ilo) },
                state: State::Free,
                branches: iv.branches.clone(),
                events: iv.events.clone(),
                generation: iv.generation,
            })
            .collect()
    }

    /// For ascending image points `ys` (first and last are the image ends),
    /// returns `(a, b, image_lo, image_hi)` per consecutive pair, ascending in
    /// the starting coordinates.
    fn children_from_cuts(&self, iv: &OrbitInterval, ys: &[Dd], inc: bool) -> Vec<(Dd, Dd, Dd, Dd)> {
        let m = ys.len();
        let mut xs: Vec<Dd> = Vec::with_capacity(m);
        for (i, &y) in ys.iter().enumerate() {
            let x = if i == 0 {
                if inc { iv.a } else { iv.b }
            } else if i == m - 1 {
                if inc { iv.b } else { iv.a }
            } else {
                self.pull_back(y, &iv.branches)
            };
            xs.push(x);
        }
        // keep the cut points monotone and inside [a, b]
        for i in 1..m - 1 {
            let x = xs[i].max(iv.a).min(iv.b);
            xs[i] = if inc { x.max(xs[i - 1]) } else { x.min(xs[i - 1]) };
        }
        let mut out: Vec<(Dd, Dd, Dd, Dd)> = (0..m - 1)
            .map(|i| {
                let (a, b) = if inc { (xs[i], xs[i + 1]) } else { (xs[i + 1], xs[i]) };
                (a, b, ys[i], ys[i + 1])
            })
            .collect();
        if !inc {
            out.reverse();
        }
        out
    }

    fn chop(
        &self,
        iv: OrbitInterval,
        lo: Dd,
        hi: Dd,
        sides: &[(usize, Dd, Dd)],
        queue: &mut Vec<OrbitInterval>,
        out: &mut StepOut,
    ) {
        let n = iv.n;
        let inc = iv.increasing();
        let mut segs: Vec<Seg> = Vec::new();
        for &(crit, o1, o2) in sides {
            let side_segs = self.side_segments(&iv, crit, o1, o2);
            segs.extend(side_segs);
        }
        segs.sort_by(|x, y| x.lo.partial_cmp(&y.lo).unwrap());
        // stubs outside Δ
        let first = segs[0].lo;
        let last = segs[segs.len() - 1].hi;
        if lo < first {
            segs.insert(0, Seg { lo, hi: first, kind: SegKind::Stub });
        }
        if last < hi {
            segs.push(Seg { lo: last, hi, kind: SegKind::Stub });
        }
        let segs = merge_segments(segs, self.part.delta);

        let mut ys: Vec<Dd> = segs.iter().map(|s| s.lo).collect();
        ys.push(hi);
        let kids = self.children_from_cuts(&iv, &ys, inc);
        let order: Vec<usize> = if inc { (0..segs.len()).collect() } else { (0..segs.len()).rev().collect() };
        for (child, &si) in kids.into_iter().zip(order.iter()) {
            let (a, b, ilo, ihi) = child;
            if !(a < b) {
                continue;
            }
            let image = if inc { (ilo, ihi) } else { (ihi, ilo) };
            match segs[si].kind {
                SegKind::Remainder(reason) => out.aborted.push(Aborted { a, b, time: n, reason }),
                SegKind::Stub => queue.push(OrbitInterval {
                    a,
                    b,
                    n,
                    image,
                    state: State::Free,
                    branches: iv.branches.clone(),
                    events: iv.events.clone(),
                    generation: iv.generation,
                }),
                SegKind::Host(idx) | SegKind::Partial(idx) => {
                    let mut kid = OrbitInterval {
                        a,
                        b,
                        n,
                        image,
                        state: State::Free,
                        branches: iv.branches.clone(),
                        events: iv.events.clone(),
                        generation: iv.generation,
                    };
                    if kid.width() < Dd::new(self.limits.min_width) {
                        out.aborted.push(Aborted { a, b, time: n, reason: AbortReason::MinWidth });
                        continue;
                    }
                    let p = self.binding_p(idx.crit, idx.r).unwrap_or(0);
                    let ev = ReturnEvent { time: n, kind: ReturnKind::Essential, crit: idx.crit, r: idx.r, j: idx.j, p };
                    self.record(&kid, ev, out);
                    kid.events.push(ev);
                    kid.state = State::BoundUntil(n + p);
                    self.advance(kid, out);
                }
            }
        }
    }

    /// Segments of `image ∩ Δ_crit`, ascending in x, down to the resolved depth.
    fn side_segments(&self, iv: &OrbitInterval, crit: usize, o1: Dd, o2: Dd) -> Vec<Seg> {
        let part = self.part;
        let (c, side) = part.points[crit];
        let to_x = |off: Dd| Dd::new(c) + off.mul_f64(side.sign());
        let seg = |oa: Dd, ob: Dd, kind: SegKind| {
            let (xa, xb) = (to_x(oa), to_x(ob));
            if xa < xb {
                Seg { lo: xa, hi: xb, kind }
            } else {
                Seg { lo: xb, hi: xa, kind }
            }
        };
        let depth = self.depth[crit];
        let mut segs = Vec::new();
        let (mut r, mut j, _) = self.piece_below(o2);
        let inner = if o1.hi > 0.0 { Some(part.locate_offset(o1).expect("inside Δ")) } else { None };
        let mut outer_end = o2;
        let mut checked_ring = 0;
        // preimage length per unit image length inside the current ring
        let mut scale = 0.0;
        loop {
            if r > depth {
                segs.push(seg(o1, outer_end, SegKind::Remainder(AbortReason::PrecisionExhausted)));
                break;
            }
            if r != checked_ring {
                checked_ring = r;
                let ring_in = Dd::new(crate::partition::ring(r)).max(o1);
                let xa = self.pull_back(to_x(ring_in), &iv.branches);
                let xb = self.pull_back(to_x(outer_end), &iv.branches);
                scale = ((xb - xa).abs() / (outer_end - ring_in)).to_f64();
            }
            let (pi, po) = part.piece_offsets(r, j);
            let (pi, po) = (Dd::new(pi), Dd::new(po));
            let idx = PartitionIndex { crit, r, j };
            let is_inner = matches!(inner, Some((ri, ji, _)) if ri == r && ji == j);
            let lo_off = if is_inner { o1 } else { pi };
            if scale * (po - pi).to_f64() < self.limits.min_width {
                segs.push(seg(o1, outer_end, SegKind::Remainder(AbortReason::MinWidth)));
                break;
            }
            let partial = outer_end < po || lo_off > pi;
            let kind = if partial { SegKind::Partial(idx) } else { SegKind::Host(idx) };
            segs.push(seg(lo_off, outer_end, kind));
            if is_inner {
                break;
            }
            outer_end = pi;
            match self.step_in(r, j) {
                Some((r2, j2)) => {
                    r = r2;
                    j = j2;
                }
                None => {
                    segs.push(seg(o1, outer_end, SegKind::Remainder(AbortReason::PrecisionExhausted)));
                    break;
                }
            }
        }
        segs.retain(|s| s.lo < s.hi);
        segs
    }

    /// Runs the construction on `start` until every interval has a
    /// disposition or a limit is hit.
    pub fn run(&self, start: Vec<OrbitInterval>, resolver: Option<&dyn Resolver>) -> EscapeRun {
        let total = start.iter().fold(Dd::ZERO, |s, iv| s + iv.width());
        let mut run = EscapeRun { total, ..Default::default() };
        let mut active = start;
        active.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
        let mut escaped_sum = Dd::ZERO;
        let mut aborted_sum = Dd::ZERO;
        let mut n = active.iter().map(|iv| iv.n).min().unwrap_or(0);
        while !active.is_empty() {
            if n > self.limits.n_max {
                for iv in active.drain(..) {
                    aborted_sum += iv.width();
                    run.aborted.push(Aborted { a: iv.a, b: iv.b, time: n, reason: AbortReason::IterationLimit });
                }
                run.limit_hit = Some(AbortReason::IterationLimit);
                run.tail.push(TailRow { n, active: Dd::ZERO, escaped: escaped_sum, aborted: aborted_sum });
                break;
            }
            let (now, later): (Vec<_>, Vec<_>) = active.into_iter().partition(|iv| iv.n == n);
            run.intervals_processed += now.len();
            let outs: Vec<StepOut> = now
                .into_par_iter()
                .map(|iv| {
                    let mut out = StepOut::default();
                    self.process(iv, resolver, &mut out);
                    out
                })
                .collect();
            let mut next = later;
            for mut o in outs {
                escaped_sum = o.escaped.iter().fold(escaped_sum, |s, e| s + (e.b - e.a));
                escaped_sum = o.carved.iter().fold(escaped_sum, |s, e| s + (e.b - e.a));
                aborted_sum = o.aborted.iter().fold(aborted_sum, |s, e| s + (e.b - e.a));
                o.events.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
                run.events.append(&mut o.events);
                run.escaped.append(&mut o.escaped);
                run.carved.append(&mut o.carved);
                run.aborted.append(&mut o.aborted);
                next.append(&mut o.next);
            }
            next.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
            let active_sum = next.iter().fold(Dd::ZERO, |s, iv| s + iv.width());
            run.tail.push(TailRow { n, active: active_sum, escaped: escaped_sum, aborted: aborted_sum });
            if next.len() > self.limits.max_intervals {
                for iv in next.drain(..) {
                    aborted_sum += iv.width();
                    run.aborted.push(Aborted { a: iv.a, b: iv.b, time: n + 1, reason: AbortReason::IntervalLimit });
                }
                run.limit_hit = Some(AbortReason::IntervalLimit);
                run.tail.push(TailRow { n: n + 1, active: Dd::ZERO, escaped: escaped_sum, aborted: aborted_sum });
            }
            active = next;
            n += 1;
        }
        let key = |a: &Dd| *a;
        run.escaped.sort_by(|x, y| key(&x.a).partial_cmp(&key(&y.a)).unwrap());
        run.carved.sort_by(|x, y| key(&x.a).partial_cmp(&key(&y.a)).unwrap());
        run.aborted.sort_by(|x, y| key(&x.a).partial_cmp(&key(&y.a)).unwrap());
        run
    }
}

/// Partial pieces join their full neighbour; stubs outside Δ join the
/// adjacent piece unless they are already escape-sized.
fn merge_segments(segs: Vec<Seg>, delta: f64) -> Vec<Seg> {
    let mut segs = segs;
    // adjacent remainders (both sides of a critical point) become one
    let mut i = 0;
    while i + 1 < segs.len() {
        if matches!(segs[i].kind, SegKind::Remainder(_)) && matches!(segs[i + 1].kind, SegKind::Remainder(_)) {
            let hi = segs[i + 1].hi;
            segs[i].hi = hi;
            segs.remove(i + 1);
        } else {
            i += 1;
        }
    }
    let absorbs = |k: &SegKind| matches!(k, SegKind::Host(_) | SegKind::Remainder(_));
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..segs.len() {
            let movable = match segs[i].kind {
                SegKind::Partial(_) => true,
                SegKind::Stub => (segs[i].hi - segs[i].lo) < Dd::new(delta),
                _ => false,
            };
            if !movable || segs.len() == 1 {
                continue;
            }
            // prefer the neighbour that can absorb
            let target = if i + 1 < segs.len() && absorbs(&segs[i + 1].kind) {
                Some(i + 1)
            } else if i > 0 && absorbs(&segs[i - 1].kind) {
                Some(i - 1)
            } else {
                None
            };
            if let Some(t) = target {
                if t > i {
                    segs[t].lo = segs[i].lo;
                } else {
                    segs[t].hi = segs[i].hi;
                }
                segs.remove(i);
                changed = true;
                break;
            }
        }
    }
    // anything left partial hosts itself
    for s in &mut segs {
        if let SegKind::Partial(idx) = s.kind {
            s.kind = SegKind::Host(idx);
        }
    }
    segs
}

/// Least-squares fit of `log y = log C - γ n` over the rows in `[n0, n1]`
/// with positive `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n0: u32,
    pub n1: u32,
    pub points: usize,
}

impl LogLinearFit {
    pub fn rate(&self) -> f64 {
        -self.slope
    }

    pub fn prefactor(&self) -> f64 {
        self.intercept.exp()
    }
}

pub fn fit_log_linear(data: &[(f64, f64)], n0: u32, n1: u32) -> Option<LogLinearFit> {
    let pts: Vec<(f64, f64)> = data
        .iter()
        .filter(|&&(n, y)| n >= n0 as f64 && n <= n1 as f64 && y > 0.0 && y.is_finite())
        .map(|&(n, y)| (n, y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LogLinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
        n0,
        n1,
        points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(map: &PiecewiseMap, delta: f64) -> (CriticalPartition, BindingTable) {
        let part = CriticalPartition::new(map, delta, 700).unwrap();
        let binding = BindingTable::build(map, &part, 0.05, 1000);
        (part, binding)
    }

    #[test]
    fn baseline_escape_time() {
        let map = PiecewiseMap::uniform(2).unwrap();
        let delta = (-5.0f64).exp();
        let (part, binding) = setup(&map, delta);
        let eng = EscapeEngine::new(&map, &part, &binding, ThreePiecePolicy::Chop, Limits::default()).unwrap();
        // an interval of length δ/3 away from the branch point
        let a = Dd::new(0.3);
        let b = a + Dd::new(delta / 3.0);
        let run = eng.run(vec![OrbitInterval::new(a, b)], None);
        assert_eq!(run.escaped.len(), 1);
        assert_eq!(run.escaped[0].time, (3f64.ln() / 2f64.ln()).ceil() as u32);
        assert!(run.ledger_error() == 0.0);
    }

    #[test]
    fn already_large_escapes_at_zero() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let delta = (-5.0f64).exp();
        let (part, binding) = setup(&map, delta);
        let eng = EscapeEngine::new(&map, &part, &binding, ThreePiecePolicy::Chop, Limits::default()).unwrap();
        let a = Dd::new(0.4);
        let run = eng.run(vec![OrbitInterval::new(a, a + Dd::new(delta))], None);
        assert_eq!(run.escaped.len(), 1);
        assert_eq!(run.escaped[0].time, 0);
        assert_eq!(run.escaped[0].a, a);
    }

    #[test]
    fn single_piece_is_an_inessential_return() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let delta = (-5.0f64).exp();
        let (part, binding) = setup(&map, delta);
        let mut eng = EscapeEngine::new(&map, &part, &binding, ThreePiecePolicy::Chop, Limits::default()).unwrap();
        eng.record_events = true;
        let (pi, po) = part.piece_offsets(12, 40);
        let w = po - pi;
        let iv = OrbitInterval::new(Dd::new(pi + 0.25 * w), Dd::new(pi + 0.75 * w));
        let run = eng.run(vec![iv], None);
        let first = &run.events[0];
        assert_eq!(first.event.kind, ReturnKind::Inessential);
        assert_eq!((first.event.r, first.event.j), (12, 40));
        assert_eq!(first.event.time, 0);
        assert_eq!(first.event.p, binding.get(1, 12).unwrap().p);
    }

    #[test]
    fn whole_ring_chops_into_r_squared_children() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let delta = (-5.0f64).exp();
        let (part, binding) = setup(&map, delta);
        let mut eng = EscapeEngine::new(&map, &part, &binding, ThreePiecePolicy::Chop, Limits::default()).unwrap();
        eng.record_events = true;
        let r = 8;
        let iv = OrbitInterval::new(Dd::new(crate::partition::ring(r)), Dd::new(crate::partition::ring(r - 1)));
        eng.limits = Limits { n_max: 0, ..Limits::default() };
        let run = eng.run(vec![iv], None);
        let at0: Vec<_> = run.events.iter().filter(|e| e.event.time == 0).collect();
        assert_eq!(at0.len(), (r * r) as usize);
        for (k, e) in at0.iter().enumerate() {
            assert_eq!(e.event.kind, ReturnKind::Essential);
            assert_eq!((e.event.r, e.event.j), (r, k as u32 + 1));
            let (pi, po) = part.piece_offsets(r, k as u32 + 1);
            assert_eq!((e.a, e.b), (pi, po));
        }
    }

    #[test]
    fn delta_star_tail_and_ledger() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let delta = (-5.0f64).exp();
        let (part, binding) = setup(&map, delta);
        let limits = Limits { n_max: 60, ..Limits::default() };
        let eng = EscapeEngine::new(&map, &part, &binding, ThreePiecePolicy::Chop, limits).unwrap();
        let start = OrbitInterval::new(Dd::ZERO, Dd::new(delta / 20.0));
        let run = eng.run(vec![start], None);
        for w in run.tail.windows(2) {
            assert!(w[1].active <= w[0].active);
        }
        for row in &run.tail {
            let err = (row.active + row.escaped + row.aborted - run.total).abs().to_f64();
            assert!(err <= 1e-12 * run.total.to_f64(), "n = {} err {err:e}", row.n);
        }
    }

    #[test]
    fn fit_recovers_exact_exponential() {
        let data: Vec<(f64, f64)> = (0..50).map(|n| (n as f64, 3.0 * (-0.2 * n as f64).exp())).collect();
        let fit = fit_log_linear(&data, 5, 40).unwrap();
        assert!((fit.rate() - 0.2).abs() < 1e-12);
        assert!((fit.prefactor() - 3.0).abs() < 1e-10);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(fit.points, 36);
    }
}
