//! Bands and labels of integer sequences, segments, boxes and the good-box
//! recursion on lattice configurations.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

use crate::lattice::{find_blocking_circuit, validate_circuit, BondConfig, Circuit, Rect};
use crate::unionfind::UnionFind;
use crate::{Error, Result, RngStream};

/// Bands closer than this to the window edge are boundary-tainted.
pub const TAINT_MARGIN: i64 = 12 * 64;

/// `2^(bits * e)`, saturating.
fn pow2_sat(bits: u64, e: u64) -> u64 {
    let s = bits.saturating_mul(e);
    if s >= 64 {
        u64::MAX
    } else {
        1u64 << s
    }
}

/// `64^(f - 1)`: pairs of bands with smaller label `f` merge iff `1 + D` is below this.
pub fn reach(f: u64) -> u64 {
    pow2_sat(6, f.saturating_sub(1))
}

/// Size bound `32^(f - 1)`.
pub fn size_bound(f: u64) -> u64 {
    pow2_sat(5, f.saturating_sub(1))
}

/// Label of the band formed by merging labels `fa`, `fb` across `1 + D = dist`.
pub fn merged_label(fa: u64, fb: u64, dist: u64) -> u64 {
    fa + fb - u64::from(dist.ilog2()) / 18
}

pub fn merge_condition(fa: u64, fb: u64, dist: u64) -> bool {
    dist < reach(fa.min(fb))
}

/// Preference order 0, -1, 1, -2, 2, ...
pub fn order_key(x: i64) -> u64 {
    2 * x.unsigned_abs() - u64::from(x < 0)
}

/// Values `N_i >= 1` on the window `[-L, L]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSeq {
    half_width: i64,
    values: Vec<u64>,
}

impl LabeledSeq {
    pub fn new(half_width: i64, values: Vec<u64>) -> Result<Self> {
        if half_width < 0 {
            return Err(Error::InvalidParameter("L must be >= 0".into()));
        }
        if values.len() as i64 != 2 * half_width + 1 {
            return Err(Error::InvalidParameter(format!(
                "expected {} values for window [-{half_width}, {half_width}], got {}",
                2 * half_width + 1,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|&v| v == 0) {
            return Err(Error::InvalidParameter(format!("N_{} = 0, values must be >= 1", k as i64 - half_width)));
        }
        Ok(Self { half_width, values })
    }

    pub fn from_fn(half_width: i64, f: impl Fn(i64) -> u64) -> Result<Self> {
        Self::new(half_width, (-half_width..=half_width).map(f).collect())
    }

    pub fn ones(half_width: i64) -> Self {
        Self::from_fn(half_width, |_| 1).expect("valid window")
    }

    /// i.i.d. `N_i = 1 + Geometric(1 - q)`, so `P(N_i >= l + 1) = q^l`.
    pub fn sample_geometric<R: Rng + ?Sized>(q: f64, half_width: i64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::InvalidParameter(format!("q must lie in [0, 1), got {q}")));
        }
        let g = Geometric::new(1.0 - q).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let n = (2 * half_width + 1).max(0) as usize;
        Self::new(half_width, (0..n).map(|_| 1 + g.sample(rng)).collect())
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn get(&self, i: i64) -> u64 {
        self.values[(i + self.half_width) as usize]
    }

    pub fn set(&mut self, i: i64, v: u64) {
        assert!(v >= 1, "values must be >= 1");
        self.values[(i + self.half_width) as usize] = v;
    }
}

/// Integer interval `[lo, hi]` sharing one label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Band {
    pub lo: i64,
    pub hi: i64,
    pub label: u64,
}

impl Band {
    pub fn contains(&self, i: i64) -> bool {
        self.lo <= i && i <= self.hi
    }

    pub fn len(&self) -> u64 {
        (self.hi - self.lo + 1) as u64
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `min |x|` over the band.
    fn dist0(&self) -> u64 {
        if self.contains(0) {
            0
        } else {
            self.lo.unsigned_abs().min(self.hi.unsigned_abs())
        }
    }

    /// Element with the smallest preference key.
    fn first_preferred(&self) -> i64 {
        if self.contains(0) {
            0
        } else if self.hi < 0 {
            self.hi
        } else {
            self.lo
        }
    }
}

/// One merge step `k -> k + 1`: `i` and `j` as selected, `d = D_k(i, j)`,
/// their `k` labels and the new label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Merge {
    pub k: usize,
    pub i: i64,
    pub j: i64,
    pub d: u64,
    pub f_i: u64,
    pub f_j: u64,
    pub label: u64,
}

#[derive(Clone, Debug)]
struct Node {
    band: Band,
    /// Bands of `i` and `j`, left one first; bands absorbed in between are not kept.
    children: Option<(usize, usize)>,
}

/// Final bands of a window after merging until no pair qualifies.
#[derive(Clone, Debug)]
pub struct BandState {
    half_width: i64,
    bands: Vec<Band>,
    node_of: Vec<usize>,
    nodes: Vec<Node>,
    merges: Vec<Merge>,
}

#[derive(Clone, Copy, Debug)]
struct Cand {
    key_i: u64,
    key_j: u64,
    i: i64,
    j: i64,
}

fn pair_candidate(a: &Band, b: &Band) -> Cand {
    let t = a.dist0().max(b.dist0()) as i64;
    let i = if a.contains(-t) || b.contains(-t) { -t } else { t };
    let (own, other) = if a.contains(i) { (a, b) } else { (b, a) };
    debug_assert!(own.contains(i));
    let j = other.first_preferred();
    Cand { key_i: order_key(i), key_j: order_key(j), i, j }
}

/// Qualifying pair with the smallest `(key_i, key_j)`, as `(x, p, cand)` with
/// `x` the band of the pair lying farther from 0. Bands are visited by their
/// distance `t` to 0; a pair whose farther band sits at `t` has
/// `key_i` in `{2t - 1, 2t}`, so the first distance with any qualifying pair
/// holds the minimum.
fn select_pair(bands: &[Band]) -> Option<(usize, usize, Cand)> {
    let n = bands.len();
    let z = bands.partition_point(|b| b.hi < 0);
    let (mut l, mut r) = (z as i64 - 1, z + 1);
    loop {
        let tl = (l >= 0).then(|| bands[l as usize].dist0());
        let tr = (r < n).then(|| bands[r].dist0());
        let t = match (tl, tr) {
            (None, None) => return None,
            (a, b) => a.unwrap_or(u64::MAX).min(b.unwrap_or(u64::MAX)),
        };
        let mut group = Vec::with_capacity(2);
        if tl == Some(t) {
            group.push(l as usize);
            l -= 1;
        }
        if tr == Some(t) {
            group.push(r);
            r += 1;
        }
        let (lo_in, hi_in) = ((l + 1) as usize, r - 1);
        let mut best: Option<(usize, usize, Cand)> = None;
        for &x in &group {
            let f = bands[x].label;
            let w = reach(f).min(n as u64) as usize;
            if w <= 1 {
                continue;
            }
            for p in x.saturating_sub(w - 1).max(lo_in)..=(x + w - 1).min(hi_in) {
                if p != x && merge_condition(f, bands[p].label, p.abs_diff(x) as u64) {
                    let c = pair_candidate(&bands[x], &bands[p]);
                    if best.is_none_or(|b| (c.key_i, c.key_j) < (b.2.key_i, b.2.key_j)) {
                        best = Some((x, p, c));
                    }
                }
            }
        }
        if best.is_some() {
            return best;
        }
    }
}

/// Runs the merge procedure on the window until no pair of bands qualifies.
pub fn compute_bands(seq: &LabeledSeq) -> BandState {
    let l = seq.half_width;
    let mut nodes: Vec<Node> =
        (-l..=l).map(|i| Node { band: Band { lo: i, hi: i, label: seq.get(i) }, children: None }).collect();
    let mut bands: Vec<Band> = nodes.iter().map(|n| n.band).collect();
    let mut node_of: Vec<usize> = (0..bands.len()).collect();
    let mut merges = Vec::new();
    while let Some((x, p, cand)) = select_pair(&bands) {
        let (a, b) = (x.min(p), x.max(p));
        let dist = (b - a) as u64;
        let (fa, fb) = (bands[a].label, bands[b].label);
        let label = merged_label(fa, fb, dist);
        let merged = Band { lo: bands[a].lo, hi: bands[b].hi, label };
        let f_of = |x: i64| if bands[a].contains(x) { fa } else { fb };
        merges.push(Merge {
            k: merges.len() + 1,
            i: cand.i,
            j: cand.j,
            d: dist - 1,
            f_i: f_of(cand.i),
            f_j: f_of(cand.j),
            label,
        });
        nodes.push(Node { band: merged, children: Some((node_of[a], node_of[b])) });
        bands.splice(a..=b, [merged]);
        node_of.splice(a..=b, [nodes.len() - 1]);
    }
    BandState { half_width: l, bands, node_of, nodes, merges }
}

impl BandState {
    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Level reached: one more than the number of merges.
    pub fn k(&self) -> usize {
        self.merges.len() + 1
    }

    fn position(&self, i: i64) -> Option<usize> {
        let p = self.bands.partition_point(|b| b.hi < i);
        (p < self.bands.len() && self.bands[p].contains(i)).then_some(p)
    }

    fn zero(&self) -> usize {
        self.position(0).expect("window contains 0")
    }

    pub fn band_of(&self, i: i64) -> Option<&Band> {
        self.position(i).map(|p| &self.bands[p])
    }

    pub fn label_of(&self, i: i64) -> Option<u64> {
        self.band_of(i).map(|b| b.label)
    }

    /// Enumeration index of the band containing `i`.
    pub fn m_of(&self, i: i64) -> Option<i64> {
        self.position(i).map(|p| p as i64 - self.zero() as i64)
    }

    pub fn band_m(&self, m: i64) -> Option<&Band> {
        let p = self.zero() as i64 + m;
        (p >= 0).then(|| self.bands.get(p as usize)).flatten()
    }

    /// Smallest and largest enumeration index in the window.
    pub fn m_range(&self) -> (i64, i64) {
        let z = self.zero() as i64;
        (-z, self.bands.len() as i64 - 1 - z)
    }

    pub fn is_tainted(&self, b: &Band) -> bool {
        b.lo + self.half_width < TAINT_MARGIN || self.half_width - b.hi < TAINT_MARGIN
    }

    pub fn max_label(&self) -> u64 {
        self.bands.iter().map(|b| b.label).max().unwrap_or(1)
    }

    /// Replays the merge log from singletons, checking every recorded value
    /// and the merge condition; returns one message per discrepancy.
    pub fn revalidate(&self, seq: &LabeledSeq) -> Vec<String> {
        let mut errs = Vec::new();
        if seq.half_width != self.half_width {
            errs.push("window mismatch".into());
            return errs;
        }
        let l = seq.half_width;
        let mut bands: Vec<Band> = (-l..=l).map(|i| Band { lo: i, hi: i, label: seq.get(i) }).collect();
        for m in &self.merges {
            let find = |x: i64| bands.iter().position(|b| b.contains(x));
            let (Some(pi), Some(pj)) = (find(m.i), find(m.j)) else {
                errs.push(format!("merge {}: index outside window", m.k));
                continue;
            };
            if pi == pj {
                errs.push(format!("merge {}: i and j share a band", m.k));
                continue;
            }
            if m.j.unsigned_abs() > m.i.unsigned_abs() {
                errs.push(format!("merge {}: |j| > |i|", m.k));
            }
            let (a, b) = (pi.min(pj), pi.max(pj));
            let dist = (b - a) as u64;
            if m.d != dist - 1 {
                errs.push(format!("merge {}: recorded D = {}, actual {}", m.k, m.d, dist - 1));
            }
            if (m.f_i, m.f_j) != (bands[pi].label, bands[pj].label) {
                errs.push(format!("merge {}: recorded labels differ", m.k));
            }
            if !merge_condition(m.f_i, m.f_j, m.d + 1) {
                errs.push(format!("merge {}: condition fails", m.k));
            }
            if m.label != merged_label(m.f_i, m.f_j, m.d + 1) {
                errs.push(format!("merge {}: wrong new label", m.k));
            }
            if m.label < m.f_i.max(m.f_j) + 2 {
                errs.push(format!("merge {}: label jump below 2", m.k));
            }
            let merged = Band { lo: bands[a].lo, hi: bands[b].hi, label: m.label };
            bands.splice(a..=b, [merged]);
        }
        if bands != self.bands {
            errs.push("replayed partition differs from the final bands".into());
        }
        errs
    }
}

/// Bands indexed by enumeration: `B_0` contains 0, `B_{m+1}` follows `B_m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandIndex {
    pub first_m: i64,
    pub bands: Vec<Band>,
}

impl BandIndex {
    pub fn get(&self, m: i64) -> Option<&Band> {
        let k = m - self.first_m;
        (k >= 0).then(|| self.bands.get(k as usize)).flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &Band)> + '_ {
        self.bands.iter().enumerate().map(move |(k, b)| (self.first_m + k as i64, b))
    }
}

pub fn enumerate_bands(state: &BandState) -> BandIndex {
    BandIndex { first_m: state.m_range().0, bands: state.bands.clone() }
}

/// Generators of a band, its maximal generators and the chosen (smallest) one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generators {
    pub all: Vec<i64>,
    pub maximal: Vec<i64>,
    pub chosen: i64,
}

pub fn find_maximal_generators(state: &BandState, m: i64) -> Result<Generators> {
    let b = *state.band_m(m).ok_or_else(|| Error::InvalidParameter(format!("no band with index {m} in the window")))?;
    if b.lo == -state.half_width || b.hi == state.half_width {
        return Err(Error::HistoryIncomplete { lo: b.lo, hi: b.hi });
    }
    let root = state.node_of[(state.zero() as i64 + m) as usize];
    let leaves = |maximal_only: bool| {
        let mut out = Vec::new();
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            match state.nodes[n].children {
                None => out.push(state.nodes[n].band.lo),
                Some((a, c)) => {
                    let (fa, fc) = (state.nodes[a].band.label, state.nodes[c].band.label);
                    if !maximal_only || fa >= fc {
                        stack.push(a);
                    }
                    if !maximal_only || fc >= fa {
                        stack.push(c);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };
    let all = leaves(false);
    let maximal = leaves(true);
    let chosen = maximal[0];
    Ok(Generators { all, maximal, chosen })
}

/// Increments `N` at the chosen maximal generator of band `m`, after checking
/// that every in-window band of larger label is at least `64^l` indices away.
pub fn raise_maximal_generator(seq: &LabeledSeq, state: &BandState, m: i64) -> Result<LabeledSeq> {
    let b = *state.band_m(m).ok_or_else(|| Error::InvalidParameter(format!("no band with index {m} in the window")))?;
    let need = pow2_sat(6, b.label);
    let (m0, m1) = state.m_range();
    if let Some(close) = (m0..=m1).find(|&k| state.band_m(k).unwrap().label > b.label && (k.abs_diff(m)) < need) {
        return Err(Error::PreconditionUnmet(format!(
            "band {close} has a larger label than band {m} and lies closer than 64^{}",
            b.label
        )));
    }
    let g = find_maximal_generators(state, m)?.chosen;
    let mut out = seq.clone();
    out.set(g, seq.get(g) + 1);
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SizeSpacingReport {
    pub bands_checked: usize,
    pub size_violations: Vec<Band>,
    /// `(m, m', l)` with both labels `>= l` and `|m - m'| < 64^(l-1)`.
    pub spacing_violations: Vec<(i64, i64, u64)>,
}

impl SizeSpacingReport {
    pub fn is_clean(&self) -> bool {
        self.size_violations.is_empty() && self.spacing_violations.is_empty()
    }
}

/// Checks `|band| <= 32^(l-1)` and the spacing of bands with labels `>= l`
/// over every pair with no band of at least their smaller label in between
/// (any violating pair implies one of those).
pub fn check_size_spacing(state: &BandState) -> SizeSpacingReport {
    let (m0, _) = state.m_range();
    let mut rep = SizeSpacingReport { bands_checked: state.bands.len(), ..Default::default() };
    for b in &state.bands {
        if b.len() > size_bound(b.label) {
            rep.size_violations.push(*b);
        }
    }
    let mut stack: Vec<usize> = Vec::new();
    let check = |a: usize, c: usize, rep: &mut SizeSpacingReport| {
        let l = state.bands[a].label.min(state.bands[c].label);
        if ((c - a) as u64) < reach(l) {
            rep.spacing_violations.push((m0 + a as i64, m0 + c as i64, l));
        }
    };
    for c in 0..state.bands.len() {
        let f = state.bands[c].label;
        while let Some(&a) = stack.last() {
            if state.bands[a].label > f {
                break;
            }
            check(a, c, &mut rep);
            stack.pop();
        }
        if let Some(&a) = stack.last() {
            check(a, c, &mut rep);
        }
        stack.push(c);
    }
    rep
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegularityViolation {
    pub level: u64,
    pub m1: i64,
    pub m2: i64,
    pub distance: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegularityReport {
    pub violations: Vec<RegularityViolation>,
    pub pairs_checked: usize,
    /// Neighbour relations that cross the window edge.
    pub indeterminate: usize,
}

impl RegularityReport {
    pub fn is_regular(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Neighbouring bands with labels `>= l` must be `[64^(l-1), 12 * 64^(l-1)]`
/// indices apart, for every `l` up to the largest label in the window.
pub fn check_regularity(state: &BandState) -> RegularityReport {
    let (m0, _) = state.m_range();
    let mut rep = RegularityReport::default();
    for l in 1..=state.max_label() {
        let ms: Vec<i64> =
            (0..state.bands.len()).filter(|&p| state.bands[p].label >= l).map(|p| m0 + p as i64).collect();
        rep.indeterminate += if ms.is_empty() { 1 } else { 2 };
        let (lo, hi) = (reach(l), reach(l).saturating_mul(12));
        for w in ms.windows(2) {
            rep.pairs_checked += 1;
            let d = w[1].abs_diff(w[0]);
            if d < lo || d > hi {
                rep.violations.push(RegularityViolation { level: l, m1: w[0], m2: w[1], distance: d });
            }
        }
    }
    rep
}

/// `[i2 + 1, i3]` between neighbouring bands `[i1, i2]`, `[i3, i4]` of labels `>= level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Segment {
    pub level: u64,
    pub lo: i64,
    pub hi: i64,
    pub left_m: i64,
    pub right_m: i64,
}

impl Segment {
    pub fn contains(&self, i: i64) -> bool {
        self.lo <= i && i <= self.hi
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn find_segments(state: &BandState, level: u64) -> Result<Vec<Segment>> {
    let (m0, _) = state.m_range();
    let delim: Vec<usize> = (0..state.bands.len()).filter(|&p| state.bands[p].label >= level).collect();
    if delim.len() < 2 {
        return Err(Error::WindowTooSmall(format!("fewer than two bands of label >= {level} in the window")));
    }
    Ok(delim
        .windows(2)
        .map(|w| Segment {
            level,
            lo: state.bands[w[0]].hi + 1,
            hi: state.bands[w[1]].lo,
            left_m: m0 + w[0] as i64,
            right_m: m0 + w[1] as i64,
        })
        .collect())
}

/// Whether `i` lies on the inside of its `level` segment: its band has label
/// `< level - 1` and the segment holds two bands of label exactly `level - 1`
/// on each side of it.
pub fn inside_segment(state: &BandState, i: i64, level: u64) -> Result<bool> {
    if level < 2 {
        return Err(Error::InvalidParameter("segment level must be >= 2".into()));
    }
    let segs = find_segments(state, level)?;
    inside_with(state, &segs, i, level - 1)
}

fn inside_with(state: &BandState, segs: &[Segment], i: i64, l: u64) -> Result<bool> {
    if i < segs[0].lo || i > segs[segs.len() - 1].hi {
        return Err(Error::WindowTooSmall(format!("{i} is not between two delimiting bands in the window")));
    }
    let Some(seg) = segs.iter().find(|s| s.contains(i)) else {
        return Ok(false);
    };
    let m = state.m_of(i).expect("in window");
    if state.band_of(i).unwrap().label >= l {
        return Ok(false);
    }
    let count = |range: std::ops::RangeInclusive<i64>| {
        range
            .filter(|&k| {
                let b = state.band_m(k).unwrap();
                b.label == l && b.lo >= seg.lo && b.hi <= seg.hi
            })
            .count()
    };
    Ok(count(seg.left_m..=m - 1) >= 2 && count(m + 1..=seg.right_m) >= 2)
}

/// Product of a vertical (column) and a horizontal (row) segment of one level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NBox {
    pub level: u64,
    pub x: Segment,
    pub y: Segment,
}

impl NBox {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x.lo, self.x.hi, self.y.lo, self.y.hi)
    }

    /// Nearest-neighbour edges with both endpoints in the box.
    pub fn edges(&self) -> impl Iterator<Item = ((i64, i64), (i64, i64))> + '_ {
        let r = self.rect();
        let h = (r.y0..=r.y1).flat_map(move |y| (r.x0..r.x1).map(move |x| ((x, y), (x + 1, y))));
        let v = (r.y0..r.y1).flat_map(move |y| (r.x0..=r.x1).map(move |x| ((x, y), (x, y + 1))));
        h.chain(v)
    }

    pub fn n_edges(&self) -> usize {
        let (w, h) = (self.x.len(), self.y.len());
        (w - 1) * h + w * (h - 1)
    }
}

/// All `n` boxes of the window, rows of boxes bottom to top.
pub fn build_n_boxes(xs: &BandState, ys: &BandState, n: u64) -> Result<Vec<NBox>> {
    let sx = find_segments(xs, n)?;
    let sy = find_segments(ys, n)?;
    Ok(sy.iter().flat_map(|&y| sx.iter().map(move |&x| NBox { level: n, x, y })).collect())
}

/// Both coordinates of `v` lie on the inside of the segments of `b`.
pub fn inside_box(xs: &BandState, ys: &BandState, b: &NBox, v: (i64, i64)) -> Result<bool> {
    if b.level < 2 || !b.rect().contains(v.0, v.1) {
        return Ok(false);
    }
    Ok(inside_with(xs, &[b.x], v.0, b.level - 1)? && inside_with(ys, &[b.y], v.1, b.level - 1)?)
}

/// Open clusters of the subgraph induced on a rectangle, stored as maximal
/// horizontal runs joined by open vertical bonds.
#[derive(Clone, Debug)]
pub struct RunClusters {
    rect: Rect,
    row_start: Vec<usize>,
    runs: Vec<(i64, i64)>,
    comp: Vec<u32>,
    n_comp: usize,
}

impl RunClusters {
    pub fn build(bonds: &BondConfig, rect: Rect) -> Self {
        let mut row_start = Vec::with_capacity(rect.height() + 1);
        let mut runs = Vec::new();
        for y in rect.y0..=rect.y1 {
            row_start.push(runs.len());
            let mut x = rect.x0;
            loop {
                match bonds.h.first_closed(y, x, rect.x1 - 1) {
                    Some(e) => {
                        runs.push((x, e));
                        x = e + 1;
                    }
                    None => {
                        runs.push((x, rect.x1));
                        break;
                    }
                }
            }
        }
        row_start.push(runs.len());
        let mut uf = UnionFind::new(runs.len());
        for r in 1..rect.height() {
            let y = rect.y0 + r as i64;
            let (mut a, a_end) = (row_start[r - 1], row_start[r]);
            let (mut b, b_end) = (row_start[r], row_start[r + 1]);
            while a < a_end && b < b_end {
                let lo = runs[a].0.max(runs[b].0);
                let hi = runs[a].1.min(runs[b].1);
                if lo <= hi && bonds.v.any_open(y - 1, lo, hi) {
                    uf.union(a, b);
                }
                if runs[a].1 < runs[b].1 {
                    a += 1;
                } else {
                    b += 1;
                }
            }
        }
        let mut label = vec![u32::MAX; runs.len()];
        let mut comp = Vec::with_capacity(runs.len());
        let mut n_comp = 0;
        for k in 0..runs.len() {
            let r = uf.find(k);
            if label[r] == u32::MAX {
                label[r] = n_comp as u32;
                n_comp += 1;
            }
            comp.push(label[r]);
        }
        Self { rect, row_start, runs, comp, n_comp }
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn n_components(&self) -> usize {
        self.n_comp
    }

    fn row(&self, y: i64) -> std::ops::Range<usize> {
        if y < self.rect.y0 || y > self.rect.y1 {
            return 0..0;
        }
        let r = (y - self.rect.y0) as usize;
        self.row_start[r]..self.row_start[r + 1]
    }

    pub fn component_at(&self, x: i64, y: i64) -> Option<u32> {
        let rg = self.row(y);
        let runs = &self.runs[rg.clone()];
        let k = runs.partition_point(|r| r.1 < x);
        (k < runs.len() && runs[k].0 <= x).then(|| self.comp[rg.start + k])
    }

    /// Runs `(y, x_lo, x_hi)` of one component.
    pub fn runs_of(&self, c: u32) -> impl Iterator<Item = (i64, i64, i64)> + '_ {
        (0..self.rect.height()).flat_map(move |r| {
            let y = self.rect.y0 + r as i64;
            (self.row_start[r]..self.row_start[r + 1])
                .filter(move |&k| self.comp[k] == c)
                .map(move |k| (y, self.runs[k].0, self.runs[k].1))
        })
    }

    /// Bitmask per component: 1 left, 2 right, 4 bottom, 8 top face.
    fn faces(&self) -> Vec<u8> {
        let mut f = vec![0u8; self.n_comp];
        for r in 0..self.rect.height() {
            let (s, e) = (self.row_start[r], self.row_start[r + 1]);
            f[self.comp[s] as usize] |= 1;
            f[self.comp[e - 1] as usize] |= 2;
        }
        for k in self.row(self.rect.y0) {
            f[self.comp[k] as usize] |= 4;
        }
        for k in self.row(self.rect.y1) {
            f[self.comp[k] as usize] |= 8;
        }
        f
    }

    /// The cluster with vertices on all four faces, if any.
    pub fn crossing(&self) -> Option<u32> {
        self.faces().iter().position(|&m| m == 15).map(|c| c as u32)
    }

    /// Components joining the two faces across `horizontal` (bottom/top) or
    /// vertical (left/right) extent.
    pub fn spanning(&self, bottom_top: bool) -> Vec<u32> {
        let want = if bottom_top { 12 } else { 3 };
        self.faces().iter().enumerate().filter(|(_, &m)| m & want == want).map(|(c, _)| c as u32).collect()
    }

    /// Whether component `c` shares a vertex with component `o` of `other`.
    pub fn meets(&self, c: u32, other: &RunClusters, o: u32) -> bool {
        let y0 = self.rect.y0.max(other.rect.y0);
        let y1 = self.rect.y1.min(other.rect.y1);
        (y0..=y1).any(|y| {
            let a: Vec<_> = self.row(y).filter(|&k| self.comp[k] == c).map(|k| self.runs[k]).collect();
            let b: Vec<_> = other.row(y).filter(|&k| other.comp[k] == o).map(|k| other.runs[k]).collect();
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                if a[i].0.max(b[j].0) <= a[i].1.min(b[j].1) {
                    return true;
                }
                if a[i].1 < b[j].1 {
                    i += 1;
                } else {
                    j += 1;
                }
            }
            false
        })
    }

    /// Opens in `target` every bond of `bonds` joining two vertices of component `c`.
    fn copy_component(&self, c: u32, bonds: &BondConfig, target: &mut BondConfig) {
        let mine = |r: usize| -> Vec<(i64, i64)> {
            (self.row_start[r]..self.row_start[r + 1]).filter(|&k| self.comp[k] == c).map(|k| self.runs[k]).collect()
        };
        let mut below = mine(0);
        for r in 0..self.rect.height() {
            let y = self.rect.y0 + r as i64;
            for &(a, b) in &below {
                for x in a..b {
                    target.h.set(x, y, true);
                }
            }
            if r + 1 == self.rect.height() {
                break;
            }
            let above = mine(r + 1);
            let (mut i, mut j) = (0, 0);
            while i < below.len() && j < above.len() {
                for x in below[i].0.max(above[j].0)..=below[i].1.min(above[j].1) {
                    if bonds.v_open(x, y) {
                        target.v.set(x, y, true);
                    }
                }
                if below[i].1 < above[j].1 {
                    i += 1;
                } else {
                    j += 1;
                }
            }
            below = above;
        }
    }

    /// Runs `(x_lo, x_hi, component)` of row `y`.
    pub fn row_runs(&self, y: i64) -> impl Iterator<Item = (i64, i64, u32)> + '_ {
        self.row(y).map(move |k| (self.runs[k].0, self.runs[k].1, self.comp[k]))
    }
}

/// Open crossing cluster of a box.
#[derive(Clone, Debug)]
pub struct Crossing {
    pub clusters: RunClusters,
    pub comp: u32,
}

impl Crossing {
    pub fn of(bonds: &BondConfig, rect: Rect) -> Option<Self> {
        let clusters = RunClusters::build(bonds, rect);
        clusters.crossing().map(|comp| Self { clusters, comp })
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        self.clusters.component_at(x, y) == Some(self.comp)
    }

    pub fn size(&self) -> usize {
        self.clusters.runs_of(self.comp).map(|(_, a, b)| (b - a + 1) as usize).sum()
    }
}

/// Product of a segment and the band between two neighbouring boxes,
/// including the facing boundary line of each box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Strip {
    pub rect: Rect,
    /// Stacked boxes (crossing runs bottom to top) rather than side-by-side ones.
    pub between_rows: bool,
}

/// Whether a strip crossing meets the crossing clusters of both boxes.
fn strip_links(bonds: &BondConfig, strip: &Strip, a: &Crossing, b: &Crossing) -> Option<(RunClusters, u32)> {
    let rc = RunClusters::build(bonds, strip.rect);
    let hit = rc
        .spanning(strip.between_rows)
        .into_iter()
        .find(|&c| rc.meets(c, &a.clusters, a.comp) && rc.meets(c, &b.clusters, b.comp));
    hit.map(|c| (rc, c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Failure {
    /// Child slot of a bad sub-box.
    BadBox(usize),
    /// Neighbouring good sub-boxes whose strip has no linking crossing.
    MissingLink(usize, usize),
}

#[derive(Clone, Debug)]
pub struct BoxNode {
    pub nbox: NBox,
    pub good: bool,
    pub crossing: Option<Crossing>,
    /// Sub-box segments along each axis (empty at level 1).
    pub sub_x: Vec<Segment>,
    pub sub_y: Vec<Segment>,
    /// Report indices of the sub-boxes, row-major; empty at or below the base level.
    pub children: Vec<usize>,
    pub a1: usize,
    pub a2: usize,
    pub failures: Vec<Failure>,
    /// At least 2 x 2 sub-boxes here and in every classified descendant.
    pub structural: bool,
}

impl BoxNode {
    pub fn grid(&self) -> (usize, usize) {
        (self.sub_x.len(), self.sub_y.len())
    }
}

#[derive(Clone, Debug)]
pub struct GoodBoxReport {
    pub base_n0: u64,
    pub level: u64,
    pub nodes: Vec<BoxNode>,
    pub tops: Vec<usize>,
    pub x_state: BandState,
    pub y_state: BandState,
    seg_x: Vec<Vec<Segment>>,
    seg_y: Vec<Vec<Segment>>,
}

fn within(segs: &[Segment], s: &Segment) -> Vec<Segment> {
    let a = segs.partition_point(|t| t.lo < s.lo);
    segs[a..].iter().take_while(|t| t.hi <= s.hi).copied().collect()
}

fn all_open_in(bonds: &BondConfig, r: &Rect) -> bool {
    (r.y0..=r.y1).all(|y| bonds.h.all_open(y, r.x0, r.x1 - 1)) && (r.y0..r.y1).all(|y| bonds.v.all_open(y, r.x0, r.x1))
}

struct Classifier<'a> {
    bonds: &'a BondConfig,
    base_n0: u64,
    seg_x: &'a [Vec<Segment>],
    seg_y: &'a [Vec<Segment>],
    nodes: Vec<BoxNode>,
}

impl Classifier<'_> {
    fn classify(&mut self, nbox: NBox) -> usize {
        let n = nbox.level;
        let rect = nbox.rect();
        let (sub_x, sub_y) = if n >= 2 {
            (within(&self.seg_x[n as usize - 1], &nbox.x), within(&self.seg_y[n as usize - 1], &nbox.y))
        } else {
            (Vec::new(), Vec::new())
        };
        let mut node = BoxNode {
            nbox,
            good: false,
            crossing: None,
            sub_x,
            sub_y,
            children: Vec::new(),
            a1: 0,
            a2: 0,
            failures: Vec::new(),
            structural: true,
        };
        if n <= self.base_n0 {
            node.good = all_open_in(self.bonds, &rect);
        } else {
            let (nc, nr) = node.grid();
            for &y in &node.sub_y {
                for &x in &node.sub_x {
                    let id = self.classify(NBox { level: n - 1, x, y });
                    node.children.push(id);
                }
            }
            node.structural = nc >= 2 && nr >= 2 && node.children.iter().all(|&c| self.nodes[c].structural);
            for (s, &c) in node.children.iter().enumerate() {
                if !self.nodes[c].good {
                    node.failures.push(Failure::BadBox(s));
                }
            }
            node.a1 = node.failures.len();
            let mut pairs = Vec::new();
            for r in 0..nr {
                for c in 0..nc {
                    if c + 1 < nc {
                        pairs.push((r * nc + c, r * nc + c + 1));
                    }
                    if r + 1 < nr {
                        pairs.push((r * nc + c, (r + 1) * nc + c));
                    }
                }
            }
            for (s, t) in pairs {
                let (a, b) = (&self.nodes[node.children[s]], &self.nodes[node.children[t]]);
                if !(a.good && b.good) {
                    continue;
                }
                let linked = match (&a.crossing, &b.crossing) {
                    (Some(ca), Some(cb)) => {
                        let strip = strip_between(&a.nbox, &b.nbox);
                        strip_links(self.bonds, &strip, ca, cb).is_some()
                    }
                    _ => false,
                };
                if !linked {
                    node.failures.push(Failure::MissingLink(s, t));
                    node.a2 += 1;
                }
            }
            node.good = node.a1 + node.a2 <= 1;
        }
        if node.good {
            node.crossing = Crossing::of(self.bonds, rect);
        }
        self.nodes.push(node);
        self.nodes.len() - 1
    }
}

/// Strip between two neighbouring boxes of one level (`b` right of or above `a`).
pub fn strip_between(a: &NBox, b: &NBox) -> Strip {
    if a.y == b.y {
        Strip { rect: Rect::new(a.x.hi, b.x.lo, a.y.lo, a.y.hi), between_rows: false }
    } else {
        Strip { rect: Rect::new(a.x.lo, a.x.hi, a.y.hi, b.y.lo), between_rows: true }
    }
}

/// Classifies every `n` box of the window; boxes of level `<= base_n0` are
/// good iff all their edges are open.
pub fn classify_good_boxes(
    xs: &BandState,
    ys: &BandState,
    bonds: &BondConfig,
    n: u64,
    base_n0: u64,
) -> Result<GoodBoxReport> {
    if n < 1 || base_n0 < 1 {
        return Err(Error::InvalidParameter("box level and base level must be >= 1".into()));
    }
    let mut seg_x = vec![Vec::new()];
    let mut seg_y = vec![Vec::new()];
    for l in 1..=n {
        seg_x.push(find_segments(xs, l)?);
        seg_y.push(find_segments(ys, l)?);
    }
    let tops: Vec<NBox> = build_n_boxes(xs, ys, n)?;
    let mut cl = Classifier { bonds, base_n0, seg_x: &seg_x, seg_y: &seg_y, nodes: Vec::new() };
    let top_ids = tops.into_iter().map(|b| cl.classify(b)).collect();
    let nodes = cl.nodes;
    Ok(GoodBoxReport {
        base_n0,
        level: n,
        nodes,
        tops: top_ids,
        x_state: xs.clone(),
        y_state: ys.clone(),
        seg_x,
        seg_y,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NestedCheck {
    /// Vertices lying in good boxes at every level up to the top.
    pub checked: usize,
    pub violations: usize,
    pub examples: Vec<(i64, i64)>,
}

impl GoodBoxReport {
    /// Coordinates lying in some segment at every level `1..=n`.
    fn covered(segs: &[Vec<Segment>], r: (i64, i64), n: u64) -> Vec<bool> {
        let (a, b) = r;
        let mut cov = vec![true; (b - a + 1) as usize];
        for level in segs.iter().take(n as usize + 1).skip(1) {
            let mut mark = vec![false; cov.len()];
            for s in level.iter().filter(|s| s.hi >= a && s.lo <= b) {
                for x in s.lo.max(a)..=s.hi.min(b) {
                    mark[(x - a) as usize] = true;
                }
            }
            for (c, m) in cov.iter_mut().zip(mark) {
                *c &= m;
            }
        }
        cov
    }

    /// For every good top box whose sub-structure is at least 2 x 2 at each
    /// level: vertices in good boxes at all levels must lie in its crossing cluster.
    pub fn nested_membership(&self) -> NestedCheck {
        let mut out = NestedCheck::default();
        for &t in &self.tops {
            let top = &self.nodes[t];
            if !(top.good && top.structural) {
                continue;
            }
            let r = top.nbox.rect();
            let cx = Self::covered(&self.seg_x, (r.x0, r.x1), self.level);
            let cy = Self::covered(&self.seg_y, (r.y0, r.y1), self.level);
            let mut bases = Vec::new();
            let mut stack = vec![t];
            while let Some(k) = stack.pop() {
                let nd = &self.nodes[k];
                if !nd.good {
                    continue;
                }
                if nd.children.is_empty() {
                    bases.push(nd.nbox.rect());
                } else {
                    stack.extend(&nd.children);
                }
            }
            let mut px = vec![0usize; cx.len() + 1];
            for (k, &c) in cx.iter().enumerate() {
                px[k + 1] = px[k] + usize::from(c);
            }
            let count = |a: i64, b: i64| px[(b - r.x0 + 1) as usize] - px[(a - r.x0) as usize];
            for b in bases {
                for y in b.y0..=b.y1 {
                    if !cy[(y - r.y0) as usize] {
                        continue;
                    }
                    out.checked += count(b.x0, b.x1);
                    let Some(cr) = &top.crossing else {
                        out.violations += count(b.x0, b.x1);
                        continue;
                    };
                    for (a, e, c) in cr.clusters.row_runs(y) {
                        let (a, e) = (a.max(b.x0), e.min(b.x1));
                        if a > e || c == cr.comp {
                            continue;
                        }
                        let missed = count(a, e);
                        out.violations += missed;
                        if missed > 0 && out.examples.len() < 16 {
                            let x = (a..=e).find(|&x| cx[(x - r.x0) as usize]).unwrap();
                            out.examples.push((x, y));
                        }
                    }
                }
            }
        }
        out
    }

    /// Top box containing `v`.
    pub fn top_containing(&self, v: (i64, i64)) -> Option<usize> {
        self.tops.iter().copied().find(|&t| self.nodes[t].nbox.rect().contains(v.0, v.1))
    }
}

fn ring_slots(nc: usize, nr: usize, ring: usize) -> Vec<(usize, usize)> {
    let (c0, r0) = (ring, ring);
    if nc < 2 * ring + 2 || nr < 2 * ring + 2 {
        return Vec::new();
    }
    let (c1, r1) = (nc - 1 - ring, nr - 1 - ring);
    let mut out = Vec::new();
    for c in c0..=c1 {
        out.push((c, r0));
    }
    for r in r0 + 1..=r1 {
        out.push((c1, r));
    }
    for c in (c0..c1).rev() {
        out.push((c, r1));
    }
    for r in (r0 + 1..r1).rev() {
        out.push((c0, r));
    }
    out
}

/// Open circuit inside the good top box containing `targets`, built from
/// the crossing clusters of the outermost ring of sub-boxes (or the second
/// ring if the first contains the box's only failure) and the strip
/// crossings linking them. Checked against `bonds` before it is returned.
pub fn extract_circuit(report: &GoodBoxReport, bonds: &BondConfig, targets: &[(i64, i64)]) -> Result<Circuit> {
    let first = *targets.first().ok_or_else(|| Error::EmptyInput("target vertex set is empty".into()))?;
    let t = report.top_containing(first).ok_or(Error::NotInside)?;
    let node = &report.nodes[t];
    if !node.good || node.nbox.level < 2 {
        return Err(Error::NotInside);
    }
    for &v in targets {
        if !inside_box(&report.x_state, &report.y_state, &node.nbox, v)? {
            return Err(Error::NotInside);
        }
    }
    let (nc, nr) = node.grid();
    let sub = |c: usize, r: usize| NBox { level: node.nbox.level - 1, x: node.sub_x[c], y: node.sub_y[r] };
    let slot_good = |s: usize| node.children.is_empty() || report.nodes[node.children[s]].good;
    let failed_in = |cycle: &[(usize, usize)]| {
        let ids: Vec<usize> = cycle.iter().map(|&(c, r)| r * nc + c).collect();
        node.failures.iter().any(|f| match *f {
            Failure::BadBox(s) => ids.contains(&s),
            Failure::MissingLink(a, b) => ids.contains(&a) && ids.contains(&b),
        })
    };
    let cycle = [0, 1]
        .into_iter()
        .map(|ring| ring_slots(nc, nr, ring))
        .find(|cyc| !cyc.is_empty() && !failed_in(cyc))
        .ok_or(Error::NoCircuit)?;
    let mut restricted = BondConfig::new(bonds.kind, node.nbox.rect(), false);
    let mut crossings = Vec::with_capacity(cycle.len());
    for &(c, r) in &cycle {
        if !slot_good(r * nc + c) {
            return Err(Error::NoCircuit);
        }
        let cr = Crossing::of(bonds, sub(c, r).rect()).ok_or(Error::NoCircuit)?;
        cr.clusters.copy_component(cr.comp, bonds, &mut restricted);
        crossings.push(cr);
    }
    for k in 0..cycle.len() {
        let l = (k + 1) % cycle.len();
        let (a, b) = if (cycle[k].1, cycle[k].0) < (cycle[l].1, cycle[l].0) { (k, l) } else { (l, k) };
        let strip = strip_between(&sub(cycle[a].0, cycle[a].1), &sub(cycle[b].0, cycle[b].1));
        let (rc, comp) = strip_links(bonds, &strip, &crossings[a], &crossings[b]).ok_or(Error::NoCircuit)?;
        rc.copy_component(comp, bonds, &mut restricted);
    }
    let circ = find_blocking_circuit(&restricted, targets)?.ok_or(Error::NoCircuit)?;
    validate_circuit(bonds, &circ, targets).map_err(|_| Error::NoCircuit)?;
    Ok(circ)
}

/// Event that all bands with `|m| <= 12 * 64^l` on both axes have labels `< l`.
pub fn check_a_l(xs: &BandState, ys: &BandState, l: u64) -> Result<bool> {
    let span = pow2_sat(6, l).saturating_mul(12);
    let mut ok = true;
    for s in [xs, ys] {
        let (m0, m1) = s.m_range();
        if m0.unsigned_abs() < span || (m1 as u64) < span {
            return Err(Error::WindowTooSmall(format!("band indices must cover +-{span}")));
        }
        let span = span as i64;
        ok &= (-span..=span).all(|m| s.band_m(m).unwrap().label < l);
    }
    Ok(ok)
}

/// Empirical `P(0 lies in a band of label >= l)` for `l = 1..=l_max` over
/// windows `[-L, L]` of i.i.d. geometric values; replica `r` uses stream
/// `child(r)` of `(seed, 0)`.
pub fn label_tail_stats(q: f64, half_width: i64, l_max: u64, replicas: usize, seed: u64) -> Result<Vec<f64>> {
    if replicas == 0 {
        return Err(Error::InvalidParameter("replicas must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("q must lie in [0, 1), got {q}")));
    }
    let root = RngStream::new(seed, 0);
    let counts = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let seq = LabeledSeq::sample_geometric(q, half_width, &mut root.child(r as u64).rng()).expect("validated");
            let f = compute_bands(&seq).label_of(0).expect("window contains 0");
            (1..=l_max).map(|l| u64::from(f >= l)).collect::<Vec<u64>>()
        })
        .reduce(|| vec![0; l_max as usize], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    Ok(counts.iter().map(|&c| c as f64 / replicas as f64).collect())
}
