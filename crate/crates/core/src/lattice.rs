//! Bond percolation on boxes of Z^2 with column/row dependent probabilities:
//! the stretched lattice (RSL) and the highway model (RHM), their duality,
//! crossings and open circuits.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::{check_positive, check_unit_open, Error, Result};
use crate::unionfind::UnionFind;

/// Inclusive integer rectangle `[x0, x1] x [y0, y1]` of lattice vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: i64,
    pub x1: i64,
    pub y0: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, x1: i64, y0: i64, y1: i64) -> Self {
        assert!(x0 <= x1 && y0 <= y1, "empty rectangle");
        Self { x0, x1, y0, y1 }
    }

    pub fn square(l: i64) -> Self {
        Self::new(-l, l, -l, l)
    }

    pub fn width(&self) -> usize {
        (self.x1 - self.x0 + 1) as usize
    }

    pub fn height(&self) -> usize {
        (self.y1 - self.y0 + 1) as usize
    }

    pub fn n_vertices(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        self.x0 <= o.x0 && o.x1 <= self.x1 && self.y0 <= o.y0 && o.y1 <= self.y1
    }

    pub fn index(&self, x: i64, y: i64) -> usize {
        debug_assert!(self.contains(x, y));
        (y - self.y0) as usize * self.width() + (x - self.x0) as usize
    }

    pub fn vertex(&self, k: usize) -> (i64, i64) {
        let w = self.width();
        (self.x0 + (k % w) as i64, self.y0 + (k / w) as i64)
    }

    pub fn vertices(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| (x, y)))
    }
}

/// Bits for a rectangular family of parallel bonds, indexed by the bond's
/// lower/left endpoint. Positions outside the family read as closed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BondGrid {
    pub x0: i64,
    pub y0: i64,
    pub nx: usize,
    pub ny: usize,
    bits: Vec<bool>,
}

impl BondGrid {
    pub fn new(x0: i64, y0: i64, nx: usize, ny: usize, fill: bool) -> Self {
        Self { x0, y0, nx, ny, bits: vec![fill; nx * ny] }
    }

    pub fn index(&self, i: i64, j: i64) -> Option<usize> {
        let (di, dj) = (i - self.x0, j - self.y0);
        if di < 0 || dj < 0 || di as usize >= self.nx || dj as usize >= self.ny {
            None
        } else {
            Some(dj as usize * self.nx + di as usize)
        }
    }

    pub fn get(&self, i: i64, j: i64) -> bool {
        self.index(i, j).is_some_and(|k| self.bits[k])
    }

    pub fn set(&mut self, i: i64, j: i64, open: bool) {
        let k = self.index(i, j).expect("bond outside grid");
        self.bits[k] = open;
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_open(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Stored part of row `j` intersected with columns `i0..=i1`, as
    /// `(first column, bits)`.
    fn row_part(&self, j: i64, i0: i64, i1: i64) -> Option<(i64, &[bool])> {
        let dj = j - self.y0;
        if dj < 0 || dj as usize >= self.ny {
            return None;
        }
        let a = i0.max(self.x0);
        let b = i1.min(self.x0 + self.nx as i64 - 1);
        if a > b {
            return None;
        }
        let base = dj as usize * self.nx;
        Some((a, &self.bits[base + (a - self.x0) as usize..=base + (b - self.x0) as usize]))
    }

    /// Every bond `(i, j)` with `i0 <= i <= i1` is open (true for an empty range).
    pub fn all_open(&self, j: i64, i0: i64, i1: i64) -> bool {
        i1 < i0 || self.first_closed(j, i0, i1).is_none()
    }

    pub fn any_open(&self, j: i64, i0: i64, i1: i64) -> bool {
        self.row_part(j, i0, i1).is_some_and(|(_, s)| s.contains(&true))
    }

    /// Smallest `i` in `i0..=i1` whose bond `(i, j)` is closed or absent.
    pub fn first_closed(&self, j: i64, i0: i64, i1: i64) -> Option<i64> {
        if i1 < i0 {
            return None;
        }
        match self.row_part(j, i0, i1) {
            None => Some(i0),
            Some((a, s)) => {
                if a > i0 {
                    return Some(i0);
                }
                match s.iter().position(|&b| !b) {
                    Some(k) => Some(a + k as i64),
                    None => {
                        let end = a + s.len() as i64;
                        (end <= i1).then_some(end)
                    }
                }
            }
        }
    }

    pub fn positions(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (0..self.ny as i64).flat_map(move |j| (0..self.nx as i64).map(move |i| (self.x0 + i, self.y0 + j)))
    }

    fn complemented(&self, dx: i64, dy: i64) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            nx: self.nx,
            ny: self.ny,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondKind {
    Rsl,
    Rhm,
}

impl BondKind {
    pub fn flipped(self) -> Self {
        match self {
            BondKind::Rsl => BondKind::Rhm,
            BondKind::Rhm => BondKind::Rsl,
        }
    }
}

/// Open/closed state of the bonds of a box. With `half_shift` set, stored
/// position `(a, b)` stands for the point `(a + 1/2, b + 1/2)` (dual lattice).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BondConfig {
    pub kind: BondKind,
    pub half_shift: bool,
    /// `(i, j) -- (i + 1, j)`
    pub h: BondGrid,
    /// `(i, j) -- (i, j + 1)`
    pub v: BondGrid,
}

impl BondConfig {
    /// All bonds with both endpoints in `rect`, set to `fill`.
    pub fn new(kind: BondKind, rect: Rect, fill: bool) -> Self {
        let (w, h) = (rect.width(), rect.height());
        Self {
            kind,
            half_shift: false,
            h: BondGrid::new(rect.x0, rect.y0, w - 1, h, fill),
            v: BondGrid::new(rect.x0, rect.y0, w, h - 1, fill),
        }
    }

    pub fn h_open(&self, i: i64, j: i64) -> bool {
        self.h.get(i, j)
    }

    pub fn v_open(&self, i: i64, j: i64) -> bool {
        self.v.get(i, j)
    }

    /// Whether the unit bond between two lattice neighbours is open.
    pub fn edge_open(&self, a: (i64, i64), b: (i64, i64)) -> bool {
        let (p, q) = if a <= b { (a, b) } else { (b, a) };
        match (q.0 - p.0, q.1 - p.1) {
            (1, 0) => self.h_open(p.0, p.1),
            (0, 1) => self.v_open(p.0, p.1),
            _ => false,
        }
    }

    /// Smallest rectangle containing every endpoint of every stored bond.
    pub fn vertex_bounds(&self) -> Rect {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        if !self.h.is_empty() {
            xs.extend([self.h.x0, self.h.x0 + self.h.nx as i64]);
            ys.extend([self.h.y0, self.h.y0 + self.h.ny as i64 - 1]);
        }
        if !self.v.is_empty() {
            xs.extend([self.v.x0, self.v.x0 + self.v.nx as i64 - 1]);
            ys.extend([self.v.y0, self.v.y0 + self.v.ny as i64]);
        }
        assert!(!xs.is_empty(), "configuration without bonds");
        Rect::new(
            *xs.iter().min().unwrap(),
            *xs.iter().max().unwrap(),
            *ys.iter().min().unwrap(),
            *ys.iter().max().unwrap(),
        )
    }

    pub fn count_open(&self) -> usize {
        self.h.count_open() + self.v.count_open()
    }

    pub fn n_bonds(&self) -> usize {
        self.h.len() + self.v.len()
    }

    /// Open neighbours of a vertex.
    pub fn open_neighbors(&self, x: i64, y: i64) -> impl Iterator<Item = (i64, i64)> + '_ {
        [
            (self.h_open(x, y), (x + 1, y)),
            (self.h_open(x - 1, y), (x - 1, y)),
            (self.v_open(x, y), (x, y + 1)),
            (self.v_open(x, y - 1), (x, y - 1)),
        ]
        .into_iter()
        .filter_map(|(o, n)| o.then_some(n))
    }
}

/// Column variables `n_x[i - x0]` and row variables `n_y[j - y0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeEnv {
    pub x0: i64,
    pub n_x: Vec<f64>,
    pub y0: i64,
    pub n_y: Vec<f64>,
}

impl LatticeEnv {
    pub fn new(x0: i64, n_x: Vec<f64>, y0: i64, n_y: Vec<f64>) -> Result<Self> {
        if n_x.is_empty() || n_y.is_empty() {
            return Err(Error::EmptyInput("environment needs at least one column and one row".into()));
        }
        if n_x.iter().chain(&n_y).any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidParameter("environment entries must be positive".into()));
        }
        Ok(Self { x0, n_x, y0, n_y })
    }

    /// Every column and row variable equal to `value` on `[-l, l]`.
    pub fn constant(l: i64, value: f64) -> Self {
        let n = (2 * l + 1) as usize;
        Self::new(-l, vec![value; n], -l, vec![value; n]).expect("positive constant")
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x0, self.x0 + self.n_x.len() as i64 - 1, self.y0, self.y0 + self.n_y.len() as i64 - 1)
    }

    pub fn nx(&self, i: i64) -> f64 {
        self.n_x[(i - self.x0) as usize]
    }

    pub fn ny(&self, j: i64) -> f64 {
        self.n_y[(j - self.y0) as usize]
    }
}

/// i.i.d. entries with `P(N >= l + 1) = q^l`, i.e. `N = 1 + Geometric(1 - q)`,
/// on columns and rows `[-l, l]`.
pub fn sample_geometric_env<R: Rng + ?Sized>(q_x: f64, q_y: f64, l: i64, rng: &mut R) -> Result<LatticeEnv> {
    check_unit_open("q_x", q_x)?;
    check_unit_open("q_y", q_y)?;
    if l < 0 {
        return Err(Error::InvalidParameter("L must be >= 0".into()));
    }
    let n = (2 * l + 1) as usize;
    let draw = |q: f64, rng: &mut R| -> Result<Vec<f64>> {
        let g = Geometric::new(1.0 - q).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok((0..n).map(|_| 1.0 + g.sample(rng) as f64).collect())
    };
    let n_x = draw(q_x, rng)?;
    let n_y = draw(q_y, rng)?;
    LatticeEnv::new(-l, n_x, -l, n_y)
}

fn check_p(p: f64) -> Result<()> {
    check_unit_open("p", p)
}

/// Stretched lattice: `(i,j)--(i+1,j)` open w.p. `p^{N_i^x}`, `(i,j)--(i,j+1)`
/// open w.p. `p^{N_j^y}`. One uniform per bond, horizontal bonds first, both
/// families row by row, so configurations are monotone in `p`.
pub fn sample_rsl_bonds<R: Rng + ?Sized>(env: &LatticeEnv, p: f64, rng: &mut R) -> Result<BondConfig> {
    check_p(p)?;
    let lnp = p.ln();
    let px: Vec<f64> = env.n_x.iter().map(|n| (n * lnp).exp()).collect();
    let py: Vec<f64> = env.n_y.iter().map(|n| (n * lnp).exp()).collect();
    Ok(fill_bonds(env, BondKind::Rsl, rng, |i, _| px[i], |_, j| py[j]))
}

/// Highway model: `(i,j)--(i+1,j)` closed w.p. `p^{N_j^y}`, `(i,j)--(i,j+1)`
/// closed w.p. `p^{N_i^x}`.
pub fn sample_rhm_bonds<R: Rng + ?Sized>(env: &LatticeEnv, p: f64, rng: &mut R) -> Result<BondConfig> {
    check_p(p)?;
    let lnp = p.ln();
    let px: Vec<f64> = env.n_x.iter().map(|n| -(n * lnp).exp_m1()).collect();
    let py: Vec<f64> = env.n_y.iter().map(|n| -(n * lnp).exp_m1()).collect();
    Ok(fill_bonds(env, BondKind::Rhm, rng, |_, j| py[j], |i, _| px[i]))
}

/// `ph(ci, rj)`/`pv(ci, rj)` give open probabilities from column/row offsets.
fn fill_bonds<R: Rng + ?Sized>(
    env: &LatticeEnv,
    kind: BondKind,
    rng: &mut R,
    ph: impl Fn(usize, usize) -> f64,
    pv: impl Fn(usize, usize) -> f64,
) -> BondConfig {
    let rect = env.rect();
    let mut cfg = BondConfig::new(kind, rect, false);
    let (nxh, nyh) = (cfg.h.nx, cfg.h.ny);
    for rj in 0..nyh {
        for ci in 0..nxh {
            cfg.h.bits[rj * nxh + ci] = rng.random::<f64>() < ph(ci, rj);
        }
    }
    let (nxv, nyv) = (cfg.v.nx, cfg.v.ny);
    for rj in 0..nyv {
        for ci in 0..nxv {
            cfg.v.bits[rj * nxv + ci] = rng.random::<f64>() < pv(ci, rj);
        }
    }
    cfg
}

/// `(alpha N, p^{1/alpha})`: same per-bond probabilities, rescaled environment.
pub fn rsl_scale(env: &LatticeEnv, p: f64, alpha: f64) -> Result<(LatticeEnv, f64)> {
    check_p(p)?;
    check_positive("alpha", alpha)?;
    let scaled = LatticeEnv {
        x0: env.x0,
        n_x: env.n_x.iter().map(|n| n * alpha).collect(),
        y0: env.y0,
        n_y: env.n_y.iter().map(|n| n * alpha).collect(),
    };
    Ok((scaled, p.powf(1.0 / alpha)))
}

/// Scale factor `-1000 ln 2 / ln q` that turns a geometric tail `q^l` into
/// one of order `2^{-1000 l}`.
pub fn compensate_geometric(q: f64) -> Result<f64> {
    check_unit_open("q", q)?;
    Ok(-1000.0 / q.log2())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    LeftRight,
    TopBottom,
    AllFour,
}

/// Vertex subset of a rectangle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterMask {
    pub rect: Rect,
    pub bits: Vec<bool>,
}

impl ClusterMask {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        self.rect.contains(x, y) && self.bits[self.rect.index(x, y)]
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertices(&self) -> Vec<(i64, i64)> {
        (0..self.bits.len()).filter(|&k| self.bits[k]).map(|k| self.rect.vertex(k)).collect()
    }
}

/// Union-find over the vertices of `rect` joined by the bonds inside `rect`
/// for which the predicates hold. Vertex index is `rect.index(x, y)`.
pub fn rect_components(rect: &Rect, h: impl Fn(i64, i64) -> bool, v: impl Fn(i64, i64) -> bool) -> UnionFind {
    let mut uf = UnionFind::new(rect.n_vertices());
    let w = rect.width();
    for y in rect.y0..=rect.y1 {
        let row = (y - rect.y0) as usize * w;
        for x in rect.x0..=rect.x1 {
            let k = row + (x - rect.x0) as usize;
            if x < rect.x1 && h(x, y) {
                uf.union(k, k + 1);
            }
            if y < rect.y1 && v(x, y) {
                uf.union(k, k + w);
            }
        }
    }
    uf
}

/// Open cluster of `bonds` restricted to `sub` that touches the faces named by
/// `dir`. In a box at most one cluster touches all four faces.
pub fn crossing_cluster(bonds: &BondConfig, sub: &Rect, dir: Direction) -> Result<Option<ClusterMask>> {
    if !bonds.vertex_bounds().contains_rect(sub) {
        return Err(Error::BoxMismatch(format!("{sub:?} is not inside {:?}", bonds.vertex_bounds())));
    }
    let mut uf = rect_components(sub, |x, y| bonds.h_open(x, y), |x, y| bonds.v_open(x, y));
    Ok(touching_cluster(&mut uf, sub, dir))
}

pub(crate) fn touching_cluster(uf: &mut UnionFind, sub: &Rect, dir: Direction) -> Option<ClusterMask> {
    const L: u8 = 1;
    const R: u8 = 2;
    const B: u8 = 4;
    const T: u8 = 8;
    let need = match dir {
        Direction::LeftRight => L | R,
        Direction::TopBottom => B | T,
        Direction::AllFour => L | R | B | T,
    };
    let mut flags = vec![0u8; sub.n_vertices()];
    for (x, y) in sub.vertices() {
        let mut f = 0;
        if x == sub.x0 {
            f |= L;
        }
        if x == sub.x1 {
            f |= R;
        }
        if y == sub.y0 {
            f |= B;
        }
        if y == sub.y1 {
            f |= T;
        }
        if f != 0 {
            let root = uf.find(sub.index(x, y));
            flags[root] |= f;
        }
    }
    let root = (0..flags.len()).find(|&k| flags[k] & need == need)?;
    let bits = (0..sub.n_vertices()).map(|k| uf.find(k) == root).collect();
    Some(ClusterMask { rect: *sub, bits })
}

pub fn crossing_exists(bonds: &BondConfig, sub: &Rect, dir: Direction) -> Result<bool> {
    Ok(crossing_cluster(bonds, sub, dir)?.is_some())
}

/// Bonds of the dual lattice: the dual bond crossing a primal bond is open
/// iff the primal bond is closed. The model kind flips and the half-shift
/// toggles, so applying the transform twice returns the input.
pub fn dual_transform(bonds: &BondConfig) -> BondConfig {
    let (h, v) = if bonds.half_shift {
        // shifted v (a,b) crosses h (a, b+1); shifted h (a,b) crosses v (a+1, b)
        (bonds.v.complemented(0, 1), bonds.h.complemented(1, 0))
    } else {
        // v (i,j) is crossed by shifted h (i-1, j); h (i,j) by shifted v (i, j-1)
        (bonds.v.complemented(-1, 0), bonds.h.complemented(0, -1))
    };
    BondConfig { kind: bonds.kind.flipped(), half_shift: !bonds.half_shift, h, v }
}

/// Closed lattice path; `vertices.first() == vertices.last()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Circuit {
    pub vertices: Vec<(i64, i64)>,
    /// Coordinates refer to the half-shifted (dual) lattice.
    pub half_shift: bool,
}

impl Circuit {
    /// Number of bonds.
    pub fn len(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edges(&self) -> impl Iterator<Item = ((i64, i64), (i64, i64))> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    /// Closed, made of unit steps, and without repeated vertices.
    pub fn is_simple_cycle(&self) -> bool {
        let n = self.vertices.len();
        if n < 5 || self.vertices[0] != self.vertices[n - 1] {
            return false;
        }
        if self.edges().any(|(a, b)| (a.0 - b.0).abs() + (a.1 - b.1).abs() != 1) {
            return false;
        }
        let mut seen: Vec<(i64, i64)> = self.vertices[..n - 1].to_vec();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }

    fn doubled(&self) -> impl Iterator<Item = ((i64, i64), (i64, i64))> + '_ {
        let s = self.half_shift as i64;
        self.edges().map(move |(a, b)| ((2 * a.0 + s, 2 * a.1 + s), (2 * b.0 + s, 2 * b.1 + s)))
    }

    /// Ray-parity test for a point in doubled coordinates, which must not lie
    /// at the height of a cycle vertex.
    fn parity_doubled(&self, px: i64, py: i64) -> bool {
        let mut inside = false;
        for (a, b) in self.doubled() {
            if a.0 == b.0 && a.0 > px && a.1.min(b.1) < py && py < a.1.max(b.1) {
                inside = !inside;
            }
        }
        inside
    }

    /// Whether the vertex `(x, y)` lies strictly inside the circuit.
    /// `vertex_shifted` says which lattice the vertex belongs to.
    pub fn encloses(&self, x: i64, y: i64, vertex_shifted: bool) -> bool {
        if vertex_shifted == self.half_shift {
            if self.vertices.contains(&(x, y)) {
                return false;
            }
            let s = self.half_shift as i64;
            // nudge upward by half a unit; the unit bond above (x, y) is not on
            // the cycle because (x, y) is not
            self.parity_doubled(2 * x + s, 2 * y + s + 1)
        } else {
            let s = vertex_shifted as i64;
            self.parity_doubled(2 * x + s, 2 * y + s)
        }
    }

    /// Membership mask of the vertices of `rect` (same lattice as the
    /// circuit unless `vertex_shifted` differs) strictly inside the circuit.
    pub fn enclosed_mask(&self, rect: &Rect, vertex_shifted: bool) -> ClusterMask {
        let mut bits = vec![false; rect.n_vertices()];
        let on_cycle = |x: i64, y: i64| vertex_shifted == self.half_shift && self.vertices.contains(&(x, y));
        let s_c = self.half_shift as i64;
        let s_v = vertex_shifted as i64;
        let same = vertex_shifted == self.half_shift;
        for y in rect.y0..=rect.y1 {
            let py = 2 * y + s_v + same as i64;
            let mut xs: Vec<i64> = self
                .edges()
                .filter(|(a, b)| a.0 == b.0)
                .filter(|(a, b)| {
                    let (lo, hi) = (2 * a.1.min(b.1) + s_c, 2 * a.1.max(b.1) + s_c);
                    lo < py && py < hi
                })
                .map(|(a, _)| 2 * a.0 + s_c)
                .collect();
            xs.sort_unstable();
            for x in rect.x0..=rect.x1 {
                let px = 2 * x + s_v;
                let right = xs.len() - xs.partition_point(|&c| c <= px);
                if right % 2 == 1 && !(same && on_cycle(x, y)) {
                    bits[rect.index(x, y)] = true;
                }
            }
        }
        ClusterMask { rect: *rect, bits }
    }
}

/// Checks that `c` is a simple cycle of open bonds of `bonds` (same lattice)
/// enclosing every vertex of `targets`.
pub fn validate_circuit(bonds: &BondConfig, c: &Circuit, targets: &[(i64, i64)]) -> std::result::Result<(), String> {
    if c.half_shift != bonds.half_shift {
        return Err("circuit and configuration live on different lattices".into());
    }
    if !c.is_simple_cycle() {
        return Err("not a simple closed cycle".into());
    }
    if let Some((a, b)) = c.edges().find(|&(a, b)| !bonds.edge_open(a, b)) {
        return Err(format!("bond {a:?}-{b:?} is not open"));
    }
    if let Some(v) = targets.iter().find(|v| !c.encloses(v.0, v.1, c.half_shift)) {
        return Err(format!("vertex {v:?} is not enclosed"));
    }
    Ok(())
}

const EAST: u8 = 0;
const NORTH: u8 = 1;
const WEST: u8 = 2;
const SOUTH: u8 = 3;

fn step((x, y): (i64, i64), d: u8) -> (i64, i64) {
    match d {
        EAST => (x + 1, y),
        NORTH => (x, y + 1),
        WEST => (x - 1, y),
        _ => (x, y - 1),
    }
}

/// Faces (unit squares, named by their lower-left corner) to the left and
/// right of the step leaving `p` in direction `d`.
fn side_faces((x, y): (i64, i64), d: u8) -> ((i64, i64), (i64, i64)) {
    match d {
        EAST => ((x, y), (x, y - 1)),
        NORTH => ((x - 1, y), (x, y)),
        WEST => ((x - 1, y - 1), (x - 1, y)),
        _ => ((x, y - 1), (x - 1, y - 1)),
    }
}

/// Faces of the bounding box (plus one exterior ring) that can be reached
/// from outside without crossing an open bond.
struct OuterFaces {
    fx0: i64,
    fy0: i64,
    fw: usize,
    fh: usize,
    outer: Vec<bool>,
}

impl OuterFaces {
    fn compute(bonds: &BondConfig, b: &Rect) -> Self {
        let (fx0, fy0) = (b.x0 - 1, b.y0 - 1);
        let (fw, fh) = (b.width() + 1, b.height() + 1);
        let mut outer = vec![false; fw * fh];
        let mut queue = VecDeque::new();
        let idx = |fx: i64, fy: i64| (fy - fy0) as usize * fw + (fx - fx0) as usize;
        for fy in fy0..fy0 + fh as i64 {
            for fx in fx0..fx0 + fw as i64 {
                let ring = fx == fx0 || fy == fy0 || fx == fx0 + fw as i64 - 1 || fy == fy0 + fh as i64 - 1;
                if ring {
                    outer[idx(fx, fy)] = true;
                    queue.push_back((fx, fy));
                }
            }
        }
        while let Some((fx, fy)) = queue.pop_front() {
            // (neighbour face, bond separating them is open?)
            let moves = [
                ((fx + 1, fy), bonds.v_open(fx + 1, fy)),
                ((fx - 1, fy), bonds.v_open(fx, fy)),
                ((fx, fy + 1), bonds.h_open(fx, fy + 1)),
                ((fx, fy - 1), bonds.h_open(fx, fy)),
            ];
            for ((nx, ny), blocked) in moves {
                if blocked || nx < fx0 || ny < fy0 || nx >= fx0 + fw as i64 || ny >= fy0 + fh as i64 {
                    continue;
                }
                let k = idx(nx, ny);
                if !outer[k] {
                    outer[k] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        Self { fx0, fy0, fw, fh, outer }
    }

    fn is_outer(&self, (fx, fy): (i64, i64)) -> bool {
        if fx < self.fx0 || fy < self.fy0 || fx >= self.fx0 + self.fw as i64 || fy >= self.fy0 + self.fh as i64 {
            return true;
        }
        self.outer[(fy - self.fy0) as usize * self.fw + (fx - self.fx0) as usize]
    }
}

/// Finds an open circuit of `bonds` enclosing every vertex of `targets`, or
/// `None` if no such circuit exists among the stored bonds.
///
/// Faces reachable from outside across non-open bonds cannot lie inside any
/// open circuit. The faces around the targets must avoid that set and share
/// one component of its complement; the boundary of that component is then
/// an open simple cycle, traced with the component on the left. The returned
/// circuit is the outermost one around the targets.
pub fn find_blocking_circuit(bonds: &BondConfig, targets: &[(i64, i64)]) -> Result<Option<Circuit>> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("target vertex set is empty".into()));
    }
    let b = bonds.vertex_bounds();
    if targets.iter().any(|&(x, y)| x <= b.x0 || x >= b.x1 || y <= b.y0 || y >= b.y1) {
        return Err(Error::Margin);
    }
    let faces = OuterFaces::compute(bonds, &b);
    let around = |(x, y): (i64, i64)| [(x, y), (x - 1, y), (x - 1, y - 1), (x, y - 1)];
    if targets.iter().any(|&v| around(v).iter().any(|&f| faces.is_outer(f))) {
        return Ok(None);
    }
    // walk left from the face north-west of the first target to the first
    // outer face; the bond between is on the boundary
    let (tx, ty) = targets[0];
    let mut fx = tx - 1;
    while !faces.is_outer((fx - 1, ty)) {
        fx -= 1;
    }
    let start = (fx, ty + 1);
    let mut vertices = vec![start];
    let mut p = step(start, SOUTH);
    let mut d = SOUTH;
    let limit = 4 * faces.fw * faces.fh + 8;
    while !(p == start && d_next_is_start(&faces, p, d)) {
        vertices.push(p);
        d = next_heading(&faces, p, d);
        p = step(p, d);
        if vertices.len() > limit {
            unreachable!("boundary trace did not close");
        }
    }
    vertices.push(start);
    let c = Circuit { vertices, half_shift: bonds.half_shift };
    debug_assert!(c.is_simple_cycle());
    if targets.iter().all(|&(x, y)| c.encloses(x, y, bonds.half_shift)) {
        Ok(Some(c))
    } else {
        Ok(None)
    }
}

/// Left-most turn that keeps the enclosed component on the left.
fn next_heading(faces: &OuterFaces, p: (i64, i64), d: u8) -> u8 {
    for e in [(d + 1) % 4, d, (d + 3) % 4] {
        let (l, r) = side_faces(p, e);
        if !faces.is_outer(l) && faces.is_outer(r) {
            return e;
        }
    }
    unreachable!("boundary trace reached a dead end")
}

fn d_next_is_start(faces: &OuterFaces, p: (i64, i64), d: u8) -> bool {
    next_heading(faces, p, d) == SOUTH
}

/// Peierls cross-check: given an open circuit of the dual of `rhm`, no open
/// path of `rhm` may lead from an enclosed vertex to a vertex outside.
/// Returns `Ok(true)` when the check passes.
pub fn peierls_check(rhm: &BondConfig, circuit: &Circuit) -> Result<bool> {
    if circuit.half_shift == rhm.half_shift {
        return Err(Error::CircuitNotOpen("circuit must live on the dual lattice".into()));
    }
    let dual = dual_transform(rhm);
    if !circuit.is_simple_cycle() {
        return Err(Error::CircuitNotOpen("not a simple closed cycle".into()));
    }
    if let Some((a, b)) = circuit.edges().find(|&(a, b)| !dual.edge_open(a, b)) {
        return Err(Error::CircuitNotOpen(format!("dual bond {a:?}-{b:?} is closed")));
    }
    let rect = rhm.vertex_bounds();
    let inside = circuit.enclosed_mask(&rect, rhm.half_shift);
    let mut seen = inside.bits.clone();
    let mut queue: VecDeque<(i64, i64)> = inside.vertices().into();
    while let Some((x, y)) = queue.pop_front() {
        for (nx, ny) in rhm.open_neighbors(x, y) {
            if !rect.contains(nx, ny) {
                return Ok(false);
            }
            let k = rect.index(nx, ny);
            if !inside.bits[k] {
                return Ok(false);
            }
            if !seen[k] {
                seen[k] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// text format: header lines, then one run-length encoded line per bond row

fn write_grid<W: Write>(out: &mut W, tag: &str, g: &BondGrid) -> std::io::Result<()> {
    writeln!(out, "{tag} {} {} {} {}", g.x0, g.y0, g.nx, g.ny)?;
    for row in g.bits.chunks(g.nx.max(1)).take(g.ny) {
        let mut runs = Vec::new();
        let mut k = 0;
        while k < row.len() {
            let b = row[k];
            let len = row[k..].iter().take_while(|&&c| c == b).count();
            runs.push(format!("{}{}", if b { 'o' } else { 'c' }, len));
            k += len;
        }
        writeln!(out, "{}", runs.join(" "))?;
    }
    Ok(())
}

pub fn write_bonds<W: Write>(bonds: &BondConfig, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# bonds v1")?;
    let kind = match bonds.kind {
        BondKind::Rsl => "RSL",
        BondKind::Rhm => "RHM",
    };
    writeln!(out, "KIND {kind} SHIFT {}", bonds.half_shift as u8)?;
    write_grid(out, "HGRID", &bonds.h)?;
    write_grid(out, "VGRID", &bonds.v)
}

pub fn read_bonds<R: BufRead>(input: R) -> Result<BondConfig> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.starts_with('#')));
    let mut next = || -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((_, Err(e))) => Err(Error::Io(e)),
            None => Err(Error::Parse { line: 0, msg: "unexpected end of input".into() }),
        }
    };
    let perr = |line, msg: &str| Error::Parse { line, msg: msg.to_owned() };
    let (l, head) = next()?;
    let f: Vec<&str> = head.split_whitespace().collect();
    let kind = match f.as_slice() {
        ["KIND", "RSL", "SHIFT", _] => BondKind::Rsl,
        ["KIND", "RHM", "SHIFT", _] => BondKind::Rhm,
        _ => return Err(perr(l, "expected KIND <RSL|RHM> SHIFT <0|1>")),
    };
    let half_shift = f[3] == "1";
    let mut grid = |tag: &str| -> Result<BondGrid> {
        let (l, head) = next()?;
        let f: Vec<&str> = head.split_whitespace().collect();
        if f.len() != 5 || f[0] != tag {
            return Err(perr(l, "bad grid header"));
        }
        let num = |s: &str| s.parse::<i64>().map_err(|_| perr(l, "bad number"));
        let mut g = BondGrid::new(num(f[1])?, num(f[2])?, num(f[3])? as usize, num(f[4])? as usize, false);
        for j in 0..g.ny {
            let (l, row) = next()?;
            let mut k = 0;
            for run in row.split_whitespace() {
                let open = match run.as_bytes().first() {
                    Some(b'o') => true,
                    Some(b'c') => false,
                    _ => return Err(perr(l, "bad run")),
                };
                let len: usize = run[1..].parse().map_err(|_| perr(l, "bad run length"))?;
                if k + len > g.nx {
                    return Err(perr(l, "row too long"));
                }
                g.bits[j * g.nx + k..j * g.nx + k + len].fill(open);
                k += len;
            }
            if k != g.nx {
                return Err(perr(l, "row too short"));
            }
        }
        Ok(g)
    };
    let h = grid("HGRID")?;
    let v = grid("VGRID")?;
    Ok(BondConfig { kind, half_shift, h, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn grid_sizes() {
        let c = BondConfig::new(BondKind::Rsl, Rect::square(2), true);
        assert_eq!(c.h.len(), 4 * 5);
        assert_eq!(c.v.len(), 5 * 4);
        assert_eq!(c.vertex_bounds(), Rect::square(2));
        assert!(c.h_open(1, 2) && !c.h_open(2, 2));
    }

    #[test]
    fn compensation_values() {
        assert_eq!(compensate_geometric(0.5).unwrap(), 1000.0);
        assert_eq!(compensate_geometric(0.25).unwrap(), 500.0);
        assert_eq!(compensate_geometric(2f64.powi(-1000)).unwrap(), 1.0);
        assert!(compensate_geometric(1.0).is_err());
    }

    #[test]
    fn scaling_keeps_bond_probability() {
        let env = LatticeEnv::new(0, vec![3.0], 0, vec![1.0]).unwrap();
        let (e2, p2) = rsl_scale(&env, 0.5, 2.0).unwrap();
        assert_eq!(e2.n_x, vec![6.0]);
        assert!((0.5f64.powf(3.0) - p2.powf(6.0)).abs() < 1e-12);
        let (e1, p1) = rsl_scale(&env, 0.5, 1.0).unwrap();
        assert_eq!((e1, p1), (env, 0.5));
    }

    #[test]
    fn dual_examples() {
        let c = BondConfig::new(BondKind::Rhm, Rect::square(3), true);
        let d = dual_transform(&c);
        assert_eq!(d.kind, BondKind::Rsl);
        assert!(d.half_shift);
        assert_eq!(d.count_open(), 0);
        assert_eq!(dual_transform(&d), c);
    }

    #[test]
    fn all_open_circuit_around_origin() {
        let c = BondConfig::new(BondKind::Rsl, Rect::square(3), true);
        let circ = find_blocking_circuit(&c, &[(0, 0)]).unwrap().unwrap();
        validate_circuit(&c, &circ, &[(0, 0)]).unwrap();
        // outermost circuit is the box boundary
        assert_eq!(circ.len(), 24);
        let closed = BondConfig::new(BondKind::Rsl, Rect::square(3), false);
        assert!(find_blocking_circuit(&closed, &[(0, 0)]).unwrap().is_none());
        assert!(matches!(find_blocking_circuit(&c, &[(3, 0)]), Err(Error::Margin)));
    }

    #[test]
    fn two_touching_squares_are_separate() {
        // unit-ring circuits around (0,0) and (2,2) share the vertex (1,1)
        let mut c = BondConfig::new(BondKind::Rsl, Rect::square(4), false);
        for (cx, cy) in [(0, 0), (2, 2)] {
            for d in -1..1 {
                c.h.set(cx + d, cy - 1, true);
                c.h.set(cx + d, cy + 1, true);
                c.v.set(cx - 1, cy + d, true);
                c.v.set(cx + 1, cy + d, true);
            }
        }
        let a = find_blocking_circuit(&c, &[(0, 0)]).unwrap().unwrap();
        validate_circuit(&c, &a, &[(0, 0)]).unwrap();
        assert_eq!(a.len(), 8);
        let b = find_blocking_circuit(&c, &[(2, 2)]).unwrap().unwrap();
        validate_circuit(&c, &b, &[(2, 2)]).unwrap();
        assert!(find_blocking_circuit(&c, &[(0, 0), (2, 2)]).unwrap().is_none());
    }

    #[test]
    fn enclosure_mask_matches_pointwise() {
        let c = BondConfig::new(BondKind::Rsl, Rect::square(2), true);
        let circ = find_blocking_circuit(&c, &[(0, 0)]).unwrap().unwrap();
        let r = Rect::square(3);
        let m = circ.enclosed_mask(&r, false);
        for (x, y) in r.vertices() {
            assert_eq!(m.contains(x, y), circ.encloses(x, y, false), "{x},{y}");
        }
        assert_eq!(m.len(), 9);
        let mshift = circ.enclosed_mask(&r, true);
        for (x, y) in r.vertices() {
            assert_eq!(mshift.contains(x, y), circ.encloses(x, y, true));
        }
        assert_eq!(mshift.len(), 16);
    }

    #[test]
    fn peierls_on_closed_rhm() {
        let rhm = BondConfig::new(BondKind::Rhm, Rect::square(4), false);
        let dual = dual_transform(&rhm);
        let circ = find_blocking_circuit(&dual, &[(0, 0)]).unwrap().unwrap();
        assert!(peierls_check(&rhm, &circ).unwrap());
        let open = BondConfig::new(BondKind::Rhm, Rect::square(4), true);
        assert!(matches!(peierls_check(&open, &circ), Err(Error::CircuitNotOpen(_))));
    }

    #[test]
    fn crossing_basics() {
        let r = Rect::square(3);
        let open = BondConfig::new(BondKind::Rsl, r, true);
        let closed = BondConfig::new(BondKind::Rsl, r, false);
        for d in [Direction::LeftRight, Direction::TopBottom, Direction::AllFour] {
            assert!(crossing_exists(&open, &r, d).unwrap());
            assert!(!crossing_exists(&closed, &r, d).unwrap());
        }
        assert!(matches!(crossing_exists(&open, &Rect::square(4), Direction::LeftRight), Err(Error::BoxMismatch(_))));
    }

    #[test]
    fn text_round_trip() {
        let mut rng = RngStream::new(4, 4).rng();
        let env = sample_geometric_env(0.4, 0.2, 3, &mut rng).unwrap();
        let b = sample_rhm_bonds(&env, 0.5, &mut rng).unwrap();
        for cfg in [b.clone(), dual_transform(&b)] {
            let mut buf = Vec::new();
            write_bonds(&cfg, &mut buf).unwrap();
            assert_eq!(read_bonds(&buf[..]).unwrap(), cfg);
        }
    }
}
