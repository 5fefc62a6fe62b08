//! Couplings from the continuum model to lattice models: street clusters and
//! the highway model (upper bound), three stretched-lattice schemes (lower
//! bounds), and the parameter calculators behind them.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::continuum::ClusterIndex;
use crate::error::{check_positive, check_unit_open, Error, Result};
use crate::lattice::{BondConfig, BondKind, LatticeEnv, Rect};
use crate::pointproc::{Axis, MgmSample};
use crate::stats::{bisect_threshold, ln_poisson_cdf, smallest_integer};

/// Slack for threshold comparisons that should hold with equality.
const TOL: f64 = 1e-12;

/// Clusters of a sorted coordinate list whose r-neighbourhoods overlap,
/// indexed so that cluster 0 is the first one with a positive maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedClusters {
    pub r: f64,
    pub half_width: f64,
    /// Index of `clusters[0]`.
    pub first: i64,
    pub clusters: Vec<Vec<f64>>,
    /// The cluster might continue outside the window.
    pub partial: Vec<bool>,
    /// Cluster index of every input coordinate.
    pub member: Vec<i64>,
}

impl IndexedClusters {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn last(&self) -> i64 {
        self.first + self.clusters.len() as i64 - 1
    }

    fn slot(&self, i: i64) -> Option<usize> {
        let k = i - self.first;
        (k >= 0 && (k as usize) < self.clusters.len()).then_some(k as usize)
    }

    pub fn get(&self, i: i64) -> Option<&[f64]> {
        self.slot(i).map(|k| self.clusters[k].as_slice())
    }

    pub fn is_partial(&self, i: i64) -> bool {
        self.slot(i).is_none_or(|k| self.partial[k])
    }

    pub fn min(&self, i: i64) -> f64 {
        self.get(i).expect("cluster index in range")[0]
    }

    pub fn max(&self, i: i64) -> f64 {
        *self.get(i).expect("cluster index in range").last().unwrap()
    }

    /// Inclusive index range of the clusters that are certainly complete.
    pub fn complete_range(&self) -> Option<(i64, i64)> {
        let lo = self.partial.iter().position(|p| !p)?;
        let hi = self.partial.iter().rposition(|p| !p)?;
        Some((self.first + lo as i64, self.first + hi as i64))
    }

    /// Cluster `i` with `max C_i < t < max C_i + width`.
    pub fn gap_left_of(&self, t: f64, width: f64) -> Option<i64> {
        let k = self.clusters.partition_point(|c| *c.last().unwrap() < t);
        if k == 0 {
            return None;
        }
        let a = *self.clusters[k - 1].last().unwrap();
        (t < a + width).then_some(self.first + k as i64 - 1)
    }
}

/// Groups `phi` (strictly increasing, inside `[-W, W]`) into r-clusters:
/// consecutive coordinates closer than `2r` share a cluster.
pub fn enumerate_r_clusters(phi: &[f64], r: f64, half_width: f64) -> Result<IndexedClusters> {
    check_positive("r", r)?;
    check_positive("window half-width", half_width)?;
    if phi.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("coordinates must be strictly increasing".into()));
    }
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for &x in phi {
        match clusters.last_mut() {
            Some(c) if x - *c.last().unwrap() < 2.0 * r => c.push(x),
            _ => clusters.push(vec![x]),
        }
    }
    let zero = clusters
        .iter()
        .position(|c| *c.last().unwrap() > 0.0)
        .ok_or_else(|| Error::EmptyInput("no cluster with a positive maximum in the window".into()))?;
    let first = -(zero as i64);
    let partial =
        clusters.iter().map(|c| c[0] - 2.0 * r < -half_width || c.last().unwrap() + 2.0 * r > half_width).collect();
    let mut member = Vec::with_capacity(phi.len());
    for (k, c) in clusters.iter().enumerate() {
        member.extend(std::iter::repeat_n(first + k as i64, c.len()));
    }
    Ok(IndexedClusters { r, half_width, first, clusters, partial, member })
}

/// Highway-model configuration read off a continuum sample. Lattice vertex
/// `(i, j)` stands for the crossing of street clusters `C_i^x` and `C_j^y`;
/// only complete clusters are used.
#[derive(Clone, Debug)]
pub struct RhmCoupling {
    pub x: IndexedClusters,
    pub y: IndexedClusters,
    pub kappa: u32,
    pub env: LatticeEnv,
    pub bonds: BondConfig,
}

impl RhmCoupling {
    /// `[min C_i^x, max C_i^x) x [min C_j^y, max C_j^y)` as `(x0, x1, y0, y1)`.
    pub fn rectangle(&self, i: i64, j: i64) -> Option<(f64, f64, f64, f64)> {
        if !self.env.rect().contains(i, j) {
            return None;
        }
        Some((self.x.min(i), self.x.max(i), self.y.min(j), self.y.max(j)))
    }
}

fn axis_clusters(sample: &MgmSample, radius: f64) -> Result<(IndexedClusters, IndexedClusters, Rect)> {
    let w = sample.window.half_width;
    let x = enumerate_r_clusters(&sample.v_streets, radius, w)?;
    let y = enumerate_r_clusters(&sample.h_streets, radius, w)?;
    let range = |c: &IndexedClusters, name: &str| match c.complete_range() {
        Some((lo, hi)) if hi > lo => Ok((lo, hi)),
        _ => Err(Error::WindowTooSmall(format!("fewer than two complete {name} street clusters"))),
    };
    let (x0, x1) = range(&x, "vertical")?;
    let (y0, y1) = range(&y, "horizontal")?;
    Ok((x, y, Rect::new(x0, x1, y0, y1)))
}

/// Coarse scheme: the bond `(i,j)--(i+1,j)` is open iff a pedestrian on a
/// street of `C_j^y` lies in `(max C_i^x, max C_i^x + 2r)`, and symmetrically
/// for vertical bonds. Environment entries are cluster sizes.
pub fn mgm_to_rhm(sample: &MgmSample) -> Result<RhmCoupling> {
    let r = sample.params.r;
    let (x, y, rect) = axis_clusters(sample, r)?;
    let size = |c: &IndexedClusters, i: i64| c.get(i).unwrap().len() as f64;
    let env = LatticeEnv::new(
        rect.x0,
        (rect.x0..=rect.x1).map(|i| size(&x, i)).collect(),
        rect.y0,
        (rect.y0..=rect.y1).map(|j| size(&y, j)).collect(),
    )?;
    let mut bonds = BondConfig::new(BondKind::Rhm, rect, false);
    for p in &sample.pedestrians {
        match p.axis {
            Axis::Horizontal => {
                let j = y.member[p.street as usize];
                if let Some(i) = x.gap_left_of(p.x, 2.0 * r) {
                    if rect.contains(i, j) && i < rect.x1 {
                        bonds.h.set(i, j, true);
                    }
                }
            }
            Axis::Vertical => {
                let i = x.member[p.street as usize];
                if let Some(j) = y.gap_left_of(p.y, 2.0 * r) {
                    if rect.contains(i, j) && j < rect.y1 {
                        bonds.v.set(i, j, true);
                    }
                }
            }
        }
    }
    Ok(RhmCoupling { x, y, kappa: 1, env, bonds })
}

/// Fine scheme with `kappa r`-clusters: a bond is open iff each of the
/// `kappa` consecutive length-`2r` intervals right of the cluster maximum
/// holds a pedestrian on a street of the crossing cluster. Environment
/// entries are 1 for singleton clusters and `tau * size` otherwise.
pub fn mgm_to_rhm_fine(sample: &MgmSample, kappa: u32) -> Result<RhmCoupling> {
    if kappa == 0 {
        return Err(Error::InvalidParameter("kappa must be >= 1".into()));
    }
    let p = sample.params;
    let fine = params_fine(p.r, p.lambda, p.mu_x.max(p.mu_y), kappa)?;
    let (x, y, rect) = axis_clusters(sample, kappa as f64 * p.r)?;
    let entry = |c: &IndexedClusters, i: i64| match c.get(i).unwrap().len() {
        1 => 1.0,
        n => (fine.tau * n as u64) as f64,
    };
    let env = LatticeEnv::new(
        rect.x0,
        (rect.x0..=rect.x1).map(|i| entry(&x, i)).collect(),
        rect.y0,
        (rect.y0..=rect.y1).map(|j| entry(&y, j)).collect(),
    )?;
    let span = 2.0 * p.r;
    let k = kappa as usize;
    // (vertical?, i, j) -> which sub-intervals are occupied
    let mut hits: HashMap<(bool, i64, i64), Vec<bool>> = HashMap::new();
    let mut mark = |vertical: bool, i: i64, j: i64, t: f64, a: f64| {
        let m = (((t - a) / span).floor() as usize).min(k - 1);
        hits.entry((vertical, i, j)).or_insert_with(|| vec![false; k])[m] = true;
    };
    for q in &sample.pedestrians {
        match q.axis {
            Axis::Horizontal => {
                let j = y.member[q.street as usize];
                if let Some(i) = x.gap_left_of(q.x, k as f64 * span) {
                    if rect.contains(i, j) && i < rect.x1 {
                        mark(false, i, j, q.x, x.max(i));
                    }
                }
            }
            Axis::Vertical => {
                let i = x.member[q.street as usize];
                if let Some(j) = y.gap_left_of(q.y, k as f64 * span) {
                    if rect.contains(i, j) && j < rect.y1 {
                        mark(true, i, j, q.y, y.max(j));
                    }
                }
            }
        }
    }
    let mut bonds = BondConfig::new(BondKind::Rhm, rect, false);
    for ((vertical, i, j), occ) in hits {
        if occ.iter().all(|&b| b) {
            if vertical {
                bonds.v.set(i, j, true);
            } else {
                bonds.h.set(i, j, true);
            }
        }
    }
    Ok(RhmCoupling { x, y, kappa, env, bonds })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DominationReport {
    /// Continuum clusters crossing a gap between complete street clusters.
    pub crossings: usize,
    /// Crossings without an open lattice bond across the same gap.
    pub violations: usize,
    /// Crossings that only use streets of incomplete clusters.
    pub unverifiable: usize,
}

/// Checks, for every gap between consecutive complete street clusters, that
/// each continuum cluster reaching across the gap contains a pedestrian
/// responsible for an open bond of the coarse coupling across that gap.
pub fn check_rhm_domination(sample: &MgmSample, coupling: &RhmCoupling) -> DominationReport {
    let mut ci = ClusterIndex::build(sample);
    let labels = ci.labels();
    let rect = coupling.bonds.vertex_bounds();
    let r = sample.params.r;
    let mut report = DominationReport::default();
    for vertical_gap in [true, false] {
        // vertical_gap: gap between x-clusters, crossed by horizontal streets
        let (across, along, lo, hi) = if vertical_gap {
            (&coupling.x, &coupling.y, rect.x0, rect.x1)
        } else {
            (&coupling.y, &coupling.x, rect.y0, rect.y1)
        };
        for i in lo..hi {
            let (a, b) = (across.max(i), across.min(i + 1));
            // per continuum class: (left, right, any gap ped, gap ped on open bond)
            let mut state: HashMap<usize, [bool; 4]> = HashMap::new();
            for (k, q) in sample.pedestrians.iter().enumerate() {
                let t = if vertical_gap { q.x } else { q.y };
                let s = state.entry(labels[k]).or_default();
                s[0] |= t <= a;
                s[1] |= t >= b;
                if t > a && t < a + 2.0 * r {
                    let j = along.member[q.street as usize];
                    s[2] |= !along.is_partial(j);
                    let open = if vertical_gap { coupling.bonds.h_open(i, j) } else { coupling.bonds.v_open(j, i) };
                    s[3] |= open;
                }
            }
            for s in state.values().filter(|s| s[0] && s[1]) {
                report.crossings += 1;
                if s[3] {
                    continue;
                }
                if s[2] {
                    report.violations += 1;
                } else {
                    report.unverifiable += 1;
                }
            }
        }
    }
    report
}

/// Lattice of unit links before compression. A horizontal link is present
/// iff its row is good, a vertical one iff its column is good; `links`
/// holds the present links that are open.
#[derive(Clone, Debug)]
pub struct UnitLattice {
    pub rect: Rect,
    pub col_good: Vec<bool>,
    pub row_good: Vec<bool>,
    pub links: BondConfig,
}

/// Stretched lattice on the good columns and rows of a [`UnitLattice`]. A
/// bond is open iff every unit link it replaces is open; environment entries
/// are the run lengths between good columns (rows), and the last entry runs
/// to one past the edge of the unit range.
#[derive(Clone, Debug)]
pub struct CompressedLattice {
    pub cols: Vec<i64>,
    pub rows: Vec<i64>,
    pub env: LatticeEnv,
    pub bonds: BondConfig,
}

impl UnitLattice {
    fn new(rect: Rect, col_good: Vec<bool>, row_good: Vec<bool>) -> Self {
        let links = BondConfig::new(BondKind::Rsl, rect, false);
        Self { rect, col_good, row_good, links }
    }

    pub fn h_present(&self, i: i64, j: i64) -> bool {
        self.rect.contains(i, j) && i < self.rect.x1 && self.row_good[(j - self.rect.y0) as usize]
    }

    pub fn v_present(&self, i: i64, j: i64) -> bool {
        self.rect.contains(i, j) && j < self.rect.y1 && self.col_good[(i - self.rect.x0) as usize]
    }

    pub fn compress(&self) -> Result<CompressedLattice> {
        let pick = |good: &[bool], o: i64| -> Vec<i64> {
            (0..good.len()).filter(|&k| good[k]).map(|k| o + k as i64).collect()
        };
        let cols = pick(&self.col_good, self.rect.x0);
        let rows = pick(&self.row_good, self.rect.y0);
        if cols.is_empty() || rows.is_empty() {
            return Err(Error::EmptyInput("no good column or row".into()));
        }
        let runs = |g: &[i64], end: i64| -> Vec<f64> {
            let mut v: Vec<f64> = g.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
            v.push((end + 1 - g[g.len() - 1]) as f64);
            v
        };
        let x0 = -(cols.iter().filter(|&&c| c < 0).count() as i64);
        let y0 = -(rows.iter().filter(|&&c| c < 0).count() as i64);
        let env = LatticeEnv::new(x0, runs(&cols, self.rect.x1), y0, runs(&rows, self.rect.y1))?;
        let rect = Rect::new(x0, x0 + cols.len() as i64 - 1, y0, y0 + rows.len() as i64 - 1);
        let mut bonds = BondConfig::new(BondKind::Rsl, rect, false);
        for (b, &row) in rows.iter().enumerate() {
            for (a, w) in cols.windows(2).enumerate() {
                let open = (w[0]..w[1]).all(|i| self.links.h_open(i, row));
                bonds.h.set(x0 + a as i64, y0 + b as i64, open);
            }
        }
        for (a, &col) in cols.iter().enumerate() {
            for (b, w) in rows.windows(2).enumerate() {
                let open = (w[0]..w[1]).all(|j| self.links.v_open(col, j));
                bonds.v.set(x0 + a as i64, y0 + b as i64, open);
            }
        }
        Ok(CompressedLattice { cols, rows, env, bonds })
    }
}

fn check_r_large(r: f64) -> Result<()> {
    if r > std::f64::consts::SQRT_2 {
        Ok(())
    } else {
        Err(Error::Domain(format!("the unit-square schemes need r > sqrt(2), got r = {r}")))
    }
}

/// Number of coordinates in each band `[c - 1/2, c + 1/2)`, `c` in `[-k, k]`.
fn band_counts(coords: &[f64], k: i64) -> Vec<usize> {
    let mut n = vec![0usize; (2 * k + 1) as usize];
    for &s in coords {
        let c = (s + 0.5).floor() as i64;
        if (-k..=k).contains(&c) {
            n[(c + k) as usize] += 1;
        }
    }
    n
}

fn unit_range(sample: &MgmSample) -> Result<i64> {
    let k = (sample.window.half_width - 1.0).floor() as i64;
    if k < 1 {
        return Err(Error::WindowTooSmall("window must have half-width >= 2".into()));
    }
    Ok(k)
}

/// Fills the open unit links: a pedestrian on a good row's street opens the
/// horizontal link of the unit square it lies in, and symmetrically.
fn fill_unit_links(sample: &MgmSample, lat: &mut UnitLattice) {
    for q in &sample.pedestrians {
        let (i, j) = match q.axis {
            Axis::Horizontal => (q.x.floor() as i64, (q.y + 0.5).floor() as i64),
            Axis::Vertical => ((q.x + 0.5).floor() as i64, q.y.floor() as i64),
        };
        match q.axis {
            Axis::Horizontal if lat.h_present(i, j) => lat.links.h.set(i, j, true),
            Axis::Vertical if lat.v_present(i, j) => lat.links.v.set(i, j, true),
            _ => {}
        }
    }
}

/// Scheme 1 on the unit vertices `[-K, K]^2`, `K = floor(W - 1)`: rows
/// (columns) with at least `n_lambda` streets in their unit band are good.
pub fn mgm_to_rsl_scheme1(sample: &MgmSample, n_lambda: u64) -> Result<UnitLattice> {
    check_r_large(sample.params.r)?;
    if n_lambda == 0 {
        return Err(Error::InvalidParameter("n_lambda must be >= 1".into()));
    }
    let k = unit_range(sample)?;
    let good = |s: &[f64]| band_counts(s, k).into_iter().map(|n| n as u64 >= n_lambda).collect();
    let mut lat = UnitLattice::new(Rect::square(k), good(&sample.v_streets), good(&sample.h_streets));
    fill_unit_links(sample, &mut lat);
    Ok(lat)
}

#[derive(Clone, Debug)]
pub struct Scheme3Report {
    pub n_mu: u64,
    /// Chosen column per group, groups numbered from `group0`.
    pub group0: i64,
    pub chosen: Vec<Option<i64>>,
    pub lattice: UnitLattice,
}

/// Scheme 3: unit columns are taken in groups of `n_mu`; the first column of
/// a group with at least `n_lx` vertical streets in its band is the group's
/// good column. Rows need at least `n_ly` horizontal streets.
pub fn mgm_to_rsl_scheme3(sample: &MgmSample, n_lx: u64, n_mu: u64, n_ly: u64) -> Result<Scheme3Report> {
    check_r_large(sample.params.r)?;
    if n_lx == 0 || n_mu == 0 || n_ly == 0 {
        return Err(Error::InvalidParameter("scheme parameters must be >= 1".into()));
    }
    let k = unit_range(sample)?;
    let m = n_mu as i64;
    let vcount = band_counts(&sample.v_streets, k);
    let group0 = (-k).div_euclid(m) + i64::from((-k).rem_euclid(m) != 0);
    let group1 = (k + 1).div_euclid(m) - 1;
    let mut col_good = vec![false; (2 * k + 1) as usize];
    let mut chosen = Vec::new();
    for g in group0..=group1 {
        let pick = (g * m..(g + 1) * m).find(|&c| vcount[(c + k) as usize] as u64 >= n_lx);
        if let Some(c) = pick {
            col_good[(c + k) as usize] = true;
        }
        chosen.push(pick);
    }
    let row_good = band_counts(&sample.h_streets, k).into_iter().map(|n| n as u64 >= n_ly).collect();
    let mut lattice = UnitLattice::new(Rect::square(k), col_good, row_good);
    fill_unit_links(sample, &mut lattice);
    Ok(Scheme3Report { n_mu, group0, chosen, lattice })
}

#[derive(Clone, Debug)]
pub struct Scheme2Report {
    pub n_mu: u64,
    /// Squares `n_mu [a, a+1) x n_mu [b, b+1)` become vertices `(a, b)`.
    pub lattice: UnitLattice,
    /// Leftmost admissible vertical street per column of squares.
    pub x_street: Vec<Option<f64>>,
    /// Lowest admissible horizontal street per row of squares.
    pub y_street: Vec<Option<f64>>,
    /// Breakpoints along horizontal (`x_break`) and vertical (`y_break`) streets.
    pub x_break: Vec<f64>,
    pub y_break: Vec<f64>,
}

/// Whether the points (sorted) inside `[s, e]` cover it with open
/// `r`-neighbourhoods.
pub fn line_covered(points: &[f64], s: f64, e: f64, r: f64) -> bool {
    let lo = points.partition_point(|&t| t < s);
    let hi = points.partition_point(|&t| t <= e);
    let pts = &points[lo..hi];
    match (pts.first(), pts.last()) {
        (Some(&f), Some(&l)) => f - s < r && e - l < r && pts.windows(2).all(|w| w[1] - w[0] < 2.0 * r),
        _ => false,
    }
}

/// Scheme 2: squares of side `n_mu`; a column of squares is good if a
/// vertical street lies at distance at least 1 from its sides. Links join
/// consecutive breakpoints on the chosen street and are open iff the
/// pedestrians on that street cover the segment between them.
pub fn mgm_to_rsl_scheme2(sample: &MgmSample, n_mu: u64) -> Result<Scheme2Report> {
    if n_mu <= 2 {
        return Err(Error::Domain(format!("scheme 2 needs n_mu > 2, got {n_mu}")));
    }
    let n = n_mu as f64;
    let a_max = (sample.window.half_width / n).floor() as i64;
    if a_max < 1 {
        return Err(Error::WindowTooSmall("window smaller than one square".into()));
    }
    let r = sample.params.r;
    let squares = -a_max..a_max;
    let admissible = |streets: &[f64]| -> Vec<Option<(usize, f64)>> {
        squares
            .clone()
            .map(|a| {
                let lo = n * a as f64 + 1.0;
                let hi = n * (a + 1) as f64 - 1.0;
                let k = streets.partition_point(|&s| s < lo);
                streets.get(k).filter(|&&s| s < hi).map(|&s| (k, s))
            })
            .collect()
    };
    let xs = admissible(&sample.v_streets);
    let ys = admissible(&sample.h_streets);
    let breaks = |chosen: &[Option<(usize, f64)>]| -> Vec<f64> {
        squares.clone().zip(chosen).map(|(a, c)| c.map_or(n * a as f64 + 1.0, |(_, s)| s)).collect()
    };
    let x_break = breaks(&xs);
    let y_break = breaks(&ys);
    let mut along_v: Vec<Vec<f64>> = vec![Vec::new(); sample.v_streets.len()];
    let mut along_h: Vec<Vec<f64>> = vec![Vec::new(); sample.h_streets.len()];
    for q in &sample.pedestrians {
        match q.axis {
            Axis::Vertical => along_v[q.street as usize].push(q.y),
            Axis::Horizontal => along_h[q.street as usize].push(q.x),
        }
    }
    for v in along_v.iter_mut().chain(along_h.iter_mut()) {
        v.sort_by(f64::total_cmp);
    }
    let rect = Rect::new(-a_max, a_max - 1, -a_max, a_max - 1);
    let mut lat =
        UnitLattice::new(rect, xs.iter().map(Option::is_some).collect(), ys.iter().map(Option::is_some).collect());
    let idx = |a: i64| (a + a_max) as usize;
    for b in rect.y0..=rect.y1 {
        let Some((street, _)) = ys[idx(b)] else { continue };
        for a in rect.x0..rect.x1 {
            if line_covered(&along_h[street], x_break[idx(a)], x_break[idx(a + 1)], r) {
                lat.links.h.set(a, b, true);
            }
        }
    }
    for a in rect.x0..=rect.x1 {
        let Some((street, _)) = xs[idx(a)] else { continue };
        for b in rect.y0..rect.y1 {
            if line_covered(&along_v[street], y_break[idx(b)], y_break[idx(b + 1)], r) {
                lat.links.v.set(a, b, true);
            }
        }
    }
    Ok(Scheme2Report {
        n_mu,
        lattice: lat,
        x_street: xs.iter().map(|c| c.map(|(_, s)| s)).collect(),
        y_street: ys.iter().map(|c| c.map(|(_, s)| s)).collect(),
        x_break,
        y_break,
    })
}

/// `ln(1 - e^{-x})` for `x > 0`.
fn ln_one_minus_exp_neg(x: f64) -> f64 {
    (-(-x).exp()).ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scheme1Params {
    pub lambda: f64,
    pub p_target: f64,
    pub delta: f64,
    pub n_lambda: u64,
    pub mu_c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scheme2Params {
    pub r: f64,
    pub mu: f64,
    pub p_target: f64,
    pub delta: f64,
    pub n_mu: u64,
    pub lambda_c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scheme3Params {
    pub mu_x: f64,
    pub lambda: f64,
    pub p_target: f64,
    pub delta: f64,
    pub n_lx: u64,
    pub n_mu: u64,
    pub n_ly: u64,
    pub mu_c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FineParams {
    pub r: f64,
    pub lambda: f64,
    pub mu_max: f64,
    pub kappa: u32,
    /// Closed-bond base probability `1 - (1 - e^{-2 r lambda})^kappa`.
    pub p: f64,
    /// Smallest integer with `p^tau <= e^{-2 r lambda}`.
    pub tau: u64,
    pub s: u64,
    /// Tail parameter: `P(N >= l + 1) <= q^l`.
    pub q: f64,
}

/// One defining inequality with both sides evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct Inequality {
    pub name: &'static str,
    pub lhs: f64,
    pub relation: &'static str,
    pub rhs: f64,
    pub holds: bool,
}

impl Inequality {
    fn ge(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Self { name, lhs, relation: ">=", rhs, holds: lhs >= rhs - TOL * rhs.abs().max(1.0) }
    }

    fn le(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Self { name, lhs, relation: "<=", rhs, holds: lhs <= rhs + TOL * rhs.abs().max(1.0) }
    }

    pub fn residual(&self) -> f64 {
        if self.relation == ">=" {
            self.lhs - self.rhs
        } else {
            self.rhs - self.lhs
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SchemeParams {
    Scheme1(Scheme1Params),
    Scheme2(Scheme2Params),
    Scheme3(Scheme3Params),
    Fine(FineParams),
}

fn out_of_range(name: &str) -> Error {
    Error::Domain(format!("{name} exceeds 2^53 for these parameters"))
}

fn check_thresholds(p_target: f64, delta: f64) -> Result<()> {
    check_unit_open("p_target", p_target)?;
    check_unit_open("delta", delta)
}

/// `n_lambda`: fewest streets giving a unit link probability `>= p_target`;
/// `mu_c`: smallest street intensity with `P(Poisson(mu) <= n_lambda) <= delta`.
pub fn params_scheme1(r: f64, lambda: f64, p_target: f64, delta: f64) -> Result<Scheme1Params> {
    check_positive("r", r)?;
    check_positive("lambda", lambda)?;
    check_thresholds(p_target, delta)?;
    let n_lambda = smallest_integer(1, |n| -(-(n as f64) * lambda).exp_m1() >= p_target - TOL)
        .ok_or_else(|| out_of_range("n_lambda"))?;
    let ln_delta = delta.ln();
    let mu_c = bisect_threshold(1.0, |mu| ln_poisson_cdf(n_lambda, mu) <= ln_delta);
    Ok(Scheme1Params { lambda, p_target, delta, n_lambda, mu_c })
}

/// `n_mu`: smallest integer `> 2` with `e^{-(n-2) mu} <= delta`; `lambda_c`:
/// smallest intensity whose line-covering bound over `b = 2 n_mu - 2` reaches
/// `p_target`.
pub fn params_scheme2(r: f64, mu: f64, p_target: f64, delta: f64) -> Result<Scheme2Params> {
    check_positive("r", r)?;
    check_positive("mu", mu)?;
    check_thresholds(p_target, delta)?;
    let ln_delta = delta.ln();
    let n_mu = smallest_integer(3, |n| -((n - 2) as f64) * mu <= ln_delta + TOL * ln_delta.abs())
        .ok_or_else(|| out_of_range("n_mu"))?;
    let b = (2 * n_mu - 2) as f64;
    let ln_p = p_target.ln();
    let lambda_c = bisect_threshold(1.0, |l| ln_line_cover_bound(r, l, b) >= ln_p);
    Ok(Scheme2Params { r, mu, p_target, delta, n_mu, lambda_c })
}

/// Computed in order `n_lx`, `n_mu`, `n_ly`, `mu_c`, each the smallest value
/// satisfying its inequality given the earlier ones.
pub fn params_scheme3(r: f64, mu_x: f64, lambda: f64, p_target: f64, delta: f64) -> Result<Scheme3Params> {
    check_positive("r", r)?;
    check_positive("mu_x", mu_x)?;
    check_positive("lambda", lambda)?;
    check_thresholds(p_target, delta)?;
    let ln_delta = delta.ln();
    let ln_p = p_target.ln();
    let n_lx = smallest_integer(1, |n| -(-(n as f64) * lambda).exp_m1() >= p_target - TOL)
        .ok_or_else(|| out_of_range("n_lx"))?;
    let ln_fail = ln_poisson_cdf(n_lx, mu_x);
    let n_mu = smallest_integer(1, |n| n as f64 * ln_fail <= ln_delta + TOL * ln_delta.abs())
        .ok_or_else(|| out_of_range("n_mu"))?;
    let n_ly =
        smallest_integer(1, |n| (2 * n_mu) as f64 * ln_one_minus_exp_neg(n as f64 * lambda) >= ln_p - TOL * ln_p.abs())
            .ok_or_else(|| out_of_range("n_ly"))?;
    let mu_c = bisect_threshold(1.0, |mu| ln_poisson_cdf(2 * n_ly, mu) <= ln_delta);
    Ok(Scheme3Params { mu_x, lambda, p_target, delta, n_lx, n_mu, n_ly, mu_c })
}

/// Constants of the fine highway-model scheme.
pub fn params_fine(r: f64, lambda: f64, mu_max: f64, kappa: u32) -> Result<FineParams> {
    check_positive("r", r)?;
    check_positive("lambda", lambda)?;
    check_positive("mu", mu_max)?;
    if kappa == 0 {
        return Err(Error::InvalidParameter("kappa must be >= 1".into()));
    }
    let x = 2.0 * r * lambda;
    let p = -(kappa as f64 * ln_one_minus_exp_neg(x)).exp_m1();
    let ln_p = p.ln();
    let tau = smallest_integer(1, |t| t as f64 * ln_p <= -x * (1.0 - TOL)).ok_or_else(|| out_of_range("tau"))?;
    let s = 2 * tau - 1;
    let q = (ln_one_minus_exp_neg(kappa as f64 * 2.0 * r * mu_max) / s as f64).exp();
    Ok(FineParams { r, lambda, mu_max, kappa, p, tau, s, q })
}

impl SchemeParams {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeParams::Scheme1(_) => "scheme1",
            SchemeParams::Scheme2(_) => "scheme2",
            SchemeParams::Scheme3(_) => "scheme3",
            SchemeParams::Fine(_) => "fine",
        }
    }

    /// Defining inequalities, evaluated at the stored values.
    pub fn checks(&self) -> Vec<Inequality> {
        match *self {
            SchemeParams::Scheme1(s) => vec![
                Inequality::ge(
                    "1-exp(-n_lambda*lambda) >= p_target",
                    -(-(s.n_lambda as f64) * s.lambda).exp_m1(),
                    s.p_target,
                ),
                Inequality::le(
                    "P(Poisson(mu_c) <= n_lambda) <= delta",
                    ln_poisson_cdf(s.n_lambda, s.mu_c).exp(),
                    s.delta,
                ),
            ],
            SchemeParams::Scheme2(s) => vec![
                Inequality::le("exp(-(n_mu-2)*mu) <= delta", (-((s.n_mu - 2) as f64) * s.mu).exp(), s.delta),
                Inequality::ge(
                    "line_cover_bound(r, lambda_c, 2n_mu-2) >= p_target",
                    ln_line_cover_bound(s.r, s.lambda_c, (2 * s.n_mu - 2) as f64).exp(),
                    s.p_target,
                ),
            ],
            SchemeParams::Scheme3(s) => vec![
                Inequality::ge("1-exp(-n_lx*lambda) >= p_target", -(-(s.n_lx as f64) * s.lambda).exp_m1(), s.p_target),
                Inequality::le(
                    "P(Poisson(mu_x) <= n_lx)^n_mu <= delta",
                    (s.n_mu as f64 * ln_poisson_cdf(s.n_lx, s.mu_x)).exp(),
                    s.delta,
                ),
                Inequality::ge(
                    "(1-exp(-n_ly*lambda))^(2 n_mu) >= p_target",
                    ((2 * s.n_mu) as f64 * ln_one_minus_exp_neg(s.n_ly as f64 * s.lambda)).exp(),
                    s.p_target,
                ),
                Inequality::le(
                    "P(Poisson(mu_c) <= 2 n_ly) <= delta",
                    ln_poisson_cdf(2 * s.n_ly, s.mu_c).exp(),
                    s.delta,
                ),
            ],
            SchemeParams::Fine(f) => {
                vec![Inequality::le("p^tau <= exp(-2 r lambda)", f.p.powf(f.tau as f64), (-2.0 * f.r * f.lambda).exp())]
            }
        }
    }

    /// `key=value` lines followed by one `check=` line per inequality.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let kv: Vec<(&str, String)> = match *self {
            SchemeParams::Scheme1(s) => vec![
                ("lambda", s.lambda.to_string()),
                ("p_target", s.p_target.to_string()),
                ("delta", s.delta.to_string()),
                ("n_lambda", s.n_lambda.to_string()),
                ("mu_c", s.mu_c.to_string()),
            ],
            SchemeParams::Scheme2(s) => vec![
                ("r", s.r.to_string()),
                ("mu", s.mu.to_string()),
                ("p_target", s.p_target.to_string()),
                ("delta", s.delta.to_string()),
                ("n_mu", s.n_mu.to_string()),
                ("lambda_c", s.lambda_c.to_string()),
            ],
            SchemeParams::Scheme3(s) => vec![
                ("mu_x", s.mu_x.to_string()),
                ("lambda", s.lambda.to_string()),
                ("p_target", s.p_target.to_string()),
                ("delta", s.delta.to_string()),
                ("n_lx", s.n_lx.to_string()),
                ("n_mu", s.n_mu.to_string()),
                ("n_ly", s.n_ly.to_string()),
                ("mu_c", s.mu_c.to_string()),
            ],
            SchemeParams::Fine(f) => vec![
                ("r", f.r.to_string()),
                ("lambda", f.lambda.to_string()),
                ("mu_max", f.mu_max.to_string()),
                ("kappa", f.kappa.to_string()),
                ("p", f.p.to_string()),
                ("tau", f.tau.to_string()),
                ("s", f.s.to_string()),
                ("q", f.q.to_string()),
            ],
        };
        let _ = writeln!(out, "scheme={}", self.name());
        for (k, v) in kv {
            let _ = writeln!(out, "{k}={v}");
        }
        for c in self.checks() {
            let _ = writeln!(
                out,
                "check={} ; lhs={} ; rhs={} ; residual={} ; holds={}",
                c.name,
                c.lhs,
                c.rhs,
                c.residual(),
                c.holds
            );
        }
        out
    }
}

fn ln_line_cover_bound(r: f64, lambda: f64, d: f64) -> f64 {
    let n = (2.0 * d / r).floor();
    if n == 0.0 {
        0.0
    } else {
        n * ln_one_minus_exp_neg(r * lambda / 2.0)
    }
}

/// `(1 - e^{-r lambda / 2})^{floor(2D / r)}`, a lower bound on the chance
/// that a rate-`lambda` Poisson process covers `[0, D]` with radius `r`.
pub fn line_cover_bound(r: f64, lambda: f64, d: f64) -> Result<f64> {
    check_positive("r", r)?;
    check_positive("lambda", lambda)?;
    check_positive("D", d)?;
    Ok(ln_line_cover_bound(r, lambda, d).exp())
}

/// Returns `(1 - prod(1 - p_i), min{1 - e^{-c}, (a / c)(1 - e^{-c})})` with
/// `a = sum p_i`; the first never falls below the second.
pub fn technical_estimate(c: f64, ps: &[f64]) -> Result<(f64, f64)> {
    check_positive("c", c)?;
    if ps.is_empty() {
        return Err(Error::EmptyInput("probability list is empty".into()));
    }
    for &p in ps {
        check_unit_open("p_i", p)?;
    }
    let ln_none: f64 = ps.iter().map(|p| (-p).ln_1p()).sum();
    let left = -ln_none.exp_m1();
    let a: f64 = ps.iter().sum();
    let g = -(-c).exp_m1();
    Ok((left, g.min(a / c * g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointproc::{MgmParams, Pedestrian, Window};

    #[test]
    fn cluster_example() {
        let c = enumerate_r_clusters(&[-1.0, 0.5, 1.2, 3.0], 0.5, 10.0).unwrap();
        assert_eq!(c.get(0).unwrap(), &[0.5, 1.2]);
        assert_eq!(c.get(1).unwrap(), &[3.0]);
        assert_eq!(c.get(-1).unwrap(), &[-1.0]);
        assert_eq!(c.member, vec![-1, 0, 0, 1]);
        let c = enumerate_r_clusters(&[0.5], 3.0, 10.0).unwrap();
        assert_eq!(c.get(0).unwrap(), &[0.5]);
        // gap of exactly 2r separates
        let c = enumerate_r_clusters(&[0.5, 1.5], 0.5, 10.0).unwrap();
        assert_eq!(c.len(), 2);
        assert!(matches!(enumerate_r_clusters(&[-2.0, -1.0], 0.5, 10.0), Err(Error::EmptyInput(_))));
        // cluster straddling the origin with positive max gets index 0
        let c = enumerate_r_clusters(&[-3.0, -0.2, 0.3], 0.5, 10.0).unwrap();
        assert_eq!(c.get(0).unwrap(), &[-0.2, 0.3]);
        assert_eq!(c.first, -1);
    }

    #[test]
    fn partial_flags() {
        let c = enumerate_r_clusters(&[-9.5, 0.5, 9.5], 0.5, 10.0).unwrap();
        assert_eq!(c.partial, vec![true, false, true]);
        assert_eq!(c.complete_range(), Some((0, 0)));
    }

    fn engineered(peds: &[(f64, f64, Axis, u32)]) -> MgmSample {
        MgmSample {
            params: MgmParams::new(0.5, 1.0, 1.0, 1.0).unwrap(),
            window: Window::new(10.0).unwrap(),
            v_streets: vec![-3.0, 0.5, 3.0, 6.0],
            h_streets: vec![-3.0, 0.5, 3.0, 6.0],
            pedestrians: peds.iter().map(|&(x, y, axis, street)| Pedestrian { x, y, axis, street }).collect(),
        }
    }

    #[test]
    fn coarse_rule_single_pedestrian() {
        let empty = mgm_to_rhm(&engineered(&[])).unwrap();
        assert_eq!(empty.bonds.count_open(), 0);
        assert_eq!(empty.env.rect(), Rect::new(-1, 2, -1, 2));
        let s = engineered(&[(0.5 + 0.5, 0.5, Axis::Horizontal, 1)]);
        let c = mgm_to_rhm(&s).unwrap();
        assert!(c.bonds.h_open(0, 0));
        assert_eq!(c.bonds.count_open(), 1);
        assert_eq!(c.rectangle(0, 0), Some((0.5, 0.5, 0.5, 0.5)));
        // fine scheme with kappa = 1 agrees
        assert_eq!(mgm_to_rhm_fine(&s, 1).unwrap().bonds, c.bonds);
    }

    #[test]
    fn fine_constants() {
        let f = params_fine(1.0, 1.0, 1.0, 2).unwrap();
        let p = 1.0 - (1.0 - (-2.0f64).exp()).powi(2);
        assert!((f.p - p).abs() < 1e-15);
        assert!((f.p - 0.252355).abs() < 1e-6);
        assert_eq!(f.tau, (-2.0 / p.ln()).ceil() as u64);
        assert_eq!((f.tau, f.s), (2, 3));
        let one = params_fine(1.0, 3.0, 1.0, 1).unwrap();
        assert_eq!(one.tau, 1);
        assert!(SchemeParams::Fine(f).checks().iter().all(|c| c.holds));
    }

    #[test]
    fn calculator_examples() {
        assert_eq!(params_scheme1(1.5, 2f64.ln(), 0.5, 0.01).unwrap().n_lambda, 1);
        let s = params_scheme1(1.5, 1.0, 0.99, 0.01).unwrap();
        assert_eq!(s.n_lambda, 5);
        assert!(ln_poisson_cdf(5, s.mu_c) <= 0.01f64.ln());
        assert!(ln_poisson_cdf(5, s.mu_c - 1e-6) > 0.01f64.ln());
        let delta: f64 = 0.01;
        assert_eq!(params_scheme2(1.5, (1.0 / delta).ln(), 0.9, delta).unwrap().n_mu, 3);
        assert_eq!(params_scheme3(1.5, 1.0, 2f64.ln(), 0.5, 0.01).unwrap().n_lx, 1);
    }

    #[test]
    fn line_cover_values() {
        assert_eq!(line_cover_bound(1.0, 1.0, 0.4).unwrap(), 1.0);
        assert!((line_cover_bound(1.0, 2.0 * 2f64.ln(), 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(line_covered(&[0.5, 1.4, 2.2], 0.0, 2.5, 0.6));
        assert!(!line_covered(&[0.5, 1.8, 2.2], 0.0, 2.5, 0.6));
        assert!(!line_covered(&[], 0.0, 1.0, 5.0));
        // points outside the segment do not count
        assert!(!line_covered(&[-0.1, 0.7], 0.0, 1.0, 0.5));
    }

    #[test]
    fn technical_estimate_cases() {
        let c = 1.3;
        let (left, bound) = technical_estimate(c, &[1.0 - (-c).exp()]).unwrap();
        assert!(left >= bound - 1e-15);
        let (left, bound) = technical_estimate(2.0, &[1e-9, 1e-9]).unwrap();
        assert!(left < 1e-8 && bound < 1e-8 && left >= bound);
    }

    #[test]
    fn scheme_domain_errors() {
        let mut s = engineered(&[]);
        s.params = MgmParams::new(1.4, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(mgm_to_rsl_scheme1(&s, 1), Err(Error::Domain(_))));
        assert!(matches!(mgm_to_rsl_scheme2(&s, 2), Err(Error::Domain(_))));
    }
}
