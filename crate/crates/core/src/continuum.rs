//! Connectivity of the union of open disks of radius `r` around pedestrians.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{check_positive, Error, Result};
use crate::pointproc::{CoupledMgm, MgmParams, MgmSample, Window};
use crate::rng::RngStream;
use crate::stats::BernoulliEstimate;
use crate::unionfind::UnionFind;

/// Union-find over pedestrians plus one virtual node for the origin.
#[derive(Clone, Debug)]
pub struct ClusterIndex {
    uf: UnionFind,
    n_points: usize,
    r: f64,
}

/// Uniform grid of square cells used for neighbour queries.
pub(crate) struct SpatialHash {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl SpatialHash {
    pub(crate) fn new(points: &[(f64, f64)], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (k, &(x, y)) in points.iter().enumerate() {
            cells.entry(Self::key_of(cell, x, y)).or_default().push(k as u32);
        }
        Self { cell, cells }
    }

    fn key_of(cell: f64, x: f64, y: f64) -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    }

    /// Indices of points in the 3x3 block of cells around `(x, y)`.
    pub(crate) fn around(&self, x: f64, y: f64) -> impl Iterator<Item = u32> + '_ {
        let (cx, cy) = Self::key_of(self.cell, x, y);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (cx + dx, cy + dy)))
            .filter_map(|k| self.cells.get(&k))
            .flatten()
            .copied()
    }
}

impl ClusterIndex {
    pub fn build(sample: &MgmSample) -> Self {
        Self::from_points(&sample.points(), sample.params.r)
    }

    /// Two points join iff their distance is `< 2r`; the origin joins a point
    /// iff the point is at distance `< r`.
    pub fn from_points(points: &[(f64, f64)], r: f64) -> Self {
        let n = points.len();
        let mut uf = UnionFind::new(n + 1);
        let hash = SpatialHash::new(points, 2.0 * r);
        let reach2 = 4.0 * r * r;
        for (a, &(x, y)) in points.iter().enumerate() {
            for b in hash.around(x, y) {
                let b = b as usize;
                if b <= a {
                    continue;
                }
                let (dx, dy) = (points[b].0 - x, points[b].1 - y);
                if dx * dx + dy * dy < reach2 {
                    uf.union(a, b);
                }
            }
            if x * x + y * y < r * r {
                uf.union(a, n);
            }
        }
        Self { uf, n_points: n, r }
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn origin_node(&self) -> usize {
        self.n_points
    }

    pub fn connected(&mut self, a: usize, b: usize) -> bool {
        self.uf.same(a, b)
    }

    pub fn class_of(&mut self, a: usize) -> usize {
        self.uf.find(a)
    }

    /// Canonical class label of every point (smallest member index).
    pub fn labels(&mut self) -> Vec<usize> {
        let mut l = self.uf.canonical_labels();
        l.truncate(self.n_points);
        l
    }

    /// Pedestrians in the origin's class; empty if the origin is uncovered.
    pub fn origin_cluster(&mut self) -> Vec<usize> {
        let o = self.uf.find(self.n_points);
        (0..self.n_points).filter(|&k| self.uf.find(k) == o).collect()
    }
}

/// Distance from `(x, y)` to the boundary of `[-n, n]^2`.
pub fn dist_to_square_boundary(x: f64, y: f64, n: f64) -> f64 {
    let (ax, ay) = (x.abs(), y.abs());
    if ax <= n && ay <= n {
        n - ax.max(ay)
    } else {
        let dx = (ax - n).max(0.0);
        let dy = (ay - n).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Whether the origin's occupied component meets the boundary of `[-n, n]^2`.
pub fn origin_reaches(clusters: &mut ClusterIndex, sample: &MgmSample, n: f64) -> Result<bool> {
    check_positive("n", n)?;
    let r = sample.params.r;
    if sample.window.half_width < n + r {
        return Err(Error::WindowTooSmall(format!(
            "window half-width {} < n + r = {}",
            sample.window.half_width,
            n + r
        )));
    }
    for k in clusters.origin_cluster() {
        let p = &sample.pedestrians[k];
        if dist_to_square_boundary(p.x, p.y, n) < r {
            return Ok(true);
        }
    }
    Ok(false)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaEstimate {
    pub n: f64,
    pub replicas: u64,
    pub hits: u64,
    pub theta_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

impl ThetaEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Monte Carlo estimate of the probability that the origin's component
/// reaches the boundary of `[-n, n]^2`. Replica `k` uses `stream.child(k)`.
pub fn estimate_theta(params: &MgmParams, n: f64, replicas: u64, stream: RngStream) -> Result<ThetaEstimate> {
    params.validate()?;
    check_positive("n", n)?;
    if replicas == 0 {
        return Err(Error::InvalidParameter("replicas must be >= 1".into()));
    }
    let window = Window::new(n + params.r)?;
    let hits: u64 = (0..replicas)
        .into_par_iter()
        .map(|k| -> Result<u64> {
            let s = crate::pointproc::sample_mgm(*params, window, stream.child(k))?;
            let mut c = ClusterIndex::build(&s);
            Ok(origin_reaches(&mut c, &s, n)? as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let e = BernoulliEstimate::new(hits, replicas);
    Ok(ThetaEstimate {
        n,
        replicas,
        hits,
        theta_hat: e.estimate,
        ci_low: e.ci_low,
        ci_high: e.ci_high,
        seed: stream.master_seed,
    })
}

/// Lower bound on the probability that the origin's component reaches the
/// boundary of `[-n, n]^2`:
/// `exp(-mu) * sum_s mu^s/s! * (1 - exp(-lambda s))^n`, `mu = min(mu_x, mu_y)`.
/// Requires `r > sqrt 2` so that a pedestrian in a unit cell covers it.
pub fn theta_lower_bound(params: &MgmParams, n: u64) -> Result<f64> {
    params.validate()?;
    if params.r <= std::f64::consts::SQRT_2 {
        return Err(Error::Domain(format!("bound needs r > sqrt(2), got r = {}", params.r)));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let mu = params.mu_x.min(params.mu_y);
    let lambda = params.lambda;
    let ln_mu = mu.ln();
    // s = 0 contributes nothing since (1 - 1)^n = 0.
    let mut ln_pois = -mu; // ln P(Poisson(mu) = s)
    let mut sum = 0.0;
    let mut s: u64 = 0;
    loop {
        s += 1;
        ln_pois += ln_mu - (s as f64).ln();
        let inner = -(-lambda * s as f64).exp_m1(); // 1 - e^{-lambda s}
        sum += (ln_pois + n as f64 * inner.ln()).exp();
        // remaining terms are each <= their Poisson weight; bound the tail
        // by the Poisson tail, which is <= P(s) * mu/(s+1-mu) once s+1 > mu.
        let sf = s as f64;
        if sf + 1.0 > 2.0 * mu {
            let tail = ln_pois.exp() * mu / (sf + 1.0 - mu);
            if tail < 1e-12 * sum || (sum == 0.0 && tail < 1e-300) {
                break;
            }
        }
        if s > 10_000_000 {
            break;
        }
    }
    Ok(sum)
}

/// Decides whether some component of the disks that meet the box
/// `[-w/2, w/2] x [-h/2, h/2]` touches both its left and right sides.
pub fn crosses_box(points: &[(f64, f64)], r: f64, w: f64, h: f64) -> bool {
    let (hx, hy) = (0.5 * w, 0.5 * h);
    let meets_box: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, y)| {
            let dx = (x.abs() - hx).max(0.0);
            let dy = (y.abs() - hy).max(0.0);
            dx * dx + dy * dy < r * r
        })
        .collect();
    let seg_dist2 = |x: f64, y: f64, sx: f64| {
        let dy = (y.abs() - hy).max(0.0);
        (x - sx) * (x - sx) + dy * dy
    };
    let mut idx = ClusterIndex::from_points(&meets_box, r);
    let mut left = vec![false; meets_box.len()];
    for (k, &(x, y)) in meets_box.iter().enumerate() {
        if seg_dist2(x, y, -hx) < r * r {
            let c = idx.class_of(k);
            left[c] = true;
        }
    }
    for (k, &(x, y)) in meets_box.iter().enumerate() {
        if seg_dist2(x, y, hx) < r * r && left[idx.class_of(k)] {
            return true;
        }
    }
    false
}

/// Window that contains every disk able to meet a `w x h` box centred at 0.
pub fn crossing_window(params: &MgmParams, w: f64, h: f64) -> Result<Window> {
    Window::new(0.5 * w.max(h) + params.r)
}

/// Left-right crossing frequency of a `box_w x box_h` box.
pub fn crossing_probability(
    params: &MgmParams,
    box_w: f64,
    box_h: f64,
    replicas: u64,
    stream: RngStream,
) -> Result<BernoulliEstimate> {
    let curve = crossing_curve(params, &[*params], box_w, box_h, replicas, stream)?;
    Ok(curve[0])
}

/// Crossing frequencies at several parameter points under common random
/// numbers: every replica draws one coupled sample at the componentwise
/// maximum of `grid` and thins it to each point. All grid points must share
/// `base.r`.
pub fn crossing_curve(
    base: &MgmParams,
    grid: &[MgmParams],
    box_w: f64,
    box_h: f64,
    replicas: u64,
    stream: RngStream,
) -> Result<Vec<BernoulliEstimate>> {
    check_positive("box width", box_w)?;
    check_positive("box height", box_h)?;
    if replicas == 0 || grid.is_empty() {
        return Err(Error::InvalidParameter("need replicas >= 1 and a nonempty grid".into()));
    }
    for g in grid {
        g.validate()?;
        if g.r != base.r {
            return Err(Error::InvalidParameter("grid points must share the radius".into()));
        }
    }
    let max = MgmParams {
        r: base.r,
        mu_x: grid.iter().map(|g| g.mu_x).fold(0.0, f64::max),
        mu_y: grid.iter().map(|g| g.mu_y).fold(0.0, f64::max),
        lambda: grid.iter().map(|g| g.lambda).fold(0.0, f64::max),
    };
    let window = crossing_window(base, box_w, box_h)?;
    let hits = (0..replicas)
        .into_par_iter()
        .map(|k| -> Result<Vec<u64>> {
            let c = CoupledMgm::sample(max, window, stream.child(k))?;
            grid.iter().map(|g| Ok(crosses_box(&c.realize(*g)?.points(), base.r, box_w, box_h) as u64)).collect()
        })
        .try_reduce(
            || vec![0; grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(hits.into_iter().map(|h| BernoulliEstimate::new(h, replicas)).collect())
}
