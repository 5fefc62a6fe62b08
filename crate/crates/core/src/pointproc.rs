//! Random streets and pedestrians.
//!
//! Vertical streets are a Poisson process of intensity `mu_x` on the x-axis,
//! horizontal streets one of intensity `mu_y` on the y-axis, and every street
//! carries an independent Poisson process of pedestrians of intensity
//! `lambda` per unit length. Everything is observed in `[-W, W]^2`.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{check_positive, Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MgmParams {
    pub r: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub lambda: f64,
}

impl MgmParams {
    pub fn new(r: f64, mu_x: f64, mu_y: f64, lambda: f64) -> Result<Self> {
        let p = Self { r, mu_x, mu_y, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("r", self.r)?;
        check_positive("mu_x", self.mu_x)?;
        check_positive("mu_y", self.mu_y)?;
        check_positive("lambda", self.lambda)
    }

    /// Pedestrians per unit area.
    pub fn intensity(&self) -> f64 {
        self.lambda * (self.mu_x + self.mu_y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub half_width: f64,
}

impl Window {
    pub fn new(half_width: f64) -> Result<Self> {
        check_positive("window half-width", half_width)?;
        Ok(Self { half_width })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Street `x = const`.
    Vertical,
    /// Street `y = const`.
    Horizontal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pedestrian {
    pub x: f64,
    pub y: f64,
    pub axis: Axis,
    /// Index into `v_streets` or `h_streets` depending on `axis`.
    pub street: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MgmSample {
    pub params: MgmParams,
    pub window: Window,
    pub v_streets: Vec<f64>,
    pub h_streets: Vec<f64>,
    pub pedestrians: Vec<Pedestrian>,
}

impl MgmSample {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.pedestrians.iter().map(|p| (p.x, p.y)).collect()
    }

    /// Checks the structural invariants: sorted streets inside the window and
    /// every pedestrian exactly on its street.
    pub fn check_invariants(&self) -> Result<()> {
        let w = self.window.half_width;
        for (name, s) in [("v_streets", &self.v_streets), ("h_streets", &self.h_streets)] {
            if s.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::InvalidParameter(format!("{name} not strictly sorted")));
            }
            if s.iter().any(|&x| !(-w..=w).contains(&x)) {
                return Err(Error::InvalidParameter(format!("{name} outside window")));
            }
        }
        for (k, p) in self.pedestrians.iter().enumerate() {
            let on_street = match p.axis {
                Axis::Vertical => self.v_streets.get(p.street as usize) == Some(&p.x),
                Axis::Horizontal => self.h_streets.get(p.street as usize) == Some(&p.y),
            };
            if !on_street {
                return Err(Error::InvalidParameter(format!("pedestrian {k} is off its street")));
            }
            if !(-w..=w).contains(&p.x) || !(-w..=w).contains(&p.y) {
                return Err(Error::InvalidParameter(format!("pedestrian {k} outside window")));
            }
        }
        Ok(())
    }

    pub fn count_in_rect(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> usize {
        self.pedestrians.iter().filter(|p| p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1).count()
    }
}

/// Homogeneous Poisson process of intensity `rate` on `[a, b)`, sorted.
pub fn sample_poisson_1d<R: Rng + ?Sized>(rate: f64, a: f64, b: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::InvalidParameter(format!("rate must be finite and >= 0, got {rate}")));
    }
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidParameter(format!("need a < b, got [{a}, {b})")));
    }
    let mean = rate * (b - a);
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let n = Poisson::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as usize;
    let mut pts: Vec<f64> = (0..n)
        .map(|_| {
            let x = a + (b - a) * rng.random::<f64>();
            if x < b {
                x
            } else {
                a
            }
        })
        .collect();
    pts.sort_by(f64::total_cmp);
    Ok(pts)
}

/// A sample drawn at maximal intensities where every street and pedestrian
/// carries a uniform mark. Thinning by marks realizes any smaller intensity,
/// so realizations at different parameters share their randomness and are
/// monotone in `mu_x`, `mu_y` and `lambda`.
#[derive(Clone, Debug)]
pub struct CoupledMgm {
    pub max: MgmParams,
    pub window: Window,
    v: Vec<(f64, f64)>,
    h: Vec<(f64, f64)>,
    /// (pedestrian in max-sample street indexing, mark)
    peds: Vec<(Pedestrian, f64)>,
}

fn marked_streets(rate: f64, w: f64, stream: RngStream) -> Vec<(f64, f64)> {
    let mut rng = stream.rng();
    let xs = sample_poisson_1d(rate, -w, w, &mut rng).expect("validated intensity");
    let mut out: Vec<(f64, f64)> = xs.into_iter().map(|x| (x, rng.random::<f64>())).collect();
    // Bitwise-equal coordinates are a null event; keep the list strictly sorted anyway.
    out.dedup_by(|b, a| a.0 == b.0);
    out
}

impl CoupledMgm {
    pub fn sample(max: MgmParams, window: Window, stream: RngStream) -> Result<Self> {
        max.validate()?;
        let w = window.half_width;
        check_positive("window half-width", w)?;
        let v = marked_streets(max.mu_x, w, stream.child(0));
        let h = marked_streets(max.mu_y, w, stream.child(1));
        let mut peds = Vec::new();
        for (axis, streets, tag) in [(Axis::Vertical, &v, 2u64), (Axis::Horizontal, &h, 3u64)] {
            let base = stream.child(tag);
            for (k, &(c, _)) in streets.iter().enumerate() {
                let mut rng = base.child(k as u64).rng();
                let along = sample_poisson_1d(max.lambda, -w, w, &mut rng)?;
                for t in along {
                    let (x, y) = match axis {
                        Axis::Vertical => (c, t),
                        Axis::Horizontal => (t, c),
                    };
                    let mark = rng.random::<f64>();
                    peds.push((Pedestrian { x, y, axis, street: k as u32 }, mark));
                }
            }
        }
        Ok(Self { max, window, v, h, peds })
    }

    /// Realization at `params`, which must not exceed the maximal intensities
    /// and must share the radius.
    pub fn realize(&self, params: MgmParams) -> Result<MgmSample> {
        params.validate()?;
        if params.mu_x > self.max.mu_x || params.mu_y > self.max.mu_y || params.lambda > self.max.lambda {
            return Err(Error::InvalidParameter("realized intensities must not exceed the coupled maxima".into()));
        }
        let keep = |mark: f64, num: f64, den: f64| num == den || mark < num / den;
        let thin = |streets: &[(f64, f64)], num: f64, den: f64| {
            let mut remap = vec![u32::MAX; streets.len()];
            let mut kept = Vec::new();
            for (k, &(c, m)) in streets.iter().enumerate() {
                if keep(m, num, den) {
                    remap[k] = kept.len() as u32;
                    kept.push(c);
                }
            }
            (kept, remap)
        };
        let (v_streets, v_map) = thin(&self.v, params.mu_x, self.max.mu_x);
        let (h_streets, h_map) = thin(&self.h, params.mu_y, self.max.mu_y);
        let pedestrians = self
            .peds
            .iter()
            .filter(|(_, m)| keep(*m, params.lambda, self.max.lambda))
            .filter_map(|(p, _)| {
                let idx = match p.axis {
                    Axis::Vertical => v_map[p.street as usize],
                    Axis::Horizontal => h_map[p.street as usize],
                };
                (idx != u32::MAX).then_some(Pedestrian { street: idx, ..*p })
            })
            .collect();
        Ok(MgmSample { params, window: self.window, v_streets, h_streets, pedestrians })
    }
}

/// One realization of the model in `[-W, W]^2`.
pub fn sample_mgm(params: MgmParams, window: Window, stream: RngStream) -> Result<MgmSample> {
    CoupledMgm::sample(params, window, stream)?.realize(params)
}

/// Multiplies all coordinates by `alpha`. A sample with parameters
/// `(r/alpha, alpha mu_x, alpha mu_y, alpha lambda)` becomes one with
/// parameters `(r, mu_x, mu_y, lambda)` in a window `alpha` times larger.
pub fn scale_sample(sample: &MgmSample, alpha: f64) -> Result<MgmSample> {
    check_positive("alpha", alpha)?;
    let p = sample.params;
    let params = MgmParams::new(p.r * alpha, p.mu_x / alpha, p.mu_y / alpha, p.lambda / alpha)?;
    let window = Window::new(sample.window.half_width * alpha)?;
    Ok(MgmSample {
        params,
        window,
        v_streets: sample.v_streets.iter().map(|x| x * alpha).collect(),
        h_streets: sample.h_streets.iter().map(|y| y * alpha).collect(),
        pedestrians: sample.pedestrians.iter().map(|q| Pedestrian { x: q.x * alpha, y: q.y * alpha, ..*q }).collect(),
    })
}

/// Expected number of pedestrians in an `a x b` rectangle.
pub fn expected_points(params: &MgmParams, a: f64, b: f64) -> Result<f64> {
    check_positive("a", a)?;
    check_positive("b", b)?;
    Ok(params.intensity() * a * b)
}

// ---------------------------------------------------------------------------
// text format

pub fn write_sample<W: Write>(sample: &MgmSample, out: &mut W) -> std::io::Result<()> {
    let p = &sample.params;
    writeln!(out, "# mgm sample v1")?;
    writeln!(out, "PARAMS {:.16e} {:.16e} {:.16e} {:.16e}", p.r, p.mu_x, p.mu_y, p.lambda)?;
    writeln!(out, "WINDOW {:.16e}", sample.window.half_width)?;
    writeln!(out, "VSTREETS {}", sample.v_streets.len())?;
    for x in &sample.v_streets {
        writeln!(out, "{x:.16e}")?;
    }
    writeln!(out, "HSTREETS {}", sample.h_streets.len())?;
    for y in &sample.h_streets {
        writeln!(out, "{y:.16e}")?;
    }
    writeln!(out, "PEDS {}", sample.pedestrians.len())?;
    for q in &sample.pedestrians {
        let a = match q.axis {
            Axis::Vertical => 'V',
            Axis::Horizontal => 'H',
        };
        writeln!(out, "{:.16e} {:.16e} {} {}", q.x, q.y, a, q.street)?;
    }
    Ok(())
}

pub fn read_sample<R: BufRead>(input: R) -> Result<MgmSample> {
    let mut lines = input
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty() && !s.starts_with('#')).unwrap_or(true));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((_, Err(e))) => Err(Error::Io(e)),
            None => Err(Error::Parse { line: 0, msg: format!("unexpected end of input, expected {what}") }),
        }
    };
    let perr = |line: usize, msg: String| Error::Parse { line, msg };
    let float = |line: usize, s: &str| s.parse::<f64>().map_err(|e| perr(line, format!("{s:?}: {e}")));

    let header = |tag: &str, (line, text): (usize, String)| -> Result<(usize, Vec<String>)> {
        let mut it = text.split_whitespace();
        if it.next() != Some(tag) {
            return Err(perr(line, format!("expected section {tag}")));
        }
        Ok((line, it.map(str::to_owned).collect()))
    };

    let (l, f) = header("PARAMS", next("PARAMS")?)?;
    if f.len() != 4 {
        return Err(perr(l, "PARAMS needs 4 values".into()));
    }
    let params = MgmParams::new(float(l, &f[0])?, float(l, &f[1])?, float(l, &f[2])?, float(l, &f[3])?)?;
    let (l, f) = header("WINDOW", next("WINDOW")?)?;
    let window = Window::new(float(l, f.first().ok_or_else(|| perr(l, "missing width".into()))?)?)?;

    let mut read_list = |tag: &str| -> Result<Vec<f64>> {
        let (l, f) = header(tag, next(tag)?)?;
        let n: usize = f.first().and_then(|s| s.parse().ok()).ok_or_else(|| perr(l, "bad count".into()))?;
        (0..n)
            .map(|_| {
                let (l, t) = next("coordinate")?;
                float(l, t.trim())
            })
            .collect()
    };
    let v_streets = read_list("VSTREETS")?;
    let h_streets = read_list("HSTREETS")?;
    let (l, f) = header("PEDS", next("PEDS")?)?;
    let n: usize = f.first().and_then(|s| s.parse().ok()).ok_or_else(|| perr(l, "bad count".into()))?;
    let mut pedestrians = Vec::with_capacity(n);
    for _ in 0..n {
        let (l, t) = next("pedestrian")?;
        let f: Vec<&str> = t.split_whitespace().collect();
        if f.len() != 4 {
            return Err(perr(l, "pedestrian needs x y axis street".into()));
        }
        let axis = match f[2] {
            "V" => Axis::Vertical,
            "H" => Axis::Horizontal,
            other => return Err(perr(l, format!("unknown axis {other:?}"))),
        };
        let street = f[3].parse().map_err(|e| perr(l, format!("street index: {e}")))?;
        pedestrians.push(Pedestrian { x: float(l, f[0])?, y: float(l, f[1])?, axis, street });
    }
    let s = MgmSample { params, window, v_streets, h_streets, pedestrians };
    s.check_invariants()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> MgmParams {
        MgmParams::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(MgmParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(MgmParams::new(1.0, 1.0, f64::NAN, 1.0).is_err());
        assert!(MgmParams::new(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(Window::new(-1.0).is_err());
    }

    #[test]
    fn poisson_1d_edge_cases() {
        let mut rng = RngStream::new(1, 1).rng();
        assert!(sample_poisson_1d(0.0, 0.0, 10.0, &mut rng).unwrap().is_empty());
        assert!(sample_poisson_1d(f64::INFINITY, 0.0, 1.0, &mut rng).is_err());
        assert!(sample_poisson_1d(1.0, 2.0, 1.0, &mut rng).is_err());
        let pts = sample_poisson_1d(5.0, -3.0, 3.0, &mut rng).unwrap();
        assert!(pts.windows(2).all(|w| w[0] <= w[1]));
        assert!(pts.iter().all(|&x| (-3.0..3.0).contains(&x)));
    }

    #[test]
    fn sample_is_deterministic_and_valid() {
        let w = Window::new(5.0).unwrap();
        let a = sample_mgm(unit(), w, RngStream::new(42, 0)).unwrap();
        let b = sample_mgm(unit(), w, RngStream::new(42, 0)).unwrap();
        assert_eq!(a, b);
        a.check_invariants().unwrap();
        let c = sample_mgm(unit(), w, RngStream::new(43, 0)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn coupled_realizations_are_nested() {
        let max = MgmParams::new(1.5, 2.0, 2.0, 3.0).unwrap();
        let c = CoupledMgm::sample(max, Window::new(6.0).unwrap(), RngStream::new(5, 5)).unwrap();
        let lo = c.realize(MgmParams::new(1.5, 1.0, 2.0, 0.5).unwrap()).unwrap();
        let hi = c.realize(MgmParams::new(1.5, 2.0, 2.0, 2.0).unwrap()).unwrap();
        lo.check_invariants().unwrap();
        hi.check_invariants().unwrap();
        for p in &lo.pedestrians {
            assert!(hi.pedestrians.iter().any(|q| q.x == p.x && q.y == p.y));
        }
        assert!(c.realize(MgmParams::new(1.5, 3.0, 2.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn scaling_maps_counts() {
        let src = MgmParams::new(0.5, 2.0, 2.0, 2.0).unwrap();
        let s = sample_mgm(src, Window::new(4.0).unwrap(), RngStream::new(9, 1)).unwrap();
        let t = scale_sample(&s, 2.0).unwrap();
        assert_eq!(t.params, MgmParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        assert_eq!(t.window.half_width, 8.0);
        assert_eq!(t.v_streets.len(), s.v_streets.len());
        assert_eq!(t.pedestrians.len(), s.pedestrians.len());
        t.check_invariants().unwrap();
        assert_eq!(scale_sample(&s, 1.0).unwrap(), s);
        assert!(scale_sample(&s, 0.0).is_err());
    }

    #[test]
    fn expected_points_values() {
        assert_eq!(expected_points(&unit(), 1.0, 1.0).unwrap(), 2.0);
        let half = MgmParams { lambda: 0.5, ..unit() };
        assert_eq!(expected_points(&half, 1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let s = sample_mgm(unit(), Window::new(3.0).unwrap(), RngStream::new(3, 3)).unwrap();
        let mut buf = Vec::new();
        write_sample(&s, &mut buf).unwrap();
        let back = read_sample(&buf[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "PARAMS 1 1 1 1\nWINDOW 2\nVSTREETS 1\nnope\n";
        match read_sample(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
