#![allow(dead_code)]

use mgm::bands::*;
use mgm::lattice::{BondConfig, BondKind, Rect};
use rand::Rng;

/// Axis sequence on [-2100, 2100]: label-3 singletons at +-2048 and label-2
/// singletons every 64..=100 columns in between, so the only 3 segment is
/// [-2047, 2048] and it splits into 2 segments of width 64..=100.
pub fn level3_axis<R: Rng>(rng: &mut R) -> LabeledSeq {
    let mut seq = LabeledSeq::ones(2100);
    seq.set(-2048, 3);
    seq.set(2048, 3);
    let mut x = -2048 + rng.random_range(64..=100);
    while x <= 2048 - 64 {
        seq.set(x, 2);
        x += rng.random_range(64..=100);
    }
    seq
}

pub struct BoxFixture {
    pub xs: BandState,
    pub ys: BandState,
    pub rect: Rect,
}

pub fn level3_fixture<R: Rng>(rng: &mut R) -> BoxFixture {
    let xs = compute_bands(&level3_axis(rng));
    let ys = compute_bands(&level3_axis(rng));
    BoxFixture { xs, ys, rect: Rect::new(-2047, 2048, -2047, 2048) }
}

fn random_box<R: Rng>(f: &BoxFixture, rng: &mut R) -> (Segment, Segment, Vec<Segment>, Vec<Segment>) {
    let sx = find_segments(&f.xs, 2).unwrap();
    let sy = find_segments(&f.ys, 2).unwrap();
    let sx: Vec<_> = sx.into_iter().filter(|s| f.rect.x0 <= s.lo && s.hi <= f.rect.x1).collect();
    let sy: Vec<_> = sy.into_iter().filter(|s| f.rect.y0 <= s.lo && s.hi <= f.rect.y1).collect();
    let x = sx[rng.random_range(0..sx.len())];
    let y = sy[rng.random_range(0..sy.len())];
    (x, y, sx, sy)
}

/// All bonds of the box open except for 0..=3 random defects: a single
/// closed bond, a cut strip between two sub-boxes, a noisy sub-box, or a
/// closed wall across a sub-box.
pub fn defect_config<R: Rng>(f: &BoxFixture, rng: &mut R) -> BondConfig {
    let mut c = BondConfig::new(BondKind::Rsl, f.rect, true);
    let r = f.rect;
    for _ in 0..rng.random_range(0..=3) {
        match rng.random_range(0..4) {
            0 => {
                let (x, y) = (rng.random_range(r.x0..r.x1), rng.random_range(r.y0..r.y1));
                if rng.random::<bool>() {
                    c.h.set(x, y, false);
                } else {
                    c.v.set(x, y, false);
                }
            }
            1 => {
                let (_, _, sx, sy) = random_box(f, rng);
                if rng.random::<bool>() {
                    let k = rng.random_range(0..sy.len() - 1);
                    let xs = sx[rng.random_range(0..sx.len())];
                    for y in sy[k].hi..sy[k + 1].lo {
                        for x in xs.lo..=xs.hi {
                            c.v.set(x, y, false);
                        }
                    }
                } else {
                    let k = rng.random_range(0..sx.len() - 1);
                    let ys = sy[rng.random_range(0..sy.len())];
                    for x in sx[k].hi..sx[k + 1].lo {
                        for y in ys.lo..=ys.hi {
                            c.h.set(x, y, false);
                        }
                    }
                }
            }
            2 => {
                let (x, y, _, _) = random_box(f, rng);
                for j in y.lo..=y.hi {
                    for i in x.lo..=x.hi {
                        if i < x.hi && rng.random::<f64>() < 0.3 {
                            c.h.set(i, j, false);
                        }
                        if j < y.hi && rng.random::<f64>() < 0.3 {
                            c.v.set(i, j, false);
                        }
                    }
                }
            }
            _ => {
                let (x, y, _, _) = random_box(f, rng);
                let i = rng.random_range(x.lo..x.hi);
                for j in y.lo..=y.hi {
                    c.h.set(i, j, false);
                }
            }
        }
    }
    c
}

/// Random target sets (1 to 3 vertices) on the inside of the top box.
pub fn inside_targets<R: Rng>(f: &BoxFixture, b: &NBox, rng: &mut R) -> Vec<(i64, i64)> {
    let n = rng.random_range(1..=3);
    let mut out = Vec::new();
    while out.len() < n {
        let v = (rng.random_range(-1500..=1500), rng.random_range(-1500..=1500));
        if inside_box(&f.xs, &f.ys, b, v).unwrap() && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}
