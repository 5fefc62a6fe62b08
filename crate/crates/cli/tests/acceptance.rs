//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use mgm::bands::*;
use mgm::continuum::{crossing_curve, estimate_theta, theta_lower_bound, ClusterIndex};
use mgm::discretize::{check_rhm_domination, enumerate_r_clusters, line_cover_bound, line_covered, mgm_to_rhm};
use mgm::lattice::*;
use mgm::pointproc::{sample_mgm, sample_poisson_1d, MgmParams, Window};
use mgm::unionfind::UnionFind;
use mgm::RngStream;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn c1_theta_bound() -> Verdict {
    let t = Instant::now();
    let p = MgmParams::new(1.5, 1.0, 1.0, 1.0).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [2u64, 4, 8] {
        let e = estimate_theta(&p, n as f64, 10_000, RngStream::new(101, n)).unwrap();
        let b = theta_lower_bound(&p, n).unwrap();
        ok &= e.theta_hat >= b - 3.0 * e.half_width();
        parts.push(format!("n={n}: {:.4} vs bound {:.4}", e.theta_hat, b));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(ok && secs < 300.0, format!("{}; {secs:.1}s", parts.join(", ")))
}

fn c2_line_cover() -> Verdict {
    let (r, lambda, d) = (1.0, 3.0, 4.0);
    let bound = line_cover_bound(r, lambda, d).unwrap();
    let mut rng = RngStream::new(102, 0).rng();
    let n = 10_000u64;
    let hits =
        (0..n).filter(|_| line_covered(&sample_poisson_1d(lambda, 0.0, d, &mut rng).unwrap(), 0.0, d, r)).count();
    let f = hits as f64 / n as f64;
    let sigma = (f * (1.0 - f) / n as f64).sqrt();
    verdict(f >= bound - 3.0 * sigma, format!("E_D = {f:.4} vs bound {bound:.4}"))
}

fn c3_scaling() -> Verdict {
    let mut rng = RngStream::new(103, 0).rng();
    let mut worst: f64 = 0.0;
    // rounding of p^(1/alpha) is amplified by the exponent alpha N, so keep
    // alpha N <= 4000 (about 2^-53 * 4000 < 1e-12)
    for _ in 0..100_000 {
        let alpha = 10f64.powf(rng.random_range(-2.0..3.0));
        let n = rng.random_range(1..=((4000.0 / alpha) as u32).clamp(1, 50)) as f64;
        let p: f64 = rng.random_range(1e-6..1.0 - 1e-9);
        let env = LatticeEnv::new(0, vec![n], 0, vec![n]).unwrap();
        let (e2, p2) = rsl_scale(&env, p, alpha).unwrap();
        worst = worst.max((p.powf(n) - p2.powf(e2.n_x[0])).abs());
    }
    let comp = compensate_geometric(0.5).unwrap();
    verdict(worst < 1e-12 && comp == 1000.0, format!("max deviation {worst:.2e}; compensate(0.5) = {comp}"))
}

fn c4_peierls() -> Verdict {
    let targets = [(-1, -1), (0, -1), (-1, 0), (0, 0)];
    let res: Vec<(bool, bool)> = (0..10_000u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(104, k).rng();
            let q = rng.random_range(0.05..0.6);
            let p = rng.random_range(0.2..0.95);
            let env = sample_geometric_env(q, q, 20, &mut rng).unwrap();
            let rhm = sample_rhm_bonds(&env, p, &mut rng).unwrap();
            let dual = dual_transform(&rhm);
            match find_blocking_circuit(&dual, &targets).unwrap() {
                None => (false, true),
                Some(c) => {
                    let ok = validate_circuit(&dual, &c, &targets).is_ok()
                        && Rect::square(1).vertices().all(|(x, y)| c.encloses(x, y, false))
                        && peierls_check(&rhm, &c).unwrap();
                    (true, ok)
                }
            }
        })
        .collect();
    let found = res.iter().filter(|r| r.0).count();
    let bad = res.iter().filter(|r| !r.1).count();
    verdict(found > 0 && bad == 0, format!("{found} circuits found in 10^4 configs, {bad} failed checks"))
}

fn c5_domination() -> Verdict {
    let p = MgmParams::new(1.5, 1.0, 1.0, 1.0).unwrap();
    let reps: Vec<Option<(usize, usize)>> = (0..1000u64)
        .into_par_iter()
        .map(|k| {
            let s = sample_mgm(p, Window::new(25.0).unwrap(), RngStream::new(105, k)).unwrap();
            mgm_to_rhm(&s).ok().map(|c| {
                let r = check_rhm_domination(&s, &c);
                (r.crossings, r.violations)
            })
        })
        .collect();
    let used = reps.iter().flatten().count();
    let crossings: usize = reps.iter().flatten().map(|r| r.0).sum();
    let violations: usize = reps.iter().flatten().map(|r| r.1).sum();
    verdict(
        used > 0 && crossings > 0 && violations == 0,
        format!("{used} couplings, {crossings} gap crossings, {violations} violations"),
    )
}

fn c6_bands() -> Verdict {
    let bad: usize = (0..1000u64)
        .into_par_iter()
        .map(|k| {
            let seq = LabeledSeq::sample_geometric(0.3, 1000, &mut RngStream::new(106, k).rng()).unwrap();
            let st = compute_bands(&seq);
            let rep = check_size_spacing(&st);
            let jumps = st.merges().iter().filter(|m| m.label < m.f_i.max(m.f_j) + 2).count();
            rep.size_violations.len() + rep.spacing_violations.len() + jumps + st.revalidate(&seq).len()
        })
        .sum();
    let mut seq = LabeledSeq::ones(50);
    seq.set(0, 3);
    seq.set(2, 3);
    let fixture = compute_bands(&seq).band_of(0).copied();
    let want = Band { lo: 0, hi: 2, label: 6 };
    verdict(bad == 0 && fixture == Some(want), format!("{bad} violations over 10^3 windows; fixture band {fixture:?}"))
}

fn c7_good_boxes() -> Verdict {
    let res: Vec<(usize, usize, usize)> = (0..1000u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(107, k).rng();
            let f = common::level3_fixture(&mut rng);
            let c = common::defect_config(&f, &mut rng);
            let rep = classify_good_boxes(&f.xs, &f.ys, &c, 3, 2).unwrap();
            let nested = rep.nested_membership().violations;
            let top = &rep.nodes[rep.tops[0]];
            if !top.good {
                return (nested, 0, 0);
            }
            let v = common::inside_targets(&f, &top.nbox, &mut rng);
            let ok = top.crossing.is_some()
                && extract_circuit(&rep, &c, &v).is_ok_and(|circ| validate_circuit(&c, &circ, &v).is_ok());
            (nested, 1, usize::from(!ok))
        })
        .collect();
    let nested: usize = res.iter().map(|r| r.0).sum();
    let tried: usize = res.iter().map(|r| r.1).sum();
    let failed: usize = res.iter().map(|r| r.2).sum();
    verdict(
        nested == 0 && tried > 0 && failed == 0,
        format!("{nested} nested-membership violations; {tried} good top boxes, {failed} circuit failures"),
    )
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut first = BTreeMap::new();
    labels.iter().enumerate().map(|(k, &l)| *first.entry(l).or_insert(k)).collect()
}

fn brute_force_clusters(pts: &[(f64, f64)], r: f64) -> Vec<usize> {
    let mut uf = UnionFind::new(pts.len());
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
            if dx * dx + dy * dy < 4.0 * r * r {
                uf.union(a, b);
            }
        }
    }
    (0..pts.len()).map(|k| uf.find(k)).collect()
}

fn dfs_crossing(c: &BondConfig, rect: Rect, dir: Direction) -> bool {
    let start: Vec<(i64, i64)> = match dir {
        Direction::LeftRight => (rect.y0..=rect.y1).map(|y| (rect.x0, y)).collect(),
        _ => (rect.x0..=rect.x1).map(|x| (x, rect.y0)).collect(),
    };
    let goal = |(x, y): (i64, i64)| match dir {
        Direction::LeftRight => x == rect.x1,
        _ => y == rect.y1,
    };
    let mut seen = vec![false; rect.n_vertices()];
    let mut stack = start;
    while let Some(v) = stack.pop() {
        if std::mem::replace(&mut seen[rect.index(v.0, v.1)], true) {
            continue;
        }
        if goal(v) {
            return true;
        }
        stack.extend(c.open_neighbors(v.0, v.1).filter(|&(a, b)| rect.contains(a, b)));
    }
    false
}

fn interval_union(phi: &[f64], r: f64) -> Vec<usize> {
    let mut end = f64::NEG_INFINITY;
    let mut k = 0;
    phi.iter()
        .enumerate()
        .map(|(i, &x)| {
            if i > 0 && x - r >= end {
                k += 1;
            }
            end = x + r;
            k
        })
        .collect()
}

fn c8_oracles() -> Verdict {
    // continuum clustering, including exact 2r spacings that must stay apart
    let mut cont_bad = 0;
    for k in 0..200u64 {
        let mut rng = RngStream::new(108, k).rng();
        let n = rng.random_range(1..=2000);
        let r = rng.random_range(0.1..2.0);
        let side = rng.random_range(5.0..120.0);
        let mut pts: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random_range(0.0..side), rng.random_range(0.0..side))).collect();
        if k % 4 == 0 {
            pts = (0..n).map(|i| ((i % 40) as f64 * 2.0 * r, (i / 40) as f64 * 2.0 * r)).collect();
        }
        let mut idx = ClusterIndex::from_points(&pts, r);
        if canonical(&idx.labels()) != canonical(&brute_force_clusters(&pts, r)) {
            cont_bad += 1;
        }
    }
    let lattice_bad = (0..1000u64)
        .filter(|&k| {
            let mut rng = RngStream::new(208, k).rng();
            let p = rng.random_range(0.2..0.8);
            let rect = Rect::new(0, 9, 0, 9);
            let mut c = BondConfig::new(BondKind::Rsl, rect, false);
            for (i, j) in c.h.positions().collect::<Vec<_>>() {
                c.h.set(i, j, rng.random::<f64>() < p);
            }
            for (i, j) in c.v.positions().collect::<Vec<_>>() {
                c.v.set(i, j, rng.random::<f64>() < p);
            }
            [Direction::LeftRight, Direction::TopBottom]
                .into_iter()
                .any(|d| crossing_exists(&c, &rect, d).unwrap() != dfs_crossing(&c, rect, d))
        })
        .count();
    let interval_bad = (0..1000u64)
        .filter(|&k| {
            let mut rng = RngStream::new(308, k).rng();
            let r = rng.random_range(0.05..2.0);
            let mut phi: Vec<f64> = (0..rng.random_range(1..400)).map(|_| rng.random_range(-50.0..50.0)).collect();
            phi.sort_by(f64::total_cmp);
            phi.dedup();
            match enumerate_r_clusters(&phi, r, 50.0) {
                Ok(c) => {
                    let got: Vec<usize> = c.member.iter().map(|&m| (m - c.member[0]) as usize).collect();
                    got != interval_union(&phi, r)
                }
                // no cluster with a positive maximum: only possible without positive points
                Err(_) => phi.iter().any(|&x| x > 0.0),
            }
        })
        .count();
    verdict(
        cont_bad + lattice_bad + interval_bad == 0,
        format!("mismatches: continuum {cont_bad}/200, lattice {lattice_bad}/1000, r-clusters {interval_bad}/1000"),
    )
}

fn c9_phase() -> Verdict {
    let grid: Vec<MgmParams> = (1..=50).map(|k| MgmParams::new(1.5, 1.0, 1.0, k as f64 / 10.0).unwrap()).collect();
    let est = crossing_curve(&grid[0], &grid, 10.0, 10.0, 1000, RngStream::new(109, 0)).unwrap();
    let monotone = est.windows(2).all(|w| w[0].hits <= w[1].hits);
    let (lo, hi) = (est[0].estimate, est[est.len() - 1].estimate);
    verdict(
        monotone && lo < 0.05 && hi > 0.95,
        format!("nondecreasing={monotone}; P(lambda=0.1) = {lo:.3}, P(lambda=5) = {hi:.3}"),
    )
}

fn run_cli(args: &[&str], threads: &str, out: &Path) -> Vec<(String, Vec<u8>)> {
    let o = Command::new(env!("CARGO_BIN_EXE_mgm"))
        .args(args)
        .args(["--threads", threads, "--out", out.to_str().unwrap()])
        .output()
        .expect("binary runs");
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    if out.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    } else {
        vec![(String::new(), std::fs::read(out).unwrap())]
    }
}

fn c10_determinism() -> Verdict {
    let runs: &[&[&str]] = &[
        &["sample", "--window", "8"],
        &["theta", "--replicas", "300"],
        &["phase", "--grid", "0.05:1:5", "--replicas", "200"],
        &["rsl", "--replicas", "200", "--kind", "rhm"],
        &["rsl", "--replicas", "200", "--compensate", "true"],
        &["circuit", "--replicas", "30"],
        &["bands", "--half_width", "3000", "--a_l", "1", "--tail_lmax", "6", "--replicas", "300"],
        &["params"],
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for (k, args) in runs.iter().enumerate() {
        let outs: Vec<_> = ["1", "1", "8"]
            .iter()
            .enumerate()
            .map(|(t, threads)| {
                let p = dir.path().join(format!("{k}-{t}"));
                run_cli(args, threads, &p)
            })
            .collect();
        if outs[0] != outs[1] || outs[0] != outs[2] || outs[0].iter().any(|f| f.1.is_empty()) {
            differing.push(args[0]);
        }
    }
    verdict(differing.is_empty(), format!("{} command runs at 1/1/8 threads; differing: {differing:?}", runs.len()))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("theta lower bound", c1_theta_bound),
        ("line-covering bound", c2_line_cover),
        ("stretched-lattice scaling identity", c3_scaling),
        ("Peierls soundness", c4_peierls),
        ("coupling domination", c5_domination),
        ("band combinatorics", c6_bands),
        ("good boxes and circuits", c7_good_boxes),
        ("oracle equivalence", c8_oracles),
        ("phase-scan transition", c9_phase),
        ("determinism", c10_determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = f();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2} {name}: {} ({:.1}s)", k + 1, v.detail, t.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(k + 1);
        }
    }
    if failed.is_empty() {
        println!("all {} criteria passed", criteria.len());
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
