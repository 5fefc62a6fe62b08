use mgm::lattice::*;
use mgm::RngStream;
use proptest::prelude::*;
use rand::Rng;

fn random_config(rect: Rect, p: f64, seed: u64) -> BondConfig {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut c = BondConfig::new(BondKind::Rsl, rect, false);
    let hs: Vec<_> = c.h.positions().collect();
    for (i, j) in hs {
        c.h.set(i, j, rng.random::<f64>() < p);
    }
    let vs: Vec<_> = c.v.positions().collect();
    for (i, j) in vs {
        c.v.set(i, j, rng.random::<f64>() < p);
    }
    c
}

/// Point-in-polygon with floating coordinates, evaluated at a slightly
/// perturbed point so no ray passes through a vertex.
fn inside_polygon(cycle: &[(i64, i64)], x: f64, y: f64) -> bool {
    let (px, py) = (x + 1e-3, y + 2e-3);
    let mut inside = false;
    let n = cycle.len();
    for k in 0..n {
        let (ax, ay) = (cycle[k].0 as f64, cycle[k].1 as f64);
        let (bx, by) = (cycle[(k + 1) % n].0 as f64, cycle[(k + 1) % n].1 as f64);
        if (ay > py) != (by > py) {
            let cx = ax + (py - ay) / (by - ay) * (bx - ax);
            if cx > px {
                inside = !inside;
            }
        }
    }
    inside
}

/// Exhaustive search: does some simple cycle of open bonds enclose every target?
fn oracle_circuit_exists(c: &BondConfig, rect: Rect, targets: &[(i64, i64)]) -> bool {
    let n = rect.n_vertices();
    let nbrs: Vec<Vec<usize>> = (0..n)
        .map(|k| {
            let (x, y) = rect.vertex(k);
            c.open_neighbors(x, y).filter(|&(a, b)| rect.contains(a, b)).map(|(a, b)| rect.index(a, b)).collect()
        })
        .collect();
    fn dfs(
        s: usize,
        u: usize,
        path: &mut Vec<usize>,
        on: &mut [bool],
        nbrs: &[Vec<usize>],
        hit: &mut dyn FnMut(&[usize]) -> bool,
    ) -> bool {
        for &w in &nbrs[u] {
            if w == s && path.len() >= 4 && hit(path) {
                return true;
            }
            if w > s && !on[w] {
                on[w] = true;
                path.push(w);
                if dfs(s, w, path, on, nbrs, hit) {
                    return true;
                }
                path.pop();
                on[w] = false;
            }
        }
        false
    }
    let mut hit = |path: &[usize]| {
        let cyc: Vec<(i64, i64)> = path.iter().map(|&k| rect.vertex(k)).collect();
        targets.iter().all(|&(x, y)| !cyc.contains(&(x, y)) && inside_polygon(&cyc, x as f64, y as f64))
    };
    let mut on = vec![false; n];
    (0..n).any(|s| {
        on[s] = true;
        let found = dfs(s, s, &mut vec![s], &mut on, &nbrs, &mut hit);
        on[s] = false;
        found
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn circuit_finder_matches_exhaustive_search(
        seed in any::<u64>(),
        p in 0.45f64..0.95,
        pair in any::<bool>(),
    ) {
        let rect = Rect::square(2);
        let c = random_config(rect, p, seed);
        let targets: Vec<(i64, i64)> = if pair { vec![(0, 0), (1, 0)] } else { vec![(0, 0)] };
        let found = find_blocking_circuit(&c, &targets).unwrap();
        if let Some(circ) = &found {
            prop_assert_eq!(validate_circuit(&c, circ, &targets), Ok(()));
            for &(x, y) in &targets {
                prop_assert!(inside_polygon(&circ.vertices[..circ.len()], x as f64, y as f64));
            }
        }
        prop_assert_eq!(found.is_some(), oracle_circuit_exists(&c, rect, &targets));
    }

    #[test]
    fn dual_is_an_involution(seed in any::<u64>(), p in 0.0f64..1.0, l in 1i64..6) {
        let c = random_config(Rect::square(l), p, seed);
        let d = dual_transform(&c);
        prop_assert_eq!(d.count_open(), c.n_bonds() - c.count_open());
        prop_assert_eq!(dual_transform(&d), c);
    }

    /// In an (n+1) x n box exactly one of a primal left-right crossing and a
    /// dual top-bottom crossing occurs.
    #[test]
    fn planar_duality_of_crossings(seed in any::<u64>(), p in 0.3f64..0.7, n in 1i64..12) {
        let primal_box = Rect::new(0, n, 0, n - 1);
        let c = random_config(primal_box, p, seed);
        let d = dual_transform(&c);
        let lr = crossing_exists(&c, &primal_box, Direction::LeftRight).unwrap();
        let tb = crossing_exists(&d, &Rect::new(0, n - 1, -1, n - 1), Direction::TopBottom).unwrap();
        prop_assert!(lr != tb);
    }

    #[test]
    fn samplers_are_monotone_in_p(seed in any::<u64>(), p1 in 0.05f64..0.95, dp in 0.0f64..0.5) {
        let p2 = (p1 + dp).min(0.99);
        let env = sample_geometric_env(0.5, 0.3, 5, &mut RngStream::new(seed, 1).rng()).unwrap();
        let stream = RngStream::new(seed, 2);
        let a = sample_rsl_bonds(&env, p1, &mut stream.rng()).unwrap();
        let b = sample_rsl_bonds(&env, p2, &mut stream.rng()).unwrap();
        for (i, j) in a.h.positions() {
            prop_assert!(!a.h_open(i, j) || b.h_open(i, j));
        }
        for (i, j) in a.v.positions() {
            prop_assert!(!a.v_open(i, j) || b.v_open(i, j));
        }
        let a = sample_rhm_bonds(&env, p1, &mut stream.rng()).unwrap();
        let b = sample_rhm_bonds(&env, p2, &mut stream.rng()).unwrap();
        for (i, j) in a.h.positions() {
            prop_assert!(!b.h_open(i, j) || a.h_open(i, j));
        }
    }

    #[test]
    fn peierls_holds_on_random_highway_configs(seed in any::<u64>(), p in 0.2f64..0.9) {
        let mut rng = RngStream::new(seed, 0).rng();
        let env = sample_geometric_env(0.4, 0.4, 6, &mut rng).unwrap();
        let rhm = sample_rhm_bonds(&env, p, &mut rng).unwrap();
        let dual = dual_transform(&rhm);
        let targets = [(-1, -1), (0, -1), (-1, 0), (0, 0)];
        if let Some(circ) = find_blocking_circuit(&dual, &targets).unwrap() {
            prop_assert_eq!(validate_circuit(&dual, &circ, &targets), Ok(()));
            for (x, y) in Rect::square(1).vertices() {
                prop_assert!(circ.encloses(x, y, false));
            }
            prop_assert!(peierls_check(&rhm, &circ).unwrap());
        }
    }
}

#[test]
fn bond_marginals_follow_environment() {
    let env = LatticeEnv::new(-100, vec![2.0; 201], -100, vec![1.0; 201]).unwrap();
    let c = sample_rsl_bonds(&env, 0.8, &mut RngStream::new(9, 0).rng()).unwrap();
    let fh = c.h.count_open() as f64 / c.h.len() as f64;
    let fv = c.v.count_open() as f64 / c.v.len() as f64;
    // about 40000 bonds each; 6 standard errors
    assert!((fh - 0.64).abs() < 0.015, "{fh}");
    assert!((fv - 0.8).abs() < 0.012, "{fv}");
    let r = sample_rhm_bonds(&env, 0.8, &mut RngStream::new(9, 0).rng()).unwrap();
    let fh = r.h.count_open() as f64 / r.h.len() as f64;
    let fv = r.v.count_open() as f64 / r.v.len() as f64;
    assert!((fh - 0.2).abs() < 0.012, "{fh}");
    assert!((fv - 0.36).abs() < 0.015, "{fv}");
}

#[test]
fn geometric_env_tail() {
    let mut rng = RngStream::new(3, 0).rng();
    let mut ge3 = 0usize;
    let mut total = 0usize;
    for _ in 0..50 {
        let env = sample_geometric_env(0.5, 0.5, 100, &mut rng).unwrap();
        assert!(env.n_x.iter().all(|&n| n >= 1.0 && n.fract() == 0.0));
        ge3 += env.n_x.iter().filter(|&&n| n >= 3.0).count();
        total += env.n_x.len();
    }
    let f = ge3 as f64 / total as f64;
    assert!((f - 0.25).abs() < 0.02, "{f}");
}
