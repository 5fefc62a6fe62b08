use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use mgm::bands::{self, LabeledSeq};
use mgm::continuum::{crossing_curve, estimate_theta, theta_lower_bound};
use mgm::discretize::{self, SchemeParams};
use mgm::lattice::{self, Direction};
use mgm::pointproc::{self, MgmParams, Window};
use mgm::{Error, RngStream};

use crate::config::Settings;
use crate::CliError;

type Res<T = ()> = Result<T, CliError>;

pub fn dispatch(s: &Settings) -> Res {
    match s.command {
        "sample" => sample(s),
        "theta" => theta(s),
        "phase" => phase(s),
        "rsl" => rsl(s),
        "circuit" => circuit(s),
        "bands" => bands(s),
        "params" => params(s),
        other => unreachable!("unknown command {other}"),
    }
}

fn emit(s: &Settings, body: &str) -> Res {
    match s.raw("out") {
        "" => {
            print!("{body}");
            Ok(())
        }
        p => std::fs::write(p, body).map_err(|e| CliError::io(Path::new(p), e)),
    }
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

fn mgm_params(s: &Settings) -> Res<MgmParams> {
    Ok(MgmParams::new(s.get("r")?, s.get("mu_x")?, s.get("mu_y")?, s.get("lambda")?)?)
}

fn replicas(s: &Settings) -> Res<u64> {
    match s.get("replicas")? {
        0 => Err(CliError::Config("replicas must be >= 1".into())),
        n => Ok(n),
    }
}

fn sample(s: &Settings) -> Res {
    let params = mgm_params(s)?;
    let window = Window::new(s.get("window")?)?;
    let smp = pointproc::sample_mgm(params, window, RngStream::new(s.get("seed")?, 0))?;
    let mut buf = s.header().into_bytes();
    pointproc::write_sample(&smp, &mut buf).expect("writing to memory");
    emit(s, &String::from_utf8(buf).expect("ascii output"))?;
    eprintln!(
        "v_streets={} h_streets={} pedestrians={}",
        smp.v_streets.len(),
        smp.h_streets.len(),
        smp.pedestrians.len()
    );
    Ok(())
}

fn theta(s: &Settings) -> Res {
    let params = mgm_params(s)?;
    let ns = s.grid("n")?;
    let reps = replicas(s)?;
    let seed: u64 = s.get("seed")?;
    let bound: bool = s.get("bound")?;
    let mut out = s.header();
    out.push_str("n,replicas,hits,theta_hat,ci_low,ci_high,master_seed");
    out.push_str(if bound { ",bound,bound_ok\n" } else { "\n" });
    for &n in &ns {
        let e = estimate_theta(&params, n, reps, RngStream::new(seed, 0))?;
        let _ = write!(out, "{},{},{},{},{},{},{}", n, e.replicas, e.hits, e.theta_hat, e.ci_low, e.ci_high, seed);
        if bound {
            if n.fract() != 0.0 || n < 1.0 {
                return Err(CliError::Config(format!("n = {n}: the bound needs integer n >= 1")));
            }
            let b = theta_lower_bound(&params, n as u64)?;
            let _ = write!(out, ",{},{}", b, b <= e.theta_hat + 3.0 * e.half_width());
        }
        out.push('\n');
    }
    emit(s, &out)
}

fn phase(s: &Settings) -> Res {
    let r: f64 = s.get("r")?;
    let lambda: f64 = s.get("lambda")?;
    let mu: f64 = match s.raw("preset") {
        "none" => s.get("mu")?,
        "homogeneity" => 10.0,
        "concentration" => 0.1,
        other => return Err(CliError::Config(format!("preset: unknown value '{other}'"))),
    };
    let grid = s.grid("grid")?;
    let points: Vec<MgmParams> = grid
        .iter()
        .map(|&v| {
            let (m, l) = match s.raw("param") {
                "lambda" => (mu, v),
                "mu" => (v, lambda),
                "intensity" => (mu, v / (2.0 * mu)),
                other => return Err(CliError::Config(format!("param: unknown value '{other}'"))),
            };
            Ok(MgmParams::new(r, m, m, l)?)
        })
        .collect::<Res<_>>()?;
    let side: f64 = s.get("box")?;
    let est = crossing_curve(&points[0], &points, side, side, replicas(s)?, RngStream::new(s.get("seed")?, 0))?;
    let mut out = s.header();
    out.push_str("value,r,mu,lambda,replicas,hits,estimate,ci_low,ci_high\n");
    for ((v, p), e) in grid.iter().zip(&points).zip(&est) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            v, p.r, p.mu_x, p.lambda, e.trials, e.hits, e.estimate, e.ci_low, e.ci_high
        );
    }
    // grid values may come in any order; compare along increasing value
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let monotone = order.windows(2).all(|w| est[w[0]].hits <= est[w[1]].hits);
    let _ = writeln!(out, "# nondecreasing={monotone}");
    emit(s, &out)
}

fn rsl(s: &Settings) -> Res {
    let (q_x, q_y): (f64, f64) = (s.get("q_x")?, s.get("q_y")?);
    let l: i64 = s.get("L")?;
    let ps = s.grid("p")?;
    let reps = replicas(s)?;
    let rhm = match s.raw("kind") {
        "rsl" => false,
        "rhm" => true,
        other => return Err(CliError::Config(format!("kind: unknown value '{other}'"))),
    };
    let alpha = if s.get("compensate")? { lattice::compensate_geometric(q_x.max(q_y))? } else { 1.0 };
    let root = RngStream::new(s.get("seed")?, 0);
    // validate everything once before the replica loop
    let env0 = lattice::LatticeEnv::constant(0, 1.0);
    for &p in &ps {
        lattice::rsl_scale(&env0, p, alpha)?;
    }
    lattice::sample_geometric_env(q_x, q_y, l, &mut root.rng())?;
    let hits = (0..reps)
        .into_par_iter()
        .map(|k| -> Res<Vec<u64>> {
            let stream = root.child(k);
            let env = lattice::sample_geometric_env(q_x, q_y, l, &mut stream.child(0).rng())?;
            let rect = env.rect();
            ps.iter()
                .map(|&p| {
                    let (env, p) = lattice::rsl_scale(&env, p, alpha)?;
                    let mut rng = stream.child(1).rng();
                    let bonds = if rhm {
                        lattice::sample_rhm_bonds(&env, p, &mut rng)?
                    } else {
                        lattice::sample_rsl_bonds(&env, p, &mut rng)?
                    };
                    Ok(lattice::crossing_exists(&bonds, &rect, Direction::LeftRight)? as u64)
                })
                .collect()
        })
        .try_reduce(
            || vec![0; ps.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let mut out = s.header();
    out.push_str("p,p_used,alpha,replicas,hits,estimate,ci_low,ci_high\n");
    for (&p, &h) in ps.iter().zip(&hits) {
        let e = mgm::stats::BernoulliEstimate::new(h, reps);
        let p_used = p.powf(1.0 / alpha);
        let _ = writeln!(out, "{},{},{},{},{},{},{},{}", p, p_used, alpha, reps, h, e.estimate, e.ci_low, e.ci_high);
    }
    emit(s, &out)
}

/// Dual faces around the four unit squares meeting at the origin.
const CIRCUIT_TARGETS: [(i64, i64); 4] = [(-1, -1), (0, -1), (-1, 0), (0, 0)];

fn circuit(s: &Settings) -> Res {
    let params = mgm_params(s)?;
    let window = Window::new(s.get("window")?)?;
    let root = RngStream::new(s.get("seed")?, 0);
    let rows = (0..replicas(s)?)
        .into_par_iter()
        .map(|k| -> Res<(usize, usize, &'static str, usize, bool)> {
            let smp = pointproc::sample_mgm(params, window, root.child(k))?;
            let coupling = match discretize::mgm_to_rhm(&smp) {
                Ok(c) => c,
                Err(Error::WindowTooSmall(_) | Error::EmptyInput(_)) => return Ok((0, 0, "window_too_small", 0, true)),
                Err(e) => return Err(e.into()),
            };
            let rect = coupling.env.rect();
            let dims = (rect.width(), rect.height());
            let dual = lattice::dual_transform(&coupling.bonds);
            match lattice::find_blocking_circuit(&dual, &CIRCUIT_TARGETS) {
                Ok(Some(c)) => {
                    let ok = lattice::peierls_check(&coupling.bonds, &c)?;
                    Ok((dims.0, dims.1, "found", c.len(), ok))
                }
                Ok(None) => Ok((dims.0, dims.1, "none", 0, true)),
                Err(Error::Margin) => Ok((dims.0, dims.1, "window_too_small", 0, true)),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Res<Vec<_>>>()?;
    let mut out = s.header();
    out.push_str("replica,x_clusters,y_clusters,status,circuit_len,peierls_ok\n");
    for (k, (nx, ny, status, len, ok)) in rows.iter().enumerate() {
        let _ = writeln!(out, "{k},{nx},{ny},{status},{len},{ok}");
    }
    let found = rows.iter().filter(|r| r.2 == "found").count();
    let bad = rows.iter().filter(|r| !r.4).count();
    let _ = writeln!(out, "# runs={} found={found} peierls_violations={bad}", rows.len());
    emit(s, &out)
}

fn fixed_values(spec: &str, half_width: i64) -> Res<LabeledSeq> {
    let mut seq = LabeledSeq::ones(half_width);
    for item in spec.split(',').filter(|x| !x.trim().is_empty()) {
        let bad = || CliError::Config(format!("values: expected pos:value, got '{item}'"));
        let (i, v) = item.split_once(':').ok_or_else(bad)?;
        let (i, v): (i64, u64) = (i.trim().parse().map_err(|_| bad())?, v.trim().parse().map_err(|_| bad())?);
        if i.abs() > half_width || v == 0 {
            return Err(CliError::Config(format!("values: '{item}' outside the window or zero")));
        }
        seq.set(i, v);
    }
    Ok(seq)
}

fn bands(s: &Settings) -> Res {
    let hw: i64 = s.get("half_width")?;
    if hw < 0 {
        return Err(CliError::Config("half_width must be >= 0".into()));
    }
    let seed: u64 = s.get("seed")?;
    let q: f64 = s.get("q")?;
    let (xs, ys) = match s.raw("values") {
        "" => (
            LabeledSeq::sample_geometric(q, hw, &mut RngStream::new(seed, 0).rng())?,
            LabeledSeq::sample_geometric(q, hw, &mut RngStream::new(seed, 1).rng())?,
        ),
        v => {
            let seq = fixed_values(v, hw)?;
            (seq.clone(), seq)
        }
    };
    let st = bands::compute_bands(&xs);
    let head = s.header();

    let mut table = head.clone();
    table.push_str("m,lo,hi,label,boundary_tainted\n");
    for (m, b) in bands::enumerate_bands(&st).iter() {
        let _ = writeln!(table, "{m},{},{},{},{}", b.lo, b.hi, b.label, st.is_tainted(b));
    }
    let dir = match s.raw("out") {
        "" => {
            print!("{table}");
            return Ok(());
        }
        d => Path::new(d),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| CliError::io(&p, e))
    };
    write("bands.csv", &table)?;

    let mut merges = head.clone();
    merges.push_str("k,i,j,d,f_i,f_j,label\n");
    for m in st.merges() {
        let _ = writeln!(merges, "{},{},{},{},{},{},{}", m.k, m.i, m.j, m.d, m.f_i, m.f_j, m.label);
    }
    write("merges.csv", &merges)?;

    let size = bands::check_size_spacing(&st);
    let reg = bands::check_regularity(&st);
    let jump_ok = st.merges().iter().all(|m| m.label >= m.f_i.max(m.f_j) + 2);
    let tainted = st.bands().iter().filter(|b| st.is_tainted(b)).count();
    let mut summary = head.clone();
    summary.push_str("key,value\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(summary, "{k},{v}");
    };
    kv("bands", st.bands().len().to_string());
    kv("max_label", st.max_label().to_string());
    kv("merges", st.merges().len().to_string());
    kv("tainted_bands", tainted.to_string());
    kv("size_violations", size.size_violations.len().to_string());
    kv("spacing_violations", size.spacing_violations.len().to_string());
    kv("label_jump_ok", jump_ok.to_string());
    kv("revalidation_errors", st.revalidate(&xs).len().to_string());
    kv("regularity_pairs", reg.pairs_checked.to_string());
    kv("regularity_violations", reg.violations.len().to_string());
    kv("regularity_indeterminate", reg.indeterminate.to_string());
    let l: u64 = s.get("a_l")?;
    if l > 0 {
        let v = match bands::check_a_l(&st, &bands::compute_bands(&ys), l) {
            Ok(b) => b.to_string(),
            Err(Error::WindowTooSmall(_)) => "window_too_small".into(),
            Err(e) => return Err(e.into()),
        };
        kv("a_l", v);
    }
    write("summary.csv", &summary)?;

    let lmax: u64 = s.get("tail_lmax")?;
    if lmax > 0 {
        let f = bands::label_tail_stats(q, s.get("tail_half_width")?, lmax, replicas(s)? as usize, seed)?;
        let mut tails = head;
        tails.push_str("l,frequency\n");
        for (l, v) in f.iter().enumerate() {
            let _ = writeln!(tails, "{},{}", l + 1, v);
        }
        write("tails.csv", &tails)?;
    }
    Ok(())
}

fn params(s: &Settings) -> Res {
    let (r, lambda): (f64, f64) = (s.get("r")?, s.get("lambda")?);
    let (p, d): (f64, f64) = (s.get("p_target")?, s.get("delta")?);
    let which = s.raw("scheme");
    let all = ["scheme1", "scheme2", "scheme3", "fine"];
    let chosen: Vec<&str> = match which {
        "all" => all.to_vec(),
        w if all.contains(&w) => vec![w],
        other => return Err(CliError::Config(format!("scheme: unknown value '{other}'"))),
    };
    let mut out = s.header();
    out.push_str("scheme,item,value,rhs,holds\n");
    for name in chosen {
        let sp = match name {
            "scheme1" => SchemeParams::Scheme1(discretize::params_scheme1(r, lambda, p, d)?),
            "scheme2" => SchemeParams::Scheme2(discretize::params_scheme2(r, s.get("mu")?, p, d)?),
            "scheme3" => SchemeParams::Scheme3(discretize::params_scheme3(r, s.get("mu_x")?, lambda, p, d)?),
            _ => SchemeParams::Fine(discretize::params_fine(r, lambda, s.get("mu_max")?, s.get("kappa")?)?),
        };
        for line in sp.to_text().lines() {
            if let Some((k, v)) = line.split_once('=').filter(|(k, _)| *k != "scheme" && *k != "check") {
                let _ = writeln!(out, "{name},{k},{v},,");
            }
        }
        for c in sp.checks() {
            let _ = writeln!(out, "{name},{},{},{},{}", csv_field(c.name), c.lhs, c.rhs, c.holds);
        }
    }
    emit(s, &out)
}
