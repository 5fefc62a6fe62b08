//! Small numeric helpers shared by the estimators.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A Bernoulli frequency with its Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BernoulliEstimate {
    pub hits: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl BernoulliEstimate {
    pub fn new(hits: u64, trials: u64) -> Self {
        assert!(trials > 0 && hits <= trials);
        let (ci_low, ci_high) = wilson_interval(hits, trials, Z95);
        Self { hits, trials, estimate: hits as f64 / trials as f64, ci_low, ci_high }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    /// Binomial standard error of the point estimate.
    pub fn std_err(&self) -> f64 {
        (self.estimate * (1.0 - self.estimate) / self.trials as f64).sqrt()
    }
}

pub fn wilson_interval(hits: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo.min(p), hi.max(p))
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln P(Poisson(mu) <= k)`, accurate also when the value is close to 0.
pub fn ln_poisson_cdf(k: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let ln_mu = mu.ln();
    let mut term = -mu;
    let mut acc = term;
    for i in 1..=k {
        term += ln_mu - (i as f64).ln();
        acc = log_add_exp(acc, term);
    }
    if acc > -1e-3 && (k as f64) > mu {
        return (-ln_poisson_sf(k, mu).exp()).ln_1p();
    }
    acc.min(0.0)
}

/// `ln P(Poisson(mu) > k)` summed upward from `k + 1`; meant for `k > mu`.
fn ln_poisson_sf(k: u64, mu: f64) -> f64 {
    let ln_mu = mu.ln();
    let mut i = k + 1;
    let mut term = -mu + i as f64 * ln_mu - ln_factorial(i);
    let mut acc = term;
    loop {
        i += 1;
        term += ln_mu - (i as f64).ln();
        if term < acc - 40.0 {
            return acc;
        }
        acc = log_add_exp(acc, term);
    }
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

pub fn poisson_cdf(k: u64, mu: f64) -> f64 {
    ln_poisson_cdf(k, mu).exp()
}

/// Smallest integer `n >= lo` with `pred(n)`; `pred` must be monotone.
/// `None` if no `n` below `2^53` qualifies.
pub(crate) fn smallest_integer(lo: u64, pred: impl Fn(u64) -> bool) -> Option<u64> {
    const CAP: u64 = 1 << 53;
    if pred(lo) {
        return Some(lo);
    }
    let mut bad = lo;
    let mut step = 1u64;
    let mut good = loop {
        let cand = bad.saturating_add(step).min(CAP);
        if pred(cand) {
            break cand;
        }
        if cand == CAP {
            return None;
        }
        bad = cand;
        step = step.saturating_mul(2);
    };
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if pred(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Some(good)
}

/// Smallest `x > 0` (to relative tolerance 1e-9) with `pred(x)`, for a
/// predicate that is false near 0 and monotone in `x`.
pub(crate) fn bisect_threshold(start: f64, pred: impl Fn(f64) -> bool) -> f64 {
    let mut hi = start.max(f64::MIN_POSITIVE);
    let mut lo = 0.0;
    let mut expansions = 0;
    while !pred(hi) {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        assert!(expansions < 2000, "bisection bracket did not close");
    }
    for _ in 0..200 {
        if hi - lo <= 1e-9 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_bounds_contain_estimate() {
        for (h, n) in [(0, 10), (10, 10), (3, 10), (500, 1000)] {
            let e = BernoulliEstimate::new(h, n);
            assert!(0.0 <= e.ci_low && e.ci_low <= e.estimate);
            assert!(e.estimate <= e.ci_high && e.ci_high <= 1.0);
        }
        let e = BernoulliEstimate::new(0, 10);
        assert_eq!(e.ci_low, 0.0);
        assert!(e.ci_high > 0.2);
    }

    #[test]
    fn wilson_matches_closed_form() {
        // 50/100: centre 0.5, half = z*sqrt(.25/100 + z^2/40000)/(1+z^2/100)
        let (lo, hi) = wilson_interval(50, 100, Z95);
        let z2 = Z95 * Z95;
        let half = Z95 * (0.0025 + z2 / 40000.0).sqrt() / (1.0 + z2 / 100.0);
        assert!((lo - (0.5 - half)).abs() < 1e-15);
        assert!((hi - (0.5 + half)).abs() < 1e-15);
    }

    #[test]
    fn poisson_cdf_small_cases() {
        let mu: f64 = 1.3;
        let direct = (-mu).exp() * (1.0 + mu + mu * mu / 2.0);
        assert!((poisson_cdf(2, mu) - direct).abs() < 1e-14);
        assert_eq!(poisson_cdf(5, 0.0), 1.0);
        assert!(poisson_cdf(400, 50.0) > 1.0 - 1e-12);
        // far tail: 1 - P(X <= 14) for mu = 0.05 is about e^-mu mu^15 / 15! (1 + mu / 16)
        let mu: f64 = 0.05;
        let want = -((-mu).exp() * mu.powi(15) / (1..=15).map(|i| i as f64).product::<f64>() * (1.0 + mu / 16.0));
        let got = ln_poisson_cdf(14, 0.05);
        assert!(got < 0.0 && ((got - want) / want).abs() < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn smallest_integer_finds_boundary() {
        assert_eq!(smallest_integer(0, |n| n * n >= 50), Some(8));
        assert_eq!(smallest_integer(3, |_| true), Some(3));
        assert_eq!(smallest_integer(1, |n| n >= 1_000_000), Some(1_000_000));
        assert_eq!(smallest_integer(1, |_| false), None);
    }

    #[test]
    fn bisection_hits_tolerance() {
        let x = bisect_threshold(1.0, |x| x * x >= 2.0);
        assert!(x * x >= 2.0);
        assert!((x - 2f64.sqrt()).abs() < 1e-8);
    }
}
