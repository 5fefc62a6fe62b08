use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Keys every command accepts. `threads` and `out` do not affect results and
/// are left out of the config echo.
pub const COMMON: &[Key] = &[
    key("seed", "1", "master seed"),
    key("threads", "0", "worker threads (0 = all cores)"),
    key("out", "", "output path (stdout when empty)"),
];

const NOT_ECHOED: &[&str] = &["threads", "out"];

pub const SAMPLE: &[Key] = &[
    key("r", "1.5", "disk radius"),
    key("mu_x", "1", "vertical street intensity"),
    key("mu_y", "1", "horizontal street intensity"),
    key("lambda", "1", "pedestrian intensity per unit street length"),
    key("window", "10", "half-width W of the window [-W, W]^2"),
];

pub const THETA: &[Key] = &[
    key("r", "1.5", "disk radius"),
    key("mu_x", "1", "vertical street intensity"),
    key("mu_y", "1", "horizontal street intensity"),
    key("lambda", "1", "pedestrian intensity"),
    key("n", "2,4,8", "box half-widths: list a,b,c or range lo:hi:count"),
    key("replicas", "1000", "replicas per n"),
    key("bound", "true", "add the analytic lower bound column (needs r > sqrt 2)"),
];

pub const PHASE: &[Key] = &[
    key("r", "1.5", "disk radius"),
    key("mu", "1", "street intensity on both axes"),
    key("lambda", "1", "pedestrian intensity when not scanned"),
    key("param", "lambda", "scanned parameter: lambda, mu or intensity (2 mu lambda)"),
    key("grid", "0.1:5:50", "parameter values: list a,b,c or range lo:hi:count"),
    key("box", "10", "side of the square box to cross"),
    key("replicas", "1000", "replicas per grid point"),
    key("preset", "none", "none, homogeneity (mu = 10) or concentration (mu = 0.1)"),
];

pub const RSL: &[Key] = &[
    key("q_x", "0.5", "column tail parameter, P(N >= l + 1) = q^l"),
    key("q_y", "0.5", "row tail parameter"),
    key("L", "10", "lattice half-width"),
    key("p", "0.1:0.9:9", "bond parameters: list or range lo:hi:count"),
    key("kind", "rsl", "rsl (stretched lattice) or rhm (highway model)"),
    key("compensate", "false", "rescale by the geometric compensation factor"),
    key("replicas", "1000", "replicas per p"),
];

pub const CIRCUIT: &[Key] = &[
    key("r", "1.5", "disk radius"),
    key("mu_x", "0.2", "vertical street intensity"),
    key("mu_y", "0.2", "horizontal street intensity"),
    key("lambda", "0.05", "pedestrian intensity"),
    key("window", "60", "half-width of the sampling window"),
    key("replicas", "100", "independent runs"),
];

pub const BANDS: &[Key] = &[
    key("q", "0.3", "geometric tail parameter of the sampled values"),
    key("half_width", "1000", "window [-L, L]"),
    key("values", "", "fixed values pos:value,... (all others 1) instead of sampling"),
    key("a_l", "0", "level l of the high-label event to check (0 = skip)"),
    key("tail_lmax", "0", "label tail frequencies for l = 1..lmax (0 = skip)"),
    key("tail_half_width", "10", "window half-width for the label tails"),
    key("replicas", "1000", "windows for the label tails"),
];

pub const PARAMS: &[Key] = &[
    key("scheme", "all", "scheme1, scheme2, scheme3, fine or all"),
    key("r", "1.5", "disk radius"),
    key("lambda", "1", "pedestrian intensity"),
    key("mu", "1", "street intensity (scheme 2)"),
    key("mu_x", "1", "vertical street intensity (scheme 3)"),
    key("mu_max", "1", "largest street intensity (fine scheme)"),
    key("kappa", "1", "fine scheme refinement"),
    key("p_target", "0.9", "target link probability"),
    key("delta", "0.01", "failure probability"),
];

/// Flat `key = value` lines; `#` starts a comment.
pub fn read_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{}:{}: expected key=value", path.display(), k + 1)))?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Resolved settings of one command: flags over file over defaults.
pub struct Settings {
    pub command: &'static str,
    keys: Vec<&'static Key>,
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn resolve(
        command: &'static str,
        table: &'static [Key],
        file: BTreeMap<String, String>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        let keys: Vec<&'static Key> = COMMON.iter().chain(table).collect();
        if let Some(bad) = file.keys().find(|k| !keys.iter().any(|x| x.name == k.as_str())) {
            return Err(CliError::Config(format!("unknown key '{bad}' for command {command}")));
        }
        let values = keys
            .iter()
            .map(|k| {
                let v = flags.get(k.name).or_else(|| file.get(k.name)).cloned();
                (k.name, v.unwrap_or_else(|| k.default.to_string()))
            })
            .collect();
        Ok(Self { command, keys, values })
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or_else(|| panic!("key {name} not declared"))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        parse(name, self.raw(name))
    }

    pub fn grid(&self, name: &str) -> Result<Vec<f64>, CliError> {
        parse_grid(name, self.raw(name))
    }

    /// `#` lines: command and schema, then every result-relevant key.
    pub fn header(&self) -> String {
        let mut s = format!("# mgm {} schema=1\n", self.command);
        for k in &self.keys {
            if !NOT_ECHOED.contains(&k.name) {
                s.push_str(&format!("# {}={}\n", k.name, self.values[k.name]));
            }
        }
        s
    }
}

fn parse<T: FromStr>(name: &str, v: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    v.trim().parse().map_err(|e| CliError::Config(format!("{name}: cannot parse '{v}': {e}")))
}

/// `a,b,c` or `lo:hi:count` (inclusive, evenly spaced).
pub fn parse_grid(name: &str, v: &str) -> Result<Vec<f64>, CliError> {
    let grid: Vec<f64> = if let [lo, hi, n] = v.split(':').collect::<Vec<_>>()[..] {
        let (lo, hi): (f64, f64) = (parse(name, lo)?, parse(name, hi)?);
        let n: usize = parse(name, n)?;
        match n {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
        }
    } else {
        v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(name, s)).collect::<Result<_, _>>()?
    };
    if grid.is_empty() {
        return Err(CliError::Config(format!("{name}: empty grid")));
    }
    Ok(grid)
}
