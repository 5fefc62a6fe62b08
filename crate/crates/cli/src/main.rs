//! `mgm`: batch experiments for the Manhattan grid model.
//!
//! Every command writes CSV (or, for `sample`, the sample text format) led
//! by `#` lines echoing the resolved configuration, and is a pure function
//! of that configuration and the seed.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use config::{Key, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] mgm::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    fn exit_code(&self) -> u8 {
        use mgm::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::InvalidParameter(_)) => 2,
            CliError::Io { .. } | CliError::Core(E::Io(_) | E::Parse { .. }) => 4,
            CliError::Core(_) => 3,
        }
    }
}

const COMMANDS: &[(&str, &[Key], &str)] = &[
    ("sample", config::SAMPLE, "Sample streets and pedestrians in a window"),
    ("theta", config::THETA, "Estimate the probability that the origin reaches distance n"),
    ("phase", config::PHASE, "Box crossing probability over a parameter grid"),
    ("rsl", config::RSL, "Crossing frequencies of the stretched lattice or highway model"),
    ("circuit", config::CIRCUIT, "Dual blocking circuits of the coupled highway model"),
    ("bands", config::BANDS, "Bands and labels of an integer sequence"),
    ("params", config::PARAMS, "Discretization scheme parameters and their inequalities"),
];

fn cli() -> Command {
    let mut root = Command::new("mgm")
        .about("Percolation experiments for the Manhattan grid model")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, table, about) in COMMANDS {
        let mut sub = Command::new(name)
            .about(about)
            .arg(Arg::new("config").long("config").value_name("FILE").help("key=value file; flags override it"));
        for k in config::COMMON.iter().chain(table) {
            let help = format!("{} [default: {}]", k.help, if k.default.is_empty() { "none" } else { k.default });
            sub = sub.arg(Arg::new(k.name).long(k.name).value_name("VALUE").help(help));
        }
        root = root.subcommand(sub);
    }
    root
}

fn run(name: &str, m: &ArgMatches) -> Result<(), CliError> {
    let &(command, table, _) = COMMANDS.iter().find(|c| c.0 == name).expect("registered command");
    let file = match m.get_one::<String>("config") {
        Some(p) => config::read_file(Path::new(p))?,
        None => BTreeMap::new(),
    };
    let flags: BTreeMap<String, String> = config::COMMON
        .iter()
        .chain(table)
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    let s = Settings::resolve(command, table, file, &flags)?;
    let threads: usize = s.get("threads")?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("threads: {e}")))?
        .install(|| commands::dispatch(&s))
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    let (name, sub) = m.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mgm {name}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
