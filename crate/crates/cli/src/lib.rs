//! Command-line front end: `run`, `audit`, `probe` and `oracle`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pmonge::harness::{
    self, audit_family, continuity_probe, load_family, probe_options, run_scenario, scenario_from_run, RunOptions,
    Scenario, EXIT_ASSEMBLY, EXIT_AUDIT, EXIT_CONFIG, EXIT_OK,
};
use pmonge::kantorovich::{solve_exact, CostMatrix};
use pmonge::par::{self, Execution};
use pmonge::{Error, GridDensity};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "PMONGE_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "pmonge", version, about = "Parametric epsilon-optimal Monge maps on [0, 1]")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble a scenario, audit it and write the report.
    Run {
        config: PathBuf,
        /// Output directory (default: `out/<scenario name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: $PMONGE_WORKERS, then all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Seed for the continuity probe samples.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-audit a run directory from its dumped family.
    Audit {
        dir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Continuity probe of a run directory at one parameter.
    Probe {
        dir: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Exact transport value for a cost matrix (`i,j,cost`) and two marginals (`cell_index,weight`).
    Oracle { cost: PathBuf, mu: PathBuf, nu: PathBuf },
}

fn workers(flag: Option<usize>) -> Result<Option<usize>, Error> {
    if let Some(w) = flag {
        return if w == 0 { Err(Error::Config("--workers must be positive".into())) } else { Ok(Some(w)) };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(Some(w)),
            _ => Err(Error::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        },
        _ => Ok(None),
    }
}

fn exit_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Csv { .. } => EXIT_CONFIG,
        _ => EXIT_ASSEMBLY,
    }
}

fn read_cost_matrix(path: &Path, rows: usize, cols: usize) -> Result<CostMatrix, Error> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut data = vec![f64::NAN; rows * cols];
    for rec in csv::Reader::from_reader(f).records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::Config(format!("{}: rows must be i,j,cost", path.display()));
        if rec.len() != 3 {
            return Err(bad());
        }
        let i: usize = rec[0].trim().parse().map_err(|_| bad())?;
        let j: usize = rec[1].trim().parse().map_err(|_| bad())?;
        let c: f64 = rec[2].trim().parse().map_err(|_| bad())?;
        if i >= rows || j >= cols {
            return Err(Error::Config(format!("{}: entry ({i}, {j}) outside {rows}x{cols}", path.display())));
        }
        data[i * cols + j] = c;
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Config(format!("{}: cost matrix has missing entries", path.display())));
    }
    CostMatrix::new(rows, cols, data).map_err(|e| Error::Config(e.to_string()))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, Error> {
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::Run { config, out: dir, workers: wk, seed } => {
            let scenario = Scenario::load(&config)?;
            let wk = workers(wk)?.or(scenario.options.workers);
            let dir = dir.unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
            let opts = RunOptions { seed, exec: Execution::Parallel };
            let (report, _) = par::with_workers(wk, || run_scenario(&scenario, Some(&dir), &opts))?;
            write!(out, "{}", report.render()).map_err(w)?;
            writeln!(out, "report written to {}", dir.display()).map_err(w)?;
            Ok(report.exit_code())
        }
        Command::Audit { dir, workers: wk } => {
            let scenario = scenario_from_run(&dir)?;
            let opts = RunOptions { seed: None, exec: Execution::Parallel };
            let report = par::with_workers(workers(wk)?, || {
                let family = load_family(&scenario, &dir.join("family"), opts.exec)?;
                audit_family(&scenario, &family, &opts, false)
            })?;
            write!(out, "{}", report.render()).map_err(w)?;
            Ok(report.exit_code())
        }
        Command::Probe { dir, t, seed, workers: wk } => {
            let scenario = scenario_from_run(&dir)?;
            let range =
                scenario.t_range.ok_or_else(|| Error::Config("the probe needs a one-dimensional t-grid".into()))?;
            if !(range.0 <= t && t <= range.1) {
                return Err(Error::Config(format!("--t {t} outside [{}, {}]", range.0, range.1)));
            }
            let opts = RunOptions { seed, exec: Execution::Parallel };
            let rows = par::with_workers(workers(wk)?, || {
                let family = load_family(&scenario, &dir.join("family"), opts.exec)?;
                continuity_probe(
                    &family,
                    &|t: &[f64]| scenario.marginals_at(t),
                    t,
                    range,
                    &probe_options(&scenario, &opts),
                )
            })?;
            writeln!(out, "t,t_n,level,tau,exceed_fraction").map_err(w)?;
            for r in &rows {
                writeln!(out, "{},{},{},{},{}", r.t, r.t_n, r.level, r.tau, r.exceed_fraction).map_err(w)?;
            }
            let tau = scenario.probe.taus.iter().copied().find(|t| *t == 1e-2).unwrap_or(scenario.probe.taus[0]);
            let ok = harness::continuity_passes(&rows, tau, harness::CONTINUITY_LIMIT, harness::CONTINUITY_INVERSIONS);
            Ok(if ok { EXIT_OK } else { EXIT_AUDIT })
        }
        Command::Oracle { cost, mu, nu } => {
            let mu = GridDensity::load(&mu)?;
            let nu = GridDensity::load(&nu)?;
            let c = read_cost_matrix(&cost, mu.n(), nu.n())?;
            let r = solve_exact(&c, mu.weights(), nu.weights())?;
            writeln!(out, "value {}", r.value).map_err(w)?;
            if let Some((u, v)) = &r.dual {
                let dual: f64 = u.iter().zip(mu.weights()).map(|(a, b)| a * b).sum::<f64>()
                    + v.iter().zip(nu.weights()).map(|(a, b)| a * b).sum::<f64>();
                writeln!(out, "dual {dual}").map_err(w)?;
            }
            writeln!(out, "pivots {}", r.pivots).map_err(w)?;
            Ok(EXIT_OK)
        }
    }
}

/// Runs the CLI on `args` (program name first), writing to `out` and `err`; returns the exit status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_for(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_for(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_for(&Error::CycleGuard(3)), EXIT_ASSEMBLY);
        assert_ne!(EXIT_AUDIT, EXIT_ASSEMBLY);
    }
}
