//! End-to-end runs: scenario in, assembled family and audit report out.

pub mod audit;
pub mod probe;
pub mod scenario;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::cover::CoverOptions;
use crate::error::{Error, Result};
use crate::kantorovich::PathOptions;
use crate::monge::{assemble, prepare, AssembleOptions, MongeMapFamily, CELL_OSCILLATION, PLAN_SLACK, TRUNCATION_MASS};
use crate::par::Execution;

pub use audit::{binding_slice, optimality_audit, slice_usage, thresholds, AuditRow, SliceUse, Thresholds};
pub use probe::{continuity_passes, continuity_probe, ContinuityRow, ProbeOptions};
pub use scenario::{MarginalSpec, Scenario};

/// Exit statuses of a run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_AUDIT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSEMBLY: i32 = 3;

/// Continuity limit on the exceed fraction at the finest level.
pub const CONTINUITY_LIMIT: f64 = 0.01;
/// Tolerated increases of the exceed fraction from one level to the next.
pub const CONTINUITY_INVERSIONS: usize = 1;

/// Everything a run measured.
#[derive(Clone, Debug)]
pub struct AuditReport {
    pub name: String,
    pub eps: f64,
    pub eps1: Option<f64>,
    pub thresholds: Option<Thresholds>,
    pub rows: Vec<AuditRow>,
    pub continuity: Vec<ContinuityRow>,
    /// The tau whose rows decide the continuity audit.
    pub continuity_tau: Option<f64>,
    pub budget: Vec<SliceUse>,
    pub binding: Option<String>,
    /// Set when assembly stopped on a budget that cannot be met.
    pub failure: Option<String>,
    pub trace: Vec<(String, f64, f64)>,
    pub wall_clock: Duration,
}

impl AuditReport {
    fn failed(name: &str, eps: f64, binding: &str, failure: String, started: Instant) -> Self {
        Self {
            name: name.to_string(),
            eps,
            eps1: None,
            thresholds: None,
            rows: Vec::new(),
            continuity: Vec::new(),
            continuity_tau: None,
            budget: Vec::new(),
            binding: Some(binding.to_string()),
            failure: Some(failure),
            trace: Vec::new(),
            wall_clock: started.elapsed(),
        }
    }

    pub fn rows_pass(&self) -> bool {
        match &self.thresholds {
            Some(th) => self.rows.iter().all(|r| r.passes(th)),
            None => false,
        }
    }

    pub fn continuity_pass(&self) -> bool {
        match self.continuity_tau {
            Some(tau) => continuity_passes(&self.continuity, tau, CONTINUITY_LIMIT, CONTINUITY_INVERSIONS),
            None => true,
        }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.rows_pass() && self.continuity_pass()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_AUDIT
        }
    }

    /// One line per grid parameter plus a verdict, for terminals.
    pub fn render(&self) -> String {
        let mut out = format!("scenario {}\n", self.name);
        if let Some(f) = &self.failure {
            out += &format!("assembly stopped: {f}\n");
        }
        if let Some(th) = &self.thresholds {
            out += &format!("eps {} tol_disc {:.3e} pushforward limit {:.3e}\n", self.eps, th.tol_disc, th.pushforward);
            out += "t            exact        monge        gap          dkr          ok\n";
            for r in &self.rows {
                out += &format!(
                    "{:<12} {:<12.6} {:<12.6} {:<12.3e} {:<12.3e} {}\n",
                    crate::monge::join_t(&r.t),
                    r.exact_value,
                    r.monge_cost,
                    r.gap,
                    r.pushforward_dkr,
                    if r.passes(th) { "yes" } else { "NO" }
                );
            }
        }
        for r in &self.continuity {
            out += &format!("probe t={} t_n={} tau={} exceed={:.4}\n", r.t, r.t_n, r.tau, r.exceed_fraction);
        }
        if let Some(b) = &self.binding {
            out += &format!("binding slice: {b}\n");
        }
        out += &format!("wall clock: {:.2?}\n", self.wall_clock);
        out += if self.passed() { "PASS\n" } else { "FAIL\n" };
        out
    }
}

/// Run-time overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub exec: Execution,
}

fn assemble_options(s: &Scenario, exec: Execution) -> AssembleOptions {
    AssembleOptions {
        cover: CoverOptions { stride: s.options.stride, ..CoverOptions::default() },
        path: PathOptions {
            quadrature_k: s.quadrature_k,
            warm_start: s.options.warm_start,
            tol: s.options.tol,
            exec,
            ..PathOptions::default()
        },
        trim: s.options.trim,
        ..AssembleOptions::default()
    }
}

/// Assembly failures that mean a budget slice cannot be met, with the slice name.
fn budget_failure(e: &Error) -> Option<&'static str> {
    match e {
        Error::ModulusFailure { .. } => Some(CELL_OSCILLATION),
        Error::TailDivergence { .. } => Some(TRUNCATION_MASS),
        Error::AuditFailure(_) => Some(PLAN_SLACK),
        _ => None,
    }
}

/// Assembles the scenario's family.
pub fn assemble_scenario(s: &Scenario, exec: Execution) -> Result<MongeMapFamily> {
    let (mus, nus) = s.marginals()?;
    assemble(s.pipeline, mus, nus, &s.cost, &s.space, s.eps, &assemble_options(s, exec))
}

/// Rebuilds a family from a run directory without solving any plan.
pub fn load_family(s: &Scenario, family_dir: &Path, exec: Execution) -> Result<MongeMapFamily> {
    let (mus, nus) = s.marginals()?;
    let mut f = prepare(s.pipeline, &mus, &nus, &s.cost, &s.space, s.eps, &assemble_options(s, exec))?;
    f.reload_slices(family_dir)?;
    Ok(f)
}

/// Audits an assembled family; the probe runs when the scenario enables it on a 1D grid.
pub fn audit_family(s: &Scenario, family: &MongeMapFamily, opts: &RunOptions, probe: bool) -> Result<AuditReport> {
    let started = Instant::now();
    let rows = optimality_audit(family, s.quadrature_k, opts.exec)?;
    let budget = slice_usage(family, &rows);
    let binding = binding_slice(&budget);
    let (continuity, continuity_tau) = match (probe && s.probe.enabled, s.t_range) {
        (true, Some(range)) => {
            let t = s.probe.t.unwrap_or(0.5 * (range.0 + range.1));
            let rows = continuity_probe(family, &|t: &[f64]| s.marginals_at(t), t, range, &probe_options(s, opts))?;
            let tau = s.probe.taus.iter().copied().find(|t| *t == 1e-2).unwrap_or(s.probe.taus[0]);
            (rows, Some(tau))
        }
        _ => (Vec::new(), None),
    };
    let trace = trace_rows(family, s.n)?;
    Ok(AuditReport {
        name: s.name.clone(),
        eps: s.eps,
        eps1: Some(family.budget.eps1),
        thresholds: Some(thresholds(family, s.quadrature_k)),
        rows,
        continuity,
        continuity_tau,
        budget,
        binding,
        failure: None,
        trace,
        wall_clock: started.elapsed(),
    })
}

pub fn probe_options(s: &Scenario, opts: &RunOptions) -> ProbeOptions {
    ProbeOptions {
        levels: s.probe.levels,
        samples: s.probe.samples,
        taus: s.probe.taus.clone(),
        seed: opts.seed.unwrap_or(s.seed),
        exec: opts.exec,
    }
}

fn trace_rows(family: &MongeMapFamily, samples: usize) -> Result<Vec<(String, f64, f64)>> {
    let mut out = Vec::new();
    for s in &family.slices {
        let t = crate::monge::join_t(&s.t);
        for q in 0..samples {
            let x = (q as f64 + 0.5) / samples as f64;
            if s.source().density(s.source().cell_of(x)) > 0.0 {
                out.push((t.clone(), x, s.evaluate(x)?));
            }
        }
    }
    Ok(out)
}

/// Assembles, audits and (with `out`) writes the report and family dump.
///
/// Errors are configuration or assembly failures; budgets that cannot be met
/// come back as a failed report naming the binding slice.
pub fn run_scenario(
    s: &Scenario,
    out: Option<&Path>,
    opts: &RunOptions,
) -> Result<(AuditReport, Option<MongeMapFamily>)> {
    let started = Instant::now();
    let family = match assemble_scenario(s, opts.exec) {
        Ok(f) => f,
        Err(e) => match budget_failure(&e) {
            Some(slice) => {
                let report = AuditReport::failed(&s.name, s.eps, slice, e.to_string(), started);
                if let Some(dir) = out {
                    emit_report(&report, s, dir)?;
                }
                return Ok((report, None));
            }
            None => return Err(e),
        },
    };
    let mut report = audit_family(s, &family, opts, true)?;
    report.wall_clock = started.elapsed();
    if let Some(dir) = out {
        emit_report(&report, s, dir)?;
        family.write_dir(&dir.join("family"))?;
        let base = fs::canonicalize(&s.base).unwrap_or_else(|_| s.base.clone());
        let p = dir.join("family").join("base_dir");
        fs::write(&p, base.to_string_lossy().as_bytes()).map_err(|e| Error::io(&p, e))?;
    }
    Ok((report, Some(family)))
}

fn write_csv<F>(dir: &Path, name: &str, fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<fs::File>) -> csv::Result<()>,
{
    let p = dir.join(name);
    let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    let mut w = csv::Writer::from_writer(f);
    fill(&mut w).map_err(|e| Error::csv(&p, e))?;
    w.flush().map_err(|e| Error::io(&p, e))
}

/// Writes `summary.csv`, `continuity.csv`, `map_trace.csv`, `budget.csv` and `config_echo`.
pub fn emit_report(report: &AuditReport, s: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let th = report.thresholds;
    write_csv(dir, "summary.csv", |w| {
        w.write_record(["t", "exact_value", "monge_cost", "gap", "pushforward_dkr", "plan_gap", "tol_disc", "pass"])?;
        for r in &report.rows {
            let pass = th.is_some_and(|th| r.passes(&th));
            w.write_record([
                crate::monge::join_t(&r.t),
                r.exact_value.to_string(),
                r.monge_cost.to_string(),
                r.gap.to_string(),
                r.pushforward_dkr.to_string(),
                r.plan_gap.to_string(),
                r.tol_disc.to_string(),
                pass.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_csv(dir, "continuity.csv", |w| {
        w.write_record(["t", "t_n", "level", "tau", "exceed_fraction"])?;
        for r in &report.continuity {
            w.write_record([
                r.t.to_string(),
                r.t_n.to_string(),
                r.level.to_string(),
                r.tau.to_string(),
                r.exceed_fraction.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_csv(dir, "map_trace.csv", |w| {
        w.write_record(["t", "x", "y"])?;
        for (t, x, y) in &report.trace {
            w.write_record([t.clone(), x.to_string(), y.to_string()])?;
        }
        Ok(())
    })?;
    write_csv(dir, "budget.csv", |w| {
        w.write_record(["slice", "count", "allowance", "used", "binding"])?;
        for u in &report.budget {
            let binding = report.binding.as_deref() == Some(u.name.as_str());
            w.write_record([
                u.name.clone(),
                u.count.to_string(),
                u.allowance.to_string(),
                u.used.to_string(),
                binding.to_string(),
            ])?;
        }
        if report.budget.is_empty() {
            if let Some(b) = &report.binding {
                w.write_record([b.clone(), String::new(), String::new(), String::new(), "true".to_string()])?;
            }
        }
        Ok(())
    })?;
    let p = dir.join("config_echo");
    fs::write(&p, s.text.as_bytes()).map_err(|e| Error::io(&p, e))
}

/// Reads the scenario echoed into a run directory.
pub fn scenario_from_run(dir: &Path) -> Result<Scenario> {
    let p = dir.join("config_echo");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let b = dir.join("family").join("base_dir");
    let base = fs::read_to_string(&b).map(|s| s.trim().into()).unwrap_or_else(|_| dir.to_path_buf());
    Scenario::parse(&text, &base)
}
