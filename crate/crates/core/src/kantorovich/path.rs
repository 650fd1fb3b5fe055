//! Entropic plans along a parameter grid, each audited against the exact solver.

use crate::cost::ParametricCost;
use crate::error::{Error, Result};
use crate::measure::GridDensity;
use crate::par::{self, Execution};

use super::entropic::{self, Potentials, SinkhornOptions};
use super::exact::solve_exact;
use super::plan::{cell_cost_matrix, CostMatrix, Plan};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathOptions {
    /// Sub-samples per cell for the cell-averaged cost matrix.
    pub quadrature_k: usize,
    /// Carry potentials along the grid (forces sequential order).
    pub warm_start: bool,
    /// Sinkhorn L1 tolerance; `None` derives it from the slack.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub exec: Execution,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { quadrature_k: 8, warm_start: false, tol: None, max_iter: 200_000, exec: Execution::Parallel }
    }
}

/// Per-parameter record of a plan path.
#[derive(Clone, Debug)]
pub struct PathSample {
    pub exact_value: f64,
    pub plan_cost: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl PathSample {
    /// `t,value,gap,iterations`
    pub fn summary_line(&self, t: &[f64]) -> String {
        let t: Vec<String> = t.iter().map(|v| v.to_string()).collect();
        format!("{},{},{},{}", t.join(" "), self.exact_value, self.gap, self.iterations)
    }
}

/// Plans `sigma_t`, one per grid parameter, each within `eps_k` of optimal.
#[derive(Clone, Debug)]
pub struct PlanPath {
    pub ts: Vec<Vec<f64>>,
    pub plans: Vec<Plan>,
    pub costs: Vec<CostMatrix>,
    pub samples: Vec<PathSample>,
    pub eps_k: f64,
    pub eta: f64,
}

/// Solves one parameter: cost matrix, entropic plan, exact audit.
fn solve_at(
    cost: &ParametricCost,
    t: &[f64],
    mu: &GridDensity,
    nu: &GridDensity,
    eps_k: f64,
    opts: &PathOptions,
    warm: Option<&Potentials>,
) -> Result<(Plan, CostMatrix, PathSample, Potentials)> {
    // the cost matrix is filled sequentially here; the grid loop carries the parallelism
    let c = cell_cost_matrix(cost, t, mu.n(), nu.n(), opts.quadrature_k, Execution::Sequential)?;
    let eta = entropic::select_eta(mu.n(), nu.n(), eps_k);
    let tol = opts.tol.unwrap_or_else(|| entropic::default_tol(&c, eps_k));
    let sol = entropic::sinkhorn(
        &c,
        mu.weights(),
        nu.weights(),
        eta,
        SinkhornOptions { tol, max_iter: opts.max_iter },
        warm,
    )?;
    let exact = solve_exact(&c, mu.weights(), nu.weights())?;
    let plan_cost = sol.plan.cost(&c);
    let sample =
        PathSample { exact_value: exact.value, plan_cost, gap: plan_cost - exact.value, iterations: sol.iterations };
    Ok((sol.plan, c, sample, sol.potentials))
}

/// Entropic plan path with per-sample `eps_k`-optimality audit.
///
/// `mus[k]`, `nus[k]` are the marginals at `ts[k]`. Cold starts run as a
/// parallel map over the grid; warm starts run sequentially in grid order.
pub fn continuous_plan_path(
    cost: &ParametricCost,
    ts: &[Vec<f64>],
    mus: &[GridDensity],
    nus: &[GridDensity],
    eps_k: f64,
    opts: &PathOptions,
) -> Result<PlanPath> {
    if ts.is_empty() || ts.len() != mus.len() || ts.len() != nus.len() {
        return Err(Error::Shape(format!("{} parameters, {} sources, {} targets", ts.len(), mus.len(), nus.len())));
    }
    if !(eps_k > 0.0) {
        return Err(Error::Domain(format!("eps_k = {eps_k} must be positive")));
    }
    let solved: Vec<(Plan, CostMatrix, PathSample)> = if opts.warm_start {
        let mut out = Vec::with_capacity(ts.len());
        let mut warm: Option<Potentials> = None;
        for k in 0..ts.len() {
            let (p, c, s, pot) = solve_at(cost, &ts[k], &mus[k], &nus[k], eps_k, opts, warm.as_ref())?;
            warm = Some(pot);
            out.push((p, c, s));
        }
        out
    } else {
        par::try_map_range(opts.exec, ts.len(), |k| {
            solve_at(cost, &ts[k], &mus[k], &nus[k], eps_k, opts, None).map(|(p, c, s, _)| (p, c, s))
        })?
    };
    for (k, (_, _, s)) in solved.iter().enumerate() {
        if s.gap > eps_k {
            return Err(Error::AuditFailure(format!(
                "plan at t = {:?} is {:e} above the exact value, slack is {eps_k:e}",
                ts[k], s.gap
            )));
        }
    }
    let eta = entropic::select_eta(mus[0].n(), nus[0].n(), eps_k);
    let mut plans = Vec::with_capacity(solved.len());
    let mut costs = Vec::with_capacity(solved.len());
    let mut samples = Vec::with_capacity(solved.len());
    for (p, c, s) in solved {
        plans.push(p);
        costs.push(c);
        samples.push(s);
    }
    Ok(PlanPath { ts: ts.to_vec(), plans, costs, samples, eps_k, eta })
}
