//! Per-parameter audits: optimality against the exact solver, pushforward
//! law, and usage of each budget slice.

use crate::error::{Error, Result};
use crate::kantorovich::{cell_cost_matrix, solve_exact};
use crate::monge::{MapSlice, MongeMapFamily, Pipeline, CELL_OSCILLATION, PLAN_SLACK, REGION_TAIL, TRUNCATION_MASS};
use crate::par::{self, Execution};

/// Audit of one grid parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub t: Vec<f64>,
    pub exact_value: f64,
    pub monge_cost: f64,
    pub gap: f64,
    pub pushforward_dkr: f64,
    /// Plan cost minus exact value, both under the cost the plans were solved for.
    pub plan_gap: f64,
    pub tol_disc: f64,
    /// Measured use of each budget slice, in [`MongeMapFamily::budget`] order.
    pub usage: Vec<f64>,
}

/// Pass/fail thresholds for the row audits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub eps: f64,
    pub tol_disc: f64,
    pub pushforward: f64,
}

impl AuditRow {
    pub fn passes_gap(&self, th: &Thresholds) -> bool {
        self.gap <= th.eps + th.tol_disc
    }

    pub fn passes_lower(&self, th: &Thresholds) -> bool {
        self.gap >= -th.tol_disc
    }

    pub fn passes_pushforward(&self, th: &Thresholds) -> bool {
        self.pushforward_dkr <= th.pushforward
    }

    pub fn passes(&self, th: &Thresholds) -> bool {
        self.passes_gap(th) && self.passes_lower(th) && self.passes_pushforward(th)
    }
}

/// Thresholds for a family on `n` cells: `tol_disc = C_L / n`, pushforward `2/n + 1/(k n)`.
pub fn thresholds(family: &MongeMapFamily, quadrature_k: usize) -> Thresholds {
    let n = family.slices.first().map_or(1, |s| s.source().n());
    let ts = family.cover.space().points();
    let c_l = family.cost.lipschitz_bound(ts, n);
    Thresholds {
        eps: family.budget.eps,
        tol_disc: c_l / n as f64,
        pushforward: 2.0 / n as f64 + 1.0 / (quadrature_k * n) as f64,
    }
}

fn region_outside(family: &MongeMapFamily, slice: &MapSlice) -> f64 {
    let ball = &family.cover.balls()[slice.alpha];
    let outside = |m: &crate::measure::GridDensity, r: (f64, f64)| m.cdf_clamped(r.0) + (1.0 - m.cdf_clamped(r.1));
    match family.pipeline {
        Pipeline::Fixed => 0.0,
        Pipeline::TargetPath => outside(slice.target(), ball.y_region),
        Pipeline::Full => outside(slice.target(), ball.y_region) + outside(slice.source(), ball.x_region),
    }
}

/// Audits every slice of the family. Rows are independent and computed as a parallel map.
pub fn optimality_audit(family: &MongeMapFamily, quadrature_k: usize, exec: Execution) -> Result<Vec<AuditRow>> {
    let th = thresholds(family, quadrature_k);
    let truncated = family.truncation.is_some();
    par::try_map_range(exec, family.slices.len(), |k| {
        let s = &family.slices[k];
        let (n, m) = (s.source().n(), s.target().n());
        let c = cell_cost_matrix(&family.cost, &s.t, n, m, quadrature_k, Execution::Sequential)?;
        let exact = solve_exact(&c, s.source().weights(), s.target().weights())?;
        let monge = s.monge_cost(&family.cost, quadrature_k)?;
        let (working_exact, working_plan, working_monge) = if truncated {
            let cw = cell_cost_matrix(&family.working_cost, &s.t, n, m, quadrature_k, Execution::Sequential)?;
            let ew = solve_exact(&cw, s.source().weights(), s.target().weights())?;
            (ew.value, s.plan().cost(&cw), s.monge_cost(&family.working_cost, quadrature_k)?)
        } else {
            (exact.value, s.plan().cost(&c), monge)
        };
        let plan_gap = working_plan - working_exact;
        let usage = family
            .budget
            .slices()
            .iter()
            .map(|b| match b.name {
                PLAN_SLACK => plan_gap.max(0.0),
                CELL_OSCILLATION => (working_monge - working_plan).max(0.0),
                TRUNCATION_MASS => (monge - working_monge).max(0.0),
                REGION_TAIL => region_outside(family, s),
                _ => 0.0,
            })
            .collect();
        Ok::<_, Error>(AuditRow {
            t: s.t.clone(),
            exact_value: exact.value,
            monge_cost: monge,
            gap: monge - exact.value,
            pushforward_dkr: s.pushforward_dkr(quadrature_k)?,
            plan_gap,
            tol_disc: th.tol_disc,
            usage,
        })
    })
}

/// Use of one budget slice over the whole grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceUse {
    pub name: String,
    pub count: u32,
    pub allowance: f64,
    pub used: f64,
}

impl SliceUse {
    pub fn ratio(&self) -> f64 {
        if self.allowance > 0.0 {
            self.used / self.allowance
        } else {
            f64::INFINITY
        }
    }
}

/// Largest use of each slice over the rows.
pub fn slice_usage(family: &MongeMapFamily, rows: &[AuditRow]) -> Vec<SliceUse> {
    family
        .budget
        .slices()
        .iter()
        .enumerate()
        .map(|(i, b)| SliceUse {
            name: b.name.to_string(),
            count: b.count,
            allowance: b.allowance,
            used: rows.iter().map(|r| r.usage[i]).fold(0.0, f64::max),
        })
        .collect()
}

/// Name of the slice with the largest use relative to its allowance.
pub fn binding_slice(uses: &[SliceUse]) -> Option<String> {
    let mut best: Option<&SliceUse> = None;
    for u in uses {
        if best.is_none_or(|b| u.ratio() > b.ratio()) {
            best = Some(u);
        }
    }
    best.map(|b| b.name.clone())
}
