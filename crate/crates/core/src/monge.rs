//! Assembly of parametric Monge map families from a plan path and a cover.
//!
//! At each parameter `t` the source is cut into cells of width `delta_tilde(t)`
//! (in CDF coordinates, or in `x` for moving sources). Cell `j` receives the
//! part of the plan sitting over it, `nu_t^j`, and is mapped onto it by the
//! quantile map of `nu_t^j` composed with the offset inside the cell.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::cost::{truncation_level, ParametricCost, TailCurve};
use crate::cover::{
    build_cover, cells_on, CellPartition, CoverOptions, Marginals, ParameterCover, ParameterSpace, Regions,
};
use crate::error::{Error, Result};
use crate::kantorovich::{continuous_plan_path, PathOptions, PathSample, Plan};
use crate::measure::{bin_points, dkr_grid, GridDensity};
use crate::par::{self, Execution};
use crate::skorohod::{cell_cdf_offset, prefix_sums, weighted_cell_cdf_offset, QuantileSkorohodMap};

/// Which family is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pipeline {
    /// Fixed source and target.
    Fixed,
    /// Fixed source, moving target.
    TargetPath,
    /// Moving source and target.
    Full,
}

impl Pipeline {
    pub fn id(self) -> &'static str {
        match self {
            Pipeline::Fixed => "fixed",
            Pipeline::TargetPath => "target-path",
            Pipeline::Full => "full",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "fixed" => Ok(Pipeline::Fixed),
            "target-path" => Ok(Pipeline::TargetPath),
            "full" => Ok(Pipeline::Full),
            other => Err(Error::Config(format!("unknown pipeline '{other}'"))),
        }
    }

    /// Number of equal slices `eps` is split into.
    pub fn slices(self) -> u32 {
        match self {
            Pipeline::Fixed => 5,
            Pipeline::TargetPath => 6,
            Pipeline::Full => 7,
        }
    }
}

/// One named part of the error budget.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSlice {
    pub name: &'static str,
    pub count: u32,
    pub allowance: f64,
}

pub const PLAN_SLACK: &str = "plan_slack";
pub const CELL_OSCILLATION: &str = "cell_oscillation";
pub const TRUNCATION_MASS: &str = "truncation_mass";
pub const REGION_TAIL: &str = "region_tail";

/// Split of the total tolerance `eps` into slices of size `eps1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonBudget {
    pub eps: f64,
    pub eps1: f64,
    pub pipeline: Pipeline,
    /// Slack given to the plan selection; one slice.
    pub eps_k: f64,
}

impl EpsilonBudget {
    pub fn new(eps: f64, pipeline: Pipeline) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Domain(format!("eps = {eps} must be positive")));
        }
        let eps1 = eps / pipeline.slices() as f64;
        Ok(Self { eps, eps1, pipeline, eps_k: eps1 })
    }

    pub fn slices(&self) -> Vec<BudgetSlice> {
        let mut out = vec![(PLAN_SLACK, 1), (CELL_OSCILLATION, 2), (TRUNCATION_MASS, 2)];
        match self.pipeline {
            Pipeline::Fixed => {}
            Pipeline::TargetPath => out.push((REGION_TAIL, 1)),
            Pipeline::Full => out.push((REGION_TAIL, 2)),
        }
        out.into_iter().map(|(name, count)| BudgetSlice { name, count, allowance: count as f64 * self.eps1 }).collect()
    }
}

/// How source points are placed on the line the cells cut.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Embedding {
    /// `s = F_mu(x)`; source mass is Lebesgue measure in `s`.
    Cdf,
    /// `s = x`; offsets are measured with the source itself.
    Identity,
}

impl Embedding {
    pub fn id(self) -> &'static str {
        match self {
            Embedding::Cdf => "cdf",
            Embedding::Identity => "identity",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "cdf" => Ok(Embedding::Cdf),
            "identity" => Ok(Embedding::Identity),
            other => Err(Error::Config(format!("unknown embedding '{other}'"))),
        }
    }
}

/// Source density with its CDF/quantile parametrization and density floor on the trim window.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceParametrization {
    pub mu: GridDensity,
    /// Smallest density on the cells meeting the trim window.
    pub d_min: f64,
    pub trim: (f64, f64),
}

impl SourceParametrization {
    pub fn new(mu: GridDensity, trim: (f64, f64)) -> Result<Self> {
        if !(0.0 <= trim.0 && trim.0 < trim.1 && trim.1 <= 1.0) {
            return Err(Error::Config(format!("trim window [{}, {}] must lie in [0, 1]", trim.0, trim.1)));
        }
        let n = mu.n();
        let first = ((trim.0 * n as f64).floor() as usize).min(n - 1);
        let last = ((trim.1 * n as f64).ceil() as usize).clamp(first + 1, n);
        let d_min = (first..last).map(|i| mu.density(i)).fold(f64::INFINITY, f64::min);
        if !(d_min > 0.0) {
            return Err(Error::InvalidMeasure(format!("source density vanishes inside [{}, {}]", trim.0, trim.1)));
        }
        Ok(Self { mu, d_min, trim })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.mu.cdf_clamped(x)
    }

    pub fn quantile(&self, s: f64) -> f64 {
        self.mu.quantile_clamped(s)
    }
}

/// Sums of plan rows weighted by their overlap with a union of `x` intervals.
fn project_rows(plan: &Plan, rows_cum: &[Arc<[f64]>], intervals: &[(f64, f64)]) -> Option<QuantileSkorohodMap> {
    let n = plan.rows();
    let mut parts: Vec<(usize, f64)> = Vec::new();
    for &(a, b) in intervals {
        if !(b > a) {
            continue;
        }
        let first = ((a * n as f64).floor().max(0.0) as usize).min(n - 1);
        let last = ((b * n as f64).ceil() as usize).min(n);
        for i in first..last {
            let lo = a.max(i as f64 / n as f64);
            let hi = b.min((i + 1) as f64 / n as f64);
            let frac = (hi - lo) * n as f64;
            if frac > 0.0 {
                parts.push((i, frac.min(1.0)));
            }
        }
    }
    match parts.as_slice() {
        [] => None,
        [(i, frac)] => QuantileSkorohodMap::from_scaled(rows_cum[*i].clone(), *frac).ok(),
        _ => {
            let mut masses = vec![0.0; plan.cols()];
            for (i, frac) in &parts {
                for (m, p) in masses.iter_mut().zip(plan.row(*i)) {
                    *m += frac * p;
                }
            }
            QuantileSkorohodMap::from_cell_masses(&masses).ok()
        }
    }
}

/// Cell targets `nu_t^j`: the plan restricted to the source cells `x_cells[j]`.
///
/// Grid cells straddling a boundary are split by length. The masses sum to the
/// plan's column marginal.
pub fn project_cell_targets(plan: &Plan, x_cells: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let n = plan.rows();
    x_cells
        .iter()
        .map(|&(a, b)| {
            let mut masses = vec![0.0; plan.cols()];
            if b > a {
                let first = ((a * n as f64).floor().max(0.0) as usize).min(n - 1);
                let last = ((b * n as f64).ceil() as usize).min(n);
                for i in first..last {
                    let frac = (b.min((i + 1) as f64 / n as f64) - a.max(i as f64 / n as f64)) * n as f64;
                    if frac > 0.0 {
                        for (m, p) in masses.iter_mut().zip(plan.row(i)) {
                            *m += frac.min(1.0) * p;
                        }
                    }
                }
            }
            masses
        })
        .collect()
}

/// The map `T_t` at one parameter.
#[derive(Clone, Debug)]
pub struct MapSlice {
    pub t: Vec<f64>,
    pub delta: f64,
    pub delta_tilde: f64,
    /// Ball with the largest modulus active at `t`.
    pub alpha: usize,
    pub embedding: Embedding,
    source: GridDensity,
    target: GridDensity,
    plan: Plan,
    partition: CellPartition,
    /// `[x_lo, x_hi]` covered by the cells.
    core_x: (f64, f64),
    cells: Vec<Option<QuantileSkorohodMap>>,
    remainder: Option<QuantileSkorohodMap>,
    pub sample: Option<PathSample>,
}

impl MapSlice {
    /// Builds the map from a plan. `core` is the window of the cut line (CDF
    /// values or `x` values, per `embedding`) that the cells partition; the
    /// rest of the source forms one remainder cell.
    pub fn from_plan(
        t: Vec<f64>,
        source: GridDensity,
        target: GridDensity,
        plan: Plan,
        delta_tilde: f64,
        embedding: Embedding,
        core: (f64, f64),
    ) -> Result<Self> {
        if plan.rows() != source.n() || plan.cols() != target.n() {
            return Err(Error::Shape(format!(
                "{}x{} plan for {} source and {} target cells",
                plan.rows(),
                plan.cols(),
                source.n(),
                target.n()
            )));
        }
        let partition = cells_on(core.0, core.1, delta_tilde)?;
        let count = partition.count();
        if count > MAX_CELLS {
            return Err(Error::CoverFailure(format!(
                "{count} cells at t = {t:?}; the modulus is too small for this source"
            )));
        }
        let to_x = |s: f64| match embedding {
            Embedding::Cdf => source.quantile_clamped(s),
            Embedding::Identity => s,
        };
        let rows_cum: Vec<Arc<[f64]>> = (0..plan.rows()).map(|i| prefix_sums(plan.row(i))).collect();
        let core_x = (to_x(core.0), to_x(core.1));
        let mut cells = Vec::with_capacity(count);
        for j in 0..count {
            let (lo, hi) = partition.bounds(j);
            let (xa, xb) = (to_x(lo), to_x(hi));
            let w = match embedding {
                Embedding::Cdf => hi - lo,
                Embedding::Identity => source.cdf_clamped(xb) - source.cdf_clamped(xa),
            };
            let map = if w > 0.0 {
                project_rows(&plan, &rows_cum, &[(xa, xb)]).and_then(|m| m.with_domain(w).ok())
            } else {
                None
            };
            cells.push(map);
        }
        let rest = source.cdf_clamped(core_x.0) + (1.0 - source.cdf_clamped(core_x.1));
        let remainder = if rest > 1e-15 {
            project_rows(&plan, &rows_cum, &[(0.0, core_x.0), (core_x.1, 1.0)]).and_then(|m| m.with_domain(rest).ok())
        } else {
            None
        };
        Ok(Self {
            t,
            delta: f64::NAN,
            delta_tilde,
            alpha: 0,
            embedding,
            source,
            target,
            plan,
            partition,
            core_x,
            cells,
            remainder,
            sample: None,
        })
    }

    pub fn source(&self) -> &GridDensity {
        &self.source
    }

    pub fn target(&self) -> &GridDensity {
        &self.target
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn partition(&self) -> &CellPartition {
        &self.partition
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Target mass of cell `j` (zero for skipped cells).
    pub fn cell_mass(&self, j: usize) -> f64 {
        self.cells[j].as_ref().map_or(0.0, |m| m.target_mass())
    }

    pub fn cell_map(&self, j: usize) -> Option<&QuantileSkorohodMap> {
        self.cells[j].as_ref()
    }

    pub fn remainder(&self) -> Option<&QuantileSkorohodMap> {
        self.remainder.as_ref()
    }

    /// Mass of the source outside the cells.
    pub fn remainder_mass(&self) -> f64 {
        self.source.cdf_clamped(self.core_x.0) + (1.0 - self.source.cdf_clamped(self.core_x.1))
    }

    /// `T_t(x)`.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let f = self.source.cdf_clamped(x);
        let s = match self.embedding {
            Embedding::Cdf => f,
            Embedding::Identity => x,
        };
        let (lo, hi) = self.partition.range();
        if s >= lo && s <= hi {
            let j = self.partition.index_of(s);
            let u = match self.embedding {
                Embedding::Cdf => cell_cdf_offset(s, j, &self.partition)?,
                Embedding::Identity => weighted_cell_cdf_offset(s, j, &self.partition, &self.source)?,
            };
            let map = self.cells[j].as_ref().ok_or(Error::EmptyTarget)?;
            return map.xi(u.min(map.domain_length()));
        }
        let below = self.source.cdf_clamped(self.core_x.0);
        let u = if s < lo { f } else { below + (f - self.source.cdf_clamped(self.core_x.1)).max(0.0) };
        let map = self.remainder.as_ref().ok_or(Error::EmptyTarget)?;
        map.xi(u.min(map.domain_length()))
    }

    /// Breakpoints in `x` where the map or the source density may jump: the
    /// source grid merged with the cell boundaries.
    fn breakpoints(&self) -> Vec<f64> {
        let n = self.source.n();
        let to_x = |s: f64| match self.embedding {
            Embedding::Cdf => self.source.quantile_clamped(s),
            Embedding::Identity => s,
        };
        let mut cuts: Vec<f64> = Vec::with_capacity(n + self.cells.len() + 2);
        cuts.extend((0..=n).map(|i| i as f64 / n as f64));
        cuts.push(self.core_x.0);
        cuts.extend((0..self.cells.len()).map(|j| to_x(self.partition.bounds(j).1)));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        cuts
    }

    /// Midpoint quadrature of `mu_t`: `k` points in every piece between
    /// consecutive [`breakpoints`](Self::breakpoints), weighted by the piece's mass.
    pub fn quadrature(&self, k: usize) -> Result<Vec<(f64, f64)>> {
        if k == 0 {
            return Err(Error::Domain("sub-sample count must be positive".into()));
        }
        let cuts = self.breakpoints();
        let mut points = Vec::with_capacity(cuts.len() * k);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mass = self.source.mass_between(a, b);
            if !(mass > 0.0) {
                continue;
            }
            for q in 0..k {
                points.push((a + (q as f64 + 0.5) / k as f64 * (b - a), mass / k as f64));
            }
        }
        Ok(points)
    }

    /// `int h_t(x, T_t x) mu_t(dx)` under [`quadrature`](Self::quadrature) with `k` points per piece.
    pub fn monge_cost(&self, cost: &ParametricCost, k: usize) -> Result<f64> {
        let mut total = 0.0;
        for (x, w) in self.quadrature(k)? {
            total += w * cost.eval(x, self.evaluate(x)?, &self.t)?;
        }
        Ok(total)
    }

    /// Binned image of the source under `T_t`, from [`quadrature`](Self::quadrature) with `k` points per piece.
    pub fn pushforward(&self, bins: usize, k: usize) -> Result<GridDensity> {
        let images: Vec<(f64, f64)> =
            self.quadrature(k)?.into_iter().map(|(x, w)| Ok((self.evaluate(x)?, w))).collect::<Result<_>>()?;
        bin_points(images, bins)
    }

    /// `d_KR` between the binned image and the target.
    pub fn pushforward_dkr(&self, k: usize) -> Result<f64> {
        dkr_grid(&self.pushforward(self.target.n(), k)?, &self.target)
    }

    /// `[lo, hi)` of cell `j` on the cut line.
    pub fn cell_bounds(&self, j: usize) -> (f64, f64) {
        self.partition.bounds(j)
    }
}

/// Cells per parameter above which assembly refuses to proceed.
pub const MAX_CELLS: usize = 4_000_000;

/// Knobs for assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct AssembleOptions {
    pub cover: CoverOptions,
    pub path: PathOptions,
    /// `x` window `K1` cut into cells; the rest of the source is the remainder cell.
    pub trim: (f64, f64),
    /// Candidate truncation levels for unbounded costs.
    pub truncation_levels: Vec<f64>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            cover: CoverOptions::default(),
            path: PathOptions::default(),
            trim: (0.0, 1.0),
            truncation_levels: (1..=24).map(|k| 2f64.powi(k)).collect(),
        }
    }
}

/// Truncation `min(h, level)` applied before assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct Truncation {
    pub level: f64,
    pub curve: TailCurve,
}

/// An assembled family `t -> T_t` over a parameter grid.
#[derive(Clone, Debug)]
pub struct MongeMapFamily {
    pub pipeline: Pipeline,
    pub budget: EpsilonBudget,
    pub cover: ParameterCover,
    /// Cost as given.
    pub cost: ParametricCost,
    /// Cost the plans were solved for (`cost`, possibly truncated).
    pub working_cost: ParametricCost,
    pub truncation: Option<Truncation>,
    pub trim: (f64, f64),
    pub eta: f64,
    pub slices: Vec<MapSlice>,
    options: AssembleOptions,
}

/// Family for a fixed source `mu` and fixed target `nu`.
pub fn assemble_fixed(
    mu: &GridDensity,
    nu: &GridDensity,
    cost: &ParametricCost,
    space: &ParameterSpace,
    eps: f64,
    opts: &AssembleOptions,
) -> Result<MongeMapFamily> {
    let m = space.len();
    assemble(Pipeline::Fixed, vec![mu.clone(); m], vec![nu.clone(); m], cost, space, eps, opts)
}

/// Family for a fixed source and targets `nus[k]` at the parameter points.
pub fn assemble_target_path(
    mu: &GridDensity,
    nus: &[GridDensity],
    cost: &ParametricCost,
    space: &ParameterSpace,
    eps: f64,
    opts: &AssembleOptions,
) -> Result<MongeMapFamily> {
    assemble(Pipeline::TargetPath, vec![mu.clone(); space.len()], nus.to_vec(), cost, space, eps, opts)
}

/// Family for sources `mus[k]` and targets `nus[k]` at the parameter points.
pub fn assemble_full(
    mus: &[GridDensity],
    nus: &[GridDensity],
    cost: &ParametricCost,
    space: &ParameterSpace,
    eps: f64,
    opts: &AssembleOptions,
) -> Result<MongeMapFamily> {
    assemble(Pipeline::Full, mus.to_vec(), nus.to_vec(), cost, space, eps, opts)
}

/// Assembly for any pipeline; `mus[k]`, `nus[k]` are the marginals at the parameter points.
pub fn assemble(
    pipeline: Pipeline,
    mus: Vec<GridDensity>,
    nus: Vec<GridDensity>,
    cost: &ParametricCost,
    space: &ParameterSpace,
    eps: f64,
    opts: &AssembleOptions,
) -> Result<MongeMapFamily> {
    let mut family = prepare(pipeline, &mus, &nus, cost, space, eps, opts)?;
    let ts: Vec<Vec<f64>> = space.points().to_vec();
    let path = continuous_plan_path(&family.working_cost, &ts, &mus, &nus, family.budget.eps_k, &opts.path)?;
    family.eta = path.eta;
    let plans = path.plans;
    let samples = path.samples;
    let fam = &family;
    let slices = par::try_map_range(opts.path.exec, ts.len(), |k| {
        let mut s = fam.slice_from_plan(&ts[k], mus[k].clone(), nus[k].clone(), plans[k].clone())?;
        s.sample = Some(samples[k].clone());
        Ok::<_, Error>(s)
    })?;
    family.slices = slices;
    Ok(family)
}

/// Everything but the plans: budget, truncation level and cover. The result has no slices.
pub fn prepare(
    pipeline: Pipeline,
    mus: &[GridDensity],
    nus: &[GridDensity],
    cost: &ParametricCost,
    space: &ParameterSpace,
    eps: f64,
    opts: &AssembleOptions,
) -> Result<MongeMapFamily> {
    let budget = EpsilonBudget::new(eps, pipeline)?;
    if mus.len() != space.len() || nus.len() != space.len() {
        return Err(Error::Shape(format!("{} parameters, {} sources, {} targets", space.len(), mus.len(), nus.len())));
    }
    let ts: Vec<Vec<f64>> = space.points().to_vec();
    let truncation = match cost.bounded_by() {
        Some(_) => None,
        None => {
            let (level, curve) =
                truncation_level(&cost.dominating_pair(), &ts, mus, nus, eps, &opts.truncation_levels)?;
            Some(Truncation { level, curve })
        }
    };
    let working_cost = match &truncation {
        Some(tr) => cost.truncated(tr.level),
        None => cost.clone(),
    };
    // density floors are checked up front so that bad sources fail before any solve
    if pipeline != Pipeline::Full {
        SourceParametrization::new(mus[0].clone(), opts.trim)?;
    }
    let regions = match pipeline {
        Pipeline::Fixed => Regions::None,
        Pipeline::TargetPath => Regions::Target,
        Pipeline::Full => Regions::Both,
    };
    let cover_opts = CoverOptions { regions, region_tail: budget.eps1, x_domain: opts.trim, ..opts.cover };
    let cover = build_cover(&working_cost, space, budget.eps1, Marginals { mus, nus }, &cover_opts)?;
    let eta = crate::kantorovich::select_eta(mus[0].n(), nus[0].n(), budget.eps_k);
    Ok(MongeMapFamily {
        pipeline,
        budget,
        cover,
        cost: cost.clone(),
        working_cost,
        truncation,
        trim: opts.trim,
        eta,
        slices: Vec::new(),
        options: opts.clone(),
    })
}

impl MongeMapFamily {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn options(&self) -> &AssembleOptions {
        &self.options
    }

    pub fn embedding(&self) -> Embedding {
        match self.pipeline {
            Pipeline::Full => Embedding::Identity,
            _ => Embedding::Cdf,
        }
    }

    /// Cell width on the cut line for modulus `delta` and source `mu`.
    pub fn delta_tilde(&self, delta: f64, mu: &GridDensity) -> Result<f64> {
        Ok(match self.embedding() {
            Embedding::Cdf => delta * SourceParametrization::new(mu.clone(), self.trim)?.d_min,
            Embedding::Identity => delta,
        })
    }

    fn core(&self, mu: &GridDensity) -> (f64, f64) {
        match self.embedding() {
            Embedding::Cdf => (mu.cdf_clamped(self.trim.0), mu.cdf_clamped(self.trim.1)),
            Embedding::Identity => self.trim,
        }
    }

    /// The map at `t` from a given plan, using this family's cover and budget.
    pub fn slice_from_plan(&self, t: &[f64], mu: GridDensity, nu: GridDensity, plan: Plan) -> Result<MapSlice> {
        let delta = self.cover.delta(t)?;
        let alpha = self.cover.select_alpha(t)?;
        let delta_tilde = self.delta_tilde(delta, &mu)?;
        let core = self.core(&mu);
        let mut s = MapSlice::from_plan(t.to_vec(), mu, nu, plan, delta_tilde, self.embedding(), core)?;
        s.delta = delta;
        s.alpha = alpha;
        Ok(s)
    }

    /// Solves the plan at an arbitrary `t` inside the cover and builds the map there.
    pub fn record_at(&self, t: &[f64], mu: GridDensity, nu: GridDensity) -> Result<MapSlice> {
        let path_opts = PathOptions { warm_start: false, exec: Execution::Sequential, ..self.options.path };
        let path = continuous_plan_path(
            &self.working_cost,
            &[t.to_vec()],
            std::slice::from_ref(&mu),
            std::slice::from_ref(&nu),
            self.budget.eps_k,
            &path_opts,
        )?;
        let plan = path.plans.into_iter().next().expect("one plan per parameter");
        let mut s = self.slice_from_plan(t, mu, nu, plan)?;
        s.sample = path.samples.into_iter().next();
        Ok(s)
    }

    /// Index of the grid parameter closest to `t`, and whether `t` is on the grid.
    pub fn nearest(&self, t: &[f64]) -> Result<(usize, bool)> {
        let space = self.cover.space();
        let mut best = (0, f64::INFINITY);
        for k in 0..space.len() {
            let d = space.dist_to(t, k)?;
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok((best.0, best.1 == 0.0))
    }

    /// `T_t(x)` at grid index `k`.
    pub fn evaluate(&self, k: usize, x: f64) -> Result<f64> {
        self.slices.get(k).ok_or_else(|| Error::Domain(format!("no parameter with index {k}")))?.evaluate(x)
    }

    /// `T_t(x)` for any `t`: off-grid parameters use the nearest grid map, flagged by `false`.
    pub fn evaluate_at(&self, t: &[f64], x: f64) -> Result<(f64, bool)> {
        let (k, on_grid) = self.nearest(t)?;
        Ok((self.evaluate(k, x)?, on_grid))
    }

    /// `int h_t(x, T_t x) mu_t(dx)` under the original cost.
    pub fn monge_cost(&self, k: usize, quadrature_k: usize) -> Result<f64> {
        self.slices[k].monge_cost(&self.cost, quadrature_k)
    }

    /// Writes the family to `dir`: `slices.csv`, `cells.csv`, `cover.csv`,
    /// `plans.csv`, the marginals and sampled quantile tables.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = |name: &str| {
            let p = dir.join(name);
            fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| Error::io(&p, e))
        };
        let csv_err = |name: &str| {
            let p = dir.join(name);
            move |e: csv::Error| Error::csv(&p, e)
        };
        let mut meta = file("family.toml")?;
        let trunc = self.truncation.as_ref().map_or("none".to_string(), |t| t.level.to_string());
        writeln!(
            meta,
            "pipeline = \"{}\"\neps = {:?}\neps1 = {:?}\neps_k = {:?}\neta = {:?}\ntrim = [{:?}, {:?}]\ntruncation = \"{}\"",
            self.pipeline.id(),
            self.budget.eps,
            self.budget.eps1,
            self.budget.eps_k,
            self.eta,
            self.trim.0,
            self.trim.1,
            trunc
        )
        .map_err(|e| Error::io(dir.join("family.toml"), e))?;
        self.cover.write_csv(file("cover.csv")?).map_err(csv_err("cover.csv"))?;

        let mut w = csv::Writer::from_writer(file("slices.csv")?);
        let e = csv_err("slices.csv");
        w.write_record(["t_index", "t", "delta", "delta_tilde", "alpha", "embedding", "core_lo", "core_hi", "cells"])
            .map_err(&e)?;
        for (k, s) in self.slices.iter().enumerate() {
            let (lo, hi) = s.partition.range();
            w.write_record([
                k.to_string(),
                join_t(&s.t),
                s.delta.to_string(),
                s.delta_tilde.to_string(),
                s.alpha.to_string(),
                s.embedding.id().to_string(),
                lo.to_string(),
                hi.to_string(),
                s.cell_count().to_string(),
            ])
            .map_err(&e)?;
        }
        w.flush().map_err(|err| Error::io(dir.join("slices.csv"), err))?;

        let mut w = csv::Writer::from_writer(file("cells.csv")?);
        let e = csv_err("cells.csv");
        w.write_record(["t", "j", "cell_lo", "cell_hi", "mass"]).map_err(&e)?;
        for s in &self.slices {
            let t = join_t(&s.t);
            for j in 0..s.cell_count() {
                let (lo, hi) = s.cell_bounds(j);
                w.write_record([t.clone(), j.to_string(), lo.to_string(), hi.to_string(), s.cell_mass(j).to_string()])
                    .map_err(&e)?;
            }
            if let Some(r) = &s.remainder {
                w.write_record([
                    t.clone(),
                    "remainder".into(),
                    String::new(),
                    String::new(),
                    r.target_mass().to_string(),
                ])
                .map_err(&e)?;
            }
        }
        w.flush().map_err(|err| Error::io(dir.join("cells.csv"), err))?;

        let mut w = csv::Writer::from_writer(file("plans.csv")?);
        let e = csv_err("plans.csv");
        w.write_record(["t_index", "i", "j", "mass"]).map_err(&e)?;
        for (k, s) in self.slices.iter().enumerate() {
            for i in 0..s.plan.rows() {
                for (j, m) in s.plan.row(i).iter().enumerate() {
                    if *m > 0.0 {
                        w.write_record([k.to_string(), i.to_string(), j.to_string(), m.to_string()]).map_err(&e)?;
                    }
                }
            }
        }
        w.flush().map_err(|err| Error::io(dir.join("plans.csv"), err))?;

        let mut w = csv::Writer::from_writer(file("quantiles.csv")?);
        let e = csv_err("quantiles.csv");
        w.write_record(["t", "j", "u", "y"]).map_err(&e)?;
        for s in &self.slices {
            let t = join_t(&s.t);
            let step = s.cell_count().div_ceil(QUANTILE_DUMP_CELLS).max(1);
            for j in (0..s.cell_count()).step_by(step) {
                if let Some(m) = &s.cells[j] {
                    for q in 0..QUANTILE_DUMP_SAMPLES {
                        let u = (q as f64 + 0.5) / QUANTILE_DUMP_SAMPLES as f64 * m.domain_length();
                        w.write_record([t.clone(), j.to_string(), u.to_string(), m.xi(u)?.to_string()]).map_err(&e)?;
                    }
                }
            }
        }
        w.flush().map_err(|err| Error::io(dir.join("quantiles.csv"), err))?;

        for (k, s) in self.slices.iter().enumerate() {
            let name = format!("mu_{k}.csv");
            s.source.write_csv(file(&name)?).map_err(csv_err(&name))?;
            let name = format!("nu_{k}.csv");
            s.target.write_csv(file(&name)?).map_err(csv_err(&name))?;
        }
        Ok(())
    }

    /// Rebuilds the per-parameter maps from a directory written by [`write_dir`](Self::write_dir).
    ///
    /// The cover, budget and cost are taken from `self`, which should come
    /// from the same configuration; plans, marginals and cell widths come from
    /// the directory, so no transport problem is solved.
    pub fn reload_slices(&mut self, dir: &Path) -> Result<()> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::File::open(&p).map_err(|e| Error::io(&p, e)).map(|f| (csv::Reader::from_reader(f), p))
        };
        let (mut r, p) = read("slices.csv")?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(&p, e))?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Config(format!("{}: bad number '{}'", p.display(), &rec[i])))
            };
            rows.push((num(2)?, num(3)?, num(4)? as usize, Embedding::from_id(&rec[5])?, (num(6)?, num(7)?)));
        }
        if rows.len() != self.cover.space().len() {
            return Err(Error::Shape(format!("{} slices for {} parameters", rows.len(), self.cover.space().len())));
        }
        let mut masses: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); rows.len()];
        let (mut r, p) = read("plans.csv")?;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(&p, e))?;
            let bad = || Error::Config(format!("{}: bad plan row", p.display()));
            let k: usize = rec[0].parse().map_err(|_| bad())?;
            let i: usize = rec[1].parse().map_err(|_| bad())?;
            let j: usize = rec[2].parse().map_err(|_| bad())?;
            let m: f64 = rec[3].parse().map_err(|_| bad())?;
            masses.get_mut(k).ok_or_else(bad)?.push((i, j, m));
        }
        let mut slices = Vec::with_capacity(rows.len());
        for (k, (delta, delta_tilde, alpha, embedding, core)) in rows.into_iter().enumerate() {
            let mu = GridDensity::load(&dir.join(format!("mu_{k}.csv")))?;
            let nu = GridDensity::load(&dir.join(format!("nu_{k}.csv")))?;
            let mut dense = vec![0.0; mu.n() * nu.n()];
            for &(i, j, m) in &masses[k] {
                if i >= mu.n() || j >= nu.n() {
                    return Err(Error::Shape(format!("plan entry ({i}, {j}) outside {}x{}", mu.n(), nu.n())));
                }
                dense[i * nu.n() + j] = m;
            }
            let plan = Plan::new(dense, mu.weights().to_vec(), nu.weights().to_vec())?;
            let t = self.cover.space().point(k).to_vec();
            let mut s = MapSlice::from_plan(t, mu, nu, plan, delta_tilde, embedding, core)?;
            s.delta = delta;
            s.alpha = alpha;
            slices.push(s);
        }
        self.slices = slices;
        Ok(())
    }

    /// Writes `t,x,y` at `samples` midpoints of `[0, 1]` for every parameter.
    pub fn write_trace<W: Write>(&self, out: W, samples: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |err: csv::Error| Error::Config(format!("writing map trace: {err}"));
        w.write_record(["t", "x", "y"]).map_err(e)?;
        for s in &self.slices {
            let t = join_t(&s.t);
            for q in 0..samples {
                let x = (q as f64 + 0.5) / samples as f64;
                if s.source.density(s.source.cell_of(x)) <= 0.0 {
                    continue;
                }
                w.write_record([t.clone(), x.to_string(), s.evaluate(x)?.to_string()]).map_err(e)?;
            }
        }
        w.flush().map_err(|err| Error::Config(format!("writing map trace: {err}")))?;
        Ok(())
    }
}

const QUANTILE_DUMP_CELLS: usize = 1024;
const QUANTILE_DUMP_SAMPLES: usize = 4;

/// Parameter coordinates joined by spaces.
pub fn join_t(t: &[f64]) -> String {
    t.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Family;
    use crate::kantorovich::{cell_cost_matrix, solve_exact};

    fn diag_plan(n: usize) -> Plan {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0 / n as f64;
        }
        Plan::new(m, vec![1.0 / n as f64; n], vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn budget_slices() {
        for (p, k) in [(Pipeline::Fixed, 5.0), (Pipeline::TargetPath, 6.0), (Pipeline::Full, 7.0)] {
            let b = EpsilonBudget::new(0.05, p).unwrap();
            assert_eq!(b.eps1, 0.05 / k);
            let total: u32 = b.slices().iter().map(|s| s.count).sum();
            assert_eq!(total as f64, k);
        }
        assert!(EpsilonBudget::new(0.0, Pipeline::Fixed).is_err());
    }

    #[test]
    fn single_cell_targets_whole_marginal() {
        let plan = diag_plan(4);
        let t = project_cell_targets(&plan, &[(0.0, 1.0)]);
        assert_eq!(t[0], vec![0.25; 4]);
    }

    #[test]
    fn diagonal_plan_two_cells() {
        let plan = diag_plan(4);
        let t = project_cell_targets(&plan, &[(0.0, 0.5), (0.5, 1.0)]);
        assert_eq!(t[0], vec![0.25, 0.25, 0.0, 0.0]);
        assert_eq!(t[1], vec![0.0, 0.0, 0.25, 0.25]);
    }

    #[test]
    fn diagonal_plan_gives_identity() {
        let n = 8;
        let u = GridDensity::uniform(n);
        // cells aligned with the grid reproduce the identity; others move points within their grid cell
        for (dt, tol) in [(1.0, 1e-12), (0.5, 1e-12), (0.125, 1e-12), (0.3, 1.0 / 8.0), (0.05, 1.0 / 8.0)] {
            let s = MapSlice::from_plan(vec![0.0], u.clone(), u.clone(), diag_plan(n), dt, Embedding::Cdf, (0.0, 1.0))
                .unwrap();
            for q in 0..100 {
                let x = (q as f64 + 0.5) / 100.0;
                assert!((s.evaluate(x).unwrap() - x).abs() < tol, "dt={dt} x={x}");
            }
        }
    }

    #[test]
    fn single_cell_is_monotone_rearrangement() {
        let n = 16;
        let mu = GridDensity::uniform(n);
        let nu = GridDensity::from_density_fn(n, |y| 2.0 * y).unwrap();
        // any plan with the right column sums gives the same single-cell map
        let rows: Vec<f64> = vec![1.0 / n as f64; n];
        let plan =
            Plan::unchecked((0..n * n).map(|k| nu.weights()[k % n] / n as f64).collect(), rows, nu.weights().to_vec())
                .unwrap();
        let s = MapSlice::from_plan(vec![0.0], mu.clone(), nu.clone(), plan, 1.0, Embedding::Cdf, (0.0, 1.0)).unwrap();
        for q in 0..=50 {
            let x = q as f64 / 50.0;
            assert!((s.evaluate(x).unwrap() - nu.quantile_clamped(mu.cdf_clamped(x))).abs() < 1e-12);
        }
    }

    #[test]
    fn remainder_cell_maps_trimmed_mass() {
        let n = 4;
        let u = GridDensity::uniform(n);
        // core [0.25, 1]: [0, 0.25) is the remainder, its plan row goes to the last target cell
        let mut m = vec![0.0; 16];
        m[3] = 0.25;
        m[4] = 0.25;
        m[9] = 0.25;
        m[14] = 0.25;
        let plan = Plan::new(m, vec![0.25; 4], vec![0.25; 4]).unwrap();
        let s = MapSlice::from_plan(vec![0.0], u.clone(), u, plan, 0.25, Embedding::Cdf, (0.25, 1.0)).unwrap();
        assert_eq!(s.cell_count(), 3);
        assert!((s.remainder_mass() - 0.25).abs() < 1e-15);
        assert!((s.evaluate(0.125).unwrap() - 0.875).abs() < 1e-12);
        assert!((s.evaluate(0.375).unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn identity_scenario_assembles_identity() {
        let cost = ParametricCost::new(Family::Abs);
        let space = ParameterSpace::uniform(0.0, 1.0, 3).unwrap();
        let u = GridDensity::uniform(32);
        let fam = assemble_fixed(&u, &u, &cost, &space, 0.05, &AssembleOptions::default()).unwrap();
        assert_eq!(fam.budget.eps1, 0.05 / 5.0);
        for k in 0..3 {
            // cell boundaries map to the left end of a support that carries negligible entropic mass
            for q in 0..64 {
                let x = (q as f64 + 0.37) / 64.0;
                let y = fam.evaluate(k, x).unwrap();
                assert!((y - x).abs() <= 1.0 / 32.0, "k={k} x={x} y={y} dt={}", fam.slices[k].delta_tilde);
            }
            assert!(fam.monge_cost(k, 8).unwrap() < 0.05);
            assert!(fam.slices[k].pushforward_dkr(8).unwrap() <= 2.0 / 32.0);
        }
        assert!(!fam.evaluate_at(&[0.4], 0.5).unwrap().1);
    }

    #[test]
    fn power_cost_gap_within_eps() {
        let cost = ParametricCost::new(Family::Power { p0: 1.0, p1: 1.0 });
        let space = ParameterSpace::uniform(0.0, 1.0, 5).unwrap();
        let n = 32;
        let mu = GridDensity::uniform(n);
        let nu = GridDensity::from_density_fn(n, |y| if y < 0.5 { 4.0 * y } else { 4.0 - 4.0 * y }).unwrap();
        let eps = 0.05;
        let fam = assemble_fixed(&mu, &nu, &cost, &space, eps, &AssembleOptions::default()).unwrap();
        for k in 0..space.len() {
            let t = space.point(k);
            let c = cell_cost_matrix(&cost, t, n, n, 8, Execution::Sequential).unwrap();
            let exact = solve_exact(&c, mu.weights(), nu.weights()).unwrap().value;
            let m = fam.monge_cost(k, 8).unwrap();
            assert!(m - exact <= eps + 4.0 / n as f64, "t={t:?} gap={}", m - exact);
            assert!(m - exact >= -4.0 / n as f64);
        }
    }

    #[test]
    fn dump_round_trip() {
        let cost = ParametricCost::new(Family::Quadratic);
        let space = ParameterSpace::uniform(0.0, 1.0, 2).unwrap();
        let mu = GridDensity::uniform(8);
        let nu = GridDensity::from_density_fn(8, |y| 0.5 + y).unwrap();
        let fam = assemble_fixed(&mu, &nu, &cost, &space, 0.1, &AssembleOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        fam.write_dir(dir.path()).unwrap();
        let mut back = fam.clone();
        back.slices.clear();
        back.reload_slices(dir.path()).unwrap();
        for k in 0..2 {
            for q in 0..40 {
                let x = (q as f64 + 0.5) / 40.0;
                let a = fam.evaluate(k, x).unwrap();
                let b = back.evaluate(k, x).unwrap();
                assert!((a - b).abs() < 1e-9, "{a} {b}");
            }
        }
    }
}
