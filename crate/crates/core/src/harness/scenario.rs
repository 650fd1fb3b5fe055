//! Scenario files: TOML describing marginals, cost, parameter grid and tolerances.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::cost::{Family, ParametricCost, Table};
use crate::cover::ParameterSpace;
use crate::error::{Error, Result};
use crate::measure::GridDensity;
use crate::monge::Pipeline;

/// A marginal density, possibly depending on the first parameter coordinate `t`.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarginalSpec {
    Uniform,
    /// Triangular density peaking at `1/2`.
    Tent,
    /// `1 + slope (x - 1/2)`; `|slope| <= 2`.
    Linear {
        slope: f64,
    },
    /// `1 + t amp (2 [x > 1/2] - 1)`, normalized.
    ShiftedMass {
        #[serde(default = "half")]
        amp: f64,
    },
    /// `(1 - t) from + t to`.
    Mixture {
        from: Box<MarginalSpec>,
        to: Box<MarginalSpec>,
    },
    /// Cell weights from a `cell_index,weight` file; the cell count must equal `n`.
    Csv {
        path: PathBuf,
    },
}

fn half() -> f64 {
    0.5
}

impl MarginalSpec {
    pub fn depends_on_t(&self) -> bool {
        match self {
            MarginalSpec::ShiftedMass { amp } => *amp != 0.0,
            MarginalSpec::Mixture { from, to } => from != to,
            _ => false,
        }
    }

    fn density(&self, x: f64, t: f64) -> f64 {
        match self {
            MarginalSpec::Uniform => 1.0,
            MarginalSpec::Tent => {
                if x < 0.5 {
                    4.0 * x
                } else {
                    4.0 - 4.0 * x
                }
            }
            MarginalSpec::Linear { slope } => 1.0 + slope * (x - 0.5),
            MarginalSpec::ShiftedMass { amp } => 1.0 + t * amp * if x > 0.5 { 1.0 } else { -1.0 },
            MarginalSpec::Mixture { from, to } => (1.0 - t) * from.density(x, t) + t * to.density(x, t),
            MarginalSpec::Csv { .. } => unreachable!("file marginals are read, not integrated"),
        }
    }

    fn validate(&self, base: &Path, n: usize) -> Result<()> {
        match self {
            MarginalSpec::Linear { slope } if !(slope.abs() <= 2.0) => {
                Err(Error::Config(format!("linear slope {slope} must lie in [-2, 2]")))
            }
            MarginalSpec::ShiftedMass { amp } if !(amp.abs() <= 1.0) => {
                Err(Error::Config(format!("shifted-mass amp {amp} must lie in [-1, 1]")))
            }
            MarginalSpec::Mixture { from, to } => {
                if matches!(**from, MarginalSpec::Csv { .. }) || matches!(**to, MarginalSpec::Csv { .. }) {
                    return Err(Error::Config("mixtures of file marginals are not supported".into()));
                }
                from.validate(base, n)?;
                to.validate(base, n)
            }
            MarginalSpec::Csv { path } => {
                let m = GridDensity::load(&base.join(path))?;
                if m.n() != n {
                    return Err(Error::Config(format!("{} has {} cells, expected n = {n}", path.display(), m.n())));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The density at parameter `t` on `n` cells.
    pub fn build(&self, base: &Path, n: usize, t: &[f64]) -> Result<GridDensity> {
        match self {
            MarginalSpec::Csv { path } => GridDensity::load(&base.join(path)),
            MarginalSpec::Uniform => Ok(GridDensity::uniform(n)),
            spec => {
                let t0 = t.first().copied().unwrap_or(0.0);
                GridDensity::from_density_fn(n, |x| spec.density(x, t0))
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TGrid {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    /// Explicit points; overrides `lo`, `hi`, `count`.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// `x,y,t,h` table for the `tabulated` family.
    #[serde(default)]
    pub table: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// `x` window cut into cells; the rest forms the remainder cell.
    #[serde(default = "unit")]
    pub trim: (f64, f64),
    /// Initial cover stride in grid steps; 0 picks about five centers.
    #[serde(default)]
    pub stride: usize,
    #[serde(default)]
    pub warm_start: bool,
    /// Sinkhorn tolerance; derived from the plan slack when absent.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn unit() -> (f64, f64) {
    (0.0, 1.0)
}

impl Default for Options {
    fn default() -> Self {
        Self { trim: unit(), stride: 0, warm_start: false, tol: None, workers: None }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Base parameter; the grid middle when absent.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default = "six")]
    pub levels: usize,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default = "taus")]
    pub taus: Vec<f64>,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn six() -> usize {
    6
}
fn samples() -> usize {
    256
}
fn taus() -> Vec<f64> {
    vec![1e-2, 1e-3]
}
fn yes() -> bool {
    true
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { t: None, levels: six(), samples: samples(), taus: taus(), enabled: true }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    pipeline: String,
    n: usize,
    eps: f64,
    #[serde(default = "eight")]
    quadrature_k: usize,
    #[serde(default)]
    seed: u64,
    t_grid: TGrid,
    cost: CostSpec,
    source: MarginalSpec,
    target: MarginalSpec,
    #[serde(default)]
    options: Options,
    #[serde(default)]
    probe: ProbeSpec,
}

fn eight() -> usize {
    8
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub pipeline: Pipeline,
    pub n: usize,
    pub eps: f64,
    pub quadrature_k: usize,
    pub seed: u64,
    pub space: ParameterSpace,
    /// `[lo, hi]` of a one-dimensional grid, used by the continuity probe.
    pub t_range: Option<(f64, f64)>,
    pub cost: ParametricCost,
    pub source: MarginalSpec,
    pub target: MarginalSpec,
    pub options: Options,
    pub probe: ProbeSpec,
    /// Directory relative paths are resolved against.
    pub base: PathBuf,
    /// The configuration text as read.
    pub text: String,
}

impl Scenario {
    /// Parses and validates a scenario; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let pipeline = Pipeline::from_id(&raw.pipeline)?;
        if !(raw.eps > 0.0) || !raw.eps.is_finite() {
            return Err(Error::Config(format!("eps = {} must be positive", raw.eps)));
        }
        if raw.n < 8 {
            return Err(Error::Config(format!("n = {} must be at least 8", raw.n)));
        }
        if raw.quadrature_k == 0 {
            return Err(Error::Config("quadrature_k must be positive".into()));
        }
        let (space, t_range) = match &raw.t_grid.points {
            Some(points) => {
                if points.is_empty() || points.iter().any(|p| p.is_empty() || p.iter().any(|v| !v.is_finite())) {
                    return Err(Error::Config("t-grid points must be nonempty and finite".into()));
                }
                (ParameterSpace::euclidean(points.clone())?, None)
            }
            None => {
                let count = raw.t_grid.count.unwrap_or(0);
                if count == 0 {
                    return Err(Error::Config("t-grid is empty".into()));
                }
                let lo = raw.t_grid.lo.unwrap_or(0.0);
                let hi = raw.t_grid.hi.unwrap_or(1.0);
                (ParameterSpace::uniform(lo, hi, count)?, Some((lo, hi)))
            }
        };
        if let Some(t) = space.points().iter().find(|p| !(0.0..=1.0).contains(&p[0])) {
            return Err(Error::Config(format!("parameter {t:?} lies outside [0, 1]")));
        }
        let family = match raw.cost.family.as_str() {
            "tabulated" => {
                let path =
                    raw.cost.table.as_ref().ok_or_else(|| Error::Config("tabulated cost needs `table`".into()))?;
                Family::Tabulated(Arc::new(Table::load(&base.join(path))?))
            }
            id => {
                if raw.cost.table.is_some() {
                    return Err(Error::Config(format!("cost family `{id}` takes no table")));
                }
                Family::by_id(id, &raw.cost.params)?
            }
        };
        let cost = ParametricCost::new(family);
        raw.source.validate(base, raw.n)?;
        raw.target.validate(base, raw.n)?;
        match pipeline {
            Pipeline::Fixed if raw.source.depends_on_t() || raw.target.depends_on_t() => {
                return Err(Error::Config("the fixed pipeline needs marginals that do not depend on t".into()))
            }
            Pipeline::TargetPath if raw.source.depends_on_t() => {
                return Err(Error::Config("the target-path pipeline needs a source that does not depend on t".into()))
            }
            _ => {}
        }
        let (a, b) = raw.options.trim;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::Config(format!("trim [{a}, {b}] must be a subinterval of [0, 1]")));
        }
        if raw.probe.taus.iter().any(|t| !(*t > 0.0)) || raw.probe.samples == 0 {
            return Err(Error::Config("probe taus must be positive and samples nonzero".into()));
        }
        if raw.options.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(Self {
            name: raw.name,
            pipeline,
            n: raw.n,
            eps: raw.eps,
            quadrature_k: raw.quadrature_k,
            seed: raw.seed,
            space,
            t_range,
            cost,
            source: raw.source,
            target: raw.target,
            options: raw.options,
            probe: raw.probe,
            base: base.to_path_buf(),
            text: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Source and target at parameter `t`.
    pub fn marginals_at(&self, t: &[f64]) -> Result<(GridDensity, GridDensity)> {
        Ok((self.source.build(&self.base, self.n, t)?, self.target.build(&self.base, self.n, t)?))
    }

    /// Marginals at every grid point.
    pub fn marginals(&self) -> Result<(Vec<GridDensity>, Vec<GridDensity>)> {
        let mut mus = Vec::with_capacity(self.space.len());
        let mut nus = Vec::with_capacity(self.space.len());
        for t in self.space.points() {
            let (m, v) = self.marginals_at(t)?;
            mus.push(m);
            nus.push(v);
        }
        Ok((mus, nus))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
name = "basic"
pipeline = "fixed"
n = 16
eps = 0.05
[t_grid]
count = 3
[cost]
family = "power"
params = { p0 = 1.0, p1 = 1.0 }
[source]
kind = "uniform"
[target]
kind = "tent"
"#;

    #[test]
    fn parses_basic() {
        let s = Scenario::parse(BASIC, Path::new(".")).unwrap();
        assert_eq!(s.pipeline, Pipeline::Fixed);
        assert_eq!(s.space.len(), 3);
        assert_eq!(s.quadrature_k, 8);
        assert_eq!(s.probe.levels, 6);
        let (mu, nu) = s.marginals_at(&[0.5]).unwrap();
        assert_eq!(mu, GridDensity::uniform(16));
        assert!((nu.cdf_clamped(0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            BASIC.replace("count = 3", "count = 0"),
            BASIC.replace("n = 16", "n = 4"),
            BASIC.replace("eps = 0.05", "eps = 0.0"),
            BASIC.replace("\"fixed\"", "\"sideways\""),
            BASIC.replace("kind = \"tent\"", "kind = \"shifted-mass\""),
            BASIC.replace("kind = \"tent\"", "kind = \"csv\"\npath = \"missing.csv\""),
            BASIC.replace("family = \"power\"", "family = \"quartic\""),
        ];
        for text in bad {
            assert!(Scenario::parse(&text, Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn mixture_moves_with_t() {
        let spec = MarginalSpec::Mixture { from: Box::new(MarginalSpec::Uniform), to: Box::new(MarginalSpec::Tent) };
        assert!(spec.depends_on_t());
        let a = spec.build(Path::new("."), 8, &[0.0]).unwrap();
        let b = spec.build(Path::new("."), 8, &[1.0]).unwrap();
        assert_eq!(a, GridDensity::uniform(8));
        assert!((b.weights()[0] - 1.0 / 32.0).abs() < 1e-12);
    }
}
