//! Parametric cost families `h(x, y, t)`, their sampled x-oscillation, and the
//! truncation `min(h, N)` used for costs dominated by `a_t(x) + b_t(y)`.
//!
//! Parameters are points of a metric space given by coordinates; built-in
//! families read the first coordinate as the scalar `t`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measure::GridDensity;
use crate::quad;

/// Safety factor applied to the oscillation target in [`kappa_for`].
pub const KAPPA_SAFETY: f64 = 0.9;
/// Smallest modulus [`kappa_for`] will return.
pub const KAPPA_FLOOR: f64 = 1e-6;

fn scalar(t: &[f64]) -> f64 {
    t.first().copied().unwrap_or(0.0)
}

/// Cost table on a tensor grid, interpolated trilinearly.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ts: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct TableRow {
    x: f64,
    y: f64,
    t: f64,
    h: f64,
}

impl Table {
    /// Reads `x,y,t,h` rows covering a full tensor grid (any row order).
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<TableRow>() {
            rows.push(rec.map_err(|e| Error::Config(e.to_string()))?);
        }
        let axis = |f: fn(&TableRow) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let xs = axis(|r| r.x);
        let ys = axis(|r| r.y);
        let ts = axis(|r| r.t);
        if xs.len() < 2 || ys.len() < 2 {
            return Err(Error::Config("cost table needs at least two x and two y values".into()));
        }
        let total = xs.len() * ys.len() * ts.len();
        if rows.len() != total {
            return Err(Error::Config(format!(
                "cost table has {} rows, a full {}x{}x{} grid needs {total}",
                rows.len(),
                xs.len(),
                ys.len(),
                ts.len()
            )));
        }
        let mut values = vec![f64::NAN; total];
        for r in &rows {
            if !r.h.is_finite() || r.h < 0.0 {
                return Err(Error::Config(format!("cost table value {} at ({}, {}, {})", r.h, r.x, r.y, r.t)));
            }
            let i = xs.partition_point(|v| *v < r.x);
            let j = ys.partition_point(|v| *v < r.y);
            let k = ts.partition_point(|v| *v < r.t);
            values[(k * ys.len() + j) * xs.len() + i] = r.h;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Config("cost table has duplicate rows".into()));
        }
        Ok(Self { xs, ys, ts, values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.ys.len() + j) * self.xs.len() + i]
    }

    fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let (i, fx) = bracket(&self.xs, x);
        let (j, fy) = bracket(&self.ys, y);
        let (k, ft) = bracket(&self.ts, t);
        let k1 = (k + 1).min(self.ts.len() - 1);
        let plane = |k: usize| {
            let a = self.at(i, j, k) * (1.0 - fx) + self.at(i + 1, j, k) * fx;
            let b = self.at(i, j + 1, k) * (1.0 - fx) + self.at(i + 1, j + 1, k) * fx;
            a * (1.0 - fy) + b * fy
        };
        plane(k) * (1.0 - ft) + plane(k1) * ft
    }

    fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Index of the lower node and the fraction towards the next one, clamped to the axis.
fn bracket(axis: &[f64], v: f64) -> (usize, f64) {
    if axis.len() == 1 {
        return (0, 0.0);
    }
    let last = axis.len() - 2;
    let i = axis.partition_point(|a| *a <= v).saturating_sub(1).min(last);
    let f = ((v - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0);
    (i, f)
}

/// Built-in cost families.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `|x - y|`
    Abs,
    /// `|x - y|^2`
    Quadratic,
    /// `|x - y|^(p0 + p1 t)`
    Power {
        p0: f64,
        p1: f64,
    },
    /// `|x - y - c t|`
    Shifted {
        c: f64,
    },
    /// `|x - y| (1 + amp sin(2 pi (x + t)))`
    Oscillatory {
        amp: f64,
    },
    /// `|x - y| + coef x^(-1/2)`, unbounded near `x = 0`.
    Unbounded {
        coef: f64,
    },
    /// `sqrt(|x - y - c t|)`
    SqrtShifted {
        c: f64,
    },
    Constant {
        value: f64,
    },
    Tabulated(Arc<Table>),
}

impl Family {
    /// Selects a family by id; missing parameters take the shipped defaults.
    pub fn by_id(id: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
        let known: &[&str] = match id {
            "abs" | "quadratic" => &[],
            "power" => &["p0", "p1"],
            "shifted" | "sqrt-shifted" => &["c"],
            "oscillatory" => &["amp"],
            "unbounded" => &["coef"],
            "constant" => &["value"],
            _ => return Err(Error::Config(format!("unknown cost family `{id}`"))),
        };
        if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Config(format!("cost family `{id}` has no parameter `{k}`")));
        }
        let fam = match id {
            "abs" => Family::Abs,
            "quadratic" => Family::Quadratic,
            "power" => Family::Power { p0: get("p0", 1.0), p1: get("p1", 1.0) },
            "shifted" => Family::Shifted { c: get("c", 0.2) },
            "sqrt-shifted" => Family::SqrtShifted { c: get("c", 0.2) },
            "oscillatory" => Family::Oscillatory { amp: get("amp", 0.5) },
            "unbounded" => Family::Unbounded { coef: get("coef", 0.25) },
            _ => Family::Constant { value: get("value", 1.0) },
        };
        match fam {
            Family::Power { p0, p1 } if p0 <= 0.0 || p0 + p1 <= 0.0 => {
                Err(Error::Config("power exponent must stay positive on t in [0, 1]".into()))
            }
            Family::Oscillatory { amp } if !(0.0..1.0).contains(&amp) => {
                Err(Error::Config("oscillatory amplitude must lie in [0, 1)".into()))
            }
            Family::Unbounded { coef } if coef < 0.0 => Err(Error::Config("coef must be nonnegative".into())),
            Family::Constant { value } if value < 0.0 => Err(Error::Config("constant cost must be nonnegative".into())),
            f => Ok(f),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Family::Abs => "abs",
            Family::Quadratic => "quadratic",
            Family::Power { .. } => "power",
            Family::Shifted { .. } => "shifted",
            Family::Oscillatory { .. } => "oscillatory",
            Family::Unbounded { .. } => "unbounded",
            Family::SqrtShifted { .. } => "sqrt-shifted",
            Family::Constant { .. } => "constant",
            Family::Tabulated(_) => "tabulated",
        }
    }

    fn raw(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Family::Abs => (x - y).abs(),
            Family::Quadratic => (x - y) * (x - y),
            Family::Power { p0, p1 } => (x - y).abs().powf(p0 + p1 * t),
            Family::Shifted { c } => (x - y - c * t).abs(),
            Family::Oscillatory { amp } => (x - y).abs() * (1.0 + amp * (2.0 * std::f64::consts::PI * (x + t)).sin()),
            Family::Unbounded { coef } => (x - y).abs() + coef / x.sqrt(),
            Family::SqrtShifted { c } => (x - y - c * t).abs().sqrt(),
            Family::Constant { value } => *value,
            Family::Tabulated(tab) => tab.eval(x, y, t),
        }
    }
}

/// A cost family, optionally truncated at a level `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricCost {
    family: Family,
    cap: Option<f64>,
}

impl fmt::Display for ParametricCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cap {
            Some(n) => write!(f, "min({}, {n})", self.family.id()),
            None => write!(f, "{}", self.family.id()),
        }
    }
}

impl ParametricCost {
    pub fn new(family: Family) -> Self {
        Self { family, cap: None }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn family_id(&self) -> &'static str {
        self.family.id()
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    /// `min(h, level)`.
    pub fn truncated(&self, level: f64) -> Self {
        Self { family: self.family.clone(), cap: Some(self.cap.map_or(level, |c| c.min(level))) }
    }

    /// The cost without truncation.
    pub fn untruncated(&self) -> Self {
        Self { family: self.family.clone(), cap: None }
    }

    /// Unchecked evaluation for inner loops.
    #[inline]
    pub fn raw(&self, x: f64, y: f64, t: &[f64]) -> f64 {
        let v = self.family.raw(x, y, scalar(t));
        match self.cap {
            Some(c) => v.min(c),
            None => v,
        }
    }

    /// Evaluation that rejects NaN, negative and infinite values.
    pub fn eval(&self, x: f64, y: f64, t: &[f64]) -> Result<f64> {
        let v = self.raw(x, y, t);
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(Error::Evaluation { x, y, t: format!("{t:?}"), value: v })
        }
    }

    /// Uniform upper bound, if the family has one.
    pub fn bounded_by(&self) -> Option<f64> {
        let b = match &self.family {
            Family::Abs | Family::Quadratic | Family::Power { .. } => Some(1.0),
            Family::Shifted { c } => Some(1.0 + c.abs()),
            Family::SqrtShifted { c } => Some((1.0 + c.abs()).sqrt()),
            Family::Oscillatory { amp } => Some(1.0 + amp.abs()),
            Family::Constant { value } => Some(*value),
            Family::Unbounded { coef } if *coef == 0.0 => Some(1.0),
            Family::Unbounded { .. } => None,
            Family::Tabulated(t) => Some(t.max()),
        };
        match (b, self.cap) {
            (Some(b), Some(c)) => Some(b.min(c)),
            (None, c) => c,
            (b, None) => b,
        }
    }

    /// A pair `(a_t, b_t)` with `h <= a_t(x) + b_t(y)`.
    pub fn dominating_pair(&self) -> DominatingPair {
        match (&self.family, self.cap) {
            (Family::Unbounded { coef }, None) if *coef > 0.0 => {
                let c = *coef;
                DominatingPair::new(move |x, _| c / x.sqrt(), |_, _| 1.0)
            }
            _ => {
                let half = 0.5 * self.bounded_by().unwrap_or(f64::INFINITY);
                DominatingPair::new(move |_, _| half, move |_, _| half)
            }
        }
    }

    /// Lipschitz bound of `h_t` in the sum metric `|dx| + |dy|`, over the given parameters.
    ///
    /// Families with an analytic bound use it; the others fall back to a
    /// finite-difference estimate at step `1/n`, which for non-Lipschitz costs is
    /// the resolution-`n` modulus scaled by `n`. For the unbounded family only
    /// the `|x - y|` part counts: the `x`-only term integrates identically
    /// against every coupling under the shared quadrature, so it cancels in
    /// every gap.
    pub fn lipschitz_bound(&self, ts: &[Vec<f64>], n: usize) -> f64 {
        let t_range = || {
            let vals = ts.iter().map(|t| scalar(t));
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let analytic = match &self.family {
            Family::Abs | Family::Shifted { .. } | Family::Unbounded { .. } => Some(2.0),
            Family::Quadratic => Some(4.0),
            Family::Constant { .. } => Some(0.0),
            Family::Oscillatory { amp } => {
                let a = amp.abs();
                Some(2.0 * (1.0 + a) + 2.0 * std::f64::consts::PI * a)
            }
            Family::Power { p0, p1 } => {
                let (lo, hi) = t_range();
                let pmin = (p0 + p1 * lo).min(p0 + p1 * hi);
                let pmax = (p0 + p1 * lo).max(p0 + p1 * hi);
                (pmin >= 1.0).then_some(2.0 * pmax)
            }
            Family::SqrtShifted { .. } | Family::Tabulated(_) => None,
        };
        analytic.unwrap_or_else(|| self.finite_difference_bound(ts, n))
    }

    fn finite_difference_bound(&self, ts: &[Vec<f64>], n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let grid: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let mut best = 0.0f64;
        for t in ts {
            for (a, &x) in grid.iter().enumerate().take(n) {
                let x1 = grid[a + 1];
                for (b, &y) in grid.iter().enumerate().take(n) {
                    let y1 = grid[b + 1];
                    let h00 = self.raw(x, y, t);
                    let dx = (self.raw(x1, y, t) - h00).abs();
                    let dy = (self.raw(x, y1, t) - h00).abs();
                    best = best.max((dx + dy) / h);
                }
            }
        }
        best
    }

    /// Checks finiteness, nonnegativity, the declared bound and the dominating
    /// pair on `samples` random triples.
    pub fn validate(&self, ts: &[Vec<f64>], samples: usize, seed: u64) -> Result<()> {
        if ts.is_empty() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = self.bounded_by();
        let pair = self.dominating_pair();
        for _ in 0..samples {
            // open interval keeps singular families finite
            let x: f64 = rng.gen_range(f64::EPSILON..1.0);
            let y: f64 = rng.gen();
            let t = &ts[rng.gen_range(0..ts.len())];
            let v = self.eval(x, y, t)?;
            if let Some(b) = bound {
                if v > b + 1e-12 {
                    return Err(Error::Config(format!("{self} = {v} exceeds its bound {b} at ({x}, {y})")));
                }
            }
            if v > pair.a(x, t) + pair.b(y, t) + 1e-12 {
                return Err(Error::Config(format!("{self} exceeds its dominating pair at ({x}, {y})")));
            }
        }
        Ok(())
    }
}

type SideFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Functions `a_t(x)`, `b_t(y)` bounding the cost from above.
#[derive(Clone)]
pub struct DominatingPair {
    a: SideFn,
    b: SideFn,
}

impl fmt::Debug for DominatingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DominatingPair")
    }
}

impl DominatingPair {
    pub fn new(
        a: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { a: Arc::new(a), b: Arc::new(b) }
    }

    pub fn a(&self, x: f64, t: &[f64]) -> f64 {
        (self.a)(x, t)
    }

    pub fn b(&self, y: f64, t: &[f64]) -> f64 {
        (self.b)(y, t)
    }
}

/// `sup_t` of the two tail integrals at each radius.
#[derive(Clone, Debug, PartialEq)]
pub struct TailCurve {
    pub radii: Vec<f64>,
    pub tails: Vec<f64>,
}

/// `int_{f >= level} f dm` for a piecewise-constant density `m`.
///
/// The level set is located per cell by sampling (cell endpoints included, so
/// endpoint singularities are seen) and bisecting each sign change; `f` is then
/// integrated adaptively over the pieces above the level.
fn tail_integral(m: &GridDensity, level: f64, f: impl Fn(f64) -> f64) -> f64 {
    const SAMPLES: usize = 64;
    let h = m.cell_width();
    let above = |x: f64| {
        let v = f(x);
        v.is_nan() || v >= level
    };
    let mut total = 0.0;
    for i in 0..m.n() {
        if m.weights()[i] <= 0.0 {
            continue;
        }
        let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
        let xs: Vec<f64> = (0..=SAMPLES).map(|k| a + (b - a) * k as f64 / SAMPLES as f64).collect();
        let flags: Vec<bool> = xs.iter().map(|&x| above(x)).collect();
        let mut cell = 0.0;
        let mut start = if flags[0] { Some(a) } else { None };
        for k in 0..SAMPLES {
            if flags[k] == flags[k + 1] {
                continue;
            }
            let (mut lo, mut hi) = (xs[k], xs[k + 1]);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if above(mid) == flags[k] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let cross = 0.5 * (lo + hi);
            match start.take() {
                Some(s) => cell += quad::integrate(&f, s, cross, 1e-12),
                None => start = Some(cross),
            }
        }
        if let Some(s) = start {
            cell += quad::integrate(&f, s, b, 1e-12);
        }
        total += m.density(i) * cell;
    }
    total
}

/// Tail curve over the sampled parameters; `mus[k]`, `nus[k]` are the marginals at `ts[k]`.
pub fn tail_curve(
    pair: &DominatingPair,
    ts: &[Vec<f64>],
    mus: &[GridDensity],
    nus: &[GridDensity],
    radii: &[f64],
) -> Result<TailCurve> {
    if ts.len() != mus.len() || ts.len() != nus.len() {
        return Err(Error::Shape(format!("{} parameters, {} sources, {} targets", ts.len(), mus.len(), nus.len())));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("radius grid must be increasing".into()));
    }
    let tails = radii
        .iter()
        .map(|&r| {
            ts.iter()
                .zip(mus.iter().zip(nus))
                .map(|(t, (mu, nu))| tail_integral(mu, r, |x| pair.a(x, t)) + tail_integral(nu, r, |y| pair.b(y, t)))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(TailCurve { radii: radii.to_vec(), tails })
}

/// Smallest `N` in `levels` with `sup_t tail(N / 2) < eps / 4`.
pub fn truncation_level(
    pair: &DominatingPair,
    ts: &[Vec<f64>],
    mus: &[GridDensity],
    nus: &[GridDensity],
    eps: f64,
    levels: &[f64],
) -> Result<(f64, TailCurve)> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps = {eps} must be positive")));
    }
    let radii: Vec<f64> = levels.iter().map(|n| n / 2.0).collect();
    let curve = tail_curve(pair, ts, mus, nus, &radii)?;
    let target = eps / 4.0;
    match curve.tails.iter().position(|v| *v < target) {
        Some(k) => Ok((levels[k], curve)),
        None => {
            let best = curve.tails.iter().copied().fold(f64::INFINITY, f64::min);
            Err(Error::TailDivergence { best, target })
        }
    }
}

/// Sampling resolution for [`oscillation`]: number of intervals of the fixed
/// global grids on `[0, 1]` for `x` and `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub x: usize,
    pub y: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { x: 1000, y: 100 }
    }
}

fn grid_in(region: (f64, f64), intervals: usize) -> Vec<f64> {
    let (lo, hi) = region;
    let first = (lo * intervals as f64 - 1e-9).ceil().max(0.0) as usize;
    let last = ((hi * intervals as f64 + 1e-9).floor() as usize).min(intervals);
    let pts: Vec<f64> = (first..=last).map(|i| i as f64 / intervals as f64).collect();
    if pts.is_empty() {
        vec![0.5 * (lo + hi)]
    } else {
        pts
    }
}

/// Cost samples `h(x_i, y, t)` on the x-grid, one row per `(t, y)`.
struct OscTable<'a> {
    cost: &'a ParametricCost,
    ts: &'a [Vec<f64>],
    xs: Vec<f64>,
    ys: Vec<f64>,
    hi: f64,
    rows: Vec<Vec<f64>>,
    intervals: usize,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl<'a> OscTable<'a> {
    fn new(
        cost: &'a ParametricCost,
        x_region: (f64, f64),
        y_region: (f64, f64),
        ts: &'a [Vec<f64>],
        res: Resolution,
    ) -> Self {
        let xs = grid_in(x_region, res.x);
        let ys = grid_in(y_region, res.y);
        let mut rows = Vec::with_capacity(ts.len() * ys.len());
        for t in ts {
            for &y in &ys {
                rows.push(xs.iter().map(|&x| finite_or_inf(cost.raw(x, y, t))).collect());
            }
        }
        Self { cost, ts, xs, ys, hi: x_region.1, rows, intervals: res.x }
    }

    /// Largest `max - min` over windows of grid points no farther apart than
    /// `radius`; below the grid spacing, pairs `(x_i, x_i + radius)` are used.
    fn oscillation(&self, radius: f64) -> f64 {
        let w = (radius * self.intervals as f64 + 1e-9).floor() as usize;
        if w > 0 {
            return self.rows.iter().map(|r| window_range(r, w)).fold(0.0, f64::max);
        }
        let mut best = 0.0f64;
        let mut k = 0;
        for t in self.ts {
            for &y in &self.ys {
                let row = &self.rows[k];
                k += 1;
                for (i, &x) in self.xs.iter().enumerate() {
                    if x + radius > self.hi {
                        break;
                    }
                    let d = finite_or_inf(self.cost.raw(x + radius, y, t)) - row[i];
                    if d.is_nan() {
                        continue;
                    }
                    best = best.max(d.abs());
                }
            }
        }
        best
    }
}

/// `max_i (max - min)` of `v[i..=i+w]`, by monotone deques.
fn window_range(v: &[f64], w: usize) -> f64 {
    use std::collections::VecDeque;
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut best = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        while maxq.back().is_some_and(|&j| v[j] <= x) {
            maxq.pop_back();
        }
        maxq.push_back(i);
        while minq.back().is_some_and(|&j| v[j] >= x) {
            minq.pop_back();
        }
        minq.push_back(i);
        while maxq.front().is_some_and(|&j| j + w < i) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&j| j + w < i) {
            minq.pop_front();
        }
        let hi = v[*maxq.front().unwrap()];
        let lo = v[*minq.front().unwrap()];
        let d = if hi.is_infinite() && lo.is_infinite() && hi == lo { 0.0 } else { hi - lo };
        best = best.max(d);
    }
    best
}

/// Sampled `sup |h(x1, y, t) - h(x2, y, t)|` over `|x1 - x2| <= x_radius`,
/// `x1, x2` in `x_region`, `y` in `y_region` and `t` in `ts`.
///
/// Samples lie on fixed global grids, so the value is a lower estimate of the
/// true oscillation. For radii of at least one grid spacing it is monotone in
/// the radius, the regions and the set of parameters; smaller radii compare
/// each grid point with its shift by the radius.
pub fn oscillation(
    cost: &ParametricCost,
    x_radius: f64,
    x_region: (f64, f64),
    y_region: (f64, f64),
    ts: &[Vec<f64>],
    res: Resolution,
) -> f64 {
    OscTable::new(cost, x_region, y_region, ts, res).oscillation(x_radius)
}

/// Largest `kappa` in `{1, 1/2, 1/4, ...}` with sampled oscillation below `KAPPA_SAFETY * eps1`.
pub fn kappa_for(
    cost: &ParametricCost,
    ts: &[Vec<f64>],
    x_region: (f64, f64),
    y_region: (f64, f64),
    eps1: f64,
    res: Resolution,
) -> Result<f64> {
    if !(eps1 > 0.0) {
        return Err(Error::Domain(format!("eps1 = {eps1} must be positive")));
    }
    let table = OscTable::new(cost, x_region, y_region, ts, res);
    let target = KAPPA_SAFETY * eps1;
    let mut kappa = 1.0;
    let mut last = f64::NAN;
    while kappa >= KAPPA_FLOOR {
        last = table.oscillation(kappa);
        if last < target {
            return Ok(kappa);
        }
        kappa *= 0.5;
    }
    Err(Error::ModulusFailure { floor: KAPPA_FLOOR, target, last })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power() -> ParametricCost {
        ParametricCost::new(Family::Power { p0: 1.0, p1: 1.0 })
    }

    fn full() -> (f64, f64) {
        (0.0, 1.0)
    }

    #[test]
    fn eval_examples() {
        let c = power();
        assert_eq!(c.eval(0.5, 0.5, &[0.3]).unwrap(), 0.0);
        assert_eq!(c.eval(0.0, 1.0, &[1.0]).unwrap(), 1.0);
        assert!((c.eval(0.0, 0.5, &[1.0]).unwrap() - 0.25).abs() < 1e-15);
        let u = ParametricCost::new(Family::Unbounded { coef: 0.25 });
        assert!(matches!(u.eval(0.0, 0.5, &[0.0]), Err(Error::Evaluation { .. })));
        assert!(u.truncated(21.0).eval(0.0, 0.5, &[0.0]).unwrap() == 21.0);
    }

    #[test]
    fn oscillation_examples() {
        let ts = vec![vec![0.0]];
        let res = Resolution::default();
        let k = ParametricCost::new(Family::Constant { value: 1.0 });
        assert_eq!(oscillation(&k, 0.3, full(), full(), &ts, res), 0.0);
        let a = ParametricCost::new(Family::Abs);
        assert!((oscillation(&a, 0.1, full(), full(), &ts, res) - 0.1).abs() < 1e-12);
        // dense brute force with 10^3 points per axis
        let q = ParametricCost::new(Family::Quadratic);
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let mut brute = 0.0f64;
        for &y in grid.iter().step_by(10) {
            for (i, &x1) in grid.iter().enumerate() {
                for &x2 in &grid[i..(i + 101).min(grid.len())] {
                    brute = brute.max(((x1 - y) * (x1 - y) - (x2 - y) * (x2 - y)).abs());
                }
            }
        }
        let est = oscillation(&q, 0.1, full(), full(), &ts, res);
        assert!((brute - 0.19).abs() < 0.01);
        assert!((est - brute).abs() < 1e-12);
    }

    #[test]
    fn kappa_examples() {
        let ts = vec![vec![0.0]];
        let res = Resolution::default();
        let k = ParametricCost::new(Family::Constant { value: 2.0 });
        assert_eq!(kappa_for(&k, &ts, full(), full(), 0.1, res).unwrap(), 1.0);
        let a = ParametricCost::new(Family::Abs);
        let kappa = kappa_for(&a, &ts, full(), full(), 0.1, res).unwrap();
        // oracle: walk the halving sequence with the oscillation itself
        let mut expect = 1.0;
        while oscillation(&a, expect, full(), full(), &ts, res) >= 0.09 {
            expect *= 0.5;
        }
        assert_eq!(kappa, expect);
        assert!(kappa > 0.045 && kappa <= 0.09);
    }

    #[test]
    fn kappa_respects_lipschitz_bound() {
        let c = power();
        let ts: Vec<Vec<f64>> = (0..=4).map(|i| vec![i as f64 / 4.0]).collect();
        let l = c.lipschitz_bound(&ts, 256) / 2.0;
        for eps1 in [0.2, 0.05, 0.01] {
            let kappa = kappa_for(&c, &ts, full(), full(), eps1, Resolution::default()).unwrap();
            assert!(kappa >= 0.9 * eps1 / (2.0 * l), "{kappa} for eps1 {eps1}");
            assert!(oscillation(&c, kappa, full(), full(), &ts, Resolution::default()) < eps1);
        }
    }

    #[test]
    fn modulus_failure_below_floor() {
        let c = ParametricCost::new(Family::Abs);
        let err = kappa_for(&c, &[vec![0.0]], full(), full(), 1e-9, Resolution::default());
        assert!(matches!(err, Err(Error::ModulusFailure { .. })));
    }

    #[test]
    fn tail_curve_matches_closed_form() {
        // a(x) = x^{-1/2}/2 under uniform mu: int_{a >= R} a = 1/(2R) for R >= 1/2
        let pair = DominatingPair::new(|x, _| 0.5 / x.sqrt(), |_, _| 0.0);
        let ts = vec![vec![0.0]];
        let mu = vec![GridDensity::uniform(64)];
        let radii = [1.0, 2.0, 4.0, 8.0];
        let curve = tail_curve(&pair, &ts, &mu, &mu, &radii).unwrap();
        for (r, v) in radii.iter().zip(&curve.tails) {
            assert!((v - 0.5 / r).abs() < 1e-6, "R = {r}: {v}");
        }
        for w in curve.tails.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn truncation_level_examples() {
        let ts = vec![vec![0.0]];
        let mu = vec![GridDensity::uniform(32)];
        let bounded = DominatingPair::new(|_, _| 3.0, |_, _| 3.0);
        let levels: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(truncation_level(&bounded, &ts, &mu, &mu, 0.1, &levels).unwrap().0, 7.0);
        // tail(N/2) = 1/N: below eps/4 = 0.1 first on {8, 12, 16} at 12
        let sing = DominatingPair::new(|x, _| 0.5 / x.sqrt(), |_, _| 0.0);
        assert_eq!(truncation_level(&sing, &ts, &mu, &mu, 0.4, &[8.0, 12.0, 16.0]).unwrap().0, 12.0);
        // eps = 0.45 needs 1/N < 0.1125
        assert_eq!(truncation_level(&sing, &ts, &mu, &mu, 0.45, &levels).unwrap().0, 9.0);
        let one = ParametricCost::new(Family::Abs).dominating_pair();
        assert_eq!(truncation_level(&one, &ts, &mu, &mu, 0.1, &[2.0, 4.0]).unwrap().0, 2.0);
        assert!(matches!(truncation_level(&sing, &ts, &mu, &mu, 0.01, &[2.0, 4.0]), Err(Error::TailDivergence { .. })));
    }

    #[test]
    fn unbounded_demo_level() {
        let c = ParametricCost::new(Family::Unbounded { coef: 0.25 });
        let ts = vec![vec![0.0], vec![1.0]];
        let mu = vec![GridDensity::uniform(256); 2];
        // tail(R) = 1/(8R) for R > 1, so 1/(4N) < 0.0125 needs N > 20
        let levels: Vec<f64> = (1..=10).map(|k| f64::powi(2.0, k)).collect();
        let (n, curve) = truncation_level(&c.dominating_pair(), &ts, &mu, &mu, 0.05, &levels).unwrap();
        assert_eq!(n, 32.0);
        for (r, v) in curve.radii.iter().zip(&curve.tails).filter(|(r, _)| **r > 1.0) {
            assert!((v - 0.125 / r).abs() < 1e-6, "R = {r}: {v}");
        }
    }

    #[test]
    fn table_interpolation() {
        let mut csv = String::from("x,y,t,h\n");
        for t in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for x in [0.0, 1.0] {
                    csv += &format!("{x},{y},{t},{}\n", x + 2.0 * y + 4.0 * t);
                }
            }
        }
        let tab = Table::read_csv(csv.as_bytes()).unwrap();
        let c = ParametricCost::new(Family::Tabulated(Arc::new(tab)));
        assert!((c.eval(0.25, 0.5, &[0.5]).unwrap() - (0.25 + 1.0 + 2.0)).abs() < 1e-12);
        assert!(Table::read_csv("x,y,t,h\n0,0,0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn validate_catches_false_bound() {
        let c = ParametricCost::new(Family::Oscillatory { amp: 0.5 });
        assert!(c.validate(&[vec![0.0], vec![0.5]], 10_000, 1).is_ok());
        let u = ParametricCost::new(Family::Unbounded { coef: 0.25 });
        assert!(u.validate(&[vec![0.0]], 10_000, 1).is_ok());
    }

    #[test]
    fn family_ids_round_trip() {
        let empty = BTreeMap::new();
        for id in ["abs", "quadratic", "power", "shifted", "oscillatory", "unbounded", "sqrt-shifted", "constant"] {
            assert_eq!(Family::by_id(id, &empty).unwrap().id(), id);
        }
        assert!(Family::by_id("nope", &empty).is_err());
        let mut bad = BTreeMap::new();
        bad.insert("q".to_string(), 1.0);
        assert!(Family::by_id("power", &bad).is_err());
    }
}
