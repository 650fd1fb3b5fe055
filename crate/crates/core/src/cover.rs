//! Parameter spaces, covers by balls with hat-function partitions of unity,
//! the blended modulus `delta(t)`, and the interval cells it induces.

use std::io::Write;

use crate::cost::{kappa_for, ParametricCost, Resolution};
use crate::error::{Error, Result};
use crate::measure::GridDensity;

/// Distance on a parameter space.
#[derive(Clone, Debug, PartialEq)]
pub enum Metric {
    Euclidean,
    /// Explicit symmetric distance matrix over the listed points.
    Matrix(Vec<Vec<f64>>),
}

/// Finite metric space of parameter points, each given by coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSpace {
    points: Vec<Vec<f64>>,
    metric: Metric,
}

impl ParameterSpace {
    /// `count` equally spaced points on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("parameter grid is empty".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
            return Err(Error::Config(format!("bad parameter range [{lo}, {hi}]")));
        }
        let points = (0..count)
            .map(|k| if count == 1 { vec![lo] } else { vec![lo + (hi - lo) * k as f64 / (count - 1) as f64] })
            .collect();
        Ok(Self { points, metric: Metric::Euclidean })
    }

    /// Tensor grid on `[0, 1]^2`, row-major in the first coordinate.
    pub fn grid2d(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config("parameter grid is empty".into()));
        }
        let at = |k: usize, n: usize| if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
        let points = (0..nx).flat_map(|a| (0..ny).map(move |b| vec![at(a, nx), at(b, ny)])).collect();
        Ok(Self { points, metric: Metric::Euclidean })
    }

    /// Points with coordinates and an explicit distance matrix; metric axioms are checked.
    pub fn explicit(points: Vec<Vec<f64>>, distances: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("parameter space is empty".into()));
        }
        let n = points.len();
        if distances.len() != n || distances.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("distance matrix must be {n}x{n}")));
        }
        let s = Self { points, metric: Metric::Matrix(distances) };
        s.check_axioms(1e-12)?;
        Ok(s)
    }

    pub fn euclidean(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("parameter space is empty".into()));
        }
        Ok(Self { points, metric: Metric::Euclidean })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Index of a point with exactly these coordinates.
    pub fn locate(&self, t: &[f64]) -> Option<usize> {
        self.points.iter().position(|p| p.as_slice() == t)
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        match &self.metric {
            Metric::Euclidean => euclid(&self.points[a], &self.points[b]),
            Metric::Matrix(d) => d[a][b],
        }
    }

    /// Distance from arbitrary coordinates to point `b`; explicit metrics need `t` on the grid.
    pub fn dist_to(&self, t: &[f64], b: usize) -> Result<f64> {
        match &self.metric {
            Metric::Euclidean => Ok(euclid(t, &self.points[b])),
            Metric::Matrix(d) => match self.locate(t) {
                Some(a) => Ok(d[a][b]),
                None => Err(Error::Domain(format!("{t:?} is not a point of the explicit parameter space"))),
            },
        }
    }

    /// Smallest positive distance between two points (1 for a single point).
    pub fn spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                let d = self.dist(a, b);
                if d > 0.0 {
                    best = best.min(d);
                }
            }
        }
        if best.is_finite() {
            best
        } else {
            1.0
        }
    }

    pub fn check_axioms(&self, tol: f64) -> Result<()> {
        let n = self.len();
        for a in 0..n {
            if self.dist(a, a).abs() > tol {
                return Err(Error::Config(format!("d(p{a}, p{a}) is not zero")));
            }
            for b in 0..n {
                let d = self.dist(a, b);
                if !d.is_finite() || d < 0.0 || (d - self.dist(b, a)).abs() > tol {
                    return Err(Error::Config(format!("distance between p{a} and p{b} is not symmetric and finite")));
                }
                if a != b && d <= 0.0 {
                    return Err(Error::Config(format!("points p{a} and p{b} are at distance zero")));
                }
                for c in 0..n {
                    if d > self.dist(a, c) + self.dist(c, b) + tol {
                        return Err(Error::Config(format!("triangle inequality fails on p{a}, p{b}, p{c}")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// One ball of a cover.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverBall {
    /// Index of the center in the parameter space.
    pub center: usize,
    pub radius: f64,
    pub kappa: f64,
    pub y_region: (f64, f64),
    pub x_region: (f64, f64),
}

/// Which regions the cover certifies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Regions {
    /// `x` and `y` range over all of `[0, 1]`.
    #[default]
    None,
    /// Per-center `y` regions with small target tails.
    Target,
    /// Per-center `x` and `y` regions.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverOptions {
    /// Initial center stride in units of the grid spacing; `0` picks about five centers.
    pub stride: usize,
    pub regions: Regions,
    /// Enlargement of the quantile regions on each side.
    pub region_margin: f64,
    /// Mass allowed outside a region, at every parameter of the ball.
    pub region_tail: f64,
    /// `x` range on which oscillation is certified when regions are off.
    pub x_domain: (f64, f64),
    pub resolution: Resolution,
}

impl Default for CoverOptions {
    fn default() -> Self {
        Self {
            stride: 0,
            regions: Regions::None,
            region_margin: 0.02,
            region_tail: f64::INFINITY,
            x_domain: (0.0, 1.0),
            resolution: Resolution::default(),
        }
    }
}

/// Finite cover of the parameter space with certified moduli per ball.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterCover {
    space: ParameterSpace,
    balls: Vec<CoverBall>,
}

/// Marginals at every point of the parameter space, in space order.
#[derive(Clone, Copy, Debug)]
pub struct Marginals<'a> {
    pub mus: &'a [GridDensity],
    pub nus: &'a [GridDensity],
}

fn quantile_region(m: &GridDensity, eps1: f64, margin: f64) -> (f64, f64) {
    let lo = m.quantile_clamped(0.5 * eps1);
    let hi = m.quantile_clamped(1.0 - 0.5 * eps1);
    ((lo - margin).max(0.0), (hi + margin).min(1.0))
}

fn outside_mass(m: &GridDensity, region: (f64, f64)) -> f64 {
    m.cdf_clamped(region.0) + (1.0 - m.cdf_clamped(region.1))
}

/// Builds a cover: centers form a greedy net at distance `stride * spacing`,
/// each ball gets regions and a modulus `kappa`. If some ball fails its region
/// check the stride is halved and the cover rebuilt.
pub fn build_cover(
    cost: &ParametricCost,
    space: &ParameterSpace,
    eps1: f64,
    marginals: Marginals<'_>,
    opts: &CoverOptions,
) -> Result<ParameterCover> {
    if !(eps1 > 0.0) {
        return Err(Error::Domain(format!("eps1 = {eps1} must be positive")));
    }
    if marginals.mus.len() != space.len() || marginals.nus.len() != space.len() {
        return Err(Error::Shape("one marginal pair per parameter point is required".into()));
    }
    let spacing = space.spacing();
    let mut stride = if opts.stride == 0 { ((space.len().saturating_sub(1)) / 4).max(1) } else { opts.stride };
    loop {
        match try_cover(cost, space, eps1, marginals, opts, stride as f64 * spacing)? {
            Some(cover) => return Ok(cover),
            None if stride > 1 => stride /= 2,
            None => {
                return Err(Error::CoverFailure(format!(
                    "region tails stay above {:e} even with one center per point",
                    opts.region_tail
                )))
            }
        }
    }
}

fn try_cover(
    cost: &ParametricCost,
    space: &ParameterSpace,
    eps1: f64,
    marginals: Marginals<'_>,
    opts: &CoverOptions,
    radius: f64,
) -> Result<Option<ParameterCover>> {
    let mut centers: Vec<usize> = Vec::new();
    for k in 0..space.len() {
        if centers.iter().all(|&c| space.dist(k, c) >= radius) {
            centers.push(k);
        }
    }
    let mut balls = Vec::with_capacity(centers.len());
    for &c in &centers {
        let members: Vec<usize> = (0..space.len()).filter(|&k| space.dist(k, c) < radius).collect();
        let y_region = match opts.regions {
            Regions::None => (0.0, 1.0),
            _ => quantile_region(&marginals.nus[c], eps1, opts.region_margin),
        };
        let x_region = match opts.regions {
            Regions::Both => {
                let (lo, hi) = quantile_region(&marginals.mus[c], eps1, opts.region_margin);
                (lo.max(opts.x_domain.0), hi.min(opts.x_domain.1))
            }
            _ => opts.x_domain,
        };
        if opts.regions != Regions::None {
            let fails = members.iter().any(|&k| {
                outside_mass(&marginals.nus[k], y_region) >= opts.region_tail
                    || (opts.regions == Regions::Both && outside_mass(&marginals.mus[k], x_region) >= opts.region_tail)
            });
            if fails {
                return Ok(None);
            }
        }
        let ts: Vec<Vec<f64>> = members.iter().map(|&k| space.point(k).to_vec()).collect();
        let kappa = kappa_for(cost, &ts, x_region, y_region, eps1, opts.resolution)?;
        balls.push(CoverBall { center: c, radius, kappa, y_region, x_region });
    }
    let cover = ParameterCover { space: space.clone(), balls };
    for k in 0..space.len() {
        if cover.hats(space.point(k))?.iter().all(|h| *h <= 0.0) {
            return Err(Error::CoverFailure(format!("parameter point {k} is not covered")));
        }
    }
    Ok(Some(cover))
}

impl ParameterCover {
    /// A cover from explicit balls; the cover property is checked on the space.
    pub fn from_balls(space: ParameterSpace, balls: Vec<CoverBall>) -> Result<Self> {
        if balls.iter().any(|b| !(b.radius > 0.0) || !(b.kappa > 0.0) || b.center >= space.len()) {
            return Err(Error::CoverFailure("balls need positive radius, positive kappa and a valid center".into()));
        }
        let cover = Self { space, balls };
        for k in 0..cover.space.len() {
            if cover.hats(cover.space.point(k))?.iter().all(|h| *h <= 0.0) {
                return Err(Error::CoverFailure(format!("parameter point {k} is not covered")));
            }
        }
        Ok(cover)
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn balls(&self) -> &[CoverBall] {
        &self.balls
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    fn hats(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.balls.iter().map(|b| Ok((1.0 - self.space.dist_to(t, b.center)? / b.radius).max(0.0))).collect()
    }

    /// All partition-of-unity weights at `t`.
    pub fn weights(&self, t: &[f64]) -> Result<Vec<f64>> {
        let h = self.hats(t)?;
        let total: f64 = h.iter().sum();
        if !(total > 0.0) {
            return Err(Error::CoverFailure(format!("{t:?} lies outside every ball")));
        }
        Ok(h.into_iter().map(|v| v / total).collect())
    }

    /// `psi_alpha(t)`.
    pub fn psi(&self, alpha: usize, t: &[f64]) -> Result<f64> {
        Ok(self.weights(t)?[alpha])
    }

    /// `delta(t) = sum_alpha kappa_alpha psi_alpha(t)`.
    pub fn delta(&self, t: &[f64]) -> Result<f64> {
        Ok(self.weights(t)?.iter().zip(&self.balls).map(|(w, b)| w * b.kappa).sum())
    }

    /// Active ball with the largest `kappa` (smallest index on ties).
    pub fn select_alpha(&self, t: &[f64]) -> Result<usize> {
        let w = self.weights(t)?;
        let mut best: Option<usize> = None;
        for (a, wa) in w.iter().enumerate() {
            if *wa > 0.0 && best.is_none_or(|b| self.balls[a].kappa > self.balls[b].kappa) {
                best = Some(a);
            }
        }
        best.ok_or_else(|| Error::CoverFailure(format!("{t:?} lies outside every ball")))
    }

    /// Writes `alpha,t_center,radius,kappa,y_lo,y_hi`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["alpha", "t_center", "radius", "kappa", "y_lo", "y_hi"])?;
        for (a, b) in self.balls.iter().enumerate() {
            let t: Vec<String> = self.space.point(b.center).iter().map(|v| v.to_string()).collect();
            w.write_record([
                a.to_string(),
                t.join(" "),
                b.radius.to_string(),
                b.kappa.to_string(),
                b.y_region.0.to_string(),
                b.y_region.1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Partition of an interval `[lo, hi]` into cells `[lo + j d, lo + (j + 1) d)`,
/// `j = 0..J` (zero-based), the last one closed at `hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellPartition {
    lo: f64,
    hi: f64,
    delta_tilde: f64,
    count: usize,
}

/// The partition of `[0, 1]` into cells of width `delta_tilde`.
pub fn cells(delta_tilde: f64) -> Result<CellPartition> {
    cells_on(0.0, 1.0, delta_tilde)
}

/// The partition of `[lo, hi]` into cells of width `delta_tilde`.
pub fn cells_on(lo: f64, hi: f64, delta_tilde: f64) -> Result<CellPartition> {
    if !(delta_tilde > 0.0) || !delta_tilde.is_finite() {
        return Err(Error::Domain(format!("cell width {delta_tilde} must be positive")));
    }
    if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(Error::Domain(format!("bad cell range [{lo}, {hi}]")));
    }
    let count = (((hi - lo) / delta_tilde) - 1e-12).ceil().max(1.0) as usize;
    Ok(CellPartition { lo, hi, delta_tilde, count })
}

impl CellPartition {
    pub fn delta_tilde(&self) -> f64 {
        self.delta_tilde
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// `[lo, hi)` of cell `j`, clipped to the range.
    pub fn bounds(&self, j: usize) -> (f64, f64) {
        let lo = (self.lo + j as f64 * self.delta_tilde).min(self.hi);
        let hi = if j + 1 == self.count { self.hi } else { (self.lo + (j + 1) as f64 * self.delta_tilde).min(self.hi) };
        (lo, hi)
    }

    pub fn len_of(&self, j: usize) -> f64 {
        let (lo, hi) = self.bounds(j);
        hi - lo
    }

    /// Cell containing `s`; points outside the range go to the nearest end cell.
    pub fn index_of(&self, s: f64) -> usize {
        let j = ((s - self.lo) / self.delta_tilde).floor().max(0.0) as usize;
        let mut j = j.min(self.count - 1);
        // guard against rounding in the division
        while j > 0 && s < self.bounds(j).0 {
            j -= 1;
        }
        while j + 1 < self.count && s >= self.bounds(j + 1).0 {
            j += 1;
        }
        j
    }

    pub fn contains(&self, j: usize, s: f64) -> bool {
        let (lo, hi) = self.bounds(j);
        s >= lo && (s < hi || (j + 1 == self.count && s <= hi))
    }
}
