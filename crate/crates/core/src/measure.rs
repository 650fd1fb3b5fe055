//! Non-atomic probability measures on `[0, 1]` and the distances between them.
//!
//! A [`GridDensity`] is a piecewise-constant density over `n` uniform cells;
//! cell `i` covers `[i/n, (i+1)/n)`. Its CDF is piecewise linear, so CDF,
//! quantile and the W1 integral are all exact. A [`DiscreteMeasure`] is a
//! finite list of atoms and may carry less than unit mass.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Tolerance on the total mass of a [`GridDensity`].
pub const MASS_TOL: f64 = 1e-12;

/// Piecewise-constant probability density on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    weights: Vec<f64>,
    /// Prefix sums, `cum[0] = 0`, `cum[n] = 1`.
    cum: Vec<f64>,
}

impl GridDensity {
    /// Builds a density from cell masses that already sum to one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self::from_valid(weights))
    }

    /// Builds a density from nonnegative masses with positive total, normalizing them.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidMeasure("total mass is zero".into()));
        }
        Ok(Self::from_valid(weights.into_iter().map(|w| w / total).collect()))
    }

    fn from_valid(weights: Vec<f64>) -> Self {
        let mut cum = Vec::with_capacity(weights.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for w in &weights {
            acc += w;
            cum.push(acc);
        }
        // pin the endpoint so that quantile(1) lands on the support
        let last = cum.len() - 1;
        cum[last] = 1.0;
        Self { weights, cum }
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "cell count must be positive");
        Self::from_valid(vec![1.0 / n as f64; n])
    }

    /// Discretizes a nonnegative density function by integrating it over each cell.
    pub fn from_density_fn(n: usize, density: impl Fn(f64) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("cell count must be positive".into()));
        }
        let h = 1.0 / n as f64;
        let weights = (0..n).map(|i| quad::integrate(&density, i as f64 * h, (i + 1) as f64 * h, 1e-13)).collect();
        Self::normalized(weights)
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n() as f64
    }

    /// Density value on cell `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.weights[i] * self.n() as f64
    }

    /// Smallest density over cells with positive mass.
    pub fn min_positive_density(&self) -> f64 {
        self.weights.iter().filter(|w| **w > 0.0).map(|w| w * self.n() as f64).fold(f64::INFINITY, f64::min)
    }

    /// Smallest density over all cells (zero if some cell is empty).
    pub fn min_density(&self) -> f64 {
        self.weights.iter().map(|w| w * self.n() as f64).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_of(&self, x: f64) -> usize {
        ((x * self.n() as f64).floor() as usize).min(self.n() - 1)
    }

    /// `F(x) = mu([0, x])`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_unit("x", x)?;
        Ok(self.cdf_clamped(x))
    }

    /// CDF with `x` clamped into `[0, 1]`.
    pub fn cdf_clamped(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let n = self.n() as f64;
        let i = self.cell_of(x);
        let frac = (x * n - i as f64).clamp(0.0, 1.0);
        (self.cum[i] + self.weights[i] * frac).min(1.0)
    }

    /// Mass of `[a, b)`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        (self.cdf_clamped(b) - self.cdf_clamped(a)).max(0.0)
    }

    /// `Q(u) = inf { y : F(y) >= u }`, with `Q(0)` taken as the left end of the support.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(-MASS_TOL..=1.0 + MASS_TOL).contains(&u) {
            return Err(Error::Domain(format!("quantile level {u} outside [0, 1]")));
        }
        Ok(self.quantile_clamped(u))
    }

    pub fn quantile_clamped(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let n = self.n();
        // first cell i with cum[i+1] >= u and positive weight
        let mut i = self.cum[1..].partition_point(|c| *c < u).min(n - 1);
        while i < n - 1 && self.weights[i] <= 0.0 {
            i += 1;
        }
        let w = self.weights[i];
        let frac = if w > 0.0 { ((u - self.cum[i]) / w).clamp(0.0, 1.0) } else { 0.0 };
        (i as f64 + frac) / n as f64
    }

    /// Splits every cell into `factor` equal cells.
    pub fn refine(&self, factor: usize) -> Self {
        assert!(factor > 0);
        let w = self.weights.iter().flat_map(|w| std::iter::repeat_n(w / factor as f64, factor)).collect();
        Self::from_valid(w)
    }

    /// Cell masses moved to the cell boundaries, half to each side.
    ///
    /// The resulting atoms on `{0, 1/n, ..., 1}` have a CDF equal to the cell
    /// average of this CDF, so their W1 and TV distances never exceed the
    /// density ones.
    pub fn to_boundary_atoms(&self) -> DiscreteMeasure {
        let n = self.n();
        let mut mass = vec![0.0; n + 1];
        for (i, w) in self.weights.iter().enumerate() {
            mass[i] += 0.5 * w;
            mass[i + 1] += 0.5 * w;
        }
        let atoms = mass.into_iter().enumerate().map(|(i, m)| (i as f64 / n as f64, m)).collect();
        DiscreteMeasure { atoms }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cell_index", "weight"])?;
        for (i, m) in self.weights.iter().enumerate() {
            w.write_record([i.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["cell_index", "weight"] {
            return Err(Error::Config(format!("expected header cell_index,weight, got {headers:?}")));
        }
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for rec in rdr.deserialize::<GridRow>() {
            let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
            rows.push((rec.cell_index, rec.weight));
        }
        if rows.is_empty() {
            return Err(Error::InvalidMeasure("no cells".into()));
        }
        rows.sort_by_key(|r| r.0);
        for (k, (i, _)) in rows.iter().enumerate() {
            if *i != k {
                return Err(Error::InvalidMeasure(format!("cell indices must be 0..n-1, missing {k}")));
            }
        }
        let weights: Vec<f64> = rows.into_iter().map(|r| r.1).collect();
        validate_weights(&weights)?;
        let total: f64 = weights.iter().sum();
        // files written by hand carry decimal rounding
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        Self::normalized(weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f).map_err(|e| match e {
            Error::Config(m) | Error::InvalidMeasure(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Deserialize)]
struct GridRow {
    cell_index: usize,
    weight: f64,
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidMeasure("no cells".into()));
    }
    for (i, w) in weights.iter().enumerate() {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::InvalidMeasure(format!("weight {i} is {w}")));
        }
    }
    Ok(())
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {x} outside [0, 1]")))
    }
}

/// Finite measure made of atoms, possibly with total mass below one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteMeasure {
    /// Atoms are sorted by position; masses must be finite and nonnegative.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        for (x, m) in &atoms {
            if !x.is_finite() || !m.is_finite() || *m < 0.0 {
                return Err(Error::InvalidMeasure(format!("bad atom ({x}, {m})")));
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { atoms })
    }

    /// Like [`new`](Self::new) but also checks the declared total mass.
    pub fn with_mass(atoms: Vec<(f64, f64)>, mass: f64) -> Result<Self> {
        let m = Self::new(atoms)?;
        if (m.mass() - mass).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("mass {} differs from declared {mass}", m.mass())));
        }
        Ok(m)
    }

    pub fn point(x: f64) -> Self {
        Self { atoms: vec![(x, 1.0)] }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `inf { y : mu((-inf, y]) >= u }` for `u` in `[0, mass]`; `Q(0)` is the first charged atom.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        let total = self.mass();
        if total <= 0.0 {
            return Err(Error::EmptyTarget);
        }
        if !(u >= -MASS_TOL && u <= total + MASS_TOL) {
            return Err(Error::Domain(format!("quantile level {u} outside [0, {total}]")));
        }
        let mut acc = 0.0;
        let mut last = self.atoms[0].0;
        for (x, m) in &self.atoms {
            if *m <= 0.0 {
                continue;
            }
            acc += m;
            last = *x;
            if u <= 0.0 || acc >= u {
                return Ok(*x);
            }
        }
        Ok(last)
    }

    /// Mass assigned to each point of `support` (atoms must lie on it).
    pub fn masses_on(&self, support: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; support.len()];
        for (x, m) in &self.atoms {
            let k = support.partition_point(|s| *s < *x - 1e-12);
            if k >= support.len() || (support[k] - x).abs() > 1e-12 {
                return Err(Error::Domain(format!("atom at {x} is off the support grid")));
            }
            out[k] += m;
        }
        Ok(out)
    }
}

/// Histogram of `T(x)` for `x ~ mu`, using `k` midpoint sub-samples per source cell.
pub fn pushforward<F>(mu: &GridDensity, map: F, bins: usize, k: usize) -> Result<GridDensity>
where
    F: Fn(f64) -> Result<f64>,
{
    if bins == 0 || k == 0 {
        return Err(Error::Domain("bins and sub-sample count must be positive".into()));
    }
    let n = mu.n();
    let mut out = vec![0.0; bins];
    for (i, w) in mu.weights().iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        let m = w / k as f64;
        for s in 0..k {
            let x = (i as f64 + (s as f64 + 0.5) / k as f64) / n as f64;
            let y = map(x)?;
            if !y.is_finite() {
                return Err(Error::Domain(format!("map returned {y} at x = {x}")));
            }
            let b = ((y.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
            out[b] += m;
        }
    }
    GridDensity::normalized(out)
}

/// Histogram of weighted points `(y, w)` on `bins` equal cells, normalized.
pub fn bin_points<I>(points: I, bins: usize) -> Result<GridDensity>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    if bins == 0 {
        return Err(Error::Domain("bins must be positive".into()));
    }
    let mut out = vec![0.0; bins];
    for (y, w) in points {
        if !y.is_finite() {
            return Err(Error::Domain(format!("map returned {y}")));
        }
        let b = ((y.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        out[b] += w;
    }
    GridDensity::normalized(out)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Both densities refined to a common cell count.
fn common_refinement(a: &GridDensity, b: &GridDensity) -> (GridDensity, GridDensity) {
    if a.n() == b.n() {
        return (a.clone(), b.clone());
    }
    let l = a.n() / gcd(a.n(), b.n()) * b.n();
    (a.refine(l / a.n()), b.refine(l / b.n()))
}

/// Total variation `sum |w1_i - w2_i|` (mutually singular pairs are at distance 2).
pub fn tv_distance(m1: &GridDensity, m2: &GridDensity) -> f64 {
    let (a, b) = common_refinement(m1, m2);
    a.weights().iter().zip(b.weights()).map(|(x, y)| (x - y).abs()).sum()
}

/// Exact `int_0^1 |F1 - F2|` for piecewise-linear CDFs.
pub fn w1_distance(m1: &GridDensity, m2: &GridDensity) -> f64 {
    let (a, b) = common_refinement(m1, m2);
    let h = a.cell_width();
    let ca = a.cumulative();
    let cb = b.cumulative();
    let mut total = 0.0;
    for i in 0..a.n() {
        let d0 = ca[i] - cb[i];
        let d1 = ca[i + 1] - cb[i + 1];
        total += h * abs_linear_integral(d0, d1);
    }
    total
}

/// Average of `|l|` over `[0, 1]` for the linear function with endpoint values `a`, `b`.
fn abs_linear_integral(a: f64, b: f64) -> f64 {
    if a * b >= 0.0 {
        0.5 * (a.abs() + b.abs())
    } else {
        0.5 * (a * a + b * b) / (a.abs() + b.abs())
    }
}

/// Exact W1 between two atomic measures of equal mass on the line.
pub fn w1_discrete(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> f64 {
    let mut pts: Vec<(f64, f64)> =
        m1.atoms().iter().map(|a| (a.0, a.1)).chain(m2.atoms().iter().map(|a| (a.0, -a.1))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut total = 0.0;
    for w in pts.windows(2) {
        acc += w[0].1;
        total += acc.abs() * (w[1].0 - w[0].0);
    }
    total
}

/// Kantorovich-Rubinshtein distance on the line:
/// `max sum f_i (p_i - q_i)` over `|f_i| <= 1` and `|f_i - f_{i+1}| <= x_{i+1} - x_i`.
///
/// `points` must be sorted; constraints between adjacent points imply all others.
/// Solved exactly by dynamic programming over concave piecewise-linear value functions.
pub fn dkr_on_support(points: &[f64], p: &[f64], q: &[f64]) -> Result<f64> {
    if points.len() != p.len() || p.len() != q.len() {
        return Err(Error::Shape(format!("{} points, {} and {} masses", points.len(), p.len(), q.len())));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    if points.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Domain("support points must be sorted".into()));
    }
    let mut v = ChainValue::linear(p[0] - q[0]);
    for i in 1..points.len() {
        v.window_max(points[i] - points[i - 1]);
        v.add_linear(p[i] - q[i]);
    }
    let best = v.max();
    if !best.is_finite() {
        return Err(Error::AuditFailure(format!("KR program returned {best}")));
    }
    Ok(best.max(0.0))
}

/// d_KR between atomic measures, on the union of their supports.
pub fn dkr_distance(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<f64> {
    let mut pts: Vec<f64> = m1.atoms().iter().chain(m2.atoms()).map(|a| a.0).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let p = m1.masses_on(&pts)?;
    let q = m2.masses_on(&pts)?;
    dkr_on_support(&pts, &p, &q)
}

/// d_KR between grid densities through their boundary-atom discretization.
pub fn dkr_grid(m1: &GridDensity, m2: &GridDensity) -> Result<f64> {
    let (a, b) = common_refinement(m1, m2);
    let pa = a.to_boundary_atoms();
    let pb = b.to_boundary_atoms();
    let pts: Vec<f64> = pa.atoms().iter().map(|x| x.0).collect();
    let p: Vec<f64> = pa.atoms().iter().map(|x| x.1).collect();
    let q: Vec<f64> = pb.atoms().iter().map(|x| x.1).collect();
    dkr_on_support(&pts, &p, &q)
}

/// Concave piecewise-linear function on `[-1, 1]`, stored as its value at -1
/// and a list of `(length, slope)` pieces with decreasing slopes.
struct ChainValue {
    at_left: f64,
    pieces: Vec<(f64, f64)>,
}

impl ChainValue {
    fn linear(slope: f64) -> Self {
        Self { at_left: -slope, pieces: vec![(2.0, slope)] }
    }

    fn add_linear(&mut self, d: f64) {
        self.at_left -= d;
        for p in &mut self.pieces {
            p.1 += d;
        }
    }

    fn max(&self) -> f64 {
        self.at_left + self.pieces.iter().filter(|p| p.1 > 0.0).map(|p| p.0 * p.1).sum::<f64>()
    }

    /// `W(f) = max { V(f') : |f' - f| <= g, f' in [-1, 1] }`.
    fn window_max(&mut self, g: f64) {
        if g <= 0.0 {
            return;
        }
        let mut rising = Vec::new();
        let mut flat = 0.0;
        let mut falling = Vec::new();
        for &(len, slope) in &self.pieces {
            if len <= 0.0 {
                continue;
            }
            if slope > 0.0 {
                rising.push((len, slope));
            } else if slope < 0.0 {
                falling.push((len, slope));
            } else {
                flat += len;
            }
        }
        // shift the rising part left by g
        let mut cut = g;
        let mut kept_rising = Vec::with_capacity(rising.len());
        for (len, slope) in rising {
            if cut >= len {
                self.at_left += len * slope;
                cut -= len;
            } else {
                self.at_left += cut * slope;
                kept_rising.push((len - cut, slope));
                cut = 0.0;
            }
        }
        let mut plateau = flat + 2.0 * g - cut;
        // total length is now 2 + g; trim g off the right end
        let mut excess = g;
        while excess > 0.0 {
            if let Some(last) = falling.last_mut() {
                if last.0 > excess {
                    last.0 -= excess;
                    excess = 0.0;
                } else {
                    excess -= last.0;
                    falling.pop();
                }
            } else {
                plateau -= excess;
                excess = 0.0;
            }
        }
        let mut pieces = kept_rising;
        if plateau > 0.0 {
            pieces.push((plateau, 0.0));
        }
        pieces.extend(falling);
        self.pieces = pieces;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step() -> GridDensity {
        GridDensity::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn cdf_examples() {
        let u = GridDensity::uniform(8);
        assert!((u.cdf(0.25).unwrap() - 0.25).abs() < 1e-15);
        assert!((step().cdf(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((step().cdf(0.75).unwrap() - 1.0).abs() < 1e-15);
        assert!(u.cdf(1.5).is_err());
        assert!(u.cdf(-0.1).is_err());
    }

    #[test]
    fn quantile_examples() {
        let u = GridDensity::uniform(10);
        assert!((u.quantile(0.3).unwrap() - 0.3).abs() < 1e-15);
        assert!((step().quantile(0.6).unwrap() - 0.3).abs() < 1e-15);
        let d = DiscreteMeasure::new(vec![(0.2, 0.5), (0.8, 0.5)]).unwrap();
        assert_eq!(d.quantile(0.7).unwrap(), 0.8);
        assert_eq!(d.quantile(0.5).unwrap(), 0.2);
        assert!(u.quantile(1.2).is_err());
        assert!(d.quantile(1.2).is_err());
    }

    #[test]
    fn quantile_skips_empty_cells() {
        let g = GridDensity::new(vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        // the level 0.5 is reached at the end of cell 0
        assert!((g.quantile(0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(g.quantile(0.5 + 1e-9).unwrap() > 0.75);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(GridDensity::new(vec![0.5, 0.6]).is_err());
        assert!(GridDensity::new(vec![1.5, -0.5]).is_err());
        assert!(GridDensity::new(vec![f64::NAN, 1.0]).is_err());
        assert!(GridDensity::normalized(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let u = GridDensity::uniform(4);
        let id = pushforward(&u, Ok, 4, 8).unwrap();
        assert_eq!(id.weights(), u.weights());
        let flip = pushforward(&u, |x| Ok(1.0 - x), 4, 8).unwrap();
        for w in flip.weights() {
            assert!((w - 0.25).abs() < 1e-12);
        }
        let half = pushforward(&u, |x| Ok(x / 2.0), 4, 8).unwrap();
        let expect = [0.5, 0.5, 0.0, 0.0];
        for (w, e) in half.weights().iter().zip(expect) {
            assert!((w - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_half_map_matches_sampling() {
        // frozen from 10^6 uniform draws of x/2 binned into 4 cells: (0.5, 0.5, 0, 0) +- 2e-3
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let draws = 1_000_000;
        for _ in 0..draws {
            let y: f64 = rng.gen::<f64>() / 2.0;
            counts[((y * 4.0) as usize).min(3)] += 1;
        }
        let sampled: Vec<f64> = counts.iter().map(|c| *c as f64 / draws as f64).collect();
        let quad = pushforward(&GridDensity::uniform(4), |x| Ok(x / 2.0), 4, 8).unwrap();
        for (a, b) in sampled.iter().zip(quad.weights()) {
            assert!((a - b).abs() < 3e-3);
        }
    }

    #[test]
    fn tv_examples() {
        let a = GridDensity::new(vec![1.0, 0.0]).unwrap();
        let b = GridDensity::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(tv_distance(&a, &a), 0.0);
        assert!((tv_distance(&a, &b) - 2.0).abs() < 1e-15);
        let c = GridDensity::new(vec![0.6, 0.4]).unwrap();
        let d = GridDensity::new(vec![0.4, 0.6]).unwrap();
        assert!((tv_distance(&c, &d) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn tv_on_different_resolutions() {
        let a = GridDensity::uniform(2);
        let b = GridDensity::uniform(3);
        assert!(tv_distance(&a, &b) < 1e-12);
    }

    /// Brute-force KR value: enumerate f on a dense grid of [-1, 1]^k.
    fn brute_kr(points: &[f64], p: &[f64], q: &[f64], steps: usize) -> f64 {
        let grid: Vec<f64> = (0..=steps).map(|i| -1.0 + 2.0 * i as f64 / steps as f64).collect();
        let k = points.len();
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; k];
        loop {
            let f: Vec<f64> = idx.iter().map(|i| grid[*i]).collect();
            let ok = (1..k).all(|i| (f[i] - f[i - 1]).abs() <= points[i] - points[i - 1] + 1e-12);
            if ok {
                let v: f64 = (0..k).map(|i| f[i] * (p[i] - q[i])).sum();
                best = best.max(v);
            }
            let mut c = 0;
            loop {
                if c == k {
                    return best;
                }
                idx[c] += 1;
                if idx[c] <= steps {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
        }
    }

    #[test]
    fn dkr_point_masses() {
        let a = DiscreteMeasure::point(0.0);
        let b = DiscreteMeasure::point(1.0);
        let c = DiscreteMeasure::point(0.25);
        // brute-force oracle values over an f-grid with step 1/200
        let oracle_ab = brute_kr(&[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0], 400);
        let oracle_ac = brute_kr(&[0.0, 0.25], &[1.0, 0.0], &[0.0, 1.0], 400);
        assert!((oracle_ab - 1.0).abs() < 1e-9);
        assert!((oracle_ac - 0.25).abs() < 1e-9);
        assert!((dkr_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((dkr_distance(&a, &c).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(dkr_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn dkr_matches_brute_force_with_unequal_mass() {
        let pts = [0.0, 0.3, 0.5];
        let p = [0.7, 0.0, 0.2];
        let q = [0.0, 0.1, 0.0];
        let dp = dkr_on_support(&pts, &p, &q).unwrap();
        let bf = brute_kr(&pts, &p, &q, 200);
        assert!((dp - bf).abs() < 1e-9, "{dp} vs {bf}");
    }

    #[test]
    fn w1_examples() {
        let u = GridDensity::uniform(2);
        let s = GridDensity::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(w1_distance(&u, &u), 0.0);
        // int_0^1 |u - u/2| du
        assert!((w1_distance(&u, &s) - 0.25).abs() < 1e-15);
        let b = GridDensity::new(vec![0.0, 1.0]).unwrap();
        assert!((w1_distance(&s, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn w1_uniform_vs_step_by_transport_on_atoms() {
        // 256 equal atoms on each side; the monotone matching is optimal for |x - y|
        let k = 256;
        let a: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
        let b: Vec<f64> = (0..k).map(|i| 0.5 * (i as f64 + 0.5) / k as f64).collect();
        let lp: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / k as f64;
        let exact = w1_distance(&GridDensity::uniform(2), &GridDensity::new(vec![1.0, 0.0]).unwrap());
        assert!((lp - exact).abs() < 1e-3);
    }

    #[test]
    fn csv_round_trip_and_rejection() {
        let g = GridDensity::normalized(vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GridDensity::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, g);
        let bad = "cell_index,weight\n0,0.5\n1,-0.5\n2,1.0\n";
        assert!(GridDensity::read_csv(bad.as_bytes()).is_err());
        let nan = "cell_index,weight\n0,NaN\n1,1.0\n";
        assert!(GridDensity::read_csv(nan.as_bytes()).is_err());
        let header = "index,weight\n0,1.0\n";
        assert!(GridDensity::read_csv(header.as_bytes()).is_err());
    }
}
