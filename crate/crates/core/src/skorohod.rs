//! Quantile maps from `[0, w]` onto a target measure of mass `w`, and the
//! per-cell CDF offsets that feed them.

use std::io::Write;
use std::sync::Arc;

use crate::cover::CellPartition;
use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, GridDensity};

/// Slack on levels and domain bounds.
const LEVEL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
enum Target {
    /// Piecewise-constant density on `n` uniform cells of `[0, 1]`; cell masses
    /// are `scale * (cum[k + 1] - cum[k])`.
    Cells {
        cum: Arc<[f64]>,
        scale: f64,
    },
    Atoms(DiscreteMeasure),
}

/// `u -> Q(u / w)` for the normalized target; pushes Lebesgue measure on
/// `[0, w]` forward to the target.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileSkorohodMap {
    target: Target,
    mass: f64,
    w: f64,
}

/// Prefix sums of cell masses, starting at zero.
pub fn prefix_sums(masses: &[f64]) -> Arc<[f64]> {
    let mut cum = Vec::with_capacity(masses.len() + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for m in masses {
        acc += m;
        cum.push(acc);
    }
    cum.into()
}

impl QuantileSkorohodMap {
    /// Target with the given masses on the uniform cells of `[0, 1]`; `w` is their total.
    pub fn from_cell_masses(masses: &[f64]) -> Result<Self> {
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidMeasure("cell masses must be finite and nonnegative".into()));
        }
        Self::from_scaled(prefix_sums(masses), 1.0)
    }

    /// Target `scale` times the cell measure with prefix sums `cum`; shares `cum`.
    pub fn from_scaled(cum: Arc<[f64]>, scale: f64) -> Result<Self> {
        if cum.len() < 2 || !(scale >= 0.0) {
            return Err(Error::InvalidMeasure("need at least one cell and a nonnegative scale".into()));
        }
        let mass = scale * cum[cum.len() - 1];
        if !(mass > 0.0) {
            return Err(Error::EmptyTarget);
        }
        Ok(Self { target: Target::Cells { cum, scale }, mass, w: mass })
    }

    pub fn from_density(target: &GridDensity) -> Result<Self> {
        Self::from_cell_masses(target.weights())
    }

    pub fn from_atoms(target: DiscreteMeasure) -> Result<Self> {
        let mass = target.mass();
        if !(mass > 0.0) {
            return Err(Error::EmptyTarget);
        }
        Ok(Self { target: Target::Atoms(target), mass, w: mass })
    }

    /// Uses `[0, w]` as the domain; the target is normalized to mass `w`.
    pub fn with_domain(mut self, w: f64) -> Result<Self> {
        if !(w > 0.0) {
            return Err(Error::EmptyTarget);
        }
        self.w = w;
        Ok(self)
    }

    pub fn domain_length(&self) -> f64 {
        self.w
    }

    /// Total mass of the target as stored.
    pub fn target_mass(&self) -> f64 {
        self.mass
    }

    /// `xi(u)`, the quantile of the normalized target at `u / w`.
    pub fn xi(&self, u: f64) -> Result<f64> {
        let tol = LEVEL_TOL * self.w.max(1.0);
        if !(u >= -tol && u <= self.w + tol) {
            return Err(Error::Domain(format!("u = {u} outside [0, {}]", self.w)));
        }
        let level = (u / self.w).clamp(0.0, 1.0) * self.mass;
        Ok(match &self.target {
            Target::Cells { cum, scale } => cell_quantile(cum, *scale, level),
            Target::Atoms(d) => d.quantile(level.min(d.mass()))?,
        })
    }

    /// Writes `u,y` at `samples` midpoints of `[0, w]`.
    pub fn write_csv<W: Write>(&self, out: W, samples: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("writing quantile table: {e}"));
        w.write_record(["u", "y"]).map_err(io)?;
        for k in 0..samples {
            let u = (k as f64 + 0.5) / samples as f64 * self.w;
            w.write_record([u.to_string(), self.xi(u)?.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing quantile table: {e}")))?;
        Ok(())
    }
}

/// Smallest `y` with `F(y) >= level`; `level <= 0` gives the left end of the support.
fn cell_quantile(cum: &[f64], scale: f64, level: f64) -> f64 {
    let n = cum.len() - 1;
    let l = level / scale;
    let mut k = cum[1..].partition_point(|c| *c < l).min(n - 1);
    while k < n - 1 && cum[k + 1] - cum[k] <= 0.0 {
        k += 1;
    }
    let m = cum[k + 1] - cum[k];
    let frac = if m > 0.0 { ((l - cum[k]) / m).clamp(0.0, 1.0) } else { 0.0 };
    (k as f64 + frac) / n as f64
}

fn check_cell(s: f64, j: usize, partition: &CellPartition) -> Result<(f64, f64)> {
    let (lo, hi) = partition.bounds(j);
    if j >= partition.count() || !partition.contains(j, s) {
        return Err(Error::WrongCell { s, cell: j, lo, hi });
    }
    Ok((lo, hi))
}

/// Lebesgue measure of `[lo_j, s]` for `s` in cell `j` (zero-based).
pub fn cell_cdf_offset(s: f64, j: usize, partition: &CellPartition) -> Result<f64> {
    let (lo, _) = check_cell(s, j, partition)?;
    Ok(s - lo)
}

/// `gamma`-mass of `[lo_j, s]` for `s` in cell `j` (zero-based).
pub fn weighted_cell_cdf_offset(s: f64, j: usize, partition: &CellPartition, gamma: &GridDensity) -> Result<f64> {
    let (lo, _) = check_cell(s, j, partition)?;
    Ok((gamma.cdf_clamped(s) - gamma.cdf_clamped(lo)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::cells;

    #[test]
    fn uniform_target_gives_identity() {
        let m = QuantileSkorohodMap::from_density(&GridDensity::uniform(10)).unwrap();
        for k in 0..=20 {
            let u = k as f64 / 20.0;
            assert!((m.xi(u).unwrap() - u).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_gives_constant() {
        let d = DiscreteMeasure::new(vec![(0.7, 0.5)]).unwrap();
        let m = QuantileSkorohodMap::from_atoms(d).unwrap();
        assert_eq!(m.domain_length(), 0.5);
        for u in [0.0, 0.1, 0.25, 0.5] {
            assert_eq!(m.xi(u).unwrap(), 0.7);
        }
        assert!(m.xi(0.6).is_err());
    }

    #[test]
    fn empty_target_rejected() {
        assert!(matches!(QuantileSkorohodMap::from_cell_masses(&[0.0, 0.0]), Err(Error::EmptyTarget)));
    }

    #[test]
    fn leading_empty_cells_skipped_at_zero() {
        let m = QuantileSkorohodMap::from_cell_masses(&[0.0, 0.0, 0.25, 0.25]).unwrap();
        assert_eq!(m.xi(0.0).unwrap(), 0.5);
        assert!((m.xi(0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn offsets() {
        let p = cells(0.3).unwrap();
        assert!((cell_cdf_offset(0.1, 0, &p).unwrap() - 0.1).abs() < 1e-15);
        assert!((cell_cdf_offset(0.4, 1, &p).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(cell_cdf_offset(0.4, 0, &p), Err(Error::WrongCell { .. })));
        let gamma = GridDensity::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((weighted_cell_cdf_offset(0.2, 0, &p, &gamma).unwrap() - 0.4).abs() < 1e-15);
        let leb = GridDensity::uniform(8);
        for s in [0.31, 0.45, 0.59] {
            let a = weighted_cell_cdf_offset(s, 1, &p, &leb).unwrap();
            assert!((a - cell_cdf_offset(s, 1, &p).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn converging_uniform_targets() {
        // uniform on [0, 1/2 + 1/k] -> uniform on [0, 1/2]; quantiles u(1/2 + 1/k) vs u/2
        let n = 840;
        let limit = QuantileSkorohodMap::from_cell_masses(
            &(0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
        )
        .unwrap()
        .with_domain(1.0)
        .unwrap();
        for k in [4usize, 6, 10, 20] {
            let edge = n / 2 + n / k;
            let masses: Vec<f64> = (0..n).map(|i| if i < edge { 1.0 } else { 0.0 }).collect();
            let m = QuantileSkorohodMap::from_cell_masses(&masses).unwrap().with_domain(1.0).unwrap();
            for s in 0..=200 {
                let u = s as f64 / 200.0;
                let d = (m.xi(u).unwrap() - limit.xi(u).unwrap()).abs();
                assert!(d <= 1.0 / k as f64 + 1e-12, "k={k} u={u} d={d}");
            }
        }
    }

    #[test]
    fn quantile_table_dump() {
        let m = QuantileSkorohodMap::from_density(&GridDensity::uniform(4)).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf, 2).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "u,y\n0.25,0.25\n0.75,0.75\n");
    }
}
