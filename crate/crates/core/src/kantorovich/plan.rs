use std::io::Write;

use crate::cost::ParametricCost;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Tolerance on plan marginals.
pub const MARGINAL_TOL: f64 = 1e-8;

/// Dense row-major cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} matrix with {} entries", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("cost entry {v} is not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The same problem with rows and columns reordered.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(row_perm[i], col_perm[j])).unwrap()
    }
}

/// Cell-averaged cost between the uniform grids of `rows` and `cols` cells on
/// `[0, 1]`, using `k x k` midpoint sub-samples per cell pair.
pub fn cell_cost_matrix(
    cost: &ParametricCost,
    t: &[f64],
    rows: usize,
    cols: usize,
    k: usize,
    exec: Execution,
) -> Result<CostMatrix> {
    if rows == 0 || cols == 0 || k == 0 {
        return Err(Error::Domain("grid sizes and sub-sample count must be positive".into()));
    }
    let xs: Vec<f64> = (0..rows * k).map(|s| (s as f64 + 0.5) / (rows * k) as f64).collect();
    let ys: Vec<f64> = (0..cols * k).map(|s| (s as f64 + 0.5) / (cols * k) as f64).collect();
    let norm = 1.0 / (k * k) as f64;
    let row_blocks = par::try_map_range(exec, rows, |i| {
        let mut out = vec![0.0; cols];
        for &x in &xs[i * k..(i + 1) * k] {
            for (j, o) in out.iter_mut().enumerate() {
                for &y in &ys[j * k..(j + 1) * k] {
                    *o += cost.eval(x, y, t)?;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= norm);
        Ok::<_, Error>(out)
    })?;
    CostMatrix::new(rows, cols, row_blocks.concat())
}

/// A coupling matrix together with its intended marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    rows: usize,
    cols: usize,
    mass: Vec<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
}

impl Plan {
    /// Validates shape, nonnegativity and both marginals within [`MARGINAL_TOL`].
    pub fn new(mass: Vec<f64>, row_marginal: Vec<f64>, col_marginal: Vec<f64>) -> Result<Self> {
        let p = Self::unchecked(mass, row_marginal, col_marginal)?;
        if let Some(v) = p.mass.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("plan entry {v}")));
        }
        let err = p.marginal_error();
        if err.0 > MARGINAL_TOL || err.1 > MARGINAL_TOL {
            return Err(Error::InvalidMeasure(format!(
                "plan marginals off by {:e} (rows) and {:e} (columns)",
                err.0, err.1
            )));
        }
        Ok(p)
    }

    pub(crate) fn unchecked(mass: Vec<f64>, row_marginal: Vec<f64>, col_marginal: Vec<f64>) -> Result<Self> {
        let (rows, cols) = (row_marginal.len(), col_marginal.len());
        if mass.len() != rows * cols {
            return Err(Error::Shape(format!("{} entries for a {rows}x{cols} plan", mass.len())));
        }
        Ok(Self { rows, cols, mass, row_marginal, col_marginal })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.mass[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Largest absolute deviation of the row and column sums from the marginals.
    pub fn marginal_error(&self) -> (f64, f64) {
        let dev = |a: Vec<f64>, b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        (dev(self.row_sums(), &self.row_marginal), dev(self.col_sums(), &self.col_marginal))
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.mass.iter().zip(c.data()).map(|(p, c)| p * c).sum()
    }

    /// Writes `i,j,mass` for entries above `1e-12`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "mass"])?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let m = self.get(i, j);
                if m > 1e-12 {
                    w.write_record([i.to_string(), j.to_string(), m.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Family;

    #[test]
    fn plan_validation() {
        let ok = Plan::new(vec![0.3, 0.2, 0.0, 0.5], vec![0.5, 0.5], vec![0.3, 0.7]);
        assert!(ok.is_ok());
        assert!(Plan::new(vec![0.3, 0.2, 0.1, 0.4], vec![0.5, 0.5], vec![0.3, 0.7]).is_err());
        assert!(Plan::new(vec![0.6, -0.1, 0.0, 0.5], vec![0.5, 0.5], vec![0.6, 0.4]).is_err());
        assert!(Plan::new(vec![1.0], vec![0.5, 0.5], vec![1.0]).is_err());
    }

    #[test]
    fn cell_costs_average_subsamples() {
        let c = ParametricCost::new(Family::Abs);
        let m = cell_cost_matrix(&c, &[0.0], 2, 2, 1, Execution::Sequential).unwrap();
        assert!((m.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(m.get(0, 0), 0.0);
        // E|X - Y| for independent uniforms on one cell of width 1/2 is 1/6; midpoints approach it
        let fine = cell_cost_matrix(&c, &[0.0], 2, 2, 64, Execution::Sequential).unwrap();
        assert!((fine.get(0, 0) - 1.0 / 6.0).abs() < 1e-3);
        let par = cell_cost_matrix(&c, &[0.0], 2, 2, 64, Execution::Parallel).unwrap();
        assert_eq!(fine, par);
    }
}
