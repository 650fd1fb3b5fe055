//! Entropic transport by Sinkhorn iterations.
//!
//! Potentials `f`, `g` define `P_ij = exp((f_i + g_j - c_ij) / eta)`. Iterations
//! scale the kernel at the current potentials and absorb large scalings back
//! into them; a log-domain step takes over when the kernel underflows. Without a
//! warm start the regularization is annealed from the cost scale down to
//! `eta`. The returned plan is projected onto the exact marginals by the
//! row-scale / column-scale / rank-one correction, which is continuous in the
//! iterate.

use crate::error::{Error, Result};

use super::plan::{CostMatrix, Plan};

/// `eta = eps_k / (2 ln(nm + 1))`: the entropy of any `n x m` plan is at most
/// `ln(nm)`, so the entropic optimum costs at most `eps_k / 2` above the exact one.
pub fn select_eta(rows: usize, cols: usize, eps_k: f64) -> f64 {
    eps_k / (2.0 * ((rows * cols) as f64 + 1.0).ln())
}

/// Default L1 marginal tolerance for a slack `eps_k`: the final projection
/// moves at most twice the marginal error, costing at most `eps_k / 4`.
pub fn default_tol(cost: &CostMatrix, eps_k: f64) -> f64 {
    let scale = cost.max() - cost.min().min(0.0);
    if scale > 0.0 {
        eps_k / (8.0 * scale)
    } else {
        1e-9
    }
}

/// Dual potentials at a given regularization.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub eta: f64,
}

#[derive(Clone, Debug)]
pub struct EntropicResult {
    pub plan: Plan,
    pub potentials: Potentials,
    pub iterations: usize,
    /// L1 row-marginal error before the final projection.
    pub marginal_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 200_000 }
    }
}

/// Entropic plan with marginal error at most `tol` (L1) before projection.
pub fn solve_entropic(cost: &CostMatrix, mu: &[f64], nu: &[f64], eta: f64, tol: f64, max_iter: usize) -> Result<Plan> {
    Ok(sinkhorn(cost, mu, nu, eta, SinkhornOptions { tol, max_iter }, None)?.plan)
}

fn ln_masses(w: &[f64]) -> Vec<f64> {
    w.iter().map(|v| if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect()
}

/// `-eta * ln sum_k exp((pot_k - c_k) / eta)`, skipping `-inf` potentials.
#[inline]
fn soft_min(pot: &[f64], c: &[f64], eta: f64) -> f64 {
    let inv = 1.0 / eta;
    let mut best = f64::NEG_INFINITY;
    for (p, c) in pot.iter().zip(c) {
        let z = (p - c) * inv;
        if z > best {
            best = z;
        }
    }
    if best == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let mut s = 0.0;
    for (p, c) in pot.iter().zip(c) {
        s += ((p - c) * inv - best).exp();
    }
    -eta * (best + s.ln())
}

/// Scalings beyond `exp(ABSORB)` are moved into the potentials.
const ABSORB: f64 = 50.0;

/// `pot += eta ln(scale)` on finite potentials, then `scale = 1`.
fn absorb(pot: &mut [f64], scale: &mut [f64], eta: f64) {
    for (p, s) in pot.iter_mut().zip(scale.iter_mut()) {
        if *p != f64::NEG_INFINITY {
            *p += eta * s.ln();
        }
        *s = 1.0;
    }
}

/// `out = K x` for a row-major kernel with `m` columns.
fn mat_vec(k: &[f64], x: &[f64], out: &mut [f64], m: usize) {
    for (o, row) in out.iter_mut().zip(k.chunks_exact(m)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out = K^T x` for a row-major kernel with `m` columns.
fn mat_t_vec(k: &[f64], x: &[f64], out: &mut [f64], m: usize) {
    out.fill(0.0);
    for (xi, row) in x.iter().zip(k.chunks_exact(m)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += xi * a;
        }
    }
}

struct Problem<'a> {
    c: &'a CostMatrix,
    ct: Vec<f64>,
    la: Vec<f64>,
    lb: Vec<f64>,
}

impl Problem<'_> {
    /// `K_ij = exp((f_i + g_j - c_ij) / eta)`, zero on empty rows and columns.
    fn fill_kernel(&self, f: &[f64], g: &[f64], eta: f64, k: &mut [f64]) {
        let m = g.len();
        for (i, row) in k.chunks_exact_mut(m).enumerate() {
            let c = self.c.row(i);
            for j in 0..m {
                row[j] = if f[i] == f64::NEG_INFINITY || g[j] == f64::NEG_INFINITY {
                    0.0
                } else {
                    ((f[i] + g[j] - c[j]) / eta).exp()
                };
            }
        }
    }

    fn update_g(&self, f: &[f64], g: &mut [f64], eta: f64) {
        let n = self.c.rows();
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = if self.lb[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eta * self.lb[j] + soft_min(f, &self.ct[j * n..(j + 1) * n], eta)
            };
        }
    }

    /// Writes the next `f` into `next` and returns the L1 row error of the current pair.
    fn update_f(&self, f: &[f64], g: &[f64], next: &mut [f64], mu: &[f64], eta: f64) -> f64 {
        let mut err = 0.0;
        for (i, fi) in next.iter_mut().enumerate() {
            if self.la[i] == f64::NEG_INFINITY {
                *fi = f64::NEG_INFINITY;
                continue;
            }
            *fi = eta * self.la[i] + soft_min(g, self.c.row(i), eta);
            err += mu[i] * (((f[i] - *fi) / eta).exp() - 1.0).abs();
        }
        err
    }
}

/// Sinkhorn iterations; `warm` potentials skip the annealing schedule.
pub fn sinkhorn(
    cost: &CostMatrix,
    mu: &[f64],
    nu: &[f64],
    eta: f64,
    opts: SinkhornOptions,
    warm: Option<&Potentials>,
) -> Result<EntropicResult> {
    let (n, m) = (mu.len(), nu.len());
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::Shape(format!("{}x{} costs for {n}x{m} marginals", cost.rows(), cost.cols())));
    }
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("eta = {eta} must be positive")));
    }
    for v in mu.iter().chain(nu) {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::InvalidMeasure(format!("marginal entry {v}")));
        }
    }
    let (sa, sb): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (sa - sb).abs() > super::exact::BALANCE_TOL || sa <= 0.0 {
        return Err(Error::Imbalance(sa, sb));
    }
    let mut ct = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            ct[j * n + i] = cost.get(i, j);
        }
    }
    let prob = Problem { c: cost, ct, la: ln_masses(mu), lb: ln_masses(nu) };

    let warm = warm.filter(|w| w.f.len() == n && w.g.len() == m && w.f.iter().all(|v| !v.is_nan()));
    let (mut f, mut g) = match warm {
        Some(w) => (w.f.clone(), w.g.clone()),
        None => (vec![0.0; n], vec![0.0; m]),
    };
    // the annealing schedule ends at eta; only the last stage runs to tol
    let mut stages = Vec::new();
    if warm.is_none() {
        let mut e = (cost.max() - cost.min()).max(eta);
        while e > eta {
            stages.push(e);
            e *= 0.5;
        }
    }
    stages.push(eta);
    for (k, v) in f.iter_mut().enumerate() {
        if prob.la[k] == f64::NEG_INFINITY {
            *v = f64::NEG_INFINITY;
        } else if *v == f64::NEG_INFINITY {
            *v = 0.0;
        }
    }

    let mut next = vec![0.0; n];
    let mut kernel = vec![0.0; n * m];
    let (mut u, mut v) = (vec![1.0; n], vec![1.0; m]);
    let (mut ktu, mut kv) = (vec![0.0; m], vec![0.0; n]);
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    let last = stages.len() - 1;
    for (s, &e) in stages.iter().enumerate() {
        let stage_tol = if s == last { opts.tol } else { opts.tol.max(1e-3) };
        prob.fill_kernel(&f, &g, e, &mut kernel);
        u.fill(1.0);
        v.fill(1.0);
        loop {
            if iterations >= opts.max_iter {
                return Err(Error::NonConvergence { iterations, error: err });
            }
            iterations += 1;
            // scaling step on the kernel; falls back to one log-domain step on underflow
            mat_t_vec(&kernel, &u, &mut ktu, m);
            let cols_ok = (0..m).all(|j| prob.lb[j] == f64::NEG_INFINITY || ktu[j] > 1e-200);
            if cols_ok {
                for j in 0..m {
                    v[j] = if prob.lb[j] == f64::NEG_INFINITY { 1.0 } else { nu[j] / ktu[j] };
                }
                mat_vec(&kernel, &v, &mut kv, m);
            }
            let rows_ok = cols_ok && (0..n).all(|i| prob.la[i] == f64::NEG_INFINITY || kv[i] > 1e-200);
            if !rows_ok {
                absorb(&mut f, &mut u, e);
                prob.update_g(&f, &mut g, e);
                v.fill(1.0);
                err = prob.update_f(&f, &g, &mut next, mu, e);
                if err <= stage_tol {
                    break;
                }
                std::mem::swap(&mut f, &mut next);
                prob.fill_kernel(&f, &g, e, &mut kernel);
                continue;
            }
            err = (0..n).filter(|i| prob.la[*i] != f64::NEG_INFINITY).map(|i| (u[i] * kv[i] - mu[i]).abs()).sum();
            if err <= stage_tol {
                break;
            }
            for i in 0..n {
                if prob.la[i] != f64::NEG_INFINITY {
                    u[i] = mu[i] / kv[i];
                }
            }
            let spread = |w: &[f64]| w.iter().map(|x| x.ln().abs()).fold(0.0, f64::max);
            if spread(&u) > ABSORB || spread(&v) > ABSORB {
                absorb(&mut f, &mut u, e);
                absorb(&mut g, &mut v, e);
                prob.fill_kernel(&f, &g, e, &mut kernel);
            }
        }
        absorb(&mut f, &mut u, e);
        absorb(&mut g, &mut v, e);
    }

    let mut mass = vec![0.0; n * m];
    for i in 0..n {
        if f[i] == f64::NEG_INFINITY {
            continue;
        }
        let row = cost.row(i);
        for j in 0..m {
            if g[j] != f64::NEG_INFINITY {
                mass[i * m + j] = ((f[i] + g[j] - row[j]) / eta).exp();
            }
        }
    }
    project_marginals(&mut mass, mu, nu);
    let plan = Plan::new(mass, mu.to_vec(), nu.to_vec())?;
    Ok(EntropicResult { plan, potentials: Potentials { f, g, eta }, iterations, marginal_error: err })
}

/// Scales rows and columns down to their marginals, then adds the rank-one
/// correction `err_r err_c^T / |err_c|`.
pub fn project_marginals(mass: &mut [f64], mu: &[f64], nu: &[f64]) {
    let (n, m) = (mu.len(), nu.len());
    for i in 0..n {
        let row = &mut mass[i * m..(i + 1) * m];
        let r: f64 = row.iter().sum();
        if r > mu[i] {
            let s = mu[i] / r;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    let mut col = vec![0.0; m];
    for i in 0..n {
        for (c, v) in col.iter_mut().zip(&mass[i * m..(i + 1) * m]) {
            *c += v;
        }
    }
    let ys: Vec<f64> = col.iter().zip(nu).map(|(c, b)| if *c > *b { b / c } else { 1.0 }).collect();
    for i in 0..n {
        for (v, y) in mass[i * m..(i + 1) * m].iter_mut().zip(&ys) {
            *v *= y;
        }
    }
    let err_r: Vec<f64> = (0..n).map(|i| (mu[i] - mass[i * m..(i + 1) * m].iter().sum::<f64>()).max(0.0)).collect();
    let mut col = vec![0.0; m];
    for i in 0..n {
        for (c, v) in col.iter_mut().zip(&mass[i * m..(i + 1) * m]) {
            *c += v;
        }
    }
    let err_c: Vec<f64> = col.iter().zip(nu).map(|(c, b)| (b - c).max(0.0)).collect();
    let total: f64 = err_c.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            if err_r[i] == 0.0 {
                continue;
            }
            let s = err_r[i] / total;
            for (v, e) in mass[i * m..(i + 1) * m].iter_mut().zip(&err_c) {
                *v += s * e;
            }
        }
    }
}
