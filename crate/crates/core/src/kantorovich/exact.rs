//! Exact discrete transport by the transportation simplex.
//!
//! The basis is a spanning tree on the `n + m` row and column nodes. Supplies
//! are perturbed by an infinitesimal `d` (each row gets `+d`, the last column
//! `+n d`), which makes every basic solution nondegenerate, so no pivot rule
//! can cycle. Flows carry the `d` coefficient explicitly and are compared
//! lexicographically; the final flows are recomputed from the optimal tree
//! with the unperturbed marginals.

use crate::error::{Error, Result};

use super::plan::{CostMatrix, Plan};

/// Tolerance on `sum(mu) - sum(nu)`.
pub const BALANCE_TOL: f64 = 1e-10;

/// Entering-arc selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PivotRule {
    /// Most negative reduced cost within cyclic blocks of about `sqrt(nm)` arcs.
    #[default]
    Block,
    /// First arc in row-major order with negative reduced cost.
    Bland,
}

/// Optimal plan with its value and dual potentials.
#[derive(Clone, Debug)]
pub struct KantorovichResult {
    pub plan: Plan,
    pub value: f64,
    /// Row potentials `u` and column potentials `v` with `u_i + v_j <= c_ij`.
    pub dual: Option<(Vec<f64>, Vec<f64>)>,
    pub pivots: usize,
}

/// Flow value plus a multiple of the perturbation.
#[derive(Clone, Copy, Debug)]
struct Lex {
    v: f64,
    d: f64,
}

impl Lex {
    fn less(self, o: Lex, tol: f64) -> bool {
        if (self.v - o.v).abs() > tol {
            self.v < o.v
        } else {
            self.d < o.d
        }
    }

    fn sub(self, o: Lex) -> Lex {
        Lex { v: self.v - o.v, d: self.d - o.d }
    }

    fn add(self, o: Lex) -> Lex {
        Lex { v: self.v + o.v, d: self.d + o.d }
    }
}

struct Tree {
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
}

/// Solves `min <c, P>` over couplings of `mu` and `nu`.
pub fn solve_exact(cost: &CostMatrix, mu: &[f64], nu: &[f64]) -> Result<KantorovichResult> {
    solve_exact_with(cost, mu, nu, PivotRule::Block)
}

pub fn solve_exact_with(cost: &CostMatrix, mu: &[f64], nu: &[f64], rule: PivotRule) -> Result<KantorovichResult> {
    let (n, m) = (mu.len(), nu.len());
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::Shape(format!("{}x{} costs for {n}x{m} marginals", cost.rows(), cost.cols())));
    }
    for v in mu.iter().chain(nu) {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::InvalidMeasure(format!("marginal entry {v}")));
        }
    }
    let (sa, sb): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (sa - sb).abs() > BALANCE_TOL {
        return Err(Error::Imbalance(sa, sb));
    }
    let tol = 1e-13 * sa.max(1.0);
    let cmax = cost.max().max(cost.min().abs());
    let rc_tol = 1e-12 * (1.0 + cmax);

    let mut basis = northwest_corner(mu, nu, tol);
    let max_pivots = 50 * n * m + 1000;
    let block = ((n * m) as f64).sqrt().ceil().max(64.0) as usize;
    let mut cursor = 0usize;
    let mut pivots = 0usize;
    let tree = loop {
        let tree = build_tree(n, m, &basis, cost);
        let entering = match rule {
            PivotRule::Block => price_block(cost, &tree.pot, n, m, block, &mut cursor, rc_tol),
            PivotRule::Bland => price_bland(cost, &tree.pot, n, m, rc_tol),
        };
        let Some((ei, ej)) = entering else { break tree };
        if pivots >= max_pivots {
            return Err(Error::CycleGuard(max_pivots));
        }
        pivots += 1;
        pivot(&mut basis, &tree, n, ei, ej, tol);
    };

    let mass = tree_flows(n, m, &basis, mu, nu);
    let value = mass.iter().zip(cost.data()).map(|(p, c)| p * c).sum();
    let u = tree.pot[..n].to_vec();
    let v = tree.pot[n..].to_vec();
    let plan = Plan::unchecked(mass, mu.to_vec(), nu.to_vec())?;
    Ok(KantorovichResult { plan, value, dual: Some((u, v)), pivots })
}

fn northwest_corner(mu: &[f64], nu: &[f64], tol: f64) -> Vec<(usize, usize, Lex)> {
    let (n, m) = (mu.len(), nu.len());
    let demand = |j: usize| Lex { v: nu[j], d: if j + 1 == m { n as f64 } else { 0.0 } };
    let mut basis = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    let mut r = Lex { v: mu[0], d: 1.0 };
    let mut c = demand(0);
    loop {
        if i + 1 == n && j + 1 == m {
            basis.push((i, j, r));
            break;
        }
        if r.less(c, tol) {
            basis.push((i, j, r));
            c = c.sub(r);
            i += 1;
            r = Lex { v: mu[i], d: 1.0 };
        } else {
            basis.push((i, j, c));
            r = r.sub(c);
            j += 1;
            c = demand(j);
        }
    }
    basis
}

fn build_tree(n: usize, m: usize, basis: &[(usize, usize, Lex)], cost: &CostMatrix) -> Tree {
    let nodes = n + m;
    let mut deg = vec![0usize; nodes + 1];
    for &(i, j, _) in basis {
        deg[i + 1] += 1;
        deg[n + j + 1] += 1;
    }
    for k in 0..nodes {
        deg[k + 1] += deg[k];
    }
    let mut fill = deg.clone();
    let mut adj = vec![(0usize, 0usize); 2 * basis.len()];
    for (a, &(i, j, _)) in basis.iter().enumerate() {
        adj[fill[i]] = (n + j, a);
        fill[i] += 1;
        adj[fill[n + j]] = (i, a);
        fill[n + j] += 1;
    }
    let mut parent = vec![usize::MAX; nodes];
    let mut parent_arc = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut pot = vec![0.0; nodes];
    let mut seen = vec![false; nodes];
    let mut queue = Vec::with_capacity(nodes);
    queue.push(0);
    seen[0] = true;
    let mut head = 0;
    while head < queue.len() {
        let u = queue[head];
        head += 1;
        for &(w, a) in &adj[deg[u]..deg[u + 1]] {
            if seen[w] {
                continue;
            }
            seen[w] = true;
            parent[w] = u;
            parent_arc[w] = a;
            depth[w] = depth[u] + 1;
            let (i, j, _) = basis[a];
            pot[w] = cost.get(i, j) - pot[u];
            queue.push(w);
        }
    }
    Tree { parent, parent_arc, depth, pot }
}

fn price_block(
    cost: &CostMatrix,
    pot: &[f64],
    n: usize,
    m: usize,
    block: usize,
    cursor: &mut usize,
    tol: f64,
) -> Option<(usize, usize)> {
    let total = n * m;
    let mut scanned = 0;
    while scanned < total {
        let len = block.min(total - scanned);
        let mut best = -tol;
        let mut arg = None;
        for s in 0..len {
            let k = (*cursor + s) % total;
            let (i, j) = (k / m, k % m);
            let r = cost.get(i, j) - pot[i] - pot[n + j];
            if r < best {
                best = r;
                arg = Some((i, j));
            }
        }
        *cursor = (*cursor + len) % total;
        scanned += len;
        if arg.is_some() {
            return arg;
        }
    }
    None
}

fn price_bland(cost: &CostMatrix, pot: &[f64], n: usize, m: usize, tol: f64) -> Option<(usize, usize)> {
    (0..n * m).map(|k| (k / m, k % m)).find(|&(i, j)| cost.get(i, j) - pot[i] - pot[n + j] < -tol)
}

fn pivot(basis: &mut [(usize, usize, Lex)], tree: &Tree, n: usize, ei: usize, ej: usize, tol: f64) {
    // path from column node ej up and row node ei up to their common ancestor
    let (mut a, mut b) = (n + ej, ei);
    let mut from_col = Vec::new();
    let mut from_row = Vec::new();
    while tree.depth[a] > tree.depth[b] {
        from_col.push(tree.parent_arc[a]);
        a = tree.parent[a];
    }
    while tree.depth[b] > tree.depth[a] {
        from_row.push(tree.parent_arc[b]);
        b = tree.parent[b];
    }
    while a != b {
        from_col.push(tree.parent_arc[a]);
        a = tree.parent[a];
        from_row.push(tree.parent_arc[b]);
        b = tree.parent[b];
    }
    from_row.reverse();
    let path: Vec<usize> = from_col.into_iter().chain(from_row).collect();
    // signs alternate -, +, -, ... along the path from the entering column
    let mut leave = path[0];
    for &arc in path.iter().step_by(2).skip(1) {
        if basis[arc].2.less(basis[leave].2, tol) {
            leave = arc;
        }
    }
    let theta = basis[leave].2;
    for (k, &arc) in path.iter().enumerate() {
        let f = basis[arc].2;
        basis[arc].2 = if k % 2 == 0 { f.sub(theta) } else { f.add(theta) };
    }
    basis[leave] = (ei, ej, theta);
}

/// Flows of the spanning-tree basis for the unperturbed marginals, by leaf elimination.
fn tree_flows(n: usize, m: usize, basis: &[(usize, usize, Lex)], mu: &[f64], nu: &[f64]) -> Vec<f64> {
    let nodes = n + m;
    let mut rest: Vec<f64> = mu.iter().chain(nu).copied().collect();
    let mut deg = vec![0usize; nodes];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (a, &(i, j, _)) in basis.iter().enumerate() {
        deg[i] += 1;
        deg[n + j] += 1;
        incident[i].push(a);
        incident[n + j].push(a);
    }
    let mut used = vec![false; basis.len()];
    let mut mass = vec![0.0; n * m];
    let mut leaves: Vec<usize> = (0..nodes).filter(|&u| deg[u] == 1).collect();
    while let Some(u) = leaves.pop() {
        if deg[u] != 1 {
            continue;
        }
        let Some(&a) = incident[u].iter().find(|&&a| !used[a]) else { continue };
        used[a] = true;
        let (i, j, _) = basis[a];
        let other = if u == i { n + j } else { i };
        let f = rest[u];
        mass[i * m + j] = f.max(0.0);
        rest[other] -= f;
        rest[u] = 0.0;
        deg[u] = 0;
        deg[other] -= 1;
        if deg[other] == 1 {
            leaves.push(other);
        }
    }
    mass
}
