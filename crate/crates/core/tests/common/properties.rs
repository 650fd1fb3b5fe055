//! Module invariants as property checks, shared by the invariant suite and
//! the acceptance report.

use pmonge::cover::{CoverBall, ParameterCover, ParameterSpace};
use pmonge::kantorovich::{select_eta, solve_entropic, solve_exact, CostMatrix};
use pmonge::measure::{dkr_grid, tv_distance, w1_distance};
use pmonge::skorohod::QuantileSkorohodMap;
use pmonge::GridDensity;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub const CASES: u32 = 128;

/// Positive weights normalized to one.
fn masses(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

/// Weights with some exact zeros, normalized to one.
fn sparse_masses(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![3 => 0.01f64..1.0, 1 => Just(0.0)], len).prop_map(|mut w| {
        if w.iter().all(|v| *v == 0.0) {
            w[0] = 1.0;
        }
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn transport_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..9, 2usize..9)
        .prop_flat_map(|(n, m)| (masses(n..=n), masses(m..=m), prop::collection::vec(0.0f64..1.0, n * m)))
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

pub fn exact_plans_conserve_marginals(cases: u32) -> Result<(), String> {
    run(cases, transport_instance(), |(mu, nu, c)| {
        let cost = CostMatrix::new(mu.len(), nu.len(), c).unwrap();
        let res = solve_exact(&cost, &mu, &nu).unwrap();
        for (s, m) in res.plan.row_sums().iter().zip(&mu) {
            prop_assert!((s - m).abs() < 1e-12);
        }
        for (s, m) in res.plan.col_sums().iter().zip(&nu) {
            prop_assert!((s - m).abs() < 1e-12);
        }
        prop_assert!(res.plan.mass().iter().all(|v| *v >= 0.0));
        Ok(())
    })
}

pub fn exact_duals_certify_optimality(cases: u32) -> Result<(), String> {
    run(cases, transport_instance(), |(mu, nu, c)| {
        let cost = CostMatrix::new(mu.len(), nu.len(), c).unwrap();
        let res = solve_exact(&cost, &mu, &nu).unwrap();
        let (u, v) = res.dual.clone().expect("dual potentials");
        for i in 0..mu.len() {
            for j in 0..nu.len() {
                prop_assert!(u[i] + v[j] <= cost.get(i, j) + 1e-9);
                if res.plan.get(i, j) > 1e-12 {
                    prop_assert!((u[i] + v[j] - cost.get(i, j)).abs() < 1e-9);
                }
            }
        }
        let dual: f64 =
            u.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() + v.iter().zip(&nu).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!((dual - res.value).abs() < 1e-9);
        Ok(())
    })
}

pub fn entropic_plans_conserve_marginals(cases: u32) -> Result<(), String> {
    run(cases, transport_instance(), |(mu, nu, c)| {
        let cost = CostMatrix::new(mu.len(), nu.len(), c).unwrap();
        let eps_k = 0.05;
        let eta = select_eta(mu.len(), nu.len(), eps_k);
        let plan = solve_entropic(&cost, &mu, &nu, eta, 1e-3 * eps_k, 200_000).unwrap();
        let (er, ec) = plan.marginal_error();
        prop_assert!(er < 1e-12 && ec < 1e-12);
        let exact = solve_exact(&cost, &mu, &nu).unwrap().value;
        let value = plan.cost(&cost);
        prop_assert!(value >= exact - 1e-9);
        prop_assert!(value - exact <= eps_k);
        Ok(())
    })
}

pub fn cover_weights_partition_unity(cases: u32) -> Result<(), String> {
    let strategy = (2usize..40, 1usize..6, 0.05f64..1.0, prop::collection::vec(1e-4f64..1.0, 40), 0.0f64..1.0);
    run(cases, strategy, |(count, stride, extra, kappas, probe)| {
        let space = ParameterSpace::uniform(0.0, 1.0, count).unwrap();
        let h = space.spacing();
        let stride = stride.min(count - 1);
        let mut centers: Vec<usize> = (0..count).step_by(stride).collect();
        if *centers.last().unwrap() != count - 1 {
            centers.push(count - 1);
        }
        let balls: Vec<CoverBall> = centers
            .iter()
            .enumerate()
            .map(|(a, &c)| CoverBall {
                center: c,
                radius: stride as f64 * h * (1.0 + extra),
                kappa: kappas[a],
                y_region: (0.0, 1.0),
                x_region: (0.0, 1.0),
            })
            .collect();
        let cover = ParameterCover::from_balls(space, balls).unwrap();
        let k = ((probe * count as f64) as usize).min(count - 1);
        let t = cover.space().point(k).to_vec();
        let w = cover.weights(&t).unwrap();
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let delta = cover.delta(&t).unwrap();
        let kmax = kappas[..centers.len()].iter().copied().fold(0.0, f64::max);
        prop_assert!(delta > 0.0 && delta <= kmax + 1e-15);
        let alpha = cover.select_alpha(&t).unwrap();
        prop_assert!(w[alpha] > 0.0);
        Ok(())
    })
}

pub fn quantiles_monotone_and_inverse(cases: u32) -> Result<(), String> {
    run(cases, (masses(1..=40), prop::collection::vec(0.0f64..1.0, 2..30)), |(w, mut us)| {
        let m = GridDensity::new(w).unwrap();
        us.sort_by(f64::total_cmp);
        let qs: Vec<f64> = us.iter().map(|u| m.quantile(*u).unwrap()).collect();
        for pair in qs.windows(2) {
            prop_assert!(pair[0] <= pair[1]);
        }
        for (u, q) in us.iter().zip(&qs) {
            prop_assert!((m.cdf(*q).unwrap() - u).abs() < 1e-9);
        }
        Ok(())
    })
}

pub fn sparse_quantile_maps_monotone(cases: u32) -> Result<(), String> {
    run(cases, (sparse_masses(24), prop::collection::vec(0.0f64..1.0, 2..30)), |(w, mut us)| {
        let map = QuantileSkorohodMap::from_cell_masses(&w).unwrap();
        us.sort_by(f64::total_cmp);
        let ys: Vec<f64> = us.iter().map(|u| map.xi(*u).unwrap()).collect();
        for pair in ys.windows(2) {
            prop_assert!(pair[0] <= pair[1]);
        }
        // images land on charged cells (or the right edge of one)
        let n = w.len();
        for y in &ys {
            let cell = ((y * n as f64).floor() as usize).min(n - 1);
            let edge = cell > 0 && (y * n as f64).fract() == 0.0 && w[cell - 1] > 0.0;
            prop_assert!(w[cell] > 0.0 || edge);
        }
        Ok(())
    })
}

pub fn dkr_below_w1_tv_two(cases: u32) -> Result<(), String> {
    run(cases, (masses(1..=24), masses(1..=24)), |(a, b)| {
        let (m1, m2) = (GridDensity::new(a).unwrap(), GridDensity::new(b).unwrap());
        let d = dkr_grid(&m1, &m2).unwrap();
        let bound = w1_distance(&m1, &m2).min(tv_distance(&m1, &m2)).min(2.0);
        prop_assert!(d >= -1e-12);
        prop_assert!(d <= bound + 1e-9, "dkr {} above bound {}", d, bound);
        Ok(())
    })
}

/// `nu_n = (1 - 1/n) nu + rho / n` converges weakly to `nu`; the set of levels
/// where the quantile maps differ by more than `0.01` shrinks to a null set.
pub fn quantile_maps_converge_ae(cases: u32) -> Result<(), String> {
    run(cases, (sparse_masses(16), masses(16..=16)), |(w, r)| {
        let limit = QuantileSkorohodMap::from_cell_masses(&w).unwrap();
        let grid = 4000;
        let tau = 0.01;
        let mut fractions = Vec::new();
        for n in [10.0, 100.0, 1000.0, 10_000.0] {
            let mixed: Vec<f64> = w.iter().zip(&r).map(|(a, b)| (1.0 - 1.0 / n) * a + b / n).collect();
            let map = QuantileSkorohodMap::from_cell_masses(&mixed).unwrap();
            let bad = (0..grid)
                .filter(|q| {
                    let u = (*q as f64 + 0.5) / grid as f64;
                    (map.xi(u).unwrap() - limit.xi(u).unwrap()).abs() > tau
                })
                .count();
            fractions.push(bad as f64 / grid as f64);
        }
        prop_assert!(fractions[3] <= 0.005, "fractions {:?}", fractions);
        prop_assert!(fractions[3] <= fractions[0] + 1e-12);
        Ok(())
    })
}

pub type Check = fn(u32) -> Result<(), String>;

/// Every suite with its name.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("exact marginal conservation", exact_plans_conserve_marginals),
        ("exact dual certificates", exact_duals_certify_optimality),
        ("entropic marginal conservation", entropic_plans_conserve_marginals),
        ("partition of unity", cover_weights_partition_unity),
        ("quantile monotonicity", quantiles_monotone_and_inverse),
        ("sparse quantile monotonicity", sparse_quantile_maps_monotone),
        ("dkr <= min(w1, tv, 2)", dkr_below_w1_tv_two),
        ("quantile a.e. convergence", quantile_maps_converge_ae),
    ]
}
