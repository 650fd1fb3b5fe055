//! Hand-worked four-cell example.
//!
//! Source uniform on 4 cells, target masses (0.1, 0.2, 0.3, 0.4), monotone
//! plan, two map cells of width 0.5 in CDF coordinates. Worked by hand:
//! cell 0 carries plan rows 0-1, target masses (0.1, 0.2, 0.2, 0);
//! cell 1 carries rows 2-3, target masses (0, 0, 0.1, 0.4).

use pmonge::kantorovich::Plan;
use pmonge::monge::{Embedding, MapSlice};
use pmonge::GridDensity;

fn slice() -> MapSlice {
    let mu = GridDensity::uniform(4);
    let nu = GridDensity::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    #[rustfmt::skip]
    let mass = vec![
        0.10, 0.15, 0.00, 0.00,
        0.00, 0.05, 0.20, 0.00,
        0.00, 0.00, 0.10, 0.15,
        0.00, 0.00, 0.00, 0.25,
    ];
    let plan = Plan::new(mass, mu.weights().to_vec(), nu.weights().to_vec()).unwrap();
    MapSlice::from_plan(vec![0.0], mu, nu, plan, 0.5, Embedding::Cdf, (0.0, 1.0)).unwrap()
}

#[test]
fn cell_targets_match_hand_computation() {
    let s = slice();
    assert_eq!(s.cell_count(), 2);
    assert!((s.cell_mass(0) - 0.5).abs() < 1e-15);
    assert!((s.cell_mass(1) - 0.5).abs() < 1e-15);
    assert!(s.remainder().is_none());
}

#[test]
fn map_values_match_hand_computation() {
    let s = slice();
    let cases = [(0.05, 0.125), (0.3, 0.5), (0.45, 0.6875), (0.6, 0.75), (0.8, 0.875), (0.95, 0.96875)];
    for (x, y) in cases {
        let got = s.evaluate(x).unwrap();
        assert!((got - y).abs() < 1e-12, "T({x}) = {got}, expected {y}");
    }
}

#[test]
fn image_law_is_the_target() {
    let s = slice();
    let image = s.pushforward(4, 64).unwrap();
    // each sample carries mass 0.25 / 64
    for (a, b) in image.weights().iter().zip(s.target().weights()) {
        assert!((a - b).abs() <= 0.25 / 64.0 + 1e-12);
    }
}
