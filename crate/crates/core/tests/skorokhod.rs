mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stefan_core::montecarlo::unit_open_closed;
use stefan_core::skorokhod::{bridge_refined_regulator, reflect, regulator, DiscretePath};
use stefan_core::TimeGrid;

fn path(values: &[f64]) -> DiscretePath {
    DiscretePath::new(TimeGrid::new(1.0, values.len() - 1).unwrap(), values.to_vec())
}

#[test]
fn worked_examples_hold_bitwise() {
    assert_eq!(regulator(&path(&[0.0, 1.0, 2.0, 3.0])).values, [0.0; 4]);
    assert_eq!(
        regulator(&path(&[1.0, 0.5, 0.0, -0.5, -1.0])).values,
        [0.0, 0.0, 0.0, 0.5, 1.0]
    );
    assert_eq!(regulator(&path(&[1.0, -1.0, 0.0, -2.0])).values, [0.0, 1.0, 1.0, 2.0]);
    assert_eq!(reflect(&path(&[1.0, -1.0, 0.0, -2.0])).reflected.values, [1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn comparison_holds_on_ten_thousand_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..64);
        let low: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let high: Vec<f64> = low.iter().map(|y| y + rng.random_range(0.0..1.0)).collect();
        let (lh, ll) = (regulator(&path(&high)), regulator(&path(&low)));
        violations += lh.values.iter().zip(&ll.values).filter(|(a, b)| a > b).count();
    }
    assert_eq!(violations, 0);
}

/// `E[max(0, -min_{s<=1}(1 + B_s))]` on a coarse grid: the bridge-refined
/// regulator is exact in law at the grid times, the plain one is biased low.
#[test]
fn bridge_refinement_removes_the_grid_bias() {
    let n_paths = 1_000_000;
    let steps = 64;
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let sqrt_dt = grid.dt().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut sum, mut sum_sq, mut plain_sum) = (0.0, 0.0, 0.0);
    let mut y = vec![0.0; steps + 1];
    let mut w = vec![0.0; steps];
    for _ in 0..n_paths {
        y[0] = 1.0;
        for k in 0..steps {
            let z: f64 = rng.sample(StandardNormal);
            y[k + 1] = y[k] + sqrt_dt * z;
            w[k] = unit_open_closed(&mut rng);
        }
        let p = DiscretePath::new(grid, y.clone());
        let l = *bridge_refined_regulator(&p, &w).values.last().unwrap();
        sum += l;
        sum_sq += l * l;
        plain_sum += regulator(&p).values.last().unwrap();
    }
    let n = n_paths as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
    let exact = common::frozen::MEAN_REGULATOR_FROM_ONE_T1;
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (se {se})");
    assert!(plain_sum / n < exact - 10.0 * se);
}
