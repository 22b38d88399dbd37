//! Invariants of meshes, factorizations and cube exchanges.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reluflow::factorize::{barycenter_error, polar_factorize, volume_ledger};
use reluflow::incompressible::{
    permutation_to_adjacent_transpositions, CubeGrid, Permutation, SwapPlan,
};
use reluflow::linalg::dist;
use reluflow::mesh::{interpolate_fn, kuhn_triangulate, RectDomain};
use reluflow::schedule::SegmentSource;

/// A smooth orientation-preserving perturbation of the identity on the unit square.
fn wobble(c: [f64; 4]) -> impl Fn(&[f64]) -> Vec<f64> {
    move |x: &[f64]| {
        vec![
            x[0] + c[0] * (x[1] * 3.0 + c[2]).sin(),
            x[1] + c[1] * (x[0] * 2.0 + c[3]).cos(),
        ]
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simplices_partition_the_box(lo in prop::collection::vec(-2.0..0.0f64, 2..=3), ext in prop::collection::vec(0.5..2.0f64, 3), h in 0.2..0.6f64) {
        let d = lo.len();
        let hi: Vec<f64> = lo.iter().zip(&ext).map(|(l, e)| l + e).collect();
        let dom = RectDomain::new(lo, hi).unwrap();
        let tri = kuhn_triangulate(&dom, h).unwrap();
        prop_assert!((tri.total_volume() - dom.volume()).abs() <= 1e-10);
        prop_assert_eq!(tri.len() % if d == 2 { 2 } else { 6 }, 0);
    }

    #[test]
    fn interpolants_are_continuous(c0 in -0.05..0.05f64, c1 in -0.05..0.05f64, c2 in 0.0..6.0f64, c3 in 0.0..6.0f64) {
        let tri = kuhn_triangulate(&RectDomain::unit(2), 0.125).unwrap();
        let map = interpolate_fn(&wobble([c0, c1, c2, c3]), &tri).unwrap();
        prop_assert!(map.max_vertex_mismatch() <= 1e-9);
    }

    #[test]
    fn factorization_invariants(c0 in -0.05..0.05f64, c1 in -0.05..0.05f64, c2 in 0.0..6.0f64, c3 in 0.0..6.0f64) {
        let tri = kuhn_triangulate(&RectDomain::unit(2), 0.125).unwrap();
        let map = interpolate_fn(&wobble([c0, c1, c2, c3]), &tri).unwrap();
        let f = polar_factorize(&map).unwrap();
        prop_assert!(f.m1.max_det_defect() <= 1e-10);
        prop_assert!(f.m2.max_det_defect() <= 1e-10);
        let (tower, image) = volume_ledger(&map, &f);
        prop_assert!((tower - image).abs() <= 1e-9);
        prop_assert!(barycenter_error(&map, &f) <= 1e-8);
    }

    #[test]
    fn transpositions_compose_to_the_permutation(d in 2usize..=3, side in 2usize..=5, seed in 0u64..1000) {
        let n_side = if d == 3 { side.min(4) } else { side };
        let grid = CubeGrid::new(vec![0.0; d], vec![n_side; d], 1.0, 0.1).unwrap();
        let mut map: Vec<usize> = (0..grid.len()).collect();
        map.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let sigma = Permutation::new(map).unwrap();
        let swaps = permutation_to_adjacent_transpositions(&sigma, &grid);
        prop_assert!(swaps.iter().all(|(i, j)| grid.adjacent_axis(*i, *j).is_some()));
        prop_assert_eq!(Permutation::from_swaps(grid.len(), &swaps), sigma);
    }

    #[test]
    fn swap_segments_are_divergence_free(seed in 0u64..1000) {
        let grid = CubeGrid::new(vec![0.0, 0.0, 0.0], vec![3, 3, 2], 0.5, 0.05).unwrap();
        let mut map: Vec<usize> = (0..grid.len()).collect();
        map.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let sigma = Permutation::new(map).unwrap();
        let plan = SwapPlan::new(grid.clone(), permutation_to_adjacent_transpositions(&sigma, &grid)).unwrap();
        let mut worst = 0.0f64;
        plan.visit(false, &mut |s| {
            let aw: f64 = s.a.iter().zip(s.w).map(|(a, w)| a * w).sum();
            worst = worst.max(aw.abs());
        });
        prop_assert_eq!(worst, 0.0);
        let pts: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.center(i)).collect();
        let moved = plan.flow_points(&pts, false, 1e-12);
        for (i, y) in moved.iter().enumerate() {
            prop_assert!(dist(y, &grid.center(sigma.map[i])) <= 1e-9);
        }
    }
}

#[test]
fn interpolation_is_second_order() {
    let f = wobble([0.04, -0.03, 1.0, 2.0]);
    let probe: Vec<Vec<f64>> = (0..=200)
        .flat_map(|i| (0..=200).map(move |j| vec![i as f64 / 200.0, j as f64 / 200.0]))
        .collect();
    let errors: Vec<f64> = [4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|n| {
            let tri = kuhn_triangulate(&RectDomain::unit(2), 1.0 / n).unwrap();
            let map = interpolate_fn(&f, &tri).unwrap();
            probe
                .iter()
                .map(|x| dist(&map.eval(x).unwrap(), &f(x)))
                .fold(0.0, f64::max)
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "{errors:?}");
    }
}
