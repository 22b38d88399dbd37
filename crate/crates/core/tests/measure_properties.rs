//! Invariants of sampled mixtures, triangular transport and density metrics.

use proptest::prelude::*;

use reluflow::gadgets::{dilation_1d, shear_translation};
use reluflow::kr::{kr_map, GridDensity};
use reluflow::linalg::{dist, norm};
use reluflow::maurey::{
    ball_grid, builtin_mixture, cost, sample_schedule, BarronAtom, Reference, TimeMixture,
};
use reluflow::metrics::{pushforward_density, tv_distance, Transport};
use reluflow::schedule::{flow_schedule, flow_segment, invert_schedule, FlowState, Neuron};

fn density(c: [f64; 3]) -> GridDensity {
    GridDensity::from_fn(&[65, 65], |x| {
        1.0 + c[0] * x[0] + c[1] * x[1] * x[1] + c[2] * (3.0 * x[0] * x[1]).sin()
    })
    .unwrap()
}

fn coeffs() -> impl Strategy<Value = [f64; 3]> {
    (0.0..1.0f64, 0.0..1.0f64, -0.5..0.5f64).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn divergence_is_constant_along_a_segment(seed in 0u64..500, k in 0usize..32, x0 in -0.7..0.7f64, x1 in -0.7..0.7f64) {
        let m = builtin_mixture();
        let run = sample_schedule(&m, 32, seed).unwrap();
        let seg = run.schedule.segment(k).to_segment();
        let n = &seg.neuron;
        let x = vec![x0, x1];
        let div0 = n.divergence(&x);
        for i in 1..=10 {
            let y = flow_segment(&FlowState::new(x.clone()), n, seg.duration * i as f64 / 11.0).unwrap();
            prop_assert_eq!(n.divergence(&y.x), div0);
        }
        let end = flow_segment(&FlowState::new(x), n, seg.duration).unwrap();
        prop_assert!((end.logdet - div0 * seg.duration).abs() <= 1e-15);
    }

    #[test]
    fn scaled_weights_match_rates(seed in 0u64..500, n in 1usize..100) {
        let m = builtin_mixture();
        let run = sample_schedule(&m, n, seed).unwrap();
        prop_assert_eq!(run.schedule.len(), n);
        for k in 0..n {
            let seg = run.schedule.segment(k);
            prop_assert_eq!(seg.duration, 1.0 / n as f64);
            let expect = n as f64 * run.rates[k] / cost(&run.neurons[k], m.radius);
            for (wk, w) in seg.w.iter().zip(&run.neurons[k].w) {
                prop_assert_eq!(*wk, expect * w);
            }
        }
    }

    #[test]
    fn small_mixtures_stay_in_the_ball(seed in 0u64..500, scale in 0.1..1.0f64) {
        // Rescale so that the total rate is at most `scale` <= 1.
        let mut m = builtin_mixture();
        let total = m.rate_integral(0.0, 1.0);
        for atom in m.cells.iter_mut().flatten() {
            atom.mass *= scale / total;
        }
        let r = m.radius - 1.0 - m.rate_integral(0.0, 1.0);
        let pts = ball_grid(2, 9, r);
        let reference = Reference::new(&m, &pts, 1e-3);
        let run = sample_schedule(&m, 64, seed).unwrap();
        prop_assert_eq!(reference.errors(&run, m.radius).ball_violations, 0);
    }

    #[test]
    fn kr_is_triangular_and_monotone(c0 in coeffs(), c1 in coeffs(), x0 in 0.05..0.95f64, x1 in 0.05..0.95f64, x1b in 0.05..0.95f64) {
        let m = kr_map(&density(c0), &density(c1)).unwrap();
        let y = m.eval(&[x0, x1]);
        prop_assert_eq!(m.eval(&[x0, x1b])[0], y[0]);
        let step = 1e-3;
        prop_assert!(m.eval(&[x0 + step, x1])[0] > y[0]);
        prop_assert!(m.eval(&[x0, x1 + step])[1] > y[1]);
    }

    #[test]
    fn kr_inverse_composes_to_identity(c0 in coeffs(), c1 in coeffs(), x0 in 0.0..1.0f64, x1 in 0.0..1.0f64) {
        let (r0, r1) = (density(c0), density(c1));
        let fwd = kr_map(&r0, &r1).unwrap();
        let back = kr_map(&r1, &r0).unwrap();
        let x = [x0, x1];
        prop_assert!(dist(&back.eval(&fwd.eval(&x)), &x) <= 1e-4);
    }

    #[test]
    fn tv_is_a_metric(a in coeffs(), b in coeffs(), c in coeffs()) {
        let (p, q, r) = (density(a), density(b), density(c));
        let pq = tv_distance(&p, &q).unwrap();
        prop_assert_eq!(pq, tv_distance(&q, &p).unwrap());
        prop_assert!(pq <= tv_distance(&p, &r).unwrap() + tv_distance(&r, &q).unwrap() + 1e-12);
        prop_assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(pq == 0.0, p.values == q.values);
    }

    #[test]
    fn pushforward_conserves_mass(w in -1.0..1.0f64, b in -0.5..0.0f64, t in 0.1..1.0f64) {
        // The threshold stays left of the support, so the flow is affine there.
        let s = dilation_1d(w, b, 1, t).unwrap();
        let rho = GridDensity::from_fn(&[4097], |x| (std::f64::consts::PI * x[0]).sin().powi(2)).unwrap();
        let hi = (1.0 - b) * (w * t).exp() + b;
        let grid = GridDensity::from_fn_on(vec![-0.5], vec![hi + 0.5], &[20001], |_| 0.0).unwrap();
        let p = pushforward_density(&Transport::Flow(&s), &rho, &grid).unwrap();
        prop_assert!((p.integral() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn measure_preserving_pushforward_is_composition(tau in -0.2..0.2f64) {
        let s = shear_translation(0, 1, 1, -0.4, 0.2, tau, 2).unwrap();
        let rho = density([0.5, 0.5, 0.2]);
        let grid = GridDensity::from_fn_on(vec![0.0, 0.0], vec![1.0, 1.0], &[33, 33], |_| 0.0).unwrap();
        let p = pushforward_density(&Transport::Flow(&s), &rho, &grid).unwrap();
        for i in 0..grid.len() {
            let z = grid.node(i);
            let back = flow_schedule(&z, &invert_schedule(&s)).unwrap();
            prop_assert!((p.values[i] - rho.eval(&back.x)).abs() <= 1e-12);
        }
    }
}

#[test]
fn kr_pushforward_improves_with_refinement() {
    let target = |x: &[f64]| (1.0 + x[0]) * (1.0 + 2.0 * x[1] * x[1]);
    let exact = GridDensity::from_fn(&[257, 257], target).unwrap();
    let mut tvs = Vec::new();
    for n in [5usize, 9, 17] {
        let coarse = GridDensity::from_fn(&[n, n], target).unwrap();
        let m = kr_map(&GridDensity::uniform(2, n), &coarse).unwrap();
        let inv = |y: &[f64]| m.inverse(y);
        let fwd = |x: &[f64]| m.eval(x);
        let map = Transport::Map {
            forward: &fwd,
            inverse: &inv,
        };
        let grid =
            GridDensity::from_fn_on(vec![0.0, 0.0], vec![1.0, 1.0], &[257, 257], |_| 0.0).unwrap();
        let p = pushforward_density(&map, &GridDensity::uniform(2, 257), &grid).unwrap();
        tvs.push(tv_distance(&p, &exact).unwrap());
    }
    assert!(tvs.windows(2).all(|w| w[1] < w[0]), "{tvs:?}");
}

#[test]
fn zero_mass_atoms_do_not_count() {
    let atom = |mass| BarronAtom {
        neuron: Neuron::new(vec![1.0, 0.0], vec![0.0, 1.0], 0.5).unwrap(),
        mass,
    };
    let m = TimeMixture::new(
        2,
        vec![0.0, 0.5, 1.0],
        vec![vec![atom(0.0)], vec![atom(1.0)]],
        2.0,
    )
    .unwrap();
    let run = sample_schedule(&m, 4, 0).unwrap();
    assert!(run.schedule.segment(0).w.iter().all(|w| *w == 0.0));
    assert!(norm(run.schedule.segment(3).w) > 0.0);
}
