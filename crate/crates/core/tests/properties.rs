use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inventropy::cocycle::{alpha, det_cocycle};
use inventropy::flow::{bowen_distance, integrate_from, FlowOptions};
use inventropy::shadowing::{close_on_core, product_metric, random_chain, shadow, SeqWindow};
use inventropy::system::{BoxSet, ControlSignal, SystemSpec};
use inventropy::volume::bowen_ball_volume;

fn duffing() -> SystemSpec {
    SystemSpec::from_strings(2, &[&["x2", "x1 - x1^3 - 0.3*x2"], &["0", "1"]], &[-0.5], &[0.5]).unwrap()
}

fn random_control(rng: &mut ChaCha8Rng, spec: &SystemSpec, steps: usize) -> ControlSignal {
    let b = spec.control_box();
    let values = (0..steps)
        .map(|_| b.lo().iter().zip(b.hi()).map(|(l, h)| rng.random_range(*l..=*h)).collect())
        .collect();
    ControlSignal::finite(0.1, values, b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn alpha_is_subadditive_and_log_det_additive(seed in any::<u64>(), kt in 1usize..15, ks in 1usize..15) {
        let spec = duffing();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_control(&mut rng, &spec, 31);
        let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let (t, s) = (kt as f64 * 0.1, ks as f64 * 0.1);
        let f = FlowOptions::default();
        let xt = integrate_from(&spec, 0.0, &x, &u, t, false, &f).unwrap().final_state().as_slice().to_vec();
        let ut = u.shift(t);
        let a = |u: &ControlSignal, x: &[f64], t: f64| alpha(&spec, u, x, t, &f).unwrap().final_value();
        prop_assert!(a(&u, &x, t + s) <= a(&u, &x, t) + a(&ut, &xt, s) + 1e-9);
        let d = |u: &ControlSignal, x: &[f64], t: f64| det_cocycle(&spec, u, x, t, None, &f).unwrap().final_value();
        prop_assert!((d(&u, &x, t + s) - d(&u, &x, t) - d(&ut, &xt, s)).abs() < 1e-9);
    }

    #[test]
    fn bowen_distance_is_a_symmetric_metric(seed in any::<u64>()) {
        let spec = duffing();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_control(&mut rng, &spec, 21);
        let p: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let f = FlowOptions::default();
        let d = |a: &[f64], b: &[f64]| bowen_distance(&spec, &u, a, b, 2.0, &f).unwrap();
        prop_assert_eq!(d(&p[0], &p[1]), d(&p[1], &p[0]));
        prop_assert!(d(&p[0], &p[2]) <= d(&p[0], &p[1]) + d(&p[1], &p[2]) + 1e-12);
        prop_assert_eq!(d(&p[0], &p[0]), 0.0);
    }

    #[test]
    fn shadows_respect_the_bound(seed in any::<u64>(), exp in 2i32..7, radius in 4usize..40, period in 0usize..9) {
        let delta = 10f64.powi(-exp);
        let bx = BoxSet::symmetric(3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let period = (period > 0).then_some(period);
        let chain = random_chain(&mut rng, &bx, radius, 2 * radius + 5, delta, period).unwrap();
        let sh = shadow(&chain).unwrap();
        prop_assert!(sh.max_deviation <= delta.sqrt() + 1.0 / (radius as f64 + 1.0));
        if let Some(p) = period {
            prop_assert_eq!(sh.value(0), sh.value(p as i64));
        }
    }

    #[test]
    fn metric_threshold_matches_coordinatewise_closeness(seed in any::<u64>(), eps in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = SeqWindow::from_fn(12, |_| vec![rng.random_range(-1.0..1.0)]).unwrap();
        let eta = SeqWindow::from_fn(12, |i| vec![xi.get(i)[0] + rng.random_range(-1.5..1.5) * eps / (1 + i.abs()) as f64]).unwrap();
        prop_assert_eq!(product_metric(&xi, &eta).unwrap().value <= eps, close_on_core(&xi, &eta, eps));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn volume_estimates_are_seeded_and_shrink(seed in any::<u64>()) {
        let spec = SystemSpec::from_strings(2, &[&["0.8*x1 + 0.3*x2", "-0.4*x2"], &["1", "0"]], &[-1.0], &[1.0]).unwrap();
        let u = ControlSignal::constant(vec![0.0], 0.1, spec.control_box()).unwrap();
        let f = FlowOptions::default();
        let v1 = bowen_ball_volume(&spec, &u, &[0.0, 0.0], 0.1, 1.0, 3000, seed, &f).unwrap();
        let v1b = bowen_ball_volume(&spec, &u, &[0.0, 0.0], 0.1, 1.0, 3000, seed, &f).unwrap();
        prop_assert_eq!(v1.estimate.to_bits(), v1b.estimate.to_bits());
        let v2 = bowen_ball_volume(&spec, &u, &[0.0, 0.0], 0.1, 2.0, 3000, seed, &f).unwrap();
        prop_assert!(v2.estimate <= v1.estimate + 2.0 * (v1.stderr + v2.stderr));
    }
}
