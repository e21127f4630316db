use noisereg::cli_io::parse_config_with;
use noisereg::heat_kernel::Kernel;
use noisereg::moduli::{dini_integral, Modulus};
use noisereg::rng::brownian_increments;
use noisereg::transport::solve_transport;
use noisereg::{
    DriftKind, DriftSpec, FlowConfig, GridFunction, InitialDatum, ItoTanakaMap, SpaceGrid, TimeGrid, TransportMethod,
};
use proptest::prelude::*;

fn small_flow(seed: u64) -> FlowConfig {
    FlowConfig {
        start: 0.0,
        end: 0.5,
        dt: 1.0 / 16.0,
        paths: 3,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_is_positive_and_even(t in 1e-3f64..10.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let k = Kernel::new(2);
        let a = k.eval(t, &[x, y]).unwrap();
        prop_assert!(a > 0.0 || (x * x + y * y) / t > 1400.0);
        prop_assert_eq!(a, k.eval(t, &[-x, -y]).unwrap());
    }

    #[test]
    fn dini_integral_is_additive_and_monotone(
        theta in 0.1f64..0.9,
        alpha in -2.0f64..2.0,
        a in 1e-6f64..1e-3,
        mid in 1e-3f64..0.1,
        b in 0.1f64..0.5,
    ) {
        let m = Modulus::power_log(1.0, theta, alpha, 0.5).unwrap();
        let whole = dini_integral(&m, a, b).unwrap();
        let left = dini_integral(&m, a, mid).unwrap();
        let right = dini_integral(&m, mid, b).unwrap();
        prop_assert!(left > 0.0 && right > 0.0);
        prop_assert!(((left + right) - whole).abs() <= 1e-8 * whole.max(1.0));
    }

    #[test]
    fn increments_are_a_deterministic_prefix(seed in any::<u64>(), path in 0u64..1000, steps in 1usize..64) {
        let short = brownian_increments(seed, path, steps, 2, 0.01);
        let long = brownian_increments(seed, path, steps + 7, 2, 0.01);
        prop_assert_eq!(&short[..], &long[..short.len()]);
        prop_assert_ne!(short, brownian_increments(seed, path + 1, steps, 2, 0.01));
    }

    #[test]
    fn transport_keeps_range_and_constants(seed in any::<u64>(), amp in 0.1f64..2.0, characteristics in any::<bool>()) {
        let grid = SpaceGrid::new(1, 33, 4.0, false).unwrap();
        let b = DriftSpec::new(DriftKind::Tanh { amp }, 1).unwrap();
        let method = if characteristics { TransportMethod::Characteristics } else { TransportMethod::Composition };
        let u0 = InitialDatum::Front { width: 0.4 };
        let sol = solve_transport(&b, &u0, &grid, &small_flow(seed), method).unwrap();
        // u0 takes values in (-1, 1)
        prop_assert!(sol.u.iter().all(|&v| v.abs() < 1.0));

        let c = InitialDatum::Constant { value: amp };
        let sol = solve_transport(&b, &c, &grid, &small_flow(seed), method).unwrap();
        prop_assert!(sol.u.iter().all(|&v| (v - amp).abs() <= 1e-12));
    }

    #[test]
    fn gamma_round_trips_for_small_fields(eps in 0.0f64..0.3, y in -3.0f64..3.0, t in 0.0f64..1.0) {
        let space = SpaceGrid::new(1, 129, 4.0, false).unwrap();
        let time = TimeGrid::with_step(0.0, 1.0, 0.125).unwrap();
        let u = GridFunction::from_fn(space, time, 1, |s, x, out| out[0] = eps * (1.0 - s) * x[0].sin());
        let map = ItoTanakaMap::from_field(u, 1.0);
        prop_assert!(map.grad_bound);
        let x = map.gamma_inverse(t, &[y]).unwrap();
        prop_assert!((map.gamma(t, &x).unwrap()[0] - y).abs() <= 1e-10);
    }

    #[test]
    fn config_hash_ignores_output_dir(seed in 0u64..i64::MAX as u64, paths in 1usize..10_000, dir in "[a-z]{1,12}") {
        let sets = vec![format!("seed={seed}"), format!("mc.paths={paths}")];
        let a = parse_config_with("", Some("flow-sim".parse().unwrap()), &sets).unwrap();
        let mut with_dir = sets.clone();
        with_dir.push(format!("output_dir=\"{dir}\""));
        let b = parse_config_with("", Some("flow-sim".parse().unwrap()), &with_dir).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
        let mut other = sets.clone();
        other.push(format!("seed={}", seed.wrapping_add(1)));
        let c = parse_config_with("", Some("flow-sim".parse().unwrap()), &other).unwrap();
        prop_assert_ne!(a.hash(), c.hash());
    }
}
