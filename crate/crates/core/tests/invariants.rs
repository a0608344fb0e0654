use lagflow::brownian::BrownianDriver;
use lagflow::coefficients::CoefficientSet;
use lagflow::entropy::ConvexH;
use lagflow::estimators;
use lagflow::field::FieldExpr;
use lagflow::flow::FlowChart;
use lagflow::geometry::{BoundingBox, RegularGrid};
use lagflow::oracle::{self, GridField, Scheme};
use lagflow::sde::{self, TimeGrid};
use proptest::prelude::*;

fn grid_1d(lo: f64, hi: f64, h: f64) -> RegularGrid {
    RegularGrid::with_spacing(&BoundingBox::cube(1, lo, hi).unwrap(), h).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn explicit_oracle_keeps_mass_and_sign(amp in 0.0..0.5f64, u in -0.4..0.4f64, nu in 0.1..0.3f64) {
        let sigma = format!("1 + {amp}*sin(x1)");
        let cs = CoefficientSet::assemble(&[vec![sigma.as_str()]], &[u.to_string().as_str()], "0", nu, 1).unwrap();
        let grid = grid_1d(-5.0, 5.0, 0.1);
        let dt = 0.5 * oracle::explicit_step_limit(&cs, &grid, 0.0).unwrap();
        let rho0 = GridField::sample(&grid, &FieldExpr::parse("exp(-2*x1^2)", 1).unwrap(), 0.0).unwrap();
        let horizon = 40.0 * dt;
        let rho = oracle::solve_forward_positive(&cs, &rho0, horizon, dt, Scheme::Explicit).unwrap();
        let end = rho.last();
        prop_assert!((end.integral() - rho0.integral()).abs() <= 1e-12 * rho0.integral());
        prop_assert!(end.min() >= 0.0);
    }

    #[test]
    fn paired_forward_and_adjoint_solves_keep_the_pairing(amp in 0.0..0.5f64, v in -0.5..0.5f64) {
        let sigma = format!("1 + {amp}*cos(x1)");
        let potential = format!("{v}*exp(-x1^2)");
        let cs = CoefficientSet::assemble(&[vec![sigma.as_str()]], &["0.2"], &potential, 0.1, 1).unwrap();
        let grid = grid_1d(-4.0, 4.0, 0.1);
        let sample = |src: &str| GridField::sample(&grid, &FieldExpr::parse(src, 1).unwrap(), 0.0).unwrap();
        let (t, dt) = (0.2, 0.01);
        let f = oracle::solve_forward(&cs, &sample("exp(-x1^2)"), t, dt, Scheme::CrankNicolson).unwrap();
        let phi = oracle::solve_adjoint(&cs, &sample("1 + 0.5*sin(x1)"), t, dt, Scheme::CrankNicolson).unwrap();
        let pairing = |k: usize| -> f64 {
            f.values(k).iter().zip(phi.values(k)).map(|(a, b)| a * b).sum()
        };
        let (first, last) = (pairing(0), pairing(f.len() - 1));
        prop_assert!((first - last).abs() <= 1e-8 * first.abs(), "{first} vs {last}");
    }

    #[test]
    fn charts_invert_their_own_images(seed in any::<u64>(), amp in 0.0..0.5f64) {
        let s11 = format!("1 + {amp}*sin(x2)");
        let cs = CoefficientSet::assemble(
            &[vec![s11.as_str(), "0"], vec!["0", "1"]],
            &["-0.5*x2", "0.5*x1"],
            "0",
            0.05,
            2,
        )
        .unwrap();
        let grid = RegularGrid::with_spacing(&BoundingBox::cube(2, -2.0, 2.0).unwrap(), 0.25).unwrap();
        let tg = TimeGrid::new(0.01, 0.5, &[0.5]).unwrap();
        let mut driver = BrownianDriver::new(seed, 0, tg.dt(), 2);
        let ens = sde::simulate_ensemble(&cs, &grid, &tg, &mut driver).unwrap();
        let chart = FlowChart::from_ensemble(&ens, 0).unwrap();
        prop_assert!(chart.round_trip_error(1).unwrap() < 1e-8);
    }

    #[test]
    fn jensen_holds_for_every_convex_h(
        pairs in proptest::collection::vec((0.05..5.0f64, 0.05..5.0f64), 2..40)
    ) {
        let rho: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let f: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        for h in ConvexH::ALL.into_iter().filter(|&h| h != ConvexH::NegSquare) {
            let v = estimators::jensen_check(&rho, &f, h).unwrap();
            prop_assert!(v.holds, "{}: lhs {} rhs {}", h.name(), v.lhs, v.rhs);
        }
    }

    #[test]
    fn realization_outcomes_do_not_depend_on_the_pool(threads in 1usize..5, seed in any::<u64>()) {
        let draw = |r: u64| {
            let mut d = BrownianDriver::new(seed, r, 0.01, 2);
            Ok(d.increments(10).iter().map(|v| v[0] + v[1]).sum::<f64>())
        };
        let reference: Vec<f64> = estimators::run_realizations(64, draw).unwrap().values().copied().collect();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let other: Vec<f64> = pool.install(|| estimators::run_realizations(64, draw)).unwrap().values().copied().collect();
        prop_assert_eq!(reference, other);
    }
}
