use bdflow_core::diagnostics::{check_nonincreasing, lyapunov_series, quotient_series, MONOTONE_SLACK};
use bdflow_core::evolution::ordering_violation;
use bdflow_core::{build_dtn_circle, evolve, BoundaryField, EvolveControls, FlowMode, FourierSeries, ProblemSpec};
use proptest::prelude::*;

const N: usize = 16;

fn spec(a: &FourierSeries, p: f64) -> ProblemSpec {
    let dtn = build_dtn_circle(N).unwrap();
    let a = a.synthesize(dtn.curve()).unwrap();
    ProblemSpec::new(dtn, a, p).unwrap()
}

fn datum(spec: &ProblemSpec, mean: f64, c1: f64, s2: f64) -> BoundaryField {
    FourierSeries::constant(mean)
        .with_mode(1, c1, 0.0)
        .with_mode(2, 0.0, s2)
        .synthesize(spec.curve())
        .unwrap()
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![0.3f64..0.8, 1.5f64..3.0]
}

fn controls(rtol: f64) -> EvolveControls {
    EvolveControls {
        rtol,
        ..EvolveControls::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mass_law_and_positivity(
        p in exponent(),
        a0 in -1.0f64..1.5,
        a1 in -0.3f64..0.3,
        c1 in -0.3f64..0.3,
        s2 in -0.2f64..0.2,
    ) {
        prop_assume!(a0.abs() > 0.2);
        let spec = spec(&FourierSeries::constant(a0).with_mode(1, a1, 0.0), p);
        let u0 = datum(&spec, 1.0, c1, s2);
        let traj = evolve(&spec, &u0, FlowMode::Physical, 0.2, &controls(1e-6)).unwrap();
        prop_assert!(traj.max_mass_defect <= 1e-6, "defect {}", traj.max_mass_defect);
        for f in &traj.fields {
            prop_assert!(f.iter().all(|v| *v > 0.0));
        }
        let q = quotient_series(&traj);
        prop_assert!(q.passed, "I increased at sample {:?}", q.first_violation);
    }

    #[test]
    fn mass_is_conserved_without_absorption(
        p in exponent(),
        c1 in -0.3f64..0.3,
        s2 in -0.2f64..0.2,
    ) {
        let spec = spec(&FourierSeries::constant(0.0), p);
        let u0 = datum(&spec, 1.0, c1, s2);
        let traj = evolve(&spec, &u0, FlowMode::Physical, 1.0, &controls(1e-6)).unwrap();
        let m = traj.series(|d| d.mass);
        let m0 = m[0];
        prop_assert!((traj.final_time() - 1.0).abs() < 1e-12);
        for mk in &m {
            prop_assert!((mk - m0).abs() <= 1e-8 * (1.0 + m0.abs()), "{} vs {}", mk, m0);
        }
    }

    #[test]
    fn normalized_lyapunov_is_nonincreasing(
        p in exponent(),
        c1 in -0.2f64..0.2,
        s2 in -0.1f64..0.1,
    ) {
        let spec = spec(&FourierSeries::constant(1.0), p);
        let phi = bdflow_core::solve_steady(&spec, None, None).unwrap().phi;
        let u0 = BoundaryField::new(
            phi.iter().zip(datum(&spec, 0.0, c1, s2).iter()).map(|(f, h)| f * (1.0 + h)).collect(),
        );
        let traj = evolve(&spec, &u0, FlowMode::Normalized, 2.0, &controls(1e-7)).unwrap();
        prop_assert!(traj.len() >= 10 && (traj.final_time() - 2.0).abs() < 1e-12);
        let g = lyapunov_series(&traj).unwrap();
        prop_assert!(g.passed, "G increased at sample {:?}", g.first_violation);
        prop_assert!(check_nonincreasing(&traj.series(|d| d.i), MONOTONE_SLACK).passed);
    }

    #[test]
    fn comparison_preserves_order(
        p in exponent(),
        a0 in prop_oneof![-1.0f64..-0.3, 0.3f64..1.0],
        c1 in -0.3f64..0.3,
        lift in 0.0f64..0.2,
        bump in 0.0f64..0.2,
    ) {
        let spec = spec(&FourierSeries::constant(a0), p);
        let lower = datum(&spec, 1.0, c1, 0.0);
        let gap = FourierSeries::constant(lift + bump).with_mode(1, 0.0, bump).synthesize(spec.curve()).unwrap();
        let upper = BoundaryField::new(lower.iter().zip(gap.iter()).map(|(u, g)| u + g).collect());
        let c = EvolveControls {
            sample_interval: Some(0.01),
            ..controls(1e-6)
        };
        let lo = evolve(&spec, &lower, FlowMode::Physical, 0.2, &c).unwrap();
        let up = evolve(&spec, &upper, FlowMode::Physical, 0.2, &c).unwrap();
        let (worst, shared) = ordering_violation(&lo, &up);
        prop_assert!(shared >= 20, "only {} shared samples", shared);
        prop_assert!(worst <= 1e-10, "violation {}", worst);
    }
}
