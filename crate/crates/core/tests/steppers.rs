use pexprk::problems::{gs_default, gs_initial, gs_problem, oracle_semilinear, JacobianKind, Partitioning};
use pexprk::steppers::{
    integrate_fixed, step_exprk_transformed, step_pexprk, EvalMode, StepConfig, StepError, Stepper,
};
use pexprk::tableaux::{tableau, transform};
use proptest::prelude::*;

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn compositional_and_fused_evaluation_agree() {
    let m = gs_default(8);
    let u0 = gs_initial(&m);
    let tol = 1e-12;
    for split in [Partitioning::Physics, Partitioning::Space] {
        let prob = gs_problem(&m, split, JacobianKind::Full).unwrap();
        for order in [2, 4] {
            let stepper = Stepper::partitioned(&tableau(order).unwrap()).unwrap();
            let fused = StepConfig::with_tol(tol).unwrap();
            let comp = StepConfig {
                mode: EvalMode::Compositional,
                ..fused.clone()
            };
            let a = integrate_fixed(&stepper, &prob, &u0, 0.0, 0.02, 4, &fused).unwrap();
            let b = integrate_fixed(&stepper, &prob, &u0, 0.0, 0.02, 4, &comp).unwrap();
            let d = rel_diff(&a.state, &b.state);
            assert!(d <= 1e-10, "{} order {order}: {d:e}", split.name());
        }
    }
}

#[test]
fn residual_form_matches_direct_form_on_every_split() {
    let m = gs_default(8);
    let u0 = gs_initial(&m);
    let cfg = StepConfig::with_tol(1e-13).unwrap();
    let direct = Stepper::partitioned(&tableau(2).unwrap()).unwrap();
    for split in [
        Partitioning::Species,
        Partitioning::Space,
        Partitioning::Physics,
        Partitioning::Imex,
    ] {
        let prob = gs_problem(&m, split, JacobianKind::Full).unwrap();
        let a = integrate_fixed(&Stepper::ResidualOrder2, &prob, &u0, 0.0, 0.01, 2, &cfg).unwrap();
        let b = integrate_fixed(&direct, &prob, &u0, 0.0, 0.01, 2, &cfg).unwrap();
        let d = rel_diff(&a.state, &b.state);
        assert!(d <= 1e-9, "{}: {d:e}", split.name());
    }
}

#[test]
fn residual_form_needs_two_partitions() {
    let o = oracle_semilinear(4, 0);
    let err = Stepper::ResidualOrder2
        .step(&o.problem(), &o.u0, 0.1, &StepConfig::default())
        .unwrap_err();
    assert!(matches!(err, StepError::PartitionCount { expected: 2, got: 1 }));
}

#[test]
fn invalid_steps_are_rejected() {
    let o = oracle_semilinear(4, 0);
    let prob = o.problem();
    let stepper = Stepper::partitioned(&tableau(2).unwrap()).unwrap();
    let cfg = StepConfig::default();
    assert!(matches!(
        integrate_fixed(&stepper, &prob, &o.u0, 0.0, 1.0, 0, &cfg),
        Err(StepError::NoSteps)
    ));
    assert!(stepper.step(&prob, &o.u0, f64::NAN, &cfg).is_err());
    assert!(stepper.step(&prob, &o.u0[..3], 0.1, &cfg).is_err());
}

/// With weak diffusion the problem is non-stiff and every partitioned
/// method shows its design order.
#[test]
fn partitioned_methods_reach_design_order_when_non_stiff() {
    let mut m = gs_default(8);
    m.d_a *= 1e-3;
    m.d_b *= 1e-3;
    let u0 = gs_initial(&m);
    let tf = 0.5;
    let cfg = StepConfig::with_tol(1e-14).unwrap();
    let full = gs_problem(&m, Partitioning::None, JacobianKind::Full).unwrap();
    let reference = integrate_fixed(
        &Stepper::transformed(&tableau(4).unwrap()).unwrap(),
        &full,
        &u0,
        0.0,
        tf,
        512,
        &cfg,
    )
    .unwrap()
    .state;
    for split in [Partitioning::Space, Partitioning::Physics] {
        let prob = gs_problem(&m, split, JacobianKind::Full).unwrap();
        for order in 2..=4u32 {
            let stepper = Stepper::partitioned(&tableau(order).unwrap()).unwrap();
            let err = |n: usize| {
                let s = integrate_fixed(&stepper, &prob, &u0, 0.0, tf, n, &cfg).unwrap().state;
                rel_diff(&s, &reference)
            };
            let p = (err(4) / err(8)).log2();
            assert!((p - order as f64).abs() < 0.3, "{} order {order}: {p}", split.name());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A single partition reduces PEXPRK to the transformed method.
    #[test]
    fn one_partition_is_the_transformed_method(
        seed in 0u64..1000,
        order in 2u32..=4,
        h in 0.01f64..0.5,
    ) {
        let o = oracle_semilinear(8, seed);
        let prob = o.problem();
        let tt = transform(&tableau(order).unwrap()).unwrap();
        let cfg = StepConfig::default();
        let a = step_pexprk(&tt, &prob, &o.u0, h, &cfg).unwrap();
        let op = prob.full_operator(&o.u0).unwrap();
        let b = step_exprk_transformed(&tt, &op, &|u| o.rhs(u), &o.u0, h, &cfg).unwrap();
        prop_assert!(rel_diff(&a.next, &b.next) <= 1e-13);
    }

    /// U_1 = u_n and every stage is recorded.
    #[test]
    fn stages_start_at_the_current_state(seed in 0u64..1000, h in 0.01f64..0.5) {
        let o = oracle_semilinear(6, seed);
        let tt = transform(&tableau(3).unwrap()).unwrap();
        let r = step_pexprk(&tt, &o.problem(), &o.u0, h, &StepConfig::default()).unwrap();
        prop_assert_eq!(&r.stages[0], &o.u0);
        prop_assert_eq!(r.stages.len(), 3);
        prop_assert!(r.next.iter().all(|x| x.is_finite()));
    }
}
