use pexprk::problems::{
    gs_default, gs_initial, gs_problem, gs_rhs, oracle_semilinear, JacobianKind, Partitioning,
};
use proptest::prelude::*;

const SPLITS: [Partitioning; 4] = [
    Partitioning::Species,
    Partitioning::Space,
    Partitioning::Physics,
    Partitioning::Imex,
];

fn state(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..2 * n * n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn partitions_sum_to_the_full_right_hand_side() {
    let m = gs_default(8);
    let probs: Vec<_> = SPLITS
        .iter()
        .map(|&p| gs_problem(&m, p, JacobianKind::Full).unwrap())
        .collect();
    for seed in 0..100 {
        let u = state(8, seed);
        let full = gs_rhs(&m, &u).unwrap();
        let scale = full.iter().map(|x| x.abs()).fold(1.0, f64::max);
        for prob in &probs {
            assert_eq!(prob.num_parts(), 2);
            assert!(max_diff(&prob.rhs_full(&u), &full) <= 1e-12 * scale, "{}", prob.name);
        }
    }
}

#[test]
fn partition_operators_sum_to_the_expected_jacobian() {
    let m = gs_default(6);
    let u = state(6, 1);
    let j = m.jacobian(&u).unwrap().to_dense();
    let physics = gs_problem(&m, Partitioning::Physics, JacobianKind::Full).unwrap();
    let sum = physics.full_operator(&u).unwrap().to_dense();
    assert!((&sum - &j).max_abs() <= 1e-12 * j.max_abs());

    let imex = gs_problem(&m, Partitioning::Imex, JacobianKind::Full).unwrap();
    let ops = imex.operators(&u);
    assert!(ops[1].is_zero());
    let diffusion = m.diffusion_operator().unwrap().to_dense();
    assert!((&ops[0].to_dense() - &diffusion).max_abs() <= 1e-12 * diffusion.max_abs());
    let species = gs_problem(&m, Partitioning::Species, JacobianKind::Full).unwrap();
    let block = m.block_jacobian(&u).unwrap().to_dense();
    let sum = species.full_operator(&u).unwrap().to_dense();
    assert!((&sum - &block).max_abs() <= 1e-12 * block.max_abs());
}

#[test]
fn jacobian_matches_finite_differences() {
    let m = gs_default(5);
    let u = state(5, 2);
    let j = m.jacobian(&u).unwrap();
    let f0 = gs_rhs(&m, &u).unwrap();
    let eps = 1e-7;
    for col in [0, 7, 24, 25, 33, 49] {
        let mut up = u.clone();
        up[col] += eps;
        let fd: Vec<f64> = gs_rhs(&m, &up)
            .unwrap()
            .iter()
            .zip(&f0)
            .map(|(a, b)| (a - b) / eps)
            .collect();
        let mut e = vec![0.0; u.len()];
        e[col] = 1.0;
        let jc = j.apply(&e).unwrap();
        assert!(max_diff(&jc, &fd) < 1e-4 * 50.0, "column {col}");
    }
}

/// L^p against finite differences of f^p over the given columns, relative
/// to the largest entry.
fn operator_fd_error(
    prob: &pexprk::steppers::SplitProblem,
    p: usize,
    u: &[f64],
    cols: std::ops::Range<usize>,
) -> f64 {
    let l = prob.operators(u)[p].to_dense();
    let f0 = prob.rhs_part(p, u);
    let eps = 1e-7;
    let mut worst: f64 = 0.0;
    for col in cols {
        let mut up = u.to_vec();
        up[col] += eps;
        let f1 = prob.rhs_part(p, &up);
        for row in 0..u.len() {
            worst = worst.max(((f1[row] - f0[row]) / eps - l[(row, col)]).abs());
        }
    }
    worst / l.max_abs()
}

#[test]
fn partition_operators_are_jacobians_of_their_parts() {
    let m = gs_default(8);
    let u = state(8, 5);
    let nodes = 64;
    let physics = gs_problem(&m, Partitioning::Physics, JacobianKind::Full).unwrap();
    // species operators are the diagonal blocks, so only their own columns
    let species = gs_problem(&m, Partitioning::Species, JacobianKind::Full).unwrap();
    for p in 0..2 {
        let e = operator_fd_error(&physics, p, &u, 0..2 * nodes);
        assert!(e <= 1e-6, "physics part {p}: {e:e}");
        let e = operator_fd_error(&species, p, &u, p * nodes..(p + 1) * nodes);
        assert!(e <= 1e-6, "species part {p}: {e:e}");
    }
}

#[test]
fn space_operators_are_principal_subblocks() {
    let m = gs_default(8);
    let u = state(8, 6);
    let j = m.jacobian(&u).unwrap().to_dense();
    let prob = gs_problem(&m, Partitioning::Space, JacobianKind::Full).unwrap();
    let ops: Vec<_> = prob.operators(&u).iter().map(|o| o.to_dense()).collect();
    let dim = u.len();
    // index y·n + x within each species block; subdomain 0 is y < n/2
    let owner = |i: usize| usize::from((i % (8 * 8)) / 8 >= 4);
    for r in 0..dim {
        for c in 0..dim {
            let (pr, pc) = (owner(r), owner(c));
            let want = if pr == pc { j[(r, c)] } else { 0.0 };
            assert!((ops[pr][(r, c)] - want).abs() <= 1e-12 * j.max_abs(), "({r}, {c})");
            assert_eq!(ops[1 - pr][(r, c)], 0.0);
        }
    }
}

#[test]
fn initial_state_is_in_range() {
    let m = gs_default(64);
    let u = gs_initial(&m);
    assert_eq!(u.len(), 2 * 64 * 64);
    assert!(u.iter().all(|x| x.is_finite() && *x > 0.0 && *x <= 0.7));
}

#[test]
fn invalid_models_are_rejected() {
    let mut m = gs_default(8);
    m.d_a = -1.0;
    assert!(gs_problem(&m, Partitioning::Physics, JacobianKind::Full).is_err());
    assert!(gs_problem(&gs_default(7), Partitioning::Space, JacobianKind::Full).is_err());
    assert!(gs_rhs(&gs_default(4), &[0.0; 3]).is_err());
}

#[test]
fn oracle_reference_is_deterministic() {
    let a = oracle_semilinear(6, 9);
    let b = oracle_semilinear(6, 9);
    assert_eq!(a.u0, b.u0);
    assert_eq!(a.reference(0.2), b.reference(0.2));
    assert_ne!(oracle_semilinear(6, 10).u0, a.u0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn diffusion_conserves_mass(seed in any::<u64>(), n in 3usize..10) {
        let m = gs_default(n);
        let d = m.diffusion(&state(n, seed));
        let (a, b) = d.split_at(n * n);
        let scale = (n * n) as f64;
        prop_assert!(a.iter().sum::<f64>().abs() <= 1e-10 * scale);
        prop_assert!(b.iter().sum::<f64>().abs() <= 1e-10 * scale);
    }

    #[test]
    fn diffusion_plus_reaction_is_the_rhs(seed in any::<u64>(), n in 2usize..9) {
        let m = gs_default(n);
        let u = state(n, seed);
        let sum: Vec<f64> = m.diffusion(&u).iter().zip(m.reaction(&u)).map(|(a, b)| a + b).collect();
        prop_assert!(max_diff(&sum, &gs_rhs(&m, &u).unwrap()) <= 1e-12 * (n * n) as f64);
    }
}
