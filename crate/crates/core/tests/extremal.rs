use std::sync::Arc;

use monovi::iteration::maximality_probe;
use monovi::{
    linear_bracket_helper, lower_bracket_helper, random_start_fixed_points, solve_extremal,
    solve_vi, Bracket, Decomposition, Direction, DiscreteProblem, Mesh, NodalField, OperatorSpec,
    PiecewiseSpec, Side, Tolerances, ViTolerances,
};
use proptest::prelude::*;

fn problem(mesh: Mesh, op: OperatorSpec, g: &PiecewiseSpec, h: &PiecewiseSpec, side: Side) -> DiscreteProblem {
    let d = Decomposition::from_specs(g, h, side).unwrap();
    DiscreteProblem::new(Arc::new(mesh), op, d)
}

fn helper_bracket(p: &DiscreteProblem, c_upper: f64) -> Bracket {
    let mut b = Bracket::new(lower_bracket_helper(p, 0.0).unwrap(), linear_bracket_helper(p, c_upper).unwrap()).unwrap();
    assert!(b.verify(p, 1e-9).unwrap().passed);
    b
}

/// Nodal Gauss-Seidel for `-u'' + c H(u - a) ∋ 1` with the closed-form
/// Heaviside resolvent, from 0 and from x(1-x)/2 until the monotone
/// sequences are `gap` apart.
fn gauss_seidel(n: usize, a: f64, c: f64, gap: f64) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let lambda = h * h / 2.0;
    let resolvent = |y: f64| {
        if y <= a {
            y
        } else if y >= a + lambda * c {
            y - lambda * c
        } else {
            a
        }
    };
    let mut lo = vec![0.0; n + 1];
    let mut hi: Vec<f64> = (0..=n).map(|i| i as f64 * h * (1.0 - i as f64 * h) / 2.0).collect();
    loop {
        for u in [&mut lo, &mut hi] {
            for i in 1..n {
                u[i] = resolvent(lambda + 0.5 * (u[i - 1] + u[i + 1]));
            }
        }
        if lo.iter().zip(&hi).map(|(l, u)| u - l).fold(0.0, f64::max) <= gap {
            return lo.iter().zip(&hi).map(|(l, u)| 0.5 * (l + u)).collect();
        }
    }
}

#[test]
fn active_jump_matches_gauss_seidel_on_a_finer_grid() {
    let n = 200;
    let p = problem(
        Mesh::interval(0.0, 1.0, n).unwrap(),
        OperatorSpec::p_laplacian(2.0).unwrap(),
        &PiecewiseSpec::constant(1.0),
        &PiecewiseSpec::heaviside(0.05, 0.5),
        Side::Right,
    );
    let bracket = helper_bracket(&p, 1.0);
    let report = solve_extremal(&p, &bracket, Direction::FromUpper, &Tolerances::for_dim(1)).unwrap();
    assert!(report.passed);
    // Same grid: the discrete problems coincide.
    let same = gauss_seidel(n, 0.05, 0.5, 1e-10);
    let d_same = report.u.iter().zip(&same).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d_same <= 1e-8, "{d_same}");
    // The solution crosses the jump, so the free boundary is interior.
    assert!(report.u.iter().any(|&s| s > 0.05 + 1e-3));
    assert!(report.u[1..n].iter().any(|&s| s < 0.05 - 1e-3));
    let fine = gauss_seidel(4 * n, 0.05, 0.5, 1e-8);
    let d_fine = (0..=n).map(|i| (report.u[i] - fine[4 * i]).abs()).fold(0.0, f64::max);
    assert!(d_fine <= 1e-3, "{d_fine}");
}

fn jump_in_g() -> (PiecewiseSpec, PiecewiseSpec) {
    (
        PiecewiseSpec::linear(2.0).with_value_at_zero(1.0).with_jump(0.1, 0.5),
        PiecewiseSpec::heaviside(0.05, 3.0),
    )
}

#[test]
fn extremal_solutions_are_ordered_and_enclose_random_fixed_points() {
    let (g, h) = jump_in_g();
    let op = OperatorSpec::p_laplacian(2.5).unwrap();
    let upper_p = problem(Mesh::interval(0.0, 1.0, 80).unwrap(), op.clone(), &g, &h, Side::Right);
    let lower_p = problem(Mesh::interval(0.0, 1.0, 80).unwrap(), op, &g, &h, Side::Left);
    let bracket = helper_bracket(&upper_p, 3.0);
    let tol = Tolerances::for_dim(1);
    let u_max = solve_extremal(&upper_p, &bracket, Direction::FromUpper, &tol).unwrap();
    let u_min = solve_extremal(&lower_p, &bracket, Direction::FromLower, &tol).unwrap();
    assert!(u_max.passed && u_min.passed);
    assert!(u_min.u.iter().zip(u_max.u.iter()).all(|(a, b)| *a <= b + 1e-8));
    let found = random_start_fixed_points(&upper_p, &bracket, 6, 3, &tol, 300).unwrap();
    assert_eq!(found.len(), 6);
    let probe = maximality_probe(&upper_p, &u_min.u, &u_max.u, &found, 1e-6, 1e-6).unwrap();
    assert!(probe.passed, "{probe:?}");
}

#[test]
fn wrong_side_is_rejected_when_g_jumps() {
    let (g, h) = jump_in_g();
    let p = problem(
        Mesh::interval(0.0, 1.0, 20).unwrap(),
        OperatorSpec::p_laplacian(2.0).unwrap(),
        &g,
        &h,
        Side::Left,
    );
    let bracket = helper_bracket(&p, 3.0);
    let err = solve_extremal(&p, &bracket, Direction::FromUpper, &Tolerances::for_dim(1)).unwrap_err();
    assert!(matches!(err, monovi::Error::SideMismatch(_)), "{err}");
}

#[test]
fn two_dimensional_weighted_problem_is_certified() {
    let weight = Arc::new(|x: [f64; 2]| 1.0 + 0.5 * x[0] * x[1]);
    let op = OperatorSpec::weighted_p_laplacian(2.5, weight, 1.0, 1.5).unwrap();
    let p = problem(
        Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 12, 12).unwrap(),
        op,
        &PiecewiseSpec::constant(1.0),
        &PiecewiseSpec::heaviside(0.02, 4.0),
        Side::Right,
    );
    let bracket = helper_bracket(&p, 1.0);
    let report = solve_extremal(&p, &bracket, Direction::FromUpper, &Tolerances::for_dim(2)).unwrap();
    assert!(report.passed);
    assert!(report.certificate.membership_distance <= 1e-6);
}

#[test]
fn fine_mesh_degenerate_solve_stops_at_the_rounding_floor() {
    // At n = 400 and p = 3 the prox residual cannot go below ~2e-11.
    let p = problem(
        Mesh::interval(0.0, 1.0, 400).unwrap(),
        OperatorSpec::p_laplacian(3.0).unwrap(),
        &PiecewiseSpec::constant(2.0),
        &PiecewiseSpec::default(),
        Side::Right,
    );
    let z = NodalField::zeros(401);
    let sol = solve_vi(&p, &z, &z, &ViTolerances::for_dim(1).with_stat(1e-12)).unwrap();
    assert!(sol.residual <= sol.residual_floor);
    assert!(sol.residual_floor < 1e-9, "{}", sol.residual_floor);
    let coarse = problem(
        Mesh::interval(0.0, 1.0, 20).unwrap(),
        OperatorSpec::p_laplacian(3.0).unwrap(),
        &PiecewiseSpec::constant(2.0),
        &PiecewiseSpec::default(),
        Side::Right,
    );
    let z = NodalField::zeros(21);
    let sol = solve_vi(&coarse, &z, &z, &ViTolerances::for_dim(1).with_stat(1e-12)).unwrap();
    assert!(sol.residual <= 1e-12 || sol.residual <= sol.residual_floor);
    assert!(sol.residual_floor < 1e-12, "{}", sol.residual_floor);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn t_is_order_preserving_with_increasing_g(
        seed in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 21)
    ) {
        let (g, h) = jump_in_g();
        let p = problem(Mesh::interval(0.0, 1.0, 20).unwrap(), OperatorSpec::p_laplacian(2.0).unwrap(), &g, &h, Side::Right);
        let bracket = helper_bracket(&p, 3.0);
        let mut z1 = NodalField::zeros(21);
        let mut z2 = NodalField::zeros(21);
        for &i in p.interior() {
            let (lo, hi) = (bracket.lower_u[i], bracket.upper_u[i]);
            z1[i] = lo + seed[i].0 * (hi - lo);
            z2[i] = z1[i] + seed[i].1 * (hi - z1[i]);
        }
        let tol = ViTolerances::for_dim(1).with_stat(1e-11);
        let t1 = solve_vi(&p, &z1, &z1, &tol).unwrap().u;
        let t2 = solve_vi(&p, &z2, &z2, &tol).unwrap().u;
        for (a, b) in t1.iter().zip(t2.iter()) {
            prop_assert!(*a <= b + 1e-8);
        }
        for (i, s) in t2.iter().enumerate() {
            prop_assert!(*s <= bracket.upper_u[i] + 1e-8);
        }
    }

    #[test]
    fn solutions_do_not_depend_on_the_starting_point(
        start in proptest::collection::vec(-0.5..0.5f64, 31),
        pexp in prop_oneof![Just(1.5), Just(2.0), Just(3.0)],
    ) {
        let p = problem(
            Mesh::interval(0.0, 1.0, 30).unwrap(),
            OperatorSpec::p_laplacian(pexp).unwrap(),
            &PiecewiseSpec::constant(1.0),
            &PiecewiseSpec::heaviside(0.02, 2.0),
            Side::Right,
        );
        let mut u0 = NodalField::from(start);
        u0[0] = 0.0;
        u0[30] = 0.0;
        let z = NodalField::zeros(31);
        let tol = ViTolerances::for_dim(1).with_stat(1e-10);
        let a = solve_vi(&p, &z, &u0, &tol).unwrap();
        let b = solve_vi(&p, &z, &z, &tol).unwrap();
        // The prox residual controls u less tightly away from p = 2.
        let bound = match pexp {
            p if p > 2.0 => 1e-4,
            p if p < 2.0 => 1e-7,
            _ => 1e-8,
        };
        prop_assert!(a.u.sup_distance(&b.u) <= bound, "{}", a.u.sup_distance(&b.u));
    }
}
