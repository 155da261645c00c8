use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavopt_conic::{Backend, ConvexProgram, DenseBarrier, InteriorPoint, LinExpr, SolveStatus, Var};

fn affine(vars: &[Var], coeffs: &[f64], c: f64) -> LinExpr {
    let mut e = LinExpr::constant(c);
    for (v, a) in vars.iter().zip(coeffs) {
        e.add_term(*v, *a);
    }
    e
}

/// Bounded random SOCP with a known strictly feasible point.
fn random_socp(rng: &mut ChaCha8Rng, n: usize) -> ConvexProgram {
    let mut p = ConvexProgram::new();
    let vars: Vec<Var> = (0..n).map(|i| p.add_var(&format!("x{i}"))).collect();
    let center: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    p.maximize(affine(&vars, &c, 0.0));

    let radius = rng.gen_range(0.5..3.0);
    let shifted: Vec<LinExpr> = vars
        .iter()
        .zip(&center)
        .map(|(v, x0)| LinExpr::from(*v) - *x0)
        .collect();
    p.add_soc(radius, shifted);

    for _ in 0..rng.gen_range(1..4) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at_center: f64 = a.iter().zip(&center).map(|(a, x)| a * x).sum();
        let b = at_center + rng.gen_range(0.1..1.0);
        p.add_le(affine(&vars, &a, -b), 0.0);
    }

    // ‖A x + d‖ ≤ eᵀx + f, strictly satisfied at the center.
    let rows = rng.gen_range(1..=n);
    let mut xs = Vec::new();
    let mut norm_at_center = 0.0;
    for _ in 0..rows {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = rng.gen_range(-1.0..1.0);
        let v: f64 = a.iter().zip(&center).map(|(a, x)| a * x).sum::<f64>() + d;
        norm_at_center += v * v;
        xs.push(affine(&vars, &a, d));
    }
    let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let e_at_center: f64 = e.iter().zip(&center).map(|(a, x)| a * x).sum();
    let f = norm_at_center.sqrt() - e_at_center + rng.gen_range(0.2..1.0);
    p.add_soc(affine(&vars, &e, f), xs);
    p
}

#[test]
fn fifty_random_socps_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let n = rng.gen_range(2..6);
        let p = random_socp(&mut rng, n);
        let a = InteriorPoint::default().solve(&p, 1e-10).unwrap();
        let b = DenseBarrier::default().solve(&p, 1e-11).unwrap();
        assert!(a.is_optimal(), "case {case}: {a:?}");
        assert!(b.is_optimal(), "case {case}: {b:?}");
        let scale = 1.0 + a.objective_value.abs();
        assert!(
            (a.objective_value - b.objective_value).abs() <= 1e-6 * scale,
            "case {case}: {} vs {}",
            a.objective_value,
            b.objective_value
        );
    }
}

#[test]
fn projection_onto_ball_matches_closed_form() {
    // min ‖x − q‖ s.t. ‖x‖ ≤ 1, written as max −s with ‖x − q‖ ≤ s.
    let q = [3.0, -4.0];
    let mut p = ConvexProgram::new();
    let x = p.add_var("x");
    let y = p.add_var("y");
    let s = p.add_var("s");
    p.maximize(-LinExpr::from(s));
    p.add_soc(s, vec![x - q[0], y - q[1]]);
    p.add_soc(1.0, vec![x.into(), y.into()]);
    for r in [
        InteriorPoint::default().solve(&p, 1e-10).unwrap(),
        DenseBarrier::default().solve(&p, 1e-11).unwrap(),
    ] {
        assert!(r.is_optimal());
        assert!((r.value(x) - 0.6).abs() < 1e-6);
        assert!((r.value(y) + 0.8).abs() < 1e-6);
        assert!((r.value(s) - 4.0).abs() < 1e-6);
    }
}

#[test]
fn water_filling_via_exp_cones() {
    // max Σ log(1 + a_i p_i) s.t. Σ p_i ≤ P: classic water-filling.
    let gains = [2.0, 1.0, 0.25];
    let budget = 2.0;
    let mut p = ConvexProgram::new();
    let pw: Vec<Var> = (0..3).map(|i| p.add_var(&format!("p{i}"))).collect();
    let r: Vec<Var> = (0..3).map(|i| p.add_var(&format!("r{i}"))).collect();
    let mut obj = LinExpr::zero();
    let mut total = LinExpr::zero();
    for i in 0..3 {
        obj += r[i];
        total += pw[i];
        p.add_log_ge(pw[i] * gains[i] + 1.0, r[i]);
        p.add_ge(pw[i], 0.0);
    }
    p.maximize(obj);
    p.add_le(total, budget);

    // Oracle: find water level μ with Σ max(0, μ − 1/a_i) = P.
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mu: f64 = 0.5 * (lo + hi);
        let used: f64 = gains.iter().map(|a| (mu - 1.0 / a).max(0.0)).sum();
        if used > budget {
            hi = mu;
        } else {
            lo = mu;
        }
    }
    let expected: f64 = gains
        .iter()
        .map(|a| (1.0 + a * (lo - 1.0 / a).max(0.0)).ln())
        .sum();

    for rep in [
        InteriorPoint::default().solve(&p, 1e-10).unwrap(),
        DenseBarrier::default().solve(&p, 1e-11).unwrap(),
    ] {
        assert!(rep.is_optimal(), "{rep:?}");
        assert!((rep.objective_value - expected).abs() < 1e-6, "{} vs {expected}", rep.objective_value);
    }
}

#[test]
fn infeasible_soc_is_detected_by_both() {
    let mut p = ConvexProgram::new();
    let x = p.add_var("x");
    p.maximize(x);
    p.add_soc(1.0, vec![x.into()]);
    p.add_ge(x, 2.0);
    assert_eq!(InteriorPoint::default().solve(&p, 1e-9).unwrap().status, SolveStatus::Infeasible);
    assert_eq!(DenseBarrier::default().solve(&p, 1e-9).unwrap().status, SolveStatus::Infeasible);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_points_are_feasible_and_reproducible(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_socp(&mut rng, n);
        let a = InteriorPoint::default().solve(&p, 1e-9).unwrap();
        prop_assert!(a.is_optimal());
        prop_assert!(p.max_violation(&a.solution) <= 1e-7, "{}", p.max_violation(&a.solution));
        let b = InteriorPoint::default().solve(&p, 1e-9).unwrap();
        prop_assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
        prop_assert!(a.solution.iter().zip(&b.solution).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
