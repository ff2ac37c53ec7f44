use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::*;
use crate::linalg::min_eigenvalue;

fn random_instance(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
    let y = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    (x, y)
}

/// Soft threshold used by the 1-D hand oracles.
fn soft(x: f64, w: f64) -> f64 {
    if x > w {
        x - w
    } else if x < -w {
        x + w
    } else {
        0.0
    }
}

#[test]
fn zero_target_instance_is_exactly_zero() {
    for beta in [0.0, 1e-3, 1.0] {
        let problem = SdpProblem::bilinear(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
            LossKind::Squared,
            beta,
            SolverConfig::default(),
        )
        .unwrap();
        let sol = solve_sdp(&problem).unwrap();
        let (_, z, _, rho) = sol.bilinear_blocks().unwrap();
        assert!(z.norm() <= 1e-8, "beta={beta}: Z = {z}");
        assert!(rho.abs() <= 1e-8);
        assert!(sol.objective.abs() <= 1e-8);
        assert_eq!(sol.lower_bound().unwrap(), sol.objective);
    }
}

// d = 1 bilinear relaxation reduces by hand to a scalar lasso:
// with t = 2z, minimize (1/n) sum (x_i^2 t - y_i)^2 + (beta/2)|t|, so
// t* = soft(sum x_i^2 y_i, beta n / 4) / sum x_i^4.
#[test]
fn bilinear_d1_matches_hand_formula() {
    let x = DMatrix::from_row_slice(3, 1, &[0.8, -1.3, 0.4]);
    let y = DVector::from_vec(vec![1.0, 2.0, -0.5]);
    let beta = 0.05;
    let s2y: f64 = (0..3).map(|i| x[(i, 0)] * x[(i, 0)] * y[i]).sum();
    let s4: f64 = (0..3).map(|i| x[(i, 0)].powi(4)).sum();
    let t_star = soft(s2y, beta * 3.0 / 4.0) / s4;
    let want = (0..3)
        .map(|i| (x[(i, 0)] * x[(i, 0)] * t_star - y[i]).powi(2))
        .sum::<f64>()
        / 3.0
        + beta / 2.0 * t_star.abs();

    let problem =
        SdpProblem::bilinear(x, y, LossKind::Squared, beta, SolverConfig::tight(1e-10)).unwrap();
    let sol = solve_sdp(&problem).unwrap();
    let (_, z, _, rho) = sol.bilinear_blocks().unwrap();
    assert!((sol.objective - want).abs() <= 1e-7 * (1.0 + want.abs()));
    assert!((2.0 * z[(0, 0)] - t_star).abs() <= 1e-6);
    assert!((rho - z[(0, 0)].abs()) <= 1e-6);
}

// d = 1 quadratic variant: minimize (1/n) sum (x_i^2 t - y_i)^2 + beta |t|
// over t = rho1 - rho2.
#[test]
fn quadratic_d1_matches_hand_formula() {
    let x = DMatrix::from_row_slice(4, 1, &[0.9, -0.6, 1.1, 0.3]);
    let y = DVector::from_vec(vec![0.7, -0.2, 1.5, 0.1]);
    let beta = 0.08;
    let n = 4.0;
    let s2y: f64 = (0..4).map(|i| x[(i, 0)] * x[(i, 0)] * y[i]).sum();
    let s4: f64 = (0..4).map(|i| x[(i, 0)].powi(4)).sum();
    let t_star = soft(s2y, beta * n / 2.0) / s4;
    let want = (0..4)
        .map(|i| (x[(i, 0)] * x[(i, 0)] * t_star - y[i]).powi(2))
        .sum::<f64>()
        / n
        + beta * t_star.abs();

    let problem =
        SdpProblem::quadratic(x, y, LossKind::Squared, beta, SolverConfig::tight(1e-10)).unwrap();
    let sol = solve_sdp(&problem).unwrap();
    assert!((sol.objective - want).abs() <= 1e-7 * (1.0 + want.abs()));
    match sol.matrices {
        SolutionMatrices::Quadratic { rho1, rho2, .. } => {
            assert!((rho1 - rho2 - t_star).abs() <= 1e-6);
        }
        _ => unreachable!(),
    }
}

#[test]
fn returned_variables_satisfy_solution_invariants() {
    let (x, y) = random_instance(5, 12, 3);
    let problem =
        SdpProblem::bilinear(x.clone(), y.clone(), LossKind::Squared, 1e-2, SolverConfig::default())
            .unwrap();
    let sol = solve_sdp(&problem).unwrap();
    let (v, z, w, rho) = sol.bilinear_blocks().unwrap();
    let q = match &sol.matrices {
        SolutionMatrices::Bilinear { q, .. } => q.clone(),
        _ => unreachable!(),
    };
    assert!(min_eigenvalue(&q) >= -sol.config.psd_tol);
    for j in 0..q.nrows() {
        assert!((q[(j, j)] - rho).abs() <= sol.config.diag_tol);
    }
    assert_eq!(v[(0, 0)], rho);
    assert_eq!(w[(0, 0)], rho);
    // Predictions match the stated formula against the returned Z.
    for i in 0..sol.n {
        let xi = x.row(i).transpose();
        let want = 2.0 * (xi.transpose() * &z * &xi)[(0, 0)];
        let got = sol.predictions[(i, 0)];
        assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()));
    }
    // Objective equals the recomputed loss + beta d rho.
    let recomputed = loss_value(LossKind::Squared, &sol.predictions_vector(), &y).unwrap()
        + sol.beta * sol.d as f64 * rho;
    assert!((sol.objective - recomputed).abs() <= 1e-8 * (1.0 + recomputed.abs()));
}

// Every sign network is feasible for the combinatorial problem, so its
// objective dominates the relaxation value.
#[test]
fn lower_bound_dominated_by_random_networks() {
    use crate::model::{BilinearNetwork, InputKind};
    let (x, y) = random_instance(9, 15, 4);
    let problem =
        SdpProblem::bilinear(x.clone(), y.clone(), LossKind::Squared, 1e-3, SolverConfig::tight(1e-9))
            .unwrap();
    let sol = solve_sdp(&problem).unwrap();
    let bound = sol.lower_bound().unwrap();

    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for _ in 0..25 {
        let m = rng.gen_range(1..5);
        let u = DMatrix::from_fn(m, 4, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
        let v = DMatrix::from_fn(m, 4, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
        let alpha = DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5));
        let net = BilinearNetwork::new(u, v, alpha.clone(), InputKind::Raw).unwrap();
        let yhat = DVector::from_fn(15, |i, _| net.forward_raw(&x.row(i).transpose()).unwrap());
        let objective = loss_value(LossKind::Squared, &yhat, &y).unwrap()
            + 1e-3 * 4.0 * alpha.iter().map(|a| a.abs()).sum::<f64>();
        assert!(objective >= bound - 1e-6 * (1.0 + bound.abs()));
    }
}

// Negating the targets mirrors the solution (Z -> -Z) with the same value;
// the mirrored trace constraint is redundant.
#[test]
fn target_negation_preserves_objective() {
    for loss in [LossKind::Squared, LossKind::Absolute] {
        let (x, y) = random_instance(13, 10, 3);
        let base = SdpProblem::bilinear(x.clone(), y.clone(), loss, 5e-3, SolverConfig::tight(1e-9))
            .unwrap();
        let mirrored =
            SdpProblem::bilinear(x, -y, loss, 5e-3, SolverConfig::tight(1e-9)).unwrap();
        let a = solve_sdp(&base).unwrap();
        let b = solve_sdp(&mirrored).unwrap();
        assert!(
            (a.objective - b.objective).abs() <= 1e-7 * (1.0 + a.objective.abs()),
            "{loss:?}: {} vs {}",
            a.objective,
            b.objective
        );
    }
}

#[test]
fn objective_is_nondecreasing_in_beta() {
    let (x, y) = random_instance(21, 14, 3);
    let mut last = -f64::INFINITY;
    for beta in [0.0, 1e-4, 1e-3, 1e-2, 1e-1] {
        let problem = SdpProblem::bilinear(
            x.clone(),
            y.clone(),
            LossKind::Squared,
            beta,
            SolverConfig::tight(1e-9),
        )
        .unwrap();
        let sol = solve_sdp(&problem).unwrap();
        assert!(
            sol.objective >= last - 1e-8 * (1.0 + last.abs()),
            "beta={beta}: {} < {last}",
            sol.objective
        );
        last = sol.objective;
    }
}

#[test]
fn vector_output_with_one_class_matches_bilinear() {
    let (x, y) = random_instance(33, 12, 3);
    let scalar = SdpProblem::bilinear(
        x.clone(),
        y.clone(),
        LossKind::Squared,
        1e-3,
        SolverConfig::tight(1e-8),
    )
    .unwrap();
    let y_mat = DMatrix::from_column_slice(12, 1, y.as_slice());
    let vector =
        SdpProblem::vector_output(x, y_mat, LossKind::Squared, 1e-3, SolverConfig::tight(1e-8))
            .unwrap();
    let a = solve_sdp(&scalar).unwrap();
    let b = solve_sdp(&vector).unwrap();
    assert!((a.objective - b.objective).abs() <= 1e-6 * (1.0 + a.objective.abs()));
}

#[test]
fn rejects_nan_data() {
    let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
    let y = DVector::from_vec(vec![0.0, 0.0]);
    assert!(SdpProblem::bilinear(x, y, LossKind::Squared, 0.1, SolverConfig::default()).is_err());
}

#[test]
fn nonconvergence_reports_residuals() {
    let (x, y) = random_instance(41, 10, 3);
    let config = SolverConfig { max_iterations: 3, ..SolverConfig::default() };
    let problem = SdpProblem::bilinear(x, y, LossKind::Squared, 1e-3, config).unwrap();
    match solve_sdp(&problem) {
        Err(QsdpError::SolverDidNotConverge { iterations, primal, dual }) => {
            assert_eq!(iterations, 3);
            assert!(primal.is_finite() && dual.is_finite());
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn lower_bound_refused_when_not_converged() {
    let (x, y) = random_instance(43, 8, 2);
    let problem =
        SdpProblem::bilinear(x, y, LossKind::Squared, 1e-3, SolverConfig::default()).unwrap();
    let mut sol = solve_sdp(&problem).unwrap();
    sol.converged = false;
    assert!(matches!(sol.lower_bound(), Err(QsdpError::NotConverged)));
}

#[test]
fn solution_json_round_trip() {
    let (x, y) = random_instance(47, 8, 2);
    let problem =
        SdpProblem::bilinear(x, y, LossKind::Absolute, 1e-2, SolverConfig::default()).unwrap();
    let sol = solve_sdp(&problem).unwrap();
    let json = sol.to_json_string().unwrap();
    let back = SdpSolution::from_json_str(&json).unwrap();
    assert_eq!(back.objective, sol.objective);
    assert_eq!(back.iterations, sol.iterations);
    let (_, z0, _, rho0) = sol.bilinear_blocks().unwrap();
    let (_, z1, _, rho1) = back.bilinear_blocks().unwrap();
    assert_eq!(rho0, rho1);
    assert_eq!(z0, z1);
}

#[test]
fn hinge_variant_solves_classification_instance() {
    let mut rng = ChaCha12Rng::seed_from_u64(55);
    let x = DMatrix::from_fn(16, 3, |_, _| rng.gen_range(-1.0..1.0));
    let y = DVector::from_fn(16, |i, _| if x.row(i).sum() > 0.0 { 1.0 } else { -1.0 });
    let problem =
        SdpProblem::bilinear(x, y.clone(), LossKind::Hinge, 1e-3, SolverConfig::default()).unwrap();
    let sol = solve_sdp(&problem).unwrap();
    let zero_loss = loss_value(LossKind::Hinge, &DVector::zeros(16), &y).unwrap();
    assert!(sol.objective <= zero_loss + 1e-8);
}
