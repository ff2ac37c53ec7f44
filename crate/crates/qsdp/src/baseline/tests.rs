use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::*;
use crate::data::{planted_dataset, Dataset, Provenance, SecondLayer, SplitTag};

fn constant_feature_dataset(n: usize, target: f64) -> Dataset {
    Dataset::new(
        DMatrix::from_element(n, 1, 1.0),
        DMatrix::from_element(n, 1, target),
        "ones",
        SplitTag::Train,
        Provenance::Derived,
    )
    .unwrap()
}

#[test]
fn one_dimensional_factor_recovery() {
    let target = 2.0;
    let dataset = constant_feature_dataset(4, target);
    let config = TrainConfig {
        neurons: 1,
        learning_rate: 0.02,
        momentum: 0.9,
        epochs: 3000,
        batch_size: 4,
        seed: 3,
        second_layer: SecondLayerMode::FixedUniform,
    };
    let trained = sgd_train_bilinear(&dataset, &config, LossKind::Squared).unwrap();
    let product = trained.u[(0, 0)] * trained.v[(0, 0)];
    assert!((product - target).abs() <= 1e-3, "u*v = {product}");
}

#[test]
fn zero_targets_drive_loss_down() {
    let planted = planted_dataset(20, 4, 3, 7, SecondLayer::Zero).unwrap();
    let config = TrainConfig {
        neurons: 8,
        learning_rate: 5e-3,
        momentum: 0.9,
        epochs: 200,
        batch_size: 20,
        seed: 1,
        second_layer: SecondLayerMode::FixedUniform,
    };
    let trained = sgd_train_bilinear(&planted.train, &config, LossKind::Squared).unwrap();
    let first = trained.curve.first().unwrap().loss;
    let last = trained.curve.last().unwrap().loss;
    assert!(last < first * 0.1, "loss went {first} -> {last}");
}

#[test]
fn divergence_is_reported_with_last_epoch() {
    let planted = planted_dataset(10, 3, 2, 5, SecondLayer::Nonnegative).unwrap();
    let config = TrainConfig {
        neurons: 4,
        learning_rate: 1e6,
        momentum: 0.9,
        epochs: 50,
        batch_size: 10,
        seed: 2,
        second_layer: SecondLayerMode::FixedUniform,
    };
    match sgd_train_bilinear(&planted.train, &config, LossKind::Squared) {
        Err(QsdpError::TrainingDiverged { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

/// Central finite differences of the batch loss with respect to every weight.
fn finite_difference_check(seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = 6;
    let d = 3;
    let m = 2;
    let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
    let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let u = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0));
    let v = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0));
    let alpha = DVector::from_fn(m, |_, _| rng.gen_range(0.2..1.0));

    let (gu, gv, ga, _) = bilinear_loss_gradients(&u, &v, &alpha, &x, &y, LossKind::Squared);
    let loss_at = |u: &DMatrix<f64>, v: &DMatrix<f64>, a: &DVector<f64>| {
        bilinear_loss_gradients(u, v, a, &x, &y, LossKind::Squared).3
    };

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..m {
        for i in 0..d {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[(j, i)] += h;
            dn[(j, i)] -= h;
            let fd = (loss_at(&up, &v, &alpha) - loss_at(&dn, &v, &alpha)) / (2.0 * h);
            worst = worst.max((fd - gu[(j, i)]).abs() / (1.0 + fd.abs()));

            let mut up = v.clone();
            let mut dn = v.clone();
            up[(j, i)] += h;
            dn[(j, i)] -= h;
            let fd = (loss_at(&u, &up, &alpha) - loss_at(&u, &dn, &alpha)) / (2.0 * h);
            worst = worst.max((fd - gv[(j, i)]).abs() / (1.0 + fd.abs()));
        }
        let mut up = alpha.clone();
        let mut dn = alpha.clone();
        up[j] += h;
        dn[j] -= h;
        let fd = (loss_at(&u, &v, &up) - loss_at(&u, &v, &dn)) / (2.0 * h);
        worst = worst.max((fd - ga[j]).abs() / (1.0 + fd.abs()));
    }
    worst
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..5 {
        let err = finite_difference_check(seed);
        assert!(err <= 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn quantize_fixed_point_on_sign_weights() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let m = 6;
    let d = 4;
    let u = DMatrix::from_fn(m, d, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
    let v = DMatrix::from_fn(m, d, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
    let net = post_training_quantize(&u, &v, QuantizeFormula::LeastSquares).unwrap();
    assert_eq!(net.u(), &u);
    assert_eq!(net.v(), &v);
    let c = net.uniform_alpha().unwrap();
    assert!((c - 1.0 / m as f64).abs() <= 1e-12);
}

#[test]
fn quantize_zero_sign_aggregate_gives_zero_scale() {
    // Two neurons whose sign outer products cancel exactly.
    let u = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
    let v = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let net = post_training_quantize(&u, &v, QuantizeFormula::LeastSquares).unwrap();
    assert_eq!(net.uniform_alpha(), Some(0.0));
}

#[test]
fn quantize_scale_is_stationary() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    for _ in 0..20 {
        let m = rng.gen_range(2..8);
        let d = rng.gen_range(1..5);
        let u = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.5..1.5));
        let v = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.5..1.5));
        let net = post_training_quantize(&u, &v, QuantizeFormula::LeastSquares).unwrap();
        let c = net.uniform_alpha().unwrap();
        let z_hat = net.u().transpose() * net.v();
        let z_star = u.transpose() * &v / m as f64;
        // d/dc ||c Zhat - Z*||^2 = 2 (c <Zhat,Zhat> - <Zhat,Z*>)
        let derivative = 2.0 * (c * z_hat.dot(&z_hat) - z_hat.dot(&z_star));
        assert!(derivative.abs() <= 1e-10, "derivative {derivative}");
    }
}

#[test]
fn published_formula_differs_from_least_squares_in_general() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let u = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
    let v = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
    let ls = post_training_quantize(&u, &v, QuantizeFormula::LeastSquares).unwrap();
    let pub_net = post_training_quantize(&u, &v, QuantizeFormula::Published).unwrap();
    assert_ne!(ls.uniform_alpha(), pub_net.uniform_alpha());
}

fn small_dataset(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Dataset::new(
        DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)),
        DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-2.0..2.0)),
        "small",
        SplitTag::Train,
        Provenance::Seed(seed),
    )
    .unwrap()
}

#[test]
fn oracle_large_beta_selects_nothing() {
    let dataset = small_dataset(3, 12, 3);
    let result = dictionary_oracle(&dataset, 1e6, LossKind::Squared).unwrap();
    assert!(result.atoms.is_empty());
    let zero_loss =
        loss_value(LossKind::Squared, &DVector::zeros(12), &dataset.targets_vector()).unwrap();
    assert!((result.objective - zero_loss).abs() <= 1e-12);
}

#[test]
fn oracle_d1_matches_scalar_soft_threshold() {
    let dataset = small_dataset(5, 10, 1);
    let beta = 0.02;
    let result = dictionary_oracle(&dataset, beta, LossKind::Squared).unwrap();

    // d = 1 atoms are +-(x o x); the problem collapses to a signed scalar:
    // w* = soft(a^T y, n beta d / 2) / ||a||^2 with a = x o x.
    let y = dataset.targets_vector();
    let a = DVector::from_fn(10, |i, _| dataset.x[(i, 0)] * dataset.x[(i, 0)]);
    let n = 10.0;
    let w = soft_threshold(a.dot(&y), n * beta * 1.0 / 2.0) / a.norm_squared();
    let want =
        loss_value(LossKind::Squared, &a.scale(w), &y).unwrap() + beta * 1.0 * w.abs();
    assert!((result.objective - want).abs() <= 1e-9, "{} vs {want}", result.objective);
}

#[test]
fn oracle_objective_matches_atom_recomputation() {
    let dataset = small_dataset(7, 14, 3);
    let beta = 5e-3;
    let result = dictionary_oracle(&dataset, beta, LossKind::Squared).unwrap();
    let mut yhat = DVector::zeros(14);
    for atom in &result.atoms {
        for i in 0..14 {
            let mut xu = 0.0;
            let mut xv = 0.0;
            for k in 0..3 {
                xu += dataset.x[(i, k)] * atom.u[k];
                xv += dataset.x[(i, k)] * atom.v[k];
            }
            yhat[i] += xu * xv * atom.coefficient;
        }
    }
    let recomputed = loss_value(LossKind::Squared, &yhat, &dataset.targets_vector()).unwrap()
        + beta * 3.0 * result.atoms.iter().map(|a| a.coefficient.abs()).sum::<f64>();
    assert!((result.objective - recomputed).abs() <= 1e-10);
}

#[test]
fn oracle_is_locally_optimal_under_coefficient_perturbation() {
    for loss in [LossKind::Squared, LossKind::Absolute] {
        let dataset = small_dataset(11, 12, 2);
        let beta = 1e-2;
        let result = dictionary_oracle(&dataset, beta, loss).unwrap();
        let y = dataset.targets_vector();
        let atom_vec = |atom: &OracleAtom| {
            DVector::from_fn(12, |i, _| {
                let mut xu = 0.0;
                let mut xv = 0.0;
                for k in 0..2 {
                    xu += dataset.x[(i, k)] * atom.u[k];
                    xv += dataset.x[(i, k)] * atom.v[k];
                }
                xu * xv
            })
        };
        let mut yhat = DVector::zeros(12);
        for atom in &result.atoms {
            yhat += atom_vec(atom).scale(atom.coefficient);
        }
        for (idx, atom) in result.atoms.iter().enumerate() {
            for delta in [1e-4, -1e-4] {
                let perturbed = &yhat + atom_vec(atom).scale(delta);
                let reg: f64 = result
                    .atoms
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let c =
                            if i == idx { a.coefficient + delta } else { a.coefficient };
                        c.abs()
                    })
                    .sum();
                let objective =
                    loss_value(loss, &perturbed, &y).unwrap() + beta * 2.0 * reg;
                assert!(
                    objective >= result.objective - 1e-9,
                    "{loss:?}: perturbing atom {idx} by {delta} improved \
                     {} -> {objective}",
                    result.objective
                );
            }
        }
    }
}

#[test]
fn oracle_absolute_loss_d1_matches_grid_search() {
    let dataset = small_dataset(13, 8, 1);
    let beta = 0.05;
    let result = dictionary_oracle(&dataset, beta, LossKind::Absolute).unwrap();

    let y = dataset.targets_vector();
    let a = DVector::from_fn(8, |i, _| dataset.x[(i, 0)] * dataset.x[(i, 0)]);
    let objective = |w: f64| {
        loss_value(LossKind::Absolute, &a.scale(w), &y).unwrap() + beta * w.abs()
    };
    let mut best = f64::INFINITY;
    let mut w = -5.0;
    while w <= 5.0 {
        best = best.min(objective(w));
        w += 1e-4;
    }
    assert!(result.objective <= best + 1e-6, "{} vs grid {best}", result.objective);
}

#[test]
fn oracle_rejects_large_dimension() {
    let dataset = small_dataset(17, 5, 7);
    match dictionary_oracle(&dataset, 1e-3, LossKind::Squared) {
        Err(QsdpError::OracleTooLarge { d: 7, atom_estimate }) => {
            assert_eq!(atom_estimate, 4u128.pow(7));
        }
        other => panic!("expected size rejection, got {other:?}"),
    }
}

#[test]
fn evaluate_zero_network_on_balanced_labels() {
    let x = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64 + 1.0);
    let y = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, -1.0, -1.0]);
    let dataset = Dataset::new(x, y, "balanced", SplitTag::Train, Provenance::Derived).unwrap();
    let zero = BilinearNetwork::with_uniform_alpha(
        DMatrix::from_element(1, 2, 1.0),
        DMatrix::from_element(1, 2, 1.0),
        0.0,
        InputKind::Raw,
    )
    .unwrap();
    let metrics = evaluate(&zero, &dataset, LossKind::Hinge, 0.1).unwrap();
    // Ties predict +1, so exactly the positive half is right.
    assert_eq!(metrics.accuracy, Some(0.5));
    assert_eq!(metrics.regularizer, 0.0);
}

#[test]
fn evaluate_planted_network_is_perfect() {
    let planted = planted_dataset(25, 5, 3, 19, SecondLayer::Nonnegative).unwrap();
    let labels = DMatrix::from_fn(25, 1, |i, _| {
        if planted.train.y[(i, 0)] >= 0.0 {
            1.0
        } else {
            -1.0
        }
    });
    let signed = Dataset::new(
        planted.train.x.clone(),
        labels,
        "signed",
        SplitTag::Train,
        Provenance::Derived,
    )
    .unwrap();
    let metrics = evaluate(&planted.network, &signed, LossKind::Hinge, 0.0).unwrap();
    assert_eq!(metrics.accuracy, Some(1.0));
}

#[test]
fn evaluate_objective_matches_recomputation() {
    let planted = planted_dataset(15, 4, 2, 23, SecondLayer::Free).unwrap();
    let beta = 0.03;
    let metrics = evaluate(&planted.network, &planted.train, LossKind::Squared, beta).unwrap();
    let yhat = DVector::from_fn(15, |i, _| {
        planted.network.forward_raw(&planted.train.row(i)).unwrap()
    });
    let want = loss_value(LossKind::Squared, &yhat, &planted.train.targets_vector()).unwrap()
        + beta * 4.0 * planted.network.alpha().iter().map(|a| a.abs()).sum::<f64>();
    assert!((metrics.objective - want).abs() <= 1e-12 * (1.0 + want.abs()));
}
