//! Comparison methods: gradient-trained bilinear networks with post-training
//! quantization, and a brute-force sign-pair dictionary oracle that computes
//! the exact combinatorial optimum for small input dimension.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::QsdpError;
use crate::model::{BilinearNetwork, InputKind, VectorBilinearNetwork};
use crate::sdp::loss::soft_threshold;
use crate::sdp::{loss_prox, loss_value, LossKind};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondLayerMode {
    /// Second layer pinned to `1/m` throughout training.
    FixedUniform,
    /// Second layer trained along with the sign layers.
    Free,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub neurons: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub second_layer: SecondLayerMode,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(QsdpError::InvalidInput("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(QsdpError::InvalidInput("epoch count must be >= 1".into()));
        }
        if self.neurons == 0 || self.batch_size == 0 {
            return Err(QsdpError::InvalidInput("neurons and batch size must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            neurons: 100,
            learning_rate: 1e-2,
            momentum: 0.9,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            second_layer: SecondLayerMode::FixedUniform,
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub seconds: f64,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Real-valued weights produced by gradient training.
#[derive(Debug, Clone)]
pub struct TrainedBilinear {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub curve: Vec<EpochStat>,
}

/// Analytic gradients of the batch loss
/// `(1/n) sum_i phi(yhat_i, y_i)` with `yhat_i = sum_j (x_i^T u_j)(x_i^T v_j) alpha_j`.
///
/// Returns `(grad_u, grad_v, grad_alpha, loss)`.
pub fn bilinear_loss_gradients(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    alpha: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    loss: LossKind,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, f64) {
    let n = x.nrows();
    let m = u.nrows();
    let p = x * u.transpose(); // n x m, entries x_i^T u_j
    let q = x * v.transpose();
    let mut yhat = DVector::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..m {
            acc += p[(i, j)] * q[(i, j)] * alpha[j];
        }
        yhat[i] = acc;
    }
    let nf = n as f64;
    let loss_val = loss_value(loss, &yhat, y).expect("targets validated by caller");
    let g = DVector::from_fn(n, |i, _| match loss {
        LossKind::Squared => 2.0 * (yhat[i] - y[i]) / nf,
        LossKind::Absolute => {
            let r = yhat[i] - y[i];
            if r > 0.0 {
                1.0 / nf
            } else if r < 0.0 {
                -1.0 / nf
            } else {
                0.0
            }
        }
        LossKind::Hinge => {
            if 1.0 - y[i] * yhat[i] > 0.0 {
                -y[i] / nf
            } else {
                0.0
            }
        }
    });

    // grad_U[j, :] = sum_i g_i alpha_j q_ij x_i, and symmetrically for V.
    let mut gq = q.clone();
    let mut gp = p.clone();
    for i in 0..n {
        gq.row_mut(i).scale_mut(g[i]);
        gp.row_mut(i).scale_mut(g[i]);
    }
    let mut grad_u = gq.transpose() * x;
    let mut grad_v = gp.transpose() * x;
    for j in 0..m {
        grad_u.row_mut(j).scale_mut(alpha[j]);
        grad_v.row_mut(j).scale_mut(alpha[j]);
    }
    let grad_alpha = DVector::from_fn(m, |j, _| {
        let mut acc = 0.0;
        for i in 0..n {
            acc += g[i] * p[(i, j)] * q[(i, j)];
        }
        acc
    });
    (grad_u, grad_v, grad_alpha, loss_val)
}

/// Trains real-valued bilinear weights with mini-batch gradient descent and
/// momentum. Divergence (non-finite loss) aborts with the last finite epoch.
pub fn sgd_train_bilinear(
    dataset: &Dataset,
    config: &TrainConfig,
    loss: LossKind,
) -> Result<TrainedBilinear> {
    config.validate()?;
    if dataset.classes() != 1 {
        return Err(QsdpError::DimensionMismatch(
            "baseline training expects scalar targets".into(),
        ));
    }
    let n = dataset.n();
    let d = dataset.d();
    let m = config.neurons;
    let y = dataset.targets_vector();
    crate::sdp::loss::check_targets(loss, y.as_slice())?;

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let init_scale = 1.0 / (d as f64).sqrt();
    let mut u = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal) * init_scale);
    let mut v = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal) * init_scale);
    let mut alpha = DVector::from_element(m, 1.0 / m as f64);

    let mut vel_u = DMatrix::zeros(m, d);
    let mut vel_v = DMatrix::zeros(m, d);
    let mut vel_alpha = DVector::zeros(m);

    let classification = y.iter().all(|&t| t == 1.0 || t == -1.0);
    let start = Instant::now();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_finite = f64::INFINITY;
    let full_batch = config.batch_size >= n;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = None;
        for chunk in order.chunks(config.batch_size) {
            let (xb, yb) = if full_batch {
                (dataset.x.clone(), y.clone())
            } else {
                let xb = DMatrix::from_fn(chunk.len(), d, |i, j| dataset.x[(chunk[i], j)]);
                let yb = DVector::from_fn(chunk.len(), |i, _| y[chunk[i]]);
                (xb, yb)
            };
            let (gu, gv, ga, batch_loss) =
                bilinear_loss_gradients(&u, &v, &alpha, &xb, &yb, loss);
            if full_batch {
                epoch_loss = Some(batch_loss);
            }
            vel_u = vel_u.scale(config.momentum) - gu.scale(config.learning_rate);
            vel_v = vel_v.scale(config.momentum) - gv.scale(config.learning_rate);
            u += &vel_u;
            v += &vel_v;
            if config.second_layer == SecondLayerMode::Free {
                vel_alpha = vel_alpha.scale(config.momentum) - ga.scale(config.learning_rate);
                alpha += &vel_alpha;
            }
        }

        let (loss_now, acc) = match epoch_loss {
            Some(l) if !classification => (l, None),
            _ => {
                let yhat = batch_predictions(&u, &v, &alpha, &dataset.x);
                let l = loss_value(loss, &yhat, &y)?;
                let acc = classification.then(|| sign_accuracy(&yhat, &y));
                (l, acc)
            }
        };
        if !loss_now.is_finite() {
            return Err(QsdpError::TrainingDiverged { epoch, last_loss: last_finite });
        }
        last_finite = loss_now;
        curve.push(EpochStat {
            epoch,
            seconds: start.elapsed().as_secs_f64(),
            loss: loss_now,
            accuracy: acc,
        });
    }

    Ok(TrainedBilinear { u, v, alpha, curve })
}

fn batch_predictions(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    alpha: &DVector<f64>,
    x: &DMatrix<f64>,
) -> DVector<f64> {
    let p = x * u.transpose();
    let q = x * v.transpose();
    DVector::from_fn(x.nrows(), |i, _| {
        let mut acc = 0.0;
        for j in 0..u.nrows() {
            acc += p[(i, j)] * q[(i, j)] * alpha[j];
        }
        acc
    })
}

fn sign_accuracy(yhat: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let hits = yhat
        .iter()
        .zip(y.iter())
        .filter(|(&p, &t)| (if p >= 0.0 { 1.0 } else { -1.0 }) == t)
        .count();
    hits as f64 / y.len() as f64
}

/// Which scalar the quantization step uses for the uniform second layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizeFormula {
    /// Least-squares minimizer of `||c Zhat - Z*||_F^2`: `<Zhat, Z*> / <Zhat, Zhat>`.
    LeastSquares,
    /// The published scalar `<Zhat, Z*> / <Z*, Z*>`, kept for comparison;
    /// it does not minimize the stated objective in general.
    Published,
}

/// Post-training quantization of real weights trained with the uniform `1/m`
/// second layer: signs of the weights plus one least-squares scalar matching
/// `c * sum_j sign(u_j) sign(v_j)^T` to `(1/m) sum_j u_j v_j^T`.
pub fn post_training_quantize(
    u_real: &DMatrix<f64>,
    v_real: &DMatrix<f64>,
    formula: QuantizeFormula,
) -> Result<BilinearNetwork> {
    let m = u_real.nrows() as f64;
    let u_sign = u_real.map(|e| if e >= 0.0 { 1.0 } else { -1.0 });
    let v_sign = v_real.map(|e| if e >= 0.0 { 1.0 } else { -1.0 });
    let z_hat = u_sign.transpose() * &v_sign;
    let z_star = u_real.transpose() * v_real / m;
    let c = match formula {
        QuantizeFormula::LeastSquares => {
            let denom = z_hat.dot(&z_hat);
            if denom == 0.0 {
                0.0
            } else {
                z_hat.dot(&z_star) / denom
            }
        }
        QuantizeFormula::Published => {
            let denom = z_star.dot(&z_star);
            if denom == 0.0 {
                0.0
            } else {
                z_hat.dot(&z_star) / denom
            }
        }
    };
    BilinearNetwork::with_uniform_alpha(u_sign, v_sign, c, InputKind::Raw)
}

/// One sign-pair atom selected by the oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleAtom {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictionaryOracleResult {
    /// Exact optimum of the combinatorial training problem (unbounded width).
    pub objective: f64,
    pub atoms: Vec<OracleAtom>,
}

const ORACLE_MAX_D: usize = 6;

/// Exact global optimum by enumerating all sign pairs `(u, v)` up to the
/// simultaneous negation symmetry, forming prediction atoms `(Xu) o (Xv)`,
/// and solving the l1-regularized convex problem over atom coefficients;
/// with unbounded width this equals the combinatorial optimum.
pub fn dictionary_oracle(
    dataset: &Dataset,
    beta: f64,
    loss: LossKind,
) -> Result<DictionaryOracleResult> {
    let d = dataset.d();
    if d > ORACLE_MAX_D {
        return Err(QsdpError::OracleTooLarge { d, atom_estimate: 4u128.pow(d as u32) });
    }
    if loss == LossKind::Hinge {
        return Err(QsdpError::InvalidInput(
            "dictionary oracle supports squared and absolute losses".into(),
        ));
    }
    if dataset.classes() != 1 {
        return Err(QsdpError::DimensionMismatch("oracle expects scalar targets".into()));
    }
    let n = dataset.n();
    let y = dataset.targets_vector();

    // Canonical representatives: u_0 = +1 kills the (u, v) ~ (-u, -v) symmetry.
    let mut atoms: Vec<(Vec<f64>, Vec<f64>, DVector<f64>)> = Vec::new();
    let signs = |bits: usize, force_first: bool| -> Vec<f64> {
        (0..d)
            .map(|i| {
                if force_first && i == 0 {
                    1.0
                } else {
                    let bit = if force_first { i - 1 } else { i };
                    if bits >> bit & 1 == 1 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            })
            .collect()
    };
    let half = 1usize << (d - 1);
    let full = 1usize << d;
    for ub in 0..half {
        let u = signs(ub, true);
        for vb in 0..full {
            let v = signs(vb, false);
            let atom = DVector::from_fn(n, |i, _| {
                let mut xu = 0.0;
                let mut xv = 0.0;
                for k in 0..d {
                    xu += dataset.x[(i, k)] * u[k];
                    xv += dataset.x[(i, k)] * v[k];
                }
                xu * xv
            });
            atoms.push((u.clone(), v, atom));
        }
    }

    let width = beta * d as f64;
    let coeffs = match loss {
        LossKind::Squared => lasso_coordinate_descent(&atoms, &y, width, 1e-10),
        LossKind::Absolute => absolute_loss_l1(&atoms, &y, width),
        LossKind::Hinge => unreachable!(),
    };

    let mut predictions = DVector::zeros(n);
    for (c, (_, _, a)) in coeffs.iter().zip(&atoms) {
        predictions += a.scale(*c);
    }
    let objective = loss_value(loss, &predictions, &y)?
        + width * coeffs.iter().map(|c| c.abs()).sum::<f64>();

    let selected = coeffs
        .iter()
        .zip(&atoms)
        .filter(|(c, _)| **c != 0.0)
        .map(|(c, (u, v, _))| OracleAtom { u: u.clone(), v: v.clone(), coefficient: *c })
        .collect();
    Ok(DictionaryOracleResult { objective, atoms: selected })
}

/// Exact coordinate descent for `(1/n)||A c - y||^2 + width * ||c||_1`,
/// iterated until the KKT violation falls below `tol`.
fn lasso_coordinate_descent(
    atoms: &[(Vec<f64>, Vec<f64>, DVector<f64>)],
    y: &DVector<f64>,
    width: f64,
    tol: f64,
) -> Vec<f64> {
    let n = y.len() as f64;
    let k = atoms.len();
    let mut c = vec![0.0_f64; k];
    let mut residual = -y.clone(); // A c - y at c = 0
    let norms: Vec<f64> = atoms.iter().map(|(_, _, a)| 2.0 / n * a.norm_squared()).collect();

    for _ in 0..100_000 {
        let mut worst = 0.0_f64;
        for j in 0..k {
            if norms[j] == 0.0 {
                continue;
            }
            let a = &atoms[j].2;
            let grad = 2.0 / n * a.dot(&residual);
            let violation = if c[j] == 0.0 {
                (grad.abs() - width).max(0.0)
            } else {
                (grad + width * c[j].signum()).abs()
            };
            worst = worst.max(violation);
            let target = c[j] - grad / norms[j];
            let updated = soft_threshold(target, width / norms[j]);
            let delta = updated - c[j];
            if delta != 0.0 {
                residual += a.scale(delta);
                c[j] = updated;
            }
        }
        if worst <= tol {
            break;
        }
    }
    c
}

/// l1 loss with l1 penalty via splitting: the prediction copy gets the loss
/// prox, the coefficient step is a lasso subproblem solved by warm-started
/// coordinate descent. Plain coordinate descent is not sound for this
/// nonsmooth composite, which is why the splitting is used.
fn absolute_loss_l1(
    atoms: &[(Vec<f64>, Vec<f64>, DVector<f64>)],
    y: &DVector<f64>,
    width: f64,
) -> Vec<f64> {
    let n = y.len();
    let k = atoms.len();
    let sigma = 1.0;
    let mut c = vec![0.0_f64; k];
    let mut z = DVector::zeros(n);
    let mut dual = DVector::zeros(n);
    let norms: Vec<f64> = atoms.iter().map(|(_, _, a)| sigma * a.norm_squared()).collect();
    let mut ac = DVector::zeros(n);

    for _ in 0..20_000 {
        // c-step: min width ||c||_1 + sigma/2 ||A c - t||^2, warm started.
        let t = &z - &dual;
        for _ in 0..40 {
            let mut moved = 0.0_f64;
            for j in 0..k {
                if norms[j] == 0.0 {
                    continue;
                }
                let a = &atoms[j].2;
                let grad = sigma * a.dot(&(&ac - &t));
                let target = c[j] - grad / norms[j];
                let updated = soft_threshold(target, width / norms[j]);
                let delta = updated - c[j];
                if delta != 0.0 {
                    ac += a.scale(delta);
                    c[j] = updated;
                    moved = moved.max(delta.abs());
                }
            }
            if moved <= 1e-13 {
                break;
            }
        }
        // z-step: prox of the normalized l1 loss.
        let point = &ac + &dual;
        let z_new = loss_prox(LossKind::Absolute, &point, y, 1.0 / sigma)
            .expect("dimensions fixed above");
        let primal = (&ac - &z_new).norm();
        let dual_shift = sigma * (&z_new - &z).norm();
        z = z_new;
        dual += &ac - &z;
        if primal <= 1e-12 && dual_shift <= 1e-12 {
            break;
        }
    }
    // Snap coefficients that the splitting left at noise level.
    for cj in c.iter_mut() {
        if cj.abs() < 1e-12 {
            *cj = 0.0;
        }
    }
    c
}

/// Evaluation metrics against a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    /// Loss + `beta d sum_j |alpha_j|`.
    pub objective: f64,
    pub loss: f64,
    pub regularizer: f64,
    /// Fraction of correct sign (or argmax) predictions; present only for
    /// classification-shaped targets.
    pub accuracy: Option<f64>,
}

/// Evaluates a scalar bilinear network: objective with the `beta d` weighted
/// second-layer l1 norm, plus sign accuracy when targets are ±1 (ties
/// predict +1).
pub fn evaluate(
    network: &BilinearNetwork,
    dataset: &Dataset,
    loss: LossKind,
    beta: f64,
) -> Result<Metrics> {
    if dataset.classes() != 1 {
        return Err(QsdpError::DimensionMismatch("evaluate expects scalar targets".into()));
    }
    let y = dataset.targets_vector();
    let yhat = DVector::from_fn(dataset.n(), |i, _| {
        network.forward_raw(&dataset.row(i)).expect("dimension checked per row")
    });
    metrics_from_predictions(&yhat, &y, network.alpha().iter(), dataset.d(), loss, beta)
}

/// Vector-output version; accuracy is argmax agreement with one-hot targets.
pub fn evaluate_vector(
    network: &VectorBilinearNetwork,
    dataset: &Dataset,
    loss: LossKind,
    beta: f64,
) -> Result<Metrics> {
    if dataset.classes() != network.classes() {
        return Err(QsdpError::DimensionMismatch(format!(
            "network emits {} classes, dataset has {}",
            network.classes(),
            dataset.classes()
        )));
    }
    let mut yhat = DMatrix::zeros(dataset.n(), dataset.classes());
    for i in 0..dataset.n() {
        let out = network.forward(&dataset.row(i))?;
        for k in 0..dataset.classes() {
            yhat[(i, k)] = out[k];
        }
    }
    let loss_val = crate::sdp::loss_value_matrix(loss, &yhat, &dataset.y)?;
    let reg = beta
        * dataset.d() as f64
        * network.alpha().row_iter().map(|r| r.iter().map(|a| a.abs()).sum::<f64>()).sum::<f64>();
    let accuracy = one_hot_accuracy(&yhat, &dataset.y);
    Ok(Metrics { objective: loss_val + reg, loss: loss_val, regularizer: reg, accuracy })
}

/// Argmax accuracy of a prediction matrix against one-hot targets (used for
/// SDP predictions as well as sampled networks).
pub fn matrix_accuracy(yhat: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<f64> {
    one_hot_accuracy(yhat, y)
}

fn one_hot_accuracy(yhat: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<f64> {
    let valid = y
        .row_iter()
        .all(|r| r.iter().all(|&v| v == 0.0 || v == 1.0) && (r.sum() - 1.0).abs() < 1e-12);
    if !valid {
        return None;
    }
    let n = y.nrows();
    let mut hits = 0;
    for i in 0..n {
        let pred = argmax_row(yhat, i);
        let truth = argmax_row(y, i);
        if pred == truth {
            hits += 1;
        }
    }
    Some(hits as f64 / n as f64)
}

fn argmax_row(m: &DMatrix<f64>, i: usize) -> usize {
    let mut best = 0;
    for k in 1..m.ncols() {
        if m[(i, k)] > m[(i, best)] {
            best = k;
        }
    }
    best
}

fn metrics_from_predictions<'a>(
    yhat: &DVector<f64>,
    y: &DVector<f64>,
    alpha: impl Iterator<Item = &'a f64>,
    d: usize,
    loss: LossKind,
    beta: f64,
) -> Result<Metrics> {
    let loss_val = loss_value(loss, yhat, y)?;
    let reg = beta * d as f64 * alpha.map(|a| a.abs()).sum::<f64>();
    let classification = y.iter().all(|&t| t == 1.0 || t == -1.0);
    let accuracy = classification.then(|| sign_accuracy(yhat, y));
    Ok(Metrics { objective: loss_val + reg, loss: loss_val, regularizer: reg, accuracy })
}

/// Metrics for raw scalar predictions (e.g. the SDP's own outputs).
pub fn evaluate_predictions(
    yhat: &DVector<f64>,
    dataset: &Dataset,
    loss: LossKind,
) -> Result<Metrics> {
    let y = dataset.targets_vector();
    metrics_from_predictions(yhat, &y, std::iter::empty(), dataset.d(), loss, 0.0)
}

/// Evaluates any serialized network kind against a dataset, lifting inputs
/// when the network expects lifted matrices.
pub fn evaluate_network(
    network: &crate::model::Network,
    dataset: &Dataset,
    loss: LossKind,
    beta: f64,
) -> Result<Metrics> {
    use crate::model::{lift_input, Network};
    if dataset.classes() != 1 {
        return Err(QsdpError::DimensionMismatch("evaluate expects scalar targets".into()));
    }
    let y = dataset.targets_vector();
    let forward_lifted_checked = |kind: InputKind, i: usize| -> Result<crate::model::LiftedInput> {
        match kind {
            InputKind::Lifted { levels, a, b, c } => lift_input(&dataset.row(i), levels, a, b, c),
            InputKind::Raw => unreachable!("caller checked the kind"),
        }
    };
    let mut yhat = DVector::zeros(dataset.n());
    for i in 0..dataset.n() {
        yhat[i] = match network {
            Network::Bilinear(net) => match net.input_kind() {
                InputKind::Raw => net.forward_raw(&dataset.row(i))?,
                kind @ InputKind::Lifted { .. } => {
                    net.forward_lifted(&forward_lifted_checked(kind, i)?)?
                }
            },
            Network::Quadratic(net) => match net.input_kind() {
                InputKind::Raw => net.forward_raw(&dataset.row(i))?,
                kind @ InputKind::Lifted { .. } => {
                    net.forward_lifted(&forward_lifted_checked(kind, i)?)?
                }
            },
            Network::Poly(net) => net.forward(&dataset.row(i))?,
        };
    }
    let alpha = match network {
        Network::Bilinear(net) => net.alpha().clone(),
        Network::Quadratic(net) => net.alpha().clone(),
        Network::Poly(net) => net.alpha().clone(),
    };
    metrics_from_predictions(&yhat, &y, alpha.iter(), dataset.d(), loss, beta)
}

#[cfg(test)]
mod tests;
