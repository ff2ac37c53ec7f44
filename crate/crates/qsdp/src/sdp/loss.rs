//! Convex losses and their proximal operators.
//!
//! All losses are normalized by the sample count: `l(z, y) = (1/n) sum_i
//! phi(z_i, y_i)` with `phi` the per-sample penalty. The prox solves
//! `argmin_z l(z, y) + (1/2t) ||z - v||^2` in closed form, coordinatewise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::QsdpError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `phi = (z - y)^2`
    Squared,
    /// `phi = |z - y|`
    Absolute,
    /// `phi = max(0, 1 - y z)`, targets must be exactly ±1.
    Hinge,
}

impl LossKind {
    fn check_targets(self, y: &[f64]) -> Result<()> {
        check_targets(self, y)
    }
}

/// Rejects target vectors the loss cannot handle (hinge needs ±1 labels).
pub(crate) fn check_targets(kind: LossKind, y: &[f64]) -> Result<()> {
    if kind == LossKind::Hinge && y.iter().any(|&t| t != 1.0 && t != -1.0) {
        return Err(QsdpError::InvalidInput("hinge loss requires targets in {-1, +1}".into()));
    }
    Ok(())
}

/// `(1/n) sum_i phi(yhat_i, y_i)`.
pub fn loss_value(kind: LossKind, yhat: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if yhat.len() != y.len() {
        return Err(QsdpError::DimensionMismatch(format!(
            "predictions have length {}, targets {}",
            yhat.len(),
            y.len()
        )));
    }
    kind.check_targets(y.as_slice())?;
    let n = y.len() as f64;
    let total: f64 = yhat.iter().zip(y.iter()).map(|(&p, &t)| per_sample(kind, p, t)).sum();
    Ok(total / n)
}

/// Matrix version for vector-output targets; the normalization stays `1/n`
/// (rows are samples), summing over classes.
pub fn loss_value_matrix(kind: LossKind, yhat: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if yhat.shape() != y.shape() {
        return Err(QsdpError::DimensionMismatch(format!(
            "predictions are {:?}, targets {:?}",
            yhat.shape(),
            y.shape()
        )));
    }
    kind.check_targets(y.as_slice())?;
    let n = y.nrows() as f64;
    let total: f64 = yhat.iter().zip(y.iter()).map(|(&p, &t)| per_sample(kind, p, t)).sum();
    Ok(total / n)
}

fn per_sample(kind: LossKind, p: f64, t: f64) -> f64 {
    match kind {
        LossKind::Squared => (p - t) * (p - t),
        LossKind::Absolute => (p - t).abs(),
        LossKind::Hinge => (1.0 - t * p).max(0.0),
    }
}

/// `argmin_z (1/n) sum phi(z_i, y_i) + (1/2t) ||z - v||^2`, elementwise.
pub fn loss_prox(kind: LossKind, v: &DVector<f64>, y: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if v.len() != y.len() {
        return Err(QsdpError::DimensionMismatch(format!(
            "prox point has length {}, targets {}",
            v.len(),
            y.len()
        )));
    }
    if t <= 0.0 {
        return Err(QsdpError::InvalidInput(format!("prox step {t} must be positive")));
    }
    kind.check_targets(y.as_slice())?;
    let n = y.len() as f64;
    Ok(DVector::from_fn(v.len(), |i, _| prox_scalar(kind, v[i], y[i], t / n)))
}

/// Matrix version; `n` is the row count, matching [`loss_value_matrix`].
pub fn loss_prox_matrix(
    kind: LossKind,
    v: &DMatrix<f64>,
    y: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>> {
    if v.shape() != y.shape() {
        return Err(QsdpError::DimensionMismatch(format!(
            "prox point is {:?}, targets {:?}",
            v.shape(),
            y.shape()
        )));
    }
    if t <= 0.0 {
        return Err(QsdpError::InvalidInput(format!("prox step {t} must be positive")));
    }
    kind.check_targets(y.as_slice())?;
    let n = y.nrows() as f64;
    Ok(DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        prox_scalar(kind, v[(i, j)], y[(i, j)], t / n)
    }))
}

/// Scalar prox of `w * phi(., target)` at `v`, i.e. the minimizer of
/// `w * phi(z, target) + (z - v)^2 / 2`.
fn prox_scalar(kind: LossKind, v: f64, target: f64, w: f64) -> f64 {
    match kind {
        LossKind::Squared => (v + 2.0 * w * target) / (1.0 + 2.0 * w),
        LossKind::Absolute => target + soft_threshold(v - target, w),
        LossKind::Hinge => {
            // Work in the margin variable m = target * z (target^2 = 1).
            let m = target * v;
            let m_new = if m < 1.0 - w {
                m + w
            } else if m <= 1.0 {
                1.0
            } else {
                m
            };
            target * m_new
        }
    }
}

pub(crate) fn soft_threshold(x: f64, width: f64) -> f64 {
    if x > width {
        x - width
    } else if x < -width {
        x + width
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    #[test]
    fn squared_loss_zero_at_targets() {
        let y = vec(&[1.0, -2.0, 0.5]);
        assert_eq!(loss_value(LossKind::Squared, &y, &y).unwrap(), 0.0);
    }

    #[test]
    fn squared_prox_approaches_input_as_step_vanishes() {
        let v = vec(&[3.0, -1.0]);
        let y = vec(&[0.0, 0.0]);
        let z = loss_prox(LossKind::Squared, &v, &y, 1e-12).unwrap();
        assert!((z - v).norm() < 1e-9);
    }

    #[test]
    fn absolute_prox_is_soft_threshold_toward_targets() {
        let v = vec(&[3.0, 0.4, -2.0]);
        let y = vec(&[1.0, 0.0, -1.0]);
        let n = 3.0;
        let t = 0.9;
        let z = loss_prox(LossKind::Absolute, &v, &y, t).unwrap();
        for i in 0..3 {
            let want = y[i] + soft_threshold(v[i] - y[i], t / n);
            assert!((z[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn hinge_rejects_non_sign_targets() {
        let v = vec(&[0.0]);
        let y = vec(&[0.5]);
        assert!(loss_value(LossKind::Hinge, &v, &y).is_err());
        assert!(loss_prox(LossKind::Hinge, &v, &y, 1.0).is_err());
    }

    // Brute-force 1-D minimization oracle for prox correctness.
    fn grid_minimize(kind: LossKind, v: f64, y: f64, t: f64, n: f64) -> f64 {
        let objective = |z: f64| per_sample(kind, z, y) / n + (z - v) * (z - v) / (2.0 * t);
        let mut best = v;
        let mut best_val = objective(v);
        // Coarse-to-fine grid around the relevant range.
        let mut center = v;
        let mut radius = 4.0 + v.abs() + y.abs();
        for _ in 0..40 {
            let mut local_best = center;
            let mut local_val = objective(center);
            for k in -50..=50 {
                let z = center + radius * (k as f64) / 50.0;
                let val = objective(z);
                if val < local_val {
                    local_val = val;
                    local_best = z;
                }
            }
            center = local_best;
            radius /= 10.0;
            if local_val < best_val {
                best_val = local_val;
                best = local_best;
            }
        }
        best
    }

    #[test]
    fn prox_matches_grid_oracle() {
        let cases = [
            (LossKind::Squared, 2.0, 0.5, 0.7),
            (LossKind::Absolute, -1.5, 0.2, 1.3),
            (LossKind::Absolute, 0.05, 0.0, 2.0),
            (LossKind::Hinge, 0.3, 1.0, 0.8),
            (LossKind::Hinge, 1.4, 1.0, 0.8),
            (LossKind::Hinge, 0.97, 1.0, 0.1),
            (LossKind::Hinge, -0.5, -1.0, 0.6),
        ];
        for (kind, v, y, t) in cases {
            let n = 4.0;
            let got = loss_prox(
                kind,
                &DVector::from_element(4, v),
                &DVector::from_element(4, y),
                t,
            )
            .unwrap()[0];
            let want = grid_minimize(kind, v, y, t, n);
            assert!(
                (got - want).abs() <= 1e-8,
                "{kind:?} prox({v}, {y}, {t}) = {got}, oracle {want}"
            );
        }
    }
}
