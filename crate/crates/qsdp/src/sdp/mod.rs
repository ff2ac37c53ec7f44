//! The lower-bounding SDP family and its operator-splitting solver.
//!
//! Three variants share the diagonally constrained form:
//!
//! * `bilinear` — one `2d x 2d` PSD variable `Q = [[V, Z], [Z^T, W]]` with
//!   `Q_jj = rho` and predictions `yhat_i = 2 x_i^T Z x_i`; objective
//!   `l(yhat, y) + beta d rho`.
//! * `quadratic` — two `d x d` PSD variables with common diagonals `rho_1`,
//!   `rho_2` and predictions `x_i^T (Z_1 - Z_2) x_i`; objective
//!   `l(yhat, y) + beta d (rho_1 + rho_2)`.
//! * `vector_output` — one bilinear-style variable per output class.
//!
//! The optimal value is a lower bound on the corresponding combinatorial
//! quantized training problem; the solver reports it through
//! [`SdpSolution::lower_bound`].

mod admm;
pub mod loss;

pub use loss::{loss_prox, loss_prox_matrix, loss_value, loss_value_matrix, LossKind};

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::QsdpError;
use crate::linalg::project_psd;
use crate::Result;

use admm::{Engine, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpVariant {
    Bilinear,
    Quadratic,
    VectorOutput { classes: usize },
}

/// Stopping tolerances and penalty schedule for the splitting solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iterations: usize,
    pub initial_penalty: f64,
    /// Residual ratio that triggers a penalty change.
    pub adapt_threshold: f64,
    /// Multiplicative penalty step.
    pub adapt_factor: f64,
    pub psd_tol: f64,
    pub diag_tol: f64,
    /// Reserved: the splitting method is deterministic and draws no random
    /// numbers; the seed is echoed into reports for pipeline bookkeeping.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iterations: 100_000,
            initial_penalty: 1.0,
            adapt_threshold: 10.0,
            adapt_factor: 2.0,
            psd_tol: 1e-8,
            diag_tol: 1e-8,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// Tightened tolerances for oracle-grade comparisons.
    pub fn tight(eps: f64) -> Self {
        Self { eps_abs: eps, eps_rel: eps, ..Self::default() }
    }
}

/// A fully specified training-relaxation instance.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub variant: SdpVariant,
    /// `n x d` data matrix; rows are samples.
    pub x: DMatrix<f64>,
    /// `n x C` target matrix (`C = 1` for scalar output).
    pub y: DMatrix<f64>,
    pub loss: LossKind,
    pub beta: f64,
    pub config: SolverConfig,
}

impl SdpProblem {
    pub fn bilinear(
        x: DMatrix<f64>,
        y: DVector<f64>,
        loss: LossKind,
        beta: f64,
        config: SolverConfig,
    ) -> Result<Self> {
        let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        Self::new(SdpVariant::Bilinear, x, y, loss, beta, config)
    }

    pub fn quadratic(
        x: DMatrix<f64>,
        y: DVector<f64>,
        loss: LossKind,
        beta: f64,
        config: SolverConfig,
    ) -> Result<Self> {
        let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        Self::new(SdpVariant::Quadratic, x, y, loss, beta, config)
    }

    pub fn vector_output(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        loss: LossKind,
        beta: f64,
        config: SolverConfig,
    ) -> Result<Self> {
        let classes = y.ncols();
        Self::new(SdpVariant::VectorOutput { classes }, x, y, loss, beta, config)
    }

    pub fn new(
        variant: SdpVariant,
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        loss: LossKind,
        beta: f64,
        config: SolverConfig,
    ) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(QsdpError::InvalidInput("data matrix must be nonempty".into()));
        }
        if y.nrows() != x.nrows() {
            return Err(QsdpError::DimensionMismatch(format!(
                "targets have {} rows, data has {}",
                y.nrows(),
                x.nrows()
            )));
        }
        let expected_cols = match variant {
            SdpVariant::VectorOutput { classes } => {
                if classes == 0 {
                    return Err(QsdpError::InvalidInput("class count must be >= 1".into()));
                }
                classes
            }
            _ => 1,
        };
        if y.ncols() != expected_cols {
            return Err(QsdpError::DimensionMismatch(format!(
                "targets have {} columns, variant expects {}",
                y.ncols(),
                expected_cols
            )));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(QsdpError::InvalidInput(format!(
                "regularization beta = {beta} must be finite and nonnegative"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(QsdpError::InvalidInput("data or targets contain NaN/Inf".into()));
        }
        loss::check_targets(loss, y.as_slice())?;
        Ok(Self { variant, x, y, loss, beta, config })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// Matrix variables of a solved instance.
#[derive(Debug, Clone)]
pub enum SolutionMatrices {
    Bilinear { q: DMatrix<f64>, rho: f64 },
    Quadratic { z1: DMatrix<f64>, z2: DMatrix<f64>, rho1: f64, rho2: f64 },
    VectorOutput { q: Vec<DMatrix<f64>>, rho: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub variant: SdpVariant,
    pub loss: LossKind,
    pub beta: f64,
    pub n: usize,
    pub d: usize,
    pub matrices: SolutionMatrices,
    /// `n x C` predictions recomputed from the returned matrices.
    pub predictions: DMatrix<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
    pub config: SolverConfig,
}

impl SdpSolution {
    /// The relaxation value `d_SDP`, a lower bound on the combinatorial
    /// training objective. Refuses to answer for non-converged solutions.
    pub fn lower_bound(&self) -> Result<f64> {
        if !self.converged {
            return Err(QsdpError::NotConverged);
        }
        Ok(self.objective)
    }

    /// Named blocks `(V, Z, W, rho)` of a bilinear solution.
    pub fn bilinear_blocks(&self) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64)> {
        match &self.matrices {
            SolutionMatrices::Bilinear { q, rho } => {
                let (v, z, w) = split_blocks(q, self.d);
                Some((v, z, w, *rho))
            }
            _ => None,
        }
    }

    /// Named blocks of class `k` of a vector-output solution (or of the
    /// single block when the variant is bilinear and `k == 0`).
    pub fn class_blocks(&self, k: usize) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64)> {
        match &self.matrices {
            SolutionMatrices::Bilinear { .. } if k == 0 => self.bilinear_blocks(),
            SolutionMatrices::VectorOutput { q, rho } => {
                let qk = q.get(k)?;
                let (v, z, w) = split_blocks(qk, self.d);
                Some((v, z, w, rho[k]))
            }
            _ => None,
        }
    }

    pub fn classes(&self) -> usize {
        match self.variant {
            SdpVariant::VectorOutput { classes } => classes,
            _ => 1,
        }
    }

    /// Scalar predictions for single-output variants.
    pub fn predictions_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.predictions.column(0).as_slice())
    }

    /// Predictions of the relaxation on fresh rows (`n' x d` matrix),
    /// using the stored matrix variables.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.d {
            return Err(QsdpError::DimensionMismatch(format!(
                "rows have {} features, solution expects {}",
                x.ncols(),
                self.d
            )));
        }
        let n = x.nrows();
        let d = self.d;
        Ok(match &self.matrices {
            SolutionMatrices::Bilinear { q, .. } => {
                let z = q.view((0, d), (d, d)).into_owned();
                DMatrix::from_fn(n, 1, |i, _| 2.0 * quad_form(x, i, &z))
            }
            SolutionMatrices::Quadratic { z1, z2, .. } => {
                let diff = z1 - z2;
                DMatrix::from_fn(n, 1, |i, _| quad_form(x, i, &diff))
            }
            SolutionMatrices::VectorOutput { q, .. } => {
                let zs: Vec<DMatrix<f64>> =
                    q.iter().map(|qk| qk.view((0, d), (d, d)).into_owned()).collect();
                DMatrix::from_fn(n, zs.len(), |i, k| 2.0 * quad_form(x, i, &zs[k]))
            }
        })
    }

    /// Sum of the trace variables.
    pub fn rho_sum(&self) -> f64 {
        match &self.matrices {
            SolutionMatrices::Bilinear { rho, .. } => *rho,
            SolutionMatrices::Quadratic { rho1, rho2, .. } => rho1 + rho2,
            SolutionMatrices::VectorOutput { rho, .. } => rho.iter().sum(),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SolutionJson::from(self))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let json: SolutionJson = serde_json::from_str(s)?;
        json.try_into()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

fn split_blocks(q: &DMatrix<f64>, d: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let v = q.view((0, 0), (d, d)).into_owned();
    let z = q.view((0, d), (d, d)).into_owned();
    let w = q.view((d, d), (d, d)).into_owned();
    (v, z, w)
}

/// Solves the relaxation and returns a polished, feasible solution.
///
/// Non-convergence within the iteration cap is an error carrying the last
/// residuals. The returned matrices satisfy the diagonal ties exactly and are
/// PSD up to eigensolver roundoff; predictions and objective are recomputed
/// from the returned variables.
pub fn solve_sdp(problem: &SdpProblem) -> Result<SdpSolution> {
    let start = Instant::now();
    let structure = match problem.variant {
        SdpVariant::Bilinear => Structure::Bilinear,
        SdpVariant::Quadratic => Structure::Quadratic,
        SdpVariant::VectorOutput { classes } => Structure::Vector { classes },
    };
    let engine = Engine::new(
        &problem.x,
        &problem.y,
        problem.loss,
        problem.beta,
        &problem.config,
        structure,
    )?;
    let raw = engine.run()?;

    // Polish: exact PSD via eigenvalue clipping, then a diagonal congruence
    // scaling that pins every diagonal entry to rho without leaving the cone.
    let polished: Vec<(DMatrix<f64>, f64)> = raw
        .blocks
        .iter()
        .zip(&raw.rho)
        .map(|(z, &rho)| polish_block(z, rho))
        .collect();

    let d = problem.d();
    let n = problem.n();
    let predictions = match problem.variant {
        SdpVariant::Bilinear => {
            let z = polished[0].0.view((0, d), (d, d)).into_owned();
            DMatrix::from_fn(n, 1, |i, _| 2.0 * quad_form(&problem.x, i, &z))
        }
        SdpVariant::Quadratic => {
            let diff = &polished[0].0 - &polished[1].0;
            DMatrix::from_fn(n, 1, |i, _| quad_form(&problem.x, i, &diff))
        }
        SdpVariant::VectorOutput { classes } => {
            let zs: Vec<DMatrix<f64>> = (0..classes)
                .map(|k| polished[k].0.view((0, d), (d, d)).into_owned())
                .collect();
            DMatrix::from_fn(n, classes, |i, k| 2.0 * quad_form(&problem.x, i, &zs[k]))
        }
    };

    let rho_sum: f64 = polished.iter().map(|(_, r)| r).sum();
    let objective = loss_value_matrix(problem.loss, &predictions, &problem.y)?
        + problem.beta * d as f64 * rho_sum;

    let matrices = match problem.variant {
        SdpVariant::Bilinear => {
            let (q, rho) = polished.into_iter().next().expect("one block");
            SolutionMatrices::Bilinear { q, rho }
        }
        SdpVariant::Quadratic => {
            let mut it = polished.into_iter();
            let (z1, rho1) = it.next().expect("two blocks");
            let (z2, rho2) = it.next().expect("two blocks");
            SolutionMatrices::Quadratic { z1, z2, rho1, rho2 }
        }
        SdpVariant::VectorOutput { .. } => {
            let (q, rho) = polished.into_iter().unzip();
            SolutionMatrices::VectorOutput { q, rho }
        }
    };

    Ok(SdpSolution {
        variant: problem.variant,
        loss: problem.loss,
        beta: problem.beta,
        n,
        d,
        matrices,
        predictions,
        objective,
        primal_residual: raw.primal_residual,
        dual_residual: raw.dual_residual,
        iterations: raw.iterations,
        converged: true,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: problem.config.clone(),
    })
}

fn quad_form(x: &DMatrix<f64>, i: usize, m: &DMatrix<f64>) -> f64 {
    let xi = x.row(i);
    let mut total = 0.0;
    for r in 0..m.nrows() {
        let mut row = 0.0;
        for c in 0..m.ncols() {
            row += m[(r, c)] * xi[c];
        }
        total += xi[r] * row;
    }
    total
}

fn polish_block(z: &DMatrix<f64>, rho: f64) -> (DMatrix<f64>, f64) {
    let side = z.nrows();
    let rho = rho.max(0.0);
    if rho <= 1e-12 {
        return (DMatrix::zeros(side, side), 0.0);
    }
    let mut p = project_psd(z);
    for j in 0..side {
        if p[(j, j)] < rho * 1e-10 {
            // Degenerate coordinate: decouple it and pin the diagonal.
            for k in 0..side {
                p[(j, k)] = 0.0;
                p[(k, j)] = 0.0;
            }
            p[(j, j)] = rho;
        }
    }
    let scale: Vec<f64> = (0..side).map(|j| (rho / p[(j, j)]).sqrt()).collect();
    for i in 0..side {
        for j in 0..side {
            p[(i, j)] *= scale[i] * scale[j];
        }
    }
    for j in 0..side {
        p[(j, j)] = rho;
    }
    (p, rho)
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    /// Row-major f64 entries.
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl TryFrom<&MatrixJson> for DMatrix<f64> {
    type Error = QsdpError;

    fn try_from(j: &MatrixJson) -> Result<DMatrix<f64>> {
        if j.data.len() != j.rows * j.cols {
            return Err(QsdpError::Format(format!(
                "matrix payload has {} entries for a {}x{} shape",
                j.data.len(),
                j.rows,
                j.cols
            )));
        }
        Ok(DMatrix::from_row_slice(j.rows, j.cols, &j.data))
    }
}

/// JSON envelope shared by solution files.
#[derive(Serialize, Deserialize)]
struct SolutionJson {
    variant: SdpVariant,
    loss: LossKind,
    beta: f64,
    n: usize,
    d: usize,
    rho: Vec<f64>,
    matrices: Vec<MatrixJson>,
    predictions: MatrixJson,
    objective: f64,
    primal_residual: f64,
    dual_residual: f64,
    iterations: usize,
    converged: bool,
    wall_time_seconds: f64,
    config: SolverConfig,
}

impl From<&SdpSolution> for SolutionJson {
    fn from(s: &SdpSolution) -> Self {
        let (rho, matrices) = match &s.matrices {
            SolutionMatrices::Bilinear { q, rho } => (vec![*rho], vec![MatrixJson::from(q)]),
            SolutionMatrices::Quadratic { z1, z2, rho1, rho2 } => {
                (vec![*rho1, *rho2], vec![MatrixJson::from(z1), MatrixJson::from(z2)])
            }
            SolutionMatrices::VectorOutput { q, rho } => {
                (rho.clone(), q.iter().map(MatrixJson::from).collect())
            }
        };
        Self {
            variant: s.variant,
            loss: s.loss,
            beta: s.beta,
            n: s.n,
            d: s.d,
            rho,
            matrices,
            predictions: MatrixJson::from(&s.predictions),
            objective: s.objective,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
            iterations: s.iterations,
            converged: s.converged,
            wall_time_seconds: s.wall_time_seconds,
            config: s.config.clone(),
        }
    }
}

impl TryFrom<SolutionJson> for SdpSolution {
    type Error = QsdpError;

    fn try_from(j: SolutionJson) -> Result<SdpSolution> {
        let matrices = match j.variant {
            SdpVariant::Bilinear => {
                let q = DMatrix::try_from(j.matrices.first().ok_or_else(|| {
                    QsdpError::Format("bilinear solution without a matrix".into())
                })?)?;
                SolutionMatrices::Bilinear {
                    q,
                    rho: *j.rho.first().ok_or_else(|| {
                        QsdpError::Format("bilinear solution without rho".into())
                    })?,
                }
            }
            SdpVariant::Quadratic => {
                if j.matrices.len() != 2 || j.rho.len() != 2 {
                    return Err(QsdpError::Format(
                        "quadratic solution needs two matrices and two rho values".into(),
                    ));
                }
                SolutionMatrices::Quadratic {
                    z1: DMatrix::try_from(&j.matrices[0])?,
                    z2: DMatrix::try_from(&j.matrices[1])?,
                    rho1: j.rho[0],
                    rho2: j.rho[1],
                }
            }
            SdpVariant::VectorOutput { classes } => {
                if j.matrices.len() != classes || j.rho.len() != classes {
                    return Err(QsdpError::Format(format!(
                        "vector solution needs {classes} matrices and rho values"
                    )));
                }
                SolutionMatrices::VectorOutput {
                    q: j.matrices
                        .iter()
                        .map(DMatrix::try_from)
                        .collect::<Result<Vec<_>>>()?,
                    rho: j.rho,
                }
            }
        };
        Ok(SdpSolution {
            variant: j.variant,
            loss: j.loss,
            beta: j.beta,
            n: j.n,
            d: j.d,
            matrices,
            predictions: DMatrix::try_from(&j.predictions)?,
            objective: j.objective,
            primal_residual: j.primal_residual,
            dual_residual: j.dual_residual,
            iterations: j.iterations,
            converged: j.converged,
            wall_time_seconds: j.wall_time_seconds,
            config: j.config,
        })
    }
}

#[cfg(test)]
mod tests;
