//! Trigonometric covariance shaping.
//!
//! Given the scaled solution block `Z_s` (unit-diagonal completion feasible),
//! builds a `2d x 2d` unit-diagonal PSD covariance `Q` whose off-diagonal
//! block satisfies `arcsin(Q_12) = gamma * Z_s` elementwise, with
//! `gamma = ln(1 + sqrt(2))` chosen so that `sinh(gamma) = 1`. Sign-Gaussian
//! samples drawn from `Q` then have `E[u v^T] = (2 gamma / pi) Z_s`.
//!
//! The primary construction is closed form: `Q_11 = sinh(gamma V_s)`,
//! `Q_12 = sin(gamma Z_s)`, `Q_22 = sinh(gamma W_s)` applied entrywise, which
//! is a Gram matrix of odd tensor-power embeddings and hence PSD whenever the
//! input is. A numeric completion (Dykstra alternating projections between
//! the PSD cone and the affine set fixing the diagonal and off-diagonal
//! block) is kept as a fallback and cross-check.

use std::sync::LazyLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::QsdpError;
use crate::linalg::{min_eigenvalue, project_psd, symmetrize};
use crate::sdp::SdpSolution;
use crate::Result;

/// `ln(1 + sqrt(2))`; the unique rate with `sinh(gamma) = 1`.
pub static GAMMA: LazyLock<f64> = LazyLock::new(|| (1.0 + std::f64::consts::SQRT_2).ln());

/// Convenience accessor for [`GAMMA`].
pub fn gamma() -> f64 {
    *GAMMA
}

/// Unit-diagonal PSD covariance with `arcsin(Q_12) = gamma * Z_s`, plus the
/// trace variable `rho` carried through for the sampler's second layer.
#[derive(Debug, Clone)]
pub struct ShapedCovariance {
    q: DMatrix<f64>,
    gamma: f64,
    source_rho: f64,
}

impl ShapedCovariance {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Half the side length: the sampled sign vectors u, v live in `R^d`.
    pub fn half_dim(&self) -> usize {
        self.q.nrows() / 2
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn source_rho(&self) -> f64 {
        self.source_rho
    }

    pub fn with_source_rho(mut self, rho: f64) -> Self {
        self.source_rho = rho;
        self
    }

    /// The off-diagonal block `Q_12`.
    pub fn q12(&self) -> DMatrix<f64> {
        let d = self.half_dim();
        self.q.view((0, d), (d, d)).into_owned()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut data = Vec::with_capacity(self.q.nrows() * self.q.ncols());
        for i in 0..self.q.nrows() {
            for j in 0..self.q.ncols() {
                data.push(self.q[(i, j)]);
            }
        }
        Ok(serde_json::to_string_pretty(&ShapedJson {
            rows: self.q.nrows(),
            cols: self.q.ncols(),
            data,
            gamma: self.gamma,
            source_rho: self.source_rho,
        })?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: ShapedJson = serde_json::from_str(s)?;
        if j.data.len() != j.rows * j.cols || j.rows != j.cols || j.rows % 2 != 0 {
            return Err(QsdpError::Format("malformed shaped covariance payload".into()));
        }
        Ok(Self {
            q: DMatrix::from_row_slice(j.rows, j.cols, &j.data),
            gamma: j.gamma,
            source_rho: j.source_rho,
        })
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ShapedJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    gamma: f64,
    source_rho: f64,
}

#[derive(Serialize, Deserialize)]
struct ShapedSetJson {
    classes: Vec<serde_json::Value>,
}

/// Writes one shaped covariance per output class (a single class for scalar
/// pipelines) into one JSON document.
pub fn write_shaped_set(set: &[ShapedCovariance], path: &std::path::Path) -> Result<()> {
    let classes = set
        .iter()
        .map(|s| Ok(serde_json::from_str(&s.to_json_string()?)?))
        .collect::<Result<Vec<serde_json::Value>>>()?;
    std::fs::write(path, serde_json::to_string_pretty(&ShapedSetJson { classes })?)?;
    Ok(())
}

pub fn read_shaped_set(path: &std::path::Path) -> Result<Vec<ShapedCovariance>> {
    let text = std::fs::read_to_string(path)?;
    let set: ShapedSetJson = serde_json::from_str(&text)?;
    set.classes
        .into_iter()
        .map(|v| ShapedCovariance::from_json_str(&v.to_string()))
        .collect()
}

/// The scaled blocks `V/rho, Z/rho, W/rho` of a bilinear solution, with unit
/// diagonal up to solver tolerance. A vanishing trace variable signals the
/// zero network: all blocks are returned as zeros with `rho = 0`.
#[derive(Debug, Clone)]
pub struct ScaledSolution {
    pub v: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub rho: f64,
}

/// Scales a converged bilinear solution by its trace variable.
pub fn scale_solution(solution: &SdpSolution) -> Result<ScaledSolution> {
    let (v, z, w, rho) = solution.bilinear_blocks().ok_or_else(|| {
        QsdpError::InvalidInput("scale_solution expects a bilinear-variant solution".into())
    })?;
    Ok(scale_blocks(v, z, w, rho))
}

/// Per-class version for vector-output solutions.
pub fn scale_class(solution: &SdpSolution, class: usize) -> Result<ScaledSolution> {
    let (v, z, w, rho) = solution.class_blocks(class).ok_or_else(|| {
        QsdpError::InvalidInput(format!("solution has no class {class} blocks"))
    })?;
    Ok(scale_blocks(v, z, w, rho))
}

fn scale_blocks(v: DMatrix<f64>, z: DMatrix<f64>, w: DMatrix<f64>, rho: f64) -> ScaledSolution {
    let d = z.nrows();
    if rho <= 1e-12 {
        return ScaledSolution {
            v: DMatrix::zeros(d, d),
            z: DMatrix::zeros(d, d),
            w: DMatrix::zeros(d, d),
            rho: 0.0,
        };
    }
    ScaledSolution { v: v / rho, z: z / rho, w: w / rho, rho }
}

/// Closed-form shaping: `Q_11 = sinh(gamma V_s)`, `Q_12 = sin(gamma Z_s)`,
/// `Q_22 = sinh(gamma W_s)` entrywise, followed by [`psd_repair`].
///
/// The input blocks must assemble into a unit-diagonal PSD matrix within
/// `1e-6`; a violation is rejected with the measured smallest eigenvalue.
pub fn krivine_shape(
    v_s: &DMatrix<f64>,
    z_s: &DMatrix<f64>,
    w_s: &DMatrix<f64>,
) -> Result<ShapedCovariance> {
    let d = z_s.nrows();
    if v_s.shape() != (d, d) || w_s.shape() != (d, d) || z_s.ncols() != d {
        return Err(QsdpError::DimensionMismatch(
            "shaping blocks must be square with a common dimension".into(),
        ));
    }
    let mut k = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            k[(i, j)] = v_s[(i, j)];
            k[(i, d + j)] = z_s[(i, j)];
            k[(d + j, i)] = z_s[(i, j)];
            k[(d + i, d + j)] = w_s[(i, j)];
        }
    }
    symmetrize(&mut k);
    let lambda_min = min_eigenvalue(&k);
    if lambda_min < -1e-6 {
        return Err(QsdpError::InfeasibleShapingInput { lambda_min });
    }
    if (0..2 * d).any(|j| (k[(j, j)] - 1.0).abs() > 1e-6) {
        return Err(QsdpError::InvalidInput(
            "shaping blocks must have unit diagonal within 1e-6".into(),
        ));
    }

    let g = gamma();
    let mut q = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            q[(i, j)] = (g * k[(i, j)]).sinh();
            q[(d + i, d + j)] = (g * k[(d + i, d + j)]).sinh();
            let s = (g * k[(i, d + j)]).sin();
            q[(i, d + j)] = s;
            q[(d + j, i)] = s;
        }
    }
    let repaired = psd_repair(&q, 1e-12);
    Ok(ShapedCovariance { q: repaired, gamma: g, source_rho: 1.0 })
}

/// Configuration for the numeric completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeConfig {
    pub max_iterations: usize,
    /// Squared off-constraint gap at which the iteration stops.
    pub stop_gap: f64,
    /// Squared gap above which hitting the cap is an error.
    pub fail_gap: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self { max_iterations: 10_000, stop_gap: 1e-18, fail_gap: 1e-8 }
    }
}

/// Numeric completion via Dykstra alternating projections between the PSD
/// cone and the affine set `{diag(Q) = 1, Q_12 = sin(gamma Z_s)}`.
pub fn numeric_shape(z_s: &DMatrix<f64>, config: &ShapeConfig) -> Result<ShapedCovariance> {
    let d = z_s.nrows();
    if z_s.ncols() != d {
        return Err(QsdpError::DimensionMismatch("Z_s must be square".into()));
    }
    let g = gamma();
    let target = z_s.map(|t| (g * t).sin());

    let affine = |m: &mut DMatrix<f64>| {
        for i in 0..d {
            for j in 0..d {
                m[(i, d + j)] = target[(i, j)];
                m[(d + j, i)] = target[(i, j)];
            }
        }
        for j in 0..2 * d {
            m[(j, j)] = 1.0;
        }
    };

    // Start from the affine-feasible point with identity diagonal blocks.
    let mut x = DMatrix::identity(2 * d, 2 * d);
    affine(&mut x);
    let mut p = DMatrix::zeros(2 * d, 2 * d);
    let mut q_corr = DMatrix::zeros(2 * d, 2 * d);
    let mut best_gap = f64::INFINITY;
    let mut cone_point = x.clone();

    for iter in 1..=config.max_iterations {
        let y = project_psd(&(&x + &p));
        p = &x + &p - &y;

        // Gap of the cone iterate to the affine set.
        let mut gap = 0.0;
        for i in 0..d {
            for j in 0..d {
                let e = y[(i, d + j)] - target[(i, j)];
                gap += 2.0 * e * e;
            }
        }
        for j in 0..2 * d {
            let e = y[(j, j)] - 1.0;
            gap += e * e;
        }
        if gap < best_gap {
            best_gap = gap;
            cone_point = y.clone();
        }

        if gap <= config.stop_gap {
            break;
        }
        if iter == config.max_iterations && best_gap > config.fail_gap {
            return Err(QsdpError::CompletionFailed { objective: best_gap, iterations: iter });
        }

        let mut xa = &y + &q_corr;
        affine(&mut xa);
        q_corr = &y + &q_corr - &xa;
        x = xa;
    }

    // Pin the constrained coordinates exactly; the cone iterate is within
    // sqrt(best_gap) of the affine set, so the eigenvalue perturbation stays
    // below the PSD tolerance.
    affine(&mut cone_point);
    symmetrize(&mut cone_point);
    Ok(ShapedCovariance { q: cone_point, gamma: g, source_rho: 1.0 })
}

/// Eigenvalue clipping onto the PSD cone followed by a diagonal congruence
/// rescale to an exactly unit diagonal. Inputs already PSD with unit diagonal
/// within `tol` pass through unchanged.
pub fn psd_repair(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut s = a.clone();
    symmetrize(&mut s);
    let mut p = if min_eigenvalue(&s) >= 0.0 { s } else { project_psd(a) };

    if (0..n).all(|j| (p[(j, j)] - 1.0).abs() <= tol) {
        return p;
    }
    for j in 0..n {
        if p[(j, j)] <= f64::EPSILON {
            // Zero row in a PSD matrix: decouple and pin the diagonal.
            for k in 0..n {
                p[(j, k)] = 0.0;
                p[(k, j)] = 0.0;
            }
            p[(j, j)] = 1.0;
        }
    }
    let scale: Vec<f64> = (0..n).map(|j| 1.0 / p[(j, j)].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] *= scale[i] * scale[j];
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                p[(i, j)] = 1.0;
            } else {
                p[(i, j)] = p[(i, j)].clamp(-1.0, 1.0);
            }
        }
    }
    p
}

/// Shapes a converged bilinear solution end to end: scale by the trace
/// variable, apply the closed-form construction, carry `rho` through.
pub fn shape_solution(solution: &SdpSolution) -> Result<ShapedCovariance> {
    let scaled = scale_solution(solution)?;
    shape_scaled(&scaled)
}

/// Per-class shaping for vector-output solutions.
pub fn shape_class(solution: &SdpSolution, class: usize) -> Result<ShapedCovariance> {
    let scaled = scale_class(solution, class)?;
    shape_scaled(&scaled)
}

fn shape_scaled(scaled: &ScaledSolution) -> Result<ShapedCovariance> {
    if scaled.rho == 0.0 {
        let d = scaled.z.nrows();
        // Zero network: any unit-diagonal covariance works; the identity keeps
        // the sampler honest (E[uv^T] = 0).
        return Ok(ShapedCovariance {
            q: DMatrix::identity(2 * d, 2 * d),
            gamma: gamma(),
            source_rho: 0.0,
        });
    }
    Ok(krivine_shape(&scaled.v, &scaled.z, &scaled.w)?.with_source_rho(scaled.rho))
}

/// Unit-norm rows Gram helper used by shaping tests.
#[doc(hidden)]
pub fn random_unit_diag_psd(dim: usize, seed: u64) -> DMatrix<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let factors: DMatrix<f64> = DMatrix::from_fn(dim, dim + 3, |_, _| rng.gen_range(-1.0..1.0));
    let mut gram = &factors * factors.transpose();
    let norms: Vec<f64> = (0..dim).map(|i| gram[(i, i)].sqrt()).collect();
    for i in 0..dim {
        for j in 0..dim {
            gram[(i, j)] /= norms[i] * norms[j];
        }
    }
    for i in 0..dim {
        gram[(i, i)] = 1.0;
    }
    gram
}
