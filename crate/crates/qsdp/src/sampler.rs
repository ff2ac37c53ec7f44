//! Sign-Gaussian sampling of quantized first-layer weights.
//!
//! Weight pairs `[u; v] = sign(N(0, Q))` are drawn from the shaped covariance
//! and the second layer is the single scalar `rho * pi / (gamma * m)`, so the
//! expected aggregate `E[sum_j u_j v_j^T alpha_j]` matches the SDP solution
//! block `2 Z*`. Each neuron draws from its own counter-derived substream of
//! the root seed: sampling is reproducible and order-independent.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::QsdpError;
use crate::linalg::psd_factor;
use crate::model::{BilinearNetwork, InputKind, VectorBilinearNetwork};
use crate::shaping::{gamma, ShapedCovariance};
use crate::Result;

/// How many neurons to draw and from which seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub neurons: usize,
    pub seed: u64,
    /// Output classes; 1 for scalar networks. Must divide `neurons`.
    pub classes: usize,
    /// Leading constant of the neuron-count estimate.
    pub c1: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { neurons: 1000, seed: 0, classes: 1, c1: 1.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 {
            return Err(QsdpError::InvalidInput("neuron count must be positive".into()));
        }
        if self.classes == 0 || self.neurons % self.classes != 0 {
            return Err(QsdpError::InvalidInput(format!(
                "class count {} must divide the neuron count {}",
                self.classes, self.neurons
            )));
        }
        Ok(())
    }
}

/// Inputs to the sufficient-width estimate `m >= c1 L^2 R^4 d log(d) / eps^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremBound {
    pub epsilon: f64,
    /// Lipschitz constant of the loss (1 for the supported losses).
    pub lipschitz: f64,
    /// Max row norm of the data matrix.
    pub max_row_norm: f64,
    pub d: f64,
    pub c1: f64,
}

impl TheoremBound {
    pub fn new(epsilon: f64, lipschitz: f64, max_row_norm: f64, d: f64) -> Self {
        Self { epsilon, lipschitz, max_row_norm, d, c1: 1.0 }
    }
}

/// Smallest neuron count the concentration argument asks for.
pub fn required_m(bound: &TheoremBound) -> Result<usize> {
    if bound.epsilon <= 0.0 {
        return Err(QsdpError::InvalidInput("epsilon must be positive".into()));
    }
    if bound.d < 2.0 {
        return Err(QsdpError::InvalidInput(format!(
            "d = {} is below 2; log(d) would not be positive",
            bound.d
        )));
    }
    let raw = bound.c1 * bound.lipschitz.powi(2) * bound.max_row_norm.powi(4) * bound.d
        * bound.d.ln()
        / (bound.epsilon * bound.epsilon);
    if !raw.is_finite() {
        return Err(QsdpError::InvalidInput("neuron estimate overflowed".into()));
    }
    Ok(raw.ceil() as usize)
}

/// Draws `count` sign pairs from `sign(N(0, Q))`.
///
/// The Gaussian factor comes from the eigendecomposition with negative
/// eigenvalues clipped (shaped covariances are often rank-deficient), and
/// `sign(0) = +1`. Neuron `j` uses stream `j` of the root seed, so the output
/// is deterministic for a fixed seed regardless of evaluation order.
pub fn sign_gaussian(
    q: &ShapedCovariance,
    count: usize,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    sign_gaussian_streams(q, count, seed, 0)
}

fn sign_gaussian_streams(
    q: &ShapedCovariance,
    count: usize,
    seed: u64,
    stream_offset: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = q.half_dim();
    let factor = psd_factor(q.matrix());
    let side = 2 * d;
    let mut u = DMatrix::zeros(count, d);
    let mut v = DMatrix::zeros(count, d);
    let mut g = DVector::zeros(side);
    for j in 0..count {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_offset + j as u64);
        for i in 0..side {
            g[i] = rng.sample::<f64, _>(StandardNormal);
        }
        let w = &factor * &g;
        for i in 0..d {
            u[(j, i)] = if w[i] >= 0.0 { 1.0 } else { -1.0 };
            v[(j, i)] = if w[d + i] >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    (u, v)
}

/// Builds the sampled network with the uniform second layer
/// `alpha_j = rho * pi / (gamma * m)`; a zero trace variable yields the zero
/// network.
pub fn assemble_network(u: DMatrix<f64>, v: DMatrix<f64>, rho: f64) -> Result<BilinearNetwork> {
    let m = u.nrows();
    if m == 0 {
        return Err(QsdpError::InvalidInput("cannot assemble a network with no neurons".into()));
    }
    let alpha = if rho == 0.0 { 0.0 } else { rho * std::f64::consts::PI / (gamma() * m as f64) };
    BilinearNetwork::with_uniform_alpha(u, v, alpha, InputKind::Raw)
}

/// Full scalar sampling step: draw `m` pairs from the shaped covariance and
/// attach the second layer from its trace variable.
pub fn sample_network(q: &ShapedCovariance, m: usize, seed: u64) -> Result<BilinearNetwork> {
    let (u, v) = sign_gaussian(q, m, seed);
    assemble_network(u, v, q.source_rho())
}

/// Vector-output sampling: class `k` gets `m / C` neurons drawn from its own
/// shaped covariance, with second-layer rows `rho_k C pi / (gamma m) e_k`,
/// classes concatenated in order. With `C = 1` the seed stream coincides with
/// the scalar pipeline.
pub fn sample_vector_output(
    shaped: &[ShapedCovariance],
    m: usize,
    seed: u64,
) -> Result<VectorBilinearNetwork> {
    let classes = shaped.len();
    if classes == 0 {
        return Err(QsdpError::InvalidInput("need at least one class covariance".into()));
    }
    if m % classes != 0 {
        return Err(QsdpError::InvalidInput(format!(
            "class count {classes} must divide the neuron count {m}"
        )));
    }
    let per_class = m / classes;
    let d = shaped[0].half_dim();
    if shaped.iter().any(|q| q.half_dim() != d) {
        return Err(QsdpError::DimensionMismatch(
            "per-class covariances must share one dimension".into(),
        ));
    }
    let mut u = DMatrix::zeros(m, d);
    let mut v = DMatrix::zeros(m, d);
    let mut alpha = DMatrix::zeros(m, classes);
    for (k, q) in shaped.iter().enumerate() {
        let offset = k * per_class;
        let (uk, vk) = sign_gaussian_streams(q, per_class, seed, offset as u64);
        let a = if q.source_rho() == 0.0 {
            0.0
        } else {
            q.source_rho() * classes as f64 * std::f64::consts::PI / (gamma() * m as f64)
        };
        for j in 0..per_class {
            for i in 0..d {
                u[(offset + j, i)] = uk[(j, i)];
                v[(offset + j, i)] = vk[(j, i)];
            }
            alpha[(offset + j, k)] = a;
        }
    }
    VectorBilinearNetwork::new(u, v, alpha)
}

/// Max-abs deviation of the empirical pair moment from the shaped target
/// `(2/pi) arcsin(Q_12)`.
pub fn empirical_moment_gap(u: &DMatrix<f64>, v: &DMatrix<f64>, q: &ShapedCovariance) -> f64 {
    let m = u.nrows() as f64;
    let mean = u.transpose() * v / m;
    let target = q.q12().map(|t| 2.0 / std::f64::consts::PI * t.asin());
    crate::linalg::max_abs(&(mean - target))
}

/// JSON sampling report emitted next to sampled network files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingReport {
    pub seed: u64,
    pub neurons: usize,
    pub rho: f64,
    /// Empirical-moment deviation of the drawn weights.
    pub moment_gap: f64,
}
