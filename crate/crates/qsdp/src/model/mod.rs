//! Network representations and the exact reductions between them.
//!
//! Three architectures are supported:
//!
//! * [`PolyNetwork`] — multi-level integer first-layer weights with a degree-two
//!   polynomial activation `a t^2 + b t + c`.
//! * [`BilinearNetwork`] — sign (±1) weight pairs with the bilinear activation
//!   `(x^T u)(x^T v)`, over raw inputs or over a lifted input matrix.
//! * [`QuadraticNetwork`] — {−1, 0, +1} weights with activation `t^2`.
//!
//! A poly network over `R^d` maps exactly onto a bilinear network over lifted
//! inputs of dimension `d*M + 1`, and a bilinear network maps exactly onto a
//! quadratic network with three neurons per bilinear neuron. Forward
//! evaluation is plain per-neuron summation in double precision so that the
//! reduction identities can be checked against independent oracles.

mod io;

pub use io::{read_network, read_network_file, write_network, write_network_file, Network};

use nalgebra::{DMatrix, DVector};

use crate::error::QsdpError;
use crate::Result;

/// Two-layer network with integer first-layer weights in the multi-level set
/// `{-M, -M+2, ..., M-2, M}` and activation `a t^2 + b t + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyNetwork {
    weights: DMatrix<i64>,
    levels: u32,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    alpha: DVector<f64>,
}

impl PolyNetwork {
    /// Validates the quantization set membership of every weight and the
    /// second-layer length.
    pub fn new(
        weights: DMatrix<i64>,
        levels: u32,
        a: f64,
        b: f64,
        c: f64,
        alpha: DVector<f64>,
    ) -> Result<Self> {
        if levels == 0 {
            return Err(QsdpError::InvalidInput("level parameter M must be >= 1".into()));
        }
        if alpha.len() != weights.nrows() {
            return Err(QsdpError::DimensionMismatch(format!(
                "alpha has length {}, weight matrix has {} rows",
                alpha.len(),
                weights.nrows()
            )));
        }
        let m_i64 = i64::from(levels);
        for row in 0..weights.nrows() {
            for col in 0..weights.ncols() {
                let q = weights[(row, col)];
                if q.abs() > m_i64 || (q - m_i64).rem_euclid(2) != 0 {
                    return Err(QsdpError::InvalidQuantization {
                        row,
                        col,
                        value: q,
                        levels: levels + 1,
                        max_level: levels,
                    });
                }
            }
        }
        Ok(Self { weights, levels, a, b, c, alpha })
    }

    pub fn neurons(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn weights(&self) -> &DMatrix<i64> {
        &self.weights
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Evaluates `sum_j (a (x^T q_j)^2 + b (x^T q_j) + c) alpha_j` by direct
    /// summation over neurons.
    pub fn forward(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(QsdpError::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut out = 0.0;
        for j in 0..self.neurons() {
            let mut t = 0.0;
            for i in 0..self.input_dim() {
                t += self.weights[(j, i)] as f64 * x[i];
            }
            out += (self.a * t * t + self.b * t + self.c) * self.alpha[j];
        }
        Ok(out)
    }

    /// Rewrites the network as a binary bilinear network over lifted inputs of
    /// dimension `d*M + 1` with `U = V` and unchanged second layer.
    ///
    /// Each integer weight `q` decomposes into `M` signs summing to `q`; the
    /// decomposition is canonical (the leading `(M+q)/2` signs are `+1`) so
    /// the map is deterministic. The augmented last coordinate is `+1`.
    pub fn to_binary_bilinear(&self) -> BilinearNetwork {
        let m = self.neurons();
        let d = self.input_dim();
        let levels = self.levels as usize;
        let cols = d * levels + 1;
        let mut u = DMatrix::zeros(m, cols);
        for j in 0..m {
            for i in 0..d {
                let signs = canonical_signs(self.weights[(j, i)], self.levels);
                for (k, s) in signs.enumerate() {
                    u[(j, i * levels + k)] = s;
                }
            }
            u[(j, cols - 1)] = 1.0;
        }
        BilinearNetwork::new(
            u.clone(),
            u,
            self.alpha.clone(),
            InputKind::Lifted { levels: self.levels, a: self.a, b: self.b, c: self.c },
        )
        .expect("rows built from canonical signs are valid")
    }
}

/// Canonical sign decomposition of a multi-level weight: `(M+q)/2` leading
/// `+1` entries followed by `-1` entries, summing to `q`.
pub(crate) fn canonical_signs(q: i64, levels: u32) -> impl Iterator<Item = f64> {
    let plus = ((i64::from(levels) + q) / 2) as usize;
    (0..levels as usize).map(move |k| if k < plus { 1.0 } else { -1.0 })
}

/// Input convention of a bilinear (or quadratic) network: raw vectors in
/// `R^d`, or lifted matrices carrying the activation coefficients of the
/// poly network the weights came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputKind {
    Raw,
    Lifted { levels: u32, a: f64, b: f64, c: f64 },
}

/// The `(dM+1) x (dM+1)` symmetric matrix
/// `[[a x~ x~^T, (b/2) x~], [(b/2) x~^T, c]]` where `x~` replicates each
/// coordinate of `x` `M` times (coordinate-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedInput {
    matrix: DMatrix<f64>,
    input_dim: usize,
    levels: u32,
    a: f64,
    b: f64,
    c: f64,
}

impl LiftedInput {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn coefficients(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c)
    }

    /// Recovers `x` from the stored matrix; only valid when `a != 0` (uses the
    /// top-left block diagonal and the sign pattern of its first row) or when
    /// `b != 0` (uses the border column). Used to test structural exactness.
    pub fn reconstruct_input(&self) -> Option<DVector<f64>> {
        let levels = self.levels as usize;
        let d = self.input_dim;
        if self.b != 0.0 {
            let k = self.dim() - 1;
            let mut x = DVector::zeros(d);
            for i in 0..d {
                x[i] = self.matrix[(i * levels, k)] * 2.0 / self.b;
            }
            return Some(x);
        }
        if self.a != 0.0 {
            // Magnitudes from the diagonal, signs relative to the first
            // nonzero coordinate (x and -x lift identically when b = 0).
            let mut x = DVector::zeros(d);
            for i in 0..d {
                x[i] = (self.matrix[(i * levels, i * levels)] / self.a).max(0.0).sqrt();
            }
            let pivot = (0..d).find(|&i| x[i] > 0.0)?;
            for i in 0..d {
                if self.matrix[(pivot * levels, i * levels)] / self.a < 0.0 {
                    x[i] = -x[i];
                }
            }
            return Some(x);
        }
        None
    }
}

/// Builds the lifted input matrix for `x` with replication level `M` and
/// activation coefficients `(a, b, c)`.
pub fn lift_input(x: &DVector<f64>, levels: u32, a: f64, b: f64, c: f64) -> Result<LiftedInput> {
    if levels == 0 {
        return Err(QsdpError::InvalidInput("lifting level M must be >= 1".into()));
    }
    let d = x.len();
    let ml = levels as usize;
    let n = d * ml + 1;
    let mut tilde = DVector::zeros(n - 1);
    for i in 0..d {
        for k in 0..ml {
            tilde[i * ml + k] = x[i];
        }
    }
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            matrix[(i, j)] = a * tilde[i] * tilde[j];
        }
        matrix[(i, n - 1)] = 0.5 * b * tilde[i];
        matrix[(n - 1, i)] = 0.5 * b * tilde[i];
    }
    matrix[(n - 1, n - 1)] = c;
    Ok(LiftedInput { matrix, input_dim: d, levels, a, b, c })
}

/// Input to a bilinear or quadratic forward pass.
#[derive(Debug, Clone, Copy)]
pub enum NetInput<'a> {
    Raw(&'a DVector<f64>),
    Lifted(&'a LiftedInput),
}

/// Two-layer network with ±1 first-layer weight pairs and bilinear activation.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearNetwork {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    alpha: DVector<f64>,
    input_kind: InputKind,
}

impl BilinearNetwork {
    pub fn new(
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        alpha: DVector<f64>,
        input_kind: InputKind,
    ) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(QsdpError::DimensionMismatch(format!(
                "U is {:?}, V is {:?}",
                u.shape(),
                v.shape()
            )));
        }
        if alpha.len() != u.nrows() {
            return Err(QsdpError::DimensionMismatch(format!(
                "alpha has length {}, weight matrices have {} rows",
                alpha.len(),
                u.nrows()
            )));
        }
        for m in [&u, &v] {
            if let Some(bad) = m.iter().find(|&&e| e != 1.0 && e != -1.0) {
                return Err(QsdpError::InvalidInput(format!(
                    "sign matrix entry {bad} is not exactly +1 or -1"
                )));
            }
        }
        Ok(Self { u, v, alpha, input_kind })
    }

    /// Network with every second-layer weight equal to `alpha`.
    pub fn with_uniform_alpha(
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        alpha: f64,
        input_kind: InputKind,
    ) -> Result<Self> {
        let m = u.nrows();
        Self::new(u, v, DVector::from_element(m, alpha), input_kind)
    }

    pub fn neurons(&self) -> usize {
        self.u.nrows()
    }

    pub fn weight_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn input_kind(&self) -> InputKind {
        self.input_kind
    }

    /// The common second-layer value when the second layer is uniform.
    pub fn uniform_alpha(&self) -> Option<f64> {
        let first = *self.alpha.get(0)?;
        self.alpha.iter().all(|&a| a == first).then_some(first)
    }

    pub fn forward(&self, input: NetInput<'_>) -> Result<f64> {
        match (input, self.input_kind) {
            (NetInput::Raw(x), InputKind::Raw) => self.forward_raw(x),
            (NetInput::Lifted(l), InputKind::Lifted { levels, a, b, c }) => {
                if l.levels() != levels || l.coefficients() != (a, b, c) {
                    return Err(QsdpError::KindMismatch(format!(
                        "lifted input built with (M, a, b, c) = ({}, {}, {}, {}), network \
                         expects ({}, {}, {}, {})",
                        l.levels(),
                        l.coefficients().0,
                        l.coefficients().1,
                        l.coefficients().2,
                        levels,
                        a,
                        b,
                        c
                    )));
                }
                self.forward_lifted(l)
            }
            (NetInput::Raw(_), InputKind::Lifted { .. }) => Err(QsdpError::KindMismatch(
                "network expects lifted inputs, got a raw vector".into(),
            )),
            (NetInput::Lifted(_), InputKind::Raw) => Err(QsdpError::KindMismatch(
                "network expects raw vectors, got a lifted input".into(),
            )),
        }
    }

    /// `sum_j (x^T u_j)(x^T v_j) alpha_j` by direct summation.
    pub fn forward_raw(&self, x: &DVector<f64>) -> Result<f64> {
        if self.input_kind != InputKind::Raw {
            return Err(QsdpError::KindMismatch(
                "network expects lifted inputs, got a raw vector".into(),
            ));
        }
        if x.len() != self.weight_dim() {
            return Err(QsdpError::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.weight_dim()
            )));
        }
        let mut out = 0.0;
        for j in 0..self.neurons() {
            let mut tu = 0.0;
            let mut tv = 0.0;
            for i in 0..self.weight_dim() {
                tu += self.u[(j, i)] * x[i];
                tv += self.v[(j, i)] * x[i];
            }
            out += tu * tv * self.alpha[j];
        }
        Ok(out)
    }

    /// `sum_j u_j^T X v_j alpha_j` over a lifted input matrix.
    pub fn forward_lifted(&self, lifted: &LiftedInput) -> Result<f64> {
        if lifted.dim() != self.weight_dim() {
            return Err(QsdpError::DimensionMismatch(format!(
                "lifted input is {}x{0}, network weights have {} columns",
                lifted.dim(),
                self.weight_dim()
            )));
        }
        let x = lifted.matrix();
        let n = self.weight_dim();
        let mut out = 0.0;
        for j in 0..self.neurons() {
            let mut quad = 0.0;
            for r in 0..n {
                let mut row = 0.0;
                for s in 0..n {
                    row += x[(r, s)] * self.v[(j, s)];
                }
                quad += self.u[(j, r)] * row;
            }
            out += quad * self.alpha[j];
        }
        Ok(out)
    }

    /// Rewrites the network with quadratic activation `t^2` using the identity
    /// `2 u^T A v = (u+v)^T A (u+v) - u^T A u - v^T A v`: each bilinear neuron
    /// `(u, v, alpha)` becomes the three neurons `((u+v)/2, 2 alpha)`,
    /// `(u, -alpha/2)` and `(v, -alpha/2)`.
    pub fn to_quadratic(&self) -> QuadraticNetwork {
        let m = self.neurons();
        let d = self.weight_dim();
        let mut w = DMatrix::zeros(3 * m, d);
        let mut alpha = DVector::zeros(3 * m);
        for j in 0..m {
            for i in 0..d {
                w[(3 * j, i)] = 0.5 * (self.u[(j, i)] + self.v[(j, i)]);
                w[(3 * j + 1, i)] = self.u[(j, i)];
                w[(3 * j + 2, i)] = self.v[(j, i)];
            }
            alpha[3 * j] = 2.0 * self.alpha[j];
            alpha[3 * j + 1] = -0.5 * self.alpha[j];
            alpha[3 * j + 2] = -0.5 * self.alpha[j];
        }
        QuadraticNetwork { w, alpha, input_kind: self.input_kind }
    }
}

/// Two-layer network with weights in {−1, 0, +1} and activation `t^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticNetwork {
    w: DMatrix<f64>,
    alpha: DVector<f64>,
    input_kind: InputKind,
}

impl QuadraticNetwork {
    pub fn new(w: DMatrix<f64>, alpha: DVector<f64>, input_kind: InputKind) -> Result<Self> {
        if alpha.len() != w.nrows() {
            return Err(QsdpError::DimensionMismatch(format!(
                "alpha has length {}, weight matrix has {} rows",
                alpha.len(),
                w.nrows()
            )));
        }
        if let Some(bad) = w.iter().find(|&&e| e != 1.0 && e != -1.0 && e != 0.0) {
            return Err(QsdpError::InvalidInput(format!(
                "quadratic weight entry {bad} is not in {{-1, 0, +1}}"
            )));
        }
        Ok(Self { w, alpha, input_kind })
    }

    pub fn neurons(&self) -> usize {
        self.w.nrows()
    }

    pub fn weight_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn input_kind(&self) -> InputKind {
        self.input_kind
    }

    pub fn forward(&self, input: NetInput<'_>) -> Result<f64> {
        match (input, self.input_kind) {
            (NetInput::Raw(x), InputKind::Raw) => self.forward_raw(x),
            (NetInput::Lifted(l), InputKind::Lifted { .. }) => self.forward_lifted(l),
            _ => Err(QsdpError::KindMismatch(
                "input kind does not match the network's input convention".into(),
            )),
        }
    }

    pub fn forward_raw(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.weight_dim() {
            return Err(QsdpError::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.weight_dim()
            )));
        }
        let mut out = 0.0;
        for j in 0..self.neurons() {
            let mut t = 0.0;
            for i in 0..self.weight_dim() {
                t += self.w[(j, i)] * x[i];
            }
            out += t * t * self.alpha[j];
        }
        Ok(out)
    }

    pub fn forward_lifted(&self, lifted: &LiftedInput) -> Result<f64> {
        if lifted.dim() != self.weight_dim() {
            return Err(QsdpError::DimensionMismatch(format!(
                "lifted input is {}x{0}, network weights have {} columns",
                lifted.dim(),
                self.weight_dim()
            )));
        }
        let x = lifted.matrix();
        let n = self.weight_dim();
        let mut out = 0.0;
        for j in 0..self.neurons() {
            let mut quad = 0.0;
            for r in 0..n {
                let mut row = 0.0;
                for s in 0..n {
                    row += x[(r, s)] * self.w[(j, s)];
                }
                quad += self.w[(j, r)] * row;
            }
            out += quad * self.alpha[j];
        }
        Ok(out)
    }
}

/// Bilinear network with a vector output: the second layer is an `m x C`
/// matrix and the network maps `R^d -> R^C`. Raw inputs only.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorBilinearNetwork {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    alpha: DMatrix<f64>,
}

impl VectorBilinearNetwork {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, alpha: DMatrix<f64>) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(QsdpError::DimensionMismatch(format!(
                "U is {:?}, V is {:?}",
                u.shape(),
                v.shape()
            )));
        }
        if alpha.nrows() != u.nrows() {
            return Err(QsdpError::DimensionMismatch(format!(
                "alpha has {} rows, weight matrices have {}",
                alpha.nrows(),
                u.nrows()
            )));
        }
        for m in [&u, &v] {
            if let Some(bad) = m.iter().find(|&&e| e != 1.0 && e != -1.0) {
                return Err(QsdpError::InvalidInput(format!(
                    "sign matrix entry {bad} is not exactly +1 or -1"
                )));
            }
        }
        Ok(Self { u, v, alpha })
    }

    pub fn neurons(&self) -> usize {
        self.u.nrows()
    }

    pub fn weight_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn classes(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.weight_dim() {
            return Err(QsdpError::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.weight_dim()
            )));
        }
        let mut out = DVector::zeros(self.classes());
        for j in 0..self.neurons() {
            let mut tu = 0.0;
            let mut tv = 0.0;
            for i in 0..self.weight_dim() {
                tu += self.u[(j, i)] * x[i];
                tv += self.v[(j, i)] * x[i];
            }
            let act = tu * tv;
            for k in 0..self.classes() {
                out[k] += act * self.alpha[(j, k)];
            }
        }
        Ok(out)
    }

    /// Drops the class dimension of a single-output network.
    pub fn into_scalar(self) -> Result<BilinearNetwork> {
        if self.classes() != 1 {
            return Err(QsdpError::DimensionMismatch(format!(
                "network has {} output classes, expected 1",
                self.classes()
            )));
        }
        let alpha = DVector::from_column_slice(self.alpha.column(0).as_slice());
        BilinearNetwork::new(self.u, self.v, alpha, InputKind::Raw)
    }
}

#[cfg(test)]
mod tests;
