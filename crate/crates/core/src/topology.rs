//! Gossip mixing matrices.
//!
//! A [`MixingMatrix`] is a symmetric, doubly-stochastic `K×K` weight matrix
//! together with its cached contraction factor
//! `rho = ‖W − (1/K)𝟙𝟙ᵀ‖₂²`. One gossip step replaces every agent's value by
//! the weighted sum of its neighbors' values; the network average is left
//! unchanged and the disagreement around it shrinks by `√rho` in Frobenius
//! norm.

use crate::error::TopologyError;
use crate::linalg::{Matrix, Vector};
use std::ops::{AddAssign, Mul};

/// Row/column sum tolerance for matrices loaded from files.
pub const STOCHASTIC_TOL: f64 = 1e-9;
/// Iteration cap for the deflated power iteration.
pub const POWER_ITERATION_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    k: usize,
    weights: Matrix,
    rho: f64,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    fn from_validated(weights: Matrix) -> Result<Self, TopologyError> {
        let k = weights.nrows();
        let rho = spectral_gap(&weights)?;
        let neighbors = (0..k)
            .map(|i| {
                (0..k)
                    .filter(|&j| weights[(i, j)] > 0.0)
                    .map(|j| (j, weights[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self { k, weights, rho, neighbors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// `‖W − (1/K)𝟙𝟙ᵀ‖₂²`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Nonzero `(j, w_kj)` pairs for agent `k`, in increasing `j`.
    pub fn neighbors(&self, k: usize) -> &[(usize, f64)] {
        &self.neighbors[k]
    }

    pub fn is_connected(&self) -> bool {
        self.rho < 1.0 - 1e-12
    }

    /// Weighted neighbor sum for a single agent. The summation order is fixed
    /// (increasing neighbor index) so results are reproducible.
    pub fn mix_one<T>(&self, agent: usize, values: &[T]) -> T
    where
        T: AddAssign,
        for<'a> &'a T: Mul<f64, Output = T>,
    {
        self.mix_with(agent, |j| &values[j])
    }

    /// Weighted neighbor sum where `field(j)` borrows agent `j`'s value.
    pub fn mix_with<'s, T, F>(&self, agent: usize, field: F) -> T
    where
        T: AddAssign + 's,
        for<'a> &'a T: Mul<f64, Output = T>,
        F: Fn(usize) -> &'s T,
    {
        let nb = &self.neighbors[agent];
        let (j0, w0) = nb[0];
        let mut acc = field(j0) * w0;
        for &(j, w) in &nb[1..] {
            acc += field(j) * w;
        }
        acc
    }
}

/// Ring of `k` agents with weight 1/3 on self and on both ring neighbors.
///
/// For `k = 3` every agent neighbors every other agent, so the ring is the
/// complete graph.
pub fn build_ring(k: usize) -> Result<MixingMatrix, TopologyError> {
    if k < 3 {
        return Err(TopologyError::InvalidTopology(format!(
            "ring needs at least 3 agents, got {k}"
        )));
    }
    let third = 1.0 / 3.0;
    let mut w = Matrix::zeros(k, k);
    for i in 0..k {
        w[(i, i)] = third;
        w[(i, (i + 1) % k)] = third;
        w[(i, (i + k - 1) % k)] = third;
    }
    MixingMatrix::from_validated(w)
}

/// Complete graph with uniform weights `1/k`; `rho = 0`.
pub fn build_complete(k: usize) -> Result<MixingMatrix, TopologyError> {
    if k == 0 {
        return Err(TopologyError::InvalidTopology("need at least one agent".into()));
    }
    let w = Matrix::from_element(k, k, 1.0 / k as f64);
    Ok(MixingMatrix {
        k,
        neighbors: (0..k).map(|_| (0..k).map(|j| (j, 1.0 / k as f64)).collect()).collect(),
        weights: w,
        rho: 0.0,
    })
}

/// Individual structural checks on a candidate weight matrix, in the order
/// they are applied by [`build_custom`].
pub fn check_structure(weights: &Matrix) -> Result<(), TopologyError> {
    let (rows, cols) = weights.shape();
    if rows != cols || rows == 0 {
        return Err(TopologyError::NotSquare { rows, cols });
    }
    let k = rows;
    for i in 0..k {
        for j in 0..k {
            let v = weights[(i, j)];
            if !(v >= 0.0) {
                return Err(TopologyError::NegativeEntry { row: i, col: j, value: v });
            }
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (weights[(i, j)], weights[(j, i)]);
            if (a - b).abs() > STOCHASTIC_TOL {
                return Err(TopologyError::NotSymmetric { row: i, col: j, a, b });
            }
        }
    }
    for i in 0..k {
        let sum: f64 = weights.row(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(TopologyError::NotDoublyStochastic { axis: "row", index: i, sum });
        }
        let sum: f64 = weights.column(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(TopologyError::NotDoublyStochastic { axis: "column", index: i, sum });
        }
    }
    Ok(())
}

/// Validate a user-supplied weight matrix.
///
/// Entries within the symmetry tolerance are symmetrized. With
/// `require_connected` a matrix with `rho >= 1` is rejected; otherwise it is
/// accepted with a warning.
pub fn build_custom(weights: Matrix, require_connected: bool) -> Result<MixingMatrix, TopologyError> {
    check_structure(&weights)?;
    let sym = (&weights + weights.transpose()) * 0.5;
    let m = MixingMatrix::from_validated(sym)?;
    if !m.is_connected() {
        if require_connected {
            return Err(TopologyError::Disconnected { rho: m.rho });
        }
        log::warn!("mixing matrix is disconnected (rho = {})", m.rho);
    }
    Ok(m)
}

/// Build from a JSON-style array of rows.
pub fn build_custom_rows(rows: &[Vec<f64>], require_connected: bool) -> Result<MixingMatrix, TopologyError> {
    let k = rows.len();
    for r in rows {
        if r.len() != k {
            return Err(TopologyError::NotSquare { rows: k, cols: r.len() });
        }
    }
    let w = Matrix::from_fn(k, k, |i, j| rows[i][j]);
    build_custom(w, require_connected)
}

/// `‖W − (1/K)𝟙𝟙ᵀ‖₂²` by power iteration on the deflated operator.
///
/// `D = W − (1/K)𝟙𝟙ᵀ` is applied twice per step, so the iteration runs on the
/// positive semidefinite `D²` whose top eigenvalue is `rho` directly; this
/// sidesteps sign oscillation when `±λ` share the top magnitude.
pub fn spectral_gap(weights: &Matrix) -> Result<f64, TopologyError> {
    let k = weights.nrows();
    if k <= 1 {
        return Ok(0.0);
    }
    let deflate = |v: &Vector| -> Vector {
        let wv = weights * v;
        let mean = wv.mean();
        wv.add_scalar(-mean)
    };
    // deterministic start vector orthogonal to 𝟙
    let mut v = Vector::from_fn(k, |i, _| ((i as f64 + 1.0) * 1.618_033_988_75).sin() + 0.1 * i as f64);
    let mean = v.mean();
    v.add_scalar_mut(-mean);
    let norm = v.norm();
    v /= norm;

    let mut estimate = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_ITERATION_CAP {
        let dv = deflate(&v);
        let d2v = deflate(&dv);
        let rq = dv.norm_squared();
        if rq <= 1e-300 {
            return Ok(0.0);
        }
        residual = (&d2v - &v * rq).norm();
        let change = (rq - estimate).abs();
        estimate = rq;
        if residual <= 1e-12 * rq.max(1e-3) || (change <= 1e-16 && residual <= 1e-9) {
            return Ok(estimate.clamp(0.0, 1.0));
        }
        let n = d2v.norm();
        v = d2v / n;
    }
    Err(TopologyError::PowerIteration { iterations: POWER_ITERATION_CAP, estimate, residual })
}

/// One gossip step on per-agent values: `out[k] = Σ_j w_kj · values[j]`.
pub fn gossip_mix(values: &[Matrix], w: &MixingMatrix) -> Result<Vec<Matrix>, TopologyError> {
    if values.len() != w.k() {
        return Err(TopologyError::AgentCount { expected: w.k(), found: values.len() });
    }
    let expected = values[0].shape();
    for (agent, v) in values.iter().enumerate() {
        if v.shape() != expected {
            return Err(TopologyError::ShapeMismatch { agent, expected, found: v.shape() });
        }
    }
    Ok((0..w.k()).map(|k| w.mix_one(k, values)).collect())
}

/// Vector convenience wrapper around [`gossip_mix`].
pub fn gossip_mix_vectors(values: &[Vector], w: &MixingMatrix) -> Result<Vec<Vector>, TopologyError> {
    if values.len() != w.k() {
        return Err(TopologyError::AgentCount { expected: w.k(), found: values.len() });
    }
    let n = values[0].len();
    for (agent, v) in values.iter().enumerate() {
        if v.len() != n {
            return Err(TopologyError::ShapeMismatch { agent, expected: (n, 1), found: (v.len(), 1) });
        }
    }
    Ok((0..w.k()).map(|k| w.mix_one(k, values)).collect())
}
