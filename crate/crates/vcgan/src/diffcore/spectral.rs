//! Spectral normalization via power iteration.
//!
//! A weight viewed as a matrix W (output rows, flattened inputs as columns)
//! is divided by an estimate of its largest singular value. The estimate
//! comes from power iteration on a persistent unit vector `u` carried
//! across training steps: one iteration per step is enough once training
//! is underway, tests can ask for more.

use crate::rng::Rng;

use super::tensor::{Scalar, Tensor};
use super::DiffError;

const SIGMA_FLOOR: f64 = 1e-12;

/// Persistent power-iteration state for one normalized weight.
#[derive(Debug, Clone)]
pub struct SpectralState<T: Scalar> {
    /// Left singular vector estimate, length = weight output dimension.
    pub u: Vec<T>,
    /// Iterations applied per update request.
    pub power_iterations: usize,
}

impl<T: Scalar> SpectralState<T> {
    /// Random unit vector start.
    pub fn new(rows: usize, rng: &mut Rng) -> Self {
        let mut u: Vec<T> = (0..rows).map(|_| T::from_f64(rng.gaussian())).collect();
        normalize_in_place(&mut u);
        SpectralState { u, power_iterations: 1 }
    }

    pub fn from_u(u: Vec<T>, power_iterations: usize) -> Self {
        SpectralState { u, power_iterations }
    }
}

fn normalize_in_place<T: Scalar>(v: &mut [T]) {
    let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    if norm > T::from_f64(SIGMA_FLOOR) {
        for x in v.iter_mut() {
            *x /= norm;
        }
    } else if !v.is_empty() {
        // degenerate start: fall back to a basis vector
        for x in v.iter_mut() {
            *x = T::zero();
        }
        v[0] = T::one();
    }
}

/// Run `rounds` power iterations of u <- normalize(W (W^T u)) on the state.
pub fn power_iterate<T: Scalar>(w: &[T], rows: usize, cols: usize, state: &mut SpectralState<T>, rounds: usize) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(state.u.len(), rows);
    for _ in 0..rounds {
        // v = W^T u, normalized
        let mut v = vec![T::zero(); cols];
        for r in 0..rows {
            let ur = state.u[r];
            if ur == T::zero() {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            for (vj, &wj) in v.iter_mut().zip(row) {
                *vj += ur * wj;
            }
        }
        normalize_in_place(&mut v);
        // u = W v, normalized
        let mut u = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &w[r * cols..(r + 1) * cols];
            u[r] = row.iter().zip(&v).fold(T::zero(), |acc, (&wj, &vj)| acc + wj * vj);
        }
        normalize_in_place(&mut u);
        state.u = u;
    }
}

/// Normalize W by sigma = ||W^T u|| with the given (fixed) u.
/// Returns (sigma, v, W / sigma) where v = W^T u / sigma.
pub fn normalize_with<T: Scalar>(w: &[T], rows: usize, cols: usize, u: &[T]) -> (T, Vec<T>, Vec<T>) {
    let mut wtu = vec![T::zero(); cols];
    for r in 0..rows {
        let ur = u[r];
        if ur == T::zero() {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (vj, &wj) in wtu.iter_mut().zip(row) {
            *vj += ur * wj;
        }
    }
    let sigma = wtu.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let floor = T::from_f64(SIGMA_FLOOR);
    let safe = sigma.max(floor);
    let v: Vec<T> = wtu.iter().map(|&x| x / safe).collect();
    let normalized: Vec<T> = w.iter().map(|&x| x / safe).collect();
    (safe, v, normalized)
}

/// Gradient of `normalize_with` w.r.t. W, with u held fixed:
/// d(W/sigma) has dW = g/sigma - (<g, W> / sigma^2) u v^T,
/// which is exact because sigma = ||W^T u|| and d sigma / dW = u v^T.
pub fn normalize_backward<T: Scalar>(g: &[T], w: &[T], u: &[T], v: &[T], sigma: T) -> Vec<T> {
    let dot = g.iter().zip(w).fold(T::zero(), |acc, (&gi, &wi)| acc + gi * wi);
    let coeff = dot / (sigma * sigma);
    let rows = u.len();
    let cols = v.len();
    let mut dw = vec![T::zero(); w.len()];
    for r in 0..rows {
        for c in 0..cols {
            dw[r * cols + c] = g[r * cols + c] / sigma - coeff * u[r] * v[c];
        }
    }
    dw
}

/// Standalone operation: run the state's configured number of power
/// iterations, then return the weight divided by the spectral norm
/// estimate. The weight is viewed as (shape[0], product of the rest).
pub fn spectral_normalize<T: Scalar>(
    weight: &Tensor<T>,
    state: &mut SpectralState<T>,
) -> Result<Tensor<T>, DiffError> {
    if weight.shape.is_empty() {
        return Err(DiffError::ShapeMismatch("spectral_normalize on empty shape".into()));
    }
    let rows = weight.shape[0];
    let cols: usize = weight.shape[1..].iter().product();
    if state.u.len() != rows {
        return Err(DiffError::ShapeMismatch(format!(
            "spectral state length {} does not match {} rows",
            state.u.len(),
            rows
        )));
    }
    power_iterate(&weight.data, rows, cols, state, state.power_iterations);
    let (_, _, normalized) = normalize_with(&weight.data, rows, cols, &state.u);
    Tensor::from_vec(weight.shape.clone(), normalized)
}

/// Current spectral norm estimate for a weight, without normalizing.
pub fn sigma_estimate<T: Scalar>(w: &[T], rows: usize, cols: usize, state: &SpectralState<T>) -> T {
    let (sigma, _, _) = normalize_with(w, rows, cols, &state.u);
    sigma
}
