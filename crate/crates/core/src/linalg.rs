//! Small dense helpers over row-major `f64` slices.

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `y = A x` for a row-major `rows x cols` matrix.
pub fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    (0..rows)
        .map(|r| dot(&a[r * cols..(r + 1) * cols], x))
        .collect()
}

/// `y = A^T x` for a row-major `rows x cols` matrix.
pub fn matvec_t(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; cols];
    for r in 0..rows {
        let xr = x[r];
        if xr == 0.0 {
            continue;
        }
        for (yc, arc) in y.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *yc += arc * xr;
        }
    }
    y
}

pub fn frobenius(a: &[f64]) -> f64 {
    norm(a)
}

/// Outcome of a power iteration on `A^T A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value of a row-major matrix by power iteration on
/// `A^T A`, started from the all-ones direction perturbed by index so that
/// it is not orthogonal to the top singular vector for generic inputs.
pub fn spectral_norm(a: &[f64], rows: usize, cols: usize, max_iter: usize, tol: f64) -> SpectralNorm {
    if rows == 0 || cols == 0 || a.iter().all(|&v| v == 0.0) {
        return SpectralNorm {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + 0.01 * (i as f64 + 1.0).sin()).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    let mut sigma = 0.0;
    for it in 1..=max_iter {
        let av = matvec(a, rows, cols, &v);
        let next_sigma = norm(&av);
        let mut w = matvec_t(a, rows, cols, &av);
        let wn = norm(&w);
        if wn == 0.0 {
            return SpectralNorm {
                value: next_sigma,
                iterations: it,
                converged: true,
            };
        }
        w.iter_mut().for_each(|x| *x /= wn);
        let done = (next_sigma - sigma).abs() <= tol * next_sigma;
        sigma = next_sigma;
        v = w;
        if done {
            // one more step so the returned value matches the final vector
            let value = norm(&matvec(a, rows, cols, &v)).max(sigma);
            return SpectralNorm {
                value,
                iterations: it,
                converged: true,
            };
        }
    }
    SpectralNorm {
        value: sigma,
        iterations: max_iter,
        converged: false,
    }
}

/// Largest singular value from a dense SVD.
pub fn max_singular_value(a: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(rows, cols, a);
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Top singular value and right singular vector by power iteration, for
/// small matrices where a fixed iteration count is enough.
pub fn top_singular_pair(a: &[f64], rows: usize, cols: usize, iters: usize) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + 0.01 * (i as f64 + 1.0).sin()).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    for _ in 0..iters {
        let w = matvec_t(a, rows, cols, &matvec(a, rows, cols, &v));
        let wn = norm(&w);
        if wn == 0.0 {
            return (0.0, v);
        }
        v = w.into_iter().map(|x| x / wn).collect();
    }
    (norm(&matvec(a, rows, cols, &v)), v)
}

/// Eigenvalues of a symmetric row-major `k x k` matrix, ascending.
pub fn symmetric_eigenvalues(a: &[f64], k: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(k, k, a);
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}
