//! Small dense-vector kernels: conjugate gradients and the graph Laplacians
//! of a masked grid.

use crate::error::{Error, Result};
use crate::grid::{Dir, GridSpec};
use crate::scalar::Scalar;

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn remove_mean<T: Scalar>(v: &mut [T]) {
    let m = v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len());
    for x in v.iter_mut() {
        *x = *x - m;
    }
}

/// Unscaled Neumann graph Laplacian: `(L u)(c) = sum over masked neighbors of (u(c) - u(n))`.
/// Equals `h^2` times the transpose-gradient-gradient product.
pub(crate) fn neumann_laplacian<T: Scalar>(grid: &GridSpec<T>, u: &[T], out: &mut [T]) {
    for c in 0..grid.len() {
        let mut acc = T::zero();
        for dir in Dir::ALL {
            if let Some(n) = grid.neighbor(c, dir) {
                acc = acc + (u[c] - u[n]);
            }
        }
        out[c] = acc;
    }
}

/// Conjugate gradients for a symmetric positive (semi-)definite operator.
///
/// With `mean_zero` set, iterates stay in the mean-zero subspace (the range of
/// a Neumann Laplacian); `rhs` must then be mean-zero as well. Stops when the
/// residual falls below `tol * max(|rhs|, tiny)`.
pub(crate) fn conjugate_gradient<T: Scalar>(
    mut apply: impl FnMut(&[T], &mut [T]),
    rhs: &[T],
    x: &mut [T],
    tol: T,
    max_iter: usize,
    mean_zero: bool,
) -> Result<usize> {
    let n = rhs.len();
    let mut r = vec![T::zero(); n];
    let mut ap = vec![T::zero(); n];
    if mean_zero {
        remove_mean(x);
    }
    apply(x, &mut ap);
    for k in 0..n {
        r[k] = rhs[k] - ap[k];
    }
    if mean_zero {
        remove_mean(&mut r);
    }
    let target = tol * norm(rhs).max(T::min_positive_value().sqrt());
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= target {
        return Ok(0);
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] = x[k] + alpha * p[k];
            r[k] = r[k] - alpha * ap[k];
        }
        if mean_zero {
            remove_mean(&mut r);
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            if mean_zero {
                remove_mean(x);
            }
            return Ok(it);
        }
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    Err(Error::ConjugateGradient { iters: max_iter, residual: rr.sqrt().to_f64_lossy() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_neumann_poisson() {
        let g = GridSpec::<f64>::full(8, 6, 1.0).unwrap();
        let mut rhs: Vec<f64> = (0..g.len()).map(|c| ((c * 7) % 5) as f64 - 2.0).collect();
        remove_mean(&mut rhs);
        let mut x = vec![0.0; g.len()];
        conjugate_gradient(|u, o| neumann_laplacian(&g, u, o), &rhs, &mut x, 1e-12, 1000, true).unwrap();
        let mut lx = vec![0.0; g.len()];
        neumann_laplacian(&g, &x, &mut lx);
        for (a, b) in lx.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
