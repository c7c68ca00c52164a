//! Discrete calculus on masked grids.
//!
//! The gradient uses forward differences and is truncated to zero across
//! boundary faces. Its negative transpose with respect to the `h^2`-weighted
//! cell inner product is [`adjoint_divergence`]. Adding the flux through the
//! boundary faces gives [`divergence_with_flux`], and the exact summation by
//! parts
//!
//! ```text
//! sum_e phi_e u(c_e) h = <u, div_phi b> h^2 + <b, grad u> h^2
//! ```
//!
//! holds for every flux `phi`. [`divergence`] is the special case where the
//! flux is the outward normal component of `b` at the adjacent cell
//! ([`normal_trace`]).

use crate::error::{Error, Result};
use crate::field::{ensure_same_grid, BoundaryTrace, ScalarField, VectorField};
use crate::grid::{Dir, GridSpec};
use crate::linalg::{conjugate_gradient, neumann_laplacian, norm, remove_mean};
use crate::scalar::{norm2, Scalar};

/// Forward-difference gradient on raw slices.
pub(crate) fn gradient_into<T: Scalar>(grid: &GridSpec<T>, u: &[T], out: &mut [[T; 2]]) {
    let inv_h = T::one() / grid.h();
    for c in 0..grid.len() {
        let gx = match grid.neighbor(c, Dir::East) {
            Some(e) => (u[e] - u[c]) * inv_h,
            None => T::zero(),
        };
        let gy = match grid.neighbor(c, Dir::North) {
            Some(n) => (u[n] - u[c]) * inv_h,
            None => T::zero(),
        };
        out[c] = [gx, gy];
    }
}

/// Negative transpose of [`gradient_into`] (zero boundary flux).
pub(crate) fn adjoint_divergence_into<T: Scalar>(grid: &GridSpec<T>, b: &[[T; 2]], out: &mut [T]) {
    let inv_h = T::one() / grid.h();
    for c in 0..grid.len() {
        let mut acc = T::zero();
        if grid.neighbor(c, Dir::East).is_some() {
            acc = acc + b[c][0];
        }
        if let Some(w) = grid.neighbor(c, Dir::West) {
            acc = acc - b[w][0];
        }
        if grid.neighbor(c, Dir::North).is_some() {
            acc = acc + b[c][1];
        }
        if let Some(s) = grid.neighbor(c, Dir::South) {
            acc = acc - b[s][1];
        }
        out[c] = acc * inv_h;
    }
}

/// Adds `(1/h) * sum of flux over the boundary edges of each cell` to `out`.
pub(crate) fn add_flux_into<T: Scalar>(grid: &GridSpec<T>, flux: &[T], out: &mut [T]) {
    let inv_h = T::one() / grid.h();
    for (c, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for e in grid.edges_of(c) {
            acc = acc + flux[e];
        }
        *o = *o + acc * inv_h;
    }
}

pub(crate) fn normal_trace_into<T: Scalar>(grid: &GridSpec<T>, b: &[[T; 2]], out: &mut [T]) {
    for (e, edge) in grid.boundary_edges().iter().enumerate() {
        let v = b[edge.cell][edge.dir.axis()];
        out[e] = if edge.dir.sign() > 0 { v } else { -v };
    }
}

/// Forward-difference gradient; zero across boundary faces.
pub fn gradient<T: Scalar>(u: &ScalarField<T>) -> VectorField<T> {
    let grid = u.grid();
    let mut out = vec![[T::zero(); 2]; grid.len()];
    gradient_into(grid, u.values(), &mut out);
    VectorField::from_raw(grid.clone(), out)
}

/// Negative adjoint of [`gradient`]: the divergence of `b` with zero flux
/// through every boundary face.
pub fn adjoint_divergence<T: Scalar>(b: &VectorField<T>) -> ScalarField<T> {
    let grid = b.grid();
    let mut out = vec![T::zero(); grid.len()];
    adjoint_divergence_into(grid, b.values(), &mut out);
    ScalarField::from_raw(grid.clone(), out)
}

/// Divergence of `b` when `flux` leaves through the boundary faces.
pub fn divergence_with_flux<T: Scalar>(b: &VectorField<T>, flux: &BoundaryTrace<T>) -> Result<ScalarField<T>> {
    ensure_same_grid(b.grid(), flux.grid(), "divergence_with_flux")?;
    let grid = b.grid();
    let mut out = vec![T::zero(); grid.len()];
    adjoint_divergence_into(grid, b.values(), &mut out);
    add_flux_into(grid, flux.values(), &mut out);
    Ok(ScalarField::from_raw(grid.clone(), out))
}

/// Outward normal component of `b` at the masked cell adjacent to each boundary edge.
pub fn normal_trace<T: Scalar>(b: &VectorField<T>) -> BoundaryTrace<T> {
    let grid = b.grid();
    let mut out = vec![T::zero(); grid.boundary_edges().len()];
    normal_trace_into(grid, b.values(), &mut out);
    BoundaryTrace::from_raw(grid.clone(), out)
}

/// Divergence paired with [`normal_trace`] by exact summation by parts.
///
/// Per axis this is the backward difference of `b`, with the missing backward
/// neighbor replaced by the cell itself.
pub fn divergence<T: Scalar>(b: &VectorField<T>) -> ScalarField<T> {
    let grid = b.grid();
    let mut out = vec![T::zero(); grid.len()];
    adjoint_divergence_into(grid, b.values(), &mut out);
    let mut tr = vec![T::zero(); grid.boundary_edges().len()];
    normal_trace_into(grid, b.values(), &mut tr);
    add_flux_into(grid, &tr, &mut out);
    ScalarField::from_raw(grid.clone(), out)
}

/// `sum_e [b,nu] u h - <u, div b> h^2 - <b, grad u> h^2`; zero up to rounding.
pub fn ibp_defect<T: Scalar>(u: &ScalarField<T>, b: &VectorField<T>) -> Result<T> {
    ensure_same_grid(u.grid(), b.grid(), "ibp_defect")?;
    let grid = u.grid();
    let h = grid.h();
    let tr = normal_trace(b);
    let boundary: T = grid
        .boundary_edges()
        .iter()
        .zip(tr.values())
        .map(|(e, &t)| t * u.values()[e.cell])
        .sum::<T>()
        * h;
    let div = divergence(b);
    let grad = gradient(u);
    Ok(boundary - u.inner(&div) - b.inner(&grad))
}

/// Subtracts the cell mean.
pub fn mean_zero_project<T: Scalar>(u: &ScalarField<T>) -> ScalarField<T> {
    let m = u.mean();
    u.map(|v| v - m)
}

/// Largest singular value of the gradient, by power iteration on its normal operator.
pub fn operator_norm<T: Scalar>(grid: &GridSpec<T>) -> Result<T> {
    power_iteration(grid, false)
}

/// Largest singular value of the saddle operator `u -> (grad u, u|boundary)`
/// used for relaxed Dirichlet problems, in the weighted norms
/// (`h^2` on cells, `h` on boundary edges).
pub fn saddle_operator_norm<T: Scalar>(grid: &GridSpec<T>) -> Result<T> {
    power_iteration(grid, true)
}

const POWER_SWEEPS: usize = 10_000;

fn power_iteration<T: Scalar>(grid: &GridSpec<T>, with_boundary: bool) -> Result<T> {
    let n = grid.len();
    let h = grid.h();
    let inv_h2 = T::one() / (h * h);
    // Checkerboard start: close to the top mode of forward differences.
    let mut x: Vec<T> = (0..n)
        .map(|c| {
            let (i, j) = grid.coords(c);
            let s = if (i + j) % 2 == 0 { T::one() } else { -T::one() };
            s * (T::one() + T::lit(1e-3) * T::lit(((c * 37) % 11) as f64))
        })
        .collect();
    let mut y = vec![T::zero(); n];
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v = *v / nx);
    let mut prev = T::zero();
    let mut stable = 0usize;
    for _ in 0..POWER_SWEEPS {
        neumann_laplacian(grid, &x, &mut y);
        for c in 0..n {
            y[c] = y[c] * inv_h2;
            if with_boundary {
                let ne = grid.edges_of(c).len();
                y[c] = y[c] + T::from_usize_lossy(ne) / h * x[c];
            }
        }
        let lambda = crate::linalg::dot(&x, &y);
        let ny = norm(&y);
        if !(ny > T::zero()) {
            // single cell without neighbors: the gradient vanishes identically
            return Ok(if with_boundary { lambda.max(T::zero()).sqrt() } else { T::zero() });
        }
        for c in 0..n {
            x[c] = y[c] / ny;
        }
        if (lambda - prev).abs() <= T::lit(1e-10) * lambda {
            stable += 1;
            if stable >= 5 {
                return Ok(lambda.sqrt());
            }
        } else {
            stable = 0;
        }
        prev = lambda;
    }
    Err(Error::PowerIteration { sweeps: POWER_SWEEPS })
}

/// A mean-zero probe function used for Poincare and unboundedness estimates.
#[derive(Clone, Debug)]
pub struct Probe<T> {
    pub label: String,
    pub values: Vec<T>,
}

/// Probe family: mean-zero indicators of coordinate half-planes, the second
/// Neumann eigenfunction, and indicator sweep cuts of that eigenfunction.
pub fn probe_family<T: Scalar>(grid: &GridSpec<T>) -> Result<Vec<Probe<T>>> {
    let n = grid.len();
    if n < 2 {
        return Err(Error::DegenerateMask("a single cell admits no mean-zero probe".into()));
    }
    let mut probes = Vec::new();
    let mut push_indicator = |label: String, member: &dyn Fn(usize) -> bool| {
        let mut v: Vec<T> = (0..n).map(|c| if member(c) { T::one() } else { T::zero() }).collect();
        let count = v.iter().filter(|x| **x > T::zero()).count();
        if count == 0 || count == n {
            return;
        }
        remove_mean(&mut v);
        probes.push(Probe { label, values: v });
    };
    for k in 1..grid.nx() {
        push_indicator(format!("step x>={k}"), &|c| grid.coords(c).0 >= k);
    }
    for k in 1..grid.ny() {
        push_indicator(format!("step y>={k}"), &|c| grid.coords(c).1 >= k);
    }
    let fiedler = fiedler_vector(grid)?;
    let mut sorted = fiedler.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cuts = 64.min(n - 1);
    for k in 1..=cuts {
        let t = sorted[k * (n - 1) / cuts];
        push_indicator(format!("eigen-cut {k}/{cuts}"), &|c| fiedler[c] >= t);
    }
    probes.push(Probe { label: "second Neumann eigenfunction".into(), values: fiedler });
    Ok(probes)
}

/// Second eigenvector of the Neumann graph Laplacian by inverse iteration.
fn fiedler_vector<T: Scalar>(grid: &GridSpec<T>) -> Result<Vec<T>> {
    let n = grid.len();
    let mut x: Vec<T> = (0..n)
        .map(|c| {
            let p = grid.center(c);
            p[0] + T::lit(0.37) * p[1]
        })
        .collect();
    remove_mean(&mut x);
    if norm(&x) == T::zero() {
        x = (0..n).map(|c| T::from_usize_lossy(c)).collect();
        remove_mean(&mut x);
    }
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v = *v / nx);
    let mut lx = vec![T::zero(); n];
    let mut prev = T::infinity();
    for _ in 0..60 {
        let mut y = x.clone();
        conjugate_gradient(|u, o| neumann_laplacian(grid, u, o), &x, &mut y, T::lit(1e-10), 20 * n + 100, true)?;
        let ny = norm(&y);
        for c in 0..n {
            x[c] = y[c] / ny;
        }
        neumann_laplacian(grid, &x, &mut lx);
        let rq = crate::linalg::dot(&x, &lx);
        if (prev - rq).abs() <= T::lit(1e-9) * rq {
            break;
        }
        prev = rq;
    }
    Ok(x)
}

/// Weighted total variation `sum a |grad u| h^2` of raw values.
pub(crate) fn weighted_tv<T: Scalar>(grid: &GridSpec<T>, u: &[T], a: Option<&[T]>) -> T {
    let mut g = vec![[T::zero(); 2]; grid.len()];
    gradient_into(grid, u, &mut g);
    let h2 = grid.h() * grid.h();
    g.iter()
        .enumerate()
        .map(|(c, &v)| a.map_or(T::one(), |a| a[c]) * norm2(v))
        .sum::<T>()
        * h2
}

/// Lower estimate of the constant in `||u||_{L1} <= C TV(u)` over mean-zero
/// `u`: the largest ratio over [`probe_family`].
pub fn poincare_constant<T: Scalar>(grid: &GridSpec<T>) -> Result<T> {
    Ok(poincare_estimate(grid)?.0)
}

/// Like [`poincare_constant`], also naming the maximizing probe.
pub fn poincare_estimate<T: Scalar>(grid: &GridSpec<T>) -> Result<(T, String)> {
    let h2 = grid.h() * grid.h();
    let mut best = (T::zero(), String::new());
    for p in probe_family(grid)? {
        let tv = weighted_tv(grid, &p.values, None);
        if tv <= T::zero() {
            continue;
        }
        let l1 = p.values.iter().map(|v| v.abs()).sum::<T>() * h2;
        let ratio = l1 / tv;
        if ratio > best.0 {
            best = (ratio, p.label);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::field::Grid;

    fn square(n: usize, h: f64) -> Grid<f64> {
        Arc::new(GridSpec::full(n, n, h).unwrap())
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = Arc::new(GridSpec::disk(9, 9, 0.3, [0.0, 0.0]).unwrap());
        let u = ScalarField::constant(&g, 3.5);
        assert!(gradient(&u).values().iter().all(|v| v == &[0.0, 0.0]));
    }

    #[test]
    fn gradient_of_linear_field() {
        let g = square(4, 1.0);
        let u = ScalarField::from_fn(&g, |p| p[0]);
        let du = gradient(&u);
        for c in 0..g.len() {
            let (i, _) = g.coords(c);
            let expect = if i < 3 { 1.0 } else { 0.0 };
            assert_eq!(du.values()[c], [expect, 0.0]);
        }
    }

    #[test]
    fn gradient_matches_hand_computation() {
        let g = square(3, 0.5);
        let vals = vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4, 1.5, 0.0, 0.9];
        let u = ScalarField::new(g.clone(), vals.clone()).unwrap();
        let du = gradient(&u);
        let at = |i: usize, j: usize| vals[j * 3 + i];
        for j in 0..3 {
            for i in 0..3 {
                let gx = if i < 2 { (at(i + 1, j) - at(i, j)) / 0.5 } else { 0.0 };
                let gy = if j < 2 { (at(i, j + 1) - at(i, j)) / 0.5 } else { 0.0 };
                let got = du.values()[j * 3 + i];
                assert!((got[0] - gx).abs() < 1e-15 && (got[1] - gy).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn divergence_of_constant_vanishes_and_trace_carries_it() {
        let g = square(5, 0.25);
        let b = VectorField::constant(&g, [1.0, 0.0]);
        assert!(divergence(&b).values().iter().all(|v| v.abs() < 1e-14));
        // the plain adjoint sees the boundary jumps instead: +1/h on the West
        // column, -1/h on the East column
        let dc = adjoint_divergence(&b);
        for c in 0..g.len() {
            let (i, _) = g.coords(c);
            let expect = match i {
                0 => 4.0,
                4 => -4.0,
                _ => 0.0,
            };
            assert!((dc.values()[c] - expect).abs() < 1e-12);
        }
        let tr = normal_trace(&b);
        for (e, edge) in g.boundary_edges().iter().enumerate() {
            let expect = match edge.dir {
                Dir::East => 1.0,
                Dir::West => -1.0,
                _ => 0.0,
            };
            assert_eq!(tr.values()[e], expect);
        }
    }

    #[test]
    fn divergence_of_gradient_of_quadratic() {
        // u = x^2/2 has Laplacian 1; interior error is O(h)
        let mut errs = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let g = square(n, 1.0 / n as f64);
            let u = ScalarField::from_fn(&g, |p| 0.5 * p[0] * p[0]);
            let lap = divergence(&gradient(&u));
            let mut err: f64 = 0.0;
            for c in 0..g.len() {
                let (i, j) = g.coords(c);
                if i > 1 && i + 2 < n && j > 1 && j + 2 < n {
                    err = err.max((lap.values()[c] - 1.0).abs());
                }
            }
            errs.push(err);
        }
        assert!(errs.iter().all(|e| *e < 1e-9), "{errs:?}");
    }

    #[test]
    fn tangential_disk_field_trace_shrinks_under_refinement() {
        let mut means = Vec::new();
        for n in [16usize, 32, 64, 128] {
            let h = 2.0 / n as f64;
            let g = Arc::new(GridSpec::disk(n, n, h, [-1.0, -1.0]).unwrap());
            let b = VectorField::from_fn(&g, |p| [-p[1], p[0]]);
            let tr = normal_trace(&b);
            // edge-length weighted mean over the boundary
            let total: f64 = tr.values().iter().map(|v| v.abs()).sum::<f64>() * h;
            let len = tr.values().len() as f64 * h;
            means.push(total / len);
        }
        // staircase normals do not converge to the true normal, but the
        // tangential field's normal component is bounded by the deviation of
        // the cell center from the circle, which shrinks with h
        for w in means.windows(2) {
            assert!(w[1] < w[0] * 1.01, "{means:?}");
        }
    }

    #[test]
    fn ibp_zero_fields_exact() {
        let g = Arc::new(GridSpec::disk(7, 7, 0.2, [0.0, 0.0]).unwrap());
        let u = ScalarField::from_fn(&g, |p: [f64; 2]| p[0].sin() + p[1]);
        let b = VectorField::from_fn(&g, |p| [p[1], p[0] * p[0]]);
        assert_eq!(ibp_defect(&ScalarField::zeros(&g), &b).unwrap(), 0.0);
        assert_eq!(ibp_defect(&u, &VectorField::zeros(&g)).unwrap(), 0.0);
        assert!(ibp_defect(&u, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn flux_divergence_identity_for_arbitrary_flux() {
        let g = Arc::new(GridSpec::disk(8, 6, 0.3, [0.0, 0.0]).unwrap());
        let u = ScalarField::from_fn(&g, |p: [f64; 2]| (3.0 * p[0]).cos() - p[1]);
        let b = VectorField::from_fn(&g, |p| [p[0] * p[1], 1.0 - p[0]]);
        let phi = BoundaryTrace::from_fn(&g, |p| p[0] - 2.0 * p[1]);
        let div = divergence_with_flux(&b, &phi).unwrap();
        let h = g.h();
        let lhs: f64 = g.boundary_edges().iter().zip(phi.values()).map(|(e, f)| f * u.values()[e.cell]).sum::<f64>() * h;
        let rhs = u.inner(&div) + b.inner(&gradient(&u));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn mean_zero_projection() {
        let g = square(4, 1.0);
        let u = ScalarField::constant(&g, 5.0);
        assert!(mean_zero_project(&u).values().iter().all(|v| v.abs() < 1e-15));
        let w = ScalarField::from_fn(&g, |p| p[0] * p[1]);
        let p1 = mean_zero_project(&w);
        let p2 = mean_zero_project(&p1);
        for (a, b) in p1.values().iter().zip(p2.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(gradient(&p1).values().len(), gradient(&w).values().len());
        for (a, b) in gradient(&p1).values().iter().zip(gradient(&w).values()) {
            assert!((a[0] - b[0]).abs() < 1e-13 && (a[1] - b[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn operator_norm_scaling() {
        let g1 = GridSpec::<f64>::full(24, 24, 1.0).unwrap();
        let g2 = g1.rescaled(0.5).unwrap();
        let n1 = operator_norm(&g1).unwrap();
        let n2 = operator_norm(&g2).unwrap();
        assert!((n2 / n1 - 2.0).abs() < 1e-6);
        assert!(n1 <= 8f64.sqrt());
    }

    #[test]
    fn single_row_poincare_is_one_half() {
        let g = GridSpec::<f64>::single_row(64, 2, 0, 1.0 / 64.0).unwrap();
        let c = poincare_constant(&g).unwrap();
        assert!((0.5..=0.55).contains(&c), "{c}");
    }

    #[test]
    fn f32_grid_calculus() {
        let g = Arc::new(GridSpec::<f32>::disk(10, 10, 0.1, [0.0, 0.0]).unwrap());
        let u = ScalarField::from_fn(&g, |p| p[0] * 3.0 - p[1]);
        let b = VectorField::from_fn(&g, |p| [p[1], -p[0]]);
        let d = ibp_defect(&u, &b).unwrap();
        assert!(d.abs() < 1e-5);
    }
}
