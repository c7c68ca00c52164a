//! Problem instances: weight `a`, drift `F`, curvature `H` and the boundary
//! condition, with the primal energy, the dual objective and feasibility
//! residuals.

use serde::Serialize;

use crate::calculus::{adjoint_divergence_into, add_flux_into, gradient_into, poincare_estimate};
use crate::error::{Error, Result};
use crate::field::{ensure_same_grid, BoundaryTrace, DualField, Grid, ScalarField, VectorField};
use crate::linalg::{conjugate_gradient, neumann_laplacian};
use crate::scalar::{norm2, Scalar};

/// Safety factor applied to the Poincare estimate before issuing a verdict.
pub const POINCARE_SAFETY: f64 = 1.1;

#[derive(Clone, Debug)]
pub enum BoundaryCondition<T> {
    /// Mean-zero `u`, no boundary term.
    Neumann,
    /// Boundary penalty `sum_e a |u - f_e| h` with data on boundary edges.
    DirichletRelaxed { f: BoundaryTrace<T> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundaryKind {
    Neumann,
    DirichletRelaxed,
}

impl<T> BoundaryCondition<T> {
    pub fn kind(&self) -> BoundaryKind {
        match self {
            BoundaryCondition::Neumann => BoundaryKind::Neumann,
            BoundaryCondition::DirichletRelaxed { .. } => BoundaryKind::DirichletRelaxed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProblemSpec<T> {
    grid: Grid<T>,
    a: ScalarField<T>,
    drift: VectorField<T>,
    curvature: ScalarField<T>,
    bc: BoundaryCondition<T>,
}

impl<T: Scalar> ProblemSpec<T> {
    pub fn new(
        a: ScalarField<T>,
        drift: VectorField<T>,
        curvature: ScalarField<T>,
        bc: BoundaryCondition<T>,
    ) -> Result<Self> {
        let grid = a.grid().clone();
        ensure_same_grid(&grid, drift.grid(), "drift")?;
        ensure_same_grid(&grid, curvature.grid(), "curvature")?;
        if let BoundaryCondition::DirichletRelaxed { f } = &bc {
            ensure_same_grid(&grid, f.grid(), "boundary data")?;
            if f.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProblem("boundary data must be finite".into()));
            }
        }
        if let Some(c) = a.values().iter().position(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidProblem(format!("weight a must be positive and finite (cell {c})")));
        }
        if !drift.is_finite() || !curvature.is_finite() {
            return Err(Error::InvalidProblem("drift and curvature must be finite".into()));
        }
        Ok(ProblemSpec { grid, a, drift, curvature, bc })
    }

    /// Unit weight, zero drift and curvature, Neumann.
    pub fn plain(grid: &Grid<T>) -> Self {
        ProblemSpec {
            grid: grid.clone(),
            a: ScalarField::constant(grid, T::one()),
            drift: VectorField::zeros(grid),
            curvature: ScalarField::zeros(grid),
            bc: BoundaryCondition::Neumann,
        }
    }

    pub fn with_weight(mut self, a: ScalarField<T>) -> Result<Self> {
        self.a = a;
        Self::new(self.a, self.drift, self.curvature, self.bc)
    }

    pub fn with_drift(mut self, drift: VectorField<T>) -> Result<Self> {
        self.drift = drift;
        Self::new(self.a, self.drift, self.curvature, self.bc)
    }

    pub fn with_curvature(mut self, curvature: ScalarField<T>) -> Result<Self> {
        self.curvature = curvature;
        Self::new(self.a, self.drift, self.curvature, self.bc)
    }

    pub fn with_boundary(mut self, bc: BoundaryCondition<T>) -> Result<Self> {
        self.bc = bc;
        Self::new(self.a, self.drift, self.curvature, self.bc)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn weight(&self) -> &ScalarField<T> {
        &self.a
    }

    pub fn drift(&self) -> &VectorField<T> {
        &self.drift
    }

    pub fn curvature(&self) -> &ScalarField<T> {
        &self.curvature
    }

    pub fn boundary(&self) -> &BoundaryCondition<T> {
        &self.bc
    }

    pub fn is_neumann(&self) -> bool {
        matches!(self.bc, BoundaryCondition::Neumann)
    }

    pub fn dirichlet_data(&self) -> Option<&BoundaryTrace<T>> {
        match &self.bc {
            BoundaryCondition::DirichletRelaxed { f } => Some(f),
            BoundaryCondition::Neumann => None,
        }
    }

    /// Divergence target: `H - mean(H)` for Neumann, `H` otherwise.
    pub fn divergence_target(&self) -> ScalarField<T> {
        if self.is_neumann() {
            let m = self.curvature.mean();
            self.curvature.map(|v| v - m)
        } else {
            self.curvature.clone()
        }
    }

    /// Weight at the cell adjacent to each boundary edge.
    pub fn edge_weights(&self) -> Vec<T> {
        self.grid.boundary_edges().iter().map(|e| self.a.values()[e.cell]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyReport<T> {
    pub tv_term: T,
    pub curvature_term: T,
    pub boundary_term: T,
    pub total: T,
}

/// Rotated position field `X* = (y - cy, -(x - cx))` negated: `F = -X*`.
pub fn heisenberg_drift<T: Scalar>(grid: &Grid<T>, center: [T; 2]) -> VectorField<T> {
    VectorField::from_fn(grid, |p| [-(p[1] - center[1]), p[0] - center[0]])
}

fn mean_tolerance<T: Scalar>(u: &ScalarField<T>) -> T {
    T::lit(1e-8) * (T::one() + u.max_abs())
}

/// Energy without the mean-zero check; used by the solver's inner loops.
pub(crate) fn energy_raw<T: Scalar>(spec: &ProblemSpec<T>, u: &[T], scratch: &mut [[T; 2]]) -> EnergyReport<T> {
    let grid = spec.grid();
    let h = grid.h();
    let h2 = h * h;
    gradient_into(grid, u, scratch);
    let a = spec.a.values();
    let f = spec.drift.values();
    let mut tv = T::zero();
    let mut curv = T::zero();
    for c in 0..grid.len() {
        let g = scratch[c];
        tv = tv + a[c] * norm2([g[0] + f[c][0], g[1] + f[c][1]]);
        curv = curv + spec.curvature.values()[c] * u[c];
    }
    tv = tv * h2;
    curv = curv * h2;
    let mut bnd = T::zero();
    if let Some(fd) = spec.dirichlet_data() {
        for (e, edge) in grid.boundary_edges().iter().enumerate() {
            bnd = bnd + a[edge.cell] * (u[edge.cell] - fd.values()[e]).abs();
        }
        bnd = bnd * h;
    }
    EnergyReport { tv_term: tv, curvature_term: curv, boundary_term: bnd, total: tv + curv + bnd }
}

/// Discrete primal energy `sum a|Du + F| h^2 + sum H u h^2 (+ sum_e a|u - f| h)`.
pub fn primal_energy<T: Scalar>(u: &ScalarField<T>, spec: &ProblemSpec<T>) -> Result<EnergyReport<T>> {
    ensure_same_grid(u.grid(), spec.grid(), "primal_energy")?;
    if spec.is_neumann() {
        let m = u.mean();
        if m.abs() > mean_tolerance(u) {
            return Err(Error::NotMeanZero { mean: m.to_f64_lossy() });
        }
    }
    let mut scratch = vec![[T::zero(); 2]; spec.grid().len()];
    Ok(energy_raw(spec, u.values(), &mut scratch))
}

/// `<F, b> h^2`, the dual objective for zero boundary data.
pub fn dual_value<T: Scalar>(b: &VectorField<T>, spec: &ProblemSpec<T>) -> T {
    b.inner(spec.drift())
}

/// Full dual objective `<F, b> h^2 + sum_e phi_e f_e h` (the flux term only
/// for relaxed Dirichlet data).
pub fn dual_objective<T: Scalar>(n: &DualField<T>, spec: &ProblemSpec<T>) -> T {
    let mut v = dual_value(&n.field, spec);
    if let Some(f) = spec.dirichlet_data() {
        v = v + n.flux.inner(f);
    }
    v
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Residuals<T> {
    /// `max(0, max |b| - a)`, including `|phi_e| - a` on boundary edges.
    pub r_norm: T,
    /// `||div b - target||_2 h`.
    pub r_div: T,
    /// `max |phi_e|` for Neumann problems, zero otherwise.
    pub r_trace: T,
}

pub(crate) fn residuals_raw<T: Scalar>(
    spec: &ProblemSpec<T>,
    b: &[[T; 2]],
    flux: &[T],
    target: &[T],
    scratch: &mut [T],
) -> Residuals<T> {
    let grid = spec.grid();
    let a = spec.a.values();
    let mut r_norm = T::zero();
    for c in 0..grid.len() {
        r_norm = r_norm.max(norm2(b[c]) - a[c]);
    }
    adjoint_divergence_into(grid, b, scratch);
    add_flux_into(grid, flux, scratch);
    let r_div = scratch.iter().zip(target).map(|(&d, &t)| (d - t) * (d - t)).sum::<T>().sqrt() * grid.h();
    let mut r_trace = T::zero();
    if spec.is_neumann() {
        r_trace = flux.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    } else {
        for (e, edge) in grid.boundary_edges().iter().enumerate() {
            r_norm = r_norm.max(flux[e].abs() - a[edge.cell]);
        }
    }
    Residuals { r_norm: r_norm.max(T::zero()), r_div, r_trace }
}

/// Ball violation, divergence defect against [`ProblemSpec::divergence_target`],
/// and (Neumann) boundary flux.
pub fn feasibility_residuals<T: Scalar>(n: &DualField<T>, spec: &ProblemSpec<T>) -> Result<Residuals<T>> {
    ensure_same_grid(n.grid(), spec.grid(), "feasibility_residuals")?;
    let target = spec.divergence_target();
    let mut scratch = vec![T::zero(); spec.grid().len()];
    Ok(residuals_raw(spec, n.field.values(), n.flux.values(), target.values(), &mut scratch))
}

/// Result of [`reduce_dirichlet`].
#[derive(Clone, Debug)]
pub struct DirichletReduction<T> {
    pub spec: ProblemSpec<T>,
    pub offset: T,
    pub lift: ScalarField<T>,
}

/// Moves boundary data into the drift by subtracting a discrete harmonic
/// extension of `f`.
///
/// The lift solves the cell Laplacian with ghost values `2 f_e - w` across
/// boundary edges. The returned problem has drift `F + grad(lift)` and
/// boundary data `f_e - lift(c_e)`, which is `O(h)` for smooth data, so that
/// `E(u) = E'(u - lift) + offset` holds exactly for every `u`.
pub fn reduce_dirichlet<T: Scalar>(spec: &ProblemSpec<T>) -> Result<DirichletReduction<T>> {
    let f = spec
        .dirichlet_data()
        .ok_or_else(|| Error::InvalidProblem("reduce_dirichlet needs relaxed Dirichlet data".into()))?;
    let grid = spec.grid().clone();
    let n = grid.len();
    let two = T::lit(2.0);
    let mut rhs = vec![T::zero(); n];
    for (e, edge) in grid.boundary_edges().iter().enumerate() {
        rhs[edge.cell] = rhs[edge.cell] + two * f.values()[e];
    }
    let mut lift = vec![T::zero(); n];
    if rhs.iter().any(|v| *v != T::zero()) {
        // start from the mean of the data; exact for constant data
        let mean = f.values().iter().copied().sum::<T>() / T::from_usize_lossy(f.values().len().max(1));
        lift.iter_mut().for_each(|v| *v = mean);
        let apply = |x: &[T], out: &mut [T]| {
            neumann_laplacian(&grid, x, out);
            for c in 0..n {
                out[c] = out[c] + two * T::from_usize_lossy(grid.edges_of(c).len()) * x[c];
            }
        };
        conjugate_gradient(apply, &rhs, &mut lift, T::lit(1e-10), 20 * n + 200, false)?;
    }
    let lift = ScalarField::from_raw(grid.clone(), lift);
    let mut g = vec![[T::zero(); 2]; n];
    gradient_into(&grid, lift.values(), &mut g);
    let drift = VectorField::from_raw(
        grid.clone(),
        spec.drift.values().iter().zip(&g).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]).collect(),
    );
    let f_reduced = BoundaryTrace::from_raw(
        grid.clone(),
        grid.boundary_edges().iter().zip(f.values()).map(|(e, &fv)| fv - lift.values()[e.cell]).collect(),
    );
    let offset = spec.curvature.inner(&lift);
    let reduced = ProblemSpec {
        grid: grid.clone(),
        a: spec.a.clone(),
        drift,
        curvature: spec.curvature.clone(),
        bc: BoundaryCondition::DirichletRelaxed { f: f_reduced },
    };
    Ok(DirichletReduction { spec: reduced, offset, lift })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExistenceVerdict {
    Guaranteed,
    Unknown,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport<T> {
    /// Probe-family lower estimate of the Poincare constant.
    pub c_omega: T,
    /// `max |H|`.
    pub h_norm: T,
    /// `1 / (1.1 c_omega)`.
    pub bound: T,
    pub verdict: ExistenceVerdict,
    /// Probe attaining `c_omega`.
    pub probe: String,
}

/// Sufficient condition for a Neumann minimizer: `max|H| < 1/(1.1 C)`.
pub fn existence_threshold<T: Scalar>(spec: &ProblemSpec<T>) -> Result<ThresholdReport<T>> {
    if !spec.is_neumann() {
        return Err(Error::InvalidProblem("existence threshold applies to Neumann problems".into()));
    }
    let (c_omega, probe) = poincare_estimate(spec.grid())?;
    let h_norm = spec.curvature.max_abs();
    let bound = T::one() / (T::lit(POINCARE_SAFETY) * c_omega);
    let verdict = if h_norm < bound { ExistenceVerdict::Guaranteed } else { ExistenceVerdict::Unknown };
    Ok(ThresholdReport { c_omega, h_norm, bound, verdict, probe })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn heisenberg_drift_values() {
        let g = Arc::new(GridSpec::full(5, 5, 1.0).unwrap());
        let c = g.center(12);
        let f = heisenberg_drift(&g, c);
        assert_eq!(f.values()[12], [0.0, 0.0]);
        // one cell to the right of the center
        assert_eq!(f.values()[13], [0.0, 1.0]);
    }

    #[test]
    fn neumann_rejects_nonzero_mean() {
        let g = Arc::new(GridSpec::full(4, 4, 1.0).unwrap());
        let spec = ProblemSpec::plain(&g);
        let u = ScalarField::constant(&g, 1.0);
        assert!(matches!(primal_energy(&u, &spec), Err(Error::NotMeanZero { .. })));
    }

    #[test]
    fn zero_field_energy() {
        let g = Arc::new(GridSpec::full(6, 4, 0.5).unwrap());
        let spec = ProblemSpec::plain(&g).with_curvature(ScalarField::from_fn(&g, |p| p[0])).unwrap();
        let e = primal_energy(&ScalarField::zeros(&g), &spec).unwrap();
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn rejects_nonpositive_weight() {
        let g = Arc::new(GridSpec::full(3, 3, 1.0).unwrap());
        let r = ProblemSpec::plain(&g).with_weight(ScalarField::constant(&g, 0.0));
        assert!(matches!(r, Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn dirichlet_zero_data_reduction_is_identity() {
        let g = Arc::new(GridSpec::disk(10, 10, 0.2, [-1.0, -1.0]).unwrap());
        let spec = ProblemSpec::plain(&g)
            .with_drift(heisenberg_drift(&g, [0.0, 0.0]))
            .unwrap()
            .with_boundary(BoundaryCondition::DirichletRelaxed { f: BoundaryTrace::zeros(&g) })
            .unwrap();
        let r = reduce_dirichlet(&spec).unwrap();
        assert_eq!(r.offset, 0.0);
        assert!(r.lift.values().iter().all(|v| *v == 0.0));
        assert_eq!(r.spec.drift().values(), spec.drift().values());
    }

    #[test]
    fn constant_data_lifts_to_constant() {
        let g = Arc::new(GridSpec::full(8, 8, 0.125).unwrap());
        let h = ScalarField::from_fn(&g, |p: [f64; 2]| p[0] - p[1] * p[1]);
        let spec = ProblemSpec::plain(&g)
            .with_curvature(h.clone())
            .unwrap()
            .with_boundary(BoundaryCondition::DirichletRelaxed { f: BoundaryTrace::from_fn(&g, |_| 3.0) })
            .unwrap();
        let r = reduce_dirichlet(&spec).unwrap();
        for v in r.lift.values() {
            assert!((*v - 3.0f64).abs() < 1e-9);
        }
        let expect: f64 = h.values().iter().sum::<f64>() * 3.0 * 0.125 * 0.125;
        assert!((r.offset - expect).abs() < 1e-9);
    }
}
