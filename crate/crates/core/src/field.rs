//! Value-semantic fields over the masked cells (or boundary edges) of a grid.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::scalar::{norm2, Scalar};

/// Shared handle to a grid.
pub type Grid<T> = Arc<GridSpec<T>>;

fn same_grid<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn ensure_same_grid<T: Scalar>(a: &Grid<T>, b: &Grid<T>, what: &str) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::FieldMismatch(format!("{what}: fields live on different grids")))
    }
}

fn check_finite<T: Scalar>(values: impl Iterator<Item = T>, what: &str) -> Result<()> {
    for (k, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::FieldMismatch(format!("{what}: entry {k} is not finite")));
        }
    }
    Ok(())
}

/// One real per masked cell.
#[derive(Clone, Debug)]
pub struct ScalarField<T> {
    grid: Grid<T>,
    values: Vec<T>,
}

/// One real 2-vector per masked cell.
#[derive(Clone, Debug)]
pub struct VectorField<T> {
    grid: Grid<T>,
    values: Vec<[T; 2]>,
}

/// One real per boundary edge: a discrete normal component on the boundary.
#[derive(Clone, Debug)]
pub struct BoundaryTrace<T> {
    grid: Grid<T>,
    values: Vec<T>,
}

impl<T: Scalar> ScalarField<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldMismatch(format!(
                "scalar field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        check_finite(values.iter().copied(), "scalar field")?;
        Ok(ScalarField { grid, values })
    }

    /// Internal constructor for values produced by trusted arithmetic.
    pub(crate) fn from_raw(grid: Grid<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn constant(grid: &Grid<T>, c: T) -> Self {
        ScalarField { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: &Grid<T>, mut f: impl FnMut([T; 2]) -> T) -> Self {
        let values = (0..grid.len()).map(|c| f(grid.center(c))).collect();
        ScalarField { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        ensure_same_grid(&self.grid, &other.grid, "zip_map")?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Cell-average.
    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::from_usize_lossy(self.values.len())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Integral `sum(u * v) h^2` in row-major order.
    pub fn inner(&self, other: &Self) -> T {
        let h2 = self.grid.h() * self.grid.h();
        self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum::<T>() * h2
    }

    /// Plain Euclidean norm of the value vector.
    pub fn norm_l2_raw(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// `L^2(Omega)` norm: `h * sqrt(sum u^2)`.
    pub fn norm_l2(&self) -> T {
        self.norm_l2_raw() * self.grid.h()
    }

    /// `L^1(Omega)` norm: `sum |u| h^2`.
    pub fn norm_l1(&self) -> T {
        self.values.iter().map(|v| v.abs()).sum::<T>() * self.grid.h() * self.grid.h()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> VectorField<T> {
    pub fn new(grid: Grid<T>, values: Vec<[T; 2]>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldMismatch(format!(
                "vector field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        check_finite(values.iter().flat_map(|v| v.iter().copied()), "vector field")?;
        Ok(VectorField { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid<T>, values: Vec<[T; 2]>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        VectorField { grid, values }
    }

    pub fn constant(grid: &Grid<T>, c: [T; 2]) -> Self {
        VectorField { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, [T::zero(), T::zero()])
    }

    pub fn from_fn(grid: &Grid<T>, mut f: impl FnMut([T; 2]) -> [T; 2]) -> Self {
        let values = (0..grid.len()).map(|c| f(grid.center(c))).collect();
        VectorField { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[[T; 2]] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [[T; 2]] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<[T; 2]> {
        self.values
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        ensure_same_grid(&self.grid, &other.grid, "add")?;
        Ok(VectorField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1]])
                .collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        VectorField { grid: self.grid.clone(), values: self.values.iter().map(|v| [v[0] * s, v[1] * s]).collect() }
    }

    /// Integral `sum(b . c) h^2`.
    pub fn inner(&self, other: &Self) -> T {
        let h2 = self.grid.h() * self.grid.h();
        self.values.iter().zip(&other.values).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum::<T>() * h2
    }

    /// Pointwise Euclidean magnitudes.
    pub fn magnitudes(&self) -> ScalarField<T> {
        ScalarField::from_raw(self.grid.clone(), self.values.iter().map(|&v| norm2(v)).collect())
    }

    pub fn max_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(norm2(v)))
    }

    /// Plain Euclidean norm over all components.
    pub fn norm_l2_raw(&self) -> T {
        self.values.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<T>().sqrt()
    }

    pub fn norm_l2(&self) -> T {
        self.norm_l2_raw() * self.grid.h()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v[0].is_finite() && v[1].is_finite())
    }
}

impl<T: Scalar> BoundaryTrace<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.boundary_edges().len() {
            return Err(Error::FieldMismatch(format!(
                "boundary trace has {} values, grid has {} boundary edges",
                values.len(),
                grid.boundary_edges().len()
            )));
        }
        check_finite(values.iter().copied(), "boundary trace")?;
        Ok(BoundaryTrace { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.boundary_edges().len());
        BoundaryTrace { grid, values }
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        BoundaryTrace { grid: grid.clone(), values: vec![T::zero(); grid.boundary_edges().len()] }
    }

    /// Samples `f` at boundary edge midpoints.
    pub fn from_fn(grid: &Grid<T>, mut f: impl FnMut([T; 2]) -> T) -> Self {
        let values = (0..grid.boundary_edges().len()).map(|e| f(grid.edge_midpoint(e))).collect();
        BoundaryTrace { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Boundary integral `sum(phi * g) h`.
    pub fn inner(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum::<T>() * self.grid.h()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }
}

/// A dual vector field together with the normal flux it carries through each
/// boundary edge.
///
/// Forward differences leave one cell component per lattice face, so the flux
/// through a West or South boundary face has no slot in a cell-valued field.
/// Certificates therefore carry it explicitly. For a bare cell field the flux
/// is its own [`normal_trace`](crate::calculus::normal_trace).
#[derive(Clone, Debug)]
pub struct DualField<T> {
    pub field: VectorField<T>,
    pub flux: BoundaryTrace<T>,
}

impl<T: Scalar> DualField<T> {
    pub fn new(field: VectorField<T>, flux: BoundaryTrace<T>) -> Result<Self> {
        ensure_same_grid(field.grid(), flux.grid(), "dual field")?;
        Ok(DualField { field, flux })
    }

    /// Flux taken from the cell field's outward normal component.
    pub fn from_cell_field(field: VectorField<T>) -> Self {
        let flux = crate::calculus::normal_trace(&field);
        DualField { field, flux }
    }

    /// Field with zero flux through every boundary edge.
    pub fn zero_flux(field: VectorField<T>) -> Self {
        let flux = BoundaryTrace::zeros(field.grid());
        DualField { field, flux }
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::zero_flux(VectorField::zeros(grid))
    }

    pub fn grid(&self) -> &Grid<T> {
        self.field.grid()
    }
}
