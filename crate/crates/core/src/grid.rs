//! Rectangular lattices with a domain mask.
//!
//! Cells are addressed by lattice coordinates `(i, j)` with `i` along x and
//! `j` along y. Masked cells are numbered row-major (all `i` of row `j = 0`,
//! then row `j = 1`, ...); every field in the crate stores one entry per masked
//! cell in that order. Boundary edges are the faces of masked cells that touch
//! an unmasked cell or the edge of the lattice.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned direction of a cell face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    East,
    West,
    North,
    South,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::East, Dir::West, Dir::North, Dir::South];

    /// Outward unit normal as lattice offsets.
    pub fn offset(self) -> (i64, i64) {
        match self {
            Dir::East => (1, 0),
            Dir::West => (-1, 0),
            Dir::North => (0, 1),
            Dir::South => (0, -1),
        }
    }

    /// 0 for x, 1 for y.
    pub fn axis(self) -> usize {
        match self {
            Dir::East | Dir::West => 0,
            Dir::North | Dir::South => 1,
        }
    }

    /// +1 for East/North, -1 for West/South.
    pub fn sign(self) -> i8 {
        match self {
            Dir::East | Dir::North => 1,
            Dir::West | Dir::South => -1,
        }
    }

    pub fn normal<T: Scalar>(self) -> [T; 2] {
        let (dx, dy) = self.offset();
        [T::lit(dx as f64), T::lit(dy as f64)]
    }

    fn slot(self) -> usize {
        match self {
            Dir::East => 0,
            Dir::West => 1,
            Dir::North => 2,
            Dir::South => 3,
        }
    }
}

/// A face of a masked cell lying on the domain boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    /// Masked-cell index of the adjacent cell inside the domain.
    pub cell: usize,
    /// Outward direction of the face.
    pub dir: Dir,
}

/// Rectangular lattice of `nx * ny` square cells of width `h`, restricted to a
/// 4-connected mask.
#[derive(Clone, Debug)]
pub struct GridSpec<T> {
    nx: usize,
    ny: usize,
    h: T,
    origin: [T; 2],
    mask: Vec<bool>,
    cells: Vec<(usize, usize)>,
    lattice_to_cell: Vec<Option<usize>>,
    neighbors: Vec<[Option<usize>; 4]>,
    boundary_edges: Vec<BoundaryEdge>,
    edge_start: Vec<usize>,
}

impl<T: Scalar> PartialEq for GridSpec<T> {
    fn eq(&self, other: &Self) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.h == other.h
            && self.origin == other.origin
            && self.mask == other.mask
    }
}

impl<T: Scalar> GridSpec<T> {
    /// Builds a grid with the lower-left lattice corner at the origin.
    pub fn new(nx: usize, ny: usize, h: T, mask: Vec<bool>) -> Result<Self> {
        Self::with_origin(nx, ny, h, [T::zero(), T::zero()], mask)
    }

    pub fn with_origin(nx: usize, ny: usize, h: T, origin: [T; 2], mask: Vec<bool>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!("nx, ny must be >= 2 (got {nx} x {ny})")));
        }
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("mesh width must be positive (got {h})")));
        }
        if !origin[0].is_finite() || !origin[1].is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        if mask.len() != nx * ny {
            return Err(Error::InvalidGrid(format!(
                "mask has {} entries, expected {}",
                mask.len(),
                nx * ny
            )));
        }

        let mut cells = Vec::new();
        let mut lattice_to_cell = vec![None; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                if mask[j * nx + i] {
                    lattice_to_cell[j * nx + i] = Some(cells.len());
                    cells.push((i, j));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidGrid("mask has no cells".into()));
        }

        let lookup = |i: i64, j: i64| -> Option<usize> {
            if i < 0 || j < 0 || i >= nx as i64 || j >= ny as i64 {
                None
            } else {
                lattice_to_cell[j as usize * nx + i as usize]
            }
        };

        let mut neighbors = Vec::with_capacity(cells.len());
        let mut boundary_edges = Vec::new();
        let mut edge_start = Vec::with_capacity(cells.len() + 1);
        for (c, &(i, j)) in cells.iter().enumerate() {
            let mut nb = [None; 4];
            edge_start.push(boundary_edges.len());
            for dir in Dir::ALL {
                let (di, dj) = dir.offset();
                let n = lookup(i as i64 + di, j as i64 + dj);
                nb[dir.slot()] = n;
                if n.is_none() {
                    boundary_edges.push(BoundaryEdge { cell: c, dir });
                }
            }
            neighbors.push(nb);
        }
        edge_start.push(boundary_edges.len());

        let grid = GridSpec {
            nx,
            ny,
            h,
            origin,
            mask,
            cells,
            lattice_to_cell,
            neighbors,
            boundary_edges,
            edge_start,
        };
        if !grid.is_connected() {
            return Err(Error::InvalidGrid("mask is not 4-connected".into()));
        }
        Ok(grid)
    }

    /// Full rectangular mask.
    pub fn full(nx: usize, ny: usize, h: T) -> Result<Self> {
        Self::new(nx, ny, h, vec![true; nx * ny])
    }

    /// Inscribed disk: cells whose centers lie within `min(nx, ny) * h / 2` of
    /// the lattice center.
    pub fn disk(nx: usize, ny: usize, h: T, origin: [T; 2]) -> Result<Self> {
        Self::with_origin(nx, ny, h, origin, disk_mask(nx, ny))
    }

    /// Single masked row `row` of an `nx x ny` lattice: a one-dimensional interval.
    pub fn single_row(nx: usize, ny: usize, row: usize, h: T) -> Result<Self> {
        if row >= ny {
            return Err(Error::InvalidGrid(format!("row {row} outside lattice of {ny} rows")));
        }
        let mut mask = vec![false; nx * ny];
        for i in 0..nx {
            mask[row * nx + i] = true;
        }
        Self::new(nx, ny, h, mask)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn origin(&self) -> [T; 2] {
        self.origin
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of masked cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Lattice coordinates of masked cell `c`.
    pub fn coords(&self, c: usize) -> (usize, usize) {
        self.cells[c]
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    /// Masked-cell index at lattice coordinates, if masked.
    pub fn cell_at(&self, i: i64, j: i64) -> Option<usize> {
        if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
            None
        } else {
            self.lattice_to_cell[j as usize * self.nx + i as usize]
        }
    }

    #[inline]
    pub fn neighbor(&self, c: usize, dir: Dir) -> Option<usize> {
        self.neighbors[c][dir.slot()]
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// Range of indices into [`Self::boundary_edges`] owned by cell `c`.
    #[inline]
    pub fn edges_of(&self, c: usize) -> std::ops::Range<usize> {
        self.edge_start[c]..self.edge_start[c + 1]
    }

    /// Physical position of the center of masked cell `c`.
    pub fn center(&self, c: usize) -> [T; 2] {
        let (i, j) = self.cells[c];
        let half = T::lit(0.5);
        [
            self.origin[0] + (T::from_usize_lossy(i) + half) * self.h,
            self.origin[1] + (T::from_usize_lossy(j) + half) * self.h,
        ]
    }

    /// Physical position of the midpoint of boundary edge `e`.
    pub fn edge_midpoint(&self, e: usize) -> [T; 2] {
        let edge = self.boundary_edges[e];
        let c = self.center(edge.cell);
        let n: [T; 2] = edge.dir.normal();
        let half = T::lit(0.5) * self.h;
        [c[0] + n[0] * half, c[1] + n[1] * half]
    }

    /// Recomputes the boundary edge list from the mask alone.
    pub fn derive_boundary_edges(&self) -> Vec<BoundaryEdge> {
        let mut out = Vec::new();
        for (c, &(i, j)) in self.cells.iter().enumerate() {
            for dir in Dir::ALL {
                let (di, dj) = dir.offset();
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                let inside = ni >= 0
                    && nj >= 0
                    && ni < self.nx as i64
                    && nj < self.ny as i64
                    && self.mask[nj as usize * self.nx + ni as usize];
                if !inside {
                    out.push(BoundaryEdge { cell: c, dir });
                }
            }
        }
        out
    }

    /// Same mask and lattice with a different mesh width.
    pub fn rescaled(&self, h: T) -> Result<Self> {
        let s = h / self.h;
        Self::with_origin(self.nx, self.ny, h, [self.origin[0] * s, self.origin[1] * s], self.mask.clone())
    }

    /// Physical area of the domain.
    pub fn area(&self) -> T {
        T::from_usize_lossy(self.len()) * self.h * self.h
    }

    fn is_connected(&self) -> bool {
        let n = self.cells.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(c) = queue.pop_front() {
            for nb in self.neighbors[c].iter().flatten() {
                if !seen[*nb] {
                    seen[*nb] = true;
                    count += 1;
                    queue.push_back(*nb);
                }
            }
        }
        count == n
    }
}

/// Mask of the disk inscribed in an `nx x ny` lattice.
pub fn disk_mask(nx: usize, ny: usize) -> Vec<bool> {
    let r = nx.min(ny) as f64 / 2.0;
    let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    let mut mask = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (i as f64 + 0.5 - cx, j as f64 + 0.5 - cy);
            mask[j * nx + i] = x * x + y * y <= r * r;
        }
    }
    mask
}

/// Run-length encoding of a lattice mask: alternating run lengths starting
/// with a (possibly empty) run of `false`.
pub fn rle_encode(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

/// Inverse of [`rle_encode`]; fails if the runs do not cover exactly `expected` cells.
pub fn rle_decode(runs: &[usize], expected: usize) -> Result<Vec<bool>> {
    let total: usize = runs.iter().sum();
    if total != expected {
        return Err(Error::InvalidGrid(format!(
            "mask run-length encoding covers {total} cells, expected {expected}"
        )));
    }
    let mut mask = Vec::with_capacity(expected);
    let mut value = false;
    for &r in runs {
        mask.extend(std::iter::repeat_n(value, r));
        value = !value;
    }
    Ok(mask)
}
