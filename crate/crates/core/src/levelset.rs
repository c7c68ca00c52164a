//! Level sets and the psi-perimeter
//!
//! ```text
//! P_psi(E; A) = sum_{x in A} a |D chi_E + F chi_E| h^2 + sum_{x in A} H chi_E h^2
//! ```
//!
//! with forward differences of the indicator. A [`Region`] may also carry an
//! exterior membership per boundary edge, which adds `a |chi_E - ext| h` for
//! each boundary face: the jump between `E` and prescribed data outside.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ensure_same_grid, Grid, ScalarField};
use crate::grid::{Dir, GridSpec};
use crate::problem::ProblemSpec;
use crate::scalar::{norm2, Scalar};

/// Largest number of free cells enumerated exhaustively.
pub const MAX_EXHAUSTIVE: usize = 16;

#[derive(Clone, Debug)]
pub struct LevelSet<T> {
    grid: Grid<T>,
    member: Vec<bool>,
    lambda: Option<T>,
}

impl<T: Scalar> LevelSet<T> {
    pub fn new(grid: Grid<T>, member: Vec<bool>) -> Result<Self> {
        if member.len() != grid.len() {
            return Err(Error::FieldMismatch(format!(
                "level set has {} entries, grid has {} cells",
                member.len(),
                grid.len()
            )));
        }
        Ok(LevelSet { grid, member, lambda: None })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn members(&self) -> &[bool] {
        &self.member
    }

    pub fn contains(&self, c: usize) -> bool {
        self.member[c]
    }

    pub fn count(&self) -> usize {
        self.member.iter().filter(|m| **m).count()
    }

    pub fn lambda(&self) -> Option<T> {
        self.lambda
    }

    /// Copy with the given cells toggled.
    pub fn flipped(&self, cells: &[usize]) -> Self {
        let mut out = self.clone();
        for &c in cells {
            out.member[c] = !out.member[c];
        }
        out
    }

    /// `true` iff every member of `self` is a member of `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.member.iter().zip(&other.member).all(|(a, b)| !*a || *b)
    }
}

/// `{u >= lambda}`.
pub fn super_level_set<T: Scalar>(u: &ScalarField<T>, lambda: T) -> LevelSet<T> {
    LevelSet { grid: u.grid().clone(), member: u.values().iter().map(|v| *v >= lambda).collect(), lambda: Some(lambda) }
}

/// Where a psi-perimeter is evaluated.
#[derive(Clone, Debug)]
pub struct Region {
    /// Cells summed over; `None` means the whole domain.
    pub cells: Option<Vec<bool>>,
    /// Membership of the outside across each boundary edge; `None` skips boundary faces.
    pub exterior: Option<Vec<bool>>,
    pub label: String,
}

impl Region {
    /// The open domain: cell terms only.
    pub fn domain() -> Self {
        Region { cells: None, exterior: None, label: "domain".into() }
    }

    /// The domain plus its boundary faces against an empty outside.
    pub fn plane<T: Scalar>(grid: &GridSpec<T>) -> Self {
        Region { cells: None, exterior: Some(vec![false; grid.boundary_edges().len()]), label: "plane".into() }
    }

    /// The domain plus boundary faces against `{f >= lambda}` for relaxed
    /// Dirichlet data; the plain domain for Neumann problems.
    pub fn for_level<T: Scalar>(spec: &ProblemSpec<T>, lambda: T) -> Self {
        match spec.dirichlet_data() {
            Some(f) => Region {
                cells: None,
                exterior: Some(f.values().iter().map(|v| *v >= lambda).collect()),
                label: "closure".into(),
            },
            None => Self::domain(),
        }
    }

    pub fn cells(mask: Vec<bool>) -> Self {
        Region { cells: Some(mask), exterior: None, label: "cells".into() }
    }

    fn includes(&self, c: usize) -> bool {
        self.cells.as_ref().is_none_or(|m| m[c])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PsiReport<T> {
    /// `a |D chi + F chi| h^2` over cells where the indicator jumps.
    pub perimeter_term: T,
    /// `a |F| h^2` over member cells without a jump.
    pub drift_term: T,
    pub curvature_term: T,
    /// `a |chi - ext| h` over boundary faces (zero without an exterior).
    pub boundary_term: T,
    pub total: T,
    pub region: String,
}

/// Cell-local energy pieces: (jump part, drift part, curvature part).
#[inline]
fn cell_terms<T: Scalar>(spec: &ProblemSpec<T>, member: &[bool], c: usize) -> (T, T, T) {
    let grid = spec.grid();
    let inv_h = T::one() / grid.h();
    let h2 = grid.h() * grid.h();
    let x = if member[c] { T::one() } else { T::zero() };
    let mut d = [T::zero(); 2];
    if let Some(e) = grid.neighbor(c, Dir::East) {
        d[0] = ((if member[e] { T::one() } else { T::zero() }) - x) * inv_h;
    }
    if let Some(n) = grid.neighbor(c, Dir::North) {
        d[1] = ((if member[n] { T::one() } else { T::zero() }) - x) * inv_h;
    }
    let f = spec.drift().values()[c];
    let a = spec.weight().values()[c];
    let v = a * norm2([d[0] + f[0] * x, d[1] + f[1] * x]) * h2;
    let curv = spec.curvature().values()[c] * x * h2;
    if d[0] != T::zero() || d[1] != T::zero() {
        (v, T::zero(), curv)
    } else {
        (T::zero(), v, curv)
    }
}

#[inline]
fn face_terms<T: Scalar>(spec: &ProblemSpec<T>, member: &[bool], c: usize, exterior: &[bool]) -> T {
    let grid = spec.grid();
    let a = spec.weight().values()[c];
    let mut s = T::zero();
    for e in grid.edges_of(c) {
        if member[c] != exterior[e] {
            s = s + a * grid.h();
        }
    }
    s
}

fn psi_raw<T: Scalar>(spec: &ProblemSpec<T>, member: &[bool], region: &Region, label: &str) -> PsiReport<T> {
    let mut per = T::zero();
    let mut drift = T::zero();
    let mut curv = T::zero();
    let mut bnd = T::zero();
    for c in 0..member.len() {
        if !region.includes(c) {
            continue;
        }
        let (p, d, k) = cell_terms(spec, member, c);
        per = per + p;
        drift = drift + d;
        curv = curv + k;
        if let Some(ext) = &region.exterior {
            bnd = bnd + face_terms(spec, member, c, ext);
        }
    }
    PsiReport {
        perimeter_term: per,
        drift_term: drift,
        curvature_term: curv,
        boundary_term: bnd,
        total: per + drift + curv + bnd,
        region: label.to_string(),
    }
}

pub fn psi_perimeter<T: Scalar>(e: &LevelSet<T>, spec: &ProblemSpec<T>, region: &Region) -> Result<PsiReport<T>> {
    ensure_same_grid(e.grid(), spec.grid(), "psi_perimeter")?;
    check_region(spec.grid(), region)?;
    Ok(psi_raw(spec, &e.member, region, &region.label))
}

fn check_region<T: Scalar>(grid: &GridSpec<T>, region: &Region) -> Result<()> {
    if region.cells.as_ref().is_some_and(|m| m.len() != grid.len()) {
        return Err(Error::FieldMismatch("region mask does not match the grid".into()));
    }
    if region.exterior.as_ref().is_some_and(|x| x.len() != grid.boundary_edges().len()) {
        return Err(Error::FieldMismatch("region exterior does not match the boundary".into()));
    }
    Ok(())
}

/// Energy change when the cells in `flip` are toggled: only the flipped
/// cells and their West and South neighbors see their forward differences change.
struct LocalDelta<'a, T: Scalar> {
    spec: &'a ProblemSpec<T>,
    region: &'a Region,
}

impl<T: Scalar> LocalDelta<'_, T> {
    fn affected(&self, flip: &[usize], out: &mut Vec<usize>) {
        out.clear();
        let grid = self.spec.grid();
        for &c in flip {
            out.push(c);
            if let Some(w) = grid.neighbor(c, Dir::West) {
                out.push(w);
            }
            if let Some(s) = grid.neighbor(c, Dir::South) {
                out.push(s);
            }
        }
        out.sort_unstable();
        out.dedup();
    }

    /// Energy of `member` restricted to `cells` (cell terms) and `faces` (boundary faces).
    fn local(&self, member: &[bool], cells: &[usize], faces: &[usize]) -> T {
        let mut s = T::zero();
        for &c in cells {
            if self.region.includes(c) {
                let (p, d, k) = cell_terms(self.spec, member, c);
                s = s + p + d + k;
            }
        }
        if let Some(ext) = &self.region.exterior {
            for &c in faces {
                if self.region.includes(c) {
                    s = s + face_terms(self.spec, member, c, ext);
                }
            }
        }
        s
    }
}

/// Rectangle of lattice cells `[i0, i0 + w) x [j0, j0 + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Window {
    pub i0: usize,
    pub j0: usize,
    pub w: usize,
    pub h: usize,
}

impl Window {
    /// Masked cells inside the window.
    pub fn cells<T: Scalar>(&self, grid: &GridSpec<T>) -> Vec<usize> {
        let mut out = Vec::new();
        for j in self.j0..self.j0 + self.h {
            for i in self.i0..self.i0 + self.w {
                if let Some(c) = grid.cell_at(i as i64, j as i64) {
                    out.push(c);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimalityVerdict<T> {
    pub pass: bool,
    pub energy: T,
    /// Lowest competitor energy found.
    pub best_competitor: T,
    /// `energy - best_competitor`; positive means a competitor does better.
    pub margin: T,
    pub tolerance: T,
    /// Cells toggled by the best competitor.
    pub best_flip: Vec<usize>,
    pub competitors: usize,
}

/// Tolerance for comparing a `gap_tol`-optimal level set against competitors.
pub fn discrete_tolerance<T: Scalar>(gap_tol: T, energy: T) -> T {
    T::lit(2.0) * gap_tol * (T::one() + energy.abs())
}

/// Best subset of `free` to toggle by exhaustive enumeration, relative to `member`.
/// Returns (delta, mask of toggled entries, competitors).
fn enumerate_flips<T: Scalar>(
    ld: &LocalDelta<'_, T>,
    member: &[bool],
    free: &[usize],
    prefer_members: bool,
) -> (T, u32, usize) {
    let m = free.len();
    let mut affected = Vec::new();
    ld.affected(free, &mut affected);
    let mut work = member.to_vec();
    let base = ld.local(&work, &affected, free);
    let mut best = (T::zero(), 0u32);
    let mut best_count = free.iter().filter(|c| member[**c]).count();
    // Gray-code walk: one toggle per competitor
    let total = 1usize << m;
    let mut gray = 0u32;
    let eps = T::lit(1e-13) * (T::one() + base.abs());
    for k in 1..total {
        let bit = k.trailing_zeros() as usize;
        gray ^= 1 << bit;
        let c = free[bit];
        work[c] = !work[c];
        let delta = ld.local(&work, &affected, free) - base;
        let better = delta < best.0 - eps;
        let tie = (delta - best.0).abs() <= eps;
        if better || tie {
            let count = free.iter().filter(|c| work[**c]).count();
            let wins = better || (prefer_members && count > best_count);
            if wins {
                best = (delta, gray);
                best_count = count;
            }
        }
    }
    (best.0, best.1, total - 1)
}

/// Enumerates every competitor that differs from `e` only inside `window`
/// (at most 16 cells) and compares psi-perimeters over the whole domain.
pub fn check_minimality_exhaustive<T: Scalar>(
    e: &LevelSet<T>,
    spec: &ProblemSpec<T>,
    region: &Region,
    window: Window,
    gap_tol: T,
) -> Result<MinimalityVerdict<T>> {
    ensure_same_grid(e.grid(), spec.grid(), "check_minimality_exhaustive")?;
    check_region(spec.grid(), region)?;
    let free = window.cells(spec.grid());
    if free.len() > MAX_EXHAUSTIVE {
        return Err(Error::InvalidArgument(format!(
            "window holds {} cells; exhaustive enumeration is limited to {MAX_EXHAUSTIVE}",
            free.len()
        )));
    }
    let energy = psi_raw(spec, &e.member, region, "").total;
    let tol = discrete_tolerance(gap_tol, energy);
    if free.is_empty() {
        return Ok(MinimalityVerdict {
            pass: true,
            energy,
            best_competitor: energy,
            margin: T::zero(),
            tolerance: tol,
            best_flip: vec![],
            competitors: 0,
        });
    }
    let ld = LocalDelta { spec, region };
    let (delta, mask, competitors) = enumerate_flips(&ld, &e.member, &free, false);
    let best_flip: Vec<usize> = (0..free.len()).filter(|b| mask & (1 << b) != 0).map(|b| free[b]).collect();
    let margin = -delta;
    Ok(MinimalityVerdict {
        pass: margin <= tol,
        energy,
        best_competitor: energy + delta,
        margin,
        tolerance: tol,
        best_flip,
        competitors,
    })
}

/// All `side x side` windows whose cells are all masked and not adjacent to
/// the lattice edge or to unmasked cells.
pub fn interior_windows<T: Scalar>(grid: &GridSpec<T>, side: usize) -> Vec<Window> {
    let mut out = Vec::new();
    if grid.nx() < side + 2 || grid.ny() < side + 2 {
        return out;
    }
    for j0 in 1..=grid.ny() - side - 1 {
        for i0 in 1..=grid.nx() - side - 1 {
            let ok = (j0 - 1..j0 + side + 1)
                .all(|j| (i0 - 1..i0 + side + 1).all(|i| grid.cell_at(i as i64, j as i64).is_some()));
            if ok {
                out.push(Window { i0, j0, w: side, h: side });
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct RandomCheckConfig<T> {
    pub trials: usize,
    pub max_flip: usize,
    pub seed: u64,
    pub gap_tol: T,
    /// Flip sets always tried in addition to the random ones.
    pub extra: Vec<Vec<usize>>,
}

/// Random connected flip sets of up to `max_flip` cells. Half of the seeds are
/// drawn next to the boundary of `e`, where improvements are likely.
pub fn check_minimality_random<T: Scalar>(
    e: &LevelSet<T>,
    spec: &ProblemSpec<T>,
    region: &Region,
    cfg: &RandomCheckConfig<T>,
) -> Result<MinimalityVerdict<T>> {
    ensure_same_grid(e.grid(), spec.grid(), "check_minimality_random")?;
    check_region(spec.grid(), region)?;
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let grid = spec.grid();
    let energy = psi_raw(spec, &e.member, region, "").total;
    let tol = discrete_tolerance(cfg.gap_tol, energy);
    let ld = LocalDelta { spec, region };
    let n = grid.len();
    let interface: Vec<usize> = (0..n)
        .filter(|&c| Dir::ALL.iter().any(|d| grid.neighbor(c, *d).is_some_and(|m| e.member[m] != e.member[c])))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = (T::zero(), Vec::new());
    let mut affected = Vec::new();
    let mut work = e.member.clone();
    let mut try_flip = |flip: &[usize], best: &mut (T, Vec<usize>)| {
        ld.affected(flip, &mut affected);
        let before = ld.local(&work, &affected, flip);
        for &c in flip {
            work[c] = !work[c];
        }
        let after = ld.local(&work, &affected, flip);
        for &c in flip {
            work[c] = !work[c];
        }
        let delta = after - before;
        if delta < best.0 {
            *best = (delta, flip.to_vec());
        }
    };
    let mut competitors = 0;
    for flip in &cfg.extra {
        if flip.iter().any(|c| *c >= n) {
            return Err(Error::InvalidArgument("extra flip set names a cell outside the grid".into()));
        }
        let mut f = flip.clone();
        f.sort_unstable();
        f.dedup();
        try_flip(&f, &mut best);
        competitors += 1;
    }
    if cfg.max_flip > 0 {
        let mut flip = Vec::with_capacity(cfg.max_flip);
        let mut frontier = Vec::new();
        for _ in 0..cfg.trials {
            let size = rng.gen_range(1..=cfg.max_flip);
            let start = if !interface.is_empty() && rng.gen_bool(0.5) {
                interface[rng.gen_range(0..interface.len())]
            } else {
                rng.gen_range(0..n)
            };
            flip.clear();
            flip.push(start);
            frontier.clear();
            while flip.len() < size {
                frontier.clear();
                for &c in &flip {
                    for d in Dir::ALL {
                        if let Some(m) = grid.neighbor(c, d) {
                            if !flip.contains(&m) {
                                frontier.push(m);
                            }
                        }
                    }
                }
                if frontier.is_empty() {
                    break;
                }
                flip.push(frontier[rng.gen_range(0..frontier.len())]);
            }
            flip.sort_unstable();
            try_flip(&flip, &mut best);
            competitors += 1;
        }
    }
    let margin = -best.0;
    Ok(MinimalityVerdict {
        pass: margin <= tol,
        energy,
        best_competitor: energy + best.0,
        margin,
        tolerance: tol,
        best_flip: best.1,
        competitors,
    })
}

/// `min(1, max(0, (u - lambda) / eps))`.
pub fn chi_epsilon<T: Scalar>(u: &ScalarField<T>, lambda: T, eps: T) -> Result<ScalarField<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    Ok(u.map(|v| ((v - lambda) / eps).max(T::zero()).min(T::one())))
}

/// psi-energy of a general field, with the drift gated by the support of `v`:
/// `sum a |Dv + F 1{v > 0}| h^2 + sum H v h^2`.
pub fn psi_energy<T: Scalar>(v: &ScalarField<T>, spec: &ProblemSpec<T>) -> Result<T> {
    ensure_same_grid(v.grid(), spec.grid(), "psi_energy")?;
    let grid = spec.grid();
    let g = crate::calculus::gradient(v);
    let h2 = grid.h() * grid.h();
    let mut s = T::zero();
    for c in 0..grid.len() {
        let gate = if v.values()[c] > T::zero() { T::one() } else { T::zero() };
        let f = spec.drift().values()[c];
        let d = g.values()[c];
        s = s + spec.weight().values()[c] * norm2([d[0] + f[0] * gate, d[1] + f[1] * gate]) * h2
            + spec.curvature().values()[c] * v.values()[c] * h2;
    }
    Ok(s)
}

#[derive(Clone, Debug, Serialize)]
pub struct LscReport<T> {
    pub pass: bool,
    pub indicator_energy: T,
    /// psi-energy of the truncation for each eps.
    pub truncated: Vec<(T, T)>,
    /// `sum over cells with lambda < u < lambda + eps_min of (2 a |F| + |H|) h^2`.
    pub slack: T,
    /// Smallest truncated energy over the smaller half of the eps list.
    pub min_truncated: T,
}

/// Discrete lower semicontinuity of the psi-perimeter along the truncations
/// `chi_epsilon(u, lambda, eps)`.
pub fn lsc_check<T: Scalar>(u: &ScalarField<T>, lambda: T, spec: &ProblemSpec<T>, eps_list: &[T]) -> Result<LscReport<T>> {
    ensure_same_grid(u.grid(), spec.grid(), "lsc_check")?;
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("eps list is empty".into()));
    }
    for w in eps_list.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidArgument("eps list must be strictly decreasing".into()));
        }
    }
    // the indicator of {u > lambda}: the pointwise limit of the truncations
    let limit = u.map(|v| if v > lambda { T::one() } else { T::zero() });
    let indicator_energy = psi_energy(&limit, spec)?;
    let mut truncated = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        truncated.push((eps, psi_energy(&chi_epsilon(u, lambda, eps)?, spec)?));
    }
    let eps_min = *eps_list.last().unwrap();
    let h2 = spec.grid().h() * spec.grid().h();
    let mut slack = T::zero();
    for c in 0..u.values().len() {
        let v = u.values()[c];
        if v > lambda && v < lambda + eps_min {
            let a = spec.weight().values()[c];
            slack = slack
                + (T::lit(2.0) * a * norm2(spec.drift().values()[c]) + spec.curvature().values()[c].abs()) * h2;
        }
    }
    // the liminf is read off the smaller half of the eps list
    let tail = &truncated[truncated.len() / 2..];
    let min_truncated = tail.iter().map(|t| t.1).fold(T::infinity(), T::min);
    let pass = indicator_energy <= min_truncated + T::lit(1e-8) + slack;
    Ok(LscReport { pass, indicator_energy, truncated, slack, min_truncated })
}

/// Lattice density set: cells where more than `1 - 1/(2 (2r+1)^2)` of the
/// masked cells in the `(2r+1)^2` neighborhood belong to `e`.
pub fn density_set<T: Scalar>(e: &LevelSet<T>, radius: usize) -> Result<Vec<bool>> {
    if radius == 0 {
        return Err(Error::InvalidArgument("density radius must be at least 1".into()));
    }
    let grid = e.grid();
    let side = (2 * radius + 1) as f64;
    let threshold = 1.0 - 1.0 / (2.0 * side * side);
    let r = radius as i64;
    Ok((0..grid.len())
        .map(|c| {
            let (i, j) = grid.coords(c);
            let (mut inside, mut members) = (0usize, 0usize);
            for dj in -r..=r {
                for di in -r..=r {
                    if let Some(m) = grid.cell_at(i as i64 + di, j as i64 + dj) {
                        inside += 1;
                        if e.member[m] {
                            members += 1;
                        }
                    }
                }
            }
            members as f64 > threshold * inside as f64
        })
        .collect())
}

/// Cells of the density set with a 4-neighbor outside it.
pub fn density_boundary<T: Scalar>(e: &LevelSet<T>, radius: usize) -> Result<Vec<bool>> {
    let dense = density_set(e, radius)?;
    let grid = e.grid();
    Ok((0..grid.len())
        .map(|c| dense[c] && Dir::ALL.iter().any(|d| grid.neighbor(c, *d).is_some_and(|m| !dense[m])))
        .collect())
}

#[derive(Clone, Debug)]
pub struct BarrierConfig<T> {
    pub seed: u64,
    /// Annealing sweeps over the free cells.
    pub sweeps: usize,
    pub density_radius: usize,
    /// Energy comparisons treat differences below this as ties.
    pub tie_tol: T,
}

impl<T: Scalar> Default for BarrierConfig<T> {
    fn default() -> Self {
        BarrierConfig { seed: 0, sweeps: 400, density_radius: 1, tie_tol: T::lit(1e-12) }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierReport<T> {
    pub x0: [T; 2],
    pub eps: T,
    /// Masked cells with centers in the open ball.
    pub ball_cells: Vec<usize>,
    pub exhaustive: bool,
    /// Minimizer membership over all masked cells.
    pub minimizer: Vec<bool>,
    pub energy: T,
    /// Energy of the whole domain (no cell removed).
    pub domain_energy: T,
    pub density_boundary: Vec<usize>,
    /// Boundary edges in the ball whose cell lies in the density set of the minimizer.
    pub contact_edges: Vec<usize>,
    pub holds: bool,
    pub vacuous: bool,
}

fn on_boundary<T: Scalar>(grid: &GridSpec<T>, x0: [T; 2]) -> bool {
    let h = grid.h();
    let tol = T::lit(1e-9) * h;
    let half = h * T::lit(0.5);
    (0..grid.boundary_edges().len()).any(|e| {
        let m = grid.edge_midpoint(e);
        let axis = grid.boundary_edges()[e].dir.axis();
        // the face is the segment through m orthogonal to its normal axis
        let (n, t) = if axis == 0 { (0, 1) } else { (1, 0) };
        (x0[n] - m[n]).abs() <= tol && (x0[t] - m[t]).abs() <= half + tol
    })
}

/// Minimizes the plane psi-perimeter over `W` inside the domain that agree with
/// the domain outside `B(eps, x0)`, then looks for contact between the density
/// boundary of the minimizer and the domain boundary inside the ball.
pub fn barrier_probe<T: Scalar>(
    spec: &ProblemSpec<T>,
    x0: [T; 2],
    eps: T,
    cfg: &BarrierConfig<T>,
) -> Result<BarrierReport<T>> {
    let grid = spec.grid();
    if !on_boundary(grid, x0) {
        return Err(Error::InvalidArgument(format!(
            "probe point ({}, {}) is not on the domain boundary",
            x0[0].to_f64_lossy(),
            x0[1].to_f64_lossy()
        )));
    }
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("probe radius must be positive".into()));
    }
    let dist = |p: [T; 2]| norm2([p[0] - x0[0], p[1] - x0[1]]);
    let ball: Vec<usize> = (0..grid.len()).filter(|&c| dist(grid.center(c)) < eps).collect();
    let region = Region::plane(grid);
    let mut member = vec![true; grid.len()];
    let domain_energy = psi_raw(spec, &member, &region, "").total;
    let ld = LocalDelta { spec, region: &region };
    let exhaustive = ball.len() <= MAX_EXHAUSTIVE;
    if ball.is_empty() {
        return Ok(BarrierReport {
            x0,
            eps,
            ball_cells: ball,
            exhaustive: true,
            minimizer: member,
            energy: domain_energy,
            domain_energy,
            density_boundary: vec![],
            contact_edges: vec![],
            holds: true,
            vacuous: true,
        });
    }
    if exhaustive {
        let (_, mask, _) = enumerate_flips(&ld, &member, &ball, true);
        for (b, &c) in ball.iter().enumerate() {
            if mask & (1 << b) != 0 {
                member[c] = false;
            }
        }
    } else {
        anneal(&ld, &mut member, &ball, cfg);
        refine_by_windows(&ld, &mut member, &ball, grid);
    }
    let energy = psi_raw(spec, &member, &region, "").total;
    let set = LevelSet { grid: grid.clone(), member: member.clone(), lambda: None };
    let dense = density_set(&set, cfg.density_radius)?;
    let boundary = density_boundary(&set, cfg.density_radius)?;
    let contact: Vec<usize> = (0..grid.boundary_edges().len())
        .filter(|&e| dist(grid.edge_midpoint(e)) < eps && dense[grid.boundary_edges()[e].cell])
        .collect();
    Ok(BarrierReport {
        x0,
        eps,
        ball_cells: ball,
        exhaustive,
        minimizer: member,
        energy,
        domain_energy,
        density_boundary: (0..grid.len()).filter(|c| boundary[*c]).collect(),
        holds: contact.is_empty(),
        contact_edges: contact,
        vacuous: false,
    })
}

/// Single-flip Metropolis annealing with geometric cooling from `a_max h` to
/// `1e-3 a_max h`; keeps the best state seen.
fn anneal<T: Scalar>(ld: &LocalDelta<'_, T>, member: &mut [bool], free: &[usize], cfg: &BarrierConfig<T>) {
    let spec = ld.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t0 = spec.weight().max() * spec.grid().h();
    let steps = cfg.sweeps.max(1) * free.len();
    let ratio = T::lit(1e-3).powf(T::one() / T::from_usize_lossy(steps.max(2) - 1));
    let mut temp = t0;
    let mut current = T::zero();
    let mut best = (T::zero(), member.to_vec());
    let mut affected = Vec::new();
    for _ in 0..steps {
        let c = free[rng.gen_range(0..free.len())];
        let flip = [c];
        ld.affected(&flip, &mut affected);
        let before = ld.local(member, &affected, &flip);
        member[c] = !member[c];
        let delta = ld.local(member, &affected, &flip) - before;
        let accept = delta <= T::zero() || T::lit(rng.gen::<f64>()) < (-delta / temp).exp();
        if accept {
            current = current + delta;
            if current < best.0 - cfg.tie_tol {
                best = (current, member.to_vec());
            }
        } else {
            member[c] = !member[c];
        }
        temp = temp * ratio;
    }
    member.copy_from_slice(&best.1);
}

/// Exhaustive improvement over 4x4 lattice windows covering the ball, repeated
/// until no window improves.
fn refine_by_windows<T: Scalar>(ld: &LocalDelta<'_, T>, member: &mut [bool], ball: &[usize], grid: &GridSpec<T>) {
    let in_ball: std::collections::HashSet<usize> = ball.iter().copied().collect();
    let (mut imin, mut jmin, mut imax, mut jmax) = (usize::MAX, usize::MAX, 0, 0);
    for &c in ball {
        let (i, j) = grid.coords(c);
        imin = imin.min(i);
        jmin = jmin.min(j);
        imax = imax.max(i);
        jmax = jmax.max(j);
    }
    for _ in 0..20 {
        let mut improved = false;
        for j0 in (jmin..=jmax).step_by(2) {
            for i0 in (imin..=imax).step_by(2) {
                let free: Vec<usize> =
                    Window { i0, j0, w: 4, h: 4 }.cells(grid).into_iter().filter(|c| in_ball.contains(c)).collect();
                if free.is_empty() {
                    continue;
                }
                let (delta, mask, _) = enumerate_flips(ld, member, &free, true);
                if delta < -T::lit(1e-12) {
                    for (b, &c) in free.iter().enumerate() {
                        if mask & (1 << b) != 0 {
                            member[c] = !member[c];
                        }
                    }
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// `count` levels evenly spaced strictly inside `(min u, max u)`. For a
/// numerically constant `u` the levels straddle the constant, so both the
/// full and the empty set are exercised.
pub fn sample_levels<T: Scalar>(u: &ScalarField<T>, count: usize) -> Vec<T> {
    let (lo, hi) = (u.min(), u.max());
    let k = T::from_usize_lossy(count + 1);
    if hi - lo <= T::lit(1e-12) * (T::one() + hi.abs()) {
        let step = T::lit(1e-3) * (T::one() + hi.abs());
        let mid = T::from_usize_lossy(count / 2);
        return (0..count).map(|i| lo + (T::from_usize_lossy(i) - mid) * step).collect();
    }
    (1..=count).map(|i| lo + (hi - lo) * T::from_usize_lossy(i) / k).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelResult<T> {
    pub lambda: T,
    pub members: usize,
    pub psi: PsiReport<T>,
    pub windows: usize,
    pub window_failures: usize,
    /// Largest `margin - tolerance` over the windows (positive means failure).
    pub worst_excess: T,
    pub worst_flip: Vec<usize>,
    pub random: Option<MinimalityVerdict<T>>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSweep<T> {
    pub levels: Vec<LevelResult<T>>,
    pub pass: bool,
}

/// Minimality of the super-level sets of `u` at `lambdas` sampled levels:
/// exhaustive over every interior `window x window` block (skipped for 0) and
/// `random_trials` random flips of up to `max_flip` cells.
#[allow(clippy::too_many_arguments)]
pub fn level_sweep<T: Scalar>(
    u: &ScalarField<T>,
    spec: &ProblemSpec<T>,
    lambdas: usize,
    window: usize,
    random_trials: usize,
    max_flip: usize,
    gap_tol: T,
    seed: u64,
) -> Result<LevelSweep<T>> {
    ensure_same_grid(u.grid(), spec.grid(), "level_sweep")?;
    let mut levels = Vec::new();
    for (k, lambda) in sample_levels(u, lambdas).into_iter().enumerate() {
        let e = super_level_set(u, lambda);
        let region = Region::for_level(spec, lambda);
        let psi = psi_perimeter(&e, spec, &region)?;
        let wins = if window > 0 { interior_windows(spec.grid(), window) } else { vec![] };
        let mut failures = 0;
        let mut worst = (T::neg_infinity(), Vec::new());
        for w in &wins {
            let v = check_minimality_exhaustive(&e, spec, &region, *w, gap_tol)?;
            if !v.pass {
                failures += 1;
            }
            if v.margin - v.tolerance > worst.0 {
                worst = (v.margin - v.tolerance, v.best_flip);
            }
        }
        let random = if random_trials > 0 {
            let cfg = RandomCheckConfig {
                trials: random_trials,
                max_flip,
                seed: seed.wrapping_add(k as u64),
                gap_tol,
                extra: vec![],
            };
            Some(check_minimality_random(&e, spec, &region, &cfg)?)
        } else {
            None
        };
        let pass = failures == 0 && random.as_ref().is_none_or(|r| r.pass);
        levels.push(LevelResult {
            lambda,
            members: e.count(),
            psi,
            windows: wins.len(),
            window_failures: failures,
            worst_excess: if wins.is_empty() { T::zero() } else { worst.0 },
            worst_flip: worst.1,
            random,
            pass,
        });
    }
    let pass = levels.iter().all(|l| l.pass);
    Ok(LevelSweep { levels, pass })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn square(n: usize, h: f64) -> Grid<f64> {
        Arc::new(GridSpec::full(n, n, h).unwrap())
    }

    #[test]
    fn super_level_set_extremes() {
        let g = square(6, 1.0);
        let u = ScalarField::from_fn(&g, |p| p[0]);
        assert_eq!(super_level_set(&u, 100.0).count(), 0);
        assert_eq!(super_level_set(&u, -100.0).count(), g.len());
        let half = super_level_set(&u, 3.0);
        for c in 0..g.len() {
            assert_eq!(half.contains(c), g.coords(c).0 >= 3);
        }
    }

    #[test]
    fn block_perimeter_counts_jump_cells() {
        let h = 0.1;
        let g = square(10, h);
        let spec = ProblemSpec::plain(&g);
        let k = 3;
        let member: Vec<bool> = (0..g.len())
            .map(|c| {
                let (i, j) = g.coords(c);
                (4..4 + k).contains(&i) && (4..4 + k).contains(&j)
            })
            .collect();
        let e = LevelSet::new(g.clone(), member).unwrap();
        let r = psi_perimeter(&e, &spec, &Region::domain()).unwrap();
        // 2k outside neighbors, 2(k-1) inner edge cells and one diagonal corner
        let expect = (4.0 * k as f64 - 2.0 + 2f64.sqrt()) * h;
        assert!((r.total - expect).abs() < 1e-12);
        assert_eq!(r.drift_term, 0.0);
    }

    #[test]
    fn empty_set_and_empty_window() {
        let g = square(5, 0.2);
        let spec = ProblemSpec::plain(&g);
        let e = LevelSet::new(g.clone(), vec![false; g.len()]).unwrap();
        assert_eq!(psi_perimeter(&e, &spec, &Region::domain()).unwrap().total, 0.0);
        let w = Window { i0: 0, j0: 0, w: 0, h: 0 };
        assert!(check_minimality_exhaustive(&e, &spec, &Region::domain(), w, 1e-3).unwrap().pass);
    }

    #[test]
    fn chi_epsilon_ramp() {
        let g = square(8, 0.125);
        let u = ScalarField::from_fn(&g, |p| p[0]);
        let v = chi_epsilon(&u, 0.0, 0.5).unwrap();
        for c in 0..g.len() {
            let x = g.center(c)[0];
            let expect = (x / 0.5).min(1.0);
            assert!((v.values()[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_cell_is_not_dense() {
        let g = square(5, 1.0);
        let mut m = vec![false; g.len()];
        m[12] = true;
        let e = LevelSet::new(g.clone(), m).unwrap();
        assert!(density_set(&e, 1).unwrap().iter().all(|d| !d));
        let full = LevelSet::new(g.clone(), vec![true; g.len()]).unwrap();
        assert!(density_boundary(&full, 1).unwrap().iter().all(|d| !d));
    }

    #[test]
    fn window_too_large_is_rejected() {
        let g = square(8, 1.0);
        let spec = ProblemSpec::plain(&g);
        let e = LevelSet::new(g.clone(), vec![false; g.len()]).unwrap();
        let w = Window { i0: 0, j0: 0, w: 5, h: 4 };
        assert!(check_minimality_exhaustive(&e, &spec, &Region::domain(), w, 1e-3).is_err());
    }

    #[test]
    fn probe_off_boundary_is_rejected() {
        let g = square(8, 1.0);
        let spec = ProblemSpec::plain(&g);
        assert!(barrier_probe(&spec, [4.0, 4.0], 1.0, &BarrierConfig::default()).is_err());
        assert!(barrier_probe(&spec, [0.0, 4.5], 1.0, &BarrierConfig::default()).is_ok());
    }
}
