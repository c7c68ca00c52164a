//! Scenario files.
//!
//! A scenario is a TOML document; unknown keys are rejected and every error
//! carries a line and column. See `scenarios/*.toml` for complete examples.
//!
//! ```toml
//! name = "example"
//! description = "free text"
//!
//! [grid]
//! nx = 32
//! ny = 32
//! h = 0.03125
//! origin = [0.0, 0.0]      # optional, lower-left lattice corner
//! mask = "full"            # full | disk | row:J | slit:I,J0,J1 | rle:R0,R1,...
//!
//! [fields]                 # all optional
//! weight = "constant:1"    # constant:c | step:x|y,t,lo,hi | frame:in,left,right,bottom,top | file:path.csv
//! drift = "heisenberg"     # zero | constant:fx,fy | heisenberg[:cx,cy] | file:path.csv
//! curvature = "constant:0" # same generators as weight
//!
//! [boundary]
//! kind = "dirichlet"       # neumann (default) | dirichlet
//! data = "constant:0"      # constant:c | step:x|y,t,lo,hi | file:path.csv
//!
//! [solver]                 # SolverConfig fields; init = zero | random
//! [oracle]                 # OracleConfig fields
//!
//! [checks]
//! certify = ["zero_gap", "alignment"]
//! threshold = true
//! levelset = { lambdas = 5, window = 3, random_trials = 0, max_flip = 6 }
//! barrier = [{ x0 = [0.5, 0.0], eps = 0.1, expect = "holds" }]
//!
//! [expected]               # regression values
//! primal = 2.1
//! tolerance = 1e-3
//! origin = "regression"
//! ```
//!
//! `step` is `lo` where the coordinate is below `t` and `hi` elsewhere;
//! `frame` assigns the last column, then the first column, the bottom row and
//! the top row, and `in` everywhere else. Relative `file:` paths resolve
//! against the scenario file's directory.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::certify::TheoremName;
use crate::error::{Error, Result};
use crate::field::{BoundaryTrace, Grid, ScalarField, VectorField};
use crate::grid::{disk_mask, GridSpec};
use crate::io;
use crate::oracle::OracleConfig;
use crate::problem::{heisenberg_drift, BoundaryCondition, ProblemSpec};
use crate::scalar::Scalar;
use crate::solver::{Init, SolverConfig};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Spanned<String>,
    #[serde(default)]
    description: String,
    grid: RawGrid,
    #[serde(default)]
    fields: RawFields,
    #[serde(default)]
    boundary: RawBoundary,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    oracle: RawOracle,
    #[serde(default)]
    checks: RawChecks,
    expected: Option<Expected>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    nx: usize,
    ny: usize,
    h: Spanned<f64>,
    origin: Option<[f64; 2]>,
    mask: Option<Spanned<String>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFields {
    weight: Option<Spanned<String>>,
    drift: Option<Spanned<String>>,
    curvature: Option<Spanned<String>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    kind: Option<Spanned<String>>,
    data: Option<Spanned<String>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    max_iters: Option<usize>,
    gap_tol: Option<f64>,
    tau: Option<f64>,
    sigma: Option<f64>,
    step_ratio: Option<f64>,
    check_every: Option<usize>,
    seed: Option<u64>,
    init: Option<Spanned<String>>,
    diverge_floor: Option<f64>,
    min_iters: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    epsilons: Option<Spanned<Vec<f64>>>,
    descent_tol: Option<f64>,
    max_iters: Option<usize>,
    restart_every: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawChecks {
    #[serde(default)]
    certify: Vec<TheoremName>,
    #[serde(default)]
    threshold: bool,
    levelset: Option<LevelsetChecks>,
    #[serde(default)]
    barrier: Vec<BarrierCheck>,
}

/// Super-level-set minimality sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsetChecks {
    /// Number of levels, evenly spaced strictly inside `(min u, max u)`.
    #[serde(default = "default_lambdas")]
    pub lambdas: usize,
    /// Side of the exhaustive windows; 0 disables the sweep.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub random_trials: usize,
    #[serde(default = "default_max_flip")]
    pub max_flip: usize,
}

fn default_lambdas() -> usize {
    5
}
fn default_window() -> usize {
    3
}
fn default_max_flip() -> usize {
    6
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierExpectation {
    Holds,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierCheck {
    pub x0: [f64; 2],
    pub eps: f64,
    pub expect: BarrierExpectation,
    #[serde(default)]
    pub sweeps: Option<usize>,
}

/// Regression values a scenario is expected to reproduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    pub primal: Option<f64>,
    pub tolerance: Option<f64>,
    /// Where the values come from: `regression`, `oracle`, `closed-form` or `construction`.
    pub origin: String,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Checks {
    pub certify: Vec<TheoremName>,
    pub threshold: bool,
    pub levelset: Option<LevelsetChecks>,
    pub barrier: Vec<BarrierCheck>,
}

#[derive(Clone, Debug)]
pub struct Scenario<T> {
    pub name: String,
    pub description: String,
    pub spec: ProblemSpec<T>,
    pub solver: SolverConfig<T>,
    pub oracle: OracleConfig<T>,
    pub checks: Checks,
    pub expected: Option<Expected>,
    /// The document the scenario was parsed from.
    pub source: String,
}

/// Byte offset to 1-based line and column.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

struct Ctx<'a> {
    text: &'a str,
    base: Option<&'a Path>,
}

impl Ctx<'_> {
    fn err(&self, span: Range<usize>, message: impl Into<String>) -> Error {
        let (line, column) = line_col(self.text, span.start);
        Error::Config { line, column, message: message.into() }
    }

    /// Attaches the span of `at` to a lower-level error.
    fn wrap<S, V>(&self, at: &Spanned<S>, r: Result<V>) -> Result<V> {
        r.map_err(|e| match e {
            Error::Config { .. } => e,
            other => self.err(at.span(), other.to_string()),
        })
    }

    fn path(&self, p: &str) -> PathBuf {
        match self.base {
            Some(b) if Path::new(p).is_relative() => b.join(p),
            _ => PathBuf::from(p),
        }
    }
}

fn numbers(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("{what}: expected {n} comma-separated numbers, got '{s}'")))?;
    if v.len() != n {
        return Err(Error::InvalidArgument(format!("{what}: expected {n} numbers, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what}: numbers must be finite")));
    }
    Ok(v)
}

fn split_gen(s: &str) -> (&str, &str) {
    match s.split_once(':') {
        Some((k, rest)) => (k.trim(), rest.trim()),
        None => (s.trim(), ""),
    }
}

fn parse_mask(s: &str, nx: usize, ny: usize) -> Result<Vec<bool>> {
    let (kind, args) = split_gen(s);
    match kind {
        "full" => Ok(vec![true; nx * ny]),
        "disk" => Ok(disk_mask(nx, ny)),
        "row" => {
            let j: usize = args.parse().map_err(|_| Error::InvalidArgument(format!("row: bad row index '{args}'")))?;
            if j >= ny {
                return Err(Error::InvalidArgument(format!("row {j} outside lattice of {ny} rows")));
            }
            Ok((0..nx * ny).map(|k| k / nx == j).collect())
        }
        "slit" => {
            let v: Vec<usize> = args
                .split(',')
                .map(|t| t.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidArgument(format!("slit: expected I,J0,J1, got '{args}'")))?;
            if v.len() != 3 || v[0] >= nx || v[1] > v[2] || v[2] >= ny {
                return Err(Error::InvalidArgument(format!("slit: column/rows out of range in '{args}'")));
            }
            Ok((0..nx * ny).map(|k| !(k % nx == v[0] && (v[1]..=v[2]).contains(&(k / nx)))).collect())
        }
        "rle" => {
            let runs: Vec<usize> = args
                .split(',')
                .map(|t| t.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidArgument(format!("rle: bad run lengths '{args}'")))?;
            crate::grid::rle_decode(&runs, nx * ny)
        }
        other => Err(Error::InvalidArgument(format!("unknown mask '{other}' (full, disk, row, slit, rle)"))),
    }
}

fn step<T: Scalar>(args: &str) -> Result<impl Fn([T; 2]) -> T> {
    let (axis, rest) = args
        .split_once(',')
        .ok_or_else(|| Error::InvalidArgument(format!("step: expected axis,t,lo,hi, got '{args}'")))?;
    let axis = match axis.trim() {
        "x" => 0,
        "y" => 1,
        a => return Err(Error::InvalidArgument(format!("step: axis must be x or y, got '{a}'"))),
    };
    let v = numbers(rest, 3, "step")?;
    let (t, lo, hi) = (T::lit(v[0]), T::lit(v[1]), T::lit(v[2]));
    Ok(move |p: [T; 2]| if p[axis] < t { lo } else { hi })
}

fn scalar_field<T: Scalar>(ctx: &Ctx, grid: &Grid<T>, s: &str) -> Result<ScalarField<T>> {
    let (kind, args) = split_gen(s);
    match kind {
        "constant" => Ok(ScalarField::constant(grid, T::lit(numbers(args, 1, "constant")?[0]))),
        "step" => Ok(ScalarField::from_fn(grid, step(args)?)),
        "frame" => {
            let v = numbers(args, 5, "frame")?;
            let (nx, ny) = (grid.nx(), grid.ny());
            let vals = (0..grid.len())
                .map(|c| {
                    let (i, j) = grid.coords(c);
                    let k = if i == nx - 1 {
                        2
                    } else if i == 0 {
                        1
                    } else if j == 0 {
                        3
                    } else if j == ny - 1 {
                        4
                    } else {
                        0
                    };
                    T::lit(v[k])
                })
                .collect();
            ScalarField::new(grid.clone(), vals)
        }
        "file" => io::read_scalar_csv(std::fs::File::open(ctx.path(args))?, grid),
        other => Err(Error::InvalidArgument(format!("unknown scalar generator '{other}' (constant, step, frame, file)"))),
    }
}

fn vector_field<T: Scalar>(ctx: &Ctx, grid: &Grid<T>, s: &str) -> Result<VectorField<T>> {
    let (kind, args) = split_gen(s);
    match kind {
        "zero" => Ok(VectorField::zeros(grid)),
        "constant" => {
            let v = numbers(args, 2, "constant")?;
            Ok(VectorField::constant(grid, [T::lit(v[0]), T::lit(v[1])]))
        }
        "heisenberg" => {
            let center = if args.is_empty() {
                let o = grid.origin();
                let half = T::lit(0.5);
                [
                    o[0] + T::from_usize_lossy(grid.nx()) * grid.h() * half,
                    o[1] + T::from_usize_lossy(grid.ny()) * grid.h() * half,
                ]
            } else {
                let v = numbers(args, 2, "heisenberg")?;
                [T::lit(v[0]), T::lit(v[1])]
            };
            Ok(heisenberg_drift(grid, center))
        }
        "file" => io::read_vector_csv(std::fs::File::open(ctx.path(args))?, grid),
        other => Err(Error::InvalidArgument(format!("unknown vector generator '{other}' (zero, constant, heisenberg, file)"))),
    }
}

fn boundary_data<T: Scalar>(ctx: &Ctx, grid: &Grid<T>, s: &str) -> Result<BoundaryTrace<T>> {
    let (kind, args) = split_gen(s);
    match kind {
        "constant" => {
            let c = T::lit(numbers(args, 1, "constant")?[0]);
            Ok(BoundaryTrace::from_fn(grid, |_| c))
        }
        "step" => Ok(BoundaryTrace::from_fn(grid, step(args)?)),
        "file" => io::read_boundary_csv(std::fs::File::open(ctx.path(args))?, grid),
        other => Err(Error::InvalidArgument(format!("unknown boundary generator '{other}' (constant, step, file)"))),
    }
}

/// Parses a scenario document. `base` resolves relative `file:` paths.
pub fn parse_scenario<T: Scalar>(text: &str, base: Option<&Path>) -> Result<Scenario<T>> {
    let ctx = Ctx { text, base };
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let span = e.span().unwrap_or(0..0);
        ctx.err(span, e.message().to_string())
    })?;
    if raw.name.get_ref().trim().is_empty() {
        return Err(ctx.err(raw.name.span(), "name must not be empty"));
    }

    let g = &raw.grid;
    let mask = match &g.mask {
        Some(m) => ctx.wrap(m, parse_mask(m.get_ref(), g.nx, g.ny))?,
        None => vec![true; g.nx * g.ny],
    };
    let origin = g.origin.unwrap_or([0.0, 0.0]).map(T::lit);
    let grid: Grid<T> = Arc::new(ctx.wrap(&g.h, GridSpec::with_origin(g.nx, g.ny, T::lit(*g.h.get_ref()), origin, mask))?);

    let mut spec = ProblemSpec::plain(&grid);
    if let Some(w) = &raw.fields.weight {
        spec = ctx.wrap(w, scalar_field(&ctx, &grid, w.get_ref()).and_then(|a| spec.with_weight(a)))?;
    }
    if let Some(d) = &raw.fields.drift {
        spec = ctx.wrap(d, vector_field(&ctx, &grid, d.get_ref()).and_then(|f| spec.with_drift(f)))?;
    }
    if let Some(k) = &raw.fields.curvature {
        spec = ctx.wrap(k, scalar_field(&ctx, &grid, k.get_ref()).and_then(|h| spec.with_curvature(h)))?;
    }
    let kind = raw.boundary.kind.as_ref().map_or("neumann", |k| k.get_ref().as_str());
    match kind {
        "neumann" => {
            if let Some(d) = &raw.boundary.data {
                return Err(ctx.err(d.span(), "boundary data is only meaningful for kind = \"dirichlet\""));
            }
        }
        "dirichlet" => {
            let f = match &raw.boundary.data {
                Some(d) => ctx.wrap(d, boundary_data(&ctx, &grid, d.get_ref()))?,
                None => BoundaryTrace::zeros(&grid),
            };
            spec = spec.with_boundary(BoundaryCondition::DirichletRelaxed { f })?;
        }
        other => {
            let span = raw.boundary.kind.as_ref().map_or(0..0, |k| k.span());
            return Err(ctx.err(span, format!("unknown boundary kind '{other}' (neumann, dirichlet)")));
        }
    }

    let s = &raw.solver;
    let mut solver = SolverConfig::default();
    if let Some(v) = s.max_iters {
        solver.max_iters = v;
    }
    if let Some(v) = s.gap_tol {
        solver.gap_tol = T::lit(v);
    }
    solver.tau = s.tau.map(T::lit);
    solver.sigma = s.sigma.map(T::lit);
    if let Some(v) = s.step_ratio {
        solver.step_ratio = T::lit(v);
    }
    if let Some(v) = s.check_every {
        solver.check_every = v;
    }
    if let Some(v) = s.seed {
        solver.seed = v;
    }
    solver.diverge_floor = s.diverge_floor.map(T::lit);
    if let Some(v) = s.min_iters {
        solver.min_iters = v;
    }
    if let Some(init) = &s.init {
        solver.init = match init.get_ref().as_str() {
            "zero" => Init::Zero,
            "random" => Init::Random,
            other => return Err(ctx.err(init.span(), format!("unknown init '{other}' (zero, random)"))),
        };
    }

    let o = &raw.oracle;
    let mut oracle = OracleConfig::default();
    if let Some(e) = &o.epsilons {
        let v = e.get_ref();
        if v.is_empty() || v.iter().any(|x| !(*x > 0.0)) || v.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(ctx.err(e.span(), "epsilons must be positive and strictly decreasing"));
        }
        oracle.epsilons = v.iter().map(|x| T::lit(*x)).collect();
    }
    if let Some(v) = o.descent_tol {
        oracle.descent_tol = T::lit(v);
    }
    if let Some(v) = o.max_iters {
        oracle.max_iters = v;
    }
    if let Some(v) = o.restart_every {
        oracle.restart_every = v;
    }

    let checks = Checks {
        certify: raw.checks.certify,
        threshold: raw.checks.threshold,
        levelset: raw.checks.levelset,
        barrier: raw.checks.barrier,
    };
    Ok(Scenario {
        name: raw.name.into_inner(),
        description: raw.description,
        spec,
        solver,
        oracle,
        checks,
        expected: raw.expected,
        source: text.to_string(),
    })
}

pub fn load_scenario<T: Scalar>(path: &Path) -> Result<Scenario<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "name = \"m\"\n[grid]\nnx = 4\nny = 3\nh = 0.5\n";

    #[test]
    fn minimal_file_parses_with_defaults() {
        let s: Scenario<f64> = parse_scenario(MINIMAL, None).unwrap();
        assert_eq!(s.name, "m");
        assert_eq!(s.spec.grid().len(), 12);
        assert!(s.spec.is_neumann());
        assert_eq!(s.solver.max_iters, SolverConfig::<f64>::default().max_iters);
    }

    #[test]
    fn unknown_key_is_named_with_position() {
        let text = format!("{MINIMAL}[solver]\ngap_tol = 1e-3\nbogus = 1\n");
        match parse_scenario::<f64>(&text, None) {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 8);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_rle_length_is_rejected() {
        let text = "name = \"m\"\n[grid]\nnx = 4\nny = 3\nh = 0.5\nmask = \"rle:0,11\"\n";
        match parse_scenario::<f64>(text, None) {
            Err(Error::Config { line, column, message }) => {
                assert_eq!((line, column), (6, 8));
                assert!(message.contains("12"), "{message}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn generators() {
        let text = "name = \"g\"\n[grid]\nnx = 4\nny = 4\nh = 0.25\n\
                    [fields]\nweight = \"frame:1,2,3,4,5\"\ndrift = \"heisenberg\"\ncurvature = \"step:x,0.5,-1,1\"\n\
                    [boundary]\nkind = \"dirichlet\"\ndata = \"step:y,0.5,0,1\"\n";
        let s: Scenario<f64> = parse_scenario(text, None).unwrap();
        let g = s.spec.grid();
        let a = |i, j| s.spec.weight().values()[g.cell_at(i, j).unwrap()];
        assert_eq!((a(1, 1), a(0, 1), a(3, 0), a(1, 0), a(1, 3)), (1.0, 2.0, 3.0, 4.0, 5.0));
        // default center is the middle of the lattice, so the drift vanishes nowhere on cell centers
        let f = s.spec.drift().values()[g.cell_at(2, 2).unwrap()];
        assert_eq!(f, [-0.125, 0.125]);
        assert_eq!(s.spec.curvature().values()[g.cell_at(0, 0).unwrap()], -1.0);
        assert!(s.spec.dirichlet_data().is_some());
    }

    #[test]
    fn unknown_generator_reports_the_field() {
        let text = format!("{MINIMAL}[fields]\nweight = \"gaussian:1\"\n");
        match parse_scenario::<f64>(&text, None) {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("gaussian"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        assert!(matches!(parse_scenario::<f64>("name = \n", None), Err(Error::Config { line: 1, .. })));
    }
}
