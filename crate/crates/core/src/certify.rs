//! Machine-checkable verdicts on primal/dual pairs.
//!
//! Every report carries its metrics, and `pass` is recomputed from them by
//! [`verdict`], so a serialized report can be re-checked without the fields.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{gradient, probe_family, weighted_tv};
use crate::error::{Error, Result};
use crate::field::{ensure_same_grid, DualField, ScalarField};
use crate::problem::{existence_threshold, feasibility_residuals, primal_energy, ExistenceVerdict, ProblemSpec};
use crate::scalar::{norm2, Scalar};
use crate::solver::{least_norm_dual, solve, Certificate, Init, SolverConfig};

/// Cells with `|Du + F|` above this fraction of the maximum count as active.
pub const DEFAULT_ACTIVITY: f64 = 0.01;
/// Relative slack below the weight that marks a boundary edge as strictly inside the bound.
pub const COMPLEMENTARITY_MARGIN: f64 = 0.1;
/// Exact-feasibility level expected after polishing.
pub const POLISHED_FEASIBILITY: f64 = 1e-8;
/// RMS agreement required between dual fields of different runs.
pub const DIRECTION_RMS: f64 = 1e-2;
/// Minimum `|N| / a` on active cells.
pub const NORM_RATIO_TOL: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremName {
    DualFeasibility,
    ZeroGap,
    Alignment,
    BoundaryComplementarity,
    ZeroTraceSet,
    UniquenessOfDirection,
    ExistenceThreshold,
    Divergent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub name: TheoremName,
    pub pass: bool,
    pub metrics: BTreeMap<String, f64>,
    pub tolerance: f64,
}

impl TheoremReport {
    fn new(name: TheoremName, metrics: BTreeMap<String, f64>, tolerance: f64) -> Self {
        let pass = verdict(name, &metrics, tolerance);
        TheoremReport { name, pass, metrics, tolerance }
    }

    pub fn metric(&self, key: &str) -> f64 {
        self.metrics.get(key).copied().unwrap_or(f64::NAN)
    }

    /// Recomputes `pass` from the stored metrics.
    pub fn recheck(&self) -> bool {
        verdict(self.name, &self.metrics, self.tolerance)
    }
}

fn m(metrics: &BTreeMap<String, f64>, key: &str) -> f64 {
    metrics.get(key).copied().unwrap_or(f64::NAN)
}

/// The pass rule of each report as a function of its metrics alone.
pub fn verdict(name: TheoremName, metrics: &BTreeMap<String, f64>, tol: f64) -> bool {
    let g = |k| m(metrics, k);
    match name {
        TheoremName::DualFeasibility => {
            let trace_ok = g("neumann") == 0.0 || g("r_trace") <= tol;
            g("r_norm") == 0.0 && g("r_div") <= tol * g("div_scale") && trace_ok
        }
        TheoremName::ZeroGap => {
            let scale = 1.0 + g("primal").abs();
            g("gap") <= tol * scale
                && g("gap") >= -1e-8 * scale
                && g("r_norm") == 0.0
                && g("r_div") <= POLISHED_FEASIBILITY * g("div_scale")
                && (g("neumann") == 0.0 || g("r_trace") <= POLISHED_FEASIBILITY)
        }
        TheoremName::Alignment => {
            g("active_cells") == 0.0 || (g("min_cosine") >= 1.0 - tol && g("min_norm_ratio") >= 1.0 - NORM_RATIO_TOL)
        }
        TheoremName::BoundaryComplementarity => {
            g("max_complementarity") <= tol && (g("slack_edges") == 0.0 || g("max_slack_trace") <= tol)
        }
        TheoremName::ZeroTraceSet => g("slack_edges") == 0.0 || g("max_slack_trace") <= tol,
        TheoremName::UniquenessOfDirection => {
            g("runs") <= 1.0 || (g("primal_spread") <= 2.0 * tol * g("primal_scale") && g("max_rms") <= DIRECTION_RMS)
        }
        TheoremName::ExistenceThreshold => g("h_norm") < g("bound"),
        TheoremName::Divergent => g("min_slope") < -tol,
    }
}

fn metrics<const N: usize>(pairs: [(&str, f64); N]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Pointwise bound, divergence and (Neumann) boundary flux of `n`.
pub fn check_dual_feasibility<T: Scalar>(n: &DualField<T>, spec: &ProblemSpec<T>, tol: f64) -> Result<TheoremReport> {
    let r = feasibility_residuals(n, spec)?;
    let div_scale = 1.0 + spec.curvature().norm_l2().to_f64_lossy();
    Ok(TheoremReport::new(
        TheoremName::DualFeasibility,
        metrics([
            ("r_norm", r.r_norm.to_f64_lossy()),
            ("r_div", r.r_div.to_f64_lossy()),
            ("r_trace", r.r_trace.to_f64_lossy()),
            ("div_scale", div_scale),
            ("neumann", if spec.is_neumann() { 1.0 } else { 0.0 }),
        ]),
        tol,
    ))
}

/// Relative duality gap of a certificate together with the feasibility of its dual field.
pub fn check_zero_gap<T: Scalar>(cert: &Certificate<T>, spec: &ProblemSpec<T>, tol: f64) -> Result<TheoremReport> {
    let r = feasibility_residuals(&cert.n, spec)?;
    let primal = primal_energy(&cert.u, spec)?.total;
    let dual = crate::problem::dual_objective(&cert.n, spec);
    Ok(TheoremReport::new(
        TheoremName::ZeroGap,
        metrics([
            ("primal", primal.to_f64_lossy()),
            ("dual", dual.to_f64_lossy()),
            ("gap", (primal - dual).to_f64_lossy()),
            ("r_norm", r.r_norm.to_f64_lossy()),
            ("r_div", r.r_div.to_f64_lossy()),
            ("r_trace", r.r_trace.to_f64_lossy()),
            ("div_scale", 1.0 + spec.curvature().norm_l2().to_f64_lossy()),
            ("neumann", if spec.is_neumann() { 1.0 } else { 0.0 }),
        ]),
        tol,
    ))
}

/// Direction of `N` against `Du + F` on active cells; `tol` bounds `1 - cos`.
pub fn check_alignment<T: Scalar>(
    u: &ScalarField<T>,
    n: &DualField<T>,
    spec: &ProblemSpec<T>,
    activity: f64,
    tol: f64,
) -> Result<TheoremReport> {
    ensure_same_grid(u.grid(), spec.grid(), "check_alignment")?;
    ensure_same_grid(n.grid(), spec.grid(), "check_alignment")?;
    let du = gradient(u);
    let f = spec.drift().values();
    let a = spec.weight().values();
    let v: Vec<[f64; 2]> = du
        .values()
        .iter()
        .zip(f)
        .map(|(g, f)| [(g[0] + f[0]).to_f64_lossy(), (g[1] + f[1]).to_f64_lossy()])
        .collect();
    let mags: Vec<f64> = v.iter().map(|x| x[0].hypot(x[1])).collect();
    let max = mags.iter().copied().fold(0.0, f64::max);
    // a minimizer whose whole variation sits below the tolerance is constant
    // up to solver noise; there is no direction to align with
    let h2 = (spec.grid().h() * spec.grid().h()).to_f64_lossy();
    let tv: f64 = mags.iter().zip(a).map(|(m, a)| m * a.to_f64_lossy() * h2).sum();
    let primal = primal_energy(u, spec)?.total.to_f64_lossy();
    let flat = tv <= tol * (1.0 + primal.abs());
    let threshold = if flat { max } else { activity * max };
    let mut active = 0usize;
    let mut singular = 0usize;
    let mut min_cos = 1.0f64;
    let mut min_ratio = f64::INFINITY;
    for c in 0..v.len() {
        if mags[c] <= threshold || mags[c] == 0.0 {
            singular += 1;
            continue;
        }
        active += 1;
        let nv = n.field.values()[c];
        let nv = [nv[0].to_f64_lossy(), nv[1].to_f64_lossy()];
        let nn = nv[0].hypot(nv[1]);
        let cos = if nn > 0.0 { (nv[0] * v[c][0] + nv[1] * v[c][1]) / (nn * mags[c]) } else { -1.0 };
        min_cos = min_cos.min(cos);
        min_ratio = min_ratio.min(nn / a[c].to_f64_lossy());
    }
    let total = v.len() as f64;
    let mut mt = metrics([
        ("active_cells", active as f64),
        ("active_fraction", active as f64 / total),
        ("singular_fraction", singular as f64 / total),
        ("activity_threshold", threshold),
        ("tv_term", tv),
        ("flat", if flat { 1.0 } else { 0.0 }),
        ("degenerate", if active == 0 { 1.0 } else { 0.0 }),
    ]);
    if active > 0 {
        mt.insert("min_cosine".into(), min_cos);
        mt.insert("min_norm_ratio".into(), min_ratio);
    }
    Ok(TheoremReport::new(TheoremName::Alignment, mt, tol))
}

struct EdgeStats {
    max_comp: f64,
    max_slack_trace: f64,
    slack_edges: usize,
    displayed: f64,
    proof: f64,
}

fn edge_stats<T: Scalar>(u: &ScalarField<T>, n: &DualField<T>, spec: &ProblemSpec<T>) -> Result<EdgeStats> {
    ensure_same_grid(u.grid(), spec.grid(), "boundary complementarity")?;
    ensure_same_grid(n.grid(), spec.grid(), "boundary complementarity")?;
    let f = spec
        .dirichlet_data()
        .ok_or_else(|| Error::InvalidProblem("boundary complementarity needs relaxed Dirichlet data".into()))?;
    let grid = spec.grid();
    let mut s = EdgeStats { max_comp: 0.0, max_slack_trace: 0.0, slack_edges: 0, displayed: 0.0, proof: 0.0 };
    for (e, edge) in grid.boundary_edges().iter().enumerate() {
        // trace of the reduced variable: u - f
        let w = (u.values()[edge.cell] - f.values()[e]).to_f64_lossy();
        let a = spec.weight().values()[edge.cell].to_f64_lossy();
        let phi = n.flux.values()[e].to_f64_lossy();
        s.max_comp = s.max_comp.max(w.abs() * (a - phi.abs()).max(0.0) / a);
        if phi.abs() <= a * (1.0 - COMPLEMENTARITY_MARGIN) {
            s.slack_edges += 1;
            s.max_slack_trace = s.max_slack_trace.max(w.abs());
        }
        s.displayed = s.displayed.max((w * phi - w.abs()).abs());
        s.proof = s.proof.max((w * phi + a * w.abs()).abs());
    }
    Ok(s)
}

/// `|u - f| (a - |[N, nu]|) <= tol a` on every boundary edge and `|u - f| <= tol`
/// where the flux stays a margin below the weight.
///
/// Both sign conventions for the flux identity are reported
/// (`displayed_sign_defect` for `w [N, nu] = |w|`, `proof_sign_defect` for
/// `w [N, nu] = -a |w|`); the verdict uses magnitudes only.
pub fn check_boundary_complementarity<T: Scalar>(
    u: &ScalarField<T>,
    n: &DualField<T>,
    spec: &ProblemSpec<T>,
    tol: f64,
) -> Result<TheoremReport> {
    let s = edge_stats(u, n, spec)?;
    Ok(TheoremReport::new(
        TheoremName::BoundaryComplementarity,
        metrics([
            ("max_complementarity", s.max_comp),
            ("max_slack_trace", s.max_slack_trace),
            ("slack_edges", s.slack_edges as f64),
            ("edges", spec.grid().boundary_edges().len() as f64),
            ("displayed_sign_defect", s.displayed),
            ("proof_sign_defect", s.proof),
            ("margin", COMPLEMENTARITY_MARGIN),
        ]),
        tol,
    ))
}

/// `u = f` (up to `tol`) on edges where the flux stays a margin below the weight.
pub fn check_zero_trace_set<T: Scalar>(
    u: &ScalarField<T>,
    n: &DualField<T>,
    spec: &ProblemSpec<T>,
    tol: f64,
) -> Result<TheoremReport> {
    let s = edge_stats(u, n, spec)?;
    Ok(TheoremReport::new(
        TheoremName::ZeroTraceSet,
        metrics([
            ("max_slack_trace", s.max_slack_trace),
            ("slack_edges", s.slack_edges as f64),
            ("margin", COMPLEMENTARITY_MARGIN),
        ]),
        tol,
    ))
}

/// Pairwise agreement of primal values and dual fields across runs.
pub fn compare_runs<T: Scalar>(runs: &[Certificate<T>], spec: &ProblemSpec<T>, gap_tol: f64) -> TheoremReport {
    let activity = DEFAULT_ACTIVITY;
    let active: Vec<Vec<bool>> = runs
        .iter()
        .map(|c| {
            let du = gradient(&c.u);
            let mags: Vec<f64> = du
                .values()
                .iter()
                .zip(spec.drift().values())
                .map(|(g, f)| norm2([g[0] + f[0], g[1] + f[1]]).to_f64_lossy())
                .collect();
            let max = mags.iter().copied().fold(0.0, f64::max);
            mags.iter().map(|v| *v > activity * max && *v > 0.0).collect()
        })
        .collect();
    let n = spec.grid().len();
    let common: Vec<bool> = (0..n).map(|c| active.iter().all(|a| a[c])).collect();
    let common_count = common.iter().filter(|x| **x).count();
    let primals: Vec<f64> = runs.iter().map(|c| c.primal_value.to_f64_lossy()).collect();
    let pmax = primals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pmin = primals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut max_rms = 0.0f64;
    let mut max_u_diff = 0.0f64;
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (a, b) = (runs[i].n.field.values(), runs[j].n.field.values());
            let mut acc = 0.0;
            for c in (0..n).filter(|c| common[*c]) {
                let d0 = (a[c][0] - b[c][0]).to_f64_lossy();
                let d1 = (a[c][1] - b[c][1]).to_f64_lossy();
                acc += d0 * d0 + d1 * d1;
            }
            if common_count > 0 {
                max_rms = max_rms.max((acc / common_count as f64).sqrt());
            }
            let ud = runs[i]
                .u
                .values()
                .iter()
                .zip(runs[j].u.values())
                .map(|(x, y)| (*x - *y).abs().to_f64_lossy())
                .fold(0.0, f64::max);
            max_u_diff = max_u_diff.max(ud);
        }
    }
    let spread = if runs.is_empty() { 0.0 } else { pmax - pmin };
    TheoremReport::new(
        TheoremName::UniquenessOfDirection,
        metrics([
            ("runs", runs.len() as f64),
            ("primal_spread", spread),
            ("primal_scale", 1.0 + pmax.abs().max(pmin.abs()).min(f64::MAX)),
            ("max_rms", max_rms),
            ("common_active_cells", common_count as f64),
            ("max_u_difference", max_u_diff),
        ]),
        gap_tol,
    )
}

/// Solves from `n_seeds` random starts and compares the runs.
pub fn check_uniqueness_of_direction<T: Scalar>(
    spec: &ProblemSpec<T>,
    cfg: &SolverConfig<T>,
    n_seeds: usize,
) -> Result<TheoremReport> {
    let runs: Vec<Result<Certificate<T>>> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|k| {
            let c = SolverConfig { seed: cfg.seed.wrapping_add(k), init: Init::Random, ..cfg.clone() };
            solve(spec, &c)
        })
        .collect();
    let mut certs = Vec::with_capacity(runs.len());
    for (k, r) in runs.into_iter().enumerate() {
        let c = r?;
        if !c.converged {
            return Err(Error::NotConverged(format!("seed offset {k} did not converge")));
        }
        certs.push(c);
    }
    Ok(compare_runs(&certs, spec, cfg.gap_tol.to_f64_lossy()))
}

/// Sufficient existence condition `max|H| < 1/(1.1 C)` as a report.
pub fn check_existence_threshold<T: Scalar>(spec: &ProblemSpec<T>) -> Result<TheoremReport> {
    let t = existence_threshold(spec)?;
    Ok(TheoremReport::new(
        TheoremName::ExistenceThreshold,
        metrics([
            ("c_omega", t.c_omega.to_f64_lossy()),
            ("h_norm", t.h_norm.to_f64_lossy()),
            ("bound", t.bound.to_f64_lossy()),
            ("guaranteed", if t.verdict == ExistenceVerdict::Guaranteed { 1.0 } else { 0.0 }),
        ]),
        0.0,
    ))
}

/// Probe slopes `lim E(t u)/t = sum a|Du| h^2 + sum H u h^2` over the probe
/// family and its negation; a negative slope proves the energy is unbounded below.
pub fn check_divergence_below<T: Scalar>(spec: &ProblemSpec<T>) -> Result<TheoremReport> {
    if !spec.is_neumann() {
        return Err(Error::InvalidProblem("divergence probe applies to Neumann problems".into()));
    }
    let grid = spec.grid();
    let h2 = grid.h() * grid.h();
    let a = spec.weight().values();
    let hc = spec.curvature().values();
    let mut best = f64::INFINITY;
    let mut best_probe = 0usize;
    let probes = probe_family(grid)?;
    let mut scale = 0.0f64;
    for (k, p) in probes.iter().enumerate() {
        let tv = weighted_tv(grid, &p.values, Some(a)).to_f64_lossy();
        let hu = (p.values.iter().zip(hc).map(|(u, h)| *u * *h).sum::<T>() * h2).to_f64_lossy();
        scale = scale.max(tv);
        let slope = tv - hu.abs();
        if slope < best {
            best = slope;
            best_probe = k;
        }
    }
    // rounding allowance relative to the probe total variations
    let tol = 1e-9 * scale.max(1e-300);
    Ok(TheoremReport::new(
        TheoremName::Divergent,
        metrics([
            ("min_slope", best),
            ("probe_index", best_probe as f64),
            ("probes", probes.len() as f64),
        ]),
        tol,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundedness {
    /// A strictly feasible dual field exists.
    Bounded,
    /// A probe direction has negative energy slope.
    Unbounded,
    /// Neither certificate is available.
    Undecided,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundednessReport {
    pub class: Boundedness,
    /// `max |b0| / a` for the least-norm field with the prescribed divergence.
    pub least_norm_ratio: f64,
    pub min_slope: f64,
    pub slope_tolerance: f64,
}

/// Decides whether a Neumann energy is bounded below, from the least-norm
/// dual field on one side and the probe slopes on the other.
pub fn classify_boundedness<T: Scalar>(spec: &ProblemSpec<T>) -> Result<BoundednessReport> {
    let div = check_divergence_below(spec)?;
    let (_, ratio) = least_norm_dual(spec)?;
    let ratio = ratio.to_f64_lossy();
    let min_slope = div.metric("min_slope");
    let class = if ratio < 1.0 {
        Boundedness::Bounded
    } else if div.pass {
        Boundedness::Unbounded
    } else {
        Boundedness::Undecided
    };
    Ok(BoundednessReport { class, least_norm_ratio: ratio, min_slope, slope_tolerance: div.tolerance })
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdBisection {
    /// Largest parameter found bounded.
    pub bounded_below: f64,
    /// Smallest parameter found unbounded.
    pub unbounded_above: f64,
    pub estimate: f64,
    pub evaluations: usize,
}

/// Bisects a one-parameter family `c -> spec(c)` for the boundedness threshold.
/// `lo` must classify as bounded and `hi` as unbounded. Undecided parameters
/// shrink the bracket from the bounded side, since neither certificate applies.
pub fn bisect_threshold<T: Scalar>(
    family: impl Fn(f64) -> Result<ProblemSpec<T>>,
    lo: f64,
    hi: f64,
    rel_tol: f64,
) -> Result<ThresholdBisection> {
    let class = |c: f64| classify_boundedness(&family(c)?).map(|r| r.class);
    if class(lo)? != Boundedness::Bounded {
        return Err(Error::InvalidArgument(format!("lower end {lo} is not bounded")));
    }
    if class(hi)? != Boundedness::Unbounded {
        return Err(Error::InvalidArgument(format!("upper end {hi} is not unbounded")));
    }
    // two brackets: the bounded edge and the unbounded edge
    let (mut b_lo, mut b_hi) = (lo, hi);
    let (mut u_lo, mut u_hi) = (lo, hi);
    let mut evaluations = 2;
    while b_hi - b_lo > rel_tol * b_lo.abs().max(1e-12) {
        let mid = 0.5 * (b_lo + b_hi);
        evaluations += 1;
        if class(mid)? == Boundedness::Bounded {
            b_lo = mid;
        } else {
            b_hi = mid;
        }
    }
    while u_hi - u_lo > rel_tol * u_lo.abs().max(1e-12) {
        let mid = 0.5 * (u_lo + u_hi);
        evaluations += 1;
        if class(mid)? == Boundedness::Unbounded {
            u_hi = mid;
        } else {
            u_lo = mid;
        }
    }
    Ok(ThresholdBisection { bounded_below: b_lo, unbounded_above: u_hi, estimate: 0.5 * (b_lo + u_hi), evaluations })
}

/// Checks that follow from a certificate alone (no re-solving).
pub fn certificate_battery<T: Scalar>(cert: &Certificate<T>, spec: &ProblemSpec<T>, tol: f64) -> Result<Vec<TheoremReport>> {
    let mut out = vec![
        check_dual_feasibility(&cert.n, spec, tol)?,
        check_zero_gap(cert, spec, tol)?,
        check_alignment(&cert.u, &cert.n, spec, DEFAULT_ACTIVITY, 1e-3)?,
    ];
    if spec.is_neumann() {
        let ex = check_existence_threshold(spec)?;
        let guaranteed = ex.pass;
        out.push(ex);
        if !guaranteed {
            out.push(check_divergence_below(spec)?);
        }
    } else {
        out.push(check_boundary_complementarity(&cert.u, &cert.n, spec, tol)?);
        out.push(check_zero_trace_set(&cert.u, &cert.n, spec, tol)?);
    }
    Ok(out)
}
