//! First-order primal-dual (Chambolle-Pock) solver for the saddle problem
//!
//! ```text
//! min_u max_{|b| <= a, |q| <= a}  <b, Du + F> h^2 + <H, u> h^2 + sum_e q_e (u(c_e) - f_e) h
//! ```
//!
//! The `q` block is only present for relaxed Dirichlet problems; its negative
//! is the boundary flux of the dual certificate. Neumann problems keep `u`
//! mean-zero by projection after every primal step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::{add_flux_into, adjoint_divergence_into, gradient_into, operator_norm, saddle_operator_norm};
use crate::error::{Error, Result};
use crate::field::{ensure_same_grid, BoundaryTrace, DualField, ScalarField, VectorField};
use crate::linalg::{conjugate_gradient, neumann_laplacian, remove_mean};
use crate::problem::{dual_objective, energy_raw, primal_energy, residuals_raw, ProblemSpec, Residuals};
use crate::scalar::{dot2, norm2, project_ball, project_interval, Scalar};

#[derive(Clone, Debug)]
pub enum Init<T> {
    Zero,
    /// Uniform random `u` in `[-1, 1]` and `b` in the weighted ball, from `SolverConfig::seed`.
    Random,
    Warm { u: ScalarField<T>, n: DualField<T> },
}

#[derive(Clone, Debug)]
pub struct SolverConfig<T> {
    pub max_iters: usize,
    /// Relative tolerance on the gap and the divergence residual.
    pub gap_tol: T,
    /// Primal step; `None` picks `0.99 / (L * step_ratio)`.
    pub tau: Option<T>,
    /// Dual step; `None` picks `0.99 * step_ratio / L`.
    pub sigma: Option<T>,
    pub step_ratio: T,
    pub check_every: usize,
    pub seed: u64,
    pub init: Init<T>,
    /// Primal values below this stop the run as diverging.
    /// Defaults to `-1e6 (1 + ||F|| ||a||)`.
    pub diverge_floor: Option<T>,
    /// Keep iterating after the first converged check until this many
    /// iterations have run. Used to tighten fixtures beyond `gap_tol`.
    pub min_iters: usize,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            max_iters: 50_000,
            gap_tol: T::lit(1e-3),
            tau: None,
            sigma: None,
            step_ratio: T::one(),
            check_every: 50,
            seed: 0,
            init: Init::Zero,
            diverge_floor: None,
            min_iters: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceRow<T> {
    pub iter: usize,
    pub primal: T,
    pub dual: T,
    pub gap: T,
    pub r_div: T,
    pub r_trace: T,
}

#[derive(Clone, Debug)]
pub struct Certificate<T> {
    pub u: ScalarField<T>,
    pub n: DualField<T>,
    pub primal_value: T,
    pub dual_value: T,
    /// `primal_value - dual_value`.
    pub gap: T,
    pub residuals: Residuals<T>,
    pub trace: Vec<TraceRow<T>>,
    pub converged: bool,
    /// The primal value dropped below the divergence floor.
    pub diverging: bool,
    /// The dual field was made exactly feasible by [`dual_polish`].
    pub polished: bool,
    pub iterations: usize,
    pub last_u: ScalarField<T>,
    pub last_n: DualField<T>,
    pub tau: T,
    pub sigma: T,
    pub op_norm: T,
}

/// Restores exact dual feasibility by least-norm affine corrections.
///
/// The correction solves one Poisson-type system by conjugate gradients. The
/// pointwise bound is then restored by moving towards the least-norm feasible
/// point, which must lie strictly inside the bound.
pub(crate) struct Polisher<T: Scalar> {
    spec: ProblemSpec<T>,
    target: Vec<T>,
    base_b: Vec<[T; 2]>,
    base_flux: Vec<T>,
    base_ratio: T,
}

const POLISH_TOL: f64 = 1e-12;

impl<T: Scalar> Polisher<T> {
    pub(crate) fn new(spec: &ProblemSpec<T>) -> Result<Self> {
        let grid = spec.grid();
        let target = spec.divergence_target().into_values();
        let mut p = Polisher {
            spec: spec.clone(),
            target,
            base_b: vec![[T::zero(); 2]; grid.len()],
            base_flux: vec![T::zero(); grid.boundary_edges().len()],
            base_ratio: T::zero(),
        };
        let (mut b, mut flux) = (p.base_b.clone(), p.base_flux.clone());
        p.correct(&mut b, &mut flux)?;
        p.base_ratio = ratio(spec, &b, &flux);
        p.base_b = b;
        p.base_flux = flux;
        Ok(p)
    }

    /// Affine least-norm correction onto the divergence constraint.
    fn correct(&self, b: &mut [[T; 2]], flux: &mut [T]) -> Result<()> {
        let grid = self.spec.grid();
        let n = grid.len();
        let h = grid.h();
        let h2 = h * h;
        let mut r = vec![T::zero(); n];
        adjoint_divergence_into(grid, b, &mut r);
        if self.spec.is_neumann() {
            flux.iter_mut().for_each(|v| *v = T::zero());
        } else {
            add_flux_into(grid, flux, &mut r);
        }
        for (rc, t) in r.iter_mut().zip(&self.target) {
            *rc = *rc - *t;
        }
        let mut g = vec![[T::zero(); 2]; n];
        let iters = 40 * (grid.nx() + grid.ny()) + 20 * n.min(2000) + 200;
        if self.spec.is_neumann() {
            // grad z with L z = h^2 r
            remove_mean(&mut r);
            let rhs: Vec<T> = r.iter().map(|v| *v * h2).collect();
            if rhs.iter().all(|v| *v == T::zero()) {
                return Ok(());
            }
            let mut z = vec![T::zero(); n];
            conjugate_gradient(|x, o| neumann_laplacian(grid, x, o), &rhs, &mut z, T::lit(POLISH_TOL), iters, true)?;
            gradient_into(grid, &z, &mut g);
            for c in 0..n {
                b[c] = [b[c][0] + g[c][0], b[c][1] + g[c][1]];
            }
        } else {
            // (L + h n_e) lam = -h^2 r; b -= grad lam; phi += lam on edges
            let rhs: Vec<T> = r.iter().map(|v| -*v * h2).collect();
            if rhs.iter().all(|v| *v == T::zero()) {
                return Ok(());
            }
            let mut lam = vec![T::zero(); n];
            let apply = |x: &[T], o: &mut [T]| {
                neumann_laplacian(grid, x, o);
                for c in 0..n {
                    o[c] = o[c] + h * T::from_usize_lossy(grid.edges_of(c).len()) * x[c];
                }
            };
            conjugate_gradient(apply, &rhs, &mut lam, T::lit(POLISH_TOL), iters, false)?;
            gradient_into(grid, &lam, &mut g);
            for c in 0..n {
                b[c] = [b[c][0] - g[c][0], b[c][1] - g[c][1]];
            }
            for (e, edge) in grid.boundary_edges().iter().enumerate() {
                flux[e] = flux[e] + lam[edge.cell];
            }
        }
        Ok(())
    }

    /// Exactly feasible dual field near `(b, flux)`.
    pub(crate) fn polish(&self, b: &[[T; 2]], flux: &[T]) -> Result<(Vec<[T; 2]>, Vec<T>)> {
        let mut b = b.to_vec();
        let mut flux = flux.to_vec();
        self.correct(&mut b, &mut flux)?;
        let spec = &self.spec;
        if ratio(spec, &b, &flux) <= T::one() {
            return Ok((b, flux));
        }
        if !(self.base_ratio < T::one()) {
            return Err(Error::InfeasibleDual(format!(
                "least-norm dual field reaches {} times the weight",
                self.base_ratio.to_f64_lossy()
            )));
        }
        let a = spec.weight().values();
        let grid = spec.grid();
        let mut theta = T::zero();
        for c in 0..grid.len() {
            theta = theta.max(entry_theta(self.base_b[c], b[c], a[c]));
        }
        for (e, edge) in grid.boundary_edges().iter().enumerate() {
            let a_e = a[edge.cell];
            theta = theta.max(entry_theta([self.base_flux[e], T::zero()], [flux[e], T::zero()], a_e));
        }
        let one = T::one();
        for c in 0..grid.len() {
            let v = [
                theta * self.base_b[c][0] + (one - theta) * b[c][0],
                theta * self.base_b[c][1] + (one - theta) * b[c][1],
            ];
            b[c] = project_ball(v, a[c]);
        }
        for (e, edge) in grid.boundary_edges().iter().enumerate() {
            let v = theta * self.base_flux[e] + (one - theta) * flux[e];
            flux[e] = project_interval(v, a[edge.cell]);
        }
        Ok((b, flux))
    }
}

fn ratio<T: Scalar>(spec: &ProblemSpec<T>, b: &[[T; 2]], flux: &[T]) -> T {
    let a = spec.weight().values();
    let mut m = T::zero();
    for (c, v) in b.iter().enumerate() {
        m = m.max(norm2(*v) / a[c]);
    }
    if !spec.is_neumann() {
        for (e, edge) in spec.grid().boundary_edges().iter().enumerate() {
            m = m.max(flux[e].abs() / a[edge.cell]);
        }
    }
    m
}

/// Smallest `theta` with `|theta b0 + (1 - theta) b1| <= a`, given `|b0| < a`.
fn entry_theta<T: Scalar>(b0: [T; 2], b1: [T; 2], a: T) -> T {
    let n1 = dot2(b1, b1);
    if n1 <= a * a {
        return T::zero();
    }
    let d = [b1[0] - b0[0], b1[1] - b0[1]];
    let dd = dot2(d, d);
    let bd = dot2(b1, d);
    let disc = (bd * bd - dd * (n1 - a * a)).max(T::zero());
    let theta = (bd - disc.sqrt()) / dd;
    // nudge inside so the final projection is a no-op up to rounding
    (theta * (T::one() + T::lit(1e-12))).min(T::one())
}

/// Least-norm field with the prescribed divergence (zero flux for Neumann)
/// and its largest pointwise ratio `|b| / a`. A ratio below one certifies
/// that the energy is bounded below.
pub fn least_norm_dual<T: Scalar>(spec: &ProblemSpec<T>) -> Result<(DualField<T>, T)> {
    let p = Polisher::new(spec)?;
    let grid = spec.grid();
    let n = DualField::new(
        VectorField::from_raw(grid.clone(), p.base_b),
        BoundaryTrace::from_raw(grid.clone(), p.base_flux),
    )?;
    Ok((n, p.base_ratio))
}

/// Least-norm correction of `cert.n` onto the exact feasible set, followed by
/// the dual value of the corrected field.
pub fn dual_polish<T: Scalar>(cert: &Certificate<T>, spec: &ProblemSpec<T>) -> Result<Certificate<T>> {
    ensure_same_grid(cert.u.grid(), spec.grid(), "dual_polish")?;
    let pol = Polisher::new(spec)?;
    let n = polish_with(&pol, &cert.n)?;
    let dual = dual_objective(&n, spec);
    let residuals = crate::problem::feasibility_residuals(&n, spec)?;
    let mut out = cert.clone();
    out.n = n;
    out.dual_value = dual;
    out.gap = out.primal_value - dual;
    out.residuals = residuals;
    out.polished = true;
    Ok(out)
}

/// Exactly feasible dual field closest to `n` (see [`dual_polish`]).
pub fn polish_dual<T: Scalar>(n: &DualField<T>, spec: &ProblemSpec<T>) -> Result<DualField<T>> {
    ensure_same_grid(n.grid(), spec.grid(), "polish_dual")?;
    polish_with(&Polisher::new(spec)?, n)
}

fn polish_with<T: Scalar>(pol: &Polisher<T>, n: &DualField<T>) -> Result<DualField<T>> {
    let (b, flux) = pol.polish(n.field.values(), n.flux.values())?;
    let grid = n.grid().clone();
    Ok(DualField { field: VectorField::from_raw(grid.clone(), b), flux: BoundaryTrace::from_raw(grid, flux) })
}

/// `primal_energy(u) - dual_objective(n)`; rejects `n` outside the pointwise bound.
pub fn duality_gap<T: Scalar>(u: &ScalarField<T>, n: &DualField<T>, spec: &ProblemSpec<T>) -> Result<T> {
    let res = crate::problem::feasibility_residuals(n, spec)?;
    if res.r_norm > T::zero() {
        return Err(Error::InvalidArgument(format!(
            "dual field exceeds the weight by {}",
            res.r_norm.to_f64_lossy()
        )));
    }
    Ok(primal_energy(u, spec)?.total - dual_objective(n, spec))
}

struct State<T> {
    u: Vec<T>,
    ubar: Vec<T>,
    b: Vec<[T; 2]>,
    q: Vec<T>,
    u_sum: Vec<T>,
    b_sum: Vec<[T; 2]>,
    q_sum: Vec<T>,
    count: usize,
}

struct Candidate<T> {
    b: Vec<[T; 2]>,
    flux: Vec<T>,
}

/// Runs the primal-dual iteration and returns the best certified pair.
pub fn solve<T: Scalar>(spec: &ProblemSpec<T>, cfg: &SolverConfig<T>) -> Result<Certificate<T>> {
    let grid = spec.grid().clone();
    let n = grid.len();
    let ne = grid.boundary_edges().len();
    let neumann = spec.is_neumann();
    if !(cfg.gap_tol > T::zero()) {
        return Err(Error::InvalidArgument("gap_tol must be positive".into()));
    }
    if cfg.check_every == 0 {
        return Err(Error::InvalidArgument("check_every must be at least 1".into()));
    }
    let norm = if neumann { operator_norm(&grid)? } else { saddle_operator_norm(&grid)? };
    let l = T::lit(1.01) * norm;
    let (tau, sigma) = match (cfg.tau, cfg.sigma) {
        (Some(t), Some(s)) => (t, s),
        (t, s) => {
            let base = T::lit(0.99) / l.max(T::min_positive_value());
            (t.unwrap_or(base / cfg.step_ratio), s.unwrap_or(base * cfg.step_ratio))
        }
    };
    if !(tau > T::zero() && sigma > T::zero()) || !(tau * sigma * l * l < T::one()) {
        return Err(Error::StepSize { tau: tau.to_f64_lossy(), sigma: sigma.to_f64_lossy(), norm: l.to_f64_lossy() });
    }

    let a = spec.weight().values().to_vec();
    let a_edge = spec.edge_weights();
    let f = spec.drift().values().to_vec();
    let hc = spec.curvature().values().to_vec();
    let fd: Vec<T> = spec.dirichlet_data().map(|d| d.values().to_vec()).unwrap_or_else(|| vec![T::zero(); ne]);
    let target = spec.divergence_target().into_values();
    let h_norm = spec.curvature().norm_l2();
    let floor = cfg.diverge_floor.unwrap_or_else(|| {
        -T::lit(1e6) * (T::one() + spec.drift().norm_l2() * spec.weight().norm_l2())
    });
    let inv_h = T::one() / grid.h();

    let mut st = init_state(spec, cfg)?;
    let mut grad = vec![[T::zero(); 2]; n];
    let mut kstar = vec![T::zero(); n];
    let mut scratch = vec![T::zero(); n];
    let mut trace = Vec::new();
    let mut polisher: Option<std::result::Result<Polisher<T>, ()>> = None;
    let mut diverging = false;
    let mut iter = 0;
    let mut finished: Option<Finish<T>> = None;

    while iter < cfg.max_iters {
        iter += 1;
        // dual ascent with pointwise projections
        gradient_into(&grid, &st.ubar, &mut grad);
        for c in 0..n {
            let v = [st.b[c][0] + sigma * (grad[c][0] + f[c][0]), st.b[c][1] + sigma * (grad[c][1] + f[c][1])];
            st.b[c] = project_ball(v, a[c]);
        }
        if !neumann {
            for (e, edge) in grid.boundary_edges().iter().enumerate() {
                st.q[e] = project_interval(st.q[e] + sigma * (st.ubar[edge.cell] - fd[e]), a_edge[e]);
            }
        }
        // primal descent: u -= tau (D^T b + S q / h + H)
        adjoint_divergence_into(&grid, &st.b, &mut kstar);
        if !neumann {
            for (e, edge) in grid.boundary_edges().iter().enumerate() {
                kstar[edge.cell] = kstar[edge.cell] - st.q[e] * inv_h;
            }
        }
        for c in 0..n {
            let new = st.u[c] - tau * (hc[c] - kstar[c]);
            st.ubar[c] = new;
        }
        if neumann {
            remove_mean(&mut st.ubar);
        }
        for c in 0..n {
            let new = st.ubar[c];
            st.ubar[c] = new + new - st.u[c];
            st.u[c] = new;
        }
        st.count += 1;
        for c in 0..n {
            st.u_sum[c] = st.u_sum[c] + st.u[c];
            st.b_sum[c] = [st.b_sum[c][0] + st.b[c][0], st.b_sum[c][1] + st.b[c][1]];
        }
        for e in 0..ne {
            st.q_sum[e] = st.q_sum[e] + st.q[e];
        }

        if iter % cfg.check_every != 0 && iter != cfg.max_iters {
            continue;
        }
        if st.u.iter().any(|v| !v.is_finite()) || st.b.iter().any(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::NotFinite { iter, what: "primal-dual iterate".into() });
        }
        let eval = evaluate(spec, &st, &target, &mut grad, &mut scratch);
        let row = TraceRow {
            iter,
            primal: eval.primal,
            dual: eval.duals[0].value,
            gap: eval.primal - eval.duals[0].value,
            r_div: eval.duals[0].res.r_div,
            r_trace: eval.duals[0].res.r_trace,
        };
        trace.push(row);
        if eval.last_primal < floor || eval.primal < floor {
            diverging = true;
            break;
        }
        if iter < cfg.min_iters {
            continue;
        }
        let scale = T::one() + eval.primal.abs();
        let div_tol = cfg.gap_tol * (T::one() + h_norm);
        let raw_ok = eval
            .duals
            .iter()
            .any(|d| d.res.r_div <= div_tol && eval.primal - d.value <= cfg.gap_tol * scale);
        if !raw_ok {
            continue;
        }
        if polisher.is_none() {
            polisher = Some(Polisher::new(spec).map_err(|_| ()));
        }
        match polisher.as_ref().unwrap() {
            Ok(p) => {
                if let Some(fin) = polished_finish(p, spec, &eval, cfg.gap_tol)? {
                    finished = Some(fin);
                    break;
                }
            }
            Err(()) => {
                finished = Some(raw_finish(&eval, div_tol, cfg.gap_tol, true));
                break;
            }
        }
    }

    let eval = evaluate(spec, &st, &target, &mut grad, &mut scratch);
    let fin = match finished {
        Some(f) => f,
        None => {
            // not converged: still report the best pair, polished when possible
            let pol = match polisher {
                Some(Ok(p)) => Some(p),
                Some(Err(())) => None,
                None => Polisher::new(spec).ok(),
            };
            let mut fin = None;
            if let Some(p) = pol.as_ref() {
                if let Ok(Some(mut f)) = polished_finish(p, spec, &eval, T::infinity()) {
                    f.converged = false;
                    fin = Some(f);
                }
            }
            fin.unwrap_or_else(|| {
                raw_finish(&eval, cfg.gap_tol * (T::one() + h_norm), cfg.gap_tol, false)
            })
        }
    };

    let last_u = ScalarField::from_raw(grid.clone(), st.u.clone());
    let last_flux: Vec<T> = if neumann { vec![T::zero(); ne] } else { st.q.iter().map(|v| -*v).collect() };
    let last_n = DualField {
        field: VectorField::from_raw(grid.clone(), st.b.clone()),
        flux: BoundaryTrace::from_raw(grid.clone(), last_flux),
    };
    let u = ScalarField::from_raw(grid.clone(), fin.u);
    let n_field = DualField {
        field: VectorField::from_raw(grid.clone(), fin.b),
        flux: BoundaryTrace::from_raw(grid.clone(), fin.flux),
    };
    let residuals = crate::problem::feasibility_residuals(&n_field, spec)?;
    Ok(Certificate {
        u,
        n: n_field,
        primal_value: fin.primal,
        dual_value: fin.dual,
        gap: fin.primal - fin.dual,
        residuals,
        trace,
        converged: fin.converged && !diverging,
        diverging,
        polished: fin.polished,
        iterations: iter,
        last_u,
        last_n,
        tau,
        sigma,
        op_norm: norm,
    })
}

struct DualEval<T> {
    cand: Candidate<T>,
    value: T,
    res: Residuals<T>,
}

struct Eval<T> {
    /// min over the primal candidates
    primal: T,
    primal_u: Vec<T>,
    last_primal: T,
    /// ergodic first, then last iterate
    duals: Vec<DualEval<T>>,
}

struct Finish<T> {
    u: Vec<T>,
    b: Vec<[T; 2]>,
    flux: Vec<T>,
    primal: T,
    dual: T,
    converged: bool,
    polished: bool,
}

fn evaluate<T: Scalar>(
    spec: &ProblemSpec<T>,
    st: &State<T>,
    target: &[T],
    grad: &mut [[T; 2]],
    scratch: &mut [T],
) -> Eval<T> {
    let k = T::from_usize_lossy(st.count.max(1));
    let mut u_avg: Vec<T> = st.u_sum.iter().map(|v| *v / k).collect();
    if spec.is_neumann() {
        remove_mean(&mut u_avg);
    }
    let p_avg = energy_raw(spec, &u_avg, grad).total;
    let p_last = energy_raw(spec, &st.u, grad).total;
    let (primal, primal_u) = if p_last < p_avg { (p_last, st.u.clone()) } else { (p_avg, u_avg) };
    let neumann = spec.is_neumann();
    let flux_of = |q: &[T], scale: T| -> Vec<T> {
        if neumann {
            vec![T::zero(); q.len()]
        } else {
            q.iter().map(|v| -*v / scale).collect()
        }
    };
    let b_avg: Vec<[T; 2]> = st.b_sum.iter().map(|v| [v[0] / k, v[1] / k]).collect();
    let cands = [
        Candidate { b: b_avg, flux: flux_of(&st.q_sum, k) },
        Candidate { b: st.b.clone(), flux: flux_of(&st.q, T::one()) },
    ];
    let duals = cands
        .into_iter()
        .map(|cand| {
            let value = dual_raw(spec, &cand);
            let res = residuals_raw(spec, &cand.b, &cand.flux, target, scratch);
            DualEval { cand, value, res }
        })
        .collect();
    Eval { primal, primal_u, last_primal: p_last, duals }
}

fn dual_raw<T: Scalar>(spec: &ProblemSpec<T>, cand: &Candidate<T>) -> T {
    let h = spec.grid().h();
    let f = spec.drift().values();
    let mut v = T::zero();
    for (b, f) in cand.b.iter().zip(f) {
        v = v + b[0] * f[0] + b[1] * f[1];
    }
    v = v * h * h;
    if let Some(fd) = spec.dirichlet_data() {
        v = v + cand.flux.iter().zip(fd.values()).map(|(p, g)| *p * *g).sum::<T>() * h;
    }
    v
}

fn polished_finish<T: Scalar>(
    pol: &Polisher<T>,
    spec: &ProblemSpec<T>,
    eval: &Eval<T>,
    gap_tol: T,
) -> Result<Option<Finish<T>>> {
    let mut best: Option<(T, Vec<[T; 2]>, Vec<T>)> = None;
    for d in &eval.duals {
        let (b, flux) = match pol.polish(&d.cand.b, &d.cand.flux) {
            Ok(x) => x,
            Err(Error::InfeasibleDual(_)) => continue,
            Err(e) => return Err(e),
        };
        let value = dual_raw(spec, &Candidate { b: b.clone(), flux: flux.clone() });
        if best.as_ref().is_none_or(|(v, _, _)| value > *v) {
            best = Some((value, b, flux));
        }
    }
    let Some((dual, b, flux)) = best else { return Ok(None) };
    let gap = eval.primal - dual;
    if gap <= gap_tol * (T::one() + eval.primal.abs()) {
        Ok(Some(Finish { u: eval.primal_u.clone(), b, flux, primal: eval.primal, dual, converged: true, polished: true }))
    } else {
        Ok(None)
    }
}

fn raw_finish<T: Scalar>(eval: &Eval<T>, div_tol: T, gap_tol: T, converged: bool) -> Finish<T> {
    // best raw dual among those meeting the divergence tolerance, else the smallest residual
    let pick = eval
        .duals
        .iter()
        .filter(|d| d.res.r_div <= div_tol)
        .max_by(|x, y| x.value.partial_cmp(&y.value).unwrap())
        .or_else(|| eval.duals.iter().min_by(|x, y| x.res.r_div.partial_cmp(&y.res.r_div).unwrap()))
        .unwrap();
    let ok = pick.res.r_div <= div_tol && eval.primal - pick.value <= gap_tol * (T::one() + eval.primal.abs());
    Finish {
        u: eval.primal_u.clone(),
        b: pick.cand.b.clone(),
        flux: pick.cand.flux.clone(),
        primal: eval.primal,
        dual: pick.value,
        converged: converged && ok,
        polished: false,
    }
}

fn init_state<T: Scalar>(spec: &ProblemSpec<T>, cfg: &SolverConfig<T>) -> Result<State<T>> {
    let grid = spec.grid();
    let n = grid.len();
    let ne = grid.boundary_edges().len();
    let (mut u, b, q) = match &cfg.init {
        Init::Zero => (vec![T::zero(); n], vec![[T::zero(); 2]; n], vec![T::zero(); ne]),
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let a = spec.weight().values();
            let u: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
            let b: Vec<[T; 2]> = (0..n)
                .map(|c| {
                    let v = [T::lit(rng.gen_range(-1.0..1.0)), T::lit(rng.gen_range(-1.0..1.0))];
                    project_ball([v[0] * a[c], v[1] * a[c]], a[c])
                })
                .collect();
            let q: Vec<T> = grid
                .boundary_edges()
                .iter()
                .map(|e| T::lit(rng.gen_range(-1.0..1.0)) * a[e.cell])
                .collect();
            (u, b, q)
        }
        Init::Warm { u, n: dual } => {
            ensure_same_grid(u.grid(), grid, "warm start")?;
            ensure_same_grid(dual.grid(), grid, "warm start")?;
            let a = spec.weight().values();
            let b = dual.field.values().iter().enumerate().map(|(c, v)| project_ball(*v, a[c])).collect();
            let q = grid
                .boundary_edges()
                .iter()
                .zip(dual.flux.values())
                .map(|(e, v)| project_interval(-*v, a[e.cell]))
                .collect();
            (u.values().to_vec(), b, q)
        }
    };
    if spec.is_neumann() {
        remove_mean(&mut u);
    }
    Ok(State {
        ubar: u.clone(),
        u,
        b,
        q,
        u_sum: vec![T::zero(); n],
        b_sum: vec![[T::zero(); 2]; n],
        q_sum: vec![T::zero(); ne],
        count: 0,
    })
}
