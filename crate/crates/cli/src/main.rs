use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parea_core::certify::{self, TheoremName, TheoremReport};
use parea_core::config::{load_scenario, BarrierCheck, BarrierExpectation, Scenario};
use parea_core::levelset::{barrier_probe, level_sweep, super_level_set, BarrierConfig};
use parea_core::oracle::oracle_value;
use parea_core::problem::{existence_threshold, primal_energy};
use parea_core::solver::{solve, Certificate, Init, SolverConfig};
use parea_core::{scenarios, Error};
use serde_json::{json, Value};

mod output;

use output::{sha256_hex, Format, Output};

/// Weighted total-variation minimization with certificates.
#[derive(Parser)]
#[command(name = "parea", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Built-in scenario name (see `list-scenarios`).
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "parea-out")]
    output_dir: PathBuf,
    /// Overrides the scenario's solver seed; also seeds randomized checks.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 is the deterministic reference mode, 0 uses every core.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a Neumann scenario and export u, N and the convergence trace.
    SolveNeumann(Common),
    /// Solve a relaxed Dirichlet scenario and export u, N, the boundary flux and the trace.
    SolveDirichlet(Common),
    /// Solve and run the scenario's certificate checks.
    Certify(Common),
    /// Smoothed reference minimizer with epsilon extrapolation.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Also solve with the primal-dual method and require agreement.
        #[arg(long)]
        compare: bool,
    },
    /// Solve and check minimality of super-level sets.
    Levelset(Common),
    /// Barrier-condition probes at boundary points.
    BarrierProbe {
        #[command(flatten)]
        common: Common,
        /// Probe point `x,y` on the boundary instead of the scenario's probes.
        #[arg(long, requires = "eps", allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long, requires = "x0")]
        eps: Option<f64>,
    },
    /// Existence threshold and boundedness of a Neumann scenario.
    Threshold(Common),
    /// Print the built-in scenarios.
    ListScenarios {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

enum Failure {
    /// Bad scenario or arguments: exit 2.
    Config(String),
    /// A requested check failed: exit 1.
    Check(String),
    /// Anything else: exit 3.
    Internal(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type Run = Result<Vec<String>, Failure>;

fn load(common: &Common) -> Result<Scenario<f64>, Failure> {
    let mut s = match (&common.scenario, &common.config) {
        (Some(name), None) => scenarios::builtin(name),
        (None, Some(path)) => load_scenario(path),
        _ => Err(Error::InvalidArgument("give exactly one of --scenario and --config".into())),
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        s.solver.seed = seed;
    }
    Ok(s)
}

fn seed(common: &Common, s: &Scenario<f64>) -> u64 {
    common.seed.unwrap_or(s.solver.seed)
}

fn solver_json(cfg: &SolverConfig<f64>) -> Value {
    json!({
        "max_iters": cfg.max_iters,
        "gap_tol": cfg.gap_tol,
        "tau": cfg.tau,
        "sigma": cfg.sigma,
        "step_ratio": cfg.step_ratio,
        "check_every": cfg.check_every,
        "seed": cfg.seed,
        "init": match cfg.init { Init::Zero => "zero", Init::Random => "random", Init::Warm { .. } => "warm" },
        "diverge_floor": cfg.diverge_floor,
        "min_iters": cfg.min_iters,
    })
}

fn certificate_json(s: &Scenario<f64>, c: &Certificate<f64>) -> Result<Value, Failure> {
    let energy = primal_energy(&c.u, &s.spec)?;
    Ok(json!({
        "scenario": s.name,
        "primal_value": c.primal_value,
        "dual_value": c.dual_value,
        "gap": c.gap,
        "relative_gap": c.gap / (1.0 + c.primal_value.abs()),
        "energy": energy,
        "residuals": c.residuals,
        "converged": c.converged,
        "diverging": c.diverging,
        "polished": c.polished,
        "iterations": c.iterations,
        "tau": c.tau,
        "sigma": c.sigma,
        "op_norm": c.op_norm,
        "solver": solver_json(&s.solver),
    }))
}

fn export_certificate(out: &mut Output, s: &Scenario<f64>, c: &Certificate<f64>) -> Result<(), Failure> {
    out.scalar_field("u", "u", &c.u)?;
    out.vector_field("n", "N", &c.n.field)?;
    if !s.spec.is_neumann() {
        out.boundary("flux", "boundary flux", &c.n.flux)?;
    }
    match out.format() {
        Format::Csv => {
            let mut buf = Vec::new();
            parea_core::io::write_trace_csv(&mut buf, &c.trace)?;
            out.write("trace.csv", &buf)?;
        }
        Format::Json => out.json("trace.json", &c.trace)?,
    }
    out.json("certificate.json", &certificate_json(s, c)?)?;
    Ok(())
}

/// Convergence plus the scenario's regression value, if any.
fn solve_checks(s: &Scenario<f64>, c: &Certificate<f64>) -> Vec<String> {
    let mut failed = Vec::new();
    if !c.converged {
        failed.push(format!("not converged after {} iterations (gap {:e})", c.iterations, c.gap));
    }
    if let Some(exp) = &s.expected {
        if let (Some(p), Some(tol)) = (exp.primal, exp.tolerance) {
            if (c.primal_value - p).abs() > tol * (1.0 + p.abs()) {
                failed.push(format!("primal {} differs from expected {p} ({})", c.primal_value, exp.origin));
            }
        }
    }
    failed
}

fn cmd_solve(dirichlet: bool, out: &mut Output, s: &Scenario<f64>) -> Run {
    if s.spec.is_neumann() == dirichlet {
        let (has, want) = if dirichlet { ("Neumann", "solve-neumann") } else { ("Dirichlet", "solve-dirichlet") };
        return Err(Failure::Config(format!("scenario '{}' has {has} boundary conditions; use {want}", s.name)));
    }
    let c = solve(&s.spec, &s.solver)?;
    export_certificate(out, s, &c)?;
    Ok(solve_checks(s, &c))
}

fn run_theorem(name: TheoremName, s: &Scenario<f64>, c: &Certificate<f64>) -> Result<TheoremReport, Failure> {
    let spec = &s.spec;
    let tol = 1e-3;
    Ok(match name {
        TheoremName::DualFeasibility => certify::check_dual_feasibility(&c.n, spec, tol)?,
        TheoremName::ZeroGap => certify::check_zero_gap(c, spec, s.solver.gap_tol)?,
        TheoremName::Alignment => certify::check_alignment(&c.u, &c.n, spec, certify::DEFAULT_ACTIVITY, tol)?,
        TheoremName::BoundaryComplementarity => certify::check_boundary_complementarity(&c.u, &c.n, spec, tol)?,
        TheoremName::ZeroTraceSet => certify::check_zero_trace_set(&c.u, &c.n, spec, tol)?,
        TheoremName::UniquenessOfDirection => certify::check_uniqueness_of_direction(spec, &s.solver, 5)?,
        TheoremName::ExistenceThreshold => certify::check_existence_threshold(spec)?,
        TheoremName::Divergent => certify::check_divergence_below(spec)?,
    })
}

fn theorem_key(name: TheoremName) -> String {
    serde_json::to_value(name).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn cmd_certify(out: &mut Output, s: &Scenario<f64>) -> Run {
    let c = solve(&s.spec, &s.solver)?;
    export_certificate(out, s, &c)?;
    let mut failed = solve_checks(s, &c);
    let reports: Vec<TheoremReport> = if s.checks.certify.is_empty() {
        certify::certificate_battery(&c, &s.spec, 1e-3)?
    } else {
        s.checks.certify.iter().map(|n| run_theorem(*n, s, &c)).collect::<Result<_, _>>()?
    };
    for r in &reports {
        let key = theorem_key(r.name);
        out.json(&format!("reports/{key}.json"), r)?;
        println!("{:<26} {}", key, if r.pass { "pass" } else { "FAIL" });
        if !r.pass {
            failed.push(format!("{key} failed"));
        }
    }
    Ok(failed)
}

fn cmd_oracle(out: &mut Output, s: &Scenario<f64>, compare: bool) -> Run {
    let report = oracle_value(&s.spec, &s.oracle)?;
    let mut doc = serde_json::to_value(&report).map_err(|e| Failure::Internal(e.to_string()))?;
    let mut failed = Vec::new();
    if compare {
        let c = solve(&s.spec, &s.solver)?;
        failed.extend(solve_checks(s, &c));
        let rel = (report.value - c.primal_value).abs() / (1.0 + c.primal_value.abs());
        let slack = c.gap.max(1e-6 * (1.0 + c.primal_value.abs()));
        let bracketed = report.brackets(c.primal_value, slack);
        doc["comparison"] = json!({
            "pdhg_primal": c.primal_value,
            "pdhg_gap": c.gap,
            "relative_difference": rel,
            "bracketed": bracketed,
        });
        if rel > 1e-2 {
            failed.push(format!("oracle {} and solver {} differ by {rel:e}", report.value, c.primal_value));
        }
        if !bracketed {
            failed.push("solver value outside the epsilon brackets".into());
        }
    }
    println!("oracle value {}", report.value);
    out.json("oracle.json", &doc)?;
    Ok(failed)
}

fn cmd_levelset(common: &Common, out: &mut Output, s: &Scenario<f64>) -> Run {
    let c = solve(&s.spec, &s.solver)?;
    out.scalar_field("u", "u", &c.u)?;
    let mut failed = solve_checks(s, &c);
    let chk = s.checks.levelset.clone().unwrap_or(parea_core::config::LevelsetChecks {
        lambdas: 5,
        window: 3,
        random_trials: 0,
        max_flip: 6,
    });
    let sweep = level_sweep(&c.u, &s.spec, chk.lambdas, chk.window, chk.random_trials, chk.max_flip, s.solver.gap_tol, seed(common, s))?;
    for (k, l) in sweep.levels.iter().enumerate() {
        out.level_set(&format!("levels/level_{k}"), &super_level_set(&c.u, l.lambda))?;
        println!(
            "lambda {:+.6e}  cells {:>5}  P_psi {:.6}  {}",
            l.lambda,
            l.members,
            l.psi.total,
            if l.pass { "minimal" } else { "NOT minimal" }
        );
        if !l.pass {
            failed.push(format!("level {} is not minimal", l.lambda));
        }
    }
    out.json("levelset.json", &sweep)?;
    Ok(failed)
}

fn parse_point(s: &str) -> Result<[f64; 2], Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Config(format!("--x0 expects x,y (got '{s}')")))?;
    match v.as_slice() {
        [x, y] => Ok([*x, *y]),
        _ => Err(Failure::Config(format!("--x0 expects x,y (got '{s}')"))),
    }
}

fn cmd_barrier(common: &Common, out: &mut Output, s: &Scenario<f64>, x0: Option<&str>, eps: Option<f64>) -> Run {
    // an explicit probe carries no expectation
    let probes: Vec<(BarrierCheck, bool)> = match (x0, eps) {
        (Some(p), Some(e)) => {
            let b = BarrierCheck { x0: parse_point(p)?, eps: e, expect: BarrierExpectation::Holds, sweeps: None };
            vec![(b, false)]
        }
        _ => s.checks.barrier.iter().map(|b| (b.clone(), true)).collect(),
    };
    if probes.is_empty() {
        return Err(Failure::Config(format!("scenario '{}' defines no barrier probes; pass --x0 and --eps", s.name)));
    }
    let mut failed = Vec::new();
    for (k, (BarrierCheck { x0, eps, expect, sweeps }, checked)) in probes.into_iter().enumerate() {
        let expect = checked.then_some(expect);
        let mut cfg = BarrierConfig { seed: seed(common, s).wrapping_add(k as u64), ..Default::default() };
        if let Some(sw) = sweeps {
            cfg.sweeps = sw;
        }
        let r = barrier_probe(&s.spec, x0, eps, &cfg).map_err(|e| match e {
            Error::InvalidArgument(m) => Failure::Config(m),
            other => other.into(),
        })?;
        let mut doc = serde_json::to_value(&r).map_err(|e| Failure::Internal(e.to_string()))?;
        let grid = s.spec.grid();
        doc["minimizer_rle"] = json!(parea_core::grid::rle_encode(&parea_core::io::lattice_bits(grid, &r.minimizer)));
        doc["expect"] = json!(expect);
        let outcome = if r.holds { BarrierExpectation::Holds } else { BarrierExpectation::Violated };
        println!(
            "probe {k}: x0 = ({}, {}), eps = {eps}: {} ({} free cells, {} contact edges)",
            x0[0],
            x0[1],
            if r.holds { "holds" } else { "violated" },
            r.ball_cells.len(),
            r.contact_edges.len()
        );
        if let Some(e) = expect {
            if e != outcome {
                failed.push(format!("probe {k}: expected {e:?}, found {outcome:?}"));
            }
        }
        out.json(&format!("barrier_{k}.json"), &doc)?;
    }
    Ok(failed)
}

fn cmd_threshold(out: &mut Output, s: &Scenario<f64>) -> Run {
    if !s.spec.is_neumann() {
        return Err(Failure::Config("threshold applies to Neumann scenarios".into()));
    }
    let t = existence_threshold(&s.spec)?;
    let b = certify::classify_boundedness(&s.spec)?;
    println!(
        "max|H| = {}, bound = {} (C = {}): {:?}; boundedness: {:?}",
        t.h_norm, t.bound, t.c_omega, t.verdict, b.class
    );
    out.json("threshold.json", &json!({ "threshold": t, "boundedness": b }))?;
    // a guaranteed verdict must never meet a divergence certificate
    let mut failed = Vec::new();
    if t.verdict == parea_core::problem::ExistenceVerdict::Guaranteed && b.class == certify::Boundedness::Unbounded {
        failed.push("existence guaranteed but a divergent probe was found".into());
    }
    Ok(failed)
}

fn list(format: Format) {
    match format {
        Format::Json => {
            let v: Vec<Value> = scenarios::BUILTIN
                .iter()
                .map(|(name, _)| {
                    let s: Scenario<f64> = scenarios::builtin(name).expect("built-in scenarios parse");
                    json!({ "name": name, "description": s.description })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
        }
        Format::Csv => {
            for (name, _) in scenarios::BUILTIN {
                let s: Scenario<f64> = scenarios::builtin(name).expect("built-in scenarios parse");
                println!("{name:<22} {}", s.description);
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (common, label) = match &cli.command {
        Command::ListScenarios { format } => {
            list(*format);
            return Ok(());
        }
        Command::SolveNeumann(c) => (c, "solve-neumann"),
        Command::SolveDirichlet(c) => (c, "solve-dirichlet"),
        Command::Certify(c) => (c, "certify"),
        Command::Oracle { common, .. } => (common, "oracle"),
        Command::Levelset(c) => (c, "levelset"),
        Command::BarrierProbe { common, .. } => (common, "barrier-probe"),
        Command::Threshold(c) => (c, "threshold"),
    };
    let s = load(common)?;
    let threads = common.threads;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let mut out = Output::create(&common.output_dir, common.format)?;
    let failed = pool.install(|| match &cli.command {
        Command::SolveNeumann(_) => cmd_solve(false, &mut out, &s),
        Command::SolveDirichlet(_) => cmd_solve(true, &mut out, &s),
        Command::Certify(_) => cmd_certify(&mut out, &s),
        Command::Oracle { compare, .. } => cmd_oracle(&mut out, &s, *compare),
        Command::Levelset(c) => cmd_levelset(c, &mut out, &s),
        Command::BarrierProbe { common, x0, eps } => cmd_barrier(common, &mut out, &s, x0.as_deref(), *eps),
        Command::Threshold(_) => cmd_threshold(&mut out, &s),
        Command::ListScenarios { .. } => unreachable!(),
    })?;
    out.finish(json!({
        "format_version": parea_core::io::FORMAT_VERSION,
        "tool": { "name": "parea", "version": env!("CARGO_PKG_VERSION") },
        "command": label,
        "scenario": s.name,
        "inputs_sha256": sha256_hex(s.source.as_bytes()),
        "config": s.source,
        "seed": seed(common, &s),
        "threads": threads,
        "format": format!("{:?}", common.format).to_lowercase(),
        "checks_failed": failed,
    }))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join("; ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
    }
}
