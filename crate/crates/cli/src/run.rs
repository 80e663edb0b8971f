//! `monovi run`: bracket, extremal solves, checks and artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use monovi::iteration::{ProbeReport, Tolerances};
use monovi::selftest::{run_selftest, SelftestOptions, SelftestReport};
use monovi::verify::{check_lower, check_upper, BracketCheckReport};
use monovi::{
    maximality_probe, random_start_fixed_points, solve_extremal, Bracket, Decomposition,
    Direction, DiscreteProblem, Mesh, NodalField, Side, SolveReport,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{self, BracketSource, DirectionChoice, Prepared, RunConfig};
use crate::error::{CliError, Diagnostic, EXIT_CHECK, EXIT_OK};
use crate::output::{fields_csv, json_lines, read_fields_csv, write_atomic};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.json";
const DEFAULT_OUTPUT_DIR: &str = "monovi-out";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the seed in the config.
    pub seed: Option<u64>,
    /// Overrides `output.dir` in the config.
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub output_dir: PathBuf,
    pub summary_sha256: String,
    pub failures: Vec<String>,
    pub diagnostic: Option<Diagnostic>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Versions {
    monovi: &'static str,
    monovi_cli: &'static str,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    file: String,
    sha256: String,
    parsed: &'a RunConfig,
}

#[derive(Serialize)]
struct BracketSummary {
    source: &'static str,
    waived: bool,
    upper: Option<BracketCheckReport>,
    lower: Option<BracketCheckReport>,
    order_excess: f64,
    passed: bool,
}

#[derive(Serialize)]
struct OrderCheck {
    /// `max_i (u_min,i − u_max,i)`.
    excess: f64,
    node: usize,
    tolerance: f64,
    passed: bool,
}

#[derive(Serialize)]
struct ProbeSummary {
    requested: usize,
    converged: usize,
    report: ProbeReport,
    passed: bool,
}

/// One line per configured tolerance: its value and the worst value the
/// run actually reached for the quantity it bounds.
#[derive(Serialize)]
struct ToleranceEcho {
    name: &'static str,
    limit: f64,
    achieved: f64,
    passed: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    status: &'static str,
    exit_code: i32,
    failures: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic: Option<&'a Diagnostic>,
    seed: u64,
    versions: Versions,
    config: ConfigEcho<'a>,
    mesh: MeshSummary,
    tolerances: &'a Tolerances,
    tolerance_report: Vec<ToleranceEcho>,
    bracket: Option<&'a BracketSummary>,
    invariant_suites: Option<&'a SelftestReport>,
    solves: Vec<&'a SolveReport>,
    order: Option<&'a OrderCheck>,
    probe: Option<&'a ProbeSummary>,
    files: &'a [String],
}

#[derive(Serialize)]
struct MeshSummary {
    dim: usize,
    nodes: usize,
    elements: usize,
    cells: (usize, usize),
}

#[derive(Serialize)]
struct SolveTiming {
    direction: &'static str,
    seconds: f64,
}

#[derive(Serialize)]
struct Timings {
    threads: usize,
    bracket_seconds: f64,
    invariant_suite_seconds: f64,
    solves: Vec<SolveTiming>,
    probe_seconds: f64,
    total_seconds: f64,
}

/// Everything accumulated while the run proceeds, so that a summary can be
/// written whichever step stops it.
struct State {
    failures: Vec<String>,
    files: Vec<String>,
    bracket: Option<BracketSummary>,
    suites: Option<SelftestReport>,
    solves: Vec<SolveReport>,
    order: Option<OrderCheck>,
    probe: Option<ProbeSummary>,
    timings: Timings,
}

fn problem(prepared: &Prepared, side: Side) -> Result<DiscreteProblem, CliError> {
    let nl = &prepared.config.nonlinearity;
    let d = Decomposition::from_specs(&nl.g, &nl.h, nl.g_side.unwrap_or(side))?;
    Ok(DiscreteProblem::new(
        prepared.mesh.clone(),
        prepared.operator.clone(),
        d,
    ))
}

fn closest_to_zero(p: &DiscreteProblem, u: &[f64]) -> NodalField {
    let graph = p.graph();
    u.iter().map(|&s| graph.interval(s).project(0.0)).collect()
}

fn from_expr(mesh: &Mesh, e: &crate::expr::Expr) -> Result<NodalField, CliError> {
    let f = NodalField::from_fn(mesh, |x| e.eval(x[0], x[1]));
    if !f.is_finite() {
        return Err(CliError::Config(format!(
            "bracket expression '{}' is not finite on the mesh",
            e.source()
        )));
    }
    Ok(f)
}

/// Builds the bracket fields. Upper data are checked against the problem
/// with `g` taken from the right at its jumps and lower data from the left,
/// which is the stronger inequality in each case.
fn build_bracket(
    prepared: &Prepared,
    upper_p: &DiscreteProblem,
    lower_p: &DiscreteProblem,
) -> Result<Bracket, CliError> {
    let mesh = &prepared.mesh;
    let n = mesh.num_nodes();
    let (lower, upper) = match &prepared.bracket {
        BracketSource::Helper { c_lower, c_upper } => (
            monovi::lower_bracket_helper(lower_p, *c_lower)?,
            monovi::linear_bracket_helper(upper_p, *c_upper)?,
        ),
        BracketSource::Explicit { upper, lower } => {
            let (uu, uv) = read_fields_csv(upper, mesh)?;
            let uv = uv.unwrap_or_else(|| closest_to_zero(upper_p, &uu));
            let lower = match lower {
                Some(path) => {
                    let (lu, lv) = read_fields_csv(path, mesh)?;
                    let lv = lv.unwrap_or_else(|| closest_to_zero(lower_p, &lu));
                    (lu, lv)
                }
                None => {
                    let z = NodalField::zeros(n);
                    (z.clone(), closest_to_zero(lower_p, &z))
                }
            };
            (lower, (uu, uv))
        }
        BracketSource::Analytic {
            upper_u,
            upper_v,
            lower_u,
            lower_v,
        } => {
            let uu = from_expr(mesh, upper_u)?;
            let uv = match upper_v {
                Some(e) => from_expr(mesh, e)?,
                None => closest_to_zero(upper_p, &uu),
            };
            let lu = match lower_u {
                Some(e) => from_expr(mesh, e)?,
                None => NodalField::zeros(n),
            };
            let lv = match lower_v {
                Some(e) => from_expr(mesh, e)?,
                None => closest_to_zero(lower_p, &lu),
            };
            ((lu, lv), (uu, uv))
        }
    };
    // Fields read back from files may overlap at roundoff level; within the
    // bracket tolerance the lower field is clamped and then verified as is.
    let (excess, _) = monovi::discretization::max_excess(&lower.0, &upper.0);
    let lower = if excess > 0.0 && excess <= prepared.config.bracket.tolerance {
        let lu = monovi::discretization::pointwise_min(&lower.0, &upper.0);
        let graph = lower_p.graph();
        let lv = lu
            .iter()
            .zip(lower.1.iter())
            .map(|(&s, &v)| graph.interval(s).project(v))
            .collect();
        (lu, lv)
    } else {
        lower
    };
    Bracket::new(lower, upper).map_err(|e| match e {
        monovi::Error::Precondition(msg) => CliError::Check(format!("bracket: {msg}")),
        other => other.into(),
    })
}

fn source_label(source: &BracketSource) -> &'static str {
    match source {
        BracketSource::Helper { .. } => "helper",
        BracketSource::Explicit { .. } => "explicit",
        BracketSource::Analytic { .. } => "analytic",
    }
}

fn directions(choice: DirectionChoice) -> Vec<Direction> {
    match choice {
        DirectionChoice::Maximal => vec![Direction::FromUpper],
        DirectionChoice::Minimal => vec![Direction::FromLower],
        DirectionChoice::Both => vec![Direction::FromUpper, Direction::FromLower],
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<String>) -> Result<(), CliError> {
    write_atomic(&dir.join(name), bytes)?;
    files.push(name.to_string());
    Ok(())
}

fn fmax(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::NEG_INFINITY, f64::max)
}

fn tolerance_report(prepared: &Prepared, state: &State) -> Vec<ToleranceEcho> {
    let tol = &prepared.tolerances;
    let mut out = Vec::new();
    let mut push = |name, limit: f64, achieved: f64| {
        out.push(ToleranceEcho {
            name,
            limit,
            achieved,
            passed: achieved <= limit,
        });
    };
    if let Some(b) = &state.bracket {
        let worst = [&b.upper, &b.lower]
            .into_iter()
            .flatten()
            .map(|r| -(r.membership_margin.min(r.boundary_margin).min(r.residual_margin)))
            .chain(std::iter::once(b.order_excess));
        push("bracket.tolerance", prepared.config.bracket.tolerance, fmax(worst));
    }
    if !state.solves.is_empty() {
        let solves = &state.solves;
        let records = || solves.iter().flat_map(|s| s.iterations.iter());
        push(
            "outer",
            tol.outer,
            fmax(solves.iter().map(|s| s.iterations.last().map_or(f64::NAN, |r| r.sup_increment))),
        );
        push("stat", tol.stat, fmax(records().map(|r| r.inner_stationarity)));
        push("mono", tol.mono, fmax(solves.iter().map(|s| s.worst_mono_margin)));
        push(
            "member",
            tol.member,
            fmax(solves.iter().map(|s| s.certificate.membership_distance)),
        );
        push(
            "max_outer_iterations",
            tol.max_outer_iterations as f64,
            fmax(solves.iter().map(|s| s.outer_iterations as f64)),
        );
        push(
            "max_inner_iterations",
            tol.max_inner_iterations as f64,
            fmax(records().map(|r| r.inner_iters as f64)),
        );
    }
    if let Some(o) = &state.order {
        push("order", o.tolerance, o.excess);
    }
    if let Some(p) = &state.probe {
        push("probe.tolerance", p.report.tolerance, p.report.worst_margin);
    }
    out
}

fn write_summary(
    dir: &Path,
    prepared: &Prepared,
    config_path: &Path,
    seed: u64,
    state: &mut State,
    exit_code: i32,
    diagnostic: Option<&Diagnostic>,
) -> Result<String, CliError> {
    let mut files = state.files.clone();
    files.push(SUMMARY_FILE.to_string());
    let status = match exit_code {
        EXIT_OK => "passed",
        EXIT_CHECK => "failed",
        _ => "error",
    };
    let (cx, cy) = prepared.mesh.cells();
    let summary = Summary {
        status,
        exit_code,
        failures: &state.failures,
        diagnostic,
        seed,
        versions: Versions {
            monovi: monovi::VERSION,
            monovi_cli: env!("CARGO_PKG_VERSION"),
        },
        config: ConfigEcho {
            file: config_path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_hex(&prepared.raw),
            parsed: &prepared.config,
        },
        mesh: MeshSummary {
            dim: prepared.mesh.dim(),
            nodes: prepared.mesh.num_nodes(),
            elements: prepared.mesh.num_elements(),
            cells: (cx, cy),
        },
        tolerances: &prepared.tolerances,
        tolerance_report: tolerance_report(prepared, state),
        bracket: state.bracket.as_ref(),
        invariant_suites: state.suites.as_ref(),
        solves: state.solves.iter().collect(),
        order: state.order.as_ref(),
        probe: state.probe.as_ref(),
        files: &files,
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("serializable summary");
    bytes.push(b'\n');
    write_atomic(&dir.join(SUMMARY_FILE), &bytes)?;
    let mut timings = serde_json::to_vec_pretty(&state.timings).expect("serializable timings");
    timings.push(b'\n');
    write_atomic(&dir.join(TIMINGS_FILE), &timings)?;
    Ok(sha256_hex(&bytes))
}

/// Steps that may stop the run early. Check failures are collected in
/// `state.failures` and do not stop it.
fn execute(
    prepared: &Prepared,
    seed: u64,
    dir: &Path,
    state: &mut State,
) -> Result<(), CliError> {
    let cfg = &prepared.config;
    let tol = &prepared.tolerances;
    let upper_p = problem(prepared, Side::Right)?;
    let lower_p = problem(prepared, Side::Left)?;

    let t = Instant::now();
    let mut bracket = build_bracket(prepared, &upper_p, &lower_p)?;
    let waived = cfg.bracket.waive_verification;
    let (upper, lower, order_excess, passed) = if waived {
        bracket = bracket.waive_verification();
        (None, None, monovi::discretization::max_excess(&bracket.lower_u, &bracket.upper_u).0, true)
    } else {
        let btol = cfg.bracket.tolerance;
        let upper = check_upper(&upper_p, &bracket.upper_u, &bracket.upper_v, btol)?;
        let lower = check_lower(&lower_p, &bracket.lower_u, &bracket.lower_v, btol)?;
        let order = monovi::discretization::max_excess(&bracket.lower_u, &bracket.upper_u).0;
        let passed = upper.passed && lower.passed && order <= btol;
        bracket.verified = passed;
        (Some(upper), Some(lower), order, passed)
    };
    state.timings.bracket_seconds = t.elapsed().as_secs_f64();
    state.bracket = Some(BracketSummary {
        source: source_label(&prepared.bracket),
        waived,
        upper,
        lower,
        order_excess,
        passed,
    });
    if !passed {
        state
            .failures
            .push("bracket: upper/lower solution checks did not pass".into());
        return Ok(());
    }

    let t = Instant::now();
    let suites = run_selftest(SelftestOptions {
        seed,
        inject_flux_sign_fault: false,
    })?;
    state.timings.invariant_suite_seconds = t.elapsed().as_secs_f64();
    for name in suites.failing() {
        state.failures.push(format!("invariant suite {name} failed"));
    }
    state.suites = Some(suites);

    for direction in directions(cfg.direction) {
        let p = match direction {
            Direction::FromUpper => &upper_p,
            Direction::FromLower => &lower_p,
        };
        let report = solve_extremal(p, &bracket, direction, tol)?;
        let label = direction.label();
        state.timings.solves.push(SolveTiming {
            direction: label,
            seconds: report.wall_time,
        });
        write_file(
            dir,
            &format!("solution_{label}.csv"),
            &fields_csv(&prepared.mesh, &report.u, &report.v),
            &mut state.files,
        )?;
        write_file(
            dir,
            &format!("convergence_{label}.jsonl"),
            &json_lines(&report.iterations),
            &mut state.files,
        )?;
        if !report.certificate.passed {
            state.failures.push(format!(
                "{label}: certificate membership distance {:e} exceeds {:e}",
                report.certificate.membership_distance, report.certificate.tolerance
            ));
        } else if !report.passed {
            state.failures.push(format!(
                "{label}: fixed-point residual {:e} or a priori bound margin {:e} out of tolerance",
                report.fixed_point_residual, report.worst_bound_margin
            ));
        }
        state.solves.push(report);
    }

    if cfg.direction == DirectionChoice::Both {
        let (u_max, u_min) = (&state.solves[0].u, &state.solves[1].u);
        let (excess, node) = monovi::discretization::max_excess(u_min, u_max);
        let order_tol = cfg.probe.tolerance;
        let order = OrderCheck {
            excess,
            node,
            tolerance: order_tol,
            passed: excess <= order_tol,
        };
        if !order.passed {
            state.failures.push(format!(
                "order: minimal solution exceeds maximal by {excess:e} at node {node}"
            ));
        }
        let (u_min, u_max) = (u_min.clone(), u_max.clone());
        state.order = Some(order);

        if cfg.probe.candidates > 0 {
            let t = Instant::now();
            let found = random_start_fixed_points(
                &upper_p,
                &bracket,
                cfg.probe.candidates,
                seed,
                tol,
                cfg.probe.max_steps,
            )?;
            let converged = found.len();
            let report = maximality_probe(
                &upper_p,
                &u_min,
                &u_max,
                &found,
                cfg.probe.tolerance,
                tol.member.max(cfg.probe.tolerance),
            )?;
            state.timings.probe_seconds = t.elapsed().as_secs_f64();
            let passed = report.passed && converged == cfg.probe.candidates;
            if converged < cfg.probe.candidates {
                state.failures.push(format!(
                    "probe: {converged} of {} random starts reached a fixed point within {} steps",
                    cfg.probe.candidates, cfg.probe.max_steps
                ));
            }
            if let Some(v) = &report.violation {
                state.failures.push(format!(
                    "probe: candidate {} leaves [u_min, u_max] by {:e} at node {}",
                    v.candidate, v.margin, v.node
                ));
            }
            state.probe = Some(ProbeSummary {
                requested: cfg.probe.candidates,
                converged,
                report,
                passed,
            });
        }
    }
    Ok(())
}

/// Loads the config, runs it and writes every artifact into the output
/// directory. Configuration errors found before the output directory is
/// known are returned as `Err`; later failures still produce a summary.
pub fn run(config_path: &Path, options: &RunOptions) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let prepared = config::load(config_path)?;
    let seed = options.seed.unwrap_or(prepared.config.seed);
    let dir = match (&options.output_dir, &prepared.config.output.dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => config_path
            .parent()
            .map(|base| base.join(d))
            .unwrap_or_else(|| d.clone()),
        (None, None) => PathBuf::from(DEFAULT_OUTPUT_DIR),
    };
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;

    let mut state = State {
        failures: Vec::new(),
        files: Vec::new(),
        bracket: None,
        suites: None,
        solves: Vec::new(),
        order: None,
        probe: None,
        timings: Timings {
            threads: options.threads.unwrap_or_else(rayon::current_num_threads),
            bracket_seconds: 0.0,
            invariant_suite_seconds: 0.0,
            solves: Vec::new(),
            probe_seconds: 0.0,
            total_seconds: 0.0,
        },
    };
    let result = execute(&prepared, seed, &dir, &mut state);
    state.timings.total_seconds = start.elapsed().as_secs_f64();

    let diagnostic = result.as_ref().err().map(CliError::diagnostic);
    let exit_code = match (&diagnostic, state.failures.is_empty()) {
        (Some(d), _) => d.exit_code,
        (None, true) => EXIT_OK,
        (None, false) => EXIT_CHECK,
    };
    if let Some(d) = &diagnostic {
        state.failures.push(d.message.clone());
    }
    let summary_sha256 = write_summary(
        &dir,
        &prepared,
        config_path,
        seed,
        &mut state,
        exit_code,
        diagnostic.as_ref(),
    )?;
    Ok(RunOutcome {
        exit_code,
        output_dir: dir,
        summary_sha256,
        failures: state.failures,
        diagnostic,
    })
}
