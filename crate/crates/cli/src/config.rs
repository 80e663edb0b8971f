//! TOML run configuration, schema version 1.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use monovi::iteration::Tolerances;
use monovi::monotone_graph::{PiecewiseSpec, Side};
use monovi::vi_solver::SolverPath;
use monovi::{Mesh, MeshConfig, OperatorSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::expr::Expr;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub direction: DirectionChoice,
    pub mesh: MeshSection,
    pub operator: OperatorSection,
    pub nonlinearity: NonlinearitySection,
    pub bracket: BracketSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionChoice {
    #[default]
    Maximal,
    Minimal,
    Both,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub dim: u8,
    #[serde(default = "unit_interval")]
    pub x: [f64; 2],
    pub y: Option<[f64; 2]>,
    /// Cells in 1D.
    pub n: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
}

fn unit_interval() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    PLaplacian,
    WeightedPLaplacian,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub kind: OperatorKind,
    pub p: f64,
    /// Expression in `x`, `y` for the weighted kind.
    pub weight: Option<String>,
    pub weight_min: Option<f64>,
    pub weight_max: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    pub g: PiecewiseSpec,
    #[serde(default)]
    pub h: PiecewiseSpec,
    /// One-sided evaluation of `g` at its jumps. When omitted, each
    /// direction uses the side it needs.
    pub g_side: Option<Side>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketKind {
    Helper,
    Explicit,
    Analytic,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BracketSection {
    pub kind: BracketKind,
    /// helper: constant loads for the upper and lower solutions.
    pub c_upper: Option<f64>,
    pub c_lower: Option<f64>,
    /// explicit: CSV files with columns `node_index,x[,y],u,v`, relative to
    /// the config file.
    pub upper_file: Option<PathBuf>,
    pub lower_file: Option<PathBuf>,
    /// analytic: expressions in `x`, `y`. Missing selections default to the
    /// element of `β(u)` closest to zero; a missing lower solution is `0`.
    pub upper_u: Option<String>,
    pub upper_v: Option<String>,
    pub lower_u: Option<String>,
    pub lower_v: Option<String>,
    #[serde(default)]
    pub waive_verification: bool,
    #[serde(default = "default_bracket_tolerance")]
    pub tolerance: f64,
}

fn default_bracket_tolerance() -> f64 {
    monovi::verify::DEFAULT_TOLERANCE
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    pub outer: Option<f64>,
    pub stat: Option<f64>,
    pub mono: Option<f64>,
    pub member: Option<f64>,
    pub max_outer_iterations: Option<usize>,
    pub max_inner_iterations: Option<usize>,
    pub path: Option<SolverPath>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default)]
    pub candidates: usize,
    #[serde(default = "default_probe_steps")]
    pub max_steps: usize,
    #[serde(default = "default_probe_tolerance")]
    pub tolerance: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            candidates: 0,
            max_steps: default_probe_steps(),
            tolerance: default_probe_tolerance(),
        }
    }
}

fn default_probe_steps() -> usize {
    200
}

fn default_probe_tolerance() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Where the bracket comes from, after validation.
#[derive(Clone, Debug)]
pub enum BracketSource {
    Helper { c_lower: f64, c_upper: f64 },
    Explicit { upper: PathBuf, lower: Option<PathBuf> },
    Analytic {
        upper_u: Expr,
        upper_v: Option<Expr>,
        lower_u: Option<Expr>,
        lower_v: Option<Expr>,
    },
}

/// A validated configuration, ready to run.
pub struct Prepared {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub mesh: Arc<Mesh>,
    pub operator: OperatorSpec,
    pub bracket: BracketSource,
    pub tolerances: Tolerances,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: Option<f64>) -> Result<Option<f64>, CliError> {
    match v {
        Some(t) if !(t > 0.0 && t.is_finite()) => {
            Err(invalid(format!("tolerances.{name} must be positive and finite, got {t}")))
        }
        other => Ok(other),
    }
}

fn parse_expr(field: &str, src: &str) -> Result<Expr, CliError> {
    Expr::parse(src).map_err(|e| invalid(format!("{field}: {e}")))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    fn mesh_config(&self) -> Result<MeshConfig, CliError> {
        let m = &self.mesh;
        match m.dim {
            1 => {
                if m.y.is_some() || m.nx.is_some() || m.ny.is_some() {
                    return Err(invalid("mesh: y, nx and ny only apply to dim = 2"));
                }
                let n = m.n.ok_or_else(|| invalid("mesh: dim = 1 needs n"))?;
                Ok(MeshConfig::Interval { x: m.x, n })
            }
            2 => {
                if m.n.is_some() {
                    return Err(invalid("mesh: dim = 2 takes nx and ny, not n"));
                }
                let nx = m.nx.ok_or_else(|| invalid("mesh: dim = 2 needs nx"))?;
                let ny = m.ny.ok_or_else(|| invalid("mesh: dim = 2 needs ny"))?;
                Ok(MeshConfig::Rectangle {
                    x: m.x,
                    y: m.y.unwrap_or([0.0, 1.0]),
                    nx,
                    ny,
                })
            }
            d => Err(invalid(format!("mesh: dim must be 1 or 2, got {d}"))),
        }
    }

    fn build_operator(&self, mesh: &Mesh) -> Result<OperatorSpec, CliError> {
        let o = &self.operator;
        match o.kind {
            OperatorKind::PLaplacian => {
                if o.weight.is_some() || o.weight_min.is_some() || o.weight_max.is_some() {
                    return Err(invalid("operator: weight fields need kind = \"weighted_p_laplacian\""));
                }
                Ok(OperatorSpec::p_laplacian(o.p)?)
            }
            OperatorKind::WeightedPLaplacian => {
                let src = o
                    .weight
                    .as_deref()
                    .ok_or_else(|| invalid("operator: weighted_p_laplacian needs weight"))?;
                let expr = parse_expr("operator.weight", src)?;
                let lo = o
                    .weight_min
                    .ok_or_else(|| invalid("operator: weighted_p_laplacian needs weight_min"))?;
                let hi = o
                    .weight_max
                    .ok_or_else(|| invalid("operator: weighted_p_laplacian needs weight_max"))?;
                for e in 0..mesh.num_elements() {
                    let x = mesh.element_midpoint(e);
                    let w = expr.eval(x[0], x[1]);
                    if !(w >= lo && w <= hi) {
                        return Err(invalid(format!(
                            "operator.weight = {w} at ({}, {}) lies outside [weight_min, weight_max] = [{lo}, {hi}]",
                            x[0], x[1]
                        )));
                    }
                }
                let weight = Arc::new(move |x: [f64; 2]| expr.eval(x[0], x[1]));
                Ok(OperatorSpec::weighted_p_laplacian(o.p, weight, lo, hi)?)
            }
        }
    }

    fn bracket_source(&self, base: &Path) -> Result<BracketSource, CliError> {
        let b = &self.bracket;
        let unexpected = |fields: &[(&str, bool)]| -> Result<(), CliError> {
            for (name, present) in fields {
                if *present {
                    return Err(invalid(format!(
                        "bracket: field {name} does not apply to kind = {:?}",
                        b.kind
                    )));
                }
            }
            Ok(())
        };
        let helper_fields = [("c_upper", b.c_upper.is_some()), ("c_lower", b.c_lower.is_some())];
        let file_fields = [
            ("upper_file", b.upper_file.is_some()),
            ("lower_file", b.lower_file.is_some()),
        ];
        let expr_fields = [
            ("upper_u", b.upper_u.is_some()),
            ("upper_v", b.upper_v.is_some()),
            ("lower_u", b.lower_u.is_some()),
            ("lower_v", b.lower_v.is_some()),
        ];
        if !(b.tolerance > 0.0 && b.tolerance.is_finite()) {
            return Err(invalid("bracket.tolerance must be positive"));
        }
        match b.kind {
            BracketKind::Helper => {
                unexpected(&file_fields)?;
                unexpected(&expr_fields)?;
                let c_upper = b
                    .c_upper
                    .ok_or_else(|| invalid("bracket: kind = \"helper\" needs c_upper"))?;
                let c_lower = b.c_lower.unwrap_or(0.0);
                if !(c_upper.is_finite() && c_lower.is_finite() && c_lower <= c_upper) {
                    return Err(invalid("bracket: need finite c_lower <= c_upper"));
                }
                Ok(BracketSource::Helper { c_lower, c_upper })
            }
            BracketKind::Explicit => {
                unexpected(&helper_fields)?;
                unexpected(&expr_fields)?;
                let upper = b
                    .upper_file
                    .as_ref()
                    .ok_or_else(|| invalid("bracket: kind = \"explicit\" needs upper_file"))?;
                Ok(BracketSource::Explicit {
                    upper: base.join(upper),
                    lower: b.lower_file.as_ref().map(|f| base.join(f)),
                })
            }
            BracketKind::Analytic => {
                unexpected(&helper_fields)?;
                unexpected(&file_fields)?;
                let src = b
                    .upper_u
                    .as_deref()
                    .ok_or_else(|| invalid("bracket: kind = \"analytic\" needs upper_u"))?;
                let opt = |field: &str, v: &Option<String>| {
                    v.as_deref().map(|s| parse_expr(field, s)).transpose()
                };
                Ok(BracketSource::Analytic {
                    upper_u: parse_expr("bracket.upper_u", src)?,
                    upper_v: opt("bracket.upper_v", &b.upper_v)?,
                    lower_u: opt("bracket.lower_u", &b.lower_u)?,
                    lower_v: opt("bracket.lower_v", &b.lower_v)?,
                })
            }
        }
    }

    fn tolerances(&self, dim: usize) -> Result<Tolerances, CliError> {
        let t = &self.tolerances;
        let mut tol = match positive("outer", t.outer)? {
            Some(outer) => Tolerances::from_outer(outer),
            None => Tolerances::for_dim(dim),
        };
        if let Some(v) = positive("stat", t.stat)? {
            tol.stat = v;
        }
        if let Some(v) = positive("mono", t.mono)? {
            tol.mono = v;
        }
        if let Some(v) = positive("member", t.member)? {
            tol.member = v;
        }
        if let Some(v) = t.max_outer_iterations {
            tol.max_outer_iterations = v.max(1);
        }
        if let Some(v) = t.max_inner_iterations {
            tol.max_inner_iterations = v.max(1);
        }
        if let Some(path) = t.path {
            tol.path = path;
        }
        Ok(tol)
    }

    /// Validates every section and builds the mesh and operator.
    pub fn prepare(self, raw: Vec<u8>, base: &Path) -> Result<Prepared, CliError> {
        let mesh = Arc::new(Mesh::build(&self.mesh_config()?)?);
        let operator = self.build_operator(&mesh)?;
        let report = monovi::nonlinearity::validate_decomposition(
            &self.nonlinearity.g,
            &self.nonlinearity.h,
            1000,
        )?;
        if !report.passed {
            let which = if report.g.passed { "h" } else { "g" };
            return Err(invalid(format!(
                "nonlinearity.{which} is not nondecreasing (worst margin {:.3e})",
                if report.g.passed { report.h.worst_margin } else { report.g.worst_margin }
            )));
        }
        if self.probe.candidates > 0 && self.direction != DirectionChoice::Both {
            return Err(invalid("probe.candidates needs direction = \"both\""));
        }
        let bracket = self.bracket_source(base)?;
        let tolerances = self.tolerances(mesh.dim())?;
        Ok(Prepared {
            config: self,
            raw,
            mesh,
            operator,
            bracket,
            tolerances,
        })
    }
}

/// Reads, parses and validates a config file.
pub fn load(path: &Path) -> Result<Prepared, CliError> {
    let raw = std::fs::read(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&raw).map_err(|_| invalid("config is not valid UTF-8"))?;
    let config = RunConfig::from_toml(text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.prepare(raw.clone(), &base)
}
