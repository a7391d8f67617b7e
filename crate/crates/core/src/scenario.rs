//! Experiment description files.
//!
//! A scenario is a TOML document with the sections `[domain]`, `[physics]`,
//! `[[obstacle]]`, `[objective]`, `[solver]`, `[optimizer]` and `[output]`.
//! Unknown keys are rejected. Parsing fills in every default so that
//! [`Scenario::to_toml`] writes a fully explicit file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::VolumePenalty;
use crate::geometry::{rasterize, Face, Grid, ObstacleField, ShapeSpec};
use crate::optimizer::{OptimizerConfig, Problem};
use crate::stokes::{BoundaryVelocity, PhysicsParams, SolverOptions, StreamFunction, WallLaw};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("ParseError: line {line}{}: {message}", key.as_ref().map(|k| format!(", key `{k}`")).unwrap_or_default())]
pub struct ParseError {
    /// 1-based; 0 when the position is unknown.
    pub line: usize,
    pub key: Option<String>,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("ValidationError: {invariant}: {message}")]
pub struct ValidationError {
    pub invariant: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("IoError: {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub mu: f64,
    pub beta: f64,
    /// Uniform wall velocity. Exactly one of `velocity` and `stream` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<StreamFunction>,
    #[serde(default)]
    pub wall_law: WallLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    #[default]
    Linear,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default)]
    pub penalty: PenaltyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    /// Hard-mode tolerance on the area; defaults to one cell area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for Objective {
    fn default() -> Self {
        Self { c: 1.0, penalty: PenaltyMode::Linear, lambda: None, m0: None, band: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldFormat {
    #[default]
    CsvGrid,
    VtkLegacyAscii,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default)]
    pub field_format: FieldFormat,
}

fn default_dir() -> String {
    "run".into()
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: default_dir(), field_format: FieldFormat::CsvGrid }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}
fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

impl Default for Solver {
    fn default() -> Self {
        Self { tol: default_tol(), max_iter: default_max_iter() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub domain: Domain,
    pub physics: Physics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstacle: Vec<ShapeSpec>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub output: Output,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn backticked(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

fn invariant_name(debug: &str) -> String {
    debug.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect()
}

fn invalid(invariant: &str, message: impl Into<String>) -> ValidationError {
    ValidationError { invariant: invariant.into(), message: message.into() }
}

fn forwarded<E: std::fmt::Debug + std::fmt::Display>(e: E) -> ValidationError {
    let debug = format!("{e:?}");
    let name = match debug.strip_prefix("Geometry(") {
        Some(inner) => invariant_name(inner),
        None => invariant_name(&debug),
    };
    ValidationError { invariant: name, message: e.to_string() }
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let mut s: Scenario = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let line = e.span().map(|r| line_of(text, r.start)).unwrap_or(0);
        let key = (message.starts_with("unknown field") || message.starts_with("missing field"))
            .then(|| backticked(&message))
            .flatten();
        ParseError { line, key, message }
    })?;
    s.fill_defaults()?;
    s.validate()?;
    Ok(s)
}

impl Scenario {
    fn fill_defaults(&mut self) -> Result<(), ValidationError> {
        let o = &mut self.objective;
        match o.penalty {
            PenaltyMode::Linear => {
                if o.m0.is_some() || o.band.is_some() {
                    return Err(invalid("PenaltyKeys", "m0 and band only apply to penalty = \"hard\""));
                }
                o.lambda.get_or_insert(0.0);
            }
            PenaltyMode::Hard => {
                if o.lambda.is_some() {
                    return Err(invalid("PenaltyKeys", "lambda only applies to penalty = \"linear\""));
                }
                if o.m0.is_none() {
                    return Err(invalid("PenaltyKeys", "penalty = \"hard\" needs m0"));
                }
                if o.band.is_none() {
                    let h = self.domain.lx / self.domain.nx as f64;
                    o.band = Some(h * h);
                }
            }
        }
        Ok(())
    }

    /// Checks every invariant the run depends on, including rasterizing the
    /// obstacle.
    pub fn validate(&self) -> Result<(), ValidationError> {
        self.obstacle()?;
        if self.physics.velocity.is_some() == self.physics.stream.is_some() {
            return Err(invalid("WallVelocity", "set exactly one of physics.velocity and physics.stream"));
        }
        self.phys().validate().map_err(forwarded)?;
        if !(self.objective.c >= 0.0 && self.objective.c.is_finite()) {
            return Err(invalid("InvalidParameter", format!("c must be >= 0, got {}", self.objective.c)));
        }
        self.penalty()?.validate().map_err(forwarded)?;
        self.solver_options().validate().map_err(forwarded)?;
        self.optimizer.validate().map_err(forwarded)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, ValidationError> {
        let d = &self.domain;
        Grid::new(d.nx, d.ny, d.lx, d.ly).map_err(forwarded)
    }

    pub fn obstacle(&self) -> Result<ObstacleField, ValidationError> {
        rasterize(&self.grid()?, &self.obstacle).map_err(forwarded)
    }

    pub fn phys(&self) -> PhysicsParams {
        let p = &self.physics;
        let velocity = match (&p.velocity, &p.stream) {
            (_, Some(s)) => BoundaryVelocity::Stream(s.clone()),
            (Some(v), None) => BoundaryVelocity::Uniform(*v),
            (None, None) => BoundaryVelocity::Uniform([0.0, 0.0]),
        };
        PhysicsParams::new(p.mu, p.beta, velocity).with_wall_law(p.wall_law)
    }

    pub fn penalty(&self) -> Result<VolumePenalty, ValidationError> {
        let o = &self.objective;
        match o.penalty {
            PenaltyMode::Linear => Ok(VolumePenalty::Linear { lambda: o.lambda.unwrap_or(0.0) }),
            PenaltyMode::Hard => match (o.m0, o.band) {
                (Some(m0), Some(band)) => Ok(VolumePenalty::Hard { m0, band }),
                _ => Err(invalid("PenaltyKeys", "penalty = \"hard\" needs m0")),
            },
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions::new(self.solver.tol, self.solver.max_iter)
    }

    pub fn problem(&self) -> Result<Problem, ValidationError> {
        Ok(Problem {
            initial: self.obstacle()?,
            phys: self.phys(),
            c: self.objective.c,
            penalty: self.penalty()?,
            solver: self.solver_options(),
            config: self.optimizer.clone(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Same scenario with the obstacle replaced by an explicit description
    /// of `field`.
    pub fn with_obstacle(&self, field: &ObstacleField) -> Scenario {
        Scenario { obstacle: shapes_of(field), ..self.clone() }
    }
}

/// Shape list that rasterizes back to `field`: one cell list plus one
/// straight polyline per screen run.
pub fn shapes_of(field: &ObstacleField) -> Vec<ShapeSpec> {
    let g = field.grid();
    let h = g.h();
    let mut shapes = Vec::new();
    let cells: Vec<[usize; 2]> = field
        .solid_cells()
        .map(|c| {
            let (i, j) = g.cell_ij(c);
            [i, j]
        })
        .collect();
    if !cells.is_empty() {
        shapes.push(ShapeSpec::Cells { cells });
    }
    for run in field.screen_runs() {
        let ends = |f| match g.face(f) {
            Face::V { i, j } => ((i, j), (i + 1, j)),
            Face::U { i, j } => ((i, j), (i, j + 1)),
        };
        let (a, _) = ends(run[0]);
        let (_, b) = ends(run[run.len() - 1]);
        let p = |(i, j): (usize, usize)| [i as f64 * h, j as f64 * h];
        shapes.push(ShapeSpec::Screen { points: vec![p(a), p(b)] });
    }
    shapes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Mode;

    const MINIMAL: &str = "
[domain]
nx = 64
ny = 32
lx = 2.0
ly = 1.0

[physics]
mu = 1.0
beta = 1.0
velocity = [1.0, 0.0]
";

    #[test]
    fn minimal_file_gets_defaults() {
        let s = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(s.objective.c, 1.0);
        assert_eq!(s.objective.penalty, PenaltyMode::Linear);
        assert_eq!(s.objective.lambda, Some(0.0));
        assert_eq!(s.solver.tol, 1e-8);
        assert_eq!(s.optimizer.steps, 0);
        assert_eq!(s.optimizer.mode, Mode::Greedy);
        assert_eq!(s.physics.wall_law, WallLaw::Navier);
        assert!(s.obstacle().unwrap().is_empty());
        let echo = s.to_toml();
        for key in ["tol = 0.00000001", "lambda = 0.0", "stall_k = 500", "field_format = \"csv_grid\""] {
            assert!(echo.contains(key), "{key} missing from\n{echo}");
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("beta = 1.0", "betaa = 1.0");
        match parse_scenario_str(&text) {
            Err(ScenarioError::Parse(e)) => {
                assert_eq!(e.key.as_deref(), Some("betaa"));
                assert_eq!(e.line, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coarse_grid_names_invariant() {
        let text = MINIMAL.replace("nx = 64", "nx = 4").replace("lx = 2.0", "lx = 0.125");
        match parse_scenario_str(&text) {
            Err(ScenarioError::Validation(e)) => assert_eq!(e.invariant, "TooCoarse"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hard_penalty_band_defaults_to_cell_area() {
        let text = format!("{MINIMAL}\n[objective]\npenalty = \"hard\"\nm0 = 0.05\n");
        let s = parse_scenario_str(&text).unwrap();
        assert_eq!(s.objective.band, Some(1.0 / 32.0 / 32.0));
        assert_eq!(s.penalty().unwrap(), VolumePenalty::Hard { m0: 0.05, band: 1.0 / 1024.0 });
        let text = format!("{MINIMAL}\n[objective]\npenalty = \"hard\"\nlambda = 1.0\nm0 = 0.1\n");
        assert!(matches!(parse_scenario_str(&text), Err(ScenarioError::Validation(_))));
    }

    #[test]
    fn round_trip_is_exact() {
        let text = format!(
            "{MINIMAL}
[[obstacle]]
shape = \"disk\"
center = [0.9, 0.5]
radius = 0.15

[[obstacle]]
shape = \"screen\"
points = [[1.1, 0.5], [1.4, 0.5]]

[objective]
c = 0.5
penalty = \"linear\"
lambda = 3.0

[optimizer]
mode = \"anneal\"
steps = 20
seed = 7
temp0 = 0.01
cooling = 0.99

[output]
dir = \"out/x\"
field_format = \"vtk_legacy_ascii\"
"
        );
        let s = parse_scenario_str(&text).unwrap();
        let again = parse_scenario_str(&s.to_toml()).unwrap();
        assert_eq!(s, again);
        assert_eq!(again.to_toml(), s.to_toml());
    }

    #[test]
    fn stream_velocity_round_trips() {
        let text = MINIMAL.replace(
            "velocity = [1.0, 0.0]",
            "\n[physics.stream]\norigin = [1.0, 0.5]\nterms = [[0.0, 1.0, 1.0], [1.0, 2.0, 0.25]]",
        );
        let s = parse_scenario_str(&text).unwrap();
        assert!(matches!(s.phys().velocity, BoundaryVelocity::Stream(_)));
        assert_eq!(parse_scenario_str(&s.to_toml()).unwrap(), s);
        let both = text.replace("wall_law", "x").replace("mu = 1.0", "mu = 1.0\nvelocity = [1.0, 0.0]");
        assert!(matches!(parse_scenario_str(&both), Err(ScenarioError::Validation(_))));
    }

    #[test]
    fn explicit_obstacle_rasterizes_back() {
        let s = parse_scenario_str(&format!(
            "{MINIMAL}\n[[obstacle]]\nshape = \"disk\"\ncenter = [0.9, 0.5]\nradius = 0.15\n[[obstacle]]\nshape = \"screen\"\npoints = [[1.1, 0.5], [1.4, 0.5], [1.4, 0.7]]\n"
        ))
        .unwrap();
        let field = s.obstacle().unwrap();
        let t = s.with_obstacle(&field);
        assert_eq!(t.obstacle().unwrap(), field);
        assert_eq!(parse_scenario_str(&t.to_toml()).unwrap(), t);
    }
}
