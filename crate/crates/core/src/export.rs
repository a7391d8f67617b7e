//! Field files and run manifests.
//!
//! Output is plain text formatted with Rust's shortest round-trip float
//! representation, so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Face, ObstacleField};
use crate::scenario::{FieldFormat, Scenario};
use crate::stokes::FlowSolution;

#[derive(Debug, Error)]
#[error("IoError: {path}: {source}")]
pub struct ExportError {
    pub path: String,
    pub source: std::io::Error,
}

pub fn write_text(path: &Path, content: &str) -> Result<(), ExportError> {
    let err = |source| ExportError { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    fs::write(path, content).map_err(err)
}

fn num(x: f64) -> String {
    if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Cell state: 0 fluid, 1 solid, 2 fluid cut off from the channel walls
/// (treated as solid by the solver).
fn cell_state(sol: &FlowSolution, obstacle: &ObstacleField, c: usize) -> u8 {
    if obstacle.is_solid(c) {
        1
    } else if sol.obstacle.is_solid(c) {
        2
    } else {
        0
    }
}

/// One row per cell: `i,j,x,y,ux,uy,p,state`, with `i` varying fastest.
pub fn csv_grid(sol: &FlowSolution, obstacle: &ObstacleField) -> String {
    let g = &sol.grid;
    let mut s = String::from("i,j,x,y,ux,uy,p,state\n");
    for c in 0..g.n_cells() {
        let (i, j) = g.cell_ij(c);
        let [x, y] = g.cell_center(i, j);
        let [ux, uy] = sol.cell_velocity(c);
        let _ = writeln!(
            s,
            "{i},{j},{},{},{},{},{},{}",
            num(x),
            num(y),
            num(ux),
            num(uy),
            num(sol.p[c]),
            cell_state(sol, obstacle, c)
        );
    }
    s
}

/// Legacy VTK structured-points file with cell velocity, pressure and state.
pub fn vtk_cells(sol: &FlowSolution, obstacle: &ObstacleField) -> String {
    let g = &sol.grid;
    let h = g.h();
    let n = g.n_cells();
    let mut s = String::new();
    let _ = write!(
        s,
        "# vtk DataFile Version 3.0\nslipdrag cell fields\nASCII\nDATASET STRUCTURED_POINTS\n\
         DIMENSIONS {} {} 1\nORIGIN 0 0 0\nSPACING {h} {h} 1\nCELL_DATA {n}\n",
        g.nx() + 1,
        g.ny() + 1
    );
    s.push_str("VECTORS velocity double\n");
    for c in 0..n {
        let [ux, uy] = sol.cell_velocity(c);
        let _ = writeln!(s, "{} {} 0", num(ux), num(uy));
    }
    s.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for c in 0..n {
        let _ = writeln!(s, "{}", num(sol.p[c]));
    }
    s.push_str("SCALARS state int 1\nLOOKUP_TABLE default\n");
    for c in 0..n {
        let _ = writeln!(s, "{}", cell_state(sol, obstacle, c));
    }
    s
}

/// Legacy VTK polydata with one line segment per screen face.
pub fn vtk_screens(obstacle: &ObstacleField) -> String {
    let g = obstacle.grid();
    let h = g.h();
    let faces: Vec<Face> = obstacle.screen_faces().map(|f| g.face(f)).collect();
    let mut s = format!(
        "# vtk DataFile Version 3.0\nslipdrag screens\nASCII\nDATASET POLYDATA\nPOINTS {} double\n",
        2 * faces.len()
    );
    for f in &faces {
        let (a, b) = match *f {
            Face::U { i, j } => ((i, j), (i, j + 1)),
            Face::V { i, j } => ((i, j), (i + 1, j)),
        };
        for (ci, cj) in [a, b] {
            let _ = writeln!(s, "{} {} 0", ci as f64 * h, cj as f64 * h);
        }
    }
    let _ = writeln!(s, "LINES {} {}", faces.len(), 3 * faces.len());
    for k in 0..faces.len() {
        let _ = writeln!(s, "2 {} {}", 2 * k, 2 * k + 1);
    }
    s
}

/// Writes the field files for `format` into `dir` and returns their paths.
pub fn export_fields(
    sol: &FlowSolution,
    obstacle: &ObstacleField,
    dir: &Path,
    format: FieldFormat,
) -> Result<Vec<PathBuf>, ExportError> {
    let files = match format {
        FieldFormat::CsvGrid => vec![("fields.csv", csv_grid(sol, obstacle))],
        FieldFormat::VtkLegacyAscii => {
            vec![("fields.vtk", vtk_cells(sol, obstacle)), ("screens.vtk", vtk_screens(obstacle))]
        }
    };
    let mut paths = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        write_text(&path, &content)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub scenario: Scenario,
}

impl Manifest {
    pub fn new(command: &str, scenario: &Scenario, outputs: Vec<String>) -> Self {
        Self {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            seed: scenario.optimizer.seed,
            outputs,
            scenario: scenario.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes to TOML")
    }
}
