//! Stationary Stokes flow around an obstacle with Navier slip.
//!
//! The velocity minimizes the discrete energy
//! `2 mu sum |e(u)|^2 h^2 + beta sum |u_t|^2 h` over discretely
//! divergence-free staggered fields equal to the wall data on the channel
//! boundary and with zero normal velocity on every obstacle face. Screens
//! carry independent tangential traces on both sides. The pressure is the
//! Lagrange multiplier of the divergence constraint.

mod analytic;
mod boundary;
pub(crate) mod form;
mod solver;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analytic::{analytic_slip_profiles, AnalyticError, SlipCase, SlipProfile};
pub use boundary::{BoundaryVelocity, StreamFunction};

use crate::geometry::{GeometryError, Grid, ObstacleField};
use form::{DiscreteEnergy, Slot};
use solver::{schur_cg, Divergence, VelocityOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("SolverDiverged: divergence residual {divergence:e} after {iterations} iterations")]
    SolverDiverged { iterations: usize, divergence: f64 },
    #[error("IncompatibleBoundaryFlux: net wall flux {relative:e} (relative) on a fluid component")]
    IncompatibleBoundaryFlux { relative: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Wall law on obstacle faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallLaw {
    /// Tangential stress `beta u_t`; `beta = 0` is perfect slip.
    #[default]
    Navier,
    /// Zero velocity on obstacle faces (the `beta -> infinity` limit).
    NoSlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub mu: f64,
    pub beta: f64,
    pub velocity: BoundaryVelocity,
    #[serde(default)]
    pub wall_law: WallLaw,
}

impl PhysicsParams {
    pub fn new(mu: f64, beta: f64, velocity: BoundaryVelocity) -> Self {
        Self { mu, beta, velocity, wall_law: WallLaw::Navier }
    }

    pub fn uniform(mu: f64, beta: f64, v: [f64; 2]) -> Self {
        Self::new(mu, beta, BoundaryVelocity::Uniform(v))
    }

    pub fn with_wall_law(mut self, wall_law: WallLaw) -> Self {
        self.wall_law = wall_law;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(SolverError::InvalidParameter(format!("mu must be positive and finite, got {}", self.mu)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(SolverError::InvalidParameter(format!(
                "beta must be non-negative and finite, got {}",
                self.beta
            )));
        }
        match &self.velocity {
            BoundaryVelocity::Uniform(v) if !(v[0].is_finite() && v[1].is_finite()) => {
                Err(SolverError::InvalidParameter("boundary velocity is not finite".into()))
            }
            BoundaryVelocity::Stream(s) => s.validate().map_err(SolverError::InvalidParameter),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target for the per-cell divergence `|div u| / V_ref`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 5000 }
    }
}

impl SolverOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            return Err(SolverError::InvalidParameter(format!("tol must lie in (0, 1e-3], got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(SolverError::InvalidParameter("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `max |A u + b - B^T p| / (mu V_ref)` over velocity unknowns.
    pub momentum_inf: f64,
    /// `max |div u| / V_ref` over fluid cells.
    pub divergence_inf: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SolverWarning {
    /// Enclosed fluid cells were turned solid before assembly.
    DisconnectedFluid { sealed_cells: usize },
    /// Screens are present but carry no friction (`beta = 0`).
    FrictionlessScreens,
}

/// Corner velocity of one group of fluid quarter-cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerTrace {
    pub corner: (usize, usize),
    /// Bit mask of quarter-cells: 1 = NE, 2 = NW, 4 = SW, 8 = SE.
    pub quadrants: u8,
    pub velocity: [f64; 2],
    /// The group is bounded by a screen.
    pub screen_side: bool,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub grid: Grid,
    /// Obstacle actually solved on, after sealing enclosed cavities.
    pub obstacle: ObstacleField,
    pub phys: PhysicsParams,
    /// x-velocity on u-faces, indexed like [`Grid::u_index`].
    pub u: Vec<f64>,
    /// y-velocity on v-faces, indexed like [`Grid::v_index`].
    pub v: Vec<f64>,
    /// Cell pressure, zero mean over fluid cells, 0 in solid cells.
    pub p: Vec<f64>,
    pub traces: Vec<CornerTrace>,
    pub residuals: Residuals,
    pub warnings: Vec<SolverWarning>,
    pub(crate) dofs: Vec<f64>,
    pub(crate) reference_speed: f64,
}

/// Discretely divergence-free velocity perturbation that vanishes on the
/// channel walls and on obstacle normals.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub(crate) dofs: Vec<f64>,
}

impl Perturbation {
    /// Euclidean norm over all unknowns.
    pub fn norm(&self) -> f64 {
        self.dofs.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn assemble_and_solve(
    grid: &Grid,
    obstacle: &ObstacleField,
    phys: &PhysicsParams,
    opts: &SolverOptions,
) -> Result<FlowSolution, SolverError> {
    solve_warm(grid, obstacle, phys, opts, None)
}

/// Like [`assemble_and_solve`], starting the pressure iteration from a
/// previous solution on the same grid.
pub fn solve_warm(
    grid: &Grid,
    obstacle: &ObstacleField,
    phys: &PhysicsParams,
    opts: &SolverOptions,
    warm: Option<&FlowSolution>,
) -> Result<FlowSolution, SolverError> {
    if obstacle.grid() != grid {
        return Err(GeometryError::GridMismatch.into());
    }
    obstacle.validate()?;
    phys.validate()?;
    opts.validate()?;

    let (sealed, n_sealed) = obstacle.sealed();
    let mut warnings = Vec::new();
    if n_sealed > 0 {
        warnings.push(SolverWarning::DisconnectedFluid { sealed_cells: n_sealed });
    }
    if phys.beta == 0.0 && phys.wall_law == WallLaw::Navier && sealed.n_screen() > 0 {
        warnings.push(SolverWarning::FrictionlessScreens);
    }

    let form = DiscreteEnergy::build(&sealed, phys);
    let div = Divergence::build(&form, &sealed);
    check_flux(&div)?;
    let op = VelocityOperator::build(&form)?;

    let p0 = match warm {
        Some(w) if w.grid == *grid => div.cells.iter().map(|&c| w.p[c]).collect(),
        _ => vec![0.0; div.cells.len()],
    };
    let h = grid.h();
    let vref = form.reference_speed;
    let res = schur_cg(&op, &div, p0, opts.tol, opts.max_iter, h * vref, phys.mu * vref)?;

    let mut p = vec![0.0; grid.n_cells()];
    let mean = if res.p.is_empty() { 0.0 } else { res.p.iter().sum::<f64>() / res.p.len() as f64 };
    for (k, &c) in div.cells.iter().enumerate() {
        p[c] = res.p[k] - mean;
    }
    let (u, v, tr) = form.expand(&res.x);
    let traces = form
        .sectors
        .iter()
        .zip(tr)
        .map(|(s, velocity)| CornerTrace {
            corner: s.corner,
            quadrants: s.quadrants,
            velocity,
            screen_side: s.screen_side,
        })
        .collect();

    Ok(FlowSolution {
        grid: *grid,
        obstacle: sealed,
        phys: phys.clone(),
        u,
        v,
        p,
        traces,
        residuals: Residuals {
            momentum_inf: res.momentum_inf,
            divergence_inf: res.divergence_inf,
            iterations: res.iterations,
        },
        warnings,
        dofs: res.x,
        reference_speed: vref,
    })
}

fn check_flux(div: &Divergence) -> Result<(), SolverError> {
    let mut net = vec![0.0; div.n_components];
    let mut total = 0.0;
    for (k, g) in div.g.iter().enumerate() {
        net[div.component[k] as usize] += g;
        total += g.abs();
    }
    if total == 0.0 {
        return Ok(());
    }
    let worst = net.iter().fold(0.0f64, |a, v| a.max(v.abs())) / total;
    if worst > 1e-10 {
        return Err(SolverError::IncompatibleBoundaryFlux { relative: worst });
    }
    Ok(())
}

impl FlowSolution {
    pub(crate) fn form(&self) -> DiscreteEnergy {
        DiscreteEnergy::build(&self.obstacle, &self.phys)
    }

    /// Reference speed used to scale residuals.
    pub fn reference_speed(&self) -> f64 {
        self.reference_speed
    }

    /// Cell-centre velocity by averaging opposite faces.
    pub fn cell_velocity(&self, c: usize) -> [f64; 2] {
        let (i, j) = self.grid.cell_ij(c);
        let g = &self.grid;
        [
            0.5 * (self.u[g.u_index(i, j)] + self.u[g.u_index(i + 1, j)]),
            0.5 * (self.v[g.v_index(i, j)] + self.v[g.v_index(i, j + 1)]),
        ]
    }

    /// Integral of `|e(u)|^2` over each cell (zero in solid cells).
    pub fn strain_density(&self) -> Vec<f64> {
        self.form().strain_density(&self.dofs)
    }

    /// `2 mu sum e(u):e(phi) h^2 + beta sum u_t phi_t h`.
    pub fn first_variation(&self, phi: &Perturbation) -> f64 {
        self.form().first_variation(&self.dofs, &phi.dofs)
    }

    /// Random admissible perturbation: face values from a random discrete
    /// stream function on the corners away from walls and obstacles, plus
    /// random corner trace values.
    pub fn random_admissible_perturbation<R: Rng + ?Sized>(&self, rng: &mut R) -> Perturbation {
        let form = self.form();
        let g = &self.grid;
        let (nx, ny, h) = (g.nx(), g.ny(), g.h());
        let obs = &self.obstacle;
        let mut psi = vec![0.0; (nx + 1) * (ny + 1)];
        for cj in 1..ny {
            for ci in 1..nx {
                let cells = [g.cell(ci, cj), g.cell(ci - 1, cj), g.cell(ci - 1, cj - 1), g.cell(ci, cj - 1)];
                let edges = [g.u_face(ci, cj), g.v_face(ci - 1, cj), g.u_face(ci, cj - 1), g.v_face(ci, cj)];
                if cells.iter().any(|&c| obs.is_solid(c)) || edges.iter().any(|&f| obs.is_blocked(f)) {
                    continue;
                }
                psi[cj * (nx + 1) + ci] = rng.random_range(-1.0..1.0);
            }
        }
        let at = |ci: usize, cj: usize| psi[cj * (nx + 1) + ci];
        let mut dofs = vec![0.0; form.n_dofs];
        for j in 0..ny {
            for i in 0..=nx {
                if let Slot::Free(k) = form.u_slots[g.u_index(i, j)] {
                    dofs[k as usize] = (at(i, j + 1) - at(i, j)) / h;
                }
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                if let Slot::Free(k) = form.v_slots[g.v_index(i, j)] {
                    dofs[k as usize] = -(at(i + 1, j) - at(i, j)) / h;
                }
            }
        }
        for s in &form.sectors {
            for slot in s.slots {
                if let Slot::Free(k) = slot {
                    dofs[k as usize] = rng.random_range(-1.0..1.0);
                }
            }
        }
        Perturbation { dofs }
    }
}
