//! Drag and the relaxed shape objective.
//!
//! The objective of an obstacle `E` with screens `S` and flow `u` is
//!
//! ```text
//! J = dissipation + navier_bulk + navier_screen
//!     + c perim_bulk + 2 c perim_screen + f(|E|)
//! ```
//!
//! summed in exactly that order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{measure, ObstacleField};
use crate::stokes::{FlowSolution, PhysicsParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("MismatchedInputs: {0}")]
    MismatchedInputs(String),
    #[error("NonConstantV: drag needs a uniform far-field velocity")]
    NonConstantV,
    #[error("ZeroVelocity: drag is undefined for a zero far-field velocity")]
    ZeroVelocity,
    #[error("LoopIntersectsObstacle: {0}")]
    LoopIntersectsObstacle(String),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
}

/// Volume penalty `f(|E|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolumePenalty {
    /// 0 when `||E| - m0| <= band`, `+inf` otherwise.
    Hard { m0: f64, band: f64 },
    /// `-lambda |E|`.
    Linear { lambda: f64 },
}

impl Default for VolumePenalty {
    fn default() -> Self {
        VolumePenalty::Linear { lambda: 0.0 }
    }
}

impl VolumePenalty {
    pub fn value(&self, volume: f64) -> f64 {
        match *self {
            VolumePenalty::Hard { m0, band } => {
                if (volume - m0).abs() <= band {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            VolumePenalty::Linear { lambda } => 0.0 - lambda * volume,
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        match *self {
            VolumePenalty::Hard { m0, band } => {
                if !(m0 >= 0.0 && m0.is_finite() && band >= 0.0 && band.is_finite()) {
                    return Err(EnergyError::InvalidPenalty(format!(
                        "hard penalty needs m0 >= 0 and band >= 0, got m0 = {m0}, band = {band}"
                    )));
                }
            }
            VolumePenalty::Linear { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(EnergyError::InvalidPenalty(format!("lambda must be >= 0, got {lambda}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BreakdownFlags {
    /// Linear penalty mode: `volume_term` is `-lambda |E|` and may be negative.
    pub signed_volume_term: bool,
    /// Hard penalty violated: `volume_term` and `j` are `+inf`.
    pub volume_infeasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dissipation: f64,
    pub navier_bulk: f64,
    /// Both sides of every screen.
    pub navier_screen: f64,
    pub perim_bulk_term: f64,
    pub perim_screen_term: f64,
    pub volume_term: f64,
    pub j: f64,
    /// `None` unless the wall velocity is uniform and nonzero.
    pub drag_energy: Option<f64>,
    pub volume: f64,
    pub mu: f64,
    pub beta: f64,
    pub c: f64,
    pub flags: BreakdownFlags,
}

impl EnergyBreakdown {
    /// `dissipation + navier_bulk + navier_screen`.
    pub fn flow_energy(&self) -> f64 {
        self.dissipation + self.navier_bulk + self.navier_screen
    }

    pub fn navier(&self) -> f64 {
        self.navier_bulk + self.navier_screen
    }

    pub fn perimeter(&self) -> f64 {
        self.perim_bulk_term + self.perim_screen_term
    }
}

/// Evaluates every term of the objective for a solved flow.
///
/// The flow terms use `phys.mu` and `phys.beta`, which may differ from the
/// values the flow was solved with; the wall data and wall law must match.
pub fn energy_breakdown(
    solution: &FlowSolution,
    obstacle: &ObstacleField,
    phys: &PhysicsParams,
    c: f64,
    penalty: &VolumePenalty,
) -> Result<EnergyBreakdown, EnergyError> {
    if obstacle.grid() != &solution.grid {
        return Err(EnergyError::MismatchedInputs("solution and obstacle live on different grids".into()));
    }
    if obstacle.sealed().0 != solution.obstacle {
        return Err(EnergyError::MismatchedInputs("solution was computed for a different obstacle".into()));
    }
    if phys.velocity != solution.phys.velocity || phys.wall_law != solution.phys.wall_law {
        return Err(EnergyError::MismatchedInputs("wall data or wall law differ from the solve".into()));
    }
    phys.validate().map_err(|e| EnergyError::MismatchedInputs(e.to_string()))?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(EnergyError::InvalidPenalty(format!("perimeter weight c must be >= 0, got {c}")));
    }
    penalty.validate()?;

    let form = crate::stokes::form::DiscreteEnergy::build(&solution.obstacle, phys);
    let parts = form.evaluate(&solution.dofs);
    let m = measure(obstacle);
    let perim_bulk_term = c * m.perim_bulk;
    let perim_screen_term = 2.0 * c * m.perim_screen;
    let volume_term = penalty.value(m.volume);
    let j = parts.dissipation + parts.friction_bulk + parts.friction_screen + perim_bulk_term + perim_screen_term
        + volume_term;
    let mut b = EnergyBreakdown {
        dissipation: parts.dissipation,
        navier_bulk: parts.friction_bulk,
        navier_screen: parts.friction_screen,
        perim_bulk_term,
        perim_screen_term,
        volume_term,
        j,
        drag_energy: None,
        volume: m.volume,
        mu: phys.mu,
        beta: phys.beta,
        c,
        flags: BreakdownFlags {
            signed_volume_term: matches!(penalty, VolumePenalty::Linear { .. }),
            volume_infeasible: volume_term.is_infinite(),
        },
    };
    b.drag_energy = drag_energy(&b, phys).ok();
    Ok(b)
}

fn far_field(phys: &PhysicsParams) -> Result<[f64; 2], EnergyError> {
    let v = phys.velocity.uniform().ok_or(EnergyError::NonConstantV)?;
    if v[0] == 0.0 && v[1] == 0.0 {
        return Err(EnergyError::ZeroVelocity);
    }
    Ok(v)
}

/// Drag from the energy identity: flow energy over `|V|`.
pub fn drag_energy(breakdown: &EnergyBreakdown, phys: &PhysicsParams) -> Result<f64, EnergyError> {
    let v = far_field(phys)?;
    Ok(breakdown.flow_energy() / v[0].hypot(v[1]))
}

/// Default position of the control loop as a fraction of the gap between the
/// obstacle's bounding box and the channel walls, measured from the obstacle.
pub const DEFAULT_LOOP_OFFSET: f64 = 0.25;

/// Obstacle-free cells required on each side of the control loop.
const LOOP_BAND: usize = 2;

/// Control loop in corner indices: `[i0, j0, i1, j1]`.
pub fn control_loop(obstacle: &ObstacleField, offset: f64) -> Result<[usize; 4], EnergyError> {
    if !(offset > 0.0 && offset < 1.0) {
        return Err(EnergyError::LoopIntersectsObstacle(format!("loop offset {offset} is outside (0, 1)")));
    }
    let g = obstacle.grid();
    let (nx, ny, h) = (g.nx(), g.ny(), g.h());
    let bb = obstacle.bounding_box().unwrap_or_else(|| {
        let (cx, cy) = (0.5 * g.lx(), 0.5 * g.ly());
        [cx, cy, cx, cy]
    });
    let snap = |x: f64| (x / h).round() as isize;
    let i0 = snap(bb[0] - offset * bb[0]);
    let j0 = snap(bb[1] - offset * bb[1]);
    let i1 = snap(bb[2] + offset * (g.lx() - bb[2]));
    let j1 = snap(bb[3] + offset * (g.ly() - bb[3]));
    let band = LOOP_BAND as isize;
    let (bi0, bj0, bi1, bj1) = (snap(bb[0]), snap(bb[1]), snap(bb[2]), snap(bb[3]));
    let ok = i0 >= 1
        && j0 >= 1
        && i1 < nx as isize
        && j1 < ny as isize
        && bi0 - i0 >= band
        && bj0 - j0 >= band
        && i1 - bi1 >= band
        && j1 - bj1 >= band;
    if !ok {
        return Err(EnergyError::LoopIntersectsObstacle(format!(
            "no loop with {LOOP_BAND} free cells on each side fits between the obstacle and the walls"
        )));
    }
    Ok([i0 as usize, j0 as usize, i1 as usize, j1 as usize])
}

/// Drag from the momentum flux `∮ sigma nu . V/|V|` through a rectangular
/// control loop around the obstacle, at the default offset.
pub fn drag_surface(solution: &FlowSolution, obstacle: &ObstacleField, phys: &PhysicsParams) -> Result<f64, EnergyError> {
    drag_surface_with_offset(solution, obstacle, phys, DEFAULT_LOOP_OFFSET)
}

pub fn drag_surface_with_offset(
    solution: &FlowSolution,
    obstacle: &ObstacleField,
    phys: &PhysicsParams,
    offset: f64,
) -> Result<f64, EnergyError> {
    if obstacle.grid() != &solution.grid {
        return Err(EnergyError::MismatchedInputs("solution and obstacle live on different grids".into()));
    }
    let v = far_field(phys)?;
    let f = loop_force(solution, phys.mu, offset, Stencil::CellCentred)?;
    Ok((f[0] * v[0] + f[1] * v[1]) / v[0].hypot(v[1]))
}

/// Stress reconstruction on the control loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stencil {
    /// Velocities averaged to cell centres, then differenced; the usual
    /// post-processing of a staggered field.
    CellCentred,
    /// Face and corner values of the solver itself. The loop flux then
    /// telescopes against the discrete momentum balance.
    #[cfg_attr(not(test), allow(dead_code))]
    Staggered,
}

/// Net force `∮ sigma nu` on the loop by the midpoint rule.
pub(crate) fn loop_force(
    sol: &FlowSolution,
    mu: f64,
    offset: f64,
    stencil: Stencil,
) -> Result<[f64; 2], EnergyError> {
    let [i0, j0, i1, j1] = control_loop(&sol.obstacle, offset)?;
    let g = &sol.grid;
    let h = g.h();
    let u = |i: usize, j: usize| sol.u[g.u_index(i, j)];
    let v = |i: usize, j: usize| sol.v[g.v_index(i, j)];
    let p = |i: usize, j: usize| sol.p[g.cell(i, j)];
    let uc = |i: usize, j: usize| 0.5 * (u(i, j) + u(i + 1, j));
    let vc = |i: usize, j: usize| 0.5 * (v(i, j) + v(i, j + 1));
    // du/dy + dv/dx at an interior corner
    let corner = |ci: usize, cj: usize| (u(ci, cj) - u(ci, cj - 1)) / h + (v(ci, cj) - v(ci - 1, cj)) / h;

    let mut fx = 0.0;
    let mut fy = 0.0;
    for (ci, sign) in [(i0, -1.0), (i1, 1.0)] {
        for j in j0..j1 {
            let pr = 0.5 * (p(ci - 1, j) + p(ci, j));
            let dudx = (u(ci + 1, j) - u(ci - 1, j)) / (2.0 * h);
            let shear = match stencil {
                Stencil::Staggered => 0.5 * (corner(ci, j) + corner(ci, j + 1)),
                Stencil::CellCentred => {
                    let dudy = (uc(ci - 1, j + 1) - uc(ci - 1, j - 1) + uc(ci, j + 1) - uc(ci, j - 1)) / (4.0 * h);
                    dudy + (vc(ci, j) - vc(ci - 1, j)) / h
                }
            };
            fx += sign * (-pr + 2.0 * mu * dudx) * h;
            fy += sign * mu * shear * h;
        }
    }
    for (cj, sign) in [(j0, -1.0), (j1, 1.0)] {
        for i in i0..i1 {
            let pr = 0.5 * (p(i, cj - 1) + p(i, cj));
            let dvdy = (v(i, cj + 1) - v(i, cj - 1)) / (2.0 * h);
            let shear = match stencil {
                Stencil::Staggered => 0.5 * (corner(i, cj) + corner(i + 1, cj)),
                Stencil::CellCentred => {
                    let dvdx = (vc(i + 1, cj - 1) - vc(i - 1, cj - 1) + vc(i + 1, cj) - vc(i - 1, cj)) / (4.0 * h);
                    dvdx + (uc(i, cj) - uc(i, cj - 1)) / h
                }
            };
            fx += sign * mu * shear * h;
            fy += sign * (-pr + 2.0 * mu * dvdy) * h;
        }
    }
    Ok([fx, fy])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, FaceId, Grid, ShapeSpec};
    use crate::stokes::{assemble_and_solve, BoundaryVelocity, SolverOptions, StreamFunction};

    fn solve(obs: &ObstacleField, phys: &PhysicsParams) -> FlowSolution {
        assemble_and_solve(obs.grid(), obs, phys, &SolverOptions::new(1e-10, 5000)).unwrap()
    }

    fn block(g: Grid, i0: usize, j0: usize, n: usize) -> ObstacleField {
        let cells = (j0..j0 + n).flat_map(|j| (i0..i0 + n).map(move |i| g.cell(i, j)));
        ObstacleField::from_parts(g, cells, Vec::<FaceId>::new(), 2).unwrap()
    }

    #[test]
    fn free_stream_has_no_energy() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let obs = ObstacleField::empty(g);
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
        let sol = solve(&obs, &phys);
        let pen = VolumePenalty::Hard { m0: 0.0, band: 0.0 };
        let b = energy_breakdown(&sol, &obs, &phys, 1.0, &pen).unwrap();
        assert!(b.dissipation < 1e-24);
        assert!(b.navier() < 1e-24);
        assert_eq!(b.perimeter(), 0.0);
        assert_eq!(b.volume_term, pen.value(0.0));
        assert!(b.j < 1e-24);
        assert!(b.drag_energy.unwrap() < 1e-24);
        assert!(drag_surface(&sol, &obs, &phys).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_beta_kills_surface_terms() {
        let g = Grid::new(32, 32, 1.0, 1.0).unwrap();
        let obs = block(g, 14, 14, 4);
        let phys = PhysicsParams::uniform(1.0, 0.0, [1.0, 0.0]);
        let sol = solve(&obs, &phys);
        let pen = VolumePenalty::Linear { lambda: 0.5 };
        let b = energy_breakdown(&sol, &obs, &phys, 0.75, &pen).unwrap();
        assert_eq!(b.navier_bulk, 0.0);
        assert_eq!(b.navier_screen, 0.0);
        let h = g.h();
        assert_eq!(b.perim_bulk_term, 0.75 * 16.0 * h);
        assert_eq!(b.j, b.dissipation + 0.0 + 0.0 + b.perim_bulk_term + 0.0 + (-0.5 * 16.0 * h * h));
        assert!(b.dissipation > 0.0);
        assert!(b.flags.signed_volume_term);
    }

    #[test]
    fn screen_counts_twice() {
        let g = Grid::new(64, 32, 2.0, 1.0).unwrap();
        let h = g.h();
        let mut obs = ObstacleField::empty(g);
        for i in 20..30 {
            obs.toggle_screen(g.v_face(i, 16));
        }
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.2]);
        let sol = solve(&obs, &phys);
        let b = energy_breakdown(&sol, &obs, &phys, 1.5, &VolumePenalty::default()).unwrap();
        let len = 10.0 * h;
        assert_eq!(b.perim_screen_term, 2.0 * 1.5 * len);
        assert_eq!(b.perim_bulk_term, 0.0);
        assert!(b.navier_screen > 0.0);
        assert_eq!(b.navier_bulk, 0.0);
    }

    #[test]
    fn drag_scales_with_constants_at_fixed_field() {
        let g = Grid::new(32, 16, 2.0, 1.0).unwrap();
        let obs = rasterize(&g, &[ShapeSpec::Disk { center: [1.0, 0.5], radius: 0.15 }]).unwrap();
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
        let sol = solve(&obs, &phys);
        let b1 = energy_breakdown(&sol, &obs, &phys, 1.0, &VolumePenalty::default()).unwrap();
        let doubled = PhysicsParams::uniform(2.0, 2.0, [1.0, 0.0]);
        let b2 = energy_breakdown(&sol, &obs, &doubled, 1.0, &VolumePenalty::default()).unwrap();
        let (d1, d2) = (b1.drag_energy.unwrap(), b2.drag_energy.unwrap());
        assert!((d2 - 2.0 * d1).abs() <= 1e-14 * d1);
    }

    #[test]
    fn drag_needs_uniform_velocity() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let obs = ObstacleField::empty(g);
        let phys = PhysicsParams::new(
            1.0,
            1.0,
            BoundaryVelocity::Stream(StreamFunction::new([0.5, 0.5], vec![(1, 1, 1.0)])),
        );
        let sol = solve(&obs, &phys);
        let b = energy_breakdown(&sol, &obs, &phys, 1.0, &VolumePenalty::default()).unwrap();
        assert_eq!(b.drag_energy, None);
        assert_eq!(drag_energy(&b, &phys), Err(EnergyError::NonConstantV));
        assert_eq!(drag_surface(&sol, &obs, &phys), Err(EnergyError::NonConstantV));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
        let sol = solve(&ObstacleField::empty(g), &phys);
        let other = block(g, 6, 6, 3);
        assert!(matches!(
            energy_breakdown(&sol, &other, &phys, 1.0, &VolumePenalty::default()),
            Err(EnergyError::MismatchedInputs(_))
        ));
        let g2 = Grid::new(8, 8, 1.0, 1.0).unwrap();
        assert!(matches!(
            energy_breakdown(&sol, &ObstacleField::empty(g2), &phys, 1.0, &VolumePenalty::default()),
            Err(EnergyError::MismatchedInputs(_))
        ));
    }

    #[test]
    fn hard_penalty_band() {
        let p = VolumePenalty::Hard { m0: 1.0, band: 0.1 };
        assert_eq!(p.value(1.05), 0.0);
        assert_eq!(p.value(0.9), 0.0);
        assert_eq!(p.value(1.2), f64::INFINITY);
        assert_eq!(VolumePenalty::Linear { lambda: 2.0 }.value(0.5), -1.0);
    }

    #[test]
    fn loop_needs_room() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let obs = block(g, 2, 2, 12);
        assert!(matches!(control_loop(&obs, 0.25), Err(EnergyError::LoopIntersectsObstacle(_))));
        let obs = block(g, 6, 6, 4);
        let [i0, j0, i1, j1] = control_loop(&obs, 0.5).unwrap();
        assert!(i0 <= 4 && j0 <= 4 && i1 >= 12 && j1 >= 12 && i0 >= 1 && i1 <= 15);
    }

    #[test]
    fn surface_and_energy_drag_agree_on_block() {
        let g = Grid::new(64, 32, 2.0, 1.0).unwrap();
        let obs = block(g, 30, 14, 4);
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
        let sol = solve(&obs, &phys);
        let b = energy_breakdown(&sol, &obs, &phys, 1.0, &VolumePenalty::default()).unwrap();
        let de = b.drag_energy.unwrap();
        let ds = drag_surface(&sol, &obs, &phys).unwrap();
        assert!(de > 0.0);
        assert!((ds - de).abs() / de < 0.1, "{ds} vs {de}");
        let f = loop_force(&sol, phys.mu, 0.25, Stencil::Staggered).unwrap();
        assert!((f[0] - de).abs() / de < 1e-9, "{} vs {de}", f[0]);
        assert!(f[1].abs() / de < 1e-9);
    }
}
