//! Stochastic search over obstacles (bulk cells and screens) minimizing the
//! objective at fixed physics.
//!
//! Each step draws one move, re-solves the flow on the candidate obstacle and
//! accepts by the greedy rule (`dJ < 0`) or the Metropolis rule with
//! geometric cooling. Proposal draws for step `k` come from ChaCha8 stream
//! `2k` of the seed and acceptance draws from stream `2k + 1`, so a step can
//! be replayed in isolation.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{energy_breakdown, EnergyBreakdown, EnergyError, VolumePenalty};
use crate::geometry::{measure, Face, FaceId, Grid, ObstacleField};
use crate::stokes::{solve_warm, FlowSolution, PhysicsParams, SolverError, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid optimizer settings: {0}")]
    InvalidConfig(String),
    #[error("initial obstacle: {0}")]
    Initial(#[from] SolverError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Greedy,
    Anneal,
}

/// Relative weights of the move families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveMix {
    pub flip: f64,
    pub grow_shrink_screen: f64,
    pub move_screen: f64,
    pub translate: f64,
}

impl Default for MoveMix {
    fn default() -> Self {
        Self { flip: 0.5, grow_shrink_screen: 0.3, move_screen: 0.1, translate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub temp0: f64,
    #[serde(default = "default_cooling")]
    pub cooling: f64,
    #[serde(default = "default_stall")]
    pub stall_k: usize,
    /// Allow screen moves.
    #[serde(default = "default_true")]
    pub screens: bool,
    #[serde(default)]
    pub mix: MoveMix,
}

fn default_cooling() -> f64 {
    0.995
}
fn default_stall() -> usize {
    500
}
fn default_true() -> bool {
    true
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Greedy,
            steps: 0,
            seed: 0,
            temp0: 0.0,
            cooling: default_cooling(),
            stall_k: default_stall(),
            screens: true,
            mix: MoveMix::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidConfig(m));
        if !(self.temp0 >= 0.0 && self.temp0.is_finite()) {
            return bad(format!("temp0 must be >= 0, got {}", self.temp0));
        }
        if !(self.cooling > 0.0 && self.cooling <= 1.0) {
            return bad(format!("cooling must lie in (0, 1], got {}", self.cooling));
        }
        if self.stall_k == 0 {
            return bad("stall_k must be positive".into());
        }
        let m = &self.mix;
        let w = [m.flip, m.grow_shrink_screen, m.move_screen, m.translate];
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
            return bad("move weights must be non-negative with a positive sum".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    FlipCellBlock,
    GrowScreen,
    ShrinkScreen,
    MoveScreen,
    TranslateComponent,
}

impl fmt::Display for MoveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MoveKind::FlipCellBlock => "flip_cell_block",
            MoveKind::GrowScreen => "grow_screen",
            MoveKind::ShrinkScreen => "shrink_screen",
            MoveKind::MoveScreen => "move_screen",
            MoveKind::TranslateComponent => "translate_component",
        })
    }
}

/// A set of cell and face toggles. Applying a move twice restores the field.
#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub kind: MoveKind,
    pub cells: Vec<usize>,
    pub faces: Vec<FaceId>,
    /// Raw generator outputs consumed while drawing the move.
    pub rng_draw: Vec<u64>,
}

impl Move {
    pub fn apply(&self, field: &mut ObstacleField) {
        for &c in &self.cells {
            field.toggle_cell(c);
        }
        for &f in &self.faces {
            field.toggle_screen(f);
        }
    }

    pub fn revert(&self, field: &mut ObstacleField) {
        self.apply(field);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Move(Move),
    Rejected { kind: Option<MoveKind>, reason: &'static str, rng_draw: Vec<u64> },
}

impl Proposal {
    pub fn kind(&self) -> Option<MoveKind> {
        match self {
            Proposal::Move(m) => Some(m.kind),
            Proposal::Rejected { kind, .. } => *kind,
        }
    }

    pub fn rng_draw(&self) -> &[u64] {
        match self {
            Proposal::Move(m) => &m.rng_draw,
            Proposal::Rejected { rng_draw, .. } => rng_draw,
        }
    }
}

/// Generator wrapper that keeps every value it hands out.
struct RecordingRng {
    inner: ChaCha8Rng,
    draws: Vec<u64>,
}

impl RngCore for RecordingRng {
    fn next_u32(&mut self) -> u32 {
        let v = self.inner.next_u32();
        self.draws.push(v as u64);
        v
    }

    fn next_u64(&mut self) -> u64 {
        let v = self.inner.next_u64();
        self.draws.push(v);
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub current: ObstacleField,
    pub current_j: EnergyBreakdown,
    pub best: (ObstacleField, EnergyBreakdown),
    pub temperature: f64,
    pub step: usize,
    pub rng_seed: u64,
    /// Flow on `current`, used to warm-start the next solve.
    pub solution: Option<FlowSolution>,
}

/// Draws the move for `state.step` from `config.mix`.
pub fn propose_move(state: &OptimizerState, config: &OptimizerConfig) -> Proposal {
    let mut rng = RecordingRng { inner: stream_rng(state.rng_seed, 2 * state.step as u64), draws: Vec::new() };
    let field = &state.current;
    let m = &config.mix;
    let screens = config.screens;
    let weights = [
        m.flip,
        if screens { m.grow_shrink_screen } else { 0.0 },
        if screens { m.move_screen } else { 0.0 },
        m.translate,
    ];
    let total: f64 = weights.iter().sum();
    let mut r = rng.random_range(0.0..total);
    let mut family = 0;
    for (k, w) in weights.iter().enumerate() {
        if r < *w {
            family = k;
            break;
        }
        r -= w;
        family = k;
    }
    let result = match family {
        0 => flip_block(field, &mut rng),
        1 => grow_or_shrink(field, &mut rng),
        2 => move_screen(field, &mut rng),
        _ => translate(field, &mut rng),
    };
    let rng_draw = rng.draws;
    match result {
        Ok((kind, mut cells, mut faces)) => {
            cells.sort_unstable();
            cells.dedup();
            faces.sort_unstable();
            faces.dedup();
            let mv = Move { kind, cells, faces, rng_draw };
            let mut trial = field.clone();
            mv.apply(&mut trial);
            if trial.validate().is_err() {
                return Proposal::Rejected { kind: Some(kind), reason: "violates geometry invariants", rng_draw: mv.rng_draw };
            }
            if !trial.enclosed_fluid_cells().is_empty() {
                return Proposal::Rejected { kind: Some(kind), reason: "encloses a fluid cavity", rng_draw: mv.rng_draw };
            }
            Proposal::Move(mv)
        }
        Err((kind, reason)) => Proposal::Rejected { kind, reason, rng_draw },
    }
}

type Draft = Result<(MoveKind, Vec<usize>, Vec<FaceId>), (Option<MoveKind>, &'static str)>;

const DIRS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn pick<T: Copy, R: Rng + ?Sized>(rng: &mut R, items: &[T]) -> Option<T> {
    if items.is_empty() {
        None
    } else {
        Some(items[rng.random_range(0..items.len())])
    }
}

/// Screens that would touch any of `cells` once they are solid.
fn screens_touching(field: &ObstacleField, cells: &[usize]) -> Vec<FaceId> {
    let g = field.grid();
    cells.iter().flat_map(|&c| g.cell_faces(c)).filter(|&f| field.is_screen(f)).collect()
}

fn flip_block<R: Rng + ?Sized>(field: &ObstacleField, rng: &mut R) -> Draft {
    let kind = MoveKind::FlipCellBlock;
    let g = field.grid();
    let anchors: Vec<usize> = if field.n_solid() == 0 {
        (0..g.n_cells()).filter(|&c| field.cell_allowed(c)).collect()
    } else {
        let mut a: Vec<usize> = field
            .interface_faces()
            .flat_map(|f| g.face_cells(f))
            .flatten()
            .filter(|&c| field.is_solid(c) || field.cell_allowed(c))
            .collect();
        a.sort_unstable();
        a.dedup();
        a
    };
    let anchor = pick(rng, &anchors).ok_or((Some(kind), "no cell to flip"))?;
    let size = rng.random_range(1..=3usize);
    let (di, dj) = DIRS[rng.random_range(0..4usize)];
    let to_solid = !field.is_solid(anchor);
    let (i, j) = g.cell_ij(anchor);
    let mut cells = Vec::new();
    for k in 0..size as isize {
        let Some(c) = g.cell_checked(i as isize + k * di, j as isize + k * dj) else { break };
        if field.is_solid(c) != to_solid {
            cells.push(c);
        }
    }
    let faces = if to_solid { screens_touching(field, &cells) } else { Vec::new() };
    Ok((kind, cells, faces))
}

/// Neighbouring face continuing a straight run past `f` in direction `s`.
fn run_neighbor(g: &Grid, f: FaceId, s: isize) -> Option<FaceId> {
    match g.face(f) {
        Face::V { i, j } => {
            let ni = i as isize + s;
            (ni >= 0 && (ni as usize) < g.nx()).then(|| g.v_face(ni as usize, j))
        }
        Face::U { i, j } => {
            let nj = j as isize + s;
            (nj >= 0 && (nj as usize) < g.ny()).then(|| g.u_face(i, nj as usize))
        }
    }
}

fn grow_or_shrink<R: Rng + ?Sized>(field: &ObstacleField, rng: &mut R) -> Draft {
    let g = field.grid();
    let runs = field.screen_runs();
    let create = runs.is_empty() || rng.random_bool(0.25);
    if create {
        let kind = MoveKind::GrowScreen;
        let allowed = |f: FaceId| field.face_allowed(f) && !field.is_blocked(f);
        let candidates: Vec<FaceId> = if field.n_solid() == 0 && field.n_screen() == 0 {
            (0..g.n_faces()).map(FaceId).filter(|&f| allowed(f)).collect()
        } else {
            // faces sharing a corner with the body or an existing screen
            let mut touch = vec![false; (g.nx() + 1) * (g.ny() + 1)];
            let mark = |f: FaceId, t: &mut Vec<bool>| {
                for (a, b) in g.face_corners(f) {
                    t[b * (g.nx() + 1) + a] = true;
                }
            };
            for f in field.interface_faces().chain(field.screen_faces()) {
                mark(f, &mut touch);
            }
            (0..g.n_faces())
                .map(FaceId)
                .filter(|&f| allowed(f) && g.face_corners(f).iter().any(|&(a, b)| touch[b * (g.nx() + 1) + a]))
                .collect()
        };
        let f = pick(rng, &candidates).ok_or((Some(kind), "no free face for a new screen"))?;
        return Ok((kind, Vec::new(), vec![f]));
    }
    let run = &runs[rng.random_range(0..runs.len())];
    let at_end = rng.random_bool(0.5);
    if rng.random_bool(0.5) {
        let f = if at_end { run[run.len() - 1] } else { run[0] };
        return Ok((MoveKind::ShrinkScreen, Vec::new(), vec![f]));
    }
    let kind = MoveKind::GrowScreen;
    let (end, s) = if at_end { (run[run.len() - 1], 1) } else { (run[0], -1) };
    let next = run_neighbor(g, end, s).ok_or((Some(kind), "run reaches the grid edge"))?;
    if field.is_blocked(next) || !field.face_allowed(next) {
        return Err((Some(kind), "screen cannot grow there"));
    }
    Ok((kind, Vec::new(), vec![next]))
}

/// Face shifted by one cell across its own orientation.
fn shift_face(g: &Grid, f: FaceId, s: isize) -> Option<FaceId> {
    match g.face(f) {
        Face::V { i, j } => {
            let nj = j as isize + s;
            (nj >= 0 && nj as usize <= g.ny()).then(|| g.v_face(i, nj as usize))
        }
        Face::U { i, j } => {
            let ni = i as isize + s;
            (ni >= 0 && ni as usize <= g.nx()).then(|| g.u_face(ni as usize, j))
        }
    }
}

fn move_screen<R: Rng + ?Sized>(field: &ObstacleField, rng: &mut R) -> Draft {
    let kind = MoveKind::MoveScreen;
    let g = field.grid();
    let runs = field.screen_runs();
    let run = pick(rng, &(0..runs.len()).collect::<Vec<_>>()).ok_or((Some(kind), "no screen to move"))?;
    let s = if rng.random_bool(0.5) { 1 } else { -1 };
    let mut faces = runs[run].clone();
    for &f in &runs[run] {
        let n = shift_face(g, f, s).ok_or((Some(kind), "screen would leave the grid"))?;
        if field.is_screen(n) {
            return Err((Some(kind), "screen would merge with another screen"));
        }
        faces.push(n);
    }
    Ok((kind, Vec::new(), faces))
}

fn translate<R: Rng + ?Sized>(field: &ObstacleField, rng: &mut R) -> Draft {
    let kind = MoveKind::TranslateComponent;
    let g = field.grid();
    let comps = field.solid_components();
    let k = pick(rng, &(0..comps.len()).collect::<Vec<_>>()).ok_or((Some(kind), "no solid component"))?;
    let (di, dj) = DIRS[rng.random_range(0..4usize)];
    let comp = &comps[k];
    let mut inside = vec![false; g.n_cells()];
    for &c in comp {
        inside[c] = true;
    }
    let mut moved = Vec::with_capacity(comp.len());
    for &c in comp {
        let (i, j) = g.cell_ij(c);
        let n = g
            .cell_checked(i as isize + di, j as isize + dj)
            .ok_or((Some(kind), "component would leave the grid"))?;
        if field.is_solid(n) && !inside[n] {
            return Err((Some(kind), "component would overlap another one"));
        }
        moved.push(n);
    }
    let mut now = vec![false; g.n_cells()];
    for &c in &moved {
        now[c] = true;
    }
    let mut cells: Vec<usize> = comp.iter().copied().filter(|&c| !now[c]).collect();
    let added: Vec<usize> = moved.iter().copied().filter(|&c| !inside[c]).collect();
    let faces = screens_touching(field, &added);
    cells.extend(added);
    Ok((kind, cells, faces))
}

/// Everything the search needs besides the obstacle.
#[derive(Debug, Clone)]
pub struct Problem {
    pub initial: ObstacleField,
    pub phys: PhysicsParams,
    pub c: f64,
    pub penalty: VolumePenalty,
    pub solver: SolverOptions,
    pub config: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub kind: Option<MoveKind>,
    pub accepted: bool,
    /// Candidate breakdown; `None` when the move was rejected before a solve
    /// or the solve failed.
    pub candidate: Option<EnergyBreakdown>,
    /// Objective of the best obstacle after this step.
    pub best_j: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Stall,
}

#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    pub records: Vec<StepRecord>,
    pub initial: EnergyBreakdown,
    pub best: (ObstacleField, EnergyBreakdown),
    pub best_step: Option<usize>,
    pub final_state: ObstacleField,
    pub accepted: usize,
    pub solver_failures: usize,
    pub stop: StopReason,
}

fn evaluate(
    field: &ObstacleField,
    problem: &Problem,
    warm: Option<&FlowSolution>,
) -> Result<(EnergyBreakdown, Option<FlowSolution>), OptimizerError> {
    let volume = measure(field).volume;
    if problem.penalty.value(volume).is_infinite() {
        // skip the solve: the candidate cannot win
        let b = EnergyBreakdown {
            dissipation: f64::NAN,
            navier_bulk: f64::NAN,
            navier_screen: f64::NAN,
            perim_bulk_term: f64::NAN,
            perim_screen_term: f64::NAN,
            volume_term: f64::INFINITY,
            j: f64::INFINITY,
            drag_energy: None,
            volume,
            mu: problem.phys.mu,
            beta: problem.phys.beta,
            c: problem.c,
            flags: crate::energy::BreakdownFlags { signed_volume_term: false, volume_infeasible: true },
        };
        return Ok((b, None));
    }
    let sol = solve_warm(field.grid(), field, &problem.phys, &problem.solver, warm)?;
    let b = energy_breakdown(&sol, field, &problem.phys, problem.c, &problem.penalty)?;
    Ok((b, Some(sol)))
}

/// Runs the search described by `problem`.
pub fn optimize(problem: &Problem) -> Result<OptimizationTrace, OptimizerError> {
    optimize_with(problem, |_| {})
}

/// Like [`optimize`], calling `on_step` after every step.
pub fn optimize_with(
    problem: &Problem,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<OptimizationTrace, OptimizerError> {
    let config = &problem.config;
    config.validate()?;
    problem.penalty.validate()?;
    let (initial, solution) = evaluate(&problem.initial, problem, None)?;
    let mut state = OptimizerState {
        current: problem.initial.clone(),
        current_j: initial,
        best: (problem.initial.clone(), initial),
        temperature: if config.mode == Mode::Anneal { config.temp0 } else { 0.0 },
        step: 0,
        rng_seed: config.seed,
        solution,
    };
    let mut records = Vec::with_capacity(config.steps);
    let mut accepted_total = 0;
    let mut failures = 0;
    let mut since_accept = 0;
    let mut best_step = None;
    let mut stop = StopReason::Budget;

    while state.step < config.steps {
        let step = state.step;
        let proposal = propose_move(&state, config);
        let kind = proposal.kind();
        let mut record = StepRecord { step, kind, accepted: false, candidate: None, best_j: state.best.1.j, note: None };
        if let Proposal::Move(mv) = proposal {
            let mut cand = state.current.clone();
            mv.apply(&mut cand);
            match evaluate(&cand, problem, state.solution.as_ref()) {
                Ok((b, sol)) => {
                    let accept = b.j.is_finite() && accepts(config, &state, b.j, step);
                    record.candidate = Some(b);
                    if accept {
                        record.accepted = true;
                        accepted_total += 1;
                        if b.j < state.best.1.j {
                            state.best = (cand.clone(), b);
                            best_step = Some(step);
                        }
                        state.current = cand;
                        state.current_j = b;
                        state.solution = sol;
                    }
                }
                Err(OptimizerError::Initial(e)) => {
                    failures += 1;
                    record.note = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
        } else if let Proposal::Rejected { reason, .. } = proposal {
            record.note = Some(reason.to_string());
        }
        record.best_j = state.best.1.j;
        since_accept = if record.accepted { 0 } else { since_accept + 1 };
        on_step(&record);
        records.push(record);
        state.step += 1;
        state.temperature *= config.cooling;
        if since_accept >= config.stall_k {
            stop = StopReason::Stall;
            break;
        }
    }

    Ok(OptimizationTrace {
        records,
        initial,
        best: state.best,
        best_step,
        final_state: state.current,
        accepted: accepted_total,
        solver_failures: failures,
        stop,
    })
}

fn accepts(config: &OptimizerConfig, state: &OptimizerState, j: f64, step: usize) -> bool {
    let dj = j - state.current_j.j;
    if dj < 0.0 || (state.current_j.j.is_infinite() && j.is_finite()) {
        return true;
    }
    if config.mode == Mode::Greedy || state.temperature <= 0.0 || !dj.is_finite() {
        return false;
    }
    let mut rng = stream_rng(state.rng_seed, 2 * step as u64 + 1);
    rng.random_range(0.0..1.0) < (-dj / state.temperature).exp()
}

impl OptimizationTrace {
    /// CSV with one row per step.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,proposed_kind,accepted,J,dissipation,navier,perimeter,volume,best_J\n");
        let num = |x: f64| if x.is_nan() { String::new() } else { format!("{x}") };
        for r in &self.records {
            let kind = r.kind.map(|k| k.to_string()).unwrap_or_else(|| "none".into());
            let (j, d, n, p, v) = match &r.candidate {
                Some(b) => (num(b.j), num(b.dissipation), num(b.navier()), num(b.perimeter()), num(b.volume)),
                None => Default::default(),
            };
            s += &format!("{},{kind},{},{j},{d},{n},{p},{v},{}\n", r.step, r.accepted, num(r.best_j));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, ShapeSpec};

    fn problem(steps: usize, mode: Mode, penalty: VolumePenalty) -> Problem {
        let g = Grid::new(32, 16, 2.0, 1.0).unwrap();
        let initial = rasterize(&g, &[ShapeSpec::Disk { center: [1.0, 0.5], radius: 0.15 }]).unwrap();
        Problem {
            initial,
            phys: PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]),
            c: 1.0,
            penalty,
            solver: SolverOptions::new(1e-8, 2000),
            config: OptimizerConfig { mode, steps, seed: 42, temp0: 1.0, ..Default::default() },
        }
    }

    fn state_for(field: ObstacleField, step: usize, seed: u64) -> OptimizerState {
        let b = EnergyBreakdown {
            dissipation: 0.0,
            navier_bulk: 0.0,
            navier_screen: 0.0,
            perim_bulk_term: 0.0,
            perim_screen_term: 0.0,
            volume_term: 0.0,
            j: 0.0,
            drag_energy: None,
            volume: 0.0,
            mu: 1.0,
            beta: 1.0,
            c: 1.0,
            flags: Default::default(),
        };
        OptimizerState { current: field.clone(), current_j: b, best: (field, b), temperature: 0.0, step, rng_seed: seed, solution: None }
    }

    #[test]
    fn empty_obstacle_only_adds() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let field = ObstacleField::empty(g);
        let cfg = OptimizerConfig::default();
        for step in 0..300 {
            let p = propose_move(&state_for(field.clone(), step, 5), &cfg);
            if let Proposal::Move(m) = p {
                assert!(matches!(m.kind, MoveKind::FlipCellBlock | MoveKind::GrowScreen), "{:?}", m.kind);
                let mut f = field.clone();
                m.apply(&mut f);
                assert!(f.n_solid() + f.n_screen() > 0);
            }
        }
    }

    #[test]
    fn shrinking_unit_run_deletes_it() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let mut field = ObstacleField::empty(g);
        field.toggle_screen(g.v_face(8, 8));
        let cfg = OptimizerConfig::default();
        let mut seen = false;
        for step in 0..500 {
            if let Proposal::Move(m) = propose_move(&state_for(field.clone(), step, 1), &cfg) {
                if m.kind == MoveKind::ShrinkScreen {
                    let mut f = field.clone();
                    m.apply(&mut f);
                    assert_eq!(f.n_screen(), 0);
                    seen = true;
                }
            }
        }
        assert!(seen);
    }

    #[test]
    fn replay_gives_identical_move() {
        let p = problem(0, Mode::Greedy, VolumePenalty::default());
        for step in [0, 7, 123] {
            let a = propose_move(&state_for(p.initial.clone(), step, 9), &p.config);
            let b = propose_move(&state_for(p.initial.clone(), step, 9), &p.config);
            assert_eq!(a, b);
            assert!(!a.rng_draw().is_empty());
        }
    }

    #[test]
    fn moves_revert_exactly() {
        let p = problem(0, Mode::Greedy, VolumePenalty::default());
        let mut field = p.initial.clone();
        field.toggle_screen(field.grid().v_face(20, 8));
        for step in 0..200 {
            if let Proposal::Move(m) = propose_move(&state_for(field.clone(), step, 3), &p.config) {
                let mut f = field.clone();
                m.apply(&mut f);
                assert!(f.validate().is_ok());
                m.revert(&mut f);
                assert_eq!(f, field);
            }
        }
    }

    #[test]
    fn zero_budget_is_a_no_op() {
        let p = problem(0, Mode::Greedy, VolumePenalty::default());
        let t = optimize(&p).unwrap();
        assert!(t.records.is_empty());
        assert_eq!(t.best.0, p.initial);
        assert_eq!(t.to_csv().lines().count(), 1);
    }

    #[test]
    fn greedy_strictly_decreases() {
        let p = problem(60, Mode::Greedy, VolumePenalty::Linear { lambda: 2000.0 });
        let t = optimize(&p).unwrap();
        let js: Vec<f64> = t.records.iter().filter(|r| r.accepted).map(|r| r.candidate.unwrap().j).collect();
        assert!(!js.is_empty());
        assert!(js.windows(2).all(|w| w[1] < w[0]));
        assert!(js[0] < t.initial.j);
        assert!(t.best.1.volume > t.initial.volume);
    }

    #[test]
    fn zero_temperature_anneal_matches_greedy() {
        let mut a = problem(40, Mode::Anneal, VolumePenalty::Linear { lambda: 500.0 });
        a.config.temp0 = 0.0;
        let g = problem(40, Mode::Greedy, VolumePenalty::Linear { lambda: 500.0 });
        let ta = optimize(&a).unwrap();
        let tg = optimize(&g).unwrap();
        let acc = |t: &OptimizationTrace| t.records.iter().map(|r| r.accepted).collect::<Vec<_>>();
        assert_eq!(acc(&ta), acc(&tg));
    }

    #[test]
    fn anneal_best_is_monotone_and_replayable() {
        let p = problem(40, Mode::Anneal, VolumePenalty::Linear { lambda: 50.0 });
        let t1 = optimize(&p).unwrap();
        let t2 = optimize(&p).unwrap();
        assert!(t1.records.windows(2).all(|w| w[1].best_j <= w[0].best_j));
        assert_eq!(t1.to_csv(), t2.to_csv());
        assert_eq!(t1.best.0, t2.best.0);
    }

    #[test]
    fn stall_stops_early() {
        let mut p = problem(100, Mode::Greedy, VolumePenalty::Hard { m0: 0.0, band: 0.0 });
        p.config.stall_k = 5;
        p.config.screens = false;
        let t = optimize(&p).unwrap();
        assert_eq!(t.stop, StopReason::Stall);
        assert!(t.records.len() <= 100);
    }
}
