//! Named batches of numerical checks with a CSV report.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::energy::{drag_surface, energy_breakdown, VolumePenalty};
use crate::geometry::{rasterize, Grid, ShapeSpec};
use crate::scenario::{parse_scenario_str, Scenario, ScenarioError};
use crate::stokes::{assemble_and_solve, PhysicsParams, SolverOptions};
use crate::theory::{
    beta_monotonicity, covering_select, decay_estimate, disk_screen_obstacle, embedding_constant,
    random_covering_instance, TheoryError, DECAY_C0_CAP,
};

/// Scenario files shipped with the crate, by file stem.
pub const SHIPPED_SCENARIOS: &[(&str, &str)] = &[
    ("disk_drag", include_str!("../../../scenarios/disk_drag.toml")),
    ("greedy_linear", include_str!("../../../scenarios/greedy_linear.toml")),
    ("emergent_screens", include_str!("../../../scenarios/emergent_screens.toml")),
];

pub fn shipped_scenarios() -> Result<Vec<(&'static str, Scenario)>, ScenarioError> {
    SHIPPED_SCENARIOS.iter().map(|(name, text)| Ok((*name, parse_scenario_str(text)?))).collect()
}

#[derive(Debug, Error)]
pub enum ValidationRunError {
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("unknown suite `{0}` (expected one of quick, full, covering, decay, beta, embedding, optimality, drag)")]
    UnknownSuite(String),
}

impl From<crate::stokes::SolverError> for ValidationRunError {
    fn from(e: crate::stokes::SolverError) -> Self {
        Self::Theory(e.into())
    }
}

impl From<crate::energy::EnergyError> for ValidationRunError {
    fn from(e: crate::energy::EnergyError) -> Self {
        Self::Theory(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Quick,
    Full,
    Covering,
    Decay,
    Beta,
    Embedding,
    Optimality,
    Drag,
}

impl FromStr for Suite {
    type Err = ValidationRunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "quick" => Suite::Quick,
            "full" => Suite::Full,
            "covering" => Suite::Covering,
            "decay" => Suite::Decay,
            "beta" => Suite::Beta,
            "embedding" => Suite::Embedding,
            "optimality" => Suite::Optimality,
            "drag" => Suite::Drag,
            other => return Err(ValidationRunError::UnknownSuite(other.into())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRecord {
    pub check: String,
    pub statistic: f64,
    /// `None` for observations that are reported but not judged.
    pub threshold: Option<f64>,
    pub pass: bool,
}

impl CheckRecord {
    fn at_most(check: &str, statistic: f64, threshold: f64) -> Self {
        Self { check: check.into(), statistic, threshold: Some(threshold), pass: statistic <= threshold }
    }

    fn at_least(check: &str, statistic: f64, threshold: f64) -> Self {
        Self { check: check.into(), statistic, threshold: Some(threshold), pass: statistic >= threshold }
    }

    fn observation(check: &str, statistic: f64) -> Self {
        Self { check: check.into(), statistic, threshold: None, pass: true }
    }
}

impl fmt::Display for CheckRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.threshold.map(|t| format!("{t:e}")).unwrap_or_default();
        write!(f, "{},{:e},{},{}", self.check, self.statistic, t, self.pass)
    }
}

pub fn report_csv(records: &[CheckRecord]) -> String {
    let mut s = String::from("check,statistic,threshold,pass\n");
    for r in records {
        s += &format!("{r}\n");
    }
    s
}

/// Sizes of one suite run; `quick` shrinks grids and trial counts.
#[derive(Debug, Clone, Copy)]
struct Scale {
    covering_instances: usize,
    decay_trials: usize,
    decay_n: usize,
    drag_levels: [usize; 3],
    embedding_levels: [usize; 3],
}

const QUICK: Scale = Scale {
    covering_instances: 100,
    decay_trials: 5,
    decay_n: 64,
    drag_levels: [32, 64, 128],
    embedding_levels: [32, 64, 128],
};

const FULL: Scale = Scale {
    covering_instances: 1000,
    decay_trials: 50,
    decay_n: 128,
    drag_levels: [64, 128, 256],
    embedding_levels: [64, 128, 256],
};

pub fn run_suite(suite: Suite) -> Result<Vec<CheckRecord>, ValidationRunError> {
    let scale = if suite == Suite::Quick { QUICK } else { FULL };
    let mut out = Vec::new();
    let all = matches!(suite, Suite::Quick | Suite::Full);
    if all || suite == Suite::Covering {
        out.extend(covering_checks(scale.covering_instances)?);
    }
    if all || suite == Suite::Decay {
        out.extend(decay_checks(scale.decay_trials, scale.decay_n)?);
    }
    if all || suite == Suite::Beta {
        out.extend(beta_checks()?);
    }
    if all || suite == Suite::Embedding {
        out.extend(embedding_checks(scale.embedding_levels)?);
    }
    if all || suite == Suite::Optimality {
        out.extend(optimality_checks()?);
    }
    if all || suite == Suite::Drag {
        out.extend(drag_checks(scale.drag_levels)?);
    }
    Ok(out)
}

fn covering_checks(instances: usize) -> Result<Vec<CheckRecord>, ValidationRunError> {
    let mut out = Vec::new();
    for (d, eps) in [(2usize, 0.25), (3, 0.25)] {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + d as u64);
        let (mut worst, mut within, mut strict) = (0.0f64, 0usize, 0usize);
        for _ in 0..instances {
            let inst = random_covering_instance(&mut rng, d, eps);
            let r = covering_select(&inst)?;
            worst = worst.max(r.residual / eps);
            within += (r.within_eps && r.guaranteed) as usize;
            strict += r.strict as usize;
        }
        let n = instances as f64;
        out.push(CheckRecord::at_least(&format!("covering_d{d}_within_eps_fraction"), within as f64 / n, 1.0));
        out.push(CheckRecord::at_most(&format!("covering_d{d}_max_residual_over_eps"), worst, 1.0));
        out.push(CheckRecord::observation(&format!("covering_d{d}_strict_fraction"), strict as f64 / n));
    }
    Ok(out)
}

fn decay_checks(trials: usize, n: usize) -> Result<Vec<CheckRecord>, ValidationRunError> {
    let r = decay_estimate(trials, &[0.5, 0.25], n, 2024, &SolverOptions::default())?;
    let monotone = r.trials.iter().filter(|t| t.ratios[1] <= t.ratios[0]).count() as f64 / trials as f64;
    Ok(vec![
        CheckRecord::at_most("decay_c0_estimate", r.c0_estimate, DECAY_C0_CAP),
        CheckRecord::at_least("decay_monotone_fraction", monotone, 1.0),
    ])
}

fn disk_channel(nx: usize) -> Result<crate::geometry::ObstacleField, ValidationRunError> {
    let g = Grid::new(nx, nx / 2, 2.0, 1.0).map_err(TheoryError::from)?;
    Ok(rasterize(&g, &[ShapeSpec::Disk { center: [1.0, 0.5], radius: 0.15 }]).map_err(TheoryError::from)?)
}

fn beta_checks() -> Result<Vec<CheckRecord>, ValidationRunError> {
    let obs = disk_channel(128)?;
    let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
    let opts = SolverOptions::default();
    let sweep = beta_monotonicity(&obs, &phys, &[0.1, 1.0, 10.0, 100.0], &opts)?;
    let min_step = sweep.drags.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let near = beta_monotonicity(&obs, &phys, &[0.0, 1e-6], &opts)?;
    let rel = (near.drags[1] - near.drags[0]).abs() / near.drags[0];
    Ok(vec![
        CheckRecord::at_least("beta_min_drag_increment", min_step, -crate::theory::BETA_SLACK),
        CheckRecord::at_most("beta_zero_continuity_rel", rel, 1e-4),
    ])
}

fn embedding_checks(levels: [usize; 3]) -> Result<Vec<CheckRecord>, ValidationRunError> {
    let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
    let mut fields = Vec::new();
    for nx in levels {
        let obs = disk_screen_obstacle(nx)?;
        fields.push(assemble_and_solve(obs.grid(), &obs, &phys, &SolverOptions::default())?);
    }
    let e = embedding_constant(&fields)?;
    let lo = e.ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.ratios.iter().copied().fold(0.0, f64::max);
    Ok(vec![
        CheckRecord::observation("embedding_max_ratio", hi),
        CheckRecord::at_most("embedding_refinement_spread", (hi - lo) / lo, 0.2),
    ])
}

/// Largest `|first variation| / (mu V_ref ||phi||)` over 20 random admissible
/// perturbations of the flow around the scenario's initial obstacle.
pub fn optimality_statistic(s: &Scenario, seed: u64) -> Result<f64, ValidationRunError> {
    let obs = s.obstacle().map_err(ScenarioError::Validation)?;
    let phys = s.phys();
    let sol = assemble_and_solve(obs.grid(), &obs, &phys, &s.solver_options())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = phys.mu * sol.reference_speed();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let phi = sol.random_admissible_perturbation(&mut rng);
        let n = phi.norm();
        if n > 0.0 {
            worst = worst.max(sol.first_variation(&phi).abs() / (scale * n));
        }
    }
    Ok(worst)
}

fn optimality_checks() -> Result<Vec<CheckRecord>, ValidationRunError> {
    let mut out = Vec::new();
    for (name, s) in shipped_scenarios()? {
        let stat = optimality_statistic(&s, 9)?;
        out.push(CheckRecord::at_most(&format!("optimality_{name}"), stat, 10.0 * s.solver.tol));
    }
    Ok(out)
}

/// Relative gap between the surface and energy drag of the disk benchmark.
pub fn drag_gap(nx: usize) -> Result<f64, ValidationRunError> {
    let obs = disk_channel(nx)?;
    let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
    let sol = assemble_and_solve(obs.grid(), &obs, &phys, &SolverOptions::default())?;
    let energy = energy_breakdown(&sol, &obs, &phys, 0.0, &VolumePenalty::default())?
        .drag_energy
        .expect("uniform far field");
    let surface = drag_surface(&sol, &obs, &phys)?;
    Ok((surface - energy).abs() / energy)
}

fn drag_checks(levels: [usize; 3]) -> Result<Vec<CheckRecord>, ValidationRunError> {
    let gaps = levels.iter().map(|&n| drag_gap(n)).collect::<Result<Vec<_>, _>>()?;
    let worst_ratio = gaps.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    Ok(vec![
        CheckRecord::at_most("drag_gap_finest", gaps[2], 0.05),
        CheckRecord { check: "drag_gap_decreasing_max_ratio".into(), statistic: worst_ratio, threshold: Some(1.0), pass: worst_ratio < 1.0 },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_parse() {
        let s = shipped_scenarios().unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn suite_names() {
        assert_eq!("beta".parse::<Suite>().unwrap(), Suite::Beta);
        assert!("betaa".parse::<Suite>().is_err());
    }

    #[test]
    fn covering_suite_passes() {
        let r = run_suite(Suite::Covering).unwrap();
        assert!(r.iter().all(|c| c.pass), "{r:?}");
        let csv = report_csv(&r);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().nth(3).unwrap().ends_with(",,true"));
    }
}
