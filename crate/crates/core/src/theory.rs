//! Numerical checks of structural properties of the model: a finite covering
//! lemma, interior decay of Stokes strain, an L^4 embedding constant for
//! fields with jumps, and monotonicity of drag in the friction coefficient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::energy::{energy_breakdown, EnergyError, VolumePenalty};
use crate::geometry::{rasterize, GeometryError, Grid, ObstacleField, ShapeSpec};
use crate::stokes::{
    assemble_and_solve, BoundaryVelocity, FlowSolution, PhysicsParams, SolverError, SolverOptions, StreamFunction,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid covering instance: {0}")]
    InvalidInstance(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// covering

/// Sets over a finite weighted ground set.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveringInstance {
    pub weights: Vec<f64>,
    pub sets: Vec<Vec<usize>>,
    pub d: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringResult {
    pub index: usize,
    /// Mass of the chosen set outside every d-fold intersection.
    pub residual: f64,
    /// Smallest family size for which the bound is guaranteed.
    pub required_sets: u64,
    /// `false` when the family has fewer than `required_sets` sets.
    pub guaranteed: bool,
    /// `residual <= eps`.
    pub within_eps: bool,
    /// `residual < eps`.
    pub strict: bool,
}

/// Family size `N(d, eps)` for unit total mass:
/// `N(2, e) = ceil(1/e)`, `N(d + 1, e) = N(d, e/2) ceil(2/e)`.
pub fn covering_bound(d: usize, eps: f64) -> u64 {
    assert!(d >= 2 && eps > 0.0);
    // ignore the last few ulps so that a mass of 1 - 1e-16 keeps N(2, 1/4) = 4
    let ceil = |x: f64| (x * (1.0 - 1e-12)).ceil() as u64;
    if d == 2 {
        ceil(1.0 / eps)
    } else {
        covering_bound(d - 1, eps / 2.0).saturating_mul(ceil(2.0 / eps))
    }
}

impl CoveringInstance {
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        if self.d < 2 {
            return Err(TheoryError::InvalidInstance(format!("d must be >= 2, got {}", self.d)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(TheoryError::InvalidInstance(format!("eps must be positive, got {}", self.eps)));
        }
        if self.sets.is_empty() {
            return Err(TheoryError::InvalidInstance("no sets".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(TheoryError::InvalidInstance("weights must be finite and non-negative".into()));
        }
        let n = self.weights.len();
        if self.sets.iter().flatten().any(|&a| a >= n) {
            return Err(TheoryError::InvalidInstance("set element outside the ground set".into()));
        }
        Ok(())
    }
}

type Bits = Vec<u64>;

fn bits_of(set: &[usize], words: usize) -> Bits {
    let mut b = vec![0u64; words];
    for &a in set {
        b[a / 64] |= 1 << (a % 64);
    }
    b
}

/// ORs into `covered` the intersection of `acc` with every `left`-subset of
/// `sets[start..]`.
fn union_intersections(sets: &[Bits], start: usize, left: usize, acc: &Bits, covered: &mut Bits) {
    if left == 0 {
        for (c, a) in covered.iter_mut().zip(acc) {
            *c |= a;
        }
        return;
    }
    for k in start..=sets.len().saturating_sub(left) {
        if k >= sets.len() {
            break;
        }
        let next: Bits = acc.iter().zip(&sets[k]).map(|(a, b)| a & b).collect();
        if next.iter().all(|&w| w == 0) {
            continue;
        }
        union_intersections(sets, k + 1, left - 1, &next, covered);
    }
}

/// Brute force: unions the intersections of all `d`-subsets of the family,
/// then picks the set with the least uncovered mass.
pub fn covering_select(inst: &CoveringInstance) -> Result<CoveringResult, TheoryError> {
    inst.validate()?;
    let n_atoms = inst.weights.len();
    let words = n_atoms.div_ceil(64).max(1);
    let sets: Vec<Bits> = inst.sets.iter().map(|s| bits_of(s, words)).collect();
    let n = sets.len();
    let mut covered = vec![0u64; words];
    let full = vec![u64::MAX; words];
    union_intersections(&sets, 0, inst.d, &full, &mut covered);

    let mut best = (0usize, f64::INFINITY);
    for (i, s) in sets.iter().enumerate() {
        let mut r = 0.0;
        for (a, &w) in inst.weights.iter().enumerate() {
            let bit = 1u64 << (a % 64);
            if s[a / 64] & bit != 0 && covered[a / 64] & bit == 0 {
                r += w;
            }
        }
        if r < best.1 {
            best = (i, r);
        }
    }
    let mass = inst.total_mass();
    let required = if mass > 0.0 { covering_bound(inst.d, inst.eps / mass) } else { 1 };
    let slack = 1e-12 * mass.max(1.0);
    Ok(CoveringResult {
        index: best.0,
        residual: best.1,
        required_sets: required,
        guaranteed: n as u64 >= required,
        within_eps: best.1 <= inst.eps + slack,
        strict: best.1 < inst.eps,
    })
}

/// Random instance with exactly `covering_bound(d, eps)` sets over 8 to 64
/// atoms of random mass summing to one.
pub fn random_covering_instance<R: Rng + ?Sized>(rng: &mut R, d: usize, eps: f64) -> CoveringInstance {
    let n_atoms = rng.random_range(8..=64);
    let raw: Vec<f64> = (0..n_atoms).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let n_sets = covering_bound(d, eps) as usize;
    let sets = (0..n_sets)
        .map(|_| {
            let q: f64 = rng.random_range(0.0..1.0);
            (0..n_atoms).filter(|_| rng.random_bool(q)).collect()
        })
        .collect();
    CoveringInstance { weights, sets, d, eps }
}

// ---------------------------------------------------------------------------
// decay

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTrial {
    pub seed: u64,
    /// `ratio[k]` is the strain fraction inside the centred square of side
    /// `taus[k]`.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub taus: Vec<f64>,
    pub trials: Vec<DecayTrial>,
    /// Max over trials and taus of `ratio / tau^2`.
    pub c0_estimate: f64,
    pub cap: f64,
    pub within_cap: bool,
    /// `ratio` nondecreasing in `tau` for every trial.
    pub monotone: bool,
}

/// Empirical cap on the decay constant.
pub const DECAY_C0_CAP: f64 = 32.0;

/// Strain fraction inside centred squares of side `tau` of the unit square.
pub fn strain_ratios(sol: &FlowSolution, taus: &[f64]) -> Vec<f64> {
    let g = &sol.grid;
    let dens = sol.strain_density();
    let total: f64 = dens.iter().sum();
    let scale = sol.reference_speed().powi(2) * g.lx() * g.ly();
    if total <= 1e-20 * scale {
        return vec![0.0; taus.len()];
    }
    let h = g.h();
    taus.iter()
        .map(|&tau| {
            let (lo, hi) = (0.5 - 0.5 * tau, 0.5 + 0.5 * tau);
            let mut inside = 0.0;
            for (c, d) in dens.iter().enumerate() {
                let (i, j) = g.cell_ij(c);
                let (x0, y0) = (i as f64 * h, j as f64 * h);
                let eps = 1e-12;
                if x0 >= lo - eps && x0 + h <= hi + eps && y0 >= lo - eps && y0 + h <= hi + eps {
                    inside += d;
                }
            }
            inside / total
        })
        .collect()
}

/// Random stream function of degree 2 to 5 centred in the unit square.
pub fn random_stream<R: Rng + ?Sized>(rng: &mut R) -> StreamFunction {
    let degree = rng.random_range(2..=5u32);
    let mut terms = Vec::new();
    for total in 2..=degree {
        for a in 0..=total {
            terms.push((a, total - a, rng.random_range(-1.0..1.0)));
        }
    }
    StreamFunction::new([0.5, 0.5], terms)
}

/// Solves obstacle-free Stokes on the unit square with `n x n` cells for
/// `trials` random solenoidal wall data and measures interior strain decay.
pub fn decay_estimate(
    trials: usize,
    taus: &[f64],
    n: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<DecayReport, TheoryError> {
    if taus.iter().any(|&t| !(t > 0.0 && t <= 0.5)) {
        return Err(TheoryError::InvalidArgument("taus must lie in (0, 1/2]".into()));
    }
    let g = Grid::new(n, n, 1.0, 1.0)?;
    let obs = ObstacleField::empty(g);
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let trial_seed = seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let phys = PhysicsParams::new(1.0, 0.0, BoundaryVelocity::Stream(random_stream(&mut rng)));
        let sol = assemble_and_solve(&g, &obs, &phys, opts)?;
        out.push(DecayTrial { seed: trial_seed, ratios: strain_ratios(&sol, taus) });
    }
    Ok(summarize_decay(taus, out, DECAY_C0_CAP))
}

fn summarize_decay(taus: &[f64], trials: Vec<DecayTrial>, cap: f64) -> DecayReport {
    let mut c0: f64 = 0.0;
    let mut within = true;
    let mut monotone = true;
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    for t in &trials {
        for (k, &tau) in taus.iter().enumerate() {
            let r = t.ratios[k] / (tau * tau);
            c0 = c0.max(r);
            within &= t.ratios[k] <= cap * tau * tau;
        }
        monotone &= order.windows(2).all(|w| t.ratios[w[0]] <= t.ratios[w[1]]);
    }
    DecayReport { taus: taus.to_vec(), trials, c0_estimate: c0, cap, within_cap: within, monotone }
}

// ---------------------------------------------------------------------------
// beta monotonicity

#[derive(Debug, Clone, PartialEq)]
pub struct BetaSweep {
    pub betas: Vec<f64>,
    pub drags: Vec<f64>,
    /// Drag nondecreasing in beta within `1e-10` absolute slack.
    pub monotone: bool,
}

pub const BETA_SLACK: f64 = 1e-10;

/// Energy drag for each friction coefficient in `betas` (strictly ascending).
pub fn beta_monotonicity(
    obstacle: &ObstacleField,
    phys: &PhysicsParams,
    betas: &[f64],
    opts: &SolverOptions,
) -> Result<BetaSweep, TheoryError> {
    if betas.is_empty() || betas.windows(2).any(|w| w[0] >= w[1]) || betas[0] < 0.0 {
        return Err(TheoryError::InvalidArgument("betas must be non-negative and strictly ascending".into()));
    }
    let mut drags = Vec::with_capacity(betas.len());
    for &beta in betas {
        let p = phys.clone().with_beta(beta);
        let sol = assemble_and_solve(obstacle.grid(), obstacle, &p, opts)?;
        let b = energy_breakdown(&sol, obstacle, &p, 0.0, &VolumePenalty::default())?;
        drags.push(b.drag_energy.ok_or(EnergyError::NonConstantV)?);
    }
    let monotone = drags.windows(2).all(|w| w[1] >= w[0] - BETA_SLACK);
    Ok(BetaSweep { betas: betas.to_vec(), drags, monotone })
}

// ---------------------------------------------------------------------------
// embedding

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingEstimate {
    /// `||w||_4 / sqrt(E(w))` per field, `w = u - V` extended by `-V` into
    /// the obstacle.
    pub ratios: Vec<f64>,
    pub max: f64,
}

/// `||w||_4` and `E(w) = ∫|e(w)|^2 + ∫_J |w+|^2 + |w-|^2` for `w = u - V`.
pub fn embedding_terms(sol: &FlowSolution) -> Result<(f64, f64), TheoryError> {
    let vinf = sol.phys.velocity.uniform().ok_or(EnergyError::NonConstantV)?;
    if sol.obstacle.is_empty() {
        return Err(TheoryError::InvalidArgument(
            "the embedding check needs an obstacle: u - V must vanish near the walls".into(),
        ));
    }
    let g = &sol.grid;
    let h = g.h();
    let mut l4 = 0.0;
    for c in 0..g.n_cells() {
        let w = if sol.obstacle.is_solid(c) {
            [-vinf[0], -vinf[1]]
        } else {
            let u = sol.cell_velocity(c);
            [u[0] - vinf[0], u[1] - vinf[1]]
        };
        l4 += h * h * (w[0] * w[0] + w[1] * w[1]).powi(2);
    }
    let strain: f64 = sol.strain_density().iter().sum();
    let form = sol.form();
    let v2 = vinf[0] * vinf[0] + vinf[1] * vinf[1];
    let mut jump = 0.0;
    for (s, tr) in form.sectors.iter().zip(&sol.traces) {
        for &(_, screen) in &s.bounds {
            let w = [tr.velocity[0] - vinf[0], tr.velocity[1] - vinf[1]];
            let side = w[0] * w[0] + w[1] * w[1];
            jump += 0.5 * h * if screen { side } else { side + v2 };
        }
    }
    Ok((l4.powf(0.25), strain + jump))
}

pub fn embedding_constant(fields: &[FlowSolution]) -> Result<EmbeddingEstimate, TheoryError> {
    let mut ratios = Vec::with_capacity(fields.len());
    for f in fields {
        let (norm, energy) = embedding_terms(f)?;
        ratios.push(if norm == 0.0 { 0.0 } else { norm / energy.sqrt() });
    }
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(EmbeddingEstimate { ratios, max })
}

/// Disk with an attached horizontal screen in the 2 x 1 channel.
pub fn disk_screen_obstacle(nx: usize) -> Result<ObstacleField, TheoryError> {
    let g = Grid::new(nx, nx / 2, 2.0, 1.0)?;
    Ok(rasterize(
        &g,
        &[
            ShapeSpec::Disk { center: [0.9, 0.5], radius: 0.15 },
            ShapeSpec::Screen { points: vec![[1.05, 0.5], [1.35, 0.5]] },
        ],
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Per-atom membership counts: an atom of `E_i` is covered iff it lies in
    /// at least `d` sets of the family.
    fn oracle(inst: &CoveringInstance) -> Vec<f64> {
        let mut count = vec![0usize; inst.weights.len()];
        for s in &inst.sets {
            let mut seen = vec![false; inst.weights.len()];
            for &a in s {
                if !seen[a] {
                    seen[a] = true;
                    count[a] += 1;
                }
            }
        }
        inst.sets
            .iter()
            .map(|s| {
                let mut seen = vec![false; inst.weights.len()];
                s.iter()
                    .filter(|&&a| !std::mem::replace(&mut seen[a], true) && count[a] < inst.d)
                    .map(|&a| inst.weights[a])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn bound_recursion() {
        assert_eq!(covering_bound(2, 0.5), 2);
        assert_eq!(covering_bound(2, 0.25), 4);
        assert_eq!(covering_bound(2, 0.3), 4);
        assert_eq!(covering_bound(3, 0.25), 64);
        assert_eq!(covering_bound(4, 0.5), covering_bound(3, 0.25) * 4);
    }

    #[test]
    fn identical_sets_leave_nothing() {
        let inst = CoveringInstance { weights: vec![0.5, 0.5], sets: vec![vec![0, 1], vec![0, 1]], d: 2, eps: 0.5 };
        let r = covering_select(&inst).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.guaranteed && r.strict);
    }

    #[test]
    fn disjoint_halves_meet_bound_with_equality() {
        let inst = CoveringInstance { weights: vec![0.5, 0.5], sets: vec![vec![0], vec![1]], d: 2, eps: 0.5 };
        let r = covering_select(&inst).unwrap();
        assert_eq!(r.residual, 0.5);
        assert!(r.guaranteed);
        assert!(r.within_eps);
        assert!(!r.strict);
    }

    #[test]
    fn too_few_sets_is_flagged() {
        let inst = CoveringInstance { weights: vec![1.0; 4], sets: vec![vec![0], vec![1]], d: 3, eps: 0.25 };
        let r = covering_select(&inst).unwrap();
        assert!(!r.guaranteed);
        assert_eq!(r.required_sets, 1024);
    }

    #[test]
    fn invalid_instances() {
        let bad = CoveringInstance { weights: vec![1.0], sets: vec![vec![3]], d: 2, eps: 0.5 };
        assert!(covering_select(&bad).is_err());
        let bad = CoveringInstance { weights: vec![-1.0], sets: vec![vec![0]], d: 2, eps: 0.5 };
        assert!(covering_select(&bad).is_err());
    }

    proptest! {
        #[test]
        fn brute_force_matches_membership_counts(
            weights in prop::collection::vec(0.0f64..1.0, 1..=12),
            masks in prop::collection::vec(any::<u16>(), 1..=9),
            d in 2usize..=4,
        ) {
            let n = weights.len();
            let sets: Vec<Vec<usize>> = masks.iter().map(|m| (0..n).filter(|a| m >> a & 1 == 1).collect()).collect();
            let inst = CoveringInstance { weights, sets, d, eps: 0.25 };
            let r = covering_select(&inst).unwrap();
            let res = oracle(&inst);
            let min = res.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!((r.residual - min).abs() <= 1e-12);
            prop_assert!((res[r.index] - r.residual).abs() <= 1e-12);
        }
    }

    #[test]
    fn random_instances_respect_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (d, eps) in [(2, 0.25), (3, 0.25)] {
            for _ in 0..50 {
                let inst = random_covering_instance(&mut rng, d, eps);
                let r = covering_select(&inst).unwrap();
                assert!(r.guaranteed && r.within_eps, "{r:?}");
            }
        }
    }

    fn unit_square_solve(s: StreamFunction, n: usize) -> FlowSolution {
        let g = Grid::new(n, n, 1.0, 1.0).unwrap();
        let phys = PhysicsParams::new(1.0, 0.0, BoundaryVelocity::Stream(s));
        assemble_and_solve(&g, &ObstacleField::empty(g), &phys, &SolverOptions::new(1e-10, 5000)).unwrap()
    }

    #[test]
    fn rigid_rotation_has_zero_ratio() {
        let sol = unit_square_solve(StreamFunction::new([0.5, 0.5], vec![(2, 0, 0.5), (0, 2, 0.5)]), 32);
        assert_eq!(strain_ratios(&sol, &[0.5, 0.25]), vec![0.0, 0.0]);
    }

    #[test]
    fn pure_shear_ratio_is_area_fraction() {
        // u = (y, x)
        let sol = unit_square_solve(StreamFunction::new([0.5, 0.5], vec![(0, 2, 0.5), (2, 0, -0.5)]), 32);
        let r = strain_ratios(&sol, &[0.5, 0.25]);
        assert!((r[0] - 0.25).abs() < 1e-10, "{r:?}");
        assert!((r[1] - 0.0625).abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn decay_small_run() {
        let rep = decay_estimate(3, &[0.5, 0.25], 32, 11, &SolverOptions::new(1e-9, 5000)).unwrap();
        assert_eq!(rep.trials.len(), 3);
        assert!(rep.monotone && rep.within_cap);
        assert!(rep.c0_estimate > 0.0);
    }

    #[test]
    fn single_beta_is_monotone() {
        let obs = disk_screen_obstacle(32).unwrap();
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
        let s = beta_monotonicity(&obs, &phys, &[1.0], &SolverOptions::default()).unwrap();
        assert!(s.monotone);
        assert!(beta_monotonicity(&obs, &phys, &[1.0, 1.0], &SolverOptions::default()).is_err());
    }

    #[test]
    fn drag_is_continuous_at_zero_friction() {
        let obs = disk_screen_obstacle(32).unwrap();
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
        let s = beta_monotonicity(&obs, &phys, &[0.0, 1e-6], &SolverOptions::new(1e-10, 5000)).unwrap();
        assert!((s.drags[1] - s.drags[0]).abs() <= 1e-4 * s.drags[0]);
        assert!(s.monotone);
    }

    #[test]
    fn embedding_needs_obstacle() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
        let sol = assemble_and_solve(&g, &ObstacleField::empty(g), &phys, &SolverOptions::default()).unwrap();
        assert!(embedding_constant(&[sol]).is_err());
        assert_eq!(embedding_constant(&[]).unwrap().max, 0.0);
    }

    #[test]
    fn embedding_ratio_is_finite() {
        let obs = disk_screen_obstacle(32).unwrap();
        let phys = PhysicsParams::uniform(1.0, 1.0, [1.0, 0.0]);
        let sol = assemble_and_solve(obs.grid(), &obs, &phys, &SolverOptions::default()).unwrap();
        let e = embedding_constant(&[sol]).unwrap();
        assert!(e.max.is_finite() && e.max > 0.0);
    }
}
