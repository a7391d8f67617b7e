//! Discrete dissipation-plus-friction functional on the staggered grid.
//!
//! The energy is a sum of weighted squares of affine forms in the velocity
//! unknowns:
//!
//! * strain terms, one per fluid cell and direction: `2 mu h^2 (du/dx)^2`,
//!   `2 mu h^2 (dv/dy)^2`;
//! * shear terms `mu h^2 (du/dy + dv/dx)^2` at corners surrounded by four
//!   fluid cells with no blocked edge;
//! * quarter-cell shear terms `mu h^2 / 4 (...)^2` at every other corner,
//!   built from a corner trace velocity per sector. A sector is a maximal
//!   group of fluid quarter-cells around the corner that are not separated by
//!   a blocked edge, so the two sides of a screen carry independent traces;
//! * friction terms `beta h / 2 |u_t|^2` for every blocked half-edge bounding
//!   a sector, where `u_t` is the sector trace tangential to that edge.
//!
//! Trace components normal to a bounding edge are pinned to zero. Traces on
//! the channel wall take the wall velocity.

use super::{PhysicsParams, WallLaw};
use crate::geometry::{FaceId, Grid, ObstacleField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Slot {
    Free(u32),
    Fixed(f64),
}

impl Slot {
    #[inline]
    pub(crate) fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Slot::Free(k) => x[k as usize],
            Slot::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TermKind {
    Strain,
    Shear,
    FrictionBulk,
    FrictionScreen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Owner {
    Cell(u32),
    /// Full corner stencil, shared equally by the four surrounding cells.
    Corner(u32, u32),
    Wall,
}

#[derive(Debug, Clone)]
pub(crate) struct Term {
    pub weight: f64,
    pub kind: TermKind,
    pub owner: Owner,
    pub len: u8,
    pub idx: [u32; 4],
    pub coef: [f64; 4],
    pub constant: f64,
}

impl Term {
    fn new(weight: f64, kind: TermKind, owner: Owner) -> Self {
        Self { weight, kind, owner, len: 0, idx: [0; 4], coef: [0.0; 4], constant: 0.0 }
    }

    fn add(&mut self, slot: Slot, c: f64) {
        match slot {
            Slot::Fixed(v) => self.constant += c * v,
            Slot::Free(k) => {
                for a in 0..self.len as usize {
                    if self.idx[a] == k {
                        self.coef[a] += c;
                        return;
                    }
                }
                let n = self.len as usize;
                self.idx[n] = k;
                self.coef[n] = c;
                self.len += 1;
            }
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut s = self.constant;
        for a in 0..self.len as usize {
            s += self.coef[a] * x[self.idx[a] as usize];
        }
        s
    }

    #[inline]
    pub fn apply(&self, phi: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.len as usize {
            s += self.coef[a] * phi[self.idx[a] as usize];
        }
        s
    }
}

/// Corner trace unknowns of one sector.
#[derive(Debug, Clone)]
pub(crate) struct Sector {
    pub corner: (usize, usize),
    pub quadrants: u8,
    pub slots: [Slot; 2],
    /// Bounding edges touch a screen.
    pub screen_side: bool,
    /// Blocked edges bounding the sector, with a screen flag.
    pub bounds: Vec<(FaceId, bool)>,
}

/// Energy split by origin.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct EnergyParts {
    pub dissipation: f64,
    pub friction_bulk: f64,
    pub friction_screen: f64,
}

pub(crate) struct DiscreteEnergy {
    pub grid: Grid,
    pub u_slots: Vec<Slot>,
    pub v_slots: Vec<Slot>,
    pub sectors: Vec<Sector>,
    pub n_dofs: usize,
    pub terms: Vec<Term>,
    pub mu: f64,
    /// Largest wall velocity magnitude, floored at a tiny positive value.
    pub reference_speed: f64,
}

impl DiscreteEnergy {
    /// `obstacle` must already be sealed.
    pub fn build(obstacle: &ObstacleField, phys: &PhysicsParams) -> Self {
        let grid = *obstacle.grid();
        let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
        let vel = &phys.velocity;
        let mut vref: f64 = 0.0;

        let mut n_dofs: u32 = 0;
        let mut u_slots = Vec::with_capacity(grid.n_u_faces());
        for j in 0..ny {
            for i in 0..=nx {
                let f = grid.u_face(i, j);
                let slot = if obstacle.is_blocked(f) {
                    Slot::Fixed(0.0)
                } else if i == 0 || i == nx {
                    let x = i as f64 * h;
                    let val = vel.u_face_mean(x, j as f64 * h, (j + 1) as f64 * h);
                    vref = vref.max(val.abs());
                    Slot::Fixed(val)
                } else {
                    n_dofs += 1;
                    Slot::Free(n_dofs - 1)
                };
                u_slots.push(slot);
            }
        }
        let mut v_slots = Vec::with_capacity(grid.n_v_faces());
        for j in 0..=ny {
            for i in 0..nx {
                let f = grid.v_face(i, j);
                let slot = if obstacle.is_blocked(f) {
                    Slot::Fixed(0.0)
                } else if j == 0 || j == ny {
                    let y = j as f64 * h;
                    let val = vel.v_face_mean(y, i as f64 * h, (i + 1) as f64 * h);
                    vref = vref.max(val.abs());
                    Slot::Fixed(val)
                } else {
                    n_dofs += 1;
                    Slot::Free(n_dofs - 1)
                };
                v_slots.push(slot);
            }
        }

        let mu = phys.mu;
        let beta = phys.beta;
        let no_slip = phys.wall_law == WallLaw::NoSlip;
        let mut terms = Vec::with_capacity(3 * grid.n_cells() + grid.n_cells());
        let us = |i: usize, j: usize| u_slots[grid.u_index(i, j)];
        let vs = |i: usize, j: usize| v_slots[grid.v_index(i, j)];

        // strain terms
        for j in 0..ny {
            for i in 0..nx {
                let c = grid.cell(i, j);
                if obstacle.is_solid(c) {
                    continue;
                }
                let mut t = Term::new(2.0 * mu * h * h, TermKind::Strain, Owner::Cell(c as u32));
                t.add(us(i + 1, j), 1.0 / h);
                t.add(us(i, j), -1.0 / h);
                terms.push(t);
                let mut t = Term::new(2.0 * mu * h * h, TermKind::Strain, Owner::Cell(c as u32));
                t.add(vs(i, j + 1), 1.0 / h);
                t.add(vs(i, j), -1.0 / h);
                terms.push(t);
            }
        }

        // corner terms
        let mut sectors = Vec::new();
        let fluid = |i: isize, j: isize| -> Option<usize> {
            grid.cell_checked(i, j).filter(|&c| !obstacle.is_solid(c))
        };
        for cj in 0..=ny {
            for ci in 0..=nx {
                let (a, b) = (ci as isize, cj as isize);
                // quarter-cells NE, NW, SW, SE
                let quads = [fluid(a, b), fluid(a - 1, b), fluid(a - 1, b - 1), fluid(a, b - 1)];
                if quads.iter().all(Option::is_none) {
                    continue;
                }
                // edges N, W, S, E; edge k separates quarter k and k + 1
                let edges: [Option<FaceId>; 4] = [
                    (cj < ny).then(|| grid.u_face(ci, cj)),
                    (ci > 0).then(|| grid.v_face(ci - 1, cj)),
                    (cj > 0).then(|| grid.u_face(ci, cj - 1)),
                    (ci < nx).then(|| grid.v_face(ci, cj)),
                ];
                let u_n = (cj < ny).then(|| us(ci, cj));
                let u_s = (cj > 0).then(|| us(ci, cj - 1));
                let v_e = (ci < nx).then(|| vs(ci, cj));
                let v_w = (ci > 0).then(|| vs(ci - 1, cj));
                let on_wall = ci == 0 || cj == 0 || ci == nx || cj == ny;

                if on_wall {
                    let [vx, vy] = vel.velocity(a as f64 * h, b as f64 * h);
                    vref = vref.max(vx.hypot(vy));
                    let trace = [Slot::Fixed(vx), Slot::Fixed(vy)];
                    let mut mask = 0u8;
                    for (q, cell) in quads.iter().enumerate() {
                        if let Some(c) = cell {
                            mask |= 1 << q;
                            terms.push(quarter_shear(q, *c, trace, u_n, u_s, v_e, v_w, mu, h));
                        }
                    }
                    sectors.push(Sector { corner: (ci, cj), quadrants: mask, slots: trace, screen_side: false, bounds: Vec::new() });
                    continue;
                }

                let blocked: [bool; 4] = edges.map(|e| obstacle.is_blocked(e.expect("interior corner")));
                if quads.iter().all(Option::is_some) && !blocked.iter().any(|&x| x) {
                    let mut t = Term::new(mu * h * h, TermKind::Shear, Owner::Corner(ci as u32, cj as u32));
                    t.add(u_n.unwrap(), 1.0 / h);
                    t.add(u_s.unwrap(), -1.0 / h);
                    t.add(v_e.unwrap(), 1.0 / h);
                    t.add(v_w.unwrap(), -1.0 / h);
                    terms.push(t);
                    continue;
                }

                let link = |k: usize| quads[k].is_some() && quads[(k + 1) % 4].is_some() && !blocked[k];
                for start in 0..4 {
                    if quads[start].is_none() || link((start + 3) % 4) {
                        continue;
                    }
                    let mut members = vec![start];
                    let mut last = start;
                    while link(last) {
                        last = (last + 1) % 4;
                        members.push(last);
                    }
                    let bounding = [(start + 3) % 4, last];
                    // N and S are vertical edges: they pin the x trace
                    let pin_u = no_slip || bounding.iter().any(|&e| e % 2 == 0);
                    let pin_v = no_slip || bounding.iter().any(|&e| e % 2 == 1);
                    let mut next_slot = |pinned: bool| {
                        if pinned {
                            Slot::Fixed(0.0)
                        } else {
                            n_dofs += 1;
                            Slot::Free(n_dofs - 1)
                        }
                    };
                    let trace = [next_slot(pin_u), next_slot(pin_v)];
                    let mut mask = 0u8;
                    for &q in &members {
                        mask |= 1 << q;
                        terms.push(quarter_shear(q, quads[q].unwrap(), trace, u_n, u_s, v_e, v_w, mu, h));
                    }
                    let mut screen_side = false;
                    let mut bounds = Vec::with_capacity(2);
                    for &e in &bounding {
                        let face = edges[e].unwrap();
                        let screen = obstacle.is_screen(face);
                        screen_side |= screen;
                        bounds.push((face, screen));
                        let tangential = if e % 2 == 0 { trace[1] } else { trace[0] };
                        if let Slot::Free(_) = tangential {
                            if beta > 0.0 {
                                let kind = if screen { TermKind::FrictionScreen } else { TermKind::FrictionBulk };
                                let mut t = Term::new(beta * h / 2.0, kind, Owner::Wall);
                                t.add(tangential, 1.0);
                                terms.push(t);
                            }
                        }
                    }
                    sectors.push(Sector { corner: (ci, cj), quadrants: mask, slots: trace, screen_side, bounds });
                }
            }
        }

        Self {
            grid,
            u_slots,
            v_slots,
            sectors,
            n_dofs: n_dofs as usize,
            terms,
            mu,
            reference_speed: if vref > 0.0 { vref } else { 1.0 },
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> EnergyParts {
        let mut parts = EnergyParts::default();
        for t in &self.terms {
            let v = t.value(x);
            let e = t.weight * v * v;
            match t.kind {
                TermKind::Strain | TermKind::Shear => parts.dissipation += e,
                TermKind::FrictionBulk => parts.friction_bulk += e,
                TermKind::FrictionScreen => parts.friction_screen += e,
            }
        }
        parts
    }

    /// `(A x + b) . phi`, half the first variation of the energy at `x` in
    /// direction `phi`.
    pub fn first_variation(&self, x: &[f64], phi: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.weight * t.value(x) * t.apply(phi)).sum()
    }

    /// Integral of `|e(u)|^2` over each cell.
    pub fn strain_density(&self, x: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut dens = vec![0.0; g.n_cells()];
        let two_mu = 2.0 * self.mu;
        for t in &self.terms {
            let v = t.value(x);
            let e = t.weight * v * v / two_mu;
            match (t.kind, t.owner) {
                (TermKind::Strain | TermKind::Shear, Owner::Cell(c)) => dens[c as usize] += e,
                (TermKind::Shear, Owner::Corner(ci, cj)) => {
                    let (ci, cj) = (ci as usize, cj as usize);
                    for c in [g.cell(ci, cj), g.cell(ci - 1, cj), g.cell(ci - 1, cj - 1), g.cell(ci, cj - 1)] {
                        dens[c] += 0.25 * e;
                    }
                }
                _ => {}
            }
        }
        dens
    }

    /// Symmetric velocity matrix as lower-triangle triplets and the linear
    /// term `b`.
    pub fn matrix(&self) -> (Vec<(u32, u32, f64)>, Vec<f64>) {
        let mut trip = Vec::with_capacity(self.terms.len() * 6);
        let mut b = vec![0.0; self.n_dofs];
        for t in &self.terms {
            let n = t.len as usize;
            for a in 0..n {
                b[t.idx[a] as usize] += t.weight * t.constant * t.coef[a];
                for c in 0..n {
                    let (r, s) = (t.idx[a], t.idx[c]);
                    if r >= s {
                        trip.push((r, s, t.weight * t.coef[a] * t.coef[c]));
                    }
                }
            }
        }
        (trip, b)
    }

    /// Full face arrays and sector traces from a dof vector.
    pub fn expand(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<[f64; 2]>) {
        let u = self.u_slots.iter().map(|s| s.value(x)).collect();
        let v = self.v_slots.iter().map(|s| s.value(x)).collect();
        let tr = self.sectors.iter().map(|s| [s.slots[0].value(x), s.slots[1].value(x)]).collect();
        (u, v, tr)
    }
}

/// Shear of one quarter-cell, using the sector trace at the corner.
#[allow(clippy::too_many_arguments)]
fn quarter_shear(
    q: usize,
    cell: usize,
    trace: [Slot; 2],
    u_n: Option<Slot>,
    u_s: Option<Slot>,
    v_e: Option<Slot>,
    v_w: Option<Slot>,
    mu: f64,
    h: f64,
) -> Term {
    let k = 2.0 / h;
    let mut t = Term::new(mu * h * h / 4.0, TermKind::Shear, Owner::Cell(cell as u32));
    match q {
        0 | 1 => {
            t.add(u_n.unwrap(), k);
            t.add(trace[0], -k);
        }
        _ => {
            t.add(trace[0], k);
            t.add(u_s.unwrap(), -k);
        }
    }
    match q {
        0 | 3 => {
            t.add(v_e.unwrap(), k);
            t.add(trace[1], -k);
        }
        _ => {
            t.add(trace[1], k);
            t.add(v_w.unwrap(), -k);
        }
    }
    t
}
