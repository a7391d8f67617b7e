//! Pressure Schur-complement conjugate gradient with a sparse Cholesky
//! velocity solve.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Par, Side};

use super::form::{DiscreteEnergy, Slot};
use super::SolverError;
use crate::geometry::ObstacleField;

/// Compressed sparse rows.
pub(crate) struct Csr {
    pub ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn nrows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.ptr[r]..self.ptr[r + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            *yr = s;
        }
    }

    pub fn mul_t(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            for k in self.ptr[r]..self.ptr[r + 1] {
                y[self.col[k] as usize] += self.val[k] * xr;
            }
        }
    }
}

/// Divergence rows, one per fluid cell: `h (u_E - u_W + v_N - v_S)`.
pub(crate) struct Divergence {
    pub b: Csr,
    /// Right-hand side from fixed face values, so that `B x = g` means
    /// discretely divergence free.
    pub g: Vec<f64>,
    pub cells: Vec<usize>,
    /// Fluid component label per row.
    pub component: Vec<u32>,
    pub n_components: usize,
}

impl Divergence {
    pub fn build(form: &DiscreteEnergy, obstacle: &ObstacleField) -> Self {
        let grid = &form.grid;
        let h = grid.h();
        let mut ptr = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut g = Vec::new();
        let mut cells = Vec::new();
        let mut row_of = vec![u32::MAX; grid.n_cells()];
        for c in 0..grid.n_cells() {
            if obstacle.is_solid(c) {
                continue;
            }
            let (i, j) = grid.cell_ij(c);
            let entries = [
                (form.u_slots[grid.u_index(i + 1, j)], h),
                (form.u_slots[grid.u_index(i, j)], -h),
                (form.v_slots[grid.v_index(i, j + 1)], h),
                (form.v_slots[grid.v_index(i, j)], -h),
            ];
            let mut rhs = 0.0;
            for (slot, w) in entries {
                match slot {
                    Slot::Free(k) => {
                        col.push(k);
                        val.push(w);
                    }
                    Slot::Fixed(v) => rhs -= w * v,
                }
            }
            row_of[c] = cells.len() as u32;
            cells.push(c);
            g.push(rhs);
            ptr.push(col.len());
        }

        // components through open faces
        let mut component = vec![u32::MAX; cells.len()];
        let mut n_components = 0;
        let mut stack = Vec::new();
        for start in 0..cells.len() {
            if component[start] != u32::MAX {
                continue;
            }
            component[start] = n_components as u32;
            stack.push(start);
            while let Some(r) = stack.pop() {
                let c = cells[r];
                for nb in grid.neighbors(c) {
                    let rn = row_of[nb];
                    if rn == u32::MAX || component[rn as usize] != u32::MAX {
                        continue;
                    }
                    let f = grid.face_between(c, nb).expect("neighbors share a face");
                    if obstacle.is_blocked(f) {
                        continue;
                    }
                    component[rn as usize] = n_components as u32;
                    stack.push(rn as usize);
                }
            }
            n_components += 1;
        }

        Self {
            b: Csr { ptr, col, val },
            g,
            cells,
            component,
            n_components,
        }
    }

    /// Removes the mean of `r` on each fluid component.
    pub fn project(&self, r: &mut [f64]) {
        let mut sum = vec![0.0; self.n_components];
        let mut cnt = vec![0usize; self.n_components];
        for (k, &v) in r.iter().enumerate() {
            let c = self.component[k] as usize;
            sum[c] += v;
            cnt[c] += 1;
        }
        for (k, v) in r.iter_mut().enumerate() {
            let c = self.component[k] as usize;
            *v -= sum[c] / cnt[c] as f64;
        }
    }
}

pub(crate) struct VelocityOperator {
    llt: Option<Llt<u32, f64>>,
    n: usize,
    full: Csr,
    pub b: Vec<f64>,
}

impl VelocityOperator {
    pub fn build(form: &DiscreteEnergy) -> Result<Self, SolverError> {
        let n = form.n_dofs;
        let (mut trip, b) = form.matrix();
        trip.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(trip.len() / 2);
        for (r, c, v) in trip {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        // full symmetric rows for residual evaluation
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in &merged {
            rows[r as usize].push((c, v));
            if r != c {
                rows[c as usize].push((r, v));
            }
        }
        let mut ptr = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            for (c, v) in row {
                col.push(c);
                val.push(v);
            }
            ptr.push(col.len());
        }
        let full = Csr { ptr, col, val };
        if n == 0 {
            return Ok(Self { llt: None, n, full, b });
        }
        let triplets: Vec<Triplet<u32, u32, f64>> =
            merged.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let mat = SparseColMat::<u32, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        faer::set_global_parallelism(Par::Seq);
        let llt = mat
            .sp_cholesky(Side::Lower)
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        Ok(Self { llt: Some(llt), n, full, b })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        if let Some(llt) = &self.llt {
            llt.solve_in_place(MatMut::from_column_major_slice_mut(x, self.n, 1));
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.full.mul(x, y);
    }
}

pub(crate) struct SchurResult {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
    pub divergence_inf: f64,
    pub momentum_inf: f64,
}

/// Solves `A x - B^T p = -b`, `B x = g`.
pub(crate) fn schur_cg(
    a: &VelocityOperator,
    div: &Divergence,
    p0: Vec<f64>,
    tol: f64,
    max_iter: usize,
    scale: f64,
    momentum_scale: f64,
) -> Result<SchurResult, SolverError> {
    let n = a.n;
    let m = div.b.nrows();
    let mut p = p0;
    div.project(&mut p);

    let velocity = |p: &[f64], x: &mut Vec<f64>| {
        div.b.mul_t(p, x);
        for (xi, bi) in x.iter_mut().zip(&a.b) {
            *xi -= bi;
        }
        a.solve_in_place(x);
    };
    let residual = |x: &[f64], r: &mut Vec<f64>| {
        div.b.mul(x, r);
        for (ri, gi) in r.iter_mut().zip(&div.g) {
            *ri = gi - *ri;
        }
    };
    let norm_inf = |r: &[f64]| r.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) / scale;

    let mut x = vec![0.0; n];
    let mut r = vec![0.0; m];
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; m];
    let mut iterations = 0;

    loop {
        velocity(&p, &mut x);
        residual(&x, &mut r);
        div.project(&mut r);
        if norm_inf(&r) <= tol || m == 0 {
            break;
        }
        if iterations >= max_iter {
            return Err(SolverError::SolverDiverged { iterations, divergence: norm_inf(&r) });
        }
        let mut d = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        while iterations < max_iter {
            iterations += 1;
            div.b.mul_t(&d, &mut z);
            a.solve_in_place(&mut z);
            div.b.mul(&z, &mut q);
            div.project(&mut q);
            let dq: f64 = d.iter().zip(&q).map(|(a, b)| a * b).sum();
            if dq <= 0.0 || !dq.is_finite() {
                break;
            }
            let alpha = rr / dq;
            for k in 0..m {
                p[k] += alpha * d[k];
                r[k] -= alpha * q[k];
            }
            if norm_inf(&r) <= 0.5 * tol {
                break;
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..m {
                d[k] = r[k] + beta * d[k];
            }
        }
        div.project(&mut p);
        if iterations >= max_iter {
            velocity(&p, &mut x);
            residual(&x, &mut r);
            div.project(&mut r);
            if norm_inf(&r) > tol {
                return Err(SolverError::SolverDiverged { iterations, divergence: norm_inf(&r) });
            }
            break;
        }
    }

    residual(&x, &mut r);
    let divergence_inf = norm_inf(&r);
    let mut ax = vec![0.0; n];
    a.apply(&x, &mut ax);
    let mut btp = vec![0.0; n];
    div.b.mul_t(&p, &mut btp);
    let momentum_inf = ax
        .iter()
        .zip(&a.b)
        .zip(&btp)
        .fold(0.0f64, |acc, ((ax, b), bp)| acc.max((ax + b - bp).abs()))
        / momentum_scale;
    Ok(SchurResult { x, p, iterations, divergence_inf, momentum_inf })
}
