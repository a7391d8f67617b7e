//! Channel grid, obstacle representation and measures.
//!
//! The channel `[0, lx] x [0, ly]` is split into `nx x ny` square cells of
//! side `h`. Velocity lives on faces (MAC layout):
//!
//! * u-faces are the vertical faces `x = i h`, `i in 0..=nx`, carrying the
//!   x-velocity; there are `(nx + 1) * ny` of them.
//! * v-faces are the horizontal faces `y = j h`, `j in 0..=ny`, carrying the
//!   y-velocity; there are `nx * (ny + 1)` of them.
//!
//! A [`FaceId`] numbers u-faces first, then v-faces. An obstacle is a set of
//! solid cells (the bulk body) plus a set of blocked faces (screens), which
//! are the volumeless parts of the obstacle.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Minimal number of cells per direction.
pub const MIN_CELLS: usize = 8;

/// Distance (in cells) every obstacle piece must keep from the channel walls.
pub const DEFAULT_MARGIN: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("TooCoarse: grid {nx}x{ny} is below the minimum of {MIN_CELLS} cells per direction")]
    TooCoarse { nx: usize, ny: usize },
    #[error("NonSquareCells: lx/nx = {hx} differs from ly/ny = {hy}")]
    NonSquareCells { hx: f64, hy: f64 },
    #[error("InvalidLength: domain lengths must be positive and finite (lx = {lx}, ly = {ly})")]
    InvalidLength { lx: f64, ly: f64 },
    #[error("TouchesBoundary: {0}")]
    TouchesBoundary(String),
    #[error("ScreenOverlapsSolid: screen face {0:?} is adjacent to a solid cell")]
    ScreenOverlapsSolid(Face),
    #[error("InvalidShape: {0}")]
    InvalidShape(String),
    #[error("GridMismatch: obstacle and grid differ")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    h: f64,
}

/// Decoded face location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Face {
    /// Vertical face at `x = i h` spanning cell row `j`.
    U { i: usize, j: usize },
    /// Horizontal face at `y = j h` spanning cell column `i`.
    V { i: usize, j: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceId(pub usize);

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, GeometryError> {
        if nx < MIN_CELLS || ny < MIN_CELLS {
            return Err(GeometryError::TooCoarse { nx, ny });
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(GeometryError::InvalidLength { lx, ly });
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        if (hx - hy).abs() > 1e-12 * hx.max(hy) {
            return Err(GeometryError::NonSquareCells { hx, hy });
        }
        Ok(Self { nx, ny, lx, ly, h: hx })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    /// Cell side length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }
    pub fn n_u_faces(&self) -> usize {
        (self.nx + 1) * self.ny
    }
    pub fn n_v_faces(&self) -> usize {
        self.nx * (self.ny + 1)
    }
    pub fn n_faces(&self) -> usize {
        self.n_u_faces() + self.n_v_faces()
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    /// Cell index for signed coordinates, `None` outside the grid.
    pub fn cell_checked(&self, i: isize, j: isize) -> Option<usize> {
        if i < 0 || j < 0 || i >= self.nx as isize || j >= self.ny as isize {
            None
        } else {
            Some(self.cell(i as usize, j as usize))
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    /// Index into the u-face array (`(nx + 1) * ny` entries).
    #[inline]
    pub fn u_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Index into the v-face array (`nx * (ny + 1)` entries).
    #[inline]
    pub fn v_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn u_face(&self, i: usize, j: usize) -> FaceId {
        FaceId(self.u_index(i, j))
    }

    pub fn v_face(&self, i: usize, j: usize) -> FaceId {
        FaceId(self.n_u_faces() + self.v_index(i, j))
    }

    pub fn face(&self, id: FaceId) -> Face {
        let nu = self.n_u_faces();
        if id.0 < nu {
            Face::U { i: id.0 % (self.nx + 1), j: id.0 / (self.nx + 1) }
        } else {
            let k = id.0 - nu;
            Face::V { i: k % self.nx, j: k / self.nx }
        }
    }

    pub fn face_id(&self, face: Face) -> FaceId {
        match face {
            Face::U { i, j } => self.u_face(i, j),
            Face::V { i, j } => self.v_face(i, j),
        }
    }

    /// The two cells sharing a face: (left, right) for u-faces and
    /// (below, above) for v-faces. Boundary faces have one `None`.
    pub fn face_cells(&self, id: FaceId) -> [Option<usize>; 2] {
        match self.face(id) {
            Face::U { i, j } => [
                (i > 0).then(|| self.cell(i - 1, j)),
                (i < self.nx).then(|| self.cell(i, j)),
            ],
            Face::V { i, j } => [
                (j > 0).then(|| self.cell(i, j - 1)),
                (j < self.ny).then(|| self.cell(i, j)),
            ],
        }
    }

    pub fn is_boundary_face(&self, id: FaceId) -> bool {
        match self.face(id) {
            Face::U { i, .. } => i == 0 || i == self.nx,
            Face::V { j, .. } => j == 0 || j == self.ny,
        }
    }

    /// Endpoints of a face as corner indices `(ci, cj)`.
    pub fn face_corners(&self, id: FaceId) -> [(usize, usize); 2] {
        match self.face(id) {
            Face::U { i, j } => [(i, j), (i, j + 1)],
            Face::V { i, j } => [(i, j), (i + 1, j)],
        }
    }

    /// Faces of a cell in the order west, east, south, north.
    pub fn cell_faces(&self, c: usize) -> [FaceId; 4] {
        let (i, j) = self.cell_ij(c);
        [self.u_face(i, j), self.u_face(i + 1, j), self.v_face(i, j), self.v_face(i, j + 1)]
    }

    /// 4-neighbours of a cell that lie inside the grid.
    pub fn neighbors(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.cell_ij(c);
        let (i, j) = (i as isize, j as isize);
        [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
            .into_iter()
            .filter_map(move |(a, b)| self.cell_checked(a, b))
    }

    /// Face between two edge-adjacent cells.
    pub fn face_between(&self, a: usize, b: usize) -> Option<FaceId> {
        let (ia, ja) = self.cell_ij(a);
        let (ib, jb) = self.cell_ij(b);
        if ja == jb && ib == ia + 1 {
            Some(self.u_face(ib, ja))
        } else if ja == jb && ia == ib + 1 {
            Some(self.u_face(ia, ja))
        } else if ia == ib && jb == ja + 1 {
            Some(self.v_face(ia, jb))
        } else if ia == ib && ja == jb + 1 {
            Some(self.v_face(ia, ja))
        } else {
            None
        }
    }

    /// Nearest grid corner to a physical point.
    pub fn snap_to_corner(&self, p: [f64; 2]) -> (isize, isize) {
        ((p[0] / self.h).round() as isize, (p[1] / self.h).round() as isize)
    }
}

/// Per-cell fluid/solid state plus screen faces on one grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObstacleField {
    grid: GridKey,
    solid: Vec<bool>,
    screen: Vec<bool>,
    margin: usize,
}

// `Grid` holds floats; the field only needs its shape for equality.
#[derive(Debug, Clone, Copy)]
struct GridKey(Grid);

impl PartialEq for GridKey {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}
impl Eq for GridKey {}

impl ObstacleField {
    /// Obstacle-free field with the standard two-cell margin.
    pub fn empty(grid: Grid) -> Self {
        Self::empty_with_margin(grid, DEFAULT_MARGIN)
    }

    /// Obstacle-free field with a custom wall margin. Margin 0 lets solid
    /// cells reach the channel walls and is meant for verification fixtures
    /// such as a slab spanning the full channel width.
    pub fn empty_with_margin(grid: Grid, margin: usize) -> Self {
        Self {
            grid: GridKey(grid),
            solid: vec![false; grid.n_cells()],
            screen: vec![false; grid.n_faces()],
            margin,
        }
    }

    /// Builds and validates a field from explicit cells and screen faces.
    pub fn from_parts(
        grid: Grid,
        solid_cells: impl IntoIterator<Item = usize>,
        screen_faces: impl IntoIterator<Item = FaceId>,
        margin: usize,
    ) -> Result<Self, GeometryError> {
        let mut field = Self::empty_with_margin(grid, margin);
        for c in solid_cells {
            if c >= grid.n_cells() {
                return Err(GeometryError::InvalidShape(format!("cell index {c} out of range")));
            }
            field.solid[c] = true;
        }
        for f in screen_faces {
            if f.0 >= grid.n_faces() {
                return Err(GeometryError::InvalidShape(format!("face index {} out of range", f.0)));
            }
            field.screen[f.0] = true;
        }
        field.validate()?;
        Ok(field)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid.0
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    #[inline]
    pub fn is_solid(&self, c: usize) -> bool {
        self.solid[c]
    }

    #[inline]
    pub fn is_screen(&self, f: FaceId) -> bool {
        self.screen[f.0]
    }

    pub fn solid_mask(&self) -> &[bool] {
        &self.solid
    }

    pub fn solid_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.solid.iter().enumerate().filter(|(_, &s)| s).map(|(c, _)| c)
    }

    pub fn screen_faces(&self) -> impl Iterator<Item = FaceId> + '_ {
        self.screen.iter().enumerate().filter(|(_, &s)| s).map(|(f, _)| FaceId(f))
    }

    pub fn n_solid(&self) -> usize {
        self.solid.iter().filter(|&&s| s).count()
    }

    pub fn n_screen(&self) -> usize {
        self.screen.iter().filter(|&&s| s).count()
    }

    pub fn is_empty(&self) -> bool {
        self.n_solid() == 0 && self.n_screen() == 0
    }

    /// Flips a cell between fluid and solid without validation.
    pub fn toggle_cell(&mut self, c: usize) {
        self.solid[c] = !self.solid[c];
    }

    /// Flips a face in or out of the screen set without validation.
    pub fn toggle_screen(&mut self, f: FaceId) {
        self.screen[f.0] = !self.screen[f.0];
    }

    pub(crate) fn set_solid(&mut self, c: usize, value: bool) {
        self.solid[c] = value;
    }

    pub(crate) fn set_screen(&mut self, f: FaceId, value: bool) {
        self.screen[f.0] = value;
    }

    /// True if the face carries zero normal velocity: a screen or a face
    /// touching a solid cell.
    pub fn is_blocked(&self, f: FaceId) -> bool {
        if self.screen[f.0] {
            return true;
        }
        self.grid.0.face_cells(f).iter().flatten().any(|&c| self.solid[c])
    }

    /// Interior face with exactly one solid neighbour.
    pub fn is_interface(&self, f: FaceId) -> bool {
        match self.grid.0.face_cells(f) {
            [Some(a), Some(b)] => self.solid[a] != self.solid[b],
            _ => false,
        }
    }

    pub fn interface_faces(&self) -> impl Iterator<Item = FaceId> + '_ {
        (0..self.grid.0.n_faces()).map(FaceId).filter(|&f| self.is_interface(f))
    }

    /// Whether a cell lies inside the admissible box given by the margin.
    pub fn cell_allowed(&self, c: usize) -> bool {
        let g = &self.grid.0;
        let (i, j) = g.cell_ij(c);
        let m = self.margin;
        i >= m && j >= m && i + m < g.nx && j + m < g.ny
    }

    /// Whether a face may carry a screen with respect to the margin.
    pub fn face_allowed(&self, f: FaceId) -> bool {
        let g = &self.grid.0;
        if g.is_boundary_face(f) {
            return false;
        }
        let m = self.margin;
        match g.face(f) {
            Face::U { i, j } => i >= m && i + m <= g.nx && j >= m && j + m < g.ny,
            Face::V { i, j } => j >= m && j + m <= g.ny && i >= m && i + m < g.nx,
        }
    }

    /// Checks all field invariants.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let g = &self.grid.0;
        if self.solid.len() != g.n_cells() || self.screen.len() != g.n_faces() {
            return Err(GeometryError::GridMismatch);
        }
        for c in self.solid_cells() {
            if !self.cell_allowed(c) {
                let (i, j) = g.cell_ij(c);
                return Err(GeometryError::TouchesBoundary(format!(
                    "solid cell ({i}, {j}) lies within {} cells of the channel wall",
                    self.margin
                )));
            }
        }
        for f in self.screen_faces() {
            if !self.face_allowed(f) {
                return Err(GeometryError::TouchesBoundary(format!(
                    "screen face {:?} lies within {} cells of the channel wall",
                    g.face(f),
                    self.margin
                )));
            }
            if g.face_cells(f).iter().flatten().any(|&c| self.solid[c]) {
                return Err(GeometryError::ScreenOverlapsSolid(g.face(f)));
            }
        }
        Ok(())
    }

    /// Fluid cells that cannot be reached from the outermost ring of cells
    /// through open faces.
    pub fn enclosed_fluid_cells(&self) -> Vec<usize> {
        let g = &self.grid.0;
        let mut seen = vec![false; g.n_cells()];
        let mut queue = VecDeque::new();
        for c in 0..g.n_cells() {
            let (i, j) = g.cell_ij(c);
            let ring = i == 0 || j == 0 || i + 1 == g.nx || j + 1 == g.ny;
            if ring && !self.solid[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
        while let Some(c) = queue.pop_front() {
            for n in g.neighbors(c) {
                if seen[n] || self.solid[n] {
                    continue;
                }
                let f = g.face_between(c, n).expect("neighbours share a face");
                if self.screen[f.0] {
                    continue;
                }
                seen[n] = true;
                queue.push_back(n);
            }
        }
        (0..g.n_cells()).filter(|&c| !self.solid[c] && !seen[c]).collect()
    }

    /// Copy in which enclosed fluid pockets are solid. Screens that end up
    /// touching solid cells are dropped: those faces become part of the bulk
    /// interface. Returns the number of sealed cells.
    pub fn sealed(&self) -> (ObstacleField, usize) {
        let enclosed = self.enclosed_fluid_cells();
        if enclosed.is_empty() {
            return (self.clone(), 0);
        }
        let mut out = self.clone();
        for &c in &enclosed {
            out.solid[c] = true;
        }
        let g = *self.grid();
        for f in 0..g.n_faces() {
            if out.screen[f] && g.face_cells(FaceId(f)).iter().flatten().any(|&c| out.solid[c]) {
                out.screen[f] = false;
            }
        }
        (out, enclosed.len())
    }

    /// 4-connected components of solid cells, each sorted ascending.
    pub fn solid_components(&self) -> Vec<Vec<usize>> {
        let g = &self.grid.0;
        let mut label = vec![usize::MAX; g.n_cells()];
        let mut comps = Vec::new();
        for start in 0..g.n_cells() {
            if !self.solid[start] || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut comp = vec![start];
            label[start] = id;
            let mut k = 0;
            while k < comp.len() {
                let c = comp[k];
                k += 1;
                for n in g.neighbors(c) {
                    if self.solid[n] && label[n] == usize::MAX {
                        label[n] = id;
                        comp.push(n);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Maximal straight runs of screen faces. Each run is ordered along its
    /// axis.
    pub fn screen_runs(&self) -> Vec<Vec<FaceId>> {
        let g = &self.grid.0;
        let mut runs = Vec::new();
        // horizontal runs: v-faces consecutive in i
        for j in 0..=g.ny {
            let mut run = Vec::new();
            for i in 0..g.nx {
                let f = g.v_face(i, j);
                if self.screen[f.0] {
                    run.push(f);
                } else if !run.is_empty() {
                    runs.push(std::mem::take(&mut run));
                }
            }
            if !run.is_empty() {
                runs.push(run);
            }
        }
        // vertical runs: u-faces consecutive in j
        for i in 0..=g.nx {
            let mut run = Vec::new();
            for j in 0..g.ny {
                let f = g.u_face(i, j);
                if self.screen[f.0] {
                    run.push(f);
                } else if !run.is_empty() {
                    runs.push(std::mem::take(&mut run));
                }
            }
            if !run.is_empty() {
                runs.push(run);
            }
        }
        runs
    }

    /// Axis-aligned bounding box `[x0, y0, x1, y1]` of solid cells and screen
    /// faces, `None` for an empty obstacle.
    pub fn bounding_box(&self) -> Option<[f64; 4]> {
        let g = &self.grid.0;
        let h = g.h;
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut grow = |x0: f64, y0: f64, x1: f64, y1: f64| {
            bb[0] = bb[0].min(x0);
            bb[1] = bb[1].min(y0);
            bb[2] = bb[2].max(x1);
            bb[3] = bb[3].max(y1);
        };
        for c in self.solid_cells() {
            let (i, j) = g.cell_ij(c);
            grow(i as f64 * h, j as f64 * h, (i + 1) as f64 * h, (j + 1) as f64 * h);
        }
        for f in self.screen_faces() {
            let [(a, b), (c, d)] = g.face_corners(f);
            grow(a as f64 * h, b as f64 * h, c as f64 * h, d as f64 * h);
        }
        (bb[0] <= bb[2]).then_some(bb)
    }
}

/// Obstacle construction recipe in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeSpec {
    /// Cells whose centre lies in the closed disk.
    Disk { center: [f64; 2], radius: f64 },
    /// Cells whose centre lies in `[x, x + width] x [y, y + height]`.
    Rect { corner: [f64; 2], width: f64, height: f64 },
    /// Explicit `(i, j)` cell list.
    Cells { cells: Vec<[usize; 2]> },
    /// Polyline of axis-aligned segments snapped to grid lines.
    Screen { points: Vec<[f64; 2]> },
}

/// Builds an obstacle as the union of the given shapes, using the standard
/// margin.
pub fn rasterize(grid: &Grid, shapes: &[ShapeSpec]) -> Result<ObstacleField, GeometryError> {
    rasterize_with_margin(grid, shapes, DEFAULT_MARGIN)
}

pub fn rasterize_with_margin(
    grid: &Grid,
    shapes: &[ShapeSpec],
    margin: usize,
) -> Result<ObstacleField, GeometryError> {
    let mut field = ObstacleField::empty_with_margin(*grid, margin);
    let h = grid.h();
    let lo = margin as f64 * h;
    let slack = 1e-9 * h;
    let inside = |x0: f64, y0: f64, x1: f64, y1: f64| {
        x0 >= lo - slack && y0 >= lo - slack && x1 <= grid.lx() - lo + slack && y1 <= grid.ly() - lo + slack
    };
    for shape in shapes {
        match shape {
            ShapeSpec::Disk { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(GeometryError::InvalidShape(format!("disk radius {radius} must be positive")));
                }
                let [cx, cy] = *center;
                if !inside(cx - radius, cy - radius, cx + radius, cy + radius) {
                    return Err(GeometryError::TouchesBoundary(format!(
                        "disk at ({cx}, {cy}) with radius {radius} is closer than {margin} cells to the wall"
                    )));
                }
                for j in 0..grid.ny() {
                    for i in 0..grid.nx() {
                        let [x, y] = grid.cell_center(i, j);
                        if (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius {
                            field.set_solid(grid.cell(i, j), true);
                        }
                    }
                }
            }
            ShapeSpec::Rect { corner, width, height } => {
                if !(*width > 0.0 && *height > 0.0) {
                    return Err(GeometryError::InvalidShape("rectangle sides must be positive".into()));
                }
                let [x0, y0] = *corner;
                let (x1, y1) = (x0 + width, y0 + height);
                if !inside(x0, y0, x1, y1) {
                    return Err(GeometryError::TouchesBoundary(format!(
                        "rectangle [{x0}, {x1}] x [{y0}, {y1}] is closer than {margin} cells to the wall"
                    )));
                }
                for j in 0..grid.ny() {
                    for i in 0..grid.nx() {
                        let [x, y] = grid.cell_center(i, j);
                        if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                            field.set_solid(grid.cell(i, j), true);
                        }
                    }
                }
            }
            ShapeSpec::Cells { cells } => {
                for &[i, j] in cells {
                    if i >= grid.nx() || j >= grid.ny() {
                        return Err(GeometryError::InvalidShape(format!("cell ({i}, {j}) outside the grid")));
                    }
                    field.set_solid(grid.cell(i, j), true);
                }
            }
            ShapeSpec::Screen { points } => {
                for face in screen_polyline_faces(grid, points)? {
                    field.set_screen(face, true);
                }
            }
        }
    }
    field.validate()?;
    Ok(field)
}

/// Grid faces covered by an axis-aligned polyline after snapping its
/// vertices to the nearest grid corners.
pub fn screen_polyline_faces(grid: &Grid, points: &[[f64; 2]]) -> Result<Vec<FaceId>, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::InvalidShape("screen polyline needs at least two points".into()));
    }
    let mut faces = Vec::new();
    let snapped: Vec<(isize, isize)> = points.iter().map(|&p| grid.snap_to_corner(p)).collect();
    for &(ci, cj) in &snapped {
        if ci < 0 || cj < 0 || ci > grid.nx() as isize || cj > grid.ny() as isize {
            return Err(GeometryError::TouchesBoundary(format!("screen vertex ({ci}, {cj}) outside the grid")));
        }
    }
    for w in snapped.windows(2) {
        let ((a, b), (c, d)) = (w[0], w[1]);
        if b == d && a != c {
            let j = b as usize;
            for i in a.min(c)..a.max(c) {
                faces.push(grid.v_face(i as usize, j));
            }
        } else if a == c && b != d {
            let i = a as usize;
            for j in b.min(d)..b.max(d) {
                faces.push(grid.u_face(i, j as usize));
            }
        } else if a == c && b == d {
            continue;
        } else {
            return Err(GeometryError::InvalidShape(format!(
                "screen segment ({a}, {b}) -> ({c}, {d}) is not axis-aligned after snapping"
            )));
        }
    }
    if faces.is_empty() {
        return Err(GeometryError::InvalidShape("screen polyline collapses to a point on this grid".into()));
    }
    faces.sort_unstable();
    faces.dedup();
    Ok(faces)
}

/// Area and boundary lengths of an obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measures {
    /// Area of the solid region.
    pub volume: f64,
    /// Length of the solid/fluid interface.
    pub perim_bulk: f64,
    /// Length of screen faces, counted once.
    pub perim_screen: f64,
}

/// Face counts behind [`Measures`]; kept integral so identities between
/// obstacles can be checked exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FaceCounts {
    pub solid_cells: usize,
    pub interface_faces: usize,
    pub screen_faces: usize,
}

pub fn face_counts(obstacle: &ObstacleField) -> FaceCounts {
    FaceCounts {
        solid_cells: obstacle.n_solid(),
        interface_faces: obstacle.interface_faces().count(),
        screen_faces: obstacle.n_screen(),
    }
}

pub fn measure(obstacle: &ObstacleField) -> Measures {
    let h = obstacle.grid().h();
    let counts = face_counts(obstacle);
    Measures {
        volume: counts.solid_cells as f64 * h * h,
        perim_bulk: counts.interface_faces as f64 * h,
        perim_screen: counts.screen_faces as f64 * h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_grid_examples() {
        let g = Grid::new(8, 8, 1.0, 1.0).unwrap();
        assert_eq!(g.h(), 0.125);
        assert_eq!(g.n_cells(), 64);
        let g = Grid::new(128, 64, 2.0, 1.0).unwrap();
        assert_eq!(g.h(), 0.015625);
        assert!(matches!(Grid::new(10, 10, 1.0, 2.0), Err(GeometryError::NonSquareCells { .. })));
        assert!(matches!(Grid::new(4, 8, 0.5, 1.0), Err(GeometryError::TooCoarse { .. })));
    }

    #[test]
    fn face_indexing_is_bijective() {
        let g = Grid::new(9, 8, 1.125, 1.0).unwrap();
        for f in 0..g.n_faces() {
            let id = FaceId(f);
            assert_eq!(g.face_id(g.face(id)), id);
            let cells = g.face_cells(id);
            let n = cells.iter().flatten().count();
            if g.is_boundary_face(id) {
                assert_eq!(n, 1);
            } else {
                assert_eq!(n, 2);
            }
        }
        // every cell face maps back to the cell
        for c in 0..g.n_cells() {
            for f in g.cell_faces(c) {
                assert!(g.face_cells(f).contains(&Some(c)));
            }
        }
    }

    #[test]
    fn rectangle_block_measures() {
        let g = Grid::new(16, 16, 2.0, 2.0).unwrap();
        let h = g.h();
        let rect = ShapeSpec::Rect { corner: [4.0 * h, 4.0 * h], width: 4.0 * h, height: 4.0 * h };
        let obs = rasterize(&g, &[rect]).unwrap();
        // cell centres at 4.5h..7.5h are inside, 8.5h is not
        assert_eq!(obs.n_solid(), 16);
        let m = measure(&obs);
        assert_eq!(m.volume, 16.0 * h * h);
        assert_eq!(m.perim_bulk, 16.0 * h);
        assert_eq!(m.perim_screen, 0.0);
    }

    #[test]
    fn measure_examples() {
        let g = Grid::new(16, 16, 2.0, 2.0).unwrap();
        assert_eq!(measure(&ObstacleField::empty(g)), Measures::default());
        let cells: Vec<[usize; 2]> = (4..8).flat_map(|j| (4..8).map(move |i| [i, j])).collect();
        let block = rasterize(&g, &[ShapeSpec::Cells { cells: cells.clone() }]).unwrap();
        let m = measure(&block);
        assert_eq!(m.volume, 0.25);
        assert_eq!(m.perim_bulk, 2.0);
        assert_eq!(m.perim_screen, 0.0);
        let h = g.h();
        let screen = ShapeSpec::Screen { points: vec![[3.0 * h, 11.0 * h], [11.0 * h, 11.0 * h]] };
        let both = rasterize(&g, &[ShapeSpec::Cells { cells }, screen]).unwrap();
        let m2 = measure(&both);
        assert_eq!(m2.perim_screen, 1.0);
        assert_eq!(m2.volume, m.volume);
        assert_eq!(m2.perim_bulk, m.perim_bulk);
    }

    #[test]
    fn horizontal_screen_of_ten_edges() {
        let g = Grid::new(32, 16, 2.0, 1.0).unwrap();
        let h = g.h();
        let obs = rasterize(&g, &[ShapeSpec::Screen { points: vec![[5.0 * h, 8.0 * h], [15.0 * h, 8.0 * h]] }]).unwrap();
        let m = measure(&obs);
        assert_eq!(m.perim_screen, 10.0 * h);
        assert_eq!(m.volume, 0.0);
        assert_eq!(obs.screen_runs().len(), 1);
    }

    #[test]
    fn disk_area_within_five_percent() {
        let g = Grid::new(128, 64, 2.0, 1.0).unwrap();
        let obs = rasterize(&g, &[ShapeSpec::Disk { center: [1.0, 0.5], radius: 0.2 }]).unwrap();
        let exact = std::f64::consts::PI * 0.04;
        let area = measure(&obs).volume;
        assert!((area - exact).abs() / exact < 0.05, "area {area} vs {exact}");
    }

    #[test]
    fn disk_area_converges_under_refinement() {
        let exact = std::f64::consts::PI * 0.2 * 0.2;
        let mut errors = Vec::new();
        for n in [32usize, 64, 128, 256, 512] {
            let g = Grid::new(2 * n, n, 2.0, 1.0).unwrap();
            let obs = rasterize(&g, &[ShapeSpec::Disk { center: [1.0, 0.5], radius: 0.2 }]).unwrap();
            errors.push((measure(&obs).volume - exact).abs());
        }
        // average contraction over the halvings
        let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
        let geo = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
        assert!(geo.exp() <= 0.75, "errors {errors:?}");
    }

    #[test]
    fn boundary_and_overlap_errors() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let h = g.h();
        let near_wall = ShapeSpec::Disk { center: [0.1, 0.5], radius: 0.05 };
        assert!(matches!(rasterize(&g, &[near_wall]), Err(GeometryError::TouchesBoundary(_))));
        let block = ShapeSpec::Cells { cells: vec![[6, 6], [7, 6]] };
        let touching = ShapeSpec::Screen { points: vec![[6.0 * h, 7.0 * h], [8.0 * h, 7.0 * h]] };
        assert!(matches!(rasterize(&g, &[block, touching]), Err(GeometryError::ScreenOverlapsSolid(_))));
        let diagonal = ShapeSpec::Screen { points: vec![[0.4, 0.4], [0.6, 0.6]] };
        assert!(matches!(rasterize(&g, &[diagonal]), Err(GeometryError::InvalidShape(_))));
    }

    #[test]
    fn enclosed_pockets_are_sealed() {
        let g = Grid::new(16, 16, 1.0, 1.0).unwrap();
        // ring of solid cells around (7,7)
        let mut cells = Vec::new();
        for j in 6..9 {
            for i in 6..9 {
                if (i, j) != (7, 7) {
                    cells.push([i, j]);
                }
            }
        }
        let obs = rasterize(&g, &[ShapeSpec::Cells { cells }]).unwrap();
        assert_eq!(obs.enclosed_fluid_cells(), vec![g.cell(7, 7)]);
        let (sealed, n) = obs.sealed();
        assert_eq!(n, 1);
        assert!(sealed.is_solid(g.cell(7, 7)));

        // a closed square of screens also encloses a pocket
        let h = g.h();
        let loop_pts = vec![[4.0 * h, 4.0 * h], [6.0 * h, 4.0 * h], [6.0 * h, 6.0 * h], [4.0 * h, 6.0 * h], [4.0 * h, 4.0 * h]];
        let obs = rasterize(&g, &[ShapeSpec::Screen { points: loop_pts }]).unwrap();
        assert_eq!(obs.enclosed_fluid_cells().len(), 4);
        let (sealed, n) = obs.sealed();
        assert_eq!(n, 4);
        assert_eq!(sealed.n_screen(), 0);
        assert!(sealed.validate().is_ok());
    }

    fn arb_shape(nx: usize, ny: usize) -> impl Strategy<Value = ShapeSpec> {
        let lx = nx as f64 / 16.0;
        let ly = ny as f64 / 16.0;
        prop_oneof![
            (0.1f64..lx - 0.1, 0.1f64..ly - 0.1, 0.01f64..0.5)
                .prop_map(|(x, y, r)| ShapeSpec::Disk { center: [x, y], radius: r }),
            (0.0f64..lx, 0.0f64..ly, 0.01f64..1.0, 0.01f64..1.0)
                .prop_map(|(x, y, w, hh)| ShapeSpec::Rect { corner: [x, y], width: w, height: hh }),
            (0.0f64..lx, 0.0f64..ly, -1.0f64..1.0, any::<bool>()).prop_map(|(x, y, len, horiz)| {
                let end = if horiz { [x + len, y] } else { [x, y + len] };
                ShapeSpec::Screen { points: vec![[x, y], end] }
            }),
        ]
    }

    proptest! {
        #[test]
        fn rasterized_fields_satisfy_invariants(shapes in proptest::collection::vec(arb_shape(32, 24), 1..4)) {
            let g = Grid::new(32, 24, 2.0, 1.5).unwrap();
            if let Ok(obs) = rasterize(&g, &shapes) {
                prop_assert!(obs.validate().is_ok());
                let m = measure(&obs);
                prop_assert!(m.volume >= 0.0 && m.perim_bulk >= 0.0 && m.perim_screen >= 0.0);
                let h = g.h();
                let c = face_counts(&obs);
                prop_assert_eq!(m.volume, c.solid_cells as f64 * h * h);
                prop_assert_eq!(m.perim_screen, c.screen_faces as f64 * h);
            }
        }

        #[test]
        fn measure_is_additive_over_disjoint_blocks(
            a in (2usize..8, 2usize..8, 1usize..4, 1usize..4),
            b in (12usize..18, 2usize..8, 1usize..4, 1usize..4),
        ) {
            let g = Grid::new(24, 16, 1.5, 1.0).unwrap();
            let block = |(i0, j0, w, hh): (usize, usize, usize, usize)| {
                (j0..j0 + hh).flat_map(move |j| (i0..i0 + w).map(move |i| [i, j])).collect::<Vec<_>>()
            };
            let ca = block(a);
            let cb = block(b);
            let ma = measure(&rasterize(&g, &[ShapeSpec::Cells { cells: ca.clone() }]).unwrap());
            let mb = measure(&rasterize(&g, &[ShapeSpec::Cells { cells: cb.clone() }]).unwrap());
            let mab = measure(&rasterize(&g, &[ShapeSpec::Cells { cells: ca }, ShapeSpec::Cells { cells: cb }]).unwrap());
            prop_assert_eq!(mab.volume, ma.volume + mb.volume);
            prop_assert_eq!(mab.perim_bulk, ma.perim_bulk + mb.perim_bulk);
        }
    }
}
