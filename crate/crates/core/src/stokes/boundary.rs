use serde::{Deserialize, Serialize};

/// Polynomial stream function `psi(x, y) = sum c * (x - ox)^a * (y - oy)^b`.
///
/// The induced velocity `(d psi / dy, -d psi / dx)` is divergence free, and
/// face fluxes computed from differences of `psi` cancel exactly around any
/// closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamFunction {
    #[serde(default)]
    pub origin: [f64; 2],
    /// `[a, b, c]` triples: exponent of x, exponent of y, coefficient.
    pub terms: Vec<[f64; 3]>,
}

impl StreamFunction {
    pub fn new(origin: [f64; 2], terms: Vec<(u32, u32, f64)>) -> Self {
        Self {
            origin,
            terms: terms.into_iter().map(|(a, b, c)| [a as f64, b as f64, c]).collect(),
        }
    }

    /// Stream function of the affine field `u(y) = k (y - y0 + b)`, `v = 0`:
    /// a linear shear profile with value `k b` at height `y0`.
    pub fn linear_shear(k: f64, y0: f64, b: f64) -> Self {
        // psi = k/2 (y - y0)^2 + k b (y - y0)
        Self::new([0.0, y0], vec![(0, 2, 0.5 * k), (0, 1, k * b)])
    }

    fn exps(t: &[f64; 3]) -> (i32, i32) {
        (t[0] as i32, t[1] as i32)
    }

    pub fn psi(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.origin[0], y - self.origin[1]);
        self.terms
            .iter()
            .map(|t| {
                let (a, b) = Self::exps(t);
                t[2] * dx.powi(a) * dy.powi(b)
            })
            .sum()
    }

    pub fn velocity(&self, x: f64, y: f64) -> [f64; 2] {
        let (dx, dy) = (x - self.origin[0], y - self.origin[1]);
        let mut u = 0.0;
        let mut v = 0.0;
        for t in &self.terms {
            let (a, b) = Self::exps(t);
            if b > 0 {
                u += t[2] * b as f64 * dx.powi(a) * dy.powi(b - 1);
            }
            if a > 0 {
                v -= t[2] * a as f64 * dx.powi(a - 1) * dy.powi(b);
            }
        }
        [u, v]
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        for t in &self.terms {
            if t[0] < 0.0 || t[1] < 0.0 || t[0].fract() != 0.0 || t[1].fract() != 0.0 {
                return Err(format!("stream term exponents must be non-negative integers, got {t:?}"));
            }
            if !t[2].is_finite() {
                return Err("stream term coefficient is not finite".into());
            }
        }
        Ok(())
    }
}

/// Velocity imposed on the channel walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryVelocity {
    /// Constant far-field velocity.
    Uniform([f64; 2]),
    /// Divergence-free field given by a stream function.
    Stream(StreamFunction),
}

impl BoundaryVelocity {
    pub fn velocity(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            BoundaryVelocity::Uniform(v) => *v,
            BoundaryVelocity::Stream(s) => s.velocity(x, y),
        }
    }

    /// The constant velocity, if this is a uniform field.
    pub fn uniform(&self) -> Option<[f64; 2]> {
        match self {
            BoundaryVelocity::Uniform(v) => Some(*v),
            BoundaryVelocity::Stream(_) => None,
        }
    }

    /// Mean x-velocity across the vertical face at `x` spanning `[y0, y1]`.
    pub fn u_face_mean(&self, x: f64, y0: f64, y1: f64) -> f64 {
        match self {
            BoundaryVelocity::Uniform(v) => v[0],
            BoundaryVelocity::Stream(s) => (s.psi(x, y1) - s.psi(x, y0)) / (y1 - y0),
        }
    }

    /// Mean y-velocity across the horizontal face at `y` spanning `[x0, x1]`.
    pub fn v_face_mean(&self, y: f64, x0: f64, x1: f64) -> f64 {
        match self {
            BoundaryVelocity::Uniform(v) => v[1],
            BoundaryVelocity::Stream(s) => -(s.psi(x1, y) - s.psi(x0, y)) / (x1 - x0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_velocity_matches_finite_differences() {
        let s = StreamFunction::new([0.3, -0.2], vec![(2, 1, 0.7), (0, 3, -1.1), (1, 1, 0.4), (4, 0, 0.25)]);
        let (x, y) = (0.61, 0.37);
        let e = 1e-6;
        let dpsidy = (s.psi(x, y + e) - s.psi(x, y - e)) / (2.0 * e);
        let dpsidx = (s.psi(x + e, y) - s.psi(x - e, y)) / (2.0 * e);
        let [u, v] = s.velocity(x, y);
        assert!((u - dpsidy).abs() < 1e-8);
        assert!((v + dpsidx).abs() < 1e-8);
    }

    #[test]
    fn linear_shear_profile() {
        let s = StreamFunction::linear_shear(2.0, 0.25, 0.5);
        let [u, v] = s.velocity(0.7, 0.25);
        assert!((u - 1.0).abs() < 1e-15);
        assert_eq!(v, 0.0);
        let [u, _] = s.velocity(0.1, 0.75);
        assert!((u - 2.0).abs() < 1e-14);
        let bv = BoundaryVelocity::Stream(s);
        assert!((bv.u_face_mean(0.0, 0.25, 0.75) - 1.5).abs() < 1e-14);
    }
}
