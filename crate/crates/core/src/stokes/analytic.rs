//! Closed-form plane slip flows used as test oracles.

use thiserror::Error;

use super::{PhysicsParams, WallLaw};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("beta = 0 gives an infinite slip length for this flow")]
    BetaZero,
    #[error("invalid profile parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlipCase {
    /// Slip wall at `y = 0`, lid moving at `lid_speed` at `y = height`.
    Couette { height: f64, lid_speed: f64 },
    /// Slip walls at `y = 0` and `y = height`, driving pressure gradient
    /// `gradient = -dp/dx`.
    Poiseuille { height: f64, gradient: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipProfile {
    pub case: SlipCase,
    pub mu: f64,
    /// `mu / beta`; infinite for a frictionless wall.
    pub slip_length: f64,
}

impl SlipProfile {
    pub fn velocity(&self, y: f64) -> f64 {
        let b = self.slip_length;
        match self.case {
            SlipCase::Couette { height, lid_speed } => {
                if b.is_infinite() {
                    lid_speed
                } else {
                    lid_speed * (y + b) / (height + b)
                }
            }
            SlipCase::Poiseuille { height, gradient } => {
                gradient / (2.0 * self.mu) * (y * (height - y) + b * height)
            }
        }
    }

    /// Wall shear stress `mu du/dy` at `y = 0`.
    pub fn wall_stress(&self) -> f64 {
        let b = self.slip_length;
        match self.case {
            SlipCase::Couette { height, lid_speed } => {
                if b.is_infinite() {
                    0.0
                } else {
                    self.mu * lid_speed / (height + b)
                }
            }
            SlipCase::Poiseuille { height, gradient } => gradient * height / 2.0,
        }
    }
}

/// Exact tangential profile of plane Couette or Poiseuille flow with Navier
/// slip `mu du/dy = beta u` on the lower wall (both walls for Poiseuille).
///
/// `phys.beta` may be `f64::INFINITY` for the no-slip limit.
pub fn analytic_slip_profiles(case: SlipCase, phys: &PhysicsParams) -> Result<SlipProfile, AnalyticError> {
    let height = match case {
        SlipCase::Couette { height, .. } | SlipCase::Poiseuille { height, .. } => height,
    };
    if !(height > 0.0 && height.is_finite()) {
        return Err(AnalyticError::InvalidParameter(format!("height must be positive, got {height}")));
    }
    if !(phys.mu > 0.0 && phys.mu.is_finite()) {
        return Err(AnalyticError::InvalidParameter(format!("mu must be positive, got {}", phys.mu)));
    }
    if phys.beta.is_nan() || phys.beta < 0.0 {
        return Err(AnalyticError::InvalidParameter(format!("beta must be >= 0, got {}", phys.beta)));
    }
    let slip_length = if phys.wall_law == WallLaw::NoSlip || phys.beta.is_infinite() {
        0.0
    } else if phys.beta == 0.0 {
        match case {
            SlipCase::Couette { .. } => f64::INFINITY,
            SlipCase::Poiseuille { .. } => return Err(AnalyticError::BetaZero),
        }
    } else {
        phys.mu / phys.beta
    };
    Ok(SlipProfile { case, mu: phys.mu, slip_length })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phys(mu: f64, beta: f64) -> PhysicsParams {
        PhysicsParams::uniform(mu, beta, [1.0, 0.0])
    }

    #[test]
    fn couette_unit_slip_length() {
        let p = analytic_slip_profiles(SlipCase::Couette { height: 1.0, lid_speed: 1.0 }, &phys(1.0, 1.0)).unwrap();
        assert_eq!(p.slip_length, 1.0);
        assert_eq!(p.velocity(0.0), 0.5);
        assert_eq!(p.velocity(1.0), 1.0);
        // Navier condition at the wall
        assert!((p.wall_stress() - 1.0 * p.velocity(0.0)).abs() < 1e-15);
    }

    #[test]
    fn couette_no_slip_limit() {
        let p = analytic_slip_profiles(SlipCase::Couette { height: 1.0, lid_speed: 1.0 }, &phys(1.0, f64::INFINITY))
            .unwrap();
        assert_eq!(p.velocity(0.0), 0.0);
        let p = analytic_slip_profiles(SlipCase::Couette { height: 1.0, lid_speed: 1.0 }, &phys(1.0, 1e12)).unwrap();
        assert!(p.velocity(0.0).abs() < 1e-11);
    }

    #[test]
    fn couette_perfect_slip_is_plug_flow() {
        let p = analytic_slip_profiles(SlipCase::Couette { height: 2.0, lid_speed: 3.0 }, &phys(1.0, 0.0)).unwrap();
        assert_eq!(p.velocity(0.0), 3.0);
        assert_eq!(p.wall_stress(), 0.0);
    }

    #[test]
    fn poiseuille_no_slip() {
        let p = analytic_slip_profiles(SlipCase::Poiseuille { height: 1.0, gradient: 2.0 }, &phys(1.0, f64::INFINITY))
            .unwrap();
        for k in 0..=10 {
            let y = k as f64 / 10.0;
            assert!((p.velocity(y) - y * (1.0 - y)).abs() < 1e-15);
        }
        assert!((p.velocity(0.5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn poiseuille_navier_condition() {
        let (mu, beta) = (0.7, 2.5);
        let p = analytic_slip_profiles(SlipCase::Poiseuille { height: 1.3, gradient: 1.1 }, &phys(mu, beta)).unwrap();
        let e = 1e-6;
        let du = (p.velocity(e) - p.velocity(-e)) / (2.0 * e);
        assert!((mu * du - beta * p.velocity(0.0)).abs() < 1e-8);
        assert!((p.velocity(0.2) - p.velocity(1.1)).abs() < 1e-14);
    }

    #[test]
    fn poiseuille_rejects_zero_beta() {
        let r = analytic_slip_profiles(SlipCase::Poiseuille { height: 1.0, gradient: 1.0 }, &phys(1.0, 0.0));
        assert_eq!(r, Err(AnalyticError::BetaZero));
    }
}
