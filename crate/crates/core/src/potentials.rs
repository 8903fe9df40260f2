//! Smooth elastic-obstacle potential fields and their induced wrenches.
//!
//! Each obstacle is a solid core of radius `r_solid` surrounded by a field
//! shell out to `r_field`. Inside the shell the potential is the quartic
//! hinge
//!
//! ```text
//! U(p) = (k/4) · (r_field − d(p))⁴ / (r_field − r_solid)²       d(p) < r_field
//! ```
//!
//! with `d` the distance to the center (sphere) or axis segment (capsule).
//! The quartic vanishes together with its first derivatives at the shell
//! boundary, which the shooting Jacobians need. Potentials of overlapping
//! obstacles add.
//!
//! Potentials are position-only, so the induced distributed body wrench has
//! zero moment: `W(g) = [0; −R^T ∇U(p)]`.

use nalgebra::Vector3;
use thiserror::Error;

use crate::liegroup::{stack, Pose, Wrench};

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("obstacle radii must satisfy 0 < r_solid < r_field, got r_solid={r_solid}, r_field={r_field}")]
    BadRadii { r_solid: f64, r_field: f64 },
    #[error("field stiffness must be positive, got {0}")]
    BadStiffness(f64),
    #[error("capsule endpoints must be distinct")]
    DegenerateCapsule,
}

/// Spherical obstacle with a concentric potential shell.
#[derive(Debug, Clone)]
pub struct SphereField {
    pub center: Vector3<f64>,
    pub r_solid: f64,
    pub r_field: f64,
    pub stiffness: f64,
}

impl SphereField {
    pub fn new(
        center: Vector3<f64>,
        r_solid: f64,
        r_field: f64,
        stiffness: f64,
    ) -> Result<Self, PotentialError> {
        check_radii(r_solid, r_field)?;
        check_stiffness(stiffness)?;
        Ok(SphereField {
            center,
            r_solid,
            r_field,
            stiffness,
        })
    }
}

/// Capsule obstacle: segment `[a, b]` with solid radius and field shell.
#[derive(Debug, Clone)]
pub struct CapsuleField {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub r_solid: f64,
    pub r_field: f64,
    pub stiffness: f64,
}

impl CapsuleField {
    pub fn new(
        a: Vector3<f64>,
        b: Vector3<f64>,
        r_solid: f64,
        r_field: f64,
        stiffness: f64,
    ) -> Result<Self, PotentialError> {
        if a == b {
            return Err(PotentialError::DegenerateCapsule);
        }
        check_radii(r_solid, r_field)?;
        check_stiffness(stiffness)?;
        Ok(CapsuleField {
            a,
            b,
            r_solid,
            r_field,
            stiffness,
        })
    }

    /// Closest point on the axis segment to `p`.
    fn closest_axis_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        self.a + ab * t
    }
}

fn check_radii(r_solid: f64, r_field: f64) -> Result<(), PotentialError> {
    if !(r_solid > 0.0 && r_field > r_solid) {
        return Err(PotentialError::BadRadii { r_solid, r_field });
    }
    Ok(())
}

fn check_stiffness(k: f64) -> Result<(), PotentialError> {
    if !(k.is_finite() && k > 0.0) {
        return Err(PotentialError::BadStiffness(k));
    }
    Ok(())
}

/// Concentrated tip potential `U⁺`, applied to the tip frame only.
#[derive(Debug, Clone, Default)]
pub enum TipField {
    #[default]
    None,
    /// `U⁺(g) = −f·p(l)`: a constant spatial force `f` acting on the tip.
    LinearForce { force: Vector3<f64> },
}

impl TipField {
    pub fn potential(&self, g: &Pose) -> f64 {
        match self {
            TipField::None => 0.0,
            TipField::LinearForce { force } => -force.dot(&g.position),
        }
    }

    /// Tip wrench `W⁺(g)` satisfying `δζ^T W⁺ = −δU⁺`; body coordinates.
    pub fn wrench(&self, g: &Pose) -> Wrench {
        match self {
            TipField::None => Wrench::zeros(),
            TipField::LinearForce { force } => {
                stack(&Vector3::zeros(), &(g.rotation.transpose() * force))
            }
        }
    }
}

/// A collection of obstacle fields plus an optional tip field.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub spheres: Vec<SphereField>,
    pub capsules: Vec<CapsuleField>,
    pub tip_field: TipField,
}

impl Scene {
    pub fn free_space() -> Self {
        Scene::default()
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty() && self.capsules.is_empty()
    }

    pub fn obstacle_count(&self) -> usize {
        self.spheres.len() + self.capsules.len()
    }

    /// Total potential density at position `p` (J/m).
    pub fn potential(&self, p: &Vector3<f64>) -> f64 {
        let mut u = 0.0;
        for s in &self.spheres {
            u += hinge_potential((p - s.center).norm(), s.r_solid, s.r_field, s.stiffness);
        }
        for c in &self.capsules {
            let d = (p - c.closest_axis_point(p)).norm();
            u += hinge_potential(d, c.r_solid, c.r_field, c.stiffness);
        }
        u
    }

    /// Analytic position gradient `∇_p U`.
    pub fn potential_gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut grad = Vector3::zeros();
        for s in &self.spheres {
            let rel = p - s.center;
            let d = rel.norm();
            let du = hinge_slope(d, s.r_solid, s.r_field, s.stiffness);
            if du != 0.0 && d > 0.0 {
                grad += rel * (du / d);
            }
        }
        for c in &self.capsules {
            let rel = p - c.closest_axis_point(p);
            let d = rel.norm();
            let du = hinge_slope(d, c.r_solid, c.r_field, c.stiffness);
            if du != 0.0 && d > 0.0 {
                grad += rel * (du / d);
            }
        }
        grad
    }

    /// Distributed body wrench induced at `g`: `[0; −R^T ∇_p U]`.
    pub fn field_wrench(&self, g: &Pose) -> Wrench {
        if self.is_empty() {
            return Wrench::zeros();
        }
        let grad = self.potential_gradient(&g.position);
        stack(&Vector3::zeros(), &(-(g.rotation.transpose() * grad)))
    }

    pub fn tip_potential(&self, g: &Pose) -> f64 {
        self.tip_field.potential(g)
    }

    pub fn tip_wrench(&self, g: &Pose) -> Wrench {
        self.tip_field.wrench(g)
    }

    /// True iff `p` lies within `r_solid + clearance` of any obstacle core.
    pub fn point_in_collision(&self, p: &Vector3<f64>, clearance: f64) -> bool {
        for s in &self.spheres {
            if (p - s.center).norm() <= s.r_solid + clearance {
                return true;
            }
        }
        for c in &self.capsules {
            if (p - c.closest_axis_point(p)).norm() <= c.r_solid + clearance {
                return true;
            }
        }
        false
    }

    /// Smallest distance from `p` to any obstacle core surface.
    pub fn clearance(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for s in &self.spheres {
            best = best.min((p - s.center).norm() - s.r_solid);
        }
        for c in &self.capsules {
            best = best.min((p - c.closest_axis_point(p)).norm() - c.r_solid);
        }
        best
    }
}

/// Quartic hinge potential of the distance `d` to the obstacle core.
fn hinge_potential(d: f64, r_solid: f64, r_field: f64, k: f64) -> f64 {
    if d >= r_field {
        return 0.0;
    }
    let gap = r_field - d;
    let span = r_field - r_solid;
    0.25 * k * gap.powi(4) / (span * span)
}

/// Derivative `dU/dd` of the hinge potential.
fn hinge_slope(d: f64, r_solid: f64, r_field: f64, k: f64) -> f64 {
    if d >= r_field {
        return 0.0;
    }
    let gap = r_field - d;
    let span = r_field - r_solid;
    -k * gap.powi(3) / (span * span)
}
