//! SE(3)/se(3) primitives used by the rod equations: hat/vee maps, the
//! adjoint operator on the Lie algebra, and closed-form group integration
//! steps.
//!
//! Twists and wrenches are 6-vectors in body coordinates, ordered
//! `[angular; linear]` (`[omega; v]` for twists, `[moment; force]` for
//! wrenches). All other modules follow this ordering.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

/// Body twist `[omega; v]`.
pub type Twist = Vector6<f64>;
/// Body wrench `[moment; force]`, dual to [`Twist`] under `δζ^T W`.
pub type Wrench = Vector6<f64>;

/// Angle threshold below which the exponential map switches to its
/// series-limit branch.
const SMALL_ANGLE: f64 = 1e-6;

/// Element of SE(3): rotation matrix plus position, body-frame convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        Pose { rotation, position }
    }

    /// `‖R^T R − I‖` in the Frobenius norm; zero for an exact rotation.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Projects the rotation block to the nearest rotation matrix (polar
    /// decomposition via SVD, determinant fixed to +1).
    pub fn orthonormalized(&self) -> Pose {
        Pose {
            rotation: project_rotation(&self.rotation),
            position: self.position,
        }
    }

    /// Group composition `self · other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            position: self.rotation * other.position + self.position,
        }
    }
}

/// Nearest rotation matrix to `m` in the Frobenius sense.
pub fn project_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let det = (u * v_t).determinant();
    let mut s = Matrix3::identity();
    s[(2, 2)] = det.signum();
    u * s * v_t
}

/// Skew-symmetric matrix of a 3-vector: `hat3(w) x = w × x`.
pub fn hat3(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat3`].
pub fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// se(3) matrix form of a twist: `[[ω̂, v], [0, 0]]`.
pub fn hat(xi: &Twist) -> Matrix4<f64> {
    let w = angular(xi);
    let v = linear(xi);
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&w));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&v);
    m
}

/// Inverse of [`hat`].
pub fn vee(m: &Matrix4<f64>) -> Twist {
    Twist::new(m[(2, 1)], m[(0, 2)], m[(1, 0)], m[(0, 3)], m[(1, 3)], m[(2, 3)])
}

/// Adjoint operator on the algebra: `ad(ξ) = [[ω̂, 0], [v̂, ω̂]]`.
pub fn ad(xi: &Twist) -> Matrix6<f64> {
    let wh = hat3(&angular(xi));
    let vh = hat3(&linear(xi));
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&wh);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&vh);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&wh);
    m
}

/// `ad(ξ)^T w` evaluated blockwise through cross products; avoids building
/// the 6×6 matrix in the ODE right-hand side.
pub fn coad(xi: &Twist, w: &Wrench) -> Wrench {
    let omega = angular(xi);
    let v = linear(xi);
    let m = angular(w);
    let f = linear(w);
    let moment = m.cross(&omega) + f.cross(&v);
    let force = f.cross(&omega);
    stack(&moment, &force)
}

/// Angular (top) block of a 6-vector.
pub fn angular(x: &Vector6<f64>) -> Vector3<f64> {
    x.fixed_rows::<3>(0).into_owned()
}

/// Linear (bottom) block of a 6-vector.
pub fn linear(x: &Vector6<f64>) -> Vector3<f64> {
    x.fixed_rows::<3>(3).into_owned()
}

/// Builds a 6-vector from angular and linear parts.
pub fn stack(top: &Vector3<f64>, bottom: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// Closed-form exponential of `h·ξ̂`, returned as (rotation, translation).
///
/// Uses the Rodrigues-type formula with a Taylor branch when `‖ω‖h` is below
/// [`SMALL_ANGLE`].
pub fn exp_se3(xi: &Twist, h: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let w = angular(xi) * h;
    let v = linear(xi) * h;
    let theta = w.norm();
    let wh = hat3(&w);
    let wh2 = wh * wh;

    // Coefficients of R = I + a ω̂ + b ω̂² and V = I + b ω̂ + c ω̂².
    let (a, b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0,
            0.5 - t2 / 24.0,
            1.0 / 6.0 - t2 / 120.0,
        )
    } else {
        let t2 = theta * theta;
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };

    let r = Matrix3::identity() + wh * a + wh2 * b;
    let vmat = Matrix3::identity() + wh * b + wh2 * c;
    (r, vmat * v)
}

/// One group integration step `g · exp(h·ξ̂)` of the kinematic equation
/// `g' = g ξ̂` with constant twist.
pub fn step_pose(g: &Pose, xi: &Twist, h: f64) -> Pose {
    let (r, p) = exp_se3(xi, h);
    g.compose(&Pose::new(r, p))
}
