//! Continuum-robot statics: robot parameters, the actuation wrench map, the
//! canonical rod ODEs and their fixed-step RK4 integration, and the total
//! potential energy functional used as an independent verification oracle.
//!
//! State along arclength `s ∈ [0, l]` is `(g(s), Λ(s))` with
//!
//! ```text
//! g' = g (ξ0 + u)^          u = C⁻¹(Λ − Λ_ad)
//! Λ' = ad(ξ)^T Λ − W(g)
//! ```
//!
//! where `Λ_ad(τ)` is the actuation wrench and `W(g)` the distributed field
//! wrench. The shooting unknown `λ = C u(0)` is the elastic internal wrench
//! at the base, so the initial costate is `Λ(0) = λ + Λ_ad(τ)`.

use nalgebra::{Matrix3, Vector3, Vector6};
use std::io::{self, Write};
use thiserror::Error;

use crate::liegroup::{angular, coad, hat3, linear, project_rotation, stack, step_pose, Pose, Twist, Wrench};
use crate::potentials::Scene;

/// Minimum admissible grid size for the IVP integrator.
pub const MIN_GRID: usize = 50;

/// Rotation re-orthonormalization interval, in integration steps.
const REORTH_INTERVAL: usize = 100;

#[derive(Debug, Error)]
pub enum MechanicsError {
    #[error("tendon tension {name} = {value} N violates |τ| ≤ {bound} N")]
    TensionOutOfRange {
        name: &'static str,
        value: f64,
        bound: f64,
    },
    #[error("commanded length {value} m outside [{min}, {max}] m")]
    LengthOutOfRange { value: f64, min: f64, max: f64 },
    #[error("integration diverged at arclength s = {s}")]
    IntegrationDiverged { s: f64 },
    #[error("grid size {0} below the minimum of {MIN_GRID}")]
    GridTooCoarse(usize),
    #[error("invalid robot parameters: {0}")]
    BadParams(String),
}

/// Physical parameters of the reference single-segment tendon-driven robot.
///
/// Two opposing tendon pairs are driven differentially (one signed tension
/// per pair) and the backbone length is directly commanded, giving three
/// actuation degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotParams {
    /// Young's modulus (Pa).
    pub e_modulus: f64,
    /// Shear modulus (Pa).
    pub g_modulus: f64,
    /// Backbone radius (m).
    pub backbone_radius: f64,
    /// Tendon offset from the backbone axis (m).
    pub tendon_offset: f64,
    /// Maximum differential tendon tension magnitude (N).
    pub tau_max: f64,
    /// Shortest commandable backbone length (m).
    pub length_min: f64,
    /// Longest commandable backbone length (m).
    pub length_max: f64,
    /// Natural body twist of the unstrained backbone.
    pub natural_twist: Twist,
    /// Include the axial force row of the actuation wrench. Disabling keeps
    /// only the bending moments of the differential pairs.
    pub axial_actuation: bool,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            e_modulus: 50e9,
            g_modulus: 20e9,
            backbone_radius: 1e-3,
            tendon_offset: 15e-3,
            tau_max: 70.0,
            length_min: 25e-3,
            length_max: 100e-3,
            natural_twist: Twist::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            axial_actuation: true,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<(), MechanicsError> {
        let positive = [
            ("e_modulus", self.e_modulus),
            ("g_modulus", self.g_modulus),
            ("backbone_radius", self.backbone_radius),
            ("tendon_offset", self.tendon_offset),
            ("tau_max", self.tau_max),
            ("length_min", self.length_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MechanicsError::BadParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.length_min >= self.length_max {
            return Err(MechanicsError::BadParams(format!(
                "length range [{}, {}] is empty",
                self.length_min, self.length_max
            )));
        }
        if !self.natural_twist.iter().all(|x| x.is_finite()) {
            return Err(MechanicsError::BadParams("natural twist not finite".into()));
        }
        Ok(())
    }

    /// Diagonal of the stiffness matrix `C = diag(EI, EI, GJ, GA, GA, EA)`.
    pub fn stiffness(&self) -> Vector6<f64> {
        let r = self.backbone_radius;
        let area_moment = std::f64::consts::PI * r.powi(4) / 4.0;
        let polar_moment = 2.0 * area_moment;
        let area = std::f64::consts::PI * r * r;
        Vector6::new(
            self.e_modulus * area_moment,
            self.e_modulus * area_moment,
            self.g_modulus * polar_moment,
            self.g_modulus * area,
            self.g_modulus * area,
            self.e_modulus * area,
        )
    }

    /// Elementwise inverse of [`RobotParams::stiffness`].
    pub fn compliance(&self) -> Vector6<f64> {
        self.stiffness().map(|c| 1.0 / c)
    }
}

/// Actuation values `(τ₁, τ₂, τ₃)`: two signed differential tendon tensions
/// plus the commanded backbone length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuation {
    /// First differential pair tension (N); positive pulls the tendon at
    /// `(−d, 0)` in the cross section.
    pub tension_a: f64,
    /// Second differential pair tension (N); positive pulls the tendon at
    /// `(0, −d)`.
    pub tension_b: f64,
    /// Commanded backbone length (m); also the integration horizon.
    pub length: f64,
}

impl Actuation {
    pub fn new(tension_a: f64, tension_b: f64, length: f64) -> Self {
        Actuation {
            tension_a,
            tension_b,
            length,
        }
    }

    pub fn validate(&self, params: &RobotParams) -> Result<(), MechanicsError> {
        if !(self.tension_a.is_finite() && self.tension_a.abs() <= params.tau_max) {
            return Err(MechanicsError::TensionOutOfRange {
                name: "tau1",
                value: self.tension_a,
                bound: params.tau_max,
            });
        }
        if !(self.tension_b.is_finite() && self.tension_b.abs() <= params.tau_max) {
            return Err(MechanicsError::TensionOutOfRange {
                name: "tau2",
                value: self.tension_b,
                bound: params.tau_max,
            });
        }
        if !(self.length.is_finite()
            && self.length >= params.length_min
            && self.length <= params.length_max)
        {
            return Err(MechanicsError::LengthOutOfRange {
                value: self.length,
                min: params.length_min,
                max: params.length_max,
            });
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.tension_a, self.tension_b, self.length]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Actuation::new(a[0], a[1], a[2])
    }
}

/// Actuation wrench `Λ_ad(τ)`, constant along the backbone for parallel
/// tendon routing.
///
/// Each positive pair tension pulls one tendon toward the base at its
/// cross-section offset, contributing the moment of that pull and an axial
/// force row totalling `−(|τ₁| + |τ₂|)`.
pub fn actuation_wrench(tau: &Actuation, params: &RobotParams) -> Result<Wrench, MechanicsError> {
    tau.validate(params)?;
    Ok(actuation_wrench_unchecked(tau, params))
}

pub(crate) fn actuation_wrench_unchecked(tau: &Actuation, params: &RobotParams) -> Wrench {
    let d = params.tendon_offset;
    let axial = if params.axial_actuation {
        -(tau.tension_a.abs() + tau.tension_b.abs())
    } else {
        0.0
    };
    Wrench::new(d * tau.tension_b, -d * tau.tension_a, 0.0, 0.0, 0.0, axial)
}

/// Canonical ODE right-hand side at one state.
///
/// Returns `(ξ, Λ')` with `g' = g ξ̂`; the twist is `ξ = ξ0 + C⁻¹(Λ − Λ_ad)`
/// and `Λ' = ad(ξ)^T Λ − W(g)`.
pub fn ode_rhs(
    g: &Pose,
    lambda: &Wrench,
    tau: &Actuation,
    params: &RobotParams,
    scene: &Scene,
) -> (Twist, Wrench) {
    let ctx = RodContext::new(tau, params, scene);
    let state = RodState {
        rotation: g.rotation,
        position: g.position,
        lambda: *lambda,
    };
    let slope = ctx.slope(&state);
    (ctx.twist(lambda), slope.dlambda)
}

/// One grid node of an integrated configuration.
#[derive(Debug, Clone)]
pub struct ConfigNode {
    /// Arclength coordinate (m).
    pub s: f64,
    pub pose: Pose,
    /// Costate Λ(s), the total internal wrench.
    pub internal: Wrench,
    /// Strain u(s) = C⁻¹(Λ − Λ_ad).
    pub strain: Twist,
}

/// Discretized solution `(g, Λ, u)` of the rod ODEs on `[0, l]`.
#[derive(Debug, Clone)]
pub struct Configuration {
    nodes: Vec<ConfigNode>,
    grid_step: f64,
    lambda_ad: Wrench,
}

impl Configuration {
    /// Assembles a configuration from raw integrator states, recomputing the
    /// strain at every node from the constitutive law.
    pub(crate) fn from_states(
        states: Vec<(f64, Pose, Wrench)>,
        grid_step: f64,
        lambda_ad: Wrench,
        compliance: &Vector6<f64>,
    ) -> Self {
        let nodes = states
            .into_iter()
            .map(|(s, pose, internal)| ConfigNode {
                s,
                pose,
                strain: compliance.component_mul(&(internal - lambda_ad)),
                internal,
            })
            .collect();
        Configuration {
            nodes,
            grid_step,
            lambda_ad,
        }
    }

    pub fn nodes(&self) -> &[ConfigNode] {
        &self.nodes
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    /// Actuation wrench the configuration was integrated with.
    pub fn lambda_ad(&self) -> &Wrench {
        &self.lambda_ad
    }

    pub fn length(&self) -> f64 {
        self.grid_step * (self.nodes.len() - 1) as f64
    }

    pub fn tip_pose(&self) -> &Pose {
        &self.nodes.last().expect("non-empty grid").pose
    }

    pub fn tip_position(&self) -> Vector3<f64> {
        self.tip_pose().position
    }

    /// Costate at the tip, `Λ(l)`.
    pub fn tip_internal(&self) -> Wrench {
        self.nodes.last().expect("non-empty grid").internal
    }

    /// True iff any backbone node lies within `r_solid + backbone_radius`
    /// of an obstacle core.
    pub fn in_collision(&self, scene: &Scene, backbone_radius: f64) -> bool {
        self.nodes
            .iter()
            .any(|n| scene.point_in_collision(&n.pose.position, backbone_radius))
    }

    /// Writes one record per grid node as space-delimited text.
    ///
    /// Columns: `s`, the 9 rotation entries row-major, the 3 position
    /// entries, the 6 costate entries `[moment; force]`, and the 6 strain
    /// entries `[angular; linear]`.
    pub fn write_delimited(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(
            out,
            "# s r11 r12 r13 r21 r22 r23 r31 r32 r33 px py pz \
             lm1 lm2 lm3 lf1 lf2 lf3 uw1 uw2 uw3 uv1 uv2 uv3"
        )?;
        for n in &self.nodes {
            let mut row = Vec::with_capacity(25);
            row.push(n.s);
            for i in 0..3 {
                for j in 0..3 {
                    row.push(n.pose.rotation[(i, j)]);
                }
            }
            row.extend(n.pose.position.iter());
            row.extend(n.internal.iter());
            row.extend(n.strain.iter());
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

struct RodContext<'a> {
    compliance: Vector6<f64>,
    lambda_ad: Wrench,
    natural_twist: Twist,
    scene: &'a Scene,
}

#[derive(Clone, Copy)]
struct RodState {
    rotation: Matrix3<f64>,
    position: Vector3<f64>,
    lambda: Vector6<f64>,
}

#[derive(Clone, Copy)]
struct RodSlope {
    drotation: Matrix3<f64>,
    dposition: Vector3<f64>,
    dlambda: Vector6<f64>,
}

impl<'a> RodContext<'a> {
    fn new(tau: &Actuation, params: &RobotParams, scene: &'a Scene) -> Self {
        RodContext {
            compliance: params.compliance(),
            lambda_ad: actuation_wrench_unchecked(tau, params),
            natural_twist: params.natural_twist,
            scene,
        }
    }

    fn twist(&self, lambda: &Wrench) -> Twist {
        self.natural_twist + self.compliance.component_mul(&(lambda - self.lambda_ad))
    }

    fn slope(&self, y: &RodState) -> RodSlope {
        let xi = self.twist(&y.lambda);
        let omega = angular(&xi);
        let v = linear(&xi);
        let mut dlambda = coad(&xi, &y.lambda);
        if !self.scene.is_empty() {
            // −W = [0; +R^T ∇U]
            let grad = self.scene.potential_gradient(&y.position);
            let body = y.rotation.transpose() * grad;
            dlambda += stack(&Vector3::zeros(), &body);
        }
        RodSlope {
            drotation: y.rotation * hat3(&omega),
            dposition: y.rotation * v,
            dlambda,
        }
    }
}

impl RodState {
    fn add_scaled(&self, k: &RodSlope, a: f64) -> RodState {
        RodState {
            rotation: self.rotation + k.drotation * a,
            position: self.position + k.dposition * a,
            lambda: self.lambda + k.dlambda * a,
        }
    }

    fn is_finite(&self) -> bool {
        self.rotation.iter().all(|x| x.is_finite())
            && self.position.iter().all(|x| x.is_finite())
            && self.lambda.iter().all(|x| x.is_finite())
    }
}

/// Integrates the rod ODEs from an arbitrary initial state over
/// `[s_start, s_end]` (either direction) with fixed-step RK4 on `n`
/// intervals; the rotation block is re-orthonormalized every
/// 100 steps.
///
/// Returns all `n + 1` grid states as `(s, pose, Λ)`.
pub fn integrate_rod(
    g0: &Pose,
    lambda0: &Wrench,
    s_start: f64,
    s_end: f64,
    tau: &Actuation,
    params: &RobotParams,
    scene: &Scene,
    n: usize,
) -> Result<Vec<(f64, Pose, Wrench)>, MechanicsError> {
    let ctx = RodContext::new(tau, params, scene);
    let h = (s_end - s_start) / n as f64;
    let mut y = RodState {
        rotation: g0.rotation,
        position: g0.position,
        lambda: *lambda0,
    };
    let mut out = Vec::with_capacity(n + 1);
    out.push((s_start, g0.clone(), *lambda0));
    for step in 0..n {
        let k1 = ctx.slope(&y);
        let k2 = ctx.slope(&y.add_scaled(&k1, 0.5 * h));
        let k3 = ctx.slope(&y.add_scaled(&k2, 0.5 * h));
        let k4 = ctx.slope(&y.add_scaled(&k3, h));
        y = RodState {
            rotation: y.rotation
                + (k1.drotation + k2.drotation * 2.0 + k3.drotation * 2.0 + k4.drotation)
                    * (h / 6.0),
            position: y.position
                + (k1.dposition + k2.dposition * 2.0 + k3.dposition * 2.0 + k4.dposition)
                    * (h / 6.0),
            lambda: y.lambda
                + (k1.dlambda + k2.dlambda * 2.0 + k3.dlambda * 2.0 + k4.dlambda) * (h / 6.0),
        };
        let s = s_start + h * (step + 1) as f64;
        if !y.is_finite() {
            return Err(MechanicsError::IntegrationDiverged { s });
        }
        if (step + 1) % REORTH_INTERVAL == 0 {
            y.rotation = project_rotation(&y.rotation);
        }
        out.push((s, Pose::new(y.rotation, y.position), y.lambda));
    }
    Ok(out)
}

/// Forward IVP for the shooting method: `g(0) = e`, `Λ(0) = λ + Λ_ad(τ)`,
/// integrated over `[0, τ₃]` on `n` intervals.
pub fn integrate_ivp(
    lambda: &Wrench,
    tau: &Actuation,
    params: &RobotParams,
    scene: &Scene,
    n: usize,
) -> Result<Configuration, MechanicsError> {
    if n < MIN_GRID {
        return Err(MechanicsError::GridTooCoarse(n));
    }
    tau.validate(params)?;
    let lambda_ad = actuation_wrench_unchecked(tau, params);
    let lambda0 = lambda + lambda_ad;
    let states = integrate_rod(
        &Pose::identity(),
        &lambda0,
        0.0,
        tau.length,
        tau,
        params,
        scene,
        n,
    )?;
    Ok(Configuration::from_states(
        states,
        tau.length / n as f64,
        lambda_ad,
        &params.compliance(),
    ))
}

/// Total potential energy of a configuration by trapezoidal quadrature:
/// `∫ (½ u^T C u + u^T Λ_ad + U(p)) ds + U⁺(g(l))`.
pub fn total_energy(cfg: &Configuration, params: &RobotParams, scene: &Scene) -> f64 {
    let stiffness = params.stiffness();
    let h = cfg.grid_step;
    let last = cfg.nodes.len() - 1;
    let mut acc = 0.0;
    for (k, node) in cfg.nodes.iter().enumerate() {
        let u = &node.strain;
        let density = 0.5 * u.dot(&stiffness.component_mul(u))
            + u.dot(&cfg.lambda_ad)
            + scene.potential(&node.pose.position);
        let weight = if k == 0 || k == last { 0.5 } else { 1.0 };
        acc += weight * density;
    }
    acc * h + scene.tip_potential(cfg.tip_pose())
}

/// Energy of the configuration with its control trajectory perturbed by
/// `ε·η` and the poses re-integrated kinematically from the base.
///
/// Per grid interval the pose advances by the group exponential of the
/// trapezoid-averaged twist, so the quadrature and the kinematics carry the
/// same order. Used for first-variation (stationarity) checks of converged
/// solutions.
pub fn perturbed_energy(
    cfg: &Configuration,
    params: &RobotParams,
    scene: &Scene,
    eta: &[Twist],
    eps: f64,
) -> f64 {
    assert_eq!(eta.len(), cfg.nodes.len(), "one perturbation per grid node");
    let stiffness = params.stiffness();
    let h = cfg.grid_step;
    let last = cfg.nodes.len() - 1;
    let perturbed: Vec<Twist> = cfg
        .nodes
        .iter()
        .zip(eta.iter())
        .map(|(n, e)| n.strain + e * eps)
        .collect();

    let mut g = Pose::identity();
    let mut acc = 0.0;
    for k in 0..=last {
        let u = &perturbed[k];
        let density = 0.5 * u.dot(&stiffness.component_mul(u))
            + u.dot(&cfg.lambda_ad)
            + scene.potential(&g.position);
        let weight = if k == 0 || k == last { 0.5 } else { 1.0 };
        acc += weight * density;
        if k < last {
            let xi_mid = params.natural_twist + (perturbed[k] + perturbed[k + 1]) * 0.5;
            g = step_pose(&g, &xi_mid, h);
        }
    }
    acc * h + scene.tip_potential(&g)
}
