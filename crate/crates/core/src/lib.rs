//! Quasi-static path planning for tendon-driven continuum robots in contact
//! with elastic obstacles.
//!
//! The robot backbone is modeled as an elastic rod whose static equilibria
//! solve a boundary value problem: forward integration of the rod ODEs from
//! the base, shooting on the unknown base elastic wrench `λ` until the tip
//! boundary condition `F(λ, τ) = 0` is met. Elastic obstacles enter as smooth
//! potential fields that exert distributed wrenches along the backbone.
//!
//! The zero set of `F` with full-rank `F_λ` is a smooth manifold of dimension
//! equal to the actuation dimension. Planning runs directly on that manifold
//! with AtlasRRT* (tangent-space charts + shooting projection), with two
//! Euclidean RRT* baselines (`rrt-star-tau`, `rrt-star-lambda-tau`) for
//! comparison.
//!
//! Module map:
//! - [`liegroup`]: SE(3)/se(3) primitives and group integration steps.
//! - [`mechanics`]: robot parameters, actuation wrench, rod ODE integration,
//!   total potential energy.
//! - [`potentials`]: sphere/capsule potential fields, induced wrenches,
//!   collision geometry.
//! - [`shooting`]: residual, finite-difference Jacobian, Levenberg–Marquardt
//!   solver, stability classification.
//! - [`atlas`]: tangent-space charts on the stable manifold.
//! - [`planner`]: AtlasRRT* and the RRT* baselines.
//! - [`scenario`]: scenario files, validation, and the benchmark harness.

pub mod atlas;
pub mod liegroup;
pub mod mechanics;
pub mod metric;
pub mod planner;
pub mod potentials;
pub mod scenario;
pub mod shooting;

pub use atlas::{Atlas, AtlasParams, Chart, ChartId};
pub use liegroup::{Pose, Twist, Wrench};
pub use shooting::{solve_bvp, ManifoldPoint, ResidualReport, SolverConfig};
pub use mechanics::{Actuation, Configuration, RobotParams};
pub use metric::MetricM;
pub use planner::{plan, PlanResult, PlannerParams, Variant};
pub use potentials::{CapsuleField, Scene, SphereField, TipField};
pub use scenario::{load_scenario, run_bench, RunReport, Scenario};
