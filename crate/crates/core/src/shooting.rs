//! Shooting method for the rod boundary value problem.
//!
//! The residual map is `F(λ, τ) = Λ(l) − W⁺(g(l))`: integrate the IVP from
//! the base with `Λ(0) = λ + Λ_ad(τ)` and measure the terminal boundary
//! mismatch. Its zero set is the admissible set; the subset where
//! `rank(F_λ) = 6` is the stable set the planners operate on, hence the
//! stability classifier living here next to the solver.
//!
//! The six residual rows mix N·m and N, so norms and convergence tests use
//! a weighted residual with moments divided by a characteristic length.

use nalgebra::{Matrix6, SMatrix, Vector6};
use thiserror::Error;

use crate::liegroup::{Pose, Wrench};
use crate::mechanics::{
    actuation_wrench_unchecked, integrate_rod, Actuation, Configuration, MechanicsError,
    RobotParams,
};
use crate::metric::{AmbientVec, MetricM};
use crate::potentials::Scene;

#[derive(Debug, Error)]
pub enum ShootingError {
    #[error(transparent)]
    Mechanics(#[from] MechanicsError),
    #[error("jacobian evaluation failed near {coordinate}: {source}")]
    JacobianFailed {
        coordinate: &'static str,
        source: MechanicsError,
    },
}

/// A point of the ambient space `(λ, τ)` with its cached rod solution.
#[derive(Debug, Clone)]
pub struct ManifoldPoint {
    /// Base elastic internal wrench, `λ = C u(0)`.
    pub lambda: Wrench,
    pub tau: Actuation,
    pub config: Option<Configuration>,
}

impl ManifoldPoint {
    pub fn new(lambda: Wrench, tau: Actuation) -> Self {
        ManifoldPoint {
            lambda,
            tau,
            config: None,
        }
    }

    /// Ambient coordinates `(λ₁..λ₆, τ₁, τ₂, τ₃)`.
    pub fn ambient(&self) -> AmbientVec {
        let t = self.tau.as_array();
        AmbientVec::from_row_slice(&[
            self.lambda[0],
            self.lambda[1],
            self.lambda[2],
            self.lambda[3],
            self.lambda[4],
            self.lambda[5],
            t[0],
            t[1],
            t[2],
        ])
    }

    pub fn split_ambient(x: &AmbientVec) -> (Wrench, Actuation) {
        (
            Wrench::new(x[0], x[1], x[2], x[3], x[4], x[5]),
            Actuation::new(x[6], x[7], x[8]),
        )
    }

    pub fn tip_position(&self) -> Option<nalgebra::Vector3<f64>> {
        self.config.as_ref().map(|c| c.tip_position())
    }
}

/// Rank and extreme singular values of the scaled `F_λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityInfo {
    pub rank: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl StabilityInfo {
    pub fn is_stable(&self) -> bool {
        self.rank == 6
    }
}

/// Outcome of one shooting solve.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub f_value: Vector6<f64>,
    /// Weighted norm of `f_value` (moments divided by `l_char`).
    pub f_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stability: Option<StabilityInfo>,
}

/// Jacobian blocks of the residual at a point.
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub f_lambda: Matrix6<f64>,
    pub f_tau: SMatrix<f64, 6, 3>,
}

impl Jacobian {
    /// The full 6×9 matrix `[F_λ F_τ]`.
    pub fn full(&self) -> SMatrix<f64, 6, 9> {
        let mut m = SMatrix::<f64, 6, 9>::zeros();
        m.fixed_view_mut::<6, 6>(0, 0).copy_from(&self.f_lambda);
        m.fixed_view_mut::<6, 3>(0, 6).copy_from(&self.f_tau);
        m
    }
}

/// Converged (or best-effort) solve result.
#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub point: ManifoldPoint,
    pub report: ResidualReport,
    /// Jacobian at the returned iterate; present when classification ran.
    pub jacobian: Option<Jacobian>,
}

/// Solver and discretization parameters shared by every BVP solve.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Convergence threshold on the weighted residual norm.
    pub tol_f: f64,
    /// Characteristic length making moment rows commensurate with force rows.
    pub l_char: f64,
    /// Trial-step budget of the Levenberg–Marquardt loop.
    pub max_iterations: usize,
    /// Grid intervals for every IVP integration.
    pub grid: usize,
    /// Metric whose coordinate scales size the finite-difference steps.
    pub metric: MetricM,
    /// Base relative/absolute finite-difference step in metric units.
    pub fd_step: f64,
    /// Initial damping as a fraction of `max diag(J^T J)`.
    pub damping_init: f64,
    /// Damping ceiling; exceeding it aborts the solve as non-convergent.
    pub damping_max: f64,
    /// Relative singular-value threshold for the rank decision.
    pub rank_tol: f64,
    /// Compute rank and extreme singular values at the accepted iterate.
    pub classify: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_f: 1e-8,
            l_char: 0.05,
            max_iterations: 100,
            grid: 100,
            metric: MetricM::default(),
            fd_step: 1e-6,
            damping_init: 1e-3,
            damping_max: 1e8,
            rank_tol: 1e-6,
            classify: true,
        }
    }
}

impl SolverConfig {
    pub fn without_classification(&self) -> SolverConfig {
        SolverConfig {
            classify: false,
            ..self.clone()
        }
    }

    /// Diagonal weights applied to residual rows before norming.
    fn residual_weights(&self) -> Vector6<f64> {
        let w = 1.0 / self.l_char;
        Vector6::new(w, w, w, 1.0, 1.0, 1.0)
    }

    pub fn weighted_norm(&self, f: &Vector6<f64>) -> f64 {
        f.component_mul(&self.residual_weights()).norm()
    }
}

/// Integrates the IVP and returns the boundary residual together with the
/// configuration it was measured on.
///
/// Validation of `τ` against the robot bounds is the caller's business (the
/// planners reject out-of-range samples before solving); the residual itself
/// is defined for any finite `τ` with positive length.
pub fn residual(
    lambda: &Wrench,
    tau: &Actuation,
    scene: &Scene,
    params: &RobotParams,
    grid: usize,
) -> Result<(Vector6<f64>, Configuration), MechanicsError> {
    let cfg = integrate_unvalidated(lambda, tau, scene, params, grid)?;
    let f = cfg.tip_internal() - scene.tip_wrench(cfg.tip_pose());
    Ok((f, cfg))
}

/// IVP integration that skips actuation-bound validation; the shooting
/// Jacobian perturbs τ across the bounds by a finite-difference step.
fn integrate_unvalidated(
    lambda: &Wrench,
    tau: &Actuation,
    scene: &Scene,
    params: &RobotParams,
    grid: usize,
) -> Result<Configuration, MechanicsError> {
    if tau.length <= 0.0 || !tau.length.is_finite() {
        return Err(MechanicsError::LengthOutOfRange {
            value: tau.length,
            min: params.length_min,
            max: params.length_max,
        });
    }
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
        grid,
    )?;
    Ok(Configuration::from_states(
        states,
        tau.length / grid as f64,
        lambda_ad,
        &params.compliance(),
    ))
}

/// Central finite-difference Jacobian `[F_λ F_τ]`, column by column.
///
/// The step for coordinate `i` is `max(fd_step, fd_step·|x_i|)` metric units,
/// converted to the coordinate's own unit by the metric scale.
pub fn jacobian(
    lambda: &Wrench,
    tau: &Actuation,
    scene: &Scene,
    params: &RobotParams,
    config: &SolverConfig,
) -> Result<Jacobian, ShootingError> {
    let f_lambda = jacobian_lambda(lambda, tau, scene, params, config)?;
    let scales = config.metric.coordinate_scales();
    let x = ManifoldPoint::new(*lambda, *tau).ambient();
    let mut f_tau = SMatrix::<f64, 6, 3>::zeros();
    for j in 0..3 {
        let col = fd_column(&x, 6 + j, scales[6 + j], scene, params, config)?;
        f_tau.set_column(j, &col);
    }
    Ok(Jacobian { f_lambda, f_tau })
}

/// The `F_λ` block only; the solver iterates on λ with τ held fixed.
fn jacobian_lambda(
    lambda: &Wrench,
    tau: &Actuation,
    scene: &Scene,
    params: &RobotParams,
    config: &SolverConfig,
) -> Result<Matrix6<f64>, ShootingError> {
    let scales = config.metric.coordinate_scales();
    let x = ManifoldPoint::new(*lambda, *tau).ambient();
    let mut m = Matrix6::zeros();
    for j in 0..6 {
        let col = fd_column(&x, j, scales[j], scene, params, config)?;
        m.set_column(j, &col);
    }
    Ok(m)
}

const COORD_NAMES: [&str; 9] = [
    "lambda_m1", "lambda_m2", "lambda_m3", "lambda_f1", "lambda_f2", "lambda_f3", "tau1", "tau2",
    "tau3",
];

fn fd_column(
    x: &AmbientVec,
    index: usize,
    scale: f64,
    scene: &Scene,
    params: &RobotParams,
    config: &SolverConfig,
) -> Result<Vector6<f64>, ShootingError> {
    let step = config.fd_step.max(config.fd_step * x[index].abs()) * scale;
    let mut hi = *x;
    let mut lo = *x;
    hi[index] += step;
    lo[index] -= step;
    let eval = |v: &AmbientVec| -> Result<Vector6<f64>, ShootingError> {
        let (lambda, tau) = ManifoldPoint::split_ambient(v);
        residual(&lambda, &tau, scene, params, config.grid)
            .map(|(f, _)| f)
            .map_err(|source| ShootingError::JacobianFailed {
                coordinate: COORD_NAMES[index],
                source,
            })
    };
    Ok((eval(&hi)? - eval(&lo)?) / (2.0 * step))
}

/// Rank of `F_λ` from the singular values of the unit-balanced matrix
/// (moment rows divided by `l_char`, columns multiplied by the metric
/// coordinate scales).
pub fn classify_stability(f_lambda: &Matrix6<f64>, config: &SolverConfig) -> StabilityInfo {
    let row_w = config.residual_weights();
    let scales = config.metric.coordinate_scales();
    let mut scaled = *f_lambda;
    for i in 0..6 {
        for j in 0..6 {
            scaled[(i, j)] *= row_w[i] * scales[j];
        }
    }
    let sv = scaled.svd(false, false).singular_values;
    let sigma_max = sv.max();
    let threshold = config.rank_tol * sigma_max;
    let rank = sv.iter().filter(|s| **s > threshold).count();
    StabilityInfo {
        rank,
        sigma_min: sv.min(),
        sigma_max,
    }
}

/// Jacobian plus stability classification at a (usually converged) point.
pub fn stability_rank(
    point: &ManifoldPoint,
    scene: &Scene,
    params: &RobotParams,
    config: &SolverConfig,
) -> Result<(StabilityInfo, Jacobian), ShootingError> {
    let jac = jacobian(&point.lambda, &point.tau, scene, params, config)?;
    Ok((classify_stability(&jac.f_lambda, config), jac))
}

/// Levenberg–Marquardt shooting solve over λ with τ held fixed.
///
/// Damped normal equations in residual- and coordinate-scaled units; the
/// damping grows tenfold on a rejected trial step and shrinks tenfold on an
/// accepted one. Success means the weighted residual norm is at most
/// `tol_f`. A non-convergent solve returns the best iterate with
/// `converged = false`; only an integration failure at the initial guess is
/// an error.
pub fn solve_bvp(
    guess: &Wrench,
    tau: &Actuation,
    scene: &Scene,
    params: &RobotParams,
    config: &SolverConfig,
) -> Result<BvpSolution, MechanicsError> {
    let row_w = config.residual_weights();
    let lambda_scales = {
        let s = config.metric.coordinate_scales();
        Vector6::new(s[0], s[1], s[2], s[3], s[4], s[5])
    };

    let mut lambda = *guess;
    let (f0, cfg0) = residual(&lambda, tau, scene, params, config.grid)?;
    let mut f = f0;
    let mut cfg = cfg0;
    let mut f_norm = config.weighted_norm(&f);
    let mut iterations = 0;
    let mut converged = f_norm <= config.tol_f;
    let mut damping: Option<f64> = None;

    'outer: while !converged && iterations < config.max_iterations {
        let jac_lambda = match jacobian_lambda(&lambda, tau, scene, params, config) {
            Ok(j) => j,
            Err(_) => break,
        };
        // Rows in residual weights, columns in metric units.
        let mut j_scaled = jac_lambda;
        for i in 0..6 {
            for k in 0..6 {
                j_scaled[(i, k)] *= row_w[i] * lambda_scales[k];
            }
        }
        let f_scaled = f.component_mul(&row_w);
        let normal = j_scaled.transpose() * j_scaled;
        let gradient = j_scaled.transpose() * f_scaled;
        let mut mu = damping.unwrap_or_else(|| {
            config.damping_init * (0..6).map(|i| normal[(i, i)]).fold(f64::MIN, f64::max)
        });

        loop {
            let mut damped = normal;
            for i in 0..6 {
                damped[(i, i)] += mu;
            }
            let step_scaled = match damped.lu().solve(&(-gradient)) {
                Some(s) => s,
                None => {
                    mu *= 10.0;
                    iterations += 1;
                    if mu > config.damping_max || iterations >= config.max_iterations {
                        break 'outer;
                    }
                    continue;
                }
            };
            let trial_lambda = lambda + step_scaled.component_mul(&lambda_scales);
            iterations += 1;
            match residual(&trial_lambda, tau, scene, params, config.grid) {
                Ok((trial_f, trial_cfg)) => {
                    let trial_norm = config.weighted_norm(&trial_f);
                    if trial_norm < f_norm {
                        lambda = trial_lambda;
                        f = trial_f;
                        cfg = trial_cfg;
                        f_norm = trial_norm;
                        mu /= 10.0;
                        damping = Some(mu);
                        converged = f_norm <= config.tol_f;
                        break;
                    }
                    mu *= 10.0;
                }
                // A diverging trial is just a bad step.
                Err(_) => mu *= 10.0,
            }
            if mu > config.damping_max || iterations >= config.max_iterations {
                break 'outer;
            }
        }
    }

    let mut stability = None;
    let mut jac_full = None;
    if converged && config.classify {
        if let Ok(j) = jacobian(&lambda, tau, scene, params, config) {
            stability = Some(classify_stability(&j.f_lambda, config));
            jac_full = Some(j);
        } else {
            converged = false;
        }
    }

    log::debug!(
        "bvp solve: iterations={iterations} |F|={f_norm:.3e} converged={converged} sigma_min={:?}",
        stability.map(|s| s.sigma_min)
    );

    Ok(BvpSolution {
        point: ManifoldPoint {
            lambda,
            tau: *tau,
            config: Some(cfg),
        },
        report: ResidualReport {
            f_value: f,
            f_norm,
            iterations,
            converged,
            stability,
        },
        jacobian: jac_full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::Twist;
    use crate::mechanics::{perturbed_energy, total_energy};
    use crate::potentials::{SphereField, TipField};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    fn sphere_scene() -> Scene {
        Scene {
            spheres: vec![
                SphereField::new(Vector3::new(0.008, 0.0, 0.06), 0.012, 0.05, 2e4).unwrap(),
            ],
            capsules: vec![],
            tip_field: TipField::None,
        }
    }

    #[test]
    fn residual_zero_for_straight_rod() {
        let p = params();
        let tau = Actuation::new(0.0, 0.0, 0.05);
        let (f, _) = residual(&Wrench::zeros(), &tau, &Scene::free_space(), &p, 100).unwrap();
        assert!(f.norm() < 1e-14);
    }

    #[test]
    fn residual_zero_for_free_space_arc() {
        // λ* = −Λ_ad gives Λ ≡ 0, the constant-curvature equilibrium.
        let p = params();
        let tau = Actuation::new(25.0, -5.0, 0.07);
        let lambda_ad = actuation_wrench_unchecked(&tau, &p);
        let (f, cfg) = residual(&(-lambda_ad), &tau, &Scene::free_space(), &p, 100).unwrap();
        assert!(f.norm() < 1e-10);
        assert!(cfg.tip_internal().norm() < 1e-10);
    }

    #[test]
    fn residual_detects_non_equilibrium() {
        let p = params();
        let tau = Actuation::new(0.0, 0.0, 0.05);
        let lambda = Wrench::new(1e-3, -2e-3, 0.0, 0.05, 0.0, 0.02);
        let (f, _) = residual(&lambda, &tau, &Scene::free_space(), &p, 100).unwrap();
        assert!(f.norm() > 1e-6);
    }

    #[test]
    fn residual_is_deterministic() {
        let p = params();
        let tau = Actuation::new(12.0, 4.0, 0.06);
        let lambda = Wrench::new(0.01, 0.02, -0.01, 0.5, -0.2, 0.3);
        let (f1, _) = residual(&lambda, &tau, &sphere_scene(), &p, 100).unwrap();
        let (f2, _) = residual(&lambda, &tau, &sphere_scene(), &p, 100).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn residual_with_tip_force() {
        let p = params();
        let mut scene = Scene::free_space();
        scene.tip_field = TipField::LinearForce {
            force: Vector3::new(0.1, 0.0, 0.0),
        };
        // The straight rod is no longer an equilibrium under a tip load.
        let tau = Actuation::new(0.0, 0.0, 0.05);
        let (f, _) = residual(&Wrench::zeros(), &tau, &scene, &p, 100).unwrap();
        assert!(f.norm() > 1e-3);
    }

    #[test]
    fn jacobian_invertible_at_straight_rod() {
        let p = params();
        let config = SolverConfig::default();
        let tau = Actuation::new(0.0, 0.0, 0.05);
        let jac = jacobian(&Wrench::zeros(), &tau, &Scene::free_space(), &p, &config).unwrap();
        let info = classify_stability(&jac.f_lambda, &config);
        assert_eq!(info.rank, 6);
        assert!(info.sigma_min > 1e-6 * info.sigma_max);
    }

    #[test]
    fn jacobian_fd_consistency_is_second_order() {
        // Doubling the step changes entries by O(step²): the nested
        // differences grow by a factor of about four.
        let p = params();
        let tau = Actuation::new(10.0, 0.0, 0.06);
        let lambda = Wrench::new(0.02, -0.01, 0.0, 0.4, 0.1, -0.2);
        let jac_at = |fd: f64| {
            let config = SolverConfig {
                fd_step: fd,
                ..SolverConfig::default()
            };
            jacobian(&lambda, &tau, &sphere_scene(), &p, &config)
                .unwrap()
                .full()
        };
        let j1 = jac_at(4e-4);
        let j2 = jac_at(8e-4);
        let j4 = jac_at(16e-4);
        let ratio = (j4 - j2).norm() / (j2 - j1).norm();
        assert!(
            (2.5..6.0).contains(&ratio),
            "expected second-order step sensitivity, got ratio {ratio}"
        );
    }

    #[test]
    fn solve_from_exact_solution_is_a_fixed_point() {
        let p = params();
        let config = SolverConfig::default();
        let tau = Actuation::new(20.0, 0.0, 0.08);
        let lambda_star = -actuation_wrench_unchecked(&tau, &p);
        let sol = solve_bvp(&lambda_star, &tau, &Scene::free_space(), &p, &config).unwrap();
        assert!(sol.report.converged);
        assert!(sol.report.iterations <= 2);
        assert!((sol.point.lambda - lambda_star).norm() < 1e-10);
    }

    #[test]
    fn solve_converges_to_free_space_equilibrium() {
        let p = params();
        let config = SolverConfig::default();
        let tau = Actuation::new(15.0, 0.0, 0.07);
        let lambda_star = -actuation_wrench_unchecked(&tau, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let noise = Wrench::from_fn(|_, _| rng.gen_range(-1e-3..1e-3));
            let sol =
                solve_bvp(&(lambda_star + noise), &tau, &Scene::free_space(), &p, &config).unwrap();
            assert!(sol.report.converged);
            assert!(sol.report.f_norm <= 1e-8);
            assert!((sol.point.lambda - lambda_star).norm() < 1e-7);
            let stab = sol.report.stability.unwrap();
            assert_eq!(stab.rank, 6);
        }
    }

    #[test]
    fn solve_in_sphere_field_passes_energy_stationarity() {
        let p = params();
        let scene = sphere_scene();
        // The first-variation check isolates the continuum stationarity
        // property; solve on a finer grid so quadrature error stays well
        // below the tolerance.
        let config = SolverConfig {
            grid: 200,
            ..SolverConfig::default()
        };
        let tau = Actuation::new(0.0, 0.0, 0.06);
        // Bias the guess sideways so the solver lands on a deflected branch.
        let guess = Wrench::new(0.0, 0.3, 0.0, 2.0, 0.0, 0.0);
        let sol = solve_bvp(&guess, &tau, &scene, &p, &config).unwrap();
        assert!(sol.report.converged, "residual {}", sol.report.f_norm);
        let cfg = sol.point.config.as_ref().unwrap();

        let energy = total_energy(cfg, &p, &scene);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let eps = 1e-5;
        for _ in 0..20 {
            let eta = random_smooth_perturbation(cfg.nodes().len(), &mut rng);
            let e_plus = perturbed_energy(cfg, &p, &scene, &eta, eps);
            let e_minus = perturbed_energy(cfg, &p, &scene, &eta, -eps);
            let derivative = (e_plus - e_minus) / (2.0 * eps);
            let rel = derivative.abs() / energy.abs().max(1.0);
            assert!(
                rel < 1e-4,
                "stationarity violated: dE/deps = {derivative:.3e}, rel {rel:.3e}"
            );
        }
    }

    /// Random smooth control perturbation: a low-order Fourier series per
    /// component, normalized to unit sup norm over the grid.
    fn random_smooth_perturbation(n_nodes: usize, rng: &mut impl Rng) -> Vec<Twist> {
        let coeffs: Vec<[f64; 5]> = (0..6)
            .map(|_| {
                let mut c = [0.0; 5];
                for v in c.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                c
            })
            .collect();
        let mut eta: Vec<Twist> = (0..n_nodes)
            .map(|k| {
                let t = k as f64 / (n_nodes - 1) as f64;
                Twist::from_fn(|i, _| {
                    let c = &coeffs[i];
                    c[0] + c[1] * (std::f64::consts::PI * t).sin()
                        + c[2] * (std::f64::consts::PI * t).cos()
                        + c[3] * (2.0 * std::f64::consts::PI * t).sin()
                        + c[4] * (2.0 * std::f64::consts::PI * t).cos()
                })
            })
            .collect();
        let sup = eta.iter().map(|v| v.amax()).fold(0.0f64, f64::max);
        for v in eta.iter_mut() {
            *v /= sup;
        }
        eta
    }

    #[test]
    fn classifier_counts_rank_deficiency() {
        let config = SolverConfig::default();
        let mut m = Matrix6::identity();
        let full = classify_stability(&m, &config);
        assert_eq!(full.rank, 6);
        m.row_mut(3).scale_mut(0.0);
        let deficient = classify_stability(&m, &config);
        assert_eq!(deficient.rank, 5);
        assert!(deficient.sigma_min <= 1e-12);
    }

    #[test]
    fn tau_reconstruction_round_trip() {
        // Recover τ from an integrated configuration through the
        // constitutive law: Λ_ad = Λ − C u at every node, then invert the
        // actuation map.
        let p = params();
        let config = SolverConfig::default();
        let tau = Actuation::new(18.0, -7.0, 0.065);
        let guess = -actuation_wrench_unchecked(&tau, &p);
        let sol = solve_bvp(&guess, &tau, &sphere_scene(), &p, &config).unwrap();
        assert!(sol.report.converged);
        let cfg = sol.point.config.as_ref().unwrap();
        let stiffness = p.stiffness();
        let mut lambda_ad_est = Wrench::zeros();
        for node in cfg.nodes() {
            lambda_ad_est += node.internal - stiffness.component_mul(&node.strain);
        }
        lambda_ad_est /= cfg.nodes().len() as f64;
        let tau1 = -lambda_ad_est[1] / p.tendon_offset;
        let tau2 = lambda_ad_est[0] / p.tendon_offset;
        let tau3 = cfg.length();
        assert_relative_eq!(tau1, tau.tension_a, epsilon = 1e-6);
        assert_relative_eq!(tau2, tau.tension_b, epsilon = 1e-6);
        assert_relative_eq!(tau3, tau.length, epsilon = 1e-12);
        assert_relative_eq!(lambda_ad_est[5], -(tau1.abs() + tau2.abs()), epsilon = 1e-6);
    }

    #[test]
    fn backward_shooting_recovers_base_state() {
        let p = params();
        let config = SolverConfig::default();
        let tau = Actuation::new(10.0, 5.0, 0.06);
        let guess = -actuation_wrench_unchecked(&tau, &p);
        let scene = sphere_scene();
        let sol = solve_bvp(&guess, &tau, &scene, &p, &config).unwrap();
        assert!(sol.report.converged);
        let cfg = sol.point.config.as_ref().unwrap();

        let tip = cfg.tip_pose().clone();
        let tip_internal = cfg.tip_internal();
        let back = integrate_rod(
            &tip,
            &tip_internal,
            tau.length,
            0.0,
            &tau,
            &p,
            &scene,
            config.grid,
        )
        .unwrap();
        let (s0, g0, lambda0) = back.last().unwrap();
        assert!(s0.abs() < 1e-12);
        assert!((g0.rotation - nalgebra::Matrix3::identity()).norm() < 1e-6);
        assert!(g0.position.norm() < 1e-6);
        let lambda_recovered = lambda0 - actuation_wrench_unchecked(&tau, &p);
        assert!((lambda_recovered - sol.point.lambda).norm() < 1e-6);
    }

    #[test]
    fn nonconvergence_reports_best_iterate() {
        let p = params();
        let config = SolverConfig {
            max_iterations: 2,
            ..SolverConfig::default()
        };
        let tau = Actuation::new(30.0, 0.0, 0.08);
        let sol = solve_bvp(&Wrench::zeros(), &tau, &sphere_scene(), &p, &config).unwrap();
        assert!(!sol.report.converged);
        assert!(sol.report.iterations <= 2);
        assert!(sol.report.f_norm.is_finite());
    }
}
