//! Tangent-space charts on the stable manifold.
//!
//! A chart at an origin `x_i = (λ_i, τ_i)` parameterizes a patch of the
//! manifold by the tangent basis
//!
//! ```text
//! Φ_i = [ −F_λ⁻¹ F_τ ]
//!       [   I_{n×n}  ]
//! ```
//!
//! whose columns span the kernel of `[F_λ F_τ]`. The identity bottom block
//! means chart coordinates `y` directly parameterize actuation increments,
//! so projecting a tangent point back to the manifold is an ordinary
//! shooting solve with the τ-components held fixed.
//!
//! Charts carry a validity radius `R`, a tangent-to-manifold gap bound `ε`
//! (both measured with the planner metric `M`), and half-space inequalities
//! toward the projected origins of neighboring charts that reduce overlaps
//! between cells. Chart-selection probabilities favor rarely sampled charts.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::Rng;
use std::io::{self, Write};
use thiserror::Error;

use crate::mechanics::RobotParams;
use crate::metric::{AmbientVec, MetricM};
use crate::potentials::Scene;
use crate::shooting::{solve_bvp, BvpSolution, Jacobian, ManifoldPoint, SolverConfig};

pub type ChartId = usize;

/// Tangent basis matrix: ambient × chart dimensions.
pub type Basis = SMatrix<f64, 9, 3>;

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("chart creation failed: F_lambda is singular at the origin")]
    ChartCreationFailed,
}

/// Global chart parameters.
#[derive(Debug, Clone)]
pub struct AtlasParams {
    /// Validity radius `R` of a chart, metric units.
    pub radius: f64,
    /// Tangent-to-manifold distance bound `ε`, metric units.
    pub epsilon: f64,
    pub metric: MetricM,
}

impl Default for AtlasParams {
    fn default() -> Self {
        AtlasParams {
            radius: 10.0,
            epsilon: 5.0,
            metric: MetricM::default(),
        }
    }
}

/// A single tangent-space chart.
#[derive(Debug, Clone)]
pub struct Chart {
    pub origin: ManifoldPoint,
    origin_ambient: AmbientVec,
    basis: Basis,
    /// Inverse Gram matrix `(Φ^T Φ)⁻¹` for the orthogonal projection.
    gram_inv: Matrix3<f64>,
    /// `(neighbor id, neighbor origin projected into this chart)`.
    neighbors: Vec<(ChartId, Vector3<f64>)>,
    /// Times this chart was selected for sampling (`N_i`).
    pub samples: u64,
}

impl Chart {
    fn build(origin: ManifoldPoint, basis: Basis) -> Chart {
        let gram = basis.transpose() * basis;
        let gram_inv = gram.try_inverse().expect("Gram matrix of a full-rank basis");
        let origin_ambient = origin.ambient();
        Chart {
            origin,
            origin_ambient,
            basis,
            gram_inv,
            neighbors: Vec::new(),
            samples: 0,
        }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn origin_ambient(&self) -> &AmbientVec {
        &self.origin_ambient
    }

    pub fn neighbors(&self) -> &[(ChartId, Vector3<f64>)] {
        &self.neighbors
    }

    /// Tangent point in ambient coordinates: `x_i + Φ_i y`.
    pub fn to_ambient(&self, y: &Vector3<f64>) -> AmbientVec {
        self.origin_ambient + self.basis * y
    }

    /// Orthogonal projection into chart coordinates:
    /// `y = (Φ^T Φ)⁻¹ Φ^T (x − x_i)`.
    pub fn to_chart_coords(&self, x: &AmbientVec) -> Vector3<f64> {
        self.gram_inv * (self.basis.transpose() * (x - self.origin_ambient))
    }

    /// Half-space inequalities toward all neighbor cells:
    /// `2 y^T y_j ≤ y_j^T y_j`.
    pub fn within_cell(&self, y: &Vector3<f64>) -> bool {
        self.neighbors
            .iter()
            .all(|(_, yj)| 2.0 * y.dot(yj) <= yj.dot(yj))
    }

    /// Neighbor charts whose midplane inequality `y` violates.
    pub fn violated_neighbors(&self, y: &Vector3<f64>) -> Vec<ChartId> {
        self.neighbors
            .iter()
            .filter(|(_, yj)| 2.0 * y.dot(yj) > yj.dot(yj))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Chart membership test for a manifold point `x` with chart
    /// coordinates `y`: within the validity radius, within the tangent gap
    /// bound, and inside the cell.
    pub fn contains(&self, y: &Vector3<f64>, x: &AmbientVec, params: &AtlasParams) -> bool {
        let tangent = self.basis * y;
        if params.metric.norm(&tangent) > params.radius {
            return false;
        }
        if params.metric.distance(&self.to_ambient(y), x) > params.epsilon {
            return false;
        }
        self.within_cell(y)
    }
}

/// Growable collection of charts covering the explored manifold region.
#[derive(Debug, Clone)]
pub struct Atlas {
    charts: Vec<Chart>,
    pub params: AtlasParams,
}

impl Atlas {
    pub fn new(params: AtlasParams) -> Self {
        Atlas {
            charts: Vec::new(),
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    pub fn chart(&self, id: ChartId) -> &Chart {
        &self.charts[id]
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    /// Registers a new chart at a converged, full-rank origin and links it
    /// with every chart whose origin lies within metric distance `2R`.
    pub fn add_chart(
        &mut self,
        origin: ManifoldPoint,
        jacobian: &Jacobian,
    ) -> Result<ChartId, AtlasError> {
        let basis = tangent_basis(jacobian)?;
        let id = self.charts.len();
        let mut chart = Chart::build(origin, basis);
        let reach = 2.0 * self.params.radius;
        for (other_id, other) in self.charts.iter().enumerate() {
            if self
                .params
                .metric
                .distance(&chart.origin_ambient, &other.origin_ambient)
                <= reach
            {
                let y_other_in_new = chart.to_chart_coords(&other.origin_ambient);
                chart.neighbors.push((other_id, y_other_in_new));
            }
        }
        // Mirror the relation on the existing side.
        let links: Vec<ChartId> = chart.neighbors.iter().map(|(j, _)| *j).collect();
        let new_origin = chart.origin_ambient;
        self.charts.push(chart);
        for j in links {
            let y_new_in_other = self.charts[j].to_chart_coords(&new_origin);
            self.charts[j].neighbors.push((id, y_new_in_other));
        }
        Ok(id)
    }

    /// Draws a chart index with probability
    /// `p_i = (max(N) − N_i)² / Σ_j (max(N) − N_j)²` and counts the
    /// selection. When every chart has been selected equally often the
    /// weights all vanish and selection is uniform.
    pub fn select_chart(&mut self, rng: &mut impl Rng) -> ChartId {
        assert!(!self.charts.is_empty(), "selection from an empty atlas");
        let max_n = self.charts.iter().map(|c| c.samples).max().unwrap();
        let weights: Vec<f64> = self
            .charts
            .iter()
            .map(|c| {
                let w = (max_n - c.samples) as f64;
                w * w
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let id = if total == 0.0 {
            rng.gen_range(0..self.charts.len())
        } else {
            let mut draw = rng.gen_range(0.0..total);
            let mut chosen = self.charts.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if draw < *w {
                    chosen = i;
                    break;
                }
                draw -= w;
            }
            chosen
        };
        self.charts[id].samples += 1;
        id
    }

    pub fn total_selections(&self) -> u64 {
        self.charts.iter().map(|c| c.samples).sum()
    }

    /// One row per chart: id, `N_i`, the 9 origin coordinates, then the
    /// neighbor ids.
    pub fn write_delimited(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "# id samples x1..x9 neighbor_ids...")?;
        for (id, c) in self.charts.iter().enumerate() {
            let coords: Vec<String> = c
                .origin_ambient
                .iter()
                .map(|v| format!("{v:.17e}"))
                .collect();
            let mut neighbor_ids: Vec<ChartId> = c.neighbors.iter().map(|(j, _)| *j).collect();
            neighbor_ids.sort_unstable();
            let tail: Vec<String> = neighbor_ids.iter().map(|j| j.to_string()).collect();
            writeln!(
                out,
                "{} {} {}{}{}",
                id,
                c.samples,
                coords.join(" "),
                if tail.is_empty() { "" } else { " " },
                tail.join(" ")
            )?;
        }
        Ok(())
    }
}

/// Kernel basis of `[F_λ F_τ]` in the unorthogonal form `Φ = [−F_λ⁻¹F_τ; I]`.
pub fn tangent_basis(jacobian: &Jacobian) -> Result<Basis, AtlasError> {
    let lu = jacobian.f_lambda.lu();
    let mut basis = Basis::zeros();
    for j in 0..3 {
        let rhs = jacobian.f_tau.column(j).into_owned();
        let col = lu.solve(&rhs).ok_or(AtlasError::ChartCreationFailed)?;
        if !col.iter().all(|v| v.is_finite()) {
            return Err(AtlasError::ChartCreationFailed);
        }
        basis.fixed_view_mut::<6, 1>(0, j).copy_from(&(-col));
    }
    basis
        .fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&Matrix3::identity());
    Ok(basis)
}

/// Projects a tangent point of `chart` back to the manifold: forms the
/// ambient guess `x_i + Φ y`, holds its τ-components fixed, and shoots for
/// the λ-components. The caller discards the sample when the solve does not
/// converge.
pub fn project_to_manifold(
    chart: &Chart,
    y: &Vector3<f64>,
    scene: &Scene,
    params: &RobotParams,
    config: &SolverConfig,
) -> Result<BvpSolution, crate::mechanics::MechanicsError> {
    let guess = chart.to_ambient(y);
    let (lambda, tau) = ManifoldPoint::split_ambient(&guess);
    solve_bvp(&lambda, &tau, scene, params, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanics::{actuation_wrench_unchecked, Actuation};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    /// Converged free-space point at the given actuation, with Jacobian.
    fn free_point(tau: Actuation) -> (ManifoldPoint, Jacobian) {
        let p = params();
        let config = SolverConfig::default();
        let guess = -actuation_wrench_unchecked(&tau, &p);
        let sol = solve_bvp(&guess, &tau, &Scene::free_space(), &p, &config).unwrap();
        assert!(sol.report.converged);
        (sol.point, sol.jacobian.unwrap())
    }

    #[test]
    fn basis_shape_and_identity_block() {
        let (_, jac) = free_point(Actuation::new(0.0, 0.0, 0.05));
        let basis = tangent_basis(&jac).unwrap();
        assert_eq!(basis.nrows(), 9);
        assert_eq!(basis.ncols(), 3);
        assert_relative_eq!(
            basis.fixed_view::<3, 3>(6, 0).into_owned(),
            Matrix3::identity(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn kernel_property_at_random_points() {
        let p = params();
        let config = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let tau = Actuation::new(
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
                rng.gen_range(0.03..0.09),
            );
            let guess = -actuation_wrench_unchecked(&tau, &p);
            let sol = solve_bvp(&guess, &tau, &Scene::free_space(), &p, &config).unwrap();
            assert!(sol.report.converged);
            let jac = sol.jacobian.unwrap();
            let basis = tangent_basis(&jac).unwrap();
            let full = jac.full();
            let residual = (full * basis).norm();
            assert!(
                residual <= 1e-6 * full.norm(),
                "kernel violation: {residual} vs {}",
                full.norm()
            );
        }
    }

    #[test]
    fn ambient_map_is_affine_with_identity_tau_block() {
        let (point, jac) = free_point(Actuation::new(10.0, -5.0, 0.06));
        let chart = Chart::build(point, tangent_basis(&jac).unwrap());
        let y0 = Vector3::zeros();
        assert_relative_eq!(
            chart.to_ambient(&y0),
            *chart.origin_ambient(),
            epsilon = 1e-15
        );

        let y1 = Vector3::new(3.0, -1.0, 0.004);
        let y2 = Vector3::new(-0.5, 2.0, -0.001);
        let d1 = chart.to_ambient(&y1) - chart.origin_ambient();
        let d2 = chart.to_ambient(&y2) - chart.origin_ambient();
        let d12 = chart.to_ambient(&(y1 + y2)) - chart.origin_ambient();
        assert_relative_eq!(d12, d1 + d2, epsilon = 1e-12);

        // τ-components of the ambient displacement equal y exactly.
        for i in 0..3 {
            assert_relative_eq!(d1[6 + i], y1[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn chart_coords_round_trip_and_orthogonality() {
        let (point, jac) = free_point(Actuation::new(5.0, 15.0, 0.07));
        let chart = Chart::build(point, tangent_basis(&jac).unwrap());
        let y = Vector3::new(1.2, -0.7, 0.003);
        let x = chart.to_ambient(&y);
        assert!((chart.to_chart_coords(&x) - y).norm() < 1e-10);

        // Off-tangent point: the projection residual is orthogonal to the
        // basis columns (normal equations).
        let mut off = x;
        off[0] += 0.05;
        off[4] -= 0.3;
        let y_proj = chart.to_chart_coords(&off);
        let residual = off - chart.to_ambient(&y_proj);
        let against = chart.basis().transpose() * residual;
        assert!(against.norm() < 1e-10);
    }

    #[test]
    fn projection_returns_origin_for_zero_y() {
        let p = params();
        let config = SolverConfig::default();
        let (point, jac) = free_point(Actuation::new(8.0, 0.0, 0.05));
        let chart = Chart::build(point.clone(), tangent_basis(&jac).unwrap());
        let sol =
            project_to_manifold(&chart, &Vector3::zeros(), &Scene::free_space(), &p, &config)
                .unwrap();
        assert!(sol.report.converged);
        assert!((sol.point.lambda - point.lambda).norm() < 1e-10);
    }

    #[test]
    fn projection_of_small_tangent_steps_converges_within_epsilon() {
        let p = params();
        let config = SolverConfig::default();
        let atlas_params = AtlasParams::default();
        let (point, jac) = free_point(Actuation::new(0.0, 0.0, 0.06));
        let chart = Chart::build(point, tangent_basis(&jac).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let y = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-0.002..0.002),
            );
            let sol = project_to_manifold(&chart, &y, &Scene::free_space(), &p, &config).unwrap();
            assert!(sol.report.converged);
            assert!(sol.report.f_norm <= 1e-8);
            // Chart consistency: the manifold point stays within ε of its
            // tangent preimage.
            let x_new = sol.point.ambient();
            let y_new = chart.to_chart_coords(&x_new);
            let gap = atlas_params
                .metric
                .distance(&chart.to_ambient(&y_new), &x_new);
            assert!(gap <= atlas_params.epsilon, "gap {gap}");
        }
    }

    #[test]
    fn containment_thresholds() {
        let atlas_params = AtlasParams::default();
        let (point, jac) = free_point(Actuation::new(0.0, 0.0, 0.06));
        let chart = Chart::build(point, tangent_basis(&jac).unwrap());

        // Origin with no neighbors.
        assert!(chart.contains(&Vector3::zeros(), chart.origin_ambient(), &atlas_params));

        // A tangent point at metric length 1.01·R fails the radius test even
        // with a perfect manifold match.
        let dir = Vector3::new(1.0, 0.4, 0.002);
        let len = atlas_params.metric.norm(&(chart.basis() * dir));
        let y_far = dir * (1.01 * atlas_params.radius / len);
        let x_far = chart.to_ambient(&y_far);
        assert!(!chart.contains(&y_far, &x_far, &atlas_params));
        let y_near = dir * (0.99 * atlas_params.radius / len);
        let x_near = chart.to_ambient(&y_near);
        assert!(chart.contains(&y_near, &x_near, &atlas_params));

        // Tangent gap beyond ε fails the consistency test.
        let mut x_off = chart.to_ambient(&Vector3::zeros());
        x_off[3] += atlas_params.epsilon * 1.5; // force entry, metric weight 0.8
        let y_off = chart.to_chart_coords(&x_off);
        assert!(!chart.contains(&y_off, &x_off, &atlas_params));
    }

    #[test]
    fn neighbor_registration_and_midplane() {
        let mut atlas = Atlas::new(AtlasParams::default());
        let metric = atlas.params.metric.clone();

        // Three free-space charts along the τ₁ axis; the first two are close
        // enough to be neighbors, the third is beyond 2R from the first.
        let (p0, j0) = free_point(Actuation::new(0.0, 0.0, 0.06));
        let delta_for = |dist: f64| {
            // Distance between free-space equilibria grows linearly in Δτ₁.
            let (pa, _) = free_point(Actuation::new(1.0, 0.0, 0.06));
            let unit = metric.distance(&pa.ambient(), &p0.ambient());
            dist / unit
        };
        let d15 = delta_for(15.0);
        let (p1, j1) = free_point(Actuation::new(d15, 0.0, 0.06));
        let c0 = atlas.add_chart(p0.clone(), &j0).unwrap();
        let c1 = atlas.add_chart(p1, &j1).unwrap();
        assert!(atlas.chart(c0).neighbors().iter().any(|(j, _)| *j == c1));
        assert!(atlas.chart(c1).neighbors().iter().any(|(j, _)| *j == c0));

        let d25 = delta_for(25.0);
        let (p2, j2) = free_point(Actuation::new(d25, 0.0, 0.06));
        let c2 = atlas.add_chart(p2, &j2).unwrap();
        assert!(!atlas.chart(c0).neighbors().iter().any(|(j, _)| *j == c2));
        // But chart 1 (10 metric units from chart 2) is linked to it.
        assert!(atlas.chart(c1).neighbors().iter().any(|(j, _)| *j == c2));

        // Midplane semantics between charts 0 and 1: points on either side
        // of the midpoint belong to exactly one cell.
        let y01 = atlas
            .chart(c0)
            .neighbors()
            .iter()
            .find(|(j, _)| *j == c1)
            .unwrap()
            .1;
        let before = y01 * 0.49;
        let beyond = y01 * 0.51;
        assert!(atlas.chart(c0).within_cell(&before));
        assert!(!atlas.chart(c0).within_cell(&beyond));
        assert!(!atlas.chart(c0).violated_neighbors(&before).contains(&c1));
        assert!(atlas.chart(c0).violated_neighbors(&beyond).contains(&c1));

        // Symmetry of the relation across the whole atlas.
        for (i, chart) in atlas.charts().iter().enumerate() {
            for (j, _) in chart.neighbors() {
                assert!(
                    atlas.chart(*j).neighbors().iter().any(|(k, _)| *k == i),
                    "neighbor relation not symmetric between {i} and {j}"
                );
            }
        }
    }

    #[test]
    fn selection_probabilities_follow_sample_counts() {
        let mut atlas = Atlas::new(AtlasParams::default());
        let (p0, j0) = free_point(Actuation::new(0.0, 0.0, 0.05));
        let (p1, j1) = free_point(Actuation::new(30.0, 0.0, 0.05));
        atlas.add_chart(p0, &j0).unwrap();
        atlas.add_chart(p1, &j1).unwrap();

        // N = (0, 5): the never-sampled chart is chosen with probability 1.
        atlas.charts[1].samples = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            assert_eq!(atlas.select_chart(&mut rng), 0);
            atlas.charts[0].samples = 0; // keep the weight configuration
        }

        // All counts equal: uniform selection.
        atlas.charts[0].samples = 5;
        let mut counts = [0u32; 2];
        let draws = 4000;
        for _ in 0..draws {
            let id = atlas.select_chart(&mut rng);
            counts[id] += 1;
            atlas.charts[0].samples = 5;
            atlas.charts[1].samples = 5;
        }
        let frac = counts[0] as f64 / draws as f64;
        assert!((0.45..0.55).contains(&frac), "uniform tie draw, got {frac}");
    }

    #[test]
    fn selection_counts_accumulate() {
        let mut atlas = Atlas::new(AtlasParams::default());
        let (p0, j0) = free_point(Actuation::new(0.0, 0.0, 0.05));
        let (p1, j1) = free_point(Actuation::new(20.0, 10.0, 0.07));
        atlas.add_chart(p0, &j0).unwrap();
        atlas.add_chart(p1, &j1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..137 {
            atlas.select_chart(&mut rng);
        }
        assert_eq!(atlas.total_selections(), 137);
    }

    #[test]
    fn singular_jacobian_fails_chart_creation() {
        let (_, jac) = free_point(Actuation::new(0.0, 0.0, 0.05));
        let mut bad = jac;
        let row = bad.f_lambda.row(3).into_owned();
        bad.f_lambda.row_mut(2).copy_from(&row);
        assert!(matches!(
            tangent_basis(&bad),
            Err(AtlasError::ChartCreationFailed)
        ));
    }

    #[test]
    fn single_chart_always_selected() {
        let mut atlas = Atlas::new(AtlasParams::default());
        let (p0, j0) = free_point(Actuation::new(0.0, 0.0, 0.05));
        atlas.add_chart(p0, &j0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            assert_eq!(atlas.select_chart(&mut rng), 0);
        }
    }
}
