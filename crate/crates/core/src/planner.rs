//! Sampling-based planners on the stable manifold.
//!
//! Three RRT* variants share the tree maintenance (nearest neighbors,
//! choose-parent among the k metric-nearest, rewiring with cost
//! propagation) and differ in SAMPLE and STEER:
//!
//! - `atlas-rrt-star`: samples on tangent-space charts, steers per the
//!   chart-aware STEER (re-expression on the nearest node's chart, shooting
//!   projection, cell bookkeeping, chart creation).
//! - `rrt-star-tau`: samples actuation values only and always shoots from
//!   the start configuration's λ.
//! - `rrt-star-lambda-tau`: samples `(λ, τ)` in a bounding box and shoots
//!   from the sampled λ.
//!
//! Edge cost is the Euclidean chord between tip positions; edge feasibility
//! interpolates linearly in `(λ, τ)`, re-solves the BVP at each interior
//! point with the interpolated λ as the guess, and collision-checks every
//! resulting configuration (a failed interior solve fails the edge).

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

use crate::atlas::{Atlas, AtlasParams, ChartId};
use crate::mechanics::{Actuation, RobotParams};
use crate::metric::{AmbientVec, MetricM};
use crate::potentials::Scene;
use crate::shooting::{solve_bvp, BvpSolution, ManifoldPoint, SolverConfig};

/// Planner variant identifiers; the names double as CLI values and metric
/// row labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    AtlasRrtStar,
    RrtStarTau,
    RrtStarLambdaTau,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::AtlasRrtStar,
        Variant::RrtStarTau,
        Variant::RrtStarLambdaTau,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::AtlasRrtStar => "atlas-rrt-star",
            Variant::RrtStarTau => "rrt-star-tau",
            Variant::RrtStarLambdaTau => "rrt-star-lambda-tau",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "atlas-rrt-star" | "atlas" => Ok(Variant::AtlasRrtStar),
            "rrt-star-tau" | "tau" => Ok(Variant::RrtStarTau),
            "rrt-star-lambda-tau" | "lambda-tau" => Ok(Variant::RrtStarLambdaTau),
            other => Err(format!(
                "unknown variant '{other}'; expected atlas-rrt-star, rrt-star-tau or rrt-star-lambda-tau"
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Planner parameters; the defaults follow the reference robot setup.
#[derive(Debug, Clone)]
pub struct PlannerParams {
    /// Chart validity radius `R`.
    pub chart_radius: f64,
    /// Tangent-to-manifold gap bound `ε`.
    pub epsilon: f64,
    /// Sample length factor `β > 1`.
    pub beta: f64,
    /// Extension clamp for `rrt-star-tau`, metric units on the τ block.
    pub ext_tau: f64,
    /// Extension clamp for `rrt-star-lambda-tau`, metric units.
    pub ext_lambda_tau: f64,
    /// Tree size at which planning stops.
    pub node_budget: usize,
    /// Neighborhood size for choose-parent and rewiring.
    pub k_near: usize,
    /// Goal acceptance threshold, metric units.
    pub goal_tolerance: f64,
    /// Interior points per edge feasibility check; 0 means endpoint-only
    /// (unsafe, for degenerate setups).
    pub edge_resolution: usize,
    pub metric: MetricM,
    /// Half-width of the λ moment sampling box (N·m).
    pub lambda_box_moment: f64,
    /// Half-width of the λ force sampling box (N).
    pub lambda_box_force: f64,
    /// Nodes with `σ_min ≤ σ_floor_rel · σ_max` count as marginally stable.
    pub sigma_floor_rel: f64,
    /// Admit marginally stable nodes into the tree.
    pub allow_marginal: bool,
    /// Safety cap on planner iterations.
    pub max_iterations: usize,
    /// Safety cap on wall time per run (seconds).
    pub time_limit_s: f64,
    pub solver: SolverConfig,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            chart_radius: 10.0,
            epsilon: 5.0,
            beta: 5.0,
            ext_tau: 7.0,
            ext_lambda_tau: 20.0,
            node_budget: 300,
            k_near: 10,
            goal_tolerance: 5.0,
            edge_resolution: 5,
            metric: MetricM::default(),
            lambda_box_moment: 2.0,
            lambda_box_force: 20.0,
            sigma_floor_rel: 1e-4,
            allow_marginal: false,
            max_iterations: 30_000,
            time_limit_s: 600.0,
            solver: SolverConfig::default(),
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), String> {
        self.metric.validate()?;
        let positive = [
            ("chart_radius", self.chart_radius),
            ("epsilon", self.epsilon),
            ("beta", self.beta),
            ("ext_tau", self.ext_tau),
            ("ext_lambda_tau", self.ext_lambda_tau),
            ("goal_tolerance", self.goal_tolerance),
            ("lambda_box_moment", self.lambda_box_moment),
            ("lambda_box_force", self.lambda_box_force),
            ("sigma_floor_rel", self.sigma_floor_rel),
            ("time_limit_s", self.time_limit_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.node_budget < 1 {
            return Err("node_budget must be at least 1".into());
        }
        if self.k_near < 1 {
            return Err("k_near must be at least 1".into());
        }
        Ok(())
    }

    fn atlas_params(&self) -> AtlasParams {
        AtlasParams {
            radius: self.chart_radius,
            epsilon: self.epsilon,
            metric: self.metric.clone(),
        }
    }
}

/// Weighted distance between two ambient points.
pub fn metric_distance(a: &ManifoldPoint, b: &ManifoldPoint, metric: &MetricM) -> f64 {
    metric.distance(&a.ambient(), &b.ambient())
}

/// Euclidean chord between the cached tip positions (meters).
pub fn tip_path_cost(a: &ManifoldPoint, b: &ManifoldPoint) -> f64 {
    let pa = a.tip_position().expect("configuration cached for tip cost");
    let pb = b.tip_position().expect("configuration cached for tip cost");
    (pb - pa).norm()
}

/// One node of the planning tree.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub point: ManifoldPoint,
    pub parent: Option<usize>,
    /// Cost-to-come: summed tip chords from the root (meters).
    pub cost: f64,
    /// Chart the node lives on (`atlas-rrt-star` only).
    pub chart: Option<ChartId>,
    pub tip: Vector3<f64>,
    /// Cached ambient coordinates.
    pub ambient: AmbientVec,
    children: Vec<usize>,
}

/// Result of one planning run.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub variant: Variant,
    pub seed: u64,
    pub nodes: Vec<TreeNode>,
    /// Tree node indices from the root to the goal-connected node.
    pub path: Option<Vec<usize>>,
    /// Path points including the exact goal appended last.
    pub path_points: Option<Vec<ManifoldPoint>>,
    /// Tip path cost in meters.
    pub cost: Option<f64>,
    /// Tree size when the goal was first connected.
    pub samples_before_path: Option<usize>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub timed_out: bool,
    pub atlas: Option<Atlas>,
}

enum Extension {
    Extended {
        solution: BvpSolution,
        near: usize,
        chart: Option<ChartId>,
    },
    Rejected,
}

/// Safety cap on cascaded rewiring operations per insertion.
const REWIRE_CASCADE_CAP: usize = 2000;

struct Planner<'a> {
    variant: Variant,
    robot: &'a RobotParams,
    scene: &'a Scene,
    params: &'a PlannerParams,
    solver: SolverConfig,
    edge_solver: SolverConfig,
    rng: ChaCha8Rng,
    tree: Vec<TreeNode>,
    atlas: Option<Atlas>,
    goal: ManifoldPoint,
    goal_ambient: AmbientVec,
    start_lambda: crate::liegroup::Wrench,
    /// Nodes from which an edge to the goal has been verified.
    goal_links: Vec<usize>,
    samples_before_path: Option<usize>,
    /// Permanent edge-feasibility results keyed by node index pairs.
    edge_memo: std::collections::HashMap<(usize, usize), bool>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Runs one planning query. `start` and `goal` must be converged, stable,
/// collision-free points with cached configurations.
pub fn plan(
    variant: Variant,
    robot: &RobotParams,
    scene: &Scene,
    start: &ManifoldPoint,
    goal: &ManifoldPoint,
    params: &PlannerParams,
    seed: u64,
) -> PlanResult {
    let clock = Instant::now();
    let mut solver = params.solver.clone();
    solver.metric = params.metric.clone();
    let edge_solver = solver.without_classification();

    let mut planner = Planner {
        variant,
        robot,
        scene,
        params,
        solver,
        edge_solver,
        rng: ChaCha8Rng::seed_from_u64(seed),
        tree: Vec::with_capacity(params.node_budget),
        atlas: None,
        goal: goal.clone(),
        goal_ambient: goal.ambient(),
        start_lambda: start.lambda,
        goal_links: Vec::new(),
        samples_before_path: None,
        edge_memo: std::collections::HashMap::new(),
    };
    let iterations = planner.run(start, clock);
    planner.into_result(variant, seed, iterations, clock)
}

impl<'a> Planner<'a> {
    fn run(&mut self, start: &ManifoldPoint, clock: Instant) -> usize {
        let root_chart = if self.variant == Variant::AtlasRrtStar {
            let mut atlas = Atlas::new(self.params.atlas_params());
            let jac = crate::shooting::jacobian(
                &start.lambda,
                &start.tau,
                self.scene,
                self.robot,
                &self.solver,
            )
            .expect("jacobian at the validated start point");
            let id = atlas
                .add_chart(start.clone(), &jac)
                .expect("chart at the validated start point");
            self.atlas = Some(atlas);
            Some(id)
        } else {
            None
        };
        let tip = start.tip_position().expect("start configuration cached");
        self.tree.push(TreeNode {
            point: start.clone(),
            parent: None,
            cost: 0.0,
            chart: root_chart,
            tip,
            ambient: start.ambient(),
            children: Vec::new(),
        });

        // Degenerate query: the start already satisfies the goal test.
        if self.params.metric.distance(&start.ambient(), &self.goal_ambient)
            <= self.params.goal_tolerance
            && self.edge_collision_free(start, &self.goal.clone())
        {
            self.goal_links.push(0);
            self.samples_before_path = Some(0);
            return 0;
        }

        let mut iterations = 0;
        while self.tree.len() < self.params.node_budget
            && iterations < self.params.max_iterations
            && clock.elapsed().as_secs_f64() < self.params.time_limit_s
        {
            iterations += 1;
            let extension = match self.variant {
                Variant::AtlasRrtStar => self.extend_atlas(),
                Variant::RrtStarTau => self.extend_tau(),
                Variant::RrtStarLambdaTau => self.extend_lambda_tau(),
            };
            let Extension::Extended {
                solution,
                near,
                chart,
            } = extension
            else {
                continue;
            };
            self.insert(solution, near, chart);
        }
        iterations
    }

    // ---- sampling and steering ----

    fn extend_atlas(&mut self) -> Extension {
        let (chart_rand, x_rand) = self.sample_on_atlas();
        let near = self.nearest(&x_rand);
        let near_chart = self.tree[near].chart.expect("atlas node carries a chart");

        let mut chart_id = chart_rand;
        let mut x_rand = x_rand;
        if chart_rand != near_chart {
            // Re-express the sample on the near node's chart and rescale the
            // step from the near node.
            chart_id = near_chart;
            let atlas = self.atlas.as_ref().unwrap();
            let chart = atlas.chart(chart_id);
            let y = chart.to_chart_coords(&x_rand);
            let tangent_point = chart.to_ambient(&y);
            let near_ambient = self.tree[near].point.ambient();
            let direction = tangent_point - near_ambient;
            let length = self.params.metric.norm(&direction);
            if length < 1e-12 {
                return Extension::Rejected;
            }
            let delta: f64 = self.rng.gen_range(0.5..=1.0);
            let step = delta * self.params.beta * self.params.chart_radius;
            x_rand = near_ambient + direction * (step / length);
        }

        let (lambda_guess, tau_new) = ManifoldPoint::split_ambient(&x_rand);
        if tau_new.validate(self.robot).is_err() {
            return Extension::Rejected;
        }
        let Ok(solution) = solve_bvp(&lambda_guess, &tau_new, self.scene, self.robot, &self.solver)
        else {
            return Extension::Rejected;
        };
        if !self.acceptable(&solution) {
            return Extension::Rejected;
        }
        if !self.edge_collision_free(&self.tree[near].point.clone(), &solution.point) {
            return Extension::Rejected;
        }

        // Chart bookkeeping: neighbor cells first, then the validity tests
        // of the current chart, then a fresh chart.
        let atlas = self.atlas.as_mut().unwrap();
        let x_new = solution.point.ambient();
        let chart = atlas.chart(chart_id);
        let y_new = chart.to_chart_coords(&x_new);
        let assigned = {
            let violated = chart.violated_neighbors(&y_new);
            let mut found = None;
            let mut best_distance = f64::INFINITY;
            for j in violated {
                let neighbor = atlas.chart(j);
                let yj = neighbor.to_chart_coords(&x_new);
                if neighbor.contains(&yj, &x_new, &atlas.params) {
                    let d = self
                        .params
                        .metric
                        .distance(neighbor.origin_ambient(), &x_new);
                    if d < best_distance {
                        best_distance = d;
                        found = Some(j);
                    }
                }
            }
            found
        };
        let chart_for_node = match assigned {
            Some(j) => j,
            None => {
                let chart = atlas.chart(chart_id);
                if chart.contains(&y_new, &x_new, &atlas.params) {
                    chart_id
                } else {
                    let jac = solution.jacobian.as_ref().expect("classified solve");
                    match atlas.add_chart(solution.point.clone(), jac) {
                        Ok(id) => id,
                        Err(_) => return Extension::Rejected,
                    }
                }
            }
        };

        Extension::Extended {
            solution,
            near,
            chart: Some(chart_for_node),
        }
    }

    /// Selects a chart and draws a tangent sample whose metric length from
    /// the chart origin is `δβR`, `δ ~ U[0.5, 1]`.
    ///
    /// Directions are isotropic with respect to the metric: with the Gram
    /// matrix `G = Φ^T M Φ = L L^T`, the draw `y = L^{-T} ŵ` maps the unit
    /// sphere of the metric onto chart coordinates. Uniform directions in
    /// raw chart coordinates would concentrate nearly all samples along the
    /// heavily weighted length coordinate and push them out of bounds.
    fn sample_on_atlas(&mut self) -> (ChartId, AmbientVec) {
        let atlas = self.atlas.as_mut().unwrap();
        let chart_id = atlas.select_chart(&mut self.rng);
        let chart = atlas.chart(chart_id);
        let mut w;
        loop {
            w = Vector3::new(
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
            );
            if w.norm() > 1e-9 {
                break;
            }
        }
        w.normalize_mut();
        let delta: f64 = self.rng.gen_range(0.5..=1.0);
        let target = delta * self.params.beta * self.params.chart_radius;

        let basis = chart.basis();
        let mut gram = nalgebra::Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                gram[(i, j)] = (0..9)
                    .map(|k| self.params.metric.weights[k] * basis[(k, i)] * basis[(k, j)])
                    .sum();
            }
        }
        let chol = nalgebra::Cholesky::new(gram).expect("metric Gram matrix is SPD");
        let y_dir = chol
            .l()
            .transpose()
            .solve_upper_triangular(&w)
            .expect("Cholesky factor is nonsingular");
        let y_rand = y_dir * target;
        (chart_id, chart.to_ambient(&y_rand))
    }

    fn extend_tau(&mut self) -> Extension {
        let tau_rand = [
            self.rng.gen_range(-self.robot.tau_max..=self.robot.tau_max),
            self.rng.gen_range(-self.robot.tau_max..=self.robot.tau_max),
            self.rng
                .gen_range(self.robot.length_min..=self.robot.length_max),
        ];
        let near = self.nearest_tau(&tau_rand);
        let tau_near = self.tree[near].point.tau.as_array();
        let dist = self.params.metric.distance_tau(&tau_rand, &tau_near);
        let clamp = self.params.ext_tau;
        let scale = if dist > clamp { clamp / dist } else { 1.0 };
        let tau_new = Actuation::new(
            tau_near[0] + (tau_rand[0] - tau_near[0]) * scale,
            tau_near[1] + (tau_rand[1] - tau_near[1]) * scale,
            tau_near[2] + (tau_rand[2] - tau_near[2]) * scale,
        );
        // The BVP guess is pinned to the start configuration's λ.
        let guess = self.start_lambda;
        let Ok(solution) = solve_bvp(&guess, &tau_new, self.scene, self.robot, &self.solver) else {
            return Extension::Rejected;
        };
        self.gate_common(solution, near)
    }

    fn extend_lambda_tau(&mut self) -> Extension {
        let bm = self.params.lambda_box_moment;
        let bf = self.params.lambda_box_force;
        let x_rand = AmbientVec::from_row_slice(&[
            self.rng.gen_range(-bm..=bm),
            self.rng.gen_range(-bm..=bm),
            self.rng.gen_range(-bm..=bm),
            self.rng.gen_range(-bf..=bf),
            self.rng.gen_range(-bf..=bf),
            self.rng.gen_range(-bf..=bf),
            self.rng.gen_range(-self.robot.tau_max..=self.robot.tau_max),
            self.rng.gen_range(-self.robot.tau_max..=self.robot.tau_max),
            self.rng
                .gen_range(self.robot.length_min..=self.robot.length_max),
        ]);
        let near = self.nearest(&x_rand);
        let near_ambient = self.tree[near].point.ambient();
        let offset = x_rand - near_ambient;
        let dist = self.params.metric.norm(&offset);
        let clamp = self.params.ext_lambda_tau;
        let x_new = if dist > clamp {
            near_ambient + offset * (clamp / dist)
        } else {
            x_rand
        };
        let (lambda_guess, tau_new) = ManifoldPoint::split_ambient(&x_new);
        let Ok(solution) =
            solve_bvp(&lambda_guess, &tau_new, self.scene, self.robot, &self.solver)
        else {
            return Extension::Rejected;
        };
        self.gate_common(solution, near)
    }

    /// Convergence, stability, node collision, and near-edge gates shared by
    /// the Euclidean baselines.
    fn gate_common(&mut self, solution: BvpSolution, near: usize) -> Extension {
        if !self.acceptable(&solution) {
            return Extension::Rejected;
        }
        if !self.edge_collision_free(&self.tree[near].point.clone(), &solution.point) {
            return Extension::Rejected;
        }
        Extension::Extended {
            solution,
            near,
            chart: None,
        }
    }

    fn acceptable(&self, solution: &BvpSolution) -> bool {
        if !solution.report.converged {
            return false;
        }
        if !self.params.allow_marginal {
            match solution.report.stability {
                Some(s) => {
                    if !s.is_stable() || s.sigma_min <= self.params.sigma_floor_rel * s.sigma_max {
                        return false;
                    }
                }
                None => return false,
            }
        }
        let cfg = solution.point.config.as_ref().expect("solve caches config");
        !cfg.in_collision(self.scene, self.robot.backbone_radius)
    }

    // ---- tree maintenance ----

    fn nearest(&self, x: &AmbientVec) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, node) in self.tree.iter().enumerate() {
            let d = self.params.metric.distance(&node.ambient, x);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn nearest_tau(&self, tau: &[f64; 3]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, node) in self.tree.iter().enumerate() {
            let d = self
                .params
                .metric
                .distance_tau(&node.point.tau.as_array(), tau);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn k_nearest(&self, x: &AmbientVec, k: usize) -> Vec<usize> {
        let mut with_d: Vec<(usize, f64)> = self
            .tree
            .iter()
            .enumerate()
            .map(|(i, node)| (i, self.params.metric.distance(&node.ambient, x)))
            .collect();
        with_d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        with_d.truncate(k);
        with_d.into_iter().map(|(i, _)| i).collect()
    }

    /// Nodes whose current k-nearest neighborhood contains `u`. Membership
    /// in a k-nearest set only shrinks as the tree grows, so checking this
    /// reverse relation at every insertion and cost improvement keeps the
    /// tree free of cheaper parent swaps within any final neighborhood.
    fn reverse_k_near(&self, u: usize) -> Vec<usize> {
        let k = self.params.k_near;
        let n = self.tree.len();
        let mut result = Vec::new();
        for v in 0..n {
            if v == u {
                continue;
            }
            let d_vu = self
                .params
                .metric
                .distance(&self.tree[v].ambient, &self.tree[u].ambient);
            let mut closer = 0;
            for w in 0..n {
                if w == v || w == u {
                    continue;
                }
                let d = self
                    .params
                    .metric
                    .distance(&self.tree[v].ambient, &self.tree[w].ambient);
                if d < d_vu {
                    closer += 1;
                    if closer >= k {
                        break;
                    }
                }
            }
            if closer < k {
                result.push(v);
            }
        }
        result
    }

    fn insert(&mut self, solution: BvpSolution, near: usize, chart: Option<ChartId>) {
        let point = solution.point;
        let tip = point.tip_position().expect("solve caches config");
        let ambient = point.ambient();

        let mut candidates = self.k_nearest(&ambient, self.params.k_near);
        if !candidates.contains(&near) {
            candidates.push(near);
        }

        // Edge feasibility toward the not-yet-indexed node; the near edge is
        // already established by the steering step.
        let mut local: Vec<(usize, bool)> = vec![(near, true)];

        // Choose the parent minimizing cost-to-come among feasible edges;
        // candidates are tried in increasing total-cost order, so the first
        // feasible one is optimal.
        let mut ordered: Vec<(usize, f64)> = candidates
            .iter()
            .map(|&i| (i, self.tree[i].cost + (self.tree[i].tip - tip).norm()))
            .collect();
        ordered.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let mut parent = near;
        let mut parent_cost = self.tree[near].cost + (self.tree[near].tip - tip).norm();
        for (cand, total) in &ordered {
            let ok = match local.iter().find(|(i, _)| *i == *cand) {
                Some((_, ok)) => *ok,
                None => {
                    let ok = self.edge_collision_free(&self.tree[*cand].point.clone(), &point);
                    local.push((*cand, ok));
                    ok
                }
            };
            if ok {
                parent = *cand;
                parent_cost = *total;
                break;
            }
        }

        let new_idx = self.tree.len();
        self.tree.push(TreeNode {
            point,
            parent: Some(parent),
            cost: parent_cost,
            chart,
            tip,
            ambient,
            children: Vec::new(),
        });
        self.tree[parent].children.push(new_idx);
        for (cand, ok) in local {
            self.edge_memo.insert(edge_key(cand, new_idx), ok);
        }

        // Rewire through the new node, then propagate cost decreases: a node
        // whose cost-to-come dropped may in turn be a cheaper parent for any
        // node holding it in its k-nearest neighborhood.
        let mut queue: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
        queue.push_back(new_idx);
        let mut ops = 0usize;
        while let Some(u) = queue.pop_front() {
            ops += 1;
            if ops > REWIRE_CASCADE_CAP {
                log::warn!("rewire cascade cap reached; tree costs may be improvable");
                break;
            }
            let u_cost = self.tree[u].cost;
            let u_tip = self.tree[u].tip;
            let mut targets = self.k_nearest(&self.tree[u].ambient.clone(), self.params.k_near + 1);
            targets.extend(self.reverse_k_near(u));
            targets.sort_unstable();
            targets.dedup();
            for v in targets {
                if v == u {
                    continue;
                }
                let alt = u_cost + (self.tree[v].tip - u_tip).norm();
                if alt + 1e-12 < self.tree[v].cost
                    && !self.is_ancestor(v, u)
                    && self.edge_feasible(u, v)
                {
                    self.reparent(v, u, alt, &mut queue);
                }
            }
        }

        // Goal test on the freshly inserted node.
        let d_goal = self
            .params
            .metric
            .distance(&self.tree[new_idx].point.ambient(), &self.goal_ambient);
        if d_goal <= self.params.goal_tolerance {
            let node_point = self.tree[new_idx].point.clone();
            let goal = self.goal.clone();
            if self.edge_collision_free(&node_point, &goal) {
                if self.samples_before_path.is_none() {
                    self.samples_before_path = Some(self.tree.len());
                    log::info!(
                        "{}: first goal connection with {} nodes",
                        self.variant.name(),
                        self.tree.len()
                    );
                }
                self.goal_links.push(new_idx);
            }
        }
    }

    /// Memoized edge feasibility between two tree nodes. Nodes are
    /// immutable, so the answer never changes.
    fn edge_feasible(&mut self, a: usize, b: usize) -> bool {
        let key = edge_key(a, b);
        if let Some(ok) = self.edge_memo.get(&key) {
            return *ok;
        }
        let ok =
            self.edge_collision_free(&self.tree[a].point.clone(), &self.tree[b].point.clone());
        self.edge_memo.insert(key, ok);
        ok
    }

    /// True iff `candidate` lies on the ancestor chain of `node`.
    fn is_ancestor(&self, candidate: usize, node: usize) -> bool {
        let mut current = node;
        while let Some(p) = self.tree[current].parent {
            if p == candidate {
                return true;
            }
            current = p;
        }
        false
    }

    fn reparent(
        &mut self,
        node: usize,
        new_parent: usize,
        new_cost: f64,
        improved: &mut std::collections::VecDeque<usize>,
    ) {
        let old_parent = self.tree[node].parent.expect("rewired node is not root");
        self.tree[old_parent].children.retain(|c| *c != node);
        self.tree[new_parent].children.push(node);
        self.tree[node].parent = Some(new_parent);
        let delta = new_cost - self.tree[node].cost;
        // Propagate the cost change through the subtree and queue every
        // improved node for rewiring checks.
        let mut stack = vec![node];
        while let Some(i) = stack.pop() {
            self.tree[i].cost += delta;
            improved.push_back(i);
            stack.extend(self.tree[i].children.iter().copied());
        }
    }

    /// Interpolates `m` interior points linearly in `(λ, τ)`, solves each
    /// BVP with the interpolated λ as the guess, and collision-checks the
    /// resulting configurations. Conservative: any failed interior solve
    /// fails the edge.
    fn edge_collision_free(&self, a: &ManifoldPoint, b: &ManifoldPoint) -> bool {
        let m = self.params.edge_resolution;
        if m == 0 {
            return true;
        }
        let xa = a.ambient();
        let xb = b.ambient();
        if (xb - xa).norm() == 0.0 {
            return true;
        }
        for i in 1..=m {
            let t = i as f64 / (m + 1) as f64;
            let x = xa * (1.0 - t) + xb * t;
            let (lambda, tau) = ManifoldPoint::split_ambient(&x);
            match solve_bvp(&lambda, &tau, self.scene, self.robot, &self.edge_solver) {
                Ok(sol) => {
                    if !sol.report.converged {
                        return false;
                    }
                    let cfg = sol.point.config.as_ref().expect("solve caches config");
                    if cfg.in_collision(self.scene, self.robot.backbone_radius) {
                        return false;
                    }
                }
                Err(_) => return false,
            }
        }
        true
    }

    fn into_result(
        self,
        variant: Variant,
        seed: u64,
        iterations: usize,
        clock: Instant,
    ) -> PlanResult {
        // Best goal connection under the final (post-rewiring) costs.
        let mut best: Option<(usize, f64)> = None;
        for &idx in &self.goal_links {
            let total = self.tree[idx].cost + tip_path_cost(&self.tree[idx].point, &self.goal);
            if best.map_or(true, |(_, c)| total < c) {
                best = Some((idx, total));
            }
        }
        let (path, path_points, cost) = match best {
            Some((idx, total)) => {
                let mut chain = Vec::new();
                let mut current = Some(idx);
                while let Some(i) = current {
                    chain.push(i);
                    current = self.tree[i].parent;
                }
                chain.reverse();
                let mut points: Vec<ManifoldPoint> =
                    chain.iter().map(|&i| self.tree[i].point.clone()).collect();
                let append_goal = self
                    .params
                    .metric
                    .distance(&self.tree[idx].point.ambient(), &self.goal_ambient)
                    > 0.0;
                if append_goal {
                    points.push(self.goal.clone());
                }
                (Some(chain), Some(points), Some(total))
            }
            None => (None, None, None),
        };
        let wall = clock.elapsed().as_secs_f64();
        PlanResult {
            variant,
            seed,
            nodes: self.tree,
            path,
            path_points,
            cost,
            samples_before_path: self.samples_before_path,
            iterations,
            wall_time_s: wall,
            timed_out: wall >= self.params.time_limit_s,
            atlas: self.atlas,
        }
    }
}
