//! Scenario files, validation, and the benchmark harness.
//!
//! A scenario is a single TOML file with nested sections for the robot, the
//! scene, the start and goal points, and the planner parameters. Start and
//! goal are given as `(λ, τ)`; loading re-solves both by shooting from the
//! stored λ and hard-fails unless they converge, have full rank, and are
//! collision-free.
//!
//! The harness runs a set of `(variant, seed)` pairs, writes per-run
//! artifacts (`path_*`, `tree_*`, `atlas_*` dumps) plus a `metrics.csv`
//! with one row per run and one aggregate row per variant. Failed runs
//! render as dash entries and never abort the batch.

use nalgebra::Vector3;
use serde::Deserialize;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

use crate::liegroup::{Twist, Wrench};
use crate::mechanics::{Actuation, RobotParams};
use crate::metric::MetricM;
use crate::planner::{plan, PlanResult, PlannerParams, Variant};
use crate::potentials::{CapsuleField, Scene, SphereField, TipField};
use crate::shooting::{solve_bvp, ManifoldPoint, SolverConfig, StabilityInfo};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] io::Error),
    #[error("scenario schema error: {0}")]
    Schema(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{which} point did not converge: |F| = {f_norm:.3e}")]
    NotConverged { which: &'static str, f_norm: f64 },
    #[error("{which} point is marginally stable: rank {rank}, sigma_min/sigma_max = {ratio:.3e}")]
    Unstable {
        which: &'static str,
        rank: usize,
        ratio: f64,
    },
    #[error("{which} configuration is in collision")]
    InCollision { which: &'static str },
}

// ---- file schema ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    robot: RobotSection,
    #[serde(default)]
    scene: SceneSection,
    start: PointSection,
    goal: PointSection,
    #[serde(default)]
    planner: PlannerSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotSection {
    e_modulus: f64,
    g_modulus: f64,
    backbone_radius: f64,
    tendon_offset: f64,
    tau_max: f64,
    length_min: f64,
    length_max: f64,
    natural_twist: Option<[f64; 6]>,
    axial_actuation: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneSection {
    #[serde(default)]
    spheres: Vec<SphereSection>,
    #[serde(default)]
    capsules: Vec<CapsuleSection>,
    tip_force: Option<[f64; 3]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereSection {
    center: [f64; 3],
    r_solid: f64,
    r_field: f64,
    stiffness: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapsuleSection {
    a: [f64; 3],
    b: [f64; 3],
    r_solid: f64,
    r_field: f64,
    stiffness: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointSection {
    lambda: [f64; 6],
    tau: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PlannerSection {
    chart_radius: f64,
    epsilon: f64,
    beta: f64,
    ext_tau: f64,
    ext_lambda_tau: f64,
    node_budget: usize,
    k_near: usize,
    goal_tolerance: f64,
    edge_resolution: usize,
    metric: [f64; 9],
    lambda_box_moment: f64,
    lambda_box_force: f64,
    sigma_floor_rel: f64,
    allow_marginal: bool,
    max_iterations: usize,
    time_limit_s: f64,
    grid: usize,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let p = PlannerParams::default();
        PlannerSection {
            chart_radius: p.chart_radius,
            epsilon: p.epsilon,
            beta: p.beta,
            ext_tau: p.ext_tau,
            ext_lambda_tau: p.ext_lambda_tau,
            node_budget: p.node_budget,
            k_near: p.k_near,
            goal_tolerance: p.goal_tolerance,
            edge_resolution: p.edge_resolution,
            metric: p.metric.weights,
            lambda_box_moment: p.lambda_box_moment,
            lambda_box_force: p.lambda_box_force,
            sigma_floor_rel: p.sigma_floor_rel,
            allow_marginal: p.allow_marginal,
            max_iterations: p.max_iterations,
            time_limit_s: p.time_limit_s,
            grid: SolverConfig::default().grid,
        }
    }
}

// ---- domain ----

/// Solver evidence recorded for a validated start or goal point.
#[derive(Debug, Clone, Copy)]
pub struct PointEvidence {
    pub f_norm: f64,
    pub stability: StabilityInfo,
    pub iterations: usize,
}

/// A fully validated scenario with solved start and goal points.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub robot: RobotParams,
    pub scene: Scene,
    pub start: ManifoldPoint,
    pub goal: ManifoldPoint,
    pub planner: PlannerParams,
    pub start_evidence: PointEvidence,
    pub goal_evidence: PointEvidence,
}

/// Loads and validates a scenario file; start and goal are solved and
/// cached.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path)?;
    let file: ScenarioFile = toml::from_str(&text)?;

    let robot = RobotParams {
        e_modulus: file.robot.e_modulus,
        g_modulus: file.robot.g_modulus,
        backbone_radius: file.robot.backbone_radius,
        tendon_offset: file.robot.tendon_offset,
        tau_max: file.robot.tau_max,
        length_min: file.robot.length_min,
        length_max: file.robot.length_max,
        natural_twist: file
            .robot
            .natural_twist
            .map(|v| Twist::from_row_slice(&v))
            .unwrap_or_else(|| RobotParams::default().natural_twist),
        axial_actuation: file.robot.axial_actuation.unwrap_or(true),
    };
    robot
        .validate()
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;

    let mut scene = Scene::free_space();
    for s in &file.scene.spheres {
        scene.spheres.push(
            SphereField::new(
                Vector3::from_row_slice(&s.center),
                s.r_solid,
                s.r_field,
                s.stiffness,
            )
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
        );
    }
    for c in &file.scene.capsules {
        scene.capsules.push(
            CapsuleField::new(
                Vector3::from_row_slice(&c.a),
                Vector3::from_row_slice(&c.b),
                c.r_solid,
                c.r_field,
                c.stiffness,
            )
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
        );
    }
    if let Some(f) = file.scene.tip_force {
        scene.tip_field = TipField::LinearForce {
            force: Vector3::from_row_slice(&f),
        };
    }

    let ps = &file.planner;
    let planner = PlannerParams {
        chart_radius: ps.chart_radius,
        epsilon: ps.epsilon,
        beta: ps.beta,
        ext_tau: ps.ext_tau,
        ext_lambda_tau: ps.ext_lambda_tau,
        node_budget: ps.node_budget,
        k_near: ps.k_near,
        goal_tolerance: ps.goal_tolerance,
        edge_resolution: ps.edge_resolution,
        metric: MetricM { weights: ps.metric },
        lambda_box_moment: ps.lambda_box_moment,
        lambda_box_force: ps.lambda_box_force,
        sigma_floor_rel: ps.sigma_floor_rel,
        allow_marginal: ps.allow_marginal,
        max_iterations: ps.max_iterations,
        time_limit_s: ps.time_limit_s,
        solver: SolverConfig {
            grid: ps.grid,
            metric: MetricM { weights: ps.metric },
            ..SolverConfig::default()
        },
    };
    planner.validate().map_err(ScenarioError::Invalid)?;

    let (start, start_evidence) =
        validate_point("start", &file.start, &scene, &robot, &planner)?;
    let (goal, goal_evidence) = validate_point("goal", &file.goal, &scene, &robot, &planner)?;

    Ok(Scenario {
        robot,
        scene,
        start,
        goal,
        planner,
        start_evidence,
        goal_evidence,
    })
}

fn validate_point(
    which: &'static str,
    section: &PointSection,
    scene: &Scene,
    robot: &RobotParams,
    planner: &PlannerParams,
) -> Result<(ManifoldPoint, PointEvidence), ScenarioError> {
    let tau = Actuation::from_array(section.tau);
    tau.validate(robot)
        .map_err(|e| ScenarioError::Invalid(format!("{which} actuation: {e}")))?;
    let lambda = Wrench::from_row_slice(&section.lambda);
    let solution = solve_bvp(&lambda, &tau, scene, robot, &planner.solver)
        .map_err(|e| ScenarioError::Invalid(format!("{which} point: {e}")))?;
    if !solution.report.converged {
        return Err(ScenarioError::NotConverged {
            which,
            f_norm: solution.report.f_norm,
        });
    }
    let stability = solution.report.stability.expect("classified solve");
    if !stability.is_stable()
        || stability.sigma_min <= planner.sigma_floor_rel * stability.sigma_max
    {
        return Err(ScenarioError::Unstable {
            which,
            rank: stability.rank,
            ratio: stability.sigma_min / stability.sigma_max,
        });
    }
    let cfg = solution.point.config.as_ref().expect("solve caches config");
    if cfg.in_collision(scene, robot.backbone_radius) {
        return Err(ScenarioError::InCollision { which });
    }
    Ok((
        solution.point,
        PointEvidence {
            f_norm: solution.report.f_norm,
            stability,
            iterations: solution.report.iterations,
        },
    ))
}

// ---- bench harness ----

/// One metrics row: a single `(variant, seed)` run.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub variant: Variant,
    pub seed: u64,
    pub samples: Option<usize>,
    pub cost_mm: Option<f64>,
    pub time_s: f64,
}

impl RunRow {
    /// CSV rendering; dash entries mark runs without a path.
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.variant,
            self.seed,
            self.samples
                .map_or_else(|| "-".to_string(), |s| s.to_string()),
            self.cost_mm.map_or_else(|| "-".to_string(), fmt_float),
            self.time_s
        )
    }
}

/// Per-variant aggregate over a batch of seeds.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub variant: Variant,
    pub runs: usize,
    pub successes: usize,
    /// Mean over successful runs.
    pub mean_samples: Option<f64>,
    /// Mean over successful runs.
    pub mean_cost_mm: Option<f64>,
    /// Mean over all runs.
    pub mean_time_s: f64,
}

impl AggregateRow {
    pub fn csv(&self) -> String {
        format!(
            "{},mean,{},{},{:.3}",
            self.variant,
            self.mean_samples.map_or_else(|| "-".to_string(), fmt_float),
            self.mean_cost_mm.map_or_else(|| "-".to_string(), fmt_float),
            self.mean_time_s
        )
    }
}

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl RunReport {
    pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
        let mut aggregates = Vec::new();
        for variant in Variant::ALL {
            let of_variant: Vec<&RunRow> = rows.iter().filter(|r| r.variant == variant).collect();
            if of_variant.is_empty() {
                continue;
            }
            let successes: Vec<&&RunRow> =
                of_variant.iter().filter(|r| r.samples.is_some()).collect();
            let mean = |get: &dyn Fn(&RunRow) -> f64| -> f64 {
                successes.iter().map(|r| get(r)).sum::<f64>() / successes.len() as f64
            };
            aggregates.push(AggregateRow {
                variant,
                runs: of_variant.len(),
                successes: successes.len(),
                mean_samples: (!successes.is_empty())
                    .then(|| mean(&|r| r.samples.unwrap() as f64)),
                mean_cost_mm: (!successes.is_empty()).then(|| mean(&|r| r.cost_mm.unwrap())),
                mean_time_s: of_variant.iter().map(|r| r.time_s).sum::<f64>()
                    / of_variant.len() as f64,
            });
        }
        aggregates
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "variant,seed,samples,cost_mm,time_s")?;
        for row in &self.rows {
            writeln!(out, "{}", row.csv())?;
        }
        for agg in &self.aggregates {
            writeln!(out, "{}", agg.csv())?;
        }
        Ok(())
    }
}

/// Runs one `(variant, seed)` query on a scenario.
pub fn run_single(scenario: &Scenario, variant: Variant, seed: u64) -> PlanResult {
    plan(
        variant,
        &scenario.robot,
        &scenario.scene,
        &scenario.start,
        &scenario.goal,
        &scenario.planner,
        seed,
    )
}

/// Executes every `(variant, seed)` pair, optionally writing per-run
/// artifacts and `metrics.csv` into `out_dir`. Runs that find no path
/// become dash rows; the batch always completes.
pub fn run_bench(
    scenario: &Scenario,
    variants: &[Variant],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<RunReport, io::Error> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let started = Instant::now();
            let result = run_single(scenario, variant, seed);
            let time_s = started.elapsed().as_secs_f64();
            log::info!(
                "{} seed {}: nodes={} samples={:?} cost={:?} time={:.1}s",
                variant,
                seed,
                result.nodes.len(),
                result.samples_before_path,
                result.cost,
                time_s
            );
            if let Some(dir) = out_dir {
                write_run_artifacts(dir, &result)?;
            }
            rows.push(RunRow {
                variant,
                seed,
                samples: result.samples_before_path,
                cost_mm: result.cost.map(|c| c * 1000.0),
                time_s,
            });
        }
    }
    let aggregates = RunReport::aggregate(&rows);
    let report = RunReport { rows, aggregates };
    if let Some(dir) = out_dir {
        let mut file = fs::File::create(dir.join("metrics.csv"))?;
        report.write_csv(&mut file)?;
    }
    Ok(report)
}

/// Writes the tree, path, and atlas dumps for one run.
pub fn write_run_artifacts(dir: &Path, result: &PlanResult) -> io::Result<()> {
    let suffix = format!("{}_{}", result.variant, result.seed);

    let mut tree = fs::File::create(dir.join(format!("tree_{suffix}.txt")))?;
    writeln!(tree, "# id parent cost chart x1..x9")?;
    for (i, node) in result.nodes.iter().enumerate() {
        let coords: Vec<String> = node.ambient.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(
            tree,
            "{} {} {:.17e} {} {}",
            i,
            node.parent.map_or(-1, |p| p as i64),
            node.cost,
            node.chart.map_or(-1, |c| c as i64),
            coords.join(" ")
        )?;
    }

    let mut path = fs::File::create(dir.join(format!("path_{suffix}.txt")))?;
    match &result.path_points {
        Some(points) => {
            for (i, point) in points.iter().enumerate() {
                let amb = point.ambient();
                let coords: Vec<String> = amb.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(path, "# point {} x: {}", i, coords.join(" "))?;
                if let Some(cfg) = &point.config {
                    cfg.write_delimited(&mut path)?;
                }
                writeln!(path)?;
            }
        }
        None => {
            writeln!(path, "# no path found")?;
        }
    }

    if let Some(atlas) = &result.atlas {
        let mut file = fs::File::create(dir.join(format!("atlas_{suffix}.txt")))?;
        atlas.write_delimited(&mut file)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_scenario_text() -> String {
        r#"
[robot]
e_modulus = 50e9
g_modulus = 20e9
backbone_radius = 1e-3
tendon_offset = 15e-3
tau_max = 70.0
length_min = 25e-3
length_max = 100e-3

[start]
lambda = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
tau = [0.0, 0.0, 0.05]

[goal]
lambda = [0.0, -0.3, 0.0, 0.0, 0.0, 20.0]
tau = [20.0, 0.0, 0.05]

[planner]
node_budget = 20
"#
        .to_string()
    }

    fn load_from_text(text: &str) -> Result<Scenario, ScenarioError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        fs::write(&path, text).unwrap();
        load_scenario(&path)
    }

    #[test]
    fn free_space_scenario_loads_with_evidence() {
        let scenario = load_from_text(&minimal_scenario_text()).unwrap();
        assert!(scenario.start_evidence.f_norm <= 1e-8);
        assert!(scenario.goal_evidence.f_norm <= 1e-8);
        assert_eq!(scenario.start_evidence.stability.rank, 6);
        assert_eq!(scenario.goal_evidence.stability.rank, 6);
        assert_eq!(scenario.planner.node_budget, 20);
    }

    #[test]
    fn missing_field_is_named() {
        let text = minimal_scenario_text().replace("tau_max = 70.0\n", "");
        let err = load_from_text(&text).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("tau_max"), "got: {message}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = minimal_scenario_text().replace("tau_max = 70.0", "tau_max = 70.0\nbogus = 1");
        let err = load_from_text(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn goal_inside_solid_obstacle_fails_validation() {
        let text = minimal_scenario_text()
            + r#"
[[scene.spheres]]
center = [0.0, -0.012, 0.035]
r_solid = 0.012
r_field = 0.03
stiffness = 1.0e3
"#;
        // The goal arc bends toward +x; park the ball on the straight start
        // instead: the start rod passes through it.
        let err = load_from_text(&text).unwrap_err();
        assert!(matches!(
            err,
            ScenarioError::InCollision { .. } | ScenarioError::NotConverged { .. }
        ));
    }

    #[test]
    fn aggregate_bookkeeping_and_dashes() {
        let rows = vec![
            RunRow {
                variant: Variant::AtlasRrtStar,
                seed: 0,
                samples: Some(12),
                cost_mm: Some(50.0),
                time_s: 1.0,
            },
            RunRow {
                variant: Variant::AtlasRrtStar,
                seed: 1,
                samples: None,
                cost_mm: None,
                time_s: 3.0,
            },
            RunRow {
                variant: Variant::RrtStarTau,
                seed: 0,
                samples: None,
                cost_mm: None,
                time_s: 2.0,
            },
        ];
        let aggregates = RunReport::aggregate(&rows);
        assert_eq!(aggregates.len(), 2);
        let atlas = &aggregates[0];
        assert_eq!(atlas.runs, 2);
        assert_eq!(atlas.successes, 1);
        assert_eq!(atlas.mean_samples, Some(12.0));
        assert_eq!(atlas.mean_cost_mm, Some(50.0));
        assert!((atlas.mean_time_s - 2.0).abs() < 1e-12);
        let tau = &aggregates[1];
        assert_eq!(tau.successes, 0);
        assert_eq!(tau.mean_samples, None);
        assert!(tau.csv().contains("rrt-star-tau,mean,-,-,"));

        let report = RunReport {
            rows,
            aggregates,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("variant,seed,samples,cost_mm,time_s\n"));
        assert!(text.contains("atlas-rrt-star,1,-,-,"));
    }
}
