use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use crplan::planner::Variant;
use crplan::scenario::{load_scenario, run_bench, Scenario};

#[derive(Parser)]
#[command(
    name = "crplan",
    about = "Quasi-static path planning for tendon-driven continuum robots in elastic-contact scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one planner variant on a scenario and export its artifacts.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        /// atlas-rrt-star, rrt-star-tau, or rrt-star-lambda-tau.
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a batch of variants and seeds, writing metrics.csv and per-run
    /// artifacts.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        /// Number of seeds (0, 1, .., n-1).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// "all" or a comma-separated list of variant names.
        #[arg(long, default_value = "all")]
        variants: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a scenario and print the solver evidence for start and goal.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Plan {
            scenario,
            variant,
            seed,
            out,
        } => {
            let scenario = load(&scenario)?;
            let report = run_bench(&scenario, &[variant], &[seed], Some(&out))
                .context("writing artifacts")?;
            print_report(&report);
        }
        Command::Bench {
            scenario,
            seeds,
            variants,
            out,
        } => {
            let scenario = load(&scenario)?;
            let variants = parse_variants(&variants)?;
            let seed_list: Vec<u64> = (0..seeds).collect();
            let report = run_bench(&scenario, &variants, &seed_list, Some(&out))
                .context("writing artifacts")?;
            print_report(&report);
        }
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            print_validation(&s);
        }
    }
    Ok(())
}

fn load(path: &PathBuf) -> anyhow::Result<Scenario> {
    load_scenario(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn parse_variants(spec: &str) -> anyhow::Result<Vec<Variant>> {
    if spec == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<Variant>().map_err(anyhow::Error::msg))
        .collect()
}

fn print_report(report: &crplan::scenario::RunReport) {
    println!("variant,seed,samples,cost_mm,time_s");
    for row in &report.rows {
        println!("{}", row.csv());
    }
    for agg in &report.aggregates {
        println!("{}", agg.csv());
    }
}

fn print_validation(s: &Scenario) {
    for (name, point, evidence) in [
        ("start", &s.start, &s.start_evidence),
        ("goal", &s.goal, &s.goal_evidence),
    ] {
        let tip = point.tip_position().expect("validated point has a config");
        println!(
            "{name}: |F| = {:.3e}, rank = {}, sigma_min/sigma_max = {:.3e}, \
             iterations = {}, tip = [{:.4}, {:.4}, {:.4}] m",
            evidence.f_norm,
            evidence.stability.rank,
            evidence.stability.sigma_min / evidence.stability.sigma_max,
            evidence.iterations,
            tip.x,
            tip.y,
            tip.z
        );
    }
    let d = crplan::planner::metric_distance(&s.start, &s.goal, &s.planner.metric);
    println!(
        "start-goal metric distance = {d:.2} (goal tolerance {})",
        s.planner.goal_tolerance
    );
    println!(
        "scene: {} obstacle field(s); node budget {}",
        s.scene.obstacle_count(),
        s.planner.node_budget
    );
}
