use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ldvkit::flowplan::{validate_plan, Accumulation, PlanConfig, PlanError};
use ldvkit::ldvsolve::{build_system, link_estimates, pso_solve, LinkEstimate, SwarmConfig};
use ldvkit::pipeline::{
    check_plan_matches, load_plan, report_metrics, run_pipeline, run_sweep, write_json,
    write_sweep_csv, MonitorSpec, OutputFormat, PipelineError, ResultFile, RunConfig, SweepConfig,
    FAILED_MARKER,
};
use ldvkit::probesim::{ground_truth_ldv, run_campaign, Aggregator, Campaign, DelayModel};
use ldvkit::rulegen::{compile_plan, rules_per_switch, DEFAULT_HELPER_IP, DEFAULT_SWITCH_CAPACITY};
use ldvkit::topology::{load_topology, TopologyFormat};

#[derive(Parser)]
#[command(name = "ldvkit", version, about = "Link delay inference from loop probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select monitoring flows and write plan.json.
    Plan(PlanArgs),
    /// Simulate a probe campaign for a plan and write campaign.csv.
    Simulate(SimulateArgs),
    /// Infer link delays from a campaign and write result.json.
    Solve(SolveArgs),
    /// Compile a plan into switch rules and write rules.json.
    ExportRules(ExportArgs),
    /// Run plan, simulate, solve and rule export, then write the report.
    Report(ReportArgs),
    /// Grid over monitor counts and hop caps.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct TopologyArgs {
    /// Topology file (.json or .graphml).
    #[arg(long)]
    topology: PathBuf,
    /// Monitor labels "a,b", "all", or "count:K,seed:S". Defaults to the file's set.
    #[arg(long, default_value = "file")]
    monitors: MonitorSpec,
    /// Replace every link delay with a uniform draw from LO:HI ms.
    #[arg(long, value_parser = parse_range)]
    plant_delays: Option<(f64, f64)>,
}

#[derive(Args, Clone)]
struct PlanOpts {
    /// Flows required on every targeted link.
    #[arg(long, default_value_t = 2)]
    min_cover: usize,
    /// Probe rate per flow, bits/s.
    #[arg(long, default_value_t = 10_000.0)]
    probe_rate: f64,
    /// Cap on monitoring traffic as a fraction of link capacity.
    #[arg(long, default_value_t = 1.0)]
    max_overhead: f64,
    /// Keep every candidate route instead of stopping at coverage.
    #[arg(long)]
    exhaustive: bool,
    /// Skip the rank-raising pass.
    #[arg(long)]
    no_rank_safeguard: bool,
}

impl PlanOpts {
    fn config(&self, mlmf: usize) -> PlanConfig {
        PlanConfig {
            max_length: mlmf,
            min_cover: self.min_cover,
            probe_rate_bps: self.probe_rate,
            max_overhead: self.max_overhead,
            accumulation: if self.exhaustive {
                Accumulation::Exhaustive
            } else {
                Accumulation::StopAtCoverage
            },
            rank_safeguard: !self.no_rank_safeguard,
            ..Default::default()
        }
    }
}

#[derive(Args, Clone)]
struct ModelOpts {
    /// End-to-end noise per probe, ms.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Queuing jitter per link traversal, ms.
    #[arg(long, default_value_t = 0.0)]
    jitter_sigma: f64,
    /// Probes per flow.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Aggregate probes with the mean instead of the median.
    #[arg(long)]
    mean: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelOpts {
    fn model(&self) -> DelayModel {
        DelayModel {
            jitter_sigma_ms: self.jitter_sigma,
            noise_sigma_ms: self.noise_sigma,
            seed: self.seed,
            aggregator: if self.mean {
                Aggregator::Mean
            } else {
                Aggregator::Median
            },
            ..Default::default()
        }
    }
}

#[derive(Args, Clone)]
struct SwarmOpts {
    #[arg(long, default_value_t = 50)]
    population: usize,
    #[arg(long, default_value_t = 500)]
    max_generations: usize,
    /// Fixed box LO:HI for every link, ms. Defaults to [0, 10 x max measured delay].
    #[arg(long, value_parser = parse_range)]
    bounds: Option<(f64, f64)>,
}

impl SwarmOpts {
    fn config(&self) -> SwarmConfig {
        SwarmConfig {
            population_size: self.population,
            max_generations: self.max_generations,
            bounds: self.bounds,
            ..Default::default()
        }
    }
}

#[derive(Args, Clone)]
struct RuleOpts {
    /// Port map JSON; defaults to host on port 1 and neighbors from port 2.
    #[arg(long)]
    ports: Option<PathBuf>,
    /// Node to IP JSON; defaults to 10.0.0.k for the k-th monitor.
    #[arg(long)]
    addressing: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HELPER_IP)]
    helper_ip: Ipv4Addr,
    /// Rule capacity of one switch.
    #[arg(long, default_value_t = DEFAULT_SWITCH_CAPACITY)]
    switch_capacity: usize,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    topo: TopologyArgs,
    /// Maximum hops per flow.
    #[arg(long, default_value_t = 8)]
    mlmf: usize,
    #[command(flatten)]
    plan: PlanOpts,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Topology with delays, usually the topology.json written by `plan`.
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    campaign: PathBuf,
    /// Topology with true delays; adds per-link errors to the result.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    swarm: SwarmOpts,
    /// Exit 0 even when the system has a null space.
    #[arg(long)]
    allow_non_unique: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[command(flatten)]
    rules: RuleOpts,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    topo: TopologyArgs,
    /// Maximum hops per flow.
    #[arg(long, default_value_t = 8)]
    mlmf: usize,
    #[command(flatten)]
    plan: PlanOpts,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    swarm: SwarmOpts,
    #[command(flatten)]
    rules: RuleOpts,
    #[arg(long)]
    allow_non_unique: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    topology: PathBuf,
    /// Hop caps: "3..12" (inclusive) or "3,5,7".
    #[arg(long, default_value = "3..12")]
    mlmf: String,
    /// Monitor counts, same syntax as --mlmf.
    #[arg(long, default_value = "1,2,3,4,5")]
    monitor_counts: String,
    #[command(flatten)]
    plan: PlanOpts,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    swarm: SwarmOpts,
    #[arg(long, value_parser = parse_range)]
    plant_delays: Option<(f64, f64)>,
    #[arg(long, default_value_t = DEFAULT_SWITCH_CAPACITY)]
    switch_capacity: usize,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    Ok((lo, hi))
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad number {t:?}"));
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    if let Some((a, b)) = s.split_once("..") {
        return Ok((num(a)?..=num(b)?).collect());
    }
    s.split(',').map(num).collect()
}

fn mkdir(out: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.display().to_string(),
        source,
    })
}

fn run_config(t: &TopologyArgs, out: &Path) -> RunConfig {
    let mut c = RunConfig::new(&t.topology, out);
    c.monitors = t.monitors.clone();
    c.plant_delays = t.plant_delays;
    c
}

fn cmd_plan(a: PlanArgs) -> Result<(), PipelineError> {
    mkdir(&a.out)?;
    let _ = fs::remove_file(a.out.join(FAILED_MARKER));
    let rc = run_config(&a.topo, &a.out);
    let topo = rc.prepare_topology()?;
    topo.save_json(&a.out.join("topology.json"))?;
    let cfg = a.plan.config(a.mlmf);
    match ldvkit::flowplan::select_flows(&topo, &cfg) {
        Ok(plan) => {
            write_json(&a.out.join("plan.json"), &plan.to_file())?;
            write_json(&a.out.join("violations.json"), &validate_plan(&plan, &topo, &cfg))?;
            println!(
                "{} flows, rank {} of {} targeted links",
                plan.flows().len(),
                plan.rank(),
                plan.link_index().len()
            );
            Ok(())
        }
        Err(e) => {
            if let PlanError::CoverageFailure { partial, .. } = &e {
                write_json(&a.out.join("plan.json"), &partial.to_file())?;
            }
            let e = PipelineError::from(e);
            fs::write(a.out.join(FAILED_MARKER), format!("{e}\n")).ok();
            Err(e)
        }
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), PipelineError> {
    mkdir(&a.out)?;
    let topo = load_topology(&a.topology, TopologyFormat::from_path(&a.topology))?;
    let plan = load_plan(&a.plan)?;
    check_plan_matches(&plan, &topo)?;
    let campaign = run_campaign(&plan, &topo, &a.model.model(), a.model.repeats)?;
    let path = a.out.join("campaign.csv");
    let file = fs::File::create(&path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    campaign.write_csv(file)?;
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<(), PipelineError> {
    mkdir(&a.out)?;
    let plan = load_plan(&a.plan)?;
    let file = fs::File::open(&a.campaign).map_err(|source| PipelineError::Io {
        path: a.campaign.display().to_string(),
        source,
    })?;
    let campaign = Campaign::read_csv(file)?;
    let sys = build_system(&plan, &campaign)?;
    let result = pso_solve(&sys, &a.swarm.config(), a.seed)?;
    let links = match &a.topology {
        Some(p) => {
            let topo = load_topology(p, TopologyFormat::from_path(p))?;
            check_plan_matches(&plan, &topo)?;
            let truth = ground_truth_ldv(&topo).ok();
            link_estimates(&result, &topo, truth.as_ref())
        }
        None => result
            .estimate
            .links
            .iter()
            .zip(&result.estimate.delays_ms)
            .map(|(&l, &d)| LinkEstimate {
                link: plan.link_label(l),
                estimated_delay_ms: d,
                abs_error_ms: None,
            })
            .collect(),
    };
    write_json(&a.out.join("result.json"), &ResultFile::new(&result, &links))?;
    if result.non_unique && !a.allow_non_unique {
        return Err(PipelineError::NonUnique {
            null_space_dim: result.null_space_dim,
        });
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<(), PipelineError> {
    mkdir(&a.out)?;
    let mut rc = RunConfig::new(&a.topology, &a.out);
    rc.ports = a.rules.ports.clone();
    rc.addressing = a.rules.addressing.clone();
    let topo = load_topology(&a.topology, TopologyFormat::from_path(&a.topology))?;
    let plan = load_plan(&a.plan)?;
    check_plan_matches(&plan, &topo)?;
    let tables = compile_plan(
        &plan,
        &rc.port_map(&topo)?,
        &rc.address_map(&topo)?,
        a.rules.helper_ip,
    )?;
    write_json(&a.out.join("rules.json"), &ldvkit::pipeline::flatten(&tables))?;
    let stats = rules_per_switch(&tables, a.rules.switch_capacity)?;
    println!(
        "{} entries, {:.3} per switch, {:.5} of capacity",
        tables.len(),
        stats.average,
        stats.fraction
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), PipelineError> {
    let mut rc = run_config(&a.topo, &a.out);
    rc.plan = a.plan.config(a.mlmf);
    rc.model = a.model.model();
    rc.repeats = a.model.repeats;
    rc.swarm = a.swarm.config();
    rc.seed = a.model.seed;
    rc.ports = a.rules.ports;
    rc.addressing = a.rules.addressing;
    rc.helper_ip = a.rules.helper_ip;
    rc.switch_capacity = a.rules.switch_capacity;
    rc.allow_non_unique = a.allow_non_unique;
    let report = run_pipeline(&rc)?;
    if a.format == OutputFormat::Plot {
        report_metrics(&report, OutputFormat::Plot, &a.out)?;
    }
    println!(
        "coverage {:.3}, {} flows, rank {}, max error {}",
        report.coverage,
        report.flows,
        report.solver.rank,
        report
            .max_abs_error_ms
            .map_or("n/a".to_string(), |e| format!("{e:.6} ms"))
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), PipelineError> {
    mkdir(&a.out)?;
    let cfg = SweepConfig {
        topology: a.topology,
        monitor_counts: parse_list(&a.monitor_counts).map_err(PipelineError::Config)?,
        mlmf: parse_list(&a.mlmf).map_err(PipelineError::Config)?,
        plan: a.plan.config(1),
        model: a.model.model(),
        repeats: a.model.repeats,
        swarm: a.swarm.config(),
        seed: a.model.seed,
        plant_delays: a.plant_delays,
        switch_capacity: a.switch_capacity,
    };
    let rows = run_sweep(&cfg)?;
    write_sweep_csv(&rows, &a.out.join("sweep.csv"))?;
    match a.format {
        OutputFormat::Plot => {
            ldvkit::plot::sweep_plots(&rows, &a.out)?;
        }
        OutputFormat::Json => write_json(&a.out.join("sweep.json"), &rows)?,
        OutputFormat::Csv => {}
    }
    Ok(())
}

fn init_threads() -> Result<(), PipelineError> {
    if let Ok(v) = std::env::var("LDVKIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| PipelineError::Config(format!("LDVKIT_THREADS={v:?} is not a number")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = init_threads().and_then(|()| match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::ExportRules(a) => cmd_export(a),
        Command::Report(a) => cmd_report(a),
        Command::Sweep(a) => cmd_sweep(a),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn list_and_range_parsing() {
        assert_eq!(parse_list("3..5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_list("1,2, 5").unwrap(), vec![1, 2, 5]);
        assert_eq!(parse_list("").unwrap(), Vec::<usize>::new());
        assert!(parse_list("a").is_err());
        assert_eq!(parse_range("0.3:2").unwrap(), (0.3, 2.0));
        assert!(parse_range("1").is_err());
    }
}
