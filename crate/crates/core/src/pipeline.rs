//! End-to-end runs: plan, simulate, solve, compile rules, report.

use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::flowplan::{
    coverage_report, plan_coverage, select_flows, FlowPlan, PlanConfig, PlanError, PlanFile,
};
use crate::ldvsolve::{build_system, link_estimates, pso_solve, LinkEstimate, SolveError, SolveResult, SwarmConfig};
use crate::probesim::{ground_truth_ldv, plant_uniform_delays, run_campaign, DelayModel, LinkDelayVector, ProbeError};
use crate::rulegen::{
    compile_plan, rules_per_switch, Addressing, PortMap, RuleError, RuleStats, RuleTables,
    DEFAULT_HELPER_IP, DEFAULT_SWITCH_CAPACITY,
};
use crate::topology::{load_topology, NodeId, Topology, TopologyError, TopologyFormat};

/// Name of the marker file left in the output directory after a failed run.
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("measurement system is not uniquely solvable (null space dimension {null_space_dim})")]
    NonUnique { null_space_dim: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot: {0}")]
    Plot(String),
}

impl PipelineError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Plan(PlanError::CoverageFailure { .. }) => 2,
            PipelineError::NonUnique { .. } => 3,
            PipelineError::Config(_)
            | PipelineError::Plan(PlanError::Config(_))
            | PipelineError::Probe(ProbeError::Config(_))
            | PipelineError::Solve(SolveError::Config(_))
            | PipelineError::Topology(TopologyError::NoMonitors)
            | PipelineError::Topology(TopologyError::UnknownMonitor(_)) => 4,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// How monitor nodes are chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonitorSpec {
    /// Keep the monitors declared in the topology file.
    FromFile,
    All,
    Labels(Vec<String>),
    /// First `count` nodes of a seeded permutation; larger counts extend
    /// smaller ones.
    Random { count: usize, seed: u64 },
}

impl std::str::FromStr for MonitorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s == "file" {
            return Ok(MonitorSpec::FromFile);
        }
        if s == "all" {
            return Ok(MonitorSpec::All);
        }
        if s.contains(':') {
            let mut count = None;
            let mut seed = 0;
            for part in s.split(',') {
                let (k, v) = part
                    .split_once(':')
                    .ok_or_else(|| format!("bad monitor spec part {part:?}"))?;
                let v: u64 = v
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad number in monitor spec: {v:?}"))?;
                match k.trim() {
                    "count" => count = Some(v as usize),
                    "seed" => seed = v,
                    other => return Err(format!("unknown monitor spec key {other:?}")),
                }
            }
            let count = count.ok_or("monitor spec needs count:K")?;
            return Ok(MonitorSpec::Random { count, seed });
        }
        Ok(MonitorSpec::Labels(
            s.split(',').map(|l| l.trim().to_string()).collect(),
        ))
    }
}

/// Seeded node permutation used for random placements.
pub fn placement_order(node_count: usize, seed: u64) -> Vec<NodeId> {
    let mut order: Vec<NodeId> = (0..node_count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

pub fn apply_monitors(topo: &Topology, spec: &MonitorSpec) -> Result<Topology, PipelineError> {
    let nodes = match spec {
        MonitorSpec::FromFile => return Ok(topo.clone()),
        MonitorSpec::All => (0..topo.node_count()).collect(),
        MonitorSpec::Labels(l) => topo.resolve_labels(l)?,
        MonitorSpec::Random { count, seed } => {
            if *count == 0 || *count > topo.node_count() {
                return Err(PipelineError::Config(format!(
                    "monitor count {count} outside 1..={}",
                    topo.node_count()
                )));
            }
            placement_order(topo.node_count(), *seed)[..*count].to_vec()
        }
    };
    Ok(topo.with_monitors(nodes)?)
}

/// Everything a full run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub topology: PathBuf,
    pub monitors: MonitorSpec,
    pub plan: PlanConfig,
    pub model: DelayModel,
    pub repeats: usize,
    pub swarm: SwarmConfig,
    /// Seed for delay planting and the swarm; the campaign uses `model.seed`.
    pub seed: u64,
    /// Overwrite every link delay with a uniform draw from this range.
    pub plant_delays: Option<(f64, f64)>,
    pub ports: Option<PathBuf>,
    pub addressing: Option<PathBuf>,
    pub helper_ip: Ipv4Addr,
    pub switch_capacity: usize,
    pub allow_non_unique: bool,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(topology: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            topology: topology.into(),
            monitors: MonitorSpec::FromFile,
            plan: PlanConfig::default(),
            model: DelayModel::default(),
            repeats: 1,
            swarm: SwarmConfig::default(),
            seed: 0,
            plant_delays: None,
            ports: None,
            addressing: None,
            helper_ip: DEFAULT_HELPER_IP,
            switch_capacity: DEFAULT_SWITCH_CAPACITY,
            allow_non_unique: false,
            out: out.into(),
        }
    }

    /// Loads the topology and applies monitors and planted delays.
    pub fn prepare_topology(&self) -> Result<Topology, PipelineError> {
        let topo = load_topology(&self.topology, TopologyFormat::from_path(&self.topology))?;
        let topo = apply_monitors(&topo, &self.monitors)?;
        match self.plant_delays {
            Some((lo, hi)) => Ok(plant_uniform_delays(&topo, lo, hi, self.seed)?),
            None => Ok(topo),
        }
    }

    pub fn port_map(&self, topo: &Topology) -> Result<PortMap, PipelineError> {
        match &self.ports {
            Some(p) => Ok(serde_json::from_str(&read_text(p)?)?),
            None => Ok(PortMap::auto(topo)),
        }
    }

    pub fn address_map(&self, topo: &Topology) -> Result<Addressing, PipelineError> {
        match &self.addressing {
            Some(p) => Ok(serde_json::from_str(&read_text(p)?)?),
            None => Ok(Addressing::auto(topo)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub offline_ms: f64,
    pub online_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub generations_used: usize,
    pub final_fitness: f64,
    pub rank: usize,
    pub non_unique: bool,
    pub null_space_dim: usize,
}

/// Outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub coverage: f64,
    pub flows: usize,
    pub links: Vec<LinkEstimate>,
    pub sum_abs_error_ms: Option<f64>,
    pub mean_abs_error_ms: Option<f64>,
    pub max_abs_error_ms: Option<f64>,
    pub rules: RuleStats,
    pub solver: SolverSummary,
    pub timing: Timing,
}

impl Report {
    /// `metric,subject,value,unit` rows; timing is left out so the file is
    /// reproducible.
    pub fn csv_rows(&self) -> Vec<(String, String, String, String)> {
        let mut rows = Vec::new();
        let mut push = |m: &str, s: &str, v: String, u: &str| {
            rows.push((m.to_string(), s.to_string(), v, u.to_string()))
        };
        push("coverage", "all", self.coverage.to_string(), "fraction");
        push("flows", "all", self.flows.to_string(), "count");
        push("rank", "all", self.solver.rank.to_string(), "count");
        push("null_space_dim", "all", self.solver.null_space_dim.to_string(), "count");
        push("generations_used", "all", self.solver.generations_used.to_string(), "count");
        push("final_fitness", "all", self.solver.final_fitness.to_string(), "ms");
        for l in &self.links {
            push("estimated_delay", &l.link, l.estimated_delay_ms.to_string(), "ms");
            if let Some(e) = l.abs_error_ms {
                push("abs_error", &l.link, e.to_string(), "ms");
            }
        }
        for (name, v) in [
            ("sum_abs_error", self.sum_abs_error_ms),
            ("mean_abs_error", self.mean_abs_error_ms),
            ("max_abs_error", self.max_abs_error_ms),
        ] {
            if let Some(v) = v {
                push(name, "all", v.to_string(), "ms");
            }
        }
        for (s, n) in &self.rules.per_switch {
            push("rules", s, n.to_string(), "count");
        }
        push("avg_rules_per_switch", "all", self.rules.average.to_string(), "count");
        push("rule_capacity_fraction", "all", self.rules.fraction.to_string(), "fraction");
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "subject", "value", "unit"])?;
        for r in self.csv_rows() {
            w.serialize(r)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }
}

/// Output format of `report` and `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
    Plot,
}

/// Writes the report in the requested format; returns the files written.
pub fn report_metrics(
    report: &Report,
    format: OutputFormat,
    out: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    match format {
        OutputFormat::Csv => {
            let p = out.join("report.csv");
            report.write_csv(&p)?;
            Ok(vec![p])
        }
        OutputFormat::Json => {
            let p = out.join("report.json");
            write_json(&p, report)?;
            Ok(vec![p])
        }
        OutputFormat::Plot => crate::plot::report_plots(report, out),
    }
}

/// Per-link error statistics against ground truth.
pub fn error_stats(links: &[LinkEstimate]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let errs: Vec<f64> = links.iter().filter_map(|l| l.abs_error_ms).collect();
    if errs.is_empty() || errs.len() != links.len() {
        return (None, None, None);
    }
    let sum: f64 = errs.iter().sum();
    let max = errs.iter().copied().fold(0.0, f64::max);
    (Some(sum), Some(sum / errs.len() as f64), Some(max))
}

fn mark_failed(out: &Path, err: &PipelineError) {
    let _ = fs::write(out.join(FAILED_MARKER), format!("{err}\n"));
}

/// Plan, campaign and solve for an already prepared topology; no files.
pub fn solve_in_memory(
    topo: &Topology,
    plan: &FlowPlan,
    model: &DelayModel,
    repeats: usize,
    swarm: &SwarmConfig,
    seed: u64,
) -> Result<(SolveResult, Option<LinkDelayVector>), PipelineError> {
    let campaign = run_campaign(plan, topo, model, repeats)?;
    let sys = build_system(plan, &campaign)?;
    let result = pso_solve(&sys, swarm, seed)?;
    let truth = ground_truth_ldv(topo).ok();
    Ok((result, truth))
}

/// Full run writing every artifact into `cfg.out`.
///
/// On failure the artifacts produced so far stay in place next to a
/// `FAILED` marker.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Report, PipelineError> {
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let _ = fs::remove_file(cfg.out.join(FAILED_MARKER));
    let res = run_stages(cfg);
    if let Err(e) = &res {
        mark_failed(&cfg.out, e);
    }
    res
}

fn run_stages(cfg: &RunConfig) -> Result<Report, PipelineError> {
    let out = &cfg.out;
    let topo = cfg.prepare_topology()?;
    topo.save_json(&out.join("topology.json"))?;

    let offline = Instant::now();
    let plan = match select_flows(&topo, &cfg.plan) {
        Ok(p) => p,
        Err(e) => {
            if let PlanError::CoverageFailure { partial, .. } = &e {
                write_json(&out.join("plan.json"), &partial.to_file())?;
            }
            return Err(e.into());
        }
    };
    write_json(&out.join("plan.json"), &plan.to_file())?;
    let tables = compile_plan(
        &plan,
        &cfg.port_map(&topo)?,
        &cfg.address_map(&topo)?,
        cfg.helper_ip,
    )?;
    let offline_ms = offline.elapsed().as_secs_f64() * 1e3;
    write_json(&out.join("rules.json"), &flatten(&tables))?;

    let online = Instant::now();
    let campaign = run_campaign(&plan, &topo, &cfg.model, cfg.repeats)?;
    let sys = build_system(&plan, &campaign)?;
    let result = pso_solve(&sys, &cfg.swarm, cfg.seed)?;
    let online_ms = online.elapsed().as_secs_f64() * 1e3;
    let file = fs::File::create(out.join("campaign.csv")).map_err(io_err(out))?;
    campaign.write_csv(file)?;

    let truth = ground_truth_ldv(&topo).ok();
    let links = link_estimates(&result, &topo, truth.as_ref());
    write_json(&out.join("result.json"), &ResultFile::new(&result, &links))?;

    let (sum, mean, max) = error_stats(&links);
    let report = Report {
        coverage: coverage_report(&plan, &topo, cfg.plan.min_cover).fraction,
        flows: plan.flows().len(),
        links,
        sum_abs_error_ms: sum,
        mean_abs_error_ms: mean,
        max_abs_error_ms: max,
        rules: rules_per_switch(&tables, cfg.switch_capacity)?,
        solver: SolverSummary {
            generations_used: result.generations_used,
            final_fitness: result.fitness,
            rank: result.rank,
            non_unique: result.non_unique,
            null_space_dim: result.null_space_dim,
        },
        timing: Timing {
            offline_ms,
            online_ms,
        },
    };
    report.write_csv(&out.join("report.csv"))?;
    write_json(&out.join("report.json"), &report)?;
    if result.non_unique && !cfg.allow_non_unique {
        return Err(PipelineError::NonUnique {
            null_space_dim: result.null_space_dim,
        });
    }
    Ok(report)
}

/// Rule tables as one flat list of entries.
pub fn flatten(tables: &RuleTables) -> Vec<crate::rulegen::FlowEntry> {
    tables.entries().cloned().collect()
}

/// JSON form of a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultFile<'a> {
    pub links: &'a [LinkEstimate],
    pub solver: SolverSummary,
    pub residuals_ms: &'a [f64],
}

impl<'a> ResultFile<'a> {
    pub fn new(result: &'a SolveResult, links: &'a [LinkEstimate]) -> Self {
        Self {
            links,
            solver: SolverSummary {
                generations_used: result.generations_used,
                final_fitness: result.fitness,
                rank: result.rank,
                non_unique: result.non_unique,
                null_space_dim: result.null_space_dim,
            },
            residuals_ms: &result.residuals,
        }
    }
}

pub fn load_plan(path: &Path) -> Result<FlowPlan, PipelineError> {
    let file: PlanFile = serde_json::from_str(&read_text(path)?)?;
    Ok(file.into_plan()?)
}

/// Checks that a plan was made for `topo`.
pub fn check_plan_matches(plan: &FlowPlan, topo: &Topology) -> Result<(), PipelineError> {
    if plan.node_labels() != topo.labels() {
        return Err(PipelineError::Config(
            "plan and topology list different nodes".into(),
        ));
    }
    Ok(())
}

/// Grid of monitor counts by hop caps.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub topology: PathBuf,
    pub monitor_counts: Vec<usize>,
    pub mlmf: Vec<usize>,
    pub plan: PlanConfig,
    pub model: DelayModel,
    pub repeats: usize,
    pub swarm: SwarmConfig,
    /// Placement seed and master seed for per-cell streams.
    pub seed: u64,
    pub plant_delays: Option<(f64, f64)>,
    pub switch_capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub monitors: usize,
    pub mlmf: usize,
    pub coverage: f64,
    pub flows: usize,
    pub full_coverage: bool,
    pub mean_abs_error_ms: Option<f64>,
    pub max_abs_error_ms: Option<f64>,
    pub avg_rules_per_switch: f64,
}

/// Seed of one sweep cell.
pub fn cell_seed(master: u64, monitors: usize, mlmf: usize) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((monitors as u64) << 32)
        .wrapping_add(mlmf as u64)
}

/// Runs every cell; cells are independent and run in parallel.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>, PipelineError> {
    let base = load_topology(&cfg.topology, TopologyFormat::from_path(&cfg.topology))?;
    let base = match cfg.plant_delays {
        Some((lo, hi)) => plant_uniform_delays(&base, lo, hi, cfg.seed)?,
        None => base,
    };
    let order = placement_order(base.node_count(), cfg.seed);
    let mut cells = Vec::new();
    for &k in &cfg.monitor_counts {
        if k == 0 || k > base.node_count() {
            return Err(PipelineError::Config(format!(
                "monitor count {k} outside 1..={}",
                base.node_count()
            )));
        }
        for &l in &cfg.mlmf {
            cells.push((k, l));
        }
    }
    cells.sort_unstable();
    cells.dedup();
    cells
        .par_iter()
        .map(|&(k, l)| {
            let topo = base.with_monitors(order[..k].to_vec())?;
            let plan_cfg = PlanConfig {
                max_length: l,
                allowed_lengths: Vec::new(),
                ..cfg.plan.clone()
            };
            let (plan, cover) = plan_coverage(&topo, &plan_cfg)?;
            let full = cover.fraction >= 1.0;
            let tables = compile_plan(
                &plan,
                &PortMap::auto(&topo),
                &Addressing::auto(&topo)?,
                DEFAULT_HELPER_IP,
            )?;
            let rules = rules_per_switch(&tables, cfg.switch_capacity)?;
            let (mut mean, mut max) = (None, None);
            if full && ground_truth_ldv(&topo).is_ok() {
                let seed = cell_seed(cfg.seed, k, l);
                let model = DelayModel {
                    seed,
                    ..cfg.model.clone()
                };
                let (result, truth) =
                    solve_in_memory(&topo, &plan, &model, cfg.repeats, &cfg.swarm, seed)?;
                let links = link_estimates(&result, &topo, truth.as_ref());
                let (_, m, x) = error_stats(&links);
                mean = m;
                max = x;
            }
            Ok(SweepRow {
                monitors: k,
                mlmf: l,
                coverage: cover.fraction,
                flows: plan.flows().len(),
                full_coverage: full,
                mean_abs_error_ms: mean,
                max_abs_error_ms: max,
                avg_rules_per_switch: rules.average,
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record([
        "monitors",
        "mlmf",
        "coverage",
        "flows",
        "full_coverage",
        "mean_abs_error_ms",
        "max_abs_error_ms",
        "avg_rules_per_switch",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monitor_specs_parse() {
        assert_eq!("all".parse::<MonitorSpec>().unwrap(), MonitorSpec::All);
        assert_eq!(
            "count:3,seed:9".parse::<MonitorSpec>().unwrap(),
            MonitorSpec::Random { count: 3, seed: 9 }
        );
        assert_eq!(
            "a, b".parse::<MonitorSpec>().unwrap(),
            MonitorSpec::Labels(vec!["a".into(), "b".into()])
        );
        assert!("count:x".parse::<MonitorSpec>().is_err());
        assert!("seed:1".parse::<MonitorSpec>().is_err());
        assert!("count:2,depth:1".parse::<MonitorSpec>().is_err());
    }

    #[test]
    fn placements_nest() {
        let a = placement_order(11, 4);
        assert_eq!(a, placement_order(11, 4));
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::NonUnique { null_space_dim: 1 }.exit_code(), 3);
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 4);
        assert_eq!(
            PipelineError::Plan(PlanError::CoverageFailure {
                uncovered: vec![],
                labels: vec![],
                partial: Box::new(FlowPlan::new(vec![], crate::topology::LinkIndex::new(vec![]), vec![])),
            })
            .exit_code(),
            2
        );
        assert_eq!(PipelineError::Plot("x".into()).exit_code(), 1);
    }

    #[test]
    fn empty_sweep_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        write_sweep_csv(&[], &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "monitors,mlmf,coverage,flows,full_coverage,mean_abs_error_ms,max_abs_error_ms,avg_rules_per_switch\n"
        );
    }
}
