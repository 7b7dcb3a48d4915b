use std::fs;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use cbm_core::agent::AgentConfig;
use cbm_core::bench::{
    best_known, cordeau_distance, cordeau_to_instance, gap_percent, generate_xd_instance, parse_cordeau, precedence_count,
    results_csv, BenchmarkResult, XdParams,
};
use cbm_core::coalition::transport::TcpTransport;
use cbm_core::coalition::{run_coalition, run_networked_agent, CoalitionConfig, CoalitionError, CoalitionResult, Scheduling};
use cbm_core::milp::{check_constraints, export_lp, LpOptions, MAX_LP_TASKS};
use cbm_core::problem::{validate_instance, ObjectiveMode, ProblemError, ProblemInstance};
use cbm_core::schedule::check_feasible;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::args::{BenchArgs, ExportLpArgs, FormatArg, GenerateArgs, SchedulerArg, SearchArgs, SolveArgs, TransportArg};
use crate::manifest::{sha256_file, InstanceRecord, Outcome, RunManifest};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_LP_SIZE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl From<CoalitionError> for CliError {
    fn from(e: CoalitionError) -> Self {
        match e {
            CoalitionError::Invalid(_) | CoalitionError::Problem(ProblemError::Parameter(_)) => Self::usage(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::runtime(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    text.push('\n');
    write(path, text)
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub struct Loaded {
    pub instance: ProblemInstance,
    pub cordeau: bool,
    pub record: InstanceRecord,
}

fn resolve_format(path: &Path, format: FormatArg) -> FormatArg {
    match format {
        FormatArg::Auto if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => FormatArg::Native,
        FormatArg::Auto => FormatArg::Cordeau,
        f => f,
    }
}

/// Reads and validates an instance; every failure is a usage error.
pub fn load_instance(path: &Path, format: FormatArg) -> CliResult<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read instance {}: {e}", path.display())))?;
    let format = resolve_format(path, format);
    let bad = |e: ProblemError| CliError::usage(format!("{}: {e}", path.display()));
    let instance = match format {
        FormatArg::Cordeau => {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            cordeau_to_instance(&parse_cordeau(&text).map_err(bad)?, &name)
        }
        _ => ProblemInstance::from_json(&text).map_err(bad)?,
    };
    let violations = validate_instance(&instance);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::usage(format!("{}: invalid instance: {}", path.display(), list.join("; "))));
    }
    let record = InstanceRecord {
        path: path.display().to_string(),
        sha256: sha256_file(path).map_err(io_err(path))?,
        format,
    };
    Ok(Loaded {
        instance,
        cordeau: format == FormatArg::Cordeau,
        record,
    })
}

pub fn coalition_config(search: &SearchArgs) -> CoalitionConfig {
    CoalitionConfig {
        agent: AgentConfig {
            pop_size: search.pop_size as usize,
            eta: search.eta,
            rho: search.rho,
            n_cycles: search.n_cycles,
            patience: search.patience as usize,
            time_limit: search.time_limit,
            seed: search.seed,
            ..AgentConfig::default()
        },
        n_agents: search.agents as usize,
        scheduling: match search.scheduler {
            SchedulerArg::Deterministic => Scheduling::Deterministic { seed: search.seed },
            SchedulerArg::Threaded => Scheduling::Threaded,
        },
    }
}

/// Position of `listen` among all agent addresses in sorted order.
pub fn tcp_agent_id(listen: SocketAddr, peers: &[SocketAddr]) -> CliResult<u16> {
    let mut all: Vec<SocketAddr> = peers.to_vec();
    all.push(listen);
    all.sort();
    all.dedup();
    if all.len() != peers.len() + 1 {
        return Err(CliError::usage("--peers must be distinct and must not contain the --listen address"));
    }
    let id = all.iter().position(|a| *a == listen).unwrap_or(0);
    Ok(id as u16)
}

/// Single-run summary of the best solution, the quality column of a
/// benchmark row.
fn reported_value(loaded: &Loaded, res: &CoalitionResult) -> (f64, Option<f64>) {
    if loaded.cordeau {
        (cordeau_distance(&loaded.instance, res.cost()), best_known(&loaded.instance.name))
    } else {
        (res.cost(), None)
    }
}

pub fn solve(args: SolveArgs, argv: Vec<String>) -> CliResult<()> {
    let started = chrono::Utc::now();
    let (loaded, cfg, transport) = match &args.from_manifest {
        Some(path) => {
            let m = RunManifest::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            let (Some(rec), Some(cfg)) = (m.instance, m.coalition) else {
                return Err(CliError::usage(format!("{} is not a solve manifest", path.display())));
            };
            let loaded = load_instance(Path::new(&rec.path), rec.format)?;
            if loaded.record.sha256 != rec.sha256 {
                warn!("instance {} changed since the manifest was written", rec.path);
            }
            (loaded, cfg, TransportArg::Inproc)
        }
        None => {
            let path = args.instance.as_deref().ok_or_else(|| CliError::usage("--instance is required"))?;
            (load_instance(path, args.format)?, coalition_config(&args.search), args.transport)
        }
    };

    let inst = loaded.instance.clone();
    let mut peers = Vec::new();
    let mut listen = None;
    let res = match transport {
        TransportArg::Inproc => run_coalition(Arc::new(inst), &cfg)?,
        TransportArg::Tcp => {
            let addr = args.listen.ok_or_else(|| CliError::usage("--transport tcp needs --listen"))?;
            if args.peers.is_empty() {
                return Err(CliError::usage("--transport tcp needs --peers"));
            }
            let id = tcp_agent_id(addr, &args.peers)?;
            let mut cfg = cfg.clone();
            cfg.n_agents = args.peers.len() + 1;
            let listener = TcpListener::bind(addr).map_err(|e| CliError::runtime(format!("bind {addr}: {e}")))?;
            info!("agent {id} of {} listening on {addr}", cfg.n_agents);
            let mut t = TcpTransport::connect(listener, &args.peers, Duration::from_secs(60))
                .map_err(|e| CliError::runtime(e.to_string()))?;
            peers = args.peers.clone();
            listen = Some(addr);
            run_networked_agent(inst, &cfg, id, &mut t)?
        }
    };

    let out = &args.out_dir;
    create_dir(out)?;
    let inst = &loaded.instance;
    let sol = &res.best.solution;
    write(&out.join("schedule.gantt"), res.schedule.to_gantt())?;

    let (best, bks) = reported_value(&loaded, &res);
    let gap = bks.and_then(|b| gap_percent(best, b).ok());
    let objectives = json!({
        "instance": inst.name,
        "objective_mode": inst.objective_mode,
        "makespan": sol.makespan,
        "cost": sol.cost,
        "potential": res.best.objectives.potential(),
        "distance": loaded.cordeau.then_some(best),
        "bks": bks,
        "gap_pct": gap,
        "complete": sol.complete,
        "agreed": res.agreed,
        "routes": sol.genotype.routes,
    });
    write_json(&out.join("objectives.json"), &objectives)?;

    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
    let csv = format!(
        "{RESULT_HEADER}\n{},{},{},{:.4},{:.4},{:.4},{},{},{}\n",
        inst.name.replace([',', '\n'], "_"),
        cfg.agent.seed,
        cfg.n_agents,
        sol.makespan,
        sol.cost,
        best,
        opt(bks),
        opt(gap),
        res.iterations,
    );
    write(&out.join("result.csv"), csv)?;

    let mut violations: Vec<serde_json::Value> = check_feasible(&sol.genotype, inst)
        .iter()
        .map(|v| json!({ "kind": "feasibility", "detail": format!("{v:?}") }))
        .collect();
    violations.extend(
        check_constraints(inst, &sol.genotype, &res.schedule)
            .iter()
            .map(|v| json!({ "kind": v.class.name(), "indices": v.indices, "magnitude": v.magnitude })),
    );
    let infeasible = !sol.complete || !violations.is_empty();

    let manifest = RunManifest {
        command: "solve".into(),
        argv,
        started_at: started.to_rfc3339(),
        instance: Some(loaded.record.clone()),
        coalition: Some(cfg.clone()),
        transport: Some(transport),
        listen,
        peers,
        outcome: Some(Outcome {
            elapsed_s: res.elapsed_s,
            iterations: res.iterations,
            timed_out: res.timed_out,
            agreed: res.agreed,
        }),
        ..RunManifest::new()
    };
    manifest.finish().write(&out.join("manifest.json"))?;

    if infeasible {
        write_json(&out.join("violations.json"), &violations)?;
        return Err(CliError {
            code: EXIT_INFEASIBLE,
            message: format!(
                "best solution is infeasible ({} violations, {} tasks unassigned); see {}",
                violations.len(),
                sol.genotype.unassigned(inst.n_tasks()).len(),
                out.join("violations.json").display()
            ),
        });
    }
    match inst.objective_mode {
        ObjectiveMode::SingleCost => println!("cost {:.4}", sol.cost),
        ObjectiveMode::ParetoBi => println!("makespan {:.4} cost {:.4}", sol.makespan, sol.cost),
    }
    if let Some(g) = gap {
        println!("value {best:.4} gap {g:.4}%");
    }
    Ok(())
}

pub const RESULT_HEADER: &str = "instance,seed,agents,makespan,cost,best,bks,gap_pct,iterations";

pub fn generate(args: GenerateArgs, argv: Vec<String>) -> CliResult<()> {
    let started = chrono::Utc::now();
    let (n, m) = (args.tasks as usize, args.robots as usize);
    let params = XdParams::default();
    create_dir(&args.out_dir)?;
    let mut files = Vec::new();
    let seeds: Vec<u64> = (0..args.batch as u64).map(|k| args.seed.wrapping_add(k)).collect();
    for &seed in &seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = generate_xd_instance(n, m, args.prec, &params, &mut rng).map_err(|e| CliError::usage(e.to_string()))?;
        inst.name = format!("xd-n{n}-m{m}-s{seed}");
        let path = args.out_dir.join(format!("{}.json", inst.name));
        inst.write_file(&path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        files.push(InstanceRecord {
            path: path.display().to_string(),
            sha256: sha256_file(&path).map_err(io_err(&path))?,
            format: FormatArg::Native,
        });
    }
    let manifest = RunManifest {
        command: "generate".into(),
        argv,
        started_at: started.to_rfc3339(),
        generator: Some(json!({
            "tasks": n,
            "robots": m,
            "precedence_fraction": args.prec,
            "precedence_pairs": precedence_count(n, args.prec),
            "seeds": seeds,
            "params": params,
        })),
        instances: files,
        ..RunManifest::new()
    };
    manifest.finish().write(&args.out_dir.join("manifest.json"))?;
    println!("wrote {} instance(s) to {}", args.batch, args.out_dir.display());
    Ok(())
}

fn read_bks_table(path: &Path) -> CliResult<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(name, v)| v.trim().parse::<f64>().ok().map(|v| (name.trim().to_string(), v)));
        match parsed {
            Some(row) => out.push(row),
            None if k == 0 => {}
            None => return Err(CliError::usage(format!("{}:{}: expected name,value", path.display(), k + 1))),
        }
    }
    Ok(out)
}

fn expand_instances(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in paths {
        match fs::read_dir(p) {
            Ok(dir) => {
                let mut files: Vec<PathBuf> = dir
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| f.is_file() && f.file_name().is_some_and(|n| n != "manifest.json"))
                    .collect();
                files.sort();
                out.extend(files);
            }
            Err(_) => out.push(p.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub instance: String,
    pub runs: usize,
    pub best: f64,
    pub mean: f64,
    pub bks: Option<f64>,
    pub best_gap_pct: Option<f64>,
    pub mean_gap_pct: Option<f64>,
    pub runtime_p50_s: f64,
    pub runtime_p90_s: f64,
}

pub const SUMMARY_HEADER: &str = "instance,runs,best,mean,bks,best_gap_pct,mean_gap_pct,runtime_p50_s,runtime_p90_s";

/// Nearest-rank percentile of a non-empty sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn summarize(rows: &[BenchmarkResult]) -> Option<BenchSummary> {
    let first = rows.first()?;
    let k = rows.len() as f64;
    let gaps: Option<Vec<f64>> = rows.iter().map(|r| r.gap_pct()).collect();
    let runtimes: Vec<f64> = rows.iter().map(|r| r.runtime_s).collect();
    Some(BenchSummary {
        instance: first.instance.clone(),
        runs: rows.len(),
        best: rows.iter().map(|r| r.best).fold(f64::INFINITY, f64::min),
        mean: rows.iter().map(|r| r.best).sum::<f64>() / k,
        bks: first.bks,
        best_gap_pct: gaps.as_ref().map(|g| g.iter().copied().fold(f64::INFINITY, f64::min)),
        mean_gap_pct: gaps.as_ref().map(|g| g.iter().sum::<f64>() / k),
        runtime_p50_s: percentile(&runtimes, 50.0),
        runtime_p90_s: percentile(&runtimes, 90.0),
    })
}

impl BenchSummary {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        format!(
            "{},{},{:.4},{:.4},{},{},{},{:.3},{:.3}",
            self.instance.replace([',', '\n'], "_"),
            self.runs,
            self.best,
            self.mean,
            opt(self.bks),
            opt(self.best_gap_pct),
            opt(self.mean_gap_pct),
            self.runtime_p50_s,
            self.runtime_p90_s,
        )
    }
}

pub fn bench(args: BenchArgs, argv: Vec<String>) -> CliResult<()> {
    let started = chrono::Utc::now();
    let table = match &args.bks {
        Some(p) => read_bks_table(p)?,
        None => Vec::new(),
    };
    create_dir(&args.out_dir)?;
    let base = coalition_config(&args.search);
    let mut all_rows = Vec::new();
    let mut summaries = Vec::new();
    let mut records = Vec::new();
    for path in expand_instances(&args.instances) {
        let loaded = match load_instance(&path, args.format) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("skipping {}: {}", path.display(), e.message);
                continue;
            }
        };
        let name = loaded.instance.name.clone();
        let bks = table
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .or_else(|| if loaded.cordeau { best_known(&name) } else { None });
        let inst = Arc::new(loaded.instance.clone());
        let mut rows = Vec::new();
        for k in 0..args.runs as u64 {
            let mut cfg = base.clone();
            cfg.agent.seed = args.search.seed.wrapping_add(k);
            if let Scheduling::Deterministic { seed } = &mut cfg.scheduling {
                *seed = cfg.agent.seed;
            }
            let res = match run_coalition(Arc::clone(&inst), &cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{name} seed {}: {e}", cfg.agent.seed);
                    continue;
                }
            };
            let (best, _) = reported_value(&loaded, &res);
            let row = BenchmarkResult {
                instance: name.clone(),
                seed: cfg.agent.seed,
                best,
                bks,
                runtime_s: res.elapsed_s,
                iterations: res.iterations,
            };
            info!("{}", row.csv_row());
            rows.push(row);
        }
        if let Some(s) = summarize(&rows) {
            println!("{}", s.csv_row());
            summaries.push(s);
        }
        all_rows.extend(rows);
        records.push(loaded.record);
    }
    write(&args.out_dir.join("runs.csv"), results_csv(&all_rows))?;
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for s in &summaries {
        text.push_str(&s.csv_row());
        text.push('\n');
    }
    write(&args.out_dir.join("summary.csv"), text)?;
    let manifest = RunManifest {
        command: "bench".into(),
        argv,
        started_at: started.to_rfc3339(),
        coalition: Some(base),
        transport: Some(TransportArg::Inproc),
        runs: Some(args.runs),
        instances: records,
        ..RunManifest::new()
    };
    manifest.finish().write(&args.out_dir.join("manifest.json"))?;
    if all_rows.is_empty() {
        return Err(CliError::runtime("no instance could be solved"));
    }
    Ok(())
}

pub fn export(args: ExportLpArgs, argv: Vec<String>) -> CliResult<()> {
    let started = chrono::Utc::now();
    let loaded = load_instance(&args.instance, args.format)?;
    let n = loaded.instance.n_tasks();
    if n > MAX_LP_TASKS {
        return Err(CliError {
            code: EXIT_LP_SIZE,
            message: format!("{n} tasks exceed the LP export limit of {MAX_LP_TASKS}"),
        });
    }
    let opts = LpOptions {
        makespan_ref: args.makespan_ref,
        cost_ref: args.cost_ref,
    };
    if !(opts.makespan_ref > 0.0 && opts.cost_ref > 0.0) {
        return Err(CliError::usage("--makespan-ref and --cost-ref must be positive"));
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let model = export_lp(&loaded.instance, &opts, &args.out).map_err(|e| match e {
        ProblemError::Io(e) => CliError::runtime(format!("{}: {e}", args.out.display())),
        e => CliError::runtime(e.to_string()),
    })?;
    let manifest = RunManifest {
        command: "export-lp".into(),
        argv,
        started_at: started.to_rfc3339(),
        instance: Some(loaded.record),
        lp: Some(json!({ "options": opts, "rows": model.rows.len(), "binaries": model.binaries.len() })),
        ..RunManifest::new()
    };
    let mut mpath = args.out.clone().into_os_string();
    mpath.push(".manifest.json");
    manifest.finish().write(Path::new(&mpath))?;
    println!("wrote {} rows to {}", model.rows.len(), args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(best: f64, runtime: f64) -> BenchmarkResult {
        BenchmarkResult {
            instance: "p01".into(),
            seed: 0,
            best,
            bks: Some(576.87),
            runtime_s: runtime,
            iterations: 10,
        }
    }

    #[test]
    fn single_run_summary_equals_run() {
        let r = row(600.0, 2.5);
        let s = summarize(std::slice::from_ref(&r)).unwrap();
        assert_eq!(s.best, 600.0);
        assert_eq!(s.mean, 600.0);
        assert_eq!(s.best_gap_pct, r.gap_pct());
        assert_eq!(s.mean_gap_pct, r.gap_pct());
        assert_eq!(s.runtime_p50_s, 2.5);
        assert_eq!(s.runtime_p90_s, 2.5);
    }

    #[test]
    fn mean_gap_not_below_best_gap() {
        let rows = [row(600.0, 1.0), row(580.0, 3.0), row(590.0, 2.0)];
        let s = summarize(&rows).unwrap();
        assert!(s.mean_gap_pct.unwrap() >= s.best_gap_pct.unwrap());
        assert_eq!(s.best, 580.0);
        assert_eq!(s.runtime_p50_s, 2.0);
        assert_eq!(s.runtime_p90_s, 3.0);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 90.0), 5.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
    }

    #[test]
    fn tcp_ids_follow_sorted_addresses() {
        let a: SocketAddr = "127.0.0.1:7001".parse().unwrap();
        let b: SocketAddr = "127.0.0.1:7002".parse().unwrap();
        let c: SocketAddr = "127.0.0.1:7003".parse().unwrap();
        assert_eq!(tcp_agent_id(b, &[c, a]).unwrap(), 1);
        assert_eq!(tcp_agent_id(a, &[b, c]).unwrap(), 0);
        assert!(tcp_agent_id(a, &[a, b]).is_err());
    }

    #[test]
    fn format_detection_by_extension() {
        assert_eq!(resolve_format(Path::new("x.json"), FormatArg::Auto), FormatArg::Native);
        assert_eq!(resolve_format(Path::new("p01"), FormatArg::Auto), FormatArg::Cordeau);
        assert_eq!(resolve_format(Path::new("x.json"), FormatArg::Cordeau), FormatArg::Cordeau);
    }
}
