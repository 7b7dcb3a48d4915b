//! Benchmark ingestion and generation: Cordeau multi-depot files, random
//! multi-robot instances with precedence, optimality gaps and result rows.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::problem::{
    default_big_m, derive_geometric_setup, euclidean, ObjectiveMode, ProblemError, ProblemInstance, RobotSpec,
    SetupTensor, TaskSpec,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CordeauCustomer {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub service: f64,
    pub demand: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CordeauDepot {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    /// Maximum route duration, 0 for none.
    pub max_duration: f64,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CordeauInstance {
    pub problem_type: u32,
    pub vehicles_per_depot: usize,
    pub customers: Vec<CordeauCustomer>,
    pub depots: Vec<CordeauDepot>,
}

impl CordeauInstance {
    pub fn n_customers(&self) -> usize {
        self.customers.len()
    }

    pub fn n_depots(&self) -> usize {
        self.depots.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles_per_depot * self.depots.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.customers.iter().map(|c| c.demand).sum()
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> ProblemError {
    ProblemError::Format(format!("line {line}: {}", msg.into()))
}

fn numbers(line_no: usize, line: &str, min: usize, what: &str) -> Result<Vec<f64>, ProblemError> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() < min {
        return Err(parse_err(line_no, format!("{what}: expected at least {min} fields, found {}", toks.len())));
    }
    toks.iter()
        .map(|t| t.parse::<f64>().map_err(|_| parse_err(line_no, format!("{what}: bad number {t:?}"))))
        .collect()
}

/// Parses the Cordeau multi-depot format: a header `type m n t`, `t` lines
/// `D Q`, `n` customer lines `id x y service demand ...`, then `t` depot lines
/// `id x y ...`. Trailing fields on customer and depot lines are skipped.
pub fn parse_cordeau(text: &str) -> Result<CordeauInstance, ProblemError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str, expected: usize, got: usize| {
        lines.next().ok_or_else(|| {
            ProblemError::Format(format!("unexpected end of file: expected {expected} {what} lines, found {got}"))
        })
    };
    let (ln, header) = next("header", 1, 0)?;
    let h = numbers(ln, header, 4, "header")?;
    if h[..4].iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
        return Err(parse_err(ln, "header fields must be non-negative integers"));
    }
    let (problem_type, m, n, t) = (h[0] as u32, h[1] as usize, h[2] as usize, h[3] as usize);

    let mut limits = Vec::with_capacity(t);
    for k in 0..t {
        let (ln, line) = next("depot specification", t, k)?;
        let v = numbers(ln, line, 2, "depot specification")?;
        limits.push((v[0], v[1]));
    }
    let mut customers = Vec::with_capacity(n);
    let mut skipped = 0usize;
    for k in 0..n {
        let (ln, line) = next("customer", n, k)?;
        let v = numbers(ln, line, 5, "customer")?;
        skipped += v.len() - 5;
        customers.push(CordeauCustomer {
            id: v[0] as usize,
            x: v[1],
            y: v[2],
            service: v[3],
            demand: v[4],
        });
    }
    let mut depots = Vec::with_capacity(t);
    for (k, &(max_duration, capacity)) in limits.iter().enumerate() {
        let (ln, line) = next("depot", t, k)?;
        let v = numbers(ln, line, 3, "depot")?;
        skipped += v.len() - 3;
        depots.push(CordeauDepot {
            id: v[0] as usize,
            x: v[1],
            y: v[2],
            max_duration,
            capacity,
        });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, format!("trailing content after {t} depot lines")));
    }
    if skipped > 0 {
        log::debug!("skipped {skipped} periodic-variant fields");
    }
    Ok(CordeauInstance {
        problem_type,
        vehicles_per_depot: m,
        customers,
        depots,
    })
}

/// Writes the instance back in Cordeau layout (without periodic fields).
pub fn write_cordeau(ci: &CordeauInstance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {} {} {}", ci.problem_type, ci.vehicles_per_depot, ci.customers.len(), ci.depots.len());
    for d in &ci.depots {
        let _ = writeln!(s, "{} {}", d.max_duration, d.capacity);
    }
    for c in &ci.customers {
        let _ = writeln!(s, "{} {} {} {} {}", c.id, c.x, c.y, c.service, c.demand);
    }
    for d in &ci.depots {
        let _ = writeln!(s, "{} {} {}", d.id, d.x, d.y);
    }
    s
}

/// Vehicle `k` is based at depot `k / vehicles_per_depot`. Costs and travel
/// times are Euclidean distances; routes return to their depot.
pub fn cordeau_to_instance(ci: &CordeauInstance, name: &str) -> ProblemInstance {
    let n = ci.customers.len();
    let m = ci.vehicles_per_depot;
    let tasks: Vec<TaskSpec> = ci
        .customers
        .iter()
        .enumerate()
        .map(|(i, c)| TaskSpec {
            id: i,
            position: vec![c.x, c.y],
            label: format!("c{}", c.id),
        })
        .collect();
    let robots: Vec<RobotSpec> = (0..ci.n_vehicles())
        .map(|k| RobotSpec {
            id: k,
            start_node: k / m,
            capacity: ci.depots[k / m].capacity,
            speed: 1.0,
        })
        .collect();
    let n_robots = robots.len();
    let mut setup = SetupTensor::zeros(n_robots, n + 1);
    for (k, robot) in robots.iter().enumerate() {
        let d = &ci.depots[robot.start_node];
        let depot = [d.x, d.y];
        for (i, a) in tasks.iter().enumerate() {
            let to_depot = euclidean(&a.position, &depot);
            setup.set(k, n, i, to_depot);
            setup.set(k, i, n, to_depot);
            for (j, b) in tasks.iter().enumerate() {
                if i != j {
                    setup.set(k, i, j, euclidean(&a.position, &b.position));
                }
            }
        }
    }
    let limits: Vec<f64> = robots.iter().map(|r| ci.depots[r.start_node].max_duration).collect();
    let max_cost = setup.values().fold(0.0, f64::max);
    ProblemInstance {
        name: name.to_string(),
        start_nodes: ci.depots.iter().map(|d| vec![d.x, d.y]).collect(),
        duration: ci.customers.iter().map(|c| vec![c.service; n_robots]).collect(),
        demand: ci.customers.iter().map(|c| vec![c.demand; n_robots]).collect(),
        setup_time: setup.clone(),
        setup_cost: setup,
        robots,
        tasks,
        precedence: Vec::new(),
        closed_routes: true,
        objective_mode: ObjectiveMode::SingleCost,
        big_m: default_big_m(max_cost),
        max_route_duration: limits.iter().any(|&l| l > 0.0).then_some(limits),
    }
}

/// Travel distance of a solution to a converted Cordeau instance: the cost
/// objective minus the demand terms it also carries.
pub fn cordeau_distance(inst: &ProblemInstance, cost: f64) -> f64 {
    cost - inst.demand.iter().map(|d| d[0]).sum::<f64>()
}

/// Known best objective values for Cordeau instances.
pub const BEST_KNOWN: &[(&str, f64)] = &[
    ("p01", 576.87),
    ("p02", 473.53),
    ("p03", 641.19),
    ("p05", 750.03),
    ("p06", 876.50),
    ("p09", 3900.22),
    ("p10", 3663.02),
    ("p11", 3554.18),
    ("p12", 1318.95),
    ("p13", 1318.95),
    ("p15", 2505.42),
    ("p18", 3702.85),
    ("p21", 5474.84),
    ("pr01", 861.32),
    ("pr09", 2153.10),
];

pub fn best_known(name: &str) -> Option<f64> {
    BEST_KNOWN.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
}

pub fn gap_percent(found: f64, bks: f64) -> Result<f64, ProblemError> {
    if !(bks > 0.0) {
        return Err(ProblemError::Parameter(format!("best known value must be positive, got {bks}")));
    }
    Ok(100.0 * (found - bks) / bks)
}

/// Distributions for random instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XdParams {
    pub box_size: f64,
    pub dimensions: usize,
    pub speed: (f64, f64),
    pub demand: (f64, f64),
    pub energy_rate: (f64, f64),
    pub duration: (f64, f64),
    pub duration_factor: (f64, f64),
    pub cost_per_meter: f64,
    /// Expected share of fleet capacity used by the tasks.
    pub load_factor: f64,
}

impl Default for XdParams {
    fn default() -> Self {
        Self {
            box_size: 100.0,
            dimensions: 3,
            speed: (0.5, 2.0),
            demand: (1.0, 10.0),
            energy_rate: (0.5, 1.5),
            duration: (1.0, 10.0),
            duration_factor: (0.8, 1.25),
            cost_per_meter: 1.0,
            load_factor: 0.8,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Number of precedence-constrained tasks for a fraction of `n`.
pub fn precedence_count(n_tasks: usize, fraction: f64) -> usize {
    ((fraction * n_tasks as f64 - 1e-9).ceil().max(0.0) as usize).min(n_tasks.saturating_sub(1))
}

/// Random heterogeneous multi-robot instance: tasks and robot start points
/// uniform in a box, `precedence_count(n, fraction)` tasks each receiving one
/// incoming precedence edge from a task earlier in a random order.
pub fn generate_xd_instance<R: Rng + ?Sized>(
    n_tasks: usize,
    n_robots: usize,
    prec_fraction: f64,
    params: &XdParams,
    rng: &mut R,
) -> Result<ProblemInstance, ProblemError> {
    if n_tasks == 0 || n_robots == 0 {
        return Err(ProblemError::Parameter("need at least one task and one robot".into()));
    }
    if !(0.0..1.0).contains(&prec_fraction) {
        return Err(ProblemError::Parameter(format!("precedence fraction {prec_fraction} outside [0, 1)")));
    }
    let point = |rng: &mut R| -> Vec<f64> { (0..params.dimensions).map(|_| rng.gen_range(0.0..params.box_size)).collect() };
    let tasks: Vec<TaskSpec> = (0..n_tasks)
        .map(|i| TaskSpec {
            id: i,
            position: point(rng),
            label: format!("t{i}"),
        })
        .collect();
    let starts: Vec<Vec<f64>> = (0..n_robots).map(|_| point(rng)).collect();
    let speeds: Vec<f64> = (0..n_robots).map(|_| uniform(rng, params.speed)).collect();
    let rates: Vec<f64> = (0..n_robots).map(|_| uniform(rng, params.energy_rate)).collect();
    let factors: Vec<f64> = (0..n_robots).map(|_| uniform(rng, params.duration_factor)).collect();
    let base_demand: Vec<f64> = (0..n_tasks).map(|_| uniform(rng, params.demand)).collect();
    let base_duration: Vec<f64> = (0..n_tasks).map(|_| uniform(rng, params.duration)).collect();
    let demand: Vec<Vec<f64>> = base_demand.iter().map(|d| rates.iter().map(|r| d * r).collect()).collect();
    let duration: Vec<Vec<f64>> = base_duration.iter().map(|d| factors.iter().map(|f| d * f).collect()).collect();
    let robots = (0..n_robots)
        .map(|r| {
            let load: f64 = demand.iter().map(|d| d[r]).sum();
            RobotSpec {
                id: r,
                start_node: r,
                capacity: load / (params.load_factor * n_robots as f64),
                speed: speeds[r],
            }
        })
        .collect();
    let (setup_time, setup_cost) = derive_geometric_setup(&tasks, &starts, &speeds, params.cost_per_meter)?;

    let k = precedence_count(n_tasks, prec_fraction);
    let mut order: Vec<usize> = (0..n_tasks).collect();
    order.shuffle(rng);
    let targets = rand::seq::index::sample(rng, n_tasks - 1, k);
    let mut precedence: Vec<(usize, usize)> = targets
        .into_iter()
        .map(|p| {
            let p = p + 1;
            (order[rng.gen_range(0..p)], order[p])
        })
        .collect();
    precedence.sort_unstable();

    let max_cost = setup_cost.values().fold(0.0, f64::max);
    Ok(ProblemInstance {
        name: format!("xd-n{n_tasks}-m{n_robots}"),
        robots,
        tasks,
        start_nodes: starts,
        duration,
        setup_time,
        setup_cost,
        demand,
        precedence,
        closed_routes: false,
        objective_mode: ObjectiveMode::ParetoBi,
        big_m: default_big_m(max_cost),
        max_route_duration: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub instance: String,
    pub seed: u64,
    pub best: f64,
    pub bks: Option<f64>,
    pub runtime_s: f64,
    pub iterations: u64,
}

pub const CSV_HEADER: &str = "instance,seed,best,bks,gap_pct,runtime_s,iterations";

impl BenchmarkResult {
    pub fn gap_pct(&self) -> Option<f64> {
        self.bks.and_then(|b| gap_percent(self.best, b).ok())
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        format!(
            "{},{},{:.4},{},{},{:.3},{}",
            self.instance.replace([',', '\n'], "_"),
            self.seed,
            self.best,
            opt(self.bks),
            opt(self.gap_pct()),
            self.runtime_s,
            self.iterations
        )
    }
}

pub fn results_csv(rows: &[BenchmarkResult]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}
