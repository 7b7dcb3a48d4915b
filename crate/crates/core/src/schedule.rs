//! Genotype (per-robot task sequences) and its phenotype, the semi-active
//! schedule.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitness::Objectives;
use crate::problem::{ObjectiveMode, PrecedenceIndex, ProblemInstance};

/// Relative slack used when comparing accumulated loads and durations against
/// their limits.
pub(crate) const LIMIT_TOLERANCE: f64 = 1e-9;

#[inline]
pub(crate) fn within_limit(value: f64, limit: f64) -> bool {
    value <= limit + LIMIT_TOLERANCE * limit.abs().max(1.0)
}

/// Assignment and ordering of tasks: `routes[r]` is robot `r`'s sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub routes: Vec<Vec<usize>>,
}

impl Genotype {
    pub fn empty(n_robots: usize) -> Self {
        Self {
            routes: vec![Vec::new(); n_robots],
        }
    }

    pub fn new(routes: Vec<Vec<usize>>) -> Self {
        Self { routes }
    }

    pub fn assigned_count(&self) -> usize {
        self.routes.iter().map(Vec::len).sum()
    }

    /// `(robot, position)` of a task, if assigned.
    pub fn locate(&self, task: usize) -> Option<(usize, usize)> {
        self.routes
            .iter()
            .enumerate()
            .find_map(|(r, route)| route.iter().position(|&t| t == task).map(|p| (r, p)))
    }

    /// Maps each task in `0..n_tasks` to its robot, if assigned.
    pub fn assignment(&self, n_tasks: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_tasks];
        for (r, route) in self.routes.iter().enumerate() {
            for &t in route {
                if t < n_tasks {
                    out[t] = Some(r);
                }
            }
        }
        out
    }

    pub fn unassigned(&self, n_tasks: usize) -> Vec<usize> {
        self.assignment(n_tasks)
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(t, _)| t)
            .collect()
    }

    /// Sorted multiset of assigned task indices.
    pub fn task_multiset(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.routes.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn remove_task(&mut self, task: usize) -> Option<(usize, usize)> {
        let (r, p) = self.locate(task)?;
        self.routes[r].remove(p);
        Some((r, p))
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (r, route) in self.routes.iter().enumerate() {
            if r > 0 {
                f.write_str(" | ")?;
            }
            write!(f, "r{r}:{route:?}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTask {
    pub task: usize,
    pub start: f64,
    pub finish: f64,
}

/// Timed schedule of every robot, plus its objective values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: Vec<Vec<ScheduledTask>>,
    pub makespan: f64,
    pub total_cost: f64,
    pub complete: bool,
}

impl Schedule {
    /// Tab-separated `robot task start finish` lines sorted by robot and start.
    pub fn to_gantt(&self) -> String {
        let mut out = String::new();
        for (r, entries) in self.entries.iter().enumerate() {
            let mut sorted = entries.clone();
            sorted.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.task.cmp(&b.task)));
            for e in sorted {
                let _ = writeln!(out, "{r}\t{}\t{:.6}\t{:.6}", e.task, e.start, e.finish);
            }
        }
        out
    }

    pub fn start_of(&self, task: usize) -> Option<f64> {
        self.entries.iter().flatten().find(|e| e.task == task).map(|e| e.start)
    }

    pub fn finish_of(&self, task: usize) -> Option<f64> {
        self.entries.iter().flatten().find(|e| e.task == task).map(|e| e.finish)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DecodeError {
    /// No robot can advance while tasks remain; `witness` lists the tasks on
    /// one wait cycle.
    #[error("cross-schedule deadlock among tasks {witness:?}")]
    CrossScheduleDeadlock { witness: BTreeSet<usize> },
    #[error("unknown task index {task}")]
    UnknownTask { task: usize },
    #[error("task {task} appears in more than one position")]
    DuplicateTask { task: usize },
    #[error("genotype has {got} routes for {expected} robots")]
    RouteCount { expected: usize, got: usize },
}

/// Latest finish minus earliest start; 0 for an empty schedule.
pub fn makespan(entries: &[Vec<ScheduledTask>]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for e in entries.iter().flatten() {
        lo = lo.min(e.start);
        hi = hi.max(e.finish);
    }
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Sum of setup cost plus successor demand over every traversed edge. Closed
/// routes add the return edge to the start node.
pub fn total_cost(g: &Genotype, inst: &ProblemInstance) -> f64 {
    g.routes
        .iter()
        .enumerate()
        .map(|(r, route)| route_cost(inst, r, route))
        .sum()
}

pub(crate) fn route_cost(inst: &ProblemInstance, r: usize, route: &[usize]) -> f64 {
    let origin = inst.origin();
    let mut prev = origin;
    let mut sum = 0.0;
    for &t in route {
        sum += inst.cost(r, prev, t) + inst.demand[t][r];
        prev = t;
    }
    if inst.closed_routes && !route.is_empty() {
        sum += inst.cost(r, prev, origin);
    }
    sum
}

pub(crate) fn route_load(inst: &ProblemInstance, r: usize, route: &[usize]) -> f64 {
    route.iter().map(|&t| inst.demand[t][r]).sum()
}

/// Travel plus service time of a route, including the return leg on closed
/// routes.
pub(crate) fn route_duration(inst: &ProblemInstance, r: usize, route: &[usize]) -> f64 {
    let origin = inst.origin();
    let mut prev = origin;
    let mut sum = 0.0;
    for &t in route {
        sum += inst.time(r, prev, t) + inst.duration[t][r];
        prev = t;
    }
    if inst.closed_routes && !route.is_empty() {
        sum += inst.time(r, prev, origin);
    }
    sum
}

/// Decodes a genotype into its semi-active schedule.
pub fn decode_semi_active(g: &Genotype, inst: &ProblemInstance) -> Result<Schedule, DecodeError> {
    decode_with(g, inst, &inst.precedence_index())
}

/// [`decode_semi_active`] with a prebuilt precedence index.
pub fn decode_with(
    g: &Genotype,
    inst: &ProblemInstance,
    prec: &PrecedenceIndex,
) -> Result<Schedule, DecodeError> {
    let n = inst.n_tasks();
    let m = inst.n_robots();
    if g.routes.len() != m {
        return Err(DecodeError::RouteCount {
            expected: m,
            got: g.routes.len(),
        });
    }
    let mut slot: Vec<Option<(usize, usize)>> = vec![None; n];
    for (r, route) in g.routes.iter().enumerate() {
        for (k, &t) in route.iter().enumerate() {
            if t >= n {
                return Err(DecodeError::UnknownTask { task: t });
            }
            if slot[t].is_some() {
                return Err(DecodeError::DuplicateTask { task: t });
            }
            slot[t] = Some((r, k));
        }
    }

    let mut waiting = vec![0usize; n];
    for t in 0..n {
        if slot[t].is_some() {
            waiting[t] = prec.preds[t].iter().filter(|&&p| slot[p].is_some()).count();
        }
    }

    let origin = inst.origin();
    let mut finish = vec![f64::NAN; n];
    let mut head = vec![0usize; m];
    let mut ready = vec![0.0f64; m];
    let mut prev = vec![origin; m];
    let mut entries: Vec<Vec<ScheduledTask>> =
        g.routes.iter().map(|route| Vec::with_capacity(route.len())).collect();
    let mut scheduled = 0usize;
    let total = g.assigned_count();

    // Lowest robot index advances first; the fixpoint is order independent.
    loop {
        let mut progressed = false;
        for r in 0..m {
            let route = &g.routes[r];
            while head[r] < route.len() {
                let t = route[head[r]];
                if waiting[t] > 0 {
                    break;
                }
                let mut start = ready[r] + inst.time(r, prev[r], t);
                for &p in &prec.preds[t] {
                    if slot[p].is_some() {
                        start = start.max(finish[p]);
                    }
                }
                let end = start + inst.duration[t][r];
                finish[t] = end;
                entries[r].push(ScheduledTask {
                    task: t,
                    start,
                    finish: end,
                });
                for &s in &prec.succs[t] {
                    if slot[s].is_some() {
                        waiting[s] -= 1;
                    }
                }
                ready[r] = end;
                prev[r] = t;
                head[r] += 1;
                scheduled += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    if scheduled < total {
        return Err(DecodeError::CrossScheduleDeadlock {
            witness: deadlock_witness(g, prec, &slot, &head, &finish),
        });
    }

    let makespan = makespan(&entries);
    Ok(Schedule {
        entries,
        makespan,
        total_cost: total_cost(g, inst),
        complete: total == n,
    })
}

/// Follows wait-for edges between blocked route heads until one repeats and
/// returns every task on that cycle.
fn deadlock_witness(
    g: &Genotype,
    prec: &PrecedenceIndex,
    slot: &[Option<(usize, usize)>],
    head: &[usize],
    finish: &[f64],
) -> BTreeSet<usize> {
    let blocked = (0..g.routes.len())
        .find(|&r| head[r] < g.routes[r].len())
        .expect("deadlock implies a blocked robot");
    let mut visited: Vec<usize> = Vec::new();
    let mut segments: Vec<Vec<usize>> = Vec::new();
    let mut r = blocked;
    loop {
        if let Some(pos) = visited.iter().position(|&v| v == r) {
            return segments[pos..].iter().flatten().copied().collect();
        }
        let t = g.routes[r][head[r]];
        let p = prec.preds[t]
            .iter()
            .copied()
            .find(|&p| slot[p].is_some() && finish[p].is_nan())
            .expect("blocked head waits on an unfinished predecessor");
        let (pr, pk) = slot[p].unwrap();
        visited.push(r);
        segments.push(g.routes[pr][head[pr]..=pk].to_vec());
        r = pr;
    }
}

/// Genotype with its evaluated objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub genotype: Genotype,
    pub makespan: f64,
    pub cost: f64,
    pub complete: bool,
}

impl Solution {
    pub fn evaluate(
        genotype: Genotype,
        inst: &ProblemInstance,
        prec: &PrecedenceIndex,
    ) -> Result<Self, DecodeError> {
        let schedule = decode_with(&genotype, inst, prec)?;
        Ok(Self {
            genotype,
            makespan: schedule.makespan,
            cost: schedule.total_cost,
            complete: schedule.complete,
        })
    }

    /// Objective vector used for ranking and comparison. Incomplete solutions
    /// are pushed to `(big_m, big_m)` so that any complete one dominates them.
    pub fn objectives(&self, mode: ObjectiveMode, big_m: f64) -> Objectives {
        match (mode, self.complete) {
            (ObjectiveMode::SingleCost, true) => Objectives::Single { cost: self.cost },
            (ObjectiveMode::SingleCost, false) => Objectives::Single { cost: big_m },
            (ObjectiveMode::ParetoBi, true) => Objectives::Pareto {
                makespan: self.makespan,
                cost: self.cost,
            },
            (ObjectiveMode::ParetoBi, false) => Objectives::Pareto {
                makespan: big_m,
                cost: big_m,
            },
        }
    }
}

/// A constraint the genotype breaks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeasibilityViolation {
    Capacity { robot: usize, load: f64, capacity: f64 },
    DuplicateTask { task: usize },
    UnknownTask { task: usize },
    PrecedenceInversion { robot: usize, before: usize, after: usize },
    Deadlock { witness: BTreeSet<usize> },
    RouteDuration { robot: usize, duration: f64, limit: f64 },
    RouteCount { expected: usize, got: usize },
}

/// Capacity, duplicate, intra-route precedence, route-duration and deadlock
/// checks. Unassigned tasks are not reported here.
pub fn check_feasible(g: &Genotype, inst: &ProblemInstance) -> Vec<FeasibilityViolation> {
    let n = inst.n_tasks();
    let m = inst.n_robots();
    let mut out = Vec::new();
    if g.routes.len() != m {
        out.push(FeasibilityViolation::RouteCount {
            expected: m,
            got: g.routes.len(),
        });
        return out;
    }
    let mut seen = vec![false; n];
    let mut structural = false;
    for route in &g.routes {
        for &t in route {
            if t >= n {
                out.push(FeasibilityViolation::UnknownTask { task: t });
                structural = true;
            } else if seen[t] {
                out.push(FeasibilityViolation::DuplicateTask { task: t });
                structural = true;
            } else {
                seen[t] = true;
            }
        }
    }
    if structural {
        return out;
    }
    for (r, route) in g.routes.iter().enumerate() {
        let load = route_load(inst, r, route);
        if !within_limit(load, inst.capacity(r)) {
            out.push(FeasibilityViolation::Capacity {
                robot: r,
                load,
                capacity: inst.capacity(r),
            });
        }
        if let Some(limit) = inst.route_limit(r) {
            let duration = route_duration(inst, r, route);
            if !within_limit(duration, limit) {
                out.push(FeasibilityViolation::RouteDuration {
                    robot: r,
                    duration,
                    limit,
                });
            }
        }
        let mut position = vec![usize::MAX; n];
        for (k, &t) in route.iter().enumerate() {
            position[t] = k;
        }
        for &(a, b) in &inst.precedence {
            if a < n && b < n && position[a] != usize::MAX && position[b] != usize::MAX && position[a] > position[b] {
                out.push(FeasibilityViolation::PrecedenceInversion {
                    robot: r,
                    before: a,
                    after: b,
                });
            }
        }
    }
    if let Err(DecodeError::CrossScheduleDeadlock { witness }) = decode_semi_active(g, inst) {
        out.push(FeasibilityViolation::Deadlock { witness });
    }
    out
}
