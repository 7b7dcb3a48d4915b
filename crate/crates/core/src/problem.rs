//! Problem data model: robots, tasks, per-robot cost/time tensors and the
//! precedence relation.
//!
//! Nodes are indexed per robot: `0..n` are the tasks and `n` is the robot's
//! own start node. Every tensor is dense over `robots × (n+1) × (n+1)`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Format tag written at the top of every instance file.
pub const INSTANCE_FORMAT: &str = "cbm-instance";
/// Schema version of the instance file.
pub const INSTANCE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown task index {task} (instance has {n_tasks} tasks)")]
    UnknownTask { task: usize, n_tasks: usize },
    #[error("unknown robot index {robot} (instance has {n_robots} robots)")]
    UnknownRobot { robot: usize, n_robots: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("instance file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Total route cost is the only criterion (benchmark mode).
    SingleCost,
    /// Makespan and total cost, compared by Pareto dominance.
    ParetoBi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: usize,
    /// Index into [`ProblemInstance::start_nodes`].
    pub start_node: usize,
    /// Energy capacity `Q_r`.
    pub capacity: f64,
    /// Meters per second. Only the instance generator reads it.
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    /// 2D or 3D coordinates in meters.
    pub position: Vec<f64>,
    #[serde(default)]
    pub label: String,
}

/// Dense `robots × nodes × nodes` tensor where `nodes = n_tasks + 1` and the
/// last node is the robot's start node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<Vec<f64>>>", try_from = "Vec<Vec<Vec<f64>>>")]
pub struct SetupTensor {
    robots: usize,
    nodes: usize,
    data: Vec<f64>,
}

impl SetupTensor {
    pub fn zeros(robots: usize, nodes: usize) -> Self {
        Self {
            robots,
            nodes,
            data: vec![0.0; robots * nodes * nodes],
        }
    }

    pub fn robots(&self) -> usize {
        self.robots
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    #[inline]
    pub fn get(&self, robot: usize, from: usize, to: usize) -> f64 {
        self.data[(robot * self.nodes + from) * self.nodes + to]
    }

    #[inline]
    pub fn set(&mut self, robot: usize, from: usize, to: usize, value: f64) {
        self.data[(robot * self.nodes + from) * self.nodes + to] = value;
    }

    /// The `nodes × nodes` block of one robot, row-major.
    pub fn robot_block(&self, robot: usize) -> &[f64] {
        let len = self.nodes * self.nodes;
        &self.data[robot * len..(robot + 1) * len]
    }

    pub fn robot_block_mut(&mut self, robot: usize) -> &mut [f64] {
        let len = self.nodes * self.nodes;
        &mut self.data[robot * len..(robot + 1) * len]
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}

impl From<SetupTensor> for Vec<Vec<Vec<f64>>> {
    fn from(t: SetupTensor) -> Self {
        (0..t.robots)
            .map(|r| {
                t.robot_block(r)
                    .chunks(t.nodes.max(1))
                    .map(|row| row.to_vec())
                    .collect()
            })
            .collect()
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for SetupTensor {
    type Error = String;

    fn try_from(nested: Vec<Vec<Vec<f64>>>) -> Result<Self, Self::Error> {
        let robots = nested.len();
        let nodes = nested.first().map_or(0, |b| b.len());
        let mut data = Vec::with_capacity(robots * nodes * nodes);
        for (r, block) in nested.into_iter().enumerate() {
            if block.len() != nodes {
                return Err(format!("robot {r}: expected {nodes} rows, got {}", block.len()));
            }
            for (i, row) in block.into_iter().enumerate() {
                if row.len() != nodes {
                    return Err(format!(
                        "robot {r} row {i}: expected {nodes} columns, got {}",
                        row.len()
                    ));
                }
                data.extend(row);
            }
        }
        Ok(Self { robots, nodes, data })
    }
}

/// A complete task-planning instance. Immutable once built; share it behind
/// an `Arc` across agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    #[serde(default)]
    pub name: String,
    pub robots: Vec<RobotSpec>,
    pub tasks: Vec<TaskSpec>,
    /// Positions of the start locations `V_s`.
    pub start_nodes: Vec<Vec<f64>>,
    /// `duration[task][robot]`, seconds.
    pub duration: Vec<Vec<f64>>,
    /// `setup_time[robot][from][to]`, seconds.
    pub setup_time: SetupTensor,
    /// `setup_cost[robot][from][to]`, cost units.
    pub setup_cost: SetupTensor,
    /// `demand[task][robot]`, energy units.
    pub demand: Vec<Vec<f64>>,
    /// Ordered pairs `(before, after)`.
    pub precedence: Vec<(usize, usize)>,
    pub closed_routes: bool,
    pub objective_mode: ObjectiveMode,
    pub big_m: f64,
    /// Per-robot limit on route duration (travel plus service). Only used by
    /// benchmark instances; `None` means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_route_duration: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    instance: ProblemInstance,
}

impl ProblemInstance {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    /// Node index of a robot's start location inside the setup tensors.
    #[inline]
    pub fn origin(&self) -> usize {
        self.tasks.len()
    }

    #[inline]
    pub fn cost(&self, robot: usize, from: usize, to: usize) -> f64 {
        self.setup_cost.get(robot, from, to)
    }

    #[inline]
    pub fn time(&self, robot: usize, from: usize, to: usize) -> f64 {
        self.setup_time.get(robot, from, to)
    }

    #[inline]
    pub fn capacity(&self, robot: usize) -> f64 {
        self.robots[robot].capacity
    }

    #[inline]
    pub fn route_limit(&self, robot: usize) -> Option<f64> {
        self.max_route_duration
            .as_ref()
            .map(|limits| limits[robot])
            .filter(|d| *d > 0.0)
    }

    /// Whether the edge into `to` is masked for `robot`.
    #[inline]
    pub fn is_masked(&self, robot: usize, from: usize, to: usize) -> bool {
        self.setup_cost.get(robot, from, to) >= self.big_m
    }

    pub fn max_finite_cost(&self) -> f64 {
        self.setup_cost
            .values()
            .filter(|c| c.is_finite() && *c < self.big_m)
            .fold(0.0, f64::max)
    }

    /// Robots grouped by shared start location, indexed by start node.
    pub fn depots(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.start_nodes.len()];
        for robot in &self.robots {
            if let Some(group) = groups.get_mut(robot.start_node) {
                group.push(robot.id);
            }
        }
        groups
    }

    pub fn precedence_index(&self) -> PrecedenceIndex {
        PrecedenceIndex::new(self.n_tasks(), &self.precedence)
    }

    pub fn to_json(&self) -> Result<String, ProblemError> {
        let file = InstanceFile {
            format: INSTANCE_FORMAT.to_string(),
            version: INSTANCE_VERSION,
            instance: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.format != INSTANCE_FORMAT {
            return Err(ProblemError::Format(format!(
                "expected format \"{INSTANCE_FORMAT}\", found \"{}\"",
                file.format
            )));
        }
        if file.version != INSTANCE_VERSION {
            return Err(ProblemError::Format(format!(
                "unsupported version {}",
                file.version
            )));
        }
        Ok(file.instance)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ProblemError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ProblemError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Predecessor and successor lists of the precedence relation.
#[derive(Clone, Debug, Default)]
pub struct PrecedenceIndex {
    pub preds: Vec<Vec<usize>>,
    pub succs: Vec<Vec<usize>>,
}

impl PrecedenceIndex {
    pub fn new(n_tasks: usize, pairs: &[(usize, usize)]) -> Self {
        let mut preds = vec![Vec::new(); n_tasks];
        let mut succs = vec![Vec::new(); n_tasks];
        for &(a, b) in pairs {
            if a < n_tasks && b < n_tasks {
                succs[a].push(b);
                preds[b].push(a);
            }
        }
        Self { preds, succs }
    }

    pub fn is_empty(&self) -> bool {
        self.preds.iter().all(Vec::is_empty)
    }
}

/// One broken invariant found by [`validate_instance`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub indices: Vec<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}: {}", self.field, self.indices, self.rule)
    }
}

fn violation(field: &'static str, indices: Vec<usize>, rule: impl Into<String>) -> Violation {
    Violation {
        field,
        indices,
        rule: rule.into(),
    }
}

/// Returns one cycle of the directed graph over `0..n`, if any.
pub fn find_cycle(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    let mut succs = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a < n && b < n {
            succs[a].push(b);
            indegree[b] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut removed = vec![false; n];
    while let Some(v) = queue.pop_front() {
        removed[v] = true;
        for &w in &succs[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    let start = (0..n).find(|&v| !removed[v])?;
    // Every remaining node has a remaining predecessor; walk backwards until a
    // node repeats.
    let mut preds = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a < n && b < n && !removed[a] && !removed[b] {
            preds[b].push(a);
        }
    }
    let mut seen = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut v = start;
    while seen[v] == usize::MAX {
        seen[v] = path.len();
        path.push(v);
        v = preds[v][0];
    }
    let mut cycle = path.split_off(seen[v]);
    cycle.reverse();
    Some(cycle)
}

/// Checks every structural invariant of an instance. An empty list means the
/// instance is well formed.
pub fn validate_instance(inst: &ProblemInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = inst.n_tasks();
    let m = inst.n_robots();

    for (r, robot) in inst.robots.iter().enumerate() {
        if robot.id != r {
            out.push(violation("robots", vec![r], format!("id {} must equal its index", robot.id)));
        }
        if robot.start_node >= inst.start_nodes.len() {
            out.push(violation("robots", vec![r], "start_node out of range"));
        }
        if !(robot.capacity > 0.0) {
            out.push(violation("capacity", vec![r], "capacity must be positive"));
        }
        if robot.speed < 0.0 || !robot.speed.is_finite() {
            out.push(violation("robots", vec![r], "speed must be finite and non-negative"));
        }
    }
    for (i, task) in inst.tasks.iter().enumerate() {
        if task.id != i {
            out.push(violation("tasks", vec![i], format!("id {} must equal its index", task.id)));
        }
    }

    for (field, matrix) in [("duration", &inst.duration), ("demand", &inst.demand)] {
        if matrix.len() != n {
            out.push(violation(field, vec![], format!("expected {n} rows, got {}", matrix.len())));
            continue;
        }
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != m {
                out.push(violation(field, vec![i], format!("expected {m} columns, got {}", row.len())));
                continue;
            }
            for (r, v) in row.iter().enumerate() {
                if !(v.is_finite() && *v >= 0.0) {
                    out.push(violation(field, vec![i, r], "must be finite and non-negative"));
                }
            }
        }
    }

    let mut max_finite = 0.0f64;
    for (field, tensor, maskable) in [
        ("setup_time", &inst.setup_time, false),
        ("setup_cost", &inst.setup_cost, true),
    ] {
        if tensor.robots() != m || tensor.nodes() != n + 1 {
            out.push(violation(
                field,
                vec![],
                format!(
                    "expected {m}x{}x{} tensor, got {}x{}x{}",
                    n + 1,
                    n + 1,
                    tensor.robots(),
                    tensor.nodes(),
                    tensor.nodes()
                ),
            ));
            continue;
        }
        for r in 0..m {
            for i in 0..=n {
                for j in 0..=n {
                    let v = tensor.get(r, i, j);
                    if i == j {
                        if v != 0.0 {
                            out.push(violation(field, vec![i, j, r], "diagonal entries must be 0"));
                        }
                        continue;
                    }
                    if maskable && v == inst.big_m {
                        continue;
                    }
                    if !(v.is_finite() && v >= 0.0) {
                        out.push(violation(field, vec![i, j, r], "must be finite and non-negative"));
                    } else if maskable {
                        max_finite = max_finite.max(v);
                    }
                }
            }
        }
    }
    if !(inst.big_m > 1000.0 * max_finite) {
        out.push(violation(
            "big_m",
            vec![],
            format!("big_m {} must exceed 1000 x max finite setup cost {}", inst.big_m, max_finite),
        ));
    }

    let mut in_range = Vec::with_capacity(inst.precedence.len());
    for (k, &(a, b)) in inst.precedence.iter().enumerate() {
        if a >= n || b >= n {
            out.push(violation("precedence", vec![k], format!("pair ({a},{b}) references an unknown task")));
        } else if a == b {
            out.push(violation("precedence", vec![a], "task cannot precede itself"));
        } else {
            in_range.push((a, b));
        }
    }
    if let Some(cycle) = find_cycle(n, &in_range) {
        let set: BTreeSet<usize> = cycle.iter().copied().collect();
        let names: Vec<String> = set.iter().map(|t| t.to_string()).collect();
        out.push(violation(
            "precedence",
            set.into_iter().collect(),
            format!("precedence cycle {{{}}}", names.join(",")),
        ));
    }

    if let Some(limits) = &inst.max_route_duration {
        if limits.len() != m {
            out.push(violation("max_route_duration", vec![], format!("expected {m} entries")));
        }
    }
    out
}

/// Default big-M for a largest finite setup cost.
pub fn default_big_m(max_finite_cost: f64) -> f64 {
    1e6 * (max_finite_cost + 1.0)
}

/// Makes tasks in `unavailable` unreachable for robot `robot` by setting every
/// edge into them to `big_m`.
pub fn mask_unavailable(
    inst: &ProblemInstance,
    robot: usize,
    unavailable: &[usize],
) -> Result<ProblemInstance, ProblemError> {
    let n = inst.n_tasks();
    if robot >= inst.n_robots() {
        return Err(ProblemError::UnknownRobot {
            robot,
            n_robots: inst.n_robots(),
        });
    }
    if let Some(&task) = unavailable.iter().find(|&&t| t >= n) {
        return Err(ProblemError::UnknownTask { task, n_tasks: n });
    }
    let mut out = inst.clone();
    for &j in unavailable {
        for i in 0..=n {
            if i != j {
                out.setup_cost.set(robot, i, j, inst.big_m);
            }
        }
    }
    Ok(out)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Builds setup time and cost tensors from positions: time is distance over
/// robot speed, cost is distance times `cost_per_meter`.
///
/// `robot_starts[r]` is the position robot `r` starts from.
pub fn derive_geometric_setup(
    tasks: &[TaskSpec],
    robot_starts: &[Vec<f64>],
    speeds: &[f64],
    cost_per_meter: f64,
) -> Result<(SetupTensor, SetupTensor), ProblemError> {
    if robot_starts.len() != speeds.len() {
        return Err(ProblemError::Parameter(format!(
            "{} start positions for {} speeds",
            robot_starts.len(),
            speeds.len()
        )));
    }
    if let Some(r) = speeds.iter().position(|s| !(*s > 0.0)) {
        return Err(ProblemError::Parameter(format!("robot {r} speed must be positive")));
    }
    let dim = tasks
        .first()
        .map(|t| t.position.len())
        .or_else(|| robot_starts.first().map(Vec::len))
        .unwrap_or(0);
    let dims_ok = tasks.iter().all(|t| t.position.len() == dim)
        && robot_starts.iter().all(|p| p.len() == dim);
    if !dims_ok {
        return Err(ProblemError::Parameter("positions differ in dimensionality".into()));
    }

    let n = tasks.len();
    let m = speeds.len();
    let mut time = SetupTensor::zeros(m, n + 1);
    let mut cost = SetupTensor::zeros(m, n + 1);
    for r in 0..m {
        let pos = |k: usize| -> &[f64] {
            if k == n {
                &robot_starts[r]
            } else {
                &tasks[k].position
            }
        };
        for i in 0..=n {
            for j in (i + 1)..=n {
                let d = euclidean(pos(i), pos(j));
                let (t, c) = (d / speeds[r], d * cost_per_meter);
                time.set(r, i, j, t);
                time.set(r, j, i, t);
                cost.set(r, i, j, c);
                cost.set(r, j, i, c);
            }
        }
    }
    Ok((time, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::line_instance;

    #[test]
    fn well_formed_instance_has_no_violations() {
        assert!(validate_instance(&line_instance()).is_empty());
    }

    #[test]
    fn two_cycle_is_reported_once() {
        let mut inst = line_instance();
        inst.precedence = vec![(0, 1), (1, 0)];
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "precedence cycle {0,1}");
    }

    #[test]
    fn zero_capacity_is_flagged() {
        let mut inst = line_instance();
        inst.robots[0].capacity = 0.0;
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "capacity must be positive");
        assert_eq!(v[0].indices, vec![0]);
    }

    #[test]
    fn small_big_m_is_flagged() {
        let mut inst = line_instance();
        inst.big_m = 100.0;
        assert!(validate_instance(&inst).iter().any(|v| v.field == "big_m"));
    }

    #[test]
    fn nonzero_diagonal_is_flagged() {
        let mut inst = line_instance();
        inst.setup_time.set(1, 2, 2, 0.5);
        assert!(validate_instance(&inst)
            .iter()
            .any(|v| v.field == "setup_time" && v.indices == vec![2, 2, 1]));
    }

    #[test]
    fn masking_nothing_is_identity() {
        let inst = line_instance();
        assert_eq!(mask_unavailable(&inst, 0, &[]).unwrap(), inst);
    }

    #[test]
    fn masking_sets_incoming_edges_only_for_that_robot() {
        let inst = line_instance();
        let masked = mask_unavailable(&inst, 0, &[2]).unwrap();
        for i in 0..=3 {
            if i != 2 {
                assert_eq!(masked.cost(0, i, 2), inst.big_m);
                assert_eq!(masked.cost(1, i, 2), inst.cost(1, i, 2));
                assert_eq!(masked.cost(0, 2, i), inst.cost(0, 2, i));
            }
        }
        assert_eq!(masked.cost(0, 2, 2), 0.0);
        assert!(validate_instance(&masked).is_empty());
        assert_eq!(mask_unavailable(&masked, 0, &[2]).unwrap(), masked);
    }

    #[test]
    fn masking_unknown_task_fails() {
        let inst = line_instance();
        assert!(matches!(
            mask_unavailable(&inst, 0, &[7]),
            Err(ProblemError::UnknownTask { task: 7, .. })
        ));
    }

    #[test]
    fn three_four_five_triangle() {
        let tasks = vec![
            TaskSpec { id: 0, position: vec![0.0, 0.0, 0.0], label: String::new() },
            TaskSpec { id: 1, position: vec![3.0, 4.0, 0.0], label: String::new() },
        ];
        let (t, c) = derive_geometric_setup(&tasks, &[vec![0.0, 0.0, 0.0]], &[1.0], 1.0).unwrap();
        assert_eq!(t.get(0, 0, 1), 5.0);
        assert_eq!(c.get(0, 0, 1), 5.0);
        assert_eq!(t.get(0, 0, 2), 0.0);
        assert_eq!(c.get(0, 2, 0), 0.0);
    }

    #[test]
    fn zero_speed_is_rejected() {
        let tasks = vec![TaskSpec { id: 0, position: vec![0.0, 0.0], label: String::new() }];
        assert!(matches!(
            derive_geometric_setup(&tasks, &[vec![0.0, 0.0]], &[0.0], 1.0),
            Err(ProblemError::Parameter(_))
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut inst = line_instance();
        inst.duration[1][0] = 0.1 + 0.2;
        inst.precedence = vec![(0, 2)];
        inst.max_route_duration = Some(vec![1.0 / 3.0, 0.0]);
        let back = ProblemInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let text = line_instance().to_json().unwrap().replace(INSTANCE_FORMAT, "other");
        assert!(matches!(ProblemInstance::from_json(&text), Err(ProblemError::Format(_))));
    }
}
