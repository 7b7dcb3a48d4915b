//! Mixed-integer model export in LP text format, and a constraint checker
//! that evaluates the same families directly on a genotype and its schedule.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::problem::{ProblemError, ProblemInstance};
use crate::schedule::{route_duration, route_load, Genotype, Schedule, LIMIT_TOLERANCE};

/// Largest task count for which the subtour family is enumerated.
pub const MAX_LP_TASKS: usize = 12;

const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintClass {
    Degree,
    Depot,
    Schedule,
    Precedence,
    Capacity,
    Subtour,
    Coverage,
    RouteDuration,
}

impl ConstraintClass {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintClass::Degree => "degree",
            ConstraintClass::Depot => "depot",
            ConstraintClass::Schedule => "schedule",
            ConstraintClass::Precedence => "precedence",
            ConstraintClass::Capacity => "capacity",
            ConstraintClass::Subtour => "subtour",
            ConstraintClass::Coverage => "coverage",
            ConstraintClass::RouteDuration => "route_duration",
        }
    }
}

impl fmt::Display for ConstraintClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub class: ConstraintClass,
    pub indices: Vec<usize>,
    pub magnitude: f64,
}

fn timing(s: &Schedule) -> BTreeMap<usize, (f64, f64)> {
    let mut out = BTreeMap::new();
    for e in s.entries.iter().flatten() {
        out.entry(e.task).or_insert((e.start, e.finish));
    }
    out
}

/// Evaluates every model constraint family on `g` with the timing of `s`.
pub fn check_constraints(inst: &ProblemInstance, g: &Genotype, s: &Schedule) -> Vec<ConstraintViolation> {
    let n = inst.n_tasks();
    let origin = inst.origin();
    let mut out = Vec::new();
    let mut v = |class, indices: Vec<usize>, magnitude: f64| {
        out.push(ConstraintViolation { class, indices, magnitude });
    };

    let mut count = vec![0usize; n];
    for &t in g.routes.iter().flatten() {
        if t < n {
            count[t] += 1;
        }
    }
    for (t, &c) in count.iter().enumerate() {
        if c > 1 {
            v(ConstraintClass::Degree, vec![t], (c - 1) as f64);
        } else if c == 0 {
            v(ConstraintClass::Coverage, vec![t], 1.0);
        }
    }
    if g.routes.len() > inst.n_robots() {
        v(ConstraintClass::Depot, vec![g.routes.len()], (g.routes.len() - inst.n_robots()) as f64);
    }

    for (r, route) in g.routes.iter().enumerate().take(inst.n_robots()) {
        let mut seen = std::collections::BTreeSet::new();
        for &t in route {
            if !seen.insert(t) {
                v(ConstraintClass::Subtour, vec![r, t], 1.0);
            }
        }
        let load = route_load(inst, r, route);
        if load > inst.capacity(r) + LIMIT_TOLERANCE * inst.capacity(r).abs().max(1.0) {
            v(ConstraintClass::Capacity, vec![r], load - inst.capacity(r));
        }
        if let Some(limit) = inst.route_limit(r) {
            let d = route_duration(inst, r, route);
            if d > limit + LIMIT_TOLERANCE * limit.max(1.0) {
                v(ConstraintClass::RouteDuration, vec![r], d - limit);
            }
        }
        let Some(entries) = s.entries.get(r) else { continue };
        if entries.len() != route.len() {
            continue;
        }
        let mut prev = origin;
        let mut ready = 0.0;
        for (e, &t) in entries.iter().zip(route) {
            let earliest = ready + inst.time(r, prev, t);
            if e.start < earliest - TIME_TOLERANCE * earliest.abs().max(1.0) {
                v(ConstraintClass::Schedule, vec![prev, t, r], earliest - e.start);
            }
            ready = e.finish;
            prev = t;
        }
    }

    let times = timing(s);
    for &(i, j) in &inst.precedence {
        if let (Some(&(_, fi)), Some(&(sj, _))) = (times.get(&i), times.get(&j)) {
            if sj < fi - TIME_TOLERANCE * fi.abs().max(1.0) {
                v(ConstraintClass::Precedence, vec![i, j], fi - sj);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpRow {
    pub name: String,
    pub terms: Vec<(f64, String)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Row families, identified by the row-name prefix before the first `_`.
pub const ROW_FAMILIES: &[(&str, ConstraintClass)] = &[
    ("deg", ConstraintClass::Degree),
    ("cov", ConstraintClass::Coverage),
    ("depot", ConstraintClass::Depot),
    ("ret", ConstraintClass::Depot),
    ("sched", ConstraintClass::Schedule),
    ("prec", ConstraintClass::Precedence),
    ("cap", ConstraintClass::Capacity),
    ("sub", ConstraintClass::Subtour),
    ("dur", ConstraintClass::RouteDuration),
];

/// The family a row belongs to; `None` for the makespan rows.
pub fn row_family(name: &str) -> Option<ConstraintClass> {
    let prefix = name.split('_').next()?;
    ROW_FAMILIES.iter().find(|(p, _)| *p == prefix).map(|(_, c)| *c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpModel {
    pub header: Vec<String>,
    pub objective: Vec<(f64, String)>,
    pub rows: Vec<LpRow>,
    pub binaries: Vec<String>,
    pub continuous: Vec<String>,
    pub big_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpOptions {
    /// Normalizing makespan for the bi-objective scalarization.
    pub makespan_ref: f64,
    /// Normalizing cost for the bi-objective scalarization.
    pub cost_ref: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            makespan_ref: 1.0,
            cost_ref: 1.0,
        }
    }
}

/// Node name in variable identifiers: tasks keep their index, robot start
/// locations are numbered after the tasks.
fn node(inst: &ProblemInstance, r: usize, i: usize) -> usize {
    if i == inst.origin() {
        inst.n_tasks() + inst.robots[r].start_node
    } else {
        i
    }
}

pub fn x_var(inst: &ProblemInstance, r: usize, i: usize, j: usize) -> String {
    format!("x_{}_{}_{}", node(inst, r, i), node(inst, r, j), r)
}

pub fn w_var(i: usize, r: usize) -> String {
    format!("w_{i}_{r}")
}

/// Time constant large enough to relax any schedule row: every task's
/// longest duration and longest incoming setup, summed, plus the longest
/// setup overall.
pub fn time_big_m(inst: &ProblemInstance) -> f64 {
    let n = inst.n_tasks();
    let m = inst.n_robots();
    let origin = inst.origin();
    let mut max_setup = 0.0f64;
    let mut total = 0.0;
    for j in 0..n {
        let mut worst_in = 0.0f64;
        for r in 0..m {
            for i in (0..n).chain([origin]).filter(|&i| i != j) {
                worst_in = worst_in.max(inst.time(r, i, j));
            }
        }
        let worst_sigma = inst.duration[j].iter().copied().fold(0.0, f64::max);
        total += worst_sigma + worst_in;
        max_setup = max_setup.max(worst_in);
    }
    (total + max_setup).max(1.0)
}

fn incoming(inst: &ProblemInstance, r: usize, j: usize, coef: f64) -> Vec<(f64, String)> {
    let n = inst.n_tasks();
    (0..n)
        .chain([inst.origin()])
        .filter(|&i| i != j)
        .map(|i| (coef, x_var(inst, r, i, j)))
        .collect()
}

/// Builds the model. Fails for more than [`MAX_LP_TASKS`] tasks, where the
/// enumerated subtour family would explode.
pub fn build_lp(inst: &ProblemInstance, opts: &LpOptions) -> Result<LpModel, ProblemError> {
    let n = inst.n_tasks();
    let m = inst.n_robots();
    if n > MAX_LP_TASKS {
        return Err(ProblemError::Parameter(format!(
            "{n} tasks exceed the LP export limit of {MAX_LP_TASKS}: the subtour family has 2^n - n - 1 rows"
        )));
    }
    let origin = inst.origin();
    let big_m = time_big_m(inst);
    let tasks_and_start = |j: usize| (0..n).chain([origin]).filter(move |&i| i != j);
    let mut rows = Vec::new();
    let mut binaries = Vec::new();
    let mut continuous = Vec::new();

    for r in 0..m {
        for j in 0..n {
            for i in tasks_and_start(j) {
                binaries.push(x_var(inst, r, i, j));
            }
        }
        if inst.closed_routes {
            for i in 0..n {
                binaries.push(x_var(inst, r, i, origin));
            }
        }
        for i in 0..n {
            continuous.push(w_var(i, r));
        }
    }
    continuous.push("T".to_string());

    let mut objective = Vec::new();
    let (time_w, cost_w) = match inst.objective_mode {
        crate::problem::ObjectiveMode::ParetoBi => (0.5 / opts.makespan_ref, 0.5 / opts.cost_ref),
        crate::problem::ObjectiveMode::SingleCost => (0.0, 1.0),
    };
    if time_w != 0.0 {
        objective.push((time_w, "T".to_string()));
    }
    for r in 0..m {
        for j in 0..n {
            for i in tasks_and_start(j) {
                objective.push((cost_w * (inst.cost(r, i, j) + inst.demand[j][r]), x_var(inst, r, i, j)));
            }
        }
        if inst.closed_routes {
            for i in 0..n {
                objective.push((cost_w * inst.cost(r, i, origin), x_var(inst, r, i, origin)));
            }
        }
    }

    for j in 0..n {
        let terms: Vec<(f64, String)> = (0..m).flat_map(|r| incoming(inst, r, j, 1.0)).collect();
        rows.push(LpRow { name: format!("deg_{j}"), terms: terms.clone(), sense: Sense::Le, rhs: 1.0 });
        rows.push(LpRow { name: format!("cov_{j}"), terms, sense: Sense::Ge, rhs: 1.0 });
    }
    for r in 0..m {
        let out_of_start: Vec<(f64, String)> = (0..n).map(|j| (1.0, x_var(inst, r, origin, j))).collect();
        rows.push(LpRow { name: format!("depot_{r}"), terms: out_of_start.clone(), sense: Sense::Le, rhs: 1.0 });
        if inst.closed_routes {
            let mut terms = out_of_start;
            terms.extend((0..n).map(|i| (-1.0, x_var(inst, r, i, origin))));
            rows.push(LpRow { name: format!("ret_{r}"), terms, sense: Sense::Eq, rhs: 0.0 });
        }
    }
    for r in 0..m {
        for j in 0..n {
            for i in tasks_and_start(j) {
                let x = x_var(inst, r, i, j);
                let mut terms = Vec::new();
                let mut rhs = big_m - inst.time(r, i, j);
                if i != origin {
                    terms.push((1.0, w_var(i, r)));
                    rhs -= inst.duration[i][r];
                }
                terms.push((-1.0, w_var(j, r)));
                terms.push((big_m, x));
                rows.push(LpRow {
                    name: format!("sched_{}_{}_{}", node(inst, r, i), j, r),
                    terms,
                    sense: Sense::Le,
                    rhs,
                });
            }
        }
    }
    for &(i, j) in &inst.precedence {
        for ri in 0..m {
            for rj in 0..m {
                let mut terms = vec![(1.0, w_var(i, ri)), (-1.0, w_var(j, rj))];
                terms.extend(incoming(inst, ri, i, big_m));
                terms.extend(incoming(inst, rj, j, big_m));
                rows.push(LpRow {
                    name: format!("prec_{i}_{j}_{ri}_{rj}"),
                    terms,
                    sense: Sense::Le,
                    rhs: 2.0 * big_m - inst.duration[i][ri],
                });
            }
        }
    }
    for r in 0..m {
        let terms: Vec<(f64, String)> = (0..n)
            .flat_map(|j| {
                let q = inst.demand[j][r];
                incoming(inst, r, j, q)
            })
            .collect();
        rows.push(LpRow { name: format!("cap_{r}"), terms, sense: Sense::Le, rhs: inst.capacity(r) });
    }
    for mask in 1u32..(1u32 << n) {
        let size = mask.count_ones() as usize;
        if size < 2 {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut terms = Vec::new();
        for r in 0..m {
            for &i in &members {
                for &j in &members {
                    if i != j {
                        terms.push((1.0, x_var(inst, r, i, j)));
                    }
                }
            }
        }
        rows.push(LpRow { name: format!("sub_{mask}"), terms, sense: Sense::Le, rhs: (size - 1) as f64 });
    }
    for r in 0..m {
        if let Some(limit) = inst.route_limit(r) {
            let mut terms = Vec::new();
            for j in 0..n {
                for i in tasks_and_start(j) {
                    terms.push((inst.time(r, i, j) + inst.duration[j][r], x_var(inst, r, i, j)));
                }
            }
            if inst.closed_routes {
                for i in 0..n {
                    terms.push((inst.time(r, i, origin), x_var(inst, r, i, origin)));
                }
            }
            rows.push(LpRow { name: format!("dur_{r}"), terms, sense: Sense::Le, rhs: limit });
        }
    }
    for r in 0..m {
        for i in 0..n {
            let mut terms = vec![(1.0, "T".to_string()), (-1.0, w_var(i, r))];
            terms.extend(incoming(inst, r, i, -big_m));
            rows.push(LpRow {
                name: format!("span_{i}_{r}"),
                terms,
                sense: Sense::Ge,
                rhs: inst.duration[i][r] - big_m,
            });
        }
    }

    let header = vec![
        format!("instance {}", inst.name),
        format!("{n} tasks, {m} robots, {} precedence pairs", inst.precedence.len()),
        "x_i_j_r = 1 when robot r performs task j right after node i;".to_string(),
        format!("nodes {n} and above are robot start locations (node {n} + start index)"),
        "w_i_r = start time of task i on robot r, T = makespan measured from time 0".to_string(),
        format!("M_time = {big_m} (sum over tasks of longest duration and longest incoming setup, plus longest setup)"),
        match inst.objective_mode {
            crate::problem::ObjectiveMode::ParetoBi => format!(
                "objective 0.5 T / {} + 0.5 cost / {}",
                opts.makespan_ref, opts.cost_ref
            ),
            crate::problem::ObjectiveMode::SingleCost => "objective: total cost".to_string(),
        },
    ];
    Ok(LpModel { header, objective, rows, binaries, continuous, big_m })
}

fn fmt_num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:?}")
    }
}

fn write_terms(out: &mut String, terms: &[(f64, String)]) {
    let mut line_len = 0;
    for (k, (c, v)) in terms.iter().enumerate() {
        let sign = if *c < 0.0 { "-" } else { "+" };
        let piece = if k == 0 && *c >= 0.0 {
            format!(" {} {v}", fmt_num(c.abs()))
        } else {
            format!(" {sign} {} {v}", fmt_num(c.abs()))
        };
        if line_len > 200 {
            out.push_str("\n   ");
            line_len = 0;
        }
        line_len += piece.len();
        out.push_str(&piece);
    }
    if terms.is_empty() {
        out.push_str(" 0 T");
    }
}

impl LpModel {
    pub fn to_lp_string(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            let _ = writeln!(s, "\\ {h}");
        }
        s.push_str("Minimize\n obj:");
        write_terms(&mut s, &self.objective);
        s.push_str("\nSubject To\n");
        for row in &self.rows {
            let _ = write!(s, " {}:", row.name);
            write_terms(&mut s, &row.terms);
            let _ = writeln!(s, " {} {}", row.sense.symbol(), fmt_num(row.rhs));
        }
        s.push_str("Bounds\n");
        for v in &self.continuous {
            let _ = writeln!(s, " {v} >= 0");
        }
        s.push_str("Binaries\n");
        for chunk in self.binaries.chunks(8) {
            let _ = writeln!(s, " {}", chunk.join(" "));
        }
        s.push_str("End\n");
        s
    }

    pub fn rows_of(&self, class: ConstraintClass) -> impl Iterator<Item = &LpRow> {
        self.rows.iter().filter(move |r| row_family(&r.name) == Some(class))
    }
}

pub fn export_lp(inst: &ProblemInstance, opts: &LpOptions, path: impl AsRef<Path>) -> Result<LpModel, ProblemError> {
    let model = build_lp(inst, opts)?;
    std::fs::write(path, model.to_lp_string())?;
    Ok(model)
}

/// Variable values induced by a genotype and its schedule: edge indicators,
/// start times of assigned (task, robot) pairs (0 elsewhere) and the makespan.
pub fn lp_assignment(inst: &ProblemInstance, g: &Genotype, s: &Schedule) -> BTreeMap<String, f64> {
    let mut vals = BTreeMap::new();
    let origin = inst.origin();
    let mut t_max = 0.0f64;
    for (r, route) in g.routes.iter().enumerate() {
        let mut prev = origin;
        for (k, &t) in route.iter().enumerate() {
            *vals.entry(x_var(inst, r, prev, t)).or_insert(0.0) += 1.0;
            if let Some(e) = s.entries.get(r).and_then(|e| e.get(k)) {
                vals.insert(w_var(t, r), e.start);
                t_max = t_max.max(e.finish);
            }
            prev = t;
        }
        if inst.closed_routes && !route.is_empty() {
            vals.insert(x_var(inst, r, prev, origin), 1.0);
        }
    }
    vals.insert("T".to_string(), t_max);
    vals
}

/// Left-hand side minus right-hand side, signed so that positive means
/// violated. Missing variables count as zero.
pub fn row_excess(row: &LpRow, vals: &BTreeMap<String, f64>) -> f64 {
    let lhs: f64 = row.terms.iter().map(|(c, v)| c * vals.get(v).copied().unwrap_or(0.0)).sum();
    match row.sense {
        Sense::Le => lhs - row.rhs,
        Sense::Ge => row.rhs - lhs,
        Sense::Eq => (lhs - row.rhs).abs(),
    }
}
