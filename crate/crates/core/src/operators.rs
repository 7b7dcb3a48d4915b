//! Generation, diversification and intensification operators over genotypes.
//!
//! Every operator is a total function: moves that would break capacity,
//! route-duration, masking or precedence feasibility are rejected and the
//! input is returned unchanged.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fitness::{relative_score, Objectives};
use crate::problem::{PrecedenceIndex, ProblemInstance};
use crate::schedule::{decode_with, route_duration, route_load, within_limit, Genotype, Solution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorId {
    GreedyGeneration,
    BcrcBestCoalition,
    BcrcPopulation,
    IntraReversal,
    IntraSwap,
    InterSwap,
    SingleReroute,
    TwoSwap,
    OneMove,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorClass {
    Generation,
    Diversifier,
    Intensifier,
}

impl OperatorId {
    /// Operators the agent chooses between; the column order of the weight
    /// matrix.
    pub const SEARCH: [OperatorId; 8] = [
        OperatorId::BcrcBestCoalition,
        OperatorId::BcrcPopulation,
        OperatorId::IntraReversal,
        OperatorId::IntraSwap,
        OperatorId::InterSwap,
        OperatorId::SingleReroute,
        OperatorId::TwoSwap,
        OperatorId::OneMove,
    ];

    pub fn class(self) -> OperatorClass {
        match self {
            OperatorId::GreedyGeneration => OperatorClass::Generation,
            OperatorId::TwoSwap | OperatorId::OneMove => OperatorClass::Intensifier,
            _ => OperatorClass::Diversifier,
        }
    }

    /// Weight-matrix column, `None` for the generation operator.
    pub fn column(self) -> Option<usize> {
        Self::SEARCH.iter().position(|&o| o == self)
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorId::GreedyGeneration => "greedy_generation",
            OperatorId::BcrcBestCoalition => "bcrc_best_coalition",
            OperatorId::BcrcPopulation => "bcrc_population",
            OperatorId::IntraReversal => "intra_depot_reversal",
            OperatorId::IntraSwap => "intra_depot_swap",
            OperatorId::InterSwap => "inter_depot_swap",
            OperatorId::SingleReroute => "single_action_rerouting",
            OperatorId::TwoSwap => "two_swap",
            OperatorId::OneMove => "one_move",
        }
    }
}

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    /// Minimum nearest/second-nearest start-location distance ratio for a task
    /// to take part in inter-depot moves.
    pub proximity_threshold: f64,
    /// Upper bound on candidate evaluations that need a full schedule decode
    /// in one intensifier call.
    pub max_scan: usize,
    /// Per task, how many of the cheapest target positions a bi-objective
    /// relocation scan decodes.
    pub granularity: usize,
}

impl Default for OperatorParams {
    fn default() -> Self {
        Self {
            proximity_threshold: 0.75,
            max_scan: 2000,
            granularity: 16,
        }
    }
}

/// Where a task would go and what it would cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertionQuote {
    pub route: usize,
    pub position: usize,
    pub delta_cost: f64,
    pub feasible: bool,
}

/// Per-route insertion bounds imposed by precedence: the task may be inserted
/// at any index in `lo[r]..=hi[r]`.
#[derive(Clone, Debug)]
struct Windows {
    lo: Vec<usize>,
    hi: Vec<usize>,
}

#[derive(Clone, Debug)]
struct RouteStats {
    load: Vec<f64>,
    duration: Vec<f64>,
}

/// Instance plus the derived lookups the operators share.
#[derive(Clone, Debug)]
pub struct SearchSpace {
    inst: Arc<ProblemInstance>,
    prec: PrecedenceIndex,
    has_prec: bool,
    has_limits: bool,
    depot_of: Vec<usize>,
    depots: Vec<Vec<usize>>,
    border: Vec<bool>,
    params: OperatorParams,
}

impl SearchSpace {
    pub fn new(inst: Arc<ProblemInstance>, params: OperatorParams) -> Self {
        let prec = inst.precedence_index();
        let has_prec = !prec.is_empty();
        let has_limits = (0..inst.n_robots()).any(|r| inst.route_limit(r).is_some());
        let depot_of = inst.robots.iter().map(|r| r.start_node).collect();
        let depots: Vec<Vec<usize>> = inst.depots().into_iter().filter(|g| !g.is_empty()).collect();
        let border = border_tasks(&inst, &depots, params.proximity_threshold);
        Self {
            inst,
            prec,
            has_prec,
            has_limits,
            depot_of,
            depots,
            border,
            params,
        }
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.inst
    }

    pub fn instance_arc(&self) -> &Arc<ProblemInstance> {
        &self.inst
    }

    pub fn precedence(&self) -> &PrecedenceIndex {
        &self.prec
    }

    pub fn params(&self) -> &OperatorParams {
        &self.params
    }

    /// Whether a task is eligible for inter-depot moves.
    pub fn is_border(&self, task: usize) -> bool {
        self.border[task]
    }

    pub fn evaluate(&self, g: Genotype) -> Option<Solution> {
        Solution::evaluate(g, &self.inst, &self.prec).ok()
    }

    pub fn objectives(&self, g: &Genotype) -> Option<Objectives> {
        let s = decode_with(g, &self.inst, &self.prec).ok()?;
        let sol = Solution {
            genotype: Genotype::default(),
            makespan: s.makespan,
            cost: s.total_cost,
            complete: s.complete,
        };
        Some(sol.objectives(self.inst.objective_mode, self.inst.big_m))
    }

    fn stats(&self, g: &Genotype) -> RouteStats {
        let inst = &*self.inst;
        RouteStats {
            load: g.routes.iter().enumerate().map(|(r, route)| route_load(inst, r, route)).collect(),
            duration: if self.has_limits {
                g.routes
                    .iter()
                    .enumerate()
                    .map(|(r, route)| route_duration(inst, r, route))
                    .collect()
            } else {
                Vec::new()
            },
        }
    }

    fn full_windows(g: &Genotype) -> Windows {
        Windows {
            lo: vec![0; g.routes.len()],
            hi: g.routes.iter().map(Vec::len).collect(),
        }
    }

    /// Insertion bounds for `task`, which must not be in `g`. `None` when every
    /// position would close a cycle through the precedence relation.
    fn windows(&self, g: &Genotype, task: usize) -> Option<Windows> {
        if !self.has_prec || (self.prec.preds[task].is_empty() && self.prec.succs[task].is_empty()) {
            return Some(Self::full_windows(g));
        }
        let n = self.inst.n_tasks();
        let mut slot: Vec<Option<(usize, usize)>> = vec![None; n];
        for (r, route) in g.routes.iter().enumerate() {
            for (k, &t) in route.iter().enumerate() {
                slot[t] = Some((r, k));
            }
        }
        let ancestors = self.reach(g, &slot, &self.prec.preds[task], false);
        let descendants = self.reach(g, &slot, &self.prec.succs[task], true);
        if ancestors.iter().zip(&descendants).any(|(a, d)| *a && *d) {
            return None;
        }
        let mut w = Self::full_windows(g);
        for (r, route) in g.routes.iter().enumerate() {
            if let Some(k) = route.iter().rposition(|&t| ancestors[t]) {
                w.lo[r] = k + 1;
            }
            if let Some(k) = route.iter().position(|&t| descendants[t]) {
                w.hi[r] = k;
            }
        }
        Some(w)
    }

    /// Nodes reachable from `seeds` (assigned ones only) along route and
    /// precedence edges, forwards or backwards.
    fn reach(&self, g: &Genotype, slot: &[Option<(usize, usize)>], seeds: &[usize], forward: bool) -> Vec<bool> {
        let n = slot.len();
        let mut mark = vec![false; n];
        let mut queue = VecDeque::new();
        for &s in seeds {
            if slot[s].is_some() && !mark[s] {
                mark[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let (r, k) = slot[v].unwrap();
            let along_route = if forward {
                g.routes[r].get(k + 1).copied()
            } else if k > 0 {
                Some(g.routes[r][k - 1])
            } else {
                None
            };
            let linked = if forward { &self.prec.succs[v] } else { &self.prec.preds[v] };
            for w in along_route.into_iter().chain(linked.iter().copied()) {
                if slot[w].is_some() && !mark[w] {
                    mark[w] = true;
                    queue.push_back(w);
                }
            }
        }
        mark
    }

    /// Change in total cost and route duration from inserting `task` at
    /// `pos` of robot `r`'s route.
    #[inline]
    fn insertion_delta(&self, route: &[usize], r: usize, pos: usize, task: usize) -> (f64, f64) {
        let inst = &*self.inst;
        let origin = inst.origin();
        let prev = if pos == 0 { origin } else { route[pos - 1] };
        let next = match route.get(pos) {
            Some(&t) => Some(t),
            None if inst.closed_routes => Some(origin),
            None => None,
        };
        let mut dc = inst.cost(r, prev, task) + inst.demand[task][r];
        let mut dt = inst.time(r, prev, task) + inst.duration[task][r];
        if let Some(next) = next {
            dc += inst.cost(r, task, next) - inst.cost(r, prev, next);
            dt += inst.time(r, task, next) - inst.time(r, prev, next);
        }
        (dc, dt)
    }

    /// Cost delta of a capacity-, duration- and mask-feasible insertion.
    #[inline]
    fn quote(&self, g: &Genotype, stats: &RouteStats, r: usize, pos: usize, task: usize) -> Option<f64> {
        let inst = &*self.inst;
        let route = &g.routes[r];
        let prev = if pos == 0 { inst.origin() } else { route[pos - 1] };
        if inst.is_masked(r, prev, task) {
            return None;
        }
        if !within_limit(stats.load[r] + inst.demand[task][r], inst.capacity(r)) {
            return None;
        }
        let (dc, dt) = self.insertion_delta(route, r, pos, task);
        if let Some(limit) = inst.route_limit(r) {
            if !within_limit(stats.duration[r] + dt, limit) {
                return None;
            }
        }
        Some(dc)
    }

    /// Cheapest feasible insertion of `task` (absent from `g`) into one of
    /// `robots`. Ties on cost go to the smaller resulting makespan, then to
    /// the lowest `(route, position)`.
    pub fn best_insertion(&self, g: &Genotype, task: usize, robots: &[usize]) -> Option<InsertionQuote> {
        let windows = self.windows(g, task)?;
        let stats = self.stats(g);
        let mut best = f64::INFINITY;
        let mut ties: Vec<(usize, usize)> = Vec::new();
        for &r in robots {
            for pos in windows.lo[r]..=windows.hi[r].max(windows.lo[r]) {
                if pos > windows.hi[r] {
                    break;
                }
                let Some(dc) = self.quote(g, &stats, r, pos, task) else {
                    continue;
                };
                let tol = if best.is_finite() { 1e-9 * best.abs().max(1.0) } else { 0.0 };
                if dc < best - tol {
                    best = dc;
                    ties.clear();
                    ties.push((r, pos));
                } else if (dc - best).abs() <= tol {
                    ties.push((r, pos));
                }
            }
        }
        let &(mut route, mut position) = ties.first()?;
        if ties.len() > 1 {
            let mut best_span = f64::INFINITY;
            let mut scratch = g.clone();
            ties.sort_unstable();
            for &(r, pos) in &ties {
                scratch.routes[r].insert(pos, task);
                if let Ok(s) = decode_with(&scratch, &self.inst, &self.prec) {
                    if s.makespan < best_span {
                        best_span = s.makespan;
                        route = r;
                        position = pos;
                    }
                }
                scratch.routes[r].remove(pos);
            }
        }
        Some(InsertionQuote {
            route,
            position,
            delta_cost: best,
            feasible: true,
        })
    }

    fn all_robots(&self) -> Vec<usize> {
        (0..self.inst.n_robots()).collect()
    }

    /// Inserts `task` at its best feasible position; false if none exists.
    fn insert_best(&self, g: &mut Genotype, task: usize, robots: &[usize]) -> bool {
        match self.best_insertion(g, task, robots) {
            Some(q) => {
                g.routes[q.route].insert(q.position, task);
                true
            }
            None => false,
        }
    }

    /// Feasibility of a whole genotype as the operators see it.
    fn is_feasible(&self, g: &Genotype) -> bool {
        let inst = &*self.inst;
        let origin = inst.origin();
        for (r, route) in g.routes.iter().enumerate() {
            if !within_limit(route_load(inst, r, route), inst.capacity(r)) {
                return false;
            }
            if let Some(limit) = inst.route_limit(r) {
                if !within_limit(route_duration(inst, r, route), limit) {
                    return false;
                }
            }
            let mut prev = origin;
            for &t in route {
                if inst.is_masked(r, prev, t) {
                    return false;
                }
                prev = t;
            }
        }
        !self.has_prec || decode_with(g, inst, &self.prec).is_ok()
    }

    /// Builds a genotype by inserting tasks, in random order, at their
    /// cheapest feasible position. Tasks without one stay unassigned.
    pub fn generate_greedy<R: Rng + ?Sized>(&self, rng: &mut R) -> Genotype {
        let mut g = Genotype::empty(self.inst.n_robots());
        let mut order: Vec<usize> = (0..self.inst.n_tasks()).collect();
        order.shuffle(rng);
        let robots = self.all_robots();
        for task in order {
            self.insert_best(&mut g, task, &robots);
        }
        g
    }

    /// Best-cost route crossover: removes the tasks of one random route of
    /// `parent2` from a copy of `parent1` and reinserts them at their best
    /// feasible positions.
    pub fn bcrc<R: Rng + ?Sized>(&self, parent1: &Genotype, parent2: &Genotype, rng: &mut R) -> Genotype {
        if parent2.routes.is_empty() {
            return parent1.clone();
        }
        let k = rng.gen_range(0..parent2.routes.len());
        let mut removed = parent2.routes[k].clone();
        if removed.is_empty() {
            return parent1.clone();
        }
        let mut child = parent1.clone();
        for &t in &removed {
            child.remove_task(t);
        }
        removed.shuffle(rng);
        let robots = self.all_robots();
        for t in removed {
            self.insert_best(&mut child, t, &robots);
        }
        child
    }

    /// Reverses a random segment of the concatenated routes of one start
    /// location.
    pub fn intra_depot_reversal<R: Rng + ?Sized>(&self, g: &Genotype, rng: &mut R) -> Genotype {
        let eligible: Vec<usize> = (0..self.depots.len())
            .filter(|&d| self.depots[d].iter().map(|&r| g.routes[r].len()).sum::<usize>() >= 2)
            .collect();
        let Some(&d) = eligible.choose(rng) else {
            return g.clone();
        };
        let len: usize = self.depots[d].iter().map(|&r| g.routes[r].len()).sum();
        let a = rng.gen_range(0..len);
        let b = rng.gen_range(0..len);
        self.reverse_segment(g, d, a.min(b), a.max(b))
            .unwrap_or_else(|| g.clone())
    }

    /// Reverses positions `i..=j` of the concatenated routes of depot `d`
    /// (index among depots hosting robots). `None` if the result is
    /// infeasible.
    pub fn reverse_segment(&self, g: &Genotype, d: usize, i: usize, j: usize) -> Option<Genotype> {
        let robots = &self.depots[d];
        let mut seq: Vec<usize> = robots.iter().flat_map(|&r| g.routes[r].iter().copied()).collect();
        if j >= seq.len() || i > j {
            return None;
        }
        if i == j {
            return Some(g.clone());
        }
        seq[i..=j].reverse();
        let mut child = g.clone();
        let mut it = seq.into_iter();
        for &r in robots {
            let len = g.routes[r].len();
            child.routes[r] = it.by_ref().take(len).collect();
        }
        self.is_feasible(&child).then_some(child)
    }

    /// Index of a robot's start location among depots hosting robots.
    fn depot_index(&self, robot: usize) -> usize {
        let start = self.depot_of[robot];
        self.depots
            .iter()
            .position(|group| self.depot_of[group[0]] == start)
            .unwrap_or(0)
    }

    /// Moves a random task to a random feasible position of another route
    /// sharing its start location.
    pub fn intra_depot_swap<R: Rng + ?Sized>(&self, g: &Genotype, rng: &mut R) -> Genotype {
        let eligible: Vec<usize> = (0..self.depots.len())
            .filter(|&d| self.depots[d].len() >= 2 && self.depots[d].iter().any(|&r| !g.routes[r].is_empty()))
            .collect();
        let Some(&d) = eligible.choose(rng) else {
            return g.clone();
        };
        let robots = &self.depots[d];
        let sources: Vec<usize> = robots.iter().copied().filter(|&r| !g.routes[r].is_empty()).collect();
        let from = *sources.choose(rng).unwrap();
        let targets: Vec<usize> = robots.iter().copied().filter(|&r| r != from).collect();
        let to = *targets.choose(rng).unwrap();
        let task = *g.routes[from].choose(rng).unwrap();

        let mut child = g.clone();
        child.remove_task(task);
        let Some(w) = self.windows(&child, task) else {
            return g.clone();
        };
        let stats = self.stats(&child);
        let positions: Vec<usize> = (w.lo[to]..=w.hi[to])
            .filter(|&p| self.quote(&child, &stats, to, p, task).is_some())
            .collect();
        match positions.choose(rng) {
            Some(&p) => {
                child.routes[to].insert(p, task);
                child
            }
            None => g.clone(),
        }
    }

    /// Border tasks that are assigned, with their depot index.
    fn assigned_border(&self, g: &Genotype) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, route) in g.routes.iter().enumerate() {
            let d = self.depot_index(r);
            out.extend(route.iter().filter(|&&t| self.border[t]).map(|&t| (t, d)));
        }
        out
    }

    /// Exchanges `u` and `v` between their routes, each at its best feasible
    /// position in the other route.
    pub fn swap_pair(&self, g: &Genotype, u: usize, v: usize) -> Option<Genotype> {
        let (ru, _) = g.locate(u)?;
        let (rv, _) = g.locate(v)?;
        let mut child = g.clone();
        child.remove_task(u);
        child.remove_task(v);
        if !self.insert_best(&mut child, u, &[rv]) || !self.insert_best(&mut child, v, &[ru]) {
            return None;
        }
        Some(child)
    }

    /// Swaps two border tasks served from different start locations.
    pub fn inter_depot_swap<R: Rng + ?Sized>(&self, g: &Genotype, rng: &mut R) -> Genotype {
        if self.depots.len() < 2 {
            return g.clone();
        }
        let candidates = self.assigned_border(g);
        let Some(&(u, du)) = candidates.choose(rng) else {
            return g.clone();
        };
        let others: Vec<usize> = candidates.iter().filter(|c| c.1 != du).map(|c| c.0).collect();
        let Some(&v) = others.choose(rng) else {
            return g.clone();
        };
        self.swap_pair(g, u, v).unwrap_or_else(|| g.clone())
    }

    /// Removes one random task and reinserts it at the best feasible position
    /// anywhere in the genotype.
    pub fn single_action_rerouting<R: Rng + ?Sized>(&self, g: &Genotype, rng: &mut R) -> Genotype {
        let assigned: Vec<usize> = g.routes.iter().flatten().copied().collect();
        let Some(&task) = assigned.choose(rng) else {
            return g.clone();
        };
        let mut child = g.clone();
        child.remove_task(task);
        if self.insert_best(&mut child, task, &self.all_robots()) {
            child
        } else {
            g.clone()
        }
    }

    fn improves(&self, candidate: &Objectives, base: &Objectives) -> bool {
        match (candidate, base) {
            (Objectives::Single { cost: c }, Objectives::Single { cost: b }) => *c < b - 1e-9 * b.abs().max(1.0),
            _ => relative_score(candidate, base) < 1.0 - 1e-9,
        }
    }

    /// First-improvement scan over pairs of border tasks from different start
    /// locations; applies the first swap that improves the scalarized
    /// objective.
    pub fn two_swap<R: Rng + ?Sized>(&self, g: &Genotype, rng: &mut R) -> Genotype {
        if self.depots.len() < 2 {
            return g.clone();
        }
        let Some(base) = self.objectives(g) else {
            return g.clone();
        };
        let mut candidates = self.assigned_border(g);
        candidates.shuffle(rng);
        let mut budget = self.params.max_scan;
        for (a, &(u, du)) in candidates.iter().enumerate() {
            for &(v, dv) in &candidates[a + 1..] {
                if du == dv {
                    continue;
                }
                if budget == 0 {
                    return g.clone();
                }
                budget -= 1;
                if let Some(child) = self.swap_pair(g, u, v) {
                    if let Some(obj) = self.objectives(&child) {
                        if self.improves(&obj, &base) {
                            return child;
                        }
                    }
                }
            }
        }
        g.clone()
    }

    /// First-improvement relocation of a single task.
    pub fn one_move<R: Rng + ?Sized>(&self, g: &Genotype, rng: &mut R) -> Genotype {
        let Some(base) = self.objectives(g) else {
            return g.clone();
        };
        let mut tasks: Vec<usize> = g.routes.iter().flatten().copied().collect();
        tasks.shuffle(rng);
        let single = matches!(base, Objectives::Single { .. });
        let mut budget = self.params.max_scan;
        let mut scratch = g.clone();
        for task in tasks {
            let (r0, p0) = scratch.remove_task(task).unwrap();
            let Some(w) = self.windows(&scratch, task) else {
                scratch.routes[r0].insert(p0, task);
                continue;
            };
            let stats = self.stats(&scratch);
            let (removed_gain, _) = self.insertion_delta(&scratch.routes[r0], r0, p0, task);
            let mut moves: Vec<(f64, usize, usize)> = Vec::new();
            for r in 0..scratch.routes.len() {
                for p in w.lo[r]..=w.hi[r].max(w.lo[r]) {
                    if p > w.hi[r] || (r == r0 && p == p0) {
                        continue;
                    }
                    if let Some(dc) = self.quote(&scratch, &stats, r, p, task) {
                        moves.push((dc - removed_gain, r, p));
                    }
                }
            }
            if single {
                let tol = 1e-9 * base.cost().abs().max(1.0);
                if let Some(&(_, r, p)) = moves.iter().find(|m| m.0 < -tol) {
                    scratch.routes[r].insert(p, task);
                    return scratch;
                }
            } else {
                moves.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                for &(_, r, p) in moves.iter().take(self.params.granularity) {
                    if budget == 0 {
                        return g.clone();
                    }
                    budget -= 1;
                    scratch.routes[r].insert(p, task);
                    if let Some(obj) = self.objectives(&scratch) {
                        if self.improves(&obj, &base) {
                            return scratch;
                        }
                    }
                    scratch.routes[r].remove(p);
                }
            }
            scratch.routes[r0].insert(p0, task);
        }
        g.clone()
    }
}

/// Tasks whose nearest start location is not much closer than the second
/// nearest. Distance to a start location is the cheapest unmasked setup cost
/// from any robot starting there.
fn border_tasks(inst: &ProblemInstance, depots: &[Vec<usize>], threshold: f64) -> Vec<bool> {
    let n = inst.n_tasks();
    let origin = inst.origin();
    if depots.len() < 2 {
        return vec![false; n];
    }
    (0..n)
        .map(|t| {
            let mut dists: Vec<f64> = depots
                .iter()
                .map(|robots| {
                    robots
                        .iter()
                        .filter(|&&r| !inst.is_masked(r, origin, t))
                        .map(|&r| inst.cost(r, origin, t))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            dists.sort_by(f64::total_cmp);
            let (near, second) = (dists[0], dists[1]);
            let ratio = if second > 0.0 && second.is_finite() {
                near / second
            } else if second == 0.0 {
                1.0
            } else {
                0.0
            };
            ratio >= threshold
        })
        .collect()
}
