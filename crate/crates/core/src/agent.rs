//! A single population-based agent: operator selection driven by a
//! state × operator weight matrix, experience memory, diversification /
//! intensification cycles, individual reinforcement and mimetism.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coalition::{CoalitionMessage, Payload};
use crate::fitness::{evaluate_population, gain, is_better, roulette, Evaluation, Objectives};
use crate::operators::{OperatorClass, OperatorId, OperatorParams, SearchSpace};
use crate::problem::ProblemError;
use crate::schedule::{Genotype, Solution};

pub const N_STATES: usize = 8;
pub const N_OPERATORS: usize = OperatorId::SEARCH.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Diversify,
    Intensify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateId {
    pub phase: Phase,
    pub improved: bool,
    pub stale: bool,
}

impl StateId {
    pub fn index(self) -> usize {
        (self.phase == Phase::Intensify) as usize * 4 + self.improved as usize * 2 + self.stale as usize
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < N_STATES, "state index {i} out of range");
        Self {
            phase: if i >= 4 { Phase::Intensify } else { Phase::Diversify },
            improved: i & 2 != 0,
            stale: i & 1 != 0,
        }
    }

    pub fn all() -> impl Iterator<Item = StateId> {
        (0..N_STATES).map(Self::from_index)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            match self.phase {
                Phase::Diversify => "diversify",
                Phase::Intensify => "intensify",
            },
            if self.improved { "improved" } else { "unimproved" },
            if self.stale { "stale" } else { "fresh" },
        )
    }
}

/// Positive weights, one row per state and one column per search operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn ones() -> Self {
        Self {
            rows: N_STATES,
            cols: N_OPERATORS,
            data: vec![1.0; N_STATES * N_OPERATORS],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        let n_rows = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ProblemError::Parameter("weight matrix rows differ in length".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(ProblemError::Parameter("weights must be positive and finite".into()));
        }
        Ok(Self { rows: n_rows, cols, data })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, state: usize, op: usize) -> f64 {
        self.data[state * self.cols + op]
    }

    pub fn set(&mut self, state: usize, op: usize, value: f64) {
        self.data[state * self.cols + op] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.data[state * self.cols..(state + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: StateId,
    pub operator: OperatorId,
    pub gain: f64,
}

/// Bounded ring of experience records, oldest evicted first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceMemory {
    records: VecDeque<Experience>,
    capacity: usize,
    pushed: u64,
}

impl ExperienceMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            records: VecDeque::with_capacity(capacity.min(1024)),
            capacity: capacity.max(1),
            pushed: 0,
        }
    }

    pub fn push(&mut self, record: Experience) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        self.pushed += 1;
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total number of records ever pushed; pass to [`Self::since`] later.
    pub fn mark(&self) -> u64 {
        self.pushed
    }

    /// Records pushed after `mark` that are still held.
    pub fn since(&self, mark: u64) -> impl Iterator<Item = &Experience> {
        let newer = self.pushed.saturating_sub(mark).min(self.records.len() as u64) as usize;
        self.records.iter().skip(self.records.len() - newer)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.records.iter()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub pop_size: usize,
    pub eta: [f64; 3],
    pub rho: f64,
    pub n_cycles: usize,
    pub epsilon: f64,
    pub patience: usize,
    pub time_limit: Option<f64>,
    pub seed: u64,
    pub weight_floor: f64,
    pub max_intensify: usize,
    pub memory_capacity: usize,
    pub operators: OperatorParams,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            pop_size: 20,
            eta: [0.5, 0.25, -0.05],
            rho: 0.3,
            n_cycles: 5,
            epsilon: 1e-6,
            patience: 500,
            time_limit: None,
            seed: 0,
            weight_floor: 0.05,
            max_intensify: 30,
            memory_capacity: 4096,
            operators: OperatorParams::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let fail = |m: &str| Err(ProblemError::Parameter(m.into()));
        if self.pop_size < 2 {
            return fail("pop_size must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail("rho must lie in [0, 1]");
        }
        if self.patience == 0 {
            return fail("patience must be positive");
        }
        if !(self.weight_floor > 0.0) {
            return fail("weight_floor must be positive");
        }
        if self.max_intensify == 0 || self.memory_capacity == 0 {
            return fail("max_intensify and memory_capacity must be positive");
        }
        if self.eta.iter().any(|e| !e.is_finite()) || !(self.epsilon >= 0.0) {
            return fail("eta and epsilon must be finite");
        }
        Ok(())
    }
}

/// A solution together with its objective vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub solution: Solution,
    pub objectives: Objectives,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    members: Vec<Scored>,
    evals: Vec<Evaluation>,
}

impl Population {
    pub fn new(members: Vec<Scored>) -> Self {
        let evals = evaluate_population(&members.iter().map(|m| m.objectives).collect::<Vec<_>>());
        Self { members, evals }
    }

    pub fn members(&self) -> &[Scored] {
        &self.members
    }

    pub fn evaluations(&self) -> &[Evaluation] {
        &self.evals
    }

    pub fn fitness(&self) -> Vec<f64> {
        self.evals.iter().map(|e| e.fitness).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Replaces the lowest-fitness member with `candidate` when the candidate,
    /// ranked together with the current members, scores higher than it.
    /// Candidates repeating a member's objectives are refused.
    pub fn offer(&mut self, candidate: Scored) -> bool {
        if self.members.iter().any(|m| m.objectives == candidate.objectives) {
            return false;
        }
        let mut objs: Vec<Objectives> = self.members.iter().map(|m| m.objectives).collect();
        objs.push(candidate.objectives);
        let evals = evaluate_population(&objs);
        let cand_fitness = evals[objs.len() - 1].fitness;
        let (worst, worst_fitness) = evals[..self.members.len()]
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.fitness))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if cand_fitness > worst_fitness {
            self.members[worst] = candidate;
            *self = Self::new(std::mem::take(&mut self.members));
            true
        } else {
            false
        }
    }
}

/// Fitness-proportional draw of a population member.
pub fn select_solution<R: Rng + ?Sized>(population: &Population, rng: &mut R) -> Scored {
    population.members[roulette(&population.fitness(), rng)].clone()
}

pub fn perceive_state(phase: Phase, last_gain: f64, stagnant_cycles: usize, n_cycles: usize) -> StateId {
    StateId {
        phase,
        improved: last_gain > 0.0,
        stale: stagnant_cycles >= n_cycles,
    }
}

/// Roulette over the weight row of `state`, restricted to the operator class
/// of its phase.
pub fn choose_operator<R: Rng + ?Sized>(weights: &WeightMatrix, state: StateId, rng: &mut R) -> OperatorId {
    choose_among(weights, state, &[], rng)
}

fn choose_among<R: Rng + ?Sized>(
    weights: &WeightMatrix,
    state: StateId,
    excluded: &[OperatorId],
    rng: &mut R,
) -> OperatorId {
    let class = match state.phase {
        Phase::Diversify => OperatorClass::Diversifier,
        Phase::Intensify => OperatorClass::Intensifier,
    };
    let ops: Vec<OperatorId> = OperatorId::SEARCH
        .iter()
        .copied()
        .filter(|o| o.class() == class && !excluded.contains(o))
        .collect();
    let row = weights.row(state.index());
    let w: Vec<f64> = ops.iter().map(|o| row[o.column().unwrap()]).collect();
    ops[roulette(&w, rng)]
}

/// Reinforces the operators used during one cycle. Positive-gain records earn
/// `eta[0]` when the cycle improved the coalition best, otherwise `eta[1]`
/// when it improved the agent best; non-positive records receive `eta[2]`.
pub fn individual_learning<'a>(
    weights: &WeightMatrix,
    records: impl IntoIterator<Item = &'a Experience>,
    eta: [f64; 3],
    improved_coalition: bool,
    improved_agent: bool,
    floor: f64,
) -> WeightMatrix {
    let mut w = weights.clone();
    for rec in records {
        let Some(col) = rec.operator.column() else { continue };
        let delta = if rec.gain > 0.0 {
            if improved_coalition {
                eta[0]
            } else if improved_agent {
                eta[1]
            } else {
                0.0
            }
        } else {
            eta[2]
        };
        let s = rec.state.index();
        w.set(s, col, (w.get(s, col) + delta).max(floor));
    }
    w
}

/// `(1 − ρ)·W + ρ·W_received`.
pub fn mimetism_learning(weights: &WeightMatrix, received: &WeightMatrix, rho: f64) -> Result<WeightMatrix, ProblemError> {
    if weights.shape() != received.shape() {
        return Err(ProblemError::Parameter(format!(
            "weight matrix shape {:?} does not match {:?}",
            received.shape(),
            weights.shape()
        )));
    }
    let mut out = weights.clone();
    for (o, r) in out.data.iter_mut().zip(&received.data) {
        *o = (1.0 - rho) * *o + rho * r;
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    pub steps: u64,
    pub cycles: u64,
    pub operator_calls: Vec<u64>,
    pub agent_improvements: u64,
    pub coalition_improvements: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub malformed: u64,
    pub decode_failures: u64,
    pub redraws: u64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    id: u16,
    n_agents: usize,
    space: Arc<SearchSpace>,
    cfg: AgentConfig,
    rng: ChaCha8Rng,
    current: Scored,
    best_agent: Scored,
    best_coalition: Scored,
    population: Population,
    weights: WeightMatrix,
    memory: ExperienceMemory,
    phase: Phase,
    last_gain: f64,
    stagnant_cycles: usize,
    cycle_mark: u64,
    cycle_best_gain: f64,
    cycle_improved_coalition: bool,
    cycle_improved_agent: bool,
    intensify_calls: usize,
    stuck: Vec<OperatorId>,
    idle_steps: usize,
    search_done: bool,
    markers: BTreeMap<u16, Scored>,
    finished: bool,
    seq: u64,
    stats: AgentStats,
}

impl Agent {
    /// Builds the agent and its initial greedy population.
    pub fn new(id: u16, n_agents: usize, space: Arc<SearchSpace>, cfg: AgentConfig) -> Result<Self, ProblemError> {
        cfg.validate()?;
        if n_agents == 0 || id as usize >= n_agents {
            return Err(ProblemError::Parameter(format!("agent id {id} outside 0..{n_agents}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut members = Vec::with_capacity(cfg.pop_size);
        for _ in 0..cfg.pop_size {
            let mut member_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let g = space.generate_greedy(&mut member_rng);
            let sol = space
                .evaluate(g)
                .ok_or_else(|| ProblemError::Parameter("greedy generation produced an undecodable genotype".into()))?;
            members.push(score(&space, sol));
        }
        let population = Population::new(members);
        let mut best = population.members[0].clone();
        for m in &population.members[1..] {
            if is_better(&m.objectives, &best.objectives) {
                best = m.clone();
            }
        }
        let current = select_solution(&population, &mut rng);
        let memory = ExperienceMemory::new(cfg.memory_capacity);
        Ok(Self {
            id,
            n_agents,
            space,
            rng,
            current,
            best_agent: best.clone(),
            best_coalition: best,
            population,
            weights: WeightMatrix::ones(),
            memory,
            phase: Phase::Diversify,
            last_gain: 0.0,
            stagnant_cycles: 0,
            cycle_mark: 0,
            cycle_best_gain: 0.0,
            cycle_improved_coalition: false,
            cycle_improved_agent: false,
            intensify_calls: 0,
            stuck: Vec::new(),
            idle_steps: 0,
            search_done: false,
            markers: BTreeMap::new(),
            finished: false,
            seq: 0,
            stats: AgentStats {
                operator_calls: vec![0; N_OPERATORS],
                ..AgentStats::default()
            },
            cfg,
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn current(&self) -> &Scored {
        &self.current
    }

    pub fn best_agent(&self) -> &Scored {
        &self.best_agent
    }

    pub fn best_coalition(&self) -> &Scored {
        &self.best_coalition
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn memory(&self) -> &ExperienceMemory {
        &self.memory
    }

    pub fn stats(&self) -> &AgentStats {
        &self.stats
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// The agent has stopped searching (patience exhausted or told to stop).
    pub fn search_done(&self) -> bool {
        self.search_done
    }

    /// Every agent's final best is known and the agreed result adopted.
    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn state(&self) -> StateId {
        perceive_state(self.phase, self.last_gain, self.stagnant_cycles, self.cfg.n_cycles)
    }

    fn message(&mut self, payload: Payload) -> CoalitionMessage {
        let msg = CoalitionMessage {
            sender: self.id,
            seq: self.seq,
            payload,
        };
        self.seq += 1;
        self.stats.messages_sent += 1;
        msg
    }

    /// One iteration of the search loop: processes the inbox, then applies
    /// one operator unless the search is over. Returns messages to broadcast.
    pub fn step(&mut self, inbox: impl IntoIterator<Item = CoalitionMessage>) -> Vec<CoalitionMessage> {
        let mut out = Vec::new();
        for msg in inbox {
            self.on_receive(msg, &mut out);
        }
        if self.search_done {
            self.try_finalize();
            return out;
        }
        self.stats.steps += 1;

        let state = self.state();
        if self.phase == Phase::Diversify && self.stagnant_cycles >= self.cfg.n_cycles {
            self.current = select_solution(&self.population, &mut self.rng);
            self.stagnant_cycles = 0;
            self.stats.redraws += 1;
        }
        let op = choose_among(&self.weights, state, &self.stuck, &mut self.rng);
        let child = self.apply(op);
        let unchanged = child == self.current.solution.genotype;
        let (g, new) = match self.space.evaluate(child) {
            Some(sol) => {
                let new = score(&self.space, sol);
                (gain(&self.current.objectives, &new.objectives), Some(new))
            }
            None => {
                self.stats.decode_failures += 1;
                (0.0, None)
            }
        };
        self.memory.push(Experience {
            state,
            operator: op,
            gain: g,
        });
        self.last_gain = g;
        self.stats.operator_calls[op.column().unwrap()] += 1;
        let failed = new.is_none();
        if let Some(new) = new {
            if !unchanged {
                self.offer_best(&new, &mut out);
                self.current = new;
            }
        }

        match self.phase {
            Phase::Diversify => {
                self.phase = Phase::Intensify;
                self.intensify_calls = 0;
                self.stuck.clear();
            }
            Phase::Intensify => {
                self.intensify_calls += 1;
                if unchanged || failed {
                    self.stuck.push(op);
                } else {
                    self.stuck.clear();
                }
                let all_stuck = OperatorId::SEARCH
                    .iter()
                    .filter(|o| o.class() == OperatorClass::Intensifier)
                    .all(|o| self.stuck.contains(o));
                if all_stuck || self.intensify_calls >= self.cfg.max_intensify {
                    self.end_cycle(&mut out);
                }
            }
        }

        self.idle_steps += 1;
        if self.idle_steps >= self.cfg.patience {
            self.finish_search(&mut out);
        }
        out
    }

    fn apply(&mut self, op: OperatorId) -> Genotype {
        let g = &self.current.solution.genotype;
        let rng = &mut self.rng;
        let space = &self.space;
        match op {
            OperatorId::GreedyGeneration => space.generate_greedy(rng),
            OperatorId::BcrcBestCoalition => space.bcrc(g, &self.best_coalition.solution.genotype, rng),
            OperatorId::BcrcPopulation => {
                let other = select_solution(&self.population, rng);
                space.bcrc(g, &other.solution.genotype, rng)
            }
            OperatorId::IntraReversal => space.intra_depot_reversal(g, rng),
            OperatorId::IntraSwap => space.intra_depot_swap(g, rng),
            OperatorId::InterSwap => space.inter_depot_swap(g, rng),
            OperatorId::SingleReroute => space.single_action_rerouting(g, rng),
            OperatorId::TwoSwap => space.two_swap(g, rng),
            OperatorId::OneMove => space.one_move(g, rng),
        }
    }

    fn note_coalition_gain(&mut self, amount: f64) {
        if amount > self.cfg.epsilon {
            self.idle_steps = 0;
            self.cycle_best_gain += amount;
        }
    }

    fn offer_best(&mut self, new: &Scored, out: &mut Vec<CoalitionMessage>) {
        if is_better(&new.objectives, &self.best_agent.objectives) {
            self.best_agent = new.clone();
            self.cycle_improved_agent = true;
            self.stats.agent_improvements += 1;
        }
        if is_better(&new.objectives, &self.best_coalition.objectives) {
            let amount = gain(&self.best_coalition.objectives, &new.objectives);
            self.best_coalition = new.clone();
            self.cycle_improved_coalition = true;
            self.stats.coalition_improvements += 1;
            self.note_coalition_gain(amount);
            let msg = self.message(Payload::BestSolution(new.solution.clone()));
            out.push(msg);
        }
    }

    fn end_cycle(&mut self, out: &mut Vec<CoalitionMessage>) {
        self.weights = individual_learning(
            &self.weights,
            self.memory.since(self.cycle_mark),
            self.cfg.eta,
            self.cycle_improved_coalition,
            self.cycle_improved_agent,
            self.cfg.weight_floor,
        );
        if self.cycle_improved_agent && !self.cycle_improved_coalition {
            let msg = self.message(Payload::WeightMatrix(self.weights.clone()));
            out.push(msg);
        }
        self.population.offer(self.current.clone());
        if self.cycle_best_gain > self.cfg.epsilon {
            self.stagnant_cycles = 0;
        } else {
            self.stagnant_cycles += 1;
        }
        self.cycle_best_gain = 0.0;
        self.cycle_improved_agent = false;
        self.cycle_improved_coalition = false;
        self.cycle_mark = self.memory.mark();
        self.intensify_calls = 0;
        self.stuck.clear();
        self.phase = Phase::Diversify;
        self.stats.cycles += 1;
    }

    /// Checks a received solution against the instance and re-evaluates it.
    fn admit(&mut self, sol: Solution) -> Option<Scored> {
        let n = self.space.instance().n_tasks();
        let g = &sol.genotype;
        let mut seen = vec![false; n];
        let well_formed = g.routes.len() == self.space.instance().n_robots()
            && g.routes.iter().flatten().all(|&t| t < n && !std::mem::replace(&mut seen[t], true));
        let evaluated = if well_formed { self.space.evaluate(sol.genotype) } else { None };
        if evaluated.is_none() {
            self.stats.malformed += 1;
            log::warn!("agent {}: discarding malformed solution payload", self.id);
        }
        evaluated.map(|s| score(&self.space, s))
    }

    /// Applies one incoming message.
    pub fn on_receive(&mut self, msg: CoalitionMessage, out: &mut Vec<CoalitionMessage>) {
        self.stats.messages_received += 1;
        match msg.payload {
            Payload::BestSolution(sol) => {
                if let Some(s) = self.admit(sol) {
                    self.merge_coalition(s);
                }
            }
            Payload::WeightMatrix(w) => match mimetism_learning(&self.weights, &w, self.cfg.rho) {
                Ok(w) if w.min() > 0.0 && w.values().iter().all(|v| v.is_finite()) => self.weights = w,
                _ => {
                    self.stats.malformed += 1;
                    log::warn!("agent {}: discarding malformed weight matrix from {}", self.id, msg.sender);
                }
            },
            Payload::ParamsExchange(_) => {}
            Payload::Stop(None) => self.finish_search(out),
            Payload::Stop(Some(sol)) => {
                if let Some(s) = self.admit(sol) {
                    self.merge_coalition(s.clone());
                    self.markers.insert(msg.sender, s);
                }
                self.try_finalize();
            }
        }
    }

    fn merge_coalition(&mut self, s: Scored) {
        if is_better(&s.objectives, &self.best_coalition.objectives) {
            let amount = gain(&self.best_coalition.objectives, &s.objectives);
            self.best_coalition = s;
            self.note_coalition_gain(amount);
        }
    }

    /// Stops searching and announces this agent's final coalition best.
    pub fn finish_search(&mut self, out: &mut Vec<CoalitionMessage>) {
        if self.search_done {
            return;
        }
        self.search_done = true;
        self.markers.insert(self.id, self.best_coalition.clone());
        let msg = self.message(Payload::Stop(Some(self.best_coalition.solution.clone())));
        out.push(msg);
        self.try_finalize();
    }

    fn try_finalize(&mut self) {
        if self.finished || !self.search_done || self.markers.len() < self.n_agents {
            return;
        }
        self.best_coalition = agreed_best(&self.markers).clone();
        self.finished = true;
    }
}

/// The final choice among per-agent bests: smallest potential, then smallest
/// cost, then lowest agent id. Every agent holding the same set of finals
/// computes the same answer.
pub fn agreed_best(finals: &BTreeMap<u16, Scored>) -> &Scored {
    finals
        .values()
        .reduce(|a, b| {
            let key = |s: &Scored| (s.objectives.potential(), s.objectives.cost());
            if key(b).partial_cmp(&key(a)) == Some(std::cmp::Ordering::Less) {
                b
            } else {
                a
            }
        })
        .expect("at least one final")
}

pub fn score(space: &SearchSpace, solution: Solution) -> Scored {
    let inst = space.instance();
    let objectives = solution.objectives(inst.objective_mode, inst.big_m);
    Scored { solution, objectives }
}
