//! The multi-agent layer: message schema, transports, termination and the
//! coalition runner.
//!
//! Termination works in two stages. An agent whose coalition best has not
//! improved for `patience` steps (or that receives a runner STOP) stops
//! searching and broadcasts a STOP carrying its final best. Once an agent
//! holds a final from every member it adopts [`agreed_best`] of those finals,
//! so all agents end with the same answer.

pub mod transport;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{agreed_best, Agent, AgentConfig, AgentStats, Scored, WeightMatrix};
use crate::fitness::{is_better, Objectives};
use crate::operators::SearchSpace;
use crate::problem::{validate_instance, ProblemError, ProblemInstance};
use crate::schedule::{decode_with, Schedule, Solution};

pub use transport::{in_process_bus, BusEndpoint, RunnerHandle, TcpTransport, Transport, TransportError};

/// Sender id of the runner.
pub const RUNNER_ID: u16 = u16::MAX;

/// One robot's parameters, as contributed by the agent that owns the robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsBlock {
    pub robot: u16,
    pub capacity: f64,
    pub duration: Vec<f64>,
    pub demand: Vec<f64>,
    pub setup_time: Vec<f64>,
    pub setup_cost: Vec<f64>,
}

impl ParamsBlock {
    pub fn from_instance(inst: &ProblemInstance, robot: usize) -> Self {
        Self {
            robot: robot as u16,
            capacity: inst.robots[robot].capacity,
            duration: inst.duration.iter().map(|d| d[robot]).collect(),
            demand: inst.demand.iter().map(|d| d[robot]).collect(),
            setup_time: inst.setup_time.robot_block(robot).to_vec(),
            setup_cost: inst.setup_cost.robot_block(robot).to_vec(),
        }
    }

    /// Overwrites the robot's parameters in `inst`.
    pub fn apply(&self, inst: &mut ProblemInstance) -> Result<(), ProblemError> {
        let r = self.robot as usize;
        let n = inst.n_tasks();
        let nodes = (n + 1) * (n + 1);
        if r >= inst.n_robots() {
            return Err(ProblemError::UnknownRobot { robot: r, n_robots: inst.n_robots() });
        }
        if self.duration.len() != n || self.demand.len() != n || self.setup_time.len() != nodes || self.setup_cost.len() != nodes {
            return Err(ProblemError::Parameter(format!("parameter block for robot {r} has wrong dimensions")));
        }
        inst.robots[r].capacity = self.capacity;
        for i in 0..n {
            inst.duration[i][r] = self.duration[i];
            inst.demand[i][r] = self.demand[i];
        }
        inst.setup_time.robot_block_mut(r).copy_from_slice(&self.setup_time);
        inst.setup_cost.robot_block_mut(r).copy_from_slice(&self.setup_cost);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    BestSolution(Solution),
    WeightMatrix(WeightMatrix),
    ParamsExchange(ParamsBlock),
    /// From the runner: stop searching. From an agent: its final best.
    Stop(Option<Solution>),
}

impl Payload {
    pub fn kind(&self) -> u8 {
        match self {
            Payload::BestSolution(_) => wire::KIND_BEST_SOLUTION,
            Payload::WeightMatrix(_) => wire::KIND_WEIGHT_MATRIX,
            Payload::ParamsExchange(_) => wire::KIND_PARAMS_EXCHANGE,
            Payload::Stop(_) => wire::KIND_STOP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionMessage {
    pub sender: u16,
    pub seq: u64,
    pub payload: Payload,
}

#[derive(Debug, Error)]
pub enum CoalitionError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("transport failure: {0}")]
    Transport(#[from] TransportError),
    #[error("agent {0} panicked")]
    AgentPanic(u16),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheduling {
    /// All agents stepped round-robin on the calling thread, in an order
    /// shuffled each round by a generator seeded with `seed`. Fully
    /// reproducible when no time limit fires.
    Deterministic { seed: u64 },
    /// One thread per agent.
    Threaded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionConfig {
    pub agent: AgentConfig,
    pub n_agents: usize,
    pub scheduling: Scheduling,
}

impl CoalitionConfig {
    /// Agent `k` runs with seed `agent.seed + k`.
    pub fn agent_config(&self, k: usize) -> AgentConfig {
        AgentConfig {
            seed: self.agent.seed.wrapping_add(k as u64),
            ..self.agent.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub id: u16,
    pub seed: u64,
    pub best_agent: Objectives,
    pub best_coalition: Objectives,
    pub stats: AgentStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionResult {
    pub best: Scored,
    pub schedule: Schedule,
    pub agents: Vec<AgentReport>,
    /// Every agent ended with the same coalition best.
    pub agreed: bool,
    pub timed_out: bool,
    pub elapsed_s: f64,
    pub iterations: u64,
    /// `(elapsed seconds, potential)` each time the runner's view of the
    /// coalition best improved. Empty under threaded scheduling.
    pub trace: Vec<(f64, f64)>,
}

impl CoalitionResult {
    pub fn makespan(&self) -> f64 {
        self.best.solution.makespan
    }

    pub fn cost(&self) -> f64 {
        self.best.solution.cost
    }
}

fn check_instance(inst: &ProblemInstance) -> Result<(), CoalitionError> {
    let violations = validate_instance(inst);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CoalitionError::Invalid(
            violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        ))
    }
}

fn report(agent: &Agent) -> AgentReport {
    AgentReport {
        id: agent.id(),
        seed: agent.config().seed,
        best_agent: agent.best_agent().objectives,
        best_coalition: agent.best_coalition().objectives,
        stats: agent.stats().clone(),
    }
}

fn finish_result(
    space: &SearchSpace,
    agents: &[Agent],
    timed_out: bool,
    started: Instant,
    trace: Vec<(f64, f64)>,
) -> CoalitionResult {
    let finals: BTreeMap<u16, Scored> = agents.iter().map(|a| (a.id(), a.best_coalition().clone())).collect();
    let best = agreed_best(&finals).clone();
    let agreed = agents.iter().all(|a| a.best_coalition().objectives == best.objectives);
    let schedule = decode_with(&best.solution.genotype, space.instance(), space.precedence())
        .expect("coalition best always decodes");
    CoalitionResult {
        best,
        schedule,
        agents: agents.iter().map(report).collect(),
        agreed,
        timed_out,
        elapsed_s: started.elapsed().as_secs_f64(),
        iterations: agents.iter().map(|a| a.stats().steps).sum(),
        trace,
    }
}

/// Runs `n_agents` cooperating agents on one instance until they agree on a
/// final best or the time limit passes.
pub fn run_coalition(inst: Arc<ProblemInstance>, cfg: &CoalitionConfig) -> Result<CoalitionResult, CoalitionError> {
    check_instance(&inst)?;
    if cfg.n_agents == 0 || cfg.n_agents >= RUNNER_ID as usize {
        return Err(ProblemError::Parameter("n_agents must be between 1 and 65534".into()).into());
    }
    cfg.agent.validate()?;
    let space = Arc::new(SearchSpace::new(inst, cfg.agent.operators.clone()));
    match cfg.scheduling {
        Scheduling::Deterministic { seed } => run_deterministic(space, cfg, seed),
        Scheduling::Threaded => run_threaded(space, cfg),
    }
}

fn deadline(started: Instant, cfg: &AgentConfig) -> Option<Instant> {
    cfg.time_limit.map(|s| started + Duration::from_secs_f64(s.max(0.0)))
}

fn run_deterministic(space: Arc<SearchSpace>, cfg: &CoalitionConfig, seed: u64) -> Result<CoalitionResult, CoalitionError> {
    let started = Instant::now();
    let stop_at = deadline(started, &cfg.agent);
    let n = cfg.n_agents;
    let (mut endpoints, mut runner) = in_process_bus(n);
    let mut agents = (0..n)
        .map(|k| Agent::new(k as u16, n, space.clone(), cfg.agent_config(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut timed_out = false;
    let mut view: Option<Objectives> = None;
    let mut trace = Vec::new();

    while !agents.iter().all(Agent::is_finished) {
        if !timed_out && stop_at.is_some_and(|t| Instant::now() >= t) {
            timed_out = true;
            runner.stop_all();
        }
        order.shuffle(&mut rng);
        for &k in &order {
            let mut inbox = Vec::new();
            while let Some(m) = endpoints[k].try_recv()? {
                inbox.push(m);
            }
            let out = agents[k].step(inbox);
            for m in &out {
                endpoints[k].broadcast(m)?;
            }
            let candidate = agents[k].best_coalition().objectives;
            if view.map_or(true, |v| is_better(&candidate, &v)) {
                view = Some(candidate);
                trace.push((started.elapsed().as_secs_f64(), candidate.potential()));
            }
        }
    }
    Ok(finish_result(&space, &agents, timed_out, started, trace))
}

/// Steps one agent against a transport until it has adopted the agreed
/// final best. Stops the local search at `stop_at`.
pub fn drive_agent<T: Transport + ?Sized>(
    agent: &mut Agent,
    transport: &mut T,
    stop_at: Option<Instant>,
) -> Result<bool, TransportError> {
    let mut timed_out = false;
    while !agent.is_finished() {
        let mut inbox = Vec::new();
        while let Some(m) = transport.try_recv()? {
            inbox.push(m);
        }
        if !agent.search_done() && stop_at.is_some_and(|t| Instant::now() >= t) {
            timed_out = true;
            let mut out = Vec::new();
            agent.finish_search(&mut out);
            for m in &out {
                transport.broadcast(m)?;
            }
        }
        if agent.search_done() && inbox.is_empty() {
            match transport.recv_timeout(Duration::from_millis(20))? {
                Some(m) => inbox.push(m),
                None => continue,
            }
        }
        let out = agent.step(inbox);
        for m in &out {
            transport.broadcast(m)?;
        }
    }
    Ok(timed_out)
}

fn run_threaded(space: Arc<SearchSpace>, cfg: &CoalitionConfig) -> Result<CoalitionResult, CoalitionError> {
    let started = Instant::now();
    let stop_at = deadline(started, &cfg.agent);
    let n = cfg.n_agents;
    let (endpoints, _runner) = in_process_bus(n);
    let handles: Vec<_> = endpoints
        .into_iter()
        .enumerate()
        .map(|(k, mut ep)| {
            let space = space.clone();
            let acfg = cfg.agent_config(k);
            thread::spawn(move || -> Result<(Agent, bool), CoalitionError> {
                let mut agent = Agent::new(k as u16, n, space, acfg)?;
                let timed_out = drive_agent(&mut agent, &mut ep, stop_at)?;
                Ok((agent, timed_out))
            })
        })
        .collect();
    let mut agents = Vec::with_capacity(n);
    let mut timed_out = false;
    for (k, h) in handles.into_iter().enumerate() {
        let (agent, t) = h.join().map_err(|_| CoalitionError::AgentPanic(k as u16))??;
        timed_out |= t;
        agents.push(agent);
    }
    Ok(finish_result(&space, &agents, timed_out, started, Vec::new()))
}

/// Runs agent `id` of `n_agents` in this process over `transport`. Each
/// robot `r` is owned by agent `r % n_agents`, which contributes its
/// parameters before the search starts.
pub fn run_networked_agent<T: Transport + ?Sized>(
    mut inst: ProblemInstance,
    cfg: &CoalitionConfig,
    id: u16,
    transport: &mut T,
) -> Result<CoalitionResult, CoalitionError> {
    let started = Instant::now();
    let n = cfg.n_agents;
    let mut seq = 0u64;
    for r in (0..inst.n_robots()).filter(|r| r % n == id as usize) {
        transport.broadcast(&CoalitionMessage {
            sender: id,
            seq,
            payload: Payload::ParamsExchange(ParamsBlock::from_instance(&inst, r)),
        })?;
        seq += 1;
    }
    let mut missing: Vec<usize> = (0..inst.n_robots()).filter(|r| r % n != id as usize).collect();
    let mut early = Vec::new();
    let exchange_deadline = Instant::now() + Duration::from_secs(60);
    while !missing.is_empty() {
        if Instant::now() >= exchange_deadline {
            return Err(TransportError::Closed.into());
        }
        let Some(msg) = transport.recv_timeout(Duration::from_millis(50))? else { continue };
        match &msg.payload {
            Payload::ParamsExchange(block) => {
                block.apply(&mut inst)?;
                missing.retain(|&r| r != block.robot as usize);
            }
            _ => early.push(msg),
        }
    }
    check_instance(&inst)?;
    cfg.agent.validate()?;
    let space = Arc::new(SearchSpace::new(Arc::new(inst), cfg.agent.operators.clone()));
    let mut agent = Agent::new(id, n, space.clone(), cfg.agent_config(id as usize))?;
    let mut out = Vec::new();
    for m in early {
        agent.on_receive(m, &mut out);
    }
    for m in out.drain(..) {
        transport.broadcast(&m)?;
    }
    let timed_out = drive_agent(&mut agent, transport, deadline(started, &cfg.agent))?;
    Ok(finish_result(&space, std::slice::from_ref(&agent), timed_out, started, Vec::new()))
}
