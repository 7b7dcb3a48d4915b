//! Instance builders, brute-force oracles and invariant checks shared by the
//! property suites and the acceptance run. Every check takes a seed and
//! returns a description of the first broken law.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use cbm_core::agent::{mimetism_learning, AgentConfig, WeightMatrix, N_OPERATORS, N_STATES};
use cbm_core::bench::generate_xd_instance;
use cbm_core::coalition::transport::TcpTransport;
use cbm_core::coalition::{run_coalition, run_networked_agent, CoalitionConfig, CoalitionResult, Scheduling};
use cbm_core::fitness::{evaluate_population, rank_population, relative_score, Objectives};
use cbm_core::operators::{OperatorClass, OperatorId, OperatorParams, SearchSpace};
use cbm_core::problem::{find_cycle, ObjectiveMode, ProblemInstance};
use cbm_core::schedule::{check_feasible, decode_semi_active, DecodeError, FeasibilityViolation, Genotype, Schedule};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod lp;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generated instance with 20% precedence-constrained tasks.
pub fn xd(n: usize, m: usize, seed: u64) -> ProblemInstance {
    let mut inst = generate_xd_instance(n, m, 0.2, &Default::default(), &mut rng(seed)).expect("generator");
    inst.name = format!("xd-{n}-{m}-{seed}");
    inst
}

/// Same instance with every robot able to carry every task at once.
pub fn roomy(mut inst: ProblemInstance) -> ProblemInstance {
    let worst: f64 = (0..inst.n_robots())
        .map(|r| inst.demand.iter().map(|q| q[r]).sum::<f64>())
        .fold(0.0, f64::max);
    for rb in &mut inst.robots {
        rb.capacity = 2.0 * worst + 1.0;
    }
    inst
}

/// Random order of all tasks consistent with the precedence pairs.
pub fn topo_order(inst: &ProblemInstance, rng: &mut impl Rng) -> Vec<usize> {
    let n = inst.n_tasks();
    let mut indeg = vec![0usize; n];
    for &(_, j) in &inst.precedence {
        indeg[j] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&t| indeg[t] == 0).collect();
    let mut out = Vec::with_capacity(n);
    while !ready.is_empty() {
        let k = rng.gen_range(0..ready.len());
        let t = ready.swap_remove(k);
        out.push(t);
        for &(i, j) in &inst.precedence {
            if i == t {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(j);
                }
            }
        }
    }
    out
}

/// Splits `order` over the first `robots` routes, keeping relative order.
pub fn split(order: &[usize], n_routes: usize, robots: usize, rng: &mut impl Rng) -> Genotype {
    let mut g = Genotype::empty(n_routes);
    for &t in order {
        g.routes[rng.gen_range(0..robots)].push(t);
    }
    g
}

/// Every task on a random robot in a random order; may deadlock.
pub fn arbitrary_genotype(inst: &ProblemInstance, rng: &mut impl Rng) -> Genotype {
    let mut order: Vec<usize> = (0..inst.n_tasks()).collect();
    order.shuffle(rng);
    split(&order, inst.n_robots(), inst.n_robots(), rng)
}

/// Route successions plus precedence pairs contain a directed cycle.
pub fn has_order_cycle(inst: &ProblemInstance, g: &Genotype) -> bool {
    let mut edges = inst.precedence.clone();
    for route in &g.routes {
        edges.extend(route.windows(2).map(|w| (w[0], w[1])));
    }
    find_cycle(inst.n_tasks(), &edges).is_some()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn labelings(len: usize, m: usize, from: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == len {
        out.push(prefix.clone());
        return;
    }
    for l in from..m {
        prefix.push(l);
        labelings(len, m, l, prefix, out);
        prefix.pop();
    }
}

/// Objective values of every feasible complete genotype. Each genotype is
/// one permutation of the tasks cut into consecutive per-robot routes.
pub fn enumerate_objectives(inst: &ProblemInstance) -> Vec<(f64, f64)> {
    let n = inst.n_tasks();
    let m = inst.n_robots();
    let mut labels = Vec::new();
    labelings(n, m, 0, &mut Vec::new(), &mut labels);
    let mut out = Vec::new();
    for perm in permutations(&(0..n).collect::<Vec<_>>()) {
        for lab in &labels {
            let mut g = Genotype::empty(m);
            for (&t, &l) in perm.iter().zip(lab) {
                g.routes[l].push(t);
            }
            if !check_feasible(&g, inst).is_empty() {
                continue;
            }
            if let Ok(s) = decode_semi_active(&g, inst) {
                out.push((s.makespan, s.total_cost));
            }
        }
    }
    out
}

/// Non-dominated subset.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut front: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|p| !points.iter().any(|q| q.0 <= p.0 && q.1 <= p.1 && (q.0 < p.0 || q.1 < p.1)))
        .collect();
    front.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    front.dedup();
    front
}

/// Some front point beats `p` in both criteria by more than `rel`.
pub fn dominated_by_front(p: (f64, f64), front: &[(f64, f64)], rel: f64) -> bool {
    let slack = |v: f64| rel * v.abs().max(1.0);
    front.iter().any(|q| {
        q.0 <= p.0 + slack(p.0) && q.1 <= p.1 + slack(p.1) && (q.0 < p.0 - slack(p.0) || q.1 < p.1 - slack(p.1))
    })
}

/// Smallest relative excess `0.5·(δ−δf)/δf + 0.5·(γ−γf)/γf` over the front,
/// clipped at 0.
pub fn scalarized_distance(p: (f64, f64), front: &[(f64, f64)]) -> f64 {
    let pt = Objectives::Pareto { makespan: p.0, cost: p.1 };
    front
        .iter()
        .map(|q| relative_score(&pt, &Objectives::Pareto { makespan: q.0, cost: q.1 }) - 1.0)
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

pub fn check_fitness_laws(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let size = r.gen_range(1..40);
    let objs: Vec<Objectives> = (0..size)
        .map(|_| Objectives::Pareto {
            makespan: r.gen_range(0..50) as f64,
            cost: r.gen_range(0..50) as f64,
        })
        .collect();
    let evals = evaluate_population(&objs);
    for (i, e) in evals.iter().enumerate() {
        ensure!(e.fitness > 0.0 && e.fitness <= 1.0, "fitness {} out of (0, 1] at {i}", e.fitness);
        ensure!(e.rank >= e.dummy_rank, "rank below dummy rank at {i}");
        ensure!((0.0..=0.5).contains(&e.density), "density {} out of [0, 0.5]", e.density);
        let (a, _) = objs[i].coords();
        let dominated = objs.iter().any(|o| {
            let (b, _) = o.coords();
            b[0] <= a[0] && b[1] <= a[1] && (b[0] < a[0] || b[1] < a[1])
        });
        ensure!((e.rank == 0) == !dominated, "rank {} disagrees with dominance oracle at {i}", e.rank);
    }
    let (kx, ky) = (r.gen_range(0.001..1000.0), r.gen_range(0.001..1000.0));
    let scaled: Vec<Objectives> = objs
        .iter()
        .map(|o| {
            let (c, _) = o.coords();
            Objectives::Pareto { makespan: c[0] * kx, cost: c[1] * ky }
        })
        .collect();
    ensure!(rank_population(&objs) == rank_population(&scaled), "ranks changed under scaling ({kx}, {ky})");
    Ok(())
}

fn apply(space: &SearchSpace, op: OperatorId, g: &Genotype, other: &Genotype, r: &mut ChaCha8Rng) -> Genotype {
    match op {
        OperatorId::GreedyGeneration => space.generate_greedy(r),
        OperatorId::BcrcBestCoalition | OperatorId::BcrcPopulation => space.bcrc(g, other, r),
        OperatorId::IntraReversal => space.intra_depot_reversal(g, r),
        OperatorId::IntraSwap => space.intra_depot_swap(g, r),
        OperatorId::InterSwap => space.inter_depot_swap(g, r),
        OperatorId::SingleReroute => space.single_action_rerouting(g, r),
        OperatorId::TwoSwap => space.two_swap(g, r),
        OperatorId::OneMove => space.one_move(g, r),
    }
}

/// Instance for operator checks: sizes 3..=14, 1..=4 robots, pareto or
/// single-cost mode.
pub fn operator_instance(seed: u64) -> ProblemInstance {
    let mut r = rng(seed ^ 0x5eed);
    let n = r.gen_range(3..=14);
    let m = r.gen_range(1..=4);
    let mut inst = xd(n, m, seed);
    if r.gen_bool(0.3) {
        inst.objective_mode = ObjectiveMode::SingleCost;
    }
    inst
}

pub fn check_operator_laws(seed: u64) -> Result<(), String> {
    let inst = Arc::new(operator_instance(seed));
    let space = SearchSpace::new(Arc::clone(&inst), OperatorParams::default());
    let mut r = rng(seed);
    let mut g = space.generate_greedy(&mut r);
    let other = space.generate_greedy(&mut r);
    ensure!(check_feasible(&g, &inst).is_empty(), "greedy generation produced an infeasible genotype");
    ensure!(check_feasible(&other, &inst).is_empty(), "greedy generation produced an infeasible genotype");
    for step in 0..12 {
        for op in std::iter::once(OperatorId::GreedyGeneration).chain(OperatorId::SEARCH) {
            let mut replay = r.clone();
            let child = apply(&space, op, &g, &other, &mut r);
            ensure!(
                apply(&space, op, &g, &other, &mut replay) == child,
                "{op} is not deterministic given the generator state"
            );
            let mut seen = child.task_multiset();
            let assigned = seen.len();
            seen.dedup();
            ensure!(seen.len() == assigned, "{op} duplicated a task: {child}");
            ensure!(seen.iter().all(|&t| t < inst.n_tasks()), "{op} produced an unknown task");
            // crossover and generation may leave unplaceable tasks unassigned
            let reinserts = matches!(
                op,
                OperatorId::GreedyGeneration | OperatorId::BcrcBestCoalition | OperatorId::BcrcPopulation
            );
            ensure!(
                reinserts || child.task_multiset() == g.task_multiset(),
                "{op} changed the task multiset at step {step}: {g} -> {child}"
            );
            ensure!(child.routes.len() == inst.n_robots(), "{op} changed the route count");
            let v = check_feasible(&child, &inst);
            ensure!(v.is_empty(), "{op} broke feasibility at step {step}: {v:?} ({g} -> {child})");
            if op.class() == OperatorClass::Intensifier {
                let before = space.objectives(&g).ok_or("parent does not decode")?;
                let after = space.objectives(&child).ok_or_else(|| format!("{op} child does not decode"))?;
                ensure!(
                    relative_score(&after, &before) <= 1.0,
                    "{op} made the objective worse: {before:?} -> {after:?}"
                );
            }
            if op.class() != OperatorClass::Generation && r.gen_bool(0.5) {
                g = child;
            }
        }
    }
    Ok(())
}

/// Earliest start of every scheduled entry allowed by its route predecessor
/// and precedence predecessors.
fn earliest_starts(inst: &ProblemInstance, s: &Schedule) -> Vec<Vec<f64>> {
    let finish = |t: usize| s.finish_of(t).unwrap_or(0.0);
    s.entries
        .iter()
        .enumerate()
        .map(|(r, entries)| {
            let mut prev = inst.origin();
            let mut ready = 0.0;
            entries
                .iter()
                .map(|e| {
                    let mut lb: f64 = ready + inst.time(r, prev, e.task);
                    for &(i, j) in &inst.precedence {
                        if j == e.task {
                            lb = lb.max(finish(i));
                        }
                    }
                    ready = e.finish;
                    prev = e.task;
                    lb
                })
                .collect()
        })
        .collect()
}

pub fn check_decoder_laws(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(2..=16);
    let m = r.gen_range(1..=4);
    let inst = xd(n, m, seed);
    let order = topo_order(&inst, &mut r);
    let g = split(&order, m, m, &mut r);
    let s1 = decode_semi_active(&g, &inst).map_err(|e| format!("topological genotype {g} failed: {e}"))?;
    let s2 = decode_semi_active(&g, &inst).map_err(|e| e.to_string())?;
    ensure!(s1 == s2, "decoding is not deterministic for {g}");
    let lbs = earliest_starts(&inst, &s1);
    for (r_idx, entries) in s1.entries.iter().enumerate() {
        for (k, e) in entries.iter().enumerate() {
            let lb = lbs[r_idx][k];
            let tol = 1e-9 * lb.abs().max(1.0);
            ensure!(e.start >= lb - tol, "task {} starts at {} before its bound {lb}", e.task, e.start);
            // semi-active: moving the start left by any epsilon breaks a bound
            ensure!(e.start <= lb + tol, "task {} could start at {lb} instead of {}", e.task, e.start);
            ensure!(
                (e.finish - e.start - inst.duration[e.task][r_idx]).abs() <= tol,
                "task {} duration mismatch",
                e.task
            );
        }
    }

    let a = arbitrary_genotype(&inst, &mut r);
    let cyclic = has_order_cycle(&inst, &a);
    match decode_semi_active(&a, &inst) {
        Err(DecodeError::CrossScheduleDeadlock { .. }) => ensure!(cyclic, "deadlock reported without a cycle in {a}"),
        Err(e) => return Err(format!("unexpected decode error {e} for {a}")),
        Ok(_) => ensure!(!cyclic, "cycle in {a} decoded without a deadlock"),
    }
    Ok(())
}

fn ordering_fault(v: &[FeasibilityViolation]) -> bool {
    v.iter().any(|x| {
        matches!(
            x,
            FeasibilityViolation::PrecedenceInversion { .. } | FeasibilityViolation::Deadlock { .. }
        )
    })
}

pub fn check_checker_agreement(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(3..=12);
    let m = r.gen_range(1..=3);
    let inst = roomy(xd(n, m, seed));
    let order = topo_order(&inst, &mut r);
    let g = split(&order, m, m, &mut r);
    ensure!(check_feasible(&g, &inst).is_empty(), "clean genotype {g} reported infeasible");
    let s = decode_semi_active(&g, &inst).map_err(|e| e.to_string())?;
    let cv = cbm_core::milp::check_constraints(&inst, &g, &s);
    ensure!(cv.is_empty(), "decoded genotype {g} has constraint violations {cv:?}");

    // arbitrary order: decoder fails exactly when the checker sees an ordering fault
    let a = arbitrary_genotype(&inst, &mut r);
    let decoded = decode_semi_active(&a, &inst).is_ok();
    let v = check_feasible(&a, &inst);
    ensure!(decoded != ordering_fault(&v), "decoder ({decoded}) and checker ({v:?}) disagree on {a}");

    // duplicate task
    let mut d = g.clone();
    let t = r.gen_range(0..n);
    let target = r.gen_range(0..m);
    d.routes[target].push(t);
    let v = check_feasible(&d, &inst);
    ensure!(
        v.iter().any(|x| matches!(x, FeasibilityViolation::DuplicateTask { task } if *task == t)),
        "duplicate of {t} not reported: {v:?}"
    );
    ensure!(decode_semi_active(&d, &inst).is_err(), "decoder accepted a duplicate task");

    // capacity bump on a loaded robot
    if let Some(rb) = (0..m).find(|&k| !g.routes[k].is_empty()) {
        let mut tight = inst.clone();
        let load: f64 = g.routes[rb].iter().map(|&t| inst.demand[t][rb]).sum();
        tight.robots[rb].capacity = load * 0.5;
        let v = check_feasible(&g, &tight);
        ensure!(
            v.len() == 1 && matches!(v[0], FeasibilityViolation::Capacity { robot, .. } if robot == rb),
            "capacity fault on robot {rb} reported as {v:?}"
        );
        ensure!(decode_semi_active(&g, &tight).is_ok(), "capacity is not a decoding concern");
    }

    // precedence flip inside one route
    if let Some(&(i, j)) = inst.precedence.first() {
        let mut p = Genotype::empty(m);
        p.routes[0] = order.iter().copied().filter(|&t| t != i).collect();
        let pos = p.routes[0].iter().position(|&t| t == j).unwrap();
        p.routes[0].insert(pos + 1, i);
        let v = check_feasible(&p, &inst);
        ensure!(
            v.iter().any(|x| matches!(x, FeasibilityViolation::PrecedenceInversion { before, after, .. } if (*before, *after) == (i, j))),
            "flipped pair ({i}, {j}) not reported: {v:?}"
        );
        ensure!(decode_semi_active(&p, &inst).is_err(), "decoder accepted a flipped pair");
    }
    Ok(())
}

pub fn check_mimetism(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let mut rows = || -> Vec<Vec<f64>> {
        (0..N_STATES)
            .map(|_| (0..N_OPERATORS).map(|_| r.gen_range(0.05..20.0)).collect())
            .collect()
    };
    let own = WeightMatrix::from_rows(rows()).map_err(|e| e.to_string())?;
    let peer = WeightMatrix::from_rows(rows()).map_err(|e| e.to_string())?;
    let keep = mimetism_learning(&own, &peer, 0.0).map_err(|e| e.to_string())?;
    let copy = mimetism_learning(&own, &peer, 1.0).map_err(|e| e.to_string())?;
    ensure!(keep == own, "rho = 0 changed the weights");
    ensure!(copy == peer, "rho = 1 did not copy the received weights");
    Ok(())
}

pub fn small_config(seed: u64, n_agents: usize, patience: usize) -> CoalitionConfig {
    CoalitionConfig {
        agent: AgentConfig {
            seed,
            patience,
            pop_size: 8,
            ..AgentConfig::default()
        },
        n_agents,
        scheduling: Scheduling::Deterministic { seed },
    }
}

fn same_final(results: &[CoalitionResult]) -> Result<(), String> {
    let first = &results[0].best;
    for (k, res) in results.iter().enumerate() {
        ensure!(res.agreed, "agent {k} reports disagreement");
        ensure!(
            res.best.solution.genotype == first.solution.genotype,
            "agent {k} ended with {} instead of {}",
            res.best.solution.genotype,
            first.solution.genotype
        );
    }
    Ok(())
}

pub fn check_coalition_inproc(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(4..=12);
    let m = r.gen_range(1..=3);
    let agents = r.gen_range(1..=4);
    let inst = Arc::new(xd(n, m, seed));
    let res = run_coalition(inst, &small_config(seed, agents, 150)).map_err(|e| e.to_string())?;
    ensure!(res.agreed, "agents disagree at termination");
    let finals: BTreeSet<String> = res.agents.iter().map(|a| format!("{:?}", a.best_coalition)).collect();
    ensure!(finals.len() == 1, "agents ended with different coalition bests: {finals:?}");
    for w in res.trace.windows(2) {
        ensure!(w[1].1 < w[0].1, "coalition best potential rose from {} to {}", w[0].1, w[1].1);
    }
    if let Some(&(_, last)) = res.trace.last() {
        ensure!(
            res.best.objectives.potential() <= last,
            "final best {} worse than the trace {last}",
            res.best.objectives.potential()
        );
    }
    Ok(())
}

/// Runs one coalition over a loopback TCP mesh, one thread per agent.
pub fn run_tcp(inst: &ProblemInstance, cfg: &CoalitionConfig) -> Result<Vec<CoalitionResult>, String> {
    let n = cfg.n_agents;
    let listeners: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let peers: Vec<SocketAddr> = addrs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, a)| *a).collect();
            let inst = inst.clone();
            let cfg = cfg.clone();
            thread::spawn(move || -> Result<CoalitionResult, String> {
                let mut t = TcpTransport::connect(l, &peers, Duration::from_secs(20)).map_err(|e| e.to_string())?;
                run_networked_agent(inst, &cfg, i as u16, &mut t).map_err(|e| e.to_string())
            })
        })
        .collect();
    handles
        .into_iter()
        .map(|h| h.join().map_err(|_| "agent thread panicked".to_string())?)
        .collect()
}

pub fn check_coalition_tcp(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(4..=10);
    let m = r.gen_range(1..=3);
    let agents = r.gen_range(2..=3);
    let inst = xd(n, m, seed);
    let results = run_tcp(&inst, &small_config(seed, agents, 100))?;
    same_final(&results)
}

/// Exact-front comparison for one tiny Pareto instance: whether the
/// coalition best is non-dominated and its scalarized distance to the front.
pub fn pareto_trial(seed: u64, agents: usize) -> Result<(bool, f64), String> {
    let n = if seed % 2 == 0 { 4 } else { 6 };
    let inst = xd(n, 2, 500 + seed);
    ensure!(inst.objective_mode == ObjectiveMode::ParetoBi, "generator produced a single-objective instance");
    let front = pareto_front(&enumerate_objectives(&inst));
    ensure!(!front.is_empty(), "no feasible complete genotype");
    let res = run_coalition(Arc::new(inst), &small_config(seed, agents, 200)).map_err(|e| e.to_string())?;
    ensure!(res.best.solution.complete, "coalition best is incomplete");
    let p = (res.schedule.makespan, res.schedule.total_cost);
    Ok((!dominated_by_front(p, &front, 1e-9), scalarized_distance(p, &front)))
}
