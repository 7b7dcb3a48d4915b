//! Small hand-built instances shared by unit tests.

use crate::problem::*;

/// Two robots at one depot, three tasks on a line, zero durations.
pub fn line_instance() -> ProblemInstance {
    let tasks: Vec<TaskSpec> = (0..3)
        .map(|i| TaskSpec {
            id: i,
            position: vec![(i + 1) as f64, 0.0],
            label: format!("t{i}"),
        })
        .collect();
    let starts = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
    let (setup_time, setup_cost) = derive_geometric_setup(&tasks, &starts, &[1.0, 1.0], 1.0).unwrap();
    ProblemInstance {
        name: "line".into(),
        robots: (0..2)
            .map(|r| RobotSpec {
                id: r,
                start_node: 0,
                capacity: 10.0,
                speed: 1.0,
            })
            .collect(),
        tasks,
        start_nodes: vec![vec![0.0, 0.0]],
        duration: vec![vec![1.0, 1.0]; 3],
        setup_time,
        setup_cost,
        demand: vec![vec![1.0, 1.0]; 3],
        precedence: vec![],
        closed_routes: false,
        objective_mode: ObjectiveMode::ParetoBi,
        big_m: default_big_m(3.0),
        max_route_duration: None,
    }
}

/// `n` tasks, `m` robots, every setup zero, per-task durations.
pub fn flat_instance(durations: &[f64], m: usize, precedence: Vec<(usize, usize)>) -> ProblemInstance {
    let n = durations.len();
    let mut inst = line_instance();
    inst.tasks = (0..n)
        .map(|i| TaskSpec { id: i, position: vec![0.0, 0.0], label: String::new() })
        .collect();
    inst.robots.truncate(1);
    while inst.robots.len() < m {
        let mut r = inst.robots[0].clone();
        r.id = inst.robots.len();
        inst.robots.push(r);
    }
    inst.duration = durations.iter().map(|&d| vec![d; m]).collect();
    inst.demand = vec![vec![1.0; m]; n];
    inst.setup_time = SetupTensor::zeros(m, n + 1);
    inst.setup_cost = SetupTensor::zeros(m, n + 1);
    inst.precedence = precedence;
    inst
}

