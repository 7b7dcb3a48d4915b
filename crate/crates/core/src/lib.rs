//! Multi-robot task allocation and scheduling with cross-schedule precedence
//! constraints, modelled as a capacitated multi-depot vehicle routing problem
//! and solved by a coalition of cooperating population-based agents.

pub mod agent;
pub mod bench;
pub mod coalition;
pub mod fitness;
pub mod milp;
pub mod operators;
pub mod problem;
pub mod schedule;

#[cfg(test)]
pub(crate) mod testutil;
