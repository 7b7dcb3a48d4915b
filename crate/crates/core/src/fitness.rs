//! Pareto double-rank fitness over the (makespan, cost) criteria space.
//!
//! A member's dummy rank is the number of members dominating it; its rank adds
//! the dummy ranks of those dominators. Density is `1 / (d_min + 2)` with
//! `d_min` the distance to the nearest other member after min-max
//! normalization, and fitness is `1 / (rank + density + 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scalarized comparisons accept a candidate only below `1 - SCALAR_TOLERANCE`.
pub const SCALAR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FitnessError {
    #[error("cannot compare single-cost and bi-objective values")]
    MixedModes,
}

/// Objective values, all minimized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Objectives {
    Pareto { makespan: f64, cost: f64 },
    Single { cost: f64 },
}

impl Objectives {
    pub fn coords(&self) -> ([f64; 2], usize) {
        match *self {
            Objectives::Pareto { makespan, cost } => ([makespan, cost], 2),
            Objectives::Single { cost } => ([cost, 0.0], 1),
        }
    }

    pub fn cost(&self) -> f64 {
        match *self {
            Objectives::Pareto { cost, .. } | Objectives::Single { cost } => cost,
        }
    }

    /// A scalar that strictly decreases whenever [`is_better`] accepts a
    /// replacement: the product of both criteria, or the cost alone.
    pub fn potential(&self) -> f64 {
        match *self {
            Objectives::Pareto { makespan, cost } => makespan * cost,
            Objectives::Single { cost } => cost,
        }
    }
}

/// `a` dominates `b`: no worse everywhere and strictly better somewhere.
/// Single-cost values degenerate to strict less-than.
pub fn dominates(a: &Objectives, b: &Objectives) -> Result<bool, FitnessError> {
    match (a, b) {
        (Objectives::Single { cost: x }, Objectives::Single { cost: y }) => Ok(x < y),
        (
            Objectives::Pareto { makespan: d1, cost: c1 },
            Objectives::Pareto { makespan: d2, cost: c2 },
        ) => Ok(d1 <= d2 && c1 <= c2 && (d1 < d2 || c1 < c2)),
        _ => Err(FitnessError::MixedModes),
    }
}

fn dom(a: &Objectives, b: &Objectives) -> bool {
    dominates(a, b).unwrap_or(false)
}

#[inline]
fn ratio(value: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        value / reference
    } else if value > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// `0.5·δ/δ_ref + 0.5·γ/γ_ref`, or `γ/γ_ref` for single cost. Equals 1 at the
/// reference itself.
pub fn relative_score(candidate: &Objectives, reference: &Objectives) -> f64 {
    match (candidate, reference) {
        (
            Objectives::Pareto { makespan: d, cost: c },
            Objectives::Pareto { makespan: dr, cost: cr },
        ) => 0.5 * ratio(*d, *dr) + 0.5 * ratio(*c, *cr),
        _ => ratio(candidate.cost(), reference.cost()),
    }
}

/// Improvement of `new` over `current`, positive when `new` is better.
pub fn gain(current: &Objectives, new: &Objectives) -> f64 {
    match (current, new) {
        (Objectives::Single { cost: a }, Objectives::Single { cost: b }) => a - b,
        _ => 1.0 - relative_score(new, current),
    }
}

/// Best-solution comparator: single cost compares cost; bi-objective replaces
/// the incumbent when the candidate dominates it, or when neither dominates and
/// the candidate's scalarized score relative to the incumbent is below 1.
pub fn is_better(candidate: &Objectives, incumbent: &Objectives) -> bool {
    match (candidate, incumbent) {
        (Objectives::Single { cost: a }, Objectives::Single { cost: b }) => a < b,
        (Objectives::Pareto { .. }, Objectives::Pareto { .. }) => {
            dom(candidate, incumbent)
                || (!dom(incumbent, candidate)
                    && relative_score(candidate, incumbent) < 1.0 - SCALAR_TOLERANCE)
        }
        _ => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objectives: Objectives,
    pub dummy_rank: usize,
    pub rank: usize,
    pub density: f64,
    pub fitness: f64,
}

/// `(R', R)` for every member.
pub fn rank_population(objs: &[Objectives]) -> Vec<(usize, usize)> {
    let n = objs.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dom(&objs[j], &objs[i]) {
                dominated_by[i].push(j);
            }
        }
    }
    let dummy: Vec<usize> = dominated_by.iter().map(Vec::len).collect();
    (0..n)
        .map(|i| (dummy[i], dummy[i] + dominated_by[i].iter().map(|&j| dummy[j]).sum::<usize>()))
        .collect()
}

/// Per-objective min-max normalized coordinates; a degenerate range maps to 0.
fn normalized(objs: &[Objectives]) -> Vec<Vec<f64>> {
    let Some(first) = objs.first() else {
        return Vec::new();
    };
    let dims = first.coords().1;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for o in objs {
        let (c, _) = o.coords();
        for k in 0..dims {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    objs.iter()
        .map(|o| {
            let (c, _) = o.coords();
            (0..dims)
                .map(|k| {
                    let span = hi[k] - lo[k];
                    if span > 0.0 {
                        (c[k] - lo[k]) / span
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Density of every member; 0 for a singleton population.
pub fn densities(objs: &[Objectives]) -> Vec<f64> {
    if objs.len() < 2 {
        return vec![0.0; objs.len()];
    }
    let pts = normalized(objs);
    (0..pts.len())
        .map(|i| {
            let nearest = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| crate::problem::euclidean(&pts[i], &pts[j]))
                .fold(f64::INFINITY, f64::min);
            1.0 / (nearest + 2.0)
        })
        .collect()
}

pub fn density(objs: &[Objectives], i: usize) -> f64 {
    densities(objs)[i]
}

pub fn fitness_value(rank: usize, density: f64) -> f64 {
    1.0 / (rank as f64 + density + 1.0)
}

pub fn evaluate_population(objs: &[Objectives]) -> Vec<Evaluation> {
    let ranks = rank_population(objs);
    let dens = densities(objs);
    objs.iter()
        .zip(ranks)
        .zip(dens)
        .map(|((o, (dummy_rank, rank)), density)| Evaluation {
            objectives: *o,
            dummy_rank,
            rank,
            density,
            fitness: fitness_value(rank, density),
        })
        .collect()
}

/// Fitness-proportional draw; returns an index into `weights`.
pub fn roulette<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return rng.gen_range(0..weights.len());
    }
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}
