//! LP text reader and the substitution oracle for exported models.

use std::collections::{BTreeMap, BTreeSet};

use cbm_core::milp::{build_lp, lp_assignment, row_family, w_var, x_var, ConstraintClass, LpOptions};
use cbm_core::problem::ProblemInstance;
use cbm_core::schedule::{decode_semi_active, Genotype, Schedule};
use super::*;

/// A row as read back from LP text.
#[derive(Debug, Clone)]
pub struct ParsedRow {
    pub name: String,
    pub terms: Vec<(f64, String)>,
    pub sense: String,
    pub rhs: f64,
}

#[derive(Debug, Default)]
pub struct ParsedLp {
    pub objective: Vec<(f64, String)>,
    pub rows: Vec<ParsedRow>,
    pub bounded: BTreeSet<String>,
    pub binaries: BTreeSet<String>,
}

fn is_var(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `[sign] coef var` sequences.
fn parse_terms(tokens: &[&str]) -> Result<Vec<(f64, String)>, String> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < tokens.len() {
        let mut sign = 1.0;
        if tokens[k] == "+" || tokens[k] == "-" {
            if tokens[k] == "-" {
                sign = -1.0;
            }
            k += 1;
        }
        let coef: f64 = tokens
            .get(k)
            .ok_or("dangling sign")?
            .parse()
            .map_err(|_| format!("bad coefficient {:?}", tokens[k]))?;
        let var = tokens.get(k + 1).ok_or("coefficient without variable")?;
        if !is_var(var) {
            return Err(format!("bad variable name {var:?}"));
        }
        out.push((sign * coef, var.to_string()));
        k += 2;
    }
    Ok(out)
}

/// Reader for the subset of LP grammar the exporter writes: backslash
/// comments, `Minimize`, `Subject To` with named rows that may continue on
/// indented lines, `Bounds`, `Binaries`, `End`.
pub fn parse_lp(text: &str) -> Result<ParsedLp, String> {
    if !text.is_ascii() || text.contains('\r') {
        return Err("LP text must be ASCII with LF line endings".into());
    }
    let mut lp = ParsedLp::default();
    let mut section = "";
    let mut pending: Option<(String, Vec<String>)> = None;
    let flush = |pending: &mut Option<(String, Vec<String>)>, lp: &mut ParsedLp, section: &str| -> Result<(), String> {
        let Some((name, toks)) = pending.take() else {
            return Ok(());
        };
        let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
        if section == "min" {
            lp.objective = parse_terms(&toks)?;
            return Ok(());
        }
        let n = toks.len();
        if n < 2 {
            return Err(format!("row {name} too short"));
        }
        let sense = toks[n - 2];
        if !["<=", ">=", "="].contains(&sense) {
            return Err(format!("row {name} has no sense"));
        }
        let rhs: f64 = toks[n - 1].parse().map_err(|_| format!("row {name} has a bad rhs"))?;
        lp.rows.push(ParsedRow {
            name,
            terms: parse_terms(&toks[..n - 2])?,
            sense: sense.to_string(),
            rhs,
        });
        Ok(())
    };
    let mut ended = false;
    for line in text.lines() {
        if line.starts_with('\\') {
            continue;
        }
        let trimmed = line.trim();
        let header = match trimmed {
            "Minimize" => Some("min"),
            "Subject To" => Some("st"),
            "Bounds" => Some("bounds"),
            "Binaries" => Some("bin"),
            "End" => Some("end"),
            _ => None,
        };
        if let Some(h) = header {
            flush(&mut pending, &mut lp, section)?;
            section = h;
            ended |= h == "end";
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        match section {
            "min" | "st" => {
                let mut toks: Vec<String> = trimmed.split_whitespace().map(str::to_string).collect();
                if toks[0].ends_with(':') {
                    flush(&mut pending, &mut lp, section)?;
                    let name = toks.remove(0).trim_end_matches(':').to_string();
                    pending = Some((name, toks));
                } else if line.starts_with("   ") {
                    pending.as_mut().ok_or("continuation without a row")?.1.extend(toks);
                } else {
                    return Err(format!("unexpected line {line:?}"));
                }
            }
            "bounds" => {
                let toks: Vec<&str> = trimmed.split_whitespace().collect();
                if toks.len() != 3 || toks[1] != ">=" || !is_var(toks[0]) {
                    return Err(format!("bad bound {line:?}"));
                }
                lp.bounded.insert(toks[0].to_string());
            }
            "bin" => {
                for v in trimmed.split_whitespace() {
                    if !is_var(v) {
                        return Err(format!("bad binary {v:?}"));
                    }
                    lp.binaries.insert(v.to_string());
                }
            }
            _ => return Err(format!("text outside any section: {line:?}")),
        }
    }
    if !ended {
        return Err("missing End".into());
    }
    Ok(lp)
}

pub fn row_violated(row: &ParsedRow, vals: &BTreeMap<String, f64>) -> bool {
    let lhs: f64 = row.terms.iter().map(|(c, v)| c * vals.get(v).copied().unwrap_or(0.0)).sum();
    let scale = row.rhs.abs().max(row.terms.iter().map(|(c, _)| c.abs()).fold(1.0, f64::max));
    let tol = 1e-7 * scale;
    match row.sense.as_str() {
        "<=" => lhs > row.rhs + tol,
        ">=" => lhs < row.rhs - tol,
        _ => (lhs - row.rhs).abs() > tol,
    }
}

pub fn violated_families(lp: &ParsedLp, vals: &BTreeMap<String, f64>) -> BTreeSet<String> {
    lp.rows
        .iter()
        .filter(|r| row_violated(r, vals))
        .map(|r| row_family(&r.name).map_or("span".to_string(), |c| c.name().to_string()))
        .collect()
}

pub fn family(c: ConstraintClass) -> BTreeSet<String> {
    [c.name().to_string()].into_iter().collect()
}

pub struct Case {
    pub inst: ProblemInstance,
    pub g: Genotype,
    pub s: Schedule,
}

/// Tiny instance with roomy capacities and a precedence-consistent
/// genotype that leaves the last robot idle.
pub fn case(seed: u64) -> Case {
    let mut r = rng(seed);
    let n = 3 + (seed % 4) as usize;
    let m = 2 + (seed % 2) as usize;
    let inst = roomy(xd(n, m, 1000 + seed));
    let order = topo_order(&inst, &mut r);
    let g = split(&order, m, m - 1, &mut r);
    let s = decode_semi_active(&g, &inst).expect("consistent genotype decodes");
    Case { inst, g, s }
}

pub fn lp_of(inst: &ProblemInstance) -> ParsedLp {
    let model = build_lp(inst, &LpOptions::default()).unwrap();
    let text = model.to_lp_string();
    let lp = parse_lp(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    assert_eq!(lp.rows.len(), model.rows.len());
    lp
}


macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn expect_only(lp: &ParsedLp, vals: &BTreeMap<String, f64>, class: ConstraintClass, what: &str) -> Result<(), String> {
    let got = violated_families(lp, vals);
    ensure!(got == family(class), "{what}: expected only {class}, got {got:?}");
    Ok(())
}

pub fn check_substitution(seed: u64) -> Result<(), String> {
    let c = case(seed);
    let lp = lp_of(&c.inst);
    let vals = lp_assignment(&c.inst, &c.g, &c.s);
    let bad: Vec<&str> = lp.rows.iter().filter(|r| row_violated(r, &vals)).map(|r| r.name.as_str()).collect();
    ensure!(bad.is_empty(), "genotype {} violates {bad:?}", c.g);
    let cost: f64 = lp
        .objective
        .iter()
        .filter(|(_, v)| v != "T")
        .map(|(k, v)| k * vals.get(v).copied().unwrap_or(0.0))
        .sum();
    ensure!(
        (2.0 * cost - c.s.total_cost).abs() < 1e-6 * c.s.total_cost.max(1.0),
        "objective cost {} differs from decoded cost {}",
        2.0 * cost,
        c.s.total_cost
    );
    Ok(())
}

/// A task outside every precedence pair also served from the start of the
/// idle robot.
pub fn check_duplicate_fault(seed: u64) -> Result<(), String> {
    let c = case(seed);
    let lp = lp_of(&c.inst);
    let idle = c.inst.n_robots() - 1;
    let free = (0..c.inst.n_tasks())
        .find(|t| c.inst.precedence.iter().all(|&(i, j)| i != *t && j != *t))
        .ok_or("every task is precedence constrained")?;
    let mut vals = lp_assignment(&c.inst, &c.g, &c.s);
    let origin = c.inst.origin();
    let start = c.inst.time(idle, origin, free);
    vals.insert(x_var(&c.inst, idle, origin, free), 1.0);
    vals.insert(w_var(free, idle), start);
    let t = vals["T"].max(start + c.inst.duration[free][idle]);
    vals.insert("T".into(), t);
    expect_only(&lp, &vals, ConstraintClass::Degree, "duplicate task")
}

pub fn check_capacity_fault(seed: u64) -> Result<(), String> {
    let c = case(seed);
    let r = (0..c.inst.n_robots()).find(|&r| !c.g.routes[r].is_empty()).ok_or("no loaded robot")?;
    let mut tight = c.inst.clone();
    let load: f64 = c.g.routes[r].iter().map(|&t| tight.demand[t][r]).sum();
    tight.robots[r].capacity = 0.5 * load;
    let lp = lp_of(&tight);
    let vals = lp_assignment(&tight, &c.g, &c.s);
    expect_only(&lp, &vals, ConstraintClass::Capacity, "capacity bump")
}

pub fn check_precedence_fault(seed: u64) -> Result<(), String> {
    let c = case(seed);
    let &(i, j) = c.inst.precedence.first().ok_or("no precedence pair")?;
    let mut flipped = c.inst.clone();
    flipped.precedence[0] = (j, i);
    let lp = lp_of(&flipped);
    let vals = lp_assignment(&flipped, &c.g, &c.s);
    expect_only(&lp, &vals, ConstraintClass::Precedence, "precedence flip")
}

/// Halves the start of a task whose only timing bound is its route
/// predecessor.
pub fn check_shift_fault(seed: u64) -> Result<(), String> {
    let c = case(seed);
    let lp = lp_of(&c.inst);
    let (r, t, start) = c
        .s
        .entries
        .iter()
        .enumerate()
        .flat_map(|(r, es)| es.iter().map(move |e| (r, e.task, e.start)))
        .find(|&(_, t, start)| start > 0.0 && c.inst.precedence.iter().all(|&(_, j)| j != t))
        .ok_or("no task bound only by its route")?;
    let mut vals = lp_assignment(&c.inst, &c.g, &c.s);
    vals.insert(w_var(t, r), 0.5 * start);
    expect_only(&lp, &vals, ConstraintClass::Schedule, "start shift")
}

/// Substitution plus all four single faults on one tiny instance.
pub fn check_lp_oracle(seed: u64) -> Result<(), String> {
    check_substitution(seed)?;
    check_duplicate_fault(seed)?;
    check_capacity_fault(seed)?;
    check_precedence_fault(seed)?;
    check_shift_fault(seed)
}
