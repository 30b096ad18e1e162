//! Normalisation of hand-written programs into the form produced by the
//! corpus generator.
//!
//! Seven passes run in a fixed order:
//!
//! 1. rewrite every body so that defined subroutines replace each matching run;
//! 2. drop primitives that never change the state and instructions that never run;
//! 3. drop subroutines that are never called;
//! 4. inline subroutines with a single call site;
//! 5. inline subroutines whose body is one instruction;
//! 6. move lights in front of adjacent turns;
//! 7. renumber subroutines by first execution.
//!
//! The pipeline is repeated until it reaches a fixpoint (at most
//! [`MAX_ROUNDS`] rounds), so canonical programs are stable under a
//! second canonicalisation.

use std::collections::{HashMap, HashSet};

use crate::program::{
    execute, execute_observed, Budget, ExecObserver, Instruction, Program, ProgramError, Site,
};
use crate::task::{Action, TaskSpec, WorldState};

pub const NUM_PASSES: usize = 7;
pub const MAX_ROUNDS: usize = 5;

/// Which passes changed the program, and its length before and after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CanonReport {
    pub modified: [bool; NUM_PASSES],
    pub original_length: usize,
    pub canonical_length: usize,
}

impl CanonReport {
    pub fn any_modified(&self) -> bool {
        self.modified.iter().any(|&m| m)
    }

    /// Compact one-line form, e.g. `passes=1010000 length=13->11`.
    pub fn summary(&self) -> String {
        let flags: String = self.modified.iter().map(|&m| if m { '1' } else { '0' }).collect();
        format!(
            "passes={flags} length={}->{}",
            self.original_length, self.canonical_length
        )
    }
}

type Routines = Vec<Vec<Instruction>>;

pub fn canonicalize(task: &TaskSpec, p: &Program) -> Result<(Program, CanonReport), ProgramError> {
    canonicalize_with(task, p, Budget::default())
}

pub fn canonicalize_with(
    task: &TaskSpec,
    p: &Program,
    budget: Budget,
) -> Result<(Program, CanonReport), ProgramError> {
    if !execute(task, p, budget).solved() {
        return Err(ProgramError::NotSolved(task.id().to_string()));
    }
    let mut report = CanonReport {
        original_length: p.length(),
        ..CanonReport::default()
    };
    let mut current = p.clone();
    for _ in 0..MAX_ROUNDS {
        let mut changed = false;
        for pass in 0..NUM_PASSES {
            let next = apply_pass(pass, task, &current, budget);
            if next != current {
                report.modified[pass] = true;
                changed = true;
                current = next;
            }
        }
        if !changed {
            break;
        }
    }
    report.canonical_length = current.length();
    Ok((current, report))
}

/// Applies one pass (0-based). A rewrite that would stop the program from
/// solving the task (for example by exceeding the call-depth budget) is
/// discarded.
pub fn apply_pass(pass: usize, task: &TaskSpec, p: &Program, budget: Budget) -> Program {
    let routines = p.routines().to_vec();
    let out = match pass {
        0 => maximize_reuse(routines),
        1 => prune_dead(task, p, budget),
        2 => drop_uncalled(routines),
        3 => inline_single_use(routines),
        4 => inline_trivial(routines),
        5 => order_turn_light(task, p, budget),
        6 => renumber(task, p, budget),
        _ => panic!("no pass {pass}"),
    };
    let next = Program::from_routines(out);
    if next != *p && !execute(task, &next, budget).solved() {
        return p.clone();
    }
    next
}

/// Are both programs solving with identical final states?
pub fn trace_equivalent(task: &TaskSpec, p: &Program, q: &Program) -> Result<bool, ProgramError> {
    let budget = Budget::default();
    let a = execute(task, p, budget);
    let b = execute(task, q, budget);
    if !a.solved() || !b.solved() {
        return Err(ProgramError::NotSolved(task.id().to_string()));
    }
    Ok(a.final_state == b.final_state)
}

fn maximize_reuse(routines: Routines) -> Routines {
    let mut patterns: Vec<(usize, &[Instruction])> = routines
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, b)| b.len() >= 2)
        .map(|(k, b)| (k, b.as_slice()))
        .collect();
    patterns.sort_by_key(|&(k, b)| (std::cmp::Reverse(b.len()), k));

    routines
        .iter()
        .enumerate()
        .map(|(j, body)| {
            let mut out = Vec::with_capacity(body.len());
            let mut i = 0;
            'scan: while i < body.len() {
                for &(k, pat) in &patterns {
                    // a body may only collapse into a call of a lower-numbered
                    // twin, otherwise two equal bodies would call each other
                    let whole = pat.len() == body.len();
                    if k == j || (whole && k > j) {
                        continue;
                    }
                    if body[i..].starts_with(pat) {
                        out.push(Instruction::Call(k));
                        i += pat.len();
                        continue 'scan;
                    }
                }
                out.push(body[i]);
                i += 1;
            }
            out
        })
        .collect()
}

#[derive(Default)]
struct SiteUsage {
    executed: HashSet<Site>,
    effective: HashSet<Site>,
}

impl ExecObserver for SiteUsage {
    fn on_action(&mut self, site: Site, before: &WorldState, after: &WorldState) {
        self.executed.insert(site);
        if before != after {
            self.effective.insert(site);
        }
    }

    fn on_enter(&mut self, site: Site, _callee: usize) {
        self.executed.insert(site);
    }
}

fn prune_dead(task: &TaskSpec, p: &Program, budget: Budget) -> Routines {
    let mut usage = SiteUsage::default();
    execute_observed(task, p, budget, &mut usage);
    let mut routines: Routines = p
        .routines()
        .iter()
        .enumerate()
        .map(|(r, body)| {
            body.iter()
                .enumerate()
                .filter(|&(i, ins)| {
                    let site = Site { routine: r, index: i };
                    match ins {
                        Instruction::Act(_) => usage.effective.contains(&site),
                        Instruction::Call(_) => usage.executed.contains(&site),
                    }
                })
                .map(|(_, ins)| *ins)
                .collect()
        })
        .collect();
    // calls into bodies that are now empty do nothing either
    loop {
        let empty: HashSet<usize> = (1..routines.len()).filter(|&k| routines[k].is_empty()).collect();
        let mut changed = false;
        for body in routines.iter_mut() {
            let before = body.len();
            body.retain(|ins| match ins {
                Instruction::Call(k) => *k < p.routines().len() && !empty.contains(k),
                _ => true,
            });
            changed |= body.len() != before;
        }
        if !changed {
            break;
        }
    }
    routines
}

fn drop_uncalled(mut routines: Routines) -> Routines {
    let mut reachable = HashSet::from([0usize]);
    let mut stack = vec![0usize];
    while let Some(r) = stack.pop() {
        for ins in &routines[r] {
            if let Instruction::Call(k) = *ins {
                if k < routines.len() && reachable.insert(k) {
                    stack.push(k);
                }
            }
        }
    }
    for (k, body) in routines.iter_mut().enumerate() {
        if !reachable.contains(&k) {
            body.clear();
        }
    }
    routines
}

fn call_sites(routines: &Routines, k: usize) -> Vec<Site> {
    let mut sites = Vec::new();
    for (r, body) in routines.iter().enumerate() {
        for (i, ins) in body.iter().enumerate() {
            if *ins == Instruction::Call(k) {
                sites.push(Site { routine: r, index: i });
            }
        }
    }
    sites
}

fn inline_single_use(mut routines: Routines) -> Routines {
    loop {
        let target = (1..routines.len()).find_map(|k| {
            if routines[k].is_empty() {
                return None;
            }
            match call_sites(&routines, k).as_slice() {
                [site] if site.routine != k => Some((k, *site)),
                _ => None,
            }
        });
        let Some((k, site)) = target else {
            return routines;
        };
        let body = std::mem::take(&mut routines[k]);
        routines[site.routine].splice(site.index..=site.index, body);
    }
}

fn inline_trivial(mut routines: Routines) -> Routines {
    loop {
        let target = (1..routines.len())
            .find(|&k| routines[k].len() == 1 && routines[k][0] != Instruction::Call(k));
        let Some(k) = target else {
            return routines;
        };
        let ins = routines[k][0];
        routines[k].clear();
        for body in routines.iter_mut() {
            for slot in body.iter_mut() {
                if *slot == Instruction::Call(k) {
                    *slot = ins;
                }
            }
        }
    }
}

#[derive(Default)]
struct LastAction(Option<Site>);

impl ExecObserver for LastAction {
    fn on_action(&mut self, site: Site, _before: &WorldState, _after: &WorldState) {
        self.0 = Some(site);
    }
}

fn order_turn_light(task: &TaskSpec, p: &Program, budget: Budget) -> Routines {
    // The action that reaches the goal keeps its place: moving a turn
    // behind it would change the final orientation.
    let mut last = LastAction::default();
    execute_observed(task, p, budget, &mut last);
    let halting = last.0;

    let mut routines = p.routines().to_vec();
    for (r, body) in routines.iter_mut().enumerate() {
        loop {
            let mut swapped = false;
            for i in 0..body.len().saturating_sub(1) {
                let turn_then_light = matches!(body[i], Instruction::Act(a) if a.is_turn())
                    && body[i + 1] == Instruction::Act(Action::Light);
                if turn_then_light && halting != Some(Site { routine: r, index: i + 1 }) {
                    body.swap(i, i + 1);
                    swapped = true;
                }
            }
            if !swapped {
                break;
            }
        }
    }
    routines
}

#[derive(Default)]
struct EntryOrder(Vec<usize>);

impl ExecObserver for EntryOrder {
    fn on_enter(&mut self, _site: Site, callee: usize) {
        if !self.0.contains(&callee) {
            self.0.push(callee);
        }
    }
}

fn renumber(task: &TaskSpec, p: &Program, budget: Budget) -> Routines {
    let mut order = EntryOrder::default();
    execute_observed(task, p, budget, &mut order);
    let mut sequence = order.0;
    for k in 1..p.routines().len() {
        if !p.body(k).is_empty() && !sequence.contains(&k) {
            sequence.push(k);
        }
    }
    let mapping: HashMap<usize, usize> = sequence
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new + 1))
        .collect();
    let relabel = |body: &[Instruction]| -> Vec<Instruction> {
        body.iter()
            .map(|ins| match *ins {
                Instruction::Call(k) => Instruction::Call(*mapping.get(&k).unwrap_or(&k)),
                other => other,
            })
            .collect()
    };
    let slots = sequence.len().max(p.routines().len() - 1);
    let mut routines = vec![Vec::new(); slots + 1];
    routines[0] = relabel(p.main());
    for &old in &sequence {
        routines[mapping[&old]] = relabel(p.body(old));
    }
    routines
}
