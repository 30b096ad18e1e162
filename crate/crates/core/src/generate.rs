//! Expansion of solving traces into a corpus of hierarchical programs.
//!
//! Each trace yields its flat program, every greedy rewrite over a subset
//! of at most four repeated subsequences, self-recursive variants built from
//! periodic suffixes, and variants whose last subroutine call is cut short by
//! the goal. Every program is canonicalised and the corpus keeps one copy of
//! each canonical form.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::canon::canonicalize_with;
use crate::program::{execute, Budget, Instruction, Program, ProgramError, MAX_SUBROUTINES};
use crate::search::TraceSet;
use crate::task::{Action, TaskSpec};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("trace {trace_idx} produced more than {limit} programs")]
    Capacity { trace_idx: usize, limit: usize },
    #[error("trace {0} does not solve the task")]
    UnsolvedTrace(usize),
    #[error("no traces given")]
    Empty,
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// A repeated contiguous subsequence of a trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateSub {
    pub body: Vec<Action>,
    pub first_pos: usize,
}

/// Greedy left-to-right count of non-overlapping occurrences.
fn count_occurrences(trace: &[Action], body: &[Action]) -> usize {
    let mut n = 0;
    let mut i = 0;
    while i + body.len() <= trace.len() {
        if trace[i..].starts_with(body) {
            n += 1;
            i += body.len();
        } else {
            i += 1;
        }
    }
    n
}

/// All subsequences of length at least 2 that occur at least twice without
/// overlap, longest first, then by first occurrence, then by body.
pub fn candidate_subroutines(trace: &[Action]) -> Vec<CandidateSub> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for len in 2..=trace.len() / 2 {
        for start in 0..=trace.len() - len {
            let body = &trace[start..start + len];
            if seen.insert(body) && count_occurrences(trace, body) >= 2 {
                out.push(CandidateSub {
                    body: body.to_vec(),
                    first_pos: start,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.body
            .len()
            .cmp(&a.body.len())
            .then(a.first_pos.cmp(&b.first_pos))
            .then_with(|| a.body.cmp(&b.body))
    });
    out
}

type Routines = Vec<Vec<Instruction>>;

/// Replaces every non-overlapping run of `body` in every existing routine
/// by a call to a new routine, appends it, and returns its call-site count.
fn add_subroutine(routines: &mut Routines, body: &[Action]) -> usize {
    let id = routines.len();
    let pattern: Vec<Instruction> = body.iter().map(|&a| Instruction::Act(a)).collect();
    let mut sites = 0;
    for r in routines.iter_mut() {
        if r.len() < pattern.len() {
            continue;
        }
        let mut out = Vec::with_capacity(r.len());
        let mut i = 0;
        while i < r.len() {
            if r[i..].starts_with(&pattern) {
                out.push(Instruction::Call(id));
                sites += 1;
                i += pattern.len();
            } else {
                out.push(r[i]);
                i += 1;
            }
        }
        *r = out;
    }
    routines.push(pattern);
    sites
}

/// Renumbers subroutines in order of first use in a preorder walk from main.
fn number_by_first_use(routines: &Routines) -> Program {
    fn visit(routines: &Routines, r: usize, order: &mut Vec<usize>) {
        for ins in &routines[r] {
            if let Instruction::Call(k) = *ins {
                if !order.contains(&k) {
                    order.push(k);
                    visit(routines, k, order);
                }
            }
        }
    }
    let mut order = Vec::new();
    visit(routines, 0, &mut order);
    let mut new_index = vec![0; routines.len()];
    for (i, &old) in order.iter().enumerate() {
        new_index[old] = i + 1;
    }
    let relabel = |body: &Vec<Instruction>| -> Vec<Instruction> {
        body.iter()
            .map(|ins| match *ins {
                Instruction::Call(k) => Instruction::Call(new_index[k]),
                other => other,
            })
            .collect()
    };
    let mut out = vec![relabel(&routines[0])];
    out.extend(order.iter().map(|&old| relabel(&routines[old])));
    Program::from_routines(out)
}

/// Greedy rewrite of `trace` with the chosen subroutines, applied in the
/// given order. `None` if some subroutine ends up with fewer than two call
/// sites or more than four are requested.
pub fn rewrite_with(trace: &[Action], chosen: &[CandidateSub]) -> Option<Program> {
    if chosen.len() > MAX_SUBROUTINES {
        return None;
    }
    let mut routines = vec![trace.iter().map(|&a| Instruction::Act(a)).collect()];
    for c in chosen {
        if add_subroutine(&mut routines, &c.body) < 2 {
            return None;
        }
    }
    Some(number_by_first_use(&routines))
}


/// Depth-first enumeration of accepted subsets of `cands`, taken in list
/// order, starting from the flat routine `trace`. Adding a later candidate
/// never changes the call sites of earlier ones, so a rejected subset has no
/// accepted extension. With `mandatory`, only subsets containing that
/// candidate are emitted.
fn enumerate_subsets(
    trace: &[Action],
    cands: &[CandidateSub],
    max_subs: usize,
    mandatory: Option<usize>,
    emit: &mut dyn FnMut(Program) -> Result<(), GenerateError>,
) -> Result<(), GenerateError> {
    fn go(
        cands: &[CandidateSub],
        max_subs: usize,
        start: usize,
        routines: &Routines,
        mandatory: Option<usize>,
        has_mandatory: bool,
        emit: &mut dyn FnMut(Program) -> Result<(), GenerateError>,
    ) -> Result<(), GenerateError> {
        if has_mandatory {
            emit(number_by_first_use(routines))?;
        }
        if routines.len() > max_subs {
            return Ok(());
        }
        for (i, c) in cands.iter().enumerate().skip(start) {
            if !has_mandatory && mandatory.is_some_and(|m| i > m) {
                break;
            }
            let mut next = routines.clone();
            if add_subroutine(&mut next, &c.body) >= 2 {
                go(cands, max_subs, i + 1, &next, mandatory, has_mandatory || mandatory == Some(i), emit)?;
            }
        }
        Ok(())
    }
    let root = vec![trace.iter().map(|&a| Instruction::Act(a)).collect()];
    go(cands, max_subs, 0, &root, mandatory, mandatory.is_none(), emit)
}

/// Every accepted greedy rewrite of `trace`, the flat program first.
pub fn plain_rewrites(trace: &[Action], cands: &[CandidateSub]) -> Vec<Program> {
    let mut out = Vec::new();
    let _ = enumerate_subsets(trace, cands, MAX_SUBROUTINES, None, &mut |p| {
        out.push(p);
        Ok(())
    });
    out
}

fn final_state_of(task: &TaskSpec, trace: &[Action], budget: Budget) -> Option<crate::task::WorldState> {
    let r = execute(task, &Program::flat(trace), budget);
    (r.solved() && r.steps() == trace.len()).then_some(r.final_state)
}

fn reproduces(task: &TaskSpec, p: &Program, target: &crate::task::WorldState, steps: usize, budget: Budget) -> bool {
    let r = execute(task, p, budget);
    r.solved() && r.final_state == *target && r.steps() == steps
}

/// Programs `prefix p1` with `p1 = period p1`, for every periodic suffix of
/// `trace`. The last repetition may be cut short by the goal.
pub fn recursive_variants(trace: &[Action], task: &TaskSpec, budget: Budget) -> Vec<Program> {
    let Some(target) = final_state_of(task, trace, budget) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for k in 0..trace.len() {
        let suffix = &trace[k..];
        for period in 1..=suffix.len() {
            if (period..suffix.len()).any(|i| suffix[i] != suffix[i - period]) {
                continue;
            }
            let mut main: Vec<Instruction> = trace[..k].iter().map(|&a| a.into()).collect();
            main.push(Instruction::Call(1));
            let mut body: Vec<Instruction> = suffix[..period].iter().map(|&a| a.into()).collect();
            body.push(Instruction::Call(1));
            let p = Program::new(main, vec![body]);
            if reproduces(task, &p, &target, trace.len(), budget) {
                out.push(p);
            }
        }
    }
    out
}

/// Rewrites of `trace` extended past the goal so that its tail completes a
/// candidate subroutine. The subroutine is always among the chosen ones and
/// execution stops inside its last call.
pub fn postgoal_variants(
    trace: &[Action],
    cands: &[CandidateSub],
    task: &TaskSpec,
    budget: Budget,
) -> Vec<Program> {
    postgoal_variants_with(trace, cands, task, budget, MAX_SUBROUTINES)
}

fn postgoal_variants_with(
    trace: &[Action],
    cands: &[CandidateSub],
    task: &TaskSpec,
    budget: Budget,
    max_subs: usize,
) -> Vec<Program> {
    let Some(target) = final_state_of(task, trace, budget) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (si, s) in cands.iter().enumerate() {
        for plen in 1..s.body.len() {
            if !trace.ends_with(&s.body[..plen]) {
                continue;
            }
            let mut extended = trace.to_vec();
            extended.extend_from_slice(&s.body[plen..]);
            let _ = enumerate_subsets(&extended, cands, max_subs, Some(si), &mut |p| {
                if reproduces(task, &p, &target, trace.len(), budget) {
                    out.push(p);
                }
                Ok(())
            });
        }
    }
    out
}

/// How a corpus program was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Plain,
    Recursive,
    Postgoal,
    /// Supplied from outside the generator, e.g. a participant's program.
    Observed,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Plain => "plain",
            Origin::Recursive => "recursive",
            Origin::Postgoal => "postgoal",
            Origin::Observed => "observed",
        }
    }

    pub fn parse(s: &str) -> Option<Origin> {
        match s {
            "plain" => Some(Origin::Plain),
            "recursive" => Some(Origin::Recursive),
            "postgoal" => Some(Origin::Postgoal),
            "observed" => Some(Origin::Observed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub program: Program,
    pub length: usize,
    pub steps: usize,
    pub origin: Origin,
    /// Index of the trace that first produced the program.
    pub trace_idx: Option<usize>,
}

/// Distinct canonical programs for one task, in generation order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    task_id: String,
    entries: Vec<CorpusEntry>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(task_id: impl Into<String>) -> Self {
        Corpus {
            task_id: task_id.into(),
            ..Corpus::default()
        }
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, p: &Program) -> Option<usize> {
        self.index.get(&p.to_string()).copied()
    }

    /// Adds an entry unless an identical program is present; returns its index.
    pub fn insert(&mut self, entry: CorpusEntry) -> usize {
        let key = entry.program.to_string();
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        self.entries.push(entry);
        self.index.insert(key, self.entries.len() - 1);
        self.entries.len() - 1
    }

    /// Canonicalises `p` and adds it if missing. Returns its index.
    pub fn union_observed(&mut self, task: &TaskSpec, p: &Program, budget: Budget) -> Result<usize, GenerateError> {
        let (c, _) = canonicalize_with(task, p, budget)?;
        if let Some(i) = self.position(&c) {
            return Ok(i);
        }
        let steps = execute(task, &c, budget).steps();
        Ok(self.insert(CorpusEntry {
            length: c.length(),
            steps,
            program: c,
            origin: Origin::Observed,
            trace_idx: None,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusConfig {
    pub max_programs_per_trace: usize,
    /// At most [`MAX_SUBROUTINES`].
    pub max_subroutines: usize,
    pub budget: Budget,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            max_programs_per_trace: 20_000,
            max_subroutines: MAX_SUBROUTINES,
            budget: Budget::default(),
        }
    }
}

/// Canonical programs derived from a single trace, without duplicates.
pub fn expand_trace(
    task: &TaskSpec,
    trace: &[Action],
    trace_idx: usize,
    cfg: &CorpusConfig,
) -> Result<Vec<CorpusEntry>, GenerateError> {
    if final_state_of(task, trace, cfg.budget).is_none() {
        return Err(GenerateError::UnsolvedTrace(trace_idx));
    }
    let max_subs = cfg.max_subroutines.min(MAX_SUBROUTINES);
    let cands = candidate_subroutines(trace);
    let mut raw_seen = HashSet::new();
    let mut canon_seen = HashSet::new();
    let mut out = Vec::new();
    let mut add = |p: Program, origin: Origin| -> Result<(), GenerateError> {
        if !raw_seen.insert(p.to_string()) {
            return Ok(());
        }
        let (c, _) = canonicalize_with(task, &p, cfg.budget)?;
        if canon_seen.insert(c.to_string()) {
            if canon_seen.len() > cfg.max_programs_per_trace {
                return Err(GenerateError::Capacity {
                    trace_idx,
                    limit: cfg.max_programs_per_trace,
                });
            }
            let steps = execute(task, &c, cfg.budget).steps();
            out.push(CorpusEntry {
                length: c.length(),
                steps,
                program: c,
                origin,
                trace_idx: Some(trace_idx),
            });
        }
        Ok(())
    };
    enumerate_subsets(trace, &cands, max_subs, None, &mut |p| add(p, Origin::Plain))?;
    if max_subs > 0 {
        for p in recursive_variants(trace, task, cfg.budget) {
            add(p, Origin::Recursive)?;
        }
    }
    for p in postgoal_variants_with(trace, &cands, task, cfg.budget, max_subs) {
        add(p, Origin::Postgoal)?;
    }
    Ok(out)
}

/// Expands every trace (in parallel) and merges the results in trace order.
pub fn build_corpus(task: &TaskSpec, traces: &TraceSet, cfg: &CorpusConfig) -> Result<Corpus, GenerateError> {
    if traces.traces.is_empty() {
        return Err(GenerateError::Empty);
    }
    let per_trace: Vec<Vec<CorpusEntry>> = traces
        .traces
        .par_iter()
        .enumerate()
        .map(|(i, t)| expand_trace(task, t, i, cfg))
        .collect::<Result<_, _>>()?;
    let mut corpus = Corpus::new(task.id());
    for entry in per_trace.into_iter().flatten() {
        corpus.insert(entry);
    }
    Ok(corpus)
}
