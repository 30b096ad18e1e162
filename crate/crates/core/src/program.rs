//! Hierarchical programs: data model, text format, and goal-halting execution.
//!
//! A program is a `main` routine plus numbered subroutines `p1`, `p2`, ...
//! Lightbot programs have at most four subroutines; the data model admits
//! more so that unrestricted samples from the grammar prior can be scored.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::task::{Action, TaskSpec, WorldState};

/// Number of callable subroutine slots in a Lightbot program.
pub const MAX_SUBROUTINES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ProgramError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("program does not solve task `{0}`")]
    NotSolved(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Instruction {
    Act(Action),
    /// Call of subroutine `k`, `k >= 1`. Main (index 0) is never callable.
    Call(usize),
}

impl Instruction {
    pub fn token(&self) -> String {
        match self {
            Instruction::Act(a) => a.token().to_string(),
            Instruction::Call(k) => format!("p{k}"),
        }
    }

    pub fn action(&self) -> Option<Action> {
        match self {
            Instruction::Act(a) => Some(*a),
            Instruction::Call(_) => None,
        }
    }
}

impl From<Action> for Instruction {
    fn from(a: Action) -> Self {
        Instruction::Act(a)
    }
}

/// Parses a single instruction token (`walk`, ..., `p1`..`p4`).
pub fn parse_token(tok: &str) -> Result<Instruction, ProgramError> {
    if let Ok(a) = tok.parse::<Action>() {
        return Ok(Instruction::Act(a));
    }
    if let Some(rest) = tok.strip_prefix('p') {
        if let Ok(k) = rest.parse::<usize>() {
            if (1..=MAX_SUBROUTINES).contains(&k) {
                return Ok(Instruction::Call(k));
            }
            return Err(ProgramError::Parse(format!(
                "call `{tok}` outside p1..p{MAX_SUBROUTINES}"
            )));
        }
    }
    Err(ProgramError::Parse(format!("unknown token `{tok}`")))
}

/// A program: `routines[0]` is main, `routines[k]` is subroutine `pk`.
/// Trailing empty subroutines are not stored, so structurally equal
/// programs compare equal regardless of how many empty slots they name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Program {
    routines: Vec<Vec<Instruction>>,
}

impl Default for Program {
    fn default() -> Self {
        Program {
            routines: vec![Vec::new()],
        }
    }
}

impl Program {
    pub fn new(main: Vec<Instruction>, subs: Vec<Vec<Instruction>>) -> Self {
        let mut routines = Vec::with_capacity(subs.len() + 1);
        routines.push(main);
        routines.extend(subs);
        Self::from_routines(routines)
    }

    pub fn from_routines(mut routines: Vec<Vec<Instruction>>) -> Self {
        if routines.is_empty() {
            routines.push(Vec::new());
        }
        while routines.len() > 1 && routines.last().is_some_and(|r| r.is_empty()) {
            routines.pop();
        }
        Program { routines }
    }

    /// Flat program whose main is the given action sequence.
    pub fn flat(actions: &[Action]) -> Self {
        Program::new(actions.iter().map(|&a| a.into()).collect(), Vec::new())
    }

    pub fn main(&self) -> &[Instruction] {
        &self.routines[0]
    }

    /// Body of routine `k` (0 = main); missing subroutines are empty.
    pub fn body(&self, k: usize) -> &[Instruction] {
        self.routines.get(k).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn routines(&self) -> &[Vec<Instruction>] {
        &self.routines
    }

    pub fn into_routines(self) -> Vec<Vec<Instruction>> {
        self.routines
    }

    /// Highest subroutine slot in use.
    pub fn num_subroutine_slots(&self) -> usize {
        self.routines.len() - 1
    }

    /// Number of non-empty subroutines.
    pub fn num_defined_subroutines(&self) -> usize {
        self.routines[1..].iter().filter(|r| !r.is_empty()).count()
    }

    /// True when the program fits in the four Lightbot subroutine slots.
    pub fn fits_lightbot(&self) -> bool {
        self.num_subroutine_slots() <= MAX_SUBROUTINES
            && self
                .routines
                .iter()
                .flatten()
                .all(|i| !matches!(i, Instruction::Call(k) if *k > MAX_SUBROUTINES || *k == 0))
    }

    /// Total instruction count over all routines; a call counts as one.
    pub fn length(&self) -> usize {
        self.routines.iter().map(Vec::len).sum()
    }

    /// Static call sites of each routine, indexed by routine.
    pub fn call_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.routines.len()];
        for ins in self.routines.iter().flatten() {
            if let Instruction::Call(k) = *ins {
                if k >= counts.len() {
                    counts.resize(k + 1, 0);
                }
                counts[k] += 1;
            }
        }
        counts
    }

    pub fn is_empty(&self) -> bool {
        self.length() == 0
    }

    /// Builds a program from a token map such as `{"main": [...], "p1": [...]}`.
    pub fn from_token_map(map: &BTreeMap<String, Vec<String>>) -> Result<Self, ProgramError> {
        let mut routines = vec![Vec::new(); MAX_SUBROUTINES + 1];
        let mut saw_main = false;
        for (name, toks) in map {
            let slot = routine_slot(name)?;
            saw_main |= slot == 0;
            routines[slot] = toks
                .iter()
                .map(|t| parse_token(t))
                .collect::<Result<_, _>>()?;
        }
        if !saw_main {
            return Err(ProgramError::Parse("missing `main`".into()));
        }
        Ok(Program::from_routines(routines))
    }

    pub fn to_token_map(&self) -> BTreeMap<String, Vec<String>> {
        self.routines
            .iter()
            .enumerate()
            .filter(|(k, r)| *k == 0 || !r.is_empty())
            .map(|(k, r)| (routine_name(k), r.iter().map(Instruction::token).collect()))
            .collect()
    }
}

fn routine_slot(name: &str) -> Result<usize, ProgramError> {
    if name == "main" {
        return Ok(0);
    }
    match name.strip_prefix('p').and_then(|r| r.parse::<usize>().ok()) {
        Some(k) if (1..=MAX_SUBROUTINES).contains(&k) => Ok(k),
        _ => Err(ProgramError::Parse(format!("unknown routine `{name}`"))),
    }
}

pub fn routine_name(k: usize) -> String {
    if k == 0 {
        "main".to_string()
    } else {
        format!("p{k}")
    }
}

/// Parses the line-oriented program text format.
pub fn parse_program(text: &str) -> Result<Program, ProgramError> {
    let mut routines = vec![Vec::new(); MAX_SUBROUTINES + 1];
    let mut seen = [false; MAX_SUBROUTINES + 1];
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (head, rest) = line
            .split_once(':')
            .ok_or_else(|| ProgramError::Parse(format!("expected `name: tokens`, got `{line}`")))?;
        let slot = routine_slot(head.trim())?;
        if seen[slot] {
            return Err(ProgramError::Parse(format!("`{}` defined twice", head.trim())));
        }
        seen[slot] = true;
        routines[slot] = rest
            .split_whitespace()
            .map(parse_token)
            .collect::<Result<_, _>>()?;
    }
    if !seen[0] {
        return Err(ProgramError::Parse("missing `main:` line".into()));
    }
    Ok(Program::from_routines(routines))
}

/// Canonical text: `main` first, then non-empty subroutines in index order.
pub fn serialize_program(p: &Program) -> String {
    let mut out = String::new();
    for (k, body) in p.routines.iter().enumerate() {
        if k > 0 && body.is_empty() {
            continue;
        }
        out.push_str(&routine_name(k));
        out.push(':');
        for ins in body {
            out.push(' ');
            out.push_str(&ins.token());
        }
        out.push('\n');
    }
    out
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_program(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub max_steps: usize,
    pub max_depth: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_steps: 10_000,
            max_depth: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Solved,
    NotSolved,
    NonHalting,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub outcome: Outcome,
    pub trace: Vec<Action>,
    pub final_state: WorldState,
}

impl ExecutionResult {
    pub fn steps(&self) -> usize {
        self.trace.len()
    }

    pub fn solved(&self) -> bool {
        self.outcome == Outcome::Solved
    }
}

/// Position of an instruction: routine index and offset within its body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub routine: usize,
    pub index: usize,
}

/// Hooks invoked during execution, in execution order.
pub trait ExecObserver {
    fn on_action(&mut self, _site: Site, _before: &WorldState, _after: &WorldState) {}
    fn on_enter(&mut self, _site: Site, _callee: usize) {}
    fn on_exit(&mut self, _callee: usize) {}
}

impl ExecObserver for () {}

pub fn execute(task: &TaskSpec, p: &Program, budget: Budget) -> ExecutionResult {
    execute_observed(task, p, budget, &mut ())
}

/// Runs `p` from the task's initial state. Execution halts as soon as an
/// action produces a goal state; that action is the last entry of the trace.
/// Every executed primitive counts as a step, whether or not it changes
/// the state.
pub fn execute_observed<O: ExecObserver>(
    task: &TaskSpec,
    p: &Program,
    budget: Budget,
    obs: &mut O,
) -> ExecutionResult {
    let mut state = task.initial_state();
    let mut trace = Vec::new();
    // (routine, next instruction offset)
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];

    let outcome = loop {
        let Some(frame) = stack.last_mut() else {
            break Outcome::NotSolved;
        };
        let (routine, pc) = *frame;
        let body = p.body(routine);
        if pc >= body.len() {
            stack.pop();
            if routine != 0 {
                obs.on_exit(routine);
            }
            continue;
        }
        frame.1 += 1;
        let site = Site { routine, index: pc };
        match body[pc] {
            Instruction::Act(a) => {
                if trace.len() >= budget.max_steps {
                    break Outcome::NonHalting;
                }
                let next = task.apply_action(&state, a);
                obs.on_action(site, &state, &next);
                trace.push(a);
                state = next;
                if task.is_goal(&state) {
                    break Outcome::Solved;
                }
            }
            Instruction::Call(k) => {
                if stack.len() > budget.max_depth {
                    break Outcome::NonHalting;
                }
                obs.on_enter(site, k);
                stack.push((k, 0));
            }
        }
    };

    ExecutionResult {
        outcome,
        trace,
        final_state: state,
    }
}

/// Executes and returns the result only if the program solves the task.
pub fn execute_solved(task: &TaskSpec, p: &Program, budget: Budget) -> Result<ExecutionResult, ProgramError> {
    let r = execute(task, p, budget);
    if r.solved() {
        Ok(r)
    } else {
        Err(ProgramError::NotSolved(task.id().to_string()))
    }
}
