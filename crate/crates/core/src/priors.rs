//! Priors over programs and the approximate posterior over a corpus.
//!
//! Three unnormalised log priors are provided: step cost (minus the number
//! of executed actions), description length (minus the instruction count)
//! and the grammar-induction prior, which is the exact probability that the
//! generative process in [`sample_program`] emits the program. Under that
//! process bodies have geometric length, each instruction is a call with
//! probability `p_call` and otherwise a uniformly chosen action, and call
//! targets follow a Chinese restaurant process with concentration `alpha`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::generate::Corpus;
use crate::program::{execute, Budget, Instruction, Program};
use crate::task::{Action, TaskSpec};

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("program does not solve the task")]
    NotSolved,
    #[error("subroutine p{0} is defined but never called")]
    UncalledSubroutine(usize),
    #[error("call to p{0}, which has no body")]
    Structure(usize),
    #[error("{0}")]
    Domain(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sampled program exceeded {0} instructions")]
    Budget(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrammarParams {
    pub alpha: f64,
    pub p_call: f64,
    pub p_end: f64,
}

impl GrammarParams {
    pub fn new(alpha: f64, p_call: f64, p_end: f64) -> Result<Self, PriorError> {
        let g = GrammarParams { alpha, p_call, p_end };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let prob = |x: f64| x > 0.0 && x < 1.0;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(PriorError::InvalidParams(format!("alpha = {}", self.alpha)));
        }
        if !prob(self.p_call) || !prob(self.p_end) {
            return Err(PriorError::InvalidParams(format!(
                "p_call = {}, p_end = {}",
                self.p_call, self.p_end
            )));
        }
        Ok(())
    }

    fn action_logprob(&self) -> f64 {
        ((1.0 - self.p_call) / Action::ALL.len() as f64).ln()
    }
}

pub fn step_cost_logprior(p: &Program, task: &TaskSpec, budget: Budget) -> Result<f64, PriorError> {
    let r = execute(task, p, budget);
    if !r.solved() {
        return Err(PriorError::NotSolved);
    }
    Ok(-(r.steps() as f64))
}

pub fn mdl_logprior(p: &Program) -> f64 {
    -(p.length() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpChoice {
    New,
    Reuse(usize),
}

/// Log probability of the next call target given the call counts so far.
/// `n` is the total number of calls so far.
pub fn dp_call_logprob(counts: &[u64], n: u64, choice: DpChoice, alpha: f64) -> Result<f64, PriorError> {
    let denom = n as f64 + alpha;
    match choice {
        DpChoice::New => Ok((alpha / denom).ln()),
        DpChoice::Reuse(k) => match counts.get(k) {
            Some(&c) if c > 0 => Ok((c as f64 / denom).ln()),
            _ => Err(PriorError::Domain(format!("reuse of unseen subroutine p{k}"))),
        },
    }
}

fn body_logprob(len: usize, p_end: f64) -> f64 {
    if len == 0 {
        return f64::NEG_INFINITY;
    }
    p_end.ln() + (len - 1) as f64 * (1.0 - p_end).ln()
}

enum Visit<'a> {
    /// A body is about to be generated.
    Body(usize),
    Action,
    /// A call, with the counts and total calls before it.
    Call(DpChoice, &'a [u64], u64),
}

/// Visits a program in generation order: main left to right, entering a
/// subroutine's body at its first call. The callee is counted before its
/// body is visited, so self-calls inside it are reuses.
fn walk_generation_order(p: &Program, mut visit: impl FnMut(Visit<'_>)) -> Result<(), PriorError> {
    let routines = p.routines();
    let mut counts = vec![0u64; routines.len()];
    let mut n = 0u64;
    visit(Visit::Body(0));
    let mut stack = vec![(0usize, 0usize)];
    while let Some(top) = stack.last_mut() {
        let (r, i) = *top;
        if i == routines[r].len() {
            stack.pop();
            continue;
        }
        top.1 += 1;
        match routines[r][i] {
            Instruction::Act(_) => visit(Visit::Action),
            Instruction::Call(k) => {
                if k == 0 || k >= routines.len() || routines[k].is_empty() {
                    return Err(PriorError::Structure(k));
                }
                if counts[k] == 0 {
                    visit(Visit::Call(DpChoice::New, &counts, n));
                    counts[k] = 1;
                    n += 1;
                    visit(Visit::Body(k));
                    stack.push((k, 0));
                } else {
                    visit(Visit::Call(DpChoice::Reuse(k), &counts, n));
                    counts[k] += 1;
                    n += 1;
                }
            }
        }
    }
    match (1..routines.len()).find(|&k| !routines[k].is_empty() && counts[k] == 0) {
        Some(k) => Err(PriorError::UncalledSubroutine(k)),
        None => Ok(()),
    }
}

/// Exact log probability that [`sample_program`] generates `p` (up to the
/// labelling of subroutines). An empty `main` has probability zero.
pub fn grammar_logprior(p: &Program, g: &GrammarParams) -> Result<f64, PriorError> {
    g.validate()?;
    let action = g.action_logprob();
    let call = g.p_call.ln();
    let mut total = 0.0;
    let mut dp_error = None;
    walk_generation_order(p, |v| match v {
        Visit::Body(r) => total += body_logprob(p.body(r).len(), g.p_end),
        Visit::Action => total += action,
        Visit::Call(choice, counts, n) => match dp_call_logprob(counts, n, choice, g.alpha) {
            Ok(lp) => total += call + lp,
            Err(e) => dp_error = Some(e),
        },
    })?;
    match dp_error {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// Sufficient statistics of a program for the grammar prior. The prior is
/// `B·ln p_end + (I−B)·ln(1−p_end) + A·ln((1−p_call)/5) + C·ln p_call
/// + m·ln α + R − Σ_{j<C} ln(j+α)`, with `R` the summed log counts at reuses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrammarFeatures {
    pub bodies: u32,
    pub instructions: u32,
    pub actions: u32,
    pub calls: u32,
    pub new_subs: u32,
    pub reuse_log_counts: f64,
    /// Set when `main` is empty.
    pub empty_main: bool,
}

impl GrammarFeatures {
    pub fn of(p: &Program) -> Result<Self, PriorError> {
        let mut f = GrammarFeatures {
            bodies: 0,
            instructions: 0,
            actions: 0,
            calls: 0,
            new_subs: 0,
            reuse_log_counts: 0.0,
            empty_main: p.main().is_empty(),
        };
        walk_generation_order(p, |v| match v {
            Visit::Body(r) => {
                f.bodies += 1;
                f.instructions += p.body(r).len() as u32;
            }
            Visit::Action => f.actions += 1,
            Visit::Call(DpChoice::New, _, _) => {
                f.calls += 1;
                f.new_subs += 1;
            }
            Visit::Call(DpChoice::Reuse(k), counts, _) => {
                f.calls += 1;
                f.reuse_log_counts += (counts[k] as f64).ln();
            }
        })?;
        Ok(f)
    }

    pub fn logprior(&self, g: &GrammarParams) -> f64 {
        if self.empty_main {
            return f64::NEG_INFINITY;
        }
        let b = self.bodies as f64;
        let dp_norm = ln_gamma(self.calls as f64 + g.alpha) - ln_gamma(g.alpha);
        b * g.p_end.ln()
            + (self.instructions as f64 - b) * (1.0 - g.p_end).ln()
            + self.actions as f64 * g.action_logprob()
            + self.calls as f64 * g.p_call.ln()
            + self.new_subs as f64 * g.alpha.ln()
            + self.reuse_log_counts
            - dp_norm
    }
}

/// Default cap on the number of instructions in a sampled program.
pub const DEFAULT_SAMPLE_CAP: usize = 10_000;

/// Draws a program from the grammar prior. A subroutine's body is generated
/// completely at its first call, before the calling body continues.
/// Subroutines are numbered in order of creation and are not capped at four.
pub fn sample_program_with<R: Rng + ?Sized>(
    g: &GrammarParams,
    rng: &mut R,
    max_instructions: usize,
) -> Result<Program, PriorError> {
    g.validate()?;
    let mut routines: Vec<Vec<Instruction>> = vec![Vec::new()];
    let mut counts: Vec<u64> = vec![0];
    let mut n = 0u64;
    let mut total = 0usize;
    // (routine, whether the stop decision is due before the next instruction)
    let mut stack = vec![(0usize, false)];
    while let Some(top) = stack.last_mut() {
        let r = top.0;
        if top.1 {
            top.1 = false;
            if rng.random::<f64>() < g.p_end {
                stack.pop();
                continue;
            }
        }
        top.1 = true;
        total += 1;
        if total > max_instructions {
            return Err(PriorError::Budget(max_instructions));
        }
        if rng.random::<f64>() < g.p_call {
            let mut u = rng.random::<f64>() * (n as f64 + g.alpha);
            let mut target = None;
            for (k, &c) in counts.iter().enumerate().skip(1) {
                if u < c as f64 {
                    target = Some(k);
                    break;
                }
                u -= c as f64;
            }
            n += 1;
            match target {
                Some(k) => {
                    counts[k] += 1;
                    routines[r].push(Instruction::Call(k));
                }
                None => {
                    let k = routines.len();
                    routines.push(Vec::new());
                    counts.push(1);
                    routines[r].push(Instruction::Call(k));
                    stack.push((k, false));
                }
            }
        } else {
            let a = Action::ALL[rng.random_range(0..Action::ALL.len())];
            routines[r].push(Instruction::Act(a));
        }
    }
    Ok(Program::from_routines(routines))
}

pub fn sample_program(g: &GrammarParams, seed: u64) -> Result<Program, PriorError> {
    let mut rng = crate::rng::named_stream(seed, "sampler/0");
    sample_program_with(g, &mut rng, DEFAULT_SAMPLE_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    RandomChoice,
    StepCost,
    Mdl,
    GrammarInduction,
    MdlStepCost,
    GrammarInductionStepCost,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::RandomChoice,
        ModelKind::Mdl,
        ModelKind::GrammarInduction,
        ModelKind::StepCost,
        ModelKind::MdlStepCost,
        ModelKind::GrammarInductionStepCost,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::RandomChoice => "random",
            ModelKind::StepCost => "step",
            ModelKind::Mdl => "mdl",
            ModelKind::GrammarInduction => "grammar",
            ModelKind::MdlStepCost => "mdl+step",
            ModelKind::GrammarInductionStepCost => "grammar+step",
        }
    }

    pub fn uses_step(&self) -> bool {
        matches!(
            self,
            ModelKind::StepCost | ModelKind::MdlStepCost | ModelKind::GrammarInductionStepCost
        )
    }

    pub fn uses_mdl(&self) -> bool {
        matches!(self, ModelKind::Mdl | ModelKind::MdlStepCost)
    }

    pub fn uses_grammar(&self) -> bool {
        matches!(self, ModelKind::GrammarInduction | ModelKind::GrammarInductionStepCost)
    }

    /// Names of the fitted parameters, in optimiser order. `p_end` is
    /// marginalised rather than fitted.
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.uses_grammar() {
            out.extend(["alpha", "beta_grammar", "p_call"]);
        }
        if self.uses_mdl() {
            out.push("beta_mdl");
        }
        if self.uses_step() {
            out.push("beta_step");
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_names().len()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = PriorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PriorError::InvalidParams(format!("unknown model `{s}`")))
    }
}

/// A model kind with its weights. Weights of unused components are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub beta_step: f64,
    pub beta_mdl: f64,
    pub beta_grammar: f64,
    pub grammar: Option<GrammarParams>,
}

impl ModelSpec {
    pub fn random() -> Self {
        ModelSpec {
            kind: ModelKind::RandomChoice,
            beta_step: 0.0,
            beta_mdl: 0.0,
            beta_grammar: 0.0,
            grammar: None,
        }
    }

    pub fn step_cost(beta: f64) -> Self {
        ModelSpec { kind: ModelKind::StepCost, beta_step: beta, ..Self::random() }
    }

    pub fn mdl(beta: f64) -> Self {
        ModelSpec { kind: ModelKind::Mdl, beta_mdl: beta, ..Self::random() }
    }

    pub fn grammar(beta: f64, g: GrammarParams) -> Self {
        ModelSpec {
            kind: ModelKind::GrammarInduction,
            beta_grammar: beta,
            grammar: Some(g),
            ..Self::random()
        }
    }

    pub fn mdl_step(beta_mdl: f64, beta_step: f64) -> Self {
        ModelSpec {
            kind: ModelKind::MdlStepCost,
            beta_mdl,
            beta_step,
            ..Self::random()
        }
    }

    pub fn grammar_step(beta_grammar: f64, g: GrammarParams, beta_step: f64) -> Self {
        ModelSpec {
            kind: ModelKind::GrammarInductionStepCost,
            beta_grammar,
            beta_step,
            grammar: Some(g),
            ..Self::random()
        }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let k = self.kind;
        let weights = [
            (self.beta_step, k.uses_step(), "beta_step"),
            (self.beta_mdl, k.uses_mdl(), "beta_mdl"),
            (self.beta_grammar, k.uses_grammar(), "beta_grammar"),
        ];
        for (w, used, name) in weights {
            if !(w >= 0.0 && w.is_finite()) || (!used && w != 0.0) {
                return Err(PriorError::InvalidParams(format!("{name} = {w} for model {k}")));
            }
        }
        match (k.uses_grammar(), &self.grammar) {
            (true, Some(g)) => g.validate(),
            (false, None) => Ok(()),
            _ => Err(PriorError::InvalidParams(format!("grammar parameters do not match model {k}"))),
        }
    }

    /// Fitted parameter values in the order of [`ModelKind::param_names`].
    pub fn param_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(g) = self.grammar.filter(|_| self.kind.uses_grammar()) {
            out.extend([g.alpha, self.beta_grammar, g.p_call]);
        }
        if self.kind.uses_mdl() {
            out.push(self.beta_mdl);
        }
        if self.kind.uses_step() {
            out.push(self.beta_step);
        }
        out
    }

    /// Rebuilds a model from values in [`ModelKind::param_names`] order.
    pub fn from_params(kind: ModelKind, values: &[f64], p_end: f64) -> Result<Self, PriorError> {
        if values.len() != kind.num_params() {
            return Err(PriorError::InvalidParams(format!(
                "{kind} takes {} parameters, got {}",
                kind.num_params(),
                values.len()
            )));
        }
        let mut spec = ModelSpec { kind, ..Self::random() };
        let mut it = values.iter().copied();
        if kind.uses_grammar() {
            let alpha = it.next().unwrap();
            spec.beta_grammar = it.next().unwrap();
            let p_call = it.next().unwrap();
            spec.grammar = Some(GrammarParams { alpha, p_call, p_end });
        }
        if kind.uses_mdl() {
            spec.beta_mdl = it.next().unwrap();
        }
        if kind.uses_step() {
            spec.beta_step = it.next().unwrap();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_p_end(mut self, p_end: f64) -> Self {
        if let Some(g) = self.grammar.as_mut() {
            g.p_end = p_end;
        }
        self
    }
}

/// Everything the model scores depend on, precomputed once per program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgramFeatures {
    pub steps: u32,
    pub length: u32,
    pub grammar: GrammarFeatures,
}

impl ProgramFeatures {
    pub fn of(p: &Program, task: &TaskSpec, budget: Budget) -> Result<Self, PriorError> {
        let steps = step_cost_logprior(p, task, budget)?;
        Ok(ProgramFeatures {
            steps: (-steps) as u32,
            length: p.length() as u32,
            grammar: GrammarFeatures::of(p)?,
        })
    }

    pub fn logscore(&self, m: &ModelSpec) -> f64 {
        let mut s = 0.0;
        if m.kind.uses_step() {
            s -= m.beta_step * self.steps as f64;
        }
        if m.kind.uses_mdl() {
            s -= m.beta_mdl * self.length as f64;
        }
        if let (true, Some(g)) = (m.kind.uses_grammar(), &m.grammar) {
            s += m.beta_grammar * self.grammar.logprior(g);
        }
        s
    }
}

/// Weighted log prior of a solving program under `m`.
pub fn model_logscore(p: &Program, task: &TaskSpec, m: &ModelSpec) -> Result<f64, PriorError> {
    m.validate()?;
    let mut s = 0.0;
    if m.kind.uses_step() {
        s += m.beta_step * step_cost_logprior(p, task, Budget::default())?;
    } else if !execute(task, p, Budget::default()).solved() {
        return Err(PriorError::NotSolved);
    }
    if m.kind.uses_mdl() {
        s += m.beta_mdl * mdl_logprior(p);
    }
    if let (true, Some(g)) = (m.kind.uses_grammar(), &m.grammar) {
        s += m.beta_grammar * grammar_logprior(p, g)?;
    }
    Ok(s)
}

/// `ln Σ exp(x)`, stable; `-inf` for an empty or all-`-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    pub log_scores: Vec<f64>,
    pub log_normalizer: f64,
    pub probs: Vec<f64>,
}

impl PosteriorTable {
    pub fn from_log_scores(log_scores: Vec<f64>) -> Result<Self, PriorError> {
        if log_scores.is_empty() {
            return Err(PriorError::EmptyCorpus);
        }
        let log_normalizer = logsumexp(&log_scores);
        if !log_normalizer.is_finite() {
            return Err(PriorError::Domain("corpus has no finite score".into()));
        }
        let probs = log_scores.iter().map(|s| (s - log_normalizer).exp()).collect();
        Ok(PosteriorTable { log_scores, log_normalizer, probs })
    }

    pub fn log_prob(&self, i: usize) -> f64 {
        self.log_scores[i] - self.log_normalizer
    }
}

pub fn posterior_over_corpus(corpus: &Corpus, task: &TaskSpec, m: &ModelSpec) -> Result<PosteriorTable, PriorError> {
    let scores = corpus
        .entries()
        .iter()
        .map(|e| model_logscore(&e.program, task, m))
        .collect::<Result<Vec<_>, _>>()?;
    PosteriorTable::from_log_scores(scores)
}
