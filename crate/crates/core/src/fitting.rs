//! Maximum-likelihood fitting of prior weights to observed programs, model
//! comparison statistics, and per-task variability summaries.
//!
//! The likelihood of a dataset is the product over observations of the
//! posterior probability of the observed program within its task's corpus.
//! For grammar models the body-length parameter `p_end` is not fitted: the
//! total likelihood is averaged over a uniform grid of values.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::canon::canonicalize_with;
use crate::generate::{Corpus, CorpusEntry};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::priors::{logsumexp, GrammarFeatures, ModelKind, ModelSpec, PosteriorTable, PriorError, ProgramFeatures};
use crate::program::{Budget, Program, ProgramError};
use crate::rng::named_stream;
use crate::task::TaskSpec;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("dataset line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("record {record} ({participant}, task {task}): {msg}")]
    InvalidRecord {
        record: usize,
        participant: String,
        task: String,
        msg: String,
    },
    /// `record` is 1-based, matching dataset line numbers for files without blank lines.
    #[error("record {record}: program for task {task} is missing from the corpus")]
    MissingProgram { record: usize, task: String },
    #[error("distributions have different supports ({0} vs {1})")]
    SupportMismatch(usize, usize),
    #[error("dataset is empty")]
    EmptyData,
    #[error("no restart produced a finite likelihood for model {0}")]
    Optimization(ModelKind),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub participant: String,
    pub task: String,
    pub program: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub rt_seconds: Option<f64>,
    #[serde(default)]
    pub n_evals: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub participant: String,
    pub task: String,
    pub program: Program,
    pub rt_seconds: Option<f64>,
    pub n_evals: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Observation>,
}

impl Dataset {
    /// Parses one JSON record per non-empty line.
    pub fn from_jsonl(text: &str) -> Result<Self, FitError> {
        let mut observations = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| FitError::Parse { line: i + 1, msg };
            let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let program = Program::from_token_map(&rec.program).map_err(|e| parse_err(e.to_string()))?;
            observations.push(Observation {
                participant: rec.participant,
                task: rec.task,
                program,
                rt_seconds: rec.rt_seconds,
                n_evals: rec.n_evals,
            });
        }
        Ok(Dataset { observations })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for o in &self.observations {
            let rec = DatasetRecord {
                participant: o.participant.clone(),
                task: o.task.clone(),
                program: o.program.to_token_map(),
                rt_seconds: o.rt_seconds,
                n_evals: o.n_evals,
            };
            out.push_str(&serde_json::to_string(&rec).expect("records serialise"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Replaces every program by its canonical form, checking that it solves
    /// its task.
    pub fn canonicalize(&mut self, tasks: &HashMap<String, TaskSpec>, budget: Budget) -> Result<(), FitError> {
        for (i, o) in self.observations.iter_mut().enumerate() {
            let invalid = |msg: String| FitError::InvalidRecord {
                record: i,
                participant: o.participant.clone(),
                task: o.task.clone(),
                msg,
            };
            let task = tasks.get(&o.task).ok_or_else(|| invalid("unknown task".into()))?;
            let (c, _) = canonicalize_with(task, &o.program, budget).map_err(|e: ProgramError| invalid(e.to_string()))?;
            o.program = c;
        }
        Ok(())
    }
}

/// Nine-point default grid for `p_end`.
pub fn default_pend_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

type FeatureKey = (u32, u32, u32, u32, u32, u32, u32, u64, bool);

fn key(f: &ProgramFeatures) -> FeatureKey {
    let g = &f.grammar;
    (
        f.steps,
        f.length,
        g.bodies,
        g.instructions,
        g.actions,
        g.calls,
        g.new_subs,
        g.reuse_log_counts.to_bits(),
        g.empty_main,
    )
}

pub fn entry_features(e: &CorpusEntry) -> Result<ProgramFeatures, PriorError> {
    Ok(ProgramFeatures {
        steps: e.steps as u32,
        length: e.length as u32,
        grammar: GrammarFeatures::of(&e.program)?,
    })
}

/// Compressed form of one task's corpus and observations: distinct feature
/// tuples with log multiplicities (corpus) and counts (observations).
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task: String,
    pub corpus: Vec<(ProgramFeatures, f64)>,
    pub observed: Vec<(ProgramFeatures, f64)>,
    pub n_obs: usize,
    /// Observation count per corpus index.
    pub program_counts: Vec<usize>,
}

impl TaskData {
    fn loglik(&self, m: &ModelSpec) -> f64 {
        let log_z = logsumexp(&self.corpus.iter().map(|(f, lw)| f.logscore(m) + lw).collect::<Vec<_>>());
        let hits: f64 = self.observed.iter().map(|(f, n)| n * f.logscore(m)).sum();
        hits - self.n_obs as f64 * log_z
    }

    /// Posterior over the task's corpus entries in corpus order.
    pub fn posterior(&self, corpus: &Corpus, m: &ModelSpec) -> Result<PosteriorTable, FitError> {
        let scores = corpus
            .entries()
            .iter()
            .map(|e| entry_features(e).map(|f| f.logscore(m)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PosteriorTable::from_log_scores(scores)?)
    }
}

/// Observations matched against corpora, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct FitData {
    pub tasks: Vec<TaskData>,
    pub n: usize,
    pub pend_grid: Vec<f64>,
}

impl FitData {
    /// `data` must already be canonical and every observed program present
    /// in its task's corpus. Tasks are ordered by id.
    pub fn new(data: &Dataset, corpora: &BTreeMap<String, Corpus>, pend_grid: Vec<f64>) -> Result<Self, FitError> {
        if data.is_empty() {
            return Err(FitError::EmptyData);
        }
        let mut per_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, o) in data.observations.iter().enumerate() {
            let corpus = corpora.get(&o.task).ok_or_else(|| FitError::MissingProgram {
                record: i + 1,
                task: o.task.clone(),
            })?;
            let idx = corpus.position(&o.program).ok_or_else(|| FitError::MissingProgram {
                record: i + 1,
                task: o.task.clone(),
            })?;
            per_task.entry(o.task.as_str()).or_default().push(idx);
        }
        let mut tasks = Vec::new();
        for (task, idxs) in per_task {
            let corpus = &corpora[task];
            let feats = corpus
                .entries()
                .iter()
                .map(entry_features)
                .collect::<Result<Vec<_>, _>>()?;
            let mut program_counts = vec![0usize; corpus.len()];
            for &i in &idxs {
                program_counts[i] += 1;
            }
            tasks.push(TaskData {
                task: task.to_string(),
                corpus: compress(feats.iter().map(|f| (*f, 1.0)), true),
                observed: compress(
                    program_counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (feats[i], c as f64)),
                    false,
                ),
                n_obs: idxs.len(),
                program_counts,
            });
        }
        Ok(FitData { tasks, n: data.len(), pend_grid })
    }

    /// Log likelihood at fixed parameters (including `p_end`).
    pub fn loglik_fixed(&self, m: &ModelSpec) -> f64 {
        self.tasks.iter().map(|t| t.loglik(m)).sum()
    }

    /// Per-grid-point total log likelihoods; a single entry for models
    /// without grammar parameters.
    pub fn grid_logliks(&self, m: &ModelSpec) -> Vec<f64> {
        if m.kind.uses_grammar() {
            self.pend_grid.iter().map(|&pe| self.loglik_fixed(&m.with_p_end(pe))).collect()
        } else {
            vec![self.loglik_fixed(m)]
        }
    }

    /// Grid value of `p_end` with the highest total likelihood.
    pub fn best_p_end(&self, m: &ModelSpec) -> Option<f64> {
        if !m.kind.uses_grammar() {
            return None;
        }
        let lls = self.grid_logliks(m);
        let best = (0..lls.len()).max_by(|&a, &b| lls[a].total_cmp(&lls[b]).then(b.cmp(&a)))?;
        Some(self.pend_grid[best])
    }
}

/// Merges identical feature tuples, summing weights. With `log_weights`
/// the summed weight is returned as its logarithm.
fn compress(items: impl Iterator<Item = (ProgramFeatures, f64)>, log_weights: bool) -> Vec<(ProgramFeatures, f64)> {
    let mut order: Vec<FeatureKey> = Vec::new();
    let mut merged: HashMap<FeatureKey, (ProgramFeatures, f64)> = HashMap::new();
    for (f, w) in items {
        let k = key(&f);
        merged
            .entry(k)
            .and_modify(|e| e.1 += w)
            .or_insert_with(|| {
                order.push(k);
                (f, w)
            });
    }
    order
        .into_iter()
        .map(|k| {
            let (f, w) = merged[&k];
            (f, if log_weights { w.ln() } else { w })
        })
        .collect()
}

/// Dataset log likelihood; grammar models average the likelihood over the
/// `p_end` grid.
pub fn dataset_loglik(data: &FitData, m: &ModelSpec) -> f64 {
    let lls = data.grid_logliks(m);
    if m.kind.uses_grammar() {
        logsumexp(&lls) - (lls.len() as f64).ln()
    } else {
        lls[0]
    }
}

pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * loglik
}

/// Likelihood-ratio statistic and its chi-square upper-tail probability.
pub fn lr_test(loglik_null: f64, loglik_alt: f64, df: usize) -> (f64, f64) {
    let stat = (2.0 * (loglik_alt - loglik_null)).max(0.0);
    let p = if stat == 0.0 { 1.0 } else { gamma_ur(df as f64 / 2.0, stat / 2.0) };
    (stat, p)
}

/// Jensen–Shannon divergence in nats.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64, FitError> {
    if p.len() != q.len() {
        return Err(FitError::SupportMismatch(p.len(), q.len()));
    }
    let kl_to_mid = |a: f64, b: f64| if a > 0.0 { a * (2.0 * a / (a + b)).ln() } else { 0.0 };
    let total: f64 = p.iter().zip(q).map(|(&a, &b)| kl_to_mid(a, b) + kl_to_mid(b, a)).sum();
    Ok((0.5 * total).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub restarts: usize,
    pub seed: u64,
    pub optimizer: NelderMeadConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 51,
            seed: 0,
            optimizer: NelderMeadConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Fitted model; for grammar models `p_end` is the best grid value.
    pub model: ModelSpec,
    pub loglik: f64,
    pub bic: f64,
    pub k: usize,
    pub n: usize,
    pub restarts_run: usize,
    pub best_restart: usize,
}

impl FitResult {
    /// `name=value` pairs of the fitted parameters, `;`-separated.
    pub fn params_string(&self) -> String {
        self.model
            .kind
            .param_names()
            .iter()
            .zip(self.model.param_values())
            .map(|(n, v)| format!("{n}={v:.6}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

fn is_probability(name: &str) -> bool {
    name == "p_call"
}

fn to_params(kind: ModelKind, x: &[f64]) -> Vec<f64> {
    kind.param_names()
        .iter()
        .zip(x)
        .map(|(n, &v)| if is_probability(n) { 1.0 / (1.0 + (-v).exp()) } else { v.exp() })
        .collect()
}

fn to_coords(kind: ModelKind, params: &[f64]) -> Vec<f64> {
    kind.param_names()
        .iter()
        .zip(params)
        .map(|(n, &v)| if is_probability(n) { (v / (1.0 - v)).ln() } else { v.ln() })
        .collect()
}

fn initial_params(kind: ModelKind, restart: usize, seed: u64) -> Vec<f64> {
    let names = kind.param_names();
    if restart == 0 {
        return names.iter().map(|n| if is_probability(n) { 0.5 } else { 1.0 }).collect();
    }
    let mut rng = named_stream(seed, &format!("fit/restart/{restart}"));
    let exp = Exp::new(2.0).expect("positive rate");
    names
        .iter()
        .map(|n| {
            if is_probability(n) {
                rng.random::<f64>().clamp(1e-9, 1.0 - 1e-9)
            } else {
                Distribution::<f64>::sample(&exp, &mut rng).max(1e-9)
            }
        })
        .collect()
}

fn spec_at(kind: ModelKind, params: &[f64]) -> Option<ModelSpec> {
    ModelSpec::from_params(kind, params, 0.5).ok()
}

/// Maximum-likelihood fit of `kind` with restarts run in parallel.
pub fn fit_model(kind: ModelKind, data: &FitData, cfg: &FitConfig) -> Result<FitResult, FitError> {
    let k = kind.num_params();
    let finish = |model: ModelSpec, loglik: f64, restarts_run: usize, best_restart: usize| {
        let model = match data.best_p_end(&model) {
            Some(pe) => model.with_p_end(pe),
            None => model,
        };
        FitResult {
            model,
            loglik,
            bic: bic(loglik, k, data.n),
            k,
            n: data.n,
            restarts_run,
            best_restart,
        }
    };
    if k == 0 {
        let m = ModelSpec::random();
        return Ok(finish(m, dataset_loglik(data, &m), 0, 0));
    }
    let restarts = cfg.restarts.max(1);
    let runs: Vec<Option<(f64, Vec<f64>)>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let x0 = to_coords(kind, &initial_params(kind, r, cfg.seed));
            let objective = |x: &[f64]| match spec_at(kind, &to_params(kind, x)) {
                Some(m) => -dataset_loglik(data, &m),
                None => f64::INFINITY,
            };
            let m = nelder_mead(objective, &x0, &cfg.optimizer);
            m.fx.is_finite().then(|| (-m.fx, to_params(kind, &m.x)))
        })
        .collect();
    let (best_restart, (loglik, params)) = runs
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .fold(None, |best: Option<(usize, (f64, Vec<f64>))>, cand| match best {
            Some(b) if b.1 .0 >= cand.1 .0 => Some(b),
            _ => Some(cand),
        })
        .ok_or(FitError::Optimization(kind))?;
    let model = spec_at(kind, &params).ok_or(FitError::Optimization(kind))?;
    Ok(finish(model, loglik, restarts, best_restart))
}

/// Per-task log likelihood under a fitted model. Grammar models use the
/// best grid value of `p_end` stored in the fit, so the task terms sum to
/// the likelihood at that value rather than to the grid average.
pub fn per_task_loglik(data: &FitData, fit: &FitResult) -> Vec<(String, usize, f64)> {
    data.tasks
        .iter()
        .map(|t| (t.task.clone(), t.n_obs, t.loglik(&fit.model)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskVariability {
    pub task: String,
    pub n_obs: usize,
    pub unique_programs: usize,
    pub modal_count: usize,
    pub modal_share: f64,
    /// Divergence between the two fitted posteriors over the task's corpus.
    pub js_grammar_vs_step: Option<f64>,
}

/// Unique and modal program counts per task, and the JS divergence between
/// the posteriors of two fitted models when both are given.
pub fn variability_report(
    data: &FitData,
    corpora: &BTreeMap<String, Corpus>,
    models: Option<(&ModelSpec, &ModelSpec)>,
) -> Result<Vec<TaskVariability>, FitError> {
    data.tasks
        .iter()
        .map(|t| {
            let unique = t.program_counts.iter().filter(|&&c| c > 0).count();
            let modal = t.program_counts.iter().copied().max().unwrap_or(0);
            let js = match models {
                Some((a, b)) => {
                    let corpus = &corpora[&t.task];
                    Some(js_divergence(&t.posterior(corpus, a)?.probs, &t.posterior(corpus, b)?.probs)?)
                }
                None => None,
            };
            Ok(TaskVariability {
                task: t.task.clone(),
                n_obs: t.n_obs,
                unique_programs: unique,
                modal_count: modal,
                modal_share: modal as f64 / t.n_obs.max(1) as f64,
                js_grammar_vs_step: js,
            })
        })
        .collect()
}

/// Draws `n` observations from the posterior of `m`, cycling over the
/// corpora in id order. Synthetic participants are named `sim<i>`.
pub fn simulate_dataset(
    corpora: &BTreeMap<String, Corpus>,
    m: &ModelSpec,
    n: usize,
    seed: u64,
) -> Result<Dataset, FitError> {
    let mut tables = Vec::new();
    for (id, corpus) in corpora {
        let scores = corpus
            .entries()
            .iter()
            .map(|e| entry_features(e).map(|f| f.logscore(m)))
            .collect::<Result<Vec<_>, _>>()?;
        let table = PosteriorTable::from_log_scores(scores)?;
        let mut cdf = Vec::with_capacity(table.probs.len());
        let mut acc = 0.0;
        for p in &table.probs {
            acc += p;
            cdf.push(acc);
        }
        tables.push((id, corpus, cdf));
    }
    if tables.is_empty() {
        return Err(FitError::EmptyData);
    }
    let mut rng = named_stream(seed, "simulate");
    let observations = (0..n)
        .map(|i| {
            let (id, corpus, cdf) = &tables[i % tables.len()];
            let u = rng.random::<f64>() * cdf[cdf.len() - 1];
            let j = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            Observation {
                participant: format!("sim{i}"),
                task: (*id).clone(),
                program: corpus.entries()[j].program.clone(),
                rt_seconds: None,
                n_evals: None,
            }
        })
        .collect();
    Ok(Dataset { observations })
}
