//! File-based pipeline stages: search, corpus, fit, render and canon.
//!
//! Output layout under the output directory:
//!
//! ```text
//! traces/<task>.txt      solving traces per task
//! corpus/<task>.txt      canonical program corpus per task
//! fit/report.csv         one row per fitted model
//! fit/task_bic.csv       per-task log likelihood and BIC for every model
//! fit/variability.csv    per-task program variability
//! fit/scores/<task>.csv  per-program scores and posteriors
//! ```
//!
//! Every file is written through a temporary file in the same directory and
//! renamed into place, so a failing task never leaves a partial file.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::canon::canonicalize;
use crate::fitting::{
    default_pend_grid, fit_model, per_task_loglik, variability_report, Dataset, FitConfig, FitData, FitError,
    FitResult,
};
use crate::formats::{
    parse_corpus, parse_traces, write_corpus, write_fit_report, write_scores, write_task_bic, write_traces,
    write_variability,
};
use crate::generate::{build_corpus, Corpus, CorpusConfig, GenerateError};
use crate::priors::{ModelKind, PriorError};
use crate::program::{parse_program, Budget, MAX_SUBROUTINES};
use crate::render::render_tree;
use crate::search::{compute_heuristic, search_traces, SearchConfig, SearchError};
use crate::task::{load_task, TaskSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Capacity(String),
    #[error("{0}")]
    Fit(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::Io { .. } => 2,
            PipelineError::Capacity(_) => 3,
            PipelineError::Fit(_) => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub task_dir: PathBuf,
    pub data_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub min_traces: usize,
    pub max_expansions: usize,
    pub max_subroutines: usize,
    pub max_programs_per_trace: usize,
    pub pend_grid: Vec<f64>,
    pub restarts: usize,
    pub seed: u64,
    pub models: Vec<ModelKind>,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            task_dir: PathBuf::from("tasks"),
            data_file: None,
            out_dir: PathBuf::from("out"),
            min_traces: 1000,
            max_expansions: SearchConfig::default().max_expansions,
            max_subroutines: MAX_SUBROUTINES,
            max_programs_per_trace: CorpusConfig::default().max_programs_per_trace,
            pend_grid: default_pend_grid(),
            restarts: 51,
            seed: 0,
            models: ModelKind::ALL.to_vec(),
            jobs: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Validation(m));
        if self.pend_grid.is_empty() || self.pend_grid.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return bad(format!("p_end grid values must lie in (0, 1): {:?}", self.pend_grid));
        }
        if self.models.is_empty() {
            return bad("no models requested".into());
        }
        if self.max_subroutines > MAX_SUBROUTINES {
            return bad(format!("at most {MAX_SUBROUTINES} subroutines are supported"));
        }
        if self.min_traces == 0 {
            return bad("min-traces must be positive".into());
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| PipelineError::Validation(e.to_string()))
    }

    fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            max_programs_per_trace: self.max_programs_per_trace,
            max_subroutines: self.max_subroutines,
            budget: Budget::default(),
        }
    }

    pub fn traces_path(&self, task: &str) -> PathBuf {
        self.out_dir.join("traces").join(format!("{task}.txt"))
    }

    pub fn corpus_path(&self, task: &str) -> PathBuf {
        self.out_dir.join("corpus").join(format!("{task}.txt"))
    }

    pub fn fit_dir(&self) -> PathBuf {
        self.out_dir.join("fit")
    }
}

/// Writes `contents` to `path` via a temporary file and an atomic rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents.as_bytes()).map_err(io_err(path))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // tempfile creates 0600 files; outputs are ordinary shared artifacts.
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644)).map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| PipelineError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Loads every `*.json` task in `dir`, sorted by id.
pub fn load_task_dir(dir: &Path) -> Result<Vec<TaskSpec>, PipelineError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut tasks = Vec::new();
    for p in paths {
        let task = load_task(&read(&p)?)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?;
        tasks.push(task);
    }
    tasks.sort_by(|a, b| a.id().cmp(b.id()));
    for w in tasks.windows(2) {
        if w[0].id() == w[1].id() {
            return Err(PipelineError::Validation(format!("duplicate task id `{}`", w[0].id())));
        }
    }
    Ok(tasks)
}

pub fn find_task<'a>(tasks: &'a [TaskSpec], id: &str) -> Result<&'a TaskSpec, PipelineError> {
    tasks.iter().find(|t| t.id() == id).ok_or_else(|| {
        let known: Vec<&str> = tasks.iter().map(|t| t.id()).collect();
        PipelineError::Validation(format!("unknown task `{id}`; known tasks: {}", known.join(", ")))
    })
}

/// Outcome of one task within a stage. Failures of one task do not stop the
/// others; the stage's overall error is the first failure, if any.
#[derive(Debug)]
pub struct TaskOutcome {
    pub task: String,
    pub result: Result<String, PipelineError>,
}

fn first_failure(outcomes: Vec<TaskOutcome>) -> Result<Vec<TaskOutcome>, (Vec<TaskOutcome>, PipelineError)> {
    match outcomes.iter().position(|o| o.result.is_err()) {
        None => Ok(outcomes),
        Some(i) => {
            let e = match &outcomes[i].result {
                Err(e) => clone_err(e),
                Ok(_) => unreachable!(),
            };
            Err((outcomes, e))
        }
    }
}

fn clone_err(e: &PipelineError) -> PipelineError {
    match e {
        PipelineError::Validation(m) => PipelineError::Validation(m.clone()),
        PipelineError::Capacity(m) => PipelineError::Capacity(m.clone()),
        PipelineError::Fit(m) => PipelineError::Fit(m.clone()),
        PipelineError::Io { path, source } => PipelineError::Io {
            path: path.clone(),
            source: std::io::Error::new(source.kind(), source.to_string()),
        },
    }
}

pub type StageResult = Result<Vec<TaskOutcome>, (Vec<TaskOutcome>, PipelineError)>;

fn search_one(cfg: &PipelineConfig, task: &TaskSpec) -> Result<String, PipelineError> {
    let h = compute_heuristic(task).map_err(|e| PipelineError::Capacity(format!("{}: {e}", task.id())))?;
    let scfg = SearchConfig {
        min_traces: cfg.min_traces,
        max_expansions: cfg.max_expansions,
    };
    match search_traces(task, &h, &scfg) {
        Ok(ts) => {
            write_atomic(&cfg.traces_path(task.id()), &write_traces(task.id(), &ts))?;
            Ok(format!("{} traces, max_cost={}", ts.traces.len(), ts.max_cost))
        }
        Err(SearchError::Exhausted(ts)) => {
            write_atomic(&cfg.traces_path(task.id()), &write_traces(task.id(), &ts))?;
            Err(PipelineError::Capacity(format!(
                "{}: search space exhausted after {} traces (max_cost={})",
                task.id(),
                ts.traces.len(),
                ts.max_cost
            )))
        }
        Err(e) => Err(PipelineError::Capacity(format!("{}: {e}", task.id()))),
    }
}

/// Searches every task and writes `traces/<task>.txt`. An exhausted search
/// still writes the traces it found and is reported as a failure.
pub fn cmd_search(cfg: &PipelineConfig) -> StageResult {
    let prep = || -> Result<Vec<TaskSpec>, PipelineError> {
        cfg.validate()?;
        load_task_dir(&cfg.task_dir)
    };
    let tasks = prep().map_err(|e| (Vec::new(), e))?;
    let pool = cfg.pool().map_err(|e| (Vec::new(), e))?;
    let outcomes: Vec<TaskOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| TaskOutcome { task: t.id().to_string(), result: search_one(cfg, t) })
            .collect()
    });
    for o in &outcomes {
        match &o.result {
            Ok(msg) => info!("search {}: {msg}", o.task),
            Err(e) => warn!("search {}: {e}", o.task),
        }
    }
    first_failure(outcomes)
}

/// Canonicalised dataset, validated against the tasks.
pub fn load_dataset(path: &Path, tasks: &[TaskSpec]) -> Result<Dataset, PipelineError> {
    let mut data = Dataset::from_jsonl(&read(path)?)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    let by_id: HashMap<String, TaskSpec> = tasks.iter().map(|t| (t.id().to_string(), t.clone())).collect();
    data.canonicalize(&by_id, Budget::default())
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    Ok(data)
}

/// Summary of dataset coverage by the generated corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Coverage {
    pub observations: usize,
    pub covered: usize,
    pub unioned_programs: usize,
}

impl Coverage {
    pub fn percent(&self) -> f64 {
        if self.observations == 0 {
            100.0
        } else {
            100.0 * self.covered as f64 / self.observations as f64
        }
    }
}

fn corpus_one(
    cfg: &PipelineConfig,
    task: &TaskSpec,
    observed: &[&crate::program::Program],
) -> Result<(String, Coverage), PipelineError> {
    let (id, ts) = parse_traces(&read(&cfg.traces_path(task.id()))?)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", cfg.traces_path(task.id()).display())))?;
    if id != task.id() {
        return Err(PipelineError::Validation(format!("trace file for {} names task {id}", task.id())));
    }
    let mut corpus = build_corpus(task, &ts, &cfg.corpus_config()).map_err(|e| match e {
        GenerateError::Capacity { .. } => PipelineError::Capacity(format!("{}: {e}", task.id())),
        other => PipelineError::Validation(format!("{}: {other}", task.id())),
    })?;
    let generated = corpus.len();
    let mut cov = Coverage { observations: observed.len(), ..Coverage::default() };
    for p in observed {
        if corpus.position(p).is_some() {
            cov.covered += 1;
        } else {
            corpus
                .union_observed(task, p, Budget::default())
                .map_err(|e| PipelineError::Validation(format!("{}: {e}", task.id())))?;
        }
    }
    cov.unioned_programs = corpus.len() - generated;
    write_atomic(&cfg.corpus_path(task.id()), &write_corpus(&corpus))?;
    Ok((
        format!(
            "{} traces -> {generated} programs, {} unioned from data",
            ts.traces.len(),
            cov.unioned_programs
        ),
        cov,
    ))
}

/// Builds `corpus/<task>.txt` from the trace files. With a dataset, observed
/// programs missing from a corpus are added to it (marked `origin=observed`).
pub fn cmd_corpus(cfg: &PipelineConfig) -> Result<(Vec<TaskOutcome>, Coverage), (Vec<TaskOutcome>, PipelineError)> {
    let prep = || -> Result<(Vec<TaskSpec>, Option<Dataset>), PipelineError> {
        cfg.validate()?;
        let tasks = load_task_dir(&cfg.task_dir)?;
        let data = match &cfg.data_file {
            Some(p) => Some(load_dataset(p, &tasks)?),
            None => None,
        };
        Ok((tasks, data))
    };
    let (tasks, data) = prep().map_err(|e| (Vec::new(), e))?;
    let pool = cfg.pool().map_err(|e| (Vec::new(), e))?;
    let results: Vec<(TaskOutcome, Coverage)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let observed: Vec<&crate::program::Program> = data
                    .iter()
                    .flat_map(|d| &d.observations)
                    .filter(|o| o.task == t.id())
                    .map(|o| &o.program)
                    .collect();
                match corpus_one(cfg, t, &observed) {
                    Ok((msg, cov)) => (TaskOutcome { task: t.id().to_string(), result: Ok(msg) }, cov),
                    Err(e) => (TaskOutcome { task: t.id().to_string(), result: Err(e) }, Coverage::default()),
                }
            })
            .collect()
    });
    let mut total = Coverage::default();
    let mut outcomes = Vec::new();
    for (o, c) in results {
        match &o.result {
            Ok(msg) => info!("corpus {}: {msg}", o.task),
            Err(e) => warn!("corpus {}: {e}", o.task),
        }
        total.observations += c.observations;
        total.covered += c.covered;
        total.unioned_programs += c.unioned_programs;
        outcomes.push(o);
    }
    if data.is_some() {
        info!(
            "dataset coverage before union: {}/{} observations ({:.1}%), {} programs unioned",
            total.covered,
            total.observations,
            total.percent(),
            total.unioned_programs
        );
    }
    first_failure(outcomes).map(|o| (o, total))
}

fn fit_err(e: FitError) -> PipelineError {
    match e {
        FitError::MissingProgram { .. } | FitError::Parse { .. } | FitError::InvalidRecord { .. } => {
            PipelineError::Validation(e.to_string())
        }
        other => PipelineError::Fit(other.to_string()),
    }
}

/// Loads the corpora of all tasks that have a corpus file.
pub fn load_corpora(cfg: &PipelineConfig, tasks: &[TaskSpec]) -> Result<BTreeMap<String, Corpus>, PipelineError> {
    let mut corpora = BTreeMap::new();
    for t in tasks {
        let path = cfg.corpus_path(t.id());
        if !path.exists() {
            continue;
        }
        let c = parse_corpus(&read(&path)?)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        corpora.insert(t.id().to_string(), c);
    }
    Ok(corpora)
}

/// Fits every requested model and writes the reports under `fit/`.
pub fn cmd_fit(cfg: &PipelineConfig) -> Result<Vec<FitResult>, PipelineError> {
    cfg.validate()?;
    let tasks = load_task_dir(&cfg.task_dir)?;
    let data_path = cfg
        .data_file
        .as_ref()
        .ok_or_else(|| PipelineError::Validation("fit needs --data".into()))?;
    let data = load_dataset(data_path, &tasks)?;
    let corpora = load_corpora(cfg, &tasks)?;
    let fd = FitData::new(&data, &corpora, cfg.pend_grid.clone()).map_err(fit_err)?;
    let fcfg = FitConfig {
        restarts: cfg.restarts,
        seed: cfg.seed,
        ..FitConfig::default()
    };
    let pool = cfg.pool()?;
    let fits: Vec<FitResult> = pool.install(|| {
        cfg.models
            .iter()
            .map(|&k| {
                let r = fit_model(k, &fd, &fcfg).map_err(fit_err);
                if let Ok(f) = &r {
                    info!("fit {k}: loglik={:.4} bic={:.4} {}", f.loglik, f.bic, f.params_string());
                }
                r
            })
            .collect::<Result<_, _>>()
    })?;

    let dir = cfg.fit_dir();
    write_atomic(&dir.join("report.csv"), &write_fit_report(&fits))?;

    let mut rows = Vec::new();
    for f in &fits {
        for (task, n, ll) in per_task_loglik(&fd, f) {
            rows.push((task, f.model.kind.to_string(), n, f.k, ll));
        }
    }
    write_atomic(&dir.join("task_bic.csv"), &write_task_bic(&rows))?;

    let find = |k: ModelKind| fits.iter().find(|f| f.model.kind == k).map(|f| &f.model);
    let pair = find(ModelKind::GrammarInduction).zip(find(ModelKind::StepCost));
    let var = variability_report(&fd, &corpora, pair).map_err(fit_err)?;
    write_atomic(&dir.join("variability.csv"), &write_variability(&var))?;

    for t in &fd.tasks {
        let corpus = &corpora[&t.task];
        let tables = fits
            .iter()
            .map(|f| Ok((f.model.kind.to_string().replace('+', "_"), t.posterior(corpus, &f.model)?)))
            .collect::<Result<Vec<_>, FitError>>()
            .map_err(fit_err)?;
        write_atomic(&dir.join("scores").join(format!("{}.csv", t.task)), &write_scores(corpus, &tables))?;
    }
    Ok(fits)
}

fn load_program(path: &Path) -> Result<crate::program::Program, PipelineError> {
    parse_program(&read(path)?).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
}

/// DOT text of a program's execution tree.
pub fn cmd_render(task_dir: &Path, task_id: &str, program_file: &Path) -> Result<String, PipelineError> {
    let tasks = load_task_dir(task_dir)?;
    let task = find_task(&tasks, task_id)?;
    let p = load_program(program_file)?;
    render_tree(&p, task).map_err(|e| PipelineError::Validation(e.to_string()))
}

/// Canonical program text followed by a `# passes=... length=a->b` line.
pub fn cmd_canon(task_dir: &Path, task_id: &str, program_file: &Path) -> Result<String, PipelineError> {
    let tasks = load_task_dir(task_dir)?;
    let task = find_task(&tasks, task_id)?;
    let p = load_program(program_file)?;
    let (c, report) = canonicalize(task, &p).map_err(|e| PipelineError::Validation(e.to_string()))?;
    Ok(format!("{c}# {}\n", report.summary()))
}

impl From<PriorError> for PipelineError {
    fn from(e: PriorError) -> Self {
        PipelineError::Fit(e.to_string())
    }
}
