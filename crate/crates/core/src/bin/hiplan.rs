use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hiplan::pipeline::{self, PipelineConfig, PipelineError};
use hiplan::priors::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "hiplan", version, about = "Hierarchical plan induction in a Lightbot-style gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate optimal and near-optimal solving traces for every task.
    Search(StageArgs),
    /// Rewrite traces into canonical program corpora.
    Corpus(StageArgs),
    /// Fit models to a dataset of observed programs and write reports.
    Fit(StageArgs),
    /// Print the DOT execution tree of a program.
    Render(ProgramArgs),
    /// Print the canonical form of a program and a one-line pass report.
    Canon(ProgramArgs),
}

#[derive(Args, Debug)]
struct StageArgs {
    #[arg(long, default_value = "tasks")]
    tasks: PathBuf,
    /// Observed programs, one JSON record per line.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    min_traces: usize,
    #[arg(long)]
    max_expansions: Option<usize>,
    #[arg(long, default_value_t = hiplan::program::MAX_SUBROUTINES)]
    max_subroutines: usize,
    #[arg(long, default_value_t = 51)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated model names (random, mdl, grammar, step, mdl+step, grammar+step).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Comma-separated p_end grid.
    #[arg(long, value_delimiter = ',')]
    pend_grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct ProgramArgs {
    #[arg(long, default_value = "tasks")]
    tasks: PathBuf,
    /// Task id.
    #[arg(long)]
    task: String,
    /// File holding the program in DSL text.
    program: PathBuf,
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl StageArgs {
    fn config(self) -> PipelineConfig {
        let d = PipelineConfig::default();
        PipelineConfig {
            task_dir: self.tasks,
            data_file: self.data,
            out_dir: self.out,
            min_traces: self.min_traces,
            max_expansions: self.max_expansions.unwrap_or(d.max_expansions),
            max_subroutines: self.max_subroutines,
            pend_grid: self.pend_grid.unwrap_or(d.pend_grid),
            restarts: self.restarts,
            seed: self.seed,
            models: self.models.unwrap_or(d.models),
            jobs: self.jobs,
            ..d
        }
    }
}

fn report(outcomes: &[pipeline::TaskOutcome]) {
    for o in outcomes {
        match &o.result {
            Ok(msg) => println!("{}: {msg}", o.task),
            Err(e) => eprintln!("{}: error: {e}", o.task),
        }
    }
}

fn emit(text: &str, output: Option<PathBuf>) -> Result<(), PipelineError> {
    match output {
        Some(p) => pipeline::write_atomic(&p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Search(a) => {
            let r = pipeline::cmd_search(&a.config());
            let (outcomes, err) = match r {
                Ok(o) => (o, None),
                Err((o, e)) => (o, Some(e)),
            };
            report(&outcomes);
            err.map_or(Ok(()), Err)
        }
        Command::Corpus(a) => {
            let r = pipeline::cmd_corpus(&a.config());
            match r {
                Ok((o, cov)) => {
                    report(&o);
                    if cov.observations > 0 {
                        println!(
                            "dataset coverage: {}/{} ({:.1}%), {} programs unioned",
                            cov.covered,
                            cov.observations,
                            cov.percent(),
                            cov.unioned_programs
                        );
                    }
                    Ok(())
                }
                Err((o, e)) => {
                    report(&o);
                    Err(e)
                }
            }
        }
        Command::Fit(a) => {
            let fits = pipeline::cmd_fit(&a.config())?;
            for f in fits {
                println!(
                    "{}: loglik={:.4} bic={:.4} k={} {}",
                    f.model.kind,
                    f.loglik,
                    f.bic,
                    f.k,
                    f.params_string()
                );
            }
            Ok(())
        }
        Command::Render(a) => emit(&pipeline::cmd_render(&a.tasks, &a.task, &a.program)?, a.output),
        Command::Canon(a) => emit(&pipeline::cmd_canon(&a.tasks, &a.task, &a.program)?, a.output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIPLAN_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
