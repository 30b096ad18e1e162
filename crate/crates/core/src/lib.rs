//! Hierarchical plan induction in a Lightbot-style gridworld.
//!
//! The crate covers the whole modelling pipeline:
//!
//! * [`task`]: gridworld tasks as deterministic MDPs.
//! * [`program`]: the hierarchical program language and its goal-halting
//!   interpreter, plus [`render`] for execution trees.
//! * [`canon`]: normalisation of hand-written programs.
//! * [`search`]: shortest-path heuristic and tie-exhaustive top-m A* over
//!   action sequences.
//! * [`generate`]: expansion of traces into a corpus of programs.
//! * [`priors`]: step-cost, description-length and grammar-induction priors,
//!   the grammar sampler, and posteriors over a corpus.
//! * [`fitting`]: maximum-likelihood fitting, BIC, likelihood-ratio tests and
//!   divergence measures.
//! * [`formats`] and [`pipeline`]: on-disk formats and the CLI stages.

pub mod canon;
pub mod fixtures;
pub mod formats;
pub mod fitting;
pub mod generate;
pub mod optim;
pub mod pipeline;
pub mod priors;
pub mod program;
pub mod render;
pub mod rng;
pub mod search;
pub mod task;

pub use program::{parse_program, serialize_program, Budget, ExecutionResult, Instruction, Outcome, Program};
pub use task::{load_task, Action, Dir, TaskSpec, WorldState};
