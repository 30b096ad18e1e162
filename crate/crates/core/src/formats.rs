//! Text formats for traces, corpora, score dumps and fit reports.

use std::fmt::Write;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fitting::{FitResult, TaskVariability};
use crate::generate::{Corpus, CorpusEntry, Origin};
use crate::priors::PosteriorTable;
use crate::program::{parse_program, Program};
use crate::search::TraceSet;
use crate::task::Action;

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct FormatError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError { line, msg: msg.into() }
}

/// `key=value` fields of a header line, after its leading marker.
fn header_fields(line: &str) -> Vec<(&str, &str)> {
    line.split_whitespace().filter_map(|f| f.split_once('=')).collect()
}

fn field<'a>(fields: &[(&str, &'a str)], key: &str, line: usize) -> Result<&'a str, FormatError> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| err(line, format!("missing `{key}=`")))
}

fn number(fields: &[(&str, &str)], key: &str, line: usize) -> Result<usize, FormatError> {
    field(fields, key, line)?
        .parse()
        .map_err(|_| err(line, format!("`{key}` is not a number")))
}

pub fn write_traces(task_id: &str, ts: &TraceSet) -> String {
    let mut out = format!("# task={task_id} max_cost={} count={}\n", ts.max_cost, ts.traces.len());
    if ts.exhausted {
        out.push_str("# exhausted\n");
    }
    for t in &ts.traces {
        let tokens: Vec<&str> = t.iter().map(|a| a.token()).collect();
        out.push_str(&tokens.join(" "));
        out.push('\n');
    }
    out
}

/// Inverse of [`write_traces`]; returns the task id and the traces.
pub fn parse_traces(text: &str) -> Result<(String, TraceSet), FormatError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty trace file"))?;
    let fields = header_fields(header.strip_prefix('#').ok_or_else(|| err(1, "missing header"))?);
    let task = field(&fields, "task", 1)?.to_string();
    let max_cost = number(&fields, "max_cost", 1)?;
    let count = number(&fields, "count", 1)?;
    let mut exhausted = false;
    let mut traces = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line == "# exhausted" {
            exhausted = true;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t = line
            .split_whitespace()
            .map(|tok| tok.parse::<Action>().map_err(|e| err(i + 1, e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        traces.push(t);
    }
    if traces.len() != count {
        return Err(err(1, format!("header says {count} traces, found {}", traces.len())));
    }
    Ok((task, TraceSet { traces, max_cost, exhausted }))
}

pub fn write_corpus(c: &Corpus) -> String {
    let mut out = format!("# task={} n={}\n", c.task_id(), c.len());
    for e in c.entries() {
        let _ = write!(out, "\n## length={} steps={} origin={}", e.length, e.steps, e.origin.as_str());
        if let Some(t) = e.trace_idx {
            let _ = write!(out, " trace={t}");
        }
        out.push('\n');
        out.push_str(&e.program.to_string());
    }
    out
}

/// Inverse of [`write_corpus`].
pub fn parse_corpus(text: &str) -> Result<Corpus, FormatError> {
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.first().ok_or_else(|| err(1, "empty corpus file"))?;
    let fields = header_fields(
        header
            .strip_prefix("# ")
            .filter(|h| !h.starts_with('#'))
            .ok_or_else(|| err(1, "missing header"))?,
    );
    let mut corpus = Corpus::new(field(&fields, "task", 1)?);
    let n = number(&fields, "n", 1)?;

    let mut i = 1;
    while i < lines.len() {
        let Some(rec) = lines[i].strip_prefix("## ") else {
            if lines[i].trim().is_empty() {
                i += 1;
                continue;
            }
            return Err(err(i + 1, "expected `## length=...` record header"));
        };
        let line_no = i + 1;
        let f = header_fields(rec);
        let length = number(&f, "length", line_no)?;
        let steps = number(&f, "steps", line_no)?;
        let origin = match f.iter().find(|(k, _)| *k == "origin") {
            Some((_, v)) => Origin::parse(v).ok_or_else(|| err(line_no, format!("unknown origin `{v}`")))?,
            None => Origin::Plain,
        };
        let trace_idx = match f.iter().find(|(k, _)| *k == "trace") {
            Some(_) => Some(number(&f, "trace", line_no)?),
            None => None,
        };
        i += 1;
        let start = i;
        while i < lines.len() && !lines[i].trim().is_empty() && !lines[i].starts_with("## ") {
            i += 1;
        }
        let program = parse_program(&lines[start..i].join("\n")).map_err(|e| err(start + 1, e.to_string()))?;
        if program.length() != length {
            return Err(err(line_no, format!("length {length} does not match the program")));
        }
        corpus.insert(CorpusEntry { program, length, steps, origin, trace_idx });
    }
    if corpus.len() != n {
        return Err(err(1, format!("header says {n} programs, found {}", corpus.len())));
    }
    Ok(corpus)
}

/// First 16 hex digits of the SHA-256 of the canonical program text.
pub fn program_hash(p: &Program) -> String {
    let digest = Sha256::digest(p.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// One row per corpus program with each model's log score and posterior.
pub fn write_scores(c: &Corpus, models: &[(String, PosteriorTable)]) -> String {
    let mut out = String::from("task,program_hash,length,steps");
    for (name, _) in models {
        let _ = write!(out, ",{name}_logscore,{name}_posterior");
    }
    out.push('\n');
    for (i, e) in c.entries().iter().enumerate() {
        let _ = write!(out, "{},{},{},{}", c.task_id(), program_hash(&e.program), e.length, e.steps);
        for (_, t) in models {
            let _ = write!(out, ",{:.10},{:.10e}", t.log_scores[i], t.probs[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_fit_report(fits: &[FitResult]) -> String {
    let mut out = String::from("model,loglik,bic,k,n,params,best_restart,restarts\n");
    for f in fits {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{},{},{},{},{}",
            f.model.kind,
            f.loglik,
            f.bic,
            f.k,
            f.n,
            f.params_string(),
            f.best_restart,
            f.restarts_run
        );
    }
    out
}

/// Per-task log likelihood and BIC (`k·ln n_task − 2·loglik_task`) rows.
pub fn write_task_bic(rows: &[(String, String, usize, usize, f64)]) -> String {
    let mut out = String::from("task,model,n,k,loglik,bic\n");
    for (task, model, n, k, ll) in rows {
        let bic = crate::fitting::bic(*ll, *k, *n);
        let _ = writeln!(out, "{task},{model},{n},{k},{ll:.4},{bic:.4}");
    }
    out
}

pub fn write_variability(rows: &[TaskVariability]) -> String {
    let mut out = String::from("task,n,unique_programs,modal_count,modal_share,js_grammar_vs_step\n");
    for r in rows {
        let js = r.js_grammar_vs_step.map_or(String::new(), |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4},{}",
            r.task, r.n_obs, r.unique_programs, r.modal_count, r.modal_share, js
        );
    }
    out
}
