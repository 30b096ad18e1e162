use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hiplan::fitting::{simulate_dataset, Dataset};
use hiplan::fixtures;
use hiplan::formats::parse_corpus;
use hiplan::generate::Origin;
use hiplan::pipeline::{self, PipelineConfig, PipelineError};
use hiplan::priors::{ModelKind, ModelSpec};
use hiplan::task::{Cell, Dir, StartPose, TaskSpec};

fn stand_in_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tasks")
}

fn task_dir(tasks: &[TaskSpec]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for t in tasks {
        fs::write(dir.path().join(format!("{}.json", t.id())), t.to_json()).unwrap();
    }
    dir
}

fn config(tasks: &Path, out: &Path, min_traces: usize) -> PipelineConfig {
    PipelineConfig {
        task_dir: tasks.to_path_buf(),
        out_dir: out.to_path_buf(),
        min_traces,
        jobs: 2,
        ..PipelineConfig::default()
    }
}

/// Every file under `root`, relative path to contents.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn stand_in_light_counts() {
    let tasks = pipeline::load_task_dir(&stand_in_dir()).unwrap();
    let counts: Vec<usize> = tasks.iter().map(|t| t.num_lights()).collect();
    assert_eq!(counts, [3, 8, 3, 6, 3, 7, 8, 6, 4, 3]);
}

#[test]
fn two_cell_search_and_corpus() {
    let tasks = task_dir(&[fixtures::two_cell()]);
    let out = tempfile::tempdir().unwrap();
    let cfg = config(tasks.path(), out.path(), 1);
    pipeline::cmd_search(&cfg).unwrap();
    let traces = fs::read_to_string(cfg.traces_path("tiny")).unwrap();
    assert!(traces.ends_with("\nwalk light\n"), "{traces}");
    assert!(traces.contains("count=1"));

    pipeline::cmd_corpus(&cfg).unwrap();
    let corpus = parse_corpus(&fs::read_to_string(cfg.corpus_path("tiny")).unwrap()).unwrap();
    assert_eq!(corpus.len(), 1);
    assert_eq!(corpus.entries()[0].program, hiplan::parse_program("main: walk light").unwrap());
}

#[test]
fn invalid_task_names_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("broken.json"), "{\"id\": \"x\"").unwrap();
    let err = pipeline::load_task_dir(dir.path()).unwrap_err();
    assert!(err.to_string().contains("broken.json"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let all = pipeline::load_task_dir(&stand_in_dir()).unwrap();
    let picked: Vec<TaskSpec> = all.into_iter().filter(|t| ["t03-ell", "t10-drop"].contains(&t.id())).collect();
    let tasks = task_dir(&picked);
    let run = || {
        let out = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { restarts: 2, ..config(tasks.path(), out.path(), 20) };
        pipeline::cmd_search(&cfg).unwrap();
        pipeline::cmd_corpus(&cfg).unwrap();
        let corpora = pipeline::load_corpora(&cfg, &picked).unwrap();
        let data = simulate_dataset(&corpora, &ModelSpec::step_cost(1.0), 40, 3).unwrap();
        let data_file = out.path().join("data.jsonl");
        fs::write(&data_file, data.to_jsonl()).unwrap();
        let cfg = PipelineConfig {
            data_file: Some(data_file),
            models: vec![ModelKind::RandomChoice, ModelKind::StepCost, ModelKind::GrammarInduction],
            ..cfg
        };
        pipeline::cmd_fit(&cfg).unwrap();
        (out.path().to_path_buf(), snapshot(out.path()), out)
    };
    let (_, a, _keep_a) = run();
    let (_, b, _keep_b) = run();
    assert!(a.keys().any(|k| k.ends_with("report.csv")));
    assert_eq!(a.len(), b.len());
    for (k, v) in &a {
        assert!(b[k] == *v, "{} differs between runs", k.display());
    }
}

#[test]
fn failing_task_does_not_touch_others() {
    // 17 lights cannot be enumerated, so its heuristic fails with a capacity error.
    let wide = TaskSpec::new(
        "wide",
        (0..17).map(|x| Cell { x, y: 0, height: 0, is_light: true }).collect(),
        StartPose { x: 0, y: 0, dir: Dir::E },
    )
    .unwrap();
    let tasks = task_dir(&[fixtures::two_cell(), wide]);
    let out = tempfile::tempdir().unwrap();
    let cfg = config(tasks.path(), out.path(), 5);
    let (outcomes, err) = pipeline::cmd_search(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(err, PipelineError::Capacity(_)));
    assert_eq!(outcomes.len(), 2);
    assert!(cfg.traces_path("tiny").exists());
    assert!(!cfg.traces_path("wide").exists());
    let names: Vec<_> = fs::read_dir(out.path().join("traces")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["tiny.txt"], "no temporary files are left behind");
}

#[test]
fn dataset_programs_are_unioned_and_marked() {
    let task = fixtures::corridor(3, &[0, 1, 2]);
    let tasks = task_dir(std::slice::from_ref(&task));
    let out = tempfile::tempdir().unwrap();
    let data_file = out.path().join("data.jsonl");
    // Not produced by the rewriter: the L/R pair is effective, so it survives canonicalisation.
    fs::write(
        &data_file,
        "{\"participant\":\"a\",\"task\":\"corridor3\",\"program\":{\"main\":[\"right\",\"left\",\"light\",\"walk\",\"light\",\"walk\",\"light\"]}}\n\
         {\"participant\":\"b\",\"task\":\"corridor3\",\"program\":{\"main\":[\"light\",\"walk\",\"light\",\"walk\",\"light\"]}}\n",
    )
    .unwrap();
    let cfg = PipelineConfig { data_file: Some(data_file), ..config(tasks.path(), out.path(), 5) };
    pipeline::cmd_search(&cfg).unwrap();
    let (_, cov) = pipeline::cmd_corpus(&cfg).unwrap();
    assert_eq!((cov.observations, cov.covered, cov.unioned_programs), (2, 1, 1));
    assert!((cov.percent() - 50.0).abs() < 1e-12);
    let corpus = parse_corpus(&fs::read_to_string(cfg.corpus_path("corridor3")).unwrap()).unwrap();
    let observed: Vec<_> = corpus.entries().iter().filter(|e| e.origin == Origin::Observed).collect();
    assert_eq!(observed.len(), 1);
    assert_eq!(observed[0].program.to_string(), "main: light right left walk light walk light\n");
}

#[test]
fn synthetic_replay_covers_everything_and_reports_add_up() {
    let all = pipeline::load_task_dir(&stand_in_dir()).unwrap();
    let picked: Vec<TaskSpec> = all.into_iter().filter(|t| ["t01-steps", "t05-tower"].contains(&t.id())).collect();
    let tasks = task_dir(&picked);
    let out = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { restarts: 3, ..config(tasks.path(), out.path(), 30) };
    pipeline::cmd_search(&cfg).unwrap();
    pipeline::cmd_corpus(&cfg).unwrap();

    let corpora = pipeline::load_corpora(&cfg, &picked).unwrap();
    let data = simulate_dataset(&corpora, &ModelSpec::step_cost(1.0), 300, 11).unwrap();
    let data_file = out.path().join("data.jsonl");
    fs::write(&data_file, data.to_jsonl()).unwrap();
    assert_eq!(Dataset::from_jsonl(&fs::read_to_string(&data_file).unwrap()).unwrap().len(), 300);

    let cfg = PipelineConfig {
        data_file: Some(data_file),
        models: vec![ModelKind::RandomChoice, ModelKind::StepCost, ModelKind::Mdl],
        ..cfg
    };
    let (_, cov) = pipeline::cmd_corpus(&cfg).unwrap();
    assert_eq!(cov.observations, 300);
    assert_eq!(cov.percent(), 100.0);
    assert_eq!(cov.unioned_programs, 0);

    let fits = pipeline::cmd_fit(&cfg).unwrap();
    let random = &fits[0];
    assert_eq!(random.k, 0);
    assert!((random.bic + 2.0 * random.loglik).abs() < 1e-9);
    assert!(fits[1].loglik >= fits[2].loglik, "step {} vs mdl {}", fits[1].loglik, fits[2].loglik);

    let fit_dir = cfg.fit_dir();
    let report = fs::read_to_string(fit_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    assert!(report.lines().nth(1).unwrap().starts_with("random,"));

    // Per-task log likelihoods add up to the pooled one.
    let per_task = fs::read_to_string(fit_dir.join("task_bic.csv")).unwrap();
    for f in &fits {
        let name = f.model.kind.to_string();
        let (ll, n): (f64, usize) = per_task
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|r| r[1] == name)
            .fold((0.0, 0), |(ll, n), r| (ll + r[4].parse::<f64>().unwrap(), n + r[2].parse::<usize>().unwrap()));
        assert_eq!(n, 300);
        assert!((ll - f.loglik).abs() < 1e-3, "{name}: {ll} vs {}", f.loglik);
    }
    for t in ["t01-steps", "t05-tower"] {
        let scores = fs::read_to_string(fit_dir.join("scores").join(format!("{t}.csv"))).unwrap();
        assert_eq!(scores.lines().count(), corpora[t].len() + 1);
    }
    let var = fs::read_to_string(fit_dir.join("variability.csv")).unwrap();
    assert_eq!(var.lines().count(), 3);
}

#[test]
fn missing_observed_program_is_a_validation_error() {
    let tasks = task_dir(&[fixtures::two_cell()]);
    let out = tempfile::tempdir().unwrap();
    let data_file = out.path().join("data.jsonl");
    fs::write(&data_file, "{\"participant\":\"a\",\"task\":\"tiny\",\"program\":{\"main\":[\"right\",\"left\",\"walk\",\"light\"]}}\n").unwrap();
    let cfg = PipelineConfig { data_file: Some(data_file), ..config(tasks.path(), out.path(), 5) };
    pipeline::cmd_search(&cfg).unwrap();
    pipeline::cmd_corpus(&PipelineConfig { data_file: None, ..cfg.clone() }).unwrap();
    let err = pipeline::cmd_fit(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(err.to_string().contains("record 1") || err.to_string().contains("line 1"), "{err}");
}

#[test]
fn render_and_canon() {
    let tasks = task_dir(&[fixtures::s_task()]);
    let prog = tasks.path().join("p.txt");
    fs::write(&prog, fixtures::s_task_program().to_string()).unwrap();
    let dot = pipeline::cmd_render(tasks.path(), "s-shape", &prog).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("dashed"));

    let err = pipeline::cmd_render(tasks.path(), "nope", &prog).unwrap_err();
    assert!(err.to_string().contains("known tasks: s-shape"), "{err}");

    fs::write(&prog, "main: p2 right walk right p1 left walk left p2\np1: walk walk walk light\np2: walk walk walk light\n").unwrap();
    let text = pipeline::cmd_canon(tasks.path(), "s-shape", &prog).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "main: p1 right walk right p1 left walk left p1");
    assert_eq!(lines.next().unwrap(), "p1: walk walk walk light");
    assert!(lines.next().unwrap().starts_with("# "));
}
