//! Graphviz rendering of a program's execution tree.
//!
//! Leaves are executed actions in order; internal nodes are subroutine
//! calls. The first call of each subroutine is drawn with solid edges and
//! later calls with dashed edges.

use std::collections::HashSet;
use std::fmt::Write;

use crate::program::{execute_observed, Budget, ExecObserver, Program, ProgramError, Site};
use crate::task::{TaskSpec, WorldState};

struct DotBuilder<'a> {
    program: &'a Program,
    out: String,
    next_id: usize,
    // (node id, style of the edges to its children)
    stack: Vec<(usize, &'static str)>,
    used: HashSet<usize>,
}

impl DotBuilder<'_> {
    fn child(&mut self, label: &str, shape: &str, style: Option<&'static str>) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        let _ = writeln!(self.out, "  n{id} [label=\"{label}\", shape={shape}];");
        if let Some(&(parent, parent_style)) = self.stack.last() {
            let style = style.unwrap_or(parent_style);
            let _ = writeln!(self.out, "  n{parent} -> n{id} [style={style}];");
        }
        id
    }
}

impl ExecObserver for DotBuilder<'_> {
    fn on_action(&mut self, site: Site, _before: &WorldState, _after: &WorldState) {
        let label = self.program.body(site.routine)[site.index].token();
        self.child(&label, "box", None);
    }

    fn on_enter(&mut self, _site: Site, callee: usize) {
        let style = if self.used.insert(callee) { "solid" } else { "dashed" };
        let id = self.child(&format!("p{callee}"), "ellipse", Some(style));
        self.stack.push((id, style));
    }

    fn on_exit(&mut self, _callee: usize) {
        self.stack.pop();
    }
}

/// Renders the execution tree of a solving program as a DOT digraph.
pub fn render_tree(p: &Program, task: &TaskSpec) -> Result<String, ProgramError> {
    let mut dot = DotBuilder {
        program: p,
        out: String::from("digraph program {\n"),
        next_id: 0,
        stack: Vec::new(),
        used: HashSet::new(),
    };
    let root = dot.child("main", "ellipse", None);
    dot.stack.push((root, "solid"));
    let result = execute_observed(task, p, Budget::default(), &mut dot);
    if !result.solved() {
        return Err(ProgramError::NotSolved(task.id().to_string()));
    }
    dot.out.push_str("}\n");
    Ok(dot.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::program::parse_program;

    fn count(hay: &str, needle: &str) -> usize {
        hay.matches(needle).count()
    }

    #[test]
    fn flat_program_is_a_star() {
        let t = fixtures::two_cell();
        let dot = render_tree(&parse_program("main: walk light").unwrap(), &t).unwrap();
        assert_eq!(count(&dot, "shape=box"), 2);
        assert_eq!(count(&dot, "shape=ellipse"), 1);
        assert_eq!(count(&dot, "n0 -> "), 2);
    }

    #[test]
    fn reused_calls_are_dashed() {
        let t = fixtures::s_task();
        let dot = render_tree(&fixtures::s_task_program(), &t).unwrap();
        assert_eq!(count(&dot, "label=\"p1\""), 3);
        // main's children: 3 calls and 6 actions
        assert_eq!(count(&dot, "  n0 -> "), 9);
        let call_ids: Vec<String> = dot
            .lines()
            .filter(|l| l.contains("label=\"p1\""))
            .map(|l| l.trim().split(' ').next().unwrap().to_string())
            .collect();
        let styles: Vec<&str> = call_ids
            .iter()
            .map(|id| {
                let needle = format!("n0 -> {id} ");
                let line = dot.lines().find(|l| l.contains(&needle)).unwrap();
                if line.contains("dashed") { "dashed" } else { "solid" }
            })
            .collect();
        assert_eq!(styles, vec!["solid", "dashed", "dashed"]);
        assert_eq!(count(&dot, "shape=box"), 18);
    }

    #[test]
    fn non_solving_program_is_rejected() {
        let t = fixtures::s_task();
        let err = render_tree(&parse_program("main: walk").unwrap(), &t).unwrap_err();
        assert!(matches!(err, ProgramError::NotSolved(_)));
    }
}
