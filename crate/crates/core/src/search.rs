//! Trace search: an exact shortest-path heuristic over the full state space
//! and a best-first search that returns the `m` cheapest solving action
//! sequences plus every trace tied with the `m`-th.
//!
//! The search runs over action sequences, not states, so distinct traces
//! reaching the same state are kept apart. Actions that leave the state
//! unchanged and a few redundant turn/light patterns are never expanded.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use thiserror::Error;

use crate::task::{Action, StateIndex, TaskError, TaskSpec, WorldState};

const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum SearchError {
    /// The frontier emptied before `min_traces` traces were found. Carries
    /// everything that was found.
    #[error("search exhausted after {} traces", .0.traces.len())]
    Exhausted(TraceSet),
    #[error("search exceeded {0} expansions")]
    Capacity(usize),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Exact distance-to-goal for every state, counting only state-changing actions.
#[derive(Debug, Clone)]
pub struct HeuristicTable {
    index: StateIndex,
    dist: Vec<u32>,
}

impl HeuristicTable {
    /// Distance to the nearest goal, or `None` if no goal is reachable.
    pub fn get(&self, s: &WorldState) -> Option<u32> {
        match self.dist[self.index.index(s)] {
            UNREACHABLE => None,
            d => Some(d),
        }
    }

    pub fn index(&self) -> &StateIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }
}

/// Multi-source breadth-first search backwards from all goal states.
pub fn compute_heuristic(task: &TaskSpec) -> Result<HeuristicTable, TaskError> {
    let index = task.enumerate_states()?;
    let n = index.len();

    // reverse adjacency in compressed form: preds of j are in offsets[j]..offsets[j+1]
    let mut succ = Vec::with_capacity(n * Action::ALL.len());
    let mut indegree = vec![0u32; n + 1];
    for i in 0..n {
        let s = index.state(i);
        for a in Action::ALL {
            let j = index.index(&task.apply_action(&s, a));
            if j != i {
                succ.push((i as u32, j as u32));
                indegree[j] += 1;
            }
        }
    }
    let mut offsets = vec![0usize; n + 1];
    for j in 0..n {
        offsets[j + 1] = offsets[j] + indegree[j] as usize;
    }
    let mut fill = offsets.clone();
    let mut preds = vec![0u32; succ.len()];
    for &(i, j) in &succ {
        preds[fill[j as usize]] = i;
        fill[j as usize] += 1;
    }
    drop(succ);

    let mut dist = vec![UNREACHABLE; n];
    let mut queue = VecDeque::new();
    for (i, d) in dist.iter_mut().enumerate() {
        if task.is_goal(&index.state(i)) {
            *d = 0;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        let next = dist[j] + 1;
        for &i in &preds[offsets[j]..offsets[j + 1]] {
            let i = i as usize;
            if dist[i] == UNREACHABLE {
                dist[i] = next;
                queue.push_back(i);
            }
        }
    }
    Ok(HeuristicTable { index, dist })
}

/// True if appending `a` after the recent actions `prev` (oldest first,
/// at most two are consulted) forms a pruned pattern: three identical turns,
/// a left/right pair in either order, or a light right after a turn.
pub fn is_redundant(prev: &[Action], a: Action) -> bool {
    let last = prev.last().copied();
    let before_last = if prev.len() >= 2 { Some(prev[prev.len() - 2]) } else { None };
    match (last, a) {
        (Some(Action::Left), Action::Right) | (Some(Action::Right), Action::Left) => true,
        (Some(t), Action::Light) if t.is_turn() => true,
        (Some(t), b) if t.is_turn() && t == b => before_last == Some(t),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    pub min_traces: usize,
    pub max_expansions: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            min_traces: 1000,
            max_expansions: 5_000_000,
        }
    }
}

/// Solving traces ordered by length, then by action order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSet {
    pub traces: Vec<Vec<Action>>,
    pub max_cost: usize,
    /// Set when the search space ran out before `min_traces` were found.
    pub exhausted: bool,
}

struct Node {
    parent: u32,
    action: Action,
    state: WorldState,
    g: u32,
}

const ROOT: u32 = u32::MAX;

fn last_two(nodes: &[Node], mut id: u32) -> Vec<Action> {
    let mut out = Vec::with_capacity(2);
    while id != ROOT && out.len() < 2 {
        let n = &nodes[id as usize];
        out.push(n.action);
        id = n.parent;
    }
    out.reverse();
    out
}

fn trace_of(nodes: &[Node], mut id: u32) -> Vec<Action> {
    let mut out = Vec::new();
    while id != ROOT {
        let n = &nodes[id as usize];
        out.push(n.action);
        id = n.parent;
    }
    out.reverse();
    out
}

/// Best-first search over partial traces ordered by `g + h`.
pub fn search_traces(
    task: &TaskSpec,
    h: &HeuristicTable,
    cfg: &SearchConfig,
) -> Result<TraceSet, SearchError> {
    let min_traces = cfg.min_traces.max(1);
    let start = task.initial_state();
    let mut nodes: Vec<Node> = Vec::new();
    // (f, deeper first, insertion order); the root is encoded as id ROOT
    let mut open: BinaryHeap<Reverse<(u32, Reverse<u32>, u32)>> = BinaryHeap::new();
    let mut solutions: Vec<(u32, Vec<Action>)> = Vec::new();
    let mut expansions = 0usize;

    let Some(h0) = h.get(&start) else {
        return Err(SearchError::Exhausted(finish(solutions, true)));
    };
    open.push(Reverse((h0, Reverse(0), ROOT)));

    while let Some(Reverse((f, _, id))) = open.pop() {
        if solutions.len() >= min_traces && f > solutions[min_traces - 1].0 {
            return Ok(finish(solutions, false));
        }
        let (state, g) = if id == ROOT {
            (start, 0)
        } else {
            let n = &nodes[id as usize];
            (n.state, n.g)
        };
        if task.is_goal(&state) {
            solutions.push((g, trace_of(&nodes, id)));
            continue;
        }
        expansions += 1;
        if expansions > cfg.max_expansions {
            return Err(SearchError::Capacity(cfg.max_expansions));
        }
        let recent = last_two(&nodes, id);
        for a in Action::ALL {
            if is_redundant(&recent, a) {
                continue;
            }
            let next = task.apply_action(&state, a);
            if next == state {
                continue;
            }
            let Some(hn) = h.get(&next) else {
                continue;
            };
            let child = nodes.len() as u32;
            nodes.push(Node {
                parent: id,
                action: a,
                state: next,
                g: g + 1,
            });
            open.push(Reverse((g + 1 + hn, Reverse(g + 1), child)));
        }
    }

    if solutions.len() >= min_traces {
        Ok(finish(solutions, false))
    } else {
        Err(SearchError::Exhausted(finish(solutions, true)))
    }
}

fn finish(solutions: Vec<(u32, Vec<Action>)>, exhausted: bool) -> TraceSet {
    let mut traces: Vec<Vec<Action>> = solutions.into_iter().map(|(_, t)| t).collect();
    traces.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    traces.dedup();
    TraceSet {
        max_cost: traces.last().map_or(0, Vec::len),
        traces,
        exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::task::{Cell, Dir, StartPose};
    use Action::*;

    /// Every valid trace up to `max_len`, by exhaustive depth-first
    /// enumeration. The filters are prefix-closed, so pruning a prefix is the
    /// same as filtering all its extensions.
    pub(crate) fn brute_force(task: &TaskSpec, max_len: usize) -> Vec<Vec<Action>> {
        fn go(task: &TaskSpec, s: WorldState, seq: &mut Vec<Action>, max_len: usize, out: &mut Vec<Vec<Action>>) {
            if task.is_goal(&s) {
                out.push(seq.clone());
                return;
            }
            if seq.len() == max_len {
                return;
            }
            for a in Action::ALL {
                let next = task.apply_action(&s, a);
                if next == s || is_redundant(seq, a) {
                    continue;
                }
                seq.push(a);
                go(task, next, seq, max_len, out);
                seq.pop();
            }
        }
        let mut out = Vec::new();
        go(task, task.initial_state(), &mut Vec::new(), max_len, &mut out);
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }

    #[test]
    fn heuristic_values() {
        let t = fixtures::two_cell();
        let h = compute_heuristic(&t).unwrap();
        assert_eq!(h.get(&t.initial_state()), Some(2));
        let on_light = WorldState { cell: 1, dir: Dir::E, lit: 0 };
        assert_eq!(h.get(&on_light), Some(1));
        for s in h.index().states() {
            if t.is_goal(&s) {
                assert_eq!(h.get(&s), Some(0));
            }
        }
    }

    #[test]
    fn heuristic_matches_forward_bfs_on_small_task() {
        let t = fixtures::corridor(3, &[0, 2]);
        let h = compute_heuristic(&t).unwrap();
        for s in h.index().states() {
            // forward BFS from s
            let mut seen = std::collections::HashMap::from([(s, 0u32)]);
            let mut q = VecDeque::from([s]);
            let mut best = None;
            while let Some(u) = q.pop_front() {
                if t.is_goal(&u) {
                    best = Some(seen[&u]);
                    break;
                }
                for a in Action::ALL {
                    let v = t.apply_action(&u, a);
                    if !seen.contains_key(&v) {
                        seen.insert(v, seen[&u] + 1);
                        q.push_back(v);
                    }
                }
            }
            assert_eq!(h.get(&s), best);
        }
    }

    #[test]
    fn heuristic_is_consistent() {
        let t = fixtures::s_task();
        let h = compute_heuristic(&t).unwrap();
        for s in h.index().states() {
            for a in Action::ALL {
                let n = t.apply_action(&s, a);
                if let (Some(hs), Some(hn)) = (h.get(&s), h.get(&n)) {
                    assert!(hs <= hn + 1);
                }
            }
        }
    }

    #[test]
    fn redundancy_rules() {
        assert!(is_redundant(&[Left, Left], Left));
        assert!(is_redundant(&[Right, Right], Right));
        assert!(is_redundant(&[Walk, Right], Light));
        assert!(is_redundant(&[Left], Right));
        assert!(is_redundant(&[Right], Left));
        assert!(!is_redundant(&[Walk, Left], Left));
        assert!(!is_redundant(&[], Left));
        assert!(!is_redundant(&[Light], Light));
        assert!(!is_redundant(&[Left, Walk], Left));
    }

    #[test]
    fn two_cell_search_finds_walk_light() {
        let t = fixtures::two_cell();
        let h = compute_heuristic(&t).unwrap();
        let cfg = SearchConfig { min_traces: 1, ..SearchConfig::default() };
        let ts = search_traces(&t, &h, &cfg).unwrap();
        assert_eq!(ts.traces, vec![vec![Walk, Light]]);
        assert_eq!(ts.max_cost, 2);
        assert_eq!(ts.traces, brute_force(&t, 2));
    }

    #[test]
    fn ties_are_exhausted() {
        let cells = (-1..=1)
            .map(|x| Cell { x, y: 0, height: 0, is_light: x != 0 })
            .collect();
        let t = TaskSpec::new("sym", cells, StartPose { x: 0, y: 0, dir: Dir::N }).unwrap();
        let h = compute_heuristic(&t).unwrap();
        let cfg = SearchConfig { min_traces: 1, ..SearchConfig::default() };
        let ts = search_traces(&t, &h, &cfg).unwrap();
        assert!(ts.traces.contains(&vec![Left, Walk, Light, Right, Right, Walk, Walk, Light]));
        assert!(ts.traces.contains(&vec![Right, Walk, Light, Left, Left, Walk, Walk, Light]));
        assert_eq!(ts.traces, brute_force(&t, ts.max_cost));
    }

    #[test]
    fn tiny_space_is_exhausted() {
        let t = TaskSpec::new(
            "one",
            vec![Cell { x: 0, y: 0, height: 0, is_light: true }],
            StartPose { x: 0, y: 0, dir: Dir::N },
        )
        .unwrap();
        let h = compute_heuristic(&t).unwrap();
        let cfg = SearchConfig { min_traces: 5, ..SearchConfig::default() };
        match search_traces(&t, &h, &cfg) {
            Err(SearchError::Exhausted(ts)) => {
                assert!(ts.exhausted);
                assert_eq!(ts.traces, vec![vec![Light]]);
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn expansion_cap_is_reported() {
        let t = fixtures::s_task();
        let h = compute_heuristic(&t).unwrap();
        let cfg = SearchConfig { min_traces: 1000, max_expansions: 10 };
        assert!(matches!(search_traces(&t, &h, &cfg), Err(SearchError::Capacity(10))));
    }

    #[test]
    fn search_agrees_with_brute_force_for_larger_m() {
        let t = fixtures::corridor(4, &[1, 3]);
        let h = compute_heuristic(&t).unwrap();
        let cfg = SearchConfig { min_traces: 30, ..SearchConfig::default() };
        let ts = search_traces(&t, &h, &cfg).unwrap();
        let all = brute_force(&t, ts.max_cost);
        assert_eq!(ts.traces, all);
        assert!(ts.traces.len() >= 30);
        for tr in &ts.traces {
            let r = crate::program::execute(&t, &crate::program::Program::flat(tr), Default::default());
            assert!(r.solved());
            assert_eq!(r.steps(), tr.len());
        }
    }
}
