//! Lightbot tasks as deterministic MDPs.
//!
//! A task is a set of grid cells with integer heights, some of which are
//! light cells, plus a starting pose for the agent. The agent state is the
//! cell it stands on, its orientation, and a bitmask of activated lights.
//! Goal states (every light activated) are absorbing.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard ceiling on the number of lights in a loaded task (width of the lit mask).
pub const MAX_LIGHTS_LOADABLE: usize = 32;
/// Largest light count whose state space may be enumerated.
pub const MAX_ENUMERABLE_LIGHTS: usize = 16;
/// Default cap on the number of enumerated states.
pub const DEFAULT_STATE_LIMIT: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid task: {0}")]
    Validation(String),
    #[error("state space too large: {0}")]
    Capacity(String),
}

/// Agent orientation. `x` grows to the east, `y` grows to the south.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Dir::ALL[i % 4]
    }

    /// Counterclockwise quarter turn.
    pub fn left(self) -> Dir {
        Dir::from_index(self.index() + 3)
    }

    /// Clockwise quarter turn.
    pub fn right(self) -> Dir {
        Dir::from_index(self.index() + 1)
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::N => (0, -1),
            Dir::E => (1, 0),
            Dir::S => (0, 1),
            Dir::W => (-1, 0),
        }
    }
}

/// The five primitive actions. The declaration order is the canonical
/// lexicographic order used to break ties in search output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Walk,
    Jump,
    Left,
    Right,
    Light,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Walk,
        Action::Jump,
        Action::Left,
        Action::Right,
        Action::Light,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Action::Walk => "walk",
            Action::Jump => "jump",
            Action::Left => "left",
            Action::Right => "right",
            Action::Light => "light",
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Action::Left | Action::Right)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "walk" => Ok(Action::Walk),
            "jump" => Ok(Action::Jump),
            "left" => Ok(Action::Left),
            "right" => Ok(Action::Right),
            "light" => Ok(Action::Light),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
    pub height: u32,
    #[serde(rename = "light")]
    pub is_light: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartPose {
    pub x: i32,
    pub y: i32,
    pub dir: Dir,
}

#[derive(Serialize, Deserialize)]
struct TaskFile {
    id: String,
    cells: Vec<Cell>,
    start: StartPose,
}

/// A validated Lightbot task.
///
/// Cells are stored in file order; lights are numbered by sorting light
/// cells on `(y, x)`, and bit `i` of [`WorldState::lit`] is light `i`.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    id: String,
    cells: Vec<Cell>,
    start: StartPose,
    start_cell: u32,
    neighbors: Vec<[Option<u32>; 4]>,
    light_of_cell: Vec<Option<u8>>,
    light_cells: Vec<u32>,
}

impl PartialEq for TaskSpec {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.cells == other.cells && self.start == other.start
    }
}

/// Agent state: occupied cell (index into [`TaskSpec::cells`]), orientation,
/// and the activated-light bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorldState {
    pub cell: u32,
    pub dir: Dir,
    pub lit: u32,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, cells: Vec<Cell>, start: StartPose) -> Result<Self, TaskError> {
        let id = id.into();
        let mut by_pos = HashMap::with_capacity(cells.len());
        for (i, c) in cells.iter().enumerate() {
            if by_pos.insert((c.x, c.y), i as u32).is_some() {
                return Err(TaskError::Validation(format!(
                    "task `{id}`: duplicate cell at ({}, {})",
                    c.x, c.y
                )));
            }
        }
        let start_cell = *by_pos.get(&(start.x, start.y)).ok_or_else(|| {
            TaskError::Validation(format!(
                "task `{id}`: start ({}, {}) is not a cell",
                start.x, start.y
            ))
        })?;

        let mut lights: Vec<u32> = (0..cells.len() as u32)
            .filter(|&i| cells[i as usize].is_light)
            .collect();
        if lights.is_empty() {
            return Err(TaskError::Validation(format!("task `{id}` has no light cells")));
        }
        if lights.len() > MAX_LIGHTS_LOADABLE {
            return Err(TaskError::Validation(format!(
                "task `{id}` has {} lights (at most {MAX_LIGHTS_LOADABLE} supported)",
                lights.len()
            )));
        }
        lights.sort_by_key(|&i| (cells[i as usize].y, cells[i as usize].x));
        let mut light_of_cell = vec![None; cells.len()];
        for (bit, &c) in lights.iter().enumerate() {
            light_of_cell[c as usize] = Some(bit as u8);
        }

        let neighbors = cells
            .iter()
            .map(|c| {
                let mut n = [None; 4];
                for d in Dir::ALL {
                    let (dx, dy) = d.delta();
                    n[d.index()] = by_pos.get(&(c.x + dx, c.y + dy)).copied();
                }
                n
            })
            .collect();

        Ok(TaskSpec {
            id,
            cells,
            start,
            start_cell,
            neighbors,
            light_of_cell,
            light_cells: lights,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn start(&self) -> StartPose {
        self.start
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_lights(&self) -> usize {
        self.light_cells.len()
    }

    /// Light cells in bit order.
    pub fn light_cells(&self) -> impl Iterator<Item = &Cell> {
        self.light_cells.iter().map(|&i| &self.cells[i as usize])
    }

    pub fn cell_index(&self, x: i32, y: i32) -> Option<u32> {
        self.cells
            .iter()
            .position(|c| c.x == x && c.y == y)
            .map(|i| i as u32)
    }

    pub fn position(&self, s: &WorldState) -> (i32, i32) {
        let c = &self.cells[s.cell as usize];
        (c.x, c.y)
    }

    pub fn full_mask(&self) -> u32 {
        if self.num_lights() == 32 {
            u32::MAX
        } else {
            (1u32 << self.num_lights()) - 1
        }
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState {
            cell: self.start_cell,
            dir: self.start.dir,
            lit: 0,
        }
    }

    pub fn is_goal(&self, s: &WorldState) -> bool {
        s.lit == self.full_mask()
    }

    /// Deterministic transition. Invalid moves and lights on non-light cells
    /// leave the state unchanged; goal states are absorbing.
    pub fn apply_action(&self, s: &WorldState, a: Action) -> WorldState {
        if self.is_goal(s) {
            return *s;
        }
        let mut next = *s;
        match a {
            Action::Left => next.dir = s.dir.left(),
            Action::Right => next.dir = s.dir.right(),
            Action::Light => {
                if let Some(bit) = self.light_of_cell[s.cell as usize] {
                    next.lit |= 1 << bit;
                }
            }
            Action::Walk | Action::Jump => {
                if let Some(target) = self.neighbors[s.cell as usize][s.dir.index()] {
                    let here = self.cells[s.cell as usize].height;
                    let there = self.cells[target as usize].height;
                    let ok = match a {
                        Action::Walk => there == here,
                        _ => there == here + 1 || there < here,
                    };
                    if ok {
                        next.cell = target;
                    }
                }
            }
        }
        next
    }

    /// Builds the dense state index with the default size limit.
    pub fn enumerate_states(&self) -> Result<StateIndex, TaskError> {
        StateIndex::new(self, DEFAULT_STATE_LIMIT)
    }

    pub fn to_json(&self) -> String {
        let file = TaskFile {
            id: self.id.clone(),
            cells: self.cells.clone(),
            start: self.start,
        };
        serde_json::to_string_pretty(&file).expect("task serializes")
    }
}

/// Parses and validates a task file.
pub fn load_task(text: &str) -> Result<TaskSpec, TaskError> {
    let file: TaskFile = serde_json::from_str(text).map_err(|e| TaskError::Parse(e.to_string()))?;
    TaskSpec::new(file.id, file.cells, file.start)
}

/// Parses a JSON array of task objects.
pub fn load_task_set(text: &str) -> Result<Vec<TaskSpec>, TaskError> {
    let files: Vec<TaskFile> =
        serde_json::from_str(text).map_err(|e| TaskError::Parse(e.to_string()))?;
    files
        .into_iter()
        .map(|f| TaskSpec::new(f.id, f.cells, f.start))
        .collect()
}

/// Bijection between world states and `0..len()`.
///
/// Layout: `((cell * 4 + dir) << lights) | lit`.
#[derive(Debug, Clone, Copy)]
pub struct StateIndex {
    cells: usize,
    lights: usize,
}

impl StateIndex {
    pub fn new(task: &TaskSpec, limit: usize) -> Result<Self, TaskError> {
        let lights = task.num_lights();
        if lights > MAX_ENUMERABLE_LIGHTS {
            return Err(TaskError::Capacity(format!(
                "task `{}` has {lights} lights; enumeration supports at most {MAX_ENUMERABLE_LIGHTS}",
                task.id()
            )));
        }
        let n = task
            .num_cells()
            .checked_mul(4)
            .and_then(|v| v.checked_mul(1usize << lights));
        match n {
            Some(n) if n <= limit => Ok(StateIndex {
                cells: task.num_cells(),
                lights,
            }),
            _ => Err(TaskError::Capacity(format!(
                "task `{}` has more than {limit} states",
                task.id()
            ))),
        }
    }

    pub fn len(&self) -> usize {
        (self.cells * 4) << self.lights
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: &WorldState) -> usize {
        ((s.cell as usize * 4 + s.dir.index()) << self.lights) | s.lit as usize
    }

    pub fn state(&self, i: usize) -> WorldState {
        let lit = (i & ((1 << self.lights) - 1)) as u32;
        let rest = i >> self.lights;
        WorldState {
            cell: (rest / 4) as u32,
            dir: Dir::from_index(rest % 4),
            lit,
        }
    }

    pub fn states(&self) -> impl Iterator<Item = WorldState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }
}
