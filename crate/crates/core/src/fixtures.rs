//! Small reference tasks and programs used by tests, docs and the CLI demo.

use crate::program::{parse_program, Program};
use crate::task::{Cell, Dir, StartPose, TaskSpec};

/// Two cells in a row; the agent starts west of the only light, facing east.
pub fn two_cell() -> TaskSpec {
    TaskSpec::new(
        "tiny",
        vec![
            Cell { x: 0, y: 0, height: 0, is_light: false },
            Cell { x: 1, y: 0, height: 0, is_light: true },
        ],
        StartPose { x: 0, y: 0, dir: Dir::E },
    )
    .expect("valid task")
}

/// Flat 4x3 grid with lights at the ends of an S-shaped path:
/// (3,0), (0,1) and (3,2). Start (0,0) facing east.
pub fn s_task() -> TaskSpec {
    let mut cells = Vec::new();
    for y in 0..3 {
        for x in 0..4 {
            let is_light = matches!((x, y), (3, 0) | (0, 1) | (3, 2));
            cells.push(Cell { x, y, height: 0, is_light });
        }
    }
    TaskSpec::new("s-shape", cells, StartPose { x: 0, y: 0, dir: Dir::E }).expect("valid task")
}

/// One subroutine of three walks and a light, used three times along the S.
pub fn s_task_program() -> Program {
    parse_program(
        "main: p1 right walk right p1 left walk left p1\n\
         p1: walk walk walk light\n",
    )
    .expect("valid program")
}

/// A straight corridor of `len` flat cells with a light on every cell
/// listed in `lights`. Start at x=0 facing east.
pub fn corridor(len: i32, lights: &[i32]) -> TaskSpec {
    let cells = (0..len)
        .map(|x| Cell { x, y: 0, height: 0, is_light: lights.contains(&x) })
        .collect();
    TaskSpec::new(format!("corridor{len}"), cells, StartPose { x: 0, y: 0, dir: Dir::E })
        .expect("valid task")
}
