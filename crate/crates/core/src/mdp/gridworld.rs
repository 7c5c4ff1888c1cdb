//! ASCII gridworlds.
//!
//! Layout characters: `#` wall, `.` floor, `S` start, `G` goal. Every
//! non-wall cell is a state, numbered in row-major order. Entering the goal
//! pays `goal_reward` and ends the episode; every other move, including
//! bumping into a wall, pays `step_reward`.

use serde::{Deserialize, Serialize};

use super::TabularMdp;
use crate::error::{Result, XqlError};

/// Open 5x5 room, start top-left, goal bottom-right.
pub const GRID_5X5: &str = "\
S....
.....
.....
.....
....G
";

/// Serpentine corridor maze, start bottom-left, goal top-left.
pub const SERPENTINE_MAZE: &str = "\
#########
#G......#
#######.#
#.......#
#.#######
#.......#
#######.#
#S......#
#########
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gridworld {
    pub mdp: TabularMdp,
    pub rows: usize,
    pub cols: usize,
    /// `(row, col)` of each state.
    pub cells: Vec<(usize, usize)>,
    pub start: usize,
    pub goal: usize,
}

impl Gridworld {
    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        self.cells.iter().position(|&c| c == (row, col))
    }

    /// State reached by `action` from `s`, ignoring slip.
    pub fn step(&self, s: usize, action: Action) -> usize {
        let (r, c) = self.cells[s];
        let (dr, dc) = action.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 {
            return s;
        }
        self.state_at(nr as usize, nc as usize).unwrap_or(s)
    }
}

/// Parse `layout` into a gridworld MDP with four actions (up, down, left,
/// right). With probability `slip` the chosen action is replaced by one drawn
/// uniformly from all four.
pub fn build_gridworld(layout: &str, step_reward: f64, goal_reward: f64, slip: f64, gamma: f64) -> Result<Gridworld> {
    if !(0.0..1.0).contains(&slip) {
        return Err(XqlError::Argument(format!("slip must lie in [0, 1), got {slip}")));
    }
    if !step_reward.is_finite() || !goal_reward.is_finite() {
        return Err(XqlError::Argument("rewards must be finite".into()));
    }
    let lines: Vec<&str> = layout.lines().map(|l| l.trim_end_matches('\r')).collect();
    let lines: &[&str] = match lines.iter().rposition(|l| !l.is_empty()) {
        Some(last) => &lines[..=last],
        None => return Err(XqlError::Parse { line: 1, column: None, message: "empty layout".into() }),
    };
    let cols = lines[0].chars().count();
    let mut cells = Vec::new();
    let (mut start, mut goal) = (None, None);
    for (r, line) in lines.iter().enumerate() {
        let width = line.chars().count();
        if width != cols {
            return Err(XqlError::Parse {
                line: r + 1,
                column: Some(width.min(cols) + 1),
                message: format!("row has {width} columns, expected {cols}"),
            });
        }
        for (c, ch) in line.chars().enumerate() {
            let here = (r + 1, c + 1);
            match ch {
                '#' => continue,
                '.' => {}
                'S' => {
                    if start.is_some() {
                        return Err(parse_error(here, "second start cell"));
                    }
                    start = Some(cells.len());
                }
                'G' => {
                    if goal.is_some() {
                        return Err(parse_error(here, "second goal cell"));
                    }
                    goal = Some(cells.len());
                }
                other => return Err(parse_error(here, &format!("unexpected character {other:?}"))),
            }
            cells.push((r, c));
        }
    }
    let start = start.ok_or_else(|| parse_error((1, 1), "layout has no start cell 'S'"))?;
    let goal = goal.ok_or_else(|| parse_error((1, 1), "layout has no goal cell 'G'"))?;

    let n = cells.len();
    let na = Action::ALL.len();
    let mut grid = Gridworld {
        mdp: TabularMdp::deterministic(&[vec![0]], &[vec![0.0]], 0.5, vec![false], vec![1.0])?,
        rows: lines.len(),
        cols,
        cells,
        start,
        goal,
    };
    let mut transition = vec![0.0; n * na * n];
    let mut rewards = vec![0.0; n * na * n];
    for s in 0..n {
        for a in 0..na {
            let row = (s * na + a) * n;
            if s == goal {
                transition[row + s] = 1.0;
                continue;
            }
            for (b, &other) in Action::ALL.iter().enumerate() {
                let p = slip / na as f64 + if a == b { 1.0 - slip } else { 0.0 };
                if p > 0.0 {
                    transition[row + grid.step(s, other)] += p;
                }
            }
            for sp in 0..n {
                rewards[row + sp] = if sp == goal { goal_reward } else { step_reward };
            }
        }
    }
    let mut terminal = vec![false; n];
    terminal[goal] = true;
    let mut start_dist = vec![0.0; n];
    start_dist[start] = 1.0;
    grid.mdp = TabularMdp::with_transition_rewards(n, na, transition, rewards, gamma, terminal, start_dist)?;
    Ok(grid)
}

fn parse_error((line, column): (usize, usize), message: &str) -> XqlError {
    XqlError::Parse { line, column: Some(column), message: message.to_string() }
}
