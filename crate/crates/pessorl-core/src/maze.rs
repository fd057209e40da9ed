//! Gridworld maze environments realized as tabular MDPs.
//!
//! Four actions (up/down/left/right); the intended move succeeds with
//! probability `1 - slip_prob`, otherwise one of the two perpendicular moves
//! is taken uniformly. Moving into a wall or off the grid stays put. The goal
//! cell is terminal; the step that enters it earns `goal_reward`, every other
//! step earns `step_reward`.
//!
//! Only free cells are states; wall cells are excluded from the state space.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::ensemble::StateEmbedding;
use crate::mdp::TabularMdp;
use crate::{Error, Result};

pub const ACTION_UP: usize = 0;
pub const ACTION_DOWN: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;
pub const N_ACTIONS: usize = 4;

/// Declarative maze description; `(x, y)` cells with `y` growing downward.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeSpec {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<(usize, usize)>,
    pub start_cells: Vec<(usize, usize)>,
    pub goal_cell: (usize, usize),
    pub step_reward: f64,
    pub goal_reward: f64,
    pub slip_prob: f64,
    pub gamma: f64,
}

impl MazeSpec {
    /// The bundled "hard" preset: an 8x8 room with two baffle walls forcing
    /// an S-shaped route from the fixed start to the goal.
    pub fn hard() -> Self {
        let mut walls = Vec::new();
        for y in 0..6 {
            walls.push((2usize, y));
        }
        for y in 2..8 {
            walls.push((5usize, y));
        }
        MazeSpec {
            width: 8,
            height: 8,
            walls,
            start_cells: vec![(0, 0)],
            goal_cell: (7, 7),
            step_reward: -1.0,
            goal_reward: 0.0,
            slip_prob: 0.05,
            gamma: 0.95,
        }
    }

    /// The bundled "superhard" preset: 15x15 with three baffles.
    pub fn superhard() -> Self {
        let mut walls = Vec::new();
        for y in 0..12 {
            walls.push((3usize, y));
        }
        for y in 3..15 {
            walls.push((7usize, y));
        }
        for y in 0..12 {
            walls.push((11usize, y));
        }
        MazeSpec {
            width: 15,
            height: 15,
            walls,
            start_cells: vec![(0, 0)],
            goal_cell: (14, 14),
            step_reward: -1.0,
            goal_reward: 0.0,
            slip_prob: 0.05,
            gamma: 0.97,
        }
    }

    pub fn is_wall(&self, cell: (usize, usize)) -> bool {
        self.walls.contains(&cell)
    }

    fn in_bounds(&self, cell: (usize, usize)) -> bool {
        cell.0 < self.width && cell.1 < self.height
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut violations: Vec<String> = Vec::new();
        if self.width == 0 || self.height == 0 {
            violations.push("maze dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            violations.push(format!("slip_prob {} not in [0, 1)", self.slip_prob));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            violations.push(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if !self.in_bounds(self.goal_cell) {
            violations.push(format!("goal cell {:?} out of bounds", self.goal_cell));
        } else if self.is_wall(self.goal_cell) {
            violations.push(format!("goal cell {:?} is a wall", self.goal_cell));
        }
        if self.start_cells.is_empty() {
            violations.push("at least one start cell is required".into());
        }
        for &c in &self.start_cells {
            if !self.in_bounds(c) {
                violations.push(format!("start cell {c:?} out of bounds"));
            } else if self.is_wall(c) {
                violations.push(format!("start cell {c:?} is a wall"));
            }
        }
        for &w in &self.walls {
            if !self.in_bounds(w) {
                violations.push(format!("wall cell {w:?} out of bounds"));
            }
        }
        if !self.step_reward.is_finite() || !self.goal_reward.is_finite() {
            violations.push("rewards must be finite".into());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(violations))
        }
    }

    /// State index of a free cell, row-major over non-wall cells.
    pub fn state_of(&self, x: usize, y: usize) -> Option<usize> {
        if !self.in_bounds((x, y)) || self.is_wall((x, y)) {
            return None;
        }
        let mut idx = 0;
        for yy in 0..self.height {
            for xx in 0..self.width {
                if self.is_wall((xx, yy)) {
                    continue;
                }
                if (xx, yy) == (x, y) {
                    return Some(idx);
                }
                idx += 1;
            }
        }
        None
    }

    /// All free cells in state order.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.is_wall((x, y)) {
                    cells.push((x, y));
                }
            }
        }
        cells
    }

    pub fn n_states(&self) -> usize {
        self.free_cells().len()
    }

    pub fn goal_state(&self) -> Option<usize> {
        self.state_of(self.goal_cell.0, self.goal_cell.1)
    }

    pub fn start_states(&self) -> Vec<usize> {
        self.start_cells
            .iter()
            .filter_map(|&(x, y)| self.state_of(x, y))
            .collect()
    }

    /// Geometric embedding: cell coordinates normalized to [0, 1]^2.
    pub fn embedding(&self) -> StateEmbedding {
        let wx = (self.width.max(2) - 1) as f64;
        let wy = (self.height.max(2) - 1) as f64;
        let coords = self
            .free_cells()
            .iter()
            .flat_map(|&(x, y)| [x as f64 / wx, y as f64 / wy])
            .collect();
        StateEmbedding::new(2, coords)
    }

    /// Destination of a deterministic move, with wall/bounds bounce.
    fn slide(&self, cell: (usize, usize), action: usize) -> (usize, usize) {
        let (x, y) = cell;
        let target = match action {
            ACTION_UP => (x, y.wrapping_sub(1)),
            ACTION_DOWN => (x, y + 1),
            ACTION_LEFT => (x.wrapping_sub(1), y),
            ACTION_RIGHT => (x + 1, y),
            _ => unreachable!("maze has four actions"),
        };
        if self.in_bounds(target) && !self.is_wall(target) {
            target
        } else {
            cell
        }
    }

    /// Builds the tabular MDP. Rewards are the exact expectation over slip
    /// outcomes: `step_reward + (goal_reward - step_reward) * P(next = goal)`.
    pub fn build(&self) -> Result<TabularMdp> {
        self.validate()?;
        let cells = self.free_cells();
        let n = cells.len();
        let goal = self.goal_state().expect("goal is a free cell");
        let mut transition = vec![0.0; n * N_ACTIONS * n];
        let mut reward = vec![0.0; n * N_ACTIONS];
        let mut terminal = vec![false; n];
        terminal[goal] = true;
        for (s, &cell) in cells.iter().enumerate() {
            for a in 0..N_ACTIONS {
                let row = &mut transition[(s * N_ACTIONS + a) * n..][..n];
                if s == goal {
                    row[s] = 1.0;
                    continue;
                }
                let perpendicular = if a == ACTION_UP || a == ACTION_DOWN {
                    [ACTION_LEFT, ACTION_RIGHT]
                } else {
                    [ACTION_UP, ACTION_DOWN]
                };
                let mut add = |action: usize, p: f64| {
                    let dest = self.slide(cell, action);
                    let sn = self
                        .state_of(dest.0, dest.1)
                        .expect("slide stays on free cells");
                    row[sn] += p;
                };
                add(a, 1.0 - self.slip_prob);
                for p_act in perpendicular {
                    add(p_act, self.slip_prob / 2.0);
                }
                let p_goal = row[goal];
                reward[s * N_ACTIONS + a] =
                    self.step_reward + (self.goal_reward - self.step_reward) * p_goal;
            }
        }
        TabularMdp::new(n, N_ACTIONS, transition, reward, self.gamma, terminal)
    }
}
