use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Embedding;
use crate::rng::Rng;
use crate::world::latent::LatentTaskModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::InvalidAction(i))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridState {
    pub cell: Cell,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridStep {
    pub state: GridState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Square grid with a sparse goal reward. Start is the top-left corner,
/// goal the bottom-right one.
#[derive(Clone, Debug, PartialEq)]
pub struct GridWorld {
    size: usize,
    start: Cell,
    goal: Cell,
    max_steps: usize,
}

impl GridWorld {
    pub fn new(size: usize, max_steps: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("grid size must be >= 2, got {size}")));
        }
        if max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(Self {
            size,
            start: Cell::new(0, 0),
            goal: Cell::new(size - 1, size - 1),
            max_steps,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn num_cells(&self) -> usize {
        self.size * self.size
    }

    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.row * self.size + cell.col
    }

    pub fn reset(&self) -> GridState {
        GridState {
            cell: self.start,
            steps: 0,
        }
    }

    pub fn step(&self, state: &GridState, action: Action) -> GridStep {
        let (dr, dc) = action.delta();
        let clamp = |v: usize, d: i64| (v as i64 + d).clamp(0, self.size as i64 - 1) as usize;
        let cell = Cell::new(clamp(state.cell.row, dr), clamp(state.cell.col, dc));
        let steps = state.steps + 1;
        let success = cell == self.goal;
        GridStep {
            state: GridState { cell, steps },
            reward: if success { 1.0 } else { 0.0 },
            done: success || steps >= self.max_steps,
            success,
        }
    }

    pub fn step_index(&self, state: &GridState, action: usize) -> Result<GridStep> {
        Ok(self.step(state, Action::from_index(action)?))
    }

    /// `1 - dist(cell, goal) / dist(start, goal)`.
    pub fn progress(&self, cell: Cell) -> f64 {
        1.0 - cell.manhattan(self.goal) as f64 / self.start.manhattan(self.goal) as f64
    }

    pub fn embedding(&self, cell: Cell, model: &LatentTaskModel, rng: &mut Rng) -> Result<Embedding> {
        model.sample(self.progress(cell), rng)
    }
}
