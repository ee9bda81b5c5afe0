//! The block-construction environment.
//!
//! A [`Grid`] is a 6x6 occupancy bitmap. Row 0 is the bottom row and columns
//! are numbered 1..=6 from the left. Blocks drop under gravity: a vertical
//! block lands on top of its column, a horizontal block rests on the taller
//! of the two columns it spans.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{Lexicon, LexiconError, MessageId};
use crate::scalar::Real;

pub const GRID_SIZE: usize = 6;
pub const CELL_COUNT: usize = GRID_SIZE * GRID_SIZE;

/// Messages allowed per episode.
pub const DEFAULT_MAX_STEPS: usize = 10;

const PARTIAL_WEIGHT: f64 = 0.1;
const COMPLETION_BONUS: f64 = 1.0;
const STEP_DISCOUNT: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("invalid placement {0}")]
    InvalidPlacement(BlockAction),
    #[error("message {id} fails at primitive {index} of its expansion")]
    InvalidMessage { id: MessageId, index: usize },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

/// A grid cell as `(row, column)`, row 0 at the bottom, columns 1-based.
pub type Cell = (usize, usize);

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grid(u64);

impl Grid {
    pub const EMPTY: Grid = Grid(0);

    #[inline]
    fn bit(row: usize, col: usize) -> u64 {
        debug_assert!(row < GRID_SIZE && (1..=GRID_SIZE).contains(&col));
        1u64 << (row * GRID_SIZE + col - 1)
    }

    pub fn from_bits(bits: u64) -> Self {
        Grid(bits & ((1u64 << CELL_COUNT) - 1))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn from_cells<I: IntoIterator<Item = Cell>>(cells: I) -> Self {
        let mut g = Grid::EMPTY;
        for (r, c) in cells {
            g.set(r, c, true);
        }
        g
    }

    #[inline]
    pub fn get(self, row: usize, col: usize) -> bool {
        self.0 & Self::bit(row, col) != 0
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        if value {
            self.0 |= Self::bit(row, col);
        } else {
            self.0 &= !Self::bit(row, col);
        }
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// True when every occupied cell of `self` is occupied in `other`.
    pub fn is_subset_of(self, other: Grid) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: Grid) -> Grid {
        Grid(self.0 | other.0)
    }

    pub fn intersection(self, other: Grid) -> Grid {
        Grid(self.0 & other.0)
    }

    pub fn cells(self) -> impl Iterator<Item = Cell> {
        (0..CELL_COUNT).filter(move |i| self.0 & (1u64 << i) != 0).map(|i| (i / GRID_SIZE, i % GRID_SIZE + 1))
    }

    /// One plus the highest occupied row of `col`, or 0 for an empty column.
    pub fn column_height(self, col: usize) -> usize {
        (0..GRID_SIZE).rev().find(|&r| self.get(r, col)).map_or(0, |r| r + 1)
    }

    /// Writes the grid into `out` as 36 values, row-major, bottom row first.
    pub fn write_features<T: Real>(self, out: &mut [T]) {
        debug_assert_eq!(out.len(), CELL_COUNT);
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = if self.0 & (1u64 << i) != 0 { T::one() } else { T::zero() };
        }
    }

    /// Grid art with the top row first, `#` for occupied cells.
    pub fn to_art(self) -> String {
        let mut s = String::with_capacity(CELL_COUNT + GRID_SIZE);
        for row in (0..GRID_SIZE).rev() {
            for col in 1..=GRID_SIZE {
                s.push(if self.get(row, col) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid(\n{})", self.to_art())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// One primitive block placement, `position` in 1..=6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockAction {
    pub orientation: Orientation,
    pub position: usize,
}

impl BlockAction {
    pub fn vertical(position: usize) -> Self {
        BlockAction { orientation: Orientation::Vertical, position }
    }

    pub fn horizontal(position: usize) -> Self {
        BlockAction { orientation: Orientation::Horizontal, position }
    }
}

impl fmt::Display for BlockAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.orientation {
            Orientation::Vertical => 'V',
            Orientation::Horizontal => 'H',
        };
        write!(f, "{tag}{}", self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacementOutcome {
    pub new_grid: Grid,
    /// The two newly occupied cells, as a grid mask.
    pub covered: Grid,
}

impl PlacementOutcome {
    pub fn covered_cells(&self) -> Vec<Cell> {
        self.covered.cells().collect()
    }
}

/// Drops `action` onto `grid`.
pub fn place_block(grid: Grid, action: BlockAction) -> Result<PlacementOutcome, EnvError> {
    let col = action.position;
    let invalid = || EnvError::InvalidPlacement(action);
    let covered = match action.orientation {
        Orientation::Vertical => {
            if !(1..=GRID_SIZE).contains(&col) {
                return Err(invalid());
            }
            let row = grid.column_height(col);
            if row + 2 > GRID_SIZE {
                return Err(invalid());
            }
            Grid::from_cells([(row, col), (row + 1, col)])
        }
        Orientation::Horizontal => {
            if !(1..GRID_SIZE).contains(&col) {
                return Err(invalid());
            }
            let row = grid.column_height(col).max(grid.column_height(col + 1));
            if row + 1 > GRID_SIZE {
                return Err(invalid());
            }
            Grid::from_cells([(row, col), (row, col + 1)])
        }
    };
    debug_assert!(grid.intersection(covered).is_empty());
    Ok(PlacementOutcome { new_grid: grid.union(covered), covered })
}

/// Number of newly covered cells that belong to the goal.
pub fn partial_match(pre_grid: Grid, covered: Grid, goal: Grid) -> usize {
    debug_assert!(pre_grid.intersection(covered).is_empty());
    covered.intersection(goal).count()
}

/// `(0.1 * matched + [state == goal]) * 0.9^t`.
pub fn reward<T: Real>(state_after: Grid, goal: Grid, matched: usize, t: usize) -> T {
    let complete = if state_after == goal { T::lit(COMPLETION_BONUS) } else { T::zero() };
    let base = T::lit(PARTIAL_WEIGHT) * T::from_usize(matched).expect("small count") + complete;
    base * T::lit(STEP_DISCOUNT).powi(t as i32)
}

/// Any occupied cell outside the goal makes the goal unreachable, since
/// blocks are never removed.
pub fn unreachable(state: Grid, goal: Grid) -> bool {
    !state.is_subset_of(goal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult<T> {
    pub next_state: Grid,
    pub reward: T,
    pub terminal: bool,
    pub cells_matched: usize,
}

/// Applies a primitive sequence and returns `(final_grid, matched_cells)`.
pub fn execute(state: Grid, goal: Grid, actions: &[BlockAction]) -> Result<(Grid, usize), EnvError> {
    let mut grid = state;
    let mut matched = 0;
    for &action in actions {
        let out = place_block(grid, action)?;
        matched += partial_match(grid, out.covered, goal);
        grid = out.new_grid;
    }
    Ok((grid, matched))
}

/// The builder: executes messages perfectly under an episode budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildEnv {
    pub max_steps: usize,
}

impl Default for BuildEnv {
    fn default() -> Self {
        BuildEnv { max_steps: DEFAULT_MAX_STEPS }
    }
}

impl BuildEnv {
    pub fn new(max_steps: usize) -> Self {
        BuildEnv { max_steps }
    }

    /// Sends message `message` at time index `t` (0-based). An abstraction
    /// consumes a single time index however long its expansion is.
    pub fn step<T: Real>(
        &self,
        state: Grid,
        goal: Grid,
        message: MessageId,
        lexicon: &Lexicon,
        t: usize,
    ) -> Result<StepResult<T>, EnvError> {
        let actions = lexicon.expansion(message)?;
        let mut grid = state;
        let mut matched = 0;
        for (index, &action) in actions.iter().enumerate() {
            let out = place_block(grid, action).map_err(|_| EnvError::InvalidMessage { id: message, index })?;
            matched += partial_match(grid, out.covered, goal);
            grid = out.new_grid;
        }
        let terminal = grid == goal || unreachable(grid, goal) || t + 1 >= self.max_steps;
        Ok(StepResult { next_state: grid, reward: reward(grid, goal, matched, t), terminal, cells_matched: matched })
    }
}

/// Mask over all `lexicon.capacity()` slots: active and fully executable
/// from `state`. The goal does not affect legality.
pub fn legal_messages(state: Grid, _goal: Grid, lexicon: &Lexicon) -> Vec<bool> {
    let mut mask = vec![false; lexicon.capacity()];
    for (slot, id) in mask.iter_mut().zip(lexicon.ids()) {
        let actions = lexicon.expansion(id).expect("active id");
        *slot = expansion_fits(state, actions);
    }
    mask
}

/// Column-height-only simulation; cheaper than building grids.
fn expansion_fits(state: Grid, actions: &[BlockAction]) -> bool {
    let mut heights = [0usize; GRID_SIZE + 2];
    for (col, h) in heights.iter_mut().enumerate().take(GRID_SIZE + 1).skip(1) {
        *h = state.column_height(col);
    }
    for a in actions {
        let c = a.position;
        match a.orientation {
            Orientation::Vertical => {
                if !(1..=GRID_SIZE).contains(&c) || heights[c] + 2 > GRID_SIZE {
                    return false;
                }
                heights[c] += 2;
            }
            Orientation::Horizontal => {
                if !(1..GRID_SIZE).contains(&c) {
                    return false;
                }
                let row = heights[c].max(heights[c + 1]);
                if row + 1 > GRID_SIZE {
                    return false;
                }
                heights[c] = row + 1;
                heights[c + 1] = row + 1;
            }
        }
    }
    true
}
