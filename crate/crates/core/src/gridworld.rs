//! Deterministic grid navigation environment with goals, lava, and walls.
//!
//! Rewards are fixed: `+1` for reaching a goal, `-1` for falling into lava,
//! `-0.1` for every other transition. Moves into a wall or off the grid leave
//! the position unchanged (and still cost `-0.1`).

use crate::error::{Error, Result};

pub const REWARD_GOAL: f64 = 1.0;
pub const REWARD_LAVA: f64 = -1.0;
pub const REWARD_STEP: f64 = -0.1;

/// Largest supported grid, as a cell count.
pub const MAX_CELLS: usize = 10_000;

/// Default 7x7 layout shipped with the crate: two goals, one lava cell,
/// interior walls, two start cells.
pub const DEFAULT_LAYOUT: &str = include_str!("../assets/default_layout.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CellKind {
    Empty,
    Wall,
    Goal,
    Lava,
}

impl CellKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, CellKind::Goal | CellKind::Lava)
    }
}

/// One of the four cardinal moves, encoded 0-3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
    ];

    pub fn id(self) -> usize {
        match self {
            GridAction::Up => 0,
            GridAction::Down => 1,
            GridAction::Left => 2,
            GridAction::Right => 3,
        }
    }

    pub fn from_id(id: usize) -> Result<GridAction> {
        GridAction::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::Contract(format!("action id {id} out of range 0..4")))
    }

    /// (row delta, col delta) of the move.
    pub fn delta(self) -> (isize, isize) {
        match self {
            GridAction::Up => (-1, 0),
            GridAction::Down => (1, 0),
            GridAction::Left => (0, -1),
            GridAction::Right => (0, 1),
        }
    }

    /// Arrow glyph used by trajectory renderings.
    pub fn arrow(self) -> char {
        match self {
            GridAction::Up => '^',
            GridAction::Down => 'v',
            GridAction::Left => '<',
            GridAction::Right => '>',
        }
    }
}

/// Agent position plus a terminal flag derived from the cell kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridState {
    pub row: usize,
    pub col: usize,
    pub terminal: bool,
}

/// Immutable grid description. Safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    start_states: Vec<(usize, usize)>,
}

impl GridLayout {
    /// Parses a layout document: one character per cell per line,
    /// `.`=empty, `#`=wall, `G`=goal, `L`=lava, `S`=empty start cell.
    pub fn parse(text: &str) -> Result<GridLayout> {
        let mut cells = Vec::new();
        let mut start_states = Vec::new();
        let mut width = 0usize;
        let mut height = 0usize;
        let mut goals = 0usize;

        for (row, line) in text.lines().enumerate() {
            if line.is_empty() && row > 0 && text.lines().skip(row).all(|l| l.is_empty()) {
                break; // tolerate trailing blank lines
            }
            let row_cells: Vec<char> = line.chars().collect();
            if row == 0 {
                width = row_cells.len();
                if width == 0 {
                    return Err(Error::LayoutParse {
                        line: 1,
                        col: 1,
                        msg: "empty first row".into(),
                    });
                }
            } else if row_cells.len() != width {
                return Err(Error::LayoutParse {
                    line: row + 1,
                    col: row_cells.len() + 1,
                    msg: format!("ragged row: expected {} cells, found {}", width, row_cells.len()),
                });
            }
            for (col, ch) in row_cells.iter().enumerate() {
                let kind = match ch {
                    '.' => CellKind::Empty,
                    '#' => CellKind::Wall,
                    'G' => {
                        goals += 1;
                        CellKind::Goal
                    }
                    'L' => CellKind::Lava,
                    'S' => {
                        start_states.push((row, col));
                        CellKind::Empty
                    }
                    other => {
                        return Err(Error::LayoutParse {
                            line: row + 1,
                            col: col + 1,
                            msg: format!("unknown cell character {other:?}"),
                        })
                    }
                };
                cells.push(kind);
            }
            height = row + 1;
        }

        if height == 0 {
            return Err(Error::LayoutParse { line: 1, col: 1, msg: "empty layout".into() });
        }
        if goals == 0 {
            return Err(Error::LayoutParse {
                line: height,
                col: 1,
                msg: "layout has no goal cell".into(),
            });
        }
        if start_states.is_empty() {
            return Err(Error::LayoutParse {
                line: height,
                col: 1,
                msg: "layout has no start cell".into(),
            });
        }
        if width * height > MAX_CELLS {
            return Err(Error::LayoutParse {
                line: 1,
                col: 1,
                msg: format!("grid of {} cells exceeds the {MAX_CELLS}-cell bound", width * height),
            });
        }

        Ok(GridLayout { width, height, cells, start_states })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn start_states(&self) -> &[(usize, usize)] {
        &self.start_states
    }

    pub fn cell(&self, row: usize, col: usize) -> CellKind {
        self.cells[row * self.width + col]
    }

    /// Flattened cell index `row * width + col`.
    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn state_at(&self, row: usize, col: usize) -> Result<GridState> {
        if row >= self.height || col >= self.width {
            return Err(Error::Contract(format!(
                "position ({row}, {col}) outside {}x{} grid",
                self.height, self.width
            )));
        }
        Ok(GridState { row, col, terminal: self.cell(row, col).is_terminal() })
    }

    pub fn state_from_index(&self, index: usize) -> Result<GridState> {
        if index >= self.n_cells() {
            return Err(Error::Contract(format!(
                "cell index {index} outside grid of {} cells",
                self.n_cells()
            )));
        }
        self.state_at(index / self.width, index % self.width)
    }

    /// Applies one action. Moves into walls or off the grid stay in place.
    /// Stepping from a terminal state is a contract violation.
    pub fn step(&self, s: &GridState, a: GridAction) -> Result<(GridState, f64, bool)> {
        if s.terminal {
            return Err(Error::Contract(format!(
                "step called on terminal state ({}, {})",
                s.row, s.col
            )));
        }
        let (dr, dc) = a.delta();
        let nr = s.row as isize + dr;
        let nc = s.col as isize + dc;
        let (row, col) = if nr < 0
            || nc < 0
            || nr >= self.height as isize
            || nc >= self.width as isize
            || self.cell(nr as usize, nc as usize) == CellKind::Wall
        {
            (s.row, s.col)
        } else {
            (nr as usize, nc as usize)
        };
        let kind = self.cell(row, col);
        let (reward, done) = match kind {
            CellKind::Goal => (REWARD_GOAL, true),
            CellKind::Lava => (REWARD_LAVA, true),
            _ => (REWARD_STEP, false),
        };
        Ok((GridState { row, col, terminal: done }, reward, done))
    }

    /// All non-terminal, non-wall states reachable from any start state.
    /// Ordered by cell index.
    pub fn reachable_nonterminal_states(&self) -> Vec<GridState> {
        let mut seen = vec![false; self.n_cells()];
        let mut queue: Vec<(usize, usize)> = self.start_states.clone();
        for &(r, c) in &self.start_states {
            seen[self.cell_index(r, c)] = true;
        }
        while let Some((r, c)) = queue.pop() {
            let s = GridState { row: r, col: c, terminal: false };
            for a in GridAction::ALL {
                let (next, _, done) = self.step(&s, a).expect("non-terminal by construction");
                let idx = self.cell_index(next.row, next.col);
                if !seen[idx] {
                    seen[idx] = true;
                    if !done {
                        queue.push((next.row, next.col));
                    }
                }
            }
        }
        (0..self.n_cells())
            .filter(|&i| seen[i] && !self.cells[i].is_terminal())
            .map(|i| GridState { row: i / self.width, col: i % self.width, terminal: false })
            .collect()
    }

    /// BFS distance from every cell to the nearest goal, routing around
    /// walls and lava. Unreachable cells get `usize::MAX`.
    pub fn goal_distances(&self) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_cells()];
        let mut queue = std::collections::VecDeque::new();
        for i in 0..self.n_cells() {
            if self.cells[i] == CellKind::Goal {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / self.width, i % self.width);
            for a in GridAction::ALL {
                let (dr, dc) = a.delta();
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= self.height as isize || nc >= self.width as isize {
                    continue;
                }
                let j = self.cell_index(nr as usize, nc as usize);
                if matches!(self.cells[j], CellKind::Empty) && dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        dist
    }

    /// Nearest goal cell by Manhattan distance, ignoring walls.
    pub fn nearest_goal_manhattan(&self, row: usize, col: usize) -> Option<(usize, usize)> {
        (0..self.n_cells())
            .filter(|&i| self.cells[i] == CellKind::Goal)
            .map(|i| (i / self.width, i % self.width))
            .min_by_key(|&(gr, gc)| {
                (gr.abs_diff(row) + gc.abs_diff(col), gr * self.width + gc)
            })
    }
}
