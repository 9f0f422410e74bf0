use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker colors, MiniGrid-style: red, green, blue, purple, yellow, grey.
pub const DEFAULT_PALETTE: [[u8; 3]; 6] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [112, 39, 195],
    [255, 255, 0],
    [130, 130, 130],
];

/// Parameters of a procedural maze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    /// Grid side length in cells; must be odd and >= 7.
    pub size: usize,
    /// Number of colored markers to scatter on empty cells.
    pub marker_count: usize,
    /// Wall complexity in [1,5]; higher keeps more interior walls.
    pub difficulty: u8,
    /// Marker colors; at least 6 distinct RGB triples.
    pub palette: Vec<[u8; 3]>,
    pub seed: u64,
}

impl Default for MazeSpec {
    fn default() -> Self {
        Self {
            size: 85,
            marker_count: 360,
            difficulty: 4,
            palette: DEFAULT_PALETTE.to_vec(),
            seed: 0,
        }
    }
}

impl MazeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 7 || self.size % 2 == 0 {
            return Err(Error::Invalid(format!(
                "maze size must be odd and >= 7, got {}",
                self.size
            )));
        }
        if !(1..=5).contains(&self.difficulty) {
            return Err(Error::Invalid(format!(
                "difficulty must be in [1,5], got {}",
                self.difficulty
            )));
        }
        if self.palette.len() < 6 {
            return Err(Error::Invalid("palette needs at least 6 colors".into()));
        }
        let mut sorted = self.palette.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.palette.len() {
            return Err(Error::Invalid("palette colors must be distinct".into()));
        }
        Ok(())
    }
}

/// One maze cell. Markers act like empty cells but are visually distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Empty,
    Marker(u8),
}

impl Cell {
    pub fn is_walkable(self) -> bool {
        !matches!(self, Cell::Wall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeGrid {
    pub size: usize,
    cells: Vec<Cell>,
}

impl MazeGrid {
    pub fn filled(size: usize, cell: Cell) -> Self {
        Self { size, cells: vec![cell; size * size] }
    }

    /// Cell at (row, col); coordinates outside the grid read as walls.
    pub fn at(&self, row: i64, col: i64) -> Cell {
        let n = self.size as i64;
        if row < 0 || col < 0 || row >= n || col >= n {
            Cell::Wall
        } else {
            self.cells[(row * n + col) as usize]
        }
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Cell) {
        let n = self.size;
        self.cells[row * n + col] = cell;
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn walkable_positions(&self) -> Vec<AgentPose> {
        let mut out = Vec::new();
        for r in 0..self.size {
            for c in 0..self.size {
                if self.at(r as i64, c as i64).is_walkable() {
                    out.push(AgentPose { row: r, col: c });
                }
            }
        }
        out
    }

    pub fn marker_positions(&self) -> Vec<AgentPose> {
        let mut out = Vec::new();
        for r in 0..self.size {
            for c in 0..self.size {
                if matches!(self.at(r as i64, c as i64), Cell::Marker(_)) {
                    out.push(AgentPose { row: r, col: c });
                }
            }
        }
        out
    }
}

/// Agent position in cell coordinates; always on a walkable cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub row: usize,
    pub col: usize,
}

/// Compass moves. `inverse` is an involution, which is what makes the
/// mirrored second half of an episode retrace the first exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    N,
    E,
    S,
    W,
}

/// Fixed tie-break order used by BFS and everywhere a direction order matters.
pub const ACTION_ORDER: [Action; 4] = [Action::N, Action::E, Action::S, Action::W];

impl Action {
    pub fn inverse(self) -> Action {
        match self {
            Action::N => Action::S,
            Action::S => Action::N,
            Action::E => Action::W,
            Action::W => Action::E,
        }
    }

    /// (d_row, d_col) of the move.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::N => (-1, 0),
            Action::S => (1, 0),
            Action::E => (0, 1),
            Action::W => (0, -1),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::N => 0,
            Action::E => 1,
            Action::S => 2,
            Action::W => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        ACTION_ORDER.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Action::N => "N",
            Action::E => "E",
            Action::S => "S",
            Action::W => "W",
        }
    }

    pub fn from_code(s: &str) -> Option<Action> {
        match s {
            "N" => Some(Action::N),
            "E" => Some(Action::E),
            "S" => Some(Action::S),
            "W" => Some(Action::W),
            _ => None,
        }
    }
}

/// Generates a connected maze: recursive-backtracker spanning maze on the odd
/// lattice, then removal of a difficulty-dependent fraction of interior walls,
/// then marker placement. Deterministic in `spec.seed`; for a fixed seed the
/// wall count is non-increasing as difficulty decreases because the removal
/// candidates are shuffled before the difficulty-dependent cut is applied.
pub fn generate_maze(spec: &MazeSpec) -> Result<MazeGrid> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size;
    let mut grid = MazeGrid::filled(n, Cell::Wall);

    // Rooms live on odd coordinates; carve a spanning tree between them.
    let rooms_per_side = (n - 1) / 2;
    let room = |i: usize, j: usize| (2 * i + 1, 2 * j + 1);
    let mut visited = vec![false; rooms_per_side * rooms_per_side];
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    let (r0, c0) = room(0, 0);
    grid.set(r0, c0, Cell::Empty);
    while let Some(&(i, j)) = stack.last() {
        let mut neighbors = Vec::new();
        for a in ACTION_ORDER {
            let (dr, dc) = a.delta();
            let (ni, nj) = (i as i64 + dr, j as i64 + dc);
            if ni >= 0
                && nj >= 0
                && (ni as usize) < rooms_per_side
                && (nj as usize) < rooms_per_side
                && !visited[ni as usize * rooms_per_side + nj as usize]
            {
                neighbors.push((ni as usize, nj as usize));
            }
        }
        if neighbors.is_empty() {
            stack.pop();
            continue;
        }
        let &(ni, nj) = neighbors.choose(&mut rng).expect("non-empty");
        visited[ni * rooms_per_side + nj] = true;
        let (rr, cc) = room(ni, nj);
        grid.set(rr, cc, Cell::Empty);
        let (cr, ccol) = room(i, j);
        grid.set((cr + rr) / 2, (ccol + cc) / 2, Cell::Empty);
        stack.push((ni, nj));
    }

    // Interior walls separating two carved rooms are removal candidates.
    let mut candidates = Vec::new();
    for r in 1..n - 1 {
        for c in 1..n - 1 {
            if grid.at(r as i64, c as i64) != Cell::Wall {
                continue;
            }
            let horiz = grid.at(r as i64, c as i64 - 1).is_walkable()
                && grid.at(r as i64, c as i64 + 1).is_walkable();
            let vert = grid.at(r as i64 - 1, c as i64).is_walkable()
                && grid.at(r as i64 + 1, c as i64).is_walkable();
            if horiz || vert {
                candidates.push((r, c));
            }
        }
    }
    candidates.shuffle(&mut rng);
    let remove = (candidates.len() as f64 * 0.10 * (5 - spec.difficulty) as f64).round() as usize;
    for &(r, c) in candidates.iter().take(remove) {
        grid.set(r, c, Cell::Empty);
    }

    // Markers on distinct empty cells, colors uniform over the palette.
    let mut empties = grid.walkable_positions();
    if spec.marker_count > empties.len() {
        return Err(Error::Invalid(format!(
            "marker_count {} exceeds {} empty cells",
            spec.marker_count,
            empties.len()
        )));
    }
    empties.shuffle(&mut rng);
    for pose in empties.iter().take(spec.marker_count) {
        let color = rng.gen_range(0..spec.palette.len()) as u8;
        grid.set(pose.row, pose.col, Cell::Marker(color));
    }
    Ok(grid)
}
