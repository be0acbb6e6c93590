//! Space-time grid planning for one robot at a time.
//!
//! Robots move on a 4-connected grid, one cell (or a wait) per tick. Earlier
//! robots' motions live in a reservation table; later robots plan around
//! them with an A* over (cell, tick) states. A finished robot rests on its
//! goal cell, which stays reserved from its arrival onwards.

use super::ManipError;
use std::collections::{BinaryHeap, HashMap, HashSet};

pub type Cell = (i64, i64);

/// Axis-aligned workspace discretised into square cells, with static
/// obstacles.
#[derive(Debug, Clone)]
pub struct GridWorld {
    cell: f64,
    min: (f64, f64),
    width: i64,
    height: i64,
    blocked: HashSet<Cell>,
}

impl GridWorld {
    pub fn new(cell: f64, min: (f64, f64), max: (f64, f64)) -> Result<Self, ManipError> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(ManipError::BadGrid("cell size must be positive"));
        }
        let width = ((max.0 - min.0) / cell).floor() as i64;
        let height = ((max.1 - min.1) / cell).floor() as i64;
        if width < 1 || height < 1 {
            return Err(ManipError::BadGrid("workspace must cover at least one cell"));
        }
        Ok(Self {
            cell,
            min,
            width,
            height,
            blocked: HashSet::new(),
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn width(&self) -> i64 {
        self.width
    }

    pub fn height(&self) -> i64 {
        self.height
    }

    /// Cell containing the point, clamped into the workspace.
    pub fn to_cell(&self, p: (f64, f64)) -> Cell {
        let i = ((p.0 - self.min.0) / self.cell).floor() as i64;
        let j = ((p.1 - self.min.1) / self.cell).floor() as i64;
        (i.clamp(0, self.width - 1), j.clamp(0, self.height - 1))
    }

    pub fn cell_center(&self, c: Cell) -> (f64, f64) {
        (
            self.min.0 + (c.0 as f64 + 0.5) * self.cell,
            self.min.1 + (c.1 as f64 + 0.5) * self.cell,
        )
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.0 < self.width && c.1 >= 0 && c.1 < self.height
    }

    pub fn block_cell(&mut self, c: Cell) {
        if self.in_bounds(c) {
            self.blocked.insert(c);
        }
    }

    /// Blocks every cell whose center lies within a rotated square of
    /// half-width `half + inflation` around `center`. The inflation should
    /// cover the robot radius plus half a cell diagonal.
    pub fn block_rotated_square(
        &mut self,
        center: (f64, f64),
        half: f64,
        theta: f64,
        inflation: f64,
    ) {
        let reach = (half + inflation) * std::f64::consts::SQRT_2;
        let lo = self.to_cell((center.0 - reach, center.1 - reach));
        let hi = self.to_cell((center.0 + reach, center.1 + reach));
        let (s, c) = theta.sin_cos();
        let limit = half + inflation;
        for i in lo.0..=hi.0 {
            for j in lo.1..=hi.1 {
                let p = self.cell_center((i, j));
                let dx = p.0 - center.0;
                let dy = p.1 - center.1;
                // Rotate the offset into the body frame.
                let bx = c * dx + s * dy;
                let by = -s * dx + c * dy;
                if bx.abs() <= limit && by.abs() <= limit {
                    self.blocked.insert((i, j));
                }
            }
        }
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked.contains(&c)
    }

    pub fn blocked_cells(&self) -> impl Iterator<Item = &Cell> {
        self.blocked.iter()
    }
}

/// Reservation table shared by sequentially planned robots.
#[derive(Debug, Default, Clone)]
pub struct Reservations {
    /// Cells occupied at a single tick by a robot in transit.
    transit: HashSet<(Cell, usize)>,
    /// Last transit tick per cell, to validate resting after arrival.
    transit_last: HashMap<Cell, usize>,
    /// Cells occupied from a tick onwards (resting robots, parked robots).
    resident: HashMap<Cell, usize>,
    /// Directed moves (from, to, departure tick), to forbid swaps.
    moves: HashSet<(Cell, Cell, usize)>,
}

impl Reservations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn occupied(&self, c: Cell, t: usize) -> bool {
        self.transit.contains(&(c, t))
            || self.resident.get(&c).is_some_and(|&from| t >= from)
    }

    /// True when a robot arriving at `c` at tick `t` can stay forever.
    pub fn can_rest(&self, c: Cell, t: usize) -> bool {
        !self.resident.contains_key(&c)
            && self.transit_last.get(&c).is_none_or(|&last| t > last)
    }

    /// True when moving `from -> to` over tick `t -> t + 1` would cross a
    /// reserved opposing move.
    pub fn swap_conflict(&self, from: Cell, to: Cell, t: usize) -> bool {
        self.moves.contains(&(to, from, t))
    }

    /// Marks a robot parked on `c` from tick 0 onwards.
    pub fn park(&mut self, c: Cell) {
        self.resident.insert(c, 0);
    }

    pub fn unpark(&mut self, c: Cell) {
        self.resident.remove(&c);
    }

    /// Reserves a tick-indexed path and the rest period at its last cell.
    pub fn commit_path(&mut self, path: &[Cell]) {
        for (t, &c) in path.iter().enumerate() {
            self.transit.insert((c, t));
            self.transit_last
                .entry(c)
                .and_modify(|last| *last = (*last).max(t))
                .or_insert(t);
        }
        for t in 0..path.len().saturating_sub(1) {
            if path[t] != path[t + 1] {
                self.moves.insert((path[t], path[t + 1], t));
            }
        }
        if let Some(&last) = path.last() {
            self.resident.insert(last, path.len() - 1);
        }
    }
}

/// Moves in a fixed order so equal-cost searches expand identically.
const MOVES: [(i64, i64); 5] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];

/// Plans a shortest path `start -> goal` through space-time, waiting where
/// needed, leaving the goal restable. `None` when no path exists within
/// `max_ticks`.
pub fn astar(
    world: &GridWorld,
    res: &Reservations,
    start: Cell,
    goal: Cell,
    max_ticks: usize,
) -> Option<Vec<Cell>> {
    if !world.in_bounds(start) || !world.in_bounds(goal) {
        return None;
    }
    if world.is_blocked(start) || world.is_blocked(goal) {
        return None;
    }
    if res.occupied(start, 0) {
        return None;
    }
    if res.resident.contains_key(&goal) {
        // Someone rests or parks there; no arrival time can ever be safe.
        return None;
    }
    let h = |c: Cell| ((c.0 - goal.0).abs() + (c.1 - goal.1).abs()) as usize;

    // Min-heap on (f, insertion sequence): stable and deterministic.
    let mut open: BinaryHeap<std::cmp::Reverse<(usize, usize, Cell, usize)>> = BinaryHeap::new();
    let mut parent: HashMap<(Cell, usize), (Cell, usize)> = HashMap::new();
    let mut seen: HashSet<(Cell, usize)> = HashSet::new();
    let mut seq = 0usize;
    open.push(std::cmp::Reverse((h(start), seq, start, 0)));
    seen.insert((start, 0));

    while let Some(std::cmp::Reverse((_, _, cell, t))) = open.pop() {
        if cell == goal && res.can_rest(cell, t) {
            let mut path = vec![cell];
            let mut key = (cell, t);
            while let Some(&prev) = parent.get(&key) {
                path.push(prev.0);
                key = prev;
            }
            path.reverse();
            return Some(path);
        }
        if t >= max_ticks {
            continue;
        }
        for (dx, dy) in MOVES {
            let nb = (cell.0 + dx, cell.1 + dy);
            if !world.in_bounds(nb) || world.is_blocked(nb) {
                continue;
            }
            if res.occupied(nb, t + 1) {
                continue;
            }
            if nb != cell && res.swap_conflict(cell, nb, t) {
                continue;
            }
            let key = (nb, t + 1);
            if seen.insert(key) {
                seq += 1;
                parent.insert(key, (cell, t));
                open.push(std::cmp::Reverse((t + 1 + h(nb), seq, nb, t + 1)));
            }
        }
    }
    None
}
