//! Fleet logistics for cooperative pushing.
//!
//! When the activation pattern changes, the pushing robots must stand at the
//! contact stances of the newly active channels before the object moves
//! again. This module assigns robots to stances (minimum total travel),
//! routes them one at a time over a shared space-time reservation table, and
//! reports the makespan; the object waits exactly that long with zero input,
//! which for a velocity-level plant means it does not move at all.

pub mod hungarian;
pub mod pathfind;

use nalgebra::{DMatrix, DVector};
use pathfind::{astar, Cell, GridWorld, Reservations};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManipError {
    #[error("grid rejected: {0}")]
    BadGrid(&'static str),
    #[error("fleet rejected: {0}")]
    BadFleet(&'static str),
    #[error("contact geometry rejected: {0}")]
    BadGeometry(&'static str),
    #[error("stance {target} lies on a blocked cell")]
    TargetBlocked { target: usize },
    #[error("no collision-free route for robot {robot}")]
    NoPath { robot: usize },
    #[error("robots {a} and {b} collide at tick {tick}")]
    Conflict { a: usize, b: usize, tick: usize },
    #[error("path of robot {robot} is invalid at tick {tick}")]
    BadPath { robot: usize, tick: usize },
}

/// Body-frame contact points of the eight side-mounted pushing channels of a
/// square object: two per face, offset by the moment arm, ordered like the
/// channel columns.
pub fn square_contact_points(
    arm: f64,
    half_side: f64,
    pose: &DVector<f64>,
) -> Result<Vec<(f64, f64)>, ManipError> {
    stance_geometry(arm, half_side, 0.0, pose)
}

/// World-frame robot stances: one per channel, standing `standoff` outside
/// the contact point along the outward face normal.
pub fn square_contact_stances(
    arm: f64,
    half_side: f64,
    standoff: f64,
    pose: &DVector<f64>,
) -> Result<Vec<(f64, f64)>, ManipError> {
    stance_geometry(arm, half_side, standoff, pose)
}

fn stance_geometry(
    arm: f64,
    half_side: f64,
    standoff: f64,
    pose: &DVector<f64>,
) -> Result<Vec<(f64, f64)>, ManipError> {
    if !(arm > 0.0 && half_side > 0.0 && arm < half_side) {
        return Err(ManipError::BadGeometry(
            "contact offsets need 0 < arm < half side",
        ));
    }
    if !(standoff >= 0.0) {
        return Err(ManipError::BadGeometry("standoff must be non-negative"));
    }
    if pose.len() < 3 {
        return Err(ManipError::BadGeometry("pose needs x, y and heading"));
    }
    // (contact point, push direction) per channel, body frame. The push
    // direction matches the force part of the channel column; the robot
    // stands on the opposite side of the face.
    let a = arm;
    let h = half_side;
    let spots: [((f64, f64), (f64, f64)); 8] = [
        ((-a, -h), (0.0, 1.0)),
        ((a, -h), (0.0, 1.0)),
        ((h, -a), (-1.0, 0.0)),
        ((h, a), (-1.0, 0.0)),
        ((a, h), (0.0, -1.0)),
        ((-a, h), (0.0, -1.0)),
        ((-h, a), (1.0, 0.0)),
        ((-h, -a), (1.0, 0.0)),
    ];
    let (s, c) = pose[2].sin_cos();
    Ok(spots
        .iter()
        .map(|&((px, py), (fx, fy))| {
            let bx = px - fx * standoff;
            let by = py - fy * standoff;
            (
                pose[0] + c * bx - s * by,
                pose[1] + s * bx + c * by,
            )
        })
        .collect())
}

/// One navigation window: who goes where, along which cells, for how long.
#[derive(Debug, Clone)]
pub struct NavigationPlan {
    /// Per robot: index into the target list, `None` for parked robots.
    pub assignment: Vec<Option<usize>>,
    /// Grid cell of each target.
    pub target_cells: Vec<Cell>,
    /// Per robot: cell per tick; all paths share the same length
    /// `ticks + 1`. Parked robots repeat their cell.
    pub paths: Vec<Vec<Cell>>,
    /// Makespan in ticks.
    pub ticks: usize,
    /// Seconds per tick: cell size over robot speed [s].
    pub tick_duration: f64,
    /// Navigation window length `ticks * tick_duration` [s].
    pub delta_t: f64,
}

impl NavigationPlan {
    /// Paths as world coordinates, for plotting.
    pub fn world_paths(&self, world: &GridWorld) -> Vec<Vec<(f64, f64)>> {
        self.paths
            .iter()
            .map(|p| p.iter().map(|&c| world.cell_center(c)).collect())
            .collect()
    }
}

/// Assigns robots to targets and plans collision-free timed routes.
///
/// Robots not needed for a target stay parked and act as obstacles. Planning
/// is sequential in priority order (longest assigned travel first); when a
/// robot's target is another assigned robot's start, that robot goes first.
/// Circular start/target dependencies are reported as unroutable.
pub fn plan_navigation(
    world: &GridWorld,
    starts: &[(f64, f64)],
    targets: &[(f64, f64)],
    speed: f64,
) -> Result<NavigationPlan, ManipError> {
    let k = starts.len();
    let n_t = targets.len();
    if n_t == 0 {
        return Err(ManipError::BadFleet("no targets to reach"));
    }
    if k < n_t {
        return Err(ManipError::BadFleet("fewer robots than required stances"));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(ManipError::BadFleet("robot speed must be positive"));
    }
    let start_cells: Vec<Cell> = starts.iter().map(|&p| world.to_cell(p)).collect();
    let target_cells: Vec<Cell> = targets.iter().map(|&p| world.to_cell(p)).collect();
    for i in 0..k {
        for j in i + 1..k {
            if start_cells[i] == start_cells[j] {
                return Err(ManipError::BadFleet("two robots share a start cell"));
            }
        }
        if world.is_blocked(start_cells[i]) {
            return Err(ManipError::NoPath { robot: i });
        }
    }
    for (t, &cell) in target_cells.iter().enumerate() {
        if world.is_blocked(cell) {
            return Err(ManipError::TargetBlocked { target: t });
        }
        for &other in &target_cells[t + 1..] {
            if cell == other {
                return Err(ManipError::BadFleet("two stances share a cell"));
            }
        }
    }

    // Minimum total travel assignment, targets to robots.
    let cost = DMatrix::from_fn(n_t, k, |t, r| {
        let dx = targets[t].0 - starts[r].0;
        let dy = targets[t].1 - starts[r].1;
        dx.hypot(dy)
    });
    let target_to_robot = hungarian::assign(&cost);
    let mut assignment: Vec<Option<usize>> = vec![None; k];
    for (t, &r) in target_to_robot.iter().enumerate() {
        assignment[r] = Some(t);
    }

    // A target sitting on a parked robot can never clear.
    for (t, &cell) in target_cells.iter().enumerate() {
        if let Some(r) = (0..k).find(|&r| start_cells[r] == cell) {
            if assignment[r].is_none() {
                return Err(ManipError::NoPath {
                    robot: target_to_robot[t],
                });
            }
        }
    }

    let order = priority_order(&assignment, &start_cells, &target_cells, &cost)?;

    // Everyone parks until planned; planned robots move through the table.
    let mut res = Reservations::new();
    for &cell in &start_cells {
        res.park(cell);
    }
    let max_ticks = 4 * (world.width() + world.height()) as usize + 16 * (k + 1);
    let mut paths: Vec<Vec<Cell>> = start_cells.iter().map(|&c| vec![c]).collect();
    for &robot in &order {
        let goal = target_cells[assignment[robot].expect("ordered robots are assigned")];
        res.unpark(start_cells[robot]);
        let path = astar(world, &res, start_cells[robot], goal, max_ticks)
            .ok_or(ManipError::NoPath { robot })?;
        res.commit_path(&path);
        paths[robot] = path;
    }

    let ticks = paths.iter().map(|p| p.len() - 1).max().unwrap_or(0);
    for p in &mut paths {
        let last = *p.last().expect("paths start non-empty");
        p.resize(ticks + 1, last);
    }
    let tick_duration = world.cell_size() / speed;
    Ok(NavigationPlan {
        assignment,
        target_cells,
        paths,
        ticks,
        tick_duration,
        delta_t: ticks as f64 * tick_duration,
    })
}

/// Assigned robots ordered by travel cost (longest first), adjusted so a
/// robot vacates its cell before someone needs it as a goal.
fn priority_order(
    assignment: &[Option<usize>],
    start_cells: &[Cell],
    target_cells: &[Cell],
    cost: &DMatrix<f64>,
) -> Result<Vec<usize>, ManipError> {
    let assigned: Vec<usize> = (0..assignment.len())
        .filter(|&r| assignment[r].is_some())
        .collect();
    // need_first[x] lists robots whose goal is robot x's start cell.
    let mut indegree: std::collections::HashMap<usize, usize> =
        assigned.iter().map(|&r| (r, 0)).collect();
    let mut blocks: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for &waiter in &assigned {
        let goal = target_cells[assignment[waiter].expect("assigned")];
        for &blocker in &assigned {
            if blocker != waiter && start_cells[blocker] == goal {
                blocks.entry(blocker).or_default().push(waiter);
                *indegree.get_mut(&waiter).expect("assigned") += 1;
            }
        }
    }
    let travel = |r: usize| cost[(assignment[r].expect("assigned"), r)];
    let mut ready: Vec<usize> = assigned
        .iter()
        .copied()
        .filter(|r| indegree[r] == 0)
        .collect();
    let mut order = Vec::with_capacity(assigned.len());
    while !ready.is_empty() {
        // Highest travel cost first; ties to the lower robot index.
        ready.sort_by(|&a, &b| travel(b).total_cmp(&travel(a)).then(a.cmp(&b)));
        let next = ready.remove(0);
        order.push(next);
        for &waiter in blocks.get(&next).into_iter().flatten() {
            let d = indegree.get_mut(&waiter).expect("assigned");
            *d -= 1;
            if *d == 0 {
                ready.push(waiter);
            }
        }
    }
    if order.len() < assigned.len() {
        // A cycle of robots each standing on another's goal.
        let stuck = assigned
            .iter()
            .copied()
            .find(|r| !order.contains(r))
            .expect("cycle member exists");
        return Err(ManipError::NoPath { robot: stuck });
    }
    Ok(order)
}

/// Re-checks a finished plan: uniform timing, legal single-cell moves, no
/// blocked cells, every assigned robot parked on its stance, no two robots
/// in one cell at one tick, and no pair swapping cells.
pub fn audit_plan(world: &GridWorld, plan: &NavigationPlan) -> Result<(), ManipError> {
    let k = plan.paths.len();
    for (r, path) in plan.paths.iter().enumerate() {
        if path.len() != plan.ticks + 1 {
            return Err(ManipError::BadPath { robot: r, tick: path.len() });
        }
        for (t, &c) in path.iter().enumerate() {
            if !world.in_bounds(c) || world.is_blocked(c) {
                return Err(ManipError::BadPath { robot: r, tick: t });
            }
            if t > 0 {
                let p = path[t - 1];
                if (c.0 - p.0).abs() + (c.1 - p.1).abs() > 1 {
                    return Err(ManipError::BadPath { robot: r, tick: t });
                }
            }
        }
        if let Some(tgt) = plan.assignment[r] {
            if *path.last().expect("non-empty") != plan.target_cells[tgt] {
                return Err(ManipError::BadPath { robot: r, tick: plan.ticks });
            }
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            for t in 0..=plan.ticks {
                if plan.paths[a][t] == plan.paths[b][t] {
                    return Err(ManipError::Conflict { a, b, tick: t });
                }
                if t < plan.ticks
                    && plan.paths[a][t + 1] == plan.paths[b][t]
                    && plan.paths[b][t + 1] == plan.paths[a][t]
                {
                    return Err(ManipError::Conflict { a, b, tick: t });
                }
            }
        }
    }
    Ok(())
}
