//! First-order differential-drive robot on a 2D occupancy grid.
//!
//! The robot is a point moving with unicycle kinematics. A grid LIDAR counts
//! free cells along discrete (Bresenham) lines, and the reward penalizes
//! navigation error relative to a single goal waypoint.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let w = angle.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }
}

/// Linear velocity (m/s) and angular velocity (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v: f64,
    pub omega: f64,
}

impl Action {
    pub fn clamped(self, world: &WorldConfig) -> Self {
        Self {
            v: self.v.clamp(0.0, world.v_max),
            omega: self.omega.clamp(-world.omega_max, world.omega_max),
        }
    }

    /// Maps an agent action in `[-1, 1]^2` onto physical velocities.
    pub fn from_normalized(a: &[f64], world: &WorldConfig) -> Self {
        let v = 0.5 * (a[0].clamp(-1.0, 1.0) + 1.0) * world.v_max;
        let omega = a[1].clamp(-1.0, 1.0) * world.omega_max;
        Self { v, omega }
    }

    pub fn to_normalized(self, world: &WorldConfig) -> [f64; 2] {
        let a = self.clamped(world);
        [(2.0 * a.v / world.v_max - 1.0).clamp(-1.0, 1.0), (a.omega / world.omega_max).clamp(-1.0, 1.0)]
    }
}

/// Axis-aligned obstacle rectangle in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub start: Pose,
    pub goal: [f64; 2],
    pub obstacles: Vec<Rect>,
    /// Extent of the allowed region beyond the start/goal bounding box.
    pub boundary_margin: f64,
    pub goal_threshold: f64,
    pub dt: f64,
    /// Meters per grid cell.
    pub grid_resolution: f64,
    pub lidar_beams: usize,
    /// Maximum beam length in cells.
    pub lidar_max_range: usize,
    pub max_steps: usize,
    pub v_max: f64,
    pub omega_max: f64,
    /// Half-width of the uniform box around `start` used at reset.
    pub start_jitter: f64,
    pub heading_jitter: f64,
    /// Multiplier on the raw LIDAR count sum in the reward.
    pub lidar_reward_scale: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            start: Pose::new(0.0, 0.0, 0.0),
            goal: [2.5, 0.0],
            obstacles: vec![Rect { x_min: 1.1, y_min: -0.2, x_max: 1.4, y_max: 0.2 }],
            boundary_margin: 1.0,
            goal_threshold: 0.1,
            dt: 0.1,
            grid_resolution: 0.05,
            lidar_beams: 16,
            lidar_max_range: 20,
            max_steps: 200,
            v_max: 0.22,
            omega_max: 2.84,
            start_jitter: 0.1,
            heading_jitter: 0.2,
            lidar_reward_scale: 1.0 / 320.0,
        }
    }
}

impl WorldConfig {
    /// World with no obstacles and otherwise default settings.
    pub fn open() -> Self {
        Self { obstacles: Vec::new(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("goal_threshold", self.goal_threshold),
            ("dt", self.dt),
            ("grid_resolution", self.grid_resolution),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(format!("world.{key}"), format!("must be positive, got {value}")));
            }
        }
        let non_negative = [
            ("boundary_margin", self.boundary_margin),
            ("start_jitter", self.start_jitter),
            ("heading_jitter", self.heading_jitter),
            ("lidar_reward_scale", self.lidar_reward_scale),
        ];
        for (key, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(format!("world.{key}"), format!("must be non-negative, got {value}")));
            }
        }
        if self.lidar_beams == 0 {
            return Err(Error::config("world.lidar_beams", "need at least one beam"));
        }
        if self.lidar_max_range == 0 {
            return Err(Error::config("world.lidar_max_range", "must be at least one cell"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("world.max_steps", "must be at least one step"));
        }
        for (i, r) in self.obstacles.iter().enumerate() {
            if !(r.x_min <= r.x_max && r.y_min <= r.y_max) {
                return Err(Error::config(format!("world.obstacles[{i}]"), "min corner exceeds max corner"));
            }
        }
        Ok(())
    }

    /// `(x_min, y_min, x_max, y_max)` of the allowed region.
    pub fn boundary(&self) -> (f64, f64, f64, f64) {
        let m = self.boundary_margin;
        (
            self.start.x.min(self.goal[0]) - m,
            self.start.y.min(self.goal[1]) - m,
            self.start.x.max(self.goal[0]) + m,
            self.start.y.max(self.goal[1]) + m,
        )
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.boundary();
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    pub fn at_goal(&self, x: f64, y: f64) -> bool {
        (x - self.goal[0]).abs() <= self.goal_threshold && (y - self.goal[1]).abs() <= self.goal_threshold
    }

    pub fn observation_dim(&self) -> usize {
        2 + self.lidar_beams
    }

    pub const ACTION_DIM: usize = 2;
}

/// Obstacle occupancy over world-anchored cells `floor(coord / resolution)`.
///
/// Cells outside the stored window are free.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: (i64, i64),
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(world: &WorldConfig) -> Self {
        let res = world.grid_resolution;
        let pad = world.lidar_max_range as i64 + 2;
        let (x0, y0, x1, y1) = world.boundary();
        let mut lo = ((x0 / res).floor() as i64 - pad, (y0 / res).floor() as i64 - pad);
        let mut hi = ((x1 / res).floor() as i64 + pad, (y1 / res).floor() as i64 + pad);
        for r in &world.obstacles {
            lo.0 = lo.0.min((r.x_min / res).floor() as i64);
            lo.1 = lo.1.min((r.y_min / res).floor() as i64);
            hi.0 = hi.0.max((r.x_max / res).floor() as i64);
            hi.1 = hi.1.max((r.y_max / res).floor() as i64);
        }
        let width = (hi.0 - lo.0 + 1) as usize;
        let height = (hi.1 - lo.1 + 1) as usize;
        let mut cells = vec![false; width * height];
        for r in &world.obstacles {
            let i0 = (r.x_min / res).floor() as i64;
            let i1 = (r.x_max / res).floor() as i64;
            let j0 = (r.y_min / res).floor() as i64;
            let j1 = (r.y_max / res).floor() as i64;
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let (cx, cy) = ((i as f64 + 0.5) * res, (j as f64 + 0.5) * res);
                    if r.contains(cx, cy) {
                        cells[(j - lo.1) as usize * width + (i - lo.0) as usize] = true;
                    }
                }
            }
        }
        Self { resolution: res, origin: lo, width, height, cells }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.resolution).floor() as i64, (y / self.resolution).floor() as i64)
    }

    pub fn is_occupied(&self, cell: (i64, i64)) -> bool {
        let (i, j) = (cell.0 - self.origin.0, cell.1 - self.origin.1);
        if i < 0 || j < 0 || i as usize >= self.width || j as usize >= self.height {
            return false;
        }
        self.cells[j as usize * self.width + i as usize]
    }

    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        self.is_occupied(self.cell_of(x, y))
    }
}

/// Cells visited by Bresenham's line from `from` to `to`, excluding `from`.
fn bresenham(from: (i64, i64), to: (i64, i64)) -> impl Iterator<Item = (i64, i64)> {
    let dx = (to.0 - from.0).abs();
    let dy = -(to.1 - from.1).abs();
    let sx = if from.0 < to.0 { 1 } else { -1 };
    let sy = if from.1 < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut cur = from;
    std::iter::from_fn(move || {
        if cur == to {
            return None;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            cur.0 += sx;
        }
        if e2 <= dx {
            err += dx;
            cur.1 += sy;
        }
        Some(cur)
    })
}

/// Raw LIDAR counts: for each of the evenly spaced beams around the heading,
/// the number of free cells before the first obstacle, capped at the range.
pub fn lidar_scan(pose: &Pose, world: &WorldConfig, grid: &OccupancyGrid) -> Vec<u32> {
    let origin = grid.cell_of(pose.x, pose.y);
    let range = world.lidar_max_range as u32;
    // long enough that the Chebyshev length of every beam reaches `range`
    let reach = 2.0 * range as f64;
    (0..world.lidar_beams)
        .map(|k| {
            let angle = pose.theta + 2.0 * PI * k as f64 / world.lidar_beams as f64;
            let end = (
                origin.0 + (reach * angle.cos()).round() as i64,
                origin.1 + (reach * angle.sin()).round() as i64,
            );
            let mut count = 0;
            for cell in bresenham(origin, end) {
                if count == range || grid.is_occupied(cell) {
                    break;
                }
                count += 1;
            }
            count
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackErrors {
    pub goal_distance: f64,
    pub goal_heading: f64,
    pub cross_track: f64,
    pub along_track: f64,
    pub heading: f64,
}

pub fn track_errors(pose: &Pose, goal: [f64; 2]) -> TrackErrors {
    let (dx, dy) = (goal[0] - pose.x, goal[1] - pose.y);
    let goal_distance = dx.hypot(dy);
    let goal_heading = if goal_distance == 0.0 { 0.0 } else { dy.atan2(dx) };
    TrackErrors {
        goal_distance,
        goal_heading,
        cross_track: goal_distance * (goal_heading - pose.theta).sin(),
        along_track: dx.abs() + dy.abs(),
        heading: wrap_angle(goal_heading - pose.theta),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    None,
    Goal,
    Collision,
    OutOfBounds,
    Timeout,
}

impl Event {
    /// Whether the event ends the MDP (as opposed to a time-limit truncation).
    pub fn is_terminal(self) -> bool {
        matches!(self, Event::Goal | Event::Collision | Event::OutOfBounds)
    }
}

/// Step reward. Branches are checked by the caller in the order
/// goal, collision, boundary; everything else gets the shaped penalty.
pub fn reward_fn(event: Event, errors: &TrackErrors, lidar: &[u32], lidar_scale: f64) -> f64 {
    match event {
        Event::Goal => 100.0,
        Event::Collision => -100.0,
        Event::OutOfBounds => -10.0,
        Event::None | Event::Timeout => {
            let lidar_sum: f64 = lidar.iter().map(|&c| f64::from(c)).sum();
            -(errors.cross_track.powi(2) + errors.along_track + errors.heading.abs()) + lidar_scale * lidar_sum
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub goal_distance: f64,
    pub heading_error: f64,
    /// Beam counts divided by the maximum range, in `[0, 1]`.
    pub lidar: Vec<f64>,
}

impl Observation {
    fn new(errors: &TrackErrors, lidar: &[u32], max_range: usize) -> Self {
        Self {
            goal_distance: errors.goal_distance,
            heading_error: errors.heading,
            lidar: lidar.iter().map(|&c| f64::from(c) / max_range as f64).collect(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + self.lidar.len());
        v.push(self.goal_distance);
        v.push(self.heading_error);
        v.extend_from_slice(&self.lidar);
        v
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self { goal_distance: values[0], heading_error: values[1], lidar: values[2..].to_vec() }
    }
}

/// Unicycle update with the pre-step heading.
pub fn kinematics(pose: &Pose, action: &Action, dt: f64) -> Pose {
    Pose {
        x: pose.x + dt * action.v * pose.theta.cos(),
        y: pose.y + dt * action.v * pose.theta.sin(),
        theta: wrap_angle(pose.theta + dt * action.omega),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub pose: Pose,
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub event: Event,
    /// Raw beam counts used in the reward.
    pub lidar: Vec<u32>,
}

/// One episode-owning environment instance.
#[derive(Clone, Debug)]
pub struct NavEnv {
    world: WorldConfig,
    grid: OccupancyGrid,
    pose: Pose,
    steps: usize,
    done: bool,
}

impl NavEnv {
    pub fn new(world: WorldConfig) -> Result<Self> {
        world.validate()?;
        let grid = OccupancyGrid::new(&world);
        if grid.occupied_at(world.start.x, world.start.y) {
            return Err(Error::config("world.start", "start pose lies inside an obstacle"));
        }
        let pose = world.start;
        Ok(Self { world, grid, pose, steps: 0, done: true })
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn observe(&self) -> Observation {
        let lidar = lidar_scan(&self.pose, &self.world, &self.grid);
        Observation::new(&track_errors(&self.pose, self.world.goal), &lidar, self.world.lidar_max_range)
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Observation> {
        let w = &self.world;
        let mut pose = w.start;
        if w.start_jitter > 0.0 {
            pose.x += rng.random_range(-w.start_jitter..=w.start_jitter);
            pose.y += rng.random_range(-w.start_jitter..=w.start_jitter);
        }
        if w.heading_jitter > 0.0 {
            pose.theta = wrap_angle(pose.theta + rng.random_range(-w.heading_jitter..=w.heading_jitter));
        }
        if self.grid.occupied_at(pose.x, pose.y) {
            return Err(Error::config("world.start", "jittered start pose lies inside an obstacle"));
        }
        self.pose = pose;
        self.steps = 0;
        self.done = false;
        Ok(self.observe())
    }

    /// Teleports the robot without touching the step counter.
    pub fn set_pose(&mut self, pose: Pose) {
        self.pose = pose;
        self.done = false;
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::InvalidArgument("step called on a finished episode; call reset".into()));
        }
        let action = action.clamped(&self.world);
        let pose = kinematics(&self.pose, &action, self.world.dt);
        self.pose = pose;
        self.steps += 1;

        let errors = track_errors(&pose, self.world.goal);
        let lidar = lidar_scan(&pose, &self.world, &self.grid);
        let event = if self.world.at_goal(pose.x, pose.y) {
            Event::Goal
        } else if self.grid.occupied_at(pose.x, pose.y) {
            Event::Collision
        } else if !self.world.in_bounds(pose.x, pose.y) {
            Event::OutOfBounds
        } else if self.steps >= self.world.max_steps {
            Event::Timeout
        } else {
            Event::None
        };
        let reward = reward_fn(event, &errors, &lidar, self.world.lidar_reward_scale);
        let done = event != Event::None;
        self.done = done;
        Ok(StepOutcome {
            pose,
            observation: Observation::new(&errors, &lidar, self.world.lidar_max_range),
            reward,
            done,
            event,
            lidar,
        })
    }
}
