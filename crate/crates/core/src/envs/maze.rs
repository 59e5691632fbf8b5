use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default corridor: 4×4 interior cells of size 2 (8×8 units), start in the
/// bottom-left cell, evaluation target in the bottom-right cell.
pub const DEFAULT_LAYOUT: &str = "\
######
#....#
#.##.#
#.##.#
#S##G#
######
";

pub const DEFAULT_CELL_SIZE: f64 = 2.0;

/// Axis-aligned box `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Wall {
    /// Positive outside, negative inside.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(x - self.x1);
        let dy = (self.y0 - y).max(y - self.y1);
        if dx <= 0.0 && dy <= 0.0 {
            dx.max(dy)
        } else {
            dx.max(0.0).hypot(dy.max(0.0))
        }
    }
}

/// Grid layout. Row 0 of the text is the top of the maze; the grid is
/// centered on the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeLayout {
    rows: usize,
    cols: usize,
    cell: f64,
    wall_cells: Vec<bool>,
    start: (usize, usize),
    goal: (usize, usize),
    walls: Vec<Wall>,
}

impl MazeLayout {
    pub fn parse(text: &str, cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::Invalid(format!("cell size {cell}")));
        }
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::Layout {
                line: 1,
                msg: "empty layout".into(),
            });
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut wall_cells = Vec::with_capacity(rows * cols);
        let (mut start, mut goal) = (None, None);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Layout {
                    line: r + 1,
                    msg: format!("expected {cols} columns"),
                });
            }
            for (c, ch) in line.chars().enumerate() {
                let is_wall = match ch {
                    '#' => true,
                    '.' => false,
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.replace((r, c)).is_some() {
                            return Err(Error::Layout {
                                line: r + 1,
                                msg: format!("duplicate '{ch}'"),
                            });
                        }
                        false
                    }
                    other => {
                        return Err(Error::Layout {
                            line: r + 1,
                            msg: format!("unknown cell '{other}'"),
                        })
                    }
                };
                wall_cells.push(is_wall);
            }
        }
        let missing = |what: &str| Error::Layout {
            line: rows,
            msg: format!("no '{what}' cell"),
        };
        let start = start.ok_or_else(|| missing("S"))?;
        let goal = goal.ok_or_else(|| missing("G"))?;
        let mut layout = Self {
            rows,
            cols,
            cell,
            wall_cells,
            start,
            goal,
            walls: Vec::new(),
        };
        layout.walls = (0..rows * cols)
            .filter(|&i| layout.wall_cells[i])
            .map(|i| layout.cell_box(i / cols, i % cols))
            .collect();
        Ok(layout)
    }

    pub fn default_layout() -> Self {
        Self::parse(DEFAULT_LAYOUT, DEFAULT_CELL_SIZE).expect("embedded layout parses")
    }

    pub fn load(path: &std::path::Path, cell: f64) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, cell)
    }

    fn cell_box(&self, r: usize, c: usize) -> Wall {
        let x0 = (c as f64 - self.cols as f64 / 2.0) * self.cell;
        let y1 = (self.rows as f64 / 2.0 - r as f64) * self.cell;
        Wall {
            x0,
            x1: x0 + self.cell,
            y0: y1 - self.cell,
            y1,
        }
    }

    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        let b = self.cell_box(r, c);
        (0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1))
    }

    pub fn start(&self) -> (f64, f64) {
        self.cell_center(self.start.0, self.start.1)
    }

    pub fn goal(&self) -> (f64, f64) {
        self.cell_center(self.goal.0, self.goal.1)
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    /// Bounding box of the whole grid as `(x0, x1, y0, y1)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let hw = self.cols as f64 * self.cell / 2.0;
        let hh = self.rows as f64 * self.cell / 2.0;
        (-hw, hw, -hh, hh)
    }

    fn is_wall(&self, r: i64, c: i64) -> bool {
        if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 {
            return true;
        }
        self.wall_cells[r as usize * self.cols + c as usize]
    }

    /// Indices of the cells whose closed extent contains `u` (in cell
    /// units): one index inside a cell, two on a cell boundary.
    fn span(u: f64) -> (i64, i64) {
        let f = u.floor();
        if f == u {
            (f as i64 - 1, f as i64)
        } else {
            (f as i64, f as i64)
        }
    }

    fn cols_at(&self, x: f64) -> (i64, i64) {
        Self::span(x / self.cell + self.cols as f64 / 2.0)
    }

    fn rows_at(&self, y: f64) -> (i64, i64) {
        Self::span(self.rows as f64 / 2.0 - y / self.cell)
    }

    /// True when the point lies in the interior of the union of wall cells.
    pub fn inside_wall(&self, x: f64, y: f64) -> bool {
        let (r0, r1) = self.rows_at(y);
        let (c0, c1) = self.cols_at(x);
        (r0..=r1).all(|r| (c0..=c1).all(|c| self.is_wall(r, c)))
    }

    /// Signed distance to the union of wall cells: positive in free space,
    /// negative inside a wall.
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        if self.inside_wall(x, y) {
            let to_free = (0..self.rows * self.cols)
                .filter(|&i| !self.wall_cells[i])
                .map(|i| self.cell_box(i / self.cols, i % self.cols).signed_distance(x, y))
                .fold(f64::INFINITY, f64::min);
            -to_free
        } else {
            self.walls
                .iter()
                .map(|w| w.signed_distance(x, y).max(0.0))
                .fold(f64::INFINITY, f64::min)
        }
    }

    /// Uniform point over free space: every free cell has the same area,
    /// so pick a cell uniformly and then a point inside it.
    pub fn sample_free_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let free: Vec<usize> = (0..self.rows * self.cols).filter(|&i| !self.wall_cells[i]).collect();
        let i = free[rng.gen_range(0..free.len())];
        let b = self.cell_box(i / self.cols, i % self.cols);
        (rng.gen_range(b.x0..b.x1), rng.gen_range(b.y0..b.y1))
    }

    /// Moves `(x, y)` by `(dx, dy)`, first along x then along y. Motion
    /// along an axis stops at the first wall cell whose neighborhood on the
    /// other axis is solid, so sliding along a wall face is free but a seam
    /// between two wall cells is not a passage.
    pub fn resolve(&self, x: f64, y: f64, dx: f64, dy: f64) -> (f64, f64) {
        let (r0, r1) = self.rows_at(y);
        let x_spans = (-1..=self.cols as i64)
            .filter(|&c| (r0..=r1).all(|r| self.is_wall(r, c)))
            .map(|c| {
                let x0 = (c as f64 - self.cols as f64 / 2.0) * self.cell;
                (x0, x0 + self.cell)
            });
        let nx = clip_axis(x, dx, x_spans);
        let (c0, c1) = self.cols_at(nx);
        let y_spans = (-1..=self.rows as i64)
            .filter(|&r| (c0..=c1).all(|c| self.is_wall(r, c)))
            .map(|r| {
                let y1 = (self.rows as f64 / 2.0 - r as f64) * self.cell;
                (y1 - self.cell, y1)
            });
        let ny = clip_axis(y, dy, y_spans);
        (nx, ny)
    }
}

fn clip_axis(p: f64, d: f64, spans: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut target = p + d;
    for (lo, hi) in spans {
        if d > 0.0 && p <= lo && target > lo {
            target = lo;
        } else if d < 0.0 && p >= hi && target < hi {
            target = hi;
        }
    }
    target
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MazeConfig {
    pub max_speed: f64,
    pub horizon: usize,
    pub target_radius: f64,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            max_speed: 1.0,
            horizon: 500,
            target_radius: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MazeStep {
    pub pos: (f64, f64),
    pub reward: f64,
    /// Episode is over, by timeout or by reaching the target.
    pub done: bool,
    /// Target reached.
    pub success: bool,
}

/// Point mass with direct velocity control.
#[derive(Clone, Debug)]
pub struct PointMazeEnv {
    layout: MazeLayout,
    config: MazeConfig,
    pos: (f64, f64),
    target: (f64, f64),
    t: usize,
}

impl PointMazeEnv {
    pub fn new(layout: MazeLayout, config: MazeConfig) -> Self {
        let pos = layout.start();
        let target = layout.goal();
        Self {
            layout,
            config,
            pos,
            target,
            t: 0,
        }
    }

    pub fn layout(&self) -> &MazeLayout {
        &self.layout
    }

    pub fn config(&self) -> &MazeConfig {
        &self.config
    }

    pub fn pos(&self) -> (f64, f64) {
        self.pos
    }

    pub fn target(&self) -> (f64, f64) {
        self.target
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Starts an episode at the layout start with the given target.
    pub fn reset(&mut self, target: (f64, f64)) -> (f64, f64) {
        self.pos = self.layout.start();
        self.target = target;
        self.t = 0;
        self.pos
    }

    /// Places the agent directly; used by tests and probes.
    pub fn set_pos(&mut self, pos: (f64, f64)) {
        self.pos = pos;
    }

    pub fn distance_to_target(&self) -> f64 {
        (self.pos.0 - self.target.0).hypot(self.pos.1 - self.target.1)
    }

    pub fn step(&mut self, action: [f64; 2]) -> MazeStep {
        let [mut ax, mut ay] = action.map(|v| if v.is_finite() { v } else { 0.0 });
        let norm = ax.hypot(ay);
        if norm > 1.0 {
            ax /= norm;
            ay /= norm;
        }
        let s = self.config.max_speed;
        self.pos = self.layout.resolve(self.pos.0, self.pos.1, ax * s, ay * s);
        self.t += 1;
        let dist = self.distance_to_target();
        let success = dist <= self.config.target_radius;
        MazeStep {
            pos: self.pos,
            reward: -dist,
            done: success || self.t >= self.config.horizon,
            success,
        }
    }
}
