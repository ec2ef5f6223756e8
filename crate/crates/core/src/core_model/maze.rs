use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::State;

/// Segment samples per unit of length used by [`GridMaze::segment_clear`].
pub const SEGMENT_SAMPLES_PER_CELL: f64 = 4.0;

/// Margin used when snapping a point inside a free cell.
const CELL_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum MazeError {
    #[error("maze text is empty")]
    Empty,
    #[error("line {line}, column {column}: unexpected character {found:?}")]
    BadChar {
        line: usize,
        column: usize,
        found: char,
    },
    #[error("line {line}: ragged row of length {found}, expected {expected}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate start at line {line}, column {column}")]
    DuplicateStart { line: usize, column: usize },
    #[error("duplicate goal at line {line}, column {column}")]
    DuplicateGoal { line: usize, column: usize },
    #[error("maze has no start cell `S`")]
    MissingStart,
    #[error("maze has no goal cell `G`")]
    MissingGoal,
    #[error("{what} {state} is not in a free cell")]
    NotFree { what: &'static str, state: State },
}

/// Occupancy grid with a start and a goal. Row 0 is the first line of the text form.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMaze {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
    start: State,
    goal: State,
    /// For every cell, the index of the closest free cell (itself when free).
    nearest_free: Vec<usize>,
}

impl GridMaze {
    pub fn new(
        width: usize,
        height: usize,
        blocked: Vec<bool>,
        start: State,
        goal: State,
    ) -> Result<Self, MazeError> {
        if width == 0 || height == 0 || blocked.len() != width * height {
            return Err(MazeError::Empty);
        }
        let nearest_free = nearest_free_table(width, height, &blocked);
        let maze = Self {
            width,
            height,
            blocked,
            start,
            goal,
            nearest_free,
        };
        if !maze.is_free(start) {
            return Err(MazeError::NotFree {
                what: "start",
                state: start,
            });
        }
        if !maze.is_free(goal) {
            return Err(MazeError::NotFree {
                what: "goal",
                state: goal,
            });
        }
        Ok(maze)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> State {
        self.start
    }

    pub fn goal(&self) -> State {
        self.goal
    }

    /// Same grid with a different start state.
    pub fn with_start(&self, start: State) -> Result<Self, MazeError> {
        if !self.is_free(start) {
            return Err(MazeError::NotFree {
                what: "start",
                state: start,
            });
        }
        Ok(Self {
            start,
            ..self.clone()
        })
    }

    pub fn is_blocked_cell(&self, col: usize, row: usize) -> bool {
        self.blocked[row * self.width + col]
    }

    fn cell_index(&self, p: State) -> Option<usize> {
        if !(p.x >= 0.0 && p.y >= 0.0) {
            return None;
        }
        let (col, row) = (p.x.floor() as usize, p.y.floor() as usize);
        (col < self.width && row < self.height).then(|| row * self.width + col)
    }

    /// True when the point lies inside the grid on a free cell.
    pub fn is_free(&self, p: State) -> bool {
        self.cell_index(p).is_some_and(|i| !self.blocked[i])
    }

    /// True when every sample along `a -> b` (4 per unit length, endpoints included) is free.
    pub fn segment_clear(&self, a: State, b: State) -> bool {
        let d = b - a;
        let n = ((d.norm() * SEGMENT_SAMPLES_PER_CELL).ceil() as usize).max(1);
        (0..=n).all(|k| self.is_free(a + d * (k as f64 / n as f64)))
    }

    /// Clamps into the grid and moves a blocked point to the closest point of the
    /// nearest free cell.
    pub fn project_to_free(&self, p: State) -> State {
        let clamped = State::new(
            p.x.clamp(CELL_MARGIN, self.width as f64 - CELL_MARGIN),
            p.y.clamp(CELL_MARGIN, self.height as f64 - CELL_MARGIN),
        );
        let idx = self
            .cell_index(clamped)
            .expect("clamped point lies inside the grid");
        if !self.blocked[idx] {
            return clamped;
        }
        let target = self.nearest_free[idx];
        let (col, row) = ((target % self.width) as f64, (target / self.width) as f64);
        State::new(
            clamped.x.clamp(col + CELL_MARGIN, col + 1.0 - CELL_MARGIN),
            clamped.y.clamp(row + CELL_MARGIN, row + 1.0 - CELL_MARGIN),
        )
    }

    pub fn to_text(&self) -> String {
        let start = self.cell_index(self.start);
        let goal = self.cell_index(self.goal);
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                let i = row * self.width + col;
                out.push(if Some(i) == start {
                    'S'
                } else if Some(i) == goal {
                    'G'
                } else if self.blocked[i] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

fn nearest_free_table(width: usize, height: usize, blocked: &[bool]) -> Vec<usize> {
    let center_dist2 = |a: usize, b: usize| {
        let dx = (a % width) as f64 - (b % width) as f64;
        let dy = (a / width) as f64 - (b / width) as f64;
        dx * dx + dy * dy
    };
    (0..blocked.len())
        .map(|idx| {
            if !blocked[idx] {
                return idx;
            }
            let (col, row) = ((idx % width) as isize, (idx / width) as isize);
            let mut best: Option<(f64, usize)> = None;
            for r in 1..=(width.max(height) as isize) {
                if let Some((d2, _)) = best {
                    if (r as f64) * (r as f64) > d2 {
                        break;
                    }
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs() != r && dy.abs() != r {
                            continue;
                        }
                        let (c, rr) = (col + dx, row + dy);
                        if c < 0 || rr < 0 || c >= width as isize || rr >= height as isize {
                            continue;
                        }
                        let j = rr as usize * width + c as usize;
                        if blocked[j] {
                            continue;
                        }
                        let d2 = center_dist2(idx, j);
                        if best.is_none_or(|(bd, bj)| d2 < bd || (d2 == bd && j < bj)) {
                            best = Some((d2, j));
                        }
                    }
                }
            }
            // A grid with no free cell cannot hold a start, so construction fails later.
            best.map_or(idx, |(_, j)| j)
        })
        .collect()
}

/// Parses the text maze format: `#` wall, `.` free, `S` start, `G` goal, one row per line.
pub fn load_maze(text: &str) -> Result<GridMaze, MazeError> {
    let rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let Some(&(_, first)) = rows.first() else {
        return Err(MazeError::Empty);
    };
    let width = first.chars().count();
    let height = rows.len();
    let mut blocked = Vec::with_capacity(width * height);
    let mut start = None;
    let mut goal = None;
    for (row, &(line, text)) in rows.iter().enumerate() {
        let found = text.chars().count();
        if found != width {
            return Err(MazeError::Ragged {
                line,
                expected: width,
                found,
            });
        }
        for (col, ch) in text.chars().enumerate() {
            let column = col + 1;
            let center = State::new(col as f64 + 0.5, row as f64 + 0.5);
            match ch {
                '#' => blocked.push(true),
                '.' => blocked.push(false),
                'S' => {
                    if start.is_some() {
                        return Err(MazeError::DuplicateStart { line, column });
                    }
                    start = Some(center);
                    blocked.push(false);
                }
                'G' => {
                    if goal.is_some() {
                        return Err(MazeError::DuplicateGoal { line, column });
                    }
                    goal = Some(center);
                    blocked.push(false);
                }
                found => {
                    return Err(MazeError::BadChar {
                        line,
                        column,
                        found,
                    })
                }
            }
        }
    }
    let start = start.ok_or(MazeError::MissingStart)?;
    let goal = goal.ok_or(MazeError::MissingGoal)?;
    GridMaze::new(width, height, blocked, start, goal)
}

/// Recursive-division maze layout parameters.
#[derive(Debug, Clone, Copy)]
pub struct DivisionStyle {
    /// Chambers narrower than this (in cells, either axis) are not divided further.
    pub min_chamber: usize,
    /// Width of the opening carved into every dividing wall.
    pub door_width: usize,
}

/// Generates a bordered recursive-division maze of odd size with the start in the
/// bottom-left corner cell and the goal in the top-right corner cell.
pub fn generate_maze(size: usize, style: DivisionStyle, seed: u64) -> GridMaze {
    assert!(size >= 5 && size % 2 == 1, "maze size must be odd and >= 5");
    let mut blocked = vec![false; size * size];
    for i in 0..size {
        blocked[i] = true;
        blocked[(size - 1) * size + i] = true;
        blocked[i * size] = true;
        blocked[i * size + size - 1] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    divide(
        &mut blocked,
        size,
        (1, 1, size - 2, size - 2),
        style,
        &mut rng,
    );
    let start = State::new(1.5, size as f64 - 1.5);
    let goal = State::new(size as f64 - 1.5, 1.5);
    GridMaze::new(size, size, blocked, start, goal).expect("corner cells are never walled")
}

/// Divides the open chamber with inclusive odd-aligned bounds `(x0, y0, x1, y1)`.
fn divide(
    blocked: &mut [bool],
    size: usize,
    (x0, y0, x1, y1): (usize, usize, usize, usize),
    style: DivisionStyle,
    rng: &mut ChaCha8Rng,
) {
    let w = x1 + 1 - x0;
    let h = y1 + 1 - y0;
    // a dividing wall needs a free row or column on both sides
    let min_chamber = style.min_chamber.max(3);
    if w < min_chamber && h < min_chamber {
        return;
    }
    let horizontal = match (w < min_chamber, h < min_chamber) {
        (true, false) => true,
        (false, true) => false,
        _ if w < h => true,
        _ if h < w => false,
        _ => rng.gen_bool(0.5),
    };
    if horizontal {
        // wall on an even row strictly inside the chamber
        let slots = (h - 1) / 2;
        let wy = y0 + 1 + 2 * rng.gen_range(0..slots);
        for x in x0..=x1 {
            blocked[wy * size + x] = true;
        }
        carve_door(blocked, x0, x1, |x| wy * size + x, style, rng);
        divide(blocked, size, (x0, y0, x1, wy - 1), style, rng);
        divide(blocked, size, (x0, wy + 1, x1, y1), style, rng);
    } else {
        let slots = (w - 1) / 2;
        let wx = x0 + 1 + 2 * rng.gen_range(0..slots);
        for y in y0..=y1 {
            blocked[y * size + wx] = true;
        }
        carve_door(blocked, y0, y1, |y| y * size + wx, style, rng);
        divide(blocked, size, (x0, y0, wx - 1, y1), style, rng);
        divide(blocked, size, (wx + 1, y0, x1, y1), style, rng);
    }
}

fn carve_door(
    blocked: &mut [bool],
    lo: usize,
    hi: usize,
    index: impl Fn(usize) -> usize,
    style: DivisionStyle,
    rng: &mut ChaCha8Rng,
) {
    let span = hi + 1 - lo;
    let door = style.door_width.clamp(1, span);
    // door starts on an odd coordinate so perpendicular walls never seal it
    let starts = (span - door) / 2 + 1;
    let first = lo + 2 * rng.gen_range(0..starts);
    for c in first..(first + door).min(hi + 1) {
        blocked[index(c)] = false;
    }
}
