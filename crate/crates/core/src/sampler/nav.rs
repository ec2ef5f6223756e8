//! Local corridor prior: shortest paths restricted to a square window around each cell.

use std::collections::VecDeque;

use crate::core_model::{GridMaze, State};

const UNREACHABLE: u8 = u8::MAX;
const NO_PARENT: u8 = u8::MAX;
const MOVES: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// For every free cell, breadth-first distances and parents to each cell of the
/// `(2r + 1)^2` window centered on it, moving 4-connected through free cells without
/// leaving the window.
#[derive(Debug)]
pub(crate) struct LocalNav {
    radius: usize,
    side: usize,
    width: usize,
    height: usize,
    dist: Vec<u8>,
    parent: Vec<u8>,
    /// Reachable window cells of cell `c`, in breadth-first order:
    /// `reachable[reach_start[c]..reach_start[c + 1]]`.
    reach_start: Vec<u32>,
    reachable: Vec<u16>,
}

impl LocalNav {
    pub(crate) fn new(maze: &GridMaze, radius: usize) -> Self {
        let radius = radius.min(100);
        let side = 2 * radius + 1;
        let (width, height) = (maze.width(), maze.height());
        let window = side * side;
        let mut dist = vec![UNREACHABLE; width * height * window];
        let mut parent = vec![NO_PARENT; width * height * window];
        let mut queue = VecDeque::new();
        let mut reach_start = Vec::with_capacity(width * height + 1);
        let mut reachable = Vec::new();
        for row in 0..height {
            for col in 0..width {
                reach_start.push(reachable.len() as u32);
                if maze.is_blocked_cell(col, row) {
                    continue;
                }
                let base = (row * width + col) * window;
                let center = radius * side + radius;
                dist[base + center] = 0;
                queue.push_back((radius, radius));
                while let Some((wx, wy)) = queue.pop_front() {
                    let here = wy * side + wx;
                    reachable.push(here as u16);
                    let d = dist[base + here];
                    for (m, (dx, dy)) in MOVES.iter().enumerate() {
                        let (nx, ny) = (wx as isize + dx, wy as isize + dy);
                        if nx < 0 || ny < 0 || nx >= side as isize || ny >= side as isize {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        let (gx, gy) = (
                            (col + nx) as isize - radius as isize,
                            (row + ny) as isize - radius as isize,
                        );
                        if gx < 0 || gy < 0 || gx >= width as isize || gy >= height as isize {
                            continue;
                        }
                        if maze.is_blocked_cell(gx as usize, gy as usize) {
                            continue;
                        }
                        let next = ny * side + nx;
                        if dist[base + next] != UNREACHABLE {
                            continue;
                        }
                        dist[base + next] = d.saturating_add(1).min(UNREACHABLE - 1);
                        parent[base + next] = m as u8;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
        reach_start.push(reachable.len() as u32);
        Self {
            radius,
            side,
            width,
            height,
            dist,
            parent,
            reach_start,
            reachable,
        }
    }

    fn cell_of(&self, p: State) -> Option<(usize, usize)> {
        if !(p.x >= 0.0 && p.y >= 0.0) {
            return None;
        }
        let (c, r) = (p.x.floor() as usize, p.y.floor() as usize);
        (c < self.width && r < self.height).then_some((c, r))
    }

    /// Waypoints from the cell of `from` toward `target`: the centers of the cells along
    /// the in-window shortest path to the reachable cell closest to `target`, ending at
    /// `target` itself when its cell is reached. Empty when `from` is not on a free cell.
    pub(crate) fn route(&self, from: State, target: State) -> Vec<State> {
        let Some((col, row)) = self.cell_of(from) else {
            return Vec::new();
        };
        let window = self.side * self.side;
        let base = (row * self.width + col) * window;
        if self.dist[base + self.radius * self.side + self.radius] != 0 {
            return Vec::new();
        }
        let origin = (
            col as f64 - self.radius as f64,
            row as f64 - self.radius as f64,
        );
        let cell = row * self.width + col;
        let candidates =
            &self.reachable[self.reach_start[cell] as usize..self.reach_start[cell + 1] as usize];
        // breadth-first order, so the first of equally close cells is the nearest by path
        let mut best: Option<(f64, usize)> = None;
        for &w in candidates {
            let w = w as usize;
            let (wx, wy) = (w % self.side, w / self.side);
            let dx = origin.0 + wx as f64 + 0.5 - target.x;
            let dy = origin.1 + wy as f64 + 0.5 - target.y;
            let gap = dx * dx + dy * dy;
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, w));
            }
        }
        let Some((_, goal_cell)) = best else {
            return Vec::new();
        };
        let mut chain = Vec::new();
        let mut w = goal_cell;
        while self.dist[base + w] != 0 {
            let (wx, wy) = (w % self.side, w / self.side);
            chain.push(State::new(
                origin.0 + wx as f64 + 0.5,
                origin.1 + wy as f64 + 0.5,
            ));
            let (dx, dy) = MOVES[self.parent[base + w] as usize];
            w = ((wy as isize - dy) as usize) * self.side + (wx as isize - dx) as usize;
        }
        chain.reverse();
        let reached = self.cell_of(target) == {
            let (wx, wy) = (goal_cell % self.side, goal_cell / self.side);
            let gx = col as isize + wx as isize - self.radius as isize;
            let gy = row as isize + wy as isize - self.radius as isize;
            Some((gx as usize, gy as usize))
        };
        if reached {
            chain.push(target);
        }
        chain
    }
}
