//! Minimum rectangle partition of a binary tile grid.
//!
//! A region (the set tiles of a [`BinaryGrid`]) is split into the fewest
//! axis-aligned rectangles such that every set tile is covered by exactly one
//! rectangle and no rectangle touches an unset tile.
//!
//! The exact solver is a depth-first branch-and-bound over exact covers:
//!
//! * Each 4-connected component is solved on its own; the optimum of the
//!   whole region is the sum of the component optima.
//! * The branching tile is the first uncovered tile in row-major order. That
//!   tile is necessarily the top-left corner of the rectangle covering it, so
//!   the branches are exactly the free rectangles anchored there, tried in
//!   order of decreasing area (then decreasing width).
//! * The lower bound is the larger of `ceil(remaining / max_area)` and a
//!   corner bound: every lattice point where one or three of the four
//!   surrounding tiles are uncovered must be a corner of some rectangle, a
//!   diagonal pair forces two corners, and each rectangle has four corners.
//! * A transposition table keyed by a 128-bit Zobrist hash of the uncovered
//!   set remembers proven lower bounds on the cost to finish from a state.
//! * The greedy row-run decomposition seeds the incumbent so a feasible
//!   partition exists even when the time budget runs out.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{Block, GridMode, GridSpec, RegionLabel, TileRect};
use crate::region::TileGrid;

pub const DEFAULT_BUDGET: Duration = Duration::from_millis(5000);

const TABLE_CAPACITY: usize = 1 << 20;
const CLOCK_INTERVAL: u64 = 4096;

/// Row-major binary occupancy grid over the tile lattice.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryGrid {
    rows: u32,
    cols: u32,
    cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(rows: u32, cols: u32) -> Self {
        Self {
            rows,
            cols,
            cells: vec![false; (rows * cols) as usize],
        }
    }

    pub fn from_fn(rows: u32, cols: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let cells = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self { rows, cols, cells }
    }

    /// Parses rows of `#` (set) and `.` (unset); whitespace is ignored.
    ///
    /// ```
    /// # use gridlab_core::optimizer::BinaryGrid;
    /// let g = BinaryGrid::parse("##. #..");
    /// assert_eq!((g.rows(), g.cols(), g.count()), (2, 3, 3));
    /// ```
    pub fn parse(pattern: &str) -> Self {
        let rows: Vec<Vec<bool>> = pattern
            .split_whitespace()
            .map(|line| line.chars().map(|ch| ch == '#').collect())
            .collect();
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged grid pattern");
        Self {
            rows: rows.len() as u32,
            cols: cols as u32,
            cells: rows.concat(),
        }
    }

    /// Grid whose set tiles are the low `rows * cols` bits of `bits`, row-major.
    pub fn from_bits(rows: u32, cols: u32, bits: u64) -> Self {
        Self::from_fn(rows, cols, |r, c| bits >> (r * cols + c) & 1 == 1)
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> bool {
        self.cells[(row * self.cols + col) as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        self.cells[(row * self.cols + col) as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&b| b)
    }

    /// Whether `rect` lies inside the grid and covers only set tiles.
    pub fn contains_rect(&self, rect: &TileRect) -> bool {
        rect.row + rect.h <= self.rows
            && rect.col + rect.w <= self.cols
            && (rect.row..rect.row + rect.h)
                .all(|r| (rect.col..rect.col + rect.w).all(|c| self.get(r, c)))
    }

    /// 4-connected components, ordered by their first tile in row-major order.
    fn components(&self) -> Vec<Vec<(u32, u32)>> {
        let mut seen = vec![false; self.cells.len()];
        let mut out = Vec::new();
        for start in 0..self.cells.len() {
            if !self.cells[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(i) = stack.pop() {
                let (r, c) = (i as u32 / self.cols, i as u32 % self.cols);
                comp.push((r, c));
                let mut visit = |nr: u32, nc: u32| {
                    let j = (nr * self.cols + nc) as usize;
                    if self.cells[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if r > 0 {
                    visit(r - 1, c);
                }
                if r + 1 < self.rows {
                    visit(r + 1, c);
                }
                if c > 0 {
                    visit(r, c - 1);
                }
                if c + 1 < self.cols {
                    visit(r, c + 1);
                }
            }
            out.push(comp);
        }
        out
    }
}

/// A rectangle that fits entirely inside the region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateBlock {
    pub rect: TileRect,
    /// Row-major indices of the covered tiles.
    pub covered_tiles: Vec<u32>,
}

/// All rectangles of at most `max_w x max_h` tiles contained in the region,
/// ordered by top-left tile (row-major), then larger area, then wider first.
pub fn enumerate_candidates(grid: &BinaryGrid, max_w: u32, max_h: u32) -> Vec<CandidateBlock> {
    let mut out = Vec::new();
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let mut rects: Vec<TileRect> = anchored_rects(
                |r, c| grid.get(r, c),
                grid.rows,
                grid.cols,
                row,
                col,
                max_w,
                max_h,
            );
            sort_branch_order(&mut rects);
            out.extend(rects.into_iter().map(|rect| CandidateBlock {
                covered_tiles: (rect.row..rect.row + rect.h)
                    .flat_map(|r| (rect.col..rect.col + rect.w).map(move |c| r * grid.cols + c))
                    .collect(),
                rect,
            }));
        }
    }
    out
}

/// Rectangles with top-left corner `(row, col)` whose tiles all satisfy `free`.
fn anchored_rects(
    free: impl Fn(u32, u32) -> bool,
    rows: u32,
    cols: u32,
    row: u32,
    col: u32,
    max_w: u32,
    max_h: u32,
) -> Vec<TileRect> {
    let mut rects = Vec::new();
    let mut width_limit = max_w.min(cols - col);
    for dh in 0..max_h.min(rows - row) {
        let r = row + dh;
        let run = (0..width_limit).take_while(|&dw| free(r, col + dw)).count() as u32;
        if run == 0 {
            break;
        }
        width_limit = run;
        rects.extend((1..=run).map(|w| TileRect {
            row,
            col,
            w,
            h: dh + 1,
        }));
    }
    rects
}

fn sort_branch_order(rects: &mut [TileRect]) {
    rects.sort_by(|a, b| b.area().cmp(&a.area()).then(b.w.cmp(&a.w)));
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    FeasibleTimeout,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSolution {
    pub status: SolveStatus,
    pub objective: usize,
    pub optimal: bool,
    pub solve_time_ms: u64,
    pub blocks: Vec<TileRect>,
}

impl Serialize for TileRect {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("TileRect", 4)?;
        st.serialize_field("row", &self.row)?;
        st.serialize_field("col", &self.col)?;
        st.serialize_field("w", &self.w)?;
        st.serialize_field("h", &self.h)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for TileRect {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            row: u32,
            col: u32,
            w: u32,
            h: u32,
        }
        let Raw { row, col, w, h } = Raw::deserialize(d)?;
        Ok(TileRect { row, col, w, h })
    }
}

impl PartitionSolution {
    fn empty(status: SolveStatus, started: Instant) -> Self {
        Self {
            status,
            objective: 0,
            optimal: status == SolveStatus::Optimal,
            solve_time_ms: started.elapsed().as_millis() as u64,
            blocks: Vec::new(),
        }
    }

    /// Tiles covered more than once, or region tiles left uncovered, or
    /// covered tiles outside the region. Empty for a valid exact partition.
    pub fn cover_violations(&self, grid: &BinaryGrid) -> Vec<(u32, u32)> {
        let mut hits = vec![0u32; grid.cells.len()];
        let mut bad = Vec::new();
        for b in &self.blocks {
            for r in b.row..b.row + b.h {
                for c in b.col..b.col + b.w {
                    if r >= grid.rows || c >= grid.cols {
                        bad.push((r, c));
                    } else {
                        hits[(r * grid.cols + c) as usize] += 1;
                    }
                }
            }
        }
        for (i, (&n, &set)) in hits.iter().zip(&grid.cells).enumerate() {
            if n != u32::from(set) {
                bad.push((i as u32 / grid.cols, i as u32 % grid.cols));
            }
        }
        bad
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverOptions {
    /// Wall-clock budget for one region; `None` searches to completion.
    pub budget: Option<Duration>,
    pub max_block_w: Option<u32>,
    pub max_block_h: Option<u32>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            budget: Some(DEFAULT_BUDGET),
            max_block_w: None,
            max_block_h: None,
        }
    }
}

impl SolverOptions {
    pub fn unbounded() -> Self {
        Self {
            budget: None,
            ..Self::default()
        }
    }

    fn caps(&self, grid: &BinaryGrid) -> (u32, u32) {
        (
            self.max_block_w.unwrap_or(grid.cols).min(grid.cols),
            self.max_block_h.unwrap_or(grid.rows).min(grid.rows),
        )
    }
}

/// Row-run decomposition: maximal horizontal runs per row, extended downward
/// while the next row holds a run with the identical column span.
pub fn greedy_fallback(grid: &BinaryGrid) -> PartitionSolution {
    let started = Instant::now();
    let blocks = greedy_blocks(grid, grid.cols, grid.rows);
    let optimal = blocks.len() <= 1;
    PartitionSolution {
        status: if optimal {
            SolveStatus::Optimal
        } else {
            SolveStatus::FeasibleTimeout
        },
        objective: blocks.len(),
        optimal,
        solve_time_ms: started.elapsed().as_millis() as u64,
        blocks,
    }
}

fn greedy_blocks(grid: &BinaryGrid, max_w: u32, max_h: u32) -> Vec<TileRect> {
    let mut blocks: Vec<TileRect> = Vec::new();
    // (col, w) -> index of the block ending on the previous row with that span.
    let mut open: HashMap<(u32, u32), usize> = HashMap::new();
    for r in 0..grid.rows {
        let mut next_open = HashMap::new();
        let mut c = 0;
        while c < grid.cols {
            if !grid.get(r, c) {
                c += 1;
                continue;
            }
            let start = c;
            while c < grid.cols && grid.get(r, c) {
                c += 1;
            }
            let mut x = start;
            while x < c {
                let w = (c - x).min(max_w);
                let idx = match open.get(&(x, w)) {
                    Some(&i) if blocks[i].h < max_h => {
                        blocks[i].h += 1;
                        i
                    }
                    _ => {
                        blocks.push(TileRect { row: r, col: x, w, h: 1 });
                        blocks.len() - 1
                    }
                };
                next_open.insert((x, w), idx);
                x += w;
            }
        }
        open = next_open;
    }
    blocks.sort();
    blocks
}

/// Minimum-count exact partition of the region into rectangles.
pub fn solve_min_partition(grid: &BinaryGrid, options: &SolverOptions) -> PartitionSolution {
    let started = Instant::now();
    let deadline = options.budget.map(|b| started + b);
    if grid.is_empty() {
        return PartitionSolution::empty(SolveStatus::Optimal, started);
    }
    let (max_w, max_h) = options.caps(grid);
    if max_w == 0 || max_h == 0 {
        return PartitionSolution::empty(SolveStatus::Infeasible, started);
    }

    let mut blocks = Vec::new();
    let mut proved = true;
    for comp in grid.components() {
        let r0 = comp.iter().map(|p| p.0).min().unwrap();
        let r1 = comp.iter().map(|p| p.0).max().unwrap();
        let c0 = comp.iter().map(|p| p.1).min().unwrap();
        let c1 = comp.iter().map(|p| p.1).max().unwrap();
        let mut sub = BinaryGrid::new(r1 - r0 + 1, c1 - c0 + 1);
        for &(r, c) in &comp {
            sub.set(r - r0, c - c0, true);
        }
        let (rects, optimal) = Search::new(&sub, max_w, max_h, deadline).run();
        proved &= optimal;
        blocks.extend(rects.into_iter().map(|b| TileRect {
            row: b.row + r0,
            col: b.col + c0,
            ..b
        }));
    }
    blocks.sort();
    PartitionSolution {
        status: if proved {
            SolveStatus::Optimal
        } else {
            SolveStatus::FeasibleTimeout
        },
        objective: blocks.len(),
        optimal: proved,
        solve_time_ms: started.elapsed().as_millis() as u64,
        blocks,
    }
}

struct Search {
    rows: usize,
    cols: usize,
    free: Vec<bool>,
    remaining: usize,
    /// Forced rectangle corners at each of the `(rows + 1) x (cols + 1)` lattice points.
    corner: Vec<u8>,
    corners: usize,
    max_w: u32,
    max_h: u32,
    max_area: usize,
    zobrist: Vec<u128>,
    hash: u128,
    table: HashMap<u128, u32>,
    current: Vec<TileRect>,
    best: Option<Vec<TileRect>>,
    /// Only solutions strictly cheaper than this are accepted.
    limit: usize,
    root_bound: usize,
    deadline: Option<Instant>,
    nodes: u64,
    timed_out: bool,
    greedy: Vec<TileRect>,
}

impl Search {
    fn new(grid: &BinaryGrid, max_w: u32, max_h: u32, deadline: Option<Instant>) -> Self {
        let (rows, cols) = (grid.rows as usize, grid.cols as usize);
        let greedy = greedy_blocks(grid, max_w, max_h);
        let max_area = anchored_max_area(grid, max_w, max_h);
        let mut seed = 0x9e37_79b9_7f4a_7c15u64;
        let zobrist: Vec<u128> = (0..rows * cols)
            .map(|_| (splitmix64(&mut seed) as u128) << 64 | splitmix64(&mut seed) as u128)
            .collect();
        let hash = grid
            .cells
            .iter()
            .zip(&zobrist)
            .filter(|(&set, _)| set)
            .fold(0, |h, (_, z)| h ^ z);
        let mut search = Self {
            rows,
            cols,
            free: grid.cells.clone(),
            remaining: grid.count(),
            corner: vec![0; (rows + 1) * (cols + 1)],
            corners: 0,
            max_w,
            max_h,
            max_area,
            zobrist,
            hash,
            table: HashMap::new(),
            current: Vec::new(),
            best: None,
            limit: greedy.len() + 1,
            root_bound: 0,
            deadline,
            nodes: 0,
            timed_out: false,
            greedy,
        };
        for lr in 0..=rows {
            for lc in 0..=cols {
                let w = search.corner_weight(lr, lc);
                search.corner[lr * (cols + 1) + lc] = w;
                search.corners += w as usize;
            }
        }
        search.root_bound = search.bound();
        search
    }

    /// Returns the partition and whether it is proven minimal.
    fn run(mut self) -> (Vec<TileRect>, bool) {
        if self.greedy.len() > self.root_bound {
            self.dfs(0, 0);
        } else {
            return (self.greedy, true);
        }
        let optimal = !self.timed_out;
        (self.best.unwrap_or(self.greedy), optimal)
    }

    fn free_at(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.rows
            && (c as usize) < self.cols
            && self.free[r as usize * self.cols + c as usize]
    }

    fn corner_weight(&self, lr: usize, lc: usize) -> u8 {
        let (r, c) = (lr as isize, lc as isize);
        let tl = self.free_at(r - 1, c - 1);
        let tr = self.free_at(r - 1, c);
        let bl = self.free_at(r, c - 1);
        let br = self.free_at(r, c);
        match (tl as u8) + (tr as u8) + (bl as u8) + (br as u8) {
            1 | 3 => 1,
            2 if tl == br => 2,
            _ => 0,
        }
    }

    fn bound(&self) -> usize {
        self.remaining
            .div_ceil(self.max_area)
            .max(self.corners.div_ceil(4))
    }

    fn toggle(&mut self, rect: TileRect, value: bool) {
        let (r0, c0) = (rect.row as usize, rect.col as usize);
        let (r1, c1) = (r0 + rect.h as usize, c0 + rect.w as usize);
        for r in r0..r1 {
            for c in c0..c1 {
                let i = r * self.cols + c;
                self.free[i] = value;
                self.hash ^= self.zobrist[i];
            }
        }
        let area = rect.area() as usize;
        if value {
            self.remaining += area;
        } else {
            self.remaining -= area;
        }
        for lr in r0..=r1 {
            for lc in c0..=c1 {
                let j = lr * (self.cols + 1) + lc;
                let w = self.corner_weight(lr, lc);
                self.corners = self.corners + w as usize - self.corner[j] as usize;
                self.corner[j] = w;
            }
        }
    }

    fn out_of_time(&mut self) -> bool {
        if self.timed_out {
            return true;
        }
        self.nodes += 1;
        if self.nodes % CLOCK_INTERVAL == 0 {
            if let Some(deadline) = self.deadline {
                self.timed_out = Instant::now() >= deadline;
            }
        }
        self.timed_out
    }

    fn dfs(&mut self, from: usize, depth: usize) {
        if self.out_of_time() {
            return;
        }
        let Some(pos) = (from..self.free.len()).find(|&i| self.free[i]) else {
            if depth < self.limit {
                self.limit = depth;
                self.best = Some(self.current.clone());
            }
            return;
        };
        if depth + self.bound() >= self.limit {
            return;
        }
        if let Some(&known) = self.table.get(&self.hash) {
            if depth + known as usize >= self.limit {
                return;
            }
        }

        let (row, col) = ((pos / self.cols) as u32, (pos % self.cols) as u32);
        let mut rects = anchored_rects(
            |r, c| self.free[r as usize * self.cols + c as usize],
            self.rows as u32,
            self.cols as u32,
            row,
            col,
            self.max_w,
            self.max_h,
        );
        sort_branch_order(&mut rects);

        let state = self.hash;
        for rect in rects {
            self.toggle(rect, false);
            self.current.push(rect);
            self.dfs(pos + 1, depth + 1);
            self.current.pop();
            self.toggle(rect, true);
            if self.timed_out || (self.best.is_some() && self.limit <= self.root_bound) {
                return;
            }
        }
        // Every completion cheaper than `limit` would have been found above.
        let proven = (self.limit - depth) as u32;
        if self.table.len() < TABLE_CAPACITY || self.table.contains_key(&state) {
            let entry = self.table.entry(state).or_insert(0);
            *entry = (*entry).max(proven);
        }
    }
}

fn anchored_max_area(grid: &BinaryGrid, max_w: u32, max_h: u32) -> usize {
    let mut best = 1;
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            if !grid.get(row, col) {
                continue;
            }
            for rect in anchored_rects(|r, c| grid.get(r, c), grid.rows, grid.cols, row, col, max_w, max_h) {
                best = best.max(rect.area() as usize);
            }
        }
    }
    best
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-region outcome of an adaptive grid build.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: RegionLabel,
    pub tiles: usize,
    pub status: SolveStatus,
    pub objective: usize,
    pub optimal: bool,
    pub solve_time_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveGrid {
    pub spec: GridSpec,
    pub regions: Vec<RegionReport>,
}

impl AdaptiveGrid {
    pub fn timed_out(&self) -> bool {
        self.regions
            .iter()
            .any(|r| r.status != SolveStatus::Optimal)
    }
}

/// Partitions the text, edge and background regions independently and maps
/// the resulting tile rectangles to pixel blocks.
pub fn adaptive_grid(stimulus_id: &str, tiles: &TileGrid, options: &SolverOptions) -> AdaptiveGrid {
    let solved: Vec<(RegionLabel, BinaryGrid, PartitionSolution)> = RegionLabel::ALL
        .par_iter()
        .map(|&label| {
            let grid = tiles.region_grid(label);
            let solution = solve_min_partition(&grid, options);
            (label, grid, solution)
        })
        .collect();

    let mut blocks = Vec::new();
    let mut regions = Vec::new();
    for (label, grid, solution) in solved {
        for (k, rect) in solution.blocks.iter().enumerate() {
            let (x0, _) = tiles.col_span(rect.col);
            let (_, x1) = tiles.col_span(rect.col + rect.w - 1);
            let (y0, _) = tiles.row_span(rect.row);
            let (_, y1) = tiles.row_span(rect.row + rect.h - 1);
            blocks.push(Block {
                id: format!("a-{label}-{k}"),
                x: x0,
                y: y0,
                w: x1 - x0,
                h: y1 - y0,
                region: label,
                tiles: Some(*rect),
            });
        }
        regions.push(RegionReport {
            region: label,
            tiles: grid.count(),
            status: solution.status,
            objective: solution.objective,
            optimal: solution.optimal,
            solve_time_ms: solution.solve_time_ms,
        });
    }
    AdaptiveGrid {
        spec: GridSpec {
            stimulus_id: stimulus_id.to_string(),
            mode: GridMode::Adaptive,
            tile_size: Some(tiles.tile_size()),
            static_n: None,
            blocks,
        },
        regions,
    }
}
