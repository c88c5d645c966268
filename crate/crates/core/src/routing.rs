//! Horizontal-then-vertical cell paths, relay rotation and per-cell path
//! counts.

use serde::{Deserialize, Serialize};

use crate::geometry::{CellGrid, CellIndex, Tier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    East,
    West,
    North,
    South,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::East, Direction::West, Direction::North, Direction::South];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Neighbor of `c` one step in this direction, assuming it exists.
    pub fn step(self, c: CellIndex) -> CellIndex {
        match self {
            Direction::East => CellIndex::new(c.row, c.col + 1),
            Direction::West => CellIndex::new(c.row, c.col - 1),
            Direction::North => CellIndex::new(c.row + 1, c.col),
            Direction::South => CellIndex::new(c.row - 1, c.col),
        }
    }
}

/// Direction of the next hop from `cur` towards `dst`: along the row first,
/// then along the column. `None` once `cur == dst`.
pub fn next_direction(cur: CellIndex, dst: CellIndex) -> Option<Direction> {
    use std::cmp::Ordering::*;
    match (cur.col.cmp(&dst.col), cur.row.cmp(&dst.row)) {
        (Less, _) => Some(Direction::East),
        (Greater, _) => Some(Direction::West),
        (Equal, Less) => Some(Direction::North),
        (Equal, Greater) => Some(Direction::South),
        (Equal, Equal) => None,
    }
}

pub fn hop_count(src: CellIndex, dst: CellIndex) -> usize {
    src.row.abs_diff(dst.row) + src.col.abs_diff(dst.col)
}

/// Cell sequence from `src` to `dst`.
pub fn build_path(src: CellIndex, dst: CellIndex) -> Vec<CellIndex> {
    let mut cells = Vec::with_capacity(hop_count(src, dst) + 1);
    let mut cur = src;
    cells.push(cur);
    while let Some(d) = next_direction(cur, dst) {
        cur = d.step(cur);
        cells.push(cur);
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPath {
    pub pair: u32,
    pub tier: Tier,
    pub cells: Vec<CellIndex>,
}

impl DataPath {
    pub fn new(pair: u32, tier: Tier, src: CellIndex, dst: CellIndex) -> Self {
        Self { pair, tier, cells: build_path(src, dst) }
    }

    pub fn hops(&self) -> usize {
        self.cells.len() - 1
    }
}

/// Relay for `frame`: members rotate in id order, one per frame.
pub fn designated_relay(members: &[u32], frame: u64) -> Option<u32> {
    if members.is_empty() {
        None
    } else {
        Some(members[(frame % members.len() as u64) as usize])
    }
}

/// Per-cell counts of paths entering (`through`) and starting at
/// (`originating`) each cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTable {
    pub through: Vec<u32>,
    pub originating: Vec<u32>,
}

impl PathTable {
    pub fn load(&self, cell: usize) -> u32 {
        self.through[cell] + self.originating[cell]
    }

    pub fn max_load(&self) -> u32 {
        (0..self.through.len()).map(|c| self.load(c)).max().unwrap_or(0)
    }
}

/// Counts paths per cell in `O(paths + cells)` using difference arrays along
/// rows and columns.
pub fn count_paths(endpoints: &[(CellIndex, CellIndex)], grid: &CellGrid) -> PathTable {
    let c = grid.cells_per_side;
    // row_diff[r][col]: horizontal runs; col_diff[col][r]: vertical runs
    let mut row_diff = vec![0i64; c * (c + 1)];
    let mut col_diff = vec![0i64; c * (c + 1)];
    let mut originating = vec![0u32; c * c];
    for &(s, d) in endpoints {
        originating[grid.index(s)] += 1;
        // horizontal cells after the source: (s.row, col) for col strictly
        // between s.col and d.col, plus d.col
        if s.col != d.col {
            let (lo, hi) = if s.col < d.col { (s.col + 1, d.col) } else { (d.col, s.col - 1) };
            row_diff[s.row * (c + 1) + lo] += 1;
            row_diff[s.row * (c + 1) + hi + 1] -= 1;
        }
        if s.row != d.row {
            let (lo, hi) = if s.row < d.row { (s.row + 1, d.row) } else { (d.row, s.row - 1) };
            col_diff[d.col * (c + 1) + lo] += 1;
            col_diff[d.col * (c + 1) + hi + 1] -= 1;
        }
    }
    let mut through = vec![0u32; c * c];
    for r in 0..c {
        let mut run = 0i64;
        for col in 0..c {
            run += row_diff[r * (c + 1) + col];
            through[r * c + col] += run as u32;
        }
    }
    for col in 0..c {
        let mut run = 0i64;
        for r in 0..c {
            run += col_diff[col * (c + 1) + r];
            through[r * c + col] += run as u32;
        }
    }
    PathTable { through, originating }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_examples() {
        let c = |r, k| CellIndex::new(r, k);
        assert_eq!(build_path(c(2, 3), c(2, 3)), vec![c(2, 3)]);
        assert_eq!(
            build_path(c(0, 0), c(2, 3)),
            vec![c(0, 0), c(0, 1), c(0, 2), c(0, 3), c(1, 3), c(2, 3)]
        );
        let p = DataPath::new(0, Tier::Primary, c(4, 1), c(4, 6));
        assert_eq!(p.hops(), 5);
        assert!(p.cells.iter().all(|x| x.row == 4));
    }

    #[test]
    fn relay_rotation() {
        assert_eq!(designated_relay(&[7], 12), Some(7));
        let idx: Vec<u32> = (0..6).map(|f| designated_relay(&[0, 1, 2], f).unwrap()).collect();
        assert_eq!(idx, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(designated_relay(&[], 0), None);
    }

    #[test]
    fn single_pair_counts() {
        let g = CellGrid::with_side_count(5, 0.04);
        let (s, d) = (CellIndex::new(1, 4), CellIndex::new(3, 0));
        let t = count_paths(&[(s, d)], &g);
        let path = build_path(s, d);
        for i in 0..25 {
            let on = path.contains(&g.cell(i));
            assert_eq!(t.load(i), on as u32);
        }
    }
}
