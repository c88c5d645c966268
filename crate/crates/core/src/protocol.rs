//! 25-slot TDMA schedules for both tiers and the preservation masks that
//! silence secondary cells around active primary cells.

use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, PreservationMode};
use crate::error::{Result, SimError};
use crate::geometry::{build_grid, CellGrid, CellIndex};

pub const SLOTS: usize = 25;

/// Position `(row, col)` inside a 5x5 cluster of the given slot. Slot 0 is
/// the lower-left cell; rows alternate direction.
pub fn slot_position(slot: usize) -> (usize, usize) {
    let r = (slot % SLOTS) / 5;
    let k = slot % 5;
    (r, if r.is_multiple_of(2) { k } else { 4 - k })
}

pub fn slot_at(local_row: usize, local_col: usize) -> usize {
    let lc = if local_row.is_multiple_of(2) { local_col } else { 4 - local_col };
    local_row * 5 + lc
}

/// Slot in which `cell` is active within its own cluster.
pub fn slot_of_cell(cell: CellIndex) -> usize {
    slot_at(cell.row % 5, cell.col % 5)
}

/// The `slot`-th cell of cluster `(cluster_row, cluster_col)`, or `None` when
/// that cell lies outside a truncated border cluster.
pub fn primary_active_cell(grid: &CellGrid, cluster: (usize, usize), slot: usize) -> Option<CellIndex> {
    let (lr, lc) = slot_position(slot);
    let cell = CellIndex::new(cluster.0 * 5 + lr, cluster.1 * 5 + lc);
    (cell.row < grid.cells_per_side && cell.col < grid.cells_per_side).then_some(cell)
}

/// All cells of `grid` active in `slot`, one per cluster.
pub fn active_cells(grid: &CellGrid, slot: usize) -> Vec<CellIndex> {
    let k = grid.clusters_per_side();
    let mut v = Vec::with_capacity(k * k);
    for cr in 0..k {
        for cc in 0..k {
            if let Some(c) = primary_active_cell(grid, (cr, cc), slot) {
                v.push(c);
            }
        }
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreservationSpec {
    /// Secondary cells per side of a preservation square (diagnostic).
    pub m: u32,
    /// `3 sqrt(a_p) + 2 sqrt(a_s)` on the actual grids.
    pub side_length: f64,
    /// Width of the protective secondary strip, one secondary cell side.
    pub epsilon: f64,
}

pub fn compute_m(config: &NetworkConfig) -> Result<PreservationSpec> {
    let (a_p, a_s) = (config.a_p(), config.a_s());
    if a_s >= a_p {
        return Err(SimError::Config(format!(
            "a_s = {a_s:e} is not below a_p = {a_p:e}; n is not large enough"
        )));
    }
    let m = (3.0 * (a_p / a_s).sqrt()).floor() as u32 + 2;
    let (gp, gs) = (build_grid(a_p)?, build_grid(a_s)?);
    Ok(PreservationSpec {
        m,
        side_length: 3.0 * gp.cell_side + 2.0 * gs.cell_side,
        epsilon: gs.cell_side,
    })
}

/// Extent along one axis of the preservation square of primary row (or
/// column) `r`: the 3-cell block around it widened by one secondary side.
pub fn preservation_interval(r: i64, primary_side: f64, secondary_side: f64) -> (f64, f64) {
    (
        (r - 1) as f64 * primary_side - secondary_side,
        (r + 2) as f64 * primary_side + secondary_side,
    )
}

/// Whether secondary row/column `j` overlaps `interval` with positive length.
fn overlaps(j: usize, s: f64, interval: (f64, f64)) -> bool {
    let tol = 1e-9 * s;
    let (lo, hi) = (j as f64 * s, (j + 1) as f64 * s);
    hi - interval.0 > tol && interval.1 - lo > tol
}

/// Geometric mask: a secondary cell is preserved when it shares positive
/// area with the preservation square of any listed primary cell. Cells may
/// lie outside the grid (signed indices).
pub fn preservation_mask(active: &[(i64, i64)], primary: &CellGrid, secondary: &CellGrid) -> Vec<bool> {
    let cs = secondary.cells_per_side;
    let (l, s) = (primary.cell_side, secondary.cell_side);
    let mut mask = vec![false; cs * cs];
    for &(r, c) in active {
        let iy = preservation_interval(r, l, s);
        let ix = preservation_interval(c, l, s);
        let rows: Vec<usize> = (0..cs).filter(|&j| overlaps(j, s, iy)).collect();
        let cols: Vec<usize> = (0..cs).filter(|&j| overlaps(j, s, ix)).collect();
        for &j in &rows {
            for &i in &cols {
                mask[j * cs + i] = true;
            }
        }
    }
    mask
}

/// Primary cells that raise preservation squares in `slot` under `mode`,
/// as signed indices. Lattice mode adds virtual sites one cluster beyond
/// each border.
pub fn preserving_cells(grid: &CellGrid, slot: usize, mode: PreservationMode) -> Vec<(i64, i64)> {
    let (lr, lc) = slot_position(slot);
    let c = grid.cells_per_side as i64;
    let range: Vec<i64> = match mode {
        PreservationMode::Clipped => (0..grid.clusters_per_side() as i64).collect(),
        PreservationMode::Lattice => (-1..=grid.clusters_per_side() as i64).collect(),
    };
    let mut v = Vec::new();
    for &cr in &range {
        for &cc in &range {
            let (r, col) = (cr * 5 + lr as i64, cc * 5 + lc as i64);
            let inside = (0..c).contains(&r) && (0..c).contains(&col);
            if inside || mode == PreservationMode::Lattice {
                v.push((r, col));
            }
        }
    }
    v
}

/// Opportunistic factor as a count of unpreserved primary slots out of 25.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Eta(pub u8);

impl Eta {
    pub fn value(self) -> f64 {
        self.0 as f64 / SLOTS as f64
    }
}

/// Preservation state of every secondary cell over one primary frame.
///
/// A secondary cell is preserved in primary slot `k` exactly when its row
/// band meets a preservation interval of some primary row congruent to
/// `k`'s local row and its column band does the same for columns, so the
/// per-slot masks factor into per-row and per-column residue sets.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub primary: CellGrid,
    pub secondary: CellGrid,
    pub mode: PreservationMode,
    band_hits: Vec<u8>,
}

impl Schedule {
    pub fn new(primary: CellGrid, secondary: CellGrid, mode: PreservationMode) -> Self {
        let (l, s) = (primary.cell_side, secondary.cell_side);
        let cp = primary.cells_per_side as i64;
        let band_hits = (0..secondary.cells_per_side)
            .map(|j| {
                let base = ((j as f64 * s) / l).floor() as i64;
                let mut bits = 0u8;
                for r in base - 3..=base + 3 {
                    if mode == PreservationMode::Clipped && !(0..cp).contains(&r) {
                        continue;
                    }
                    if overlaps(j, s, preservation_interval(r, l, s)) {
                        bits |= 1 << r.rem_euclid(5);
                    }
                }
                bits
            })
            .collect();
        Self { primary, secondary, mode, band_hits }
    }

    /// Bit `k` set when the cell is preserved in primary slot `k`.
    pub fn preserved_slots(&self, cell: CellIndex) -> u32 {
        let (rh, ch) = (self.band_hits[cell.row], self.band_hits[cell.col]);
        let mut mask = 0u32;
        for lr in 0..5 {
            if rh & (1 << lr) == 0 {
                continue;
            }
            for lc in 0..5 {
                if ch & (1 << lc) != 0 {
                    mask |= 1 << slot_at(lr, lc);
                }
            }
        }
        mask
    }

    pub fn is_preserved(&self, cell: CellIndex, primary_slot: usize) -> bool {
        self.preserved_slots(cell) & (1 << (primary_slot % SLOTS)) != 0
    }

    /// Full mask over secondary cells for one primary slot.
    pub fn mask(&self, primary_slot: usize) -> Vec<bool> {
        let cs = self.secondary.cells_per_side;
        (0..cs * cs).map(|i| self.is_preserved(self.secondary.cell(i), primary_slot)).collect()
    }

    pub fn opportunistic_factor(&self, cell: CellIndex) -> Eta {
        Eta((SLOTS as u32 - self.preserved_slots(cell).count_ones()) as u8)
    }

    /// Smallest and largest opportunistic factor over all secondary cells.
    pub fn eta_range(&self) -> (Eta, Eta) {
        let cs = self.secondary.cells_per_side;
        let mut lo = Eta(25);
        let mut hi = Eta(0);
        for j in 0..cs {
            for i in 0..cs {
                let e = self.opportunistic_factor(CellIndex::new(j, i));
                lo = lo.min(e);
                hi = hi.max(e);
            }
        }
        (lo, hi)
    }

    pub fn state(&self, primary_slot: usize, secondary_slot: usize) -> ScheduleState {
        let mask = self.mask(primary_slot);
        let cs = self.secondary.cells_per_side;
        let active_secondary = active_cells(&self.secondary, secondary_slot)
            .into_iter()
            .filter(|c| !mask[c.row * cs + c.col])
            .collect();
        ScheduleState {
            primary_slot,
            secondary_slot,
            active_primary: active_cells(&self.primary, primary_slot),
            active_secondary,
            preservation_mask: mask,
        }
    }
}

/// Snapshot of one (primary slot, secondary slot) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    pub primary_slot: usize,
    pub secondary_slot: usize,
    pub active_primary: Vec<CellIndex>,
    pub active_secondary: Vec<CellIndex>,
    pub preservation_mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecondaryTurn {
    Active(CellIndex),
    Blocked(CellIndex),
    /// The slot's cell lies outside a truncated border cluster.
    Absent,
}

pub fn secondary_active_cell(
    grid: &CellGrid,
    cluster: (usize, usize),
    secondary_slot: usize,
    mask: &[bool],
) -> SecondaryTurn {
    match primary_active_cell(grid, cluster, secondary_slot) {
        None => SecondaryTurn::Absent,
        Some(c) if mask[grid.index(c)] => SecondaryTurn::Blocked(c),
        Some(c) => SecondaryTurn::Active(c),
    }
}

/// Longest run, in primary slots, between a reception and the next
/// unblocked turn of a cell whose preserved slots are `preserved`, when
/// forwarding must wait for a later secondary frame. `None` if the cell is
/// never unblocked.
pub fn max_forward_wait(preserved: u32) -> Option<u32> {
    let open = !preserved & ((1 << SLOTS) - 1);
    if open == 0 {
        return None;
    }
    let mut worst = 0;
    for k in 0..SLOTS as u32 {
        let mut d = 1;
        while open & (1 << ((k + d) % SLOTS as u32)) == 0 {
            d += 1;
        }
        worst = worst.max(d);
    }
    Some(worst)
}
