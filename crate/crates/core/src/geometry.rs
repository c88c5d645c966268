//! Random network instances: Poisson placement, cell grids and S-D pairing.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Primary,
    Secondary,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Primary => "primary",
            Tier::Secondary => "secondary",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primary" => Ok(Tier::Primary),
            "secondary" => Ok(Tier::Secondary),
            other => Err(SimError::Parse(format!("unknown tier `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, o: Point) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        dx * dx + dy * dy
    }

    pub fn dist(self, o: Point) -> f64 {
        self.dist2(o).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Square partition of the unit square into `C x C` cells.
///
/// Cells are grouped into 5x5 clusters anchored at the origin. When `C` is
/// not a multiple of 5 the last cluster row and column are incomplete.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub cells_per_side: usize,
    pub cell_side: f64,
    pub nominal_area: f64,
    pub actual_area: f64,
}

/// Builds the grid whose side count is the nearest integer to `1/sqrt(a)`.
pub fn build_grid(nominal_area: f64) -> Result<CellGrid> {
    if !(nominal_area > 0.0 && nominal_area < 1.0) {
        return Err(SimError::Config(format!(
            "nominal cell area {nominal_area} must lie in (0, 1)"
        )));
    }
    let c = ((1.0 / nominal_area.sqrt()).round() as usize).max(1);
    Ok(CellGrid::with_side_count(c, nominal_area))
}

impl CellGrid {
    pub fn with_side_count(c: usize, nominal_area: f64) -> Self {
        let side = 1.0 / c as f64;
        Self { cells_per_side: c, cell_side: side, nominal_area, actual_area: side * side }
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    /// Clusters per side, counting an incomplete trailing cluster.
    pub fn clusters_per_side(&self) -> usize {
        self.cells_per_side.div_ceil(5)
    }

    pub fn index(&self, c: CellIndex) -> usize {
        c.row * self.cells_per_side + c.col
    }

    pub fn cell(&self, idx: usize) -> CellIndex {
        CellIndex::new(idx / self.cells_per_side, idx % self.cells_per_side)
    }

    pub fn center(&self, c: CellIndex) -> Point {
        Point::new((c.col as f64 + 0.5) * self.cell_side, (c.row as f64 + 0.5) * self.cell_side)
    }
}

pub fn locate_cell(p: Point, grid: &CellGrid) -> Result<CellIndex> {
    if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
        return Err(SimError::Domain(format!("point ({}, {}) outside the unit square", p.x, p.y)));
    }
    let c = grid.cells_per_side;
    let f = c as f64;
    let row = ((p.y * f).floor() as usize).min(c - 1);
    let col = ((p.x * f).floor() as usize).min(c - 1);
    Ok(CellIndex::new(row, col))
}

/// SplitMix64 step, used to derive independent stream seeds from one seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_poisson_nodes(density: f64, seed: u64) -> Vec<Point> {
    if !(density > 0.0) {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = Poisson::new(density).map(|d| d.sample(&mut rng)).unwrap_or(0.0) as usize;
    (0..count).map(|_| Point::new(rng.random::<f64>(), rng.random::<f64>())).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(u32, u32)>,
    /// Node left out because the count was odd.
    pub excluded: Option<u32>,
    /// Set when fewer than two nodes were supplied.
    pub insufficient: bool,
}

/// Uniform random perfect matching via a seeded shuffle. With an odd
/// count the largest id sits out.
pub fn pair_sources_destinations(ids: &[u32], seed: u64) -> Matching {
    if ids.len() < 2 {
        return Matching { pairs: Vec::new(), excluded: ids.first().copied(), insufficient: true };
    }
    let mut pool: Vec<u32> = ids.to_vec();
    pool.sort_unstable();
    let excluded = if pool.len() % 2 == 1 { pool.pop() } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let pairs = pool.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    Matching { pairs, excluded, insufficient: false }
}

/// One tier of a deployment: nodes, pairs and per-cell membership.
#[derive(Clone, Debug, PartialEq)]
pub struct TierDeployment {
    pub tier: Tier,
    pub grid: CellGrid,
    pub points: Vec<Point>,
    pub pairs: Vec<(u32, u32)>,
    pub excluded: Option<u32>,
    /// Cell index of every node.
    pub cell_of: Vec<u32>,
    member_offsets: Vec<u32>,
    member_ids: Vec<u32>,
}

impl TierDeployment {
    pub fn new(tier: Tier, grid: CellGrid, points: Vec<Point>, matching: Matching) -> Result<Self> {
        let mut cell_of = Vec::with_capacity(points.len());
        let mut counts = vec![0u32; grid.cell_count() + 1];
        for p in &points {
            let idx = grid.index(locate_cell(*p, &grid)?);
            cell_of.push(idx as u32);
            counts[idx + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let member_offsets = counts.clone();
        let mut fill = counts;
        let mut member_ids = vec![0u32; points.len()];
        for (id, &c) in cell_of.iter().enumerate() {
            let slot = &mut fill[c as usize];
            member_ids[*slot as usize] = id as u32;
            *slot += 1;
        }
        Ok(Self {
            tier,
            grid,
            points,
            pairs: matching.pairs,
            excluded: matching.excluded,
            cell_of,
            member_offsets,
            member_ids,
        })
    }

    /// Node ids in `cell`, sorted ascending.
    pub fn members(&self, cell: usize) -> &[u32] {
        let lo = self.member_offsets[cell] as usize;
        let hi = self.member_offsets[cell + 1] as usize;
        &self.member_ids[lo..hi]
    }

    pub fn cell_of_node(&self, id: u32) -> CellIndex {
        self.grid.cell(self.cell_of[id as usize] as usize)
    }

    pub fn empty_cells(&self) -> usize {
        (0..self.grid.cell_count()).filter(|&c| self.members(c).is_empty()).count()
    }

    pub fn max_occupancy(&self) -> usize {
        (0..self.grid.cell_count()).map(|c| self.members(c).len()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Deployment {
    pub primary: TierDeployment,
    pub secondary: Option<TierDeployment>,
}

const STREAM_PRIMARY_NODES: u64 = 1;
const STREAM_PRIMARY_PAIRS: u64 = 2;
const STREAM_SECONDARY_NODES: u64 = 3;
const STREAM_SECONDARY_PAIRS: u64 = 4;

fn build_tier(tier: Tier, density: f64, area: f64, seed: u64, streams: (u64, u64)) -> Result<TierDeployment> {
    let grid = build_grid(area)?;
    let points = sample_poisson_nodes(density, derive_seed(seed, streams.0));
    let ids: Vec<u32> = (0..points.len() as u32).collect();
    let matching = pair_sources_destinations(&ids, derive_seed(seed, streams.1));
    TierDeployment::new(tier, grid, points, matching)
}

pub fn generate_deployment(config: &NetworkConfig) -> Result<Deployment> {
    config.validate()?;
    let primary = build_tier(
        Tier::Primary,
        config.n,
        config.a_p(),
        config.seed,
        (STREAM_PRIMARY_NODES, STREAM_PRIMARY_PAIRS),
    )?;
    let secondary = if config.primary_only {
        None
    } else {
        Some(build_tier(
            Tier::Secondary,
            config.m(),
            config.a_s(),
            config.seed,
            (STREAM_SECONDARY_NODES, STREAM_SECONDARY_PAIRS),
        )?)
    };
    Ok(Deployment { primary, secondary })
}

impl Deployment {
    pub fn tiers(&self) -> impl Iterator<Item = &TierDeployment> {
        std::iter::once(&self.primary).chain(self.secondary.iter())
    }

    /// Plain-text export: a header line, one `id,tier,x,y` line per node and
    /// one `tier,src,dst` line per pair.
    pub fn export_text(&self, config: &NetworkConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# overlay-deployment n={} beta={} k1={} k2={} alpha={} seed={} primary_only={}",
            config.n, config.beta, config.k1, config.k2, config.alpha, config.seed, config.primary_only
        );
        for t in self.tiers() {
            for (id, p) in t.points.iter().enumerate() {
                let _ = writeln!(out, "{id},{},{:?},{:?}", t.tier.as_str(), p.x, p.y);
            }
        }
        for t in self.tiers() {
            for (s, d) in &t.pairs {
                let _ = writeln!(out, "{},{s},{d}", t.tier.as_str());
            }
        }
        out
    }

    /// Reads the export format back. Grids are rebuilt from `config`.
    pub fn import_text(text: &str, config: &NetworkConfig) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.starts_with("# overlay-deployment") => {}
            _ => return Err(SimError::Parse("missing deployment header".into())),
        }
        let mut pts: [Vec<Point>; 2] = [Vec::new(), Vec::new()];
        let mut pairs: [Vec<(u32, u32)>; 2] = [Vec::new(), Vec::new()];
        let slot = |t: Tier| if t == Tier::Primary { 0 } else { 1 };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| SimError::Parse(format!("{s}: {e}")));
        let id = |s: &str| s.trim().parse::<u32>().map_err(|e| SimError::Parse(format!("{s}: {e}")));
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            match f.len() {
                4 => {
                    let t: Tier = f[1].parse()?;
                    let v = &mut pts[slot(t)];
                    if id(f[0])? as usize != v.len() {
                        return Err(SimError::Parse(format!("line {}: node ids must be dense", lineno + 2)));
                    }
                    v.push(Point::new(num(f[2])?, num(f[3])?));
                }
                3 => {
                    let t: Tier = f[0].parse()?;
                    pairs[slot(t)].push((id(f[1])?, id(f[2])?));
                }
                _ => return Err(SimError::Parse(format!("line {}: unexpected field count", lineno + 2))),
            }
        }
        let [pp, sp] = pts;
        let [ppairs, spairs] = pairs;
        let mk = |tier, area: f64, points: Vec<Point>, pairs: Vec<(u32, u32)>| -> Result<TierDeployment> {
            let excluded = excluded_node(points.len(), &pairs);
            TierDeployment::new(tier, build_grid(area)?, points, Matching { pairs, excluded, insufficient: false })
        };
        let primary = mk(Tier::Primary, config.a_p(), pp, ppairs)?;
        let secondary = if config.primary_only { None } else { Some(mk(Tier::Secondary, config.a_s(), sp, spairs)?) };
        Ok(Self { primary, secondary })
    }
}

fn excluded_node(count: usize, pairs: &[(u32, u32)]) -> Option<u32> {
    if count % 2 == 1 {
        let mut seen = vec![false; count];
        for &(s, d) in pairs {
            seen[s as usize] = true;
            seen[d as usize] = true;
        }
        seen.iter().position(|&b| !b).map(|i| i as u32)
    } else {
        None
    }
}
