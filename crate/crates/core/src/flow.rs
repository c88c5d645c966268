//! Slot-level simulation of both tiers: link rates and interference on the
//! evaluated frames, packet motion on every frame, and the resulting
//! throughput and delay measurements.
//!
//! Forwarding is frame-synchronous. A node holding a packet at the start of
//! its turn sends it; a packet received during frame `f` is sent at the
//! holder's first usable turn in a frame after `f`. For the secondary tier a
//! "frame" is one primary slot and a turn is usable when the cell is not
//! preserved (and, with the receiver guard on, the receiver is clear of
//! active primary transmitters).

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Result, SimError};
use crate::geometry::{CellGrid, CellIndex, Deployment, Point, Tier, TierDeployment};
use crate::phy::{bound_set, lattice_tail, rate_from, tx_power, BoundSet, Channel};
use crate::protocol::{slot_of_cell, slot_position, Schedule, SLOTS};
use crate::routing::{count_paths, designated_relay, hop_count, next_direction, Direction, PathTable};

const NONE: u32 = u32::MAX;
const MAX_BUFFER: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
enum RxRef {
    Relay(Direction),
    Node(u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum TxRef {
    Relay,
    Node(u32),
}

#[derive(Clone, Copy, Debug)]
struct Link {
    tx: TxRef,
    /// Index into the tier's receiver table.
    rx: u32,
}

#[derive(Clone, Debug, Default)]
struct CellPlan {
    rx: std::ops::Range<u32>,
    links: std::ops::Range<u32>,
    relay_link: [u32; 4],
}

#[derive(Clone, Copy, Debug)]
struct PairPlan {
    src: u32,
    dst: u32,
    src_cell: CellIndex,
    dst_cell: CellIndex,
    hops: u32,
    stalled: bool,
    first_link: u32,
    last_link: u32,
}

/// Static per-tier routing and link layout.
struct TierPlan<'a> {
    dep: &'a TierDeployment,
    grid: CellGrid,
    power: f64,
    pairs: Vec<PairPlan>,
    table: PathTable,
    cells: Vec<CellPlan>,
    receivers: Vec<RxRef>,
    links: Vec<Link>,
    /// Cells that carry traffic, grouped by their own TDMA slot.
    by_slot: Vec<Vec<u32>>,
}

impl<'a> TierPlan<'a> {
    fn new(dep: &'a TierDeployment, config: &NetworkConfig) -> Self {
        let grid = dep.grid;
        let nc = grid.cell_count();
        let mut pairs = Vec::with_capacity(dep.pairs.len());
        let mut endpoints = Vec::with_capacity(dep.pairs.len());
        // per cell: receivers and links before flattening
        let mut cell_rx: Vec<Vec<RxRef>> = vec![Vec::new(); nc];
        let mut cell_links: Vec<Vec<(TxRef, RxRef, u32)>> = vec![Vec::new(); nc];
        let mut relay_dirs = vec![0u8; nc];
        for (pid, &(s, d)) in dep.pairs.iter().enumerate() {
            let (sc, dc) = (dep.cell_of_node(s), dep.cell_of_node(d));
            endpoints.push((sc, dc));
            let hops = hop_count(sc, dc) as u32;
            let mut stalled = false;
            let mut cur = sc;
            while let Some(dir) = next_direction(cur, dc) {
                cur = dir.step(cur);
                if cur != dc && dep.members(grid.index(cur)).is_empty() {
                    stalled = true;
                    break;
                }
            }
            if !stalled && hops >= 2 {
                let mut cur = next_direction(sc, dc).expect("hops >= 2").step(sc);
                for _ in 1..hops - 1 {
                    let dir = next_direction(cur, dc).expect("on path");
                    relay_dirs[grid.index(cur)] |= 1 << dir.index();
                    cur = dir.step(cur);
                }
            }
            let p = PairPlan {
                src: s,
                dst: d,
                src_cell: sc,
                dst_cell: dc,
                hops,
                stalled,
                first_link: NONE,
                last_link: NONE,
            };
            if !stalled {
                let c0 = grid.index(sc);
                if hops <= 1 {
                    cell_links[c0].push((TxRef::Node(s), RxRef::Node(d), pid as u32));
                } else {
                    let dir = next_direction(sc, dc).expect("hops >= 2");
                    cell_links[c0].push((TxRef::Node(s), RxRef::Relay(dir), pid as u32));
                    let mut last = sc;
                    for _ in 0..hops - 1 {
                        last = next_direction(last, dc).expect("on path").step(last);
                    }
                    cell_links[grid.index(last)].push((TxRef::Relay, RxRef::Node(d), pid as u32));
                }
            }
            pairs.push(p);
        }
        let table = count_paths(&endpoints, &grid);

        let mut cells = vec![CellPlan::default(); nc];
        let mut receivers = Vec::new();
        let mut links = Vec::new();
        let mut link_owner: Vec<(u32, bool)> = Vec::new();
        for c in 0..nc {
            let rx_start = receivers.len() as u32;
            let link_start = links.len() as u32;
            let mut relay_link = [NONE; 4];
            let rx_index = |r: RxRef, receivers: &mut Vec<RxRef>, local: &mut Vec<RxRef>| -> u32 {
                if let Some(i) = local.iter().position(|&x| x == r) {
                    rx_start + i as u32
                } else {
                    local.push(r);
                    receivers.push(r);
                    rx_start + local.len() as u32 - 1
                }
            };
            let local = &mut cell_rx[c];
            for dir in Direction::ALL {
                if relay_dirs[c] & (1 << dir.index()) != 0 {
                    let rx = rx_index(RxRef::Relay(dir), &mut receivers, local);
                    relay_link[dir.index()] = links.len() as u32;
                    links.push(Link { tx: TxRef::Relay, rx });
                    link_owner.push((NONE, false));
                }
            }
            for &(tx, r, pid) in &cell_links[c] {
                let rx = rx_index(r, &mut receivers, local);
                let is_first = matches!(tx, TxRef::Node(_));
                link_owner.push((pid, is_first));
                links.push(Link { tx, rx });
            }
            cells[c] = CellPlan {
                rx: rx_start..receivers.len() as u32,
                links: link_start..links.len() as u32,
                relay_link,
            };
        }
        for (li, &(pid, is_first)) in link_owner.iter().enumerate() {
            if pid == NONE {
                continue;
            }
            let p = &mut pairs[pid as usize];
            if is_first {
                p.first_link = li as u32;
                if p.hops <= 1 {
                    p.last_link = li as u32;
                }
            } else {
                p.last_link = li as u32;
            }
        }
        let mut by_slot = vec![Vec::new(); SLOTS];
        for c in 0..nc {
            if !cells[c].links.is_empty() {
                by_slot[slot_of_cell(grid.cell(c))].push(c as u32);
            }
        }
        let power = tx_power(dep.tier, config, grid.actual_area);
        Self { dep, grid, power, pairs, table, cells, receivers, links, by_slot }
    }

    fn relay_positions(&self, frame: u64, out: &mut Vec<Point>) {
        out.clear();
        out.extend((0..self.grid.cell_count()).map(|c| {
            designated_relay(self.dep.members(c), frame)
                .map(|id| self.dep.points[id as usize])
                .unwrap_or(Point::new(f64::NAN, f64::NAN))
        }));
    }

    fn rx_pos(&self, cell: usize, r: RxRef, relays: &[Point]) -> Point {
        match r {
            RxRef::Node(id) => self.dep.points[id as usize],
            RxRef::Relay(dir) => relays[self.grid.index(dir.step(self.grid.cell(cell)))],
        }
    }

    fn tx_pos(&self, cell: usize, t: TxRef, relays: &[Point]) -> Point {
        match t {
            TxRef::Relay => relays[cell],
            TxRef::Node(id) => self.dep.points[id as usize],
        }
    }

    fn cluster_of(&self, p: Point) -> (usize, usize) {
        let c = self.grid.cells_per_side;
        let f = c as f64;
        let row = ((p.y * f) as usize).min(c - 1);
        let col = ((p.x * f) as usize).min(c - 1);
        (row / 5, col / 5)
    }

    fn hop_rates(&self, rates: &[f64], pid: usize) -> f64 {
        let p = &self.pairs[pid];
        let g = &self.grid;
        let load = |c: CellIndex| self.table.load(g.index(c)) as f64;
        let mut best = rates[p.first_link as usize] / load(p.src_cell);
        if p.hops >= 2 {
            let mut cur = next_direction(p.src_cell, p.dst_cell).expect("hops >= 2").step(p.src_cell);
            for _ in 1..p.hops - 1 {
                let dir = next_direction(cur, p.dst_cell).expect("on path");
                let li = self.cells[g.index(cur)].relay_link[dir.index()];
                best = best.min(rates[li as usize] / load(cur));
                cur = dir.step(cur);
            }
            best = best.min(rates[p.last_link as usize] / load(cur));
        }
        best
    }
}

/// Interference accounting for one realization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterferenceStats {
    pub phy_frames: u32,
    pub max_i_p: f64,
    pub max_i_sp: f64,
    pub max_i_s: f64,
    pub max_i_ps: f64,
    pub violations_i_p: u64,
    pub violations_i_sp: u64,
    pub violations_i_s: u64,
    pub violations_i_ps: u64,
    /// Active secondary transmitters closer than one secondary side to the
    /// 3x3 block around an active primary cell.
    pub strip_violations: u64,
    /// Secondary link-slots deferred by the receiver guard.
    pub guarded_link_slots: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TierMetrics {
    pub cells_per_side: usize,
    pub nodes: usize,
    pub pairs: usize,
    pub stalled_paths: usize,
    pub zero_hop_pairs: usize,
    pub mean_hops: f64,
    pub max_cell_load: u32,
    /// Minimum over pairs that are not stalled.
    pub lambda_min: Option<f64>,
    /// Minimum over every pair, stalled pairs counting as zero.
    pub lambda_min_with_stalled: Option<f64>,
    pub lambda_mean: Option<f64>,
    /// Pair count times the minimum pair throughput.
    pub sum_throughput: Option<f64>,
    pub mean_delay: Option<f64>,
    pub per_hop_delay_mean: Option<f64>,
    pub per_hop_delay_max: Option<f64>,
    pub hops_recorded: u64,
    /// Hops whose delay was not exactly one frame (primary tier only).
    pub hops_off_frame: u64,
    pub emitted: u64,
    pub delivered: u64,
    pub in_flight: u64,
    /// Pairs that are not stalled yet delivered nothing.
    pub outage: usize,
    pub fifo_violations: u64,
    pub conservation_ok: bool,
    pub min_link_rate: Option<f64>,
    pub rate_floor_violations: u64,
    pub distance_cap_violations: u64,
    pub link_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub n: f64,
    pub m: f64,
    pub seed: u64,
    pub frames: u32,
    pub primary: TierMetrics,
    pub secondary: Option<TierMetrics>,
    pub eta_min: Option<f64>,
    pub eta_max: Option<f64>,
    /// Number of secondary cells with each unpreserved-slot count 0..=25.
    pub eta_histogram: Option<Vec<u64>>,
    pub interference: InterferenceStats,
    pub bounds: BoundSet,
    pub bound_violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDetail {
    pub tier: Tier,
    pub pair: u32,
    pub src: u32,
    pub dst: u32,
    pub hops: u32,
    pub stalled: bool,
    pub throughput: Option<f64>,
    pub mean_delay: Option<f64>,
    pub delivered: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub metrics: MetricsRecord,
    pub pairs: Vec<PairDetail>,
}

/// Fluid throughput of one pair: the smallest per-hop rate share.
pub fn pair_throughput(hops: &[(f64, u32)]) -> f64 {
    hops.iter().map(|&(r, load)| r / load as f64).fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSummary {
    pub min: Option<f64>,
    pub min_with_stalled: Option<f64>,
    pub mean: Option<f64>,
    pub sum: Option<f64>,
}

/// Summarizes per-pair throughputs; `None` marks a stalled pair.
pub fn measure_throughput(per_pair: &[Option<f64>]) -> ThroughputSummary {
    let live: Vec<f64> = per_pair.iter().flatten().copied().collect();
    if per_pair.is_empty() {
        return ThroughputSummary { min: None, min_with_stalled: None, mean: None, sum: None };
    }
    let min = live.iter().copied().reduce(f64::min);
    let min_with_stalled = if live.len() < per_pair.len() { Some(0.0) } else { min };
    let mean = (!live.is_empty()).then(|| live.iter().sum::<f64>() / live.len() as f64);
    ThroughputSummary { min, min_with_stalled, mean, sum: min.map(|m| m * per_pair.len() as f64) }
}

/// Mean over pairs of each pair's mean delay. Pairs are given as
/// `(delay sum, packet count)`; pairs with no packets are skipped.
pub fn measure_delay(per_pair: &[(f64, u64)]) -> Result<f64> {
    let means: Vec<f64> = per_pair.iter().filter(|p| p.1 > 0).map(|&(s, c)| s / c as f64).collect();
    if means.is_empty() {
        return Err(SimError::UndefinedDelay);
    }
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

fn dist2_to_block(p: Point, cell: CellIndex, l: f64) -> f64 {
    let (x0, x1) = ((cell.col as f64 - 1.0) * l, (cell.col as f64 + 2.0) * l);
    let (y0, y1) = ((cell.row as f64 - 1.0) * l, (cell.row as f64 + 2.0) * l);
    let dx = (x0 - p.x).max(p.x - x1).max(0.0);
    let dy = (y0 - p.y).max(p.y - y1).max(0.0);
    dx * dx + dy * dy
}

/// The primary cell active in `slot` within two cells of `p`'s cell, if
/// one exists (at most one can).
fn nearby_active_primary(grid: &CellGrid, p: Point, slot: usize) -> Option<CellIndex> {
    let c = grid.cells_per_side as i64;
    let f = c as f64;
    let r0 = ((p.y * f) as i64).min(c - 1);
    let c0 = ((p.x * f) as i64).min(c - 1);
    let (lr, lc) = slot_position(slot);
    let pick = |base: i64, want: usize| -> Option<usize> {
        (base - 2..=base + 2).find(|v| v.rem_euclid(5) as usize == want).filter(|v| (0..c).contains(v)).map(|v| v as usize)
    };
    Some(CellIndex::new(pick(r0, lr)?, pick(c0, lc)?))
}

struct Tally {
    min_rate: f64,
    floor_violations: u64,
    cap_violations: u64,
    samples: u64,
}

impl Default for Tally {
    fn default() -> Self {
        Self { min_rate: f64::INFINITY, floor_violations: 0, cap_violations: 0, samples: 0 }
    }
}

/// Evaluates every link on every sub-slot of the evaluated frames and
/// returns time-averaged link rates per tier.
struct Phy<'p, 'a> {
    cfg: &'p NetworkConfig,
    bounds: BoundSet,
    ch: Channel,
    pri: &'p TierPlan<'a>,
    sec: Option<(&'p TierPlan<'a>, &'p Schedule)>,
}

struct PhyOutput {
    rates_p: Vec<f64>,
    rates_s: Vec<f64>,
    stats: InterferenceStats,
    tally_p: Tally,
    tally_s: Tally,
}

impl Phy<'_, '_> {
    fn window(&self, clusters_per_side: usize) -> (i64, f64) {
        match self.cfg.window_clusters {
            Some(w) if (w as usize) + 1 < clusters_per_side => {
                (w as i64, self.cfg.a * lattice_tail(self.cfg.alpha, w))
            }
            _ => (clusters_per_side as i64, 0.0),
        }
    }

    fn run(&self) -> PhyOutput {
        let cfg = self.cfg;
        let pri = self.pri;
        let mut out = PhyOutput {
            rates_p: vec![0.0; pri.links.len()],
            rates_s: self.sec.map(|(s, _)| vec![0.0; s.links.len()]).unwrap_or_default(),
            stats: InterferenceStats::default(),
            tally_p: Tally::default(),
            tally_s: Tally::default(),
        };
        let l_p = pri.grid.cell_side;
        let cap_p = 5f64.sqrt() * l_p * (1.0 + 1e-12);
        let guard2 = (1.5 * l_p) * (1.5 * l_p);
        let mut relays_p = Vec::new();
        let mut relays_s = Vec::new();
        let mut prx_pos: Vec<Point> = Vec::new();
        let mut prx_ip: Vec<f64> = Vec::new();
        let mut prx_isp: Vec<f64> = Vec::new();
        let mut srx_pos: Vec<Point> = Vec::new();
        let mut srx_ok: Vec<bool> = Vec::new();
        let mut srx_int: Vec<f64> = Vec::new();
        let mut ptx: Vec<(u32, Point)> = Vec::new();

        let sec_geom = self.sec.map(|(s, _)| {
            let k = s.grid.clusters_per_side();
            let (w, tail) = self.window(k);
            (k, w, tail * cfg.p1)
        });
        let mut cluster_tx: Vec<Point> = sec_geom
            .map(|(k, _, _)| vec![Point::new(f64::NAN, f64::NAN); k * k])
            .unwrap_or_default();

        let frames: Vec<u64> = (0..cfg.frames as u64).filter(|f| f % cfg.phy_stride as u64 == 0).collect();
        out.stats.phy_frames = frames.len() as u32;
        for &frame in &frames {
            pri.relay_positions(frame, &mut relays_p);
            if let Some((s, _)) = self.sec {
                s.relay_positions(frame, &mut relays_s);
            }
            for kp in 0..SLOTS {
                // primary transmitters and their receivers for this slot
                ptx.clear();
                for &c in &pri.by_slot[kp] {
                    ptx.push((c, relays_p[c as usize]));
                }
                prx_pos.clear();
                prx_ip.clear();
                prx_isp.clear();
                for &(c, _) in &ptx {
                    let cp = &pri.cells[c as usize];
                    for r in cp.rx.clone() {
                        let pos = pri.rx_pos(c as usize, pri.receivers[r as usize], &relays_p);
                        let mut ip = 0.0;
                        for &(c2, t) in &ptx {
                            if c2 != c {
                                ip += pri.power * self.ch.gain_d2(t.dist2(pos));
                            }
                        }
                        prx_pos.push(pos);
                        prx_ip.push(ip);
                        prx_isp.push(0.0);
                        out.stats.max_i_p = out.stats.max_i_p.max(ip);
                        if ip > self.bounds.i_p_bound {
                            out.stats.violations_i_p += 1;
                        }
                    }
                }
                for ks in 0..SLOTS {
                    let mut active_s: &[u32] = &[];
                    if let (Some((sec, sched)), Some((k, w, tail))) = (self.sec, sec_geom) {
                        active_s = &sec.by_slot[ks];
                        for &c in active_s {
                            if !sched.is_preserved(sec.grid.cell(c as usize), kp) {
                                let cell = sec.grid.cell(c as usize);
                                cluster_tx[(cell.row / 5) * k + cell.col / 5] = relays_s[c as usize];
                            }
                        }
                        self.secondary_subslot(
                            &mut out, sec, sched, kp, ks, &relays_s, &ptx, &cluster_tx, (k, w, tail), guard2,
                            (&mut srx_pos, &mut srx_ok, &mut srx_int),
                        );
                        // interference from secondary transmitters at primary receivers
                        for (i, pos) in prx_pos.iter().enumerate() {
                            let (a0, b0) = sec.cluster_of(*pos);
                            let mut isp = tail;
                            for a in (a0 as i64 - w).max(0)..=(a0 as i64 + w).min(k as i64 - 1) {
                                for b in (b0 as i64 - w).max(0)..=(b0 as i64 + w).min(k as i64 - 1) {
                                    let t = cluster_tx[a as usize * k + b as usize];
                                    if !t.x.is_nan() {
                                        isp += sec.power * self.ch.gain_d2(t.dist2(*pos));
                                    }
                                }
                            }
                            prx_isp[i] = isp;
                        }
                    }
                    // primary link rates for this sub-slot
                    let mut ri = 0usize;
                    for &(c, _) in &ptx {
                        let cp = &pri.cells[c as usize];
                        let base = ri;
                        for li in cp.links.clone() {
                            let link = pri.links[li as usize];
                            let k = base + (link.rx - cp.rx.start) as usize;
                            let (rx, ip, isp) = (prx_pos[k], prx_ip[k], prx_isp[k]);
                            let tx = pri.tx_pos(c as usize, link.tx, &relays_p);
                            let d2 = tx.dist2(rx);
                            let rate = rate_from(pri.power * self.ch.gain_d2(d2), cfg.n0, ip + isp);
                            out.rates_p[li as usize] += rate / SLOTS as f64;
                            let t = &mut out.tally_p;
                            t.samples += 1;
                            t.min_rate = t.min_rate.min(rate);
                            if rate < self.bounds.k1 {
                                t.floor_violations += 1;
                            }
                            if d2.sqrt() > cap_p {
                                t.cap_violations += 1;
                            }
                        }
                        ri = base + cp.rx.len();
                    }
                    for &isp in &prx_isp {
                        out.stats.max_i_sp = out.stats.max_i_sp.max(isp);
                        if isp > self.bounds.i_sp_bound {
                            out.stats.violations_i_sp += 1;
                        }
                    }
                    if let (Some((sec, _)), Some((k, _, _))) = (self.sec, sec_geom) {
                        for &c in active_s {
                            let cell = sec.grid.cell(c as usize);
                            cluster_tx[(cell.row / 5) * k + cell.col / 5] = Point::new(f64::NAN, f64::NAN);
                        }
                    }
                }
            }
        }
        let nf = frames.len().max(1) as f64;
        for r in out.rates_p.iter_mut().chain(out.rates_s.iter_mut()) {
            *r /= nf;
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn secondary_subslot(
        &self,
        out: &mut PhyOutput,
        sec: &TierPlan,
        sched: &Schedule,
        kp: usize,
        ks: usize,
        relays_s: &[Point],
        ptx: &[(u32, Point)],
        cluster_tx: &[Point],
        (k, w, tail): (usize, i64, f64),
        guard2: f64,
        (rx_pos, rx_ok, rx_int): (&mut Vec<Point>, &mut Vec<bool>, &mut Vec<f64>),
    ) {
        let cfg = self.cfg;
        let pri = self.pri;
        let l_p = pri.grid.cell_side;
        let s_side = sec.grid.cell_side;
        let cap_s = 5f64.sqrt() * s_side * (1.0 + 1e-12);
        let strip2 = s_side * s_side * (1.0 - 1e-9);
        let floor_s = self.bounds.k2 * 25.0 / 9.0;
        for &c in &sec.by_slot[ks] {
            let cell = sec.grid.cell(c as usize);
            if sched.is_preserved(cell, kp) {
                continue;
            }
            let my_cluster = (cell.row / 5) * k + cell.col / 5;
            let tx_rep = relays_s[c as usize];
            if let Some(pc) = nearby_active_primary(&pri.grid, tx_rep, kp) {
                if !pri.dep.members(pri.grid.index(pc)).is_empty() && dist2_to_block(tx_rep, pc, l_p) < strip2 {
                    out.stats.strip_violations += 1;
                }
            }
            let cp = &sec.cells[c as usize];
            rx_pos.clear();
            rx_ok.clear();
            rx_int.clear();
            for r in cp.rx.clone() {
                let pos = sec.rx_pos(c as usize, sec.receivers[r as usize], relays_s);
                let mut ips = 0.0;
                let mut guarded = false;
                for &(_, t) in ptx {
                    let d2 = t.dist2(pos);
                    guarded |= d2 < guard2;
                    ips += pri.power * self.ch.gain_d2(d2);
                }
                let ok = !(cfg.rx_guard && guarded);
                let (a0, b0) = sec.cluster_of(pos);
                let mut is = tail;
                for a in (a0 as i64 - w).max(0)..=(a0 as i64 + w).min(k as i64 - 1) {
                    for b in (b0 as i64 - w).max(0)..=(b0 as i64 + w).min(k as i64 - 1) {
                        let idx = a as usize * k + b as usize;
                        if idx == my_cluster {
                            continue;
                        }
                        let t = cluster_tx[idx];
                        if !t.x.is_nan() {
                            is += sec.power * self.ch.gain_d2(t.dist2(pos));
                        }
                    }
                }
                if ok {
                    out.stats.max_i_s = out.stats.max_i_s.max(is);
                    out.stats.max_i_ps = out.stats.max_i_ps.max(ips);
                    if is > self.bounds.i_s_bound {
                        out.stats.violations_i_s += 1;
                    }
                    if ips > self.bounds.i_ps_bound {
                        out.stats.violations_i_ps += 1;
                    }
                }
                rx_pos.push(pos);
                rx_ok.push(ok);
                rx_int.push(is + ips);
            }
            for li in cp.links.clone() {
                let link = sec.links[li as usize];
                let k = (link.rx - cp.rx.start) as usize;
                if !rx_ok[k] {
                    out.stats.guarded_link_slots += 1;
                    continue;
                }
                let tx = sec.tx_pos(c as usize, link.tx, relays_s);
                let d2 = tx.dist2(rx_pos[k]);
                let rate = rate_from(sec.power * self.ch.gain_d2(d2), cfg.n0, rx_int[k]);
                out.rates_s[li as usize] += rate / SLOTS as f64;
                let t = &mut out.tally_s;
                t.samples += 1;
                t.min_rate = t.min_rate.min(rate);
                if rate < floor_s {
                    t.floor_violations += 1;
                }
                if d2.sqrt() > cap_s {
                    t.cap_violations += 1;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Packet {
    pair: u32,
    seq: u32,
    cell: u32,
    hops_done: u32,
    depart: f64,
    last_time: f64,
    last_key: u64,
    counted: bool,
}

#[derive(Clone, Debug, Default)]
struct PairStats {
    emitted: u64,
    delivered: u64,
    delay_sum: f64,
    delay_count: u64,
    next_seq: u32,
    last_arrived: Option<u32>,
    last_service: (u32, u64),
}

/// Packet engine for one tier. Keys are primary slots (primary tier) or
/// secondary sub-slots (secondary tier).
struct Engine<'p, 'a> {
    plan: &'p TierPlan<'a>,
    secondary: Option<&'p Schedule>,
    primary: &'p TierPlan<'a>,
    cfg: &'p NetworkConfig,
    ring: Vec<Vec<u32>>,
    packets: Vec<Packet>,
    free: Vec<u32>,
    pairs: Vec<PairStats>,
    pending: Vec<u32>,
    in_flight: u64,
    emitted: u64,
    delivered: u64,
    fifo_violations: u64,
    conservation_ok: bool,
    hop_sum: f64,
    hop_count: u64,
    hop_max: f64,
    hops_off_frame: u64,
    /// Per link: primary slot of the last guard evaluation and its result.
    guard_memo: Vec<(u64, bool)>,
}

impl<'p, 'a> Engine<'p, 'a> {
    fn new(plan: &'p TierPlan<'a>, secondary: Option<&'p Schedule>, primary: &'p TierPlan<'a>, cfg: &'p NetworkConfig) -> Self {
        let ring_len = if secondary.is_some() { 4096 } else { 128 };
        Self {
            plan,
            secondary,
            primary,
            cfg,
            ring: vec![Vec::new(); ring_len],
            packets: Vec::new(),
            free: Vec::new(),
            pairs: vec![PairStats { last_service: (NONE, u64::MAX), ..Default::default() }; plan.pairs.len()],
            pending: vec![0; plan.grid.cell_count()],
            in_flight: 0,
            emitted: 0,
            delivered: 0,
            fifo_violations: 0,
            conservation_ok: true,
            hop_sum: 0.0,
            hop_count: 0,
            hop_max: 0.0,
            hops_off_frame: 0,
            guard_memo: vec![(u64::MAX, false); plan.links.len()],
        }
    }

    fn key_time(&self, key: u64) -> f64 {
        let tp = self.cfg.tp;
        match self.secondary {
            None => key as f64 * tp,
            Some(_) => (key / 25) as f64 * tp + (key % 25) as f64 * self.cfg.ts(),
        }
    }

    fn frame_of(&self, key: u64) -> u64 {
        match self.secondary {
            None => key / 25,
            Some(_) => key / 625,
        }
    }

    /// First usable turn of `cell` in a frame strictly after the one
    /// containing `key`, or `None` when the cell is never usable.
    fn next_turn(&self, cell: u32, key: u64) -> Option<u64> {
        let ci = self.plan.grid.cell(cell as usize);
        let own = slot_of_cell(ci) as u64;
        match self.secondary {
            None => Some((key / 25 + 1) * 25 + own),
            Some(sched) => {
                let open = !sched.preserved_slots(ci) & ((1 << SLOTS) - 1);
                if open == 0 {
                    return None;
                }
                let mut f = key / 25 + 1;
                while open & (1 << (f % 25)) == 0 {
                    f += 1;
                }
                Some(f * 25 + own)
            }
        }
    }

    /// Turn at which a source generates its packet in `frame`.
    fn generation_turn(&self, cell: u32, frame: u64) -> Option<u64> {
        let ci = self.plan.grid.cell(cell as usize);
        let own = slot_of_cell(ci) as u64;
        match self.secondary {
            None => Some(frame * 25 + own),
            Some(sched) => {
                let open = !sched.preserved_slots(ci) & ((1 << SLOTS) - 1);
                (0..25u64).find(|k| open & (1 << k) != 0).map(|k| (frame * 25 + k) * 25 + own)
            }
        }
    }

    fn schedule(&mut self, pid: u32, key: u64) -> Result<()> {
        let cell = self.packets[pid as usize].cell as usize;
        self.pending[cell] += 1;
        if self.pending[cell] as usize > MAX_BUFFER {
            return Err(SimError::Instability { cell, len: self.pending[cell] as usize });
        }
        let n = self.ring.len() as u64;
        self.ring[(key % n) as usize].push(pid);
        Ok(())
    }

    fn emit(&mut self, frame: u64) -> Result<()> {
        let warm = self.cfg.warmup_frames as u64;
        for (i, p) in self.plan.pairs.iter().enumerate() {
            if p.stalled {
                continue;
            }
            let c0 = self.plan.grid.index(p.src_cell) as u32;
            let Some(gen) = self.generation_turn(c0, frame) else { continue };
            let Some(first) = self.next_turn(c0, gen) else { continue };
            let t_gen = self.key_time(gen);
            let st = &mut self.pairs[i];
            let pkt = Packet {
                pair: i as u32,
                seq: st.next_seq,
                cell: c0,
                hops_done: 0,
                depart: t_gen,
                last_time: t_gen,
                last_key: gen,
                counted: frame >= warm,
            };
            st.next_seq += 1;
            st.emitted += 1;
            self.emitted += 1;
            self.in_flight += 1;
            let id = match self.free.pop() {
                Some(id) => {
                    self.packets[id as usize] = pkt;
                    id
                }
                None => {
                    self.packets.push(pkt);
                    self.packets.len() as u32 - 1
                }
            };
            self.schedule(id, first)?;
        }
        Ok(())
    }

    /// Whether the receiver of this packet's next transmission at `key` is
    /// within the guard radius of an active primary transmitter.
    fn guarded(&mut self, pkt: &Packet, key: u64) -> bool {
        let plan = self.plan;
        let p = &plan.pairs[pkt.pair as usize];
        let link = if pkt.hops_done + 1 >= p.hops {
            p.last_link
        } else if pkt.hops_done == 0 {
            p.first_link
        } else {
            let cur = plan.grid.cell(pkt.cell as usize);
            let dir = next_direction(cur, p.dst_cell).expect("not at destination");
            plan.cells[pkt.cell as usize].relay_link[dir.index()]
        } as usize;
        let stamp = key / 25;
        if self.guard_memo[link].0 == stamp {
            return self.guard_memo[link].1;
        }
        let frame = key / 625;
        let kp = (stamp % 25) as usize;
        let rx = match plan.receivers[plan.links[link].rx as usize] {
            RxRef::Node(id) => plan.dep.points[id as usize],
            RxRef::Relay(dir) => {
                let nxt = dir.step(plan.grid.cell(pkt.cell as usize));
                let members = plan.dep.members(plan.grid.index(nxt));
                plan.dep.points[designated_relay(members, frame).expect("not stalled") as usize]
            }
        };
        let hit = self.primary_near(rx, kp, frame);
        self.guard_memo[link] = (stamp, hit);
        hit
    }

    fn primary_near(&self, rx: Point, kp: usize, frame: u64) -> bool {
        let pri = self.primary;
        let Some(pc) = nearby_active_primary(&pri.grid, rx, kp) else { return false };
        let pci = pri.grid.index(pc);
        if pri.cells[pci].links.is_empty() {
            return false;
        }
        let Some(relay) = designated_relay(pri.dep.members(pci), frame) else { return false };
        let l = pri.grid.cell_side;
        pri.dep.points[relay as usize].dist2(rx) < 2.25 * l * l
    }

    fn process(&mut self, key: u64) -> Result<()> {
        let n = self.ring.len() as u64;
        let bucket = std::mem::take(&mut self.ring[(key % n) as usize]);
        for &id in &bucket {
            let mut pkt = self.packets[id as usize];
            self.pending[pkt.cell as usize] -= 1;
            let pair_plan = self.plan.pairs[pkt.pair as usize];
            let busy = self.pairs[pkt.pair as usize].last_service == (pkt.cell, key);
            let blocked = self.secondary.is_some() && self.cfg.rx_guard && self.guarded(&pkt, key);
            if busy || blocked {
                let next = self.next_turn(pkt.cell, key).expect("cell was usable");
                self.schedule(id, next)?;
                continue;
            }
            self.pairs[pkt.pair as usize].last_service = (pkt.cell, key);
            let t = self.key_time(key);
            if pkt.counted {
                let d = t - pkt.last_time;
                self.hop_sum += d;
                self.hop_count += 1;
                self.hop_max = self.hop_max.max(d);
                if self.secondary.is_none() && self.frame_of(key) != self.frame_of(pkt.last_key) + 1 {
                    self.hops_off_frame += 1;
                }
            }
            pkt.last_time = t;
            pkt.last_key = key;
            pkt.hops_done += 1;
            if pkt.hops_done >= pair_plan.hops.max(1) {
                let st = &mut self.pairs[pkt.pair as usize];
                st.delivered += 1;
                if pkt.counted {
                    st.delay_sum += t - pkt.depart;
                    st.delay_count += 1;
                }
                if st.last_arrived.is_some_and(|s| s >= pkt.seq) {
                    self.fifo_violations += 1;
                }
                st.last_arrived = Some(pkt.seq);
                self.delivered += 1;
                self.in_flight -= 1;
                self.free.push(id);
                continue;
            }
            let cur = self.plan.grid.cell(pkt.cell as usize);
            let nxt = next_direction(cur, pair_plan.dst_cell).expect("not delivered").step(cur);
            pkt.cell = self.plan.grid.index(nxt) as u32;
            self.packets[id as usize] = pkt;
            match self.next_turn(pkt.cell, key) {
                Some(k) => self.schedule(id, k)?,
                None => self.pending[pkt.cell as usize] += 1,
            }
        }
        let mut bucket = bucket;
        bucket.clear();
        let slot = &mut self.ring[(key % n) as usize];
        if slot.is_empty() {
            *slot = bucket;
        }
        Ok(())
    }

    fn end_frame(&mut self) {
        let held: u64 = self.pending.iter().map(|&p| p as u64).sum();
        if self.emitted != self.delivered + self.in_flight || held != self.in_flight {
            self.conservation_ok = false;
        }
    }
}

fn tier_metrics(plan: &TierPlan, engine: &Engine, rates: Option<&[f64]>, tally: &Tally, details: &mut Vec<PairDetail>) -> TierMetrics {
    let mut per_pair_tp = Vec::with_capacity(plan.pairs.len());
    let mut delays = Vec::with_capacity(plan.pairs.len());
    let mut outage = 0;
    let mut hop_total = 0u64;
    for (i, p) in plan.pairs.iter().enumerate() {
        hop_total += p.hops as u64;
        let tp = match (p.stalled, rates) {
            (false, Some(r)) => Some(plan.hop_rates(r, i)),
            _ => None,
        };
        per_pair_tp.push(if p.stalled { None } else { tp });
        let st = &engine.pairs[i];
        delays.push((st.delay_sum, st.delay_count));
        if !p.stalled && st.delivered == 0 {
            outage += 1;
        }
        details.push(PairDetail {
            tier: plan.dep.tier,
            pair: i as u32,
            src: p.src,
            dst: p.dst,
            hops: p.hops,
            stalled: p.stalled,
            throughput: tp,
            mean_delay: (st.delay_count > 0).then(|| st.delay_sum / st.delay_count as f64),
            delivered: st.delivered,
        });
    }
    let summary = if rates.is_some() {
        measure_throughput(&per_pair_tp)
    } else {
        ThroughputSummary { min: None, min_with_stalled: None, mean: None, sum: None }
    };
    let np = plan.pairs.len();
    TierMetrics {
        cells_per_side: plan.grid.cells_per_side,
        nodes: plan.dep.points.len(),
        pairs: np,
        stalled_paths: plan.pairs.iter().filter(|p| p.stalled).count(),
        zero_hop_pairs: plan.pairs.iter().filter(|p| p.hops == 0).count(),
        mean_hops: if np > 0 { hop_total as f64 / np as f64 } else { 0.0 },
        max_cell_load: plan.table.max_load(),
        lambda_min: summary.min,
        lambda_min_with_stalled: summary.min_with_stalled,
        lambda_mean: summary.mean,
        sum_throughput: summary.sum,
        mean_delay: measure_delay(&delays).ok(),
        per_hop_delay_mean: (engine.hop_count > 0).then(|| engine.hop_sum / engine.hop_count as f64),
        per_hop_delay_max: (engine.hop_count > 0).then_some(engine.hop_max),
        hops_recorded: engine.hop_count,
        hops_off_frame: engine.hops_off_frame,
        emitted: engine.emitted,
        delivered: engine.delivered,
        in_flight: engine.in_flight,
        outage,
        fifo_violations: engine.fifo_violations,
        conservation_ok: engine.conservation_ok,
        min_link_rate: tally.min_rate.is_finite().then_some(tally.min_rate),
        rate_floor_violations: tally.floor_violations,
        distance_cap_violations: tally.cap_violations,
        link_samples: tally.samples,
    }
}

/// Runs one realization of both tiers over `config.frames` primary frames.
pub fn run_frames(dep: &Deployment, config: &NetworkConfig) -> Result<Realization> {
    config.validate()?;
    let bounds = bound_set(config)?;
    let pri = TierPlan::new(&dep.primary, config);
    let sec_parts = match &dep.secondary {
        Some(s) => {
            if s.grid.cells_per_side <= pri.grid.cells_per_side {
                return Err(SimError::Config("secondary grid must be finer than the primary grid".into()));
            }
            Some((TierPlan::new(s, config), Schedule::new(pri.grid, s.grid, config.preservation)))
        }
        None => None,
    };
    let sec = sec_parts.as_ref().map(|(p, s)| (p, s));

    let phy = Phy { cfg: config, bounds, ch: Channel::new(config.alpha, config.a), pri: &pri, sec }.run();
    let have_rates = phy.stats.phy_frames > 0;

    let mut ep = Engine::new(&pri, None, &pri, config);
    let mut es = sec.map(|(p, s)| Engine::new(p, Some(s), &pri, config));
    let interval = config.packet_interval as u64;
    for frame in 0..config.frames as u64 {
        if frame % interval == 0 {
            ep.emit(frame)?;
            if let Some(e) = es.as_mut() {
                e.emit(frame)?;
            }
        }
        for kp in 0..25u64 {
            let slot = frame * 25 + kp;
            ep.process(slot)?;
            if let Some(e) = es.as_mut() {
                for ks in 0..25u64 {
                    e.process(slot * 25 + ks)?;
                }
            }
        }
        ep.end_frame();
        if let Some(e) = es.as_mut() {
            e.end_frame();
        }
    }

    let mut details = Vec::new();
    let primary = tier_metrics(&pri, &ep, have_rates.then_some(&phy.rates_p[..]), &phy.tally_p, &mut details);
    let (secondary, eta) = match (sec, es.as_ref()) {
        (Some((plan, sched)), Some(e)) => {
            let tm = tier_metrics(plan, e, have_rates.then_some(&phy.rates_s[..]), &phy.tally_s, &mut details);
            let mut hist = vec![0u64; SLOTS + 1];
            for c in 0..plan.grid.cell_count() {
                hist[sched.opportunistic_factor(plan.grid.cell(c)).0 as usize] += 1;
            }
            let (lo, hi) = sched.eta_range();
            (Some(tm), Some((lo.value(), hi.value(), hist)))
        }
        _ => (None, None),
    };
    let st = &phy.stats;
    let bound_violations = st.violations_i_p
        + st.violations_i_sp
        + st.violations_i_s
        + st.violations_i_ps
        + st.strip_violations
        + phy.tally_p.floor_violations
        + phy.tally_p.cap_violations
        + phy.tally_s.floor_violations
        + phy.tally_s.cap_violations;
    let metrics = MetricsRecord {
        n: config.n,
        m: config.m(),
        seed: config.seed,
        frames: config.frames,
        primary,
        secondary,
        eta_min: eta.as_ref().map(|e| e.0),
        eta_max: eta.as_ref().map(|e| e.1),
        eta_histogram: eta.map(|e| e.2),
        interference: phy.stats,
        bounds,
        bound_violations,
    };
    Ok(Realization { metrics, pairs: details })
}

/// Cell sequences of every pair, for diagnostics.
pub fn tier_paths(dep: &TierDeployment) -> Vec<(u32, Vec<CellIndex>)> {
    dep.pairs
        .iter()
        .enumerate()
        .map(|(i, &(s, d))| (i as u32, crate::routing::build_path(dep.cell_of_node(s), dep.cell_of_node(d))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_examples() {
        assert_eq!(pair_throughput(&[(0.3, 1)]), 0.3);
        assert_eq!(pair_throughput(&[(0.5, 1), (0.3, 2), (0.4, 1)]), 0.15);
        let s = measure_throughput(&[Some(0.2), None, Some(0.5)]);
        assert_eq!(s.min, Some(0.2));
        assert_eq!(s.min_with_stalled, Some(0.0));
        assert_eq!(s.sum, Some(0.2 * 3.0));
    }

    #[test]
    fn delay_examples() {
        assert_eq!(measure_delay(&[(50.0, 1)]).unwrap(), 50.0);
        assert_eq!(measure_delay(&[(10.0, 2), (30.0, 1), (0.0, 0)]).unwrap(), 17.5);
        assert_eq!(measure_delay(&[(0.0, 0)]), Err(SimError::UndefinedDelay));
    }
}
