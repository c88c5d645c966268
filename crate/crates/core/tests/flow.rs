use overlay_core::experiment::run_one;
use overlay_core::flow::{measure_delay, measure_throughput, pair_throughput, run_frames};
use overlay_core::geometry::{build_grid, generate_deployment, CellGrid, CellIndex, Deployment, Matching, Point, Tier, TierDeployment};
use overlay_core::protocol::{max_forward_wait, slot_of_cell, Schedule};
use overlay_core::{NetworkConfig, SimError};

/// n = 100 gives a 5x5 primary grid.
fn small_config() -> NetworkConfig {
    NetworkConfig { n: 100.0, primary_only: true, frames: 30, ..Default::default() }
}

fn centre(g: &CellGrid, row: usize, col: usize) -> Point {
    g.center(CellIndex::new(row, col))
}

fn primary_only(points: Vec<Point>, pairs: Vec<(u32, u32)>) -> Deployment {
    let grid = build_grid(small_config().a_p()).unwrap();
    assert_eq!(grid.cells_per_side, 5);
    let m = Matching { pairs, excluded: None, insufficient: false };
    Deployment { primary: TierDeployment::new(Tier::Primary, grid, points, m).unwrap(), secondary: None }
}

#[test]
fn adjacent_pair_takes_one_frame() {
    let g = build_grid(small_config().a_p()).unwrap();
    let dep = primary_only(vec![centre(&g, 2, 1), centre(&g, 2, 2)], vec![(0, 1)]);
    let r = run_frames(&dep, &small_config()).unwrap().metrics;
    assert_eq!(r.primary.mean_delay, Some(25.0));
    assert_eq!(r.primary.per_hop_delay_max, Some(25.0));
    assert_eq!(r.primary.hops_off_frame, 0);
    assert_eq!(r.primary.outage, 0);
    assert!(r.secondary.is_none());
}

#[test]
fn three_hops_take_three_frames() {
    let g = build_grid(small_config().a_p()).unwrap();
    let pts = vec![centre(&g, 2, 0), centre(&g, 2, 3), centre(&g, 2, 1), centre(&g, 2, 2)];
    let dep = primary_only(pts, vec![(0, 1)]);
    let r = run_frames(&dep, &small_config()).unwrap().metrics;
    let offset = slot_of_cell(CellIndex::new(2, 2)) as f64 - slot_of_cell(CellIndex::new(2, 0)) as f64;
    assert_eq!(r.primary.mean_delay, Some(75.0 + offset));
    assert_eq!(r.primary.hops_off_frame, 0);
    assert!(r.primary.lambda_min.unwrap() > 0.0);
    assert_eq!(r.primary.fifo_violations, 0);
}

#[test]
fn same_cell_pair_is_delivered_next_frame() {
    let g = build_grid(small_config().a_p()).unwrap();
    let c = centre(&g, 1, 1);
    let dep = primary_only(vec![c, Point::new(c.x + 0.01, c.y)], vec![(0, 1)]);
    let r = run_frames(&dep, &small_config()).unwrap().metrics;
    assert_eq!(r.primary.zero_hop_pairs, 1);
    assert_eq!(r.primary.mean_delay, Some(25.0));
}

#[test]
fn empty_relay_cell_stalls_the_path() {
    let g = build_grid(small_config().a_p()).unwrap();
    let dep = primary_only(vec![centre(&g, 2, 0), centre(&g, 2, 3), centre(&g, 2, 1)], vec![(0, 1)]);
    let r = run_frames(&dep, &small_config()).unwrap().metrics;
    assert_eq!(r.primary.stalled_paths, 1);
    assert_eq!(r.primary.outage, 0);
    assert_eq!(r.primary.lambda_min, None);
    assert_eq!(r.primary.lambda_min_with_stalled, Some(0.0));
    assert_eq!(r.primary.mean_delay, None);
}

#[test]
fn zero_frames_leave_delay_undefined() {
    let cfg = NetworkConfig { n: 300.0, frames: 0, ..Default::default() };
    let r = run_one(&cfg).unwrap().metrics;
    assert_eq!(r.primary.mean_delay, None);
    assert_eq!(r.primary.emitted, 0);
    assert_eq!(r.primary.lambda_min, None);
    assert_eq!(measure_delay(&[]), Err(SimError::UndefinedDelay));
}

#[test]
fn throughput_helpers() {
    assert!((pair_throughput(&[(0.6, 3), (0.5, 1)]) - 0.2).abs() < 1e-15);
    let s = measure_throughput(&[Some(0.4), Some(0.1)]);
    assert_eq!(s.min, Some(0.1));
    assert!((s.sum.unwrap() - 0.2).abs() < 1e-15);
    assert_eq!(measure_delay(&[(10.0, 2), (0.0, 0), (9.0, 1)]), Ok(7.0));
}

#[test]
fn realization_invariants() {
    let cfg = NetworkConfig { n: 500.0, seed: 3, phy_stride: 40, packet_interval: 10, ..Default::default() };
    let r = run_one(&cfg).unwrap().metrics;
    for t in [&r.primary, r.secondary.as_ref().unwrap()] {
        assert!(t.conservation_ok);
        assert_eq!(t.emitted, t.delivered + t.in_flight);
        assert_eq!(t.fifo_violations, 0);
        assert_eq!(t.outage, 0);
        assert_eq!(t.rate_floor_violations, 0);
        assert_eq!(t.distance_cap_violations, 0);
        assert!(t.link_samples > 0);
    }
    assert_eq!(r.primary.hops_off_frame, 0);
    assert_eq!(r.bound_violations, 0);
    assert_eq!((r.eta_min, r.eta_max), (Some(9.0 / 25.0), Some(16.0 / 25.0)));
    let i = &r.interference;
    assert!(i.max_i_p <= r.bounds.i_p_bound && i.max_i_sp <= r.bounds.i_sp_bound);
    assert!(i.max_i_s <= r.bounds.i_s_bound && i.max_i_ps <= r.bounds.i_ps_bound);
    let again = run_one(&cfg).unwrap().metrics;
    assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn unguarded_secondary_hops_wait_at_most_the_longest_gap() {
    let cfg = NetworkConfig { n: 500.0, seed: 1, phy_stride: 200, packet_interval: 20, rx_guard: false, ..Default::default() };
    let dep = generate_deployment(&cfg).unwrap();
    let s = dep.secondary.as_ref().unwrap();
    let sched = Schedule::new(dep.primary.grid, s.grid, cfg.preservation);
    let worst = (0..s.grid.cell_count())
        .map(|c| max_forward_wait(sched.preserved_slots(s.grid.cell(c))).unwrap())
        .max()
        .unwrap();
    assert!(worst <= 9);
    let r = run_frames(&dep, &cfg).unwrap().metrics;
    let sec = r.secondary.unwrap();
    let max = sec.per_hop_delay_max.unwrap();
    assert!(max < (worst + 1) as f64 * cfg.tp, "max {max}, worst gap {worst}");
    assert!(sec.per_hop_delay_mean.unwrap() >= cfg.ts());
}

#[test]
fn primary_only_run_has_no_secondary_fields() {
    let cfg = NetworkConfig { n: 300.0, primary_only: true, phy_stride: 50, ..Default::default() };
    let r = run_one(&cfg).unwrap().metrics;
    assert!(r.secondary.is_none() && r.eta_min.is_none() && r.eta_histogram.is_none());
    let v = serde_json::to_value(&r).unwrap();
    assert!(v["secondary"].is_null());
}
