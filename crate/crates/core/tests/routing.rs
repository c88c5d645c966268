mod support;

use overlay_core::geometry::{generate_deployment, CellGrid, CellIndex, Tier};
use overlay_core::routing::{build_path, count_paths, designated_relay, hop_count, DataPath};
use overlay_core::NetworkConfig;
use proptest::prelude::*;
use support::enumerate_path;

#[test]
fn every_pair_of_a_ten_by_ten_grid() {
    for a in 0..100 {
        for b in 0..100 {
            let (s, d) = (CellIndex::new(a / 10, a % 10), CellIndex::new(b / 10, b % 10));
            let p = build_path(s, d);
            assert_eq!(p, enumerate_path(s, d));
            assert_eq!(p.len() - 1, hop_count(s, d));
            assert!(p.len() - 1 <= 2 * 9);
            for w in p.windows(2) {
                assert_eq!(hop_count(w[0], w[1]), 1);
            }
        }
    }
}

#[test]
fn path_examples() {
    let c = CellIndex::new;
    let p = DataPath::new(3, Tier::Secondary, c(2, 3), c(2, 3));
    assert_eq!((p.hops(), p.cells.clone()), (0, vec![c(2, 3)]));
    assert_eq!(DataPath::new(0, Tier::Primary, c(0, 0), c(2, 3)).hops(), 5);
}

#[test]
fn rotation_is_fair() {
    let members = [3u32, 8, 11, 20];
    let mut seen = [0u32; 4];
    for f in 0..400u64 {
        let id = designated_relay(&members, f).unwrap();
        seen[members.iter().position(|&m| m == id).unwrap()] += 1;
    }
    assert_eq!(seen, [100; 4]);
}

fn brute_counts(endpoints: &[(CellIndex, CellIndex)], grid: &CellGrid) -> (Vec<u32>, Vec<u32>) {
    let mut through = vec![0u32; grid.cell_count()];
    let mut orig = vec![0u32; grid.cell_count()];
    for &(s, d) in endpoints {
        let p = build_path(s, d);
        orig[grid.index(p[0])] += 1;
        for c in &p[1..] {
            through[grid.index(*c)] += 1;
        }
    }
    (through, orig)
}

proptest! {
    #[test]
    fn counts_match_enumeration(raw in prop::collection::vec((0usize..12, 0usize..12, 0usize..12, 0usize..12), 0..60)) {
        let grid = CellGrid::with_side_count(12, 1.0 / 144.0);
        let ends: Vec<(CellIndex, CellIndex)> = raw.iter().map(|&(a, b, c, d)| (CellIndex::new(a, b), CellIndex::new(c, d))).collect();
        let t = count_paths(&ends, &grid);
        let (through, orig) = brute_counts(&ends, &grid);
        prop_assert_eq!(&t.through, &through);
        prop_assert_eq!(&t.originating, &orig);
        let total: u32 = (0..grid.cell_count()).map(|c| t.load(c)).sum();
        let expected: usize = ends.iter().map(|&(s, d)| hop_count(s, d) + 1).sum();
        prop_assert_eq!(total as usize, expected);
    }
}

#[test]
fn max_cell_load_tracks_n_sqrt_a() {
    // per-density constant c in max_load <= c n sqrt(a_p), averaged over seeds
    let ns = [500.0, 1000.0, 2000.0, 4000.0];
    let cs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let seeds = 50;
            let mut acc = 0.0;
            for seed in 0..seeds {
                let cfg = NetworkConfig { n, seed, primary_only: true, ..Default::default() };
                let dep = generate_deployment(&cfg).unwrap();
                let t = &dep.primary;
                let ends: Vec<_> = t.pairs.iter().map(|&(s, d)| (t.cell_of_node(s), t.cell_of_node(d))).collect();
                acc += count_paths(&ends, &t.grid).max_load() as f64 / (n * cfg.a_p().sqrt());
            }
            acc / seeds as f64
        })
        .collect();
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    for c in &cs {
        assert!((c - mean).abs() <= 0.5 * mean, "constants {cs:?}");
    }
}

#[test]
fn mean_path_length_is_order_one() {
    for n in [500.0, 1000.0, 2000.0, 4000.0] {
        let cfg = NetworkConfig { n, seed: 1, ..Default::default() };
        let dep = generate_deployment(&cfg).unwrap();
        for t in dep.tiers() {
            let hops: usize = t.pairs.iter().map(|&(s, d)| hop_count(t.cell_of_node(s), t.cell_of_node(d))).sum();
            let mean = hops as f64 / t.pairs.len() as f64 * t.grid.cell_side;
            assert!((0.5..=1.4).contains(&mean), "n={n} {:?}: {mean}", t.tier);
        }
    }
}
