mod support;

use overlay_core::analysis::{
    chernoff_tail, fit_loglog, occupancy_union_bound, total_count_bound, validate_occupancy, verify_tradeoff, Metric, Predictor,
};
use proptest::prelude::*;
use support::exact_tail;

#[test]
fn chernoff_dominates_exact_tail() {
    let mut mu = 0.25;
    while mu <= 50.0 {
        for x in 1..=100u32 {
            if (x as f64 - mu).abs() < 1e-12 {
                assert_eq!(chernoff_tail(mu, x as f64).unwrap(), 1.0);
                continue;
            }
            let b = chernoff_tail(mu, x as f64).unwrap();
            let e = exact_tail(mu, x);
            assert!(b >= e * (1.0 - 1e-12), "mu={mu} x={x}: bound {b} < exact {e}");
        }
        mu += 0.25;
    }
}

#[test]
fn chernoff_examples() {
    let n = 40.0;
    let b = chernoff_tail(n, std::f64::consts::E * n).unwrap();
    assert!(((b.ln()) - (-n)).abs() < 1e-9);
    assert!(chernoff_tail(0.0, 1.0).is_err());
    assert!(chernoff_tail(1.0, 0.0).is_err());
}

#[test]
fn occupancy_frequencies_respect_bounds() {
    let r = validate_occupancy(2000.0, 1.0, 200, 9).unwrap();
    assert_eq!(r.events.len(), 3);
    for e in &r.events {
        assert!(e.within, "{e:?}");
    }
    assert!(validate_occupancy(2000.0, 1.0, 50, 9).is_err());
    assert!(occupancy_union_bound(1e4, 1.0) > 0.0);
    assert!(total_count_bound(100.0) < 1e-6);
}

#[test]
fn occupancy_is_deterministic() {
    let a = validate_occupancy(800.0, 1.0, 100, 4).unwrap();
    let b = validate_occupancy(800.0, 1.0, 100, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn planted_exponents_are_recovered() {
    let ns = [500.0, 1000.0, 2000.0, 4000.0];
    for (pred, slope) in [(Predictor::NLnN, -0.5), (Predictor::SqrtNOverLnN, 1.0), (Predictor::MLnM, -0.5)] {
        let xs: Vec<f64> = ns.iter().map(|&n: &f64| pred.eval(n, n.powf(1.5))).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.7 * x.powf(slope)).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - slope).abs() < 1e-9);
        assert!((f.intercept - 3.7f64.ln()).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }
    assert!(fit_loglog(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    let f = fit_loglog(&[1.0, 2.0, 4.0, 8.0], &[1.0, 0.0, 4.0, 8.0]).unwrap();
    assert_eq!((f.points, f.excluded), (3, 1));
}

#[test]
fn tradeoff_examples() {
    let single = verify_tradeoff(&[(1000.0, 10.0, 0.01)]);
    assert_eq!(single.spread, 1.0);
    assert!(single.insufficient);
    let pts: Vec<(f64, f64, f64)> = [500.0f64, 1000.0, 2000.0].iter().map(|&n| (n, 2.0 * n * 0.001, 0.001)).collect();
    let r = verify_tradeoff(&pts);
    assert!((r.spread - 1.0).abs() < 1e-12);
    assert!(!r.insufficient);
}

#[test]
fn metric_names_parse() {
    for m in Metric::ALL {
        assert_eq!(m.name().parse::<Metric>().unwrap(), m);
    }
    assert!("nope".parse::<Metric>().is_err());
}

proptest! {
    #[test]
    fn fit_recovers_noise_free_slope(slope in -2.0f64..2.0, c in 0.1f64..10.0) {
        let xs = [10.0f64, 30.0, 100.0, 300.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(slope)).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-9);
    }
}
