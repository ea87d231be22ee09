//! Brute-force check of the dip against its definition: the smallest sup
//! distance between the empirical CDF and a unimodal CDF.

use dscpmd::descriptors::dip_statistic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::lp_dip;

#[test]
fn two_points_match_definition() {
    assert!((lp_dip(&[0.0, 1.0]) - 0.25).abs() < 1e-9);
    assert_eq!(dip_statistic(&[0.0, 1.0]), 0.25);
}

#[test]
fn matches_lp_oracle_on_small_distinct_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for trial in 0..2000 {
        let n = 2 + trial % 7;
        let mut x: Vec<f64> = (0..n)
            .map(|_| match trial % 3 {
                0 => rng.random::<f64>(),
                1 => rng.random::<f64>().powi(3) * 10.0,
                _ => (rng.random::<f64>() * 2.0 - 1.0).signum() * 5.0 + rng.random::<f64>(),
            })
            .collect();
        x.sort_by(f64::total_cmp);
        x.dedup();
        if x.len() < 2 {
            continue;
        }
        let d = dip_statistic(&x);
        let oracle = lp_dip(&x);
        worst = worst.max((d - oracle).abs());
        assert!((d - oracle).abs() < 1e-7, "x={x:?} dip={d} oracle={oracle}");
    }
    println!("max |dip - oracle| = {worst:e}");
}

#[test]
fn bounds_hold_on_fuzzed_samples_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..10_000 {
        let n = 1 + trial % 40;
        let mut x: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 6.0).floor()).collect();
        x.sort_by(f64::total_cmp);
        let d = dip_statistic(&x);
        let lo = 1.0 / (2.0 * n as f64);
        assert!(d >= lo - 1e-15, "{x:?} {d}");
        if n >= 2 {
            assert!(d <= 0.25 + 1e-15, "{x:?} {d}");
        }
    }
}

#[test]
fn tied_samples_match_oracle_above_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for trial in 0..3000 {
        let n = 1 + trial % 8;
        let mut x: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 4.0).floor()).collect();
        x.sort_by(f64::total_cmp);
        let d = dip_statistic(&x);
        let oracle = lp_dip(&x).max(1.0 / (2.0 * n as f64));
        worst = worst.max((d - oracle).abs());
        assert!((d - oracle).abs() < 1e-7, "x={x:?} dip={d} oracle={oracle}");
    }
    println!("max |dip - oracle| with ties = {worst:e}");
}
