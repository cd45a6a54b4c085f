mod common;

use hydrodeep::datapipe::{prepare, prepare_with_scaler, PipelineConfig};
use hydrodeep::metrics;
use hydrodeep::synth::routing_delays;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn noise_free_discharge_is_linear_in_delayed_runoff() {
    let w = common::watershed(8, 800, 21, 0.0);
    let l = w.grid.len();
    let max_delay = (w.spec.delay_per_km * w.spec.dist_max_km).round() as usize;
    let cols = l * (max_delay + 1);
    let rows: Vec<usize> = (max_delay..w.series.len()).collect();
    let x = DMatrix::from_fn(rows.len(), cols, |r, c| {
        let (i, d) = (c / (max_delay + 1), c % (max_delay + 1));
        w.series.runoff[rows[r] - d][i]
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&t| w.series.discharge[t]));
    let coef = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let fit = &x * &coef;
    let nse = metrics::nse(y.as_slice(), fit.as_slice()).unwrap();
    assert!(nse > 0.99, "{nse}");

    // the fit recovers the routing: one unit coefficient per grid at its delay
    let delays = routing_delays(&w.grid.distances_km, w.spec.delay_per_km);
    for i in 0..l {
        for d in 0..=max_delay {
            let want = if d == delays[i] { w.spec.area_scale } else { 0.0 };
            assert!((coef[i * (max_delay + 1) + d] - want).abs() < 1e-6, "grid {i} delay {d}");
        }
    }
}

#[test]
fn grid_count_29_gives_lag_by_59_windows() {
    let w = common::watershed(29, 300, 1, 0.1);
    let prep = common::prepared(&w, 7);
    assert_eq!(prep.all.input1_shape(), (7, 59));
    assert_eq!(prep.all.input2_width(), 58);
    assert_eq!(prep.all.len(), 293);
    assert_eq!(prep.train.len() + prep.val.len() + prep.test.len(), 293);
}

#[test]
fn scaler_sees_only_the_training_block() {
    let w = common::watershed(3, 400, 2, 0.1);
    let mut spiked = w.series.clone();
    let last = spiked.len() - 1;
    spiked.discharge[last] *= 50.0;
    spiked.precip[last][0] += 500.0;
    let cfg = PipelineConfig::default();
    let a = prepare(&w.grid, &w.series, &cfg).unwrap();
    let b = prepare(&w.grid, &spiked, &cfg).unwrap();
    assert_eq!(a.scaler, b.scaler);
    assert_eq!(a.train, b.train);
    assert_ne!(a.test, b.test);

    let again = prepare_with_scaler(&w.grid, &w.series, &cfg, &a.scaler).unwrap();
    assert_eq!(again.all, a.all);
}

#[test]
fn grid_and_series_must_agree() {
    let a = common::watershed(3, 100, 2, 0.1);
    let b = common::watershed(4, 100, 2, 0.1);
    assert!(prepare(&b.grid, &a.series, &PipelineConfig::default()).is_err());
}

#[test]
fn window_targets_are_the_scaled_discharge() {
    let w = common::watershed(4, 200, 5, 0.1);
    let prep = common::prepared(&w, 5);
    let physical = prep.scaler.inverse_transform_discharge(&prep.all.target);
    for (n, v) in physical.iter().enumerate() {
        let t = prep.all.day_index[n];
        assert_eq!(t, n + 5);
        assert!((v - w.series.discharge[t]).abs() <= 1e-9 * w.series.discharge[t].abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sample_count_is_days_minus_lag(days in 20usize..120, lag in 1usize..10, grids in 1usize..5, seed in 0u64..1000) {
        let w = common::watershed(grids, days, seed, 0.1);
        let prep = common::prepared(&w, lag);
        prop_assert_eq!(prep.all.len(), days - lag);
        prop_assert_eq!(prep.all.input1_shape(), (lag, 2 * grids + 1));
    }
}
