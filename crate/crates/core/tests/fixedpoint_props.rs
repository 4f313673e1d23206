use evsurf::classifier::train;
use evsurf::cwts::cwts_run;
use evsurf::events::{synthetic_suite, MotionSpec};
use evsurf::fixedpoint::{aae_sweep, fx_add, fx_from_real, fx_mul, write_aae_csv};
use evsurf::hats::batch_features;
use evsurf::{
    cwts_run_fixed, FixedPointFormat, FixedPointValue, GridParams, ModelFingerprint,
    SensorGeometry, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn format_strategy() -> impl Strategy<Value = FixedPointFormat> {
    (2u8..=32).prop_flat_map(|t| (Just(t), 1..=t)).prop_map(|(t, i)| FixedPointFormat::new(t, i).unwrap())
}

fn in_range(f: FixedPointFormat, x: f64) -> bool {
    let lim = f.max_raw() as f64 * f.ulp();
    x.abs() < lim
}

proptest! {
    #[test]
    fn quantization_is_within_half_ulp(f in format_strategy(), u in -1.0f64..1.0) {
        let x = u * f.max_raw() as f64 * f.ulp();
        let (v, sat) = FixedPointValue::from_real_checked(x, f);
        prop_assert!(!sat);
        prop_assert!((v.to_real() - x).abs() <= f.ulp() / 2.0);
    }

    #[test]
    fn saturation_pins_to_bounds(f in format_strategy(), m in 1.01f64..1e6) {
        let big = m * f.max_raw() as f64 * f.ulp() + f.ulp();
        prop_assert_eq!(fx_from_real(big, f).raw(), f.max_raw());
        prop_assert_eq!(fx_from_real(-big - f.ulp(), f).raw(), f.min_raw());
    }

    #[test]
    fn ops_are_within_one_ulp(f in format_strategy(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let scale = f.max_raw() as f64 * f.ulp();
        let x = fx_from_real(a * scale.sqrt().min(scale), f);
        let y = fx_from_real(b * scale.sqrt().min(scale), f);
        let sum = x.to_real() + y.to_real();
        if in_range(f, sum) {
            prop_assert!((fx_add(x, y).to_real() - sum).abs() <= f.ulp());
        }
        let prod = x.to_real() * y.to_real();
        if in_range(f, prod) {
            prop_assert!((fx_mul(x, y).to_real() - prod).abs() <= f.ulp());
        }
    }
}

#[test]
fn ten_thousand_pairs_in_24_12() {
    let f = FixedPointFormat::new(24, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let a = fx_from_real(rng.gen_range(-40.0..40.0), f);
        let b = fx_from_real(rng.gen_range(-40.0..40.0), f);
        let (p, sat) = a.mul_checked(b);
        assert!(!sat);
        assert!((p.to_real() - a.to_real() * b.to_real()).abs() <= f.ulp());
        let (s, sat) = a.add_checked(b);
        assert!(!sat);
        assert!((s.to_real() - (a.to_real() + b.to_real())).abs() <= f.ulp());
    }
}

#[test]
fn wide_format_tracks_full_precision() {
    let g = SensorGeometry::ncars();
    let params = GridParams::streaming();
    let specs = [MotionSpec::rightward(), MotionSpec::leftward()];
    let set = synthetic_suite(&specs, 15, g, 100_000, 80).unwrap();
    let data: Vec<_> = batch_features(&set, &params)
        .unwrap()
        .into_iter()
        .zip(&set)
        .map(|(f, s)| (f, s.label.unwrap()))
        .collect();
    let model = train(&data, &TrainConfig::default(), ModelFingerprint::new(g, &params)).unwrap();
    let eval = synthetic_suite(&specs, 10, g, 100_000, 81).unwrap();
    let wide = FixedPointFormat::new(32, 16).unwrap();
    for s in &eval {
        let exact = cwts_run(s, &model, &params).unwrap();
        let fixed = cwts_run_fixed(s, &model, &params, wide).unwrap();
        assert_eq!(fixed.saturations, 0);
        for (a, b) in exact.iter().zip(&fixed.windows) {
            for (x, y) in a.scores.iter().zip(&b.scores) {
                assert!((x - y).abs() <= 1e-3 * x.abs());
            }
        }
        let again = cwts_run_fixed(s, &model, &params, wide).unwrap();
        assert_eq!(again.raw_scores, fixed.raw_scores);
    }
    let narrow = FixedPointFormat::new(19, 12).unwrap();
    let base = FixedPointFormat::new(24, 12).unwrap();
    let rep = aae_sweep(&eval, &model, &params, &[narrow, wide, base]).unwrap();
    let bits: Vec<u8> = rep.iter().map(|r| r.format.total_bits()).collect();
    assert_eq!(bits, [32, 24, 19]);
    assert!(rep[0].aae_percent < rep[1].aae_percent);
    assert!(rep[1].aae_percent < rep[2].aae_percent);
    let mut csv = Vec::new();
    write_aae_csv(&mut csv, &rep).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "total_bits,integer_bits,aae_percent,max_abs_err,saturation_count");
    assert!(text.lines().nth(1).unwrap().starts_with("32,16,"));
}
