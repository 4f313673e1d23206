mod common;

use common::*;
use evsurf::classifier::{accuracy, train, train_with_history};
use evsurf::cwts::cwts_run;
use evsurf::events::{quantize_timestamps, synthetic_suite, MotionSpec};
use evsurf::hats::{batch_features, batch_features_seq, compute_hats_windows};
use evsurf::{
    compute_hats, CellGrid, CwtsState, Event, EventStream, FeatureLayout, GridParams,
    HatsRepresentation, Kernel, MemoryMode, ModelFingerprint, SensorGeometry, SvmModel,
    TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trained(params: &GridParams, seed: u64) -> (SvmModel, Vec<EventStream>) {
    let g = SensorGeometry::ncars();
    let specs = [MotionSpec::rightward(), MotionSpec::leftward()];
    let train_set = synthetic_suite(&specs, 20, g, 100_000, seed).unwrap();
    let feats = batch_features(&train_set, params).unwrap();
    let data: Vec<_> = feats
        .into_iter()
        .zip(&train_set)
        .map(|(f, s)| (f, s.label.unwrap()))
        .collect();
    let model = train(&data, &TrainConfig::default(), ModelFingerprint::new(g, params)).unwrap();
    let eval = synthetic_suite(&specs, 10, g, 100_000, seed + 1).unwrap();
    (model, eval)
}

#[test]
fn surfaces_ignore_interleaving_of_other_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = SensorGeometry::new(60, 40).unwrap();
    let params = GridParams {
        cell_size: 10,
        rho: 3,
        tau_us: 20_000.0,
        ..GridParams::default()
    };
    let s = random_stream(&mut rng, g, 800);
    let (s, _) = s.crop_to_cells(10);
    let mut in_order = CellGrid::new(g, params.clone()).unwrap();
    let mut surfaces = Vec::new();
    for e in s.events() {
        surfaces.push(in_order.compute_time_surface(e).unwrap());
        in_order.update_memory(e).unwrap();
    }
    // replay cell by cell, last cell first, keeping each cell's own order
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(in_order.cell_of(s.events()[i].x, s.events()[i].y).unwrap()));
    let mut by_cell = CellGrid::new(g, params).unwrap();
    for i in order {
        let e = &s.events()[i];
        assert_eq!(by_cell.compute_time_surface(e).unwrap(), surfaces[i]);
        by_cell.update_memory(e).unwrap();
    }
}

#[test]
fn hats_ignore_tie_order_across_cells() {
    let g = SensorGeometry::new(40, 40).unwrap();
    let params = GridParams {
        tau_us: 50_000.0,
        ..GridParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // batches of simultaneous events, each in a distinct cell
    let mut a = Vec::new();
    let mut b = Vec::new();
    for step in 0..200u64 {
        let mut batch: Vec<Event> = (0..4)
            .map(|c| {
                let (ox, oy) = ((c % 4) * 10, (c / 4) * 10);
                let e = random_stream(&mut rng, SensorGeometry::new(10, 10).unwrap(), 1).events()[0];
                Event::new(ox + e.x, oy + e.y, step * 100, e.p)
            })
            .collect();
        a.extend(batch.iter().copied());
        batch.reverse();
        b.extend(batch);
    }
    let ha = compute_hats(&EventStream::new(g, a).unwrap(), &params).unwrap();
    let hb = compute_hats(&EventStream::new(g, b).unwrap(), &params).unwrap();
    assert_eq!(ha, hb);
}

#[test]
fn kernels_are_flat_at_default_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = SensorGeometry::ncars();
    let lin = GridParams::streaming();
    let exp = GridParams::default();
    let count = GridParams {
        tau_us: f64::INFINITY,
        ..GridParams::streaming()
    };
    for _ in 0..5 {
        let s = random_stream(&mut rng, g, 2_000);
        let s = quantize_timestamps(&s, 1).unwrap();
        let (hl, he) = (compute_hats(&s, &lin).unwrap(), compute_hats(&s, &exp).unwrap());
        let hc = oracle_windows(&s, &count);
        let hc = HatsRepresentation::mean(
            &hc.into_iter()
                .map(|v| HatsRepresentation::unflatten(*hl.layout(), v).unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(max_rel_err(hl.as_slice(), he.as_slice(), f64::MIN_POSITIVE) < 1e-4);
        assert!(max_rel_err(hl.as_slice(), hc.as_slice(), f64::MIN_POSITIVE) < 1e-4);
        assert!(max_rel_err(he.as_slice(), hc.as_slice(), f64::MIN_POSITIVE) < 1e-4);
    }
}

#[test]
fn coarse_timestamps_barely_move_features() {
    let params = GridParams::default();
    let g = SensorGeometry::ncars();
    let suite = synthetic_suite(&[MotionSpec::downward()], 5, g, 100_000, 21).unwrap();
    for s in &suite {
        let h = compute_hats(s, &params).unwrap();
        let q = compute_hats(&quantize_timestamps(s, 10).unwrap(), &params).unwrap();
        for (a, b) in q.as_slice().iter().zip(h.as_slice()) {
            if *b != 0.0 {
                assert!((a - b).abs() / b.abs() < 1e-3);
            }
        }
    }
}

#[test]
fn rescaling_the_model_keeps_decisions() {
    let params = GridParams::streaming();
    let (model, eval) = trained(&params, 30);
    for factor in [1e-3, 0.5, 7.0, 1e4] {
        let scaled = model.rescaled(factor).unwrap();
        for s in &eval {
            let a = cwts_run(s, &model, &params).unwrap();
            let b = cwts_run(s, &scaled, &params).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.decision, y.decision);
            }
        }
    }
}

#[test]
fn streaming_and_batch_decisions_agree() {
    let params = GridParams::streaming();
    let (model, eval) = trained(&params, 40);
    for s in &eval {
        let streamed = cwts_run(s, &model, &params).unwrap();
        let batch = compute_hats_windows(s, &params).unwrap();
        assert_eq!(streamed.len(), batch.len());
        for (a, h) in streamed.iter().zip(&batch) {
            let p = model.predict(h.as_slice()).unwrap();
            assert_eq!(a.decision, p.decision);
        }
    }
}

#[test]
fn state_footprint_does_not_grow_with_representation() {
    let g = SensorGeometry::ncars();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s = random_stream(&mut rng, g, 1_500);
    let mut sizes = Vec::new();
    for rho in [1u16, 3, 6] {
        let params = GridParams {
            rho,
            delta_t_us: 1_000_000,
            kernel: Kernel::LinearDecay,
            ..GridParams::default()
        };
        let layout = FeatureLayout::new(g, &params);
        let fp = ModelFingerprint::new(g, &params);
        let model = SvmModel::new(vec![vec![0.0; layout.len()]; 2], vec![0.0; 2], fp).unwrap();
        let start = s.events()[0].t / 1_000_000 * 1_000_000;
        let mut st = CwtsState::new(g, &params, &model, start).unwrap();
        for e in s.events().iter().filter(|e| e.t < start + 1_000_000) {
            st.step(e).unwrap();
        }
        let live = st.grid().live_events();
        assert_eq!(st.footprint(), layout.num_cells() * 2 + layout.num_cells() + live);
        sizes.push((st.footprint(), layout.len()));
    }
    assert!(sizes.windows(2).all(|w| w[0].0 == w[1].0 && w[0].1 < w[1].1));
}

#[test]
fn training_objective_settles() {
    let params = GridParams::streaming();
    let g = SensorGeometry::ncars();
    let specs = [MotionSpec::rightward(), MotionSpec::leftward(), MotionSpec::upward()];
    let set = synthetic_suite(&specs, 15, g, 100_000, 50).unwrap();
    let data: Vec<_> = batch_features(&set, &params)
        .unwrap()
        .into_iter()
        .zip(&set)
        .map(|(f, s)| (f, s.label.unwrap()))
        .collect();
    let out = train_with_history(&data, &TrainConfig::default(), ModelFingerprint::new(g, &params))
        .unwrap();
    let obj = &out.epoch_objective;
    assert_eq!(obj.len(), TrainConfig::default().epochs);
    for w in obj.windows(2) {
        assert!(w[1] <= 1.05 * w[0], "{obj:?}");
    }
    assert!(accuracy(&out.model, &data).unwrap() >= 0.95);
}

#[test]
fn pipeline_is_deterministic() {
    let params = GridParams::streaming();
    let (a, eval_a) = trained(&params, 60);
    let (b, eval_b) = trained(&params, 60);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(eval_a.len(), eval_b.len());
    for (x, y) in eval_a.iter().zip(&eval_b) {
        assert_eq!(x.events(), y.events());
    }
    assert_eq!(
        batch_features(&eval_a, &params).unwrap(),
        batch_features_seq(&eval_a, &params).unwrap()
    );
}

#[test]
fn sliding_memory_of_active_cell_is_bounded_by_the_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let g = SensorGeometry::new(30, 30).unwrap();
    let params = GridParams {
        delta_t_us: 5_000,
        memory_mode: MemoryMode::Sliding,
        ..GridParams::default()
    };
    let s = random_stream(&mut rng, g, 1_000);
    let mut grid = CellGrid::new(g, params).unwrap();
    for e in s.events() {
        grid.update_memory(e).unwrap();
        let cell = grid.cell_of(e.x, e.y).unwrap();
        for p in [evsurf::Polarity::On, evsurf::Polarity::Off] {
            assert!(grid.memory(cell, p).iter().all(|m| m.t + 5_000 >= e.t));
        }
    }
}

proptest! {
    #[test]
    fn flatten_round_trip(seed in any::<u64>(), k in 2u16..12, w in 20u16..80, h in 20u16..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = SensorGeometry::new(w, h).unwrap();
        let params = GridParams { cell_size: k, rho: rng.gen_range(1..k), ..GridParams::default() };
        let layout = FeatureLayout::new(g, &params);
        let v: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let rep = HatsRepresentation::unflatten(layout, v.clone()).unwrap();
        prop_assert_eq!(rep.flatten(), v);
        let back = HatsRepresentation::from_bytes(&rep.to_bytes()).unwrap();
        prop_assert_eq!(back, rep);
    }

    #[test]
    fn model_file_round_trip(seed in any::<u64>(), k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = SensorGeometry::new(30, 20).unwrap();
        let params = GridParams::streaming();
        let fp = ModelFingerprint::new(g, &params);
        let dim = fp.layout().len();
        let w = (0..k).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = SvmModel::new(w, b, fp).unwrap().with_time_scale_exp(rng.gen_range(-5..30));
        prop_assert_eq!(SvmModel::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}
