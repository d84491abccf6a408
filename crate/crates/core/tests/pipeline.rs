//! End-to-end small-scale pipeline checks: simulate, train, closed-loop
//! predict, score.

use lsrc_core::{
    aggregate, default_initial_condition, normalized_error, predict_closed_loop, run_ensemble,
    simulate, train_all, valid_time, BarkleyParams, EnsembleConfig, HybridMode, PatchSpec,
    ReservoirSpec, RunSetup, TrainOptions,
};

fn params(nx: usize) -> BarkleyParams {
    BarkleyParams {
        nx,
        ny: nx,
        ..BarkleyParams::default()
    }
}

#[test]
fn perfect_model_oh_tracks_truth_in_closed_loop() {
    // With a perfect KBM in the readout, the trained grid should follow the
    // truth for the whole short horizon.
    let p = params(8);
    let init = default_initial_condition(8, 8, 42).unwrap();
    let traj = simulate(&p, &init, 700).unwrap();

    let ds = lsrc_core::build_local_dataset(
        &traj[..501],
        &p,
        HybridMode::OutputHybrid,
        PatchSpec::default(),
        0.0,
        1,
    )
    .unwrap();
    let spec = ReservoirSpec {
        r_dim: 40,
        kappa: 3,
        beta: 0.0,
        ..ReservoirSpec::default()
    };
    let grid = train_all(&ds, &spec, HybridMode::OutputHybrid, 50, TrainOptions::default()).unwrap();

    let sync = &traj[501..551];
    let horizon = 120;
    let pred = predict_closed_loop(&grid, sync, &p, horizon).unwrap();
    assert!(pred.kbm_calls > 0);

    let truth = &traj[551..551 + horizon];
    let err = normalized_error(truth, &pred.fields, p.dt).unwrap();
    let vt = valid_time(&err, 0.2).unwrap();
    assert!(
        vt.censored,
        "perfect-model OH should stay valid over the whole horizon; errors end at {:?}",
        err.values.last()
    );
}

#[test]
fn ensemble_pipeline_end_to_end_and_deterministic() {
    let cfg = EnsembleConfig {
        n_t: 2,
        n_p: 2,
        n_td: 5,
        n_ts: 20,
        n_tr: 150,
        n_pd: 0,
        n_ps: 20,
        n_pr: 40,
    };
    let p = params(8);
    let init = default_initial_condition(8, 8, 3).unwrap();
    let traj = simulate(&p, &init, cfg.required_steps()).unwrap();

    let setup = RunSetup {
        truth_params: p,
        model_error: 0.1,
        mode: HybridMode::FullHybrid,
        spec: ReservoirSpec {
            r_dim: 30,
            ..ReservoirSpec::default()
        },
        alpha: 1e-6,
        seed: 11,
        ..RunSetup::default()
    };
    let recs = run_ensemble(&traj, &setup, &cfg).unwrap();
    assert_eq!(recs.len(), 4);
    for r in &recs {
        assert!(r.failure.is_none(), "{:?}", r.failure);
        assert!(r.contribution.is_some());
    }
    let rows = aggregate(&recs).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].n_records, 4);
    assert!(rows[0].vt_median >= 0.0);

    let again = run_ensemble(&traj, &setup, &cfg).unwrap();
    for (a, b) in recs.iter().zip(&again) {
        assert_eq!(a.valid_time, b.valid_time);
    }
}
