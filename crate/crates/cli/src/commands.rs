//! Batch subcommand implementations. Every CSV artifact starts with a
//! `# config=<sha256>` provenance line; reruns with an unchanged config are
//! byte-identical (timing tables exempted).

use anyhow::{bail, Context, Result};
use lsrc_core::{
    aggregate, default_initial_condition, error_field, normalized_error, partition_sections,
    predict_closed_loop, run_ensemble, run_sweep, run_wout_study, simulate, train_all,
    valid_time, FieldPair, HybridMode, PredictError, SweepConfig, SweepParameter,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::pgm::write_pgm;
use crate::trajfile::{read_trajectory, write_trajectory};

pub fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.out_dir)
}

pub fn trajectory_path(cfg: &RunConfig) -> PathBuf {
    out_dir(cfg).join("trajectory.bkrc")
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = out_dir(cfg);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_csv(path: &Path, cfg: &RunConfig, header: &str, rows: &[String]) -> Result<()> {
    let mut body = format!("# config={}\n{header}\n", cfg.hash());
    for row in rows {
        body.push_str(row);
        body.push('\n');
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Simulates the ground-truth trajectory and stores it under the output
/// directory. The step count covers the full sectioned layout of the config.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_out_dir(cfg)?;
    let p = cfg.barkley();
    let init = default_initial_condition(p.nx, p.ny, cfg.sim_init_seed)?;
    let states = simulate(&p, &init, cfg.required_steps())?;
    let path = trajectory_path(cfg);
    let header = write_trajectory(&path, &states, p.dt, cfg.hash_bytes())?;

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut mean_var = 0.0;
    for s in &states {
        for &v in s.u.as_slice() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        mean_var += s.u.variance();
    }
    mean_var /= states.len() as f64;
    println!(
        "wrote {} ({} states, {}x{}, payload {} bytes)",
        path.display(),
        header.n_steps,
        header.nx,
        header.ny,
        header.payload_bytes()
    );
    println!(
        "U range [{lo:.6}, {hi:.6}], mean spatial variance {mean_var:.6}"
    );
    Ok(path)
}

/// Reads the stored trajectory if it matches the config's geometry and is long
/// enough; otherwise simulates on demand (without persisting).
pub fn load_or_simulate(cfg: &RunConfig) -> Result<Vec<FieldPair>> {
    let need = cfg.required_steps() + 1;
    let path = trajectory_path(cfg);
    if path.exists() {
        let (header, states) = read_trajectory(&path)?;
        if header.nx as usize == cfg.sim_nx
            && header.ny as usize == cfg.sim_ny
            && header.dt == cfg.sim_dt
            && states.len() >= need
        {
            return Ok(states);
        }
        eprintln!(
            "stored trajectory {} does not fit this config; re-simulating",
            path.display()
        );
    }
    let p = cfg.barkley();
    let init = default_initial_condition(p.nx, p.ny, cfg.sim_init_seed)?;
    Ok(simulate(&p, &init, cfg.required_steps())?)
}

fn error_header(cfg: &RunConfig) -> String {
    let mut h = String::from("step,time,error");
    if cfg.lyapunov_max.is_some() {
        h.push_str(",lyapunov_time");
    }
    h
}

fn lyap_cell(cfg: &RunConfig, time: f64) -> String {
    match cfg.lyapunov_max {
        Some(l) => format!(",{}", time * l),
        None => String::new(),
    }
}

/// One training and one closed-loop prediction on the first section of the
/// layout: e(t) series, valid time, and optional heatmap snapshots.
pub fn cmd_run(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let dir = ensure_out_dir(cfg)?;
    let truth = load_or_simulate(cfg)?;
    let setup = cfg.setup()?;
    let single = lsrc_core::EnsembleConfig {
        n_t: 1,
        n_p: 1,
        ..cfg.ensemble()
    };
    let section = partition_sections(cfg.required_steps(), &single)?
        .into_iter()
        .next()
        .expect("n_t = 1 yields one section");

    let kbm_params = setup.kbm_params()?;
    let slice = &truth[section.train.sync.start..section.train.work.end + 1];
    let dataset = lsrc_core::build_local_dataset(
        slice,
        &kbm_params,
        setup.mode,
        setup.patch,
        setup.alpha,
        setup.seed,
    )?;
    let grid = train_all(&dataset, &setup.spec, setup.mode, single.n_ts, setup.opts)?;

    let psec = &section.predictions[0];
    let sync = &truth[psec.sync.start..psec.sync.end];
    let pred = match predict_closed_loop(&grid, sync, &kbm_params, single.n_pr) {
        Ok(p) => p,
        Err(PredictError::BlowUp { step, .. }) => {
            bail!("prediction blew up at step {step}")
        }
        Err(PredictError::Core(e)) => return Err(e.into()),
    };
    println!("mode {} | kbm calls during prediction: {}", cfg.mode, pred.kbm_calls);

    let target = &truth[psec.work.start..psec.work.end];
    let err = normalized_error(target, &pred.fields, cfg.sim_dt)?;
    let vt = valid_time(&err, cfg.e_max)?;

    let rows: Vec<String> = err
        .values
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let t = (i + 1) as f64 * cfg.sim_dt;
            format!("{},{},{}{}", i + 1, t, e, lyap_cell(cfg, t))
        })
        .collect();
    write_csv(&dir.join("run_error.csv"), cfg, &error_header(cfg), &rows)?;

    let mut sh = String::from("mode,r_dim,model_error,valid_time,censored,kbm_calls");
    if cfg.lyapunov_max.is_some() {
        sh.push_str(",valid_time_lyapunov");
    }
    let summary = format!(
        "{},{},{},{},{},{}{}",
        cfg.mode,
        cfg.res_dim,
        cfg.model_error,
        vt.time,
        vt.censored,
        pred.kbm_calls,
        lyap_cell(cfg, vt.time)
    );
    write_csv(&dir.join("run_summary.csv"), cfg, &sh, &[summary])?;
    println!(
        "valid time {}{}",
        vt.time,
        if vt.censored { " (censored at horizon)" } else { "" }
    );

    for &step in &cfg.snapshot_steps {
        if step >= pred.fields.len() {
            eprintln!("snapshot step {step} beyond horizon {}; skipped", pred.fields.len());
            continue;
        }
        let truth_s = &target[step];
        let pred_s = &pred.fields[step];
        let (du, dv) = error_field(truth_s, pred_s)?;
        let (lo, hi) = (cfg.heatmap_lo, cfg.heatmap_hi);
        for (tag, f) in [
            ("truth_u", &truth_s.u),
            ("truth_v", &truth_s.v),
            ("pred_u", &pred_s.u),
            ("pred_v", &pred_s.v),
            ("diff_u", &du),
            ("diff_v", &dv),
        ] {
            write_pgm(&dir.join(format!("run_{tag}_{step:05}.pgm")), f, lo, hi)?;
        }
    }
    Ok(())
}

fn mode_grid(cfg: &RunConfig) -> Result<Vec<HybridMode>> {
    match &cfg.modes {
        Some(names) => names.iter().map(|n| Ok(HybridMode::parse(n)?)).collect(),
        None => Ok(vec![cfg.hybrid_mode()?]),
    }
}

/// Full sectioned ensemble over a (mode, r_dim, model_error) grid: one record
/// CSV with every prediction, one summary CSV with the aggregates, one timing
/// CSV (the only artifact allowed to differ between reruns).
pub fn cmd_ensemble(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let dir = ensure_out_dir(cfg)?;
    let truth = load_or_simulate(cfg)?;
    let base = cfg.setup()?;
    let ens = cfg.ensemble();
    let modes = mode_grid(cfg)?;
    let r_dims = cfg.r_dims.clone().unwrap_or_else(|| vec![cfg.res_dim]);
    let errors = cfg.model_errors.clone().unwrap_or_else(|| vec![cfg.model_error]);

    let mut records = Vec::new();
    for &mode in &modes {
        for &r_dim in &r_dims {
            for &e in &errors {
                let mut setup = base;
                setup.mode = mode;
                setup.spec.r_dim = r_dim;
                setup.model_error = e;
                records.extend(run_ensemble(&truth, &setup, &ens)?);
            }
        }
    }

    let rec_header = format!(
        "mode,r_dim,model_error,training_index,prediction_index,seed,\
         valid_time,censored{},contrib_u_reservoir,contrib_v_reservoir,failure",
        if cfg.lyapunov_max.is_some() { ",valid_time_lyapunov" } else { "" }
    );
    let rec_rows: Vec<String> = records
        .iter()
        .map(|r| {
            let (vt, cens, lyap) = match r.valid_time {
                Some(v) => (
                    v.time.to_string(),
                    v.censored.to_string(),
                    lyap_cell(cfg, v.time),
                ),
                None => (String::new(), String::new(), lyap_cell(cfg, f64::NAN)),
            };
            let lyap = if cfg.lyapunov_max.is_some() {
                if r.valid_time.is_some() { lyap } else { ",".into() }
            } else {
                String::new()
            };
            format!(
                "{},{},{},{},{},{},{},{}{},{},{},{}",
                r.mode.as_str(),
                r.r_dim,
                r.model_error,
                r.training_index,
                r.prediction_index,
                r.seed,
                vt,
                cens,
                lyap,
                fmt_opt(&r.contribution.and_then(|c| c.u).map(|s| s.reservoir)),
                fmt_opt(&r.contribution.and_then(|c| c.v).map(|s| s.reservoir)),
                r.failure.as_deref().map(quote).unwrap_or_default(),
            )
        })
        .collect();
    write_csv(&dir.join("ensemble_records.csv"), cfg, &rec_header, &rec_rows)?;

    let summary = aggregate(&records)?;
    let sum_header = "mode,r_dim,model_error,n_records,n_failed,n_censored,\
                      vt_median,vt_q1,vt_q3,median_censored,\
                      contrib_u_reservoir_median,contrib_v_reservoir_median";
    let sum_rows: Vec<String> = summary
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.mode.as_str(),
                s.r_dim,
                s.model_error,
                s.n_records,
                s.n_failed,
                s.n_censored,
                s.vt_median,
                s.vt_q1,
                s.vt_q3,
                s.median_censored,
                fmt_opt(&s.contrib_u_reservoir_median),
                fmt_opt(&s.contrib_v_reservoir_median),
            )
        })
        .collect();
    write_csv(&dir.join("ensemble_summary.csv"), cfg, sum_header, &sum_rows)?;

    let timing_header = "mode,r_dim,model_error,train_secs_median,predict_secs_median";
    let timing_rows: Vec<String> = summary
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{}",
                s.mode.as_str(),
                s.r_dim,
                s.model_error,
                s.train_secs_median,
                s.predict_secs_median
            )
        })
        .collect();
    write_csv(&dir.join("ensemble_timing.csv"), cfg, timing_header, &timing_rows)?;

    for s in &summary {
        println!(
            "{} r_dim={} e={}: median valid time {}{} ({} records, {} failed)",
            s.mode.as_str(),
            s.r_dim,
            s.model_error,
            s.vt_median,
            if s.median_censored { " (censored)" } else { "" },
            s.n_records,
            s.n_failed
        );
    }
    Ok(())
}

/// Hyperparameter sweep: one training and prediction per examined value, all
/// remaining parameters pinned to the reference sweep's starting values.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let dir = ensure_out_dir(cfg)?;
    let Some(name) = cfg.sweep_parameter.as_deref() else {
        bail!("sweep requires the config key sweep_parameter (r_dim|rho|sigma|alpha|beta)");
    };
    let parameter = SweepParameter::parse(name)?;
    let values = match &cfg.sweep_values {
        Some(v) if !v.is_empty() => v.clone(),
        _ => parameter.reference_values(),
    };
    let truth = load_or_simulate(cfg)?;
    let mut base = cfg.setup()?;
    lsrc_core::experiment::apply_sweep_initial_values(&mut base);
    let rows = run_sweep(&truth, &base, &SweepConfig { parameter }, &values, &cfg.ensemble())?;

    let header = format!(
        "parameter,value,valid_time,censored{},failure",
        if cfg.lyapunov_max.is_some() { ",valid_time_lyapunov" } else { "" }
    );
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            let (vt, cens, lyap) = match r.valid_time {
                Some(v) => (v.time.to_string(), v.censored.to_string(), lyap_cell(cfg, v.time)),
                None => (
                    String::new(),
                    String::new(),
                    if cfg.lyapunov_max.is_some() { ",".into() } else { String::new() },
                ),
            };
            format!(
                "{},{},{},{}{},{}",
                r.parameter.as_str(),
                r.value,
                vt,
                cens,
                lyap,
                r.failure.as_deref().map(quote).unwrap_or_default()
            )
        })
        .collect();
    write_csv(&dir.join("sweep.csv"), cfg, &header, &csv_rows)?;
    for r in &rows {
        println!(
            "{}={}: valid time {}",
            r.parameter.as_str(),
            r.value,
            fmt_opt(&r.valid_time.map(|v| v.time))
        );
    }
    Ok(())
}

/// Readout-contribution study over the configured model-error grid.
pub fn cmd_wout(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let dir = ensure_out_dir(cfg)?;
    let truth = load_or_simulate(cfg)?;
    let base = cfg.setup()?;
    let rows = run_wout_study(&truth, &base, &cfg.wout_errors, cfg.wout_n_a, &cfg.ensemble())?;

    let header = "model_error,n_samples,u_reservoir_median,u_kbm_median,\
                  v_reservoir_median,v_kbm_median";
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.model_error,
                r.n_samples,
                r.u_reservoir_median,
                r.u_kbm_median,
                r.v_reservoir_median,
                r.v_kbm_median
            )
        })
        .collect();
    write_csv(&dir.join("wout.csv"), cfg, header, &csv_rows)?;
    for r in &rows {
        println!(
            "e={}: U reservoir share {:.4}, V reservoir share {:.4} ({} samples)",
            r.model_error, r.u_reservoir_median, r.v_reservoir_median, r.n_samples
        );
    }
    Ok(())
}

/// Renders stored trajectory states (at `snapshot_steps`, or state 0) as PGM
/// heatmaps of both variables.
pub fn cmd_render(cfg: &RunConfig) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let path = trajectory_path(cfg);
    if !path.exists() {
        bail!(
            "no trajectory at {} — run the simulate command first",
            path.display()
        );
    }
    let (_, states) = read_trajectory(&path)?;
    let steps: Vec<usize> = if cfg.snapshot_steps.is_empty() {
        vec![0]
    } else {
        cfg.snapshot_steps.clone()
    };
    let mut rendered = String::new();
    for &step in &steps {
        let Some(s) = states.get(step) else {
            eprintln!("state {step} beyond trajectory length {}; skipped", states.len());
            continue;
        };
        for (tag, f) in [("u", &s.u), ("v", &s.v)] {
            let p = dir.join(format!("state_{tag}_{step:05}.pgm"));
            write_pgm(&p, f, cfg.heatmap_lo, cfg.heatmap_hi)?;
            let _ = write!(rendered, "{} ", p.display());
        }
    }
    println!("rendered: {}", rendered.trim_end());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(dir: &Path) -> RunConfig {
        RunConfig {
            sim_nx: 6,
            sim_ny: 6,
            res_dim: 16,
            sigma: 3,
            n_t: 1,
            n_p: 1,
            n_td: 20,
            n_ts: 10,
            n_tr: 60,
            n_pd: 0,
            n_ps: 10,
            n_pr: 20,
            out_dir: dir.to_string_lossy().into_owned(),
            ..RunConfig::desk()
        }
    }

    #[test]
    fn simulate_then_run_produces_expected_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(tmp.path());
        cfg.snapshot_steps = vec![0, 5];
        cmd_simulate(&cfg).unwrap();
        let traj = trajectory_path(&cfg);
        assert!(traj.exists());

        cmd_run(&cfg).unwrap();
        let err_csv = std::fs::read_to_string(tmp.path().join("run_error.csv")).unwrap();
        let mut lines = err_csv.lines();
        assert_eq!(lines.next().unwrap(), format!("# config={}", cfg.hash()));
        assert_eq!(lines.next().unwrap(), "step,time,error");
        assert_eq!(lines.count(), cfg.n_pr);
        for tag in ["truth_u", "pred_v", "diff_u"] {
            assert!(tmp.path().join(format!("run_{tag}_00005.pgm")).exists());
        }
    }

    #[test]
    fn run_reruns_are_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(tmp.path());
        cmd_simulate(&cfg).unwrap();
        cmd_run(&cfg).unwrap();
        let first = std::fs::read(tmp.path().join("run_error.csv")).unwrap();
        cmd_run(&cfg).unwrap();
        let second = std::fs::read(tmp.path().join("run_error.csv")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn ensemble_emits_record_and_summary_tables() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(tmp.path());
        cfg.n_t = 2;
        cfg.n_p = 2;
        cfg.modes = Some(vec!["reservoir".into(), "oh".into()]);
        cmd_simulate(&cfg).unwrap();
        cmd_ensemble(&cfg).unwrap();

        let recs = std::fs::read_to_string(tmp.path().join("ensemble_records.csv")).unwrap();
        // header comment + column row + 2 modes x 2 trainings x 2 predictions
        assert_eq!(recs.lines().count(), 2 + 8);
        let summary = std::fs::read_to_string(tmp.path().join("ensemble_summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 2 + 2);
        assert!(tmp.path().join("ensemble_timing.csv").exists());
    }

    #[test]
    fn wout_and_render_products() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(tmp.path());
        cfg.wout_n_a = 2;
        cfg.wout_errors = vec![0.0, 1.0];
        cmd_simulate(&cfg).unwrap();
        cmd_wout(&cfg).unwrap();
        let wout = std::fs::read_to_string(tmp.path().join("wout.csv")).unwrap();
        assert_eq!(wout.lines().count(), 2 + 2);

        cmd_render(&cfg).unwrap();
        assert!(tmp.path().join("state_u_00000.pgm").exists());
        assert!(tmp.path().join("state_v_00000.pgm").exists());
    }

    #[test]
    fn sweep_requires_parameter() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(tmp.path());
        assert!(cmd_sweep(&cfg).is_err());
    }
}
