//! Orchestration: trajectory sectioning for ensemble runs, the hyperparameter
//! sweep grid, the model-error contribution study, and record aggregation.

use std::ops::Range;
use std::time::Instant;

use crate::barkley::{make_epsilon_model, BarkleyParams, ModelError};
use crate::error::{CoreError, Result};
use crate::field::FieldPair;
use crate::hybrid::HybridMode;
use crate::local_states::{
    build_local_dataset, predict_closed_loop, train_all_with_matrices, MatrixStore, PatchSpec,
    PredictError, TrainOptions,
};
use crate::metrics::{
    grid_contribution, median, normalized_error, quantile_nearest_rank, valid_time,
    ContributionReport, ContributionWeighting, ValidTime,
};
use crate::reservoir::ReservoirSpec;

/// Default normalized-error threshold for the valid time.
pub const DEFAULT_E_MAX: f64 = 0.2;

/// Default model-error grid; 1.0 is an interpolation point added between the
/// values examined in the reference experiments.
pub const DEFAULT_MODEL_ERRORS: [f64; 6] = [0.0, 0.1, 1.0, 5.0, 10.0, 100.0];

/// Sectioning plan: n_t training sections, each followed by n_p prediction
/// sections, with per-section discard/sync/work step counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub n_t: usize,
    pub n_p: usize,
    pub n_td: usize,
    pub n_ts: usize,
    pub n_tr: usize,
    pub n_pd: usize,
    pub n_ps: usize,
    pub n_pr: usize,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 1 || self.n_tr < 1 || self.n_pr < 1 {
            return Err(CoreError::InvalidParam(
                "ensemble requires n_t >= 1, n_tr >= 1, n_pr >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Total trajectory steps consumed by the full layout.
    pub fn required_steps(&self) -> usize {
        self.n_t
            * (self.n_td
                + self.n_ts
                + self.n_tr
                + self.n_p * (self.n_pd + self.n_ps + self.n_pr))
    }
}

/// One [discard | sync | work] block of absolute step indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub discard: Range<usize>,
    pub sync: Range<usize>,
    pub work: Range<usize>,
}

impl Section {
    fn lay(cursor: &mut usize, discard: usize, sync: usize, work: usize) -> Section {
        let d = *cursor..*cursor + discard;
        let s = d.end..d.end + sync;
        let w = s.end..s.end + work;
        *cursor = w.end;
        Section {
            discard: d,
            sync: s,
            work: w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSection {
    pub train: Section,
    pub predictions: Vec<Section>,
}

/// Contiguous, non-overlapping layout over `total_steps` trajectory steps.
pub fn partition_sections(total_steps: usize, cfg: &EnsembleConfig) -> Result<Vec<TrainingSection>> {
    cfg.validate()?;
    let need = cfg.required_steps();
    if total_steps < need {
        return Err(CoreError::InsufficientData {
            have: total_steps,
            need,
        });
    }
    let mut cursor = 0usize;
    let mut out = Vec::with_capacity(cfg.n_t);
    for _ in 0..cfg.n_t {
        let train = Section::lay(&mut cursor, cfg.n_td, cfg.n_ts, cfg.n_tr);
        let predictions = (0..cfg.n_p)
            .map(|_| Section::lay(&mut cursor, cfg.n_pd, cfg.n_ps, cfg.n_pr))
            .collect();
        out.push(TrainingSection { train, predictions });
    }
    Ok(out)
}

/// Everything a single train/predict evaluation needs besides the trajectory
/// and the sectioning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSetup {
    pub truth_params: BarkleyParams,
    /// Relative epsilon perturbation e of the knowledge-based model.
    pub model_error: f64,
    pub mode: HybridMode,
    pub spec: ReservoirSpec,
    pub patch: PatchSpec,
    pub opts: TrainOptions,
    /// Input-noise amplitude (fraction of per-variable standard deviation).
    pub alpha: f64,
    pub seed: u64,
    pub e_max: f64,
    pub weighting: ContributionWeighting,
}

impl Default for RunSetup {
    fn default() -> Self {
        RunSetup {
            truth_params: BarkleyParams::default(),
            model_error: 0.0,
            mode: HybridMode::OutputHybrid,
            spec: ReservoirSpec::default(),
            patch: PatchSpec::default(),
            opts: TrainOptions::default(),
            alpha: 1e-6,
            seed: 0,
            e_max: DEFAULT_E_MAX,
            weighting: ContributionWeighting::WeightMass,
        }
    }
}

impl RunSetup {
    pub fn kbm_params(&self) -> Result<BarkleyParams> {
        let err = ModelError::new(self.model_error)?;
        Ok(make_epsilon_model(&self.truth_params, err))
    }
}

/// One prediction's outcome within an ensemble.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub mode: HybridMode,
    pub r_dim: usize,
    pub model_error: f64,
    pub training_index: usize,
    pub prediction_index: usize,
    pub seed: u64,
    pub valid_time: Option<ValidTime>,
    pub train_secs: f64,
    pub predict_secs: f64,
    pub contribution: Option<ContributionReport>,
    pub failure: Option<String>,
}

/// Runs the full sectioned ensemble over an already-simulated trajectory.
/// `truth` must hold `required_steps + 1` states so every training target and
/// scored prediction step has a ground-truth value. Reservoir matrices are
/// built once at the first training section and reused for the rest.
pub fn run_ensemble(
    truth: &[FieldPair],
    setup: &RunSetup,
    cfg: &EnsembleConfig,
) -> Result<Vec<RunRecord>> {
    let need = cfg.required_steps() + 1;
    if truth.len() < need {
        return Err(CoreError::InsufficientData {
            have: truth.len(),
            need,
        });
    }
    let sections = partition_sections(truth.len() - 1, cfg)?;
    let kbm_params = setup.kbm_params()?;
    let mut records = Vec::with_capacity(cfg.n_t * cfg.n_p);
    let mut matrices: Option<MatrixStore> = None;

    for (t_idx, section) in sections.iter().enumerate() {
        let blank = |p_idx: usize| RunRecord {
            mode: setup.mode,
            r_dim: setup.spec.r_dim,
            model_error: setup.model_error,
            training_index: t_idx,
            prediction_index: p_idx,
            seed: setup.seed,
            valid_time: None,
            train_secs: 0.0,
            predict_secs: 0.0,
            contribution: None,
            failure: None,
        };
        let train_start = Instant::now();
        let grid = (|| {
            let slice = &truth[section.train.sync.start..section.train.work.end + 1];
            let dataset = build_local_dataset(
                slice,
                &kbm_params,
                setup.mode,
                setup.patch,
                setup.alpha,
                mix_noise_seed(setup.seed, t_idx),
            )?;
            train_all_with_matrices(
                &dataset,
                &setup.spec,
                setup.mode,
                cfg.n_ts,
                setup.opts,
                matrices.clone(),
            )
        })();
        let train_secs = train_start.elapsed().as_secs_f64();

        let grid = match grid {
            Ok(g) => g,
            Err(e) => {
                // A failed training voids all of its predictions but not the
                // rest of the ensemble.
                for p_idx in 0..cfg.n_p {
                    let mut rec = blank(p_idx);
                    rec.train_secs = train_secs;
                    rec.failure = Some(format!("training failed: {e}"));
                    records.push(rec);
                }
                continue;
            }
        };
        matrices.get_or_insert_with(|| grid.matrices.clone());
        let contribution = if setup.mode.kbm_in_readout() {
            Some(grid_contribution(&grid, setup.weighting)?)
        } else {
            None
        };

        for (p_idx, psec) in section.predictions.iter().enumerate() {
            let mut rec = blank(p_idx);
            rec.train_secs = train_secs;
            rec.contribution = contribution;
            let sync = &truth[psec.sync.start..psec.sync.end];
            let predict_start = Instant::now();
            let outcome = predict_closed_loop(&grid, sync, &kbm_params, cfg.n_pr);
            rec.predict_secs = predict_start.elapsed().as_secs_f64();
            match outcome {
                Ok(pred) => {
                    let target = &truth[psec.work.start..psec.work.end];
                    match normalized_error(target, &pred.fields, setup.truth_params.dt)
                        .and_then(|e| valid_time(&e, setup.e_max))
                    {
                        Ok(vt) => rec.valid_time = Some(vt),
                        Err(e) => rec.failure = Some(format!("scoring failed: {e}")),
                    }
                }
                Err(PredictError::BlowUp { step, .. }) => {
                    rec.failure = Some(format!("prediction blew up at step {step}"));
                    // A diverged prediction is scored as immediately invalid.
                    rec.valid_time = Some(ValidTime {
                        time: 0.0,
                        censored: false,
                    });
                }
                Err(PredictError::Core(e)) => rec.failure = Some(format!("prediction failed: {e}")),
            }
            records.push(rec);
        }
    }
    Ok(records)
}

fn mix_noise_seed(base: u64, t_idx: usize) -> u64 {
    crate::local_states::mix_seed(base, 0xB0, t_idx as u64)
}

/// Group summary: nearest-rank median and quartiles of valid time, median
/// durations, median contribution shares.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub mode: HybridMode,
    pub r_dim: usize,
    pub model_error: f64,
    pub n_records: usize,
    pub n_failed: usize,
    pub n_censored: usize,
    pub vt_median: f64,
    pub vt_q1: f64,
    pub vt_q3: f64,
    /// The median valid time is the (censored) horizon value.
    pub median_censored: bool,
    pub train_secs_median: f64,
    pub predict_secs_median: f64,
    pub contrib_u_reservoir_median: Option<f64>,
    pub contrib_v_reservoir_median: Option<f64>,
}

/// Aggregates records grouped by (mode, r_dim, model_error), preserving the
/// first-seen group order. Censored valid times enter the statistics at the
/// horizon value and are counted separately.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(CoreError::EmptyGroup);
    }
    let mut keys: Vec<(HybridMode, usize, u64)> = Vec::new();
    let mut groups: Vec<Vec<&RunRecord>> = Vec::new();
    for rec in records {
        let key = (rec.mode, rec.r_dim, rec.model_error.to_bits());
        match keys.iter().position(|k| *k == key) {
            Some(idx) => groups[idx].push(rec),
            None => {
                keys.push(key);
                groups.push(vec![rec]);
            }
        }
    }
    let mut rows = Vec::with_capacity(groups.len());
    for group in groups {
        let first = group[0];
        let vts: Vec<f64> = group
            .iter()
            .filter_map(|r| r.valid_time.map(|v| v.time))
            .collect();
        let n_censored = group
            .iter()
            .filter(|r| r.valid_time.is_some_and(|v| v.censored))
            .count();
        let n_failed = group.iter().filter(|r| r.failure.is_some()).count();
        if vts.is_empty() {
            return Err(CoreError::EmptyGroup);
        }
        let vt_median = median(&vts).unwrap();
        let horizon = group
            .iter()
            .filter_map(|r| r.valid_time)
            .filter(|v| v.censored)
            .map(|v| v.time)
            .fold(f64::NEG_INFINITY, f64::max);
        let share_medians = |pick: fn(&ContributionReport) -> Option<crate::metrics::Shares>| {
            let vals: Vec<f64> = group
                .iter()
                .filter_map(|r| r.contribution.as_ref().and_then(pick))
                .map(|s| s.reservoir)
                .collect();
            median(&vals)
        };
        rows.push(SummaryRow {
            mode: first.mode,
            r_dim: first.r_dim,
            model_error: first.model_error,
            n_records: group.len(),
            n_failed,
            n_censored,
            vt_median,
            vt_q1: quantile_nearest_rank(&vts, 0.25).unwrap(),
            vt_q3: quantile_nearest_rank(&vts, 0.75).unwrap(),
            median_censored: n_censored > 0 && vt_median >= horizon,
            train_secs_median: median(
                &group.iter().map(|r| r.train_secs).collect::<Vec<_>>(),
            )
            .unwrap(),
            predict_secs_median: median(
                &group.iter().map(|r| r.predict_secs).collect::<Vec<_>>(),
            )
            .unwrap(),
            contrib_u_reservoir_median: share_medians(|c| c.u),
            contrib_v_reservoir_median: share_medians(|c| c.v),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    RDim,
    Rho,
    Sigma,
    Alpha,
    Beta,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::RDim => "r_dim",
            SweepParameter::Rho => "rho",
            SweepParameter::Sigma => "sigma",
            SweepParameter::Alpha => "alpha",
            SweepParameter::Beta => "beta",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "r_dim" => Ok(SweepParameter::RDim),
            "rho" => Ok(SweepParameter::Rho),
            "sigma" => Ok(SweepParameter::Sigma),
            "alpha" => Ok(SweepParameter::Alpha),
            "beta" => Ok(SweepParameter::Beta),
            other => Err(CoreError::InvalidParam(format!(
                "unknown sweep parameter '{other}'"
            ))),
        }
    }

    /// The grid of examined values used in the reference study.
    pub fn reference_values(&self) -> Vec<f64> {
        match self {
            SweepParameter::RDim => vec![200.0, 400.0, 500.0, 600.0],
            SweepParameter::Rho => vec![0.1, 0.3, 0.5, 0.6, 0.7, 0.8, 1.0, 1.2, 1.5],
            SweepParameter::Sigma => vec![3.0, 5.0, 7.0],
            SweepParameter::Alpha => vec![1e-4, 1e-5, 1e-6],
            SweepParameter::Beta => vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
        }
    }
}

/// Starting hyperparameters of the reference sweep; every parameter not under
/// examination is held at these values.
pub fn apply_sweep_initial_values(setup: &mut RunSetup) {
    setup.spec.r_dim = 500;
    setup.spec.rho = 1.0;
    setup.patch.sigma = 5;
    setup.alpha = 1e-4;
    setup.spec.beta = 1e-6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub valid_time: Option<ValidTime>,
    pub failure: Option<String>,
}

fn apply_sweep_value(setup: &mut RunSetup, parameter: SweepParameter, value: f64) -> Result<()> {
    let as_count = |v: f64| -> Result<usize> {
        if v < 1.0 || v.fract() != 0.0 {
            return Err(CoreError::InvalidParam(format!(
                "swept value {v} must be a positive integer"
            )));
        }
        Ok(v as usize)
    };
    match parameter {
        SweepParameter::RDim => setup.spec.r_dim = as_count(value)?,
        SweepParameter::Rho => setup.spec.rho = value,
        SweepParameter::Sigma => setup.patch.sigma = as_count(value)?,
        SweepParameter::Alpha => setup.alpha = value,
        SweepParameter::Beta => setup.spec.beta = value,
    }
    Ok(())
}

/// One single-training single-prediction evaluation per examined value, all
/// other parameters as given in `base`. Per-value failures become flagged rows.
pub fn run_sweep(
    truth: &[FieldPair],
    base: &RunSetup,
    sweep: &SweepConfig,
    values: &[f64],
    cfg: &EnsembleConfig,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CoreError::InvalidParam("empty sweep grid".into()));
    }
    let single = EnsembleConfig {
        n_t: 1,
        n_p: 1,
        ..*cfg
    };
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut setup = *base;
        let outcome = apply_sweep_value(&mut setup, sweep.parameter, value)
            .and_then(|_| run_ensemble(truth, &setup, &single));
        let row = match outcome {
            Ok(records) => {
                let rec = &records[0];
                SweepRow {
                    parameter: sweep.parameter,
                    value,
                    valid_time: rec.valid_time,
                    failure: rec.failure.clone(),
                }
            }
            Err(e) => SweepRow {
                parameter: sweep.parameter,
                value,
                valid_time: None,
                failure: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

/// One model-error point of the readout-contribution study.
#[derive(Debug, Clone)]
pub struct WoutRow {
    pub model_error: f64,
    /// Samples = matrix re-initializations x training sections.
    pub n_samples: usize,
    pub u_reservoir_median: f64,
    pub u_kbm_median: f64,
    pub v_reservoir_median: f64,
    pub v_kbm_median: f64,
}

/// Trains grids for each model error over `n_a` independent matrix
/// initializations and all training sections of `cfg`, and reports the median
/// contribution split per error. No prediction phase is run.
pub fn run_wout_study(
    truth: &[FieldPair],
    base: &RunSetup,
    e_values: &[f64],
    n_a: usize,
    cfg: &EnsembleConfig,
) -> Result<Vec<WoutRow>> {
    if !base.mode.kbm_in_readout() {
        return Err(CoreError::InvalidParam(
            "contribution study requires a mode with a KBM readout block (oh|fh)".into(),
        ));
    }
    if n_a < 1 || e_values.is_empty() {
        return Err(CoreError::InvalidParam(
            "contribution study requires n_a >= 1 and a non-empty error grid".into(),
        ));
    }
    let need = cfg.required_steps() + 1;
    if truth.len() < need {
        return Err(CoreError::InsufficientData {
            have: truth.len(),
            need,
        });
    }
    let sections = partition_sections(truth.len() - 1, cfg)?;
    let mut rows = Vec::with_capacity(e_values.len());
    for &e in e_values {
        let mut setup = *base;
        setup.model_error = e;
        let kbm_params = setup.kbm_params()?;
        let mut u_shares = Vec::with_capacity(n_a * cfg.n_t);
        let mut v_shares = Vec::with_capacity(n_a * cfg.n_t);
        for a_idx in 0..n_a {
            setup.spec.seed = crate::local_states::mix_seed(base.seed, 0xA, a_idx as u64);
            for (t_idx, section) in sections.iter().enumerate() {
                let slice = &truth[section.train.sync.start..section.train.work.end + 1];
                let dataset = build_local_dataset(
                    slice,
                    &kbm_params,
                    setup.mode,
                    setup.patch,
                    setup.alpha,
                    mix_noise_seed(setup.seed, t_idx),
                )?;
                let grid = train_all_with_matrices(
                    &dataset,
                    &setup.spec,
                    setup.mode,
                    cfg.n_ts,
                    setup.opts,
                    None,
                )?;
                let rep = grid_contribution(&grid, setup.weighting)?;
                if let Some(s) = rep.u {
                    u_shares.push(s.reservoir);
                }
                if let Some(s) = rep.v {
                    v_shares.push(s.reservoir);
                }
            }
        }
        let u_med = median(&u_shares).ok_or(CoreError::EmptyGroup)?;
        let v_med = median(&v_shares).ok_or(CoreError::EmptyGroup)?;
        rows.push(WoutRow {
            model_error: e,
            n_samples: n_a * cfg.n_t,
            u_reservoir_median: u_med,
            u_kbm_median: 1.0 - u_med,
            v_reservoir_median: v_med,
            v_kbm_median: 1.0 - v_med,
        });
    }
    Ok(rows)
}
