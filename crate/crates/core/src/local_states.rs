//! Local-states machinery: sigma x sigma patch extraction, one independent
//! reservoir per grid point, parallel training over all points, and the
//! closed-loop predictor that reassembles the global field and runs one global
//! KBM step per iteration.
//!
//! Determinism contract: training and prediction results are bitwise
//! independent of the rayon thread count and point iteration order. All
//! parallel sections are order-preserving maps over immutable shared data; no
//! floating-point reduction crosses points.

use crate::barkley::{barkley_step, BarkleyParams};
use crate::error::{CoreError, Result};
use crate::field::{Field, FieldPair};
use crate::hybrid::{
    assemble_features_into, assemble_input_into, plan_dims_with, DimPlan, HybridMode, KbmReadout,
    ReadoutOptions,
};
use crate::reservoir::{
    advance_slices, build_adjacency, build_input_matrix, train_readout_anchored, Readout,
    ReservoirMatrices, ReservoirSpec,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub sigma: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec { sigma: 3 }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 1 || self.sigma % 2 == 0 {
            return Err(CoreError::InvalidParam(format!(
                "sigma = {} must be odd and >= 1",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// U then V values over the sigma x sigma square centered at (i, j), row-major,
/// with out-of-grid neighbors clamped to the boundary.
pub fn extract_patch(state: &FieldPair, i: usize, j: usize, spec: PatchSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if i >= state.nx() || j >= state.ny() {
        return Err(CoreError::OutOfGrid {
            i,
            j,
            nx: state.nx(),
            ny: state.ny(),
        });
    }
    let mut out = Vec::with_capacity(2 * spec.sigma * spec.sigma);
    extract_patch_into(state, i, j, spec.sigma, &mut out);
    Ok(out)
}

#[inline]
pub fn extract_patch_into(state: &FieldPair, i: usize, j: usize, sigma: usize, out: &mut Vec<f64>) {
    out.clear();
    let half = (sigma / 2) as isize;
    let (ic, jc) = (i as isize, j as isize);
    for field in [&state.u, &state.v] {
        for di in -half..=half {
            for dj in -half..=half {
                out.push(field.get_clamped(ic + di, jc + dj));
            }
        }
    }
}

/// Adds per-variable Gaussian noise with standard deviation
/// alpha * std(variable over the whole sequence). Deterministic in `seed`.
pub fn add_input_noise(data: &[FieldPair], alpha: f64, seed: u64) -> Result<Vec<FieldPair>> {
    if alpha < 0.0 {
        return Err(CoreError::InvalidParam("alpha must be >= 0".into()));
    }
    if alpha == 0.0 || data.is_empty() {
        return Ok(data.to_vec());
    }
    let std_u = sequence_std(data, |s| &s.u);
    let std_v = sequence_std(data, |s| &s.v);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.to_vec();
    for (scale, pick) in [
        (std_u, 0usize),
        (std_v, 1usize),
    ] {
        if scale == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, alpha * scale).expect("valid std");
        for pair in &mut out {
            let field = if pick == 0 { &mut pair.u } else { &mut pair.v };
            for v in field.as_mut_slice() {
                *v += dist.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

fn sequence_std(data: &[FieldPair], pick: impl Fn(&FieldPair) -> &Field) -> f64 {
    let n: usize = data.iter().map(|s| pick(s).as_slice().len()).sum();
    let mean: f64 = data
        .iter()
        .flat_map(|s| pick(s).as_slice())
        .sum::<f64>()
        / n as f64;
    let var: f64 = data
        .iter()
        .flat_map(|s| pick(s).as_slice())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n as f64;
    var.sqrt()
}

/// Training data assembled from a global trajectory: noise-added input copies,
/// global KBM one-step predictions (from the noise-free fields), and targets
/// read from the truth at t + 1.
pub struct LocalDataset<'a> {
    pub truth: &'a [FieldPair],
    pub inputs: Vec<FieldPair>,
    pub kbm: Vec<FieldPair>,
    pub mode: HybridMode,
    pub patch: PatchSpec,
}

impl LocalDataset<'_> {
    /// Number of (feature, target) steps available.
    pub fn n_steps(&self) -> usize {
        self.truth.len() - 1
    }
}

pub fn build_local_dataset<'a>(
    truth: &'a [FieldPair],
    kbm_params: &BarkleyParams,
    mode: HybridMode,
    patch: PatchSpec,
    alpha: f64,
    seed: u64,
) -> Result<LocalDataset<'a>> {
    patch.validate()?;
    if truth.len() < 2 {
        return Err(CoreError::InsufficientData {
            have: truth.len(),
            need: 2,
        });
    }
    let inputs = add_input_noise(&truth[..truth.len() - 1], alpha, seed)?;
    let mut kbm = Vec::new();
    if mode.uses_kbm() {
        kbm.reserve(truth.len() - 1);
        for (t, state) in truth[..truth.len() - 1].iter().enumerate() {
            let pred = barkley_step(state, kbm_params).map_err(|e| match e {
                CoreError::BlowUp { .. } => CoreError::BlowUp { step: t },
                other => other,
            })?;
            kbm.push(pred);
        }
    }
    Ok(LocalDataset {
        truth,
        inputs,
        kbm,
        mode,
        patch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixSharing {
    Shared,
    PerPoint,
}

impl MatrixSharing {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatrixSharing::Shared => "shared",
            MatrixSharing::PerPoint => "per-point",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(MatrixSharing::Shared),
            "per-point" => Ok(MatrixSharing::PerPoint),
            other => Err(CoreError::InvalidParam(format!(
                "unknown matrix sharing '{other}' (expected shared|per-point)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub sharing: MatrixSharing,
    pub readout: ReadoutOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            sharing: MatrixSharing::Shared,
            readout: ReadoutOptions::default(),
        }
    }
}

/// splitmix64-style integer mix; point seeds depend only on (base, i, j).
pub fn mix_seed(base: u64, i: u64, j: u64) -> u64 {
    let mut z = base ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ j.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub enum MatrixStore {
    Shared(Arc<ReservoirMatrices>),
    PerPoint(Vec<Arc<ReservoirMatrices>>),
}

impl MatrixStore {
    pub fn get(&self, idx: usize) -> &ReservoirMatrices {
        match self {
            MatrixStore::Shared(m) => m,
            MatrixStore::PerPoint(v) => &v[idx],
        }
    }
}

/// Builds the fixed random matrices for an nx x ny grid.
pub fn build_matrix_store(
    spec: &ReservoirSpec,
    x_dim: usize,
    sharing: MatrixSharing,
    nx: usize,
    ny: usize,
) -> Result<MatrixStore> {
    let build_one = |seed: u64| -> Result<ReservoirMatrices> {
        let mut s = *spec;
        s.seed = seed;
        Ok(ReservoirMatrices {
            a: build_adjacency(&s)?,
            w_in: build_input_matrix(spec.r_dim, x_dim, seed.wrapping_add(1)),
        })
    };
    match sharing {
        MatrixSharing::Shared => Ok(MatrixStore::Shared(Arc::new(build_one(spec.seed)?))),
        MatrixSharing::PerPoint => {
            let stores = (0..nx * ny)
                .into_par_iter()
                .map(|idx| {
                    let (i, j) = (idx / ny, idx % ny);
                    build_one(mix_seed(spec.seed, i as u64, j as u64)).map(Arc::new)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MatrixStore::PerPoint(stores))
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointModel {
    pub readout: Readout,
    pub feature_rms: Vec<f64>,
}

/// One trained reservoir per grid point plus the shared configuration.
pub struct ReservoirGrid {
    pub nx: usize,
    pub ny: usize,
    pub mode: HybridMode,
    pub patch: PatchSpec,
    pub spec: ReservoirSpec,
    pub opts: TrainOptions,
    pub plan: DimPlan,
    pub matrices: MatrixStore,
    pub points: Vec<PointModel>,
}

/// Writes the readout feature vector for one point: reservoir block first,
/// then the KBM block (patch or center pair) for OH/FH.
fn fill_features(
    mode: HybridMode,
    opts: ReadoutOptions,
    sigma: usize,
    state: &[f64],
    k_patch: &[f64],
    out: &mut Vec<f64>,
) {
    let r_block: Vec<f64>;
    let r_feat: &[f64] = if opts.augmented {
        r_block = crate::reservoir::augment(state);
        &r_block
    } else {
        state
    };
    let center = (sigma * sigma - 1) / 2;
    let centers;
    let k_block: &[f64] = if mode.kbm_in_readout() {
        match opts.kbm_readout {
            KbmReadout::Patch => k_patch,
            KbmReadout::Center => {
                centers = [k_patch[center], k_patch[sigma * sigma + center]];
                &centers
            }
        }
    } else {
        &[]
    };
    assemble_features_into(mode, r_feat, k_block, out);
}

/// Trains every point independently. `matrices`, when given, are reused
/// instead of rebuilt (ensemble sections after the first).
pub fn train_all_with_matrices(
    dataset: &LocalDataset<'_>,
    spec: &ReservoirSpec,
    mode: HybridMode,
    sync_steps: usize,
    opts: TrainOptions,
    matrices: Option<MatrixStore>,
) -> Result<ReservoirGrid> {
    spec.validate()?;
    let sigma = dataset.patch.sigma;
    let plan = plan_dims_with(mode, spec.r_dim, sigma, opts.readout)?;
    let t_total = dataset.n_steps();
    if t_total <= sync_steps {
        return Err(CoreError::InsufficientData {
            have: t_total,
            need: sync_steps + 1,
        });
    }
    let (nx, ny) = (dataset.truth[0].nx(), dataset.truth[0].ny());
    let store = match matrices {
        Some(s) => s,
        None => build_matrix_store(spec, plan.x_dim, opts.sharing, nx, ny)?,
    };
    let n_feat = t_total - sync_steps;

    let points = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / ny, idx % ny);
            let m = store.get(idx);
            let mut h = Array2::zeros((plan.h_dim, n_feat));
            let mut y = Array2::zeros((2, n_feat));
            let mut state = vec![0.0; spec.r_dim];
            let mut next = vec![0.0; spec.r_dim];
            let mut u_patch = Vec::new();
            let mut k_patch = Vec::new();
            let mut x = Vec::new();
            let mut feat = Vec::new();
            for t in 0..t_total {
                extract_patch_into(&dataset.inputs[t], i, j, sigma, &mut u_patch);
                if mode.uses_kbm() {
                    extract_patch_into(&dataset.kbm[t], i, j, sigma, &mut k_patch);
                }
                assemble_input_into(mode, &u_patch, &k_patch, &mut x);
                advance_slices(m, &state, &x, &mut next)?;
                std::mem::swap(&mut state, &mut next);
                if t >= sync_steps {
                    let col = t - sync_steps;
                    fill_features(mode, opts.readout, sigma, &state, &k_patch, &mut feat);
                    for (row, v) in feat.iter().enumerate() {
                        h[[row, col]] = *v;
                    }
                    y[[0, col]] = dataset.truth[t + 1].u.get(i, j);
                    y[[1, col]] = dataset.truth[t + 1].v.get(i, j);
                }
            }
            let anchor = (plan.kbm_feat_dim() > 0).then(|| plan.r_feat_dim..plan.h_dim);
            let (readout, feature_rms) =
                train_readout_anchored(&h.view(), &y.view(), spec.beta, anchor)
                .map_err(|e| match e {
                    CoreError::SingularRidge { .. } => CoreError::SingularRidge {
                        point: Some((i, j)),
                    },
                    other => other,
                })?;
            Ok(PointModel {
                readout,
                feature_rms,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ReservoirGrid {
        nx,
        ny,
        mode,
        patch: dataset.patch,
        spec: *spec,
        opts,
        plan,
        matrices: store,
        points,
    })
}

pub fn train_all(
    dataset: &LocalDataset<'_>,
    spec: &ReservoirSpec,
    mode: HybridMode,
    sync_steps: usize,
    opts: TrainOptions,
) -> Result<ReservoirGrid> {
    train_all_with_matrices(dataset, spec, mode, sync_steps, opts, None)
}

/// Closed-loop prediction output. `kbm_calls` counts global KBM integrator
/// evaluations; it is exactly 0 in reservoir-only mode.
pub struct Prediction {
    pub fields: Vec<FieldPair>,
    pub kbm_calls: u64,
}

#[derive(Debug)]
pub enum PredictError {
    /// KBM or readout produced a non-finite field at `step`; `partial` holds
    /// the predictions emitted before the failure.
    BlowUp {
        step: usize,
        partial: Vec<FieldPair>,
        kbm_calls: u64,
    },
    Core(CoreError),
}

impl From<CoreError> for PredictError {
    fn from(e: CoreError) -> Self {
        PredictError::Core(e)
    }
}

impl std::fmt::Display for PredictError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictError::BlowUp { step, .. } => {
                write!(f, "closed-loop blow-up at prediction step {step}")
            }
            PredictError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for PredictError {}

/// Synchronizes every per-point reservoir open-loop on `sync_data`, then runs
/// `n_steps` of closed-loop prediction. Each iteration: every point emits its
/// (U, V) pair, the global field is assembled, one global KBM step runs on it,
/// and every point advances on its patches of the two fields.
pub fn predict_closed_loop(
    grid: &ReservoirGrid,
    sync_data: &[FieldPair],
    kbm_params: &BarkleyParams,
    n_steps: usize,
) -> Result<Prediction, PredictError> {
    if sync_data.is_empty() {
        return Err(CoreError::InsufficientData { have: 0, need: 1 }.into());
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let n_pts = nx * ny;
    let sigma = grid.patch.sigma;
    let mode = grid.mode;
    let mut kbm_calls: u64 = 0;

    // KBM predictions of the sync inputs, needed on the input side for IH/FH.
    let kbm_sync: Vec<FieldPair> = if mode.kbm_in_input() {
        let mut v = Vec::with_capacity(sync_data.len());
        for s in sync_data {
            v.push(barkley_step(s, kbm_params)?);
            kbm_calls += 1;
        }
        v
    } else {
        Vec::new()
    };

    let mut states: Vec<Vec<f64>> = vec![vec![0.0; grid.spec.r_dim]; n_pts];
    let mut next_states = states.clone();

    states
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(idx, st)| -> Result<()> {
            let (i, j) = (idx / ny, idx % ny);
            let m = grid.matrices.get(idx);
            let mut u_patch = Vec::new();
            let mut k_patch = Vec::new();
            let mut x = Vec::new();
            let mut nxt = vec![0.0; grid.spec.r_dim];
            for (t, field) in sync_data.iter().enumerate() {
                extract_patch_into(field, i, j, sigma, &mut u_patch);
                if mode.kbm_in_input() {
                    extract_patch_into(&kbm_sync[t], i, j, sigma, &mut k_patch);
                }
                assemble_input_into(mode, &u_patch, &k_patch, &mut x);
                advance_slices(m, st, &x, &mut nxt)?;
                std::mem::swap(st, &mut nxt);
            }
            Ok(())
        })?;

    // KBM prediction of the last consumed input, feeding the OH/FH readout.
    let mut kbm_prev: Option<FieldPair> = if mode.kbm_in_readout() {
        if mode.kbm_in_input() {
            Some(kbm_sync.last().unwrap().clone())
        } else {
            kbm_calls += 1;
            Some(barkley_step(sync_data.last().unwrap(), kbm_params)?)
        }
    } else {
        None
    };

    let mut out: Vec<FieldPair> = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let emitted: Vec<(f64, f64)> = (0..n_pts)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / ny, idx % ny);
                let model = &grid.points[idx];
                let mut k_patch = Vec::new();
                if let Some(kf) = &kbm_prev {
                    extract_patch_into(kf, i, j, sigma, &mut k_patch);
                }
                let mut feat = Vec::new();
                fill_features(mode, grid.opts.readout, sigma, &states[idx], &k_patch, &mut feat);
                let w = &model.readout.w_out;
                let mut yu = 0.0;
                let mut yv = 0.0;
                for (c, v) in feat.iter().enumerate() {
                    yu += w[[0, c]] * v;
                    yv += w[[1, c]] * v;
                }
                (yu, yv)
            })
            .collect();

        let mut cur = FieldPair::zeros(nx, ny);
        let mut finite = true;
        for (idx, (yu, yv)) in emitted.iter().enumerate() {
            let (i, j) = (idx / ny, idx % ny);
            cur.u.set(i, j, *yu);
            cur.v.set(i, j, *yv);
            finite &= yu.is_finite() && yv.is_finite();
        }
        out.push(cur.clone());
        if !finite {
            return Err(PredictError::BlowUp {
                step,
                partial: out,
                kbm_calls,
            });
        }

        let kbm_next: Option<FieldPair> = if mode.uses_kbm() {
            kbm_calls += 1;
            match barkley_step(&cur, kbm_params) {
                Ok(f) => Some(f),
                Err(CoreError::BlowUp { .. }) => {
                    return Err(PredictError::BlowUp {
                        step,
                        partial: out,
                        kbm_calls,
                    })
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };

        next_states
            .par_iter_mut()
            .zip(states.par_iter())
            .enumerate()
            .try_for_each(|(idx, (nxt, st))| -> Result<()> {
                let (i, j) = (idx / ny, idx % ny);
                let m = grid.matrices.get(idx);
                let mut u_patch = Vec::new();
                let mut k_patch = Vec::new();
                let mut x = Vec::new();
                extract_patch_into(&cur, i, j, sigma, &mut u_patch);
                if mode.kbm_in_input() {
                    extract_patch_into(kbm_next.as_ref().unwrap(), i, j, sigma, &mut k_patch);
                }
                assemble_input_into(mode, &u_patch, &k_patch, &mut x);
                advance_slices(m, st, &x, nxt)
            })?;
        std::mem::swap(&mut states, &mut next_states);
        kbm_prev = kbm_next;
    }

    Ok(Prediction {
        fields: out,
        kbm_calls,
    })
}
