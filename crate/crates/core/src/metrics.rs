//! Evaluation: normalized time-dependent error, valid time, per-point error
//! fields, and the reservoir-vs-KBM contribution split of trained readouts.

use crate::error::{CoreError, Result};
use crate::field::{Field, FieldPair};
use crate::hybrid::DimPlan;
use crate::local_states::ReservoirGrid;
use crate::reservoir::Readout;

/// Normalized error per prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub values: Vec<f64>,
    pub dt: f64,
}

/// e(t) = ||y(t) - y_pred(t)|| / <||y(t)||^2>^{1/2}, with the norm running over
/// all grid points and both variables and the denominator averaged over the
/// truth window under comparison.
pub fn normalized_error(truth: &[FieldPair], pred: &[FieldPair], dt: f64) -> Result<ErrorSeries> {
    if truth.len() != pred.len() {
        return Err(CoreError::DimMismatch {
            expected: truth.len(),
            got: pred.len(),
            context: "trajectory lengths",
        });
    }
    let mut denom_acc = 0.0;
    for t in truth {
        denom_acc += sq_norm(t);
    }
    let denom = (denom_acc / truth.len() as f64).sqrt();
    if denom == 0.0 {
        return Err(CoreError::ZeroTruth);
    }
    let values = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            let mut acc = 0.0;
            for (a, b) in [(&t.u, &p.u), (&t.v, &p.v)] {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    let d = x - y;
                    acc += d * d;
                }
            }
            acc.sqrt() / denom
        })
        .collect();
    Ok(ErrorSeries { values, dt })
}

fn sq_norm(s: &FieldPair) -> f64 {
    s.u.as_slice().iter().map(|v| v * v).sum::<f64>()
        + s.v.as_slice().iter().map(|v| v * v).sum::<f64>()
}

/// Valid time: dt times the index of the first error above `e_max`. Censored
/// when the series never exceeds the threshold within its horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidTime {
    pub time: f64,
    pub censored: bool,
}

pub fn valid_time(errors: &ErrorSeries, e_max: f64) -> Result<ValidTime> {
    if e_max <= 0.0 {
        return Err(CoreError::InvalidParam("e_max must be > 0".into()));
    }
    match errors.values.iter().position(|&v| v > e_max) {
        Some(idx) => Ok(ValidTime {
            time: errors.dt * idx as f64,
            censored: false,
        }),
        None => Ok(ValidTime {
            time: errors.dt * errors.values.len() as f64,
            censored: true,
        }),
    }
}

/// Per-point absolute difference for each variable (heatmap input).
pub fn error_field(truth: &FieldPair, pred: &FieldPair) -> Result<(Field, Field)> {
    if truth.nx() != pred.nx() || truth.ny() != pred.ny() {
        return Err(CoreError::DimMismatch {
            expected: truth.nx() * truth.ny(),
            got: pred.nx() * pred.ny(),
            context: "error_field shapes",
        });
    }
    let eu = Field::from_fn(truth.nx(), truth.ny(), |i, j| {
        (truth.u.get(i, j) - pred.u.get(i, j)).abs()
    });
    let ev = Field::from_fn(truth.nx(), truth.ny(), |i, j| {
        (truth.v.get(i, j) - pred.v.get(i, j)).abs()
    });
    Ok((eu, ev))
}

/// Reservoir vs KBM share of one output variable's readout row, both in [0, 1]
/// and summing to 1. `None` marks a degenerate all-zero row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shares {
    pub reservoir: f64,
    pub kbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContributionReport {
    pub u: Option<Shares>,
    pub v: Option<Shares>,
}

/// How readout coefficients are weighted when splitting the mass between the
/// reservoir and KBM blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContributionWeighting {
    /// Sum of absolute coefficients per block.
    WeightMass,
    /// |w| scaled by the RMS of the corresponding feature over the training run.
    ActivityWeighted,
}

impl ContributionWeighting {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContributionWeighting::WeightMass => "weight-mass",
            ContributionWeighting::ActivityWeighted => "activity-weighted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "weight-mass" => Ok(ContributionWeighting::WeightMass),
            "activity-weighted" => Ok(ContributionWeighting::ActivityWeighted),
            other => Err(CoreError::InvalidParam(format!(
                "unknown contribution weighting '{other}'"
            ))),
        }
    }
}

fn row_shares(
    w_row: impl Iterator<Item = f64>,
    split: usize,
    weights: Option<&[f64]>,
) -> Option<Shares> {
    let mut res = 0.0;
    let mut kbm = 0.0;
    for (c, w) in w_row.enumerate() {
        let scale = weights.map_or(1.0, |ws| ws[c]);
        let mass = w.abs() * scale;
        if c < split {
            res += mass;
        } else {
            kbm += mass;
        }
    }
    let total = res + kbm;
    if total == 0.0 {
        None
    } else {
        Some(Shares {
            reservoir: res / total,
            kbm: kbm / total,
        })
    }
}

/// Contribution split of a single readout. Requires a mode whose plan carries
/// a KBM block (OH/FH).
pub fn wout_contribution(readout: &Readout, plan: &DimPlan) -> Result<ContributionReport> {
    wout_contribution_weighted(readout, plan, None)
}

pub fn wout_contribution_weighted(
    readout: &Readout,
    plan: &DimPlan,
    feature_rms: Option<&[f64]>,
) -> Result<ContributionReport> {
    if readout.w_out.ncols() != plan.h_dim {
        return Err(CoreError::DimMismatch {
            expected: plan.h_dim,
            got: readout.w_out.ncols(),
            context: "readout width vs plan",
        });
    }
    if plan.kbm_feat_dim() == 0 {
        return Err(CoreError::InvalidParam(
            "contribution split requires an OH/FH plan with a KBM block".into(),
        ));
    }
    let split = plan.r_feat_dim;
    let u = row_shares(readout.w_out.row(0).iter().copied(), split, feature_rms);
    let v = row_shares(readout.w_out.row(1).iter().copied(), split, feature_rms);
    Ok(ContributionReport { u, v })
}

/// Median of a slice (nearest-rank); `None` on empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile_nearest_rank(values, 0.5)
}

/// Nearest-rank quantile: v_sorted[ceil(p * n) - 1].
pub fn quantile_nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((p * sorted.len() as f64).ceil() as usize).max(1);
    Some(sorted[rank - 1])
}

/// Per-point contribution split, aggregated across the grid by the median of
/// each share. Degenerate (all-zero) rows are excluded from the medians.
pub fn grid_contribution(
    grid: &ReservoirGrid,
    weighting: ContributionWeighting,
) -> Result<ContributionReport> {
    let mut u_res = Vec::with_capacity(grid.points.len());
    let mut v_res = Vec::with_capacity(grid.points.len());
    for pt in &grid.points {
        let rms = match weighting {
            ContributionWeighting::WeightMass => None,
            ContributionWeighting::ActivityWeighted => Some(pt.feature_rms.as_slice()),
        };
        let rep = wout_contribution_weighted(&pt.readout, &grid.plan, rms)?;
        if let Some(s) = rep.u {
            u_res.push(s.reservoir);
        }
        if let Some(s) = rep.v {
            v_res.push(s.reservoir);
        }
    }
    let mk = |res: &[f64]| {
        median(res).map(|r| Shares {
            reservoir: r,
            kbm: 1.0 - r,
        })
    };
    Ok(ContributionReport {
        u: mk(&u_res),
        v: mk(&v_res),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::hybrid::{plan_dims, HybridMode};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_from(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> FieldPair {
        let mut u = Field::zeros(nx, ny);
        let mut v = Field::zeros(nx, ny);
        for i in 0..nx {
            for j in 0..ny {
                let (a, b) = f(i, j);
                u.set(i, j, a);
                v.set(i, j, b);
            }
        }
        FieldPair { u, v }
    }

    #[test]
    fn zero_error_for_identical_trajectories() {
        let traj: Vec<FieldPair> = (0..4)
            .map(|t| pair_from(3, 3, |i, j| ((t + i + j) as f64, 0.5)))
            .collect();
        let e = normalized_error(&traj, &traj, 0.01).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
        assert_eq!(e.values.len(), 4);
    }

    #[test]
    fn constant_norm_truth_vs_zero_prediction() {
        let truth: Vec<FieldPair> = (0..5).map(|_| pair_from(2, 2, |_, _| (0.5, 0.5))).collect();
        let zeros = vec![FieldPair::zeros(2, 2); 5];
        let e = normalized_error(&truth, &zeros, 0.01).unwrap();
        for v in &e.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut rnd_pair = |_: usize| pair_from(2, 2, |_, _| (rng.gen::<f64>(), rng.gen::<f64>()));
        let truth: Vec<FieldPair> = (0..3).map(&mut rnd_pair).collect();
        let pred: Vec<FieldPair> = (0..3).map(&mut rnd_pair).collect();
        let got = normalized_error(&truth, &pred, 0.02).unwrap();

        // independent brute-force oracle over scalars
        let mut denom = 0.0;
        for t in &truth {
            for i in 0..2 {
                for j in 0..2 {
                    denom += t.u.get(i, j).powi(2) + t.v.get(i, j).powi(2);
                }
            }
        }
        let denom = (denom / 3.0).sqrt();
        for (k, (t, p)) in truth.iter().zip(&pred).enumerate() {
            let mut num = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    num += (t.u.get(i, j) - p.u.get(i, j)).powi(2);
                    num += (t.v.get(i, j) - p.v.get(i, j)).powi(2);
                }
            }
            assert!((got.values[k] - num.sqrt() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_truth_rejected() {
        let zeros = vec![FieldPair::zeros(2, 2); 3];
        assert!(matches!(
            normalized_error(&zeros, &zeros, 0.01),
            Err(CoreError::ZeroTruth)
        ));
    }

    #[test]
    fn valid_time_cases() {
        let mk = |vals: Vec<f64>| ErrorSeries {
            values: vals,
            dt: 0.01,
        };
        let vt = valid_time(&mk(vec![0.0; 100]), 0.2).unwrap();
        assert_eq!(vt.time, 1.0);
        assert!(vt.censored);

        let vt = valid_time(&mk(vec![0.3, 0.1]), 0.2).unwrap();
        assert_eq!(vt.time, 0.0);
        assert!(!vt.censored);

        let vt = valid_time(&mk(vec![0.1, 0.19, 0.21, 0.05]), 0.2).unwrap();
        assert!((vt.time - 0.02).abs() < 1e-15);
        assert!(!vt.censored);

        assert!(valid_time(&mk(vec![0.1]), 0.0).is_err());
    }

    #[test]
    fn error_field_cases() {
        let a = pair_from(3, 3, |_, _| (1.0, 0.2));
        let b = pair_from(3, 3, |_, _| (0.75, 0.2));
        let (eu, ev) = error_field(&a, &b).unwrap();
        assert!(eu.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(ev.as_slice().iter().all(|&x| x == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = pair_from(3, 3, |_, _| (rng.gen(), rng.gen()));
        let b = pair_from(3, 3, |_, _| (rng.gen(), rng.gen()));
        let (eu, _) = error_field(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(eu.get(i, j), (a.u.get(i, j) - b.u.get(i, j)).abs());
            }
        }
    }

    #[test]
    fn contribution_extremes() {
        let plan = plan_dims(HybridMode::OutputHybrid, 4, 3).unwrap();
        // KBM block zero -> reservoir share 1
        let mut w = Array2::zeros((2, plan.h_dim));
        for c in 0..plan.r_feat_dim {
            w[[0, c]] = 0.5;
            w[[1, c]] = -0.25;
        }
        let rep = wout_contribution(&Readout { w_out: w }, &plan).unwrap();
        assert_eq!(rep.u.unwrap().reservoir, 1.0);
        assert_eq!(rep.v.unwrap().reservoir, 1.0);

        // reservoir block zero -> kbm share 1
        let mut w = Array2::zeros((2, plan.h_dim));
        for c in plan.r_feat_dim..plan.h_dim {
            w[[0, c]] = 1.0;
            w[[1, c]] = 1.0;
        }
        let rep = wout_contribution(&Readout { w_out: w }, &plan).unwrap();
        assert_eq!(rep.u.unwrap().kbm, 1.0);

        // all-zero row reported as degenerate
        let w = Array2::zeros((2, plan.h_dim));
        let rep = wout_contribution(&Readout { w_out: w }, &plan).unwrap();
        assert!(rep.u.is_none() && rep.v.is_none());
    }

    #[test]
    fn contribution_requires_kbm_block() {
        let plan = plan_dims(HybridMode::Reservoir, 4, 3).unwrap();
        let w = Array2::zeros((2, plan.h_dim));
        assert!(wout_contribution(&Readout { w_out: w }, &plan).is_err());
    }

    #[test]
    fn nearest_rank_quantiles() {
        let v = [3.0, 1.0, 5.0, 2.0, 4.0];
        assert_eq!(median(&v), Some(3.0));
        assert_eq!(quantile_nearest_rank(&v, 0.25), Some(2.0));
        assert_eq!(quantile_nearest_rank(&v, 0.75), Some(4.0));
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[7.5]), Some(7.5));
    }

    proptest! {
        #[test]
        fn valid_time_is_monotone(vals in proptest::collection::vec(0.0f64..0.5, 1..40), bump in 0.0f64..0.3) {
            let base = ErrorSeries { values: vals.clone(), dt: 0.01 };
            let larger = ErrorSeries {
                values: vals.iter().map(|v| v + bump).collect(),
                dt: 0.01,
            };
            let a = valid_time(&base, 0.2).unwrap();
            let b = valid_time(&larger, 0.2).unwrap();
            prop_assert!(b.time <= a.time);
        }

        #[test]
        fn shares_sum_to_one(seed in 0u64..100) {
            let plan = plan_dims(HybridMode::FullHybrid, 6, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Array2::from_shape_fn((2, plan.h_dim), |_| rng.gen::<f64>() - 0.5);
            let rep = wout_contribution(&Readout { w_out: w }, &plan).unwrap();
            for s in [rep.u.unwrap(), rep.v.unwrap()] {
                prop_assert!((s.reservoir + s.kbm - 1.0).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&s.reservoir));
            }
        }
    }
}
