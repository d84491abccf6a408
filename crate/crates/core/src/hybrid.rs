//! Wiring of the knowledge-based model into the reservoir pipeline and the
//! associated dimension bookkeeping for the four configurations.

use crate::error::{CoreError, Result};

/// Which hybrid wiring is active. Config/CLI names: "reservoir", "ih", "oh", "fh".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HybridMode {
    Reservoir,
    InputHybrid,
    OutputHybrid,
    FullHybrid,
}

impl HybridMode {
    pub const ALL: [HybridMode; 4] = [
        HybridMode::Reservoir,
        HybridMode::InputHybrid,
        HybridMode::OutputHybrid,
        HybridMode::FullHybrid,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            HybridMode::Reservoir => "reservoir",
            HybridMode::InputHybrid => "ih",
            HybridMode::OutputHybrid => "oh",
            HybridMode::FullHybrid => "fh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reservoir" => Ok(HybridMode::Reservoir),
            "ih" => Ok(HybridMode::InputHybrid),
            "oh" => Ok(HybridMode::OutputHybrid),
            "fh" => Ok(HybridMode::FullHybrid),
            other => Err(CoreError::InvalidParam(format!(
                "unknown mode '{other}' (expected reservoir|ih|oh|fh)"
            ))),
        }
    }

    /// KBM prediction concatenated onto the reservoir input?
    pub fn kbm_in_input(&self) -> bool {
        matches!(self, HybridMode::InputHybrid | HybridMode::FullHybrid)
    }

    /// KBM prediction concatenated onto the readout features?
    pub fn kbm_in_readout(&self) -> bool {
        matches!(self, HybridMode::OutputHybrid | HybridMode::FullHybrid)
    }

    /// Does the pipeline evaluate the KBM at all?
    pub fn uses_kbm(&self) -> bool {
        !matches!(self, HybridMode::Reservoir)
    }
}

impl std::fmt::Display for HybridMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the KBM block enters the readout: the full sigma^2 * 2 patch or only
/// the 2 center values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KbmReadout {
    Patch,
    Center,
}

impl KbmReadout {
    pub fn as_str(&self) -> &'static str {
        match self {
            KbmReadout::Patch => "patch",
            KbmReadout::Center => "center",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "patch" => Ok(KbmReadout::Patch),
            "center" => Ok(KbmReadout::Center),
            other => Err(CoreError::InvalidParam(format!(
                "unknown kbm readout '{other}' (expected patch|center)"
            ))),
        }
    }
}

/// Readout feature options. Defaults: augmented state [r, r^2] and the full
/// KBM patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadoutOptions {
    pub augmented: bool,
    pub kbm_readout: KbmReadout,
}

impl Default for ReadoutOptions {
    fn default() -> Self {
        ReadoutOptions {
            augmented: true,
            kbm_readout: KbmReadout::Patch,
        }
    }
}

/// Per-reservoir dimension plan. `r_feat_dim` is the width of the reservoir
/// block inside the readout features (2 r_dim augmented, r_dim raw);
/// `h_dim - r_feat_dim` is the KBM block width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimPlan {
    pub u_dim: usize,
    pub k_dim: usize,
    pub x_dim: usize,
    pub h_dim: usize,
    pub y_dim: usize,
    pub r_feat_dim: usize,
}

impl DimPlan {
    pub fn kbm_feat_dim(&self) -> usize {
        self.h_dim - self.r_feat_dim
    }
}

/// Mode-consistent dimension plan with the default readout options.
pub fn plan_dims(mode: HybridMode, r_dim: usize, sigma: usize) -> Result<DimPlan> {
    plan_dims_with(mode, r_dim, sigma, ReadoutOptions::default())
}

pub fn plan_dims_with(
    mode: HybridMode,
    r_dim: usize,
    sigma: usize,
    opts: ReadoutOptions,
) -> Result<DimPlan> {
    if sigma < 1 || sigma % 2 == 0 {
        return Err(CoreError::InvalidParam(format!(
            "sigma = {sigma} must be odd and >= 1"
        )));
    }
    let u_dim = 2 * sigma * sigma;
    let k_dim = u_dim;
    let x_dim = if mode.kbm_in_input() { u_dim + k_dim } else { u_dim };
    let r_feat_dim = if opts.augmented { 2 * r_dim } else { r_dim };
    let k_feat = if mode.kbm_in_readout() {
        match opts.kbm_readout {
            KbmReadout::Patch => k_dim,
            KbmReadout::Center => 2,
        }
    } else {
        0
    };
    Ok(DimPlan {
        u_dim,
        k_dim,
        x_dim,
        h_dim: r_feat_dim + k_feat,
        y_dim: 2,
        r_feat_dim,
    })
}

/// Reservoir input vector: IH/FH append the KBM patch after the data patch.
pub fn assemble_input(mode: HybridMode, u_patch: &[f64], k_patch: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(u_patch.len() + k_patch.len());
    assemble_input_into(mode, u_patch, k_patch, &mut out);
    out
}

pub fn assemble_input_into(mode: HybridMode, u_patch: &[f64], k_patch: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(u_patch);
    if mode.kbm_in_input() {
        out.extend_from_slice(k_patch);
    }
}

/// Readout feature vector: OH/FH append the KBM block after the reservoir block.
pub fn assemble_features(mode: HybridMode, r_feat: &[f64], k_patch: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(r_feat.len() + k_patch.len());
    assemble_features_into(mode, r_feat, k_patch, &mut out);
    out
}

pub fn assemble_features_into(mode: HybridMode, r_feat: &[f64], k_patch: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(r_feat);
    if mode.kbm_in_readout() {
        out.extend_from_slice(k_patch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mode_names_round_trip() {
        for mode in HybridMode::ALL {
            assert_eq!(HybridMode::parse(mode.as_str()).unwrap(), mode);
        }
        assert!(HybridMode::parse("hybrid").is_err());
    }

    #[test]
    fn plan_dims_paper_cases() {
        let p = plan_dims(HybridMode::Reservoir, 400, 3).unwrap();
        assert_eq!((p.x_dim, p.h_dim, p.y_dim), (18, 800, 2));

        let p = plan_dims(HybridMode::InputHybrid, 400, 3).unwrap();
        assert_eq!((p.x_dim, p.h_dim), (36, 800));

        let p = plan_dims(HybridMode::OutputHybrid, 100, 3).unwrap();
        assert_eq!((p.x_dim, p.h_dim), (18, 218));

        let p = plan_dims(HybridMode::FullHybrid, 100, 3).unwrap();
        assert_eq!((p.x_dim, p.h_dim), (36, 218));
    }

    #[test]
    fn plan_dims_rejects_even_sigma() {
        assert!(plan_dims(HybridMode::Reservoir, 100, 2).is_err());
        assert!(plan_dims(HybridMode::Reservoir, 100, 0).is_err());
    }

    #[test]
    fn plan_dims_options() {
        let p = plan_dims_with(
            HybridMode::OutputHybrid,
            100,
            3,
            ReadoutOptions {
                augmented: false,
                kbm_readout: KbmReadout::Center,
            },
        )
        .unwrap();
        assert_eq!(p.h_dim, 102);
        assert_eq!(p.r_feat_dim, 100);
        assert_eq!(p.kbm_feat_dim(), 2);
    }

    #[test]
    fn assemble_examples() {
        let u = vec![1.0, 2.0];
        let k = vec![9.0, 9.0];
        assert_eq!(assemble_input(HybridMode::Reservoir, &u, &k), u);
        assert_eq!(assemble_input(HybridMode::OutputHybrid, &u, &k), u);
        assert_eq!(
            assemble_input(HybridMode::InputHybrid, &u, &k),
            vec![1.0, 2.0, 9.0, 9.0]
        );

        let r: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let kp: Vec<f64> = (0..18).map(|v| v as f64 * 0.1).collect();
        assert_eq!(assemble_features(HybridMode::Reservoir, &r, &kp), r);
        let oh = assemble_features(HybridMode::OutputHybrid, &r, &kp);
        assert_eq!(oh.len(), 26);
        assert_eq!(&oh[8..], kp.as_slice());
    }

    #[test]
    fn fh_composes_from_ih_and_oh() {
        let u = vec![0.5; 18];
        let k = vec![0.25; 18];
        let r = vec![0.1; 16];
        assert_eq!(
            assemble_input(HybridMode::FullHybrid, &u, &k),
            assemble_input(HybridMode::InputHybrid, &u, &k)
        );
        assert_eq!(
            assemble_features(HybridMode::FullHybrid, &r, &k),
            assemble_features(HybridMode::OutputHybrid, &r, &k)
        );
    }

    proptest! {
        #[test]
        fn assembled_lengths_match_plan(mode_idx in 0usize..4, r_dim in 1usize..50, sig_idx in 0usize..3) {
            let mode = HybridMode::ALL[mode_idx];
            let sigma = [1usize, 3, 5][sig_idx];
            let plan = plan_dims(mode, r_dim, sigma).unwrap();
            let u = vec![0.0; plan.u_dim];
            let k = vec![0.0; plan.k_dim];
            let r_feat = vec![0.0; plan.r_feat_dim];
            prop_assert_eq!(assemble_input(mode, &u, &k).len(), plan.x_dim);
            prop_assert_eq!(assemble_features(mode, &r_feat, &k).len(), plan.h_dim);
        }
    }
}
