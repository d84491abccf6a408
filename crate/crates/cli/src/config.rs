//! Flat JSON run configuration with presets, validation, and a content hash
//! embedded into every output artifact.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use lsrc_core::hybrid::{KbmReadout, ReadoutOptions};
use lsrc_core::local_states::MatrixSharing;
use lsrc_core::metrics::ContributionWeighting;
use lsrc_core::{
    BarkleyParams, EnsembleConfig, HybridMode, PatchSpec, ReservoirSpec, RunSetup, TrainOptions,
};

/// Flat, namespaced key set; unknown keys are rejected so stale configs fail
/// loudly. CLI flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // simulator
    pub sim_nx: usize,
    pub sim_ny: usize,
    pub sim_d: f64,
    pub sim_a: f64,
    pub sim_b: f64,
    pub sim_eps: f64,
    pub sim_dt: f64,
    pub sim_dx: f64,
    pub sim_init_seed: u64,
    // knowledge-based model and input noise
    pub model_error: f64,
    pub noise_alpha: f64,
    // reservoir
    pub res_dim: usize,
    pub res_kappa: usize,
    pub res_rho: f64,
    pub res_beta: f64,
    // hybrid wiring and local states
    pub mode: String,
    pub sigma: usize,
    pub matrix_sharing: String,
    pub augmented_features: bool,
    pub kbm_readout: String,
    pub contribution_weighting: String,
    // ensemble sectioning
    pub n_t: usize,
    pub n_p: usize,
    pub n_td: usize,
    pub n_ts: usize,
    pub n_tr: usize,
    pub n_pd: usize,
    pub n_ps: usize,
    pub n_pr: usize,
    // scoring
    pub e_max: f64,
    /// Optional largest Lyapunov exponent; adds a Lyapunov-time column to
    /// valid-time outputs when set.
    pub lyapunov_max: Option<f64>,
    // ensemble grids (each defaults to the scalar setting above)
    pub modes: Option<Vec<String>>,
    pub r_dims: Option<Vec<usize>>,
    pub model_errors: Option<Vec<f64>>,
    // sweep
    pub sweep_parameter: Option<String>,
    pub sweep_values: Option<Vec<f64>>,
    // readout-contribution study
    pub wout_n_a: usize,
    pub wout_errors: Vec<f64>,
    // run command extras
    pub snapshot_steps: Vec<usize>,
    pub heatmap_lo: f64,
    pub heatmap_hi: f64,
    // execution
    pub seed: u64,
    pub threads: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    fn base() -> Self {
        let p = BarkleyParams::default();
        RunConfig {
            sim_nx: p.nx,
            sim_ny: p.ny,
            sim_d: p.d,
            sim_a: p.a,
            sim_b: p.b,
            sim_eps: p.eps,
            sim_dt: p.dt,
            sim_dx: p.dx,
            sim_init_seed: 1,
            model_error: 0.0,
            noise_alpha: 1e-6,
            res_dim: 400,
            res_kappa: 3,
            res_rho: 0.5,
            res_beta: 1e-6,
            mode: "oh".into(),
            sigma: 3,
            matrix_sharing: "shared".into(),
            augmented_features: true,
            kbm_readout: "patch".into(),
            contribution_weighting: "weight-mass".into(),
            n_t: 1,
            n_p: 1,
            n_td: 2000,
            n_ts: 200,
            n_tr: 30000,
            n_pd: 0,
            n_ps: 200,
            n_pr: 8000,
            e_max: 0.2,
            lyapunov_max: None,
            modes: None,
            r_dims: None,
            model_errors: None,
            sweep_parameter: None,
            sweep_values: None,
            wout_n_a: 4,
            wout_errors: lsrc_core::DEFAULT_MODEL_ERRORS.to_vec(),
            snapshot_steps: Vec::new(),
            heatmap_lo: 0.0,
            heatmap_hi: 1.0,
            seed: 1,
            threads: 1,
            out_dir: "out".into(),
        }
    }

    /// Full-size configuration matching the reference experiments
    /// (80x80 grid, 30,000 training steps, ~24 h per cell).
    pub fn paper() -> Self {
        RunConfig::base()
    }

    /// Small configuration sized for workstation runs: 40x40 grid, 5,000
    /// training steps, 2,000 prediction steps, 2 trainings x 3 predictions.
    pub fn desk() -> Self {
        RunConfig {
            sim_nx: 40,
            sim_ny: 40,
            res_dim: 100,
            n_t: 2,
            n_p: 3,
            n_td: 2000,
            n_ts: 200,
            n_tr: 5000,
            n_pd: 200,
            n_ps: 200,
            n_pr: 2000,
            ..RunConfig::base()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(RunConfig::paper()),
            "desk" => Ok(RunConfig::desk()),
            other => bail!("unknown preset '{other}' (expected paper|desk)"),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")
            .with_context(|| format!("writing config {}", path.display()))?;
        Ok(())
    }

    /// The config with execution-only fields (worker threads, output
    /// location) pinned: they affect where and how fast results are produced,
    /// never what is produced, so they are excluded from the content hash.
    fn canonical(&self) -> RunConfig {
        RunConfig {
            threads: 1,
            out_dir: "out".into(),
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical (serde field order) JSON serialization.
    pub fn hash(&self) -> String {
        let mut out = String::with_capacity(64);
        for b in self.hash_bytes() {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        let canonical =
            serde_json::to_string(&self.canonical()).expect("config is serializable");
        Sha256::digest(canonical.as_bytes()).into()
    }

    pub fn barkley(&self) -> BarkleyParams {
        BarkleyParams {
            d: self.sim_d,
            a: self.sim_a,
            b: self.sim_b,
            eps: self.sim_eps,
            dt: self.sim_dt,
            dx: self.sim_dx,
            nx: self.sim_nx,
            ny: self.sim_ny,
        }
    }

    pub fn hybrid_mode(&self) -> Result<HybridMode> {
        Ok(HybridMode::parse(&self.mode)?)
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            n_t: self.n_t,
            n_p: self.n_p,
            n_td: self.n_td,
            n_ts: self.n_ts,
            n_tr: self.n_tr,
            n_pd: self.n_pd,
            n_ps: self.n_ps,
            n_pr: self.n_pr,
        }
    }

    pub fn setup(&self) -> Result<RunSetup> {
        let opts = TrainOptions {
            sharing: MatrixSharing::parse(&self.matrix_sharing)?,
            readout: ReadoutOptions {
                augmented: self.augmented_features,
                kbm_readout: match self.kbm_readout.as_str() {
                    "patch" => KbmReadout::Patch,
                    "center" => KbmReadout::Center,
                    other => bail!("unknown kbm_readout '{other}' (expected patch|center)"),
                },
            },
        };
        Ok(RunSetup {
            truth_params: self.barkley(),
            model_error: self.model_error,
            mode: self.hybrid_mode()?,
            spec: ReservoirSpec {
                r_dim: self.res_dim,
                kappa: self.res_kappa,
                rho: self.res_rho,
                beta: self.res_beta,
                seed: self.seed,
            },
            patch: PatchSpec { sigma: self.sigma },
            opts,
            alpha: self.noise_alpha,
            seed: self.seed,
            e_max: self.e_max,
            weighting: ContributionWeighting::parse(&self.contribution_weighting)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.setup()?;
        self.ensemble().validate()?;
        if self.heatmap_hi <= self.heatmap_lo {
            bail!("heatmap range must satisfy lo < hi");
        }
        if self.threads == 0 {
            bail!("threads must be >= 1");
        }
        Ok(())
    }

    /// Trajectory steps a full sectioned run consumes.
    pub fn required_steps(&self) -> usize {
        self.ensemble().required_steps()
    }
}
