//! Hybrid reservoir computing for 2D excitable-medium forecasting.
//!
//! Pipeline: simulate the Barkley model ([`barkley`]), train per-grid-point
//! echo-state reservoirs on local sigma x sigma patches ([`reservoir`],
//! [`local_states`]) optionally wired to an imperfect physics-based one-step
//! predictor ([`hybrid`]), run closed-loop forecasts, and score them
//! ([`metrics`]) across seeded ensembles and parameter sweeps
//! ([`experiment`]).

pub mod barkley;
pub mod error;
pub mod experiment;
pub mod field;
pub mod hybrid;
pub mod local_states;
pub mod metrics;
pub mod reservoir;

pub use barkley::{
    barkley_step, default_initial_condition, make_epsilon_model, simulate, BarkleyParams,
    ModelError,
};
pub use error::{CoreError, Result};
pub use experiment::{
    aggregate, partition_sections, run_ensemble, run_sweep, run_wout_study, EnsembleConfig,
    RunRecord, RunSetup, Section, SummaryRow, SweepConfig, SweepParameter, SweepRow,
    TrainingSection, WoutRow, DEFAULT_E_MAX, DEFAULT_MODEL_ERRORS,
};
pub use field::{Field, FieldPair};
pub use hybrid::{plan_dims, plan_dims_with, DimPlan, HybridMode, KbmReadout, ReadoutOptions};
pub use local_states::{
    build_local_dataset, build_matrix_store, extract_patch, predict_closed_loop, train_all,
    train_all_with_matrices, LocalDataset, MatrixSharing, MatrixStore, PatchSpec, PredictError,
    Prediction, ReservoirGrid, TrainOptions,
};
pub use metrics::{
    error_field, grid_contribution, normalized_error, valid_time, wout_contribution,
    ContributionReport, ContributionWeighting, ErrorSeries, Shares, ValidTime,
};
pub use reservoir::{
    augment, build_adjacency, build_input_matrix, spectral_radius, train_readout, Readout,
    ReservoirMatrices, ReservoirSpec, ReservoirState,
};
