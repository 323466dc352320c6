//! Closed-loop experiments: configuration, trials, sweeps and file output.

pub mod config;
pub mod noise;
pub mod output;
pub mod sweep;
pub mod trial;
pub mod verify;

pub use config::{Channel, ExperimentConfig, Limits, NoiseConfig, ReferenceSpec, Timing, VerifyConfig};
pub use noise::{NoiseModel, NoiseStream, RNG_ALGORITHM};
pub use sweep::{
    mean, quantile, run_trials, sweep_noise, track_path, NoiseAggregate, PathAggregate, PathErrorStats, SweepOutcome,
};
pub use trial::{average_output_error, run_trial, ControllerFactory, SeriesRow, TrialResult, TrialSpec, TrialStatus};
