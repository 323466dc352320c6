use rayon::prelude::*;

use crate::control::ControllerKind;
use crate::error::{Error, Result};

use super::config::{ExperimentConfig, ReferenceSpec};
use super::trial::{run_trial, ControllerFactory, TrialResult, TrialSpec};

/// Runs every spec in parallel; results come back in the order given.
pub fn run_trials(factory: &ControllerFactory, specs: &[TrialSpec]) -> Result<Vec<TrialResult>> {
    specs.par_iter().map(|s| run_trial(factory, *s)).collect()
}

/// Specs ordered by (controller, level, trial).
fn specs(controllers: &[ControllerKind], levels: &[(f64, Option<f64>)], trials: usize) -> Vec<TrialSpec> {
    let mut out = Vec::with_capacity(controllers.len() * levels.len() * trials);
    for &controller in controllers {
        for &(sigma, speed) in levels {
            for trial in 0..trials {
                out.push(TrialSpec { controller, sigma, speed, trial });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAggregate {
    pub controller: ControllerKind,
    pub sigma: f64,
    pub trials: usize,
    pub failed: usize,
    /// Mean average-output-error over successful trials.
    pub mean_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome<A> {
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<A>,
}

pub fn sweep_noise(
    config: &ExperimentConfig,
    controllers: &[ControllerKind],
    sigmas: &[f64],
    trials: usize,
) -> Result<SweepOutcome<NoiseAggregate>> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let factory = ControllerFactory::new(config, controllers)?;
    let levels: Vec<_> = sigmas.iter().map(|s| (*s, None)).collect();
    let results = run_trials(&factory, &specs(controllers, &levels, trials))?;
    let aggregates = results
        .chunks(trials)
        .map(|group| {
            let errors: Vec<f64> = group.iter().filter_map(|r| r.average_output_error()).collect();
            NoiseAggregate {
                controller: group[0].spec.controller,
                sigma: group[0].spec.sigma,
                trials: group.len(),
                failed: group.len() - errors.len(),
                mean_error: mean(&errors),
            }
        })
        .collect();
    Ok(SweepOutcome { trials: results, aggregates })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathErrorStats {
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
    pub max: f64,
}

impl PathErrorStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            median: quantile(&sorted, 0.5),
            lower_quartile: quantile(&sorted, 0.25),
            upper_quartile: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathAggregate {
    pub controller: ControllerKind,
    pub speed: f64,
    pub trials: usize,
    pub failed: usize,
    /// Pooled over the steps of all successful trials.
    pub stats: Option<PathErrorStats>,
}

impl PathAggregate {
    pub fn unstable(&self) -> bool {
        self.failed > 0
    }
}

pub fn track_path(
    config: &ExperimentConfig,
    controllers: &[ControllerKind],
    speeds: &[f64],
    trials: usize,
) -> Result<SweepOutcome<PathAggregate>> {
    if !matches!(config.reference, ReferenceSpec::Path { .. }) {
        return Err(Error::InvalidParameter("track-path needs a path reference".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if speeds.is_empty() || speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!("path speeds must be positive, got {speeds:?}")));
    }
    let factory = ControllerFactory::new(config, controllers)?;
    let levels: Vec<_> = speeds.iter().map(|v| (config.noise.sigma, Some(*v))).collect();
    let results = run_trials(&factory, &specs(controllers, &levels, trials))?;
    let aggregates = results
        .chunks(trials)
        .map(|group| {
            let ok: Vec<&TrialResult> = group.iter().filter(|r| r.status.is_success()).collect();
            let pooled: Vec<f64> = ok.iter().flat_map(|r| r.path_errors.iter().copied()).collect();
            PathAggregate {
                controller: group[0].spec.controller,
                speed: group[0].spec.speed.expect("path trials carry a speed"),
                trials: group.len(),
                failed: group.len() - ok.len(),
                stats: PathErrorStats::from_samples(&pooled),
            }
        })
        .collect();
    Ok(SweepOutcome { trials: results, aggregates })
}
