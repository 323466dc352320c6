use std::sync::Arc;

use crate::control::{
    Controller2D, ControllerKind, DfController, DfSolver, FmpcController, FmpcSolver, GeometricPath, PdController,
    ReferenceTrajectory,
};
use crate::error::Result;
use crate::flat::OutputSample2D;
use crate::models::{DiscreteModel, Input2D, Planar2D, State2D, StepSize};

use super::config::{ExperimentConfig, ReferenceSpec};
use super::noise::NoiseModel;

/// Builds controllers for one configuration, sharing the factored QPs between trials.
#[derive(Debug, Clone)]
pub struct ControllerFactory {
    config: ExperimentConfig,
    dt: StepSize,
    df: Option<Arc<DfSolver>>,
    fmpc: Option<Arc<FmpcSolver>>,
}

impl ControllerFactory {
    pub fn new(config: &ExperimentConfig, kinds: &[ControllerKind]) -> Result<Self> {
        config.validate()?;
        let dt = config.timing.controller_step()?;
        let c = &config.controllers;
        let df = if kinds.contains(&ControllerKind::Df) {
            Some(Arc::new(DfSolver::new(c.df.clone(), config.plant, dt)?))
        } else {
            None
        };
        let fmpc = if kinds.contains(&ControllerKind::Fmpc) {
            Some(Arc::new(FmpcSolver::new(c.fmpc.clone(), config.plant, dt)?))
        } else {
            None
        };
        Ok(Self { config: config.clone(), dt, df, fmpc })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn build(&self, kind: ControllerKind) -> Result<Box<dyn Controller2D>> {
        let limit = self.config.limits.command_limit;
        Ok(match kind {
            ControllerKind::Df => {
                let solver = match &self.df {
                    Some(s) => s.clone(),
                    None => Arc::new(DfSolver::new(self.config.controllers.df.clone(), self.config.plant, self.dt)?),
                };
                Box::new(DfController::new(solver, limit))
            }
            ControllerKind::Fmpc => {
                let solver = match &self.fmpc {
                    Some(s) => s.clone(),
                    None => {
                        Arc::new(FmpcSolver::new(self.config.controllers.fmpc.clone(), self.config.plant, self.dt)?)
                    }
                };
                Box::new(FmpcController::new(solver, limit))
            }
            ControllerKind::Pd => {
                Box::new(PdController::new(self.config.controllers.pd.clone(), self.config.plant.yaw, self.dt, limit)?)
            }
        })
    }
}

/// What a trial is asked to do.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSpec {
    pub controller: ControllerKind,
    pub sigma: f64,
    /// Path speed; `None` for fixed-point references.
    pub speed: Option<f64>,
    pub trial: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Completed,
    /// An output left the instability bound at this step.
    Unstable {
        step: usize,
    },
    /// The plant or controller returned an error at this step.
    Failed {
        step: usize,
        reason: String,
    },
}

impl TrialStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, TrialStatus::Completed)
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrialStatus::Completed => "completed",
            TrialStatus::Unstable { .. } => "unstable",
            TrialStatus::Failed { .. } => "failed",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            TrialStatus::Completed => String::new(),
            TrialStatus::Unstable { step } => format!("output bound exceeded at step {step}"),
            TrialStatus::Failed { step, reason } => format!("step {step}: {reason}"),
        }
    }
}

/// One controller step of a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub step: usize,
    pub t: f64,
    pub truth: OutputSample2D,
    pub measured: OutputSample2D,
    pub reference: OutputSample2D,
    pub input: Input2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub spec: TrialSpec,
    pub status: TrialStatus,
    pub series: Vec<SeriesRow>,
    /// Distance from the true output to the path at each step (path references only).
    pub path_errors: Vec<f64>,
}

impl TrialResult {
    /// Mean over controller steps of `|y_true - y_ref|`; `None` unless the trial completed.
    pub fn average_output_error(&self) -> Option<f64> {
        if !self.status.is_success() || self.series.is_empty() {
            return None;
        }
        Some(average_output_error(&self.series))
    }
}

pub fn average_output_error(series: &[SeriesRow]) -> f64 {
    series.iter().map(|r| (r.truth - r.reference).norm()).sum::<f64>() / series.len() as f64
}

/// Runs one closed-loop trial. Noise for trial `spec.trial` comes from stream
/// `spec.trial` of the configured seed, so it is shared across controllers and
/// noise levels.
pub fn run_trial(factory: &ControllerFactory, spec: TrialSpec) -> Result<TrialResult> {
    let cfg = factory.config();
    let dt = cfg.timing.controller_step()?;
    let substeps = cfg.timing.substeps()?;
    let plant_step = dt.subdivide(substeps)?;
    let plant = Planar2D::new(cfg.plant)?;
    let mut controller = factory.build(spec.controller)?;
    let steps = cfg.controller_steps(spec.speed)?;
    let mut noise = NoiseModel::new(spec.sigma, cfg.noise.channel_mask(), cfg.seed).stream(spec.trial as u64);

    let path: Option<GeometricPath> = cfg.reference.path()?;
    let (mut state, target) = match &cfg.reference {
        ReferenceSpec::Point { target, start } => {
            (State2D::at_rest(OutputSample2D::new(start[0], start[1])), Some(OutputSample2D::new(target[0], target[1])))
        }
        ReferenceSpec::Path { .. } => {
            let first = path.as_ref().expect("path reference").waypoints()[0];
            (State2D::at_rest(first), None)
        }
    };
    let speed = spec.speed.unwrap_or(match &cfg.reference {
        ReferenceSpec::Path { speeds, .. } => speeds[0],
        ReferenceSpec::Point { .. } => 0.0,
    });
    let horizon = controller.reference_len() - 1;

    let mut series = Vec::with_capacity(steps);
    let mut path_errors = Vec::new();
    let mut status = TrialStatus::Completed;
    for step in 0..steps {
        let truth = state.position;
        if !truth.iter().all(|v| v.is_finite() && v.abs() <= cfg.limits.instability_bound) {
            status = TrialStatus::Unstable { step };
            break;
        }
        let measured = noise.measure(&truth);
        let reference = match (&path, target) {
            (Some(p), _) => match p.reference(&measured, speed, horizon, dt) {
                Ok(r) => r,
                Err(e) => {
                    status = TrialStatus::Failed { step, reason: e.to_string() };
                    break;
                }
            },
            (None, Some(t)) => ReferenceTrajectory::constant(t, horizon + 1),
            (None, None) => unreachable!("reference is either a point or a path"),
        };
        let input = match controller.step(measured, &reference) {
            Ok(u) => u,
            Err(e) => {
                status = TrialStatus::Failed { step, reason: e.to_string() };
                break;
            }
        };
        series.push(SeriesRow {
            step,
            t: step as f64 * dt.seconds(),
            truth,
            measured,
            reference: reference.current(),
            input,
        });
        if let Some(p) = &path {
            path_errors.push(p.distance(&truth));
        }
        for _ in 0..substeps {
            match plant.euler_step(&state, &input, plant_step) {
                Ok(next) => state = next,
                Err(e) => {
                    status = TrialStatus::Failed { step, reason: e.to_string() };
                    break;
                }
            }
        }
        if !status.is_success() {
            break;
        }
    }
    Ok(TrialResult { spec, status, series, path_errors })
}
