//! Output-feedback predictive control on the discrete-time flat output.
//!
//! The decision vector is the output trajectory `y_k..y_{k+N}` (time-major,
//! two channels per step). The first three samples are pinned to the current
//! measurement and its model-based continuation under the two inputs already
//! sent; the remainder trades tracking error against the third difference of
//! the trajectory. The command is read off the first four optimal samples.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use super::{
    checked, identity_weight, weight_matrix, Controller2D, ControllerHistory, ControllerKind, ReferenceTrajectory,
    Weight2, WINDOW,
};
use crate::error::{Error, Result};
use crate::flat::{FlatMap2D, OutputSample2D, INPUT_WINDOW_2D};
use crate::models::{Input2D, Params2D, StepSize};
use crate::qp::{KktFactorization, PinnedBandSolver, QpSolution};

const CHANNELS: usize = 2;
const PINNED: usize = WINDOW * CHANNELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DfConfig {
    pub horizon: usize,
    pub tracking_weight: Weight2,
    /// Weight on the third difference of the output trajectory.
    pub regularization_weight: Weight2,
}

impl Default for DfConfig {
    fn default() -> Self {
        Self { horizon: 200, tracking_weight: identity_weight(1.0), regularization_weight: identity_weight(1.5625e8) }
    }
}

impl DfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < WINDOW {
            return Err(Error::InvalidParameter(format!("df horizon must be at least {WINDOW}, got {}", self.horizon)));
        }
        weight_matrix("df tracking_weight", &self.tracking_weight)?;
        weight_matrix("df regularization_weight", &self.regularization_weight)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Band(PinnedBandSolver),
    Dense(KktFactorization),
}

/// Factored DF problem; the Hessian depends only on the configuration.
#[derive(Debug, Clone)]
pub struct DfSolver {
    config: DfConfig,
    /// Normalized tracking weight.
    tracking: Matrix2<f64>,
    scale: f64,
    flat: FlatMap2D,
    backend: Backend,
}

/// Optimal trajectory and the command derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DfPlan {
    pub pinned: [OutputSample2D; WINDOW],
    pub trajectory: Vec<OutputSample2D>,
    pub solution: QpSolution,
    pub input: Input2D,
}

fn hessian(config: &DfConfig, tracking: &Matrix2<f64>, regularization: &Matrix2<f64>) -> DMatrix<f64> {
    let steps = config.horizon + 1;
    let n = steps * CHANNELS;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..steps {
        for a in 0..CHANNELS {
            for b in 0..CHANNELS {
                h[(i * CHANNELS + a, i * CHANNELS + b)] += 2.0 * tracking[(a, b)];
            }
        }
    }
    const STENCIL: [f64; 4] = [-1.0, 3.0, -3.0, 1.0];
    for j in 0..steps.saturating_sub(3) {
        for (p, cp) in STENCIL.iter().enumerate() {
            for (q, cq) in STENCIL.iter().enumerate() {
                for a in 0..CHANNELS {
                    for b in 0..CHANNELS {
                        h[((j + p) * CHANNELS + a, (j + q) * CHANNELS + b)] += 2.0 * cp * cq * regularization[(a, b)];
                    }
                }
            }
        }
    }
    h
}

impl DfSolver {
    pub fn new(config: DfConfig, params: Params2D, dt: StepSize) -> Result<Self> {
        Self::build(config, params, dt, false)
    }

    /// Same problem solved through the general KKT factorization.
    pub fn with_dense_backend(config: DfConfig, params: Params2D, dt: StepSize) -> Result<Self> {
        Self::build(config, params, dt, true)
    }

    fn build(config: DfConfig, params: Params2D, dt: StepSize, dense: bool) -> Result<Self> {
        config.validate()?;
        let flat = FlatMap2D::new(params, dt)?;
        let tracking = weight_matrix("df tracking_weight", &config.tracking_weight)?;
        let regularization = weight_matrix("df regularization_weight", &config.regularization_weight)?;
        // Dividing by the largest weight leaves the argmin unchanged and makes the
        // dominant block exact, so scaled weight pairs give (nearly) identical matrices.
        let scale = tracking.amax().max(regularization.amax());
        if !(scale > 0.0) {
            return Err(Error::InvalidParameter("df weights are all zero".into()));
        }
        let tracking = tracking / scale;
        let h = hessian(&config, &tracking, &(regularization / scale));
        let backend = match (dense, PinnedBandSolver::new(&h, PINNED)) {
            (false, Ok(band)) => Backend::Band(band),
            _ => {
                let n = h.nrows();
                let mut a = DMatrix::zeros(PINNED, n);
                for i in 0..PINNED {
                    a[(i, i)] = 1.0;
                }
                Backend::Dense(KktFactorization::new(&h, &a)?)
            }
        };
        Ok(Self { config, tracking, scale, flat, backend })
    }

    pub fn config(&self) -> &DfConfig {
        &self.config
    }

    pub fn uses_band_backend(&self) -> bool {
        matches!(self.backend, Backend::Band(_))
    }

    /// Outputs at `k`, `k+1`, `k+2` implied by the history.
    pub fn pinned_outputs(&self, history: &ControllerHistory) -> Result<[OutputSample2D; WINDOW]> {
        let ys = history.outputs()?;
        let us = history.inputs()?;
        let next = self.flat.input_to_output(&ys, &us[0])?;
        let after = self.flat.input_to_output(&[ys[1], ys[2], next], &us[1])?;
        Ok([ys[2], next, after])
    }

    pub fn plan(&self, history: &ControllerHistory, reference: &ReferenceTrajectory) -> Result<DfPlan> {
        let steps = self.config.horizon + 1;
        reference.require(steps)?;
        let pinned = self.pinned_outputs(history)?;

        // Solve for the offset from the current output. Constant trajectories carry no
        // regularization cost, so the shift is exact and keeps rounding relative to the
        // tracking error rather than the absolute position.
        let origin = pinned[0];
        let mut gradient = DVector::zeros(steps * CHANNELS);
        for (i, r) in reference.samples[..steps].iter().enumerate() {
            let qr = self.tracking * (r - origin);
            gradient[i * CHANNELS] = -2.0 * qr.x;
            gradient[i * CHANNELS + 1] = -2.0 * qr.y;
        }
        let values = DVector::from_iterator(PINNED, pinned.iter().flat_map(|y| [y.x - origin.x, y.y - origin.y]));
        let mut solution = match &self.backend {
            Backend::Band(band) => band.solve(&gradient, &values)?,
            Backend::Dense(kkt) => kkt.solve(&gradient, &values)?,
        };
        solution.multipliers *= self.scale;
        for i in 0..steps {
            solution.primal[i * CHANNELS] += origin.x;
            solution.primal[i * CHANNELS + 1] += origin.y;
        }
        let trajectory: Vec<_> = (0..steps)
            .map(|i| OutputSample2D::new(solution.primal[i * CHANNELS], solution.primal[i * CHANNELS + 1]))
            .collect();
        let input = self.flat.output_to_input(&trajectory[..INPUT_WINDOW_2D])?;
        Ok(DfPlan { pinned, trajectory, solution, input })
    }
}

/// One unsaturated DF command from a full history.
pub fn df_predictive_step(
    history: &ControllerHistory,
    reference: &ReferenceTrajectory,
    config: &DfConfig,
    params: &Params2D,
    dt: StepSize,
) -> Result<Input2D> {
    Ok(DfSolver::new(config.clone(), *params, dt)?.plan(history, reference)?.input)
}

#[derive(Debug, Clone)]
pub struct DfController {
    solver: Arc<DfSolver>,
    history: ControllerHistory,
    command_limit: f64,
}

impl DfController {
    pub fn new(solver: Arc<DfSolver>, command_limit: f64) -> Self {
        Self { solver, history: ControllerHistory::new(), command_limit }
    }

    pub fn history(&self) -> &ControllerHistory {
        &self.history
    }
}

impl Controller2D for DfController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Df
    }

    fn reference_len(&self) -> usize {
        self.solver.config.horizon + 1
    }

    fn step(&mut self, measurement: OutputSample2D, reference: &ReferenceTrajectory) -> Result<Input2D> {
        self.history.push_output(measurement);
        let input = if self.history.is_full() {
            checked(self.solver.plan(&self.history, reference)?.input)?.saturated(self.command_limit)
        } else {
            Input2D::default()
        };
        self.history.push_input(input);
        Ok(input)
    }
}
