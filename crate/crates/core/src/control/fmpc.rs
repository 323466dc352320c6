//! Baseline: MPC on a triple-integrator flat model, fed by finite differences of the
//! measured output, with commands recovered by feedback linearization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use super::{
    checked, identity_weight, weight_matrix, Controller2D, ControllerHistory, ControllerKind, ReferenceTrajectory,
    Weight2, WINDOW,
};
use crate::error::{Error, Result};
use crate::flat::OutputSample2D;
use crate::models::{Input2D, Params2D, StepSize};
use crate::qp::KktFactorization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FmpcConfig {
    pub horizon: usize,
    pub tracking_weight: Weight2,
    pub jerk_weight: Weight2,
}

impl Default for FmpcConfig {
    fn default() -> Self {
        Self { horizon: 200, tracking_weight: identity_weight(1.0), jerk_weight: identity_weight(1e-2) }
    }
}

impl FmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("fmpc horizon must be at least 1".into()));
        }
        weight_matrix("fmpc tracking_weight", &self.tracking_weight)?;
        weight_matrix("fmpc jerk_weight", &self.jerk_weight)?;
        Ok(())
    }
}

/// Position, velocity and acceleration of both output channels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatState {
    pub position: OutputSample2D,
    pub velocity: OutputSample2D,
    pub acceleration: OutputSample2D,
}

impl FlatState {
    /// First-order backward differences over three consecutive measurements.
    pub fn from_measurements(ys: &[OutputSample2D; WINDOW], dt: StepSize) -> Self {
        let h = dt.seconds();
        let velocity = (ys[2] - ys[1]) / h;
        let previous = (ys[1] - ys[0]) / h;
        Self { position: ys[2], velocity, acceleration: (velocity - previous) / h }
    }

    pub fn is_finite(&self) -> bool {
        [self.position, self.velocity, self.acceleration].iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Commands that realize `state.acceleration` and its rate `jerk` under the
/// first-order attitude response.
pub fn feedback_linearize(state: &FlatState, jerk: &OutputSample2D, params: &Params2D) -> Input2D {
    let (s, c) = params.yaw.sin_cos();
    let g = params.gravity;
    let acc = state.acceleration;
    let a = (acc.x * c + acc.y * s) / g;
    let b = (acc.x * s - acc.y * c) / g;
    let a_rate = (jerk.x * c + jerk.y * s) / g;
    let b_rate = (jerk.x * s - jerk.y * c) / g;

    let pitch = a.atan();
    let pitch_rate = a_rate / (1.0 + a * a);
    let (sp, cp) = pitch.sin_cos();
    let lean = b * cp;
    let roll = lean.atan();
    let roll_rate = (b_rate * cp - b * sp * pitch_rate) / (1.0 + lean * lean);

    let command = |angle: f64, rate: f64| (params.time_constant * rate + angle) / params.gain;
    Input2D::new(command(pitch, pitch_rate), command(roll, roll_rate))
}

/// Condensed triple-integrator MPC; the Hessian is factored once.
#[derive(Debug, Clone)]
pub struct FmpcSolver {
    config: FmpcConfig,
    params: Params2D,
    dt: StepSize,
    tracking: Matrix2<f64>,
    /// Free response rows: position at step `i` from (p, v, a).
    free: Vec<[f64; 3]>,
    /// `impulse[m]`: position response `m + 1` steps after a unit jerk.
    impulse: Vec<f64>,
    kkt: KktFactorization,
}

impl FmpcSolver {
    pub fn new(config: FmpcConfig, params: Params2D, dt: StepSize) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let tracking = weight_matrix("fmpc tracking_weight", &config.tracking_weight)?;
        let jerk = weight_matrix("fmpc jerk_weight", &config.jerk_weight)?;
        let h = dt.seconds();
        let n = config.horizon;

        let free: Vec<[f64; 3]> = (0..=n)
            .map(|i| {
                let t = i as f64 * h;
                [1.0, t, 0.5 * t * t]
            })
            .collect();
        // exact zero-order-hold response of p''' = v over i steps
        let impulse: Vec<f64> = (0..n)
            .map(|m| {
                let i = (m + 1) as f64;
                h.powi(3) * (3.0 * i * i - 3.0 * i + 1.0) / 6.0
            })
            .collect();

        // Gamma[i][j] = impulse[i - 1 - j] for j < i
        let mut gram = DMatrix::zeros(n, n);
        for j in 0..n {
            for l in j..n {
                let mut acc = 0.0;
                for i in (l + 1)..=n {
                    acc += impulse[i - 1 - j] * impulse[i - 1 - l];
                }
                gram[(j, l)] = acc;
                gram[(l, j)] = acc;
            }
        }
        let mut hessian = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            for l in 0..n {
                for a in 0..2 {
                    for b in 0..2 {
                        let mut v = gram[(j, l)] * tracking[(a, b)];
                        if j == l {
                            v += jerk[(a, b)];
                        }
                        hessian[(2 * j + a, 2 * l + b)] = 2.0 * v;
                    }
                }
            }
        }
        let kkt = KktFactorization::new(&hessian, &DMatrix::zeros(0, 2 * n))?;
        Ok(Self { config, params, dt, tracking, free, impulse, kkt })
    }

    pub fn config(&self) -> &FmpcConfig {
        &self.config
    }

    /// Optimal jerk sequence for both channels, time-major.
    pub fn jerks(&self, state: &FlatState, reference: &ReferenceTrajectory) -> Result<Vec<OutputSample2D>> {
        let n = self.config.horizon;
        reference.require(n + 1)?;
        let weighted: Vec<OutputSample2D> = (0..=n)
            .map(|i| {
                let f = self.free[i];
                let predicted = state.position + state.velocity * f[1] + state.acceleration * f[2];
                self.tracking * (predicted - reference.samples[i])
            })
            .collect();
        let mut gradient = DVector::zeros(2 * n);
        for j in 0..n {
            let mut acc = OutputSample2D::zeros();
            for (i, w) in weighted.iter().enumerate().skip(j + 1) {
                acc += w * self.impulse[i - 1 - j];
            }
            gradient[2 * j] = 2.0 * acc.x;
            gradient[2 * j + 1] = 2.0 * acc.y;
        }
        let solution = self.kkt.solve(&gradient, &DVector::zeros(0))?;
        Ok((0..n).map(|j| OutputSample2D::new(solution.primal[2 * j], solution.primal[2 * j + 1])).collect())
    }

    pub fn command(&self, measurements: &[OutputSample2D; WINDOW], reference: &ReferenceTrajectory) -> Result<Input2D> {
        let state = FlatState::from_measurements(measurements, self.dt);
        if !state.is_finite() {
            return Err(Error::InvalidParameter("non-finite flat state estimate".into()));
        }
        let jerk = self.jerks(&state, reference)?[0];
        Ok(feedback_linearize(&state, &jerk, &self.params))
    }
}

/// One unsaturated FMPC command from the last three measurements.
pub fn fmpc_step(
    measurements: &[OutputSample2D; WINDOW],
    reference: &ReferenceTrajectory,
    config: &FmpcConfig,
    params: &Params2D,
    dt: StepSize,
) -> Result<Input2D> {
    FmpcSolver::new(config.clone(), *params, dt)?.command(measurements, reference)
}

#[derive(Debug, Clone)]
pub struct FmpcController {
    solver: Arc<FmpcSolver>,
    history: ControllerHistory,
    command_limit: f64,
}

impl FmpcController {
    pub fn new(solver: Arc<FmpcSolver>, command_limit: f64) -> Self {
        Self { solver, history: ControllerHistory::new(), command_limit }
    }
}

impl Controller2D for FmpcController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Fmpc
    }

    fn reference_len(&self) -> usize {
        self.solver.config.horizon + 1
    }

    fn step(&mut self, measurement: OutputSample2D, reference: &ReferenceTrajectory) -> Result<Input2D> {
        self.history.push_output(measurement);
        let input = if self.history.is_full() {
            checked(self.solver.command(&self.history.outputs()?, reference)?)?.saturated(self.command_limit)
        } else {
            Input2D::default()
        };
        self.history.push_input(input);
        Ok(input)
    }
}
