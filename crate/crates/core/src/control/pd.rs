use serde::{Deserialize, Serialize};

use super::{checked, Controller2D, ControllerHistory, ControllerKind, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::flat::OutputSample2D;
use crate::models::{Input2D, StepSize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdConfig {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PdConfig {
    fn default() -> Self {
        Self { kp: 0.15, kd: 0.25 }
    }
}

impl PdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kp >= 0.0 && self.kd >= 0.0 && self.kp.is_finite() && self.kd.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("pd gains must be non-negative, got {self:?}")))
        }
    }
}

/// Tilt demand from position and velocity errors, rotated into pitch/roll at `yaw`.
pub fn pd_step(
    output: &OutputSample2D,
    velocity: &OutputSample2D,
    reference: &OutputSample2D,
    reference_velocity: &OutputSample2D,
    gains: &PdConfig,
    yaw: f64,
    command_limit: f64,
) -> Input2D {
    let demand = -(output - reference) * gains.kp - (velocity - reference_velocity) * gains.kd;
    let (s, c) = yaw.sin_cos();
    Input2D::new(c * demand.x + s * demand.y, s * demand.x - c * demand.y).saturated(command_limit)
}

#[derive(Debug, Clone)]
pub struct PdController {
    gains: PdConfig,
    yaw: f64,
    dt: StepSize,
    history: ControllerHistory,
    command_limit: f64,
}

impl PdController {
    pub fn new(gains: PdConfig, yaw: f64, dt: StepSize, command_limit: f64) -> Result<Self> {
        gains.validate()?;
        Ok(Self { gains, yaw, dt, history: ControllerHistory::new(), command_limit })
    }
}

impl Controller2D for PdController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Pd
    }

    fn reference_len(&self) -> usize {
        1
    }

    fn step(&mut self, measurement: OutputSample2D, reference: &ReferenceTrajectory) -> Result<Input2D> {
        self.history.push_output(measurement);
        let input = if self.history.is_full() {
            reference.require(1)?;
            let ys = self.history.outputs()?;
            let velocity = (ys[2] - ys[1]) / self.dt.seconds();
            checked(pd_step(
                &ys[2],
                &velocity,
                &reference.current(),
                &reference.current_velocity(),
                &self.gains,
                self.yaw,
                self.command_limit,
            ))?
        } else {
            Input2D::default()
        };
        self.history.push_input(input);
        Ok(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DiscreteModel, Params2D, Planar2D, State2D};

    #[test]
    fn zero_error_is_hover() {
        let p = OutputSample2D::new(1.0, 2.0);
        let v = OutputSample2D::new(0.5, 0.0);
        let u = pd_step(&p, &v, &p, &v, &PdConfig::default(), 0.0, 0.5);
        assert_eq!(u, Input2D::new(0.0, 0.0));
    }

    #[test]
    fn position_error_along_x() {
        let gains = PdConfig { kp: 0.2, kd: 0.0 };
        let z = OutputSample2D::zeros();
        let u = pd_step(&OutputSample2D::new(1.0, 0.0), &z, &z, &z, &gains, 0.0, 0.5);
        assert_eq!(u.pitch_cmd, -0.2);
        assert_eq!(u.roll_cmd, 0.0);
        // a y error maps onto roll with the sign that accelerates toward the reference
        let u = pd_step(&OutputSample2D::new(0.0, 1.0), &z, &z, &z, &gains, 0.0, 0.5);
        assert_eq!(u.pitch_cmd, 0.0);
        assert_eq!(u.roll_cmd, 0.2);
        let ratios = Params2D::default().tilt_ratios(u.pitch_cmd, u.roll_cmd).unwrap();
        assert!(ratios.y < 0.0);
    }

    #[test]
    fn saturates() {
        let z = OutputSample2D::zeros();
        let u = pd_step(&OutputSample2D::new(100.0, -100.0), &z, &z, &z, &PdConfig::default(), 0.0, 0.5);
        assert_eq!(u, Input2D::new(-0.5, -0.5));
    }

    #[test]
    fn closed_loop_step_converges() {
        let params = Params2D::default();
        let plant = Planar2D::new(params).unwrap();
        let dt = StepSize::new(0.02).unwrap();
        let mut ctrl = PdController::new(PdConfig { kp: 0.05, kd: 0.1 }, 0.0, dt, 0.5).unwrap();
        let reference = ReferenceTrajectory::constant(OutputSample2D::new(1.0, -1.0), 1);
        let mut state = State2D::default();
        for _ in 0..2000 {
            let u = ctrl.step(state.position, &reference).unwrap();
            for _ in 0..4 {
                state = plant.euler_step(&state, &u, dt.subdivide(4).unwrap()).unwrap();
            }
            assert!(state.position.amax() < 10.0);
        }
        assert!((state.position - reference.current()).norm() < 1e-2);
    }
}
