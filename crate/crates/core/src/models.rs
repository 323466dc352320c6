//! Euler-discretized multirotor plants.
//!
//! Two models are provided: the full 3-D rigid body driven by thrust and body
//! torques, and the planar model whose pitch and roll follow a first-order
//! response to commanded angles. Both advance as `x[k+1] = x[k] + dt * f(x[k], u[k])`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat::FlatOutput;
use crate::rotation::{euler_rates_from_body_rates, EulerAngles, RotationMatrix, SINGULARITY_EPS};

/// Positive, finite integration step in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct StepSize(f64);

impl StepSize {
    pub fn new(seconds: f64) -> Result<Self> {
        if seconds.is_finite() && seconds > 0.0 {
            Ok(Self(seconds))
        } else {
            Err(Error::InvalidStep(seconds))
        }
    }

    pub fn from_rate(hz: f64) -> Result<Self> {
        Self::new(1.0 / hz)
    }

    pub fn seconds(self) -> f64 {
        self.0
    }

    /// The step obtained by splitting this one into `parts` equal substeps.
    pub fn subdivide(self, parts: usize) -> Result<Self> {
        if parts == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        Self::new(self.0 / parts as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params3D {
    pub mass: f64,
    pub gravity: f64,
    /// Diagonal of the inertia matrix `(Ixx, Iyy, Izz)`.
    pub inertia: [f64; 3],
}

impl Default for Params3D {
    fn default() -> Self {
        Self { mass: 1.5, gravity: 9.81, inertia: [0.03, 0.03, 0.05] }
    }
}

impl Params3D {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mass, self.gravity, self.inertia[0], self.inertia[1], self.inertia[2]];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("3-D parameters must be positive: {self:?}")))
        }
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State3D {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: EulerAngles,
    pub body_rates: Vector3<f64>,
}

impl State3D {
    pub fn at_rest(position: Vector3<f64>, yaw: f64) -> Self {
        Self { position, attitude: EulerAngles::new(0.0, 0.0, yaw), ..Default::default() }
    }

    /// `self + dt * rate`, componentwise.
    pub fn advanced(&self, rate: &Self, dt: f64) -> Self {
        Self {
            position: self.position + rate.position * dt,
            velocity: self.velocity + rate.velocity * dt,
            attitude: EulerAngles::from_vector(&(self.attitude.as_vector() + rate.attitude.as_vector() * dt)),
            body_rates: self.body_rates + rate.body_rates * dt,
        }
    }

    /// Components in the order `x, x', y, y', z, z', pitch, roll, yaw, p, q, r`.
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.position.x,
            self.velocity.x,
            self.position.y,
            self.velocity.y,
            self.position.z,
            self.velocity.z,
            self.attitude.pitch,
            self.attitude.roll,
            self.attitude.yaw,
            self.body_rates.x,
            self.body_rates.y,
            self.body_rates.z,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Input3D {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl Input3D {
    pub fn hover(params: &Params3D) -> Self {
        Self { thrust: params.hover_thrust(), torque: Vector3::zeros() }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.thrust, self.torque.x, self.torque.y, self.torque.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params2D {
    /// First-order attitude time constant in seconds.
    pub time_constant: f64,
    /// First-order attitude gain.
    pub gain: f64,
    /// Fixed yaw angle in radians.
    pub yaw: f64,
    pub gravity: f64,
}

impl Default for Params2D {
    fn default() -> Self {
        Self { time_constant: 0.2, gain: 1.0, yaw: 0.0, gravity: 9.81 }
    }
}

impl Params2D {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.time_constant, self.gain, self.gravity];
        if positive.iter().all(|v| v.is_finite() && *v > 0.0) && self.yaw.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("2-D parameters out of range: {self:?}")))
        }
    }

    /// Ratios `(R13/R33, R23/R33)` for the given pitch and roll at the fixed yaw.
    pub fn tilt_ratios(&self, pitch: f64, roll: f64) -> Result<Vector2<f64>> {
        let r = RotationMatrix::from_euler(&EulerAngles::new(roll, pitch, self.yaw));
        let (rx, ry) = r.tilt_ratios(SINGULARITY_EPS)?;
        Ok(Vector2::new(rx, ry))
    }

    /// One Euler step of the first-order attitude response.
    pub fn attitude_step(&self, angle: f64, command: f64, dt: f64) -> f64 {
        angle + dt * (self.gain / self.time_constant * command - angle / self.time_constant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State2D {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub pitch: f64,
    pub roll: f64,
}

impl State2D {
    pub fn at_rest(position: Vector2<f64>) -> Self {
        Self { position, ..Default::default() }
    }

    pub fn advanced(&self, rate: &Self, dt: f64) -> Self {
        Self {
            position: self.position + rate.position * dt,
            velocity: self.velocity + rate.velocity * dt,
            pitch: self.pitch + rate.pitch * dt,
            roll: self.roll + rate.roll * dt,
        }
    }

    /// Components in the order `x, x', y, y', pitch, roll`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.position.x, self.velocity.x, self.position.y, self.velocity.y, self.pitch, self.roll]
    }
}

/// Commanded pitch and roll.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Input2D {
    pub pitch_cmd: f64,
    pub roll_cmd: f64,
}

impl Input2D {
    pub fn new(pitch_cmd: f64, roll_cmd: f64) -> Self {
        Self { pitch_cmd, roll_cmd }
    }

    /// Box-saturates both commands to `[-limit, limit]`.
    pub fn saturated(self, limit: f64) -> Self {
        Self { pitch_cmd: self.pitch_cmd.clamp(-limit, limit), roll_cmd: self.roll_cmd.clamp(-limit, limit) }
    }

    pub fn is_finite(&self) -> bool {
        self.pitch_cmd.is_finite() && self.roll_cmd.is_finite()
    }
}

pub fn derivative_3d(state: &State3D, input: &Input3D, params: &Params3D) -> Result<State3D> {
    if !(input.thrust > 0.0) {
        return Err(Error::InvalidParameter(format!("thrust must be positive, got {}", input.thrust)));
    }
    let rotation = RotationMatrix::from_euler(&state.attitude);
    if rotation.entry(3, 3) <= SINGULARITY_EPS {
        return Err(Error::SingularAttitude { r33: rotation.entry(3, 3) });
    }
    let acceleration = rotation.third_column() * (input.thrust / params.mass) - Vector3::new(0.0, 0.0, params.gravity);
    let euler_rates = euler_rates_from_body_rates(&rotation, state.attitude.yaw, &state.body_rates)?;

    let [ixx, iyy, izz] = params.inertia;
    let (p, q, r) = (state.body_rates.x, state.body_rates.y, state.body_rates.z);
    let angular_acceleration = Vector3::new(
        -(izz - iyy) / ixx * q * r + input.torque.x / ixx,
        -(ixx - izz) / iyy * p * r + input.torque.y / iyy,
        -(iyy - ixx) / izz * p * q + input.torque.z / izz,
    );

    Ok(State3D {
        position: state.velocity,
        velocity: acceleration,
        attitude: EulerAngles::from_vector(&euler_rates),
        body_rates: angular_acceleration,
    })
}

pub fn derivative_2d(state: &State2D, input: &Input2D, params: &Params2D) -> Result<State2D> {
    let ratios = params.tilt_ratios(state.pitch, state.roll)?;
    let k_over_tau = params.gain / params.time_constant;
    Ok(State2D {
        position: state.velocity,
        velocity: ratios * params.gravity,
        pitch: k_over_tau * input.pitch_cmd - state.pitch / params.time_constant,
        roll: k_over_tau * input.roll_cmd - state.roll / params.time_constant,
    })
}

/// A discrete-time plant advanced by explicit Euler steps.
pub trait DiscreteModel {
    type State: Copy + FlatOutput;
    type Input: Copy;

    fn derivative(&self, state: &Self::State, input: &Self::Input) -> Result<Self::State>;

    fn euler_step(&self, state: &Self::State, input: &Self::Input, dt: StepSize) -> Result<Self::State>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrotor3D {
    pub params: Params3D,
}

impl Quadrotor3D {
    pub fn new(params: Params3D) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl DiscreteModel for Quadrotor3D {
    type State = State3D;
    type Input = Input3D;

    fn derivative(&self, state: &State3D, input: &Input3D) -> Result<State3D> {
        derivative_3d(state, input, &self.params)
    }

    fn euler_step(&self, state: &State3D, input: &Input3D, dt: StepSize) -> Result<State3D> {
        let rate = self.derivative(state, input)?;
        Ok(state.advanced(&rate, dt.seconds()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Planar2D {
    pub params: Params2D,
}

impl Planar2D {
    pub fn new(params: Params2D) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl DiscreteModel for Planar2D {
    type State = State2D;
    type Input = Input2D;

    fn derivative(&self, state: &State2D, input: &Input2D) -> Result<State2D> {
        derivative_2d(state, input, &self.params)
    }

    fn euler_step(&self, state: &State2D, input: &Input2D, dt: StepSize) -> Result<State2D> {
        let rate = self.derivative(state, input)?;
        Ok(state.advanced(&rate, dt.seconds()))
    }
}

/// Plant trajectory with states at plant rate and flat outputs at input rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<S: FlatOutput> {
    pub states: Vec<S>,
    pub outputs: Vec<S::Output>,
}

/// Applies each input with zero-order hold for `substeps` plant steps of
/// length `input_period / substeps`.
pub fn rollout<M: DiscreteModel>(
    model: &M,
    initial: M::State,
    inputs: &[M::Input],
    input_period: StepSize,
    substeps: usize,
) -> Result<Rollout<M::State>> {
    let plant_step = input_period.subdivide(substeps)?;
    let mut states = Vec::with_capacity(1 + inputs.len() * substeps);
    let mut outputs = Vec::with_capacity(1 + inputs.len());
    let mut state = initial;
    states.push(state);
    outputs.push(state.flat_output());
    for input in inputs {
        for _ in 0..substeps {
            state = model.euler_step(&state, input, plant_step)?;
            states.push(state);
        }
        outputs.push(state.flat_output());
    }
    Ok(Rollout { states, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn step_size_rejects_nonpositive() {
        assert!(StepSize::new(0.0).is_err());
        assert!(StepSize::new(-0.1).is_err());
        assert!(StepSize::new(f64::NAN).is_err());
        assert!(StepSize::new(0.02).unwrap().subdivide(0).is_err());
        assert_eq!(StepSize::from_rate(50.0).unwrap().seconds(), 0.02);
    }

    #[test]
    fn hover_3d_is_equilibrium() {
        let params = Params3D::default();
        let state = State3D::at_rest(Vector3::new(1.0, -2.0, 3.0), 0.4);
        let d = derivative_3d(&state, &Input3D::hover(&params), &params).unwrap();
        assert_eq!(d.position, Vector3::zeros());
        assert_abs_diff_eq!(d.velocity, Vector3::zeros(), epsilon = 1e-15);
        assert_eq!(d.attitude.as_vector(), Vector3::zeros());
        assert_eq!(d.body_rates, Vector3::zeros());
    }

    #[test]
    fn double_hover_thrust_climbs_at_g() {
        let params = Params3D { mass: 1.0, gravity: 9.81, ..Default::default() };
        let input = Input3D { thrust: 2.0 * 9.81, torque: Vector3::zeros() };
        let d = derivative_3d(&State3D::default(), &input, &params).unwrap();
        assert_eq!(d.velocity, Vector3::new(0.0, 0.0, 9.81));
    }

    #[test]
    fn gyroscopic_coupling() {
        let params = Params3D { mass: 1.0, gravity: 9.81, inertia: [1.0, 2.0, 3.0] };
        let state = State3D { body_rates: Vector3::new(1.0, 0.0, 1.0), ..Default::default() };
        let d = derivative_3d(&state, &Input3D::hover(&params), &params).unwrap();
        assert_abs_diff_eq!(d.body_rates.y, 1.0, epsilon = 1e-15);
        assert_eq!(d.body_rates.x, 0.0);
        assert_eq!(d.body_rates.z, 0.0);
    }

    #[test]
    fn nonpositive_thrust_rejected() {
        let params = Params3D::default();
        let input = Input3D { thrust: 0.0, torque: Vector3::zeros() };
        assert!(derivative_3d(&State3D::default(), &input, &params).is_err());
    }

    #[test]
    fn planar_equilibrium_and_tilt() {
        let params = Params2D::default();
        let d = derivative_2d(&State2D::default(), &Input2D::default(), &params).unwrap();
        assert_eq!(d, State2D::default());

        let state = State2D { pitch: PI / 6.0, ..Default::default() };
        let d = derivative_2d(&state, &Input2D::default(), &params).unwrap();
        assert_abs_diff_eq!(d.velocity.x, 9.81 * (PI / 6.0).tan(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.velocity.x, 5.663806, epsilon = 1e-6);
        assert_abs_diff_eq!(d.velocity.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn first_order_attitude_rate() {
        let params = Params2D { time_constant: 0.5, gain: 1.0, ..Default::default() };
        let d = derivative_2d(&State2D::default(), &Input2D::new(0.1, 0.0), &params).unwrap();
        assert_abs_diff_eq!(d.pitch, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn planar_position_update_is_linear() {
        let model = Planar2D::new(Params2D::default()).unwrap();
        let state = State2D { velocity: Vector2::new(2.0, 0.0), ..Default::default() };
        let next = model.euler_step(&state, &Input2D::default(), StepSize::new(0.005).unwrap()).unwrap();
        assert_eq!(next.position.x, 0.01);
        assert_eq!(next.velocity, state.velocity);
    }

    #[test]
    fn hover_3d_held_for_many_steps() {
        let model = Quadrotor3D::new(Params3D::default()).unwrap();
        let start = State3D::at_rest(Vector3::new(0.5, 1.5, 2.5), -0.3);
        let inputs = vec![Input3D::hover(&model.params); 100];
        let traj = rollout(&model, start, &inputs, StepSize::new(0.02).unwrap(), 1).unwrap();
        for s in &traj.states {
            for (a, b) in s.to_array().iter().zip(start.to_array()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let long = vec![Input3D::hover(&model.params); 1000];
        let traj = rollout(&model, start, &long, StepSize::new(0.02).unwrap(), 1).unwrap();
        assert!(traj.states.iter().all(|s| s.position == start.position));
    }

    #[test]
    fn empty_rollout_holds_initial_state() {
        let model = Planar2D::new(Params2D::default()).unwrap();
        let start = State2D::at_rest(Vector2::new(3.0, 4.0));
        let traj = rollout(&model, start, &[], StepSize::new(0.02).unwrap(), 4).unwrap();
        assert_eq!(traj.states, vec![start]);
        assert_eq!(traj.outputs, vec![Vector2::new(3.0, 4.0)]);
    }

    #[test]
    fn zero_order_hold_matches_repeated_steps() {
        let model = Planar2D::new(Params2D::default()).unwrap();
        let start = State2D { velocity: Vector2::new(0.3, -0.1), pitch: 0.05, ..Default::default() };
        let inputs = [Input2D::new(0.2, -0.1), Input2D::new(-0.05, 0.3)];
        let period = StepSize::new(0.02).unwrap();
        let traj = rollout(&model, start, &inputs, period, 4).unwrap();
        assert_eq!(traj.states.len(), 9);
        assert_eq!(traj.outputs.len(), 3);

        let h = period.subdivide(4).unwrap();
        let mut state = start;
        for (i, input) in inputs.iter().enumerate() {
            for j in 0..4 {
                state = model.euler_step(&state, input, h).unwrap();
                assert_eq!(state, traj.states[1 + i * 4 + j]);
            }
            assert_eq!(state.position, traj.outputs[i + 1]);
        }
    }
}
