//! Maps between windows of flat outputs and plant states/inputs.
//!
//! For the 3-D model the flat output is position and yaw; the state needs a
//! window of four consecutive samples and the input five. For the planar
//! model the flat output is position; the state needs three samples, the
//! output-to-input map four, and the input-to-output map predicts the fourth
//! sample from three samples and an input.
//!
//! Every map rejects windows of the wrong length instead of truncating.

use std::fmt::Debug;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::models::{Input2D, Input3D, Params2D, Params3D, State2D, State3D, StepSize};
use crate::rotation::{
    body_rates_from_euler_rates, pitch_roll_from_ratios, pitch_roll_from_third_column, EulerAngles, RotationMatrix,
    SINGULARITY_EPS,
};

/// Smallest step for which second differences are treated as meaningful.
pub const MIN_FLAT_STEP: f64 = 1e-6;

pub const STATE_WINDOW_3D: usize = 4;
pub const INPUT_WINDOW_3D: usize = 5;
pub const STATE_WINDOW_2D: usize = 3;
pub const INPUT_WINDOW_2D: usize = 4;

pub type OutputSample2D = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputSample3D {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

impl OutputSample3D {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { position: Vector3::new(x, y, z), yaw }
    }
}

/// States that expose a flat output by pure selection.
pub trait FlatOutput {
    type Output: Copy + Debug + PartialEq;

    fn flat_output(&self) -> Self::Output;
}

impl FlatOutput for State3D {
    type Output = OutputSample3D;

    fn flat_output(&self) -> OutputSample3D {
        OutputSample3D { position: self.position, yaw: self.attitude.yaw }
    }
}

impl FlatOutput for State2D {
    type Output = OutputSample2D;

    fn flat_output(&self) -> OutputSample2D {
        self.position
    }
}

pub fn flat_output_from_state<S: FlatOutput>(state: &S) -> S::Output {
    state.flat_output()
}

fn expect_len<T>(window: &[T], expected: usize) -> Result<()> {
    if window.len() == expected {
        Ok(())
    } else {
        Err(Error::WindowLength { expected, actual: window.len() })
    }
}

fn check_step(dt: StepSize) -> Result<()> {
    if dt.seconds() > MIN_FLAT_STEP {
        Ok(())
    } else {
        Err(Error::InvalidStep(dt.seconds()))
    }
}

/// Specific-force numerator `t` from three consecutive samples; its
/// direction is the third column of the rotation at the first sample.
pub fn thrust_vector(window: &[OutputSample3D], dt: StepSize, gravity: f64) -> Result<Vector3<f64>> {
    expect_len(window, 3)?;
    check_step(dt)?;
    let h2 = dt.seconds() * dt.seconds();
    let accel = (window[2].position - window[1].position * 2.0 + window[0].position) / h2;
    let t = accel + Vector3::new(0.0, 0.0, gravity);
    let norm = t.norm();
    if norm <= SINGULARITY_EPS {
        return Err(Error::ZeroThrust { norm });
    }
    Ok(t)
}

/// Flat maps of the Euler-discretized 3-D multirotor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatMap3D {
    pub params: Params3D,
    pub dt: StepSize,
}

impl FlatMap3D {
    pub fn new(params: Params3D, dt: StepSize) -> Result<Self> {
        params.validate()?;
        check_step(dt)?;
        Ok(Self { params, dt })
    }

    /// Attitude at the first sample of a 3-sample window.
    fn attitude(&self, window: &[OutputSample3D]) -> Result<EulerAngles> {
        let t = thrust_vector(window, self.dt, self.params.gravity)?;
        let n = t / t.norm();
        let yaw = window[0].yaw;
        let (pitch, roll) = pitch_roll_from_third_column(n.x, n.y, n.z, yaw, SINGULARITY_EPS)?;
        Ok(EulerAngles::new(roll, pitch, yaw))
    }

    /// Attitude and body rates at the first sample of a 4-sample window.
    fn attitude_and_rates(&self, window: &[OutputSample3D]) -> Result<(EulerAngles, Vector3<f64>)> {
        let now = self.attitude(&window[0..3])?;
        let next = self.attitude(&window[1..4])?;
        let euler_rates = (next.as_vector() - now.as_vector()) / self.dt.seconds();
        let rotation = RotationMatrix::from_euler(&now);
        Ok((now, body_rates_from_euler_rates(&rotation, now.yaw, &euler_rates)))
    }

    pub fn state_from_outputs(&self, window: &[OutputSample3D]) -> Result<State3D> {
        expect_len(window, STATE_WINDOW_3D)?;
        let (attitude, body_rates) = self.attitude_and_rates(window)?;
        Ok(State3D {
            position: window[0].position,
            velocity: (window[1].position - window[0].position) / self.dt.seconds(),
            attitude,
            body_rates,
        })
    }

    pub fn input_from_outputs(&self, window: &[OutputSample3D]) -> Result<Input3D> {
        expect_len(window, INPUT_WINDOW_3D)?;
        let t = thrust_vector(&window[0..3], self.dt, self.params.gravity)?;
        let (_, rates_now) = self.attitude_and_rates(&window[0..4])?;
        let (_, rates_next) = self.attitude_and_rates(&window[1..5])?;
        let accel = (rates_next - rates_now) / self.dt.seconds();
        let [ixx, iyy, izz] = self.params.inertia;
        let (p, q, r) = (rates_now.x, rates_now.y, rates_now.z);
        let torque = Vector3::new(
            ixx * accel.x + (izz - iyy) * q * r,
            iyy * accel.y + (ixx - izz) * p * r,
            izz * accel.z + (iyy - ixx) * p * q,
        );
        Ok(Input3D { thrust: self.params.mass * t.norm(), torque })
    }
}

/// Flat maps of the planar model with first-order attitude response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatMap2D {
    pub params: Params2D,
    pub dt: StepSize,
}

impl FlatMap2D {
    pub fn new(params: Params2D, dt: StepSize) -> Result<Self> {
        params.validate()?;
        check_step(dt)?;
        Ok(Self { params, dt })
    }

    /// `(pitch, roll)` at the first sample of a 3-sample window.
    pub fn attitude(&self, window: &[OutputSample2D]) -> (f64, f64) {
        let h2 = self.dt.seconds() * self.dt.seconds();
        let ratios = (window[2] - window[1] * 2.0 + window[0]) / (self.params.gravity * h2);
        pitch_roll_from_ratios(ratios.x, ratios.y, self.params.yaw)
    }

    pub fn state_from_outputs(&self, window: &[OutputSample2D]) -> Result<State2D> {
        expect_len(window, STATE_WINDOW_2D)?;
        let (pitch, roll) = self.attitude(window);
        Ok(State2D { position: window[0], velocity: (window[1] - window[0]) / self.dt.seconds(), pitch, roll })
    }

    /// Commanded angles at the first sample of a 4-sample window.
    pub fn output_to_input(&self, window: &[OutputSample2D]) -> Result<Input2D> {
        expect_len(window, INPUT_WINDOW_2D)?;
        let (pitch0, roll0) = self.attitude(&window[0..3]);
        let (pitch1, roll1) = self.attitude(&window[1..4]);
        let lead = self.params.time_constant / self.dt.seconds();
        let invert = |now: f64, next: f64| (lead * (next - now) + now) / self.params.gain;
        Ok(Input2D::new(invert(pitch0, pitch1), invert(roll0, roll1)))
    }

    /// Predicts the sample following a 3-sample window under `input`.
    pub fn input_to_output(&self, window: &[OutputSample2D], input: &Input2D) -> Result<OutputSample2D> {
        expect_len(window, STATE_WINDOW_2D)?;
        let dt = self.dt.seconds();
        let (pitch0, roll0) = self.attitude(window);
        let pitch1 = self.params.attitude_step(pitch0, input.pitch_cmd, dt);
        let roll1 = self.params.attitude_step(roll0, input.roll_cmd, dt);
        let half_pi = std::f64::consts::FRAC_PI_2;
        if pitch1.abs() >= half_pi || roll1.abs() >= half_pi {
            return Err(Error::SingularAttitude { r33: pitch1.cos() * roll1.cos() });
        }
        let ratios = self.params.tilt_ratios(pitch1, roll1)?;
        Ok(window[2] * 2.0 - window[1] + ratios * (self.params.gravity * dt * dt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{rollout, Planar2D, Quadrotor3D};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dt() -> StepSize {
        StepSize::new(0.02).unwrap()
    }

    fn constant_3d(n: usize) -> Vec<OutputSample3D> {
        vec![OutputSample3D::new(1.0, 2.0, 3.0, 0.4); n]
    }

    #[test]
    fn thrust_vector_trivial_cases() {
        let t = thrust_vector(&constant_3d(3), dt(), 9.81).unwrap();
        assert_eq!(t, Vector3::new(0.0, 0.0, 9.81));

        let w = [
            OutputSample3D::new(0.0, 0.0, 0.0, 0.0),
            OutputSample3D::new(0.0, 0.0, 0.0, 0.0),
            OutputSample3D::new(0.0004, 0.0, 0.0, 0.0),
        ];
        let t = thrust_vector(&w, dt(), 9.81).unwrap();
        assert_abs_diff_eq!(t, Vector3::new(1.0, 0.0, 9.81), epsilon = 1e-12);
    }

    #[test]
    fn free_fall_window_is_singular() {
        let h = 0.02f64;
        let w: Vec<_> =
            (0..3).map(|i| OutputSample3D::new(0.0, 0.0, -0.5 * 9.81 * (i as f64 * h).powi(2), 0.0)).collect();
        // z[k] = -g t^2 / 2 has second difference -g h^2
        assert!(matches!(thrust_vector(&w, dt(), 9.81), Err(Error::ZeroThrust { .. })));
    }

    #[test]
    fn window_lengths_are_strict() {
        let map3 = FlatMap3D::new(Params3D::default(), dt()).unwrap();
        let map2 = FlatMap2D::new(Params2D::default(), dt()).unwrap();
        for n in [0usize, 1, 2, 3, 5, 6] {
            let w3 = constant_3d(n);
            let w2 = vec![Vector2::new(1.0, 2.0); n];
            if n != 3 {
                assert!(thrust_vector(&w3, dt(), 9.81).is_err());
                assert!(map2.state_from_outputs(&w2).is_err());
                assert!(map2.input_to_output(&w2, &Input2D::default()).is_err());
            }
            if n != 4 {
                assert!(matches!(map3.state_from_outputs(&w3), Err(Error::WindowLength { .. })));
                assert!(matches!(map2.output_to_input(&w2), Err(Error::WindowLength { .. })));
            }
            if n != 5 {
                assert!(matches!(map3.input_from_outputs(&w3), Err(Error::WindowLength { .. })));
            }
        }
    }

    #[test]
    fn tiny_step_rejected() {
        let tiny = StepSize::new(1e-7).unwrap();
        assert!(FlatMap2D::new(Params2D::default(), tiny).is_err());
        assert!(FlatMap3D::new(Params3D::default(), tiny).is_err());
        assert!(thrust_vector(&constant_3d(3), tiny, 9.81).is_err());
    }

    #[test]
    fn hover_state_and_trim_3d() {
        let map = FlatMap3D::new(Params3D { mass: 1.5, ..Default::default() }, dt()).unwrap();
        let s = map.state_from_outputs(&constant_3d(4)).unwrap();
        assert_eq!(s.position, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(s.velocity, Vector3::zeros());
        assert_eq!(s.attitude, EulerAngles::new(0.0, 0.0, 0.4));
        assert_eq!(s.body_rates, Vector3::zeros());

        let u = map.input_from_outputs(&constant_3d(5)).unwrap();
        assert_abs_diff_eq!(u.thrust, 14.715, epsilon = 1e-12);
        assert_eq!(u.torque, Vector3::zeros());
    }

    #[test]
    fn constant_velocity_window_3d() {
        let map = FlatMap3D::new(Params3D::default(), dt()).unwrap();
        let v = 3.0;
        let w: Vec<_> = (0..4).map(|i| OutputSample3D::new(v * 0.02 * i as f64, 0.0, 1.0, 0.0)).collect();
        let s = map.state_from_outputs(&w).unwrap();
        assert_abs_diff_eq!(s.velocity.x, v, epsilon = 1e-12);
        assert_abs_diff_eq!(s.attitude.pitch, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.attitude.roll, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.body_rates, Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn constant_vertical_acceleration_3d() {
        let params = Params3D { mass: 1.0, ..Default::default() };
        let map = FlatMap3D::new(params, dt()).unwrap();
        let a = 2.5;
        let w: Vec<_> =
            (0..5).map(|i| OutputSample3D::new(0.0, 0.0, 0.5 * a * (0.02 * i as f64).powi(2), 0.0)).collect();
        let u = map.input_from_outputs(&w).unwrap();
        assert_abs_diff_eq!(u.thrust, a + 9.81, epsilon = 1e-9);
        assert_abs_diff_eq!(u.torque, Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn planar_trivial_maps() {
        let params = Params2D { yaw: 0.0, ..Default::default() };
        let map = FlatMap2D::new(params, dt()).unwrap();
        let c = vec![Vector2::new(1.0, -2.0); 4];
        let s = map.state_from_outputs(&c[..3]).unwrap();
        assert_eq!((s.velocity, s.pitch, s.roll), (Vector2::zeros(), 0.0, 0.0));
        assert_eq!(map.output_to_input(&c).unwrap(), Input2D::new(0.0, 0.0));
        assert_eq!(map.input_to_output(&c[..3], &Input2D::default()).unwrap(), c[0]);

        let g = params.gravity;
        let w = [Vector2::zeros(), Vector2::zeros(), Vector2::new(g * 0.02 * 0.02, 0.0)];
        let s = map.state_from_outputs(&w).unwrap();
        assert_abs_diff_eq!(s.pitch, PI / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.roll, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn steady_tilt_command() {
        let params = Params2D { gain: 1.7, ..Default::default() };
        let map = FlatMap2D::new(params, dt()).unwrap();
        // constant second difference keeps the pitch at atan(0.3) on both steps
        let c = 0.3 * params.gravity * 0.02 * 0.02;
        let w: Vec<_> = (0..4).map(|i| Vector2::new(0.5 * c * (i * i) as f64, 0.0)).collect();
        let u = map.output_to_input(&w).unwrap();
        assert_abs_diff_eq!(u.pitch_cmd, 0.3f64.atan() / 1.7, epsilon = 1e-9);
        assert_abs_diff_eq!(u.roll_cmd, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn flat_output_selection() {
        let s3 = State3D::at_rest(Vector3::new(1.0, 2.0, 3.0), 0.4);
        assert_eq!(flat_output_from_state(&s3), OutputSample3D::new(1.0, 2.0, 3.0, 0.4));
        let s2 = State2D::at_rest(Vector2::new(5.0, -1.0));
        assert_eq!(flat_output_from_state(&s2), Vector2::new(5.0, -1.0));
    }

    fn random_planar_rollout(
        rng: &mut ChaCha8Rng,
        steps: usize,
    ) -> (Params2D, Vec<Input2D>, crate::models::Rollout<State2D>) {
        let params = Params2D { yaw: rng.random_range(-PI..PI), ..Default::default() };
        let model = Planar2D::new(params).unwrap();
        let start = State2D {
            position: Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            velocity: Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            pitch: rng.random_range(-0.3..0.3),
            roll: rng.random_range(-0.3..0.3),
        };
        let inputs: Vec<_> =
            (0..steps).map(|_| Input2D::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))).collect();
        let traj = rollout(&model, start, &inputs, dt(), 1).unwrap();
        (params, inputs, traj)
    }

    #[test]
    fn planar_rollout_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (params, inputs, traj) = random_planar_rollout(&mut rng, 30);
            let map = FlatMap2D::new(params, dt()).unwrap();
            let y = &traj.outputs;
            for k in 0..y.len() - 3 {
                let s = map.state_from_outputs(&y[k..k + 3]).unwrap();
                let truth = traj.states[k].to_array();
                for (a, b) in s.to_array().iter().zip(truth) {
                    assert!((a - b).abs() < 1e-9, "state mismatch at {k}: {a} vs {b}");
                }
                let u = map.output_to_input(&y[k..k + 4]).unwrap();
                assert_abs_diff_eq!(u.pitch_cmd, inputs[k].pitch_cmd, epsilon = 1e-9);
                assert_abs_diff_eq!(u.roll_cmd, inputs[k].roll_cmd, epsilon = 1e-9);

                let next = map.input_to_output(&y[k..k + 3], &inputs[k]).unwrap();
                assert!((next - y[k + 3]).abs().max() < 1e-12);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn translation_invariance(
            seed in 0u64..1000,
            offset in proptest::array::uniform2(-100.0f64..100.0),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (params, _, traj) = random_planar_rollout(&mut rng, 4);
            let map = FlatMap2D::new(params, dt()).unwrap();
            let off = Vector2::from(offset);
            let shifted: Vec<_> = traj.outputs.iter().map(|y| y + off).collect();
            let a = map.state_from_outputs(&traj.outputs[..3]).unwrap();
            let b = map.state_from_outputs(&shifted[..3]).unwrap();
            proptest::prop_assert!((a.velocity - b.velocity).abs().max() < 1e-9);
            proptest::prop_assert!((a.pitch - b.pitch).abs() < 1e-9);
            proptest::prop_assert!((a.roll - b.roll).abs() < 1e-9);
            let ua = map.output_to_input(&traj.outputs[..4]).unwrap();
            let ub = map.output_to_input(&shifted[..4]).unwrap();
            proptest::prop_assert!((ua.pitch_cmd - ub.pitch_cmd).abs() < 1e-7);
            proptest::prop_assert!((ua.roll_cmd - ub.roll_cmd).abs() < 1e-7);
        }
    }

    #[test]
    fn thrust_direction_matches_plant_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = Params3D::default();
        let model = Quadrotor3D::new(params).unwrap();
        let start = State3D {
            attitude: EulerAngles::new(0.1, -0.2, 0.7),
            body_rates: Vector3::new(0.1, 0.2, -0.1),
            ..Default::default()
        };
        let inputs: Vec<_> = (0..20)
            .map(|_| Input3D {
                thrust: params.hover_thrust() * rng.random_range(0.9..1.1),
                torque: Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)),
            })
            .collect();
        let traj = rollout(&model, start, &inputs, dt(), 1).unwrap();
        for k in 0..traj.outputs.len() - 2 {
            let t = thrust_vector(&traj.outputs[k..k + 3], dt(), params.gravity).unwrap();
            let col = RotationMatrix::from_euler(&traj.states[k].attitude).third_column();
            assert!((t / t.norm() - col).abs().max() < 1e-9);
            assert_abs_diff_eq!(params.mass * t.norm(), inputs[k].thrust, epsilon = 1e-9);
        }
    }
}
