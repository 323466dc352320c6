//! Randomized round-trip checks of the flat maps against simulated rollouts,
//! plus a dense cross-check of the QP solver. Backs the `verify-flatness` command.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::flat::{
    FlatMap2D, FlatMap3D, OutputSample2D, OutputSample3D, INPUT_WINDOW_2D, INPUT_WINDOW_3D, STATE_WINDOW_2D,
    STATE_WINDOW_3D,
};
use crate::models::{rollout, Input2D, Input3D, Params2D, Planar2D, Quadrotor3D, State2D, State3D, StepSize};
use crate::qp::{solve_eq_qp, EqQp};
use crate::rotation::EulerAngles;

use super::config::VerifyConfig;

pub const PLANAR_INPUT_TOL: f64 = 1e-7;
pub const PLANAR_STATE_TOL: f64 = 1e-8;
pub const VEHICLE_INPUT_TOL: f64 = 1e-6;
pub const VEHICLE_STATE_TOL: f64 = 1e-6;
pub const COMPOSITION_TOL: f64 = 1e-10;
pub const QP_TOL: f64 = 1e-9;
pub const TRIM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub samples: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: &'static str, samples: usize, max_error: f64, tolerance: f64) -> Self {
        Self { name, samples, max_error, tolerance, passed: max_error <= tolerance }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Relative error with a floor, so inputs near zero are judged against the channel scale.
fn relative(estimate: f64, truth: f64, scale: f64) -> f64 {
    (estimate - truth).abs() / truth.abs().max(scale)
}

/// Planar rollouts with random commands; returns the input and state checks.
pub fn planar_round_trip(cfg: &VerifyConfig, seed: u64) -> Result<[CheckReport; 2]> {
    let dt = StepSize::new(cfg.step_s)?;
    let bound = cfg.planar_command_bound;
    let mut rng = rng_for(seed, 1);
    let (mut input_err, mut state_err) = (0.0f64, 0.0f64);
    let (mut inputs_checked, mut states_checked) = (0, 0);
    for _ in 0..cfg.planar_rollouts {
        let params = Params2D { yaw: rng.random_range(-PI..PI), ..Params2D::default() };
        let model = Planar2D::new(params)?;
        let start = State2D {
            position: Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            velocity: Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            pitch: rng.random_range(-bound..bound),
            roll: rng.random_range(-bound..bound),
        };
        let inputs: Vec<Input2D> = (0..cfg.rollout_steps)
            .map(|_| Input2D::new(rng.random_range(-bound..=bound), rng.random_range(-bound..=bound)))
            .collect();
        let traj = rollout(&model, start, &inputs, dt, 1)?;
        let map = FlatMap2D::new(params, dt)?;
        let y = &traj.outputs;
        for k in 0..=y.len() - STATE_WINDOW_2D {
            let s = map.state_from_outputs(&y[k..k + STATE_WINDOW_2D])?;
            for (a, b) in s.to_array().iter().zip(traj.states[k].to_array()) {
                state_err = state_err.max((a - b).abs());
            }
            states_checked += 1;
        }
        for k in 0..=y.len() - INPUT_WINDOW_2D {
            let u = map.output_to_input(&y[k..k + INPUT_WINDOW_2D])?;
            input_err = input_err.max(relative(u.pitch_cmd, inputs[k].pitch_cmd, bound)).max(relative(
                u.roll_cmd,
                inputs[k].roll_cmd,
                bound,
            ));
            inputs_checked += 1;
        }
    }
    Ok([
        CheckReport::new("planar_input_recovery", inputs_checked, input_err, PLANAR_INPUT_TOL),
        CheckReport::new("planar_state_recovery", states_checked, state_err, PLANAR_STATE_TOL),
    ])
}

/// Full-vehicle rollouts with thrust near hover and bounded torques.
pub fn vehicle_round_trip(cfg: &VerifyConfig, seed: u64) -> Result<[CheckReport; 2]> {
    let dt = StepSize::new(cfg.step_s)?;
    let params = cfg.vehicle;
    let model = Quadrotor3D::new(params)?;
    let map = FlatMap3D::new(params, dt)?;
    let hover = params.hover_thrust();
    let mut rng = rng_for(seed, 2);
    let (mut input_err, mut state_err) = (0.0f64, 0.0f64);
    let (mut inputs_checked, mut states_checked) = (0, 0);
    let mut accepted = 0;
    while accepted < cfg.vehicle_rollouts {
        let start = State3D {
            position: Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
            velocity: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            attitude: EulerAngles::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-PI..PI),
            ),
            body_rates: Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
        };
        let inputs: Vec<Input3D> = (0..cfg.rollout_steps)
            .map(|_| Input3D {
                thrust: hover * (1.0 + rng.random_range(-cfg.thrust_spread..=cfg.thrust_spread)),
                torque: Vector3::from_fn(|_, _| rng.random_range(-cfg.torque_bound..=cfg.torque_bound)),
            })
            .collect();
        // a draw that leaves the attitude chart is redrawn
        let Ok(traj) = rollout(&model, start, &inputs, dt, 1) else { continue };
        if traj.states.iter().any(|s| s.attitude.roll.abs() > 1.2 || s.attitude.pitch.abs() > 1.2) {
            continue;
        }
        accepted += 1;
        let y = &traj.outputs;
        for k in 0..=y.len() - STATE_WINDOW_3D {
            let s = map.state_from_outputs(&y[k..k + STATE_WINDOW_3D])?;
            for (a, b) in s.to_array().iter().zip(traj.states[k].to_array()) {
                state_err = state_err.max((a - b).abs());
            }
            states_checked += 1;
        }
        for k in 0..=y.len() - INPUT_WINDOW_3D {
            let u = map.input_from_outputs(&y[k..k + INPUT_WINDOW_3D])?;
            let truth = inputs[k];
            input_err = input_err.max(relative(u.thrust, truth.thrust, hover));
            for i in 0..3 {
                input_err = input_err.max(relative(u.torque[i], truth.torque[i], cfg.torque_bound));
            }
            inputs_checked += 1;
        }
    }
    Ok([
        CheckReport::new("vehicle_input_recovery", inputs_checked, input_err, VEHICLE_INPUT_TOL),
        CheckReport::new("vehicle_state_recovery", states_checked, state_err, VEHICLE_STATE_TOL),
    ])
}

fn random_window(rng: &mut ChaCha8Rng, len: usize, dt: f64, gravity: f64, tilt: f64) -> Vec<OutputSample2D> {
    let mut y = vec![OutputSample2D::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))];
    let mut v = OutputSample2D::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    for _ in 1..len {
        y.push(y[y.len() - 1] + v * dt);
        v += OutputSample2D::new(rng.random_range(-tilt..tilt), rng.random_range(-tilt..tilt)) * (gravity * dt);
    }
    y
}

/// Output-to-input after input-to-output, and the reverse, on random data.
pub fn inverse_composition(cfg: &VerifyConfig, seed: u64) -> Result<[CheckReport; 2]> {
    let dt = StepSize::new(cfg.step_s)?;
    let bound = cfg.planar_command_bound;
    let mut rng = rng_for(seed, 3);
    let (mut forward_err, mut backward_err) = (0.0f64, 0.0f64);
    for _ in 0..cfg.compositions {
        let params = Params2D { yaw: rng.random_range(-PI..PI), ..Params2D::default() };
        let map = FlatMap2D::new(params, dt)?;

        let mut w = random_window(&mut rng, 3, dt.seconds(), params.gravity, 0.3);
        let u = Input2D::new(rng.random_range(-bound..=bound), rng.random_range(-bound..=bound));
        w.push(map.input_to_output(&w, &u)?);
        let back = map.output_to_input(&w)?;
        forward_err = forward_err.max((back.pitch_cmd - u.pitch_cmd).abs()).max((back.roll_cmd - u.roll_cmd).abs());

        let w = random_window(&mut rng, 4, dt.seconds(), params.gravity, 0.3);
        let u = map.output_to_input(&w)?;
        let next = map.input_to_output(&w[..3], &u)?;
        backward_err = backward_err.max((next - w[3]).amax());
    }
    Ok([
        CheckReport::new("output_to_input_after_input_to_output", cfg.compositions, forward_err, COMPOSITION_TOL),
        CheckReport::new("input_to_output_after_output_to_input", cfg.compositions, backward_err, COMPOSITION_TOL),
    ])
}

/// Constant output windows must give hover thrust, zero torques and zero commands.
pub fn hover_trims(cfg: &VerifyConfig, seed: u64) -> Result<CheckReport> {
    let dt = StepSize::new(cfg.step_s)?;
    let mut rng = rng_for(seed, 4);
    let vehicle = FlatMap3D::new(cfg.vehicle, dt)?;
    let mut err = 0.0f64;
    let cases = 100;
    for _ in 0..cases {
        let p = OutputSample3D::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-PI..PI),
        );
        let u = vehicle.input_from_outputs(&[p; INPUT_WINDOW_3D])?;
        err = err.max((u.thrust - cfg.vehicle.hover_thrust()).abs()).max(u.torque.amax());

        let params = Params2D { yaw: p.yaw, ..Params2D::default() };
        let planar = FlatMap2D::new(params, dt)?;
        let y = OutputSample2D::new(p.position.x, p.position.y);
        let u = planar.output_to_input(&[y; INPUT_WINDOW_2D])?;
        err = err.max(u.pitch_cmd.abs()).max(u.roll_cmd.abs());
    }
    Ok(CheckReport::new("hover_trims", cases, err, TRIM_TOL))
}

/// Dense KKT solve with full pivoting, independent of the solver under test.
pub fn dense_kkt_oracle(problem: &EqQp) -> Option<DVector<f64>> {
    let (n, m) = (problem.dim(), problem.num_constraints());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&problem.gradient));
    if m > 0 {
        k.view_mut((n, 0), (m, n)).copy_from(&problem.constraints);
        k.view_mut((0, n), (n, m)).copy_from(&problem.constraints.transpose());
        rhs.rows_mut(n, m).copy_from(&problem.rhs);
    }
    k.full_piv_lu().solve(&rhs).map(|x| x.rows(0, n).into_owned())
}

pub fn random_qp(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> EqQp {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(0..=max_m.min(n));
    let rank = rng.random_range(1..=n);
    let f = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    let h = f.transpose() * &f + DMatrix::identity(n, n) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    EqQp::new(h, g, a, b).expect("generated problem is well formed")
}

pub fn qp_oracle(cfg: &VerifyConfig, seed: u64) -> Result<CheckReport> {
    let mut rng = rng_for(seed, 5);
    let mut err = 0.0f64;
    for _ in 0..cfg.qp_instances {
        let problem = random_qp(&mut rng, 20, 8);
        let solution = solve_eq_qp(&problem)?;
        let Some(expected) = dense_kkt_oracle(&problem) else {
            err = f64::INFINITY;
            continue;
        };
        err = err.max((&solution.primal - expected).amax());
    }
    Ok(CheckReport::new("qp_dense_oracle", cfg.qp_instances, err, QP_TOL))
}

/// Every check, in a fixed order.
pub fn verify_all(cfg: &VerifyConfig, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    out.extend(planar_round_trip(cfg, seed)?);
    out.extend(vehicle_round_trip(cfg, seed)?);
    out.extend(inverse_composition(cfg, seed)?);
    out.push(hover_trims(cfg, seed)?);
    out.push(qp_oracle(cfg, seed)?);
    Ok(out)
}

pub fn write_reports(path: &std::path::Path, reports: &[CheckReport]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
    w.write_record(["check", "samples", "max_error", "tolerance", "passed"]).map_err(std::io::Error::other)?;
    for r in reports {
        w.write_record([
            r.name.to_string(),
            r.samples.to_string(),
            format!("{:e}", r.max_error),
            format!("{:e}", r.tolerance),
            r.passed.to_string(),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()
}
