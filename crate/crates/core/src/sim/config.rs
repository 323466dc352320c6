//! Experiment configuration, read from TOML. Every section is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ControllerKind, DfConfig, FmpcConfig, GeometricPath, PdConfig};
use crate::error::{Error, Result};
use crate::models::{Params2D, Params3D, StepSize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Base seed; trial `i` uses stream `i` of the generator seeded with it.
    pub seed: u64,
    pub trials: usize,
    pub plant: Params2D,
    pub timing: Timing,
    pub limits: Limits,
    pub reference: ReferenceSpec,
    pub noise: NoiseConfig,
    pub controllers: ControllersConfig,
    pub flatness: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 10,
            plant: Params2D::default(),
            timing: Timing::default(),
            limits: Limits::default(),
            reference: ReferenceSpec::default(),
            noise: NoiseConfig::default(),
            controllers: ControllersConfig::default(),
            flatness: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    pub plant_rate_hz: f64,
    pub controller_rate_hz: f64,
    /// Trial length for fixed-point references. Path trials last
    /// `path length / speed + settle_time`.
    pub duration_s: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self { plant_rate_hz: 200.0, controller_rate_hz: 50.0, duration_s: 20.0 }
    }
}

impl Timing {
    pub fn controller_step(&self) -> Result<StepSize> {
        StepSize::from_rate(self.controller_rate_hz)
    }

    /// Plant steps per controller step.
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.plant_rate_hz / self.controller_rate_hz;
        let rounded = ratio.round();
        if !(ratio.is_finite() && rounded >= 1.0 && (ratio - rounded).abs() < 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "plant rate {} Hz must be an integer multiple of controller rate {} Hz",
                self.plant_rate_hz, self.controller_rate_hz
            )));
        }
        Ok(rounded as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    /// Symmetric bound on both attitude commands, radians.
    pub command_limit: f64,
    /// A trial is unstable once either output exceeds this magnitude, metres.
    pub instability_bound: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { command_limit: 0.5, instability_bound: 1e3 }
    }
}

fn default_settle_time() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Hold a fixed output, starting at rest from `start`.
    Point {
        target: [f64; 2],
        #[serde(default)]
        start: [f64; 2],
    },
    /// Follow a polyline at each speed in `speeds`, starting at rest on the first waypoint.
    Path {
        waypoints: Vec<[f64; 2]>,
        speeds: Vec<f64>,
        #[serde(default = "default_settle_time")]
        settle_time: f64,
    },
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::Point { target: [10.0, 0.0], start: [0.0, 0.0] }
    }
}

impl ReferenceSpec {
    pub fn path(&self) -> Result<Option<GeometricPath>> {
        match self {
            ReferenceSpec::Point { .. } => Ok(None),
            ReferenceSpec::Path { waypoints, .. } => GeometricPath::from_points(waypoints).map(Some),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Standard deviation for single runs and path tracking, metres.
    pub sigma: f64,
    /// Output channels that receive noise.
    pub channels: Vec<Channel>,
    /// Standard deviations visited by `sweep-noise`.
    pub sweep: Vec<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 1e-4, channels: vec![Channel::X], sweep: vec![1e-4, 5e-4, 1e-3, 5e-3, 1e-2] }
    }
}

impl NoiseConfig {
    pub fn channel_mask(&self) -> [f64; 2] {
        [
            if self.channels.contains(&Channel::X) { 1.0 } else { 0.0 },
            if self.channels.contains(&Channel::Y) { 1.0 } else { 0.0 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllersConfig {
    /// Controllers run by the sweeps (and the first one by `simulate`).
    pub enabled: Vec<ControllerKind>,
    pub df: DfConfig,
    pub fmpc: FmpcConfig,
    pub pd: PdConfig,
}

impl Default for ControllersConfig {
    fn default() -> Self {
        Self {
            enabled: vec![ControllerKind::Df, ControllerKind::Fmpc],
            df: DfConfig::default(),
            fmpc: FmpcConfig::default(),
            pd: PdConfig::default(),
        }
    }
}

/// Sizes and bounds of the round-trip checks run by `verify-flatness`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub step_s: f64,
    pub rollout_steps: usize,
    pub planar_rollouts: usize,
    pub planar_command_bound: f64,
    pub vehicle_rollouts: usize,
    pub vehicle: Params3D,
    /// Torque bound for random vehicle inputs, N m.
    pub torque_bound: f64,
    /// Thrust is drawn from `m g (1 +/- thrust_spread)`.
    pub thrust_spread: f64,
    pub compositions: usize,
    pub qp_instances: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            step_s: 0.02,
            rollout_steps: 50,
            planar_rollouts: 1000,
            planar_command_bound: 0.3,
            vehicle_rollouts: 500,
            vehicle: Params3D::default(),
            torque_bound: 0.01,
            thrust_spread: 0.1,
            compositions: 100_000,
            qp_instances: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        self.plant.validate()?;
        self.timing.controller_step()?;
        self.timing.substeps()?;
        if !(self.timing.duration_s > 0.0 && self.timing.duration_s.is_finite()) {
            return bad(format!("duration_s must be positive, got {}", self.timing.duration_s));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.limits.command_limit > 0.0 && self.limits.command_limit < std::f64::consts::FRAC_PI_2) {
            return bad(format!("command_limit must lie in (0, pi/2), got {}", self.limits.command_limit));
        }
        if !(self.limits.instability_bound > 0.0) {
            return bad(format!("instability_bound must be positive, got {}", self.limits.instability_bound));
        }
        let sigmas = std::iter::once(&self.noise.sigma).chain(&self.noise.sweep);
        if sigmas.clone().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise standard deviations must be finite and non-negative".into());
        }
        match &self.reference {
            ReferenceSpec::Point { target, start } => {
                if !target.iter().chain(start).all(|v| v.is_finite()) {
                    return bad("point reference must be finite".into());
                }
            }
            ReferenceSpec::Path { speeds, settle_time, .. } => {
                self.reference.path()?;
                if speeds.is_empty() || speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return bad(format!("path speeds must be positive, got {speeds:?}"));
                }
                if !(*settle_time >= 0.0 && settle_time.is_finite()) {
                    return bad(format!("settle_time must be non-negative, got {settle_time}"));
                }
            }
        }
        if self.controllers.enabled.is_empty() {
            return bad("controllers.enabled must name at least one controller".into());
        }
        self.controllers.df.validate()?;
        self.controllers.fmpc.validate()?;
        self.controllers.pd.validate()?;
        self.flatness.vehicle.validate()?;
        StepSize::new(self.flatness.step_s)?;
        Ok(())
    }

    /// Number of controller steps in a trial at `speed` (ignored for point references).
    pub fn controller_steps(&self, speed: Option<f64>) -> Result<usize> {
        let dt = self.timing.controller_step()?.seconds();
        let duration = match (&self.reference, speed) {
            (ReferenceSpec::Path { settle_time, .. }, Some(v)) => {
                let path = self.reference.path()?.expect("path reference");
                path.length() / v + settle_time
            }
            _ => self.timing.duration_s,
        };
        Ok((duration / dt).round() as usize)
    }
}
