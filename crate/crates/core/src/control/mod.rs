//! Closed-loop policies for the planar model and the path reference generator.

mod df;
mod fmpc;
mod history;
mod pd;
mod reference;

pub use df::{df_predictive_step, DfConfig, DfController, DfPlan, DfSolver};
pub use fmpc::{feedback_linearize, fmpc_step, FlatState, FmpcConfig, FmpcController, FmpcSolver};
pub use history::{ControllerHistory, WINDOW};
pub use pd::{pd_step, PdConfig, PdController};
pub use reference::{ClosestPoint, GeometricPath, ReferenceTrajectory};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat::OutputSample2D;
use crate::models::Input2D;

/// A symmetric positive-semidefinite 2x2 weight, written row by row.
pub type Weight2 = [[f64; 2]; 2];

pub(crate) fn identity_weight(scale: f64) -> Weight2 {
    [[scale, 0.0], [0.0, scale]]
}

pub(crate) fn weight_matrix(name: &str, w: &Weight2) -> Result<Matrix2<f64>> {
    let m = Matrix2::new(w[0][0], w[0][1], w[1][0], w[1][1]);
    let finite = m.iter().all(|v| v.is_finite());
    let symmetric = (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-12 * m.amax().max(1.0);
    let psd = m[(0, 0)] >= 0.0 && m[(1, 1)] >= 0.0 && m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] >= 0.0;
    if finite && symmetric && psd {
        Ok(m)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be a symmetric PSD 2x2 matrix, got {w:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Df,
    Fmpc,
    Pd,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Df => "df",
            ControllerKind::Fmpc => "fmpc",
            ControllerKind::Pd => "pd",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A policy driven once per controller step with the latest measurement.
pub trait Controller2D: Send {
    fn kind(&self) -> ControllerKind;

    /// Reference samples needed per step (horizon + 1).
    fn reference_len(&self) -> usize;

    /// Consumes the newest measurement and returns the command to hold until the next step.
    fn step(&mut self, measurement: OutputSample2D, reference: &ReferenceTrajectory) -> Result<Input2D>;
}

fn checked(input: Input2D) -> Result<Input2D> {
    if input.is_finite() {
        Ok(input)
    } else {
        Err(Error::InvalidParameter(format!("controller produced a non-finite command {input:?}")))
    }
}
