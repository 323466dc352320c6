//! Rotation matrices and Euler-angle kinematics.
//!
//! Attitudes use the Z-Y-X convention `R = Rz(yaw) * Ry(pitch) * Rx(roll)`,
//! mapping body-frame vectors to the inertial frame. Under this convention the
//! third column of `R` is inverted exactly by [`pitch_roll_from_third_column`].

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Default guard on `R33` below which pitch/roll extraction is refused.
pub const SINGULARITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    /// Components ordered as `(roll, pitch, yaw)`.
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Body-to-inertial rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_euler(angles: &EulerAngles) -> Self {
        let (sr, cr) = angles.roll.sin_cos();
        let (sp, cp) = angles.pitch.sin_cos();
        let (sy, cy) = angles.yaw.sin_cos();
        Self(Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        ))
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Entry at 1-based `(row, col)`, matching the `R^{row col}` notation.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.0[(row - 1, col - 1)]
    }

    pub fn third_column(&self) -> Vector3<f64> {
        self.0.column(2).into_owned()
    }

    pub fn transpose(&self) -> Matrix3<f64> {
        self.0.transpose()
    }

    /// Horizontal specific-force ratios `(R13/R33, R23/R33)`.
    pub fn tilt_ratios(&self, eps: f64) -> Result<(f64, f64)> {
        let r33 = self.0[(2, 2)];
        if r33 <= eps {
            return Err(Error::SingularAttitude { r33 });
        }
        Ok((self.0[(0, 2)] / r33, self.0[(1, 2)] / r33))
    }
}

pub fn rotation_from_euler(angles: &EulerAngles) -> RotationMatrix {
    RotationMatrix::from_euler(angles)
}

/// Recovers `(pitch, roll)` from the (possibly unnormalized) third column of
/// `R` and the yaw angle. Only the ratios `r13/r33` and `r23/r33` are used.
pub fn pitch_roll_from_third_column(r13: f64, r23: f64, r33: f64, yaw: f64, eps: f64) -> Result<(f64, f64)> {
    if !(r33 > eps) {
        return Err(Error::SingularAttitude { r33 });
    }
    Ok(pitch_roll_from_ratios(r13 / r33, r23 / r33, yaw))
}

/// `pitch_roll_from_third_column` with the default guard.
pub fn euler_from_third_column(r13: f64, r23: f64, r33: f64, yaw: f64) -> Result<(f64, f64)> {
    pitch_roll_from_third_column(r13, r23, r33, yaw, SINGULARITY_EPS)
}

/// Same inversion expressed directly on the ratios `R13/R33`, `R23/R33`.
/// Total: any finite ratios map into the open `(-pi/2, pi/2)` chart.
pub fn pitch_roll_from_ratios(ratio_x: f64, ratio_y: f64, yaw: f64) -> (f64, f64) {
    let (sy, cy) = yaw.sin_cos();
    let pitch = (ratio_x * cy + ratio_y * sy).atan();
    let roll = ((ratio_x * sy - ratio_y * cy) * pitch.cos()).atan();
    (pitch, roll)
}

/// Matrix mapping Euler-angle rates `(roll', pitch', yaw')` to the inertial
/// angular velocity for the Z-Y-X convention.
pub fn euler_rate_matrix(rotation: &RotationMatrix, yaw: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let r = rotation.matrix();
    Matrix3::new(r[(0, 0)], -sy, 0.0, r[(1, 0)], cy, 0.0, r[(2, 0)], 0.0, 1.0)
}

/// Body rates `(p, q, r)` from Euler-angle rates.
pub fn body_rates_from_euler_rates(rotation: &RotationMatrix, yaw: f64, euler_rates: &Vector3<f64>) -> Vector3<f64> {
    rotation.transpose() * (euler_rate_matrix(rotation, yaw) * euler_rates)
}

/// Inverse of [`body_rates_from_euler_rates`]. Fails at gimbal lock.
pub fn euler_rates_from_body_rates(
    rotation: &RotationMatrix,
    yaw: f64,
    body_rates: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let inertial = rotation.matrix() * body_rates;
    let m = euler_rate_matrix(rotation, yaw);
    // det(M) = cos(pitch)
    let det = m.determinant();
    if det.abs() <= SINGULARITY_EPS {
        return Err(Error::SingularAttitude { r33: rotation.entry(3, 3) });
    }
    m.lu().solve(&inertial).ok_or(Error::SingularAttitude { r33: rotation.entry(3, 3) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_angles_give_identity() {
        let r = rotation_from_euler(&EulerAngles::default());
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn pure_pitch_and_pure_roll_columns() {
        let r = rotation_from_euler(&EulerAngles::new(0.0, 0.1, 0.0));
        assert_abs_diff_eq!(r.entry(1, 3), 0.1f64.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.entry(3, 3), 0.1f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.entry(2, 3), 0.0, epsilon = 1e-15);

        let r = rotation_from_euler(&EulerAngles::new(0.2, 0.0, 0.0));
        assert_abs_diff_eq!(r.entry(2, 3), -(0.2f64.sin()), epsilon = 1e-15);
        assert_abs_diff_eq!(r.entry(3, 3), 0.2f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.entry(1, 3), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn third_column_matches_closed_form() {
        let (roll, pitch, yaw) = (0.3, -0.4, 1.1);
        let r = rotation_from_euler(&EulerAngles::new(roll, pitch, yaw));
        let r13 = yaw.cos() * pitch.sin() * roll.cos() + yaw.sin() * roll.sin();
        let r23 = yaw.sin() * pitch.sin() * roll.cos() - yaw.cos() * roll.sin();
        assert_abs_diff_eq!(r.entry(1, 3), r13, epsilon = 1e-15);
        assert_abs_diff_eq!(r.entry(2, 3), r23, epsilon = 1e-15);
        assert_abs_diff_eq!(r.entry(3, 3), pitch.cos() * roll.cos(), epsilon = 1e-15);
    }

    #[test]
    fn level_attitude_for_any_yaw() {
        assert_eq!(euler_from_third_column(0.0, 0.0, 1.0, 0.7).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn forced_forty_five_degrees() {
        let (pitch, roll) = euler_from_third_column(1.0, 0.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(pitch, PI / 4.0, epsilon = 1e-15);
        assert_eq!(roll, 0.0);
    }

    #[test]
    fn specific_round_trip() {
        let r = rotation_from_euler(&EulerAngles::new(0.1, 0.3, 0.5));
        let c = r.third_column();
        let (pitch, roll) = euler_from_third_column(c[0], c[1], c[2], 0.5).unwrap();
        assert_abs_diff_eq!(pitch, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(roll, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn singular_chart_is_rejected() {
        assert!(matches!(euler_from_third_column(1.0, 0.0, 0.0, 0.0), Err(Error::SingularAttitude { .. })));
        assert!(pitch_roll_from_third_column(1.0, 0.0, 1e-3, 0.0, 1e-2).is_err());
        assert!(pitch_roll_from_third_column(1.0, 0.0, -1.0, 0.0, 1e-6).is_err());
    }

    #[test]
    fn identity_rate_map() {
        let r = RotationMatrix::identity();
        let zero = body_rates_from_euler_rates(&r, 0.0, &Vector3::zeros());
        assert_eq!(zero, Vector3::zeros());
        let rates = Vector3::new(0.3, -0.2, 0.9);
        assert_abs_diff_eq!(body_rates_from_euler_rates(&r, 0.0, &rates), rates, epsilon = 1e-15);
    }

    /// Body rates from the skew part of R^T dR/dt, with dR/dt by central differences.
    fn body_rates_by_finite_difference(angles: &EulerAngles, rates: &Vector3<f64>) -> Vector3<f64> {
        let h = 1e-6;
        let at = |s: f64| {
            let a = angles.as_vector() + rates * s;
            *rotation_from_euler(&EulerAngles::from_vector(&a)).matrix()
        };
        let r0 = at(0.0);
        let dr = (at(h) - at(-h)) / (2.0 * h);
        let skew = r0.transpose() * dr;
        Vector3::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)])
    }

    proptest! {
        #[test]
        fn third_column_round_trip(
            roll in -0.4 * PI..0.4 * PI,
            pitch in -0.4 * PI..0.4 * PI,
            yaw in -PI..PI,
        ) {
            let c = rotation_from_euler(&EulerAngles::new(roll, pitch, yaw)).third_column();
            let (p, r) = euler_from_third_column(c[0], c[1], c[2], yaw).unwrap();
            prop_assert!((p - pitch).abs() < 1e-10);
            prop_assert!((r - roll).abs() < 1e-10);
        }

        #[test]
        fn third_column_scale_invariance(
            roll in -1.2f64..1.2,
            pitch in -1.2f64..1.2,
            yaw in -PI..PI,
            scale in 1e-3f64..1e3,
        ) {
            let c = rotation_from_euler(&EulerAngles::new(roll, pitch, yaw)).third_column();
            let base = euler_from_third_column(c[0], c[1], c[2], yaw).unwrap();
            let s = c * scale;
            let scaled = euler_from_third_column(s[0], s[1], s[2], yaw).unwrap();
            prop_assert!((base.0 - scaled.0).abs() < 1e-12);
            prop_assert!((base.1 - scaled.1).abs() < 1e-12);
        }

        #[test]
        fn rotation_is_orthonormal(
            roll in -1.5f64..1.5,
            pitch in -1.5f64..1.5,
            yaw in -PI..PI,
        ) {
            let r = *rotation_from_euler(&EulerAngles::new(roll, pitch, yaw)).matrix();
            let err = (r.transpose() * r - Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn body_rates_match_finite_difference(
            roll in -1.0f64..1.0,
            pitch in -1.0f64..1.0,
            yaw in -PI..PI,
            rates in proptest::array::uniform3(-2.0f64..2.0),
        ) {
            let angles = EulerAngles::new(roll, pitch, yaw);
            let rates = Vector3::from(rates);
            let r = rotation_from_euler(&angles);
            let analytic = body_rates_from_euler_rates(&r, yaw, &rates);
            let numeric = body_rates_by_finite_difference(&angles, &rates);
            prop_assert!((analytic - numeric).abs().max() < 1e-6);

            let back = euler_rates_from_body_rates(&r, yaw, &analytic).unwrap();
            prop_assert!((back - rates).abs().max() < 1e-12);
        }
    }
}
