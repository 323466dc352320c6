use crate::error::{Error, Result};
use crate::flat::OutputSample2D;
use crate::models::StepSize;

/// Reference samples at uniform spacing, with the velocity each sample is moving at.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub samples: Vec<OutputSample2D>,
    pub velocities: Vec<OutputSample2D>,
}

impl ReferenceTrajectory {
    /// A stationary reference of `len` samples.
    pub fn constant(point: OutputSample2D, len: usize) -> Self {
        Self { samples: vec![point; len], velocities: vec![OutputSample2D::zeros(); len] }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn current(&self) -> OutputSample2D {
        self.samples[0]
    }

    pub fn current_velocity(&self) -> OutputSample2D {
        self.velocities[0]
    }

    pub(crate) fn require(&self, len: usize) -> Result<()> {
        if self.samples.len() < len || self.velocities.len() != self.samples.len() {
            return Err(Error::InvalidParameter(format!(
                "reference has {} samples, controller needs {len}",
                self.samples.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub segment: usize,
    pub point: OutputSample2D,
    pub distance: f64,
}

/// A polyline through ordered waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricPath {
    waypoints: Vec<OutputSample2D>,
}

impl GeometricPath {
    pub fn new(waypoints: Vec<OutputSample2D>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidPath(format!("need at least 2 waypoints, got {}", waypoints.len())));
        }
        if waypoints.iter().any(|w| !w.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidPath("waypoints must be finite".into()));
        }
        if let Some(i) = waypoints.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::InvalidPath(format!("waypoints {i} and {} coincide", i + 1)));
        }
        Ok(Self { waypoints })
    }

    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(points.iter().map(|p| OutputSample2D::new(p[0], p[1])).collect())
    }

    pub fn waypoints(&self) -> &[OutputSample2D] {
        &self.waypoints
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Closest point on the polyline; ties go to the earliest segment.
    pub fn closest_point(&self, p: &OutputSample2D) -> ClosestPoint {
        let mut best = ClosestPoint { segment: 0, point: self.waypoints[0], distance: f64::INFINITY };
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let d = w[1] - w[0];
            let s = ((p - w[0]).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            let q = w[0] + d * s;
            let dist = (p - q).norm();
            if dist < best.distance {
                best = ClosestPoint { segment: i, point: q, distance: dist };
            }
        }
        best
    }

    pub fn distance(&self, p: &OutputSample2D) -> f64 {
        self.closest_point(p).distance
    }

    /// Starts at the point closest to `current` and advances `speed * dt` of arc length per
    /// sample, turning at waypoints and stopping at the last one.
    pub fn reference(
        &self,
        current: &OutputSample2D,
        speed: f64,
        horizon: usize,
        dt: StepSize,
    ) -> Result<ReferenceTrajectory> {
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(Error::InvalidParameter(format!("desired speed must be positive, got {speed}")));
        }
        let last = self.waypoints.len() - 1;
        let start = self.closest_point(current);
        let mut segment = start.segment;
        let mut point = start.point;
        // a projection onto the end of a segment belongs to the next one
        while segment < last && point == self.waypoints[segment + 1] {
            segment += 1;
        }

        let velocity_on = |segment: usize| {
            if segment >= last {
                OutputSample2D::zeros()
            } else {
                (self.waypoints[segment + 1] - self.waypoints[segment]).normalize() * speed
            }
        };

        let step = speed * dt.seconds();
        let mut samples = Vec::with_capacity(horizon + 1);
        let mut velocities = Vec::with_capacity(horizon + 1);
        samples.push(point);
        velocities.push(velocity_on(segment));
        for _ in 0..horizon {
            let mut remaining = step;
            while remaining > 0.0 && segment < last {
                let next = self.waypoints[segment + 1];
                let gap = (next - point).norm();
                if gap <= remaining {
                    remaining -= gap;
                    point = next;
                    segment += 1;
                } else {
                    point += (next - point) * (remaining / gap);
                    remaining = 0.0;
                }
            }
            samples.push(point);
            velocities.push(velocity_on(segment));
        }
        Ok(ReferenceTrajectory { samples, velocities })
    }
}
