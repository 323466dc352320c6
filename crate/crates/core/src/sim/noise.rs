use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::flat::OutputSample2D;

/// Generator and sampling method, as recorded in run metadata.
pub const RNG_ALGORITHM: &str =
    "ChaCha8Rng (rand_chacha 0.9) seeded with seed_from_u64(seed), stream = trial index; normals from rand_distr 0.5 StandardNormal";

/// Additive Gaussian noise on the measured output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation per output channel, metres.
    pub sigma: [f64; 2],
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, channel_mask: [f64; 2], seed: u64) -> Self {
        Self { sigma: [sigma * channel_mask[0], sigma * channel_mask[1]], seed }
    }

    /// Independent stream for one trial. Both channels are always drawn, so
    /// trials with the same index see the same normals whatever the channel mask.
    pub fn stream(&self, trial: u64) -> NoiseStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        NoiseStream { sigma: self.sigma, rng }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    sigma: [f64; 2],
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn measure(&mut self, truth: &OutputSample2D) -> OutputSample2D {
        let nx: f64 = StandardNormal.sample(&mut self.rng);
        let ny: f64 = StandardNormal.sample(&mut self.rng);
        OutputSample2D::new(truth.x + self.sigma[0] * nx, truth.y + self.sigma[1] * ny)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_exact() {
        let mut s = NoiseModel::new(0.0, [1.0, 1.0], 3).stream(0);
        let y = OutputSample2D::new(1.5, -2.5);
        for _ in 0..10 {
            assert_eq!(s.measure(&y), y);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let m = NoiseModel::new(1.0, [1.0, 1.0], 42);
        let draw = |t| {
            let mut s = m.stream(t);
            (0..5).map(|_| s.measure(&OutputSample2D::zeros())).collect::<Vec<_>>()
        };
        assert_eq!(draw(0), draw(0));
        assert_ne!(draw(0), draw(1));
    }

    #[test]
    fn masked_channel_stays_clean() {
        let mut s = NoiseModel::new(0.1, [1.0, 0.0], 1).stream(2);
        for _ in 0..10 {
            let y = s.measure(&OutputSample2D::zeros());
            assert_eq!(y.y, 0.0);
            assert_ne!(y.x, 0.0);
        }
    }

    #[test]
    fn sample_moments() {
        let mut s = NoiseModel::new(2.0, [1.0, 1.0], 9).stream(0);
        let n = 20000;
        let draws: Vec<_> = (0..n).map(|_| s.measure(&OutputSample2D::zeros())).collect();
        let mean = draws.iter().map(|d| d.x).sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d.x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05);
        assert!((var.sqrt() - 2.0).abs() < 0.05);
    }
}
