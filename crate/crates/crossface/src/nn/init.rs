//! Seeded Gaussian initialization.
//!
//! All conv / deconv kernels draw N(0, σ²) with σ = 0.02 from one seeded
//! stream; batchnorm affine params keep their identity defaults. Box-Muller
//! keeps the draw sequence identical across element types.

use super::{Elem, Tensor};
use rand::Rng;

pub const INIT_SIGMA: f64 = 0.02;

/// One standard normal draw (Box-Muller, two uniforms per pair).
pub fn randn<R: Rng>(rng: &mut R) -> f64 {
    // u1 in (0,1]: avoid ln(0)
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn fill_gaussian<T: Elem, R: Rng>(t: &mut Tensor<T>, sigma: f64, rng: &mut R) {
    for v in t.data_mut() {
        *v = T::from_f(randn(rng) * sigma);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_moments_are_plausible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = Tensor::<f64>::zeros([1, 1, 100, 100]);
        fill_gaussian(&mut t, 0.02, &mut rng);
        let mean = t.mean_f64();
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e4;
        assert!(mean.abs() < 1e-3);
        assert!((var.sqrt() - 0.02).abs() < 2e-3);
    }
}
