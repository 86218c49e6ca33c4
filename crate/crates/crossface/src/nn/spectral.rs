//! Spectral normalization of conv weights by power iteration.
//!
//! A weight `[c_out][c_in][kh][kw]` is flattened to the matrix
//! W ∈ R^{c_out × c_in·kh·kw}. One iteration per training step:
//!   u ← norm(W v), v ← norm(Wᵀ u), σ̂ = uᵀ W v, W̄ = W / σ̂,
//! with norm(x) = x / (‖x‖₂ + 1e−12). u and v persist across steps and are
//! treated as constants by the gradient:
//!   dW = (dW̄ − ⟨dW̄, W̄⟩ u vᵀ) / σ̂.
//!
//! Construction burns in extra iterations so σ̂ already tracks the leading
//! singular pair at step one; afterwards the pair drifts slowly with W and a
//! single iteration per step keeps up.

use super::conv::{Conv2d, ConvCache};
use super::{Elem, Tensor};
use rand::Rng;

pub const SN_EPS: f64 = 1e-12;
const BURN_IN_ITERS: usize = 30;

#[derive(Debug, Clone)]
pub struct SpectralNorm<T> {
    /// Left vector, length c_out. Stored `[1,1,1,m]`.
    pub u: Tensor<T>,
    /// Right vector, length c_in·kh·kw. Stored `[1,1,1,n]`.
    pub v: Tensor<T>,
}

fn normalize_into<T: Elem>(x: &mut [T]) {
    let mut s = T::zero();
    for v in x.iter() {
        s += *v * *v;
    }
    let denom = s.sqrt() + T::from_f(SN_EPS);
    for v in x.iter_mut() {
        *v = *v / denom;
    }
}

impl<T: Elem> SpectralNorm<T> {
    pub fn new<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut v = Tensor::zeros([1, 1, 1, cols]);
        for x in v.data_mut() {
            *x = T::from_f(super::init::randn(rng));
        }
        normalize_into(v.data_mut());
        SpectralNorm {
            u: Tensor::zeros([1, 1, 1, rows]),
            v,
        }
    }

    /// Advance the power iteration `iters` times against `w` (viewed as
    /// rows×cols) and return σ̂ from the final pair.
    pub fn iterate(&mut self, w: &Tensor<T>, iters: usize) -> T {
        let rows = w.shape()[0];
        let cols = w.numel() / rows;
        assert_eq!(self.u.numel(), rows, "spectral u length");
        assert_eq!(self.v.numel(), cols, "spectral v length");
        let wd = w.data();
        for _ in 0..iters {
            // u = norm(W v)
            for r in 0..rows {
                let mut acc = T::zero();
                let row = &wd[r * cols..(r + 1) * cols];
                for (a, b) in row.iter().zip(self.v.data()) {
                    acc += *a * *b;
                }
                self.u.data_mut()[r] = acc;
            }
            normalize_into(self.u.data_mut());
            // v = norm(Wᵀ u)
            for x in self.v.data_mut().iter_mut() {
                *x = T::zero();
            }
            for r in 0..rows {
                let ur = self.u.data()[r];
                let row = &wd[r * cols..(r + 1) * cols];
                for (c, a) in row.iter().enumerate() {
                    self.v.data_mut()[c] += *a * ur;
                }
            }
            normalize_into(self.v.data_mut());
        }
        self.sigma(w)
    }

    /// σ̂ = uᵀ W v with the current pair; no state change.
    pub fn sigma(&self, w: &Tensor<T>) -> T {
        let rows = w.shape()[0];
        let cols = w.numel() / rows;
        let wd = w.data();
        let mut sig = T::zero();
        for r in 0..rows {
            let mut acc = T::zero();
            let row = &wd[r * cols..(r + 1) * cols];
            for (a, b) in row.iter().zip(self.v.data()) {
                acc += *a * *b;
            }
            sig += acc * self.u.data()[r];
        }
        sig
    }

    /// W̄ = W / σ̂ with the current pair (σ̂ guarded away from zero).
    pub fn normalized(&self, w: &Tensor<T>) -> (Tensor<T>, T) {
        let sig = self.sigma(w);
        let denom = if sig.abs().to_f() < SN_EPS {
            T::from_f(SN_EPS)
        } else {
            sig
        };
        let mut wbar = w.clone();
        wbar.scale(T::one() / denom);
        (wbar, denom)
    }

    /// Map the gradient w.r.t. W̄ to the gradient w.r.t. W in place.
    pub fn backward(&self, wbar: &Tensor<T>, sigma: T, dwbar: &mut Tensor<T>) {
        let rows = wbar.shape()[0];
        let cols = wbar.numel() / rows;
        let mut inner = T::zero();
        for (a, b) in dwbar.data().iter().zip(wbar.data()) {
            inner += *a * *b;
        }
        let inv_sigma = T::one() / sigma;
        for r in 0..rows {
            let ur = self.u.data()[r];
            for c in 0..cols {
                let d = dwbar.data()[r * cols + c] - inner * ur * self.v.data()[c];
                dwbar.data_mut()[r * cols + c] = d * inv_sigma;
            }
        }
    }
}

/// Spectrally normalized convolution. Forward uses W̄; the raw weight is the
/// trained parameter.
#[derive(Debug, Clone)]
pub struct SnConv2d<T> {
    pub conv: Conv2d<T>,
    pub sn: SpectralNorm<T>,
}

pub struct SnConvCache<T> {
    pub conv: ConvCache<T>,
    pub wbar: Tensor<T>,
    pub sigma: T,
}

impl<T: Elem> SnConv2d<T> {
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(c_in, c_out, kernel, stride, pad);
        let sn = SpectralNorm::new(c_out, c_in * kernel * kernel, rng);
        SnConv2d { conv, sn }
    }

    /// Burn the power iteration in against the (freshly initialized) weight.
    pub fn warm_up(&mut self) {
        self.sn.iterate(&self.conv.w, BURN_IN_ITERS);
    }

    /// Advance u, v once (training step entry) and hand back W̄ for reuse
    /// across every forward this step makes.
    pub fn step_normalized(&mut self, iters: usize) -> (Tensor<T>, T) {
        self.sn.iterate(&self.conv.w, iters);
        self.sn.normalized(&self.conv.w)
    }

    /// W̄ from the stored pair without advancing it (eval forwards).
    pub fn current_normalized(&self) -> (Tensor<T>, T) {
        self.sn.normalized(&self.conv.w)
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let (wbar, _) = self.current_normalized();
        self.conv.forward_with(&wbar, x)
    }

    /// Forward with a W̄ produced by [`Self::step_normalized`].
    pub fn forward_cached(
        &self,
        wbar: &Tensor<T>,
        sigma: T,
        x: &Tensor<T>,
    ) -> (Tensor<T>, SnConvCache<T>) {
        let y = self.conv.forward_with(wbar, x);
        (
            y,
            SnConvCache {
                conv: ConvCache { x: x.clone() },
                wbar: wbar.clone(),
                sigma,
            },
        )
    }

    /// Backward through W̄, then through the normalization to the raw weight.
    pub fn backward(
        &self,
        cache: &SnConvCache<T>,
        dy: &Tensor<T>,
        dw: &mut Tensor<T>,
        db: &mut Tensor<T>,
    ) -> Tensor<T> {
        let mut dwbar = Tensor::zeros(self.conv.w.shape());
        let dx = self
            .conv
            .backward_with(&cache.wbar, &cache.conv.x, dy, &mut dwbar, db);
        self.sn.backward(&cache.wbar, cache.sigma, &mut dwbar);
        dw.add_assign(&dwbar);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_converges_to_dominant_singular_value() {
        // W diag(3, 1) embedded in a 2x2 kernel-1 weight
        let w = Tensor::from_vec([2, 2, 1, 1], vec![3.0f64, 0.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sn = SpectralNorm::new(2, 2, &mut rng);
        let sig = sn.iterate(&w, 50);
        assert!((sig - 3.0).abs() < 1e-9, "sigma {}", sig);
        let (wbar, _) = sn.normalized(&w);
        assert!((wbar.data()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalization_guard_handles_zero_weight() {
        let w = Tensor::<f32>::zeros([2, 2, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sn = SpectralNorm::new(2, 2, &mut rng);
        let sig = sn.iterate(&w, 3);
        assert_eq!(sig, 0.0);
        let (wbar, sigma) = sn.normalized(&w);
        assert!(wbar.is_finite());
        assert!(sigma > 0.0);
    }
}
