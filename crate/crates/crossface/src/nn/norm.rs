//! Batch normalization over (N, H, W) per channel.
//!
//! Training normalizes with batch statistics (biased variance) and updates
//! running stats as running = (1 − m)·running + m·batch. Eval normalizes with
//! the running stats and needs no cache.

use super::{Elem, Tensor};

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
    pub momentum: T,
}

pub struct BnCache<T> {
    /// Normalized input x̂.
    pub xhat: Tensor<T>,
    /// Per-channel 1/√(σ² + ε).
    pub invstd: Vec<T>,
}

impl<T: Elem> BatchNorm2d<T> {
    pub fn new(c: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::full([1, c, 1, 1], T::one()),
            beta: Tensor::zeros([1, c, 1, 1]),
            running_mean: Tensor::zeros([1, c, 1, 1]),
            running_var: Tensor::full([1, c, 1, 1], T::one()),
            eps: T::from_f(1e-5),
            momentum: T::from_f(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[1]
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let m = n * h * w;
        let mf = T::from_f(m as f64);
        let hw = h * w;

        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut invstd = vec![T::zero(); c];
        for ci in 0..c {
            let mut mean = T::zero();
            for ni in 0..n {
                let plane = &x.image(ni)[ci * hw..(ci + 1) * hw];
                for v in plane {
                    mean += *v;
                }
            }
            mean /= mf;
            let mut var = T::zero();
            for ni in 0..n {
                let plane = &x.image(ni)[ci * hw..(ci + 1) * hw];
                for v in plane {
                    let d = *v - mean;
                    var += d * d;
                }
            }
            var /= mf;
            let istd = T::one() / (var + self.eps).sqrt();
            invstd[ci] = istd;

            let g = self.gamma.data()[ci];
            let b = self.beta.data()[ci];
            for ni in 0..n {
                let src = &x.image(ni)[ci * hw..(ci + 1) * hw];
                let base = ni * c * hw + ci * hw;
                for (j, v) in src.iter().enumerate() {
                    let xh = (*v - mean) * istd;
                    xhat.data_mut()[base + j] = xh;
                    y.data_mut()[base + j] = g * xh + b;
                }
            }

            let mom = self.momentum;
            let one_m = T::one() - mom;
            self.running_mean.data_mut()[ci] = one_m * self.running_mean.data()[ci] + mom * mean;
            self.running_var.data_mut()[ci] = one_m * self.running_var.data()[ci] + mom * var;
        }
        (y, BnCache { xhat, invstd })
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let hw = h * w;
        let mut y = Tensor::zeros(x.shape());
        for ci in 0..c {
            let mean = self.running_mean.data()[ci];
            let istd = T::one() / (self.running_var.data()[ci] + self.eps).sqrt();
            let g = self.gamma.data()[ci];
            let b = self.beta.data()[ci];
            for ni in 0..n {
                let base = ni * c * hw + ci * hw;
                for j in 0..hw {
                    y.data_mut()[base + j] = g * (x.data()[base + j] - mean) * istd + b;
                }
            }
        }
        y
    }

    /// Standard batch-statistics backward; dμ and dσ² terms included.
    pub fn backward(
        &self,
        cache: &BnCache<T>,
        dy: &Tensor<T>,
        dgamma: &mut Tensor<T>,
        dbeta: &mut Tensor<T>,
    ) -> Tensor<T> {
        let [n, c, h, w] = dy.shape();
        assert_eq!(cache.xhat.shape(), dy.shape(), "batchnorm backward shapes");
        let hw = h * w;
        let m = n * h * w;
        let mf = T::from_f(m as f64);

        let mut dx = Tensor::zeros(dy.shape());
        for ci in 0..c {
            let g = self.gamma.data()[ci];
            let istd = cache.invstd[ci];
            // accumulate Σ dy, Σ dy·x̂ over the channel
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for ni in 0..n {
                let base = ni * c * hw + ci * hw;
                for j in 0..hw {
                    let gdy = dy.data()[base + j];
                    sum_dy += gdy;
                    sum_dy_xhat += gdy * cache.xhat.data()[base + j];
                }
            }
            dgamma.data_mut()[ci] += sum_dy_xhat;
            dbeta.data_mut()[ci] += sum_dy;

            // dx = γ·istd/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
            let k = g * istd / mf;
            for ni in 0..n {
                let base = ni * c * hw + ci * hw;
                for j in 0..hw {
                    let gdy = dy.data()[base + j];
                    let xh = cache.xhat.data()[base + j];
                    dx.data_mut()[base + j] =
                        k * (mf * gdy - sum_dy - xh * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_is_normalized_then_affine() {
        let x = Tensor::from_vec(
            [2, 2, 1, 2],
            vec![1.0f64, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0],
        );
        let mut bn = BatchNorm2d::new(2);
        bn.gamma = Tensor::from_vec([1, 2, 1, 1], vec![2.0, 0.5]);
        bn.beta = Tensor::from_vec([1, 2, 1, 1], vec![1.0, -1.0]);
        let (y, _) = bn.forward_train(&x);
        // per channel, mean of (y - beta)/gamma must be ~0 and var ~1
        for ci in 0..2 {
            let g = bn.gamma.data()[ci];
            let b = bn.beta.data()[ci];
            let vals: Vec<f64> = (0..2)
                .flat_map(|ni| (0..2).map(move |j| (ni, j)))
                .map(|(ni, j)| (y.at(ni, ci, 0, j) - b) / g)
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / 4.0;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps shifts it slightly
        }
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.running_mean = Tensor::from_vec([1, 1, 1, 1], vec![2.0]);
        bn.running_var = Tensor::from_vec([1, 1, 1, 1], vec![4.0]);
        bn.eps = 0.0;
        let x = Tensor::from_vec([1, 1, 1, 2], vec![2.0, 4.0]);
        let y = bn.forward_eval(&x);
        assert!((y.data()[0] - 0.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.momentum = 0.5;
        let x = Tensor::from_vec([1, 1, 1, 4], vec![1.0, 3.0, 5.0, 7.0]); // mean 4, var 5
        bn.forward_train(&x);
        assert!((bn.running_mean.data()[0] - 2.0).abs() < 1e-12); // 0.5·0 + 0.5·4
        assert!((bn.running_var.data()[0] - 3.0).abs() < 1e-12); // 0.5·1 + 0.5·5
    }
}
