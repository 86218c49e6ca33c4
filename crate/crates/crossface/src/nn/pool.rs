//! Average pooling. Used to shrink attention key/value maps past the memory
//! cap and to downsample inside the feature extractor.

use super::{Elem, Tensor};

/// Non-overlapping k×k average pool; spatial dims must divide by k.
pub fn avg_pool<T: Elem>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    assert!(k > 0 && h % k == 0 && w % k == 0, "pool factor must divide dims");
    let (oh, ow) = (h / k, w / k);
    let inv = T::from_f(1.0 / (k * k) as f64);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            s += x.at(ni, ci, oy * k + dy, ox * k + dx);
                        }
                    }
                    y.set(ni, ci, oy, ox, s * inv);
                }
            }
        }
    }
    y
}

/// Adjoint of [`avg_pool`]: spreads each gradient evenly over its k×k window.
pub fn avg_pool_backward<T: Elem>(dy: &Tensor<T>, k: usize, in_shape: [usize; 4]) -> Tensor<T> {
    let [n, c, oh, ow] = dy.shape();
    assert_eq!([n, c, oh * k, ow * k], in_shape, "pool backward shape");
    let inv = T::from_f(1.0 / (k * k) as f64);
    let mut dx = Tensor::zeros(in_shape);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy.at(ni, ci, oy, ox) * inv;
                    for ddy in 0..k {
                        for ddx in 0..k {
                            let prev = dx.at(ni, ci, oy * k + ddy, ox * k + ddx);
                            dx.set(ni, ci, oy * k + ddy, ox * k + ddx, prev + g);
                        }
                    }
                }
            }
        }
    }
    dx
}
