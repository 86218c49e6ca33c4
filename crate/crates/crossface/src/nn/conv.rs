//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Weight layouts: `Conv2d.w` is `[c_out][c_in][kh][kw]`, `ConvT2d.w` is
//! `[c_in][c_out][kh][kw]` (the layout a stride-transposed conv naturally
//! indexes). Biases are `[1][c][1][1]`. Backward recomputes im2col from the
//! cached input instead of caching the column buffer; the buffer is k² times
//! larger than the input and cheap to rebuild.

use super::gemm::{gemm, gemm_at, gemm_bt};
use super::{conv_out, deconv_out, Elem, Tensor};

/// Patch geometry shared by gather and scatter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Gather `x [c][h][w]` into `col [c·k·k][oh·ow]`, zero-padding out of range.
pub fn im2col<T: Elem>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    col: &mut [T],
) -> (usize, usize) {
    let (oh, ow) = (conv_out(h, g.kernel, g.stride, g.pad), conv_out(w, g.kernel, g.stride, g.pad));
    let on = oh * ow;
    assert_eq!(col.len(), c * g.kernel * g.kernel * on, "col buffer size");
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = ((ci * g.kernel + ky) * g.kernel + kx) * on;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let base = iy as usize * w;
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            xc[base + ix as usize]
                        };
                    }
                }
            }
        }
    }
    (oh, ow)
}

/// Scatter-add `col [c·k·k][oh·ow]` back to `x [c][h][w]` (adjoint of [`im2col`]).
pub fn col2im<T: Elem>(col: &[T], c: usize, h: usize, w: usize, g: ConvGeom, x: &mut [T]) {
    let (oh, ow) = (conv_out(h, g.kernel, g.stride, g.pad), conv_out(w, g.kernel, g.stride, g.pad));
    let on = oh * ow;
    assert_eq!(col.len(), c * g.kernel * g.kernel * on, "col buffer size");
    x.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..c {
        let xc = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = ((ci * g.kernel + ky) * g.kernel + kx) * on;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    let src = &col[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xc[base + ix as usize] += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Plain convolution; owns weight and bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub geom: ConvGeom,
}

/// Cache for [`Conv2d::forward_train`]: the input is enough.
pub struct ConvCache<T> {
    pub x: Tensor<T>,
}

impl<T: Elem> Conv2d<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            w: Tensor::zeros([c_out, c_in, kernel, kernel]),
            b: Tensor::zeros([1, c_out, 1, 1]),
            geom: ConvGeom { kernel, stride, pad },
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_shape(&self, x_shape: [usize; 4]) -> [usize; 4] {
        let [n, c, h, w] = x_shape;
        assert_eq!(c, self.c_in(), "conv input channels");
        [
            n,
            self.c_out(),
            conv_out(h, self.geom.kernel, self.geom.stride, self.geom.pad),
            conv_out(w, self.geom.kernel, self.geom.stride, self.geom.pad),
        ]
    }

    /// Forward with an explicit weight tensor (spectral norm substitutes W̄).
    pub fn forward_with(&self, w: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, wd] = x.shape();
        let out_shape = self.out_shape(x.shape());
        let [_, co, oh, ow] = out_shape;
        let on = oh * ow;
        let k = self.geom.kernel;
        let kdim = c * k * k;
        let mut y = Tensor::zeros(out_shape);
        let mut col = vec![T::zero(); kdim * on];
        for ni in 0..n {
            im2col(x.image(ni), c, h, wd, self.geom, &mut col);
            gemm(co, kdim, on, T::one(), w.data(), &col, T::zero(), y.image_mut(ni));
            let yi = y.image_mut(ni);
            for ci in 0..co {
                let bias = self.b.data()[ci];
                yi[ci * on..(ci + 1) * on].iter_mut().for_each(|v| *v += bias);
            }
        }
        y
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_with(&self.w, x)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        (self.forward(x), ConvCache { x: x.clone() })
    }

    /// Backward with an explicit weight (the one used in forward). Returns dx,
    /// accumulates into `dw`, `db`.
    pub fn backward_with(
        &self,
        w: &Tensor<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        dw: &mut Tensor<T>,
        db: &mut Tensor<T>,
    ) -> Tensor<T> {
        let [n, c, h, wd] = x.shape();
        let [_, co, oh, ow] = dy.shape();
        let on = oh * ow;
        let k = self.geom.kernel;
        let kdim = c * k * k;
        assert_eq!(dy.shape(), self.out_shape(x.shape()), "conv dy shape");

        let mut dx = Tensor::zeros(x.shape());
        let mut col = vec![T::zero(); kdim * on];
        let mut dcol = vec![T::zero(); kdim * on];
        for ni in 0..n {
            let dyi = dy.image(ni);
            // db[c] += Σ_pos dy[c,pos]
            for ci in 0..co {
                let mut s = T::zero();
                for v in &dyi[ci * on..(ci + 1) * on] {
                    s += *v;
                }
                db.data_mut()[ci] += s;
            }
            // dW += dy · colᵀ
            im2col(x.image(ni), c, h, wd, self.geom, &mut col);
            gemm_bt(co, on, kdim, T::one(), dyi, &col, T::one(), dw.data_mut());
            // dcol = Wᵀ · dy, then scatter
            gemm_at(kdim, co, on, T::one(), w.data(), dyi, T::zero(), &mut dcol);
            col2im(&dcol, c, h, wd, self.geom, dx.image_mut(ni));
        }
        dx
    }

    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dy: &Tensor<T>,
        dw: &mut Tensor<T>,
        db: &mut Tensor<T>,
    ) -> Tensor<T> {
        self.backward_with(&self.w, &cache.x, dy, dw, db)
    }
}

/// Transposed convolution (fractionally strided). Upsamples by `stride`.
#[derive(Debug, Clone)]
pub struct ConvT2d<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub geom: ConvGeom,
}

pub struct ConvTCache<T> {
    pub x: Tensor<T>,
}

impl<T: Elem> ConvT2d<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvT2d {
            w: Tensor::zeros([c_in, c_out, kernel, kernel]),
            b: Tensor::zeros([1, c_out, 1, 1]),
            geom: ConvGeom { kernel, stride, pad },
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_shape(&self, x_shape: [usize; 4]) -> [usize; 4] {
        let [n, c, h, w] = x_shape;
        assert_eq!(c, self.c_in(), "deconv input channels");
        [
            n,
            self.c_out(),
            deconv_out(h, self.geom.kernel, self.geom.stride, self.geom.pad),
            deconv_out(w, self.geom.kernel, self.geom.stride, self.geom.pad),
        ]
    }

    /// y[co, oy, ox] = b[co] + Σ x[ci, iy, ix] · w[ci, co, ky, kx]
    /// with oy = iy·s − p + ky; implemented as colY = Wᵀ·x then scatter.
    ///
    /// The scatter is the exact adjoint of im2col on the *output* geometry, so
    /// forward here reuses [`col2im`] and backward reuses [`im2col`].
    pub fn forward_with(&self, w: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
        let [n, ci, h, wd] = x.shape();
        let out_shape = self.out_shape(x.shape());
        let [_, co, oh, ow] = out_shape;
        let hw = h * wd;
        let k = self.geom.kernel;
        let kdim = co * k * k;
        let mut y = Tensor::zeros(out_shape);
        let mut coly = vec![T::zero(); kdim * hw];
        for ni in 0..n {
            gemm_at(kdim, ci, hw, T::one(), w.data(), x.image(ni), T::zero(), &mut coly);
            col2im(&coly, co, oh, ow, self.geom, y.image_mut(ni));
            let yi = y.image_mut(ni);
            for c in 0..co {
                let bias = self.b.data()[c];
                yi[c * oh * ow..(c + 1) * oh * ow]
                    .iter_mut()
                    .for_each(|v| *v += bias);
            }
        }
        y
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_with(&self.w, x)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, ConvTCache<T>) {
        (self.forward(x), ConvTCache { x: x.clone() })
    }

    pub fn backward_with(
        &self,
        w: &Tensor<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        dw: &mut Tensor<T>,
        db: &mut Tensor<T>,
    ) -> Tensor<T> {
        let [n, ci, h, wd] = x.shape();
        let [_, co, oh, ow] = dy.shape();
        assert_eq!(dy.shape(), self.out_shape(x.shape()), "deconv dy shape");
        let hw = h * wd;
        let on = oh * ow;
        let k = self.geom.kernel;
        let kdim = co * k * k;

        let mut dx = Tensor::zeros(x.shape());
        let mut dcoly = vec![T::zero(); kdim * hw];
        for ni in 0..n {
            let dyi = dy.image(ni);
            for c in 0..co {
                let mut s = T::zero();
                for v in &dyi[c * on..(c + 1) * on] {
                    s += *v;
                }
                db.data_mut()[c] += s;
            }
            // dcolY = gather(dy) with the same geometry the forward scattered by
            im2col(dyi, co, oh, ow, self.geom, &mut dcoly);
            // dx = W · dcolY   (W as [ci][kdim])
            gemm(ci, kdim, hw, T::one(), w.data(), &dcoly, T::zero(), dx.image_mut(ni));
            // dW += x · dcolYᵀ  ([ci][hw]·[hw][kdim])
            gemm_bt(ci, hw, kdim, T::one(), x.image(ni), &dcoly, T::one(), dw.data_mut());
        }
        dx
    }

    pub fn backward(
        &self,
        cache: &ConvTCache<T>,
        dy: &Tensor<T>,
        dw: &mut Tensor<T>,
        db: &mut Tensor<T>,
    ) -> Tensor<T> {
        self.backward_with(&self.w, &cache.x, dy, dw, db)
    }
}
