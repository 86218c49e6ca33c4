//! Minimal dense tensor plus the differentiable layers the networks need.
//!
//! Everything is NCHW, row-major, owned `Vec` storage. Layers are explicit
//! structs with hand-written forward/backward pairs; each training forward
//! returns a cache holding exactly what its backward consumes. There is no
//! graph or tape. Generic over [`Elem`] so the same kernels run in f32 for
//! training and f64 for finite-difference verification.

pub mod act;
pub mod attention;
pub mod conv;
pub mod gemm;
pub mod init;
pub mod norm;
pub mod pool;
pub mod spectral;

use num_traits::Float;

/// Scalar element the kernels are generic over.
///
/// `gemm` must compute c = alpha·a·b + beta·c with the given row/col strides
/// (strides in elements, may encode transposed views).
pub trait Elem:
    Float + num_traits::NumAssign + num_traits::FromPrimitive + Default + std::fmt::Debug + 'static
{
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite f64 converts")
    }

    fn to_f(self) -> f64;
}

impl Elem for f32 {
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        gemm::check_strides(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len(), rsc, csc);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }

    fn to_f(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        gemm::check_strides(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len(), rsc, csc);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }

    fn to_f(self) -> f64 {
        self
    }
}

/// Dense 4-D tensor, `[n][c][h][w]` row-major. Lower-rank data uses size-1 axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Elem> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must match shape {:?}",
            shape
        );
        Tensor { shape, data }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Reinterpret under a new shape with identical element count.
    pub fn reshaped(mut self, shape: [usize; 4]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape must preserve element count"
        );
        self.shape = shape;
        self
    }

    /// One image plane `[c][h][w]` of a batch tensor.
    pub fn image(&self, n: usize) -> &[T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn image_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w] = v;
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// self += other, elementwise; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// self += alpha * other.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * *b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|x| x.to_f()).sum()
    }

    /// Mean of all elements, accumulated in f64.
    pub fn mean_f64(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum_f64() / self.data.len() as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Cast every element through f64, e.g. f32 params to f64 for gradient checks.
    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|x| U::from_f(x.to_f())).collect(),
        }
    }
}

/// Convolution output extent for one axis; panics if the geometry is inconsistent.
pub fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(
        size + 2 * pad >= kernel,
        "input {} + 2*pad {} smaller than kernel {}",
        size,
        pad,
        kernel
    );
    (size + 2 * pad - kernel) / stride + 1
}

/// Transposed convolution output extent for one axis.
pub fn deconv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size - 1) * stride + kernel - 2 * pad
}
