//! Dense NCHW tensors generic over `f32`/`f64` and the matrix product
//! used by every convolution.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use crate::error::{Error, Result};
use crate::image::{reflect_index, ImageTensor, CHANNELS};

pub trait Float:
    num_traits::Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` on strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices, with `c` not aliasing `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Float for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Float for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    /// Rows/cols as stored.
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// `out = a * b` (or `out += a * b` when `accumulate`), `out` row-major.
pub(crate) fn matmul<T: Float>(a: Mat<T>, b: Mat<T>, out: &mut [T], accumulate: bool) {
    let (m, k, rsa, csa) = a.logical();
    let (k2, n, rsb, csb) = b.logical();
    assert_eq!(k, k2, "inner dimensions differ");
    assert!(out.len() >= m * n);
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            out[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    // SAFETY: dimensions and strides checked against slice lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// A batch of feature maps in `[batch, channels, height, width]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], v: T) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per spatial plane.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Slice of one image of the batch.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.shape[1] * self.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape[1] * self.plane();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        let [_, ch, h, w] = self.shape;
        self.data[((b * ch + c) * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add of mismatched tensors");
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, v| if v > m { v } else { m })
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::cast(v.as_f64())).collect(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let [n, ca, h, w] = a.shape;
        let [n2, cb, h2, w2] = b.shape;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                a.shape, b.shape
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Ok(Self {
            shape: [n, ca + cb, h, w],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        let [n, c, h, w] = self.shape;
        assert!(first <= c);
        let plane = h * w;
        let mut a = Vec::with_capacity(n * first * plane);
        let mut b = Vec::with_capacity(n * (c - first) * plane);
        for i in 0..n {
            let item = self.item(i);
            a.extend_from_slice(&item[..first * plane]);
            b.extend_from_slice(&item[first * plane..]);
        }
        (
            Self {
                shape: [n, first, h, w],
                data: a,
            },
            Self {
                shape: [n, c - first, h, w],
                data: b,
            },
        )
    }

    /// Extends bottom/right edges to `h x w` by mirroring.
    pub fn pad_reflect(&self, h: usize, w: usize) -> Self {
        let [n, c, sh, sw] = self.shape;
        assert!(h >= sh && w >= sw);
        if (h, w) == (sh, sw) {
            return self.clone();
        }
        let mut out = Self::zeros([n, c, h, w]);
        for b in 0..n {
            for ch in 0..c {
                let src = &self.data[(b * c + ch) * sh * sw..][..sh * sw];
                let dst = &mut out.data[(b * c + ch) * h * w..][..h * w];
                for y in 0..h {
                    let sy = reflect_index(y as isize, sh);
                    for x in 0..w {
                        dst[y * w + x] = src[sy * sw + reflect_index(x as isize, sw)];
                    }
                }
            }
        }
        out
    }

    /// Top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> Self {
        let [n, c, sh, sw] = self.shape;
        assert!(h <= sh && w <= sw);
        if (h, w) == (sh, sw) {
            return self.clone();
        }
        let mut out = Self::zeros([n, c, h, w]);
        for p in 0..n * c {
            for y in 0..h {
                let s = &self.data[p * sh * sw + y * sw..][..w];
                out.data[p * h * w + y * w..][..w].copy_from_slice(s);
            }
        }
        out
    }

    /// Gradient of [`Tensor::crop`]: embeds into zeros of size `h x w`.
    pub fn uncrop(&self, h: usize, w: usize) -> Self {
        let [n, c, sh, sw] = self.shape;
        if (h, w) == (sh, sw) {
            return self.clone();
        }
        let mut out = Self::zeros([n, c, h, w]);
        for p in 0..n * c {
            for y in 0..sh {
                let s = &self.data[p * sh * sw + y * sw..][..sw];
                out.data[p * h * w + y * w..][..sw].copy_from_slice(s);
            }
        }
        out
    }

    pub fn from_images(images: &[&ImageTensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (h, w) = first.dims();
        let plane = h * w;
        let mut data = vec![T::zero(); images.len() * CHANNELS * plane];
        for (b, img) in images.iter().enumerate() {
            if img.dims() != (h, w) {
                return Err(Error::Shape(format!(
                    "batch mixes {h}x{w} with {}x{}",
                    img.height(),
                    img.width()
                )));
            }
            let dst = &mut data[b * CHANNELS * plane..][..CHANNELS * plane];
            for (p, px) in img.data().chunks_exact(CHANNELS).enumerate() {
                for c in 0..CHANNELS {
                    dst[c * plane + p] = T::cast(px[c] as f64);
                }
            }
        }
        Ok(Self {
            shape: [images.len(), CHANNELS, h, w],
            data,
        })
    }

    /// Converts each batch item back to an image, clamping to `[0, 1]`.
    pub fn to_images(&self) -> Result<Vec<ImageTensor>> {
        let [n, c, h, w] = self.shape;
        if c != CHANNELS {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let plane = h * w;
        (0..n)
            .map(|b| {
                let src = self.item(b);
                let mut data = Vec::with_capacity(plane * CHANNELS);
                for p in 0..plane {
                    for ch in 0..CHANNELS {
                        data.push(src[ch * plane + p].as_f64() as f32);
                    }
                }
                ImageTensor::from_clamped(h, w, data)
            })
            .collect()
    }
}
