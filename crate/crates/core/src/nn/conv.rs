use rand::Rng;

use super::init::kaiming_normal;
use super::{join, Module, Param, ParamKind};
use crate::tensor::{matmul, Float, Mat, Tensor};

/// Upper bound on the im2col buffer, in elements. Several batch items are
/// lowered together while they fit.
const COLS_BUDGET: usize = 1 << 23;

/// Square-kernel 2-D convolution with zero padding, lowered to GEMM.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    /// When false, backward only propagates to the input.
    pub train_weights: bool,
    cache: Option<Tensor<T>>,
}

impl<T: Float> Conv2d<T> {
    /// He-normal (fan-out) weights, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_out = out_channels * kernel * kernel;
        let data = kaiming_normal(rng, out_channels * in_channels * kernel * kernel, fan_out);
        Self::from_weights(in_channels, out_channels, kernel, stride, padding, data, bias)
    }

    pub fn from_weights(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Vec<T>,
        bias: bool,
    ) -> Self {
        assert!(stride >= 1 && kernel >= 1);
        let weight = Param::new(
            vec![out_channels, in_channels, kernel, kernel],
            weight,
            ParamKind::Trainable,
        );
        let bias = bias.then(|| Param::filled(vec![out_channels], T::zero(), ParamKind::Trainable));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            train_weights: true,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let (p, s) = (self.padding, self.stride);
        assert!(h + 2 * p >= k && w + 2 * p >= k, "input smaller than kernel");
        ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn chunk_len(&self, n: usize, cols_per_item: usize) -> usize {
        (COLS_BUDGET / cols_per_item.max(1)).clamp(1, n.max(1))
    }

    /// Lowers images `b0..b0+count` into `cols` (`K x count*P`).
    fn im2col(&self, x: &Tensor<T>, b0: usize, count: usize, cols: &mut [T]) {
        let [_, c, h, w] = x.shape();
        let (oh, ow) = self.output_size(h, w);
        let p = oh * ow;
        let row_len = count * p;
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        for bi in 0..count {
            let img = x.item(b0 + bi);
            for ch in 0..c {
                let plane = &img[ch * h * w..(ch + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ch * k + ky) * k + kx;
                        let dst = &mut cols[row * row_len + bi * p..][..p];
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - pad;
                            let line = &mut dst[oy * ow..(oy + 1) * ow];
                            if iy < 0 || iy >= h as isize {
                                line.iter_mut().for_each(|v| *v = T::zero());
                                continue;
                            }
                            let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - pad;
                                *v = if ix < 0 || ix >= w as isize {
                                    T::zero()
                                } else {
                                    src[ix as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into image gradients.
    fn col2im(&self, cols: &[T], b0: usize, count: usize, gx: &mut Tensor<T>) {
        let [_, c, h, w] = gx.shape();
        let (oh, ow) = self.output_size(h, w);
        let p = oh * ow;
        let row_len = count * p;
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        for bi in 0..count {
            let img = gx.item_mut(b0 + bi);
            for ch in 0..c {
                let plane = &mut img[ch * h * w..(ch + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ch * k + ky) * k + kx;
                        let src = &cols[row * row_len + bi * p..][..p];
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * s + kx) as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] += src[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn kdim(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_size(h, w);
        let p = oh * ow;
        let o = self.out_channels;
        let mut out = Tensor::zeros([n, o, oh, ow]);
        let wmat = Mat::new(&self.weight.data, o, self.kdim());

        if self.is_pointwise() {
            for b in 0..n {
                matmul(wmat, Mat::new(x.item(b), c, p), out.item_mut(b), false);
            }
        } else {
            let kd = self.kdim();
            let chunk = self.chunk_len(n, kd * p);
            let mut cols = vec![T::zero(); kd * chunk * p];
            let mut tmp = vec![T::zero(); o * chunk * p];
            let mut b0 = 0;
            while b0 < n {
                let count = chunk.min(n - b0);
                let cols = &mut cols[..kd * count * p];
                self.im2col(x, b0, count, cols);
                let tmp = &mut tmp[..o * count * p];
                matmul(wmat, Mat::new(cols, kd, count * p), tmp, false);
                for bi in 0..count {
                    let dst = out.item_mut(b0 + bi);
                    for oc in 0..o {
                        dst[oc * p..(oc + 1) * p]
                            .copy_from_slice(&tmp[oc * count * p + bi * p..][..p]);
                    }
                }
                b0 += count;
            }
        }
        if let Some(bias) = &self.bias {
            for b in 0..n {
                let dst = out.item_mut(b);
                for (oc, &bv) in bias.data.iter().enumerate() {
                    dst[oc * p..(oc + 1) * p].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        out
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("conv backward without forward_train");
        let [n, c, h, w] = x.shape();
        let (oh, ow) = self.output_size(h, w);
        let p = oh * ow;
        let o = self.out_channels;
        assert_eq!(gy.shape(), [n, o, oh, ow], "conv grad shape");
        let kd = self.kdim();
        let mut gx = Tensor::zeros(x.shape());

        if self.train_weights {
            if let Some(bias) = &mut self.bias {
                let gb = bias.grad_mut();
                for b in 0..n {
                    let g = gy.item(b);
                    for (oc, acc) in gb.iter_mut().enumerate() {
                        *acc += g[oc * p..(oc + 1) * p].iter().copied().sum::<T>();
                    }
                }
            }
        }

        if self.is_pointwise() {
            for b in 0..n {
                let g = Mat::new(gy.item(b), o, p);
                if self.train_weights {
                    let xb = Mat::new(x.item(b), c, p);
                    matmul(g, xb.t(), self.weight.grad_mut(), true);
                }
                let wmat = Mat::new(&self.weight.data, o, kd);
                matmul(wmat.t(), g, gx.item_mut(b), false);
            }
            return gx;
        }

        let chunk = self.chunk_len(n, kd * p);
        let mut cols = vec![T::zero(); kd * chunk * p];
        let mut gmat = vec![T::zero(); o * chunk * p];
        let mut b0 = 0;
        while b0 < n {
            let count = chunk.min(n - b0);
            let gm = &mut gmat[..o * count * p];
            for bi in 0..count {
                let src = gy.item(b0 + bi);
                for oc in 0..o {
                    gm[oc * count * p + bi * p..][..p].copy_from_slice(&src[oc * p..(oc + 1) * p]);
                }
            }
            let cols = &mut cols[..kd * count * p];
            if self.train_weights {
                self.im2col(&x, b0, count, cols);
                let cm = Mat::new(&*cols, kd, count * p);
                matmul(Mat::new(&*gm, o, count * p), cm.t(), self.weight.grad_mut(), true);
            }
            let wmat = Mat::new(&self.weight.data, o, kd);
            matmul(wmat.t(), Mat::new(&*gm, o, count * p), cols, false);
            self.col2im(cols, b0, count, &mut gx);
            b0 += count;
        }
        gx
    }
}

impl<T: Float> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
