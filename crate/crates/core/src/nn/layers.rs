use super::trace;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Float>(&self, x: &Tensor<T>) -> Tensor<T> {
        if trace::is_active() {
            let gates: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
            trace::record(&gates);
        }
        x.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn forward_train<T: Float>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        self.forward(x)
    }

    pub fn backward<T: Float>(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("relu backward without forward_train");
        let mut gx = gy.clone();
        gx.data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(g, &on)| {
                if !on {
                    *g = T::zero()
                }
            });
        gx
    }
}

#[derive(Clone, Debug)]
pub struct Sigmoid<T> {
    out: Option<Tensor<T>>,
}

impl<T: Float> Default for Sigmoid<T> {
    fn default() -> Self {
        Self { out: None }
    }
}

impl<T: Float> Sigmoid<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.out = Some(y.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let y = self.out.take().expect("sigmoid backward without forward_train");
        let mut gx = gy.clone();
        gx.data_mut()
            .iter_mut()
            .zip(y.data())
            .for_each(|(g, &s)| *g *= s * (T::one() - s));
        gx
    }
}

/// Max pooling with implicit `-inf` padding.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<([usize; 4], Vec<u32>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
    }

    fn pool<T: Float>(&self, x: &Tensor<T>, argmax: Option<&mut Vec<u32>>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = self.output_size(h, w);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut idx = Vec::new();
        let keep = argmax.is_some() || trace::is_active();
        let (k, s, p) = (self.kernel as isize, self.stride as isize, self.padding as isize);
        {
            let od = out.data_mut();
            for pl in 0..n * c {
                let src = &x.data()[pl * h * w..(pl + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut at = 0u32;
                        for ky in 0..k {
                            let iy = oy as isize * s + ky - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize * s + kx - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let j = iy as usize * w + ix as usize;
                                if src[j] > best {
                                    best = src[j];
                                    at = j as u32;
                                }
                            }
                        }
                        od[(pl * oh + oy) * ow + ox] = best;
                        if keep {
                            idx.push(at);
                        }
                    }
                }
            }
        }
        if trace::is_active() {
            trace::record(&idx);
        }
        if let Some(a) = argmax {
            *a = idx;
        }
        out
    }

    pub fn forward<T: Float>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.pool(x, None)
    }

    pub fn forward_train<T: Float>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut idx = Vec::new();
        let y = self.pool(x, Some(&mut idx));
        self.cache = Some((x.shape(), idx));
        y
    }

    pub fn backward<T: Float>(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let (shape, idx) = self.cache.take().expect("maxpool backward without forward_train");
        let [_, _, h, w] = shape;
        let [n, c, oh, ow] = gy.shape();
        let mut gx = Tensor::zeros(shape);
        let gd = gx.data_mut();
        for pl in 0..n * c {
            for o in 0..oh * ow {
                let i = pl * oh * ow + o;
                gd[pl * h * w + idx[i] as usize] += gy.data()[i];
            }
        }
        gx
    }
}
