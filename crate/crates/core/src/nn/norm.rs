use super::{join, Module, Param, ParamKind};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Per-channel batch normalisation with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(vec![channels], T::one(), ParamKind::Trainable),
            beta: Param::filled(vec![channels], T::zero(), ParamKind::Trainable),
            running_mean: Param::filled(vec![channels], T::zero(), ParamKind::Buffer),
            running_var: Param::filled(vec![channels], T::one(), ParamKind::Buffer),
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalises with the running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, _, _] = x.shape();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let plane = x.plane();
        let mut out = x.clone();
        for ch in 0..c {
            let inv = 1.0 / (self.running_var.data[ch].as_f64() + self.eps).sqrt();
            let scale = T::cast(self.gamma.data[ch].as_f64() * inv);
            let shift = T::cast(
                self.beta.data[ch].as_f64() - self.running_mean.data[ch].as_f64() * scale.as_f64(),
            );
            for b in 0..n {
                let s = &mut out.item_mut(b)[ch * plane..(ch + 1) * plane];
                s.iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        out
    }

    /// Normalises with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, _, _] = x.shape();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let plane = x.plane();
        let m = (n * plane) as f64;
        let mut xhat = x.clone();
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(c);
        for ch in 0..c {
            let mut sum = 0.0;
            for b in 0..n {
                sum += x.item(b)[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0;
            for b in 0..n {
                sq += x.item(b)[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| {
                        let d = v.as_f64() - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / m;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std.push(T::cast(inv));
            let (g, be) = (self.gamma.data[ch], self.beta.data[ch]);
            let (mean_t, inv_t) = (T::cast(mean), T::cast(inv));
            for b in 0..n {
                let xs = &mut xhat.item_mut(b)[ch * plane..(ch + 1) * plane];
                xs.iter_mut().for_each(|v| *v = (*v - mean_t) * inv_t);
                let ys = &mut out.item_mut(b)[ch * plane..(ch + 1) * plane];
                ys.iter_mut()
                    .zip(&xhat.item(b)[ch * plane..(ch + 1) * plane])
                    .for_each(|(y, &xh)| *y = g * xh + be);
            }
            let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
            let mo = self.momentum;
            let rm = &mut self.running_mean.data[ch];
            *rm = T::cast((1.0 - mo) * rm.as_f64() + mo * mean);
            let rv = &mut self.running_var.data[ch];
            *rv = T::cast((1.0 - mo) * rv.as_f64() + mo * unbiased);
        }
        self.cache = Some(BnCache { xhat, inv_std });
        out
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let BnCache { xhat, inv_std } = self.cache.take().expect("batchnorm backward without forward_train");
        let [n, c, _, _] = gy.shape();
        let plane = gy.plane();
        let m = T::cast((n * plane) as f64);
        let mut gx = Tensor::zeros(gy.shape());
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for b in 0..n {
                let g = &gy.item(b)[ch * plane..(ch + 1) * plane];
                let xh = &xhat.item(b)[ch * plane..(ch + 1) * plane];
                for (&gv, &xv) in g.iter().zip(xh) {
                    sg += gv.as_f64();
                    sgx += (gv * xv).as_f64();
                }
            }
            dgamma[ch] = T::cast(sgx);
            dbeta[ch] = T::cast(sg);
            let k = self.gamma.data[ch] * inv_std[ch] / m;
            let (sg, sgx) = (T::cast(sg), T::cast(sgx));
            for b in 0..n {
                let g = &gy.item(b)[ch * plane..(ch + 1) * plane];
                let xh = &xhat.item(b)[ch * plane..(ch + 1) * plane];
                let dst = &mut gx.item_mut(b)[ch * plane..(ch + 1) * plane];
                for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
                    *d = k * (m * gv - sg - xv * sgx);
                }
            }
        }
        self.gamma
            .grad_mut()
            .iter_mut()
            .zip(&dgamma)
            .for_each(|(a, &b)| *a += b);
        self.beta
            .grad_mut()
            .iter_mut()
            .zip(&dbeta)
            .for_each(|(a, &b)| *a += b);
        gx
    }
}

impl<T: Float> Module<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.gamma);
        f(&join(prefix, "bias"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.gamma);
        f(&join(prefix, "bias"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
