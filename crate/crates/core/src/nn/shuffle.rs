//! Sub-pixel convolution: pixel shuffle plus ICNR initialisation.

use rand::Rng;

use super::init::kaiming_normal;
use super::{Conv2d, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Rearranges `[n, c*r*r, h, w]` into `[n, c, h*r, w*r]` with
/// `out[c, r*y + dy, r*x + dx] = in[c*r*r + dy*r + dx, y, x]`.
pub fn pixel_shuffle<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, cin, h, w] = x.shape();
    if r == 0 || cin % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "pixel shuffle by {r} needs channels divisible by {}, got {cin}",
            r * r
        )));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        let src = x.item(b);
        let dst = out.item_mut(b);
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let plane = &src[(ch * r * r + dy * r + dx) * h * w..][..h * w];
                    for y in 0..h {
                        let row = &mut dst[ch * oh * ow + (r * y + dy) * ow..][..ow];
                        for xx in 0..w {
                            row[r * xx + dx] = plane[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = x.shape();
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::Shape(format!(
            "pixel unshuffle by {r} needs spatial dims divisible by {r}, got {oh}x{ow}"
        )));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let (h, w) = (oh / r, ow / r);
    let mut out = Tensor::zeros([n, c * r * r, h, w]);
    for b in 0..n {
        let src = x.item(b);
        let dst = out.item_mut(b);
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let plane = &mut dst[(ch * r * r + dy * r + dx) * h * w..][..h * w];
                    for y in 0..h {
                        let row = &src[ch * oh * ow + (r * y + dy) * ow..][..ow];
                        for xx in 0..w {
                            plane[y * w + xx] = row[r * xx + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// ICNR: expands a base kernel for `out_channels / r^2` outputs so that the
/// `r^2` output channels feeding each shuffled channel are identical copies.
///
/// `base` holds `(out_channels / r^2) * per_channel` weights, `per_channel`
/// being `in_channels * kh * kw`.
pub fn icnr<T: Float>(base: &[T], out_channels: usize, per_channel: usize, r: usize) -> Result<Vec<T>> {
    let group = r * r;
    if r == 0 || out_channels % group != 0 {
        return Err(Error::Shape(format!(
            "ICNR with scale {r} needs output channels divisible by {group}, got {out_channels}"
        )));
    }
    let base_channels = out_channels / group;
    if base.len() != base_channels * per_channel {
        return Err(Error::Shape(format!(
            "ICNR base has {} weights, expected {}",
            base.len(),
            base_channels * per_channel
        )));
    }
    let mut out = Vec::with_capacity(out_channels * per_channel);
    for c in 0..base_channels {
        let kernel = &base[c * per_channel..(c + 1) * per_channel];
        for _ in 0..group {
            out.extend_from_slice(kernel);
        }
    }
    Ok(out)
}

/// `1x1 conv (ICNR) -> pixel shuffle`, upsampling by `scale`.
#[derive(Clone, Debug)]
pub struct PixelShuffleUpsample<T> {
    pub conv: Conv2d<T>,
    scale: usize,
}

impl<T: Float> PixelShuffleUpsample<T> {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize, scale: usize) -> Self {
        let group = scale * scale;
        // he-normal with fan-in of the 1x1 kernel
        let base = kaiming_normal(rng, out_channels * in_channels, in_channels);
        let weights = icnr(&base, out_channels * group, in_channels, scale)
            .expect("channel count is a multiple of scale^2 by construction");
        let conv = Conv2d::from_weights(in_channels, out_channels * group, 1, 1, 0, weights, true);
        Self { conv, scale }
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        pixel_shuffle(&self.conv.forward(x), self.scale).expect("conv output divisible by scale^2")
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.conv.forward_train(x);
        pixel_shuffle(&y, self.scale).expect("conv output divisible by scale^2")
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let g = pixel_unshuffle(gy, self.scale).expect("gradient matches forward output");
        self.conv.backward(&g)
    }
}

impl<T: Float> Module<T> for PixelShuffleUpsample<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&super::join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&super::join(prefix, "conv"), f);
    }
}
