use rand::Rng;

use crate::nn::{join, BatchNorm2d, Conv2d, Module, Param, PixelShuffleUpsample, Relu, Sigmoid};
use crate::tensor::{Float, Tensor};

/// `upsample x2 -> concat skip -> (conv3x3, BN, ReLU) x 2`.
#[derive(Clone, Debug)]
pub(crate) struct UpBlock<T> {
    pub(crate) up: PixelShuffleUpsample<T>,
    up_relu: Relu,
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    relu2: Relu,
    up_channels: usize,
}

impl<T: Float> UpBlock<T> {
    fn new<R: Rng>(rng: &mut R, in_c: usize, skip_c: usize, out_c: usize) -> Self {
        Self {
            up: PixelShuffleUpsample::new(rng, in_c, out_c, 2),
            up_relu: Relu::new(),
            conv1: Conv2d::new(rng, out_c + skip_c, out_c, 3, 1, 1, false),
            bn1: BatchNorm2d::new(out_c),
            relu1: Relu::new(),
            conv2: Conv2d::new(rng, out_c, out_c, 3, 1, 1, false),
            bn2: BatchNorm2d::new(out_c),
            relu2: Relu::new(),
            up_channels: out_c,
        }
    }

    #[cfg(test)]
    pub(crate) fn input_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    fn forward(&self, x: &Tensor<T>, skip: &Tensor<T>) -> Tensor<T> {
        let u = self.up_relu.forward(&self.up.forward(x));
        let cat = Tensor::concat_channels(&u, skip).expect("skip aligned with upsampled map");
        let h = self.relu1.forward(&self.bn1.forward(&self.conv1.forward(&cat)));
        self.relu2.forward(&self.bn2.forward(&self.conv2.forward(&h)))
    }

    fn forward_train(&mut self, x: &Tensor<T>, skip: &Tensor<T>) -> Tensor<T> {
        let u = self.up.forward_train(x);
        let u = self.up_relu.forward_train(&u);
        let cat = Tensor::concat_channels(&u, skip).expect("skip aligned with upsampled map");
        let h = self.conv1.forward_train(&cat);
        let h = self.bn1.forward_train(&h);
        let h = self.relu1.forward_train(&h);
        let h = self.conv2.forward_train(&h);
        let h = self.bn2.forward_train(&h);
        self.relu2.forward_train(&h)
    }

    /// Returns gradients for the block input and for the skip tensor.
    fn backward(&mut self, gy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let g = self.relu2.backward(gy);
        let g = self.bn2.backward(&g);
        let g = self.conv2.backward(&g);
        let g = self.relu1.backward(&g);
        let g = self.bn1.backward(&g);
        let g = self.conv1.backward(&g);
        let (gu, gskip) = g.split_channels(self.up_channels);
        let gu = self.up_relu.backward(&gu);
        (self.up.backward(&gu), gskip)
    }
}

impl<T: Float> Module<T> for UpBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.up.visit(&join(prefix, "upsample"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.up.visit_mut(&join(prefix, "upsample"), f);
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
    }
}

/// Four skip-connected up-blocks, a final x2 pixel-shuffle upsample and a
/// 3-channel sigmoid head.
#[derive(Clone, Debug)]
pub struct UNetDecoder<T> {
    pub(crate) blocks: Vec<UpBlock<T>>,
    final_up: PixelShuffleUpsample<T>,
    final_relu: Relu,
    head: Conv2d<T>,
    sigmoid: Sigmoid<T>,
    input_skip: bool,
    head_channels: usize,
}

impl<T: Float> UNetDecoder<T> {
    /// `stage_channels` lists encoder stage widths from shallow to deep.
    /// With `input_skip`, the network input is concatenated to the
    /// full-resolution features feeding the head.
    pub fn new<R: Rng>(
        rng: &mut R,
        stage_channels: [usize; 5],
        widths: [usize; 4],
        input_skip: bool,
    ) -> Self {
        let mut blocks = Vec::with_capacity(4);
        let mut in_c = stage_channels[4];
        for (i, &w) in widths.iter().enumerate() {
            let skip_c = stage_channels[3 - i];
            blocks.push(UpBlock::new(rng, in_c, skip_c, w));
            in_c = w;
        }
        Self {
            blocks,
            final_up: PixelShuffleUpsample::new(rng, in_c, in_c, 2),
            final_relu: Relu::new(),
            head: Conv2d::new(rng, in_c + if input_skip { 3 } else { 0 }, 3, 3, 1, 1, true),
            sigmoid: Sigmoid::default(),
            input_skip,
            head_channels: in_c,
        }
    }

    fn head_input(&self, h: Tensor<T>, input: &Tensor<T>) -> Tensor<T> {
        if self.input_skip {
            Tensor::concat_channels(&h, input).expect("input aligned with output")
        } else {
            h
        }
    }

    pub fn forward(&self, input: &Tensor<T>, stages: &[Tensor<T>; 5], zero_skips: bool) -> Tensor<T> {
        let mut h = stages[4].clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let skip = &stages[3 - i];
            h = if zero_skips {
                block.forward(&h, &Tensor::zeros(skip.shape()))
            } else {
                block.forward(&h, skip)
            };
        }
        let h = self.final_relu.forward(&self.final_up.forward(&h));
        let h = if zero_skips {
            self.head_input(h, &Tensor::zeros(input.shape()))
        } else {
            self.head_input(h, input)
        };
        self.sigmoid.forward(&self.head.forward(&h))
    }

    pub fn forward_train(&mut self, input: &Tensor<T>, stages: &[Tensor<T>; 5]) -> Tensor<T> {
        let mut h = stages[4].clone();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            h = block.forward_train(&h, &stages[3 - i]);
        }
        let h = self.final_up.forward_train(&h);
        let h = self.final_relu.forward_train(&h);
        let h = self.head_input(h, input);
        let h = self.head.forward_train(&h);
        self.sigmoid.forward_train(&h)
    }

    /// Gradients with respect to the five encoder stages.
    pub fn backward(&mut self, gy: &Tensor<T>) -> [Option<Tensor<T>>; 5] {
        let g = self.sigmoid.backward(gy);
        let mut g = self.head.backward(&g);
        if self.input_skip {
            g = g.split_channels(self.head_channels).0;
        }
        let g = self.final_relu.backward(&g);
        let mut g = self.final_up.backward(&g);
        let mut out: [Option<Tensor<T>>; 5] = Default::default();
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            let (gx, gskip) = block.backward(&g);
            out[3 - i] = Some(gskip);
            g = gx;
        }
        out[4] = Some(g);
        out
    }
}

impl<T: Float> Module<T> for UNetDecoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.final_up.visit(&join(prefix, "final_upsample"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.final_up.visit_mut(&join(prefix, "final_upsample"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
