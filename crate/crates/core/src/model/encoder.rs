//! 34-layer residual encoder (3-4-6-3 basic blocks) exposing five
//! activation stages at strides 2, 4, 8, 16 and 32.

use rand::Rng;

use crate::nn::{join, BatchNorm2d, Conv2d, MaxPool2d, Module, Param, Relu};
use crate::tensor::{Float, Tensor};

pub const BLOCKS_PER_LAYER: [usize; 4] = [3, 4, 6, 3];

#[derive(Clone, Debug)]
struct BasicBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    downsample: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu_out: Relu,
}

impl<T: Float> BasicBlock<T> {
    fn new<R: Rng>(rng: &mut R, in_c: usize, out_c: usize, stride: usize) -> Self {
        let downsample = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv2d::new(rng, in_c, out_c, 1, stride, 0, false),
                BatchNorm2d::new(out_c),
            )
        });
        Self {
            conv1: Conv2d::new(rng, in_c, out_c, 3, stride, 1, false),
            bn1: BatchNorm2d::new(out_c),
            relu1: Relu::new(),
            conv2: Conv2d::new(rng, out_c, out_c, 3, 1, 1, false),
            bn2: BatchNorm2d::new(out_c),
            downsample,
            relu_out: Relu::new(),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.relu1.forward(&self.bn1.forward(&self.conv1.forward(x)));
        let mut h = self.bn2.forward(&self.conv2.forward(&h));
        match &self.downsample {
            Some((c, b)) => h.add_assign(&b.forward(&c.forward(x))),
            None => h.add_assign(x),
        }
        self.relu_out.forward(&h)
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv1.forward_train(x);
        let h = self.bn1.forward_train(&h);
        let h = self.relu1.forward_train(&h);
        let h = self.conv2.forward_train(&h);
        let mut h = self.bn2.forward_train(&h);
        match &mut self.downsample {
            Some((c, b)) => {
                let s = c.forward_train(x);
                h.add_assign(&b.forward_train(&s));
            }
            None => h.add_assign(x),
        }
        self.relu_out.forward_train(&h)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let g = self.relu_out.backward(gy);
        let gm = self.bn2.backward(&g);
        let gm = self.conv2.backward(&gm);
        let gm = self.relu1.backward(&gm);
        let gm = self.bn1.backward(&gm);
        let mut gx = self.conv1.backward(&gm);
        match &mut self.downsample {
            Some((c, b)) => {
                let gs = b.backward(&g);
                gx.add_assign(&c.backward(&gs));
            }
            None => gx.add_assign(&g),
        }
        gx
    }

    fn zero_init_residual(&mut self) {
        self.bn2.gamma.data.iter_mut().for_each(|v| *v = T::zero());
    }
}

impl<T: Float> Module<T> for BasicBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((c, b)) = &self.downsample {
            c.visit(&join(prefix, "downsample.0"), f);
            b.visit(&join(prefix, "downsample.1"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        if let Some((c, b)) = &mut self.downsample {
            c.visit_mut(&join(prefix, "downsample.0"), f);
            b.visit_mut(&join(prefix, "downsample.1"), f);
        }
    }
}

/// Parameter names follow the common `conv1`/`bn1`/`layerN.i.*` layout so
/// that converted ImageNet checkpoints load without renaming.
#[derive(Clone, Debug)]
pub struct ResNet34Encoder<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu: Relu,
    maxpool: MaxPool2d,
    layers: Vec<Vec<BasicBlock<T>>>,
}

impl<T: Float> ResNet34Encoder<T> {
    /// `width` is the channel count of the first stage (64 for the
    /// standard network); later stages use 2x, 4x and 8x that.
    pub fn new<R: Rng>(rng: &mut R, width: usize, zero_init_residual: bool) -> Self {
        let conv1 = Conv2d::new(rng, 3, width, 7, 2, 3, false);
        let mut layers = Vec::with_capacity(4);
        let mut in_c = width;
        for (i, &n) in BLOCKS_PER_LAYER.iter().enumerate() {
            let out_c = width << i;
            let stride = if i == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(n);
            for b in 0..n {
                let mut block = BasicBlock::new(rng, in_c, out_c, if b == 0 { stride } else { 1 });
                if zero_init_residual {
                    block.zero_init_residual();
                }
                blocks.push(block);
                in_c = out_c;
            }
            layers.push(blocks);
        }
        Self {
            conv1,
            bn1: BatchNorm2d::new(width),
            relu: Relu::new(),
            maxpool: MaxPool2d::new(3, 2, 1),
            layers,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> [Tensor<T>; 5] {
        let s1 = self.relu.forward(&self.bn1.forward(&self.conv1.forward(x)));
        let mut h = self.maxpool.forward(&s1);
        let mut stages = Vec::with_capacity(4);
        for layer in &self.layers {
            for block in layer {
                h = block.forward(&h);
            }
            stages.push(h.clone());
        }
        let [s2, s3, s4, s5]: [Tensor<T>; 4] = stages.try_into().expect("four layers");
        [s1, s2, s3, s4, s5]
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> [Tensor<T>; 5] {
        let h = self.conv1.forward_train(x);
        let h = self.bn1.forward_train(&h);
        let s1 = self.relu.forward_train(&h);
        let mut h = self.maxpool.forward_train(&s1);
        let mut stages = Vec::with_capacity(4);
        for layer in &mut self.layers {
            for block in layer.iter_mut() {
                h = block.forward_train(&h);
            }
            stages.push(h.clone());
        }
        let [s2, s3, s4, s5]: [Tensor<T>; 4] = stages.try_into().expect("four layers");
        [s1, s2, s3, s4, s5]
    }

    /// Back-propagates gradients arriving at each of the five stages.
    pub fn backward(&mut self, stage_grads: [Option<Tensor<T>>; 5]) -> Tensor<T> {
        let [g1, g2, g3, g4, g5] = stage_grads;
        let upstream = [g2, g3, g4, g5];
        let mut carry: Option<Tensor<T>> = None;
        for (layer, extra) in self.layers.iter_mut().zip(upstream).rev() {
            let mut g = match (carry.take(), extra) {
                (Some(mut c), Some(e)) => {
                    c.add_assign(&e);
                    c
                }
                (Some(c), None) => c,
                (None, Some(e)) => e,
                (None, None) => panic!("encoder backward without any gradient"),
            };
            for block in layer.iter_mut().rev() {
                g = block.backward(&g);
            }
            carry = Some(g);
        }
        let mut g = self.maxpool.backward(&carry.expect("layer gradients"));
        if let Some(e) = g1 {
            g.add_assign(&e);
        }
        let g = self.relu.backward(&g);
        let g = self.bn1.backward(&g);
        self.conv1.backward(&g)
    }
}

impl<T: Float> Module<T> for ResNet34Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        for (i, layer) in self.layers.iter().enumerate() {
            for (b, block) in layer.iter().enumerate() {
                block.visit(&join(prefix, &format!("layer{}.{b}", i + 1)), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (b, block) in layer.iter_mut().enumerate() {
                block.visit_mut(&join(prefix, &format!("layer{}.{b}", i + 1)), f);
            }
        }
    }
}
