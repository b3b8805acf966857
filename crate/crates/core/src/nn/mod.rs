//! Layers with explicit forward/backward passes.
//!
//! Every layer offers an immutable `forward` for inference and a
//! `forward_train`/`backward` pair: `forward_train` keeps whatever the
//! backward pass needs, and `backward` consumes it, accumulates parameter
//! gradients and returns the gradient with respect to the layer input.

mod conv;
mod layers;
mod norm;
mod shuffle;

pub mod init;
pub mod trace;

pub use conv::Conv2d;
pub use layers::{MaxPool2d, Relu, Sigmoid};
pub use norm::BatchNorm2d;
pub use shuffle::{icnr, pixel_shuffle, pixel_unshuffle, PixelShuffleUpsample};

use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State such as normalisation running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub data: Vec<T>,
    grad: Vec<T>,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl<T: Float> Param<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>, kind: ParamKind) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            data,
            grad: Vec::new(),
            shape,
            kind,
        }
    }

    pub fn filled(shape: Vec<usize>, v: T, kind: ParamKind) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n], kind)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Gradient accumulated since the last [`Param::zero_grad`]; all zeros
    /// if nothing has been accumulated.
    pub fn grad(&self) -> std::borrow::Cow<'_, [T]> {
        if self.grad.is_empty() {
            std::borrow::Cow::Owned(vec![T::zero(); self.data.len()])
        } else {
            std::borrow::Cow::Borrowed(&self.grad)
        }
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        if self.grad.len() != self.data.len() {
            self.grad = vec![T::zero(); self.data.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn has_grad(&self) -> bool {
        !self.grad.is_empty()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that owns named parameters.
pub trait Module<T: Float> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self, kind: ParamKind) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.kind == kind {
                n += p.len()
            }
        });
        n
    }
}
