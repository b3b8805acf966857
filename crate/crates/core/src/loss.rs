//! Pixel L1 plus feature-reconstruction loss on a frozen VGG16-layout
//! feature extractor.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::{load_pretrained, ModelConfig, UResNet, IMAGENET_MEAN, IMAGENET_STD};
use crate::nn::{join, trace, Conv2d, MaxPool2d, Module, Param, ParamKind, Relu};
use crate::tensor::{Float, Tensor};

pub const VGG16_ARCHIVE: &str = "vgg16";

/// Activation taps of the 16-layer extractor, named `relu{block}_{conv}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayer {
    #[serde(rename = "relu1_2")]
    Relu1_2,
    #[serde(rename = "relu2_2")]
    Relu2_2,
    #[serde(rename = "relu3_3")]
    Relu3_3,
    #[serde(rename = "relu4_3")]
    Relu4_3,
    #[serde(rename = "relu5_3")]
    Relu5_3,
}

impl FeatureLayer {
    /// Index of the tap in the `features` sequence.
    pub fn index(self) -> usize {
        match self {
            Self::Relu1_2 => 3,
            Self::Relu2_2 => 8,
            Self::Relu3_3 => 15,
            Self::Relu4_3 => 22,
            Self::Relu5_3 => 29,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelNorm {
    #[default]
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Load ImageNet weights from the weights cache; otherwise a seeded
    /// random initialisation is used.
    pub pretrained: bool,
    pub width: usize,
    pub init_seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            pretrained: true,
            width: 64,
            init_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub feature_layers: Vec<FeatureLayer>,
    pub layer_weights: Vec<f64>,
    pub pixel_weight: f64,
    pub pixel_norm: PixelNorm,
    /// Optional Gram-matrix terms, one weight per feature layer; empty
    /// disables them.
    pub gram_weights: Vec<f64>,
    pub extractor: ExtractorConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            feature_layers: vec![FeatureLayer::Relu2_2, FeatureLayer::Relu3_3, FeatureLayer::Relu4_3],
            layer_weights: vec![0.2, 0.7, 0.1],
            pixel_weight: 1.0,
            pixel_norm: PixelNorm::L1,
            gram_weights: Vec::new(),
            extractor: ExtractorConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn pixel_only() -> Self {
        Self {
            feature_layers: Vec::new(),
            layer_weights: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_weights.len() != self.feature_layers.len() {
            return Err(Error::Config(format!(
                "{} feature layers but {} layer weights",
                self.feature_layers.len(),
                self.layer_weights.len()
            )));
        }
        if !self.gram_weights.is_empty() && self.gram_weights.len() != self.feature_layers.len() {
            return Err(Error::Config("gram_weights must be empty or one per feature layer".into()));
        }
        let all = self
            .layer_weights
            .iter()
            .chain(&self.gram_weights)
            .chain(std::iter::once(&self.pixel_weight));
        let mut any_positive = false;
        for &w in all {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("loss weight {w} must be finite and >= 0")));
            }
            any_positive |= w > 0.0;
        }
        if !any_positive {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if self.extractor.width == 0 {
            return Err(Error::Config("extractor width must be positive".into()));
        }
        Ok(())
    }

    fn needs_features(&self) -> bool {
        self.layer_weights.iter().chain(&self.gram_weights).any(|&w| w > 0.0)
    }
}

#[derive(Clone, Debug)]
enum VggLayer<T> {
    Conv(Conv2d<T>),
    Relu(Relu),
    Pool(MaxPool2d),
}

/// The convolutional part of VGG16 up to the deepest requested tap.
/// Weights never receive gradients.
#[derive(Clone, Debug)]
pub struct Vgg16Features<T> {
    layers: Vec<VggLayer<T>>,
}

const VGG16_BLOCKS: [(usize, usize); 5] = [(1, 2), (2, 2), (4, 3), (8, 3), (8, 3)];

impl<T: Float> Vgg16Features<T> {
    /// Seeded He-normal initialisation, truncated after layer `last`.
    pub fn random<R: Rng>(rng: &mut R, width: usize, last: usize) -> Self {
        let mut layers = Vec::new();
        let mut in_c = 3;
        'outer: for (mult, convs) in VGG16_BLOCKS {
            let out_c = width * mult;
            for _ in 0..convs {
                let mut conv = Conv2d::new(rng, in_c, out_c, 3, 1, 1, true);
                conv.train_weights = false;
                layers.push(VggLayer::Conv(conv));
                layers.push(VggLayer::Relu(Relu::new()));
                in_c = out_c;
                if layers.len() > last {
                    break 'outer;
                }
            }
            layers.push(VggLayer::Pool(MaxPool2d::new(2, 2, 0)));
            if layers.len() > last {
                break;
            }
        }
        layers.truncate(last + 1);
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Eval-mode activations for `layers` of an already normalised batch,
    /// ordered shallow to deep with duplicates removed.
    pub fn features(&mut self, x: &Tensor<T>, layers: &[FeatureLayer]) -> Result<Vec<Tensor<T>>> {
        let mut taps: Vec<usize> = layers.iter().map(|l| l.index()).collect();
        taps.sort_unstable();
        taps.dedup();
        if taps.last().is_some_and(|&t| t >= self.depth()) {
            return Err(Error::Param(format!(
                "extractor has {} layers; tap {} requested",
                self.depth(),
                taps.last().unwrap()
            )));
        }
        Ok(self.run(x, &taps, false))
    }

    /// Activations at each index in `taps` (ascending, deduplicated).
    fn run(&mut self, x: &Tensor<T>, taps: &[usize], train: bool) -> Vec<Tensor<T>> {
        let mut out = Vec::with_capacity(taps.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = match (layer, train) {
                (VggLayer::Conv(c), true) => c.forward_train(&h),
                (VggLayer::Conv(c), false) => c.forward(&h),
                (VggLayer::Relu(r), true) => r.forward_train(&h),
                (VggLayer::Relu(r), false) => r.forward(&h),
                (VggLayer::Pool(p), true) => p.forward_train(&h),
                (VggLayer::Pool(p), false) => p.forward(&h),
            };
            if taps.contains(&i) {
                out.push(h.clone());
            }
            if Some(&i) == taps.last() {
                break;
            }
        }
        out
    }

    /// Input gradient given gradients at the taps of the last training run.
    fn backward(&mut self, taps: &[usize], grads: Vec<Tensor<T>>) -> Tensor<T> {
        let deepest = *taps.last().expect("at least one tap");
        let mut pending: Vec<(usize, Tensor<T>)> = taps.iter().copied().zip(grads).collect();
        let mut g: Option<Tensor<T>> = None;
        for i in (0..=deepest).rev() {
            if let Some(pos) = pending.iter().position(|(t, _)| *t == i) {
                let (_, extra) = pending.swap_remove(pos);
                g = Some(match g {
                    Some(mut acc) => {
                        acc.add_assign(&extra);
                        acc
                    }
                    None => extra,
                });
            }
            let gi = g.take().expect("gradient reaches every layer below the deepest tap");
            g = Some(match &mut self.layers[i] {
                VggLayer::Conv(c) => c.backward(&gi),
                VggLayer::Relu(r) => r.backward(&gi),
                VggLayer::Pool(p) => p.backward(&gi),
            });
        }
        g.expect("non-empty extractor")
    }
}

impl<T: Float> Module<T> for Vgg16Features<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            if let VggLayer::Conv(c) = l {
                c.visit(&join(prefix, &i.to_string()), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let VggLayer::Conv(c) = l {
                c.visit_mut(&join(prefix, &i.to_string()), f);
            }
        }
    }
}

/// Loss value with its components (already weighted).
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub pixel: f64,
    pub features: Vec<f64>,
    pub gram: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PerceptualLoss<T> {
    config: LossConfig,
    extractor: Option<Vgg16Features<T>>,
    /// Sorted, deduplicated tap indices.
    taps: Vec<usize>,
}

fn gram<T: Float>(f: &Tensor<T>) -> Vec<f64> {
    let [n, c, h, w] = f.shape();
    let hw = h * w;
    let norm = (c * hw) as f64;
    let mut g = vec![0.0; n * c * c];
    for b in 0..n {
        let item = f.item(b);
        for i in 0..c {
            let fi = &item[i * hw..(i + 1) * hw];
            for j in i..c {
                let fj = &item[j * hw..(j + 1) * hw];
                let s: f64 = fi.iter().zip(fj).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                g[(b * c + i) * c + j] = s / norm;
                g[(b * c + j) * c + i] = s / norm;
            }
        }
    }
    g
}

impl<T: Float> PerceptualLoss<T> {
    /// Builds the loss. A pretrained extractor is read from
    /// `cache/vgg16`; without one, `extractor.pretrained` must be false.
    pub fn new(config: &LossConfig, cache: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let mut taps: Vec<usize> = config.feature_layers.iter().map(|l| l.index()).collect();
        taps.sort_unstable();
        taps.dedup();
        let extractor = if config.needs_features() {
            let last = *taps.last().expect("validated");
            let mut rng = ChaCha8Rng::seed_from_u64(config.extractor.init_seed);
            let mut ex = Vgg16Features::random(&mut rng, config.extractor.width, last);
            if config.extractor.pretrained {
                let archive = load_pretrained(cache, VGG16_ARCHIVE)?;
                archive.assign_to(&mut ex, "features", true)?;
            }
            Some(ex)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            extractor,
            taps,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn extractor(&self) -> Option<&Vgg16Features<T>> {
        self.extractor.as_ref()
    }

    pub fn extractor_mut(&mut self) -> Option<&mut Vgg16Features<T>> {
        self.extractor.as_mut()
    }

    fn normalize(x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        let plane = y.plane();
        for b in 0..y.batch() {
            for (c, chunk) in y.item_mut(b).chunks_mut(plane).enumerate() {
                let m = T::cast(IMAGENET_MEAN[c] as f64);
                let s = T::cast(IMAGENET_STD[c] as f64);
                chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
        y
    }

    fn check_shapes(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        if pred.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs target {:?}",
                pred.shape(),
                target.shape()
            )));
        }
        if pred.channels() != 3 {
            return Err(Error::Shape("loss inputs must have 3 channels".into()));
        }
        Ok(())
    }

    /// Loss value; with `want_grad`, also the gradient with respect to `pred`.
    fn evaluate(
        &mut self,
        pred: &Tensor<T>,
        target: &Tensor<T>,
        want_grad: bool,
    ) -> Result<(LossTerms, Option<Tensor<T>>)> {
        Self::check_shapes(pred, target)?;
        let n = pred.len() as f64;
        let pw = self.config.pixel_weight;
        let mut pixel = 0.0;
        let mut grad = want_grad.then(|| Tensor::<T>::zeros(pred.shape()));
        for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
            let d = p.as_f64() - t.as_f64();
            pixel += d.abs();
            if let Some(g) = grad.as_mut() {
                let s = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                g.data_mut()[i] = T::cast(pw * s / n);
            }
        }
        if trace::is_active() {
            let signs: Vec<i8> = pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, t)| (p.as_f64() - t.as_f64()).signum() as i8)
                .collect();
            trace::record(&signs);
        }
        let pixel = pw * pixel / n;
        let mut terms = LossTerms {
            total: pixel,
            pixel,
            features: Vec::new(),
            gram: Vec::new(),
        };

        let Some(extractor) = self.extractor.as_mut() else {
            return Ok((terms, grad));
        };
        let fp = extractor.run(&Self::normalize(pred), &self.taps, want_grad);
        let ft = extractor.run(&Self::normalize(target), &self.taps, false);
        let mut tap_grads: Vec<Tensor<T>> = if want_grad {
            fp.iter().map(|f| Tensor::zeros(f.shape())).collect()
        } else {
            Vec::new()
        };
        let layers = self.config.feature_layers.clone();
        for (li, layer) in layers.iter().enumerate() {
            let k = self.taps.iter().position(|&t| t == layer.index()).expect("tap registered");
            let (a, b) = (&fp[k], &ft[k]);
            let w = self.config.layer_weights[li];
            let m = a.len() as f64;
            let mut s = 0.0;
            for (j, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
                let d = x.as_f64() - y.as_f64();
                s += d * d;
                if want_grad && w > 0.0 {
                    let g = &mut tap_grads[k].data_mut()[j];
                    *g += T::cast(2.0 * w * d / m);
                }
            }
            let v = w * s / m;
            terms.features.push(v);
            terms.total += v;

            let gw = self.config.gram_weights.get(li).copied().unwrap_or(0.0);
            if gw > 0.0 {
                let (ga, gb) = (gram(a), gram(b));
                let gm = ga.len() as f64;
                let diff: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
                let v = gw * diff.iter().map(|d| d * d).sum::<f64>() / gm;
                terms.gram.push(v);
                terms.total += v;
                if want_grad {
                    // d/dF of mean((G - G_t)^2) with G = F F^T / (c h w)
                    let [nb, c, h, wd] = a.shape();
                    let hw = h * wd;
                    let norm = (c * hw) as f64;
                    let scale = 2.0 * gw / gm * 2.0 / norm;
                    let tg = tap_grads[k].data_mut();
                    for bi in 0..nb {
                        let item = a.item(bi);
                        for i in 0..c {
                            for j in 0..c {
                                let dij = diff[(bi * c + i) * c + j] * scale;
                                if dij == 0.0 {
                                    continue;
                                }
                                let base_i = (bi * c + i) * hw;
                                let fj = &item[j * hw..(j + 1) * hw];
                                for (q, &v) in fj.iter().enumerate() {
                                    tg[base_i + q] += T::cast(dij * v.as_f64());
                                }
                            }
                        }
                    }
                }
            } else if !self.config.gram_weights.is_empty() {
                terms.gram.push(0.0);
            }
        }

        if let Some(g) = grad.as_mut() {
            let gx = extractor.backward(&self.taps, tap_grads);
            let plane = gx.plane();
            for b in 0..gx.batch() {
                let src = gx.item(b);
                for (c, chunk) in g.item_mut(b).chunks_mut(plane).enumerate() {
                    let inv = T::cast(1.0 / IMAGENET_STD[c] as f64);
                    for (d, &s) in chunk.iter_mut().zip(&src[c * plane..(c + 1) * plane]) {
                        *d += s * inv;
                    }
                }
            }
        }
        Ok((terms, grad))
    }

    pub fn forward(&mut self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossTerms> {
        Ok(self.evaluate(pred, target, false)?.0)
    }

    /// Loss terms and the gradient of the total with respect to `pred`.
    pub fn forward_backward(
        &mut self,
        pred: &Tensor<T>,
        target: &Tensor<T>,
    ) -> Result<(LossTerms, Tensor<T>)> {
        let (terms, grad) = self.evaluate(pred, target, true)?;
        Ok((terms, grad.expect("requested")))
    }
}

/// Loss between two image batches.
pub fn feature_loss(
    loss: &mut PerceptualLoss<f32>,
    pred: &[ImageTensor],
    target: &[ImageTensor],
) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    let p = Tensor::from_images(&pred.iter().collect::<Vec<_>>())?;
    let t = Tensor::from_images(&target.iter().collect::<Vec<_>>())?;
    Ok(loss.forward(&p, &t)?.total)
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub const GRADCHECK_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Samples compared.
    pub samples: usize,
    /// Draws discarded because `+h` and `-h` straddled a ReLU gate,
    /// max-pool winner change or L1 sign flip.
    pub discarded: usize,
}

/// Central differences at `samples` coordinates drawn by `draw`, skipping
/// draws whose perturbation crosses a non-differentiable point.
fn central_differences<R: Rng>(
    rng: &mut R,
    samples: usize,
    mut draw: impl FnMut(&mut R) -> usize,
    mut analytic: impl FnMut(usize) -> f64,
    mut eval_at: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        samples: 0,
        discarded: 0,
    };
    let max_draws = samples * 20;
    while report.samples < samples {
        if report.samples + report.discarded >= max_draws {
            return Err(Error::Param(format!(
                "gradient check found only {} smooth samples in {max_draws} draws",
                report.samples
            )));
        }
        let i = draw(rng);
        let (up, fp_up) = trace::fingerprint(|| eval_at(i, GRADCHECK_STEP));
        let (down, fp_down) = trace::fingerprint(|| eval_at(i, -GRADCHECK_STEP));
        let (up, down) = (up?, down?);
        if fp_up != fp_down {
            report.discarded += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
        report.max_relative_error = report.max_relative_error.max(relative_error(analytic(i), numeric));
        report.samples += 1;
    }
    Ok(report)
}

/// Compares the gradient of the loss with respect to the prediction with
/// central differences on a `size`x`size` batch of two. Pixels differ from
/// their targets by at least 0.05 so the L1 term stays smooth.
pub fn input_gradient_check(
    cfg: &LossConfig,
    size: usize,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut loss = PerceptualLoss::<f64>::new(cfg, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 3, size, size];
    let n = 2 * 3 * size * size;
    let target: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
    let pred: Vec<f64> = target
        .iter()
        .map(|&t| {
            let d: f64 = rng.random_range(0.05..0.2);
            if rng.random_bool(0.5) { t + d } else { t - d }
        })
        .collect();
    let target = Tensor::from_vec(shape, target)?;
    let mut pred = Tensor::from_vec(shape, pred)?;
    let (_, grad) = loss.forward_backward(&pred, &target)?;
    central_differences(
        &mut rng,
        samples,
        |r| r.random_range(0..n),
        |i| grad.data()[i],
        |i, h| {
            let orig = pred.data()[i];
            pred.data_mut()[i] = orig + h;
            let v = loss.forward(&pred, &target).map(|t| t.total);
            pred.data_mut()[i] = orig;
            v
        },
    )
}

/// Compares back-propagated gradients with respect to `samples` randomly
/// chosen trainable parameters of a model built from `model_cfg` with
/// central differences, in double precision and train mode.
///
/// Normalisation scales and shifts are first randomised so that the check
/// runs at a generic point rather than at the zero-initialised residual
/// branches of a fresh model.
pub fn model_gradient_check(
    cfg: &LossConfig,
    model_cfg: &ModelConfig,
    size: usize,
    batch: usize,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut loss = PerceptualLoss::<f64>::new(cfg, None)?;
    let mut model = UResNet::<f64>::random(model_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randomize_affine(&mut model, &mut rng);

    let shape = [batch, 3, size, size];
    let n = batch * 3 * size * size;
    let x = Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let target = Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;

    model.zero_grad();
    let pred = model.forward_train(&x)?;
    let (_, g) = loss.forward_backward(&pred, &target)?;
    model.backward(&g);

    // flat index -> (parameter name, offset), plus analytic gradients
    let mut names = Vec::new();
    let mut grads = Vec::new();
    model.visit_trainable_mut(&mut |name, p| {
        names.push((name.to_string(), p.len()));
        grads.extend_from_slice(&p.grad());
    });
    let locate = |mut k: usize| -> (String, usize) {
        for (nm, l) in &names {
            if k < *l {
                return (nm.clone(), k);
            }
            k -= l;
        }
        unreachable!("index within parameter count")
    };
    let nudge = |model: &mut UResNet<f64>, name: &str, idx: usize, delta: f64| {
        model.visit_trainable_mut(&mut |nm, p| {
            if nm == name {
                p.data[idx] += delta;
            }
        })
    };
    let total = grads.len();
    central_differences(
        &mut rng,
        samples,
        |r| r.random_range(0..total),
        |k| grads[k],
        |k, h| {
            let (name, idx) = locate(k);
            let orig = {
                let mut v = 0.0;
                model.visit_trainable_mut(&mut |nm, p| {
                    if nm == name {
                        v = p.data[idx];
                    }
                });
                v
            };
            nudge(&mut model, &name, idx, h);
            let v = model
                .forward_train(&x)
                .and_then(|p| loss.forward(&p, &target))
                .map(|t| t.total);
            model.visit_trainable_mut(&mut |nm, p| {
                if nm == name {
                    p.data[idx] = orig;
                }
            });
            v
        },
    )
}

fn randomize_affine<R: Rng>(model: &mut UResNet<f64>, rng: &mut R) {
    model.visit_mut("", &mut |name, p| {
        if p.kind != ParamKind::Trainable || p.shape.len() != 1 {
            return;
        }
        let bn_scale = name.ends_with(".weight");
        for v in p.data.iter_mut() {
            *v = if bn_scale {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(-0.2..0.2)
            };
        }
    });
}
