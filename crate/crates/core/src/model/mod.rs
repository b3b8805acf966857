//! Residual-encoder UNet with pixel-shuffle upsampling.

mod decoder;
mod encoder;

pub use decoder::UNetDecoder;
pub use encoder::{ResNet34Encoder, BLOCKS_PER_LAYER};

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{ArchiveMetadata, WeightArchive};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{join, Module, Param, ParamKind};
use crate::tensor::{Float, Tensor};

/// Spatial sizes are padded to a multiple of this (2^5 downsamplings).
pub const ALIGNMENT: usize = 32;
pub const ENCODER_PREFIX: &str = "encoder";
pub const DECODER_PREFIX: &str = "decoder";
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];
/// Directory holding converted pretrained archives (`resnet34/`, `vgg16/`).
pub const WEIGHTS_CACHE_ENV: &str = "ORBIT_RESTORE_WEIGHTS_CACHE";
pub const RESNET34_ARCHIVE: &str = "resnet34";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Load ImageNet encoder weights from the weights cache.
    pub pretrained: bool,
    /// Channels of the first encoder stage.
    pub width: usize,
    pub decoder_widths: [usize; 4],
    pub input_mean: [f32; 3],
    pub input_std: [f32; 3],
    /// Concatenate the normalised input to the full-resolution features
    /// before the output convolution.
    pub input_skip: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pretrained: true,
            width: 64,
            decoder_widths: [256, 128, 64, 32],
            input_mean: IMAGENET_MEAN,
            input_std: IMAGENET_STD,
            input_skip: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.decoder_widths.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.input_std.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || self.input_mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Config("input_std must be positive and finite".into()));
        }
        Ok(())
    }

    /// `(stride, channels)` of the five encoder stages, shallow to deep.
    pub fn stage_map(&self) -> [(usize, usize); 5] {
        let w = self.width;
        [(2, w), (4, w), (8, 2 * w), (16, 4 * w), (32, 8 * w)]
    }

    /// SHA-256 over the fields that determine parameter layout and the
    /// computed function. `pretrained` and `init_seed` only affect initial
    /// values and are excluded.
    pub fn architecture_hash(&self) -> String {
        let canon = serde_json::json!({
            "encoder": "resnet34",
            "width": self.width,
            "decoder_widths": self.decoder_widths,
            "input_mean": self.input_mean,
            "input_std": self.input_std,
            "input_skip": self.input_skip,
            "final_activation": "sigmoid",
            "alignment": ALIGNMENT,
        });
        Sha256::digest(canon.to_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; normalisation running averages are updated.
    Train,
    /// Running statistics; deterministic.
    Eval,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace every skip tensor with zeros (diagnostics only).
    pub zero_skips: bool,
}

#[derive(Clone, Debug)]
pub struct UResNet<T> {
    config: ModelConfig,
    pub(crate) encoder: ResNet34Encoder<T>,
    pub(crate) decoder: UNetDecoder<T>,
    encoder_frozen: bool,
    train_dims: Option<(usize, usize, usize, usize)>,
}

/// Smallest multiple of [`ALIGNMENT`] that is `>= n`.
pub fn aligned(n: usize) -> usize {
    n.div_ceil(ALIGNMENT) * ALIGNMENT
}

impl<T: Float> UResNet<T> {
    /// Randomly initialised model; `config.pretrained` is ignored.
    ///
    /// The last normalisation of each residual branch starts at zero so
    /// that every block begins as an identity map.
    pub fn random(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let encoder = ResNet34Encoder::new(&mut rng, config.width, true);
        let stage_channels = config.stage_map().map(|(_, c)| c);
        let decoder = UNetDecoder::new(&mut rng, stage_channels, config.decoder_widths, config.input_skip);
        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
            encoder_frozen: false,
            train_dims: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &ResNet34Encoder<T> {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut ResNet34Encoder<T> {
        &mut self.encoder
    }

    pub fn decoder(&self) -> &UNetDecoder<T> {
        &self.decoder
    }

    /// Excludes encoder parameters from [`Self::visit_trainable_mut`] and
    /// runs the encoder with running statistics during training.
    pub fn freeze_encoder(&mut self, frozen: bool) {
        self.encoder_frozen = frozen;
    }

    pub fn encoder_frozen(&self) -> bool {
        self.encoder_frozen
    }

    /// Optimizer-visible parameters, named as in the weight archive.
    pub fn visit_trainable_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let mut only_trainable = |name: &str, p: &mut Param<T>| {
            if p.kind == ParamKind::Trainable {
                f(name, p)
            }
        };
        if !self.encoder_frozen {
            self.encoder.visit_mut(ENCODER_PREFIX, &mut only_trainable);
        }
        self.decoder.visit_mut(DECODER_PREFIX, &mut only_trainable);
    }

    pub fn trainable_param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_trainable_mut(&mut |_, p| n += p.len());
        n
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.param_count(ParamKind::Trainable)
    }

    pub fn total_param_count(&self) -> usize {
        self.param_count(ParamKind::Trainable)
    }

    fn normalize_padded(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.shape();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        if h < ALIGNMENT || w < ALIGNMENT {
            return Err(Error::Size(format!(
                "input {h}x{w} is smaller than the minimum {ALIGNMENT}x{ALIGNMENT}"
            )));
        }
        let mut p = x.pad_reflect(aligned(h), aligned(w));
        let plane = p.plane();
        for b in 0..p.batch() {
            for (ch, chunk) in p.item_mut(b).chunks_mut(plane).enumerate() {
                let m = T::cast(self.config.input_mean[ch] as f64);
                let s = T::cast(self.config.input_std[ch] as f64);
                chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
        Ok(p)
    }

    /// Eval-mode inference on an NCHW batch with values in `[0, 1]`.
    pub fn forward(&self, x: &Tensor<T>, opts: ForwardOptions) -> Result<Tensor<T>> {
        let p = self.normalize_padded(x)?;
        let stages = self.encoder.forward(&p);
        let y = self.decoder.forward(&p, &stages, opts.zero_skips);
        Ok(y.crop(x.height(), x.width()))
    }

    /// Train-mode forward that records what [`Self::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.normalize_padded(x)?;
        let stages = if self.encoder_frozen {
            self.encoder.forward(&p)
        } else {
            self.encoder.forward_train(&p)
        };
        let y = self.decoder.forward_train(&p, &stages);
        let [n, c, ph, pw] = y.shape();
        self.train_dims = Some((n, c, ph, pw));
        Ok(y.crop(x.height(), x.width()))
    }

    pub fn forward_mode(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward(x, ForwardOptions::default()),
        }
    }

    /// Accumulates parameter gradients for the loss gradient `gy` taken
    /// with respect to the last [`Self::forward_train`] output.
    pub fn backward(&mut self, gy: &Tensor<T>) {
        let (_, _, ph, pw) = self.train_dims.take().expect("backward without forward_train");
        let g = gy.uncrop(ph, pw);
        let stage_grads = self.decoder.backward(&g);
        if !self.encoder_frozen {
            self.encoder.backward(stage_grads);
        }
    }

    /// Eval-mode enhancement of a single image.
    pub fn enhance(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let x = Tensor::<f32>::from_images(&[img])?.cast::<T>();
        let y = self.forward(&x, ForwardOptions::default())?;
        let mut out = y.cast::<f32>().to_images()?;
        Ok(out.remove(0))
    }

    pub fn to_archive(&self, metadata: ArchiveMetadata) -> WeightArchive {
        let metadata = ArchiveMetadata {
            model_config: Some(self.config.clone()),
            ..metadata
        };
        WeightArchive::from_module(self, "", self.config.architecture_hash(), metadata)
    }

    pub fn save_weights(&self, dir: impl AsRef<Path>, metadata: ArchiveMetadata) -> Result<()> {
        self.to_archive(metadata).save(dir)
    }

    /// Copies archive parameters into this model; the archive must have
    /// been produced by an identically configured model.
    pub fn load_archive(&mut self, archive: &WeightArchive) -> Result<()> {
        let expected = self.config.architecture_hash();
        if archive.config_hash != expected {
            return Err(Error::ConfigMismatch(format!(
                "archive config hash {} does not match model hash {expected}",
                archive.config_hash
            )));
        }
        archive.assign_to(self, "", false)
    }

    /// Rebuilds a model from an archive written by [`Self::save_weights`].
    pub fn load_weights(dir: impl AsRef<Path>) -> Result<(Self, ArchiveMetadata)> {
        let archive = WeightArchive::load(dir)?;
        let config = archive
            .metadata
            .model_config
            .clone()
            .ok_or_else(|| Error::Archive("archive carries no model configuration".into()))?;
        let mut model = Self::random(&config)?;
        model.load_archive(&archive)?;
        Ok((model, archive.metadata))
    }
}

impl<T: Float> Module<T> for UResNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.encoder.visit(&join(prefix, ENCODER_PREFIX), f);
        self.decoder.visit(&join(prefix, DECODER_PREFIX), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_mut(&join(prefix, ENCODER_PREFIX), f);
        self.decoder.visit_mut(&join(prefix, DECODER_PREFIX), f);
    }
}

/// Value of [`WEIGHTS_CACHE_ENV`], if set.
pub fn weights_cache_from_env() -> Option<PathBuf> {
    std::env::var_os(WEIGHTS_CACHE_ENV).map(PathBuf::from)
}

/// Loads a pretrained archive from `cache/<name>`, mapping absence to
/// [`Error::WeightsUnavailable`].
pub(crate) fn load_pretrained(cache: Option<&Path>, name: &str) -> Result<WeightArchive> {
    let Some(cache) = cache else {
        return Err(Error::WeightsUnavailable(format!(
            "pretrained {name} weights requested but {WEIGHTS_CACHE_ENV} is not set"
        )));
    };
    let dir = cache.join(name);
    match WeightArchive::load(&dir) {
        Err(Error::NotFound(p)) => Err(Error::WeightsUnavailable(format!(
            "pretrained {name} archive missing: {}",
            p.display()
        ))),
        other => other,
    }
}

/// Builds the model described by `config`. With `pretrained`, encoder
/// weights come from `cache/resnet34`; their absence is an error, never a
/// silent fallback to random weights.
pub fn build_model(config: &ModelConfig, cache: Option<&Path>) -> Result<UResNet<f32>> {
    let mut model = UResNet::random(config)?;
    if config.pretrained {
        let archive = load_pretrained(cache, RESNET34_ARCHIVE)?;
        archive.assign_to(&mut model.encoder, "", true)?;
    }
    Ok(model)
}
