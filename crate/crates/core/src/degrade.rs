//! Seeded synthesis of degraded/clean training pairs.
//!
//! Every variant is generated from a single `sub_seed` drawn through
//! [`variant_seed`], so a dataset build is a pure function of the clean
//! images and the recipe regardless of the order in which work finishes.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`; Gaussian samples use `rand_distr::StandardNormal`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_unit, load_image, reflect_index, save_image, ImageTensor, CHANNELS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Redraw budget when a sampled degradation leaves the 8-bit image unchanged.
const MAX_REDRAWS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBlurSpec {
    pub probability: f64,
    pub sigma_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionBlurSpec {
    pub probability: f64,
    pub length_range: [f64; 2],
    /// Degrees counter-clockwise from the +x axis, within `[0, 180]`.
    pub angle_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureSpec {
    pub probability: f64,
    pub gain_range: [f64; 2],
    pub gamma_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub probability: f64,
    pub sigma_range: [f64; 2],
}

/// Distribution over degradations applied to each clean image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationRecipe {
    pub seed: u64,
    pub gaussian_blur: GaussianBlurSpec,
    pub motion_blur: MotionBlurSpec,
    pub exposure: ExposureSpec,
    pub noise: NoiseSpec,
    pub variants_per_image: usize,
}

impl Default for DegradationRecipe {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussian_blur: GaussianBlurSpec {
                probability: 0.5,
                sigma_range: [0.5, 3.0],
            },
            motion_blur: MotionBlurSpec {
                probability: 0.5,
                length_range: [3.0, 15.0],
                angle_range: [0.0, 180.0],
            },
            exposure: ExposureSpec {
                probability: 0.5,
                gain_range: [0.3, 2.5],
                gamma_range: [0.6, 1.6],
            },
            noise: NoiseSpec {
                probability: 0.5,
                sigma_range: [0.01, 0.08],
            },
            variants_per_image: 3,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] || r[0] < min {
        return Err(Error::Config(format!(
            "{name} must satisfy {min} <= low <= high, got {r:?}"
        )));
    }
    Ok(())
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
    }
    Ok(())
}

impl DegradationRecipe {
    pub fn validate(&self) -> Result<()> {
        check_probability("gaussian_blur", self.gaussian_blur.probability)?;
        check_probability("motion_blur", self.motion_blur.probability)?;
        check_probability("exposure", self.exposure.probability)?;
        check_probability("noise", self.noise.probability)?;
        check_range("gaussian_blur.sigma_range", self.gaussian_blur.sigma_range, 0.0)?;
        check_range("motion_blur.length_range", self.motion_blur.length_range, 1.0)?;
        check_range("motion_blur.angle_range", self.motion_blur.angle_range, 0.0)?;
        if self.motion_blur.angle_range[1] > 180.0 {
            return Err(Error::Config("motion_blur.angle_range must lie in [0, 180]".into()));
        }
        check_range("exposure.gain_range", self.exposure.gain_range, f64::MIN_POSITIVE)?;
        check_range("exposure.gamma_range", self.exposure.gamma_range, f64::MIN_POSITIVE)?;
        check_range("noise.sigma_range", self.noise.sigma_range, 0.0)?;
        if self.variants_per_image == 0 {
            return Err(Error::Config("variants_per_image must be at least 1".into()));
        }
        let any = [
            self.motion_blur.probability,
            self.gaussian_blur.probability,
            self.exposure.probability,
            self.noise.probability,
        ]
        .iter()
        .any(|&p| p > 0.0);
        if !any {
            return Err(Error::Config(
                "at least one degradation needs a nonzero probability".into(),
            ));
        }
        Ok(())
    }
}

/// One concrete degradation with the exact parameters that were applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    MotionBlur { length: f64, angle: f64 },
    GaussianBlur { sigma: f64 },
    Exposure { gain: f64, gamma: f64 },
    Noise { sigma: f64, seed: u64 },
}

impl Degradation {
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        match *self {
            Degradation::MotionBlur { length, angle } => motion_blur(img, length, angle),
            Degradation::GaussianBlur { sigma } => gaussian_blur(img, sigma),
            Degradation::Exposure { gain, gamma } => adjust_exposure(img, gain, gamma),
            Degradation::Noise { sigma, seed } => add_gaussian_noise(img, sigma, seed),
        }
    }
}

/// Everything needed to regenerate one degraded image from its source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationRecord {
    /// Source image path, relative to the dataset directory.
    pub source_image: String,
    pub source_index: usize,
    pub variant_index: usize,
    pub sub_seed: u64,
    pub applied: Vec<Degradation>,
}

impl DegradationRecord {
    /// Re-applies the recorded degradations in order.
    pub fn replay(&self, source: &ImageTensor) -> Result<ImageTensor> {
        let mut img = source.clone();
        for d in &self.applied {
            img = d.apply(&img)?;
        }
        Ok(img)
    }
}

// ---------------------------------------------------------------------------
// Primitive operations

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius == 0 {
        return vec![1.0];
    }
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= z);
    taps
}

/// Correlates with a 2-D kernel of odd size `k x k` using mirrored borders.
fn filter2d(img: &ImageTensor, kernel: &[f64], k: usize) -> ImageTensor {
    let (h, w) = img.dims();
    let r = (k / 2) as isize;
    let taps: Vec<(isize, isize, f64)> = (0..k * k)
        .filter(|&i| kernel[i] != 0.0)
        .map(|i| ((i / k) as isize - r, (i % k) as isize - r, kernel[i]))
        .collect();
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; CHANNELS];
            for &(dy, dx, kv) in &taps {
                let sy = reflect_index(y as isize + dy, h);
                let sx = reflect_index(x as isize + dx, w);
                let base = (sy * w + sx) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += kv * src[base + c] as f64;
                }
            }
            let base = (y * w + x) * CHANNELS;
            for c in 0..CHANNELS {
                out[base + c] = clamp_unit(acc[c] as f32);
            }
        }
    }
    ImageTensor::new(h, w, out).expect("clamped filter output")
}

fn filter_separable(img: &ImageTensor, taps: &[f64]) -> ImageTensor {
    let (h, w) = img.dims();
    let r = (taps.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for (i, &t) in taps.iter().enumerate() {
                let sx = reflect_index(x as isize + i as isize - r, w);
                let s = (y * w + sx) * CHANNELS;
                let d = (y * w + x) * CHANNELS;
                for c in 0..CHANNELS {
                    tmp[d + c] += t * src[s + c] as f64;
                }
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; CHANNELS];
            for (i, &t) in taps.iter().enumerate() {
                let sy = reflect_index(y as isize + i as isize - r, h);
                let s = (sy * w + x) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += t * tmp[s + c];
                }
            }
            let d = (y * w + x) * CHANNELS;
            for c in 0..CHANNELS {
                out[d + c] = clamp_unit(acc[c] as f32);
            }
        }
    }
    ImageTensor::new(h, w, out).expect("clamped filter output")
}

/// Isotropic Gaussian blur with a truncated kernel of size `2*ceil(3*sigma)+1`.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Param(format!("blur sigma must be >= 0, got {sigma}")));
    }
    let taps = gaussian_taps(sigma);
    if taps.len() == 1 {
        return Ok(img.clone());
    }
    Ok(filter_separable(img, &taps))
}

/// Rasterised, normalised line kernel of the given length and angle.
/// Returns the kernel side length and row-major weights.
pub fn motion_kernel(length: f64, angle_deg: f64) -> Result<(usize, Vec<f64>)> {
    if !(length >= 1.0) || !length.is_finite() {
        return Err(Error::Param(format!("motion length must be >= 1, got {length}")));
    }
    if !angle_deg.is_finite() {
        return Err(Error::Param("motion angle must be finite".into()));
    }
    let half = (length - 1.0) / 2.0;
    let r = half.ceil() as isize;
    let k = (2 * r + 1) as usize;
    let (s, c) = angle_deg.to_radians().sin_cos();
    let mut kernel = vec![0.0; k * k];
    // sample the segment densely; image rows grow downwards
    let samples = ((length * 8.0).ceil() as usize).max(1);
    for i in 0..=samples {
        let t = if samples == 0 {
            0.0
        } else {
            -half + 2.0 * half * i as f64 / samples as f64
        };
        let px = (t * c).round() as isize + r;
        let py = (-t * s).round() as isize + r;
        kernel[py as usize * k + px as usize] = 1.0;
    }
    let z: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= z);
    Ok((k, kernel))
}

pub fn motion_blur(img: &ImageTensor, length: f64, angle_deg: f64) -> Result<ImageTensor> {
    let (k, kernel) = motion_kernel(length, angle_deg)?;
    if k == 1 {
        return Ok(img.clone());
    }
    Ok(filter2d(img, &kernel, k))
}

/// `clamp(gain * v^gamma, 0, 1)` per sample.
pub fn adjust_exposure(img: &ImageTensor, gain: f64, gamma: f64) -> Result<ImageTensor> {
    if !(gain > 0.0 && gain.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Param(format!(
            "exposure needs gain > 0 and gamma > 0, got gain={gain} gamma={gamma}"
        )));
    }
    Ok(img.map(|v| (gain * (v as f64).powf(gamma)) as f32))
}

/// Adds i.i.d. zero-mean Gaussian noise drawn from ChaCha8 seeded with
/// `seed`, then clamps.
pub fn add_gaussian_noise(img: &ImageTensor, sigma: f64, seed: u64) -> Result<ImageTensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Param(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            (v as f64 + sigma * z) as f32
        })
        .collect();
    ImageTensor::from_clamped(img.height(), img.width(), data)
}

// ---------------------------------------------------------------------------
// Recipes

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for variant `variant` of source `source`:
/// `m(m(m(seed) ^ source) ^ variant)` where `m` is the SplitMix64 step.
pub fn variant_seed(seed: u64, source: u64, variant: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ source) ^ variant)
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn sample_degradations(rng: &mut ChaCha8Rng, recipe: &DegradationRecipe) -> Vec<Degradation> {
    loop {
        let use_motion = rng.random::<f64>() < recipe.motion_blur.probability;
        let use_gauss = rng.random::<f64>() < recipe.gaussian_blur.probability;
        let use_exposure = rng.random::<f64>() < recipe.exposure.probability;
        let use_noise = rng.random::<f64>() < recipe.noise.probability;
        if !(use_motion || use_gauss || use_exposure || use_noise) {
            continue;
        }
        let mut out = Vec::with_capacity(4);
        if use_motion {
            out.push(Degradation::MotionBlur {
                length: draw(rng, recipe.motion_blur.length_range),
                angle: draw(rng, recipe.motion_blur.angle_range),
            });
        }
        if use_gauss {
            out.push(Degradation::GaussianBlur {
                sigma: draw(rng, recipe.gaussian_blur.sigma_range),
            });
        }
        if use_exposure {
            out.push(Degradation::Exposure {
                gain: draw(rng, recipe.exposure.gain_range),
                gamma: draw(rng, recipe.exposure.gamma_range),
            });
        }
        if use_noise {
            out.push(Degradation::Noise {
                sigma: draw(rng, recipe.noise.sigma_range),
                seed: rng.next_u64(),
            });
        }
        return out;
    }
}

/// Samples and applies degradations in the fixed order motion blur,
/// Gaussian blur, exposure, noise.
///
/// Draws are repeated until at least one degradation is selected and the
/// 8-bit result differs from the 8-bit source. The returned record has an
/// empty `source_image`; dataset builders fill in provenance.
pub fn apply_recipe(
    img: &ImageTensor,
    recipe: &DegradationRecipe,
    sub_seed: u64,
) -> Result<(ImageTensor, DegradationRecord)> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
    let clean_bytes = img.to_rgb8();
    for _ in 0..MAX_REDRAWS {
        let applied = sample_degradations(&mut rng, recipe);
        let record = DegradationRecord {
            source_image: String::new(),
            source_index: 0,
            variant_index: 0,
            sub_seed,
            applied,
        };
        let out = record.replay(img)?;
        if out.to_rgb8() != clean_bytes {
            return Ok((out, record));
        }
    }
    Err(Error::Param(format!(
        "recipe failed to alter the image after {MAX_REDRAWS} draws"
    )))
}

// ---------------------------------------------------------------------------
// Dataset construction

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPair {
    pub degraded: String,
    pub target: String,
    pub record: DegradationRecord,
}

/// `manifest.json`: the ingestion contract between dataset building and
/// training. All paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub recipe: DegradationRecipe,
    pub pairs: Vec<ManifestPair>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn distinct_targets(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.pairs
            .iter()
            .map(|p| p.target.as_str())
            .filter(|t| seen.insert(*t))
            .collect()
    }
}

fn is_image_file(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            .unwrap_or(false)
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Writes `variants_per_image` degraded copies of every clean image plus a
/// PNG copy of each target, then `manifest.json`.
pub fn build_dataset(
    clean_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    recipe: &DegradationRecipe,
) -> Result<DatasetManifest> {
    let clean_dir = clean_dir.as_ref();
    let out_dir = out_dir.as_ref();
    recipe.validate()?;
    let sources = list_images(clean_dir)?;
    if sources.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no PNG/JPEG images in {}",
            clean_dir.display()
        )));
    }
    let stems: Vec<String> = sources
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    let mut seen = HashSet::new();
    for s in &stems {
        if !seen.insert(s) {
            return Err(Error::Config(format!("two source images share the stem {s:?}")));
        }
    }
    for sub in ["targets", "degraded"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let per_source: Vec<Result<Vec<ManifestPair>>> = sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let clean = load_image(src)?;
            let target_rel = format!("targets/{}.png", stems[i]);
            save_image(&clean, out_dir.join(&target_rel))?;
            (0..recipe.variants_per_image)
                .map(|j| {
                    let sub_seed = variant_seed(recipe.seed, i as u64, j as u64);
                    let (degraded, mut record) = apply_recipe(&clean, recipe, sub_seed)?;
                    record.source_image = target_rel.clone();
                    record.source_index = i;
                    record.variant_index = j;
                    let degraded_rel = format!("degraded/{}_v{j}.png", stems[i]);
                    save_image(&degraded, out_dir.join(&degraded_rel))?;
                    Ok(ManifestPair {
                        degraded: degraded_rel,
                        target: target_rel.clone(),
                        record,
                    })
                })
                .collect()
        })
        .collect();

    let mut pairs = Vec::with_capacity(sources.len() * recipe.variants_per_image);
    for r in per_source {
        pairs.extend(r?);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        recipe: recipe.clone(),
        pairs,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
