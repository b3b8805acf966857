#![allow(dead_code)]

use std::path::Path;

use orbit_restore::degrade::{build_dataset, DegradationRecipe, MANIFEST_FILE};
use orbit_restore::loss::{ExtractorConfig, LossConfig};
use orbit_restore::model::ModelConfig;
use orbit_restore::nn::Module;
use orbit_restore::tensor::Float;
use orbit_restore::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic spacecraft-like scene: dark sky, a shaded body, panel
/// arrays with grid lines and a few stars.
pub fn scene(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let cx = rng.random_range(0.35..0.65) * s;
    let cy = rng.random_range(0.35..0.65) * s;
    let r = rng.random_range(0.12..0.22) * s;
    let body: [f32; 3] = [rng.random_range(0.5..0.9), rng.random_range(0.4..0.8), rng.random_range(0.2..0.6)];
    let panel: [f32; 3] = [rng.random_range(0.1..0.3), rng.random_range(0.2..0.4), rng.random_range(0.5..0.9)];
    let span = rng.random_range(0.25..0.4) * s;
    let half_h = rng.random_range(0.06..0.1) * s;
    let pitch = rng.random_range(3.0..6.0f32);
    let light = rng.random_range(0.0..std::f32::consts::TAU);
    let stars: Vec<(usize, usize, f32)> = (0..rng.random_range(3..8))
        .map(|_| (rng.random_range(0..size), rng.random_range(0..size), rng.random_range(0.4..1.0)))
        .collect();
    ImageTensor::from_fn(size, size, |y, x, c| {
        let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
        let (dx, dy) = (fx - cx, fy - cy);
        let d = (dx * dx + dy * dy).sqrt();
        if d < r {
            let shade = 0.55 + 0.45 * ((dx * light.cos() + dy * light.sin()) / r);
            return (body[c] * shade).clamp(0.0, 1.0);
        }
        let in_panel = dy.abs() < half_h && dx.abs() > r * 0.8 && dx.abs() < r + span;
        if in_panel {
            let grid = ((dx.abs() % pitch) < 0.8) || ((dy + half_h) % pitch < 0.8);
            return if grid { 0.85 } else { panel[c] };
        }
        for &(sy, sx, b) in &stars {
            if sy == y && sx == x {
                return b;
            }
        }
        0.02
    })
    .expect("valid dims")
}

pub fn write_scenes(dir: &Path, count: usize, size: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        scene(size, seed + i as u64)
            .save(dir.join(format!("scene_{i:02}.png")))
            .unwrap();
    }
}

/// `count` scenes degraded once each; returns the manifest path.
pub fn fixture_dataset(root: &Path, count: usize, size: usize) -> std::path::PathBuf {
    let clean = root.join("clean");
    write_scenes(&clean, count, size, 100);
    let data = root.join("data");
    let recipe = DegradationRecipe {
        seed: 42,
        variants_per_image: 1,
        ..Default::default()
    };
    build_dataset(&clean, &data, &recipe).unwrap();
    data.join(MANIFEST_FILE)
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        pretrained: false,
        width: 8,
        decoder_widths: [16, 8, 8, 4],
        ..Default::default()
    }
}

pub fn tiny_loss() -> LossConfig {
    LossConfig {
        extractor: ExtractorConfig {
            pretrained: false,
            width: 8,
            init_seed: 0,
        },
        ..Default::default()
    }
}

/// Every parameter and buffer of `m`, as raw bits.
pub fn snapshot<T: Float, M: Module<T>>(m: &M) -> Vec<(String, Vec<u64>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, p| {
        out.push((name.to_string(), p.data.iter().map(|v| v.to_f64().unwrap().to_bits()).collect()));
    });
    out
}
