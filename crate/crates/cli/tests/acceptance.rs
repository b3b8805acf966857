//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test --release -p orbit-restore-cli --test acceptance`.
//! Extra arguments select criteria by number, e.g. `-- 3 7`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{fixture_dataset, scene, snapshot, write_scenes};
use orbit_restore::archive::{CommitStage, WeightArchive};
use orbit_restore::degrade::{apply_recipe, build_dataset, DatasetManifest, DegradationRecipe, MANIFEST_FILE};
use orbit_restore::eval::{self, letterbox, GridLegend, IdentityEnhancer};
use orbit_restore::loss::{input_gradient_check, model_gradient_check, ExtractorConfig, LossConfig, VGG16_ARCHIVE};
use orbit_restore::metrics::{psnr, ssim};
use orbit_restore::model::{build_model, weights_cache_from_env, ModelConfig, UResNet, RESNET34_ARCHIVE};
use orbit_restore::nn::PixelShuffleUpsample;
use orbit_restore::train::{
    checkpoint_best, early_stop_check, fit, one_cycle_lr, plateau_step, split_by_target, EarlyStopConfig,
    FitOptions, PhaseConfig, PlateauConfig, TrainConfig, TrainState,
};
use orbit_restore::{Error, ImageTensor, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T>(r: orbit_restore::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn phase(image_size: usize, epochs: usize, batch_size: usize, encoder_frozen: bool) -> PhaseConfig {
    PhaseConfig {
        image_size,
        epochs,
        batch_size,
        max_lr: 1e-3,
        encoder_frozen,
    }
}

fn tiny_model() -> ModelConfig {
    common::tiny_model()
}

// ---------------------------------------------------------------------------
// 1. overfit

fn overfit() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest_path = fixture_dataset(tmp.path(), 8, 64);

    let cache = weights_cache_from_env();
    let has = |name: &str| cache.as_ref().is_some_and(|c| c.join(name).is_dir());
    let pretrained_encoder = has(RESNET34_ARCHIVE);
    let pretrained_extractor = has(VGG16_ARCHIVE);
    let model_cfg = ModelConfig {
        pretrained: pretrained_encoder,
        ..Default::default()
    };
    let loss_cfg = LossConfig {
        extractor: ExtractorConfig {
            pretrained: pretrained_extractor,
            ..Default::default()
        },
        ..Default::default()
    };
    let train_cfg = TrainConfig {
        phases: vec![phase(64, 30, 4, true)],
        // all 30 epochs run
        early_stop: EarlyStopConfig {
            patience: 30,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut model = ok(build_model(&model_cfg, cache.as_deref()))?;
    let outcome = ok(fit(
        &mut model,
        &manifest_path,
        &train_cfg,
        &loss_cfg,
        tmp.path().join("run"),
        FitOptions {
            weights_cache: cache.clone(),
            resume: None,
        },
    ))?;
    let history = &outcome.state.history;
    let ratio = history.last().unwrap().train_loss / history[0].train_loss;

    let manifest = ok(DatasetManifest::load(&manifest_path))?;
    let split = ok(split_by_target(&manifest, train_cfg.validation_fraction, train_cfg.seed))?;
    let root = manifest_path.parent().unwrap();
    let (mut sum_in, mut sum_out) = (0.0, 0.0);
    for &i in &split.train {
        let pair = &manifest.pairs[i];
        let degraded = ok(ImageTensor::load(root.join(&pair.degraded)))?;
        let target = ok(ImageTensor::load(root.join(&pair.target)))?;
        sum_in += ok(psnr(&degraded, &target))?;
        sum_out += ok(psnr(&ok(model.enhance(&degraded))?, &target))?;
    }
    let n = split.train.len() as f64;
    let (psnr_in, psnr_out) = (sum_in / n, sum_out / n);
    let weights = format!(
        "encoder {}, extractor {}",
        if pretrained_encoder { "pretrained" } else { "random" },
        if pretrained_extractor { "pretrained" } else { "random" }
    );
    let detail = format!(
        "{weights}; {} epochs, loss ratio {ratio:.4} (<= 0.1), psnr_in {psnr_in:.2} dB, psnr_out {psnr_out:.2} dB, gain {:.2} dB (>= 3)",
        history.len(),
        psnr_out - psnr_in
    );
    ensure!(history.len() == 30, "{detail}");
    ensure!(ratio <= 0.1 && psnr_out - psnr_in >= 3.0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 2. gradient check

fn gradient_check() -> Outcome {
    let model_cfg = ModelConfig {
        pretrained: false,
        width: 4,
        decoder_widths: [8, 8, 4, 4],
        ..Default::default()
    };
    let full = LossConfig {
        extractor: ExtractorConfig {
            pretrained: false,
            width: 4,
            init_seed: 0,
        },
        ..Default::default()
    };
    let pixel = LossConfig::pixel_only();
    let f = ok(model_gradient_check(&full, &model_cfg, 32, 4, 50, 0))?;
    let p = ok(model_gradient_check(&pixel, &model_cfg, 32, 4, 50, 0))?;
    let fi = ok(input_gradient_check(&full, 16, 50, 0))?;
    let pi = ok(input_gradient_check(&pixel, 8, 50, 0))?;
    let detail = format!(
        "perceptual+pixel {:.2e} (< 1e-3), pixel-only {:.2e} (< 1e-5), {} + {} kinked draws redrawn; wrt prediction {:.2e} / {:.2e}",
        f.max_relative_error, p.max_relative_error, f.discarded, p.discarded, fi.max_relative_error, pi.max_relative_error
    );
    ensure!(f.samples == 50 && p.samples == 50, "{detail}");
    ensure!(f.max_relative_error < 1e-3 && p.max_relative_error < 1e-5, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 3. ICNR

fn icnr() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let cin = rng.random_range(1..8);
        let cout = rng.random_range(1..6);
        let (h, w) = (rng.random_range(3..10), rng.random_range(3..10));
        let up = PixelShuffleUpsample::<f64>::new(&mut rng, cin, cout, 2);
        let x = ok(Tensor::from_vec([1, cin, h, w], (0..cin * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()))?;
        let y = up.forward(&x);
        ensure!(y.shape() == [1, cout, 2 * h, 2 * w], "shape {:?}", y.shape());
        let weight = &up.conv.weight.data;
        let bias = up.conv.bias.as_ref().map(|b| b.data.clone()).unwrap_or(vec![0.0; 4 * cout]);
        for c in 0..cout {
            // base kernel: first output channel of each group of four
            let kernel = &weight[c * 4 * cin..c * 4 * cin + cin];
            for yy in 0..h {
                for xx in 0..w {
                    let base: f64 = bias[c * 4] + (0..cin).map(|i| kernel[i] * x.at(0, i, yy, xx)).sum::<f64>();
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        worst = worst.max((y.at(0, c, 2 * yy + dy, 2 * xx + dx) - base).abs());
                    }
                }
            }
        }
    }
    let detail = format!("max abs diff {worst:.2e} (<= 1e-6) over 20 inputs");
    ensure!(worst <= 1e-6, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 4. shapes and range

fn shapes() -> Outcome {
    let model = ok(UResNet::<f32>::random(&ModelConfig {
        pretrained: false,
        ..Default::default()
    }))?;
    for s in [32, 64, 96, 224, 250, 256, 321] {
        let img = ok(scene(s, s as u64).resize_bilinear(s, s))?;
        let out = ok(model.enhance(&img))?;
        ensure!(out.dims() == (s, s), "{s}x{s} -> {:?}", out.dims());
        ensure!(out.data().iter().all(|v| (0.0..=1.0).contains(v)), "{s}x{s} leaves [0, 1]");
    }
    for (h, w) in [(31, 31), (31, 64), (64, 16)] {
        let img = ok(scene(64, 0).resize_bilinear(h, w))?;
        ensure!(
            matches!(model.enhance(&img), Err(Error::Size(_))),
            "{h}x{w} did not raise a size error"
        );
    }
    Ok("7 sizes preserved and in [0, 1]; 3 undersized inputs rejected".into())
}

// ---------------------------------------------------------------------------
// 5. scheduler

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn scheduler() -> Outcome {
    let (max_lr, pct, div_start, div_final) = (1e-3, 0.25, 25.0, 1e4);
    for total in [1, 7, 100, 1234] {
        let lr = |s| one_cycle_lr(s, total, max_lr, pct, div_start, div_final).unwrap();
        let warmup = (pct * total as f64).round() as usize;
        ensure!(warmup == 0 || close(lr(0), max_lr / div_start, 1e-12), "start of {total}");
        ensure!(close(lr(warmup), max_lr, 1e-12), "peak of {total}");
        ensure!(close(lr(total), max_lr / div_final, 1e-12), "end of {total}");
    }
    // descent midpoint: 100 steps, warmup 20, midpoint at step 60
    let mid = ok(one_cycle_lr(60, 100, 1e-3, 0.2, 25.0, 1e4))?;
    ensure!(close(mid, (1e-3 + 1e-7) / 2.0, 1e-12), "descent midpoint {mid}");

    // plateau and early-stop examples
    let run = |losses: &[f64], plateau: &PlateauConfig| {
        let mut s = TrainState::default();
        losses.iter().for_each(|&l| plateau_step(&mut s, l, plateau));
        s
    };
    let pc = |patience, factor| PlateauConfig {
        patience,
        factor,
        min_delta: 0.0,
    };
    ensure!(run(&[1.0, 0.9, 0.8, 0.7], &pc(1, 0.5)).lr_scale == 1.0, "improving losses reduced lr");
    ensure!(run(&[1.0, 1.0], &pc(2, 0.1)).lr_scale == 1.0, "reduced before patience");
    ensure!(run(&[1.0, 1.0, 1.0], &pc(2, 0.1)).lr_scale == 0.1, "no reduction after patience");
    ensure!(run(&[1.0, 1.0, 1.0], &pc(1, 0.5)).lr_scale == 0.25, "factor not applied twice");
    let stops = |losses: &[f64], patience, min_delta| {
        let mut s = TrainState::default();
        let cfg = EarlyStopConfig { patience, min_delta };
        losses
            .iter()
            .map(|&l| {
                plateau_step(&mut s, l, &PlateauConfig::default());
                early_stop_check(&s, &cfg)
            })
            .collect::<Vec<_>>()
    };
    ensure!(stops(&[1.0, 0.9, 0.8, 0.7, 0.6], 3, 0.0).iter().all(|s| !s), "stopped while improving");
    ensure!(stops(&[1.0, 1.0, 1.0, 1.0], 3, 0.0) == [false, false, false, true], "flat losses");
    ensure!(stops(&[1.0, 0.97, 0.94, 0.91], 3, 0.05) == [false, false, false, true], "min_delta");

    // lr trace of a real run against an independent reconstruction
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = fixture_dataset(tmp.path(), 8, 32);
    let cfg = TrainConfig {
        phases: vec![phase(32, 3, 4, true), PhaseConfig { max_lr: 2e-4, ..phase(32, 3, 2, false) }],
        plateau: PlateauConfig {
            patience: 1,
            factor: 0.5,
            min_delta: 0.02,
        },
        early_stop: EarlyStopConfig {
            patience: 100,
            min_delta: 0.0,
        },
        validation_fraction: 0.25,
        ..Default::default()
    };
    let mut model = ok(UResNet::<f32>::random(&tiny_model()))?;
    let outcome = ok(fit(&mut model, &manifest, &cfg, &common::tiny_loss(), tmp.path().join("run"), FitOptions::default()))?;
    let history = &outcome.state.history;
    ensure!(history.len() == 6, "{} epochs", history.len());
    let (mut scale, mut best, mut wait, mut current) = (1.0f64, f64::INFINITY, 0usize, usize::MAX);
    let mut reductions = 0;
    for r in history {
        if r.phase != current {
            current = r.phase;
            wait = 0;
        }
        let p = &cfg.phases[r.phase];
        let oc = &cfg.one_cycle;
        let expected = ok(one_cycle_lr(r.phase_step, r.phase_total_steps, p.max_lr, oc.pct_start, oc.div_start, oc.div_final))? * scale;
        ensure!(r.lr_scale == scale, "epoch {}: lr_scale {} vs {scale}", r.epoch, r.lr_scale);
        ensure!(close(r.lr, expected, 1e-12 * expected.max(1e-12)), "epoch {}: lr {} vs {expected}", r.epoch, r.lr);
        if r.val_loss < best - cfg.plateau.min_delta {
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.plateau.patience {
                scale *= cfg.plateau.factor;
                reductions += 1;
                wait = 0;
            }
        }
        best = best.min(r.val_loss);
    }
    ensure!(reductions > 0, "run never reduced the learning rate");
    Ok(format!(
        "landmarks exact, 7 counter examples, lr trace of {} epochs matches ({reductions} plateau reductions)",
        history.len()
    ))
}

// ---------------------------------------------------------------------------
// 6. degradation determinism

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(dir).unwrap().to_path_buf(), fs::read(e.path()).unwrap()))
        .collect()
}

fn degradation() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clean = tmp.path().join("clean");
    write_scenes(&clean, 8, 64, 7);
    let recipe = DegradationRecipe {
        seed: 42,
        ..Default::default()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let manifest = ok(build_dataset(&clean, &a, &recipe))?;
    ok(build_dataset(&clean, &b, &recipe))?;
    let (fa, fb) = (files(&a), files(&b));
    ensure!(fa.contains_key(Path::new(MANIFEST_FILE)), "no manifest written");
    ensure!(fa == fb, "dataset directories differ");

    for pair in &manifest.pairs {
        let source = ok(ImageTensor::load(a.join(&pair.record.source_image)))?;
        let replayed = ok(pair.record.replay(&source))?;
        let (fresh, _) = ok(apply_recipe(&source, &recipe, pair.record.sub_seed))?;
        ensure!(replayed == fresh, "{}: replay differs from generation", pair.degraded);
        let stored = ok(ImageTensor::load(a.join(&pair.degraded)))?;
        ensure!(replayed.to_rgb8() == stored.to_rgb8(), "{}: replay differs from file", pair.degraded);
    }

    let mut worst_gap = f64::INFINITY;
    for k in 0..8 {
        let img = scene(64, k);
        let scores: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|&s| psnr(&img, &orbit_restore::degrade::add_gaussian_noise(&img, s, k).unwrap()).unwrap())
            .collect();
        ensure!(scores[0] > scores[1] && scores[1] > scores[2], "scene {k}: {scores:?}");
        worst_gap = worst_gap.min((scores[0] - scores[1]).min(scores[1] - scores[2]));
    }
    Ok(format!(
        "{} files byte-identical across runs, {} records replayed bit-exactly, noise psnr monotone (min step {worst_gap:.2} dB)",
        fa.len(),
        manifest.pairs.len()
    ))
}

// ---------------------------------------------------------------------------
// 7. metrics

fn metrics() -> Outcome {
    let rel = |got: f64, want: f64| (got - want).abs() <= 1e-4 * want.abs().max(1e-4);
    let black = ok(ImageTensor::filled(32, 32, 0.0))?;
    let white = ok(ImageTensor::filled(32, 32, 1.0))?;
    let grey = ok(ImageTensor::filled(32, 32, 0.5))?;
    let p0 = ok(psnr(&black, &white))?;
    ensure!(rel(p0, 0.0), "black/white psnr {p0}");
    let p6 = ok(psnr(&black, &grey))?;
    let want6 = 10.0 * (1.0f64 / 0.25).log10();
    ensure!(rel(p6, want6), "black/grey psnr {p6} vs {want6}");
    let img = scene(64, 3);
    let s1 = ok(ssim(&img, &img))?;
    ensure!(rel(s1, 1.0), "self ssim {s1}");
    let c1 = 0.01f64.powi(2);
    let want_const = c1 / (1.0 + c1);
    let sc = ok(ssim(&black, &white))?;
    ensure!(rel(sc, want_const), "constant ssim {sc} vs {want_const}");

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = fixture_dataset(tmp.path(), 4, 48);
    let report = ok(eval::evaluate(&IdentityEnhancer, &manifest, tmp.path().join("report")))?;
    for r in &report.per_pair {
        ensure!(r.psnr_out == r.psnr_in && r.ssim_out == r.ssim_in, "{}: identity changed scores", r.pair);
    }
    Ok(format!(
        "psnr {p0:.4} / {p6:.4} dB, ssim {s1:.6} / {sc:.4e}; identity rows equal on {} pairs",
        report.per_pair.len()
    ))
}

// ---------------------------------------------------------------------------
// 8. persistence

fn persistence() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = ok(UResNet::<f32>::random(&ModelConfig {
        pretrained: false,
        init_seed: 5,
        ..Default::default()
    }))?;
    let dir = tmp.path().join("roundtrip");
    ok(model.save_weights(&dir, Default::default()))?;
    let (back, _) = ok(UResNet::<f32>::load_weights(&dir))?;
    ensure!(snapshot(&back) == snapshot(&model), "roundtrip changed parameters");

    let mut state = TrainState::default();
    let ckpt = tmp.path().join("ckpt");
    let tiny = ok(UResNet::<f32>::random(&tiny_model()))?;
    for l in [1.0, 0.8, 0.9] {
        ok(checkpoint_best(&mut state, &tiny, l, &ckpt))?;
    }
    let (_, meta) = ok(UResNet::<f32>::load_weights(&ckpt))?;
    ensure!(meta.val_loss == Some(0.8), "checkpoint metadata {:?}", meta.val_loss);

    let manifest = fixture_dataset(tmp.path(), 8, 32);
    let cfg = TrainConfig {
        phases: vec![phase(32, 4, 4, true)],
        validation_fraction: 0.25,
        ..Default::default()
    };
    let mut m = ok(UResNet::<f32>::random(&tiny_model()))?;
    let run = tmp.path().join("run");
    let outcome = ok(fit(&mut m, &manifest, &cfg, &common::tiny_loss(), &run, FitOptions::default()))?;
    let best = outcome.state.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    let (_, meta) = ok(UResNet::<f32>::load_weights(&run))?;
    ensure!(meta.val_loss == Some(best), "fit checkpoint {:?} vs min {best}", meta.val_loss);

    let good = ok(WeightArchive::load(&run))?;
    let mut newer = good.clone();
    newer.entries.iter_mut().for_each(|e| e.data.iter_mut().for_each(|v| *v *= 0.5));
    newer.metadata.val_loss = Some(0.0);
    for stage in [CommitStage::PartialBlob, CommitStage::TempFilesWritten, CommitStage::BlobRenamed] {
        ok(newer.save_interrupted(&run, stage))?;
        let seen = ok(WeightArchive::load(&run))?;
        ensure!(seen == good || seen == newer, "{stage:?} left a mixed archive");
        ok(good.save(&run))?;
    }
    Ok(format!(
        "{} tensors bit-exact, checkpoint val_loss {best:.5} = history minimum, 3 interruption points survived",
        snapshot(&model).len()
    ))
}

// ---------------------------------------------------------------------------
// 9. grid figure

fn grid() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let manifest_path = fixture_dataset(root, 2, 64);
    let manifest = ok(DatasetManifest::load(&manifest_path))?;
    let data = manifest_path.parent().unwrap();
    let weights = root.join("weights");
    ok(ok(UResNet::<f32>::random(&tiny_model()))?.save_weights(&weights, Default::default()))?;

    let bin = || {
        let mut c = Command::new(env!("CARGO_BIN_EXE_orbit-restore"));
        c.env("RUST_LOG", "warn");
        c
    };
    let mut cells = Vec::new();
    for (k, pair) in manifest.pairs.iter().enumerate() {
        let input = data.join(&pair.degraded);
        let enhanced = root.join(format!("enhanced_{k}.png"));
        let status = bin()
            .args(["enhance", "--weights"])
            .arg(&weights)
            .arg("--input")
            .arg(&input)
            .arg("--output")
            .arg(&enhanced)
            .status()
            .map_err(|e| e.to_string())?;
        ensure!(status.success(), "enhance exited with {status}");
        cells.extend([input, data.join(&pair.target), enhanced]);
    }
    let out = root.join("figure.png");
    let (ch, cw) = (96, 128);
    let res = bin()
        .arg("grid")
        .arg("--cells")
        .args(&cells)
        .args(["--rows", "2", "--cols", "3", "--cell-height", "96", "--cell-width", "128"])
        .args(["--labels", "input", "target", "enhanced", "--out"])
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(res.status.success(), "grid failed: {}", String::from_utf8_lossy(&res.stderr));

    let grid = ok(ImageTensor::load(&out))?;
    ensure!(grid.dims() == (2 * ch, 3 * cw), "grid is {:?}", grid.dims());
    let legend: GridLegend = serde_json::from_str(&fs::read_to_string(eval::legend_path(&out)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(
        legend.rows == 2 && legend.cols == 3 && legend.column_labels == ["input", "target", "enhanced"],
        "legend {legend:?}"
    );
    let bytes = grid.to_rgb8();
    for (k, cell) in cells.iter().enumerate() {
        let (r, c) = (k / 3, k % 3);
        let expected = ok(letterbox(&ok(ImageTensor::load(cell))?, ch, cw))?.to_rgb8();
        for y in 0..ch {
            let start = ((r * ch + y) * 3 * cw + c * cw) * 3;
            ensure!(
                bytes[start..start + cw * 3] == expected[y * cw * 3..(y + 1) * cw * 3],
                "cell ({r}, {c}) row {y} differs"
            );
        }
    }
    Ok(format!("{}x{} grid of 2x3 cells {ch}x{cw}, every cell matches its source", grid.height(), grid.width()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("overfit", overfit),
        ("gradient check", gradient_check),
        ("ICNR", icnr),
        ("shape/range", shapes),
        ("scheduler", scheduler),
        ("degradation determinism", degradation),
        ("metric oracles", metrics),
        ("persistence", persistence),
        ("grid figure", grid),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}; {secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({detail}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
