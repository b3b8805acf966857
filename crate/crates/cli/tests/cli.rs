use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use orbit_restore::eval::MetricsReport;
use orbit_restore::ImageTensor;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_orbit-restore"));
    c.env("RUST_LOG", "warn").env_remove("ORBIT_RESTORE_WEIGHTS_CACHE");
    c
}

trait Expect {
    fn code(&mut self, expected: i32) -> Output;
}

impl Expect for Command {
    fn code(&mut self, expected: i32) -> Output {
        let out = self.output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(expected),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }
}

fn pattern(h: usize, w: usize, k: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, |y, x, c| {
        let v = ((x * (k + 1) + y * (c + 2) + k * 13) % 29) as f32 / 28.0;
        if (x / 8 + y / 8 + k) % 2 == 0 { v } else { 0.6 * v }
    })
    .unwrap()
}

fn clean_dir(root: &Path, count: usize, size: usize) -> PathBuf {
    let dir = root.join("clean");
    fs::create_dir_all(&dir).unwrap();
    for k in 0..count {
        pattern(size, size, k).save(dir.join(format!("img{k:02}.png"))).unwrap();
    }
    dir
}

const SMALL_CONFIG: &str = r#"{
  "version": 1,
  "degrade": {"variants_per_image": 1, "seed": 42},
  "model": {"pretrained": false, "width": 8, "decoder_widths": [16, 8, 8, 4]},
  "loss": {"extractor": {"pretrained": false, "width": 8}},
  "train": {"phases": [{"image_size": 32, "epochs": 2, "batch_size": 4, "max_lr": 1e-3, "encoder_frozen": true}]}
}"#;

fn write_config(root: &Path) -> PathBuf {
    let p = root.join("config.json");
    fs::write(&p, SMALL_CONFIG).unwrap();
    p
}

fn degrade(root: &Path, config: &Path) -> PathBuf {
    let clean = clean_dir(root, 8, 48);
    let data = root.join("data");
    bin()
        .args(["degrade", "--config"])
        .arg(config)
        .arg("--clean-dir")
        .arg(&clean)
        .arg("--out-dir")
        .arg(&data)
        .code(0);
    data.join("manifest.json")
}

fn train(config: &Path, manifest: &Path, out: &Path, resume: Option<&Path>) {
    let mut c = bin();
    c.args(["train", "--config"])
        .arg(config)
        .arg("--manifest")
        .arg(manifest)
        .arg("--out-dir")
        .arg(out);
    if let Some(r) = resume {
        c.arg("--resume").arg(r);
    }
    c.code(0);
}

fn history_len(dir: &Path) -> usize {
    let text = fs::read_to_string(dir.join("history.json")).unwrap();
    serde_json::from_str::<serde_json::Value>(&text).unwrap().as_array().unwrap().len()
}

#[test]
fn degrade_train_enhance_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = write_config(root);
    let manifest = degrade(root, &config);
    assert!(manifest.exists());
    assert!(root.join("data/resolved_config.json").exists());

    let run = root.join("run");
    train(&config, &manifest, &run, None);
    for f in ["weights.bin", "weights.json", "history.json", "history.csv", "resolved_config.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(history_len(&run), 2);

    let resumed = root.join("run2");
    train(&config, &manifest, &resumed, Some(&run));
    assert_eq!(history_len(&resumed), 4);

    let odd = root.join("odd.png");
    pattern(250, 250, 3).save(&odd).unwrap();
    let enhanced = root.join("odd_out.png");
    bin()
        .args(["enhance", "--weights"])
        .arg(&run)
        .arg("--input")
        .arg(&odd)
        .arg("--output")
        .arg(&enhanced)
        .code(0);
    assert_eq!(ImageTensor::load(&enhanced).unwrap().dims(), (250, 250));

    let in_dir = clean_dir(&root.join("batch"), 3, 40);
    let out_dir = root.join("batch_out");
    bin()
        .args(["enhance", "--weights"])
        .arg(&run)
        .arg("--input")
        .arg(&in_dir)
        .arg("--output")
        .arg(&out_dir)
        .code(0);
    assert_eq!(fs::read_dir(&out_dir).unwrap().count(), 3);

    let report_dir = root.join("report");
    bin()
        .args(["evaluate", "--weights"])
        .arg(&run)
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out-dir")
        .arg(&report_dir)
        .code(0);
    let report = MetricsReport::load_json(report_dir.join("report.json")).unwrap();
    assert_eq!(report.per_pair.len(), 8);
}

#[test]
fn identity_evaluation_matches_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = write_config(root);
    let manifest = degrade(root, &config);
    let out = root.join("id");
    bin()
        .args(["evaluate", "--identity", "--manifest"])
        .arg(&manifest)
        .arg("--out-dir")
        .arg(&out)
        .code(0);
    let report = MetricsReport::load_json(out.join("report.json")).unwrap();
    for r in &report.per_pair {
        assert_eq!(r.psnr_in, r.psnr_out);
        assert_eq!(r.ssim_in, r.ssim_out);
    }
    let csv = MetricsReport::load_csv(out.join("report.csv")).unwrap();
    assert_eq!(csv, report.per_pair);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let bad = root.join("bad.json");
    fs::write(&bad, "{\"version\": 1,").unwrap();
    let empty = root.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = root.join("out");

    let res = bin()
        .args(["degrade", "--config"])
        .arg(&bad)
        .arg("--clean-dir")
        .arg(&empty)
        .arg("--out-dir")
        .arg(&out)
        .code(2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("EOF"));

    let res = bin()
        .args(["degrade", "--clean-dir"])
        .arg(&empty)
        .arg("--out-dir")
        .arg(&out)
        .code(1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("empty dataset"));

    bin()
        .args(["train", "--manifest"])
        .arg(root.join("missing.json"))
        .arg("--out-dir")
        .arg(&out)
        .code(1);

    let corrupt = root.join("weights");
    fs::create_dir_all(&corrupt).unwrap();
    fs::write(corrupt.join("weights.json"), "{}").unwrap();
    fs::write(corrupt.join("weights.bin"), [0u8; 16]).unwrap();
    let img = root.join("a.png");
    pattern(32, 32, 0).save(&img).unwrap();
    let res = bin()
        .args(["enhance", "--weights"])
        .arg(&corrupt)
        .arg("--input")
        .arg(&img)
        .arg("--output")
        .arg(root.join("b.png"))
        .code(1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("corrupt weight archive"));

    bin().args(["evaluate", "--manifest", "m.json", "--out-dir", "o"]).code(2);
    bin().arg("frobnicate").code(2);
}

#[test]
fn grid_tiles_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cells: Vec<PathBuf> = (0..4)
        .map(|k| {
            let p = root.join(format!("c{k}.png"));
            pattern(30 + 10 * k, 40, k).save(&p).unwrap();
            p
        })
        .collect();
    let out = root.join("grid.png");
    bin()
        .arg("grid")
        .arg("--cells")
        .args(&cells)
        .args(["--rows", "2", "--cols", "2", "--cell-height", "64", "--cell-width", "80", "--out"])
        .arg(&out)
        .code(0);
    assert_eq!(ImageTensor::load(&out).unwrap().dims(), (128, 160));
    assert!(root.join("grid.legend.json").exists());

    bin()
        .arg("grid")
        .arg("--cells")
        .args(&cells[..3])
        .args(["--rows", "2", "--cols", "2", "--out"])
        .arg(&out)
        .code(2);
}
