//! Metric reports over a dataset manifest and side-by-side comparison grids.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::degrade::DatasetManifest;
use crate::error::{Error, Result};
use crate::image::{load_image, ImageTensor, CHANNELS};
use crate::metrics::{psnr, ssim};
use crate::model::UResNet;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_COLUMNS: [&str; 5] = ["pair", "psnr_in", "ssim_in", "psnr_out", "ssim_out"];
/// Letterbox fill outside the resampled image.
pub const GRID_BACKGROUND: f32 = 0.0;

/// Maps a degraded image to its enhanced version.
pub trait Enhancer: Sync {
    fn enhance(&self, input: &ImageTensor) -> Result<ImageTensor>;
}

impl Enhancer for UResNet<f32> {
    fn enhance(&self, input: &ImageTensor) -> Result<ImageTensor> {
        UResNet::enhance(self, input)
    }
}

impl<F> Enhancer for F
where
    F: Fn(&ImageTensor) -> Result<ImageTensor> + Sync,
{
    fn enhance(&self, input: &ImageTensor) -> Result<ImageTensor> {
        self(input)
    }
}

/// Returns its input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEnhancer;

impl Enhancer for IdentityEnhancer {
    fn enhance(&self, input: &ImageTensor) -> Result<ImageTensor> {
        Ok(input.clone())
    }
}

/// Infinite PSNR is written as the string `"inf"`; JSON has no infinity.
mod inf_sentinel {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    /// Degraded image path as listed in the manifest.
    pub pair: String,
    #[serde(with = "inf_sentinel")]
    pub psnr_in: f64,
    pub ssim_in: f64,
    #[serde(with = "inf_sentinel")]
    pub psnr_out: f64,
    pub ssim_out: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    /// `None` when every value was excluded.
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Rows left out because the value was infinite.
    pub excluded: usize,
}

impl ColumnSummary {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut finite = Vec::new();
        let mut excluded = 0;
        for v in values {
            if v.is_finite() {
                finite.push(v);
            } else {
                excluded += 1;
            }
        }
        if finite.is_empty() {
            return Self {
                mean: None,
                median: None,
                excluded,
            };
        }
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        finite.sort_by(f64::total_cmp);
        let n = finite.len();
        let median = if n % 2 == 1 {
            finite[n / 2]
        } else {
            (finite[n / 2 - 1] + finite[n / 2]) / 2.0
        };
        Self {
            mean: Some(mean),
            median: Some(median),
            excluded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub psnr_in: ColumnSummary,
    pub ssim_in: ColumnSummary,
    pub psnr_out: ColumnSummary,
    pub ssim_out: ColumnSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_pair: Vec<PairMetrics>,
    pub aggregates: Aggregates,
}

impl MetricsReport {
    pub fn from_rows(per_pair: Vec<PairMetrics>) -> Self {
        let col = |f: fn(&PairMetrics) -> f64| ColumnSummary::from_values(per_pair.iter().map(f));
        let aggregates = Aggregates {
            psnr_in: col(|r| r.psnr_in),
            ssim_in: col(|r| r.ssim_in),
            psnr_out: col(|r| r.psnr_out),
            ssim_out: col(|r| r.ssim_out),
        };
        Self { per_pair, aggregates }
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join(REPORT_JSON);
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;

        let csv_path = dir.join(REPORT_CSV);
        let to_io = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(&csv_path).map_err(to_io)?;
        w.write_record(REPORT_COLUMNS).map_err(to_io)?;
        for r in &self.per_pair {
            w.write_record([
                r.pair.clone(),
                r.psnr_in.to_string(),
                r.ssim_in.to_string(),
                r.psnr_out.to_string(),
                r.ssim_out.to_string(),
            ])
            .map_err(to_io)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Rows of a `report.csv`; `inf` parses back to infinity.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<PairMetrics>> {
        let path = path.as_ref();
        let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut r = csv::Reader::from_path(path).map_err(to_io)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(to_io)?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Decode { path: path.to_path_buf(), msg: format!("bad number {:?}", &rec[i]) })
            };
            rows.push(PairMetrics {
                pair: rec[0].to_string(),
                psnr_in: num(1)?,
                ssim_in: num(2)?,
                psnr_out: num(3)?,
                ssim_out: num(4)?,
            });
        }
        Ok(rows)
    }
}

/// Scores `enhancer` on every pair of the manifest at `manifest_path` and
/// writes the report under `out_dir`. Rows follow manifest order.
pub fn evaluate(
    enhancer: &dyn Enhancer,
    manifest_path: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<MetricsReport> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::load(manifest_path)?;
    if manifest.pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "manifest {} lists no pairs",
            manifest_path.display()
        )));
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let rows = manifest
        .pairs
        .par_iter()
        .map(|p| {
            let degraded = load_image(root.join(&p.degraded))?;
            let target = load_image(root.join(&p.target))?;
            let out = enhancer.enhance(&degraded)?;
            Ok(PairMetrics {
                pair: p.degraded.clone(),
                psnr_in: psnr(&degraded, &target)?,
                ssim_in: ssim(&degraded, &target)?,
                psnr_out: psnr(&out, &target)?,
                ssim_out: ssim(&out, &target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_rows(rows);
    report.save(out_dir)?;
    Ok(report)
}

/// Aspect-preserving resize of `img` into a `cell_h x cell_w` canvas,
/// centred on [`GRID_BACKGROUND`].
pub fn letterbox(img: &ImageTensor, cell_h: usize, cell_w: usize) -> Result<ImageTensor> {
    if cell_h == 0 || cell_w == 0 {
        return Err(Error::Param(format!("cell size {cell_h}x{cell_w} must be positive")));
    }
    let (h, w) = img.dims();
    let scale = (cell_h as f64 / h as f64).min(cell_w as f64 / w as f64);
    let nh = ((h as f64 * scale).round() as usize).clamp(1, cell_h);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, cell_w);
    let inner = img.resize_bilinear(nh, nw)?;
    let (oy, ox) = ((cell_h - nh) / 2, (cell_w - nw) / 2);
    let mut data = vec![GRID_BACKGROUND; cell_h * cell_w * CHANNELS];
    for y in 0..nh {
        let src = &inner.data()[y * nw * CHANNELS..(y + 1) * nw * CHANNELS];
        let start = ((oy + y) * cell_w + ox) * CHANNELS;
        data[start..start + src.len()].copy_from_slice(src);
    }
    ImageTensor::new(cell_h, cell_w, data)
}

/// Tiles `rows` into one image, each cell letterboxed to `cell`
/// (height, width). `labels` name the columns and may be empty.
pub fn make_grid(rows: &[Vec<ImageTensor>], labels: &[String], cell: (usize, usize)) -> Result<ImageTensor> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if cols == 0 {
        return Err(Error::Shape("grid needs at least one row and one column".into()));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::Shape(format!(
            "row {i} has {} cells, expected {cols}",
            r.len()
        )));
    }
    if !labels.is_empty() && labels.len() != cols {
        return Err(Error::Shape(format!(
            "{} labels for {cols} columns",
            labels.len()
        )));
    }
    let (ch, cw) = cell;
    let (gh, gw) = (rows.len() * ch, cols * cw);
    let mut data = vec![GRID_BACKGROUND; gh * gw * CHANNELS];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let boxed = letterbox(img, ch, cw)?;
            for y in 0..ch {
                let src = &boxed.data()[y * cw * CHANNELS..(y + 1) * cw * CHANNELS];
                let start = ((r * ch + y) * gw + c * cw) * CHANNELS;
                data[start..start + src.len()].copy_from_slice(src);
            }
        }
    }
    ImageTensor::new(gh, gw, data)
}

/// Sidecar written next to a grid PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLegend {
    pub rows: usize,
    pub cols: usize,
    pub cell_height: usize,
    pub cell_width: usize,
    pub column_labels: Vec<String>,
    /// Source file of each cell, row-major.
    pub cells: Vec<String>,
}

/// `grid.png` -> `grid.legend.json`.
pub fn legend_path(grid_path: &Path) -> PathBuf {
    grid_path.with_extension("legend.json")
}

impl GridLegend {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("legend serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
