use orbit_restore::degrade::{add_gaussian_noise, adjust_exposure, gaussian_blur, motion_blur};
use orbit_restore::eval::{letterbox, ColumnSummary, MetricsReport, PairMetrics, GRID_BACKGROUND};
use orbit_restore::loss::{ExtractorConfig, FeatureLayer, LossConfig, PerceptualLoss};
use orbit_restore::metrics::psnr;
use orbit_restore::nn::{pixel_shuffle, pixel_unshuffle};
use orbit_restore::train::one_cycle_lr;
use orbit_restore::{ImageTensor, Tensor};
use proptest::prelude::*;

fn image(max_side: usize, lo: f32, hi: f32) -> impl Strategy<Value = ImageTensor> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        prop::collection::vec(lo..=hi, h * w * 3).prop_map(move |d| ImageTensor::new(h, w, d).unwrap())
    })
}

fn in_unit_range(img: &ImageTensor) -> bool {
    img.data().iter().all(|v| (0.0..=1.0).contains(v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rgb8_roundtrip_within_one_level(img in image(8, 0.0, 1.0)) {
        let (h, w) = img.dims();
        let back = ImageTensor::from_rgb8(h, w, &img.to_rgb8()).unwrap();
        prop_assert!(img.max_abs_diff(&back).unwrap() <= 1.0 / 255.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn image_ops_stay_in_unit_range(
        img in image(12, 0.0, 1.0),
        sigma in 0.0..4.0f64,
        length in 1.0..12.0f64,
        angle in 0.0..180.0f64,
        gain in 0.1..4.0f64,
        gamma in 0.3..3.0f64,
        noise in 0.0..0.3f64,
        seed in any::<u64>(),
        (nh, nw) in (1..20usize, 1..20usize),
    ) {
        prop_assert!(in_unit_range(&gaussian_blur(&img, sigma).unwrap()));
        prop_assert!(in_unit_range(&motion_blur(&img, length, angle).unwrap()));
        prop_assert!(in_unit_range(&adjust_exposure(&img, gain, gamma).unwrap()));
        prop_assert!(in_unit_range(&add_gaussian_noise(&img, noise, seed).unwrap()));
        prop_assert!(in_unit_range(&img.resize_bilinear(nh, nw).unwrap()));
    }

    #[test]
    fn blurs_fix_constant_images(
        v in 0.0..1.0f32,
        (h, w) in (1..16usize, 1..16usize),
        sigma in 0.0..4.0f64,
        length in 1.0..12.0f64,
        angle in 0.0..180.0f64,
    ) {
        let img = ImageTensor::filled(h, w, v).unwrap();
        prop_assert!(gaussian_blur(&img, sigma).unwrap().max_abs_diff(&img).unwrap() <= 1e-6);
        prop_assert!(motion_blur(&img, length, angle).unwrap().max_abs_diff(&img).unwrap() <= 1e-6);
    }

    #[test]
    fn psnr_falls_as_constant_offset_grows(
        img in image(10, 0.3, 0.5),
        d1 in 0.001..0.4f32,
        d2 in 0.001..0.4f32,
    ) {
        let (small, large) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let near = psnr(&img, &img.map(|v| v + small)).unwrap();
        let far = psnr(&img, &img.map(|v| v + large)).unwrap();
        prop_assert!(near >= far);
    }

    #[test]
    fn shuffle_and_unshuffle_are_inverse(
        (n, c, h, w) in (1..3usize, 1..4usize, 1..6usize, 1..6usize),
        r in 1..4usize,
        seed in any::<u64>(),
    ) {
        let len = n * c * r * r * h * w;
        let data: Vec<f32> = (0..len).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1009) as f32).collect();
        let x = Tensor::from_vec([n, c * r * r, h, w], data).unwrap();
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape(), [n, c, h * r, w * r]);
        let mut a = x.data().to_vec();
        let mut b = y.data().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
    }

    #[test]
    fn one_cycle_stays_between_floor_and_peak(
        total in 1..500usize,
        frac in 0.0..=1.0f64,
        max_lr in 1e-6..1.0f64,
        pct in 0.05..0.95f64,
        div_start in 1.5..100.0f64,
        div_final in 1.5..1e5f64,
    ) {
        let step = (frac * total as f64) as usize;
        let lr = one_cycle_lr(step, total, max_lr, pct, div_start, div_final).unwrap();
        let floor = (max_lr / div_start).min(max_lr / div_final);
        prop_assert!(lr >= floor * (1.0 - 1e-12) && lr <= max_lr * (1.0 + 1e-12));
        prop_assert!(one_cycle_lr(total + 1, total, max_lr, pct, div_start, div_final).is_err());
    }

    #[test]
    fn letterbox_keeps_background_outside_the_picture(
        img in image(24, 0.5, 1.0),
        (ch, cw) in (1..40usize, 1..40usize),
    ) {
        let out = letterbox(&img, ch, cw).unwrap();
        prop_assert_eq!(out.dims(), (ch, cw));
        let (h, w) = img.dims();
        let scale = (ch as f64 / h as f64).min(cw as f64 / w as f64);
        let nh = ((h as f64 * scale).round() as usize).clamp(1, ch);
        let nw = ((w as f64 * scale).round() as usize).clamp(1, cw);
        let (oy, ox) = ((ch - nh) / 2, (cw - nw) / 2);
        for y in 0..ch {
            for x in 0..cw {
                let inside = (oy..oy + nh).contains(&y) && (ox..ox + nw).contains(&x);
                for c in 0..3 {
                    let v = out.get(y, x, c);
                    if inside {
                        // bilinear samples of values in [0.5, 1]
                        prop_assert!(v >= 0.5 - 1e-6);
                    } else {
                        prop_assert_eq!(v, GRID_BACKGROUND);
                    }
                }
            }
        }
    }

    #[test]
    fn report_aggregates_match_recomputation(
        rows in prop::collection::vec(
            (prop_oneof![4 => 0.0..60.0f64, 1 => Just(f64::INFINITY)], 0.0..1.0f64, 0.0..60.0f64, 0.0..1.0f64),
            1..30,
        )
    ) {
        let per_pair: Vec<PairMetrics> = rows
            .iter()
            .enumerate()
            .map(|(i, &(pi, si, po, so))| PairMetrics {
                pair: format!("p{i}"),
                psnr_in: pi,
                ssim_in: si,
                psnr_out: po,
                ssim_out: so,
            })
            .collect();
        let report = MetricsReport::from_rows(per_pair);
        let finite: Vec<f64> = rows.iter().map(|r| r.0).filter(|v| v.is_finite()).collect();
        let check = |s: &ColumnSummary, vals: &[f64]| -> Result<(), TestCaseError> {
            prop_assert_eq!(s.excluded, rows.len() - vals.len());
            if vals.is_empty() {
                prop_assert!(s.mean.is_none() && s.median.is_none());
                return Ok(());
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            // median: the value with as many entries below as above
            let below = |m: f64| vals.iter().filter(|&&v| v < m).count();
            let above = |m: f64| vals.iter().filter(|&&v| v > m).count();
            let median = s.median.unwrap();
            prop_assert!((s.mean.unwrap() - mean).abs() <= 1e-9);
            prop_assert!(below(median) <= vals.len() / 2 && above(median) <= vals.len() / 2);
            Ok(())
        };
        check(&report.aggregates.psnr_in, &finite)?;
        check(&report.aggregates.ssim_in, &rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
        check(&report.aggregates.psnr_out, &rows.iter().map(|r| r.2).collect::<Vec<_>>())?;
        check(&report.aggregates.ssim_out, &rows.iter().map(|r| r.3).collect::<Vec<_>>())?;
    }
}

fn small_loss() -> PerceptualLoss<f64> {
    let cfg = LossConfig {
        feature_layers: vec![FeatureLayer::Relu1_2, FeatureLayer::Relu3_3],
        layer_weights: vec![0.5, 0.5],
        extractor: ExtractorConfig {
            pretrained: false,
            width: 4,
            init_seed: 3,
        },
        ..LossConfig::default()
    };
    PerceptualLoss::new(&cfg, None).unwrap()
}

fn tensor16() -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(0.0..1.0f64, 2 * 3 * 16 * 16)
        .prop_map(|d| Tensor::from_vec([2, 3, 16, 16], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn perceptual_loss_is_a_symmetric_discrepancy(a in tensor16(), b in tensor16()) {
        let mut loss = small_loss();
        let ab = loss.forward(&a, &b).unwrap().total;
        let ba = loss.forward(&b, &a).unwrap().total;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(loss.forward(&a, &a).unwrap().total, 0.0);
    }
}

#[test]
fn noise_lowers_psnr_as_sigma_grows() {
    for seed in 0..20u64 {
        let img = ImageTensor::from_fn(32, 32, |y, x, c| 0.3 + 0.4 * (((y * 7 + x * 3 + c + seed as usize) % 11) as f32 / 10.0))
            .unwrap();
        let scores: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|&s| psnr(&img, &add_gaussian_noise(&img, s, seed).unwrap()).unwrap())
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "seed {seed}: {scores:?}");
    }
}
