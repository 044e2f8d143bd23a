//! Error metrics, baselines and the coverage sweep.

use pscan_core::dataset::Dataset;
use pscan_core::eval::*;
use pscan_core::model::{init_params, DiscriminatorConfig, GeneratorConfig};
use pscan_core::pipeline::nn_infill;
use pscan_core::{Image, PathMask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _| rng.gen())
}

#[test]
fn rms_closed_forms() {
    let a = random_image(8, 8, 1);
    assert_eq!(rms_error(&a, &a).unwrap(), 0.0);
    let b = Image::filled(4, 4, 0.3);
    let c = Image::filled(4, 4, 0.4);
    assert!((rms_error(&b, &c).unwrap() - 0.1).abs() < 1e-7);
    assert!(rms_error(&b, &Image::zeros(3, 4)).is_err());
}

#[test]
fn rms_matches_compensated_summation() {
    let a = random_image(97, 61, 2);
    let b = random_image(97, 61, 3);
    // Kahan-summed squares
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let term = (x as f64 - y as f64).powi(2) - comp;
        let t = sum + term;
        comp = (t - sum) - term;
        sum = t;
    }
    let oracle = (sum / a.len() as f64).sqrt();
    assert!((rms_error(&a, &b).unwrap() - oracle).abs() < 1e-12);
}

proptest! {
    #[test]
    fn rms_is_symmetric_and_zero_only_for_equal_images(seed in 0u64..1000, flip in 0usize..16) {
        let a = random_image(4, 4, seed);
        let mut b = a.clone();
        prop_assert_eq!(rms_error(&a, &b).unwrap(), 0.0);
        b.data_mut()[flip] += 0.25;
        let ab = rms_error(&a, &b).unwrap();
        prop_assert!(ab > 0.0);
        prop_assert_eq!(ab, rms_error(&b, &a).unwrap());
    }
}

#[test]
fn histogram_edges() {
    let h = Histogram::rms(&[0.0; 7]);
    assert_eq!(h.counts.len(), 100);
    assert_eq!(h.counts[0], 7);
    let h = Histogram::rms(&[0.224, 0.5, -0.1, 0.0023, 0.0022]);
    assert_eq!(h.counts[99], 2);
    assert_eq!(h.counts[0], 2);
    assert_eq!(h.counts[1], 1);
    assert_eq!(h.total(), 5);
    assert!(Histogram::new(&[], 0, 0.0, 1.0).is_err());
    assert!(Histogram::new(&[], 4, 1.0, 1.0).is_err());
}

#[test]
fn histogram_of_uniform_errors_is_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 200_000;
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.224)).collect();
    let h = Histogram::rms(&values);
    let expected = n as f64 / 100.0;
    let tol = 5.0 * expected.sqrt();
    for (k, &c) in h.counts.iter().enumerate() {
        assert!((c as f64 - expected).abs() < tol, "bin {k}: {c}");
    }
}

#[test]
fn histogram_csv_round_trips() {
    let h = Histogram::rms(&[0.01, 0.02, 0.02, 0.3]);
    let csv = h.to_csv();
    assert_eq!(csv.lines().count(), 101);
    let back = Histogram::parse_csv(&csv).unwrap();
    assert_eq!(back, h);
    assert_eq!(back.to_csv(), csv);
    assert!(h.to_svg().starts_with("<svg"));
}

#[test]
fn per_pixel_mse_examples() {
    let a = random_image(3, 3, 5);
    let m = per_pixel_mse(&[a.clone()], &[a.clone()]).unwrap();
    assert!(m.map.data().iter().all(|&v| v == 0.0));
    assert_eq!((m.mean, m.std), (0.0, 0.0));

    let zero = Image::zeros(1, 2);
    let p1 = Image::new(1, 2, vec![1.0, 2.0]).unwrap();
    let p2 = Image::new(1, 2, vec![3.0, 0.0]).unwrap();
    let m = per_pixel_mse(&[p1, p2], &[zero.clone(), zero]).unwrap();
    // (1 + 9)/2 and (4 + 0)/2
    assert_eq!(m.map.data(), &[5.0, 2.0]);
    assert_eq!(m.map.dims(), (1, 2));
    assert!((m.mean - 3.5).abs() < 1e-12 && (m.std - 1.5).abs() < 1e-12);
    assert!(per_pixel_mse(&[], &[]).is_err());
}

proptest! {
    #[test]
    fn per_pixel_mse_is_the_average_of_per_image_maps(seed in 0u64..500, n in 1usize..5) {
        let preds: Vec<Image> = (0..n).map(|i| random_image(3, 4, seed * 10 + i as u64)).collect();
        let truths: Vec<Image> = (0..n).map(|i| random_image(3, 4, seed * 10 + 5 + i as u64)).collect();
        let set = per_pixel_mse(&preds, &truths).unwrap();
        let mut avg = vec![0.0f64; 12];
        for (p, t) in preds.iter().zip(&truths) {
            let single = per_pixel_mse(std::slice::from_ref(p), std::slice::from_ref(t)).unwrap();
            for (a, &v) in avg.iter_mut().zip(single.map.data()) {
                *a += v as f64;
            }
        }
        for (a, &v) in avg.iter().zip(set.map.data()) {
            prop_assert!((a / n as f64 - v as f64).abs() < 1e-6);
        }
    }
}

#[test]
fn distance_curve_examples() {
    let dist = Image::from_fn(40, 40, |r, c| (r.min(c) % 12) as f32 + 0.5);
    let flat = error_vs_distance(&Image::filled(40, 40, 0.2), &dist, 1.0, 50).unwrap();
    assert!(!flat.is_empty());
    assert!(flat.iter().all(|b| (b.mean - 0.2).abs() < 1e-7));
    let identity = error_vs_distance(&dist, &dist, 1.0, 50).unwrap();
    assert!(identity.iter().all(|b| (b.mean - (b.distance + 0.5)).abs() < 1e-6));
    assert!(error_vs_distance(&dist, &dist, 0.0, 1).is_err());
}

#[test]
fn distance_curve_matches_brute_force_grouping() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let map = Image::from_fn(30, 30, |_, _| rng.gen());
    let dist = Image::from_fn(30, 30, |_, _| rng.gen_range(0.0..9.0));
    let curve = error_vs_distance(&map, &dist, 1.5, 50).unwrap();
    for k in 0..6 {
        let members: Vec<f64> =
            map.data().iter().zip(dist.data()).filter(|(_, &d)| (d as f64 / 1.5).floor() as usize == k).map(|(&m, _)| m as f64).collect();
        match curve.iter().find(|b| b.distance == k as f64 * 1.5) {
            Some(b) => {
                assert!(members.len() >= 50);
                assert_eq!(b.count, members.len());
                assert!((b.mean - members.iter().sum::<f64>() / members.len() as f64).abs() < 1e-9);
            }
            None => assert!(members.len() < 50),
        }
    }
    let back = parse_curve(&curve_to_csv(&curve)).unwrap();
    assert_eq!(back, curve);
}

#[test]
fn spearman_examples() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!((spearman(&x, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    // ties get average ranks: y ranks are 1.5, 1.5, 3, 4, 5
    let r = spearman(&x, &[1.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let expected = {
        let rx = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ry = [1.5, 1.5, 3.0, 4.0, 5.0];
        let (mx, my) = (3.0, 3.0);
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
        cov / (vx * vy).sqrt()
    };
    assert!((r - expected).abs() < 1e-12);
    assert!(spearman(&[1.0], &[1.0]).is_err());
    assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
}

fn mask_from(on: &[bool], h: usize, w: usize) -> PathMask {
    PathMask::from_binary(Image::new(h, w, on.iter().map(|&b| f32::from(u8::from(b))).collect()).unwrap()).unwrap()
}

#[test]
fn baselines_are_identity_on_full_masks() {
    let img = random_image(9, 7, 7);
    let full = PathMask::full(9, 7);
    for b in Baseline::ALL {
        assert_eq!(baseline_complete(&img, &full, b).unwrap(), img, "{b}");
    }
}

#[test]
fn nearest_baseline_is_the_pipeline_infill() {
    let img = random_image(12, 12, 8);
    let on: Vec<bool> = (0..144).map(|i| i % 7 == 0).collect();
    let mask = mask_from(&on, 12, 12);
    assert_eq!(baseline_complete(&img, &mask, Baseline::Nearest).unwrap(), nn_infill(&img, &mask).unwrap());
    assert_eq!("nn".parse::<Baseline>().unwrap(), Baseline::Nearest);
    assert_eq!("laplace".parse::<Baseline>().unwrap(), Baseline::Laplace);
    assert!("bicubic".parse::<Baseline>().is_err());
}

#[test]
fn laplace_between_two_endpoints_is_a_ramp() {
    let n = 11;
    let on: Vec<bool> = (0..n).map(|i| i == 0 || i == n - 1).collect();
    let mask = mask_from(&on, 1, n);
    let scan = Image::from_fn(1, n, |_, c| if c == n - 1 { 1.0 } else { 0.0 });
    let exact = laplace_fill(&scan, &mask, 1e-13, 1_000_000).unwrap();
    let default = baseline_complete(&scan, &mask, Baseline::Laplace).unwrap();
    for c in 0..n {
        let ramp = c as f32 / (n - 1) as f32;
        assert!((exact.get(0, c) - ramp).abs() < 1e-6, "col {c}");
        assert!((default.get(0, c) - ramp).abs() < 5e-3, "col {c}");
    }

    // two fixed columns: every row is the same ramp
    let (h, w) = (6, 9);
    let on: Vec<bool> = (0..h * w).map(|i| i % w == 0 || i % w == w - 1).collect();
    let scan = Image::from_fn(h, w, |_, c| if c == w - 1 { 2.0 } else { 1.0 });
    let out = laplace_fill(&scan, &mask_from(&on, h, w), 1e-13, 1_000_000).unwrap();
    for r in 0..h {
        for c in 0..w {
            assert!((out.get(r, c) - (1.0 + c as f32 / (w - 1) as f32)).abs() < 1e-5);
        }
    }
}

proptest! {
    #[test]
    fn laplace_attains_extrema_on_the_path(seed in 0u64..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (10, 12);
        let mut on: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.15)).collect();
        on[rng.gen_range(0..h * w)] = true;
        let scan = Image::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0));
        let out = laplace_fill(&scan, &mask_from(&on, h, w), 1e-6, 10_000).unwrap();
        let path: Vec<f32> = scan.data().iter().zip(&on).filter(|(_, &o)| o).map(|(&v, _)| v).collect();
        let lo = path.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = path.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for (&v, &o) in out.data().iter().zip(&on) {
            prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
            if o {
                prop_assert!(scan.data().contains(&v));
            }
        }
    }
}

fn test_crops(n: usize, side: usize) -> Vec<Image> {
    Dataset::synthetic([0, 0, n], side, 9).unwrap().test
}

#[test]
fn baseline_sweep_rows_and_summaries() {
    let crops = test_crops(2, 32);
    let report = coverage_sweep(None, &[0.1], &crops, &SweepConfig::default()).unwrap();
    for method in ["nn", "laplace"] {
        let rows: Vec<&ImageScore> = report.scores.iter().filter(|s| s.method == method).collect();
        assert_eq!(rows.len(), 2);
        let summary = report.summaries.iter().find(|s| s.method == method).unwrap();
        let mean = rows.iter().map(|r| r.rms_blurred).sum::<f64>() / 2.0;
        assert!((summary.mean - mean).abs() < 1e-15);
        assert_eq!(summary.histogram.total(), 2);
        assert_eq!(summary.histogram.counts.len(), 100);
        assert!(rows.iter().all(|r| r.rms_raw > 0.0 && r.rms_blurred > 0.0));
    }
    let back = parse_scores(&scores_to_csv(&report.scores)).unwrap();
    assert_eq!(back, report.scores);
    assert_eq!(coverage_sweep(None, &[0.1], &crops, &SweepConfig::default()).unwrap(), report);
}

#[test]
fn sweep_with_model_writes_report_files() {
    let crops = test_crops(3, 32);
    let gen = GeneratorConfig { base_channels: 4, residual_blocks: 1, ..GeneratorConfig::desk(32) };
    let model = init_params(gen, DiscriminatorConfig::default(), 1, None).unwrap();
    let report = coverage_sweep(Some(&model), &[0.1, 0.2], &crops, &SweepConfig::default()).unwrap();
    assert_eq!(report.scores.len(), 2 * 3 * 3);
    assert_eq!(report.summaries.len(), 2 * 3);
    assert_eq!(report.summaries[0].method, "model");

    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let hist = std::fs::read_to_string(dir.path().join("hist.csv")).unwrap();
    let parsed = Histogram::parse_csv(&hist).unwrap();
    assert_eq!(parsed.counts.len(), 100);
    assert_eq!(parsed.total(), 3);
    for name in ["scores.csv", "summary.csv", "hist_model_0.1.csv", "hist_nn_0.2.svg", "distance_laplace_0.1.csv", "mse_model_0.2.pgm", "mse_model_0.2.f32"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let scores = parse_scores(&std::fs::read_to_string(dir.path().join("scores.csv")).unwrap()).unwrap();
    assert_eq!(scores, report.scores);

    let off = SweepConfig { baselines: false, ..SweepConfig::default() };
    assert!(coverage_sweep(None, &[0.1], &crops, &off).is_err());
    assert!(coverage_sweep(None, &[0.1], &[], &SweepConfig::default()).is_err());
}

#[test]
fn median_of_even_and_odd_samples() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    assert!(median(&[]).is_nan());
}
