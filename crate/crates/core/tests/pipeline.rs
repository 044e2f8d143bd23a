use pscan_core::dataset::{ingest, write_synthetic, Dataset, Split};
use pscan_core::filter::gaussian_kernel;
use pscan_core::pipeline::*;
use pscan_core::scanpath::{archimedes_spiral, blur_mask, NoiseModel};
use pscan_core::synth::{lattice_sites, synth_micrograph, SyntheticSource};
use pscan_core::{image, Image, PathMask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn normalize_maps_endpoints() {
    let out = normalize(&Image::new(1, 2, vec![0.0, 10.0]).unwrap());
    assert_eq!(out.data(), &[-1.0, 1.0]);
}

#[test]
fn normalize_zeroes_uniform_crops() {
    assert!(normalize(&Image::filled(4, 4, 3.25)).data().iter().all(|&v| v == 0.0));
    // spans below 1e-6 count as uniform
    let nearly = Image::new(1, 2, vec![1.0, 1.0 + 5e-7]).unwrap();
    assert!(normalize(&nearly).data().iter().all(|&v| v == 0.0));
}

#[test]
fn normalize_treats_non_finite_as_zero() {
    let img = Image::new(1, 4, vec![f32::NAN, 2.0, 4.0, f32::INFINITY]).unwrap();
    // zeros replace NaN/Inf before min/max, so the range is [0, 4]
    assert_eq!(normalize(&img).data(), &[-1.0, 0.0, 1.0, -1.0]);
}

#[test]
fn augment_identity_inverse_and_distinct_images() {
    let img = Image::from_fn(3, 3, |r, c| (r * 3 + c) as f32);
    assert_eq!(augment(&img, 0).unwrap(), img);
    let all: Vec<Image> = (0..8).map(|k| augment(&img, k).unwrap()).collect();
    for a in 0..8 {
        for b in a + 1..8 {
            assert_ne!(all[a], all[b], "codes {a} and {b} coincide");
        }
        assert_eq!(augment(&all[a as usize], augment_inverse(a as u8)).unwrap(), img);
    }
    assert!(augment(&img, 8).is_err());
}

#[test]
fn augment_codes_form_a_closed_group() {
    for a in 0..8 {
        for b in 0..8 {
            assert!(augment_compose(a, b) < 8);
        }
        assert_eq!(augment_compose(a, augment_inverse(a)), 0);
    }
}

#[test]
fn blur_constant_and_impulse() {
    let c = Image::filled(9, 9, 0.7);
    assert!(gaussian_blur(&c).data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    let mut imp = Image::zeros(9, 9);
    imp.set(4, 4, 1.0);
    let b = gaussian_blur(&imp);
    let k = gaussian_kernel();
    for r in 0..9 {
        for col in 0..9 {
            let (dr, dc) = (r as i64 - 4, col as i64 - 4);
            let want = if dr.abs() <= 2 && dc.abs() <= 2 { k[(dr + 2) as usize][(dc + 2) as usize] } else { 0.0 };
            assert!((b.get(r, col) as f64 - want).abs() < 1e-7);
        }
    }
}

#[test]
fn select_partial_cases() {
    let img = random_image(8, 8, 1);
    assert_eq!(select_partial(&img, &PathMask::full(8, 8), None).unwrap(), img);
    let mut w = Image::zeros(8, 8);
    w.set(2, 3, 1.0);
    let m = PathMask::from_binary(w).unwrap();
    let s = select_partial(&img, &m, None).unwrap();
    for i in 0..64 {
        let want = if i == 2 * 8 + 3 { img.data()[i] } else { 0.0 };
        assert_eq!(s.data()[i], want);
    }
    assert!(select_partial(&img, &m, Some(&NoiseModel::new(1))).is_err());
}

#[test]
fn select_partial_noise_follows_formula() {
    // Φ = 0.5, I_N = 0.8: output = 0.8·0.5·(0.5 + 0.5·U) for the U drawn by the model
    let mask = PathMask::from_weights(Image::filled(1, 1, 0.5)).unwrap();
    let img = Image::filled(1, 1, 0.8);
    let model = NoiseModel::new(42);
    let out = select_partial(&img, &mask, Some(&model)).unwrap();
    let u: f64 = ChaCha8Rng::seed_from_u64(42).gen_range(0.0..2.0);
    let want = (0.8f32 * 0.5) as f64 * (0.5 + 0.5 * u);
    assert!((out.get(0, 0) as f64 - want).abs() < 1e-6);
}

fn brute_nn(scan: &Image, on: &[bool]) -> Image {
    let (h, w) = scan.dims();
    Image::from_fn(h, w, |r, c| {
        let mut best = (i64::MAX, 0usize);
        for i in 0..h * w {
            if on[i] {
                let d = ((i / w) as i64 - r as i64).pow(2) + ((i % w) as i64 - c as i64).pow(2);
                if d < best.0 {
                    best = (d, i);
                }
            }
        }
        scan.data()[best.1]
    })
}

#[test]
fn nn_infill_cases() {
    let img = random_image(16, 16, 3);
    assert_eq!(nn_infill(&img, &PathMask::full(16, 16)).unwrap(), img);
    let mut w = Image::zeros(16, 16);
    w.set(5, 9, 1.0);
    let single = nn_infill(&Image::filled(16, 16, 0.3), &PathMask::from_binary(w).unwrap()).unwrap();
    assert!(single.data().iter().all(|&v| v == 0.3));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let on: Vec<bool> = (0..256).map(|_| rng.gen_bool(0.08)).collect();
        if !on.iter().any(|&b| b) {
            continue;
        }
        let mask = PathMask::from_binary(Image::new(16, 16, on.iter().map(|&b| b as u8 as f32).collect()).unwrap()).unwrap();
        assert_eq!(nn_infill(&img, &mask).unwrap(), brute_nn(&img, &on));
    }
}

#[test]
fn make_example_full_mask_without_infill() {
    let crop = normalize(&random_image(16, 16, 5));
    let cfg = ExampleConfig { infill: false, noise: true };
    let ex = make_example(&crop, &PathMask::full(16, 16), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(ex.input_scan, crop.map(|v| (v + 1.0) / 2.0));
    assert_eq!(ex.target_half, downsample_half(&ex.target_full));
}

#[test]
fn make_example_composes_single_ops() {
    let src = SyntheticSource::random(64, 11);
    let crop = normalize(&synth_micrograph(&src, 64).unwrap());
    let mask = archimedes_spiral(64, 0.05, 2).unwrap();
    let ex = make_example(&crop, &mask, &ExampleConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let target = gaussian_blur(&crop).map(|v| (v + 1.0) / 2.0);
    assert_eq!(ex.target_full, target);
    let scan = select_partial(&crop, &mask, None).unwrap().map(|v| (v + 1.0) / 2.0);
    assert_eq!(ex.input_scan, nn_infill(&scan, &mask).unwrap());
    assert_eq!(ex.path_channel, *mask.weights());
    assert_eq!(ex.target_half.dims(), (32, 32));
    assert!(ex.target_full.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    // blurred mask: noise applies and infill does not
    let b = blur_mask(&mask).unwrap();
    let ex2 = make_example(&crop, &b, &ExampleConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let ex3 = make_example(&crop, &b, &ExampleConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(ex2, ex3);
    let noiseless = make_example(&crop, &b, &ExampleConfig { infill: true, noise: false }, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_ne!(ex2.input_scan, noiseless.input_scan);
}

#[test]
fn synthetic_images_behave() {
    // all sites vacant: background only
    let empty = SyntheticSource { vacancy: 1.0, background: 0.0, ..SyntheticSource::plain(8.0, 1) };
    assert!(synth_micrograph(&empty, 32).unwrap().data().iter().all(|&v| v == 0.0));
    // one site in frame, no noise: maximum at its center
    let one = SyntheticSource { peak_width: 2.0, ..SyntheticSource::plain(100.0, 2) };
    let sites = lattice_sites(&one, 40);
    if sites.len() == 1 {
        let img = synth_micrograph(&one, 40).unwrap();
        let (i, _) = img.data().iter().enumerate().fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!((i / 40, i % 40), (sites[0].0.round() as usize, sites[0].1.round() as usize));
    }
    assert!(synth_micrograph(&SyntheticSource::plain(3.0, 0), 32).is_err());
    let s = SyntheticSource::random(64, 5);
    assert_eq!(synth_micrograph(&s, 64).unwrap(), synth_micrograph(&s, 64).unwrap());
}

#[test]
fn site_count_matches_counting_oracle() {
    for seed in 0..5 {
        let src = SyntheticSource { orientation: 0.0, ..SyntheticSource::plain(8.0, seed) };
        let sites = lattice_sites(&src, 64);
        // axis-aligned square lattice with origin (ox, oy) in [0, 8): 8 per axis
        assert_eq!(sites.len(), 64);
    }
}

#[test]
fn ingest_and_load_layout() {
    let dir = tempfile::tempdir().unwrap();
    let counts = write_synthetic(dir.path(), 5, [0.6, 0.2, 0.2], 32, 7).unwrap();
    assert_eq!(counts, [3, 1, 1]);
    let idx = ingest(dir.path()).unwrap();
    assert_eq!(idx.count(Split::Train), 3);
    // an unreadable file is skipped at load time
    std::fs::write(dir.path().join("train/broken.f32"), b"garbage").unwrap();
    let idx = ingest(dir.path()).unwrap();
    let ds = Dataset::load(&idx, 32).unwrap();
    assert_eq!(ds.train.len(), 3);
    // duplicate name across splits
    std::fs::copy(dir.path().join("train/train_00000.f32"), dir.path().join("test/train_00000.f32")).unwrap();
    assert!(ingest(dir.path()).is_err());
}

#[test]
fn ingest_rejects_empty_split_and_reads_16_bit_tiff() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["train", "validation", "test"] {
        std::fs::create_dir_all(dir.path().join(s)).unwrap();
    }
    assert!(ingest(dir.path()).is_err());
    let values: Vec<u16> = (0..32 * 32).map(|i| (i * 37 % 65536) as u16).collect();
    for s in ["train", "validation", "test"] {
        let f = std::fs::File::create(dir.path().join(s).join(format!("{s}.tif"))).unwrap();
        let mut enc = tiff::encoder::TiffEncoder::new(f).unwrap();
        enc.write_image::<tiff::encoder::colortype::Gray16>(32, 32, &values).unwrap();
    }
    let idx = ingest(dir.path()).unwrap();
    let raw = image::read_any(&idx.entries[0].path).unwrap();
    assert_eq!(raw.data().iter().map(|&v| v as u16).collect::<Vec<_>>(), values);
    let ds = Dataset::load(&idx, 32).unwrap();
    assert_eq!(ds.test.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn normalize_is_idempotent(seed in any::<u64>()) {
        let once = normalize(&random_image(6, 7, seed));
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn blur_preserves_mean(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let img = random_image(h, w, seed);
        prop_assert!((gaussian_blur(&img).mean() - img.mean()).abs() < 1e-6);
    }

    #[test]
    fn infill_keeps_on_path_values(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(12, 12, seed);
        let mut on: Vec<bool> = (0..144).map(|_| rng.gen_bool(0.1)).collect();
        on[rng.gen_range(0..144)] = true;
        let mask = PathMask::from_binary(Image::new(12, 12, on.iter().map(|&b| b as u8 as f32).collect()).unwrap()).unwrap();
        let out = nn_infill(&img, &mask).unwrap();
        for i in 0..144 {
            if on[i] {
                prop_assert_eq!(out.data()[i], img.data()[i]);
            }
        }
    }
}
