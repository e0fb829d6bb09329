use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tritrans::data::{
    self, apply_augment, augment, decode_pnm, encode_pnm, load_manifest, load_sample, read_manifest, synth_generate,
    write_dataset, AugmentParams, Sample, MAX_COVERAGE, MIN_COVERAGE,
};
use tritrans::tensor::Tensor;
use tritrans::Error;

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, bytes).unwrap();
    p
}

fn p5_16(w: usize, h: usize, values: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

fn p5(w: usize, h: usize, values: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

fn p6_gray(w: usize, h: usize, v: u8) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(std::iter::repeat_n(v, 3 * w * h));
    out
}

#[test]
fn load_sample_normalizes_and_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = write(dir.path(), "rgb.ppm", &p6_gray(2, 2, 51));
    let depth8 = write(dir.path(), "d8.pgm", &p5(2, 2, &[0, 255, 255, 0]));
    let depth16 = write(dir.path(), "d16.pgm", &p5_16(2, 2, &[32768, 0, 65535, 1]));
    let gt = write(dir.path(), "gt.pgm", &p5(2, 2, &[127, 128, 0, 255]));

    let s = load_sample(&rgb, &depth8, &gt, 2).unwrap();
    assert_eq!(s.depth.data(), [0.0, 1.0, 1.0, 0.0]);
    assert_eq!(s.gt.data(), [0.0, 1.0, 0.0, 1.0]);
    assert!(s.rgb.data().iter().all(|&v| (v - 0.2).abs() < 1e-7));

    let s = load_sample(&rgb, &depth16, &gt, 2).unwrap();
    assert!((s.depth.data()[0] as f64 - 32768.0 / 65535.0).abs() < 1e-7);
    assert!((s.depth.data()[0] - 0.50001).abs() < 1e-5);
}

#[test]
fn codec_errors_are_distinct_and_located() {
    let path = Path::new("x.pgm");
    match decode_pnm(b"P7\n2 2\n255\n", path) {
        Err(Error::MalformedHeader { path: p, offset, .. }) => {
            assert_eq!(p, path);
            assert_eq!(offset, 0);
        }
        other => panic!("{other:?}"),
    }
    match decode_pnm(b"P5\n99999999999999999999 2\n255\n", path) {
        Err(Error::ExtentOverflow { offset, .. }) => assert_eq!(offset, 3),
        other => panic!("{other:?}"),
    }
    match decode_pnm(b"P5\n4 4\n255\n\x01\x02", path) {
        Err(Error::TruncatedPayload { offset, expected, .. }) => {
            assert_eq!(expected, 16);
            assert_eq!(offset, 13);
        }
        other => panic!("{other:?}"),
    }
    let msg = decode_pnm(b"P5\n4 4\n255\n", path).unwrap_err().to_string();
    assert!(msg.contains("x.pgm") && msg.contains("byte"), "{msg}");
}

#[test]
fn header_comments_are_skipped() {
    let img = decode_pnm(b"P5\n# made by hand\n2 1 # width height\n255\n\x00\xff", Path::new("c.pgm")).unwrap();
    assert_eq!((img.width, img.height, img.channels), (2, 1, 1));
    assert_eq!(img.data, [0.0, 1.0]);
}

#[test]
fn dataset_round_trip_within_half_step() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_generate(3, 3, 32).unwrap();
    let manifest = write_dataset(&samples, dir.path()).unwrap();
    let loaded = load_manifest(&manifest, 32).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in samples.iter().zip(&loaded) {
        assert!(a.rgb.cast::<f64>().max_abs_diff(&b.rgb.cast()) <= 1.0 / 510.0 + 1e-7);
        assert!(a.depth.cast::<f64>().max_abs_diff(&b.depth.cast()) <= 1.0 / 510.0 + 1e-7);
        assert_eq!(a.gt, b.gt);
    }
}

#[test]
fn encode_decode_16_bit() {
    let values = [0.0, 0.25, 0.5, 1.0];
    let bytes = encode_pnm(2, 2, 1, &values, true);
    let img = decode_pnm(&bytes, Path::new("m.pgm")).unwrap();
    for (a, b) in img.data.iter().zip(values) {
        assert!((a - b).abs() <= 0.5 / 65535.0);
    }
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "manifest", b"a.ppm\tb.pgm\tc.pgm\n# note\nonly-one-field\n");
    match read_manifest(&m) {
        Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let m = write(dir.path(), "inputs", b"a.ppm\tb.pgm\n");
    let entries = read_manifest(&m).unwrap();
    assert_eq!(entries[0].gt, None);
    assert_eq!(entries[0].rgb, dir.path().join("a.ppm"));
    match load_manifest(&m, 32) {
        Err(Error::Manifest { line, reason, .. }) => {
            assert_eq!(line, 1);
            assert!(reason.contains("ground truth"));
        }
        other => panic!("{other:?}"),
    }
    let m = write(dir.path(), "missing", b"nope.ppm\tnope.pgm\tnope.pgm\n");
    let msg = load_manifest(&m, 32).unwrap_err().to_string();
    assert!(msg.contains("nope.ppm"), "{msg}");
}

#[test]
fn synth_contract() {
    let a = synth_generate(0, 4, 64).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a, synth_generate(0, 4, 64).unwrap());
    assert_ne!(a, synth_generate(1, 4, 64).unwrap());
    for s in &a {
        assert_eq!(s.rgb.shape(), [3, 64, 64]);
        assert!((MIN_COVERAGE..=MAX_COVERAGE).contains(&s.coverage()));
        assert!(s.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(s.rgb.data().iter().chain(s.depth.data()).all(|&v| (0.0..=1.0).contains(&v)));
        // Objects sit in front of the background.
        let (mut fg, mut bg, mut nf) = (0.0, 0.0, 0.0);
        for (d, g) in s.depth.data().iter().zip(s.gt.data()) {
            if *g == 1.0 {
                fg += d;
                nf += 1.0;
            } else {
                bg += d;
            }
        }
        assert!(fg / nf < bg / (4096.0 - nf));
    }
    assert!(synth_generate(0, 1, 48).is_err());
}

#[test]
fn flip_is_an_involution() {
    let s = &synth_generate(7, 1, 32).unwrap()[0];
    let flip = AugmentParams { flip: true, ..AugmentParams::IDENTITY };
    assert_ne!(&apply_augment(s, &flip), s);
    assert_eq!(&apply_augment(&apply_augment(s, &flip), &flip), s);
    let turn = AugmentParams { quarter_turns: 1, ..AugmentParams::IDENTITY };
    let mut t = s.clone();
    for _ in 0..4 {
        t = apply_augment(&t, &turn);
    }
    assert_eq!(&t, s);
}

fn delta(h: usize, w: usize, y: usize, x: usize) -> Sample {
    let plane = |c| Tensor::from_fn(&[c, h, w], |i| ((i % (h * w)) == y * w + x) as u8 as f32);
    Sample { rgb: plane(3), depth: plane(1), gt: plane(1) }
}

fn argmax(t: &Tensor<f32>, plane: usize) -> (usize, usize) {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let d = &t.data()[plane * h * w..(plane + 1) * h * w];
    let i = (0..d.len()).max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a))).unwrap();
    (i / w, i % w)
}

#[test]
fn geometric_transforms_keep_maps_aligned() {
    let (h, w) = (6, 6);
    for flip in [false, true] {
        for turns in 0..4u8 {
            let (y, x) = (1, 4);
            let s = delta(h, w, y, x);
            let out = apply_augment(&s, &AugmentParams { flip, quarter_turns: turns, crop: [0; 4] });
            // Map the coordinate forward: flip, then counter-clockwise turns.
            let (mut py, mut px) = (y, if flip { w - 1 - x } else { x });
            for _ in 0..turns {
                (py, px) = (w - 1 - px, py);
            }
            for (t, planes) in [(&out.rgb, 3), (&out.depth, 1), (&out.gt, 1)] {
                for p in 0..planes {
                    assert_eq!(argmax(t, p), (py, px), "flip {flip} turns {turns}");
                }
            }
        }
    }
}

fn centroid(t: &Tensor<f32>) -> (f64, f64) {
    let w = t.shape()[2];
    let (mut sy, mut sx, mut m) = (0.0, 0.0, 0.0);
    for (i, &v) in t.data()[..t.shape()[1] * w].iter().enumerate() {
        sy += v as f64 * (i / w) as f64;
        sx += v as f64 * (i % w) as f64;
        m += v as f64;
    }
    (sy / m, sx / m)
}

#[test]
fn cropping_keeps_maps_aligned() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let base = {
        let plane = |c| Tensor::from_fn(&[c, 40, 40], |i| ((i % 1600) / 40 >= 12 && (i % 1600) / 40 < 20 && i % 40 >= 22 && i % 40 < 30) as u8 as f32);
        Sample { rgb: plane(3), depth: plane(1), gt: plane(1) }
    };
    for _ in 0..20 {
        let p = AugmentParams::draw(&mut r, 40, 40);
        let out = apply_augment(&base, &p);
        assert_eq!(out.size(), (40, 40));
        let (cg, cd, cr) = (centroid(&out.gt), centroid(&out.depth), centroid(&out.rgb));
        assert!((cg.0 - cd.0).abs() < 1.0 && (cg.1 - cd.1).abs() < 1.0, "{p:?}: {cg:?} vs {cd:?}");
        assert_eq!(cd, cr);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmentation_is_deterministic_and_binary(seed: u64) {
        let s = &synth_generate(seed % 5, 1, 32).unwrap()[0];
        let a = augment(s, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = augment(s, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&a, &b);
        prop_assert!(a.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(a.size(), (32, 32));
    }

    #[test]
    fn crop_never_exceeds_bound(seed: u64, h in 10usize..80, w in 10usize..80) {
        let p = AugmentParams::draw(&mut ChaCha8Rng::seed_from_u64(seed), h, w);
        prop_assert!(p.crop[0] as f64 <= 0.1 * h as f64 && p.crop[1] as f64 <= 0.1 * h as f64);
        prop_assert!(p.crop[2] as f64 <= 0.1 * w as f64 && p.crop[3] as f64 <= 0.1 * w as f64);
        prop_assert!(p.quarter_turns < 4);
    }

    #[test]
    fn derived_seeds_differ(base: u64, a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        prop_assert_ne!(data::derive_seed(base, &[a]), data::derive_seed(base, &[b]));
    }
}
