//! MFCC front-end against golden matrices produced by an independent
//! numpy/scipy implementation (`tests/fixtures/make_mfcc_golden.py`).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use kwscl_core::frontend::{mfcc, read_wav, AudioClip, FrontendConfig, Mfcc, SAMPLE_RATE};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn read_csv(name: &str) -> Vec<Vec<f64>> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect()
}

fn sine(amplitude: f64) -> Vec<f64> {
    (0..SAMPLE_RATE as usize)
        .map(|n| amplitude * (2.0 * PI * 1000.0 * n as f64 / SAMPLE_RATE as f64).sin())
        .collect()
}

fn assert_matches_golden(samples: &[f64], golden: &str) {
    let expected = read_csv(golden);
    let got = Mfcc::new(FrontendConfig::default())
        .unwrap()
        .extract(samples)
        .unwrap();
    assert_eq!(got.n_frames, expected.len(), "{golden}: frame count");
    let mut worst = 0.0f64;
    for (f, row) in expected.iter().enumerate() {
        assert_eq!(row.len(), got.n_mfcc);
        for (c, &e) in row.iter().enumerate() {
            worst = worst.max((got.get(f, c) - e).abs() / (1.0 + e.abs()));
        }
    }
    assert!(worst < 1e-8, "{golden}: worst scaled deviation {worst:e}");
}

#[test]
fn sine_1khz_matches_reference() {
    assert_matches_golden(&sine(0.5), "mfcc_sine_1khz.csv");
}

#[test]
fn white_noise_wav_matches_reference() {
    let clip = read_wav(&fixture("noise_seed42.wav"), 0).unwrap();
    assert_eq!(clip.samples.len(), 16_000);
    assert_matches_golden(&clip.samples, "mfcc_noise_seed42.csv");
}

#[test]
fn sine_energy_concentrates_near_1khz() {
    let m = Mfcc::new(FrontendConfig::default()).unwrap();
    let (log_mel, n_frames) = m.log_mel(&sine(0.5)).unwrap();
    let n_mel = m.config().n_mel;
    let frame = &log_mel[(n_frames / 2) * n_mel..(n_frames / 2 + 1) * n_mel];
    let peak = (0..n_mel)
        .max_by(|&a, &b| frame[a].total_cmp(&frame[b]))
        .unwrap();
    // Band centres on the HTK mel scale; the peak band must straddle 1 kHz.
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let step = mel(8000.0) / (n_mel + 1) as f64;
    let (lo, hi) = (hz(peak as f64 * step), hz((peak + 2) as f64 * step));
    assert!(
        lo < 1000.0 && 1000.0 < hi,
        "peak band {peak} spans {lo:.0}..{hi:.0} Hz"
    );
}

#[test]
fn scaling_shifts_only_the_zeroth_coefficient() {
    // Broadband noise keeps every band above the log floor at both amplitudes.
    let clip = read_wav(&fixture("noise_seed42.wav"), 0).unwrap();
    let cfg = FrontendConfig::default();
    let base = mfcc(&clip, &cfg).unwrap();
    let golden = read_csv("mfcc_noise_seed42.csv");
    for c in [0.5, 2.0] {
        let scaled = AudioClip::new(clip.samples.iter().map(|x| x * c).collect(), 0, "scaled");
        let out = mfcc(&scaled, &cfg).unwrap();
        // log(c^2) on every band becomes sqrt(n_mel) * log(c^2) on the DC basis row.
        let shift = (cfg.n_mel as f64).sqrt() * (c * c).ln();
        for f in 0..out.n_frames {
            assert!((out.get(f, 0) - golden[f][0] - shift).abs() < 1e-7);
            assert!((out.get(f, 0) - base.get(f, 0) - shift).abs() < 1e-9);
            for k in 1..out.n_mfcc {
                assert!(
                    (out.get(f, k) - golden[f][k]).abs() < 1e-7,
                    "frame {f} coeff {k} at c = {c}"
                );
            }
        }
    }
}

#[test]
fn extraction_is_bitwise_deterministic_across_threads() {
    let samples = sine(0.3);
    let m = std::sync::Arc::new(Mfcc::new(FrontendConfig::default()).unwrap());
    let reference = m.extract(&samples).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (m, s) = (m.clone(), samples.clone());
            std::thread::spawn(move || m.extract(&s).unwrap())
        })
        .collect();
    for h in handles {
        let out = h.join().unwrap();
        assert!(out
            .data
            .iter()
            .zip(&reference.data)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn frame_count_follows_closed_form() {
    let cfg = FrontendConfig::default();
    let m = Mfcc::new(cfg.clone()).unwrap();
    for len in [480, 481, 639, 640, 800, 12_345, 16_000] {
        let out = m.extract(&vec![0.01; len]).unwrap();
        assert_eq!(out.n_frames, 1 + (len - 480) / 160, "clip of {len} samples");
        assert_eq!(out.data.len(), out.n_frames * cfg.n_mfcc);
    }
    assert!(m.extract(&vec![0.0; 479]).is_err());
}
