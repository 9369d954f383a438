use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub n_mfcc: usize,
    pub n_mel: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub pre_emphasis: f64,
    pub log_floor: f64,
    pub f_min: f64,
    /// Upper edge of the filterbank; `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: SAMPLE_RATE,
            n_mfcc: 40,
            n_mel: 40,
            frame_length_ms: 30.0,
            frame_shift_ms: 10.0,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
            f_min: 0.0,
            f_max: None,
        }
    }
}

impl FrontendConfig {
    pub fn frame_len(&self) -> usize {
        (self.sample_rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn hop(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.frame_len().next_power_of_two()
    }

    /// Frame count for a clip of `len` samples, or `None` if it is shorter than a frame.
    pub fn n_frames(&self, len: usize) -> Option<usize> {
        let frame = self.frame_len();
        (len >= frame).then(|| 1 + (len - frame) / self.hop())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mfcc > self.n_mel {
            return Err(Error::TooManyCoefficients {
                n_mfcc: self.n_mfcc,
                n_mel: self.n_mel,
            });
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let f_max = self.f_max.unwrap_or(nyquist);
        let checks = [
            (self.sample_rate > 0, "sample_rate must be positive"),
            (self.n_mfcc > 0, "n_mfcc must be positive"),
            (self.frame_len() > 0, "frame length must be positive"),
            (self.hop() > 0, "frame shift must be positive"),
            (self.log_floor > 0.0, "log floor must be positive"),
            (
                (0.0..1.0).contains(&self.pre_emphasis),
                "pre-emphasis must be in [0, 1)",
            ),
            (
                self.f_min >= 0.0 && self.f_min < f_max && f_max <= nyquist,
                "need 0 <= f_min < f_max <= nyquist",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::FrontendConfig((*msg).into())),
            None => Ok(()),
        }
    }
}

/// MFCC matrix, row-major `[n_frames x n_mfcc]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_mfcc: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
}

impl FeatureMatrix {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.n_mfcc..(frame + 1) * self.n_mfcc]
    }

    pub fn get(&self, frame: usize, coeff: usize) -> f64 {
        self.data[frame * self.n_mfcc + coeff]
    }

    /// Channel-major copy (`[n_mfcc x n_frames]`), the layout temporal convolutions consume.
    pub fn transposed(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for f in 0..self.n_frames {
            for c in 0..self.n_mfcc {
                out[c * self.n_frames + f] = self.data[f * self.n_mfcc + c];
            }
        }
        out
    }

    pub fn byte_size(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed MFCC pipeline for one configuration. Immutable, so one
/// extractor can be shared across threads.
pub struct Mfcc {
    cfg: FrontendConfig,
    window: Vec<f64>,
    /// `[n_mel x (n_fft/2 + 1)]`
    filterbank: Vec<f64>,
    /// `[n_mfcc x n_mel]`, orthonormal DCT-II rows.
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Mfcc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mfcc").field("cfg", &self.cfg).finish()
    }
}

impl Mfcc {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let frame_len = cfg.frame_len();
        let n_fft = cfg.n_fft();
        let n_bins = n_fft / 2 + 1;

        // periodic Hann
        let window = (0..frame_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame_len as f64).cos())
            .collect();

        let f_max = cfg.f_max.unwrap_or(cfg.sample_rate as f64 / 2.0);
        let (mel_lo, mel_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..cfg.n_mel + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mel + 1) as f64))
            .collect();
        let mut filterbank = vec![0.0; cfg.n_mel * n_bins];
        for m in 0..cfg.n_mel {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * cfg.sample_rate as f64 / n_fft as f64;
                let rising = (f - lo) / (center - lo);
                let falling = (hi - f) / (hi - center);
                filterbank[m * n_bins + k] = rising.min(falling).max(0.0);
            }
        }

        let n_mel = cfg.n_mel;
        let mut dct = vec![0.0; cfg.n_mfcc * n_mel];
        for k in 0..cfg.n_mfcc {
            let scale = if k == 0 {
                (1.0 / n_mel as f64).sqrt()
            } else {
                (2.0 / n_mel as f64).sqrt()
            };
            for n in 0..n_mel {
                dct[k * n_mel + n] =
                    scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_mel) as f64).cos();
            }
        }

        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Mfcc {
            cfg,
            window,
            filterbank,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// Log mel energies per frame, `[n_frames x n_mel]`; the stage before the DCT.
    pub fn log_mel(&self, samples: &[f64]) -> Result<(Vec<f64>, usize)> {
        let cfg = &self.cfg;
        let frame_len = cfg.frame_len();
        let n_frames = cfg.n_frames(samples.len()).ok_or(Error::FrameTooLong {
            frame: frame_len,
            clip: samples.len(),
        })?;
        let hop = cfg.hop();
        let n_fft = cfg.n_fft();
        let n_bins = n_fft / 2 + 1;

        let mut emphasized = Vec::with_capacity(samples.len());
        emphasized.push(samples[0]);
        emphasized.extend(samples.windows(2).map(|w| w[1] - cfg.pre_emphasis * w[0]));

        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut out = vec![0.0; n_frames * cfg.n_mel];
        for f in 0..n_frames {
            let frame = &emphasized[f * hop..f * hop + frame_len];
            for (slot, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(s * w, 0.0);
            }
            buf[frame_len..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf[..n_bins]) {
                *p = c.norm_sqr() / n_fft as f64;
            }
            for m in 0..cfg.n_mel {
                let weights = &self.filterbank[m * n_bins..(m + 1) * n_bins];
                let energy: f64 = weights.iter().zip(&power).map(|(w, p)| w * p).sum();
                out[f * cfg.n_mel + m] = energy.max(cfg.log_floor).ln();
            }
        }
        Ok((out, n_frames))
    }

    pub fn extract(&self, samples: &[f64]) -> Result<FeatureMatrix> {
        if samples.is_empty() {
            return Err(Error::EmptyClip);
        }
        let cfg = &self.cfg;
        let (log_mel, n_frames) = self.log_mel(samples)?;
        let mut data = vec![0.0; n_frames * cfg.n_mfcc];
        for f in 0..n_frames {
            let row = &log_mel[f * cfg.n_mel..(f + 1) * cfg.n_mel];
            for k in 0..cfg.n_mfcc {
                let basis = &self.dct[k * cfg.n_mel..(k + 1) * cfg.n_mel];
                data[f * cfg.n_mfcc + k] = basis.iter().zip(row).map(|(a, b)| a * b).sum();
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mfcc"));
        }
        Ok(FeatureMatrix {
            data,
            n_frames,
            n_mfcc: cfg.n_mfcc,
            frame_length_ms: cfg.frame_length_ms,
            frame_shift_ms: cfg.frame_shift_ms,
        })
    }
}

/// One-shot MFCC extraction. Build an [`Mfcc`] once when processing many clips.
pub fn mfcc(clip: &AudioClip, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::FrontendConfig(format!(
            "clip sample rate {} does not match frontend rate {}",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    Mfcc::new(cfg.clone())?.extract(&clip.samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let cfg = FrontendConfig::default();
        assert_eq!(cfg.frame_len(), 480);
        assert_eq!(cfg.hop(), 160);
        assert_eq!(cfg.n_fft(), 512);
        assert_eq!(cfg.n_frames(16_000), Some(98));
        assert_eq!(cfg.n_frames(479), None);
    }

    #[test]
    fn silent_clip_is_constant_log_floor() {
        let cfg = FrontendConfig::default();
        let clip = AudioClip::new(vec![0.0; 16_000], 0, "zero");
        let m = mfcc(&clip, &cfg).unwrap();
        let c0 = (cfg.n_mel as f64).sqrt() * cfg.log_floor.ln();
        for f in 0..m.n_frames {
            assert!((m.get(f, 0) - c0).abs() < 1e-9);
            for k in 1..m.n_mfcc {
                assert!(
                    m.get(f, k).abs() < 1e-9,
                    "frame {f} coeff {k} = {}",
                    m.get(f, k)
                );
            }
        }
    }

    #[test]
    fn rejects_bad_configs_and_short_clips() {
        let cfg = FrontendConfig {
            n_mfcc: 41,
            ..Default::default()
        };
        assert!(matches!(
            Mfcc::new(cfg),
            Err(Error::TooManyCoefficients { .. })
        ));
        let m = Mfcc::new(FrontendConfig::default()).unwrap();
        assert!(matches!(
            m.extract(&[0.1; 100]),
            Err(Error::FrameTooLong {
                frame: 480,
                clip: 100
            })
        ));
        assert!(matches!(m.extract(&[]), Err(Error::EmptyClip)));
    }

    #[test]
    fn sine_energy_sits_near_its_frequency() {
        let cfg = FrontendConfig::default();
        let m = Mfcc::new(cfg.clone()).unwrap();
        let samples: Vec<f64> = (0..16_000)
            .map(|n| 0.5 * (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let (log_mel, n_frames) = m.log_mel(&samples).unwrap();
        let row = &log_mel[(n_frames / 2) * cfg.n_mel..(n_frames / 2 + 1) * cfg.n_mel];
        let peak = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let center = |i: usize| {
            let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(8000.0));
            mel_to_hz(lo + (hi - lo) * (i + 1) as f64 / (cfg.n_mel + 1) as f64)
        };
        assert!(
            (center(peak) - 1000.0).abs() < 150.0,
            "peak band centre {}",
            center(peak)
        );
    }
}
