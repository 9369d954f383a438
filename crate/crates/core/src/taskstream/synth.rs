//! Desk-scale substitute corpus. Every keyword is a fixed sequence of
//! two syllables, each an optional consonant burst followed by a voiced
//! vowel: a harmonic series on a jittered pitch, shaped by two formant
//! resonances. All keywords share the same kind of broadband voiced
//! spectrum, so tasks differ in formant patterns rather than in coarse
//! input statistics, as spoken keywords do.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{assemble, partition_keywords, ClipSource, StreamConfig, StreamSource, TaskStream};
use crate::error::{Error, Result};
use crate::frontend::{write_wav, SAMPLE_RATE};
use crate::seed::rng_for;

/// (F1, F2) in Hz.
const VOWELS: [(f64, f64); 8] = [
    (280.0, 2250.0),
    (400.0, 1900.0),
    (550.0, 1770.0),
    (690.0, 1660.0),
    (710.0, 1100.0),
    (590.0, 880.0),
    (450.0, 1030.0),
    (310.0, 870.0),
];
const CONSONANTS: usize = 3;
const UNITS: usize = VOWELS.len() * CONSONANTS;
/// Distinct two-syllable keywords available.
pub const MAX_SYNTH_KEYWORDS: usize = UNITS * UNITS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_keywords: usize,
    pub clips_per_keyword: usize,
    /// Standard deviation of the additive white noise (before per-clip jitter).
    pub noise: f64,
    /// Relative per-clip jitter of the formant frequencies.
    pub freq_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_keywords: 30,
            clips_per_keyword: 40,
            noise: 0.01,
            freq_jitter: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_SYNTH_KEYWORDS).contains(&self.n_keywords) {
            return Err(Error::config(
                "synth.keywords",
                format!(
                    "must be in [2, {MAX_SYNTH_KEYWORDS}], got {}",
                    self.n_keywords
                ),
            ));
        }
        if self.clips_per_keyword < 2 {
            return Err(Error::config("synth.clips", "must be >= 2"));
        }
        if !(self.noise >= 0.0 && self.noise < 1.0) {
            return Err(Error::config(
                "synth.noise",
                format!("must be in [0, 1), got {}", self.noise),
            ));
        }
        if !(self.freq_jitter >= 0.0 && self.freq_jitter < 0.5) {
            return Err(Error::config(
                "synth.freq_jitter",
                format!("must be in [0, 0.5), got {}", self.freq_jitter),
            ));
        }
        Ok(())
    }
}

pub(crate) fn keyword_name(k: usize) -> String {
    format!("kw{k:02}")
}

pub(crate) fn clip_path(_cfg: &SynthConfig, keyword: usize, index: usize) -> String {
    let name = keyword_name(keyword);
    format!("{name}/{name}_{index:04}.wav")
}

#[derive(Debug, Clone, Copy)]
struct Syllable {
    vowel: usize,
    consonant: usize,
    /// Vowel length in seconds.
    length: f64,
}

/// Keyword `k` maps to a distinct unit pair through a fixed permutation of
/// all pairs, so neighbouring ids do not share syllables.
fn template(k: usize) -> [Syllable; 2] {
    let idx = (k * 155 + 37) % MAX_SYNTH_KEYWORDS;
    let unit = |u: usize, s: usize| Syllable {
        vowel: u % VOWELS.len(),
        consonant: u / VOWELS.len(),
        length: 0.16 + 0.02 * ((k * 5 + s * 3) % 5) as f64,
    };
    [unit(idx / UNITS, 0), unit(idx % UNITS, 1)]
}

fn resonance(f: f64, centre: f64, bandwidth: f64) -> f64 {
    let x = (f - centre) / bandwidth;
    1.0 / (1.0 + x * x)
}

/// Adds one voiced segment; the harmonic series is evaluated with the
/// Chebyshev recurrence `sin((h+1)p) = 2 cos(p) sin(hp) - sin((h-1)p)`.
fn voiced(out: &mut [f64], f0: f64, formants: (f64, f64), amp: f64) {
    let sr = SAMPLE_RATE as f64;
    let n_harm = ((4000.0 / f0) as usize).max(1);
    let weights: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            (resonance(f, formants.0, 90.0) + 0.7 * resonance(f, formants.1, 140.0) + 0.02)
                / (h as f64).sqrt()
        })
        .collect();
    let norm: f64 = weights.iter().sum();
    let len = out.len();
    let ramp = (0.015 * sr) as usize;
    for (i, o) in out.iter_mut().enumerate() {
        let p = 2.0 * PI * f0 * i as f64 / sr;
        let c2 = 2.0 * p.cos();
        let (mut prev, mut cur) = (0.0, p.sin());
        let mut acc = 0.0;
        for w in &weights {
            acc += w * cur;
            let next = c2 * cur - prev;
            prev = cur;
            cur = next;
        }
        let edge = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
        *o += amp * edge * acc / norm;
    }
}

/// Consonant onset: 1 is a long hiss, 2 a short burst; 0 is none.
fn consonant(rng: &mut ChaCha8Rng, kind: usize, amp: f64) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let (len, gain) = match kind {
        1 => ((0.07 * sr) as usize, 0.5),
        2 => ((0.015 * sr) as usize, 0.9),
        _ => return Vec::new(),
    };
    // First difference of white noise tilts the burst towards high frequencies.
    let mut last = 0.0;
    (0..len)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let y = x - last;
            last = x;
            amp * gain * 0.35 * y
        })
        .collect()
}

/// One second of audio for clip `index` of `keyword`.
pub fn render_clip(cfg: &SynthConfig, seed: u64, keyword: usize, index: usize) -> Vec<f64> {
    let n = SAMPLE_RATE as usize;
    let sr = SAMPLE_RATE as f64;
    let syllables = template(keyword);
    let mut rng = rng_for(seed, &format!("synth/{}/{index}", keyword_name(keyword)));
    let j = cfg.freq_jitter;
    let f0 = rng.gen_range(90.0..220.0);
    let tempo = rng.gen_range(0.9..1.1);
    let amp = rng.gen_range(0.2..0.6);
    let noise = cfg.noise * rng.gen_range(0.5..1.5);

    let mut pieces: Vec<Vec<f64>> = Vec::new();
    for syl in syllables {
        pieces.push(consonant(&mut rng, syl.consonant, amp));
        let (f1, f2) = VOWELS[syl.vowel];
        let formants = (
            f1 * (1.0 + rng.gen_range(-j..=j)),
            f2 * (1.0 + rng.gen_range(-j..=j)),
        );
        let mut v = vec![0.0; (syl.length * tempo * sr) as usize];
        voiced(&mut v, f0 * rng.gen_range(0.95..1.05), formants, amp);
        pieces.push(v);
        pieces.push(vec![0.0; (rng.gen_range(0.02..0.06) * sr) as usize]);
    }
    let total: usize = pieces.iter().map(Vec::len).sum::<usize>().min(n);
    let onset = rng.gen_range(0..=(n - total).max(1) - 1);
    let mut out = vec![0.0; n];
    for (o, x) in out[onset..].iter_mut().zip(pieces.iter().flatten()) {
        *o = *x;
    }
    for x in &mut out {
        *x = (*x + noise * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0);
    }
    out
}

/// The synthetic counterpart of [`super::split_gsc`].
pub fn synth_stream(cfg: &SynthConfig, stream: &StreamConfig, seed: u64) -> Result<TaskStream> {
    cfg.validate()?;
    let names: Vec<String> = (0..cfg.n_keywords).map(keyword_name).collect();
    let groups = partition_keywords(&names, seed, stream)?;
    let tasks = assemble(&groups, seed, stream, |kw| {
        let k = names
            .iter()
            .position(|n| n == kw)
            .expect("names come from the list");
        Ok((0..cfg.clips_per_keyword)
            .map(|i| {
                (
                    clip_path(cfg, k, i),
                    ClipSource::Synth {
                        keyword: k,
                        index: i,
                    },
                )
            })
            .collect())
    })?;
    Ok(TaskStream {
        seed,
        source: StreamSource::Synth(cfg.clone()),
        config: stream.clone(),
        tasks,
    })
}

/// Renders every clip to `<out>/<keyword>/<keyword>_<index>.wav`.
/// Returns the number of files written.
pub fn write_synth_corpus(cfg: &SynthConfig, seed: u64, out: &Path) -> Result<usize> {
    cfg.validate()?;
    let mut written = 0;
    for k in 0..cfg.n_keywords {
        std::fs::create_dir_all(out.join(keyword_name(k)))?;
        for i in 0..cfg.clips_per_keyword {
            write_wav(
                &out.join(clip_path(cfg, k, i)),
                &render_clip(cfg, seed, k, i),
            )?;
            written += 1;
        }
    }
    Ok(written)
}
