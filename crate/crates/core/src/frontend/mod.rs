//! Audio ingestion and MFCC feature extraction.

mod mfcc;
mod wav;

pub use mfcc::{mfcc, FeatureMatrix, FrontendConfig, Mfcc};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Sample rate every clip is expected to carry.
pub const SAMPLE_RATE: u32 = 16_000;

/// One mono utterance with samples scaled to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: usize,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, label: usize, source_id: impl Into<String>) -> Self {
        AudioClip {
            samples,
            sample_rate: SAMPLE_RATE,
            label,
            source_id: source_id.into(),
        }
    }
}

/// Zero-pads the tail or truncates it so the clip has exactly `target_len` samples.
pub fn pad_or_trim(clip: &AudioClip, target_len: usize) -> Result<AudioClip> {
    if target_len == 0 {
        return Err(Error::InvalidArgument("target_len must be positive".into()));
    }
    if clip.samples.is_empty() {
        return Err(Error::EmptyClip);
    }
    let mut samples = clip.samples.clone();
    samples.resize(target_len, 0.0);
    Ok(AudioClip {
        samples,
        ..clip.clone()
    })
}
