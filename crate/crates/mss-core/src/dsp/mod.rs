//! Audio I/O, mel-spectrogram extraction, and phase-reconstruction inversion.

mod griffin_lim;
mod mel;
mod melfile;
mod stft;
mod wav;

pub use griffin_lim::{griffin_lim, spectral_convergence};
pub use mel::{extract_mel, mel_filterbank};
pub use melfile::{read_mel, write_mel, MEL_MAGIC};
pub use wav::{read_wav, write_wav};

use crate::error::{MssError, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;
pub const DEFAULT_N_MELS: usize = 80;
pub const DEFAULT_FRAME_SHIFT_MS: f64 = 12.5;
/// Mel energies are clamped here before the natural log.
pub const LOG_FLOOR: f64 = 1e-5;

/// Mono audio with samples in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(MssError::InvalidInput("sample rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(MssError::InvalidInput(
                "audio contains non-finite samples".into(),
            ));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Feature extraction settings shared by extraction and inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub frame_shift_ms: f64,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_fft: 1024,
            win_length: 1024,
            frame_shift_ms: DEFAULT_FRAME_SHIFT_MS,
            n_mels: DEFAULT_N_MELS,
            fmin: 0.0,
            fmax: DEFAULT_SAMPLE_RATE as f64 / 2.0,
        }
    }
}

impl MelConfig {
    /// Frame hop in samples: round(frame_shift_ms * sample_rate / 1000).
    pub fn hop(&self) -> usize {
        (self.frame_shift_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.n_mels == 0 || self.n_fft == 0 {
            return Err(MssError::InvalidInput(
                "mel config fields must be positive".into(),
            ));
        }
        if self.win_length > self.n_fft {
            return Err(MssError::InvalidInput(format!(
                "window length {} exceeds FFT size {}",
                self.win_length, self.n_fft
            )));
        }
        if self.hop() == 0 {
            return Err(MssError::InvalidInput("frame shift rounds to zero".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(MssError::InvalidInput(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got [{}, {}]",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }
}

/// T x M matrix of natural-log mel magnitudes, floor-clamped at [`LOG_FLOOR`].
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f64>,
    n_mels: usize,
    frame_shift_ms: f64,
}

impl MelSpectrogram {
    pub fn from_vec(data: Vec<f64>, n_mels: usize, frame_shift_ms: f64) -> Result<Self> {
        if n_mels == 0 || data.is_empty() || data.len() % n_mels != 0 {
            return Err(MssError::InvalidInput(format!(
                "mel data length {} does not factor into rows of {n_mels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MssError::InvalidInput(
                "mel spectrogram contains non-finite values".into(),
            ));
        }
        Ok(MelSpectrogram {
            data,
            n_mels,
            frame_shift_ms,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.n_mels
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_mels)
    }
}
