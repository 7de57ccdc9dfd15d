//! Triangular mel filterbank and log-mel extraction.

use crate::error::{MssError, Result};

use super::stft::{frame_count, stft};
use super::{AudioClip, MelConfig, MelSpectrogram, LOG_FLOOR};

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank, one row per mel band over n_fft/2+1 linear bins.
pub fn mel_filterbank(
    n_fft: usize,
    n_mels: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<Vec<Vec<f64>>> {
    if n_fft == 0 || n_mels == 0 || sample_rate == 0 {
        return Err(MssError::InvalidInput(
            "filterbank dimensions must be positive".into(),
        ));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if !(0.0 <= fmin && fmin < fmax && fmax <= nyquist) {
        return Err(MssError::InvalidInput(format!(
            "need 0 <= fmin < fmax <= {nyquist}, got [{fmin}, {fmax}]"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    // n_mels + 2 breakpoints uniformly spaced on the mel scale.
    let breaks: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;

    let mut bank = vec![vec![0.0; n_bins]; n_mels];
    for (m, row) in bank.iter_mut().enumerate() {
        let (left, center, right) = (breaks[m], breaks[m + 1], breaks[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > left && f < right {
                *w = if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                };
            }
        }
    }
    Ok(bank)
}

/// Center frequencies (Hz) of each band of [`mel_filterbank`].
pub fn mel_band_centers(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (1..=n_mels)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Log-mel extraction: centered framing, Hann window, magnitude spectrum,
/// triangular filterbank, then ln(max(energy, floor)).
pub fn extract_mel(clip: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if clip.is_empty() {
        return Err(MssError::InvalidInput("empty audio clip".into()));
    }
    if clip.sample_rate() != cfg.sample_rate {
        return Err(MssError::InvalidInput(format!(
            "clip rate {} does not match config rate {}; resampling is not supported",
            clip.sample_rate(),
            cfg.sample_rate
        )));
    }

    let bank = mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.fmax)?;
    let spectra = stft(clip.samples(), cfg);
    debug_assert_eq!(spectra.len(), frame_count(clip.len(), cfg.hop()));

    let mut data = Vec::with_capacity(spectra.len() * cfg.n_mels);
    let mut mag = vec![0.0; cfg.n_fft / 2 + 1];
    for frame in &spectra {
        for (m, v) in mag.iter_mut().zip(frame) {
            *m = v.norm();
        }
        for row in &bank {
            let mut e = 0.0;
            for (w, m) in row.iter().zip(&mag) {
                e += w * m;
            }
            data.push(e.max(LOG_FLOOR).ln());
        }
    }
    MelSpectrogram::from_vec(data, cfg.n_mels, cfg.frame_shift_ms)
}
