//! Griffin-Lim phase reconstruction from log-mel spectrograms.
//!
//! The mel matrix is mapped back to a linear magnitude spectrogram through the
//! minimum-norm right inverse of the filterbank (solving the 80x80 normal
//! system directly), then the classic alternating projection recovers a phase.

use rustfft::num_complex::Complex;

use crate::error::{MssError, Result};

use super::mel::mel_filterbank;
use super::stft::{istft, stft};
use super::{AudioClip, MelConfig, MelSpectrogram};

/// Cholesky solve of the SPD system `a x = b` for several right-hand sides.
/// `a` is n x n row-major and consumed as the factor workspace.
fn cholesky_solve(mut a: Vec<f64>, n: usize, b: &mut [f64], n_rhs: usize) -> Result<()> {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(MssError::NumericalError(
                        "filterbank normal matrix is not positive definite".into(),
                    ));
                }
                a[i * n + j] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    // Forward then back substitution, column per right-hand side.
    for r in 0..n_rhs {
        for i in 0..n {
            let mut sum = b[i * n_rhs + r];
            for k in 0..i {
                sum -= a[i * n + k] * b[k * n_rhs + r];
            }
            b[i * n_rhs + r] = sum / a[i * n + i];
        }
        for i in (0..n).rev() {
            let mut sum = b[i * n_rhs + r];
            for k in i + 1..n {
                sum -= a[k * n + i] * b[k * n_rhs + r];
            }
            b[i * n_rhs + r] = sum / a[i * n + i];
        }
    }
    Ok(())
}

/// Linear magnitude frames recovered from log-mel values via the filterbank's
/// minimum-norm right inverse, clamped to be nonnegative.
fn mel_to_linear(mel: &MelSpectrogram, cfg: &MelConfig) -> Result<Vec<Vec<f64>>> {
    let bank = mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.fmax)?;
    let n_mels = cfg.n_mels;
    let n_bins = cfg.n_fft / 2 + 1;

    // gram = B B^T + ridge, shape n_mels x n_mels.
    let mut gram = vec![0.0; n_mels * n_mels];
    for i in 0..n_mels {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..n_bins {
                s += bank[i][k] * bank[j][k];
            }
            gram[i * n_mels + j] = s;
            gram[j * n_mels + i] = s;
        }
    }
    for i in 0..n_mels {
        gram[i * n_mels + i] += 1e-10;
    }

    // Solve gram @ alpha = E for all frames at once; magnitudes = B^T alpha.
    let n_frames = mel.n_frames();
    let mut rhs = vec![0.0; n_mels * n_frames];
    for (t, frame) in mel.frames().enumerate() {
        for (m, &v) in frame.iter().enumerate() {
            rhs[m * n_frames + t] = v.exp();
        }
    }
    cholesky_solve(gram, n_mels, &mut rhs, n_frames)?;

    let mut out = vec![vec![0.0; n_bins]; n_frames];
    for (t, row) in out.iter_mut().enumerate() {
        for (k, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (m, band) in bank.iter().enumerate() {
                s += band[k] * rhs[m * n_frames + t];
            }
            *o = s.max(0.0);
        }
    }
    Ok(out)
}

/// Frobenius distance between a signal's magnitude spectrogram and a target
/// magnitude, relative to the target norm.
pub fn spectral_convergence(samples: &[f64], target_mag: &[Vec<f64>], cfg: &MelConfig) -> f64 {
    let spectra = stft(samples, cfg);
    let mut num = 0.0;
    let mut den = 0.0;
    for (frame, target) in spectra.iter().zip(target_mag) {
        for (v, &t) in frame.iter().zip(target) {
            let d = v.norm() - t;
            num += d * d;
            den += t * t;
        }
    }
    (num / den.max(1e-300)).sqrt()
}

/// Classic alternating-projection phase reconstruction. Returns a clip of
/// n_frames*hop samples. Zero-phase initialization keeps it deterministic.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &MelConfig, iters: usize) -> Result<AudioClip> {
    cfg.validate()?;
    if iters == 0 {
        return Err(MssError::InvalidInput(
            "griffin_lim needs at least one iteration".into(),
        ));
    }
    if mel.n_mels() != cfg.n_mels {
        return Err(MssError::InvalidInput(format!(
            "mel has {} bands but config expects {}",
            mel.n_mels(),
            cfg.n_mels
        )));
    }
    let target = mel_to_linear(mel, cfg)?;

    // Zero phase start.
    let mut spectra: Vec<Vec<Complex<f64>>> = target
        .iter()
        .map(|row| row.iter().map(|&m| Complex::new(m, 0.0)).collect())
        .collect();

    let mut signal = istft(&spectra, cfg);
    for _ in 0..iters {
        let est = stft(&signal, cfg);
        for (t, frame) in spectra.iter_mut().enumerate() {
            for (k, slot) in frame.iter_mut().enumerate() {
                let e = est[t][k];
                let mag = e.norm();
                *slot = if mag > 1e-300 {
                    e * (target[t][k] / mag)
                } else {
                    Complex::new(target[t][k], 0.0)
                };
            }
        }
        signal = istft(&spectra, cfg);
    }

    let clipped: Vec<f64> = signal.iter().map(|&s| s.clamp(-1.0, 1.0)).collect();
    AudioClip::new(clipped, cfg.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{extract_mel, LOG_FLOOR};

    fn sine_clip(freq: f64, secs: f64, amp: f64) -> AudioClip {
        let sr = 24_000u32;
        let n = (secs * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn floor_mel_gives_near_silence() {
        let cfg = MelConfig::default();
        let mel =
            MelSpectrogram::from_vec(vec![LOG_FLOOR.ln(); 40 * 80], 80, cfg.frame_shift_ms)
                .unwrap();
        let clip = griffin_lim(&mel, &cfg, 5).unwrap();
        let peak = clip.samples().iter().fold(0.0f64, |m, &s| m.max(s.abs()));
        assert!(peak < 0.01, "peak {peak}");
    }

    #[test]
    fn sine_round_trip_recovers_dominant_frequency() {
        let cfg = MelConfig::default();
        let freq = 440.0;
        let clip = sine_clip(freq, 1.0, 0.5);
        let mel = extract_mel(&clip, &cfg).unwrap();
        let out = griffin_lim(&mel, &cfg, 60).unwrap();

        // FFT-peak oracle on the reconstructed audio.
        let n = 16_384;
        let mut planner = rustfft::FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex<f64>> = out
            .samples()
            .iter()
            .skip(2_400)
            .take(n)
            .map(|&s| Complex::new(s, 0.0))
            .collect();
        assert_eq!(buf.len(), n);
        fft.process(&mut buf);
        let peak_bin = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        let peak_hz = peak_bin as f64 * 24_000.0 / n as f64;
        let dft_bin_hz = 24_000.0 / cfg.n_fft as f64;
        assert!(
            (peak_hz - freq).abs() <= dft_bin_hz,
            "peak at {peak_hz} Hz, expected within {dft_bin_hz} of {freq}"
        );
    }

    #[test]
    fn more_iterations_do_not_increase_reconstruction_error() {
        let cfg = MelConfig::default();
        let clip = sine_clip(660.0, 0.5, 0.4);
        let mel = extract_mel(&clip, &cfg).unwrap();
        let target = mel_to_linear(&mel, &cfg).unwrap();

        let out1 = griffin_lim(&mel, &cfg, 1).unwrap();
        let out60 = griffin_lim(&mel, &cfg, 60).unwrap();
        let e1 = spectral_convergence(out1.samples(), &target, &cfg);
        let e60 = spectral_convergence(out60.samples(), &target, &cfg);
        assert!(e60 <= e1, "error(60)={e60} > error(1)={e1}");
    }

    #[test]
    fn zero_iterations_is_rejected() {
        let cfg = MelConfig::default();
        let mel = MelSpectrogram::from_vec(vec![0.0; 80], 80, 12.5).unwrap();
        assert!(matches!(
            griffin_lim(&mel, &cfg, 0),
            Err(MssError::InvalidInput(_))
        ));
    }
}
