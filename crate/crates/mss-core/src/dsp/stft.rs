//! Centered short-time Fourier transform and its overlap-add inverse.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::MelConfig;

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of frames produced for a signal of `len` samples: ceil(len / hop).
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Complex spectra, one row of n_fft/2+1 bins per frame. Frame t is centered
/// at sample t*hop; samples outside the clip are zero.
pub fn stft(samples: &[f64], cfg: &MelConfig) -> Vec<Vec<Complex<f64>>> {
    let n_fft = cfg.n_fft;
    let hop = cfg.hop();
    let win = hann_window(cfg.win_length);
    let pad = (n_fft - cfg.win_length) / 2;
    let n_frames = frame_count(samples.len(), hop);
    let n_bins = n_fft / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut buf = vec![Complex::default(); n_fft];

    let mut out = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        buf.fill(Complex::default());
        let center = (t * hop) as isize;
        let start = center - (cfg.win_length / 2) as isize;
        for (j, &w) in win.iter().enumerate() {
            let s = start + j as isize;
            if s >= 0 && (s as usize) < samples.len() {
                buf[pad + j].re = samples[s as usize] * w;
            }
        }
        fft.process(&mut buf);
        out.push(buf[..n_bins].to_vec());
    }
    out
}

/// Overlap-add inverse of [`stft`]; output has exactly n_frames*hop samples.
pub fn istft(spectra: &[Vec<Complex<f64>>], cfg: &MelConfig) -> Vec<f64> {
    let n_fft = cfg.n_fft;
    let hop = cfg.hop();
    let win = hann_window(cfg.win_length);
    let pad = (n_fft - cfg.win_length) / 2;
    let n_frames = spectra.len();
    let out_len = n_frames * hop;
    let half_win = cfg.win_length / 2;

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n_fft);
    let mut buf = vec![Complex::default(); n_fft];

    // Accumulate into a buffer long enough for every window, then cut out the
    // centered region.
    let acc_len = (n_frames.saturating_sub(1)) * hop + cfg.win_length;
    let mut acc = vec![0.0; acc_len];
    let mut norm = vec![0.0; acc_len];
    let scale = 1.0 / n_fft as f64;

    for (t, frame) in spectra.iter().enumerate() {
        buf.fill(Complex::default());
        for (k, &v) in frame.iter().enumerate() {
            buf[k] = v;
        }
        // Hermitian symmetry for the real inverse transform.
        for k in 1..n_fft / 2 {
            buf[n_fft - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let base = t * hop;
        for (j, &w) in win.iter().enumerate() {
            let x = buf[pad + j].re * scale;
            acc[base + j] += x * w;
            norm[base + j] += w * w;
        }
    }

    let mut out = vec![0.0; out_len];
    for (i, o) in out.iter_mut().enumerate() {
        // Frame t covers [t*hop - half_win, ...); index into acc is offset.
        let j = i + half_win;
        if j < acc.len() && norm[j] > 1e-9 {
            *o = acc[j] / norm[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stft_istft_round_trip_recovers_interior() {
        let cfg = MelConfig::default();
        let sr = cfg.sample_rate as f64;
        let samples: Vec<f64> = (0..12_000)
            .map(|n| (2.0 * std::f64::consts::PI * 440.0 * n as f64 / sr).sin() * 0.5)
            .collect();
        let spectra = stft(&samples, &cfg);
        assert_eq!(spectra.len(), frame_count(samples.len(), cfg.hop()));
        let rec = istft(&spectra, &cfg);
        assert_eq!(rec.len(), spectra.len() * cfg.hop());
        // Edges lack full overlap; compare the interior.
        let lo = cfg.n_fft;
        let hi = samples.len() - cfg.n_fft;
        for i in lo..hi {
            assert!(
                (rec[i] - samples[i]).abs() < 1e-8,
                "sample {i}: {} vs {}",
                rec[i],
                samples[i]
            );
        }
    }

    #[test]
    fn frame_count_is_ceil() {
        assert_eq!(frame_count(24_000, 300), 80);
        assert_eq!(frame_count(24_001, 300), 81);
        assert_eq!(frame_count(1, 300), 1);
        assert_eq!(frame_count(300, 300), 1);
        assert_eq!(frame_count(301, 300), 2);
    }
}
