use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{Spectrogram, Waveform};
use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Magnitude STFT. Frame `t` covers samples `[t*hop, t*hop + win)`; there
/// are `win/2 + 1` bins and `1 + (len - win) / hop` frames.
pub fn stft_magnitude(w: &Waveform, win_samples: usize, hop_samples: usize) -> Result<Spectrogram> {
    if win_samples == 0 || hop_samples == 0 {
        return Err(Error::InvalidConfig("window and hop must be >= 1".into()));
    }
    if win_samples > w.samples.len() {
        return Err(Error::WindowTooLong {
            window: win_samples,
            len: w.samples.len(),
        });
    }
    let n_frames = 1 + (w.samples.len() - win_samples) / hop_samples;
    let n_bins = win_samples / 2 + 1;
    let window = hann_window(win_samples);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win_samples);
    let mut buf = vec![Complex::new(0.0, 0.0); win_samples];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = t * hop_samples;
        for ((b, &x), &h) in buf
            .iter_mut()
            .zip(&w.samples[start..start + win_samples])
            .zip(&window)
        {
            *b = Complex::new(x * h, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend(buf[..n_bins].iter().map(|c| c.norm()));
    }
    let sr = w.sample_rate as f64;
    Ok(Spectrogram {
        values,
        n_frames,
        n_bins,
        hop_s: hop_samples as f64 / sr,
        t0_s: win_samples as f64 / 2.0 / sr,
        bin_axis: (0..n_bins)
            .map(|k| k as f64 * sr / win_samples as f64)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_in_zeros_out() {
        let w = Waveform::new(vec![0.0; 4096], 22050).unwrap();
        let s = stft_magnitude(&w, 1024, 256).unwrap();
        assert_eq!(s.n_frames, 13);
        assert_eq!(s.n_bins, 513);
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_aligned_sinusoid() {
        let (sr, win, k) = (8000u32, 256usize, 19usize);
        let f = k as f64 * sr as f64 / win as f64;
        let w = Waveform::new(
            (0..4000)
                .map(|n| (2.0 * PI * f * n as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap();
        let s = stft_magnitude(&w, win, 64).unwrap();
        for t in 0..s.n_frames {
            let argmax = s
                .frame(t)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, k);
        }
        assert_eq!(s.bin_axis[k], f);
    }

    #[test]
    fn parseval_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let win = 512;
        let w = Waveform::new(
            (0..win * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            16000,
        )
        .unwrap();
        let s = stft_magnitude(&w, win, win / 2).unwrap();
        let h = hann_window(win);
        for t in 0..s.n_frames {
            let seg = &w.samples[t * win / 2..t * win / 2 + win];
            let time_energy: f64 = seg.iter().zip(&h).map(|(x, h)| (x * h).powi(2)).sum();
            let m = s.frame(t);
            let inner: f64 = m[1..win / 2].iter().map(|v| v * v).sum();
            let spec_energy = m[0] * m[0] + 2.0 * inner + m[win / 2] * m[win / 2];
            let rel = (spec_energy - win as f64 * time_energy).abs() / (win as f64 * time_energy);
            assert!(rel < 1e-6, "frame {t}: relative error {rel}");
        }
    }

    #[test]
    fn window_too_long() {
        let w = Waveform::new(vec![0.0; 100], 8000).unwrap();
        assert!(matches!(
            stft_magnitude(&w, 128, 32),
            Err(Error::WindowTooLong { .. })
        ));
    }
}
