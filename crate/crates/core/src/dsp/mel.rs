use super::Spectrogram;
use crate::error::{Error, Result};

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// The `n_mels + 2` band edges, equally spaced on the mel scale.
fn mel_edges(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Peak frequency in Hz of each filter.
pub fn mel_center_frequencies(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let edges = mel_edges(n_mels, f_min, f_max);
    edges[1..=n_mels].to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Row-major `[n_mels × n_fft_bins]`.
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_fft_bins: usize,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_fft_bins..(m + 1) * self.n_fft_bins]
    }

    /// Projects every frame of a linear-frequency spectrogram onto the filters.
    pub fn apply(&self, spec: &Spectrogram) -> Spectrogram {
        assert_eq!(
            spec.n_bins, self.n_fft_bins,
            "filterbank and spectrogram bin counts differ"
        );
        let mut values = Vec::with_capacity(spec.n_frames * self.n_mels);
        for t in 0..spec.n_frames {
            let frame = spec.frame(t);
            for m in 0..self.n_mels {
                values.push(self.row(m).iter().zip(frame).map(|(w, x)| w * x).sum());
            }
        }
        Spectrogram {
            values,
            n_frames: spec.n_frames,
            n_bins: self.n_mels,
            hop_s: spec.hop_s,
            t0_s: spec.t0_s,
            bin_axis: self.centers_hz.clone(),
        }
    }
}

/// Triangular mel filters with Slaney area normalisation (`2 / bandwidth`).
pub fn mel_filterbank(
    n_mels: usize,
    sample_rate: u32,
    n_fft_bins: usize,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::InvalidConfig(format!(
            "mel range must satisfy 0 <= f_min < f_max <= {nyquist}, got [{f_min}, {f_max}]"
        )));
    }
    if n_mels == 0 || n_fft_bins < 2 {
        return Err(Error::InvalidConfig(
            "need n_mels >= 1 and at least two FFT bins".into(),
        ));
    }
    let fft_freqs: Vec<f64> = (0..n_fft_bins)
        .map(|k| k as f64 * nyquist / (n_fft_bins - 1) as f64)
        .collect();
    let edges = mel_edges(n_mels, f_min, f_max);
    let mut weights = vec![0.0; n_mels * n_fft_bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        let row = &mut weights[m * n_fft_bins..(m + 1) * n_fft_bins];
        for (w, &f) in row.iter_mut().zip(&fft_freqs) {
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            *w = rising.min(falling).max(0.0) * norm;
        }
        if row.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use fewer mels or a longer window"
            )));
        }
    }
    Ok(MelFilterbank {
        weights,
        n_mels,
        n_fft_bins,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}
