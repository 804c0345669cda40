//! Audio ingestion and time-frequency frontends.

mod mel;
mod pcen;
mod stft;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mel::{hz_to_mel, mel_center_frequencies, mel_filterbank, mel_to_hz, MelFilterbank};
pub use pcen::{log_compress, pcen, PcenParams};
pub use stft::{hann_window, stft_magnitude};
pub use wav::{read_wav, write_wav_pcm16};

/// Mono audio with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Wav("empty waveform".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Wav("sample rate must be positive".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling. Quality-limited: no anti-alias
    /// filter is applied when downsampling.
    pub fn resample_linear(&self, target_rate: u32) -> Result<Waveform> {
        if target_rate == 0 {
            return Err(Error::InvalidConfig(
                "target sample rate must be positive".into(),
            ));
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let n_out = ((self.samples.len() as f64) / ratio).floor().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let k = (pos.floor() as usize).min(last);
                let frac = pos - k as f64;
                let a = self.samples[k];
                let b = self.samples[(k + 1).min(last)];
                a + (b - a) * frac
            })
            .collect();
        Waveform::new(samples, target_rate)
    }
}

/// Row-major `[n_frames × n_bins]` matrix of non-negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    /// Seconds between consecutive frames.
    pub hop_s: f64,
    /// Time of the first frame center.
    pub t0_s: f64,
    /// Center frequency in Hz of every bin.
    pub bin_axis: Vec<f64>,
}

/// Snap tolerance, in frames, for time-to-frame conversion.
const FRAME_SNAP: f64 = 1e-6;

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, t: usize, b: usize) -> f64 {
        self.values[t * self.n_bins + b]
    }

    pub fn frame_time(&self, t: usize) -> f64 {
        self.t0_s + t as f64 * self.hop_s
    }

    /// Fractional frame position of a time.
    pub fn frame_position(&self, time_s: f64) -> f64 {
        (time_s - self.t0_s) / self.hop_s
    }

    /// Floor of the frame position, clamped to zero. Positions within a
    /// millionth of a frame of an integer snap to it.
    pub fn frame_floor(&self, time_s: f64) -> usize {
        let p = self.frame_position(time_s);
        let r = p.round();
        let f = if (p - r).abs() < FRAME_SNAP {
            r
        } else {
            p.floor()
        };
        f.max(0.0) as usize
    }

    pub fn frame_ceil(&self, time_s: f64) -> usize {
        let p = self.frame_position(time_s);
        let r = p.round();
        let c = if (p - r).abs() < FRAME_SNAP {
            r
        } else {
            p.ceil()
        };
        c.max(0.0) as usize
    }

    /// Frames `[start, end)` as a new spectrogram with shifted `t0_s`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Spectrogram {
        let end = end.min(self.n_frames);
        let start = start.min(end);
        Spectrogram {
            values: self.values[start * self.n_bins..end * self.n_bins].to_vec(),
            n_frames: end - start,
            n_bins: self.n_bins,
            hop_s: self.hop_s,
            t0_s: self.frame_time(start),
            bin_axis: self.bin_axis.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Spectrogram {
        Spectrogram {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Frontend geometry shared by both detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub target_sr: u32,
    pub win_samples: usize,
    pub hop_samples: usize,
    pub n_mels: usize,
    pub f_min: f64,
    /// `None` means half the processing rate.
    pub f_max: Option<f64>,
    pub pcen: PcenParams,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            target_sr: 22050,
            win_samples: 1024,
            hop_samples: 256,
            n_mels: 128,
            f_min: 50.0,
            f_max: None,
            pcen: PcenParams::default(),
        }
    }
}

impl FrontendConfig {
    pub fn hop_s(&self) -> f64 {
        self.hop_samples as f64 / self.target_sr as f64
    }

    /// Resampled magnitude STFT.
    pub fn magnitude(&self, w: &Waveform) -> Result<Spectrogram> {
        let w = w.resample_linear(self.target_sr)?;
        stft_magnitude(&w, self.win_samples, self.hop_samples)
    }

    /// Resampled mel power spectrogram followed by PCEN.
    pub fn mel_pcen(&self, w: &Waveform) -> Result<Spectrogram> {
        let mag = self.magnitude(w)?;
        let fb = mel_filterbank(
            self.n_mels,
            self.target_sr,
            mag.n_bins,
            self.f_min,
            self.f_max.unwrap_or(self.target_sr as f64 / 2.0),
        )?;
        let mel = fb.apply(&mag.map(|v| v * v));
        pcen(&mel, &self.pcen)
    }
}
