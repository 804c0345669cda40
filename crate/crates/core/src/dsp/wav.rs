use std::io::Cursor;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

fn wav_err(e: hound::Error) -> Error {
    Error::Wav(e.to_string())
}

/// Decodes a RIFF/WAVE byte stream. Integer PCM is scaled by `2^(bits-1)`
/// and multi-channel input is averaged to mono.
pub fn read_wav(bytes: &[u8]) -> Result<Waveform> {
    let mut reader = WavReader::new(Cursor::new(bytes)).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        (format, bits) => {
            return Err(Error::Wav(format!(
                "unsupported codec: {format:?} with {bits} bits per sample"
            )));
        }
    };
    if !interleaved.len().is_multiple_of(channels) {
        return Err(Error::Wav(
            "truncated container: partial sample frame".into(),
        ));
    }
    let samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Encodes mono 16-bit PCM. Samples are clipped to [-1, 1] and scaled by
/// 32768 with rounding.
pub fn write_wav_pcm16(w: &Waveform) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut cursor, spec).map_err(wav_err)?;
        for &s in &w.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(wav_err)?;
        }
        writer.finalize().map_err(wav_err)?;
    }
    Ok(cursor.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode<S: hound::Sample + Copy>(spec: WavSpec, samples: &[S]) -> Vec<u8> {
        let mut cursor = Cursor::new(Vec::new());
        let mut writer = WavWriter::new(&mut cursor, spec).unwrap();
        for &s in samples {
            writer.write_sample(s).unwrap();
        }
        writer.finalize().unwrap();
        cursor.into_inner()
    }

    fn int_spec(channels: u16, bits: u16, sr: u32) -> WavSpec {
        WavSpec {
            channels,
            sample_rate: sr,
            bits_per_sample: bits,
            sample_format: SampleFormat::Int,
        }
    }

    #[test]
    fn silence_16bit() {
        let bytes = encode(int_spec(1, 16, 8000), &vec![0i16; 8000]);
        let w = read_wav(&bytes).unwrap();
        assert_eq!(w.sample_rate, 8000);
        assert_eq!(w.samples.len(), 8000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_cancels() {
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let frames: Vec<f32> = (0..100).flat_map(|_| [0.5f32, -0.5]).collect();
        let w = read_wav(&encode(spec, &frames)).unwrap();
        assert_eq!(w.samples.len(), 100);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_square() {
        let square: Vec<i16> = (0..64)
            .map(|i| if (i / 8) % 2 == 0 { i16::MAX } else { i16::MIN })
            .collect();
        let w = read_wav(&encode(int_spec(1, 16, 8000), &square)).unwrap();
        for (i, s) in w.samples.iter().enumerate() {
            let expected = if (i / 8) % 2 == 0 {
                32767.0 / 32768.0
            } else {
                -1.0
            };
            assert_eq!(*s, expected);
        }
    }

    #[test]
    fn pcm24_scaling() {
        let w = read_wav(&encode(int_spec(1, 24, 16000), &[4_194_304i32, -8_388_608])).unwrap();
        assert_eq!(w.samples, vec![0.5, -1.0]);
    }

    #[test]
    fn truncated_and_garbage() {
        let bytes = encode(int_spec(1, 16, 8000), &vec![100i16; 1000]);
        assert!(read_wav(&bytes[..bytes.len() - 501]).is_err());
        assert!(read_wav(&bytes[..20]).is_err());
        assert!(read_wav(b"not a wav file at all").is_err());
    }

    #[test]
    fn pcm16_roundtrip() {
        let w = Waveform::new(
            (0..400).map(|i| ((i as f64) * 0.05).sin() * 0.8).collect(),
            16000,
        )
        .unwrap();
        let back = read_wav(&write_wav_pcm16(&w).unwrap()).unwrap();
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }
}
