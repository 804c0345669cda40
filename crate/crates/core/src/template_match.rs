//! Template-matching baseline: slide support-shot spectrogram patches over
//! the query and threshold the normalized cross-correlation.

use log::warn;

use crate::annotations::Event;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// Default correlation threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.45;

/// Zero-variance guard, relative to the window's sum of squares.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    /// Row-major `[n_frames × n_bins]`.
    pub patch: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub source_event: Event,
    pub start_frame: usize,
}

/// Per-offset correlation scores; `scores[i]` is the match with the
/// template starting at time `t0_s + i * hop_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCurve {
    pub scores: Vec<f64>,
    pub hop_s: f64,
    pub t0_s: f64,
}

/// Cuts one patch per support event: frames `floor(onset)..=ceil(offset)`
/// under the spectrogram's frame-time mapping. Silent patches are dropped.
pub fn extract_templates(spec: &Spectrogram, support: &[Event]) -> Result<Vec<Template>> {
    let mut templates = Vec::with_capacity(support.len());
    for e in support {
        let start = spec.frame_floor(e.onset_s);
        if start >= spec.n_frames {
            return Err(Error::InvalidEvent(format!(
                "support event [{}, {}] lies beyond the spectrogram",
                e.onset_s, e.offset_s
            )));
        }
        let end = spec.frame_ceil(e.offset_s).clamp(start, spec.n_frames - 1) + 1;
        let patch = spec.values[start * spec.n_bins..end * spec.n_bins].to_vec();
        if patch.iter().all(|&v| v == 0.0) {
            warn!(
                "dropping silent template for event [{}, {}]",
                e.onset_s, e.offset_s
            );
            continue;
        }
        templates.push(Template {
            patch,
            n_frames: end - start,
            n_bins: spec.n_bins,
            source_event: e.clone(),
            start_frame: start,
        });
    }
    if templates.is_empty() {
        return Err(Error::AllTemplatesSilent);
    }
    Ok(templates)
}

/// Pearson correlation between the template and every equally-shaped
/// window of the query. Zero-variance windows score 0.
pub fn xcorr_curve(spec: &Spectrogram, template: &Template) -> Result<DetectionCurve> {
    if spec.n_bins != template.n_bins {
        return Err(Error::BinMismatch {
            template: template.n_bins,
            query: spec.n_bins,
        });
    }
    let nb = spec.n_bins;
    let nt = template.n_frames;
    let cells = (nt * nb) as f64;
    let mean_t = template.patch.iter().sum::<f64>() / cells;
    let centered: Vec<f64> = template.patch.iter().map(|v| v - mean_t).collect();
    let norm_t = centered.iter().map(|v| v * v).sum::<f64>().sqrt();

    let n_offsets = (spec.n_frames + 1).saturating_sub(nt);
    let frame_sum: Vec<f64> = (0..spec.n_frames)
        .map(|t| spec.frame(t).iter().sum())
        .collect();
    let frame_sq: Vec<f64> = (0..spec.n_frames)
        .map(|t| spec.frame(t).iter().map(|v| v * v).sum())
        .collect();

    let mut scores = Vec::with_capacity(n_offsets);
    for tau in 0..n_offsets {
        let sum: f64 = frame_sum[tau..tau + nt].iter().sum();
        let sq: f64 = frame_sq[tau..tau + nt].iter().sum();
        let var = sq - sum * sum / cells;
        if norm_t == 0.0 || var <= VARIANCE_FLOOR * sq {
            scores.push(0.0);
            continue;
        }
        let window = &spec.values[tau * nb..(tau + nt) * nb];
        let dot: f64 = window.iter().zip(&centered).map(|(q, t)| q * t).sum();
        scores.push((dot / (norm_t * var.sqrt())).clamp(-1.0, 1.0));
    }
    Ok(DetectionCurve {
        scores,
        hop_s: spec.hop_s,
        t0_s: spec.t0_s,
    })
}

/// Per-offset maximum over curves aligned by start offset.
pub fn fuse_curves(curves: &[DetectionCurve]) -> DetectionCurve {
    let len = curves.iter().map(|c| c.scores.len()).max().unwrap_or(0);
    let scores = (0..len)
        .map(|i| {
            curves
                .iter()
                .filter_map(|c| c.scores.get(i).copied())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let (hop_s, t0_s) = curves
        .first()
        .map(|c| (c.hop_s, c.t0_s))
        .unwrap_or((1.0, 0.0));
    DetectionCurve {
        scores,
        hop_s,
        t0_s,
    }
}

pub fn median_length(lengths: &[usize]) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    let mut l = lengths.to_vec();
    l.sort_unstable();
    let n = l.len();
    if n % 2 == 1 {
        l[n / 2] as f64
    } else {
        (l[n / 2 - 1] + l[n / 2]) as f64 / 2.0
    }
}

/// Turns runs of above-threshold offsets into events lasting
/// `(template_frames + run_length) * hop`, merging overlaps.
pub fn curve_to_events(
    curve: &DetectionCurve,
    threshold: f64,
    template_frames: f64,
    class_name: &str,
) -> Vec<Event> {
    // spans in frame units, so touching runs merge without rounding noise
    let mut spans: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    let n = curve.scores.len();
    while i < n {
        if curve.scores[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && curve.scores[i] > threshold {
            i += 1;
        }
        let (s, e) = (start as f64, i as f64 + template_frames);
        match spans.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => spans.push((s, e)),
        }
    }
    spans
        .into_iter()
        .map(|(s, e)| {
            let onset = curve.t0_s + s * curve.hop_s;
            let offset = curve.t0_s + e * curve.hop_s;
            Event::pos(onset.max(0.0), offset, class_name).expect("positive duration")
        })
        .collect()
}

/// Fuses the curves by per-offset maximum and converts runs above
/// `threshold` to events using the median template length.
pub fn detect_from_curves(
    curves: &[DetectionCurve],
    threshold: f64,
    template_lengths: &[usize],
    class_name: &str,
) -> Vec<Event> {
    curve_to_events(
        &fuse_curves(curves),
        threshold,
        median_length(template_lengths),
        class_name,
    )
}
