//! Prototype-distance baseline with class-adaptive segment length.
//!
//! Segments of the frontend spectrogram are embedded by a fixed, untrained
//! [`Embedder`]. The positive prototype averages one segment per support
//! shot, the negative prototype averages seeded random segments of the
//! support region that avoid every annotated POS/UNK shot. Query segments
//! are classified by a two-way softmax over negative squared distances.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{Event, FewShotEpisode};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

pub const MIN_SEG_FRAMES: usize = 2;
pub const MAX_SEG_FRAMES: usize = 128;
pub const DEFAULT_NEG_SAMPLES: usize = 32;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Embedder {
    /// Concatenation of the segment's frames.
    #[serde(rename = "flatten-pcen")]
    FlattenPcen,
    /// Per-bin time average over the segment.
    #[default]
    #[serde(rename = "mean-pcen")]
    MeanPcen,
}

impl Embedder {
    pub fn name(self) -> &'static str {
        match self {
            Embedder::FlattenPcen => "flatten-pcen",
            Embedder::MeanPcen => "mean-pcen",
        }
    }

    pub fn dim(self, n_bins: usize, seg_len_frames: usize) -> usize {
        match self {
            Embedder::FlattenPcen => n_bins * seg_len_frames,
            Embedder::MeanPcen => n_bins,
        }
    }

    /// Embeds frames `[start, start + len)`.
    pub fn embed(self, spec: &Spectrogram, start: usize, len: usize) -> Vec<f64> {
        let cells = &spec.values[start * spec.n_bins..(start + len) * spec.n_bins];
        match self {
            Embedder::FlattenPcen => cells.to_vec(),
            Embedder::MeanPcen => {
                let mut acc = vec![0.0; spec.n_bins];
                for frame in cells.chunks_exact(spec.n_bins) {
                    for (a, v) in acc.iter_mut().zip(frame) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= len as f64);
                acc
            }
        }
    }
}

impl fmt::Display for Embedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Embedder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flatten-pcen" => Ok(Embedder::FlattenPcen),
            "mean-pcen" => Ok(Embedder::MeanPcen),
            other => Err(Error::InvalidConfig(format!(
                "unknown embedder {other:?} (expected flatten-pcen or mean-pcen)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Pos,
    Neg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub centroid: Vec<f64>,
    pub n_sources: usize,
    pub polarity: Polarity,
    /// Start frame of every averaged segment, in averaging order.
    pub source_starts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentLength {
    pub seg_len_frames: usize,
    pub seg_hop_frames: usize,
}

/// `round(mean shot duration / hop)` clamped to
/// `[MIN_SEG_FRAMES, MAX_SEG_FRAMES]`, with a hop of half the length.
pub fn adaptive_segment_length(support: &[Event], hop_s: f64) -> SegmentLength {
    let mean = if support.is_empty() {
        0.0
    } else {
        support.iter().map(Event::duration).sum::<f64>() / support.len() as f64
    };
    let frames = (mean / hop_s).round();
    let seg_len_frames = if frames.is_finite() {
        (frames as usize).clamp(MIN_SEG_FRAMES, MAX_SEG_FRAMES)
    } else {
        MIN_SEG_FRAMES
    };
    SegmentLength {
        seg_len_frames,
        seg_hop_frames: (seg_len_frames / 2).max(1),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGrid {
    pub seg_len_frames: usize,
    pub seg_hop_frames: usize,
    pub starts: Vec<usize>,
}

impl SegmentGrid {
    /// Segments from `from_frame` to the end of a spectrogram of `n_frames`
    /// frames. A final segment flush with the end covers any remainder.
    pub fn over(from_frame: usize, n_frames: usize, len: SegmentLength) -> SegmentGrid {
        let SegmentLength {
            seg_len_frames,
            seg_hop_frames,
        } = len;
        let mut starts = Vec::new();
        if n_frames >= seg_len_frames {
            let last = n_frames - seg_len_frames;
            let mut s = from_frame.min(last);
            while s <= last {
                starts.push(s);
                s += seg_hop_frames;
            }
            if starts.last().is_some_and(|&l| l < last) {
                starts.push(last);
            }
        }
        SegmentGrid {
            seg_len_frames,
            seg_hop_frames,
            starts,
        }
    }
}

/// Inclusive frame span `[floor(onset), ceil(offset)]` of an event.
fn frame_span(spec: &Spectrogram, e: &Event) -> (usize, usize) {
    (spec.frame_floor(e.onset_s), spec.frame_ceil(e.offset_s))
}

fn overlaps(start: usize, len: usize, span: (usize, usize)) -> bool {
    start <= span.1 && span.0 < start + len
}

fn mean_embedding(
    spec: &Spectrogram,
    embedder: Embedder,
    starts: &[usize],
    len: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0; embedder.dim(spec.n_bins, len)];
    for &s in starts {
        for (a, v) in acc.iter_mut().zip(embedder.embed(spec, s, len)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= starts.len() as f64);
    acc
}

/// Builds the positive and negative prototypes of an episode.
///
/// Negative segments are drawn with replacement from the support region
/// `[0, query_start)`, skipping any segment touching a POS or UNK shot.
/// Segments overlapping NEG annotations form the pool when any exist.
pub fn build_prototypes(
    spec: &Spectrogram,
    episode: &FewShotEpisode,
    embedder: Embedder,
    seg_len_frames: usize,
    neg_samples: usize,
    rng_seed: u64,
) -> Result<(Prototype, Prototype)> {
    if neg_samples == 0 {
        return Err(Error::InvalidConfig("neg_samples must be >= 1".into()));
    }
    if episode.support.is_empty() {
        return Err(Error::InvalidConfig("empty support set".into()));
    }
    if seg_len_frames == 0 || seg_len_frames > spec.n_frames {
        return Err(Error::InvalidConfig(format!(
            "segment of {seg_len_frames} frames does not fit a {}-frame spectrogram",
            spec.n_frames
        )));
    }
    let last_start = spec.n_frames - seg_len_frames;

    let pos_starts: Vec<usize> = episode
        .support
        .iter()
        .map(|e| {
            let mid = spec
                .frame_position(0.5 * (e.onset_s + e.offset_s))
                .round()
                .max(0.0) as usize;
            mid.saturating_sub(seg_len_frames / 2).min(last_start)
        })
        .collect();

    let blocked: Vec<(usize, usize)> = episode
        .support
        .iter()
        .chain(&episode.support_unk)
        .map(|e| frame_span(spec, e))
        .collect();
    let neg_spans: Vec<(usize, usize)> = episode
        .support_neg
        .iter()
        .map(|e| frame_span(spec, e))
        .collect();
    let query_frame = spec.frame_floor(episode.query_start_s).min(spec.n_frames);
    let eligible: Vec<usize> = (0..=query_frame.saturating_sub(seg_len_frames).min(last_start))
        .filter(|&s| s + seg_len_frames <= query_frame)
        .filter(|&s| !blocked.iter().any(|&b| overlaps(s, seg_len_frames, b)))
        .collect();
    let preferred: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|&s| neg_spans.iter().any(|&n| overlaps(s, seg_len_frames, n)))
        .collect();
    let pool = if preferred.is_empty() {
        &eligible
    } else {
        &preferred
    };
    if pool.is_empty() {
        return Err(Error::NoNegativeFrames);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let neg_starts: Vec<usize> = (0..neg_samples)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect();

    let pos = Prototype {
        centroid: mean_embedding(spec, embedder, &pos_starts, seg_len_frames),
        n_sources: pos_starts.len(),
        polarity: Polarity::Pos,
        source_starts: pos_starts,
    };
    let neg = Prototype {
        centroid: mean_embedding(spec, embedder, &neg_starts, seg_len_frames),
        n_sources: neg_starts.len(),
        polarity: Polarity::Neg,
        source_starts: neg_starts,
    };
    Ok((pos, neg))
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-d_pos) / (exp(-d_pos) + exp(-d_neg))`, evaluated as a logistic of
/// the distance difference.
pub fn pos_probability(d_pos: f64, d_neg: f64) -> f64 {
    let x = d_neg - d_pos;
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Positive-class probability of every segment of the grid.
pub fn segment_probabilities(
    spec: &Spectrogram,
    grid: &SegmentGrid,
    embedder: Embedder,
    pos: &Prototype,
    neg: &Prototype,
) -> Result<Vec<f64>> {
    let dim = embedder.dim(spec.n_bins, grid.seg_len_frames);
    if pos.centroid.len() != dim || neg.centroid.len() != dim {
        return Err(Error::InvalidConfig(format!(
            "prototype dimensions {}/{} do not match embedder dimension {dim}",
            pos.centroid.len(),
            neg.centroid.len()
        )));
    }
    Ok(grid
        .starts
        .iter()
        .map(|&s| {
            let z = embedder.embed(spec, s, grid.seg_len_frames);
            pos_probability(
                squared_distance(&z, &pos.centroid),
                squared_distance(&z, &neg.centroid),
            )
        })
        .collect())
}

/// Maps frame indices to seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameClock {
    pub t0_s: f64,
    pub hop_s: f64,
}

impl FrameClock {
    pub fn of(spec: &Spectrogram) -> Self {
        FrameClock {
            t0_s: spec.t0_s,
            hop_s: spec.hop_s,
        }
    }

    pub fn time(&self, frame: usize) -> f64 {
        self.t0_s + frame as f64 * self.hop_s
    }
}

/// Segments with `p >= threshold` become frame spans; touching or
/// overlapping spans merge; events are clipped to start at `query_start_s`.
pub fn probabilities_to_events(
    probs: &[f64],
    grid: &SegmentGrid,
    threshold: f64,
    clock: FrameClock,
    query_start_s: f64,
    class_name: &str,
) -> Vec<Event> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (&p, &s) in probs.iter().zip(&grid.starts) {
        if p < threshold {
            continue;
        }
        let e = s + grid.seg_len_frames;
        match spans.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => spans.push((s, e)),
        }
    }
    spans
        .into_iter()
        .filter_map(|(s, e)| {
            let onset = clock.time(s).max(query_start_s).max(0.0);
            let offset = clock.time(e);
            Event::pos(onset, offset, class_name).ok()
        })
        .collect()
}
