//! End-to-end detection: frontend, detector and post-processing over every
//! episode of an annotated recording, plus benchmark scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotations::{sort_events, AnnotationTable, Event, FewShotConfig, FewShotEpisode};
use crate::dsp::{FrontendConfig, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::postprocess::{median_filter, PostprocessConfig};
use crate::proto_detector::{
    adaptive_segment_length, build_prototypes, probabilities_to_events, segment_probabilities,
    Embedder, FrameClock, SegmentGrid, DEFAULT_NEG_SAMPLES,
};
use crate::scoring::{evaluate, table_episodes, Averaging, MatchConfig, MatchReport};
use crate::synth::BenchmarkFile;
use crate::template_match::{detect_from_curves, extract_templates, xcorr_curve, DetectionCurve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateParams {
    pub threshold: f64,
}

impl Default for TemplateParams {
    fn default() -> Self {
        TemplateParams {
            threshold: crate::template_match::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtoParams {
    pub embedder: Embedder,
    pub threshold: f64,
    pub neg_samples: usize,
    pub rng_seed: u64,
    /// Exchanges the two prototypes. Only useful as a sanity check: every
    /// probability becomes its complement.
    pub swap_prototypes: bool,
}

impl Default for ProtoParams {
    fn default() -> Self {
        ProtoParams {
            embedder: Embedder::default(),
            threshold: crate::proto_detector::DEFAULT_THRESHOLD,
            neg_samples: DEFAULT_NEG_SAMPLES,
            rng_seed: 0,
            swap_prototypes: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Detector {
    Template(TemplateParams),
    Proto(ProtoParams),
}

impl Detector {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::Template(_) => "template",
            Detector::Proto(_) => "proto",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub frontend: FrontendConfig,
    pub postprocess: PostprocessConfig,
    pub few_shot: FewShotConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.postprocess.validate()?;
        self.few_shot.validate()?;
        self.frontend.pcen.validate()?;
        if self.frontend.hop_samples == 0
            || self.frontend.win_samples == 0
            || self.frontend.target_sr == 0
        {
            return Err(Error::InvalidConfig(
                "frontend window, hop and rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn finish(events: Vec<Event>, episode: &FewShotEpisode, post: &PostprocessConfig) -> Vec<Event> {
    let clipped = events
        .into_iter()
        .filter_map(|e| {
            Event::pos(
                e.onset_s.max(episode.query_start_s),
                e.offset_s,
                e.class_name,
            )
            .ok()
        })
        .collect();
    post.apply(clipped, &episode.support)
}

/// Template detection over the query region of a magnitude spectrogram.
pub fn detect_template(
    spec: &Spectrogram,
    episode: &FewShotEpisode,
    params: &TemplateParams,
    post: &PostprocessConfig,
) -> Result<Vec<Event>> {
    let templates = extract_templates(spec, &episode.support)?;
    let query = spec.slice_frames(spec.frame_floor(episode.query_start_s), spec.n_frames);
    let mut curves = Vec::with_capacity(templates.len());
    for t in &templates {
        if t.n_frames <= query.n_frames {
            curves.push(xcorr_curve(&query, t)?);
        }
    }
    if curves.is_empty() {
        return Ok(Vec::new());
    }
    let fused = crate::template_match::fuse_curves(&curves);
    let smoothed = DetectionCurve {
        scores: median_filter(&fused.scores, post.median_kernel)?,
        ..fused
    };
    let lengths: Vec<usize> = templates.iter().map(|t| t.n_frames).collect();
    let events = detect_from_curves(&[smoothed], params.threshold, &lengths, &episode.class_name);
    Ok(finish(events, episode, post))
}

/// Prototype detection over the query region of a PCEN spectrogram.
pub fn detect_proto(
    spec: &Spectrogram,
    episode: &FewShotEpisode,
    params: &ProtoParams,
    post: &PostprocessConfig,
) -> Result<Vec<Event>> {
    let seg = adaptive_segment_length(&episode.support, spec.hop_s);
    let (mut pos, mut neg) = build_prototypes(
        spec,
        episode,
        params.embedder,
        seg.seg_len_frames,
        params.neg_samples,
        params.rng_seed,
    )?;
    if params.swap_prototypes {
        std::mem::swap(&mut pos, &mut neg);
    }
    let grid = SegmentGrid::over(spec.frame_floor(episode.query_start_s), spec.n_frames, seg);
    let probs = segment_probabilities(spec, &grid, params.embedder, &pos, &neg)?;
    let probs = median_filter(&probs, post.median_kernel)?;
    let events = probabilities_to_events(
        &probs,
        &grid,
        params.threshold,
        FrameClock::of(spec),
        episode.query_start_s,
        &episode.class_name,
    );
    Ok(finish(events, episode, post))
}

/// Detections of one recording, query region only.
#[derive(Debug, Clone, PartialEq)]
pub struct FileDetections {
    pub audio_file: String,
    /// Sorted; `class_name` names the episode each event belongs to.
    pub events: Vec<Event>,
    /// Detections ending at or before their episode's query start, dropped.
    pub discarded: usize,
    pub n_episodes: usize,
}

/// Runs the detector on every scorable class of the recording.
pub fn detect_file(
    waveform: &Waveform,
    table: &AnnotationTable,
    detector: &Detector,
    config: &PipelineConfig,
) -> Result<FileDetections> {
    config.validate()?;
    let (episodes, skipped) = table_episodes(table, &config.few_shot)?;
    if episodes.is_empty() {
        let found = skipped.iter().map(|s| s.pos_events).max().unwrap_or(0);
        return Err(Error::InsufficientShots {
            audio_file: table.audio_file.clone(),
            class_name: skipped
                .first()
                .map(|s| s.class_name.clone())
                .unwrap_or_default(),
            found,
            needed: config.few_shot.k_shot,
        });
    }
    let spec = match detector {
        Detector::Template(_) => config.frontend.magnitude(waveform)?,
        Detector::Proto(_) => config.frontend.mel_pcen(waveform)?,
    };
    let mut events = Vec::new();
    let mut discarded = 0;
    for ep in &episodes {
        let found = match detector {
            Detector::Template(p) => detect_template(&spec, ep, p, &config.postprocess)?,
            Detector::Proto(p) => detect_proto(&spec, ep, p, &config.postprocess)?,
        };
        for e in found {
            if e.offset_s <= ep.query_start_s {
                discarded += 1;
            } else {
                events.push(e);
            }
        }
    }
    sort_events(&mut events);
    Ok(FileDetections {
        audio_file: table.audio_file.clone(),
        events,
        discarded,
        n_episodes: episodes.len(),
    })
}

/// Detects every benchmark file and scores the result.
pub fn run_benchmark(
    files: &[BenchmarkFile],
    detector: &Detector,
    config: &PipelineConfig,
    match_config: &MatchConfig,
    averaging: Averaging,
) -> Result<(Vec<FileDetections>, MatchReport)> {
    let detections = files
        .iter()
        .map(|f| detect_file(&f.episode.waveform, &f.episode.table, detector, config))
        .collect::<Result<Vec<_>>>()?;
    let report = score_detections(
        &detections,
        files.iter().map(|f| (&f.episode.table, f.dataset.as_str())),
        match_config,
        &config.few_shot,
        averaging,
    )?;
    Ok((detections, report))
}

/// Scores detections against `(table, dataset)` pairs.
pub fn score_detections<'a>(
    detections: &[FileDetections],
    ground_truth: impl IntoIterator<Item = (&'a AnnotationTable, &'a str)>,
    match_config: &MatchConfig,
    few_shot: &FewShotConfig,
    averaging: Averaging,
) -> Result<MatchReport> {
    let mut gt = BTreeMap::new();
    let mut dataset_of = BTreeMap::new();
    for (table, dataset) in ground_truth {
        dataset_of.insert(table.audio_file.clone(), dataset.to_string());
        gt.insert(table.audio_file.clone(), table.clone());
    }
    let preds: BTreeMap<String, Vec<Event>> = detections
        .iter()
        .map(|d| (d.audio_file.clone(), d.events.clone()))
        .collect();
    evaluate(&preds, &gt, &dataset_of, match_config, few_shot, averaging)
}
