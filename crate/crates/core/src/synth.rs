//! Deterministic synthetic episodes: white noise plus tone, chirp or
//! pulse-train calls placed without overlap, with matching annotations.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotations::{write_annotation_csv, AnnotationTable, Event, LabelValue};
use crate::dsp::{write_wav_pcm16, Waveform};
use crate::error::{Error, Result};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
pub const MANIFEST_FILE: &str = "manifest.json";

const RAMP_S: f64 = 0.010;
const PULSE_ON_S: f64 = 0.010;
const PULSE_PERIOD_S: f64 = 0.025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Tone,
    /// Linear sweep from `f0` to `1.5 f0`.
    Chirp,
    /// 10 ms carrier bursts every 25 ms.
    PulseTrain,
}

impl EventKind {
    /// Frequency band the event occupies; SNR is defined over this band.
    pub fn occupied_band(self, f0: f64) -> (f64, f64) {
        match self {
            EventKind::Tone => (f0 - 100.0, f0 + 100.0),
            EventKind::Chirp => (f0 - 100.0, 1.5 * f0 + 100.0),
            EventKind::PulseTrain => (f0 - 200.0, f0 + 200.0),
        }
    }

    /// Unit-amplitude waveform of `n` samples, with cosine on/off ramps.
    pub fn render(self, f0: f64, n: usize, sample_rate: u32) -> Vec<f64> {
        let sr = sample_rate as f64;
        let dur = n as f64 / sr;
        let ramp = (RAMP_S * sr).round().min((n / 2) as f64).max(1.0);
        (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                let carrier = match self {
                    EventKind::Tone | EventKind::PulseTrain => (2.0 * PI * f0 * t).sin(),
                    EventKind::Chirp => (2.0 * PI * (f0 * t + 0.25 * f0 * t * t / dur)).sin(),
                };
                let gate = match self {
                    EventKind::PulseTrain => {
                        let phase = t % PULSE_PERIOD_S;
                        if phase < PULSE_ON_S {
                            (PI * phase / PULSE_ON_S).sin().powi(2)
                        } else {
                            0.0
                        }
                    }
                    _ => 1.0,
                };
                let k = i as f64;
                let edge = (k / ramp).min((n as f64 - 1.0 - k) / ramp).min(1.0);
                let envelope = 0.5 - 0.5 * (PI * edge).cos();
                carrier * gate * envelope
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistractorLabel {
    #[default]
    Unlabelled,
    Neg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub class_name: String,
    /// Target events, support shots included.
    pub n_events: usize,
    pub k_shot: usize,
    pub kind: EventKind,
    pub event_duration_s: (f64, f64),
    /// The file's fundamental is drawn from this range.
    pub fundamental_hz: (f64, f64),
    /// Relative per-event deviation from the file's fundamental.
    pub fundamental_jitter: f64,
    pub snr_db: f64,
    pub noise_rms: f64,
    /// Fraction of query-region target events labelled UNK.
    pub unk_fraction: f64,
    pub distractor_kind: EventKind,
    pub distractor_count: usize,
    pub distractor_fundamental_hz: (f64, f64),
    pub distractor_label: DistractorLabel,
    /// Minimum silence between any two placed events.
    pub min_gap_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rng_seed: 0,
            duration_s: 30.0,
            sample_rate: 22050,
            class_name: "Q".into(),
            n_events: 10,
            k_shot: 5,
            kind: EventKind::Tone,
            event_duration_s: (0.10, 0.15),
            fundamental_hz: (2000.0, 6000.0),
            fundamental_jitter: 0.002,
            snr_db: 20.0,
            noise_rms: 0.01,
            unk_fraction: 0.0,
            distractor_kind: EventKind::Tone,
            distractor_count: 0,
            distractor_fundamental_hz: (500.0, 1000.0),
            distractor_label: DistractorLabel::Unlabelled,
            min_gap_s: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k_shot == 0 || self.n_events < self.k_shot + 1 {
            return bad(format!(
                "need n_events >= k_shot + 1 >= 2, got {} and {}",
                self.n_events, self.k_shot
            ));
        }
        if self.sample_rate == 0 || self.duration_s.is_nan() || self.duration_s <= 0.0 {
            return bad("sample rate and duration must be positive".into());
        }
        let (lo, hi) = self.event_duration_s;
        if !(lo > 0.0 && lo <= hi && hi < self.duration_s / 2.0) {
            return bad(format!(
                "event duration range {:?} does not fit half the file",
                self.event_duration_s
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for (what, (flo, fhi), kind) in [
            ("fundamental", self.fundamental_hz, self.kind),
            (
                "distractor fundamental",
                self.distractor_fundamental_hz,
                self.distractor_kind,
            ),
        ] {
            if !(flo > 0.0
                && flo <= fhi
                && kind.occupied_band(fhi * (1.0 + self.fundamental_jitter)).1 < nyquist)
            {
                return bad(format!(
                    "{what} range [{flo}, {fhi}] must lie below the Nyquist rate"
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.unk_fraction)
            || !(0.0..0.5).contains(&self.fundamental_jitter)
        {
            return bad("unk_fraction must lie in [0, 1] and jitter in [0, 0.5)".into());
        }
        if self.noise_rms.is_nan()
            || self.noise_rms <= 0.0
            || !self.snr_db.is_finite()
            || self.min_gap_s.is_nan()
            || self.min_gap_s < 0.0
        {
            return bad("noise_rms must be positive, snr finite and min_gap non-negative".into());
        }
        if self.class_name.is_empty() {
            return bad("empty class name".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Target(LabelValue),
    Distractor,
}

/// One rendered event: exact sample span, fundamental and amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub start_sample: usize,
    pub len_samples: usize,
    pub f0_hz: f64,
    pub kind: EventKind,
    pub amplitude: f64,
    pub role: Role,
}

impl Placement {
    pub fn onset_s(&self, sample_rate: u32) -> f64 {
        self.start_sample as f64 / sample_rate as f64
    }

    pub fn offset_s(&self, sample_rate: u32) -> f64 {
        (self.start_sample + self.len_samples) as f64 / sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEpisode {
    pub waveform: Waveform,
    pub table: AnnotationTable,
    pub placements: Vec<Placement>,
}

struct Placer {
    taken: Vec<(usize, usize)>,
    gap: usize,
    attempts: usize,
}

impl Placer {
    /// Uniform start in `[lo, hi - len]` clear of every taken span by at
    /// least the gap.
    fn place(&mut self, rng: &mut ChaCha8Rng, lo: usize, hi: usize, len: usize) -> Result<usize> {
        loop {
            self.attempts += 1;
            if self.attempts > MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::PlacementFailure {
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                });
            }
            if hi < lo + len {
                continue;
            }
            let start = rng.random_range(lo..=hi - len);
            let end = start + len;
            let clear = self
                .taken
                .iter()
                .all(|&(s, e)| end + self.gap <= s || e + self.gap <= start);
            if clear {
                self.taken.push((start, end));
                return Ok(start);
            }
        }
    }
}

fn amplitude_for(unit: &[f64], kind: EventKind, f0: f64, cfg: &SynthConfig) -> f64 {
    let (lo, hi) = kind.occupied_band(f0);
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let noise_band_power = cfg.noise_rms.powi(2) * (hi.min(nyquist) - lo.max(0.0)) / nyquist;
    let unit_power = unit.iter().map(|v| v * v).sum::<f64>() / unit.len() as f64;
    (10f64.powf(cfg.snr_db / 10.0) * noise_band_power / unit_power).sqrt()
}

/// Generates one file. The first `k_shot` target events fall in the first
/// half of the file and are POS; the rest fall in the second half, a
/// fraction `unk_fraction` of them labelled UNK.
pub fn generate_episode(config: &SynthConfig, audio_file: &str) -> Result<SynthEpisode> {
    config.validate()?;
    let sr = config.sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let n_samples = (config.duration_s * sr as f64).round() as usize;
    let half = n_samples / 2;
    let secs = |s: f64| (s * sr as f64).round() as usize;

    let file_f0 = rng.random_range(config.fundamental_hz.0..=config.fundamental_hz.1);
    let distractor_f0 =
        rng.random_range(config.distractor_fundamental_hz.0..=config.distractor_fundamental_hz.1);
    let mut placer = Placer {
        taken: Vec::new(),
        gap: secs(config.min_gap_s),
        attempts: 0,
    };

    let mut placements = Vec::new();
    for i in 0..config.n_events {
        let len =
            secs(rng.random_range(config.event_duration_s.0..=config.event_duration_s.1)).max(1);
        let (lo, hi) = if i < config.k_shot {
            (0, half)
        } else {
            (half, n_samples)
        };
        let start = placer.place(&mut rng, lo, hi, len)?;
        let f0 = file_f0 * (1.0 + config.fundamental_jitter * rng.random_range(-1.0..=1.0));
        placements.push(Placement {
            start_sample: start,
            len_samples: len,
            f0_hz: f0,
            kind: config.kind,
            amplitude: 0.0,
            role: Role::Target(LabelValue::Pos),
        });
    }
    let n_query = config.n_events - config.k_shot;
    let n_unk = (config.unk_fraction * n_query as f64).round() as usize;
    let mut query_idx: Vec<usize> = (config.k_shot..config.n_events).collect();
    query_idx.shuffle(&mut rng);
    for &i in &query_idx[..n_unk] {
        placements[i].role = Role::Target(LabelValue::Unk);
    }
    for _ in 0..config.distractor_count {
        let len =
            secs(rng.random_range(config.event_duration_s.0..=config.event_duration_s.1)).max(1);
        let start = placer.place(&mut rng, 0, n_samples, len)?;
        let f0 = distractor_f0 * (1.0 + config.fundamental_jitter * rng.random_range(-1.0..=1.0));
        placements.push(Placement {
            start_sample: start,
            len_samples: len,
            f0_hz: f0,
            kind: config.distractor_kind,
            amplitude: 0.0,
            role: Role::Distractor,
        });
    }

    let noise =
        Normal::new(0.0, config.noise_rms).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut samples: Vec<f64> = (0..n_samples).map(|_| noise.sample(&mut rng)).collect();
    for p in &mut placements {
        let unit = p.kind.render(p.f0_hz, p.len_samples, sr);
        p.amplitude = amplitude_for(&unit, p.kind, p.f0_hz, config);
        for (s, u) in samples[p.start_sample..p.start_sample + p.len_samples]
            .iter_mut()
            .zip(&unit)
        {
            *s += p.amplitude * u;
        }
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 32767.0 / 32768.0);
    }

    let mut events = Vec::new();
    for p in &placements {
        let value = match (p.role, config.distractor_label) {
            (Role::Target(v), _) => v,
            (Role::Distractor, DistractorLabel::Neg) => LabelValue::Neg,
            (Role::Distractor, DistractorLabel::Unlabelled) => continue,
        };
        events.push(Event::new(
            p.onset_s(sr),
            p.offset_s(sr),
            config.class_name.clone(),
            value,
        )?);
    }
    let table = AnnotationTable::new(
        audio_file,
        BTreeSet::from([config.class_name.clone()]),
        events,
    )?;
    placements.sort_by_key(|p| p.start_sample);
    Ok(SynthEpisode {
        waveform: Waveform::new(samples, sr)?,
        table,
        placements,
    })
}

/// One synthetic dataset: `n_files` episodes sharing a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDataset {
    pub name: String,
    pub n_files: usize,
    /// Inclusive range of target events per file.
    pub n_events: (usize, usize),
    pub base: SynthConfig,
}

impl SynthDataset {
    /// Configuration of file `index`, with its own derived seed.
    pub fn file_config(&self, index: usize) -> SynthConfig {
        let seed = self
            .base
            .rng_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.n_events;
        SynthConfig {
            rng_seed: seed,
            n_events: rng.random_range(lo..=hi.max(lo)),
            ..self.base.clone()
        }
    }

    pub fn file_name(&self, index: usize) -> String {
        format!("{}_{:03}.wav", self.name, index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio_file: String,
    pub dataset: String,
    /// Paths relative to the manifest's directory.
    pub wav: String,
    pub csv: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn datasets(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.dataset.as_str()).collect()
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(
            dir.join(MANIFEST_FILE),
        )?)?)
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkFile {
    pub dataset: String,
    pub episode: SynthEpisode,
}

fn check_datasets(datasets: &[SynthDataset]) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::InvalidConfig(
            "benchmark needs at least one dataset".into(),
        ));
    }
    let mut names = BTreeSet::new();
    for d in datasets {
        if d.n_files == 0 {
            return Err(Error::InvalidConfig(format!(
                "dataset {:?} has no files",
                d.name
            )));
        }
        if d.name.is_empty() || !names.insert(d.name.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "dataset name {:?} is empty or repeated",
                d.name
            )));
        }
    }
    Ok(())
}

/// Generates every file of every dataset in memory.
pub fn generate_benchmark_files(datasets: &[SynthDataset]) -> Result<Vec<BenchmarkFile>> {
    check_datasets(datasets)?;
    let mut files = Vec::new();
    for d in datasets {
        for i in 0..d.n_files {
            let episode = generate_episode(&d.file_config(i), &d.file_name(i))?;
            files.push(BenchmarkFile {
                dataset: d.name.clone(),
                episode,
            });
        }
    }
    Ok(files)
}

/// Writes `<dir>/<dataset>/<file>.wav` and `.csv` pairs plus the manifest.
pub fn generate_benchmark(datasets: &[SynthDataset], dir: &Path) -> Result<Manifest> {
    let files = generate_benchmark_files(datasets)?;
    let mut manifest = Manifest::default();
    for f in &files {
        let sub = dir.join(&f.dataset);
        fs::create_dir_all(&sub)?;
        let audio_file = f.episode.table.audio_file.clone();
        let stem = audio_file.trim_end_matches(".wav");
        let wav = format!("{}/{}", f.dataset, audio_file);
        let csv = format!("{}/{stem}.csv", f.dataset);
        fs::write(dir.join(&wav), write_wav_pcm16(&f.episode.waveform)?)?;
        fs::write(dir.join(&csv), write_annotation_csv(&f.episode.table))?;
        manifest.entries.push(ManifestEntry {
            audio_file,
            dataset: f.dataset.clone(),
            wav,
            csv,
        });
    }
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Three datasets (tone, chirp, pulse train) of `n_files` files each with
/// 6 to 12 target events per file.
pub fn standard_benchmark(
    seed: u64,
    n_files: usize,
    snr_db: f64,
    distractors: usize,
) -> Vec<SynthDataset> {
    let base = SynthConfig {
        snr_db,
        distractor_count: distractors,
        ..SynthConfig::default()
    };
    vec![
        SynthDataset {
            name: "tone".into(),
            n_files,
            n_events: (6, 12),
            base: SynthConfig {
                rng_seed: seed.wrapping_add(1),
                kind: EventKind::Tone,
                event_duration_s: (0.10, 0.15),
                fundamental_hz: (2000.0, 6000.0),
                ..base.clone()
            },
        },
        SynthDataset {
            name: "chirp".into(),
            n_files,
            n_events: (6, 12),
            base: SynthConfig {
                rng_seed: seed.wrapping_add(2),
                kind: EventKind::Chirp,
                event_duration_s: (0.15, 0.18),
                fundamental_hz: (2000.0, 4000.0),
                distractor_kind: EventKind::Chirp,
                ..base.clone()
            },
        },
        SynthDataset {
            name: "pulse".into(),
            n_files,
            n_events: (6, 12),
            base: SynthConfig {
                rng_seed: seed.wrapping_add(3),
                kind: EventKind::PulseTrain,
                event_duration_s: (0.20, 0.30),
                fundamental_hz: (1500.0, 3000.0),
                distractor_kind: EventKind::PulseTrain,
                distractor_fundamental_hz: (300.0, 700.0),
                ..base
            },
        },
    ]
}
