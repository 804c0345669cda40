use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fsbio::annotations::{write_prediction_csv, write_prediction_csv_with_class};
use fsbio::dsp::read_wav;
use fsbio::pipeline::{detect_file, Detector, FileDetections};
use fsbio::scoring::{evaluate, MatchReport};
use fsbio::synth::generate_benchmark;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{ground_truth, predictions, recordings, Recording};
use crate::CliError;

pub const RUN_LOG: &str = "run_log.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::internal(e.to_string()))
}

pub fn synth(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    let manifest = generate_benchmark(&config.synth.datasets(), out)?;
    let datasets = manifest.datasets();
    println!(
        "wrote {} files in {} datasets ({}) to {}",
        manifest.entries.len(),
        datasets.len(),
        datasets.into_iter().collect::<Vec<_>>().join(", "),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileLog {
    pub audio_file: String,
    pub dataset: String,
    pub predictions: String,
    pub n_episodes: usize,
    pub n_events: usize,
    pub discarded: usize,
    pub seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub tool_version: String,
    pub command: String,
    pub config_fingerprint: String,
    pub config: RunConfig,
    pub jobs: usize,
    pub files: Vec<FileLog>,
    pub total_events: usize,
    pub total_discarded: usize,
    pub total_seconds: f64,
}

fn detect_one(
    rec: &Recording,
    detector: &Detector,
    config: &RunConfig,
) -> Result<(FileDetections, f64), CliError> {
    let start = Instant::now();
    let bytes =
        fs::read(&rec.wav).map_err(|e| CliError::data(format!("{}: {e}", rec.wav.display())))?;
    let waveform =
        read_wav(&bytes).map_err(|e| CliError::data(format!("{}: {e}", rec.wav.display())))?;
    let found = detect_file(&waveform, &rec.table, detector, &config.pipeline())
        .map_err(|e| CliError::from(e).context(&rec.relative.display().to_string()))?;
    Ok((found, start.elapsed().as_secs_f64()))
}

/// Detects every recording under `input`, writing one prediction CSV per
/// recording (mirroring the input layout) plus the run log.
pub fn detect(
    config: &RunConfig,
    detector: Detector,
    input: &Path,
    out: &Path,
    jobs: usize,
) -> Result<(), CliError> {
    config.validate()?;
    let fingerprint = config.fingerprint()?;
    let recs = recordings(input)?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::internal(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        recs.par_iter()
            .map(|r| detect_one(r, &detector, config))
            .collect()
    });

    create_dir(out)?;
    let mut files = Vec::with_capacity(recs.len());
    for (rec, result) in recs.iter().zip(results) {
        let (found, seconds) = result?;
        let csv = if rec.table.class_names.len() > 1 {
            write_prediction_csv_with_class(&found.audio_file, &found.events)
        } else {
            write_prediction_csv(&found.audio_file, &found.events)
        };
        let relative = rec.relative.with_extension("csv");
        write(&out.join(&relative), csv)?;
        files.push(FileLog {
            audio_file: found.audio_file,
            dataset: rec.dataset.clone(),
            predictions: relative.to_string_lossy().replace('\\', "/"),
            n_episodes: found.n_episodes,
            n_events: found.events.len(),
            discarded: found.discarded,
            seconds,
        });
    }
    let log = RunLog {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: format!("detect-{}", detector.name()),
        config_fingerprint: fingerprint,
        config: config.clone(),
        jobs,
        total_events: files.iter().map(|f| f.n_events).sum(),
        total_discarded: files.iter().map(|f| f.discarded).sum(),
        total_seconds: start.elapsed().as_secs_f64(),
        files,
    };
    write(&out.join(RUN_LOG), to_json(&log)?)?;
    println!(
        "{}: {} recordings, {} events, {} discarded, config {}",
        log.command,
        log.files.len(),
        log.total_events,
        log.total_discarded,
        &log.config_fingerprint[..12]
    );
    Ok(())
}

/// The structured report written by `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub run_name: String,
    pub config_fingerprint: String,
    pub report: MatchReport,
}

pub fn score(
    config: &RunConfig,
    preds_dir: &Path,
    gt_dir: &Path,
    out: &Path,
    run_name: Option<String>,
) -> Result<(), CliError> {
    config.validate()?;
    let gt = ground_truth(gt_dir)?;
    let preds = predictions(preds_dir, &gt)?;
    let report = evaluate(
        &preds,
        &gt.tables,
        &gt.dataset_of,
        &config.match_config()?,
        &config.few_shot,
        config.matching.averaging,
    )?;
    let run_name = run_name.unwrap_or_else(|| {
        preds_dir
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "run".into())
    });
    print!("{}", report.render_table());
    let file = ScoreFile {
        run_name,
        config_fingerprint: config.fingerprint()?,
        report,
    };
    write(out, to_json(&file)?)?;
    Ok(())
}

fn load_score(path: &Path) -> Result<ScoreFile, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("malformed report {}: {e}", path.display())))
}

/// Rows sorted by overall F descending, ties by run name.
pub fn leaderboard(mut runs: Vec<ScoreFile>) -> String {
    runs.sort_by(|a, b| {
        b.report
            .overall
            .total_cmp(&a.report.overall)
            .then_with(|| a.run_name.cmp(&b.run_name))
    });
    let datasets: BTreeSet<&str> = runs
        .iter()
        .flat_map(|r| r.report.per_dataset.iter().map(|d| d.dataset_name.as_str()))
        .collect();
    let name_w = runs
        .iter()
        .map(|r| r.run_name.len())
        .chain(["run".len()])
        .max()
        .unwrap_or(3);
    let col_w = |s: &str| s.len().max(7);

    let mut out = format!("{:>4}  {:<name_w$}  {:>7}", "rank", "run", "overall");
    for d in &datasets {
        out.push_str(&format!("  {:>w$}", d, w = col_w(d)));
    }
    out.push('\n');
    for (i, r) in runs.iter().enumerate() {
        out.push_str(&format!(
            "{:>4}  {:<name_w$}  {:>7.4}",
            i + 1,
            r.run_name,
            r.report.overall
        ));
        for d in &datasets {
            let cell = match r.report.per_dataset.iter().find(|x| x.dataset_name == *d) {
                Some(x) => format!("{:.4}", x.fscore),
                None => "-".into(),
            };
            out.push_str(&format!("  {:>w$}", cell, w = col_w(d)));
        }
        out.push('\n');
    }
    out
}

pub fn report(paths: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    if paths.is_empty() {
        return Err(CliError::usage("report needs at least one report file"));
    }
    let runs = paths
        .iter()
        .map(|p| load_score(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = leaderboard(runs);
    print!("{table}");
    if let Some(out) = out {
        write(out, table)?;
    }
    Ok(())
}
