//! Locating recordings, annotations and predictions on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fsbio::annotations::{parse_annotation_csv, parse_prediction_csv, AnnotationTable, Event};
use fsbio::scoring::resolve_predictions;
use fsbio::synth::{Manifest, MANIFEST_FILE};
use walkdir::WalkDir;

use crate::CliError;

pub const DEFAULT_DATASET: &str = "default";

/// An annotated recording.
#[derive(Debug, Clone)]
pub struct Recording {
    pub dataset: String,
    /// Path of the WAV relative to the input root.
    pub relative: PathBuf,
    pub wav: PathBuf,
    pub table: AnnotationTable,
}

fn read_table(path: &Path) -> Result<AnnotationTable, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    parse_annotation_csv(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn dataset_of(relative: &Path) -> String {
    let mut parts = relative.components();
    match (parts.next(), parts.next()) {
        (Some(first), Some(_)) => first.as_os_str().to_string_lossy().into_owned(),
        _ => DEFAULT_DATASET.to_string(),
    }
}

fn files_with_extension(root: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    if !root.is_dir() {
        return Err(CliError::usage(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::data(e.to_string()))?;
        let path = entry.path();
        if entry.file_type().is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case(ext))
        {
            out.push(path.strip_prefix(root).unwrap_or(path).to_path_buf());
        }
    }
    Ok(out)
}

/// Pairs of `(relative wav, relative csv, dataset)`, from the manifest when
/// the directory has one, otherwise from every WAV with a sibling CSV.
fn pairs(root: &Path) -> Result<Vec<(PathBuf, PathBuf, String)>, CliError> {
    if root.join(MANIFEST_FILE).is_file() {
        let manifest =
            Manifest::read(root).map_err(|e| CliError::data(format!("{MANIFEST_FILE}: {e}")))?;
        return Ok(manifest
            .entries
            .into_iter()
            .map(|e| (PathBuf::from(e.wav), PathBuf::from(e.csv), e.dataset))
            .collect());
    }
    Ok(files_with_extension(root, "wav")?
        .into_iter()
        .map(|wav| {
            let dataset = dataset_of(&wav);
            (wav.clone(), wav.with_extension("csv"), dataset)
        })
        .collect())
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<(), CliError> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(CliError::data(format!(
                "audio file {n} appears more than once"
            )));
        }
    }
    Ok(())
}

pub fn recordings(root: &Path) -> Result<Vec<Recording>, CliError> {
    let mut out = Vec::new();
    for (wav, csv, dataset) in pairs(root)? {
        let csv_path = root.join(&csv);
        if !csv_path.is_file() {
            return Err(CliError::data(format!(
                "missing annotations {} for {}",
                csv.display(),
                wav.display()
            )));
        }
        out.push(Recording {
            dataset,
            wav: root.join(&wav),
            relative: wav,
            table: read_table(&csv_path)?,
        });
    }
    if out.is_empty() {
        return Err(CliError::data(format!(
            "no recordings under {}",
            root.display()
        )));
    }
    check_unique(out.iter().map(|r| r.table.audio_file.as_str()))?;
    Ok(out)
}

/// Ground-truth tables keyed by audio file, with their dataset names.
pub struct GroundTruth {
    pub tables: BTreeMap<String, AnnotationTable>,
    pub dataset_of: BTreeMap<String, String>,
}

pub fn ground_truth(root: &Path) -> Result<GroundTruth, CliError> {
    let csvs: Vec<(PathBuf, String)> = if root.join(MANIFEST_FILE).is_file() {
        pairs(root)?
            .into_iter()
            .map(|(_, csv, d)| (csv, d))
            .collect()
    } else {
        files_with_extension(root, "csv")?
            .into_iter()
            .map(|csv| {
                let d = dataset_of(&csv);
                (csv, d)
            })
            .collect()
    };
    let mut tables = BTreeMap::new();
    let mut dataset_of = BTreeMap::new();
    for (csv, dataset) in csvs {
        let table = read_table(&root.join(&csv))?;
        if tables.contains_key(&table.audio_file) {
            return Err(CliError::data(format!(
                "audio file {} appears more than once",
                table.audio_file
            )));
        }
        dataset_of.insert(table.audio_file.clone(), dataset);
        tables.insert(table.audio_file.clone(), table);
    }
    if tables.is_empty() {
        return Err(CliError::data(format!(
            "no annotation files under {}",
            root.display()
        )));
    }
    Ok(GroundTruth { tables, dataset_of })
}

/// Every prediction CSV under `root`, grouped by audio file.
pub fn predictions(
    root: &Path,
    gt: &GroundTruth,
) -> Result<BTreeMap<String, Vec<Event>>, CliError> {
    let mut rows = Vec::new();
    for csv in files_with_extension(root, "csv")? {
        let path = root.join(&csv);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        rows.extend(
            parse_prediction_csv(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(resolve_predictions(rows, &gt.tables)?)
}
