//! Annotation and prediction tables, and few-shot episode extraction.
//!
//! Ground-truth files carry one column per sound class:
//!
//! ```text
//! Audiofilename,Starttime,Endtime,<Class1>[,<Class2>...]
//! a.wav,1.0,1.5,POS
//! ```
//!
//! Each cell is `POS`, `NEG` or `UNK`. An empty cell means the row says
//! nothing about that class. Prediction files carry only the three leading
//! columns, plus an optional trailing `Class` column for multi-class files.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FILE_COL: &str = "Audiofilename";
const START_COL: &str = "Starttime";
const END_COL: &str = "Endtime";
const CLASS_COL: &str = "Class";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LabelValue {
    #[serde(rename = "POS")]
    Pos,
    #[serde(rename = "NEG")]
    Neg,
    #[serde(rename = "UNK")]
    Unk,
}

impl LabelValue {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelValue::Pos => "POS",
            LabelValue::Neg => "NEG",
            LabelValue::Unk => "UNK",
        }
    }
}

impl fmt::Display for LabelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelValue {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "POS" => Ok(LabelValue::Pos),
            "NEG" => Ok(LabelValue::Neg),
            "UNK" => Ok(LabelValue::Unk),
            other => Err(format!("unknown label token {other:?}")),
        }
    }
}

/// A labelled time interval in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset_s: f64,
    pub offset_s: f64,
    pub class_name: String,
    pub value: LabelValue,
}

impl Event {
    /// Builds a validated event: `0 <= onset < offset`, finite times and a
    /// non-empty class name.
    pub fn new(
        onset_s: f64,
        offset_s: f64,
        class_name: impl Into<String>,
        value: LabelValue,
    ) -> Result<Self> {
        let class_name = class_name.into();
        if !onset_s.is_finite() || !offset_s.is_finite() {
            return Err(Error::InvalidEvent(format!(
                "non-finite time [{onset_s}, {offset_s}]"
            )));
        }
        if onset_s < 0.0 {
            return Err(Error::InvalidEvent(format!("negative onset {onset_s}")));
        }
        if onset_s >= offset_s {
            return Err(Error::InvalidEvent(format!(
                "zero-length event [{onset_s}, {offset_s}]"
            )));
        }
        if class_name.is_empty() {
            return Err(Error::InvalidEvent("empty class name".into()));
        }
        Ok(Event {
            onset_s,
            offset_s,
            class_name,
            value,
        })
    }

    pub fn pos(onset_s: f64, offset_s: f64, class_name: impl Into<String>) -> Result<Self> {
        Self::new(onset_s, offset_s, class_name, LabelValue::Pos)
    }

    pub fn duration(&self) -> f64 {
        self.offset_s - self.onset_s
    }

    /// Total order used for every sorted event list.
    pub fn sort_cmp(&self, other: &Self) -> Ordering {
        self.onset_s
            .total_cmp(&other.onset_s)
            .then(self.offset_s.total_cmp(&other.offset_s))
            .then_with(|| self.class_name.cmp(&other.class_name))
            .then(self.value.cmp(&other.value))
    }
}

pub fn sort_events(events: &mut [Event]) {
    events.sort_by(Event::sort_cmp);
}

/// All annotations of one audio file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTable {
    pub audio_file: String,
    pub events: Vec<Event>,
    pub class_names: BTreeSet<String>,
}

impl AnnotationTable {
    /// Validates class membership and sorts the events.
    pub fn new(
        audio_file: impl Into<String>,
        class_names: BTreeSet<String>,
        mut events: Vec<Event>,
    ) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| !class_names.contains(&e.class_name)) {
            return Err(Error::InvalidEvent(format!(
                "class {:?} is not declared",
                e.class_name
            )));
        }
        sort_events(&mut events);
        Ok(AnnotationTable {
            audio_file: audio_file.into(),
            events,
            class_names,
        })
    }

    pub fn events_of<'a>(
        &'a self,
        class_name: &'a str,
        value: LabelValue,
    ) -> impl Iterator<Item = &'a Event> + 'a {
        self.events
            .iter()
            .filter(move |e| e.class_name == class_name && e.value == value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    pub k_shot: usize,
    pub n_way: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            k_shot: 5,
            n_way: 1,
        }
    }
}

impl FewShotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_shot == 0 || self.n_way == 0 {
            return Err(Error::InvalidConfig(format!(
                "k_shot and n_way must be >= 1 (got k_shot={}, n_way={})",
                self.k_shot, self.n_way
            )));
        }
        Ok(())
    }
}

/// One (file, class) detection problem: the support shots and the reference
/// events of the query region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotEpisode {
    pub audio_file: String,
    pub class_name: String,
    pub support: Vec<Event>,
    pub query_start_s: f64,
    pub reference_pos: Vec<Event>,
    pub reference_unk: Vec<Event>,
    /// NEG events of the class that end inside the support region.
    pub support_neg: Vec<Event>,
    /// UNK events of the class that end inside the support region.
    pub support_unk: Vec<Event>,
}

impl FewShotEpisode {
    pub fn mean_shot_duration(&self) -> f64 {
        mean_duration(&self.support)
    }
}

pub(crate) fn mean_duration(events: &[Event]) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    events.iter().map(Event::duration).sum::<f64>() / events.len() as f64
}

/// Builds the episode for `class_name`: the first `k_shot` POS events are the
/// support set and the query region starts at the last support offset.
/// Events straddling the query start are dropped.
pub fn extract_episode(
    table: &AnnotationTable,
    class_name: &str,
    config: &FewShotConfig,
) -> Result<FewShotEpisode> {
    config.validate()?;
    let pos: Vec<&Event> = table.events_of(class_name, LabelValue::Pos).collect();
    if pos.len() < config.k_shot {
        return Err(Error::InsufficientShots {
            audio_file: table.audio_file.clone(),
            class_name: class_name.to_string(),
            found: pos.len(),
            needed: config.k_shot,
        });
    }
    let support: Vec<Event> = pos[..config.k_shot].iter().map(|e| (*e).clone()).collect();
    // Equal to the k-th offset unless support shots overlap each other.
    let query_start_s = support
        .iter()
        .map(|e| e.offset_s)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut reference_pos = Vec::new();
    let mut reference_unk = Vec::new();
    let mut support_neg = Vec::new();
    let mut support_unk = Vec::new();
    for e in &table.events {
        if e.class_name != class_name {
            continue;
        }
        let in_query = e.onset_s >= query_start_s;
        let in_support = e.offset_s <= query_start_s;
        match e.value {
            LabelValue::Pos if in_query => reference_pos.push(e.clone()),
            LabelValue::Unk if in_query => reference_unk.push(e.clone()),
            LabelValue::Unk if in_support => support_unk.push(e.clone()),
            LabelValue::Neg if in_support => support_neg.push(e.clone()),
            _ => {}
        }
    }
    Ok(FewShotEpisode {
        audio_file: table.audio_file.clone(),
        class_name: class_name.to_string(),
        support,
        query_start_s,
        reference_pos,
        reference_unk,
        support_neg,
        support_unk,
    })
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn convert_csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(line, e.to_string())
}

fn parse_time(cell: &str, line: u64, what: &str) -> Result<f64> {
    let t: f64 = cell
        .parse()
        .map_err(|_| parse_err(line, format!("non-numeric {what} {cell:?}")))?;
    if !t.is_finite() {
        return Err(parse_err(line, format!("non-finite {what} {cell:?}")));
    }
    Ok(t)
}

fn parse_interval(start: &str, end: &str, line: u64) -> Result<(f64, f64)> {
    let onset = parse_time(start, line, "Starttime")?;
    let offset = parse_time(end, line, "Endtime")?;
    if onset < 0.0 {
        return Err(parse_err(line, format!("negative onset {onset}")));
    }
    if onset == offset {
        return Err(parse_err(line, "zero-length event"));
    }
    if onset > offset {
        return Err(parse_err(
            line,
            format!("onset {onset} after offset {offset}"),
        ));
    }
    Ok((onset, offset))
}

fn check_leading_header(record: &csv::StringRecord) -> Result<()> {
    let lead: Vec<&str> = record.iter().take(3).collect();
    if lead != [FILE_COL, START_COL, END_COL] {
        return Err(parse_err(
            1,
            format!(
                "malformed header: expected {FILE_COL},{START_COL},{END_COL}, got {:?}",
                record.iter().collect::<Vec<_>>()
            ),
        ));
    }
    Ok(())
}

/// Parses a ground-truth CSV into a sorted, validated table.
pub fn parse_annotation_csv(text: &str) -> Result<AnnotationTable> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = csv_reader(text);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(convert_csv_err)?,
        None => return Err(parse_err(1, "malformed header: empty file")),
    };
    check_leading_header(&header)?;
    let classes: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    if classes.is_empty() {
        return Err(parse_err(1, "malformed header: no class columns"));
    }
    if let Some(c) = classes.iter().find(|c| c.is_empty()) {
        return Err(parse_err(
            1,
            format!("malformed header: empty class name {c:?}"),
        ));
    }
    let class_names: BTreeSet<String> = classes.iter().cloned().collect();
    if class_names.len() != classes.len() {
        return Err(parse_err(1, "malformed header: duplicate class column"));
    }

    let mut audio_file: Option<String> = None;
    let mut events = Vec::new();
    for record in records {
        let record = record.map_err(convert_csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let file = &record[0];
        match &audio_file {
            None => audio_file = Some(file.to_string()),
            Some(f) if f != file => {
                return Err(parse_err(
                    line,
                    format!("mixed audio files {f:?} and {file:?}"),
                ));
            }
            _ => {}
        }
        let (onset, offset) = parse_interval(&record[1], &record[2], line)?;
        let mut any = false;
        for (class, cell) in classes.iter().zip(record.iter().skip(3)) {
            if cell.is_empty() {
                continue;
            }
            let value: LabelValue = cell.parse().map_err(|m: String| parse_err(line, m))?;
            events.push(Event {
                onset_s: onset,
                offset_s: offset,
                class_name: class.clone(),
                value,
            });
            any = true;
        }
        if !any {
            return Err(parse_err(line, "row carries no label"));
        }
    }
    AnnotationTable::new(audio_file.unwrap_or_default(), class_names, events)
}

/// Formats a time with at least six decimals, falling back to the shortest
/// exact representation when six decimals would not round-trip.
pub fn format_time(t: f64) -> String {
    let fixed = format!("{t:.6}");
    if fixed.parse::<f64>().ok() == Some(t) {
        fixed
    } else {
        let exact = format!("{t}");
        if exact.contains('.') {
            exact
        } else {
            format!("{exact}.0")
        }
    }
}

/// Writes a ground-truth CSV. Events sharing an interval share a row.
pub fn write_annotation_csv(table: &AnnotationTable) -> String {
    let classes: Vec<&String> = table.class_names.iter().collect();
    let mut out = format!("{FILE_COL},{START_COL},{END_COL}");
    for c in &classes {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');

    let mut rows: Vec<(f64, f64, BTreeMap<&str, LabelValue>)> = Vec::new();
    for e in &table.events {
        let fits = rows.last().is_some_and(|(on, off, cells)| {
            on.to_bits() == e.onset_s.to_bits()
                && off.to_bits() == e.offset_s.to_bits()
                && !cells.contains_key(e.class_name.as_str())
        });
        if !fits {
            rows.push((e.onset_s, e.offset_s, BTreeMap::new()));
        }
        rows.last_mut()
            .unwrap()
            .2
            .insert(e.class_name.as_str(), e.value);
    }
    for (onset, offset, cells) in rows {
        out.push_str(&table.audio_file);
        out.push(',');
        out.push_str(&format_time(onset));
        out.push(',');
        out.push_str(&format_time(offset));
        for c in &classes {
            out.push(',');
            if let Some(v) = cells.get(c.as_str()) {
                out.push_str(v.as_str());
            }
        }
        out.push('\n');
    }
    out
}

/// Writes a prediction CSV for one audio file.
pub fn write_prediction_csv(audio_file: &str, events: &[Event]) -> String {
    let mut out = format!("{FILE_COL},{START_COL},{END_COL}\n");
    for e in events {
        out.push_str(&format!(
            "{audio_file},{},{}\n",
            format_time(e.onset_s),
            format_time(e.offset_s)
        ));
    }
    out
}

/// Writes a prediction CSV with a trailing `Class` column, for files
/// annotated with more than one class.
pub fn write_prediction_csv_with_class(audio_file: &str, events: &[Event]) -> String {
    let mut out = format!("{FILE_COL},{START_COL},{END_COL},{CLASS_COL}\n");
    for e in events {
        out.push_str(&format!(
            "{audio_file},{},{},{}\n",
            format_time(e.onset_s),
            format_time(e.offset_s),
            e.class_name
        ));
    }
    out
}

/// One parsed prediction row. `class_name` is `None` when the file has no
/// `Class` column; the class is then implied by the episode being scored.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub audio_file: String,
    pub onset_s: f64,
    pub offset_s: f64,
    pub class_name: Option<String>,
}

pub fn parse_prediction_csv(text: &str) -> Result<Vec<PredictionRow>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = csv_reader(text);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(convert_csv_err)?,
        None => return Err(parse_err(1, "malformed header: empty file")),
    };
    check_leading_header(&header)?;
    let with_class = match header.len() {
        3 => false,
        4 if &header[3] == CLASS_COL => true,
        _ => {
            return Err(parse_err(
                1,
                format!(
                    "malformed header: unexpected prediction columns {:?}",
                    header.iter().collect::<Vec<_>>()
                ),
            ))
        }
    };
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(convert_csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let (onset_s, offset_s) = parse_interval(&record[1], &record[2], line)?;
        let class_name = if with_class {
            if record[3].is_empty() {
                return Err(parse_err(line, "empty class name"));
            }
            Some(record[3].to_string())
        } else {
            None
        };
        rows.push(PredictionRow {
            audio_file: record[0].to_string(),
            onset_s,
            offset_s,
            class_name,
        });
    }
    Ok(rows)
}
