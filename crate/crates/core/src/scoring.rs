//! Event-level evaluation: IoU candidate edges, maximum bipartite matching,
//! UNK-aware counting, per-dataset F-score and the harmonic-mean summary.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::annotations::{
    extract_episode, AnnotationTable, Event, FewShotConfig, FewShotEpisode, LabelValue,
    PredictionRow,
};
use crate::error::{Error, Result};

/// Clamp applied to each value before inverting it in [`harmonic_mean`].
pub const HARMONIC_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub iou_min: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { iou_min: 0.3 }
    }
}

impl MatchConfig {
    pub fn new(iou_min: f64) -> Result<Self> {
        let c = MatchConfig { iou_min };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_min > 0.0 && self.iou_min <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou_min must lie in (0, 1], got {}",
                self.iou_min
            )));
        }
        Ok(())
    }
}

/// Event counts for one episode or an aggregate of episodes.
///
/// `unk_matched` counts predictions absorbed by UNK references and
/// `discarded` those ending inside the support region; neither enters
/// the F-score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub unk_matched: usize,
    pub discarded: usize,
}

impl Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            unk_matched: self.unk_matched + o.unk_matched,
            discarded: self.discarded + o.discarded,
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall and F1 with every 0/0 defined as 0.
pub fn fscore(counts: &Counts) -> Scores {
    let tp = counts.tp as f64;
    let precision = ratio(tp, tp + counts.fp as f64);
    let recall = ratio(tp, tp + counts.fn_ as f64);
    let fscore = ratio(2.0 * precision * recall, precision + recall);
    Scores {
        precision,
        recall,
        fscore,
    }
}

/// `n / Σ 1/max(v, ε)`.
pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyMean);
    }
    let inv: f64 = values.iter().map(|v| 1.0 / v.max(HARMONIC_EPS)).sum();
    Ok(values.len() as f64 / inv)
}

/// Intersection over union of two time intervals; 0 when disjoint.
pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.1.min(b.1) - a.0.max(b.0);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    inter / union
}

fn span(e: &Event) -> (f64, f64) {
    (e.onset_s, e.offset_s)
}

/// All `(pred, ref)` pairs with IoU ≥ `iou_min`, sorted.
///
/// References are visited through an onset-sorted index, and for each
/// prediction only those whose onset lies within one maximum reference
/// duration before the prediction's onset are inspected.
pub fn build_candidate_edges(
    preds: &[Event],
    refs: &[Event],
    config: &MatchConfig,
) -> Vec<(usize, usize)> {
    if preds.is_empty() || refs.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..refs.len()).collect();
    order.sort_by(|&a, &b| refs[a].onset_s.total_cmp(&refs[b].onset_s));
    let max_dur = refs.iter().map(Event::duration).fold(0.0, f64::max);

    let mut edges = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let lo = order.partition_point(|&j| refs[j].onset_s + max_dur < p.onset_s);
        let hi = order.partition_point(|&j| refs[j].onset_s < p.offset_s);
        for &j in &order[lo..hi.max(lo)] {
            if interval_iou(span(p), span(&refs[j])) >= config.iou_min {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    edges
}

const FREE: usize = usize::MAX;

struct Matcher {
    adj: Vec<Vec<usize>>,
    match_l: Vec<usize>,
    match_r: Vec<usize>,
    dist: Vec<usize>,
    next: Vec<usize>,
}

impl Matcher {
    fn new(edges: &[(usize, usize)], n_left: usize, n_right: usize) -> Self {
        let mut adj = vec![Vec::new(); n_left];
        for &(l, r) in edges {
            assert!(l < n_left && r < n_right, "edge ({l}, {r}) out of bounds");
            adj[l].push(r);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        Matcher {
            adj,
            match_l: vec![FREE; n_left],
            match_r: vec![FREE; n_right],
            dist: vec![0; n_left],
            next: vec![0; n_left],
        }
    }

    /// Layers the graph from free left vertices; true if some free right
    /// vertex is reachable.
    fn bfs(&mut self) -> bool {
        let mut queue = VecDeque::new();
        for l in 0..self.adj.len() {
            if self.match_l[l] == FREE {
                self.dist[l] = 0;
                queue.push_back(l);
            } else {
                self.dist[l] = FREE;
            }
        }
        let mut found = false;
        while let Some(l) = queue.pop_front() {
            for &r in &self.adj[l] {
                let m = self.match_r[r];
                if m == FREE {
                    found = true;
                } else if self.dist[m] == FREE {
                    self.dist[m] = self.dist[l] + 1;
                    queue.push_back(m);
                }
            }
        }
        found
    }

    fn dfs(&mut self, l: usize) -> bool {
        while self.next[l] < self.adj[l].len() {
            let r = self.adj[l][self.next[l]];
            self.next[l] += 1;
            let m = self.match_r[r];
            if m == FREE || (self.dist[m] == self.dist[l] + 1 && self.dfs(m)) {
                self.match_l[l] = r;
                self.match_r[r] = l;
                return true;
            }
        }
        self.dist[l] = FREE;
        false
    }

    fn run(&mut self) {
        while self.bfs() {
            self.next.iter_mut().for_each(|n| *n = 0);
            for l in 0..self.adj.len() {
                if self.match_l[l] == FREE {
                    self.dfs(l);
                }
            }
        }
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.match_l
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != FREE)
            .map(|(l, &r)| (l, r))
            .collect()
    }
}

/// Maximum-cardinality matching (Hopcroft–Karp). Pairs are `(left, right)`
/// sorted by left index.
pub fn max_bipartite_matching(
    edges: &[(usize, usize)],
    n_left: usize,
    n_right: usize,
) -> Vec<(usize, usize)> {
    let mut m = Matcher::new(edges, n_left, n_right);
    m.run();
    m.pairs()
}

/// Like [`max_bipartite_matching`] but augments from `initial`, which must
/// be a valid matching over `edges`. Augmenting paths never unmatch a right
/// vertex, so every right vertex matched in `initial` stays matched.
pub fn max_bipartite_matching_from(
    edges: &[(usize, usize)],
    n_left: usize,
    n_right: usize,
    initial: &[(usize, usize)],
) -> Vec<(usize, usize)> {
    let mut m = Matcher::new(edges, n_left, n_right);
    for &(l, r) in initial {
        assert!(
            m.adj[l].binary_search(&r).is_ok(),
            "initial pair ({l}, {r}) is not an edge"
        );
        assert!(
            m.match_l[l] == FREE && m.match_r[r] == FREE,
            "initial pairs are not a matching"
        );
        m.match_l[l] = r;
        m.match_r[r] = l;
    }
    m.run();
    m.pairs()
}

/// Detailed outcome of scoring one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMatch {
    pub counts: Counts,
    /// `(prediction index, reference_pos index)` pairs, indices into the
    /// kept (non-discarded) predictions.
    pub pos_pairs: Vec<(usize, usize)>,
    /// `(prediction index, reference_unk index)` pairs.
    pub unk_pairs: Vec<(usize, usize)>,
}

/// Counts TP/FP/FN for one episode.
///
/// Predictions ending at or before the query start are discarded. The POS
/// references are matched first; the matching is then augmented with the
/// UNK references, which keeps every matched POS reference matched, so the
/// result maximises TP and then the number of predictions absorbed by UNK.
pub fn count_episode(preds: &[Event], episode: &FewShotEpisode, config: &MatchConfig) -> Counts {
    match_episode(preds, episode, config).counts
}

pub fn match_episode(
    preds: &[Event],
    episode: &FewShotEpisode,
    config: &MatchConfig,
) -> EpisodeMatch {
    let kept: Vec<Event> = preds
        .iter()
        .filter(|p| p.offset_s > episode.query_start_s)
        .cloned()
        .collect();
    let discarded = preds.len() - kept.len();
    let n_pos = episode.reference_pos.len();
    let n_unk = episode.reference_unk.len();

    let pos_edges = build_candidate_edges(&kept, &episode.reference_pos, config);
    let pos_matching = max_bipartite_matching(&pos_edges, kept.len(), n_pos);

    let mut all_edges = pos_edges;
    all_edges.extend(
        build_candidate_edges(&kept, &episode.reference_unk, config)
            .into_iter()
            .map(|(i, j)| (i, n_pos + j)),
    );
    let full = max_bipartite_matching_from(&all_edges, kept.len(), n_pos + n_unk, &pos_matching);

    let mut pos_pairs = Vec::new();
    let mut unk_pairs = Vec::new();
    for (i, j) in full {
        if j < n_pos {
            pos_pairs.push((i, j));
        } else {
            unk_pairs.push((i, j - n_pos));
        }
    }
    debug_assert_eq!(pos_pairs.len(), pos_matching.len());
    let tp = pos_pairs.len();
    let unk_matched = unk_pairs.len();
    EpisodeMatch {
        counts: Counts {
            tp,
            fp: kept.len() - tp - unk_matched,
            fn_: n_pos - tp,
            unk_matched,
            discarded,
        },
        pos_pairs,
        unk_pairs,
    }
}

/// How per-episode counts become a dataset score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Counts are summed over every episode of the dataset.
    #[default]
    SummedCounts,
    /// Counts are summed per class; the dataset score is the mean of the
    /// per-class scores.
    ClassMacro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_name: String,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset_name: String,
    pub n_episodes: usize,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub per_class: Vec<ClassScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEpisode {
    pub audio_file: String,
    pub class_name: String,
    pub pos_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub averaging: Averaging,
    pub iou_min: f64,
    pub k_shot: usize,
    pub per_dataset: Vec<DatasetScore>,
    pub overall: f64,
    pub skipped_episodes: Vec<SkippedEpisode>,
}

/// Builds every scorable episode of a table: classes with at least
/// `k_shot` POS events. Classes with some but too few POS events are
/// returned in the skipped list.
pub fn table_episodes(
    table: &AnnotationTable,
    fs: &FewShotConfig,
) -> Result<(Vec<FewShotEpisode>, Vec<SkippedEpisode>)> {
    let mut episodes = Vec::new();
    let mut skipped = Vec::new();
    for class in &table.class_names {
        let n_pos = table.events_of(class, LabelValue::Pos).count();
        if n_pos >= fs.k_shot {
            episodes.push(extract_episode(table, class, fs)?);
        } else if n_pos > 0 {
            skipped.push(SkippedEpisode {
                audio_file: table.audio_file.clone(),
                class_name: class.clone(),
                pos_events: n_pos,
            });
        }
    }
    Ok((episodes, skipped))
}

/// Groups prediction rows by audio file and gives each a class. Rows
/// without a class take the single class of their ground-truth file.
pub fn resolve_predictions(
    rows: Vec<PredictionRow>,
    ground_truth: &BTreeMap<String, AnnotationTable>,
) -> Result<BTreeMap<String, Vec<Event>>> {
    let mut out: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for row in rows {
        let table = ground_truth
            .get(&row.audio_file)
            .ok_or_else(|| Error::UnknownFile(row.audio_file.clone()))?;
        let class_name = match row.class_name {
            Some(c) => c,
            None if table.class_names.len() == 1 => table.class_names.first().cloned().unwrap(),
            None => {
                return Err(Error::ClassMismatch {
                    audio_file: row.audio_file,
                    message: "prediction without a Class column for a multi-class file".into(),
                })
            }
        };
        let event = Event::pos(row.onset_s, row.offset_s, class_name)?;
        out.entry(row.audio_file).or_default().push(event);
    }
    for events in out.values_mut() {
        crate::annotations::sort_events(events);
    }
    Ok(out)
}

/// Scores predictions against ground truth, one episode per (file, class).
///
/// Prediction events carry their class in `class_name`. Ground-truth files
/// with no predictions count every reference as a miss.
pub fn evaluate(
    predictions: &BTreeMap<String, Vec<Event>>,
    ground_truth: &BTreeMap<String, AnnotationTable>,
    dataset_of: &BTreeMap<String, String>,
    config: &MatchConfig,
    fs_config: &FewShotConfig,
    averaging: Averaging,
) -> Result<MatchReport> {
    config.validate()?;
    fs_config.validate()?;
    if let Some(f) = predictions.keys().find(|f| !ground_truth.contains_key(*f)) {
        return Err(Error::UnknownFile(f.clone()));
    }

    // dataset -> class -> (counts, episodes)
    let mut acc: BTreeMap<&str, BTreeMap<String, (Counts, usize)>> = BTreeMap::new();
    let mut skipped_episodes = Vec::new();
    for (file, table) in ground_truth {
        let dataset = dataset_of
            .get(file)
            .ok_or_else(|| Error::MissingDataset(file.clone()))?;
        let (episodes, skipped) = table_episodes(table, fs_config)?;
        skipped_episodes.extend(skipped);
        let preds = predictions.get(file).map(Vec::as_slice).unwrap_or(&[]);
        if let Some(p) = preds
            .iter()
            .find(|p| !episodes.iter().any(|e| e.class_name == p.class_name))
        {
            return Err(Error::ClassMismatch {
                audio_file: file.clone(),
                message: format!("no scorable episode for predicted class {:?}", p.class_name),
            });
        }
        let by_dataset = acc.entry(dataset.as_str()).or_default();
        for ep in &episodes {
            let ep_preds: Vec<Event> = preds
                .iter()
                .filter(|p| p.class_name == ep.class_name)
                .cloned()
                .collect();
            let counts = count_episode(&ep_preds, ep, config);
            let slot = by_dataset.entry(ep.class_name.clone()).or_default();
            slot.0 += counts;
            slot.1 += 1;
        }
    }

    let mut per_dataset = Vec::new();
    for (name, classes) in acc {
        let per_class: Vec<ClassScore> = classes
            .iter()
            .map(|(class_name, (counts, _))| {
                let s = fscore(counts);
                ClassScore {
                    class_name: class_name.clone(),
                    counts: *counts,
                    precision: s.precision,
                    recall: s.recall,
                    fscore: s.fscore,
                }
            })
            .collect();
        let counts: Counts = classes.values().map(|(c, _)| *c).sum();
        let n_episodes = classes.values().map(|(_, n)| *n).sum();
        let s = match averaging {
            Averaging::SummedCounts => fscore(&counts),
            Averaging::ClassMacro => {
                let n = per_class.len().max(1) as f64;
                Scores {
                    precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
                    recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
                    fscore: per_class.iter().map(|c| c.fscore).sum::<f64>() / n,
                }
            }
        };
        per_dataset.push(DatasetScore {
            dataset_name: name.to_string(),
            n_episodes,
            counts,
            precision: s.precision,
            recall: s.recall,
            fscore: s.fscore,
            per_class,
        });
    }
    let overall = if per_dataset.is_empty() {
        0.0
    } else {
        harmonic_mean(&per_dataset.iter().map(|d| d.fscore).collect::<Vec<_>>())?
    };
    Ok(MatchReport {
        averaging,
        iou_min: config.iou_min,
        k_shot: fs_config.k_shot,
        per_dataset,
        overall,
        skipped_episodes,
    })
}

impl MatchReport {
    /// Plain-text table, scores to four decimals.
    pub fn render_table(&self) -> String {
        let width = self
            .per_dataset
            .iter()
            .map(|d| d.dataset_name.len())
            .chain(["dataset".len(), "overall".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>9}  {:>9}  {:>9}",
            "dataset", "TP", "FP", "FN", "precision", "recall", "F"
        );
        for d in &self.per_dataset {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>9.4}  {:>9.4}  {:>9.4}",
                d.dataset_name,
                d.counts.tp,
                d.counts.fp,
                d.counts.fn_,
                d.precision,
                d.recall,
                d.fscore
            );
        }
        let _ = writeln!(out, "{:<width$}  {:>49.4}", "overall", self.overall);
        let discarded: usize = self.per_dataset.iter().map(|d| d.counts.discarded).sum();
        let unk: usize = self.per_dataset.iter().map(|d| d.counts.unk_matched).sum();
        let _ = writeln!(
            out,
            "discarded predictions: {discarded}; predictions matched to UNK: {unk}"
        );
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
