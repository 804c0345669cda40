//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fsbio::annotations::{
    parse_annotation_csv, write_annotation_csv, write_prediction_csv_with_class, AnnotationTable,
    Event, FewShotEpisode, LabelValue,
};
use fsbio::dsp::{
    hann_window, pcen, stft_magnitude, write_wav_pcm16, PcenParams, Spectrogram, Waveform,
};
use fsbio::pipeline::{run_benchmark, Detector, PipelineConfig, ProtoParams, TemplateParams};
use fsbio::postprocess::{median_filter, merge_events};
use fsbio::proto_detector::{pos_probability, probabilities_to_events, FrameClock, SegmentGrid};
use fsbio::scoring::{
    count_episode, fscore, harmonic_mean, interval_iou, max_bipartite_matching, Averaging, Counts,
    MatchConfig, MatchReport,
};
use fsbio::synth::{generate_benchmark_files, standard_benchmark, BenchmarkFile};
use fsbio::template_match::{curve_to_events, xcorr_curve, DetectionCurve, Template};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BENCH_SEED: u64 = 2021;

struct Gate {
    failed: usize,
}

impl Gate {
    fn check(&mut self, name: &str, elapsed: Duration, outcome: Result<String, String>) {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({:.2} s)", elapsed.as_secs_f64()),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name}: {detail} ({:.2} s)", elapsed.as_secs_f64());
            }
        }
    }

    fn run(&mut self, name: &str, budget_s: f64, f: impl FnOnce() -> Result<String, String>) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed.as_secs_f64() > budget_s => {
                Err(format!("{d}; exceeded {budget_s} s budget"))
            }
            o => o,
        };
        self.check(name, elapsed, outcome);
    }
}

fn ev(on: f64, off: f64, value: LabelValue) -> Event {
    Event::new(on, off, "Q", value).unwrap()
}

fn random_interval(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let on: f64 = rng.random_range(0.0..59.0);
    let len = rng.random_range(0.05..(60.0 - on).min(4.0));
    (on, on + len)
}

/// A prediction that is either unrelated or a jittered copy of a reference.
fn random_prediction(rng: &mut ChaCha8Rng, refs: &[(f64, f64)]) -> (f64, f64) {
    if !refs.is_empty() && rng.random_bool(0.7) {
        let (on, off) = refs[rng.random_range(0..refs.len())];
        let len = off - on;
        let a = (on + rng.random_range(-0.8..0.8) * len).clamp(0.0, 59.9);
        let b = (off + rng.random_range(-0.8..0.8) * len).clamp(a + 0.01, 60.0);
        (a, b)
    } else {
        random_interval(rng)
    }
}

fn overlap_ratio(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    inter / ((a.1 - a.0) + (b.1 - b.0) - inter)
}

/// Best `(tp, unk)` pair, lexicographically, by exhaustive assignment of
/// each prediction to nothing or an unused reference.
fn oracle_best(
    i: usize,
    used: u32,
    preds: &[(f64, f64)],
    pos: &[(f64, f64)],
    unk: &[(f64, f64)],
) -> (usize, usize) {
    if i == preds.len() {
        return (0, 0);
    }
    let mut best = oracle_best(i + 1, used, preds, pos, unk);
    for (j, r) in pos.iter().chain(unk).enumerate() {
        if used & (1 << j) == 0 && overlap_ratio(preds[i], *r) >= 0.3 {
            let (tp, u) = oracle_best(i + 1, used | (1 << j), preds, pos, unk);
            let cand = if j < pos.len() {
                (tp + 1, u)
            } else {
                (tp, u + 1)
            };
            best = best.max(cand);
        }
    }
    best
}

fn episode_of(query_start: f64, pos: &[(f64, f64)], unk: &[(f64, f64)]) -> FewShotEpisode {
    FewShotEpisode {
        audio_file: "a.wav".into(),
        class_name: "Q".into(),
        support: vec![],
        query_start_s: query_start,
        reference_pos: pos
            .iter()
            .map(|&(a, b)| ev(a, b, LabelValue::Pos))
            .collect(),
        reference_unk: unk
            .iter()
            .map(|&(a, b)| ev(a, b, LabelValue::Unk))
            .collect(),
        support_neg: vec![],
        support_unk: vec![],
    }
}

fn matching_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n_episodes = 600;
    let mut total_tp = 0;
    let mut total_unk = 0;
    for k in 0..n_episodes {
        let pos: Vec<_> = (0..rng.random_range(0..=8))
            .map(|_| random_interval(&mut rng))
            .collect();
        let unk: Vec<_> = (0..rng.random_range(0..=3))
            .map(|_| random_interval(&mut rng))
            .collect();
        let all: Vec<_> = pos.iter().chain(&unk).copied().collect();
        let preds: Vec<_> = (0..rng.random_range(0..=8))
            .map(|_| random_prediction(&mut rng, &all))
            .collect();
        let query_start = if rng.random_bool(0.3) {
            rng.random_range(0.0..3.0)
        } else {
            0.0
        };
        let kept: Vec<_> = preds
            .iter()
            .copied()
            .filter(|p| p.1 > query_start)
            .collect();
        let (tp, u) = oracle_best(0, 0, &kept, &pos, &unk);
        let expected = (tp, kept.len() - tp - u, pos.len() - tp);
        let pred_events: Vec<Event> = preds
            .iter()
            .map(|&(a, b)| ev(a, b, LabelValue::Pos))
            .collect();
        let c = count_episode(
            &pred_events,
            &episode_of(query_start, &pos, &unk),
            &MatchConfig::default(),
        );
        if (c.tp, c.fp, c.fn_) != expected {
            return Err(format!(
                "episode {k}: got {:?}, oracle {expected:?}",
                (c.tp, c.fp, c.fn_)
            ));
        }
        total_tp += tp;
        total_unk += u;
    }
    Ok(format!(
        "{n_episodes} episodes agree ({total_tp} TP, {total_unk} UNK absorptions)"
    ))
}

fn brute_force_matching(adj: &[u32], i: usize, used: u32) -> usize {
    if i == adj.len() {
        return 0;
    }
    let mut best = brute_force_matching(adj, i + 1, used);
    for j in 0..32 {
        if adj[i] & (1 << j) != 0 && used & (1 << j) == 0 {
            best = best.max(1 + brute_force_matching(adj, i + 1, used | (1 << j)));
        }
    }
    best
}

fn hopcroft_karp() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n_graphs = 1500;
    for g in 0..n_graphs {
        let nl = rng.random_range(0..=8);
        let nr = rng.random_range(0..=8);
        let density = rng.random_range(0.0..1.0);
        let mut edges = Vec::new();
        let mut adj = vec![0u32; nl];
        for (i, row) in adj.iter_mut().enumerate() {
            for j in 0..nr {
                if rng.random_bool(density) {
                    edges.push((i, j));
                    *row |= 1 << j;
                }
            }
        }
        let m = max_bipartite_matching(&edges, nl, nr);
        let valid = m.iter().all(|e| edges.contains(e))
            && (0..nl).all(|i| m.iter().filter(|e| e.0 == i).count() <= 1)
            && (0..nr).all(|j| m.iter().filter(|e| e.1 == j).count() <= 1);
        let best = brute_force_matching(&adj, 0, 0);
        if !valid || m.len() != best {
            return Err(format!(
                "graph {g}: matching {m:?} (valid: {valid}), brute force size {best}"
            ));
        }
    }
    Ok(format!("{n_graphs} graphs agree"))
}

fn metric_arithmetic() -> Result<String, String> {
    let f = format!(
        "{:.4}",
        fscore(&Counts {
            tp: 3,
            fp: 1,
            fn_: 2,
            ..Counts::default()
        })
        .fscore
    );
    let h = format!(
        "{:.4}",
        harmonic_mean(&[1.0, 0.5]).map_err(|e| e.to_string())?
    );
    if f == "0.6667" && h == "0.6667" {
        Ok(format!("F = {f}, H = {h}"))
    } else {
        Err(format!("F = {f}, H = {h}, expected 0.6667 for both"))
    }
}

fn iou_edge() -> Result<String, String> {
    let ep = episode_of(0.0, &[(0.0, 1.0)], &[]);
    let cfg = MatchConfig::default();
    let exact = interval_iou((0.0, 0.3), (0.0, 1.0));
    let below = interval_iou((0.0, 0.3 - 1e-9), (0.0, 1.0));
    let tp_exact = count_episode(&[ev(0.0, 0.3, LabelValue::Pos)], &ep, &cfg).tp;
    let tp_below = count_episode(&[ev(0.0, 0.3 - 1e-9, LabelValue::Pos)], &ep, &cfg).tp;
    if exact == 0.3 && below < 0.3 && tp_exact == 1 && tp_below == 0 {
        Ok("IoU 0.3 matched, 0.3 - 1e-9 not".into())
    } else {
        Err(format!(
            "iou {exact} -> tp {tp_exact}; iou {below} -> tp {tp_below}"
        ))
    }
}

fn describe(report: &MatchReport) -> String {
    let per: Vec<String> = report
        .per_dataset
        .iter()
        .map(|d| format!("{} {:.4}", d.dataset_name, d.fscore))
        .collect();
    format!("overall F {:.4} [{}]", report.overall, per.join(", "))
}

fn bench(files: &[BenchmarkFile], detector: Detector) -> Result<MatchReport, String> {
    run_benchmark(
        files,
        &detector,
        &PipelineConfig::default(),
        &MatchConfig::default(),
        Averaging::SummedCounts,
    )
    .map(|(_, r)| r)
    .map_err(|e| e.to_string())
}

fn template_end_to_end() -> Result<String, String> {
    let files = generate_benchmark_files(&standard_benchmark(BENCH_SEED, 10, 20.0, 0))
        .map_err(|e| e.to_string())?;
    let report = bench(&files, Detector::Template(TemplateParams::default()))?;
    let detail = describe(&report);
    if report.overall >= 0.90 {
        Ok(detail)
    } else {
        Err(format!("{detail}, need >= 0.90"))
    }
}

fn proto_end_to_end() -> Result<String, String> {
    let files = generate_benchmark_files(&standard_benchmark(BENCH_SEED, 10, 20.0, 8))
        .map_err(|e| e.to_string())?;
    let report = bench(&files, Detector::Proto(ProtoParams::default()))?;
    let swapped = bench(
        &files,
        Detector::Proto(ProtoParams {
            swap_prototypes: true,
            ..ProtoParams::default()
        }),
    )?;
    let detail = format!("{}; swapped {:.4}", describe(&report), swapped.overall);
    if report.overall >= 0.80 && report.overall > swapped.overall {
        Ok(detail)
    } else {
        Err(format!("{detail}, need >= 0.80 and above swapped"))
    }
}

/// Every byte a run produces: audio, annotations, predictions, reports.
fn run_artifacts() -> Result<Vec<Vec<u8>>, String> {
    let files = generate_benchmark_files(&standard_benchmark(BENCH_SEED, 2, 20.0, 8))
        .map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for f in &files {
        out.push(write_wav_pcm16(&f.episode.waveform).map_err(|e| e.to_string())?);
        out.push(write_annotation_csv(&f.episode.table).into_bytes());
    }
    for detector in [
        Detector::Template(TemplateParams::default()),
        Detector::Proto(ProtoParams::default()),
    ] {
        let (dets, report) = run_benchmark(
            &files,
            &detector,
            &PipelineConfig::default(),
            &MatchConfig::default(),
            Averaging::SummedCounts,
        )
        .map_err(|e| e.to_string())?;
        for d in &dets {
            out.push(write_prediction_csv_with_class(&d.audio_file, &d.events).into_bytes());
        }
        out.push(report.to_json().map_err(|e| e.to_string())?.into_bytes());
        out.push(report.render_table().into_bytes());
    }
    Ok(out)
}

fn determinism() -> Result<String, String> {
    let a = run_artifacts()?;
    let b = run_artifacts()?;
    if a == b {
        Ok(format!(
            "{} artifacts, {} bytes, identical",
            a.len(),
            a.iter().map(Vec::len).sum::<usize>()
        ))
    } else {
        let first = a.iter().zip(&b).position(|(x, y)| x != y);
        Err(format!("artifact {first:?} differs"))
    }
}

fn dsp_checks() -> Result<String, String> {
    // Parseval, one-sided spectrum of each Hann-windowed frame
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let win = 1024;
    let w = Waveform::new(
        (0..win * 8).map(|_| rng.random_range(-1.0..1.0)).collect(),
        22050,
    )
    .unwrap();
    let s = stft_magnitude(&w, win, 256).map_err(|e| e.to_string())?;
    let h = hann_window(win);
    let mut worst_parseval: f64 = 0.0;
    for t in 0..s.n_frames {
        let seg = &w.samples[t * 256..t * 256 + win];
        let time_energy: f64 = seg.iter().zip(&h).map(|(x, h)| (x * h).powi(2)).sum();
        let m = s.frame(t);
        let inner: f64 = m[1..win / 2].iter().map(|v| v * v).sum();
        let spec_energy = m[0] * m[0] + 2.0 * inner + m[win / 2] * m[win / 2];
        worst_parseval = worst_parseval
            .max((spec_energy - win as f64 * time_energy).abs() / (win as f64 * time_energy));
    }

    // PCEN of a constant input against its closed form
    let p = PcenParams::default();
    let constant = Spectrogram {
        values: vec![1.0; 64],
        n_frames: 64,
        n_bins: 1,
        hop_s: 0.01,
        t0_s: 0.0,
        bin_axis: vec![0.0],
    };
    let expected =
        (1.0 / (1.0f64 + p.eps).powf(p.gain) + p.bias).powf(p.power) - p.bias.powf(p.power);
    let out = pcen(&constant, &p).map_err(|e| e.to_string())?;
    let worst_pcen = out
        .values
        .iter()
        .map(|v| (v - expected).abs())
        .fold(0.0, f64::max);

    // Pearson correlation is invariant to affine maps of the query
    let n_bins = 16;
    let q: Vec<f64> = (0..40 * n_bins)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let spec = |values: Vec<f64>| Spectrogram {
        values,
        n_frames: 40,
        n_bins,
        hop_s: 0.01,
        t0_s: 0.0,
        bin_axis: vec![0.0; n_bins],
    };
    let tpl = Template {
        patch: (0..6 * n_bins)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
        n_frames: 6,
        n_bins,
        source_event: ev(0.0, 0.06, LabelValue::Pos),
        start_frame: 0,
    };
    let base = xcorr_curve(&spec(q.clone()), &tpl).map_err(|e| e.to_string())?;
    let scaled = xcorr_curve(&spec(q.iter().map(|v| 3.0 * v + 2.0).collect()), &tpl)
        .map_err(|e| e.to_string())?;
    let worst_affine = base
        .scores
        .iter()
        .zip(&scaled.scores)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let detail =
        format!("parseval {worst_parseval:.1e}, pcen {worst_pcen:.1e}, affine {worst_affine:.1e}");
    if worst_parseval < 1e-6 && worst_pcen < 1e-9 && worst_affine < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..60.0, 0.01f64..5.0).prop_map(|(a, d)| (a, a + d))
}

fn check_property<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<u64, String>
where
    S::Value: std::fmt::Debug,
{
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, rng);
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))?;
    Ok(cases as u64)
}

fn events_of(spans: &[(f64, f64)]) -> Vec<Event> {
    spans
        .iter()
        .map(|&(a, b)| ev(a, b, LabelValue::Pos))
        .collect()
}

fn property_suites() -> Result<String, String> {
    const CASES: u32 = 1500;
    let mut total = 0;

    total += check_property(
        "iou symmetry and bounds",
        CASES,
        (interval(), interval()),
        |(a, b)| {
            let x = interval_iou(a, b);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, interval_iou(b, a));
            Ok(())
        },
    )?;

    let episode_case = (
        prop::collection::vec(interval(), 0..8),
        prop::collection::vec(interval(), 0..8),
        prop::collection::vec(interval(), 0..3),
    );
    total += check_property(
        "count conservation",
        CASES,
        episode_case,
        |(preds, pos, unk)| {
            let c = count_episode(
                &events_of(&preds),
                &episode_of(0.0, &pos, &unk),
                &MatchConfig::default(),
            );
            prop_assert_eq!(c.tp + c.fn_, pos.len());
            prop_assert_eq!(c.tp + c.fp + c.unk_matched, preds.len());
            Ok(())
        },
    )?;

    let removal_case = (
        prop::collection::vec(interval(), 0..8),
        prop::collection::vec(interval(), 1..8),
    );
    total += check_property(
        "tp monotone in predictions",
        CASES,
        removal_case,
        |(preds, pos)| {
            let events = events_of(&preds);
            let ep = episode_of(0.0, &pos, &[]);
            let cfg = MatchConfig::default();
            let full = count_episode(&events, &ep, &cfg);
            let fewer = count_episode(&events[..events.len().saturating_sub(1)], &ep, &cfg);
            prop_assert!(fewer.tp <= full.tp && full.tp <= fewer.tp + 1);
            Ok(())
        },
    )?;

    total += check_property(
        "median filter",
        CASES,
        prop::collection::vec(-10.0f64..10.0, 0..50),
        |curve| {
            prop_assert_eq!(median_filter(&curve, 1).unwrap(), curve.clone());
            let m = median_filter(&curve, 5).unwrap();
            prop_assert_eq!(m.len(), curve.len());
            let (lo, hi) = curve
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                    (l.min(v), h.max(v))
                });
            prop_assert!(m.iter().all(|v| (lo..=hi).contains(v)));
            Ok(())
        },
    )?;

    let merge_case = (prop::collection::vec(interval(), 0..12), 0.0f64..1.0);
    total += check_property("merge idempotence", CASES, merge_case, |(spans, gap)| {
        let once = merge_events(&events_of(&spans), gap);
        prop_assert_eq!(merge_events(&once, gap), once.clone());
        prop_assert!(once.windows(2).all(|w| w[1].onset_s - w[0].offset_s > gap));
        Ok(())
    })?;

    total += check_property(
        "probability complement",
        CASES,
        (0.0f64..100.0, 0.0f64..100.0),
        |(dp, dn)| {
            let p = pos_probability(dp, dn);
            prop_assert!((p + pos_probability(dn, dp) - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&p));
            Ok(())
        },
    )?;

    let curve_case = (
        prop::collection::vec(-1.0f64..1.0, 0..60),
        -1.0f64..1.0,
        0.0f64..0.5,
        1usize..12,
    );
    total += check_property(
        "template threshold monotonicity",
        CASES,
        curve_case,
        |(scores, lo, step, len)| {
            let curve = DetectionCurve {
                scores,
                hop_s: 0.01,
                t0_s: 0.0,
            };
            let low = curve_to_events(&curve, lo, len as f64, "Q");
            let high = curve_to_events(&curve, lo + step, len as f64, "Q");
            prop_assert!(covered(&high, &low));
            Ok(())
        },
    )?;

    let prob_case = (
        prop::collection::vec(0.0f64..1.0, 1..40),
        0.0f64..1.0,
        0.0f64..0.5,
        2usize..10,
    );
    total += check_property(
        "proto threshold monotonicity",
        CASES,
        prob_case,
        |(probs, lo, step, len)| {
            let grid = SegmentGrid {
                seg_len_frames: len,
                seg_hop_frames: len / 2,
                starts: (0..probs.len()).map(|i| i * (len / 2)).collect(),
            };
            let clock = FrameClock {
                t0_s: 0.0,
                hop_s: 0.01,
            };
            let low = probabilities_to_events(&probs, &grid, lo, clock, 0.0, "Q");
            let high = probabilities_to_events(&probs, &grid, lo + step, clock, 0.0, "Q");
            prop_assert!(covered(&high, &low));
            Ok(())
        },
    )?;

    let row = (
        0u32..600_000,
        1u32..50_000,
        prop::sample::select(vec![LabelValue::Pos, LabelValue::Neg, LabelValue::Unk]),
    );
    let table_case = prop::collection::vec(row, 1..20);
    total += check_property("annotation csv round trip", CASES, table_case, |rows| {
        let events: Vec<Event> = rows
            .iter()
            .map(|&(on, len, v)| {
                Event::new(on as f64 / 1000.0, (on + len) as f64 / 1000.0, "Q", v).unwrap()
            })
            .collect();
        let table =
            AnnotationTable::new("r.wav", BTreeSet::from(["Q".to_string()]), events).unwrap();
        let back = parse_annotation_csv(&write_annotation_csv(&table)).unwrap();
        prop_assert_eq!(back, table);
        Ok(())
    })?;

    Ok(format!("{total} cases over 9 properties"))
}

/// Every event of `inner` lies inside some event of `outer`.
fn covered(inner: &[Event], outer: &[Event]) -> bool {
    inner.iter().all(|e| {
        outer
            .iter()
            .any(|o| o.onset_s <= e.onset_s + 1e-9 && e.offset_s <= o.offset_s + 1e-9)
    })
}

fn main() -> ExitCode {
    let mut gate = Gate { failed: 0 };
    gate.run("matching oracle equivalence", 10.0, matching_oracle);
    gate.run("hopcroft-karp cardinality", 5.0, hopcroft_karp);
    gate.run("metric arithmetic", 1.0, metric_arithmetic);
    gate.run("iou threshold edge", 1.0, iou_edge);
    gate.run("template matching end-to-end", 60.0, template_end_to_end);
    gate.run("prototype detector end-to-end", 120.0, proto_end_to_end);
    gate.run("determinism", 120.0, determinism);
    gate.run("dsp numerics", 5.0, dsp_checks);
    gate.run("property suites", 60.0, property_suites);
    if gate.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failed);
        ExitCode::FAILURE
    }
}
