//! Event post-processing shared by both detectors.

use serde::{Deserialize, Serialize};

use crate::annotations::{mean_duration, sort_events, Event};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Events shorter than this fraction of the mean shot duration are dropped.
    pub min_duration_factor: f64,
    pub merge_gap_s: f64,
    /// Odd kernel applied to score/probability curves before thresholding.
    pub median_kernel: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            min_duration_factor: 0.5,
            merge_gap_s: 0.1,
            median_kernel: 3,
        }
    }
}

fn valid_non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !valid_non_negative(self.min_duration_factor) || !valid_non_negative(self.merge_gap_s) {
            return Err(Error::InvalidConfig(format!(
                "negative post-processing parameter in {self:?}"
            )));
        }
        if self.median_kernel == 0 || self.median_kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "median kernel must be odd, got {}",
                self.median_kernel
            )));
        }
        Ok(())
    }

    /// Merge, then drop short events.
    pub fn apply(&self, events: Vec<Event>, support: &[Event]) -> Vec<Event> {
        let merged = merge_events(&events, self.merge_gap_s);
        filter_min_duration(&merged, support, self.min_duration_factor)
    }
}

/// Lower median, so even-sized edge windows return a sample value.
fn median_of(window: &mut [f64]) -> f64 {
    window.sort_by(f64::total_cmp);
    window[(window.len() - 1) / 2]
}

/// Running median with a centered window that shrinks at the edges.
pub fn median_filter(curve: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "median kernel must be odd, got {kernel}"
        )));
    }
    if kernel == 1 {
        return Ok(curve.to_vec());
    }
    let half = kernel / 2;
    let n = curve.len();
    let mut buf = Vec::with_capacity(kernel);
    Ok((0..n)
        .map(|i| {
            buf.clear();
            buf.extend_from_slice(&curve[i.saturating_sub(half)..(i + half + 1).min(n)]);
            median_of(&mut buf)
        })
        .collect())
}

/// Merges events whose gap to the previous merged event is at most
/// `merge_gap_s`. The output is sorted and non-overlapping.
pub fn merge_events(events: &[Event], merge_gap_s: f64) -> Vec<Event> {
    let mut sorted = events.to_vec();
    sort_events(&mut sorted);
    let mut out: Vec<Event> = Vec::with_capacity(sorted.len());
    for e in sorted {
        match out.last_mut() {
            Some(last) if e.onset_s - last.offset_s <= merge_gap_s => {
                last.offset_s = last.offset_s.max(e.offset_s);
            }
            _ => out.push(e),
        }
    }
    out
}

/// Drops events shorter than `factor` times the mean support duration.
pub fn filter_min_duration(events: &[Event], support: &[Event], factor: f64) -> Vec<Event> {
    let min = factor * mean_duration(support);
    events
        .iter()
        .filter(|e| e.duration() >= min)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(on: f64, off: f64) -> Event {
        Event::pos(on, off, "Q").unwrap()
    }

    fn naive_median(curve: &[f64], kernel: usize) -> Vec<f64> {
        let half = kernel as isize / 2;
        (0..curve.len() as isize)
            .map(|i| {
                let mut w: Vec<f64> = (i - half..=i + half)
                    .filter(|&j| j >= 0 && (j as usize) < curve.len())
                    .map(|j| curve[j as usize])
                    .collect();
                w.sort_by(|a, b| a.partial_cmp(b).unwrap());
                w[(w.len() - 1) / 2]
            })
            .collect()
    }

    #[test]
    fn median_examples() {
        let c = [0.3, 0.9, 0.1, 0.5];
        assert_eq!(median_filter(&c, 1).unwrap(), c.to_vec());
        assert_eq!(
            median_filter(&[0.0, 1.0, 0.0], 3).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        assert!(median_filter(&c, 2).is_err());
    }

    #[test]
    fn merge_examples() {
        let near = merge_events(&[ev(0.0, 1.0), ev(1.05, 2.0)], 0.1);
        assert_eq!(near, vec![ev(0.0, 2.0)]);
        let far = vec![ev(0.0, 1.0), ev(1.2, 2.0)];
        assert_eq!(merge_events(&far, 0.1), far);
    }

    #[test]
    fn min_duration_examples() {
        let support = vec![ev(0.0, 0.2), ev(1.0, 1.2)];
        let events = vec![ev(2.0, 2.05), ev(3.0, 3.1), ev(4.0, 4.3)];
        assert_eq!(filter_min_duration(&events, &support, 0.0), events);
        assert_eq!(
            filter_min_duration(&events, &support, 0.5),
            events[1..].to_vec()
        );
    }

    #[test]
    fn config_validation() {
        assert!(PostprocessConfig::default().validate().is_ok());
        assert!(PostprocessConfig {
            median_kernel: 4,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PostprocessConfig {
            merge_gap_s: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn arb_events() -> impl Strategy<Value = Vec<Event>> {
        prop::collection::vec((0.0..100.0f64, 0.001..3.0f64), 0..30)
            .prop_map(|v| v.into_iter().map(|(a, d)| ev(a, a + d)).collect())
    }

    proptest! {
        #[test]
        fn median_matches_sort_oracle(curve in prop::collection::vec(-5.0..5.0f64, 1..60), k in 0usize..5) {
            let kernel = 2 * k + 1;
            prop_assert_eq!(median_filter(&curve, kernel).unwrap(), naive_median(&curve, kernel));
        }

        #[test]
        fn merge_idempotent(events in arb_events(), gap in 0.0..1.0f64) {
            let once = merge_events(&events, gap);
            prop_assert_eq!(merge_events(&once, gap), once.clone());
            for w in once.windows(2) {
                prop_assert!(w[0].offset_s < w[1].onset_s);
            }
        }

        #[test]
        fn min_duration_is_ordered_subset(events in arb_events(), support in arb_events(), factor in 0.0..2.0f64) {
            let out = filter_min_duration(&events, &support, factor);
            let mut it = events.iter();
            for e in &out {
                prop_assert!(it.any(|x| x == e));
            }
        }
    }
}
