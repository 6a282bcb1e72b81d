use std::io::Write;

use serde::{Deserialize, Serialize};

use super::loss::LossWindow;
use crate::error::{Error, Result};
use crate::l2d::ScenarioLibrary;

/// One pairwise comparison: under context `context_id`, `winner` was closer
/// to what happened than `loser`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceItem {
    pub context_id: String,
    pub winner: String,
    pub loser: String,
    pub t: usize,
    #[serde(skip)]
    pub context: String,
}

/// Emits `(c_t, closer, farther)` for every scenario pair whose distances to
/// the realized window differ; exact ties emit nothing.
pub fn build_preferences(window: &LossWindow, lib: &ScenarioLibrary) -> Result<Vec<PreferenceItem>> {
    if !window.is_complete() {
        return Err(Error::IncompleteWindow(window.t));
    }
    let banks = lib.banks(window.t, window.len());
    let dist: Vec<f64> = banks.iter().map(|b| (&window.w_real - b).norm()).collect();
    let ids = lib.ids();
    let mut out = Vec::new();
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let (winner, loser) = if dist[a] < dist[b] {
                (a, b)
            } else if dist[b] < dist[a] {
                (b, a)
            } else {
                continue;
            };
            out.push(PreferenceItem {
                context_id: window.feats.context_id.clone(),
                winner: ids[winner].clone(),
                loser: ids[loser].clone(),
                t: window.t,
                context: window.context.clone(),
            });
        }
    }
    Ok(out)
}

/// Accumulated comparisons with a batch trigger.
#[derive(Debug, Clone)]
pub struct PreferenceDataset {
    items: Vec<PreferenceItem>,
    threshold: usize,
    consumed: usize,
}

impl PreferenceDataset {
    pub const ROBOT_THRESHOLD: usize = 240;
    pub const ENERGY_THRESHOLD: usize = 500;

    pub fn new(threshold: usize) -> Result<Self> {
        if threshold == 0 {
            return Err(Error::InvalidParameter("preference batch threshold must be positive".into()));
        }
        Ok(PreferenceDataset { items: Vec::new(), threshold, consumed: 0 })
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn items(&self) -> &[PreferenceItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn extend(&mut self, items: Vec<PreferenceItem>) {
        debug_assert!(items.iter().all(|i| i.winner != i.loser));
        self.items.extend(items);
    }

    /// Items gathered since the last batch.
    pub fn pending(&self) -> &[PreferenceItem] {
        &self.items[self.consumed..]
    }

    pub fn batch_ready(&self) -> bool {
        self.pending().len() >= self.threshold
    }

    /// Returns the pending items and marks them consumed.
    pub fn take_batch(&mut self) -> Vec<PreferenceItem> {
        let batch = self.pending().to_vec();
        self.consumed = self.items.len();
        batch
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        for item in &self.items {
            csv.serialize(item).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        csv.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::l2d::{featurize, ScenarioSpec, TrajectorySpec};
    use crate::linalg::Vector;

    fn lib(values: &[f64]) -> ScenarioLibrary {
        let specs = values
            .iter()
            .enumerate()
            .map(|(i, v)| ScenarioSpec {
                id: format!("s{}", i + 1),
                label: String::new(),
                keywords: vec![],
                trajectory: TrajectorySpec::Constant { value: vec![*v] },
            })
            .collect();
        ScenarioLibrary::new(1, 100.0, specs, None).unwrap()
    }

    fn window(lib: &ScenarioLibrary) -> LossWindow {
        let feats = featurize("storm", &lib.vocabulary());
        LossWindow::complete(3, feats, "storm".into(), &[Vector::from_element(1, 0.0)])
    }

    #[test]
    fn strict_pair() {
        let l = lib(&[1.0, 2.0]);
        let items = build_preferences(&window(&l), &l).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!((items[0].winner.as_str(), items[0].loser.as_str(), items[0].t), ("s1", "s2", 3));
    }

    #[test]
    fn ties_are_dropped() {
        let l = lib(&[1.0, -1.0]);
        assert!(build_preferences(&window(&l), &l).unwrap().is_empty());
    }

    #[test]
    fn strict_total_order() {
        let l = lib(&[1.0, 2.0, 3.0]);
        let pairs: Vec<_> = build_preferences(&window(&l), &l)
            .unwrap()
            .into_iter()
            .map(|i| (i.winner, i.loser))
            .collect();
        let expected = [("s1", "s2"), ("s1", "s3"), ("s2", "s3")];
        assert_eq!(pairs.len(), 3);
        for (got, want) in pairs.iter().zip(expected) {
            assert_eq!((got.0.as_str(), got.1.as_str()), want);
        }
    }

    #[test]
    fn batches_and_csv() {
        let l = lib(&[1.0, 2.0]);
        let mut data = PreferenceDataset::new(2).unwrap();
        data.extend(build_preferences(&window(&l), &l).unwrap());
        assert!(!data.batch_ready());
        data.extend(build_preferences(&window(&l), &l).unwrap());
        assert!(data.batch_ready());
        assert_eq!(data.take_batch().len(), 2);
        assert!(!data.batch_ready());
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("context_id,winner,loser,t\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
