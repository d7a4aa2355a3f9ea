use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::sampler::decode_viterbi;
use super::{FeatureMatrix, ModelFit, SeriesHMM, StateId, StateSequence};
use crate::data::Dataset;
use crate::{Error, Result};

/// What [`prune_rare_states`] did. State ids refer to the unpruned fit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneReport {
    pub threshold: f64,
    /// States dropped from every series.
    pub removed: Vec<StateId>,
    /// Series that would have lost every state, with the one they kept.
    pub fallbacks: Vec<(String, StateId)>,
    /// Series whose sequence was re-decoded.
    pub redecoded: Vec<String>,
    /// Old id → new id for the surviving states.
    pub mapping: Vec<Option<StateId>>,
}

/// Removes states active in fewer than `threshold · N` series, then
/// re-decodes the most likely path of every series that lost a state.
///
/// A series left with no state keeps the one its current sequence visits
/// most (lowest id on ties); such states survive globally.
pub fn prune_rare_states(fit: &ModelFit, dataset: &Dataset, threshold: f64) -> Result<ModelFit> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(alloc::format!("prune threshold {threshold} is outside [0, 1]")));
    }
    if fit.num_series() != dataset.len() || fit.hmms.iter().zip(&dataset.series).any(|(h, s)| h.id != s.id) {
        return Err(Error::InvalidParameter("fit and dataset list different series".into()));
    }
    let n = fit.num_series();
    let k = fit.num_states();
    let cutoff = threshold * n as f64;
    let rare: Vec<bool> = fit.features.counts().iter().map(|&m| (m as f64) < cutoff).collect();

    let mut report = PruneReport { threshold, ..PruneReport::default() };
    let mut rows: Vec<Vec<StateId>> = Vec::with_capacity(n);
    for (i, seq) in fit.sequences.iter().enumerate() {
        let active = fit.features.row_active(i);
        let kept: Vec<StateId> = active.iter().copied().filter(|&s| !rare[s]).collect();
        if kept.is_empty() {
            let mut usage = vec![0usize; k];
            for &z in &seq.z {
                usage[z] += 1;
            }
            let best = active.iter().copied().fold(active[0], |b, s| if usage[s] > usage[b] { s } else { b });
            report.fallbacks.push((seq.id.clone(), best));
            rows.push(vec![best]);
        } else {
            rows.push(kept);
        }
    }

    let mut used = vec![false; k];
    for row in &rows {
        for &s in row {
            used[s] = true;
        }
    }
    report.removed = (0..k).filter(|&s| !used[s]).collect();
    let mut next = 0;
    report.mapping = used
        .iter()
        .map(|&u| {
            u.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    let map = |s: StateId| report.mapping[s].expect("kept state has a new id");

    let states = fit.states.iter().zip(&used).filter(|(_, u)| **u).map(|(s, _)| s.clone()).collect();
    let mut features = FeatureMatrix::zeros(n, next);
    let mut hmms = Vec::with_capacity(n);
    let mut sequences = Vec::with_capacity(n);
    let pruned_states: Vec<_> = fit.states.clone();
    for (i, row) in rows.iter().enumerate() {
        for &s in row {
            features.set(i, map(s), true);
        }
        let old = &fit.hmms[i];
        if row.as_slice() == old.active() {
            hmms.push(old.remapped(map));
            sequences.push(StateSequence {
                id: fit.sequences[i].id.clone(),
                z: fit.sequences[i].z.iter().map(|&z| map(z)).collect(),
            });
            continue;
        }
        let pos: Vec<usize> = row.iter().map(|&s| old.position(s).expect("kept state was active")).collect();
        let weights = nalgebra::DMatrix::from_fn(pos.len(), pos.len(), |a, b| old.trans()[(pos[a], pos[b])]);
        let restricted = SeriesHMM::from_weights(old.id.clone(), row.clone(), weights);
        let z = decode_viterbi(&dataset.series[i], &restricted, &pruned_states);
        report.redecoded.push(old.id.clone());
        hmms.push(restricted.remapped(map));
        sequences.push(StateSequence { id: fit.sequences[i].id.clone(), z: z.into_iter().map(map).collect() });
    }

    let mut diagnostics = fit.diagnostics.clone();
    diagnostics.pruning = Some(report);
    Ok(ModelFit { states, features, hmms, sequences, hyper: fit.hyper.clone(), diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ChannelSchema, MultiSeries};
    use crate::model::{ARState, Diagnostics, Hyperparams};
    use nalgebra::DMatrix;

    fn toy(n: usize, rows: &[Vec<bool>]) -> (ModelFit, Dataset) {
        let k = rows[0].len();
        let states = (0..k)
            .map(|s| {
                ARState::new(DMatrix::from_element(1, 1, 0.9 - 0.4 * s as f64), DMatrix::from_element(1, 1, 1.0))
                    .unwrap()
            })
            .collect();
        let features = FeatureMatrix::from_rows(rows).unwrap();
        let mut hmms = Vec::new();
        let mut sequences = Vec::new();
        let mut series = Vec::new();
        for i in 0..n {
            let id = alloc::format!("s{i}");
            let active = features.row_active(i);
            let m = active.len();
            let trans = DMatrix::from_fn(m, m, |a, b| if a == b { 0.8 } else { 0.2 / (m - 1) as f64 });
            let trans = if m == 1 { DMatrix::from_element(1, 1, 1.0) } else { trans };
            let z: Vec<usize> = (0..9).map(|t| active[t % m]).collect();
            hmms.push(SeriesHMM::new(id.clone(), active, trans).unwrap());
            sequences.push(StateSequence { id: id.clone(), z });
            let values: Vec<f64> = (0..10).map(|t| ((t * (i + 3)) % 7) as f64 - 3.0).collect();
            series.push(MultiSeries::new(id, values, 1).unwrap());
        }
        let ds = Dataset::new(ChannelSchema::from_names(&["x"]).unwrap(), series, None).unwrap();
        let fit = ModelFit {
            states,
            features,
            hmms,
            sequences,
            hyper: Hyperparams::new(1),
            diagnostics: Diagnostics::default(),
        };
        fit.check_invariants().unwrap();
        (fit, ds)
    }

    #[test]
    fn rare_state_is_removed() {
        // state 1 active in 2 of 180 series; 2 < 0.05 · 180 = 9
        let rows: Vec<Vec<bool>> = (0..180).map(|i| vec![true, i < 2]).collect();
        let (fit, ds) = toy(180, &rows);
        let out = prune_rare_states(&fit, &ds, 0.05).unwrap();
        out.check_invariants().unwrap();
        assert_eq!(out.num_states(), 1);
        let report = out.diagnostics.pruning.as_ref().unwrap();
        assert_eq!(report.removed, vec![1]);
        assert_eq!(report.redecoded, vec![String::from("s0"), String::from("s1")]);
        assert!(report.fallbacks.is_empty());
    }

    #[test]
    fn zero_threshold_keeps_everything() {
        let rows = vec![vec![true, false, true], vec![false, true, true], vec![true, true, false]];
        let (fit, ds) = toy(3, &rows);
        let out = prune_rare_states(&fit, &ds, 0.0).unwrap();
        assert_eq!(out.states, fit.states);
        assert_eq!(out.features, fit.features);
        assert_eq!(out.hmms, fit.hmms);
        assert_eq!(out.sequences, fit.sequences);
    }

    #[test]
    fn every_row_keeps_one_state_when_all_are_rare() {
        let rows = vec![vec![true, false, false], vec![false, true, false], vec![false, true, true]];
        let (fit, ds) = toy(3, &rows);
        let out = prune_rare_states(&fit, &ds, 1.0).unwrap();
        out.check_invariants().unwrap();
        for i in 0..3 {
            assert_eq!(out.features.row_active(i).len(), 1);
        }
        assert_eq!(out.diagnostics.pruning.as_ref().unwrap().fallbacks.len(), 3);
    }

    #[test]
    fn rejects_bad_threshold() {
        let (fit, ds) = toy(2, &[vec![true], vec![true]]);
        assert!(prune_rare_states(&fit, &ds, 1.5).is_err());
    }
}
