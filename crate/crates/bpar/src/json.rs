//! JSON documents exchanged between pipeline stages.
//!
//! Every document carries `"format": 1` and a `"type"` tag; readers reject
//! anything else. Matrices are nested row-major arrays.

use std::fs;
use std::path::Path;

use bpar_core::cluster::{Dendrogram, Linkage, Merge};
use bpar_core::distance::{DistanceMatrix, Measure};
use bpar_core::embedding::{Representation, RepresentationKind, SpectralMode};
use bpar_core::model::{
    ARState, BirthProposal, Diagnostics, FeatureMatrix, Hyperparams, McmcSettings, MniwPrior, ModelFit, MoveStats,
    PruneReport, SeriesHMM, StateSequence,
};
use bpar_core::predict::{ModelSpec, PredictionReport, StateAttribution};
use bpar_core::synth::{GroundTruth, Recovery};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT: u32 = 1;

type Rows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix(r: &Rows, cols: Option<usize>, what: &str) -> std::result::Result<DMatrix<f64>, String> {
    let c = cols.or_else(|| r.first().map(Vec::len)).unwrap_or(0);
    if r.iter().any(|row| row.len() != c) {
        return Err(format!("{what}: ragged matrix"));
    }
    Ok(DMatrix::from_fn(r.len(), c, |i, j| r[i][j]))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    #[serde(rename = "type")]
    kind: String,
}

/// Serializes with a trailing newline.
pub fn write_doc<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| CliError::io(path, e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads a document after checking its format version and type tag.
pub fn read_doc<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::input(path, "file does not exist"),
        _ => CliError::io(path, e),
    })?;
    let header: Header = serde_json::from_str(&text).map_err(|e| CliError::input(path, format!("not a bpar document: {e}")))?;
    if header.format != FORMAT {
        return Err(CliError::input(path, format!("unsupported format version {}, expected {FORMAT}", header.format)));
    }
    if header.kind != kind {
        return Err(CliError::input(path, format!("expected a `{kind}` document, found `{}`", header.kind)));
    }
    serde_json::from_str(&text).map_err(|e| CliError::input(path, e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StateDoc {
    pub a: Rows,
    pub sigma: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeriesDoc {
    pub id: String,
    pub active: Vec<usize>,
    pub transitions: Rows,
    /// Unnormalized weights; `transitions` is recomputed from them on load.
    pub weights: Rows,
    pub sequence: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BirthDoc {
    Prior,
    DataDriven { window: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HyperDoc {
    pub alpha: f64,
    pub lag: usize,
    pub gamma: f64,
    pub kappa: f64,
    pub prior_mean: Rows,
    pub prior_col_scale: Rows,
    pub prior_scale: Rows,
    pub prior_dof: f64,
    pub birth: BirthDoc,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PruneDoc {
    pub threshold: f64,
    pub removed: Vec<usize>,
    pub fallbacks: Vec<(String, usize)>,
    pub redecoded: Vec<String>,
    pub mapping: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiagnosticsDoc {
    pub log_likelihood: Vec<f64>,
    pub num_states: Vec<usize>,
    /// `[proposed, accepted]`.
    pub births: [usize; 2],
    pub deaths: [usize; 2],
    pub burn_in: usize,
    pub pruning: Option<PruneDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitDoc {
    pub format: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub hyperparams: HyperDoc,
    pub states: Vec<StateDoc>,
    /// `N × K` 0/1 rows.
    pub features: Vec<Vec<u8>>,
    pub series: Vec<SeriesDoc>,
    pub diagnostics: DiagnosticsDoc,
}

fn states_doc(states: &[ARState]) -> Vec<StateDoc> {
    states.iter().map(|s| StateDoc { a: rows(s.a()), sigma: rows(s.sigma()) }).collect()
}

fn features_doc(f: &FeatureMatrix) -> Vec<Vec<u8>> {
    (0..f.rows()).map(|i| f.row(i).iter().map(|&b| u8::from(b)).collect()).collect()
}

fn series_doc(hmms: &[SeriesHMM], seqs: &[StateSequence]) -> Vec<SeriesDoc> {
    hmms.iter()
        .zip(seqs)
        .map(|(h, s)| SeriesDoc {
            id: h.id.clone(),
            active: h.active().to_vec(),
            transitions: rows(h.trans()),
            weights: rows(h.weights()),
            sequence: s.z.clone(),
        })
        .collect()
}

fn states_from(doc: &[StateDoc]) -> std::result::Result<Vec<ARState>, String> {
    doc.iter()
        .enumerate()
        .map(|(k, s)| {
            let a = matrix(&s.a, None, "A")?;
            let sigma = matrix(&s.sigma, None, "Sigma")?;
            ARState::new(a, sigma).map_err(|e| format!("state {k}: {e}"))
        })
        .collect()
}

fn features_from(doc: &[Vec<u8>], k: usize) -> std::result::Result<FeatureMatrix, String> {
    if doc.iter().any(|r| r.len() != k || r.iter().any(|&b| b > 1)) {
        return Err(format!("feature rows must hold {k} zeros or ones"));
    }
    let bools: Vec<Vec<bool>> = doc.iter().map(|r| r.iter().map(|&b| b == 1).collect()).collect();
    FeatureMatrix::from_rows(&bools).map_err(|e| e.to_string())
}

fn series_from(doc: &[SeriesDoc]) -> std::result::Result<(Vec<SeriesHMM>, Vec<StateSequence>), String> {
    let mut hmms = Vec::with_capacity(doc.len());
    let mut seqs = Vec::with_capacity(doc.len());
    for s in doc {
        let m = s.active.len();
        let w = matrix(&s.weights, Some(m), "weights")?;
        hmms.push(SeriesHMM::with_weights(s.id.clone(), s.active.clone(), w).map_err(|e| e.to_string())?);
        seqs.push(StateSequence { id: s.id.clone(), z: s.sequence.clone() });
    }
    Ok((hmms, seqs))
}

impl FitDoc {
    pub fn new(fit: &ModelFit) -> Self {
        let h = &fit.hyper;
        let d = &fit.diagnostics;
        Self {
            format: FORMAT,
            kind: "fit".into(),
            hyperparams: HyperDoc {
                alpha: h.alpha,
                lag: h.lag,
                gamma: h.gamma,
                kappa: h.kappa,
                prior_mean: rows(&h.ar_prior.mean),
                prior_col_scale: rows(&h.ar_prior.col_scale),
                prior_scale: rows(&h.ar_prior.scale),
                prior_dof: h.ar_prior.dof,
                birth: match h.birth {
                    BirthProposal::Prior => BirthDoc::Prior,
                    BirthProposal::DataDriven { window } => BirthDoc::DataDriven { window },
                },
                sweeps: h.mcmc.sweeps,
                burn_in: h.mcmc.burn_in,
                seed: h.mcmc.seed,
            },
            states: states_doc(&fit.states),
            features: features_doc(&fit.features),
            series: series_doc(&fit.hmms, &fit.sequences),
            diagnostics: DiagnosticsDoc {
                log_likelihood: d.log_likelihood.clone(),
                num_states: d.num_states.clone(),
                births: [d.births.proposed, d.births.accepted],
                deaths: [d.deaths.proposed, d.deaths.accepted],
                burn_in: d.burn_in,
                pruning: d.pruning.as_ref().map(|p| PruneDoc {
                    threshold: p.threshold,
                    removed: p.removed.clone(),
                    fallbacks: p.fallbacks.clone(),
                    redecoded: p.redecoded.clone(),
                    mapping: p.mapping.clone(),
                }),
            },
        }
    }

    /// Rebuilds the fit and checks its structural invariants.
    pub fn into_fit(self) -> std::result::Result<ModelFit, String> {
        let h = self.hyperparams;
        let states = states_from(&self.states)?;
        let features = features_from(&self.features, states.len())?;
        let (hmms, sequences) = series_from(&self.series)?;
        let ar_prior = MniwPrior {
            mean: matrix(&h.prior_mean, None, "prior mean")?,
            col_scale: matrix(&h.prior_col_scale, None, "prior column scale")?,
            scale: matrix(&h.prior_scale, None, "prior scale")?,
            dof: h.prior_dof,
        };
        let d = self.diagnostics;
        let fit = ModelFit {
            states,
            features,
            hmms,
            sequences,
            hyper: Hyperparams {
                alpha: h.alpha,
                lag: h.lag,
                gamma: h.gamma,
                kappa: h.kappa,
                ar_prior,
                birth: match h.birth {
                    BirthDoc::Prior => BirthProposal::Prior,
                    BirthDoc::DataDriven { window } => BirthProposal::DataDriven { window },
                },
                mcmc: McmcSettings { sweeps: h.sweeps, burn_in: h.burn_in, seed: h.seed },
            },
            diagnostics: Diagnostics {
                log_likelihood: d.log_likelihood,
                num_states: d.num_states,
                births: MoveStats { proposed: d.births[0], accepted: d.births[1] },
                deaths: MoveStats { proposed: d.deaths[0], accepted: d.deaths[1] },
                burn_in: d.burn_in,
                pruning: d.pruning.map(|p| PruneReport {
                    threshold: p.threshold,
                    removed: p.removed,
                    fallbacks: p.fallbacks,
                    redecoded: p.redecoded,
                    mapping: p.mapping,
                }),
            },
        };
        fit.check_invariants().map_err(|e| e.to_string())?;
        Ok(fit)
    }
}

pub fn write_fit(path: &Path, fit: &ModelFit) -> Result<()> {
    write_doc(path, &FitDoc::new(fit))
}

pub fn read_fit(path: &Path) -> Result<ModelFit> {
    read_doc::<FitDoc>(path, "fit")?.into_fit().map_err(|e| CliError::input(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthDoc {
    pub format: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub lag: usize,
    pub states: Vec<StateDoc>,
    pub features: Vec<Vec<u8>>,
    pub series: Vec<SeriesDoc>,
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let doc = TruthDoc {
        format: FORMAT,
        kind: "truth".into(),
        lag: truth.lag,
        states: states_doc(&truth.states),
        features: features_doc(&truth.features),
        series: series_doc(&truth.hmms, &truth.sequences),
    };
    write_doc(path, &doc)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let doc: TruthDoc = read_doc(path, "truth")?;
    let build = || -> std::result::Result<GroundTruth, String> {
        let states = states_from(&doc.states)?;
        let features = features_from(&doc.features, states.len())?;
        let (hmms, sequences) = series_from(&doc.series)?;
        Ok(GroundTruth { states, features, hmms, sequences, lag: doc.lag })
    };
    build().map_err(|e| CliError::input(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DistancesDoc {
    pub format: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub measure: String,
    pub ids: Vec<String>,
    pub values: Rows,
}

pub fn parse_measure(s: &str) -> Option<Measure> {
    [Measure::Likelihood, Measure::Viterbi].into_iter().find(|m| m.as_str() == s)
}

pub fn write_distances(path: &Path, dm: &DistanceMatrix) -> Result<()> {
    let doc = DistancesDoc {
        format: FORMAT,
        kind: "distances".into(),
        measure: dm.measure.as_str().into(),
        ids: dm.ids.clone(),
        values: rows(&dm.values),
    };
    write_doc(path, &doc)
}

pub fn read_distances(path: &Path) -> Result<DistanceMatrix> {
    let doc: DistancesDoc = read_doc(path, "distances")?;
    let bad = |m: String| CliError::input(path, m);
    let measure = parse_measure(&doc.measure).ok_or_else(|| bad(format!("unknown measure `{}`", doc.measure)))?;
    let n = doc.ids.len();
    if doc.values.len() != n {
        return Err(bad(format!("{n} ids but {} rows", doc.values.len())));
    }
    let values = matrix(&doc.values, Some(n), "distances").map_err(bad)?;
    let dm = DistanceMatrix { ids: doc.ids, values, measure };
    dm.validate().map_err(|e| bad(e.to_string()))?;
    Ok(dm)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RepresentationDoc {
    pub format: u32,
    #[serde(rename = "type")]
    pub doc_type: String,
    /// `stationary`, `spectral-likelihood` or `spectral-viterbi`.
    pub kind: String,
    /// `distance` or `gaussian` for spectral kinds.
    pub mode: Option<String>,
    #[serde(rename = "K")]
    pub k: usize,
    pub ids: Vec<String>,
    pub vectors: Rows,
}

pub fn mode_str(mode: SpectralMode) -> &'static str {
    match mode {
        SpectralMode::Distance => "distance",
        SpectralMode::GaussianAffinity => "gaussian",
    }
}

pub fn parse_mode(s: &str) -> Option<SpectralMode> {
    [SpectralMode::Distance, SpectralMode::GaussianAffinity].into_iter().find(|m| mode_str(*m) == s)
}

pub fn write_representation(path: &Path, rep: &Representation) -> Result<()> {
    let doc = RepresentationDoc {
        format: FORMAT,
        doc_type: "representation".into(),
        kind: rep.kind.as_str().into(),
        mode: rep.mode.map(|m| mode_str(m).into()),
        k: rep.dim(),
        ids: rep.ids.clone(),
        vectors: rows(&rep.vectors),
    };
    write_doc(path, &doc)
}

pub fn read_representation(path: &Path) -> Result<Representation> {
    let doc: RepresentationDoc = read_doc(path, "representation")?;
    let bad = |m: String| CliError::input(path, m);
    let kind = [RepresentationKind::Stationary, RepresentationKind::SpectralLikelihood, RepresentationKind::SpectralViterbi]
        .into_iter()
        .find(|k| k.as_str() == doc.kind)
        .ok_or_else(|| bad(format!("unknown representation `{}`", doc.kind)))?;
    let mode = match &doc.mode {
        None => None,
        Some(m) => Some(parse_mode(m).ok_or_else(|| bad(format!("unknown spectral mode `{m}`")))?),
    };
    if doc.vectors.len() != doc.ids.len() {
        return Err(bad(format!("{} ids but {} rows", doc.ids.len(), doc.vectors.len())));
    }
    let vectors = matrix(&doc.vectors, Some(doc.k), "vectors").map_err(bad)?;
    Ok(Representation { ids: doc.ids, vectors, kind, mode })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MergeDoc {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DendrogramDoc {
    pub format: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub linkage: String,
    pub ids: Vec<String>,
    /// Node `N + i` is created by merge `i`; leaves are `0..N`.
    pub merges: Vec<MergeDoc>,
}

pub fn parse_linkage(s: &str) -> Option<Linkage> {
    [Linkage::Average, Linkage::Single, Linkage::Complete].into_iter().find(|l| l.as_str() == s)
}

pub fn write_dendrogram(path: &Path, d: &Dendrogram) -> Result<()> {
    let doc = DendrogramDoc {
        format: FORMAT,
        kind: "dendrogram".into(),
        linkage: d.linkage.as_str().into(),
        ids: d.ids.clone(),
        merges: d.merges.iter().map(|m| MergeDoc { a: m.a, b: m.b, height: m.height, size: m.size }).collect(),
    };
    write_doc(path, &doc)
}

pub fn read_dendrogram(path: &Path) -> Result<Dendrogram> {
    let doc: DendrogramDoc = read_doc(path, "dendrogram")?;
    let linkage = parse_linkage(&doc.linkage).ok_or_else(|| CliError::input(path, format!("unknown linkage `{}`", doc.linkage)))?;
    let n = doc.ids.len();
    let valid = doc.merges.len() + 1 == n.max(1)
        && doc.merges.iter().enumerate().all(|(i, m)| m.a < n + i && m.b < n + i && m.a != m.b);
    if !valid {
        return Err(CliError::input(path, "merge list does not describe a binary tree over the ids"));
    }
    let merges = doc.merges.iter().map(|m| Merge { a: m.a, b: m.b, height: m.height, size: m.size }).collect();
    Ok(Dendrogram { ids: doc.ids, merges, linkage })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SettingDoc {
    Ridge { penalty: f64, fit_intercept: bool, standardize: bool },
    KernelRidge { penalty: f64, bandwidth_scale: f64 },
    RandomForest { trees: usize, max_depth: Option<usize>, seed: u64 },
}

impl From<ModelSpec> for SettingDoc {
    fn from(s: ModelSpec) -> Self {
        match s {
            ModelSpec::Ridge { penalty, fit_intercept, standardize } => Self::Ridge { penalty, fit_intercept, standardize },
            ModelSpec::KernelRidge { penalty, bandwidth_scale } => Self::KernelRidge { penalty, bandwidth_scale },
            ModelSpec::RandomForest { trees, max_depth, seed } => Self::RandomForest { trees, max_depth, seed },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportDoc {
    pub construct: String,
    pub representation: String,
    pub spectral_k: Option<usize>,
    pub setting: SettingDoc,
    pub rho: f64,
    pub rmse: f64,
    pub folds: usize,
    pub dropped: Vec<String>,
    pub ids: Vec<String>,
    pub predictions: Vec<f64>,
}

impl From<&PredictionReport> for ReportDoc {
    fn from(r: &PredictionReport) -> Self {
        Self {
            construct: r.construct.clone(),
            representation: r.representation.clone(),
            spectral_k: r.spectral_k,
            setting: r.setting.into(),
            rho: r.rho,
            rmse: r.rmse,
            folds: r.folds,
            dropped: r.dropped.clone(),
            ids: r.ids.clone(),
            predictions: r.predictions.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttributionDoc {
    pub construct: String,
    /// `(state, coefficient)`, largest magnitude first.
    pub coefficients: Vec<(usize, f64)>,
}

impl From<&StateAttribution> for AttributionDoc {
    fn from(a: &StateAttribution) -> Self {
        Self { construct: a.construct.clone(), coefficients: a.coefficients.clone() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictionDoc {
    pub format: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub reports: Vec<ReportDoc>,
    /// `(construct, reason)`.
    pub skipped: Vec<(String, String)>,
    pub attribution: Vec<AttributionDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecoveryDoc {
    pub format: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub accuracy: f64,
    pub k_fit: usize,
    pub k_true: usize,
    pub delta_k: usize,
    pub feature_agreement: f64,
    pub matching: Vec<Option<usize>>,
}

impl From<&Recovery> for RecoveryDoc {
    fn from(r: &Recovery) -> Self {
        Self {
            format: FORMAT,
            kind: "recovery".into(),
            accuracy: r.accuracy,
            k_fit: r.k_fit,
            k_true: r.k_true,
            delta_k: r.delta_k,
            feature_agreement: r.feature_agreement,
            matching: r.matching.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpar_core::synth::{generate, SynthSpec};

    fn tiny_fit() -> ModelFit {
        let mut spec = SynthSpec::benchmark(3);
        spec.num_series = 5;
        spec.lengths = bpar_core::synth::Lengths::Fixed(40);
        spec.features = None;
        spec.constructs.clear();
        generate(&spec).unwrap().1.to_fit()
    }

    #[test]
    fn fit_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        let fit = tiny_fit();
        write_fit(&path, &fit).unwrap();
        let back = read_fit(&path).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn version_and_type_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        fs::write(&path, r#"{"format": 2, "type": "fit"}"#).unwrap();
        assert!(read_fit(&path).unwrap_err().to_string().contains("format version 2"));
        fs::write(&path, r#"{"format": 1, "type": "distances"}"#).unwrap();
        assert!(read_fit(&path).unwrap_err().to_string().contains("expected a `fit`"));
    }

    #[test]
    fn distances_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let values = DMatrix::from_row_slice(3, 3, &[0.0, 0.1 + 0.2, 1.0 / 3.0, 0.1 + 0.2, 0.0, 2.0, 1.0 / 3.0, 2.0, 0.0]);
        let dm = DistanceMatrix { ids: vec!["a".into(), "b".into(), "c".into()], values, measure: Measure::Viterbi };
        write_distances(&path, &dm).unwrap();
        assert_eq!(read_distances(&path).unwrap(), dm);
    }
}
