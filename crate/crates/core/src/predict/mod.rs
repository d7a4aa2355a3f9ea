//! Construct prediction from per-series representations with leave-one-out
//! cross-validation, and ridge-coefficient attribution of constructs to
//! states.
//!
//! Every fold fits its own standardization, bandwidth and model on the
//! remaining series only.

mod forest;
mod kernel;
mod ridge;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::distance::{distance_matrix, DistanceOptions, Measure};
use crate::embedding::{spectral_representation, stationary_representation, Representation, SpectralMode};
use crate::math::{mean, pearson, rmse, std_pop};
use crate::model::{ModelFit, StateId};
use crate::par::map_range;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Ridge,
    KernelRidge,
    RandomForest,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ridge => "ridge",
            Self::KernelRidge => "kernel_ridge",
            Self::RandomForest => "random_forest",
        }
    }

    pub const ALL: [ModelFamily; 3] = [Self::Ridge, Self::KernelRidge, Self::RandomForest];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    Ridge { penalty: f64, fit_intercept: bool, standardize: bool },
    /// RBF kernel; bandwidth = `bandwidth_scale` × median training distance.
    KernelRidge { penalty: f64, bandwidth_scale: f64 },
    RandomForest { trees: usize, max_depth: Option<usize>, seed: u64 },
}

impl ModelSpec {
    pub fn family(&self) -> ModelFamily {
        match self {
            Self::Ridge { .. } => ModelFamily::Ridge,
            Self::KernelRidge { .. } => ModelFamily::KernelRidge,
            Self::RandomForest { .. } => ModelFamily::RandomForest,
        }
    }

    /// Standardized ridge with an intercept.
    pub fn ridge(penalty: f64) -> Self {
        Self::Ridge { penalty, fit_intercept: true, standardize: true }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Ridge { penalty, .. } => penalty >= 0.0 && penalty.is_finite(),
            Self::KernelRidge { penalty, bandwidth_scale } => penalty > 0.0 && bandwidth_scale > 0.0,
            Self::RandomForest { trees, max_depth, .. } => trees > 0 && max_depth != Some(0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid model setting {self:?}")))
        }
    }
}

/// Ridge penalties 1e-3 … 1e3 (7 values); RBF bandwidth scales {0.5, 1, 2}
/// × penalties {1e-2, 1, 1e2}; forests of 200 trees with depth 3, 6 or
/// unlimited.
pub fn default_grid(family: ModelFamily, seed: u64) -> Vec<ModelSpec> {
    match family {
        ModelFamily::Ridge => [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3].into_iter().map(ModelSpec::ridge).collect(),
        ModelFamily::KernelRidge => [0.5, 1.0, 2.0]
            .into_iter()
            .flat_map(|s| [1e-2, 1.0, 1e2].into_iter().map(move |p| ModelSpec::KernelRidge { penalty: p, bandwidth_scale: s }))
            .collect(),
        ModelFamily::RandomForest => [Some(3), Some(6), None]
            .into_iter()
            .map(|max_depth| ModelSpec::RandomForest { trees: 200, max_depth, seed })
            .collect(),
    }
}

/// Fits `spec` on `(x, y)` and predicts the rows of `test`.
pub fn fit_predict(spec: &ModelSpec, x: &DMatrix<f64>, y: &[f64], test: &DMatrix<f64>) -> Vec<f64> {
    match *spec {
        ModelSpec::Ridge { penalty, fit_intercept, standardize } => {
            ridge::fit_ridge(x, y, penalty, fit_intercept, standardize).predict(test)
        }
        ModelSpec::KernelRidge { penalty, bandwidth_scale } => {
            kernel::fit_kernel_ridge(x, y, penalty, bandwidth_scale).predict(test)
        }
        ModelSpec::RandomForest { trees, max_depth, seed } => {
            forest::fit_forest(x, y, trees, max_depth, seed).predict(test)
        }
    }
}

fn drop_row(x: &DMatrix<f64>, skip: usize) -> DMatrix<f64> {
    x.clone().remove_row(skip)
}

/// Out-of-fold prediction for every row: row `i` is predicted by a model fit
/// on all other rows. Forest seeds are offset by the fold index.
pub fn loocv_predictions(spec: &ModelSpec, x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    map_range(n, |i| {
        let train = drop_row(x, i);
        let ty: Vec<f64> = y.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v).collect();
        let fold_spec = match *spec {
            ModelSpec::RandomForest { trees, max_depth, seed } => ModelSpec::RandomForest {
                trees,
                max_depth,
                seed: rand::RngCore::next_u64(&mut crate::rng::derived(seed, &[i as u64])),
            },
            s => s,
        };
        fit_predict(&fold_spec, &train, &ty, &x.rows(i, 1).into_owned())[0]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub construct: String,
    /// `HMM-S`, `HMM-SL`, `HMM-SV`, or a caller-chosen label.
    pub representation: String,
    pub model: ModelFamily,
    pub setting: ModelSpec,
    /// Embedding dimension for spectral representations.
    pub spectral_k: Option<usize>,
    pub rho: f64,
    pub rmse: f64,
    /// Number of folds (series with a value).
    pub folds: usize,
    /// Series dropped for a missing value.
    pub dropped: Vec<String>,
    pub ids: Vec<String>,
    pub predictions: Vec<f64>,
}

/// Leave-one-out evaluation of every setting in `grid`; returns the one with
/// the highest ρ (lowest RMSE on ties). Series with a missing `y` are dropped.
pub fn loocv(x: &Representation, y: &[Option<f64>], construct: &str, grid: &[ModelSpec]) -> Result<PredictionReport> {
    if y.len() != x.ids.len() {
        return Err(Error::DimensionMismatch(format!("{} targets for {} series", y.len(), x.ids.len())));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty hyperparameter grid".into()));
    }
    for s in grid {
        s.validate()?;
    }
    let keep: Vec<usize> = (0..y.len()).filter(|&i| y[i].is_some_and(f64::is_finite)).collect();
    let dropped = (0..y.len()).filter(|i| !keep.contains(i)).map(|i| x.ids[i].clone()).collect();
    if keep.len() < 3 {
        return Err(Error::Degenerate(format!("construct `{construct}` has {} usable values, need 3", keep.len())));
    }
    let yv: Vec<f64> = keep.iter().map(|&i| y[i].unwrap()).collect();
    if std_pop(&yv) <= 1e-12 * (1.0 + mean(&yv).abs()) {
        return Err(Error::ConstantConstruct(construct.to_string()));
    }
    let xm = x.vectors.select_rows(keep.iter());
    let mut best: Option<(f64, f64, ModelSpec, Vec<f64>)> = None;
    for spec in grid {
        let pred = loocv_predictions(spec, &xm, &yv);
        let rho = pearson(&pred, &yv);
        let err = rmse(&pred, &yv);
        let better = match &best {
            None => true,
            Some((r, e, _, _)) => rho > *r || (rho == *r && err < *e),
        };
        if better {
            best = Some((rho, err, *spec, pred));
        }
    }
    let (rho, err, setting, predictions) = best.expect("nonempty grid");
    Ok(PredictionReport {
        construct: construct.to_string(),
        representation: x.kind.as_str().to_string(),
        model: setting.family(),
        setting,
        spectral_k: None,
        rho,
        rmse: err,
        folds: keep.len(),
        dropped,
        ids: keep.iter().map(|&i| x.ids[i].clone()).collect(),
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateAttribution {
    pub construct: String,
    /// `(state, coefficient)` ordered by decreasing `|coefficient|`.
    pub coefficients: Vec<(StateId, f64)>,
}

/// Standardized ridge of `y` on the stationary representation of `fit`,
/// using every series with a value. A positive coefficient means more time
/// in that state goes with a larger construct value.
pub fn attribute_states(fit: &ModelFit, y: &[Option<f64>], construct: &str, penalty: f64) -> Result<StateAttribution> {
    let rep = stationary_representation(fit);
    if y.len() != rep.ids.len() {
        return Err(Error::DimensionMismatch(format!("{} targets for {} series", y.len(), rep.ids.len())));
    }
    let keep: Vec<usize> = (0..y.len()).filter(|&i| y[i].is_some_and(f64::is_finite)).collect();
    if keep.len() < 3 {
        return Err(Error::Degenerate(format!("construct `{construct}` has {} usable values, need 3", keep.len())));
    }
    let yv: Vec<f64> = keep.iter().map(|&i| y[i].unwrap()).collect();
    if std_pop(&yv) <= 1e-12 * (1.0 + mean(&yv).abs()) {
        return Err(Error::ConstantConstruct(construct.to_string()));
    }
    let xm = rep.vectors.select_rows(keep.iter());
    let model = ridge::fit_ridge(&xm, &yv, penalty, true, true);
    let mut coefficients: Vec<(StateId, f64)> = model.coef.iter().copied().enumerate().collect();
    coefficients.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    Ok(StateAttribution { construct: construct.to_string(), coefficients })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    /// Candidate spectral dimensions; values above `N` are skipped (`N` is
    /// used when none remain).
    pub spectral_ks: Vec<usize>,
    pub families: Vec<ModelFamily>,
    pub grids: Vec<(ModelFamily, Vec<ModelSpec>)>,
    pub distance: DistanceOptions,
    pub spectral_mode: SpectralMode,
    /// Append per-channel mean and variance of the unnormalized series.
    pub raw_features: bool,
}

impl BenchmarkConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            spectral_ks: (1..=10).map(|k| 10 * k).collect(),
            families: ModelFamily::ALL.to_vec(),
            grids: ModelFamily::ALL.iter().map(|&f| (f, default_grid(f, seed))).collect(),
            distance: DistanceOptions::default(),
            spectral_mode: SpectralMode::Distance,
            raw_features: false,
        }
    }

    fn grid(&self, family: ModelFamily) -> &[ModelSpec] {
        self.grids.iter().find(|(f, _)| *f == family).map_or(&[], |(_, g)| g.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkResult {
    /// Best report per `(construct, representation)`.
    pub reports: Vec<PredictionReport>,
    /// Constructs not evaluated, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn raw_summary(dataset: &Dataset) -> DMatrix<f64> {
    let raw = dataset.raw_series();
    let d = dataset.schema.len();
    DMatrix::from_fn(raw.len(), 2 * d, |i, c| {
        let col: Vec<f64> = raw[i].channel(c % d).collect();
        if c < d {
            mean(&col)
        } else {
            let s = std_pop(&col);
            s * s
        }
    })
}

fn with_columns(rep: &Representation, extra: Option<&DMatrix<f64>>) -> Representation {
    match extra {
        None => rep.clone(),
        Some(e) => {
            let (n, a) = rep.vectors.shape();
            let b = e.ncols();
            let vectors = DMatrix::from_fn(n, a + b, |i, j| if j < a { rep.vectors[(i, j)] } else { e[(i, j - a)] });
            Representation { vectors, ..rep.clone() }
        }
    }
}

/// The stationary (`HMM-S`) and spectral (`HMM-SL`, `HMM-SV`)
/// representations of a fit, each construct evaluated with every model
/// family; the best setting per representation is reported.
pub fn run_benchmark(fit: &ModelFit, dataset: &Dataset, config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    let Some(table) = dataset.constructs.as_ref().filter(|t| !t.numeric.is_empty()) else {
        return Ok(BenchmarkResult::default());
    };
    let ids = fit.ids();
    if ids != dataset.ids() {
        return Err(Error::InvalidParameter("fit and dataset list different series".into()));
    }
    let n = ids.len();
    let extra = config.raw_features.then(|| raw_summary(dataset));
    let mut ks: Vec<usize> = config.spectral_ks.iter().copied().filter(|&k| k >= 1 && k <= n).collect();
    if ks.is_empty() {
        ks.push(n);
    }
    let mut reps: Vec<(&str, Option<usize>, Representation)> =
        vec![("HMM-S", None, with_columns(&stationary_representation(fit), extra.as_ref()))];
    for (label, measure) in [("HMM-SL", Measure::Likelihood), ("HMM-SV", Measure::Viterbi)] {
        let dm = distance_matrix(fit, measure, &config.distance)?;
        for &k in &ks {
            let rep = spectral_representation(&dm, k, config.spectral_mode)?;
            reps.push((label, Some(k), with_columns(&rep, extra.as_ref())));
        }
    }

    let mut result = BenchmarkResult::default();
    for (name, _) in &table.numeric {
        let y = table.numeric_for(name, &ids).expect("column exists");
        let mut best: Vec<(String, PredictionReport)> = Vec::new();
        let mut skip: Option<String> = None;
        'reps: for (label, k, rep) in &reps {
            for &family in &config.families {
                let grid = config.grid(family);
                if grid.is_empty() {
                    continue;
                }
                let mut report = match loocv(rep, &y, name, grid) {
                    Ok(r) => r,
                    Err(e @ (Error::ConstantConstruct(_) | Error::Degenerate(_))) => {
                        skip = Some(e.to_string());
                        break 'reps;
                    }
                    Err(e) => return Err(e),
                };
                report.representation = (*label).to_string();
                report.spectral_k = *k;
                match best.iter_mut().find(|(l, _)| l == label) {
                    Some((_, b)) => {
                        if report.rho > b.rho || (report.rho == b.rho && report.rmse < b.rmse) {
                            *b = report;
                        }
                    }
                    None => best.push(((*label).to_string(), report)),
                }
            }
        }
        match skip {
            Some(reason) => result.skipped.push((name.clone(), reason)),
            None => result.reports.extend(best.into_iter().map(|(_, r)| r)),
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::RepresentationKind;
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn rep(x: DMatrix<f64>) -> Representation {
        let n = x.nrows();
        Representation {
            ids: (0..n).map(|i| format!("s{i}")).collect(),
            vectors: x,
            kind: RepresentationKind::Stationary,
            mode: None,
        }
    }

    #[test]
    fn plain_ridge_folds_match_closed_form() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 3.0, 7.0, 8.0];
        let xm = DMatrix::from_column_slice(4, 1, &x);
        let spec = ModelSpec::Ridge { penalty: 1.0, fit_intercept: false, standardize: false };
        let pred = loocv_predictions(&spec, &xm, &y);
        for i in 0..4 {
            let sxx: f64 = (0..4).filter(|&j| j != i).map(|j| x[j] * x[j]).sum();
            let sxy: f64 = (0..4).filter(|&j| j != i).map(|j| x[j] * y[j]).sum();
            assert!((pred[i] - x[i] * sxy / (sxx + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_linear_target() {
        let mut r = rng::stream(1);
        let n = 30;
        let x = DMatrix::from_fn(n, 3, |_, _| r.random::<f64>());
        let y: Vec<Option<f64>> = (0..n).map(|i| Some(2.0 * x[(i, 0)] - x[(i, 1)] + 0.5 * x[(i, 2)] + 3.0)).collect();
        let report = loocv(&rep(x), &y, "lin", &[ModelSpec::ridge(1e-12)]).unwrap();
        assert!(report.rho >= 0.999);
        let scale = std_pop(&y.iter().map(|v| v.unwrap()).collect::<Vec<_>>());
        assert!(report.rmse <= 1e-6 * scale, "{}", report.rmse);
    }

    #[test]
    fn huge_penalty_predicts_fold_mean() {
        let mut r = rng::stream(2);
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |_, _| r.random::<f64>());
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + r.random::<f64>()).collect();
        let pred = loocv_predictions(&ModelSpec::ridge(1e12), &x, &y);
        let total: f64 = y.iter().sum();
        for i in 0..n {
            assert!((pred[i] - (total - y[i]) / (n - 1) as f64).abs() < 1e-8);
        }
        assert!((rmse(&pred, &y) / std_pop(&y) - 1.0).abs() < 0.01);
    }

    #[test]
    fn fold_means_anticorrelate_with_held_out_values() {
        // With all slope shrunk away each prediction is (S - y_i)/(n - 1).
        let mut r = rng::stream(3);
        let n = 20;
        let x = DMatrix::from_fn(n, 2, |_, _| r.random::<f64>());
        let mut y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + 0.1 * r.random::<f64>()).collect();
        for _ in 0..20 {
            y.shuffle(&mut r);
            let rho = pearson(&loocv_predictions(&ModelSpec::ridge(1e12), &x, &y), &y);
            assert!((rho + 1.0).abs() < 1e-6, "{rho}");
        }
    }

    #[test]
    fn missing_and_constant_targets() {
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64);
        let y = vec![Some(1.0), None, Some(2.0), Some(4.0), Some(3.0)];
        let report = loocv(&rep(x.clone()), &y, "c", &[ModelSpec::ridge(1.0)]).unwrap();
        assert_eq!(report.dropped, vec![String::from("s1")]);
        assert_eq!(report.folds, 4);
        let flat = vec![Some(2.0); 5];
        assert!(matches!(loocv(&rep(x), &flat, "c", &[ModelSpec::ridge(1.0)]), Err(Error::ConstantConstruct(_))));
    }

    #[test]
    fn rho_is_affine_invariant() {
        let mut r = rng::stream(4);
        let a: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + r.random::<f64>()).collect();
        let scaled: Vec<f64> = a.iter().map(|v| 3.0 * v - 7.0).collect();
        assert!((pearson(&a, &b) - pearson(&scaled, &b)).abs() < 1e-12);
    }

    #[test]
    fn forest_and_kernel_fit_a_smooth_target() {
        let mut r = rng::stream(5);
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |_, _| r.random::<f64>());
        let y: Vec<f64> = (0..n).map(|i| (3.0 * x[(i, 0)]).sin() + x[(i, 1)]).collect();
        for spec in [
            ModelSpec::KernelRidge { penalty: 1e-2, bandwidth_scale: 1.0 },
            ModelSpec::RandomForest { trees: 50, max_depth: None, seed: 1 },
        ] {
            let pred = loocv_predictions(&spec, &x, &y);
            assert!(pearson(&pred, &y) > 0.8, "{spec:?}");
        }
        let spec = ModelSpec::RandomForest { trees: 20, max_depth: Some(3), seed: 9 };
        assert_eq!(loocv_predictions(&spec, &x, &y), loocv_predictions(&spec, &x, &y));
    }

    #[test]
    fn grids_stay_within_ten_settings() {
        for f in ModelFamily::ALL {
            let g = default_grid(f, 0);
            assert!(!g.is_empty() && g.len() <= 10);
        }
    }

    fn synthetic_fit() -> (ModelFit, DMatrix<f64>) {
        let (_, truth) = crate::synth::generate(&crate::synth::SynthSpec::benchmark(11)).unwrap();
        let fit = truth.to_fit();
        let x = stationary_representation(&fit).vectors;
        (fit, x)
    }

    #[test]
    fn attribution_ranks_the_source_state_first() {
        let (fit, x) = synthetic_fit();
        for s in 0..x.ncols() {
            let y: Vec<Option<f64>> = x.column(s).iter().map(|v| Some(*v)).collect();
            let att = attribute_states(&fit, &y, "self", 1e-6).unwrap();
            assert_eq!(att.coefficients.len(), fit.num_states());
            assert_eq!(att.coefficients[0].0, s);
            assert!(att.coefficients[0].1 > 0.0);
        }
    }

    #[test]
    fn attribution_of_a_difference() {
        let (fit, x) = synthetic_fit();
        let y: Vec<Option<f64>> = (0..x.nrows()).map(|i| Some(x[(i, 0)] - x[(i, 3)])).collect();
        let att = attribute_states(&fit, &y, "diff", 1e-6).unwrap();
        let mut top: Vec<StateId> = att.coefficients[..2].iter().map(|c| c.0).collect();
        top.sort();
        assert_eq!(top, vec![0, 3]);
        let coef = |s: StateId| att.coefficients.iter().find(|c| c.0 == s).unwrap().1;
        assert!(coef(0) > 0.0 && coef(3) < 0.0);
    }

    #[test]
    fn planted_construct_is_recovered_by_the_benchmark() {
        let (data, truth) = crate::synth::generate(&crate::synth::SynthSpec::benchmark(11)).unwrap();
        let fit = truth.to_fit();
        let mut config = BenchmarkConfig::new(0);
        config.families = vec![ModelFamily::Ridge];
        let result = run_benchmark(&fit, &data, &config).unwrap();
        let planted = result.reports.iter().find(|r| r.construct == "planted" && r.representation == "HMM-S").unwrap();
        assert!(planted.rho >= 0.9, "{}", planted.rho);
        assert_eq!(result.reports.iter().filter(|r| r.construct == "noise").count(), 3);
    }

    #[test]
    fn no_constructs_gives_an_empty_result() {
        let (mut data, truth) = crate::synth::generate(&crate::synth::SynthSpec::benchmark(11)).unwrap();
        data.constructs = None;
        let result = run_benchmark(&truth.to_fit(), &data, &BenchmarkConfig::new(0)).unwrap();
        assert!(result.reports.is_empty() && result.skipped.is_empty());
    }
}
