//! The `bpar` command line: one subcommand per pipeline stage, each reading
//! the previous stage's files from the output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use bpar_core::cluster::{agglomerate, cut, group_tests, largest_gap_height, state_frequencies};
use bpar_core::data::{ChannelSchema, Dataset};
use bpar_core::distance::distance_matrix;
use bpar_core::embedding::{spectral_representation, stationary_representation, Representation};
use bpar_core::model::{fit, prune_rare_states, ModelFit};
use bpar_core::predict::{attribute_states, run_benchmark};
use bpar_core::synth::{generate, score_recovery, Lengths, SynthSpec};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::dataset::{fmt_f64, load_dataset, save_dataset};
use crate::error::{CliError, Result};
use crate::json::{self, AttributionDoc, PredictionDoc, RecoveryDoc, ReportDoc};
use crate::newick::write_newick;

pub const FIT_FILE: &str = "fit.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
/// Representations in the prediction table, in column order.
pub const REPRESENTATIONS: [&str; 3] = ["HMM-S", "HMM-SL", "HMM-SV"];

#[derive(Debug, Parser)]
#[command(name = "bpar", version, about = "Shared autoregressive behavioral states across many time series")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: config, then $BPAR_OUT_DIR, then ./bpar-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random draw; mandatory here or in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-series work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Benchmark,
    TwoGroups,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (`<out>/data`) and its ground truth.
    Synth {
        #[arg(long, value_enum, default_value = "benchmark")]
        preset: Preset,
        /// Number of series (even for two-groups).
        #[arg(long)]
        series: Option<usize>,
        /// Frames per series.
        #[arg(long)]
        length: Option<usize>,
    },
    /// Normalize, fit the model, prune rare states; writes fit.json and trace.csv.
    Fit {
        /// Dataset directory [default: config paths.data].
        #[arg(long)]
        data: Option<PathBuf>,
        /// MCMC sweeps [default: 1000].
        #[arg(long)]
        sweeps: Option<usize>,
        /// Sweeps discarded before averaging [default: 500].
        #[arg(long)]
        burn_in: Option<usize>,
        /// Minimum fraction of frames a state must explain [default: 0.05].
        #[arg(long)]
        prune_threshold: Option<f64>,
        /// Fit the signals as given, without z-scoring.
        #[arg(long)]
        raw: bool,
        /// Also write the normalized dataset to `<out>/normalized`.
        #[arg(long)]
        write_normalized: bool,
    },
    /// Prune an existing fit at a new threshold; writes pruned.json.
    Prune {
        /// Dataset the fit was made on.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit to prune [default: <out>/fit.json].
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Minimum fraction of frames a state must explain.
        #[arg(long)]
        threshold: Option<f64>,
        /// The fit used the signals as given, without z-scoring.
        #[arg(long)]
        raw: bool,
    },
    /// Pairwise HMM distances; writes distances_<measure>.{json,csv}.
    Distances {
        /// Fit to read [default: <out>/fit.json].
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Restrict to one measure.
        #[arg(long)]
        measure: Option<String>,
        /// Transition smoothing mass in (0, 1) [default: 1e-6].
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Stationary and spectral representations; writes embedding_*.{json,csv}.
    Embed {
        /// Fit to read [default: <out>/fit.json].
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Spectral dimensions (repeatable); each must not exceed N.
        #[arg(long)]
        k: Vec<usize>,
        /// Affinity for the Laplacian: `distance` or `gaussian`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Agglomerative clustering of each distance matrix, plus group tests.
    Cluster {
        /// Dataset holding constructs.csv for the group tests.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit to read [default: <out>/fit.json].
        #[arg(long)]
        fit: Option<PathBuf>,
        /// `average`, `single` or `complete` [default: average].
        #[arg(long)]
        linkage: Option<String>,
        /// Cut height [default: the largest gap between merge heights].
        #[arg(long)]
        height: Option<f64>,
        /// Clusters of at most this many series are left unassigned [default: 5].
        #[arg(long)]
        min_size: Option<usize>,
    },
    /// Leave-one-out construct prediction; writes predictions.{csv,json} and attribution.csv.
    Predict {
        /// Dataset holding constructs.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit to read [default: <out>/fit.json].
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Append per-channel mean and variance of the unnormalized signals.
        #[arg(long)]
        raw_features: bool,
        /// The fit used the signals as given, without z-scoring.
        #[arg(long)]
        raw: bool,
    },
    /// Compare a fit with synthetic ground truth; writes recovery.json.
    ScoreRecovery {
        /// Fit to read [default: <out>/fit.json].
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Ground truth [default: <out>/truth.json].
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.paths.out = cli.out.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.seed()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    pool.install(|| dispatch(cli.command, cfg))
}

fn dispatch(command: Command, mut cfg: RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let fit_path = |p: Option<PathBuf>| p.unwrap_or_else(|| out.join(FIT_FILE));
    match command {
        Command::Synth { preset, series, length } => cmd_synth(&cfg, &out, preset, series, length),
        Command::Fit { data, sweeps, burn_in, prune_threshold, raw, write_normalized } => {
            override_data(&mut cfg, data);
            if let Some(s) = sweeps {
                cfg.model.sweeps = s;
                cfg.model.burn_in = cfg.model.burn_in.min(s);
            }
            if let Some(b) = burn_in {
                cfg.model.burn_in = b;
            }
            if let Some(t) = prune_threshold {
                cfg.model.prune_threshold = t;
            }
            if raw {
                cfg.model.normalize = false;
            }
            cmd_fit(&cfg, &out, write_normalized)
        }
        Command::Prune { data, fit, threshold, raw } => {
            override_data(&mut cfg, data);
            if let Some(t) = threshold {
                cfg.model.prune_threshold = t;
            }
            if raw {
                cfg.model.normalize = false;
            }
            cmd_prune(&cfg, &out, &fit_path(fit))
        }
        Command::Distances { fit, measure, epsilon } => {
            if let Some(m) = measure {
                cfg.distance.measures = vec![m];
            }
            if let Some(e) = epsilon {
                cfg.distance.epsilon = e;
            }
            cmd_distances(&cfg, &out, &fit_path(fit))
        }
        Command::Embed { fit, k, mode } => {
            if let Some(m) = mode {
                cfg.embed.mode = m;
            }
            let explicit = !k.is_empty();
            if explicit {
                cfg.embed.k = k;
            }
            cmd_embed(&cfg, &out, &fit_path(fit), explicit)
        }
        Command::Cluster { data, fit, linkage, height, min_size } => {
            override_data(&mut cfg, data);
            if let Some(l) = linkage {
                cfg.cluster.linkage = l;
            }
            if height.is_some() {
                cfg.cluster.height = height;
            }
            if let Some(m) = min_size {
                cfg.cluster.min_size = m;
            }
            cmd_cluster(&cfg, &out, &fit_path(fit))
        }
        Command::Predict { data, fit, raw_features, raw } => {
            override_data(&mut cfg, data);
            if raw_features {
                cfg.predict.raw_features = true;
            }
            if raw {
                cfg.model.normalize = false;
            }
            cmd_predict(&cfg, &out, &fit_path(fit))
        }
        Command::ScoreRecovery { fit, truth } => {
            let truth = truth.unwrap_or_else(|| out.join(TRUTH_FILE));
            cmd_score_recovery(&out, &fit_path(fit), &truth)
        }
    }
}

fn override_data(cfg: &mut RunConfig, data: Option<PathBuf>) {
    if data.is_some() {
        cfg.paths.data = data;
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let io = |e: csv::Error| CliError::io(path, e.into());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

/// The dataset as the fit saw it: z-scored unless the config says otherwise.
fn model_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir()?;
    let schema = match &cfg.channels {
        Some(names) => Some(ChannelSchema::from_names(names).map_err(|e| CliError::Usage(e.to_string()))?),
        None => None,
    };
    let data = load_dataset(&dir, schema.as_ref())?;
    if !cfg.model.normalize {
        return Ok(data);
    }
    let (norm, report) = data.normalized();
    for (id, channel) in &report.constant_channels {
        eprintln!("warning: series `{id}` channel `{channel}` is constant; set to zero");
    }
    Ok(norm)
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path, preset: Preset, series: Option<usize>, length: Option<usize>) -> Result<()> {
    let seed = cfg.seed()?;
    let mut spec = match preset {
        Preset::Benchmark => {
            let mut s = SynthSpec::benchmark(seed);
            if let Some(n) = series {
                s.num_series = n;
            }
            s
        }
        Preset::TwoGroups => {
            let n = series.unwrap_or(20);
            if n < 2 || !n.is_multiple_of(2) {
                return Err(CliError::Usage(format!("two-groups needs an even series count, got {n}")));
            }
            SynthSpec::two_groups(n / 2, seed)
        }
    };
    if let Some(t) = length {
        spec.lengths = Lengths::Fixed(t);
    }
    let (data, truth) = generate(&spec)?;
    let dir = out.join("data");
    save_dataset(&dir, &data)?;
    announce(&dir);
    let path = out.join(TRUTH_FILE);
    json::write_truth(&path, &truth)?;
    announce(&path);
    Ok(())
}

fn write_trace(path: &Path, fit: &ModelFit) -> Result<()> {
    let d = &fit.diagnostics;
    let header = ["sweep", "log_likelihood", "num_states"].map(String::from);
    let rows = d
        .log_likelihood
        .iter()
        .zip(&d.num_states)
        .enumerate()
        .map(|(i, (ll, k))| vec![(i + 1).to_string(), fmt_f64(*ll), k.to_string()]);
    write_csv(path, &header, rows)
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path, write_normalized: bool) -> Result<()> {
    let data = model_dataset(cfg)?;
    if write_normalized {
        let dir = out.join("normalized");
        save_dataset(&dir, &data)?;
        announce(&dir);
    }
    let hyper = cfg.hyperparams(data.schema.len())?;
    let mut model = fit(&data, &hyper)?;
    if cfg.model.prune_threshold > 0.0 {
        model = prune_rare_states(&model, &data, cfg.model.prune_threshold)?;
    }
    let path = out.join(FIT_FILE);
    json::write_fit(&path, &model)?;
    announce(&path);
    let trace = out.join("trace.csv");
    write_trace(&trace, &model)?;
    announce(&trace);
    println!("{} series, {} states", model.num_series(), model.num_states());
    Ok(())
}

pub fn cmd_prune(cfg: &RunConfig, out: &Path, fit_path: &Path) -> Result<()> {
    let model = json::read_fit(fit_path)?;
    let data = model_dataset(cfg)?;
    let pruned = prune_rare_states(&model, &data, cfg.model.prune_threshold)?;
    let path = out.join("pruned.json");
    json::write_fit(&path, &pruned)?;
    announce(&path);
    Ok(())
}

fn distances_path(out: &Path, measure: &str) -> PathBuf {
    out.join(format!("distances_{measure}.json"))
}

fn write_matrix_csv(path: &Path, ids: &[String], values: &nalgebra::DMatrix<f64>, col_names: &[String]) -> Result<()> {
    let mut header = vec![String::from("id")];
    header.extend(col_names.iter().cloned());
    let rows = ids.iter().enumerate().map(|(i, id)| {
        let mut row = vec![id.clone()];
        row.extend(values.row(i).iter().map(|v| fmt_f64(*v)));
        row
    });
    write_csv(path, &header, rows)
}

pub fn cmd_distances(cfg: &RunConfig, out: &Path, fit_path: &Path) -> Result<()> {
    let model = json::read_fit(fit_path)?;
    let opts = cfg.distance_options()?;
    for measure in cfg.measures()? {
        let dm = distance_matrix(&model, measure, &opts)?;
        let path = distances_path(out, measure.as_str());
        json::write_distances(&path, &dm)?;
        announce(&path);
        let csv = path.with_extension("csv");
        write_matrix_csv(&csv, &dm.ids, &dm.values, &dm.ids)?;
        announce(&csv);
    }
    Ok(())
}

fn write_representation(out: &Path, stem: &str, rep: &Representation) -> Result<()> {
    let path = out.join(format!("{stem}.json"));
    json::write_representation(&path, rep)?;
    announce(&path);
    let names: Vec<String> = (1..=rep.dim()).map(|j| format!("dim{j}")).collect();
    let csv = path.with_extension("csv");
    write_matrix_csv(&csv, &rep.ids, &rep.vectors, &names)?;
    announce(&csv);
    Ok(())
}

/// Explicit `k` values must not exceed `N`; the configured grid is capped
/// at `N` instead.
pub fn cmd_embed(cfg: &RunConfig, out: &Path, fit_path: &Path, explicit_k: bool) -> Result<()> {
    let model = json::read_fit(fit_path)?;
    let mode = cfg.spectral_mode()?;
    let n = model.num_series();
    let mut ks: Vec<usize> = cfg.embed.k.clone();
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || (explicit_k && k > n)) {
        return Err(CliError::Usage(format!("spectral dimension K = {bad} must lie in 1..={n} (N series)")));
    }
    ks.retain(|&k| k <= n);
    if ks.is_empty() {
        ks.push(n);
    }
    write_representation(out, "embedding_stationary", &stationary_representation(&model))?;
    for measure in cfg.measures()? {
        let dm = json::read_distances(&distances_path(out, measure.as_str()))?;
        if dm.ids != model.ids() {
            return Err(CliError::Usage(format!("distances_{} does not match the fit's series", measure.as_str())));
        }
        for &k in &ks {
            let rep = spectral_representation(&dm, k, mode)?;
            write_representation(out, &format!("embedding_{}_k{k}", measure.as_str()), &rep)?;
        }
    }
    Ok(())
}

pub fn cmd_cluster(cfg: &RunConfig, out: &Path, fit_path: &Path) -> Result<()> {
    let linkage = cfg.linkage()?;
    let model = if fit_path.is_file() { Some(json::read_fit(fit_path)?) } else { None };
    let constructs = match &cfg.paths.data {
        Some(_) => load_dataset(&cfg.data_dir()?, None)?.constructs,
        None => None,
    };
    for measure in cfg.measures()? {
        let m = measure.as_str();
        let dm = json::read_distances(&distances_path(out, m))?;
        let dend = agglomerate(&dm, linkage)?;
        let path = out.join(format!("dendrogram_{m}.json"));
        json::write_dendrogram(&path, &dend)?;
        announce(&path);
        let nwk = path.with_extension("nwk");
        fs::write(&nwk, write_newick(&dend) + "\n").map_err(|e| CliError::io(&nwk, e))?;
        announce(&nwk);
        let height = cfg
            .cluster
            .height
            .or_else(|| largest_gap_height(&dend))
            .unwrap_or_else(|| dend.merges.last().map_or(0.0, |m| m.height));
        let labels = cut(&dend, height, cfg.cluster.min_size);
        let path = out.join(format!("clusters_{m}.csv"));
        let header = ["id", "cluster"].map(String::from);
        write_csv(&path, &header, labels.ids.iter().zip(&labels.labels).map(|(id, l)| vec![id.clone(), l.to_string()]))?;
        announce(&path);
        println!("{m}: cut at {height}, {} clusters", labels.num_clusters());
        if let Some(fit) = &model {
            if fit.ids() == labels.ids && labels.num_clusters() > 0 {
                let freq = state_frequencies(fit, &labels);
                let path = out.join(format!("frequencies_{m}.csv"));
                let ids: Vec<String> = (0..freq.nrows()).map(|c| c.to_string()).collect();
                let names: Vec<String> = (0..freq.ncols()).map(|k| format!("state{k}")).collect();
                write_matrix_csv(&path, &ids, &freq, &names)?;
                announce(&path);
            }
        }
        if let Some(table) = &constructs {
            if labels.num_clusters() < 2 {
                eprintln!("note: {m}: fewer than two clusters above the size cutoff; group tests skipped");
                continue;
            }
            let tests = group_tests(&labels, table)?;
            let path = out.join(format!("tests_{m}.csv"));
            let header = ["variable", "kind", "statistic", "dof", "p_value", "n", "small_expected"].map(String::from);
            let rows = tests.iter().map(|t| {
                let kind = match t.kind {
                    bpar_core::cluster::VariableKind::Categorical => "categorical",
                    bpar_core::cluster::VariableKind::Numeric => "numeric",
                };
                let (s, d, p, small) = match &t.outcome {
                    Some(o) => (fmt_f64(o.statistic), o.dof.to_string(), fmt_f64(o.p_value), o.small_expected.to_string()),
                    None => Default::default(),
                };
                vec![t.variable.clone(), kind.into(), s, d, p, t.n.to_string(), small]
            });
            write_csv(&path, &header, rows)?;
            announce(&path);
        }
    }
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, out: &Path, fit_path: &Path) -> Result<()> {
    let model = json::read_fit(fit_path)?;
    let data = model_dataset(cfg)?;
    if data.ids() != model.ids() {
        return Err(CliError::Usage("the dataset and the fit list different series".into()));
    }
    let result = run_benchmark(&model, &data, &cfg.benchmark()?)?;
    for (name, reason) in &result.skipped {
        eprintln!("note: construct `{name}` skipped: {reason}");
    }
    let mut constructs: Vec<&str> = Vec::new();
    for r in &result.reports {
        if !constructs.contains(&r.construct.as_str()) {
            constructs.push(&r.construct);
        }
    }
    let mut header = vec![String::from("construct")];
    for rep in REPRESENTATIONS {
        header.push(format!("{rep}_rho"));
        header.push(format!("{rep}_rmse"));
    }
    let rows = constructs.iter().map(|c| {
        let mut row = vec![c.to_string()];
        for rep in REPRESENTATIONS {
            match result.reports.iter().find(|r| r.construct == *c && r.representation == rep) {
                Some(r) => row.extend([fmt_f64(r.rho), fmt_f64(r.rmse)]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        row
    });
    let path = out.join(PREDICTIONS_FILE);
    write_csv(&path, &header, rows)?;
    announce(&path);

    let ids = model.ids();
    let mut attribution = Vec::new();
    if let Some(table) = &data.constructs {
        for c in &constructs {
            let y = table.numeric_for(c, &ids).expect("reported constructs are numeric");
            attribution.push(attribute_states(&model, &y, c, cfg.predict.attribution_penalty)?);
        }
    }
    let path = out.join("attribution.csv");
    let header = ["construct", "rank", "state", "coefficient"].map(String::from);
    let rows = attribution.iter().flat_map(|a| {
        a.coefficients
            .iter()
            .enumerate()
            .map(|(rank, (s, c))| vec![a.construct.clone(), (rank + 1).to_string(), s.to_string(), fmt_f64(*c)])
    });
    write_csv(&path, &header, rows)?;
    announce(&path);

    let doc = PredictionDoc {
        format: json::FORMAT,
        kind: "prediction".into(),
        reports: result.reports.iter().map(ReportDoc::from).collect(),
        skipped: result.skipped.clone(),
        attribution: attribution.iter().map(AttributionDoc::from).collect(),
    };
    let path = out.join("predictions.json");
    json::write_doc(&path, &doc)?;
    announce(&path);
    Ok(())
}

pub fn cmd_score_recovery(out: &Path, fit_path: &Path, truth_path: &Path) -> Result<()> {
    let model = json::read_fit(fit_path)?;
    let truth = json::read_truth(truth_path)?;
    let rec = score_recovery(&model, &truth)?;
    let path = out.join("recovery.json");
    json::write_doc(&path, &RecoveryDoc::from(&rec))?;
    announce(&path);
    println!(
        "accuracy {:.4}, K fit {} vs true {}, feature agreement {:.4}",
        rec.accuracy, rec.k_fit, rec.k_true, rec.feature_agreement
    );
    Ok(())
}
