//! The `simulate`, `fit`, `rotate` and `evaluate` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use factm_core::codec::{decode_state, encode_state};
use factm_core::evaluation::{frobenius_relative, match_factors, match_topics, permute_topics};
use factm_core::rotation::{cross_correlation, kabsch_rotation, Feature, FeatureKind, FeatureSet, RotatedSummary};
use factm_core::{fit, generate, scenario, FitReport, Hyperparams, ScenarioSpec, VariationalState};
use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io::{
    load_dataset, numbered, read_assignments_tsv, read_json, read_matrix_csv, save_dataset, write_assignments_tsv,
    write_json, write_matrix_csv, ConfigFile, LoadedData,
};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn labels(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

pub struct FitArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
}

pub fn run_fit(args: &FitArgs) -> Result<(), CliError> {
    let loaded = load_dataset(&args.data)?;
    let mut config = match &args.config {
        Some(path) => read_json::<ConfigFile>(path)?,
        None => ConfigFile::default(),
    };
    if config.hyperparams.n_topics.is_empty() && !loaded.dataset.structured_views.is_empty() {
        return Err(CliError::Validation(
            "config must list hyperparams.n_topics, one entry per structured view".into(),
        ));
    }
    if let Some(seed) = args.seed {
        config.fit.seed = seed;
    }
    if let Some(r) = args.restarts {
        config.fit.n_restarts = r;
    }
    let (state, report) = fit(&loaded.dataset, &config.hyperparams, &config.fit)?;
    info!(
        "fit finished: {} sweeps, final ELBO {:.6}, converged {}",
        report.sweeps_used,
        report.final_elbo(),
        report.converged
    );
    write_fit_outputs(&args.out, &loaded, &state, &report)
}

/// Writes every fit artifact into `dir`.
pub fn write_fit_outputs(dir: &Path, loaded: &LoadedData, state: &VariationalState, report: &FitReport) -> Result<(), CliError> {
    create_dir(dir)?;
    let ds = &loaded.dataset;
    let k_count = state.n_factors();
    let factor_names = labels("factor_", k_count);
    write_matrix_csv(&dir.join("factors.csv"), "sample_id", &loaded.sample_ids, &factor_names, &state.z.mean)?;
    for (m, (view, vs)) in ds.simple_views.iter().zip(&state.simple).enumerate() {
        let names = loaded
            .feature_names
            .get(m)
            .cloned()
            .unwrap_or_else(|| numbered("feature_", view.n_features()));
        let path = dir.join(format!("loadings_{}.csv", view.name));
        write_matrix_csv(&path, "feature", &names, &factor_names, &vs.mean_loadings())?;
        let path = dir.join(format!("inclusion_{}.csv", view.name));
        write_matrix_csv(&path, "feature", &names, &factor_names, &vs.gamma)?;
    }
    for (view, vs) in ds.structured_views.iter().zip(&state.structured) {
        let name = &view.name;
        let topics = labels("topic_", vs.n_topics());
        write_matrix_csv(&dir.join(format!("link_loadings_{name}.csv")), "topic", &topics, &factor_names, &vs.wbar_mean)?;
        let tokens = labels("token_", vs.vocab_size());
        write_matrix_csv(&dir.join(format!("topics_{name}.csv")), "topic", &topics, &tokens, &vs.topic_means())?;
        write_matrix_csv(&dir.join(format!("eta_{name}.csv")), "sample_id", &loaded.sample_ids, &topics, &vs.eta_mean)?;
        let mu_path = dir.join(format!("mu_link_{name}.csv"));
        write_matrix_csv(&mu_path, "sample_id", &loaded.sample_ids, &topics, &vs.mu_link_mean)?;
        write_matrix_csv(&dir.join(format!("sigma0_{name}.csv")), "topic", &topics, &topics, &vs.sigma0)?;
        let mu0 = DMatrix::from_column_slice(vs.n_topics(), 1, vs.mu0.as_slice());
        write_matrix_csv(&dir.join(format!("mu0_{name}.csv")), "topic", &topics, &["mu0".to_string()], &mu0)?;
        let hard = vs.hard_assignments();
        let per_sample: Vec<Vec<usize>> = (0..ds.n_samples)
            .map(|n| hard[vs.sentence_offsets[n]..vs.sentence_offsets[n + 1]].to_vec())
            .collect();
        write_assignments_tsv(&dir.join(format!("assignments_{name}.tsv")), &loaded.sample_ids, &per_sample)?;
    }
    write_json(&dir.join("report.json"), report)?;
    let names: Vec<String> = ds
        .simple_views
        .iter()
        .map(|v| v.name.clone())
        .chain(ds.structured_views.iter().map(|v| v.name.clone()))
        .collect();
    let path = dir.join("state.bin");
    fs::write(&path, encode_state(state, &names)).map_err(|e| CliError::io(&path, e))
}

pub struct SimulateArgs {
    /// `None` gives the baseline design.
    pub scenario: Option<u32>,
    pub level: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let spec = match args.scenario {
        Some(id) => scenario(id, args.level)?,
        None => ScenarioSpec::baseline(),
    };
    let (dataset, truth) = generate(&spec, args.seed);
    let sample_ids = numbered("sample_", dataset.n_samples);
    let loaded = LoadedData {
        feature_names: dataset
            .simple_views
            .iter()
            .map(|v| numbered("feature_", v.n_features()))
            .collect(),
        sample_ids,
        dataset,
    };
    save_dataset(&args.out, &loaded)?;
    write_json(&args.out.join("spec.json"), &spec)?;

    let dir = args.out.join("truth");
    create_dir(&dir)?;
    let ids = &loaded.sample_ids;
    let factor_names = labels("factor_", spec.n_factors);
    write_matrix_csv(&dir.join("factors.csv"), "sample_id", ids, &factor_names, &truth.z)?;
    for (m, w) in truth.loadings.iter().enumerate() {
        let view = &loaded.dataset.simple_views[m];
        let path = dir.join(format!("loadings_{}.csv", view.name));
        write_matrix_csv(&path, "feature", &loaded.feature_names[m], &factor_names, w)?;
    }
    for (view, t) in loaded.dataset.structured_views.iter().zip(&truth.structured) {
        let name = &view.name;
        let topics = labels("topic_", spec.n_topics);
        write_matrix_csv(&dir.join(format!("link_loadings_{name}.csv")), "topic", &topics, &factor_names, &t.wbar)?;
        let tokens = labels("token_", spec.vocab_size);
        write_matrix_csv(&dir.join(format!("topics_{name}.csv")), "topic", &topics, &tokens, &t.beta)?;
        write_matrix_csv(&dir.join(format!("eta_{name}.csv")), "sample_id", ids, &topics, &t.eta)?;
        write_matrix_csv(&dir.join(format!("mu_link_{name}.csv")), "sample_id", ids, &topics, &t.mu_link)?;
        write_matrix_csv(&dir.join(format!("sigma0_{name}.csv")), "topic", &topics, &topics, &t.sigma0)?;
        let mu0 = DMatrix::from_column_slice(spec.n_topics, 1, t.mu0.as_slice());
        write_matrix_csv(&dir.join(format!("mu0_{name}.csv")), "topic", &topics, &["mu0".to_string()], &mu0)?;
        write_assignments_tsv(&dir.join(format!("assignments_{name}.tsv")), ids, &t.xi)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub topic_accuracy: f64,
    pub sigma0_frobenius: f64,
    pub sigma0_frobenius_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean matched absolute Spearman correlation of the factors.
    pub factor_spearman: f64,
    /// Means over structured views; absent when there are none.
    pub topic_accuracy: Option<f64>,
    pub sigma0_frobenius: Option<f64>,
    pub sigma0_frobenius_scaled: Option<f64>,
    /// `(true factor, estimated factor, |rho|)`.
    pub factor_pairs: Vec<(usize, usize, f64)>,
    pub views: BTreeMap<String, ViewMetrics>,
}

pub struct EvaluateArgs {
    pub truth: PathBuf,
    pub fit: PathBuf,
    pub out: PathBuf,
}

fn structured_view_names(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let file = entry.file_name().to_string_lossy().to_string();
        if let Some(name) = file.strip_prefix("assignments_").and_then(|f| f.strip_suffix(".tsv")) {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn evaluate_dirs(truth_dir: &Path, fit_dir: &Path) -> Result<Metrics, CliError> {
    let true_z = read_matrix_csv(&truth_dir.join("factors.csv"))?;
    let est_z = read_matrix_csv(&fit_dir.join("factors.csv"))?;
    if true_z.row_ids != est_z.row_ids {
        return Err(CliError::Validation("factor files list different samples".into()));
    }
    let factors = match_factors(&true_z.values, &est_z.values)?;

    let mut views = BTreeMap::new();
    for name in structured_view_names(truth_dir)? {
        let file = format!("assignments_{name}.tsv");
        let truth = read_assignments_tsv(&truth_dir.join(&file))?;
        let est: BTreeMap<(String, usize), usize> = read_assignments_tsv(&fit_dir.join(&file))?.into_iter().collect();
        let mut true_labels = Vec::with_capacity(truth.len());
        let mut est_labels = Vec::with_capacity(truth.len());
        for (key, t) in &truth {
            let e = est
                .get(key)
                .ok_or_else(|| CliError::Validation(format!("{file}: no estimate for sample {} sentence {}", key.0, key.1)))?;
            true_labels.push(*t);
            est_labels.push(*e);
        }
        let topics = match_topics(&true_labels, &est_labels)?;
        let sigma_file = format!("sigma0_{name}.csv");
        let true_sigma = read_matrix_csv(&truth_dir.join(&sigma_file))?.values;
        let est_sigma = permute_topics(&read_matrix_csv(&fit_dir.join(&sigma_file))?.values, &topics);
        views.insert(
            name,
            ViewMetrics {
                topic_accuracy: topics.accuracy,
                sigma0_frobenius: frobenius_relative(&true_sigma, &est_sigma, false)?,
                sigma0_frobenius_scaled: frobenius_relative(&true_sigma, &est_sigma, true)?,
            },
        );
    }
    let collect = |f: fn(&ViewMetrics) -> f64| views.values().map(f).collect::<Vec<_>>();
    Ok(Metrics {
        factor_spearman: factors.mean_abs_rho,
        topic_accuracy: mean(&collect(|v| v.topic_accuracy)),
        sigma0_frobenius: mean(&collect(|v| v.sigma0_frobenius)),
        sigma0_frobenius_scaled: mean(&collect(|v| v.sigma0_frobenius_scaled)),
        factor_pairs: factors.pairs,
        views,
    })
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let metrics = evaluate_dirs(&args.truth, &args.fit)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&args.out, &metrics)
}

pub struct RotateArgs {
    /// A `state.bin` file or a fit output directory.
    pub state: PathBuf,
    pub features: PathBuf,
    pub out: PathBuf,
}

/// Features CSV: header `sample_id,<names>`, then a row `kind,<numeric|binary>...`, then one row per sample.
pub fn read_features_csv(path: &Path) -> Result<(Vec<String>, FeatureSet), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::parse(path, 0, e.to_string()))?;
    let header = reader.headers().map_err(|e| CliError::parse(path, 1, e.to_string()))?.clone();
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut records = reader.records();
    let kinds_record = records
        .next()
        .ok_or_else(|| CliError::parse(path, 2, "missing kind row".into()))?
        .map_err(|e| CliError::parse(path, 2, e.to_string()))?;
    let kinds = kinds_record
        .iter()
        .skip(1)
        .map(|k| match k {
            "numeric" => Ok(FeatureKind::Numeric),
            "binary" => Ok(FeatureKind::Binary),
            other => Err(CliError::parse(path, 2, format!("unknown feature kind '{other}'"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut ids = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for record in records {
        let record = record.map_err(|e| CliError::parse(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        ids.push(record[0].to_string());
        for (j, field) in record.iter().skip(1).enumerate() {
            let v = field
                .parse::<f64>()
                .map_err(|_| CliError::parse(path, line, format!("'{field}' is not a number")))?;
            columns[j].push(v);
        }
    }
    let features = names
        .into_iter()
        .zip(kinds)
        .zip(columns)
        .map(|((name, kind), values)| Feature {
            name,
            kind,
            values: DVector::from_vec(values),
        })
        .collect();
    Ok((ids, FeatureSet::new(features)?))
}

/// Point summaries plus labels, read from either a state file or a fit directory.
struct Summary {
    sample_ids: Vec<String>,
    summary: RotatedSummary,
    simple: Vec<(String, Vec<String>)>,
    structured: Vec<String>,
}

fn load_summary(path: &Path) -> Result<Summary, CliError> {
    if path.is_dir() {
        let factors = read_matrix_csv(&path.join("factors.csv"))?;
        let mut simple = Vec::new();
        let mut loadings = Vec::new();
        let mut structured = Vec::new();
        let mut link_loadings = Vec::new();
        let mut files: Vec<String> = fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().to_string()))
            .collect();
        files.sort();
        for file in files {
            if let Some(name) = file.strip_prefix("link_loadings_").and_then(|f| f.strip_suffix(".csv")) {
                link_loadings.push(read_matrix_csv(&path.join(&file))?.values);
                structured.push(name.to_string());
            } else if let Some(name) = file.strip_prefix("loadings_").and_then(|f| f.strip_suffix(".csv")) {
                let m = read_matrix_csv(&path.join(&file))?;
                simple.push((name.to_string(), m.row_ids));
                loadings.push(m.values);
            }
        }
        Ok(Summary {
            sample_ids: factors.row_ids,
            summary: RotatedSummary {
                factors: factors.values,
                loadings,
                link_loadings,
            },
            simple,
            structured,
        })
    } else {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let (state, names) = decode_state(&bytes)?;
        let n_simple = state.simple.len();
        let simple = state
            .simple
            .iter()
            .zip(&names)
            .map(|(v, name)| (name.clone(), numbered("feature_", v.n_features())))
            .collect();
        Ok(Summary {
            sample_ids: numbered("sample_", state.n_samples()),
            summary: RotatedSummary::from_state(&state),
            simple,
            structured: names[n_simple..].to_vec(),
        })
    }
}

pub fn run_rotate(args: &RotateArgs) -> Result<(), CliError> {
    let loaded = load_summary(&args.state)?;
    let (feature_ids, features) = read_features_csv(&args.features)?;
    let n = loaded.sample_ids.len();
    // Align feature rows with the factor rows by sample id when possible.
    let features = if feature_ids == loaded.sample_ids || !args.state.is_dir() {
        if feature_ids.len() != n {
            return Err(CliError::Validation(format!("{} feature rows for {n} samples", feature_ids.len())));
        }
        features
    } else {
        let index: BTreeMap<&str, usize> = feature_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let rows = loaded
            .sample_ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| CliError::Validation(format!("no feature row for sample {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        FeatureSet::new(
            features
                .features
                .into_iter()
                .map(|f| Feature {
                    values: DVector::from_iterator(n, rows.iter().map(|&r| f.values[r])),
                    ..f
                })
                .collect(),
        )?
    };

    let h = cross_correlation(&loaded.summary.factors, &features)?;
    let r = kabsch_rotation(&h);
    let rotated = loaded.summary.rotated(&r)?;
    let h_after = cross_correlation(&rotated.factors, &features)?;

    create_dir(&args.out)?;
    let k_count = r.nrows();
    let factor_names = labels("factor_", k_count);
    let mut columns: Vec<String> = features.features.iter().map(|f| f.name.clone()).collect();
    columns.extend((columns.len()..k_count).map(|j| format!("padding_{j}")));
    write_matrix_csv(&args.out.join("rotation.csv"), "factor", &factor_names, &factor_names, &r)?;
    write_matrix_csv(&args.out.join("cross_correlation.csv"), "factor", &factor_names, &columns, &h)?;
    write_matrix_csv(&args.out.join("cross_correlation_rotated.csv"), "factor", &factor_names, &columns, &h_after)?;
    write_matrix_csv(&args.out.join("factors.csv"), "sample_id", &loaded.sample_ids, &factor_names, &rotated.factors)?;
    for ((name, features), w) in loaded.simple.iter().zip(&rotated.loadings) {
        write_matrix_csv(&args.out.join(format!("loadings_{name}.csv")), "feature", features, &factor_names, w)?;
    }
    for (name, w) in loaded.structured.iter().zip(&rotated.link_loadings) {
        let topics = labels("topic_", w.nrows());
        write_matrix_csv(&args.out.join(format!("link_loadings_{name}.csv")), "topic", &topics, &factor_names, w)?;
    }
    Ok(())
}

/// Reads the hyperparameters and fit settings from a config file, for callers
/// that want to inspect them without fitting.
pub fn load_config(path: &Path) -> Result<(Hyperparams, factm_core::FitConfig), CliError> {
    let c: ConfigFile = read_json(path)?;
    Ok((c.hyperparams, c.fit))
}
