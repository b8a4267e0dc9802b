//! File formats: JSON manifest and config, CSV matrices, TSV sentence counts.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use factm_core::{Dataset, FitConfig, Hyperparams, Sentence, SimpleView, StructuredView};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleEntry {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredEntry {
    pub name: String,
    pub path: PathBuf,
    pub vocab_size: usize,
}

/// Dataset manifest. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub simple_views: Vec<SimpleEntry>,
    #[serde(default)]
    pub structured_views: Vec<StructuredEntry>,
}

/// Fit configuration file: model hyperparameters plus optimizer settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub hyperparams: Hyperparams,
    pub fit: FitConfig,
}

/// A dataset together with the labels needed to write results back out.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub sample_ids: Vec<String>,
    /// Feature names per simple view.
    pub feature_names: Vec<Vec<String>>,
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.line(), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn csv_reader(path: &Path, delimiter: u8, has_headers: bool) -> Result<csv::Reader<fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(has_headers)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::parse(path, 0, e.to_string()))
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    CliError::parse(path, line, e.to_string())
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64, CliError> {
    field
        .parse::<f64>()
        .map_err(|_| CliError::parse(path, line, format!("'{field}' is not a number")))
}

/// A labelled matrix: the first CSV column holds row ids, the header holds column names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledMatrix {
    pub row_ids: Vec<String>,
    pub col_names: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_matrix_csv(path: &Path) -> Result<LabelledMatrix, CliError> {
    let mut reader = csv_reader(path, b',', true)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() {
        return Err(CliError::parse(path, 1, "missing header".into()));
    }
    let col_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        row_ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            data.push(parse_f64(path, line, field)?);
        }
    }
    let values = DMatrix::from_row_slice(row_ids.len(), col_names.len(), &data);
    Ok(LabelledMatrix { row_ids, col_names, values })
}

/// Writes a matrix with a leading id column. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_matrix_csv(
    path: &Path,
    id_header: &str,
    row_ids: &[String],
    col_names: &[String],
    values: &DMatrix<f64>,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(id_header);
    for c in col_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (i, id) in row_ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..values.ncols() {
            out.push(',');
            out.push_str(&values[(i, j)].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// One row of a sentence-count table.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CountRow {
    sentence: usize,
    token: u32,
    count: f64,
}

/// Reads `sample_id, sentence_index, token_index, count` rows (header optional).
/// Returns sentences per sample id, ordered by sentence index; repeated
/// tokens within a sentence are summed.
fn read_counts_tsv(path: &Path, vocab_size: usize) -> Result<(Vec<String>, HashMap<String, Vec<Sentence>>), CliError> {
    let mut reader = csv_reader(path, b'\t', false)?;
    let mut order = Vec::new();
    let mut rows: HashMap<String, Vec<CountRow>> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        if i == 0 && record.get(0) == Some("sample_id") {
            continue;
        }
        if record.len() != 4 {
            return Err(CliError::parse(path, line, format!("expected 4 columns, found {}", record.len())));
        }
        let sentence = record[1]
            .parse::<usize>()
            .map_err(|_| CliError::parse(path, line, format!("sentence index '{}' is not a non-negative integer", &record[1])))?;
        let token = record[2]
            .parse::<u32>()
            .map_err(|_| CliError::parse(path, line, format!("token index '{}' is not a non-negative integer", &record[2])))?;
        if token as usize >= vocab_size {
            return Err(CliError::parse(
                path,
                line,
                format!("token index {token} out of range for vocabulary size {vocab_size}"),
            ));
        }
        let count = parse_f64(path, line, &record[3])?;
        if !(count >= 0.0) || !count.is_finite() {
            return Err(CliError::parse(path, line, format!("count {count} must be a non-negative number")));
        }
        let id = record[0].to_string();
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(CountRow { sentence, token, count });
    }
    let samples = rows
        .into_iter()
        .map(|(id, rows)| {
            let mut by_sentence: BTreeMap<usize, BTreeMap<u32, f64>> = BTreeMap::new();
            for r in rows {
                *by_sentence.entry(r.sentence).or_default().entry(r.token).or_insert(0.0) += r.count;
            }
            let sentences = by_sentence
                .into_values()
                .map(|entries| Sentence::new(entries.into_iter().filter(|&(_, c)| c > 0.0).collect()))
                .collect();
            (id, sentences)
        })
        .collect();
    Ok((order, samples))
}

/// Writes sentences as `sample_id, sentence_index, token_index, count` rows.
pub fn write_counts_tsv(path: &Path, sample_ids: &[String], view: &StructuredView) -> Result<(), CliError> {
    let mut out = String::from("sample_id\tsentence_index\ttoken_index\tcount\n");
    for (id, sentences) in sample_ids.iter().zip(&view.samples) {
        for (i, sentence) in sentences.iter().enumerate() {
            for &(g, c) in &sentence.entries {
                out.push_str(&format!("{id}\t{i}\t{g}\t{c}\n"));
            }
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every view named by the manifest. Sample order follows the first
/// simple view (or the first structured view if there are none).
pub fn load_dataset(manifest_path: &Path) -> Result<LoadedData, CliError> {
    let manifest: Manifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut sample_ids: Option<Vec<String>> = None;
    let mut simple_views = Vec::new();
    let mut feature_names = Vec::new();
    for entry in &manifest.simple_views {
        let path = resolve(base, &entry.path);
        let m = read_matrix_csv(&path)?;
        match &sample_ids {
            None => sample_ids = Some(m.row_ids.clone()),
            Some(ids) if ids != &m.row_ids => {
                return Err(CliError::Validation(format!(
                    "sample ids of view '{}' do not match those of the first view",
                    entry.name
                )));
            }
            _ => {}
        }
        feature_names.push(m.col_names);
        simple_views.push(SimpleView::new(entry.name.clone(), m.values));
    }

    let mut structured_views = Vec::new();
    for entry in &manifest.structured_views {
        let path = resolve(base, &entry.path);
        let (order, mut samples) = read_counts_tsv(&path, entry.vocab_size)?;
        let ids = sample_ids.get_or_insert_with(|| order.clone());
        if let Some(extra) = samples.keys().find(|id| !ids.contains(id)) {
            return Err(CliError::Validation(format!(
                "structured view '{}' has sample '{extra}' that is not in the simple views",
                entry.name
            )));
        }
        let per_sample = ids.iter().map(|id| samples.remove(id).unwrap_or_default()).collect();
        structured_views.push(StructuredView::new(entry.name.clone(), entry.vocab_size, per_sample));
    }

    let sample_ids = sample_ids.unwrap_or_default();
    let mut dataset = Dataset::new(simple_views, structured_views);
    dataset.n_samples = sample_ids.len();
    Ok(LoadedData {
        dataset,
        sample_ids,
        feature_names,
    })
}

/// Writes a dataset as manifest + per-view files into `dir`.
pub fn save_dataset(dir: &Path, data: &LoadedData) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut manifest = Manifest::default();
    for (m, view) in data.dataset.simple_views.iter().enumerate() {
        let file = format!("{}.csv", view.name);
        let names = data
            .feature_names
            .get(m)
            .cloned()
            .unwrap_or_else(|| numbered("feature_", view.n_features()));
        write_matrix_csv(&dir.join(&file), "sample_id", &data.sample_ids, &names, &view.data)?;
        manifest.simple_views.push(SimpleEntry {
            name: view.name.clone(),
            path: file.into(),
        });
    }
    for view in &data.dataset.structured_views {
        let file = format!("{}.tsv", view.name);
        write_counts_tsv(&dir.join(&file), &data.sample_ids, view)?;
        manifest.structured_views.push(StructuredEntry {
            name: view.name.clone(),
            path: file.into(),
            vocab_size: view.vocab_size,
        });
    }
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Per-sentence topic labels: `sample_id, sentence_index, topic`.
pub fn write_assignments_tsv(path: &Path, sample_ids: &[String], per_sample: &[Vec<usize>]) -> Result<(), CliError> {
    let mut out = String::from("sample_id\tsentence_index\ttopic\n");
    for (id, topics) in sample_ids.iter().zip(per_sample) {
        for (i, t) in topics.iter().enumerate() {
            out.push_str(&format!("{id}\t{i}\t{t}\n"));
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Reads an assignments file back as `(sample_id, sentence_index) -> topic`, in file order.
pub fn read_assignments_tsv(path: &Path) -> Result<Vec<((String, usize), usize)>, CliError> {
    let mut reader = csv_reader(path, b'\t', true)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        if record.len() != 3 {
            return Err(CliError::parse(path, line, format!("expected 3 columns, found {}", record.len())));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| CliError::parse(path, line, format!("'{s}' is not an index")));
        out.push(((record[0].to_string(), parse(&record[1])?), parse(&record[2])?));
    }
    Ok(out)
}
