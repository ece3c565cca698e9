//! User-defined metrics: labelled band-power recordings, model training,
//! per-packet prediction and holdout validation.
//!
//! Feature rows are flattened band-power trees. Categorical recordings keep
//! one CSV per class (`<class>.csv`); continuous recordings keep a single
//! file whose last column is `label`. A subdirectory holding such files is a
//! recording session.

mod model;

pub use model::{
    train, Hyperparameters, ModelKind, ModelParams, ModelSpec, Prediction, Standardization,
    TrainedModel, MODEL_FORMAT_VERSION,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datatree::DataTree;
use crate::sinks::csv::{generic_column_names, CsvAppender};
use crate::sinks::SinkError;
use crate::stats;

pub const LABEL_COLUMN: &str = "label";
pub const MIN_SPLIT_ROWS: usize = 5;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("labels are degenerate: {0}")]
    DegenerateLabels(String),
    #[error("non-finite feature at row {row}, column {col}")]
    BadFeature { row: usize, col: usize },
    #[error("expected {expected} features, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("bad hyperparameter: {0}")]
    BadHyperparameter(String),
    #[error("{0} requires categorical labels")]
    NotCategorical(&'static str),
    #[error("train fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("{path}: {reason}")]
    BadFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Labels {
    Categorical { classes: Vec<String>, ids: Vec<usize> },
    Continuous { values: Vec<f64> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Categorical { ids, .. } => ids.len(),
            Labels::Continuous { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[String]> {
        match self {
            Labels::Categorical { classes, .. } => Some(classes),
            Labels::Continuous { .. } => None,
        }
    }

    fn subset(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Categorical { classes, ids } => Labels::Categorical {
                classes: classes.clone(),
                ids: rows.iter().map(|&r| ids[r]).collect(),
            },
            Labels::Continuous { values } => Labels::Continuous {
                values: rows.iter().map(|&r| values[r]).collect(),
            },
        }
    }

    /// Training target per row: the class id, or the continuous value.
    pub fn target(&self, row: usize) -> f64 {
        match self {
            Labels::Categorical { ids, .. } => ids[row] as f64,
            Labels::Continuous { values } => values[row],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Labels,
    pub feature_names: Vec<String>,
    /// Recording session of each row.
    pub sessions: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Labels,
        feature_names: Vec<String>,
        sessions: Vec<String>,
    ) -> Result<Self, LearnError> {
        let ds = Dataset {
            features,
            labels,
            feature_names,
            sessions,
        };
        ds.check()?;
        Ok(ds)
    }

    /// Single-session categorical dataset.
    pub fn categorical(
        features: Vec<Vec<f64>>,
        classes: Vec<String>,
        ids: Vec<usize>,
    ) -> Result<Self, LearnError> {
        let d = features.first().map_or(0, Vec::len);
        let n = features.len();
        Dataset::new(
            features,
            Labels::Categorical { classes, ids },
            (0..d).map(|j| format!("f{j}")).collect(),
            vec![String::new(); n],
        )
    }

    fn check(&self) -> Result<(), LearnError> {
        let n = self.features.len();
        if self.labels.len() != n || self.sessions.len() != n {
            return Err(LearnError::ShapeMismatch {
                expected: n,
                actual: self.labels.len().min(self.sessions.len()),
            });
        }
        let d = self.feature_names.len();
        for (row, f) in self.features.iter().enumerate() {
            if f.len() != d {
                return Err(LearnError::ShapeMismatch {
                    expected: d,
                    actual: f.len(),
                });
            }
            if let Some(col) = f.iter().position(|v| !v.is_finite()) {
                return Err(LearnError::BadFeature { row, col });
            }
        }
        match &self.labels {
            Labels::Categorical { classes, ids } => {
                if let Some(&bad) = ids.iter().find(|&&i| i >= classes.len()) {
                    return Err(LearnError::DegenerateLabels(format!("class id {bad} out of range")));
                }
            }
            Labels::Continuous { values } => {
                if let Some(row) = values.iter().position(|v| !v.is_finite()) {
                    return Err(LearnError::BadFeature { row, col: d });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: rows.iter().map(|&r| self.features[r].clone()).collect(),
            labels: self.labels.subset(rows),
            feature_names: self.feature_names.clone(),
            sessions: rows.iter().map(|&r| self.sessions[r].clone()).collect(),
        }
    }

    /// Rows per class id, for categorical labels.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        match &self.labels {
            Labels::Categorical { classes, ids } => {
                let mut c = vec![0; classes.len()];
                for &i in ids {
                    c[i] += 1;
                }
                Some(c)
            }
            Labels::Continuous { .. } => None,
        }
    }

    /// Reorders class ids so that `order[k]` becomes class `k`.
    pub fn with_class_order(mut self, order: &[String]) -> Result<Self, LearnError> {
        let Labels::Categorical { classes, ids } = &mut self.labels else {
            return Err(LearnError::NotCategorical("class ordering"));
        };
        let as_set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
        if order.len() != classes.len() || as_set(order) != as_set(classes) {
            return Err(LearnError::DegenerateLabels(format!(
                "class order {order:?} does not match classes {classes:?}"
            )));
        }
        let remap: Vec<usize> = classes
            .iter()
            .map(|c| order.iter().position(|o| o == c).unwrap())
            .collect();
        for id in ids.iter_mut() {
            *id = remap[*id];
        }
        *classes = order.to_vec();
        Ok(self)
    }

    /// Averages consecutive rows in non-overlapping windows of `w` rows that
    /// share a session and label; a trailing partial window is dropped.
    pub fn window_average(&self, w: usize) -> Dataset {
        if w <= 1 {
            return self.clone();
        }
        let mut groups: BTreeMap<(String, u64), Vec<usize>> = BTreeMap::new();
        let mut order = Vec::new();
        for r in 0..self.len() {
            let key = (self.sessions[r].clone(), self.labels.target(r).to_bits());
            let g = groups.entry(key.clone()).or_default();
            if g.is_empty() {
                order.push(key);
            }
            g.push(r);
        }
        let mut rows = Vec::new();
        for key in order {
            for chunk in groups[&key].chunks_exact(w) {
                rows.push(chunk.to_vec());
            }
        }
        let d = self.dim();
        let features = rows
            .iter()
            .map(|chunk| {
                let mut m = vec![0.0; d];
                for &r in chunk {
                    for (a, v) in m.iter_mut().zip(&self.features[r]) {
                        *a += v;
                    }
                }
                m.iter().map(|v| v / chunk.len() as f64).collect()
            })
            .collect();
        let firsts: Vec<usize> = rows.iter().map(|c| c[0]).collect();
        Dataset {
            features,
            labels: self.labels.subset(&firsts),
            feature_names: self.feature_names.clone(),
            sessions: firsts.iter().map(|&r| self.sessions[r].clone()).collect(),
        }
    }

    /// Loads a recording directory. Subdirectories holding CSV files are
    /// sessions; otherwise the directory itself is the only session.
    /// Categorical class ids follow the sorted class names.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, LearnError> {
        let dir = dir.as_ref();
        let mut sessions: Vec<(String, PathBuf)> = Vec::new();
        for entry in sorted_entries(dir)? {
            if entry.is_dir() && !csv_files(&entry)?.is_empty() {
                let name = entry.file_name().unwrap().to_string_lossy().into_owned();
                sessions.push((name, entry));
            }
        }
        if sessions.is_empty() {
            let name = dir
                .file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            sessions.push((name, dir.to_path_buf()));
        }

        let mut tables = Vec::new();
        for (session, path) in &sessions {
            for file in csv_files(path)? {
                tables.push((session.clone(), file.clone(), read_table(&file)?));
            }
        }
        if tables.is_empty() {
            return Err(LearnError::InsufficientData { needed: 1, got: 0 });
        }
        let continuous = tables[0].2.header.last().map(String::as_str) == Some(LABEL_COLUMN);
        let names: Vec<String> = if continuous {
            tables[0].2.header[..tables[0].2.header.len() - 1].to_vec()
        } else {
            tables[0].2.header.clone()
        };
        let expected_header = |t: &Table| -> bool {
            if continuous {
                t.header.len() == names.len() + 1
                    && t.header[..names.len()] == names[..]
                    && t.header.last().map(String::as_str) == Some(LABEL_COLUMN)
            } else {
                t.header == names
            }
        };

        let classes: Vec<String> = if continuous {
            Vec::new()
        } else {
            tables
                .iter()
                .map(|(_, f, _)| file_stem(f))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        let mut features = Vec::new();
        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut row_sessions = Vec::new();
        for (session, file, table) in tables {
            if !expected_header(&table) {
                return Err(LearnError::BadFile {
                    path: file,
                    reason: "header differs from the other recordings".into(),
                });
            }
            let class = file_stem(&file);
            for mut row in table.rows {
                if continuous {
                    values.push(row.pop().unwrap());
                } else {
                    ids.push(classes.iter().position(|c| *c == class).unwrap());
                }
                features.push(row);
                row_sessions.push(session.clone());
            }
        }
        let labels = if continuous {
            Labels::Continuous { values }
        } else {
            Labels::Categorical { classes, ids }
        };
        Dataset::new(features, labels, names, row_sessions)
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, LearnError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| LearnError::BadFile {
                path: path.to_path_buf(),
                reason: format!("row {}: {e}", i + 1),
            })?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, LearnError> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    v.sort();
    Ok(v)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, LearnError> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Appends labelled band-power trees to recording files.
pub struct Recorder {
    dir: PathBuf,
    names: Option<Vec<String>>,
    continuous: bool,
    writers: BTreeMap<String, CsvAppender>,
    rows: u64,
    rejected: u64,
}

impl Recorder {
    /// One `<class>.csv` per label under `dir`.
    pub fn categorical(dir: impl Into<PathBuf>, names: Option<Vec<String>>) -> Self {
        Self::new(dir.into(), names, false)
    }

    /// A single `<file_stem>.csv` under `dir` with a trailing `label` column.
    pub fn continuous(dir: impl Into<PathBuf>, names: Option<Vec<String>>) -> Self {
        Self::new(dir.into(), names, true)
    }

    fn new(dir: PathBuf, names: Option<Vec<String>>, continuous: bool) -> Self {
        Recorder {
            dir,
            names,
            continuous,
            writers: BTreeMap::new(),
            rows: 0,
            rejected: 0,
        }
    }

    pub fn rows_written(&self) -> u64 {
        self.rows
    }

    /// Rows refused because the tree shape drifted.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    fn names_for(&mut self, tree: &DataTree) -> Result<Vec<String>, LearnError> {
        let names = self.names.get_or_insert_with(|| generic_column_names(tree));
        if names.len() != tree.len() || tree.is_empty() {
            self.rejected += 1;
            return Err(LearnError::ShapeMismatch {
                expected: names.len(),
                actual: tree.len(),
            });
        }
        Ok(names.clone())
    }

    fn writer(&mut self, file: &str) -> Result<&mut CsvAppender, LearnError> {
        if !self.writers.contains_key(file) {
            std::fs::create_dir_all(&self.dir)?;
            let w = CsvAppender::open(self.dir.join(format!("{file}.csv")), false, None)?;
            self.writers.insert(file.to_string(), w);
        }
        Ok(self.writers.get_mut(file).unwrap())
    }

    pub fn record_class(&mut self, tree: &DataTree, class: &str) -> Result<(), LearnError> {
        if self.continuous {
            return Err(LearnError::NotCategorical("record_class"));
        }
        if class.is_empty() || class.contains(['/', '\\']) {
            return Err(LearnError::DegenerateLabels(format!("bad class name {class:?}")));
        }
        let names = self.names_for(tree)?;
        let now = chrono::Utc::now();
        self.writer(class)?.append_row(&names, &tree.flatten(), now)?;
        self.rows += 1;
        Ok(())
    }

    pub fn record_value(&mut self, tree: &DataTree, file: &str, label: f64) -> Result<(), LearnError> {
        if !self.continuous {
            return Err(LearnError::DegenerateLabels("recorder is categorical".into()));
        }
        if !label.is_finite() {
            return Err(LearnError::BadFeature { row: self.rows as usize, col: tree.len() });
        }
        let mut names = self.names_for(tree)?;
        names.push(LABEL_COLUMN.to_string());
        let mut values = tree.flatten();
        values.push(label);
        let now = chrono::Utc::now();
        self.writer(file)?.append_row(&names, &values, now)?;
        self.rows += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Per-class shuffle for categorical labels, plain shuffle otherwise.
    #[default]
    Stratified,
    Random,
    /// Whole sessions go to one side.
    BySession,
}

fn train_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return n;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Disjoint, exhaustive train/holdout split; row order inside each part follows the input.
pub fn split(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Dataset, Dataset), LearnError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(LearnError::BadFraction(train_fraction));
    }
    if ds.len() < MIN_SPLIT_ROWS {
        return Err(LearnError::InsufficientData {
            needed: MIN_SPLIT_ROWS,
            got: ds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_rows = Vec::new();
    match (mode, &ds.labels) {
        (SplitMode::Stratified, Labels::Categorical { classes, ids }) => {
            for c in 0..classes.len() {
                let mut rows: Vec<usize> = (0..ds.len()).filter(|&r| ids[r] == c).collect();
                rows.shuffle(&mut rng);
                train_rows.extend_from_slice(&rows[..train_count(rows.len(), train_fraction)]);
            }
        }
        (SplitMode::BySession, _) => {
            let mut names: Vec<&String> = ds.sessions.iter().collect::<BTreeSet<_>>().into_iter().collect();
            if names.len() < 2 {
                return Err(LearnError::InsufficientData {
                    needed: 2,
                    got: names.len(),
                });
            }
            names.shuffle(&mut rng);
            let keep: BTreeSet<&String> = names[..train_count(names.len(), train_fraction)]
                .iter()
                .copied()
                .collect();
            train_rows = (0..ds.len()).filter(|&r| keep.contains(&ds.sessions[r])).collect();
        }
        _ => {
            let mut rows: Vec<usize> = (0..ds.len()).collect();
            rows.shuffle(&mut rng);
            train_rows.extend_from_slice(&rows[..train_count(rows.len(), train_fraction)]);
        }
    }
    train_rows.sort_unstable();
    let mut in_train = vec![false; ds.len()];
    for &r in &train_rows {
        in_train[r] = true;
    }
    let holdout_rows: Vec<usize> = (0..ds.len()).filter(|&r| !in_train[r]).collect();
    Ok((ds.subset(&train_rows), ds.subset(&holdout_rows)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub accuracy: f64,
    pub threshold: f64,
    /// Welch's t of class-1 scores against class-0 scores; absent when both
    /// score sets have zero variance.
    pub t_stat: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub classes: Vec<String>,
    pub mean_scores: Vec<f64>,
    /// Holdout rows share a recording session with training rows, so
    /// temporal autocorrelation may inflate these numbers.
    pub same_session: bool,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn validate(
    model: &TrainedModel,
    holdout: &Dataset,
    threshold: f64,
) -> Result<ValidationReport, LearnError> {
    let Labels::Categorical { classes, ids } = &holdout.labels else {
        return Err(LearnError::NotCategorical("validate"));
    };
    if holdout.is_empty() {
        return Err(LearnError::InsufficientData { needed: 1, got: 0 });
    }
    let mut scores: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut correct = 0;
    for (x, &y) in holdout.features.iter().zip(ids) {
        let p = model.predict(x, Some(threshold))?;
        if p.class == Some(y) {
            correct += 1;
        }
        if y < 2 {
            scores[y].push(p.score);
        }
    }
    let welch = stats::welch_t(&scores[1], &scores[0]).ok();
    let train_sessions: BTreeSet<&String> = model.train_sessions.iter().collect();
    Ok(ValidationReport {
        accuracy: correct as f64 / holdout.len() as f64,
        threshold,
        t_stat: welch.map(|w| w.t),
        df: welch.map(|w| w.df),
        p_value: welch.map(|w| w.p),
        n_train: model.n_train,
        n_val: holdout.len(),
        classes: classes.clone(),
        mean_scores: scores
            .iter()
            .map(|s| if s.is_empty() { f64::NAN } else { stats::mean(s) })
            .collect(),
        same_session: holdout.sessions.iter().any(|s| train_sessions.contains(s)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub rmse: f64,
    pub r2: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub same_session: bool,
}

pub fn validate_regression(model: &TrainedModel, holdout: &Dataset) -> Result<RegressionReport, LearnError> {
    if holdout.is_empty() {
        return Err(LearnError::InsufficientData { needed: 1, got: 0 });
    }
    let ys: Vec<f64> = (0..holdout.len()).map(|r| holdout.labels.target(r)).collect();
    let mut sse = 0.0;
    for (x, y) in holdout.features.iter().zip(&ys) {
        sse += (model.predict(x, None)?.score - y).powi(2);
    }
    let mean = stats::mean(&ys);
    let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let train_sessions: BTreeSet<&String> = model.train_sessions.iter().collect();
    Ok(RegressionReport {
        rmse: (sse / ys.len() as f64).sqrt(),
        r2: if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
        n_train: model.n_train,
        n_val: holdout.len(),
        same_session: holdout.sessions.iter().any(|s| train_sessions.contains(s)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(n_per: usize) -> Dataset {
        let mut f = Vec::new();
        let mut ids = Vec::new();
        for c in 0..2 {
            for i in 0..n_per {
                f.push(vec![c as f64 * 10.0 + (i % 3) as f64, i as f64]);
                ids.push(c);
            }
        }
        Dataset::categorical(f, vec!["a".into(), "b".into()], ids).unwrap()
    }

    #[test]
    fn split_counts() {
        let ds = two_class(50);
        let (tr, ho) = split(&ds, 0.8, 1, SplitMode::Stratified).unwrap();
        assert_eq!((tr.len(), ho.len()), (80, 20));
        let ds = two_class(10);
        let (tr, ho) = split(&ds, 0.8, 1, SplitMode::Stratified).unwrap();
        assert_eq!(tr.class_counts().unwrap(), vec![8, 8]);
        assert_eq!(ho.class_counts().unwrap(), vec![2, 2]);
        let (tr, ho) = split(&ds, 0.8, 1, SplitMode::Random).unwrap();
        assert_eq!((tr.len(), ho.len()), (16, 4));
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let ds = two_class(37);
        for mode in [SplitMode::Stratified, SplitMode::Random] {
            let (a, b) = split(&ds, 0.7, 9, mode).unwrap();
            let (a2, _) = split(&ds, 0.7, 9, mode).unwrap();
            assert_eq!(a, a2);
            let mut all: Vec<Vec<f64>> = a.features.iter().chain(&b.features).cloned().collect();
            let mut orig = ds.features.clone();
            let key = |v: &Vec<f64>| (v[0].to_bits(), v[1].to_bits());
            all.sort_by_key(key);
            orig.sort_by_key(key);
            assert_eq!(all, orig);
        }
    }

    #[test]
    fn split_errors() {
        let ds = two_class(2);
        assert!(matches!(
            split(&ds, 0.8, 0, SplitMode::Stratified),
            Err(LearnError::InsufficientData { needed: 5, got: 4 })
        ));
        assert!(matches!(split(&two_class(5), 1.0, 0, SplitMode::Random), Err(LearnError::BadFraction(_))));
        assert!(matches!(
            split(&two_class(5), 0.5, 0, SplitMode::BySession),
            Err(LearnError::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn by_session_keeps_sessions_whole() {
        let mut ds = two_class(20);
        for (i, s) in ds.sessions.iter_mut().enumerate() {
            *s = format!("s{}", i % 4);
        }
        let (tr, ho) = split(&ds, 0.5, 3, SplitMode::BySession).unwrap();
        let a: BTreeSet<_> = tr.sessions.iter().collect();
        let b: BTreeSet<_> = ho.sessions.iter().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn class_order_and_windows() {
        let ds = two_class(6).with_class_order(&["b".into(), "a".into()]).unwrap();
        assert_eq!(ds.labels.target(0), 1.0);
        let w = ds.window_average(3);
        assert_eq!(w.len(), 4);
        assert_eq!(w.features[0][1], 1.0);
        assert!(two_class(2).with_class_order(&["a".into()]).is_err());
    }

    #[test]
    fn record_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::categorical(dir.path(), None);
        for i in 0..100 {
            let rows: Vec<Vec<f64>> = (0..16).map(|c| vec![(i + c) as f64; 5]).collect();
            let t = DataTree::from_matrix(&rows).unwrap();
            rec.record_class(&t, "focused").unwrap();
            rec.record_class(&t, "relaxed").unwrap();
        }
        let bad = DataTree::from_matrix(&[vec![1.0]]).unwrap();
        assert!(matches!(rec.record_class(&bad, "focused"), Err(LearnError::ShapeMismatch { .. })));
        assert_eq!(rec.rejected(), 1);
        for class in ["focused", "relaxed"] {
            let text = std::fs::read_to_string(dir.path().join(format!("{class}.csv"))).unwrap();
            let lines: Vec<&str> = text.lines().collect();
            assert_eq!(lines.len(), 101);
            assert!(lines.iter().all(|l| l.split(',').count() == 80));
        }
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.dim(), 80);
        assert_eq!(ds.labels.classes().unwrap(), ["focused", "relaxed"]);
        assert_eq!(ds.class_counts().unwrap(), vec![100, 100]);
    }

    #[test]
    fn continuous_recording_has_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::continuous(dir.path(), None);
        for i in 0..10 {
            let rows: Vec<Vec<f64>> = (0..16).map(|c| vec![(i * c) as f64; 5]).collect();
            rec.record_value(&DataTree::from_matrix(&rows).unwrap(), "stress", 1.0 + i as f64).unwrap();
        }
        let text = std::fs::read_to_string(dir.path().join("stress.csv")).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 81));
        assert!(text.lines().next().unwrap().ends_with(",label"));
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.dim(), 80);
        assert_eq!(ds.labels, Labels::Continuous { values: (1..=10).map(f64::from).collect() });
    }

    #[test]
    fn sessions_from_subdirectories() {
        let dir = tempfile::tempdir().unwrap();
        for s in ["day1", "day2"] {
            let sub = dir.path().join(s);
            std::fs::create_dir(&sub).unwrap();
            std::fs::write(sub.join("a.csv"), "x,y\n1,2\n3,4\n").unwrap();
            std::fs::write(sub.join("b.csv"), "x,y\n5,6\n").unwrap();
        }
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.sessions, ["day1", "day1", "day1", "day2", "day2", "day2"]);
        std::fs::write(dir.path().join("day2").join("c.csv"), "x,z\n1,1\n").unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(LearnError::BadFile { .. })));
    }

    #[test]
    fn empty_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(LearnError::InsufficientData { .. })));
    }
}
