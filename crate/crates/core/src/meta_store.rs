//! Meta-data: the sparse pipeline-by-dataset score matrix, per-dataset
//! meta-feature vectors and the train/test split of datasets.
//!
//! Three on-disk files back a [`MetaDataset`]:
//!
//! * performance CSV, header `pipeline_id,dataset_name,score`, scores as
//!   fractions in `[0, 1]`;
//! * meta-feature CSV, header `dataset_name,<feature_1>,...`, optionally preceded
//!   by `#` comment lines (the extractor writes `# metafeatures-v1`);
//! * split file, dataset names one per line under `[train]` and `[test]`.
//!
//! Missing cells stay missing. They are never imputed.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const PERFORMANCE_HEADER: [&str; 3] = ["pipeline_id", "dataset_name", "score"];
pub const PERFORMANCE_FILE: &str = "performance.csv";
pub const META_FEATURES_FILE: &str = "metafeatures.csv";
pub const SPLIT_FILE: &str = "split.txt";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed file at row {row}: {message}")]
    MalformedFile {
        path: PathBuf,
        row: u64,
        message: String,
    },
    #[error("duplicate entry for pipeline {pipeline} on dataset '{dataset}' (row {row})")]
    DuplicateEntry {
        pipeline: usize,
        dataset: String,
        row: u64,
    },
    #[error("score {score} at row {row} is outside [0, 1] (scores are fractions, not percentages)")]
    ScoreOutOfRange { score: f64, row: u64 },
    #[error("unknown dataset in split: '{0}'")]
    UnknownDatasetInSplit(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("dataset '{0}' has scores but no meta-feature row")]
    MissingMetaFeatures(String),
    #[error("unknown dataset id {0}")]
    UnknownDataset(usize),
    #[error("dataset '{0}' has no evaluated pipelines")]
    EmptyColumn(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Index of a pipeline in `[0, N)`; also the row of its embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PipelineId(pub usize);

/// Index of a dataset in `[0, D)`. Names live in [`MetaDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DatasetId(pub usize);

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sparse `N × D` table of scores in `[0, 1]`, at most one per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    n_pipelines: usize,
    n_datasets: usize,
    // dataset-major: cells[d * n_pipelines + p]
    cells: Vec<Option<f64>>,
    n_entries: usize,
}

impl PerformanceMatrix {
    pub fn new(n_pipelines: usize, n_datasets: usize) -> Self {
        Self {
            n_pipelines,
            n_datasets,
            cells: vec![None; n_pipelines * n_datasets],
            n_entries: 0,
        }
    }

    /// Inserts a score. Rejects out-of-range scores and occupied cells; grows
    /// the pipeline dimension when `pipeline` is beyond the current `N`.
    pub fn insert(
        &mut self,
        pipeline: PipelineId,
        dataset: DatasetId,
        score: f64,
    ) -> Result<(), InsertError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(InsertError::OutOfRange);
        }
        if dataset.0 >= self.n_datasets {
            return Err(InsertError::UnknownDataset);
        }
        if pipeline.0 >= self.n_pipelines {
            self.grow_pipelines(pipeline.0 + 1);
        }
        let cell = &mut self.cells[dataset.0 * self.n_pipelines + pipeline.0];
        if cell.is_some() {
            return Err(InsertError::Duplicate);
        }
        *cell = Some(score);
        self.n_entries += 1;
        Ok(())
    }

    fn grow_pipelines(&mut self, n: usize) {
        let mut cells = vec![None; n * self.n_datasets];
        for d in 0..self.n_datasets {
            let old = &self.cells[d * self.n_pipelines..(d + 1) * self.n_pipelines];
            cells[d * n..d * n + self.n_pipelines].copy_from_slice(old);
        }
        self.cells = cells;
        self.n_pipelines = n;
    }

    pub fn n_pipelines(&self) -> usize {
        self.n_pipelines
    }

    pub fn n_datasets(&self) -> usize {
        self.n_datasets
    }

    pub fn n_entries(&self) -> usize {
        self.n_entries
    }

    pub fn get(&self, pipeline: PipelineId, dataset: DatasetId) -> Option<f64> {
        if pipeline.0 >= self.n_pipelines || dataset.0 >= self.n_datasets {
            return None;
        }
        self.cells[dataset.0 * self.n_pipelines + pipeline.0]
    }

    /// Scores of every pipeline on one dataset, `None` where untested.
    pub fn column(&self, dataset: DatasetId) -> &[Option<f64>] {
        &self.cells[dataset.0 * self.n_pipelines..(dataset.0 + 1) * self.n_pipelines]
    }

    /// All present entries, ordered by dataset then pipeline.
    pub fn entries(&self) -> impl Iterator<Item = (PipelineId, DatasetId, f64)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(k, c)| {
            c.map(|s| {
                (
                    PipelineId(k % self.n_pipelines),
                    DatasetId(k / self.n_pipelines),
                    s,
                )
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertError {
    OutOfRange,
    Duplicate,
    UnknownDataset,
}

/// Meta-feature vectors, one row per dataset, all of width `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureTable {
    pub feature_names: Vec<String>,
    /// Indexed by [`DatasetId`].
    pub rows: Vec<Vec<f64>>,
}

impl MetaFeatureTable {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, dataset: DatasetId) -> &[f64] {
        &self.rows[dataset.0]
    }
}

/// How datasets are divided into training and held-out sets.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Dataset names; takes priority over a seeded split wherever both are given.
    Explicit { train: Vec<String>, test: Vec<String> },
    /// Seeded shuffle, first `round(train_fraction * D)` datasets train.
    Seeded { seed: u64, train_fraction: f64 },
}

impl SplitSpec {
    /// Reads a split file with `[train]` / `[test]` sections.
    pub fn from_file(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self, StoreError> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut section: Option<&mut Vec<String>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[train]" => section = Some(&mut train),
                "[test]" => section = Some(&mut test),
                name => match section.as_mut() {
                    Some(list) => list.push(name.to_string()),
                    None => {
                        return Err(StoreError::MalformedFile {
                            path: path.to_path_buf(),
                            row: i as u64 + 1,
                            message: "dataset name before any [train]/[test] header".into(),
                        })
                    }
                },
            }
        }
        Ok(Self::Explicit { train, test })
    }

    /// Serializes an explicit split in the split-file format.
    pub fn to_file_string(train: &[&str], test: &[&str]) -> String {
        let mut s = String::from("[train]\n");
        for n in train {
            s.push_str(n);
            s.push('\n');
        }
        s.push_str("[test]\n");
        for n in test {
            s.push_str(n);
            s.push('\n');
        }
        s
    }
}

/// Validated meta-data; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaDataset {
    dataset_names: Vec<String>,
    performance: PerformanceMatrix,
    meta_features: MetaFeatureTable,
    train: Vec<DatasetId>,
    test: Vec<DatasetId>,
}

impl MetaDataset {
    /// Assembles and validates a meta-dataset. `meta_features.rows` must be
    /// indexed like `dataset_names`.
    pub fn new(
        dataset_names: Vec<String>,
        performance: PerformanceMatrix,
        meta_features: MetaFeatureTable,
        split: &SplitSpec,
    ) -> Result<Self, StoreError> {
        let n = dataset_names.len();
        let mut seen = HashMap::with_capacity(n);
        for (i, name) in dataset_names.iter().enumerate() {
            if seen.insert(name.as_str(), DatasetId(i)).is_some() {
                return Err(StoreError::InvalidSplit(format!(
                    "dataset name '{name}' appears twice"
                )));
            }
        }
        assert_eq!(meta_features.rows.len(), n, "one meta-feature row per dataset");
        assert_eq!(performance.n_datasets(), n);

        let (train, test) = match split {
            SplitSpec::Explicit { train, test } => {
                let lookup = |names: &[String]| -> Result<Vec<DatasetId>, StoreError> {
                    names
                        .iter()
                        .map(|s| {
                            seen.get(s.as_str())
                                .copied()
                                .ok_or_else(|| StoreError::UnknownDatasetInSplit(s.clone()))
                        })
                        .collect()
                };
                (lookup(train)?, lookup(test)?)
            }
            SplitSpec::Seeded {
                seed,
                train_fraction,
            } => seeded_split(n, *seed, *train_fraction)?,
        };

        let train_set: BTreeSet<_> = train.iter().copied().collect();
        let test_set: BTreeSet<_> = test.iter().copied().collect();
        if train_set.len() != train.len() || test_set.len() != test.len() {
            return Err(StoreError::InvalidSplit("a dataset is listed twice".into()));
        }
        if let Some(d) = train_set.intersection(&test_set).next() {
            return Err(StoreError::InvalidSplit(format!(
                "dataset '{}' is in both train and test",
                dataset_names[d.0]
            )));
        }
        for d in 0..n {
            let id = DatasetId(d);
            let referenced = performance.column(id).iter().any(Option::is_some);
            if referenced && !train_set.contains(&id) && !test_set.contains(&id) {
                return Err(StoreError::InvalidSplit(format!(
                    "dataset '{}' has scores but is in neither train nor test",
                    dataset_names[d]
                )));
            }
        }

        Ok(Self {
            dataset_names,
            performance,
            meta_features,
            train: train_set.into_iter().collect(),
            test: test_set.into_iter().collect(),
        })
    }

    pub fn performance(&self) -> &PerformanceMatrix {
        &self.performance
    }

    pub fn meta_features(&self) -> &MetaFeatureTable {
        &self.meta_features
    }

    pub fn train_datasets(&self) -> &[DatasetId] {
        &self.train
    }

    pub fn test_datasets(&self) -> &[DatasetId] {
        &self.test
    }

    pub fn n_pipelines(&self) -> usize {
        self.performance.n_pipelines()
    }

    pub fn n_datasets(&self) -> usize {
        self.dataset_names.len()
    }

    pub fn dataset_names(&self) -> &[String] {
        &self.dataset_names
    }

    pub fn dataset_name(&self, d: DatasetId) -> &str {
        &self.dataset_names[d.0]
    }

    pub fn dataset_by_name(&self, name: &str) -> Option<DatasetId> {
        self.dataset_names
            .iter()
            .position(|n| n == name)
            .map(DatasetId)
    }

    fn check(&self, d: DatasetId) -> Result<(), StoreError> {
        if d.0 < self.n_datasets() {
            Ok(())
        } else {
            Err(StoreError::UnknownDataset(d.0))
        }
    }

    /// Length-`N` view of one dataset's scores, `None` for untested pipelines.
    pub fn dense_view(&self, dataset: DatasetId) -> Result<Vec<Option<f64>>, StoreError> {
        self.check(dataset)?;
        Ok(self.performance.column(dataset).to_vec())
    }

    /// Best score among tested pipelines; the regret reference.
    pub fn best_score(&self, dataset: DatasetId) -> Result<f64, StoreError> {
        self.check(dataset)?;
        self.performance
            .column(dataset)
            .iter()
            .flatten()
            .copied()
            .reduce(f64::max)
            .ok_or_else(|| StoreError::EmptyColumn(self.dataset_names[dataset.0].clone()))
    }

    /// Writes the three backing files into `dir` and returns their paths
    /// (performance, meta-features, split).
    pub fn save(&self, dir: &Path) -> Result<[PathBuf; 3], StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let perf = dir.join(PERFORMANCE_FILE);
        let meta = dir.join(META_FEATURES_FILE);
        let split = dir.join(SPLIT_FILE);
        self.write_performance(&perf)?;
        write_meta_features(&meta, &self.dataset_names, &self.meta_features, None)?;
        let names = |ids: &[DatasetId]| -> Vec<&str> {
            ids.iter().map(|d| self.dataset_names[d.0].as_str()).collect()
        };
        fs::write(
            &split,
            SplitSpec::to_file_string(&names(&self.train), &names(&self.test)),
        )
        .map_err(io_err(&split))?;
        Ok([perf, meta, split])
    }

    fn write_performance(&self, path: &Path) -> Result<(), StoreError> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let res: io::Result<()> = (|| {
            writeln!(w, "{}", PERFORMANCE_HEADER.join(","))?;
            for (p, d, s) in self.performance.entries() {
                writeln!(w, "{},{},{}", p.0, csv_field(&self.dataset_names[d.0]), s)?;
            }
            w.flush()
        })();
        res.map_err(io_err(path))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn seeded_split(
    n: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<(Vec<DatasetId>, Vec<DatasetId>), StoreError> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(StoreError::InvalidSplit(format!(
            "train fraction {train_fraction} not in (0, 1]"
        )));
    }
    let mut ids: Vec<DatasetId> = (0..n).map(DatasetId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let test = ids.split_off(n_train);
    Ok((ids, test))
}

/// Writes a meta-feature CSV. `comment`, when given, becomes a leading
/// `# <comment>` line.
pub fn write_meta_features(
    path: &Path,
    dataset_names: &[String],
    table: &MetaFeatureTable,
    comment: Option<&str>,
) -> Result<(), StoreError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let res: io::Result<()> = (|| {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        write!(w, "dataset_name")?;
        for f in &table.feature_names {
            write!(w, ",{}", csv_field(f))?;
        }
        writeln!(w)?;
        for (name, row) in dataset_names.iter().zip(&table.rows) {
            write!(w, "{}", csv_field(name))?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn malformed(path: &Path, row: u64, message: impl Into<String>) -> StoreError {
    StoreError::MalformedFile {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_error(path: &Path, e: csv::Error) -> StoreError {
    let row = e.position().map(|p| p.line()).unwrap_or(0);
    malformed(path, row, e.to_string())
}

/// Reads a meta-feature CSV; returns dataset names in file order with their rows.
pub fn read_meta_features(path: &Path) -> Result<(Vec<String>, MetaFeatureTable), StoreError> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("dataset_name") {
        return Err(malformed(path, 1, "first column must be 'dataset_name'"));
    }
    let feature_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut names = Vec::new();
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        if rec.len() != feature_names.len() + 1 {
            return Err(malformed(
                path,
                line,
                format!("expected {} fields, found {}", feature_names.len() + 1, rec.len()),
            ));
        }
        let name = rec[0].to_string();
        if !seen.insert(name.clone()) {
            return Err(malformed(path, line, format!("dataset '{name}' listed twice")));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(malformed(path, line, format!("'{f}' is not a finite number"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        names.push(name);
        rows.push(row);
    }
    Ok((
        names,
        MetaFeatureTable {
            feature_names,
            rows,
        },
    ))
}

/// Loads and validates a meta-dataset. The dataset index order is the row
/// order of the meta-feature file.
pub fn load_meta_dataset(
    perf_path: &Path,
    metafeat_path: &Path,
    split: &SplitSpec,
) -> Result<MetaDataset, StoreError> {
    let (names, table) = read_meta_features(metafeat_path)?;
    let index: HashMap<&str, DatasetId> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), DatasetId(i)))
        .collect();

    let mut rdr = csv_reader(perf_path)?;
    let header = rdr.headers().map_err(|e| csv_error(perf_path, e))?.clone();
    if header.iter().ne(PERFORMANCE_HEADER) {
        return Err(malformed(
            perf_path,
            1,
            format!("header must be '{}'", PERFORMANCE_HEADER.join(",")),
        ));
    }
    let mut perf = PerformanceMatrix::new(0, names.len());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(perf_path, e))?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(malformed(perf_path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let pipeline: usize = rec[0]
            .parse()
            .map_err(|_| malformed(perf_path, line, format!("bad pipeline_id '{}'", &rec[0])))?;
        let dataset = *index
            .get(&rec[1])
            .ok_or_else(|| StoreError::MissingMetaFeatures(rec[1].to_string()))?;
        let score: f64 = rec[2]
            .parse()
            .map_err(|_| malformed(perf_path, line, format!("bad score '{}'", &rec[2])))?;
        match perf.insert(PipelineId(pipeline), dataset, score) {
            Ok(()) => {}
            Err(InsertError::OutOfRange) => {
                return Err(StoreError::ScoreOutOfRange { score, row: line })
            }
            Err(InsertError::Duplicate) => {
                return Err(StoreError::DuplicateEntry {
                    pipeline,
                    dataset: rec[1].to_string(),
                    row: line,
                })
            }
            Err(InsertError::UnknownDataset) => unreachable!("dataset ids come from the index"),
        }
    }
    MetaDataset::new(names, perf, table, split)
}
