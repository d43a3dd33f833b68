//! Dataset characterization: a fixed, versioned list of simple, statistical and
//! information-theoretic meta-features, plus z-score standardization of the
//! resulting table.
//!
//! Every statistic is computed from sorted values, so the output is exactly
//! invariant to row order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::meta_store::MetaFeatureTable;

/// Version tag written as the leading comment of extracted meta-feature CSVs.
pub const META_FEATURES_VERSION: &str = "metafeatures-v1";

/// Canonical feature order for [`META_FEATURES_VERSION`].
pub const FEATURE_NAMES: [&str; 22] = [
    "number_of_instances",
    "log_number_of_instances",
    "number_of_attributes",
    "log_number_of_attributes",
    "dataset_ratio",
    "number_of_classes",
    "class_entropy",
    "class_imbalance",
    "percentage_of_missing_values",
    "percentage_of_instances_with_missing_values",
    "number_of_numeric_attributes",
    "number_of_categorical_attributes",
    "ratio_numeric_to_total",
    "coefficient_of_variation_mean",
    "coefficient_of_variation_std",
    "coefficient_of_variation_min",
    "coefficient_of_variation_max",
    "skewness_mean",
    "skewness_std",
    "kurtosis_mean",
    "kurtosis_std",
    "mean_categorical_cardinality",
];

pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// Tokens read as missing cells, besides the empty string.
pub const MISSING_TOKENS: [&str; 4] = ["?", "NA", "NaN", "nan"];

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("dimension mismatch: expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
}

/// One attribute column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    fn is_missing(&self, i: usize) -> bool {
        match self {
            Column::Numeric(v) => v[i].is_none(),
            Column::Categorical(v) => v[i].is_none(),
        }
    }
}

/// Raw classification dataset, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub columns: Vec<Column>,
    pub target: Vec<String>,
}

impl TabularDataset {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    /// Reads a headed CSV. A column is numeric iff every non-missing cell
    /// parses as a decimal number. Rows with a missing target are dropped.
    pub fn from_csv(path: &Path, target: &str) -> Result<Self, FeatureError> {
        let malformed = |message: String| FeatureError::Malformed {
            path: path.display().to_string(),
            message,
        };
        let file = fs::File::open(path).map_err(|e| malformed(e.to_string()))?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let header = rdr.headers().map_err(|e| malformed(e.to_string()))?.clone();
        let target_idx = header
            .iter()
            .position(|h| h == target)
            .ok_or_else(|| malformed(format!("no target column '{target}'")))?;
        let width = header.len();
        let mut raw: Vec<Vec<Option<String>>> = vec![Vec::new(); width];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            if rec.len() != width {
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                return Err(malformed(format!(
                    "row {line}: expected {width} fields, found {}",
                    rec.len()
                )));
            }
            for (col, cell) in raw.iter_mut().zip(rec.iter()) {
                col.push(if is_missing(cell) {
                    None
                } else {
                    Some(cell.to_string())
                });
            }
        }
        let target_col = raw.remove(target_idx);
        let keep: Vec<bool> = target_col.iter().map(Option::is_some).collect();
        let target: Vec<String> = target_col.into_iter().flatten().collect();
        let columns = raw
            .into_iter()
            .map(|col| {
                let col: Vec<Option<String>> = col
                    .into_iter()
                    .zip(&keep)
                    .filter_map(|(c, &k)| k.then_some(c))
                    .collect();
                infer_column(col)
            })
            .collect();
        Ok(Self { columns, target })
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || MISSING_TOKENS.contains(&cell)
}

fn infer_column(cells: Vec<Option<String>>) -> Column {
    let parsed: Option<Vec<Option<f64>>> = cells
        .iter()
        .map(|c| match c {
            None => Some(None),
            Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
        })
        .collect();
    match parsed {
        Some(values) => Column::Numeric(values),
        None => Column::Categorical(cells),
    }
}

/// Population moments of a sample; skewness and excess kurtosis are `None`
/// when the variance is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

/// Moments from sorted values; an empty sample counts as constant 0.
pub fn moments(values: &[f64]) -> Moments {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return Moments {
            mean: 0.0,
            std: 0.0,
            skewness: None,
            kurtosis: None,
        };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in &v {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = m2.sqrt();
    let degenerate = m2 <= (f64::EPSILON * mean.abs().max(1.0)).powi(2);
    Moments {
        mean,
        std,
        skewness: (!degenerate).then(|| m3 / m2.powf(1.5)),
        kurtosis: (!degenerate).then(|| m4 / (m2 * m2) - 3.0),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = moments(values);
    (m.mean, m.std)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Computes the [`FEATURE_NAMES`] vector for one dataset.
pub fn extract(ds: &TabularDataset) -> Result<Vec<f64>, FeatureError> {
    let r = ds.n_rows();
    let c = ds.columns.len();
    if c == 0 {
        return Err(FeatureError::DegenerateDataset("no attribute columns".into()));
    }
    if r < 2 {
        return Err(FeatureError::DegenerateDataset(format!("{r} rows, need at least 2")));
    }
    if let Some(bad) = ds.columns.iter().find(|col| col.len() != r) {
        return Err(FeatureError::DegenerateDataset(format!(
            "column of length {} in a dataset of {r} rows",
            bad.len()
        )));
    }
    let mut class_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &ds.target {
        *class_counts.entry(t.as_str()).or_default() += 1;
    }
    let k = class_counts.len();
    if k < 2 {
        return Err(FeatureError::DegenerateDataset("fewer than two classes".into()));
    }

    let rf = r as f64;
    let cf = c as f64;
    let mut freqs: Vec<f64> = class_counts.values().map(|&n| n as f64 / rf).collect();
    freqs.sort_by(f64::total_cmp);
    let class_entropy = -freqs.iter().map(|p| p * p.log2()).sum::<f64>();
    let class_imbalance = freqs[freqs.len() - 1] - freqs[0];

    let mut missing_cells = 0usize;
    let mut row_has_missing = vec![false; r];
    for col in &ds.columns {
        for i in 0..r {
            if col.is_missing(i) {
                missing_cells += 1;
                row_has_missing[i] = true;
            }
        }
    }
    let rows_with_missing = row_has_missing.iter().filter(|&&m| m).count();

    let mut cvs = Vec::new();
    let mut skews = Vec::new();
    let mut kurts = Vec::new();
    let mut cardinalities = Vec::new();
    for col in &ds.columns {
        match col {
            Column::Numeric(cells) => {
                let present: Vec<f64> = cells.iter().flatten().copied().collect();
                let m = moments(&present);
                cvs.push(ratio(m.std, m.mean.abs()));
                skews.push(m.skewness.unwrap_or(0.0));
                kurts.push(m.kurtosis.unwrap_or(0.0));
            }
            Column::Categorical(cells) => {
                let distinct: BTreeSet<&str> = cells.iter().flatten().map(String::as_str).collect();
                cardinalities.push(distinct.len() as f64);
            }
        }
    }
    let n_numeric = cvs.len() as f64;
    let n_categorical = cardinalities.len() as f64;
    let (cv_mean, cv_std) = mean_std(&cvs);
    let cv_min = cvs.iter().copied().reduce(f64::min).unwrap_or(0.0);
    let cv_max = cvs.iter().copied().reduce(f64::max).unwrap_or(0.0);
    let (skew_mean, skew_std) = mean_std(&skews);
    let (kurt_mean, kurt_std) = mean_std(&kurts);
    let (card_mean, _) = mean_std(&cardinalities);

    let out = vec![
        rf,
        rf.ln(),
        cf,
        cf.ln(),
        cf / rf,
        k as f64,
        class_entropy,
        class_imbalance,
        missing_cells as f64 / (rf * cf),
        rows_with_missing as f64 / rf,
        n_numeric,
        n_categorical,
        n_numeric / cf,
        cv_mean,
        cv_std,
        cv_min,
        cv_max,
        skew_mean,
        skew_std,
        kurt_mean,
        kurt_std,
        card_mean,
    ];
    debug_assert_eq!(out.len(), N_FEATURES);
    debug_assert!(out.iter().all(|v| v.is_finite()));
    Ok(out)
}

/// Per-column mean and population standard deviation used for z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Statistics over the given rows.
    pub fn from_rows<'a>(feature_names: &[String], rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let f = feature_names.len();
        let mut columns = vec![Vec::new(); f];
        for row in rows {
            assert_eq!(row.len(), f);
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        let (mean, std) = columns.iter().map(|c| mean_std(c)).unzip();
        Self {
            feature_names: feature_names.to_vec(),
            mean,
            std,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// z-scores one row; zero-variance columns map to 0.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if row.len() != self.dim() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.dim(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| {
                if s <= 1e-12 * m.abs().max(1.0) {
                    0.0
                } else {
                    (x - m) / s
                }
            })
            .collect())
    }
}

/// Standardizes a table. With `stats = None` the statistics are computed from
/// the table itself and returned for reuse on other tables.
pub fn standardize(
    table: &MetaFeatureTable,
    stats: Option<&StandardizationStats>,
) -> Result<(MetaFeatureTable, StandardizationStats), FeatureError> {
    let stats = match stats {
        Some(s) => {
            if s.dim() != table.n_features() {
                return Err(FeatureError::DimensionMismatch {
                    expected: s.dim(),
                    found: table.n_features(),
                });
            }
            s.clone()
        }
        None => StandardizationStats::from_rows(
            &table.feature_names,
            table.rows.iter().map(Vec::as_slice),
        ),
    };
    let rows = table
        .rows
        .iter()
        .map(|r| stats.apply(r))
        .collect::<Result<_, _>>()?;
    Ok((
        MetaFeatureTable {
            feature_names: table.feature_names.clone(),
            rows,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric(cols: Vec<Vec<f64>>, target: Vec<&str>) -> TabularDataset {
        TabularDataset {
            columns: cols
                .into_iter()
                .map(|c| Column::Numeric(c.into_iter().map(Some).collect()))
                .collect(),
            target: target.into_iter().map(String::from).collect(),
        }
    }

    fn feat(v: &[f64], name: &str) -> f64 {
        v[FEATURE_NAMES.iter().position(|n| *n == name).unwrap()]
    }

    #[test]
    fn balanced_two_class_entropy_is_one() {
        let ds = numeric(vec![vec![1.0, 2.0, 3.0, 4.0]], vec!["a", "b", "a", "b"]);
        let v = extract(&ds).unwrap();
        assert_eq!(v.len(), N_FEATURES);
        assert!((feat(&v, "class_entropy") - 1.0).abs() < 1e-15);
        assert_eq!(feat(&v, "class_imbalance"), 0.0);
    }

    #[test]
    fn counts_and_logs() {
        let cols: Vec<Vec<f64>> = (0..10).map(|j| (0..100).map(|i| (i * j) as f64).collect()).collect();
        let target: Vec<&str> = (0..100).map(|i| if i % 3 == 0 { "x" } else { "y" }).collect();
        let v = extract(&numeric(cols, target)).unwrap();
        assert_eq!(feat(&v, "number_of_instances"), 100.0);
        assert_eq!(feat(&v, "number_of_attributes"), 10.0);
        assert_eq!(feat(&v, "log_number_of_instances"), 100f64.ln());
        assert_eq!(feat(&v, "dataset_ratio"), 0.1);
        assert_eq!(feat(&v, "number_of_numeric_attributes"), 10.0);
        assert_eq!(feat(&v, "ratio_numeric_to_total"), 1.0);
        assert_eq!(feat(&v, "mean_categorical_cardinality"), 0.0);
    }

    #[test]
    fn constant_and_all_missing_columns_impute_zero() {
        let ds = TabularDataset {
            columns: vec![
                Column::Numeric(vec![Some(5.0); 4]),
                Column::Numeric(vec![None; 4]),
                Column::Categorical(vec![Some("u".into()), None, Some("v".into()), Some("u".into())]),
            ],
            target: ["a", "b", "b", "b"].map(String::from).to_vec(),
        };
        let v = extract(&ds).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
        assert_eq!(feat(&v, "skewness_mean"), 0.0);
        assert_eq!(feat(&v, "kurtosis_mean"), 0.0);
        assert_eq!(feat(&v, "coefficient_of_variation_max"), 0.0);
        assert_eq!(feat(&v, "mean_categorical_cardinality"), 2.0);
        assert_eq!(feat(&v, "percentage_of_missing_values"), 5.0 / 12.0);
        assert_eq!(feat(&v, "percentage_of_instances_with_missing_values"), 1.0);
        assert_eq!(feat(&v, "class_imbalance"), 0.5);
    }

    #[test]
    fn degenerate_inputs() {
        let one_class = numeric(vec![vec![1.0, 2.0]], vec!["a", "a"]);
        assert!(matches!(extract(&one_class), Err(FeatureError::DegenerateDataset(_))));
        let no_cols = TabularDataset {
            columns: vec![],
            target: vec!["a".into(), "b".into()],
        };
        assert!(matches!(extract(&no_cols), Err(FeatureError::DegenerateDataset(_))));
        let one_row = numeric(vec![vec![1.0]], vec!["a"]);
        assert!(extract(&one_row).is_err());
    }

    #[test]
    fn row_permutation_is_exactly_invariant() {
        let a: Vec<f64> = (0..30).map(|i| ((i * 7919) % 31) as f64 / 3.0 - 2.0).collect();
        let b: Vec<f64> = (0..30).map(|i| ((i * i) % 17) as f64 + 0.5).collect();
        let t: Vec<&str> = (0..30).map(|i| ["p", "q", "r"][i % 3]).collect();
        let ds = numeric(vec![a.clone(), b.clone()], t.clone());
        let perm: Vec<usize> = (0..30).map(|i| (i * 11) % 30).collect();
        let ds2 = numeric(
            vec![perm.iter().map(|&i| a[i]).collect(), perm.iter().map(|&i| b[i]).collect()],
            perm.iter().map(|&i| t[i]).collect(),
        );
        assert_eq!(extract(&ds).unwrap(), extract(&ds2).unwrap());
    }

    #[test]
    fn standardize_small_column() {
        let table = MetaFeatureTable {
            feature_names: vec!["x".into(), "c".into()],
            rows: vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]],
        };
        let (z, stats) = standardize(&table, None).unwrap();
        let expect = 1.5f64.sqrt();
        assert!((z.rows[0][0] + expect).abs() < 1e-12);
        assert_eq!(z.rows[1][0], 0.0);
        assert!((z.rows[2][0] - expect).abs() < 1e-12);
        assert!(z.rows.iter().all(|r| r[1] == 0.0));

        let (again, _) = standardize(&z, None).unwrap();
        for (r1, r2) in again.rows.iter().zip(&z.rows) {
            for (a, b) in r1.iter().zip(r2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let (reused, _) = standardize(&table, Some(&stats)).unwrap();
        assert_eq!(reused, z);

        let narrow = MetaFeatureTable {
            feature_names: vec!["x".into()],
            rows: vec![vec![1.0]],
        };
        assert!(matches!(
            standardize(&narrow, Some(&stats)),
            Err(FeatureError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }
}
