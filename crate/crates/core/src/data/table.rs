//! CSV ingestion, preprocessing and stratified splitting of tabular data.

use crate::error::{io_err, Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

/// Columns with a larger fraction of missing cells are dropped.
pub const MAX_MISSING_FRACTION: f64 = 0.5;
const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn parse(raw: &str) -> Self {
        let s = raw.trim();
        if s.is_empty() || s == "?" {
            return Cell::Missing;
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Cell::Num(v),
            _ => Cell::Text(s.to_string()),
        }
    }

    fn as_text(&self) -> Option<String> {
        match self {
            Cell::Num(v) => Some(v.to_string()),
            Cell::Text(s) => Some(s.clone()),
            Cell::Missing => None,
        }
    }
}

/// A typed but otherwise untouched table with its target column split off.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub target_name: String,
    pub target: Vec<String>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }
}

/// Loads a comma-separated file with a header row. The last column is the
/// target unless `target_column` names another one.
pub fn load_csv(path: &Path, target_column: Option<&str>) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_csv(file, target_column)
}

pub fn read_csv<R: Read>(reader: R, target_column: Option<&str>) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Format(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < 2 {
        return Err(Error::Format("need at least one feature column and a target".into()));
    }
    let target_idx = match target_column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("target column {name:?} not in header")))?,
        None => header.len() - 1,
    };
    let mut rows = Vec::new();
    let mut target = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("data row {}: {e}", i + 1)))?;
        let mut row = Vec::with_capacity(header.len() - 1);
        for (j, raw) in rec.iter().enumerate() {
            if j == target_idx {
                match Cell::parse(raw).as_text() {
                    Some(t) => target.push(t),
                    None => return Err(Error::Format(format!("data row {}: missing target", i + 1))),
                }
            } else {
                row.push(Cell::parse(raw));
            }
        }
        rows.push(row);
    }
    let target_name = header[target_idx].clone();
    let columns = header.into_iter().enumerate().filter(|&(j, _)| j != target_idx).map(|(_, h)| h).collect();
    Ok(RawTable { columns, rows, target_name, target })
}

/// What preprocessing did to each column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub dropped_missing: Vec<String>,
    pub dropped_constant: Vec<String>,
    /// Imputation value per retained column (in raw, pre-standardisation units).
    pub medians: Vec<f64>,
    /// Lexicographic code books of categorical retained columns.
    pub categories: Vec<(String, Vec<String>)>,
    /// Standardisation statistics per retained column.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Preprocessed feature matrix with contiguous 0-based labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    /// Row-major `m x N` standardised features.
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub n_features: usize,
    pub n_classes: usize,
    pub column_names: Vec<String>,
    pub class_names: Vec<String>,
    pub report: PreprocessReport,
}

impl TabularDataset {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.row(i).to_vec()).collect()
    }

    /// Undoes the z-scoring with the stored statistics.
    pub fn destandardize(&self) -> Vec<f64> {
        let n = self.n_features;
        self.x
            .iter()
            .enumerate()
            .map(|(k, &v)| v * self.report.stds[k % n] + self.report.means[k % n])
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Self { x, y: idx.iter().map(|&i| self.y[i]).collect(), ..self.clone() }
    }

    /// Reorders feature columns so that new column `j` is old column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_features;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Config(format!("{perm:?} is not a permutation of {n} columns")));
        }
        let mut x = Vec::with_capacity(self.x.len());
        for i in 0..self.n_rows() {
            let r = self.row(i);
            x.extend(perm.iter().map(|&p| r[p]));
        }
        let pick = |v: &[f64]| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        let mut report = self.report.clone();
        report.means = pick(&self.report.means);
        report.stds = pick(&self.report.stds);
        report.medians = pick(&self.report.medians);
        Ok(Self {
            x,
            column_names: perm.iter().map(|&p| self.column_names[p].clone()).collect(),
            report,
            ..self.clone()
        })
    }

    fn standardize_with(&mut self, raw: &[f64], means: &[f64], stds: &[f64]) {
        let n = self.n_features;
        self.x = raw.iter().enumerate().map(|(k, &v)| (v - means[k % n]) / stds[k % n]).collect();
        self.report.means = means.to_vec();
        self.report.stds = stds.to_vec();
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        (values[k / 2 - 1] + values[k / 2]) / 2.0
    }
}

/// Population mean and standard deviation of each column of a row-major matrix.
fn column_stats(raw: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut means = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            means[j] += raw[i * n + j];
        }
    }
    means.iter_mut().for_each(|v| *v /= m as f64);
    let mut vars = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            let d = raw[i * n + j] - means[j];
            vars[j] += d * d;
        }
    }
    (means, vars.into_iter().map(|v| (v / m as f64).sqrt()).collect())
}

fn encode_labels(target: &[String]) -> (Vec<usize>, Vec<String>) {
    let distinct: BTreeSet<&String> = target.iter().collect();
    let mut names: Vec<String> = distinct.into_iter().cloned().collect();
    if names.iter().all(|s| s.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    let y = target.iter().map(|t| names.iter().position(|n| n == t).unwrap()).collect();
    (y, names)
}

/// Drops sparse and constant columns, encodes categoricals, imputes medians
/// and z-scores every retained column.
pub fn preprocess(raw: &RawTable) -> Result<TabularDataset> {
    let m = raw.n_rows();
    if m == 0 {
        return Err(Error::Data("table has no rows".into()));
    }
    let (y, class_names) = encode_labels(&raw.target);
    if class_names.len() < 2 {
        return Err(Error::Data(format!("target {:?} has a single class", raw.target_name)));
    }

    let mut report = PreprocessReport::default();
    let mut columns: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for (j, name) in raw.columns.iter().enumerate() {
        let cells: Vec<&Cell> = raw.rows.iter().map(|r| &r[j]).collect();
        let missing = cells.iter().filter(|c| matches!(c, Cell::Missing)).count();
        if missing as f64 / m as f64 > MAX_MISSING_FRACTION {
            report.dropped_missing.push(name.clone());
            continue;
        }
        let categorical = cells.iter().any(|c| matches!(c, Cell::Text(_)));
        let values: Vec<Option<f64>> = if categorical {
            let book: BTreeSet<String> = cells.iter().filter_map(|c| c.as_text()).collect();
            let book: Vec<String> = book.into_iter().collect();
            let coded = cells
                .iter()
                .map(|c| c.as_text().map(|t| book.binary_search(&t).unwrap() as f64))
                .collect();
            report.categories.push((name.clone(), book));
            coded
        } else {
            cells.iter().map(|c| if let Cell::Num(v) = c { Some(*v) } else { None }).collect()
        };
        columns.push((name.clone(), values));
    }

    let mut kept: Vec<(String, Vec<f64>, f64)> = Vec::new();
    for (name, values) in columns {
        let mut present: Vec<f64> = values.iter().flatten().copied().collect();
        let med = if present.is_empty() { 0.0 } else { median(&mut present) };
        let filled: Vec<f64> = values.iter().map(|v| v.unwrap_or(med)).collect();
        let (mean, std) = column_stats(&filled, m, 1);
        if std[0] <= ZERO_VARIANCE * mean[0].abs().max(1.0) {
            report.categories.retain(|(c, _)| c != &name);
            report.dropped_constant.push(name);
            continue;
        }
        kept.push((name, filled, med));
    }
    if kept.is_empty() {
        return Err(Error::Data("every feature column was dropped".into()));
    }

    let n = kept.len();
    let mut raw_x = vec![0.0; m * n];
    for (j, (_, col, _)) in kept.iter().enumerate() {
        for i in 0..m {
            raw_x[i * n + j] = col[i];
        }
    }
    report.medians = kept.iter().map(|k| k.2).collect();
    let (means, stds) = column_stats(&raw_x, m, n);
    let mut ds = TabularDataset {
        x: Vec::new(),
        y,
        n_features: n,
        n_classes: class_names.len(),
        column_names: kept.into_iter().map(|k| k.0).collect(),
        class_names,
        report,
    };
    ds.standardize_with(&raw_x, &means, &stds);
    Ok(ds)
}

/// Stratified split with `ratio` of each class in the training part. Both
/// parts are re-standardised with training-split statistics.
pub fn split(ds: &TabularDataset, ratio: f64, seed: u64) -> Result<(TabularDataset, TabularDataset)> {
    let m = ds.n_rows();
    if m < 5 {
        return Err(Error::Data(format!("need at least 5 rows to split, got {m}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, &c) in ds.y.iter().enumerate() {
        by_class[c].push(i);
    }
    let n_train_total = (m as f64 * ratio).round() as usize;
    let mut train = Vec::with_capacity(n_train_total);
    let mut test = Vec::with_capacity(m - n_train_total);
    if by_class.iter().any(|c| !c.is_empty() && c.len() < 2) {
        log::warn!("a class has fewer than 2 rows; falling back to an unstratified split");
        let mut all: Vec<usize> = (0..m).collect();
        all.shuffle(&mut rng);
        train.extend_from_slice(&all[..n_train_total]);
        test.extend_from_slice(&all[n_train_total..]);
    } else {
        let ideal: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * ratio).collect();
        let mut quota: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
        let mut order: Vec<usize> = (0..by_class.len()).collect();
        order.sort_by(|&a, &b| (ideal[b] - ideal[b].floor()).total_cmp(&(ideal[a] - ideal[a].floor())).then(a.cmp(&b)));
        let mut left = n_train_total.saturating_sub(quota.iter().sum());
        for &c in order.iter().cycle().take(order.len() * 2) {
            if left == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                left -= 1;
            }
        }
        for (c, members) in by_class.iter_mut().enumerate() {
            members.shuffle(&mut rng);
            train.extend_from_slice(&members[..quota[c]]);
            test.extend_from_slice(&members[quota[c]..]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();

    let raw = ds.destandardize();
    let n = ds.n_features;
    let gather = |idx: &[usize]| -> Vec<f64> { idx.iter().flat_map(|&i| raw[i * n..(i + 1) * n].to_vec()).collect() };
    let (raw_train, raw_test) = (gather(&train), gather(&test));
    let (means, mut stds) = column_stats(&raw_train, train.len(), n);
    for s in &mut stds {
        if *s <= ZERO_VARIANCE {
            *s = 1.0;
        }
    }
    let mut tr = ds.subset(&train);
    let mut te = ds.subset(&test);
    tr.standardize_with(&raw_train, &means, &stds);
    te.standardize_with(&raw_test, &means, &stds);
    Ok((tr, te))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> RawTable {
        read_csv(text.as_bytes(), None).unwrap()
    }

    #[test]
    fn missing_markers() {
        let t = table("a,b,y\n1,?,x\n,2,y\n3,4,x\n");
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.rows[0][1], Cell::Missing);
        assert_eq!(t.rows[1][0], Cell::Missing);
        assert_eq!(t.rows[2][1], Cell::Num(4.0));
    }

    #[test]
    fn ragged_row_reports_position() {
        let err = read_csv("a,b,y\n1,2,x\n1,x\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("row 2")), "{err}");
    }

    #[test]
    fn named_target_column() {
        let t = read_csv("y,a,b\n0,1,2\n1,3,4\n".as_bytes(), Some("y")).unwrap();
        assert_eq!(t.columns, vec!["a", "b"]);
        assert_eq!(t.target, vec!["0", "1"]);
        assert!(read_csv("y,a\n0,1\n".as_bytes(), Some("z")).is_err());
    }

    #[test]
    fn median_imputation_and_drops() {
        let t = table("a,b,c,d,y\n1,?,5,p,0\n?,?,5,q,1\n3,7,5,p,0\n5,?,5,?,1\n");
        let ds = preprocess(&t).unwrap();
        assert_eq!(ds.report.dropped_missing, vec!["b"]);
        assert_eq!(ds.report.dropped_constant, vec!["c"]);
        assert_eq!(ds.column_names, vec!["a", "d"]);
        assert_eq!(ds.report.medians, vec![3.0, 0.0]);
        let raw = ds.destandardize();
        let col_a: Vec<f64> = (0..4).map(|i| raw[i * 2]).collect();
        for (got, want) in col_a.iter().zip([1.0, 3.0, 3.0, 5.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(ds.report.categories, vec![("d".to_string(), vec!["p".to_string(), "q".to_string()])]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let t = table("a,y\n1,10\n2,9\n3,10\n4,2\n");
        let ds = preprocess(&t).unwrap();
        assert_eq!(ds.class_names, vec!["2", "9", "10"]);
        assert_eq!(ds.y, vec![2, 1, 2, 0]);
    }

    #[test]
    fn single_class_is_a_data_error() {
        assert!(matches!(preprocess(&table("a,y\n1,x\n2,x\n")), Err(Error::Data(_))));
        assert!(matches!(preprocess(&table("a,y\n1,x\n1,y\n")), Err(Error::Data(_))));
    }
}
