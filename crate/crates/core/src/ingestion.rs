//! CSV loading and imbalanced train/test splits for labeled data.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RqdaError};
use crate::estimation::TrainingSet;
use crate::model::stream_rng;

pub const MIN_ROWS_PER_LABEL: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: DMatrix<f64>,
    pub y: Vec<i64>,
    /// Row indices of each label, ascending.
    pub classes: BTreeMap<i64, Vec<usize>>,
    pub feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(x: DMatrix<f64>, y: Vec<i64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(RqdaError::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
                context: "label count vs rows".into(),
            });
        }
        let mut classes: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (row, label) in y.iter().enumerate() {
            classes.entry(*label).or_default().push(row);
        }
        if let Some((label, rows)) = classes.iter().find(|(_, r)| r.len() < MIN_ROWS_PER_LABEL) {
            return Err(RqdaError::InsufficientSamples {
                needed: MIN_ROWS_PER_LABEL,
                got: rows.len(),
                context: format!("rows with label {label}"),
            });
        }
        Ok(Self {
            x,
            y,
            classes,
            feature_names: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn rows_of(&self, label: i64) -> Result<&[usize]> {
        self.classes
            .get(&label)
            .map(Vec::as_slice)
            .ok_or_else(|| RqdaError::InvalidInput(format!("label {label} not present")))
    }

    /// Feature rows at the given indices.
    pub fn select(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.x[(rows[i], j)])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    pub label: LabelColumn,
    pub has_header: bool,
    /// Per-feature centering and scaling to unit sample variance.
    pub standardize: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label: LabelColumn::Index(0),
            has_header: true,
            standardize: false,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, opts)
}

pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(false)
        .from_reader(reader);
    let header: Option<Vec<String>> = if opts.has_header {
        Some(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
    } else {
        None
    };
    let label_col = match (&opts.label, &header) {
        (LabelColumn::Index(i), _) => *i,
        (LabelColumn::Name(name), Some(h)) => h
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| RqdaError::InvalidInput(format!("no column named {name:?}")))?,
        (LabelColumn::Name(name), None) => {
            return Err(RqdaError::InvalidInput(format!(
                "label column {name:?} given by name but the file has no header"
            )))
        }
    };
    let first_data_line = if opts.has_header { 2 } else { 1 };
    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut width = None;
    for (k, rec) in rdr.records().enumerate() {
        let row = first_data_line + k;
        let rec = rec.map_err(|e| RqdaError::Parse {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        let w = *width.get_or_insert(rec.len());
        if label_col >= w {
            return Err(RqdaError::InvalidInput(format!(
                "label column {label_col} out of range for {w} columns"
            )));
        }
        for (col, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(RqdaError::Parse {
                    row,
                    col,
                    msg: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| RqdaError::Parse {
                row,
                col,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(RqdaError::Parse {
                    row,
                    col,
                    msg: format!("non-finite value {cell:?}"),
                });
            }
            if col == label_col {
                if v.fract() != 0.0 || v.abs() > 2f64.powi(53) {
                    return Err(RqdaError::Parse {
                        row,
                        col,
                        msg: format!("label {cell:?} is not an integer"),
                    });
                }
                y.push(v as i64);
            } else {
                values.push(v);
            }
        }
    }
    let w = width.unwrap_or(0);
    if y.is_empty() || w < 2 {
        return Err(RqdaError::InvalidInput("CSV has no feature rows".into()));
    }
    let p = w - 1;
    let mut x = DMatrix::from_row_slice(y.len(), p, &values);
    if opts.standardize {
        standardize_columns(&mut x);
    }
    let mut ds = LabeledDataset::new(x, y)?;
    ds.feature_names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(i, _)| *i != label_col)
            .map(|(_, s)| s)
            .collect()
    });
    Ok(ds)
}

/// Centers every column and scales it to unit sample (n−1) variance;
/// constant columns are only centered.
pub fn standardize_columns(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    if n < 2 {
        return;
    }
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / (n - 1) as f64;
        if var > 0.0 {
            col /= var.sqrt();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Source label of canonical class 0 (subsampled to ⌊ratio·n1⌋ rows).
    pub class_a: i64,
    /// Source label of class 1.
    pub class_b: i64,
    /// n₀/n₁
    pub ratio: f64,
    pub n1: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: TrainingSet,
    pub test0: DMatrix<f64>,
    pub test1: DMatrix<f64>,
    /// Dataset rows used for training / testing, per class.
    pub train_rows: [Vec<usize>; 2],
    pub test_rows: [Vec<usize>; 2],
}

/// Seeded imbalanced split: class A gets ⌊ratio·n1⌋ training rows, class B
/// gets n1; every remaining row of the pair goes to the test sets.
pub fn make_imbalanced_split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Split> {
    if spec.class_a == spec.class_b {
        return Err(RqdaError::InvalidInput(
            "class pair must be two distinct labels".into(),
        ));
    }
    if !(spec.ratio > 0.0) || !spec.ratio.is_finite() {
        return Err(RqdaError::InvalidInput(format!(
            "ratio {} must be positive",
            spec.ratio
        )));
    }
    let n0 = (spec.ratio * spec.n1 as f64).floor() as usize;
    let want = [n0, spec.n1];
    let mut rng = stream_rng(spec.seed, 0);
    let mut train_rows: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut test_rows: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (k, label) in [spec.class_a, spec.class_b].into_iter().enumerate() {
        let available = ds.rows_of(label)?;
        if want[k] < 2 || available.len() < want[k] + 1 {
            return Err(RqdaError::InsufficientSamples {
                needed: want[k].max(2) + 1,
                got: available.len(),
                context: format!(
                    "label {label}: {} training rows plus at least one test row requested",
                    want[k]
                ),
            });
        }
        let mut rows = available.to_vec();
        rows.shuffle(&mut rng);
        let test = rows.split_off(want[k]);
        train_rows[k] = rows;
        test_rows[k] = test;
    }
    Ok(Split {
        train: TrainingSet::new(ds.select(&train_rows[0]), ds.select(&train_rows[1]))?,
        test0: ds.select(&test_rows[0]),
        test1: ds.select(&test_rows[1]),
        train_rows,
        test_rows,
    })
}
