//! Labelled samples and the csv / svmlight loaders.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "class" => Ok(Task::Classification),
            "regression" | "reg" => Ok(Task::Regression),
            other => Err(Error::domain(format!("unknown task '{other}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svmlight,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "svmlight" | "libsvm" => Ok(Format::Svmlight),
            other => Err(Error::domain(format!("unknown format '{other}'"))),
        }
    }
}

/// Where a dataset came from and what the loader did to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub path: String,
    pub format: Format,
    pub header_skipped: bool,
    /// 0/1 classification labels were rewritten to -1/+1.
    pub labels_remapped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub task: Task,
    pub source: Option<Source>,
}

impl DataSet {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, task: Task) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::shape("dataset needs at least one row and one feature"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset has non-finite values"));
        }
        if task == Task::Classification && labels.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(Error::domain("classification labels must be -1 or +1"));
        }
        Ok(DataSet {
            features,
            labels,
            task,
            source: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> DataSet {
        DataSet {
            features: self.features.select_rows(indices),
            labels: DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.labels[i])),
            task: self.task,
            source: self.source.clone(),
        }
    }

    /// Number of +1 labels (classification).
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|v| **v > 0.0).count()
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format, task: Task) -> Result<DataSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut data = parse_dataset(&text, format, task)?;
    if let Some(src) = data.source.as_mut() {
        src.path = path.display().to_string();
    }
    Ok(data)
}

/// Parses dataset text; the returned source has an empty path.
pub fn parse_dataset(text: &str, format: Format, task: Task) -> Result<DataSet> {
    let (rows, raw_labels, header_skipped) = match format {
        Format::Csv => parse_csv_rows(text)?,
        Format::Svmlight => {
            let (rows, labels) = parse_svmlight_rows(text)?;
            (rows, labels, false)
        }
    };
    let (labels, labels_remapped) = normalize_labels(raw_labels, task)?;
    let m = rows.len();
    let d = rows[0].len();
    let features = DMatrix::from_fn(m, d, |i, j| rows[i][j]);
    let mut data = DataSet::new(features, DVector::from_vec(labels), task)?;
    data.source = Some(Source {
        path: String::new(),
        format,
        header_skipped,
        labels_remapped,
    });
    Ok(data)
}

fn normalize_labels(labels: Vec<(usize, f64)>, task: Task) -> Result<(Vec<f64>, bool)> {
    if task == Task::Regression {
        return Ok((labels.into_iter().map(|(_, v)| v).collect(), false));
    }
    for &(line, v) in &labels {
        if v != -1.0 && v != 0.0 && v != 1.0 {
            return Err(Error::domain(format!(
                "line {line}: classification label {v} is not one of -1, 0, +1"
            )));
        }
    }
    let has_zero = labels.iter().any(|(_, v)| *v == 0.0);
    let has_neg = labels.iter().any(|(_, v)| *v == -1.0);
    if has_zero && has_neg {
        return Err(Error::domain("classification labels mix 0 and -1"));
    }
    let out = labels
        .into_iter()
        .map(|(_, v)| if v == 0.0 { -1.0 } else { v })
        .collect();
    Ok((out, has_zero))
}

type Rows = Vec<Vec<f64>>;
type LabelColumn = Vec<(usize, f64)>;

fn parse_csv_rows(text: &str) -> Result<(Rows, LabelColumn, bool)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut header_skipped = false;
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if width.is_none() && !header_skipped => {
                header_skipped = true;
                width = Some(cells.len());
                continue;
            }
            Err(_) => {
                let bad = cells.iter().find(|c| c.parse::<f64>().is_err()).unwrap_or(&"");
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-numeric cell '{bad}'"),
                });
            }
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => {}
        }
        if values.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                message: "need at least one feature column and a label column".into(),
            });
        }
        let (feat, label) = values.split_at(values.len() - 1);
        rows.push(feat.to_vec());
        labels.push((lineno, label[0]));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    Ok((rows, labels, header_skipped))
}

fn parse_svmlight_rows(text: &str) -> Result<(Rows, Vec<(usize, f64)>)> {
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or("");
        let label = label_tok.parse::<f64>().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad label '{label_tok}'"),
        })?;
        let mut entries = Vec::new();
        for tok in tokens {
            if tok.starts_with("qid:") {
                continue;
            }
            let (i, v) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected index:value, found '{tok}'"),
            })?;
            let i: usize = i.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature index '{i}'"),
            })?;
            if i == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "feature indices are 1-based".into(),
                });
            }
            let v: f64 = v.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature value '{v}'"),
            })?;
            dim = dim.max(i);
            entries.push((i - 1, v));
        }
        sparse.push(entries);
        labels.push((lineno, label));
    }
    if sparse.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    if dim == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "no feature values in file".into(),
        });
    }
    let rows = sparse
        .into_iter()
        .map(|entries| {
            let mut row = vec![0.0; dim];
            for (i, v) in entries {
                row[i] = v;
            }
            row
        })
        .collect();
    Ok((rows, labels))
}

/// Reads a square matrix of comma-separated values (a precomputed kernel).
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| {
                c.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("non-numeric cell '{}'", c.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "empty matrix file".into(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_basic() {
        let d = parse_dataset("1,2,1\n3,4,-1", Format::Csv, Task::Classification).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels.as_slice(), &[1.0, -1.0]);
        assert_eq!(d.features[(1, 0)], 3.0);
    }

    #[test]
    fn csv_header_is_detected() {
        let d = parse_dataset("a,b,label\n1,2,0.5\n", Format::Csv, Task::Regression).unwrap();
        assert_eq!(d.len(), 1);
        assert!(d.source.unwrap().header_skipped);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        match parse_dataset("1,2,1\n3,x,1\n", Format::Csv, Task::Regression) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_dataset("1,2,1\n3,1\n", Format::Csv, Task::Regression) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_dataset("", Format::Csv, Task::Regression), Err(Error::Parse { .. })));
    }

    #[test]
    fn svmlight_densifies() {
        let d = parse_dataset("-1 1:0.5 3:2\n", Format::Svmlight, Task::Classification).unwrap();
        assert_eq!(d.dim(), 3);
        assert_eq!(d.features.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, 2.0]);
        assert_eq!(d.labels[0], -1.0);
        assert!(parse_dataset("1 0:1\n", Format::Svmlight, Task::Regression).is_err());
    }

    #[test]
    fn binary_labels_are_remapped() {
        let d = parse_dataset("1,0\n2,1\n", Format::Csv, Task::Classification).unwrap();
        assert_eq!(d.labels.as_slice(), &[-1.0, 1.0]);
        assert!(d.source.unwrap().labels_remapped);
        assert!(matches!(
            parse_dataset("1,2\n2,1\n", Format::Csv, Task::Classification),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn matrix_csv() {
        let m = parse_matrix_csv("1,0\n0,1\n").unwrap();
        assert_eq!(m, DMatrix::identity(2, 2));
        assert!(parse_matrix_csv("1,0\n0\n").is_err());
    }
}
