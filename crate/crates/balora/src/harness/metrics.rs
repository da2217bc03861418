//! Accuracy matrices and the aggregate continual-learning metrics.
//!
//! `A[j][i]` is the accuracy (percent) on task `i` after training through
//! task `j`; entries with `i > j` are unseen-task evaluations. All five
//! aggregates derive from this matrix alone.

use crate::error::{Error, Result};
use crate::linalg::LineReader;
use std::fmt::Write as _;

/// Full T x T accuracy table on the percent scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    t: usize,
    a: Vec<f64>,
}

impl AccuracyMatrix {
    pub fn new(t: usize, a: Vec<f64>) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidInput("T must be at least 1".to_string()));
        }
        if a.len() != t * t {
            return Err(Error::InvalidInput(format!(
                "accuracy matrix needs {t}x{t} entries, got {}",
                a.len()
            )));
        }
        if let Some(bad) = a.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 100.0) {
            return Err(Error::InvalidInput(format!(
                "accuracy entries must lie in [0, 100], got {bad}"
            )));
        }
        Ok(AccuracyMatrix { t, a })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let t = rows.len();
        let mut a = Vec::with_capacity(t * t);
        for r in rows {
            if r.len() != t {
                return Err(Error::InvalidInput("accuracy matrix must be square".to_string()));
            }
            a.extend_from_slice(r);
        }
        AccuracyMatrix::new(t, a)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// `A[j][i]`, both 0-indexed: row = checkpoint, column = task.
    pub fn at(&self, j: usize, i: usize) -> f64 {
        self.a[j * self.t + i]
    }

    /// CSV with a task-id header row and one row per checkpoint, cells with
    /// four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task");
        for i in 1..=self.t {
            let _ = write!(out, ",{i}");
        }
        out.push('\n');
        for j in 0..self.t {
            let _ = write!(out, "{}", j + 1);
            for i in 0..self.t {
                let _ = write!(out, ",{:.4}", self.at(j, i));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV form; `#` comment lines are ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = LineReader::new(text);
        let header = reader.next_content_line()?;
        let mut fields = header.split(',');
        if fields.next().map(str::trim) != Some("task") {
            return Err(reader.error("header row must start with `task`"));
        }
        let t = fields.count();
        if t == 0 {
            return Err(reader.error("header row lists no tasks"));
        }
        let mut a = Vec::with_capacity(t * t);
        for j in 0..t {
            let line = reader.next_content_line()?;
            let mut fields = line.split(',');
            let row_id: usize = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| reader.error("row must start with its checkpoint index"))?;
            if row_id != j + 1 {
                return Err(reader.error(format!(
                    "expected checkpoint row {} but found {row_id}",
                    j + 1
                )));
            }
            let before = a.len();
            for f in fields {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| reader.error(format!("invalid accuracy cell `{}`", f.trim())))?;
                a.push(v);
            }
            if a.len() - before != t {
                return Err(reader.error(format!(
                    "expected {t} cells per row, got {}",
                    a.len() - before
                )));
            }
        }
        if !reader.at_end() {
            return Err(reader.error("trailing content after the accuracy matrix"));
        }
        AccuracyMatrix::new(t, a).map_err(|e| Error::ParseError {
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Mean final accuracy: mean of the last row.
pub fn mfn(a: &AccuracyMatrix) -> f64 {
    let t = a.t();
    (0..t).map(|i| a.at(t - 1, i)).sum::<f64>() / t as f64
}

/// Mean average accuracy: mean over checkpoints of the running seen-task mean.
pub fn maa(a: &AccuracyMatrix) -> f64 {
    let t = a.t();
    let mut acc = 0.0;
    for j in 0..t {
        let row_mean = (0..=j).map(|i| a.at(j, i)).sum::<f64>() / (j + 1) as f64;
        acc += row_mean;
    }
    acc / t as f64
}

/// Backward transfer: mean over tasks of final-minus-diagonal accuracy.
/// Negative values indicate forgetting.
pub fn bwt(a: &AccuracyMatrix) -> Result<f64> {
    let t = a.t();
    if t < 2 {
        return Err(Error::InvalidInput(
            "bwt requires at least two tasks".to_string(),
        ));
    }
    let sum: f64 = (0..t).map(|i| a.at(t - 1, i) - a.at(i, i)).sum();
    Ok(sum / t as f64)
}

/// Forward transfer: mean over unseen tasks of the mean accuracy achieved
/// before the task was trained. Uses only entries with `j < i`.
pub fn fwt(a: &AccuracyMatrix) -> Result<f64> {
    let t = a.t();
    if t < 2 {
        return Err(Error::InvalidInput(
            "fwt requires at least two tasks".to_string(),
        ));
    }
    let mut acc = 0.0;
    for i in 1..t {
        let col_mean = (0..i).map(|j| a.at(j, i)).sum::<f64>() / i as f64;
        acc += col_mean;
    }
    Ok(acc / (t - 1) as f64)
}

/// Grand mean over the full T x T table.
pub fn avg(a: &AccuracyMatrix) -> f64 {
    let t = a.t();
    let sum: f64 = (0..t * t).map(|idx| a.at(idx / t, idx % t)).sum();
    sum / (t * t) as f64
}

/// All five aggregates plus the per-task final accuracies.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub mfn: f64,
    pub maa: f64,
    pub bwt: f64,
    pub fwt: f64,
    pub avg: f64,
    pub final_accuracies: Vec<f64>,
}

pub fn metrics_report(a: &AccuracyMatrix) -> Result<MetricsReport> {
    let t = a.t();
    Ok(MetricsReport {
        mfn: mfn(a),
        maa: maa(a),
        bwt: bwt(a)?,
        fwt: fwt(a)?,
        avg: avg(a),
        final_accuracies: (0..t).map(|i| a.at(t - 1, i)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(t: usize, value: f64) -> AccuracyMatrix {
        AccuracyMatrix::new(t, vec![value; t * t]).unwrap()
    }

    #[test]
    fn constant_matrix_metrics() {
        let a = constant(4, 50.0);
        assert_eq!(mfn(&a), 50.0);
        assert_eq!(maa(&a), 50.0);
        assert_eq!(bwt(&a).unwrap(), 0.0);
        assert_eq!(fwt(&a).unwrap(), 50.0);
        assert_eq!(avg(&a), 50.0);
    }

    #[test]
    fn single_task_edge_cases() {
        let a = AccuracyMatrix::new(1, vec![73.0]).unwrap();
        assert_eq!(mfn(&a), 73.0);
        assert_eq!(maa(&a), 73.0);
        assert!(bwt(&a).is_err());
        assert!(fwt(&a).is_err());
    }

    #[test]
    fn bwt_is_exactly_zero_when_final_row_equals_diagonal() {
        let a = AccuracyMatrix::from_rows(&[
            &[90.0, 10.0, 20.0],
            &[40.0, 80.0, 30.0],
            &[90.0, 80.0, 70.0],
        ])
        .unwrap();
        assert_eq!(bwt(&a).unwrap(), 0.0);
    }

    #[test]
    fn fwt_ignores_seen_entries_bit_for_bit() {
        let base = AccuracyMatrix::from_rows(&[
            &[90.0, 10.0, 20.0],
            &[40.0, 80.0, 30.0],
            &[35.0, 75.0, 70.0],
        ])
        .unwrap();
        // Perturb every entry with j >= i (lower triangle + diagonal).
        let perturbed = AccuracyMatrix::from_rows(&[
            &[10.0, 10.0, 20.0],
            &[99.0, 1.0, 30.0],
            &[0.0, 3.0, 7.0],
        ])
        .unwrap();
        assert_eq!(fwt(&base).unwrap().to_bits(), fwt(&perturbed).unwrap().to_bits());
    }

    #[test]
    fn rejects_out_of_range_entries() {
        assert!(AccuracyMatrix::new(2, vec![0.0, 5.0, 101.0, 1.0]).is_err());
        assert!(AccuracyMatrix::new(2, vec![0.0, -0.5, 10.0, 1.0]).is_err());
        assert!(AccuracyMatrix::new(2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn csv_round_trip_and_parse_errors() {
        let a = AccuracyMatrix::from_rows(&[&[91.7, 52.6], &[58.6, 76.7]]).unwrap();
        let csv = a.to_csv();
        assert!(csv.starts_with("task,1,2\n1,91.7000,52.6000\n"));
        let back = AccuracyMatrix::from_csv(&csv).unwrap();
        assert_eq!(a, back);

        // Comments are tolerated.
        let commented = format!("# source note\n{csv}");
        assert_eq!(AccuracyMatrix::from_csv(&commented).unwrap(), a);

        match AccuracyMatrix::from_csv("task,1,2\n1,91.7,52.6\n2,58.6,oops\n") {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected ParseError, got {other:?}"),
        }
        assert!(AccuracyMatrix::from_csv("nope\n").is_err());
    }
}
