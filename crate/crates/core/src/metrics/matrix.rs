use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `R[t][k]`: accuracy on task `k` after finishing task `t` (task 0 is
/// pretraining). Only the lower triangle is meaningful and every cell is
/// written at most once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    n: usize,
    cells: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    /// Matrix for `n` tasks including pretraining.
    pub fn new(n: usize) -> Self {
        AccuracyMatrix {
            n,
            cells: (0..n).map(|t| vec![None; t + 1]).collect(),
        }
    }

    /// Fully populated matrix from rows (`rows[t]` must have `t + 1` entries).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = AccuracyMatrix::new(rows.len());
        for (t, row) in rows.iter().enumerate() {
            if row.len() < t + 1 {
                return Err(Error::Unpopulated {
                    row: t,
                    col: row.len(),
                });
            }
            if row.len() > t + 1 {
                return Err(Error::InvalidArgument(format!(
                    "accuracy row {t} has {} entries; only columns 0..={t} exist",
                    row.len()
                )));
            }
            for (k, &v) in row.iter().enumerate() {
                m.set(t, k, v)?;
            }
        }
        Ok(m)
    }

    pub fn n_tasks(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if row >= self.n || col > row {
            return Err(Error::InvalidArgument(format!(
                "cell R[{row}][{col}] is outside the lower triangle of a {} task matrix",
                self.n
            )));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!(
                "accuracy {value} is outside [0, 1]"
            )));
        }
        let cell = &mut self.cells[row][col];
        if cell.is_some() {
            return Err(Error::AlreadyWritten { row, col });
        }
        *cell = Some(value);
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> Result<f64> {
        self.cells
            .get(row)
            .and_then(|r| r.get(col))
            .copied()
            .flatten()
            .ok_or(Error::Unpopulated { row, col })
    }

    /// Number of leading rows that are fully populated.
    pub fn complete_rows(&self) -> usize {
        self.cells
            .iter()
            .take_while(|r| r.iter().all(Option::is_some))
            .count()
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.cells
    }

    fn last(&self) -> Result<usize> {
        if self.n == 0 {
            return Err(Error::EmptyData("accuracy matrix has no tasks".into()));
        }
        Ok(self.n - 1)
    }

    /// CSV with header `after_task,task_0,...`; unwritten cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task");
        for k in 0..self.n {
            out.push_str(&format!(",task_{k}"));
        }
        out.push('\n');
        for (t, row) in self.cells.iter().enumerate() {
            out.push_str(&t.to_string());
            for k in 0..self.n {
                out.push(',');
                if let Some(Some(v)) = row.get(k) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

fn first(include_pretrain: bool) -> usize {
    usize::from(!include_pretrain)
}

/// Mean accuracy over all learned tasks after the final one.
pub fn acc_with(r: &AccuracyMatrix, include_pretrain: bool) -> Result<f64> {
    let t = r.last()?;
    let ks: Vec<usize> = (first(include_pretrain)..=t).collect();
    if ks.is_empty() {
        return Err(Error::EmptyData("no task to average".into()));
    }
    let s = ks.iter().map(|&k| r.get(t, k)).sum::<Result<f64>>()?;
    Ok(s / ks.len() as f64)
}

/// Mean of the diagonal: accuracy on each task right after learning it.
pub fn la_with(r: &AccuracyMatrix, include_pretrain: bool) -> Result<f64> {
    let t = r.last()?;
    let ts: Vec<usize> = (first(include_pretrain)..=t).collect();
    if ts.is_empty() {
        return Err(Error::EmptyData("no task to average".into()));
    }
    let s = ts.iter().map(|&i| r.get(i, i)).sum::<Result<f64>>()?;
    Ok(s / ts.len() as f64)
}

/// Mean change of every earlier task between learning it and the end.
/// Zero when there is no earlier task to compare.
pub fn bwt_with(r: &AccuracyMatrix, include_pretrain: bool) -> Result<f64> {
    let t = r.last()?;
    let ks: Vec<usize> = (first(include_pretrain)..t).collect();
    if ks.is_empty() {
        return Ok(0.0);
    }
    let s = ks
        .iter()
        .map(|&k| Ok(r.get(t, k)? - r.get(k, k)?))
        .sum::<Result<f64>>()?;
    Ok(s / ks.len() as f64)
}

pub fn acc(r: &AccuracyMatrix) -> Result<f64> {
    acc_with(r, true)
}

pub fn la(r: &AccuracyMatrix) -> Result<f64> {
    la_with(r, true)
}

pub fn bwt(r: &AccuracyMatrix) -> Result<f64> {
    bwt_with(r, true)
}

/// ACC after each learned task: `curve[t] = mean_{k <= t} R[t][k]`.
pub fn acc_curve(r: &AccuracyMatrix) -> Result<Vec<f64>> {
    (0..r.n_tasks())
        .map(|t| {
            let s = (0..=t).map(|k| r.get(t, k)).sum::<Result<f64>>()?;
            Ok(s / (t + 1) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_task_example() {
        let r = AccuracyMatrix::from_rows(&[vec![0.9], vec![0.8, 0.95]]).unwrap();
        assert!((acc(&r).unwrap() - 0.875).abs() < 1e-15);
        assert!((la(&r).unwrap() - 0.925).abs() < 1e-15);
        assert!((bwt(&r).unwrap() + 0.1).abs() < 1e-15);
    }

    #[test]
    fn cells_are_write_once() {
        let mut r = AccuracyMatrix::new(2);
        r.set(1, 0, 0.5).unwrap();
        assert!(matches!(
            r.set(1, 0, 0.5),
            Err(Error::AlreadyWritten { row: 1, col: 0 })
        ));
        assert!(r.set(0, 1, 0.5).is_err());
        assert!(r.set(1, 1, 1.5).is_err());
        assert!(matches!(
            acc(&r),
            Err(Error::Unpopulated { row: 1, col: 1 })
        ));
    }

    #[test]
    fn csv_layout() {
        let r = AccuracyMatrix::from_rows(&[vec![0.5], vec![0.25, 1.0]]).unwrap();
        assert_eq!(r.to_csv(), "after_task,task_0,task_1\n0,0.5,\n1,0.25,1\n");
    }
}
