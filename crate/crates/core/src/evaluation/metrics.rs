//! Classification metrics over hard predictions.

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(BenchError::Data(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        if preds.is_empty() {
            return Err(BenchError::Data(
                "metrics of an empty prediction list".into(),
            ));
        }
        let mut counts = vec![vec![0; n_classes]; n_classes];
        for (&p, &y) in preds.iter().zip(labels) {
            if p >= n_classes || y >= n_classes {
                return Err(BenchError::Data(format!(
                    "class index {} out of range for {n_classes} classes",
                    p.max(y)
                )));
            }
            counts[y][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    fn column_sum(&self, j: usize) -> usize {
        self.counts.iter().map(|row| row[j]).sum()
    }

    /// Per-class precision; classes never predicted get 0.
    pub fn precision(&self) -> Vec<f64> {
        (0..self.n_classes())
            .map(|j| ratio(self.counts[j][j], self.column_sum(j)))
            .collect()
    }

    /// Per-class recall; classes never present get 0.
    pub fn recall(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| ratio(row[i], row.iter().sum()))
            .collect()
    }

    /// Per-class `2·tp / (2·tp + fp + fn)`; a class absent from both labels
    /// and predictions scores 0.
    pub fn f1(&self) -> Vec<f64> {
        (0..self.n_classes())
            .map(|i| {
                let tp = self.counts[i][i];
                let fp = self.column_sum(i) - tp;
                let fn_ = self.counts[i].iter().sum::<usize>() - tp;
                ratio(2 * tp, 2 * tp + fp + fn_)
            })
            .collect()
    }

    /// Unweighted mean of the per-class F1 over all classes.
    pub fn macro_f1(&self) -> f64 {
        let f1 = self.f1();
        f1.iter().sum::<f64>() / f1.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let k = self.n_classes();
        let mut out = String::from("true\\pred");
        for j in 0..k {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&i.to_string());
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy and macro-F1 over `n_classes` classes.
pub fn accuracy_macro_f1(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<(f64, f64)> {
    let c = Confusion::new(preds, labels, n_classes)?;
    Ok((c.accuracy(), c.macro_f1()))
}

/// Class indices of the three movie tasks.
pub const MOVIE_CLASSES: [usize; 3] = [0, 1, 2];

/// Percentage of true-movie segments predicted as a *different* movie.
/// Movie segments predicted as resting count in the denominator only.
pub fn movie_confusion_rate(confusion: &Confusion) -> Result<f64> {
    if confusion.n_classes() <= *MOVIE_CLASSES.iter().max().unwrap() {
        return Err(BenchError::Data(format!(
            "movie confusion needs at least {} classes",
            MOVIE_CLASSES.len()
        )));
    }
    let movie_total: usize = MOVIE_CLASSES
        .iter()
        .map(|&i| confusion.counts[i].iter().sum::<usize>())
        .sum();
    if movie_total == 0 {
        return Err(BenchError::Data(
            "no movie segments to compute a movie confusion rate".into(),
        ));
    }
    let crossed: usize = MOVIE_CLASSES
        .iter()
        .flat_map(|&i| {
            MOVIE_CLASSES
                .iter()
                .filter(move |&&j| j != i)
                .map(move |&j| (i, j))
        })
        .map(|(i, j)| confusion.counts[i][j])
        .sum();
    Ok(100.0 * crossed as f64 / movie_total as f64)
}
