//! Grading and regression metrics, plus a plain-text table renderer.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("truth has {truth} entries, predictions {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label `{0}` is not a known class")]
    UnknownClass(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no values to evaluate")]
    EmptyInput,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_ids: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let k = self.counts.len();
        (0..k).map(|j| self.counts.iter().map(|row| row[j]).sum()).collect()
    }
}

pub fn confusion_matrix<T: AsRef<str>, P: AsRef<str>>(
    truth: &[T],
    pred: &[P],
    class_ids: &[String],
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let index: HashMap<&str, usize> = class_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let lookup = |label: &str| {
        index
            .get(label)
            .copied()
            .ok_or_else(|| MetricsError::UnknownClass(label.to_string()))
    };
    let k = class_ids.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (t, p) in truth.iter().zip(pred) {
        counts[lookup(t.as_ref())?][lookup(p.as_ref())?] += 1;
    }
    Ok(ConfusionMatrix {
        class_ids: class_ids.to_vec(),
        counts,
    })
}

/// Fraction in `[0, 1]` with its percent rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub fraction: f64,
    pub percent: f64,
}

impl From<f64> for Score {
    fn from(fraction: f64) -> Self {
        Self {
            fraction,
            percent: fraction * 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub oa: Score,
    pub aa: Score,
    pub kappa: Score,
    pub matrix: ConfusionMatrix,
}

/// Overall accuracy, average per-class recall and Cohen's kappa.
///
/// Classes absent from the truth (zero row sum) are left out of AA. When
/// chance agreement is 1 kappa is 1 for perfect agreement and 0 otherwise.
pub fn grade_report(matrix: &ConfusionMatrix) -> Result<GradeReport, MetricsError> {
    let total = matrix.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let n = total as f64;
    let oa = matrix.trace() as f64 / n;
    let rows = matrix.row_sums();
    let cols = matrix.col_sums();
    let recalls: Vec<f64> = rows
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0)
        .map(|(i, &r)| matrix.counts[i][i] as f64 / r as f64)
        .collect();
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let expected = rows.iter().zip(&cols).map(|(&r, &c)| r as f64 * c as f64).sum::<f64>() / (n * n);
    let kappa = if expected == 1.0 {
        if oa == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (oa - expected) / (1.0 - expected)
    };
    Ok(GradeReport {
        oa: oa.into(),
        aa: aa.into(),
        kappa: kappa.into(),
        matrix: matrix.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressReport {
    pub mae: f64,
    pub rmse: f64,
    /// `-inf` when the truth is constant and predictions miss it; serialized as `"undefined"`.
    #[serde(serialize_with = "serialize_r2", deserialize_with = "deserialize_r2")]
    pub r2: f64,
    pub n: usize,
}

impl RegressReport {
    pub fn r2_defined(&self) -> bool {
        self.r2.is_finite()
    }
}

fn serialize_r2<S: Serializer>(r2: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if r2.is_finite() {
        serializer.serialize_f64(*r2)
    } else {
        serializer.serialize_str("undefined")
    }
}

fn deserialize_r2<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Text(String),
    }
    match Repr::deserialize(deserializer)? {
        Repr::Value(v) => Ok(v),
        Repr::Text(t) if t == "undefined" => Ok(f64::NEG_INFINITY),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid r2 `{t}`"))),
    }
}

pub fn regress_report(truth: &[f64], pred: &[f64]) -> Result<RegressReport, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let (mut abs, mut sq, mut total) = (0.0, 0.0, 0.0);
    for (&t, &p) in truth.iter().zip(pred) {
        abs += (t - p).abs();
        sq += (t - p) * (t - p);
        total += (t - mean) * (t - mean);
    }
    let r2 = if total == 0.0 {
        if sq == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - sq / total
    };
    Ok(RegressReport {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        r2,
        n: truth.len(),
    })
}

/// Aligned plain-text table: a header row of column names, then one row
/// per metric. Cells are pre-formatted strings.
pub fn render_table(title: &str, corner: &str, columns: &[String], rows: &[(String, Vec<String>)]) -> String {
    let mut width = corner.len();
    for (name, cells) in rows {
        width = width.max(name.len());
        debug_assert_eq!(cells.len(), columns.len());
    }
    let cell_width = columns
        .iter()
        .map(String::len)
        .chain(rows.iter().flat_map(|(_, cells)| cells.iter().map(String::len)))
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = String::new();
    if !title.is_empty() {
        let _ = writeln!(out, "{title}");
    }
    let _ = write!(out, "{corner:<width$}");
    for column in columns {
        let _ = write!(out, "  {column:>cell_width$}");
    }
    out.push('\n');
    for (name, cells) in rows {
        let _ = write!(out, "{name:<width$}");
        for cell in cells {
            let _ = write!(out, "  {cell:>cell_width$}");
        }
        out.push('\n');
    }
    out
}

/// Percent with two decimals, as in the published tables.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}
