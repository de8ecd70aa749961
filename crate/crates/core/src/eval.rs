//! Scoring under the closed-set (CS) and open-set (OS, OS*) protocols.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassCatalog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Closed set: no unknown samples anywhere.
    #[serde(rename = "cs")]
    Cs,
    /// Open set: every target counts, unknown is a class like any other.
    #[serde(rename = "os")]
    Os,
    /// Open set restricted to targets whose true class is shared.
    #[serde(rename = "os-star")]
    OsStar,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cs" => Ok(Protocol::Cs),
            "os" => Ok(Protocol::Os),
            "os-star" | "os*" => Ok(Protocol::OsStar),
            _ => Err(Error::Config(format!("unknown protocol {s:?}"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Cs => "cs",
            Protocol::Os => "os",
            Protocol::OsStar => "os-star",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Class names in catalog order, unknown last.
    pub classes: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub overall_accuracy: f64,
    /// Mean recall over classes with at least one evaluated sample.
    pub mean_class_accuracy: f64,
    pub n_evaluated: usize,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Confusion matrix as CSV with a header row and a leading name column.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for name in &self.classes {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Row-normalised confusion matrix for gnuplot's `matrix` mode.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("# rows: true class, columns: predicted class, unknown last\n# ");
        out.push_str(&self.classes.join(" "));
        out.push('\n');
        for row in &self.confusion {
            let total: usize = row.iter().sum();
            let cells: Vec<String> = row
                .iter()
                .map(|&v| {
                    let frac = if total == 0 { 0.0 } else { v as f64 / total as f64 };
                    format!("{frac:.6}")
                })
                .collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write_confusion(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), self.confusion_csv())
    }

    pub fn write_plot_data(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), self.plot_data())
    }
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Scores class indices `pred` against `truth` (both catalog indices).
pub fn score(pred: &[usize], truth: &[usize], catalog: &ClassCatalog, protocol: Protocol) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let k = catalog.len();
    if let Some(bad) = pred.iter().chain(truth).find(|&&c| c >= k) {
        return Err(Error::Label(format!("class index {bad} outside the catalog")));
    }
    if protocol == Protocol::Cs {
        if let Some(i) = (0..pred.len()).find(|&i| catalog.is_unknown(truth[i]) || catalog.is_unknown(pred[i])) {
            return Err(Error::Protocol(format!(
                "closed-set scoring found an unknown label at sample {i}"
            )));
        }
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let mut n = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if protocol == Protocol::OsStar && catalog.is_unknown(t) {
            continue;
        }
        confusion[t][p] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("no samples to score".into()));
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let recalls: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Ok(EvalReport {
        protocol,
        classes: (0..k).map(|c| catalog.name(c).to_string()).collect(),
        confusion,
        overall_accuracy: correct as f64 / n as f64,
        mean_class_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        n_evaluated: n,
    })
}

/// Mean, sample standard deviation (divisor `n − 1`, zero for one value),
/// minimum and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Data("nothing to aggregate".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        mean,
        std,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub protocol: Protocol,
    pub overall_accuracy: Summary,
    pub mean_class_accuracy: Summary,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Aggregate> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Data("nothing to aggregate".into()))?;
    if reports.iter().any(|r| r.protocol != first.protocol) {
        return Err(Error::Protocol("cannot aggregate reports from different protocols".into()));
    }
    let overall: Vec<f64> = reports.iter().map(|r| r.overall_accuracy).collect();
    let per_class: Vec<f64> = reports.iter().map(|r| r.mean_class_accuracy).collect();
    Ok(Aggregate {
        protocol: first.protocol,
        overall_accuracy: summarize(&overall)?,
        mean_class_accuracy: summarize(&per_class)?,
    })
}
