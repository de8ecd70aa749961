//! CSV feature files: `id,label,f1,...,fD`, no header, empty label for
//! unlabeled rows. Ground-truth sidecars are `id,true_label`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{ClassCatalog, Dataset, Role, UNKNOWN_TOKEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub role: Role,
    /// Catalog to resolve labels against; inferred from the file when `None`
    /// (shared classes in order of first appearance).
    pub catalog: Option<ClassCatalog>,
    /// Reject source labels that are not in the catalog instead of mapping
    /// them to the unknown class.
    pub strict: bool,
}

impl LoadOptions {
    pub fn source() -> Self {
        LoadOptions {
            role: Role::Source,
            catalog: None,
            strict: true,
        }
    }

    pub fn target(catalog: &ClassCatalog) -> Self {
        LoadOptions {
            role: Role::Target,
            catalog: Some(catalog.clone()),
            strict: false,
        }
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn line_of(record: &csv::StringRecord, fallback: usize) -> usize {
    record
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

pub fn load_features(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut ids = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut width = None;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = line_of(&record, row + 1);
        let fmt_err = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if record.len() < 3 {
            return Err(fmt_err(format!(
                "expected id,label and at least one feature, got {} fields",
                record.len()
            )));
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(fmt_err(format!(
                    "row has {} fields, previous rows have {w}",
                    record.len()
                )))
            }
            _ => {}
        }
        ids.push(record[0].to_string());
        raw_labels.push(record[1].to_string());
        for (k, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| fmt_err(format!("feature {}: cannot parse {field:?}", k + 1)))?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}:{line}: feature {} is not finite",
                    path.display(),
                    k + 1
                )));
            }
            values.push(v);
        }
    }
    let Some(width) = width else {
        return Err(Error::Data(format!("{}: no samples", path.display())));
    };
    let dim = width - 2;

    let catalog = match &opts.catalog {
        Some(c) => c.clone(),
        None => {
            let mut shared: Vec<&str> = Vec::new();
            for l in &raw_labels {
                if !l.is_empty() && l != UNKNOWN_TOKEN && !shared.contains(&l.as_str()) {
                    shared.push(l);
                }
            }
            ClassCatalog::new(shared.iter().copied())?
        }
    };
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (i, l) in raw_labels.iter().enumerate() {
        if l.is_empty() {
            labels.push(None);
            continue;
        }
        let class = match catalog.index_of(l) {
            Some(c) => c,
            None if opts.strict && opts.role == Role::Source => {
                return Err(Error::Label(format!(
                    "{}: sample {:?} has label {l:?} outside the catalog",
                    path.display(),
                    ids[i]
                )))
            }
            None => catalog.unknown_index(),
        };
        labels.push(Some(class));
    }
    let features = DMatrix::from_column_slice(dim, ids.len(), &values);
    Dataset::new(opts.role, catalog, ids, features, labels)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_features(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut line = String::new();
    for i in 0..ds.len() {
        line.clear();
        line.push_str(&ds.ids()[i]);
        line.push(',');
        if let Some(c) = ds.labels()[i] {
            line.push_str(ds.catalog().name(c));
        }
        for v in ds.sample(i).iter() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Original (fine-grained) labels of target samples, keyed by sample id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub ids: Vec<String>,
    pub labels: Vec<String>,
}

impl GroundTruth {
    pub fn push(&mut self, id: impl Into<String>, label: impl Into<String>) {
        self.ids.push(id.into());
        self.labels.push(label.into());
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Catalog class of every sample of `target`, in target order. Labels
    /// outside the shared classes map to the unknown class.
    pub fn class_indices(&self, target: &Dataset) -> Result<Vec<usize>> {
        let by_id: HashMap<&str, &str> = self
            .ids
            .iter()
            .map(String::as_str)
            .zip(self.labels.iter().map(String::as_str))
            .collect();
        target
            .ids()
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|l| target.catalog().map_open(l))
                    .ok_or_else(|| Error::Label(format!("no ground truth for sample {id:?}")))
            })
            .collect()
    }
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut truth = GroundTruth::default();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: line_of(&record, row + 1),
                msg: format!("expected id,true_label, got {} fields", record.len()),
            });
        }
        truth.push(&record[0], &record[1]);
    }
    Ok(truth)
}

pub fn write_truth(path: impl AsRef<Path>, truth: &GroundTruth) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for (id, label) in truth.ids.iter().zip(&truth.labels) {
        writeln!(out, "{id},{label}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads `id,label` rows naming annotated target samples. Returns
/// `(target index, class)` pairs sorted by target index.
pub fn load_labeled_targets(path: impl AsRef<Path>, target: &Dataset) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let index: HashMap<&str, usize> = target
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rdr = reader(path)?;
    let mut fixed = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = line_of(&record, row + 1);
        if record.len() != 2 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line,
                msg: format!("expected id,label, got {} fields", record.len()),
            });
        }
        let t = *index
            .get(&record[0])
            .ok_or_else(|| Error::Label(format!("labeled target {:?} not in target set", &record[0])))?;
        let c = target
            .catalog()
            .index_of(&record[1])
            .ok_or_else(|| Error::Label(format!("label {:?} outside the catalog", &record[1])))?;
        fixed.push((t, c));
    }
    fixed.sort_unstable();
    Ok(fixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_three_rows() {
        let f = file("s1,a,0,0\ns2,a,1.5,2\ns3,b,-1,3e2\n");
        let ds = load_features(f.path(), &LoadOptions::source()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.catalog().shared(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.labels(), &[Some(0), Some(0), Some(1)]);
        assert_eq!(ds.sample(2).as_slice(), &[-1.0, 300.0]);
    }

    #[test]
    fn ragged_rows_are_a_format_error() {
        let f = file("s1,a,0,0\ns2,a,1,2,3\n");
        match load_features(f.path(), &LoadOptions::source()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_is_a_data_error() {
        let f = file("s1,a,0,NaN\n");
        assert!(matches!(
            load_features(f.path(), &LoadOptions::source()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn unlabeled_target_has_empty_labeled_set() {
        let cat = ClassCatalog::new(["a"]).unwrap();
        let f = file("t1,,0,0\nt2,,1,1\n");
        let ds = load_features(f.path(), &LoadOptions::target(&cat)).unwrap();
        assert!(ds.labeled_indices().is_empty());
    }

    #[test]
    fn strict_source_rejects_foreign_label() {
        let cat = ClassCatalog::new(["a"]).unwrap();
        let f = file("s1,zebra,0,0\n");
        let opts = LoadOptions {
            role: Role::Source,
            catalog: Some(cat.clone()),
            strict: true,
        };
        assert!(matches!(load_features(f.path(), &opts), Err(Error::Label(_))));
        let lax = LoadOptions { strict: false, ..opts };
        let ds = load_features(f.path(), &lax).unwrap();
        assert_eq!(ds.labels(), &[Some(cat.unknown_index())]);
    }

    #[test]
    fn missing_file_is_io() {
        let err = load_features("/nonexistent/x.csv", &LoadOptions::source()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn write_then_load_preserves_values() {
        let f = file("s1,a,0.1,-7e-300\ns2,__unknown__,1.0000000000000002,2\n");
        let ds = load_features(f.path(), &LoadOptions::source()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_features(out.path(), &ds).unwrap();
        let back = load_features(out.path(), &LoadOptions::source()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn truth_maps_fine_labels_to_unknown() {
        let cat = ClassCatalog::new(["a"]).unwrap();
        let f = file("t1,,0\nt2,,1\n");
        let target = load_features(f.path(), &LoadOptions::target(&cat)).unwrap();
        let truth = load_truth(file("t2,a\nt1,giraffe\n").path()).unwrap();
        assert_eq!(truth.class_indices(&target).unwrap(), vec![1, 0]);
    }

    #[test]
    fn labeled_targets_resolve_ids() {
        let cat = ClassCatalog::new(["a", "b"]).unwrap();
        let target = load_features(file("t1,,0\nt2,,1\n").path(), &LoadOptions::target(&cat)).unwrap();
        let fixed = load_labeled_targets(file("t2,b\nt1,a\n").path(), &target).unwrap();
        assert_eq!(fixed, vec![(0, 0), (1, 1)]);
        assert!(load_labeled_targets(file("t3,a\n").path(), &target).is_err());
    }
}
