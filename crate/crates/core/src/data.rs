//! Datasets: CSV ingestion, standardization, train/test splits, client
//! partitioning, class rebalancing and a synthetic Gaussian-mixture corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// An extracted-feature pair `(z, y)` as uploaded by an FbFTL client.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSample {
    pub z: Vec<f64>,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_names: Vec<String>,
    dim: usize,
}

impl Dataset {
    /// Validates a uniform feature width and labels below `class_names.len()`.
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.x.len());
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::invalid(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.x.len()
                )));
            }
            if s.y >= class_names.len() {
                return Err(Error::invalid(format!(
                    "sample {i} label {} outside {} classes",
                    s.y,
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            samples,
            class_names,
            dim,
        })
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Self {
            samples,
            class_names: self.class_names.clone(),
            dim: self.dim,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Feature width N0.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for s in &self.samples {
            counts[s.y] += 1;
        }
        counts
    }

    /// Keeps only `classes` (indices into this dataset's classes) and
    /// relabels them `0..classes.len()` in the given order.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Dataset> {
        let mut remap = vec![None; self.n_classes()];
        for (new, &old) in classes.iter().enumerate() {
            if old >= self.n_classes() {
                return Err(Error::invalid(format!("class {old} does not exist")));
            }
            if remap[old].replace(new).is_some() {
                return Err(Error::invalid(format!("class {old} listed twice")));
            }
        }
        let samples = self
            .samples
            .iter()
            .filter_map(|s| remap[s.y].map(|y| Sample { x: s.x.clone(), y }))
            .collect();
        let names = classes.iter().map(|&c| self.class_names[c].clone()).collect();
        Dataset::new(samples, names)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(|v| format!("{v}")).collect();
            row.push(self.class_names[s.y].clone());
            w.write_record(&row).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        reason: e.to_string(),
    }
}

/// How labels in the final CSV column map to class indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Allowed class names in index order. When absent, the distinct labels
    /// in the file are sorted and numbered.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

/// Reads numeric feature columns followed by one label column. The first
/// row is a header; lines starting with `#` are comments.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let width = reader.headers().map_err(|e| csv_io(path, e))?.len();
    if width == 0 {
        return Err(Error::EmptyDataset);
    }
    if width < 2 {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            reason: "need at least one feature column and a label column".into(),
        });
    }

    let mut rows: Vec<(Vec<f64>, String, u64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_io(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if record.len() != width {
            return Err(bad(format!("{} fields, header has {width}", record.len())));
        }
        let mut x = Vec::with_capacity(width - 1);
        for (i, field) in record.iter().take(width - 1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("column {} value {field:?} is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(bad(format!("column {} value is not finite", i + 1)));
            }
            x.push(v);
        }
        rows.push((x, record[width - 1].trim().to_string(), line));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let classes: Vec<String> = match &schema.classes {
        Some(c) => c.clone(),
        None => rows
            .iter()
            .map(|(_, l, _)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut samples = Vec::with_capacity(rows.len());
    for (x, label, line) in &rows {
        let y = *index.get(label.as_str()).ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            line: *line,
            reason: format!("unknown label {label:?}"),
        })?;
        samples.push(Sample { x: x.clone(), y });
    }
    Dataset::new(samples, classes)
}

/// Per-feature affine map to zero mean and unit variance, fitted on one
/// dataset (the training split) and applied to any other.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; train.dim()];
        for s in train.samples() {
            for (m, v) in mean.iter_mut().zip(&s.x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; train.dim()];
        for s in train.samples() {
            for ((acc, v), m) in var.iter_mut().zip(&s.x).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let samples = ds
            .samples()
            .iter()
            .map(|s| {
                let mut x = s.x.clone();
                self.transform(&mut x);
                Sample { x, y: s.y }
            })
            .collect();
        ds.with_samples(samples)
    }
}

/// Random disjoint split; the test side gets `round(len * test_fraction)`
/// samples.
pub fn split_train_test<R: Rng + ?Sized>(ds: &Dataset, test_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} not in [0, 1]")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    let n_test = (ds.len() as f64 * test_fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.samples[i].clone()).collect::<Vec<_>>();
    let test = ds.with_samples(pick(&order[..n_test]));
    let train = ds.with_samples(pick(&order[n_test..]));
    Ok((train, test))
}

/// One simulated device and its local samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Client {
    pub id: usize,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partitioning {
    /// Uniformly shuffled before chunking.
    #[default]
    Iid,
    /// Shuffled, then stably sorted by label before chunking, so most
    /// clients hold one or two classes.
    LabelSorted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub clients: Vec<Client>,
    pub leftover: Vec<Sample>,
}

impl Partition {
    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(|c| c.samples.len()).sum()
    }
}

/// Deals `num_clients` disjoint batches of exactly `per_client` samples.
pub fn partition_clients<R: Rng + ?Sized>(
    train: &Dataset,
    num_clients: usize,
    per_client: usize,
    partitioning: Partitioning,
    rng: &mut R,
) -> Result<Partition> {
    if num_clients == 0 || per_client == 0 {
        return Err(Error::config("need at least one client and one sample per client"));
    }
    let needed = num_clients
        .checked_mul(per_client)
        .ok_or_else(|| Error::config("client count overflows"))?;
    if needed > train.len() {
        return Err(Error::config(format!(
            "{num_clients} clients x {per_client} samples = {needed} exceeds {} training samples",
            train.len()
        )));
    }
    let mut pool = train.samples.clone();
    pool.shuffle(rng);
    if partitioning == Partitioning::LabelSorted {
        pool.sort_by_key(|s| s.y);
    }
    let leftover = pool.split_off(needed);
    let mut it = pool.into_iter();
    let clients = (0..num_clients)
        .map(|id| Client {
            id,
            samples: it.by_ref().take(per_client).collect(),
        })
        .collect();
    Ok(Partition { clients, leftover })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rebalance {
    /// Duplicate random members of smaller classes up to the largest count.
    Oversample,
    /// Drop random members of larger classes down to the smallest count.
    Undersample,
    /// Relabel `from -> into`, removing `from` classes and compacting indices.
    Merge(BTreeMap<usize, usize>),
}

pub fn rebalance<R: Rng + ?Sized>(ds: &Dataset, strategy: &Rebalance, rng: &mut R) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.y].push(i);
    }
    match strategy {
        Rebalance::Oversample | Rebalance::Undersample => {
            if let Some(c) = by_class.iter().position(Vec::is_empty) {
                return Err(Error::invalid(format!(
                    "class {} has no samples to rebalance",
                    ds.class_names[c]
                )));
            }
        }
        Rebalance::Merge(_) => {}
    }
    match strategy {
        Rebalance::Oversample => {
            let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
            let mut samples = ds.samples.clone();
            for members in &by_class {
                for _ in members.len()..target {
                    let pick = members[rng.gen_range(0..members.len())];
                    samples.push(ds.samples[pick].clone());
                }
            }
            Ok(ds.with_samples(samples))
        }
        Rebalance::Undersample => {
            let target = by_class.iter().map(Vec::len).min().unwrap_or(0);
            let mut keep = vec![false; ds.len()];
            for members in &by_class {
                for &i in members.choose_multiple(rng, target) {
                    keep[i] = true;
                }
            }
            let samples = ds
                .samples
                .iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(s, _)| s.clone())
                .collect();
            Ok(ds.with_samples(samples))
        }
        Rebalance::Merge(map) => {
            let n = ds.n_classes();
            let resolve = |mut c: usize| -> Result<usize> {
                for _ in 0..=n {
                    match map.get(&c) {
                        Some(&next) if next != c => c = next,
                        _ => return Ok(c),
                    }
                }
                Err(Error::invalid("merge map contains a cycle"))
            };
            for (&from, &into) in map {
                if from >= n || into >= n {
                    return Err(Error::invalid(format!("merge {from}->{into} names a missing class")));
                }
            }
            let mut root = Vec::with_capacity(n);
            for c in 0..n {
                root.push(resolve(c)?);
            }
            let survivors: Vec<usize> = (0..n).filter(|&c| root[c] == c).collect();
            let mut compact = vec![0; n];
            for (new, &old) in survivors.iter().enumerate() {
                compact[old] = new;
            }
            let samples = ds
                .samples
                .iter()
                .map(|s| Sample {
                    x: s.x.clone(),
                    y: compact[root[s.y]],
                })
                .collect();
            let names = survivors.iter().map(|&c| ds.class_names[c].clone()).collect();
            Dataset::new(samples, names)
        }
    }
}

/// `classes` isotropic unit-variance Gaussian clusters in `dim` dimensions.
/// Class means are pairwise `separation` apart when `classes <= dim`
/// (scaled orthonormal directions); otherwise they are random directions
/// on a sphere of radius `separation / sqrt(2)`.
pub fn synth_gaussian_mixture<R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while directions.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if classes <= dim {
            for d in &directions {
                let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(d) {
                    *a -= dot * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        directions.push(v.into_iter().map(|a| a / norm).collect());
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let mut samples = Vec::with_capacity(classes * per_class);
    for (y, dir) in directions.iter().enumerate() {
        for _ in 0..per_class {
            let x = dir
                .iter()
                .map(|d| radius * d + rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(Sample { x, y });
        }
    }
    samples.shuffle(rng);
    let names = (0..classes).map(|c| format!("class{c}")).collect();
    Dataset::new(samples, names)
}

/// Source and target tasks over disjoint class sets of one corpus.
#[derive(Clone, Debug)]
pub struct TransferSplit {
    pub source: Dataset,
    pub target: Dataset,
}

impl TransferSplit {
    pub fn by_classes(ds: &Dataset, source: &[usize], target: &[usize]) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::config("source and target class sets must be non-empty"));
        }
        if source.iter().any(|c| target.contains(c)) {
            return Err(Error::config("source and target classes overlap"));
        }
        Ok(Self {
            source: ds.select_classes(source)?,
            target: ds.select_classes(target)?,
        })
    }

    /// Resolves class names to indices first.
    pub fn by_class_names(ds: &Dataset, source: &[String], target: &[String]) -> Result<Self> {
        let find = |name: &String| {
            ds.class_names()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::config(format!("unknown class {name:?}")))
        };
        let s: Vec<usize> = source.iter().map(find).collect::<Result<_>>()?;
        let t: Vec<usize> = target.iter().map(find).collect::<Result<_>>()?;
        Self::by_classes(ds, &s, &t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use std::io::Write;

    fn toy(counts: &[usize]) -> Dataset {
        let mut samples = Vec::new();
        for (y, &n) in counts.iter().enumerate() {
            for i in 0..n {
                samples.push(Sample {
                    x: vec![i as f64, y as f64],
                    y,
                });
            }
        }
        let names = (0..counts.len()).map(|c| format!("c{c}")).collect();
        Dataset::new(samples, names).unwrap()
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_sixteen_attribute_csv() {
        let mut text = (0..16).map(|i| format!("a{i}")).collect::<Vec<_>>().join(",");
        text.push_str(",Class\n");
        let classes = ["SEKER", "BARBUNYA", "BOMBAY", "CALI", "HOROZ", "SIRA", "DERMASON"];
        for (r, c) in classes.iter().enumerate() {
            let row: Vec<String> = (0..16).map(|i| format!("{}.5", i + r)).collect();
            text.push_str(&format!("{},{c}\n", row.join(",")));
        }
        let f = write_tmp(&text);
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.dim(), 16);
        assert_eq!(ds.n_classes(), 7);
        assert_eq!(ds.len(), 7);
    }

    #[test]
    fn empty_and_single_row_files() {
        let f = write_tmp("");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::EmptyDataset)
        ));
        let f = write_tmp("a,b,label\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::EmptyDataset)
        ));
        let f = write_tmp("a,b,label\n1,2,x\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples()[0].x, vec![1.0, 2.0]);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let f = write_tmp("a,b,label\n1,2,x\n1,oops,x\n");
        match load_csv(f.path(), &CsvSchema::default()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("a,b,label\n1,2,x\n3,4,z\n");
        let schema = CsvSchema {
            classes: Some(vec!["x".into(), "y".into()]),
        };
        match load_csv(f.path(), &schema) {
            Err(Error::Csv { line, reason, .. }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("unknown label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standardizer_uses_training_statistics() {
        let mut rng = rng_for(4, "data", &[]);
        let ds = synth_gaussian_mixture(3, 5, 200, 4.0, &mut rng).unwrap();
        let (train, test) = split_train_test(&ds, 1.0 / 3.0, &mut rng).unwrap();
        let st = Standardizer::fit(&train).unwrap();
        let t = st.apply(&train);
        for d in 0..t.dim() {
            let n = t.len() as f64;
            let mean: f64 = t.samples().iter().map(|s| s.x[d]).sum::<f64>() / n;
            let var: f64 = t.samples().iter().map(|s| (s.x[d] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
        // the test split keeps training statistics, so it is not exactly centred
        let tt = st.apply(&test);
        let m0: f64 = tt.samples().iter().map(|s| s.x[0]).sum::<f64>() / tt.len() as f64;
        assert!(m0.abs() > 1e-9);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(&[3510, 3510]);
        let (train, test) = split_train_test(&ds, 1.0 / 3.0, &mut rng_for(1, "split", &[])).unwrap();
        assert_eq!((train.len(), test.len()), (4680, 2340));
        let (train2, _) = split_train_test(&ds, 1.0 / 3.0, &mut rng_for(1, "split", &[])).unwrap();
        assert_eq!(train, train2);
        let (all, none) = split_train_test(&ds, 0.0, &mut rng_for(1, "split", &[])).unwrap();
        assert_eq!((all.len(), none.len()), (7020, 0));
    }

    #[test]
    fn partition_counts() {
        let ds = toy(&[2400, 2400]);
        let p = partition_clients(&ds, 1176, 4, Partitioning::Iid, &mut rng_for(0, "p", &[])).unwrap();
        assert_eq!(p.clients.len(), 1176);
        assert_eq!(p.total_samples(), 4704);
        assert_eq!(p.leftover.len(), 96);
        assert!(p.clients.iter().all(|c| c.samples.len() == 4));

        let big = toy(&[25000, 25000]);
        let p = partition_clients(&big, 6250, 8, Partitioning::Iid, &mut rng_for(0, "p", &[])).unwrap();
        assert_eq!(p.total_samples(), 50000);
        assert!(p.leftover.is_empty());

        assert!(matches!(
            partition_clients(&ds, 1201, 4, Partitioning::Iid, &mut rng_for(0, "p", &[])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn label_sorted_partition_is_skewed() {
        let ds = toy(&[40, 40]);
        let p = partition_clients(&ds, 10, 8, Partitioning::LabelSorted, &mut rng_for(0, "p", &[])).unwrap();
        for c in &p.clients {
            assert!(c.samples.iter().all(|s| s.y == c.samples[0].y));
        }
    }

    #[test]
    fn oversample_and_undersample() {
        let ds = toy(&[10, 2]);
        let mut rng = rng_for(0, "rebalance", &[]);
        let up = rebalance(&ds, &Rebalance::Oversample, &mut rng).unwrap();
        assert_eq!(up.class_counts(), vec![10, 10]);
        let down = rebalance(&ds, &Rebalance::Undersample, &mut rng).unwrap();
        assert_eq!(down.class_counts(), vec![2, 2]);
        let even = toy(&[5, 5]);
        assert_eq!(rebalance(&even, &Rebalance::Oversample, &mut rng).unwrap(), even);
        assert_eq!(rebalance(&even, &Rebalance::Undersample, &mut rng).unwrap(), even);
    }

    #[test]
    fn merge_remaps_and_compacts() {
        let ds = toy(&[3, 2, 4]);
        let map = BTreeMap::from([(1, 0)]);
        let merged = rebalance(&ds, &Rebalance::Merge(map), &mut rng_for(0, "m", &[])).unwrap();
        assert_eq!(merged.n_classes(), 2);
        assert_eq!(merged.class_names(), &["c0".to_string(), "c2".to_string()]);
        assert_eq!(merged.class_counts(), vec![5, 4]);
        // independent remap oracle
        for (a, b) in ds.samples().iter().zip(merged.samples()) {
            let expected = match a.y {
                0 | 1 => 0,
                _ => 1,
            };
            assert_eq!(b.y, expected);
            assert_eq!(a.x, b.x);
        }
        let cyclic = BTreeMap::from([(0, 1), (1, 0)]);
        assert!(rebalance(&ds, &Rebalance::Merge(cyclic), &mut rng_for(0, "m", &[])).is_err());
    }

    #[test]
    fn mixture_shape_and_errors() {
        let mut rng = rng_for(5, "synth", &[]);
        let ds = synth_gaussian_mixture(7, 16, 30, 3.0, &mut rng).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.n_classes()), (210, 16, 7));
        assert_eq!(ds.class_counts(), vec![30; 7]);
        assert!(matches!(
            synth_gaussian_mixture(2, 2, 0, 1.0, &mut rng),
            Err(Error::EmptyDataset)
        ));
        let again = synth_gaussian_mixture(7, 16, 30, 3.0, &mut rng_for(5, "synth", &[])).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn transfer_split_is_disjoint() {
        let ds = toy(&[3, 4, 5, 6]);
        let t = TransferSplit::by_classes(&ds, &[0, 2], &[1, 3]).unwrap();
        assert_eq!(t.source.class_counts(), vec![3, 5]);
        assert_eq!(t.target.class_counts(), vec![4, 6]);
        assert!(TransferSplit::by_classes(&ds, &[0, 1], &[1]).is_err());
        assert!(TransferSplit::by_classes(&ds, &[], &[1]).is_err());
    }
}
