//! Dataset loading, z-score preprocessing and the stratified split protocol.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub features: Vec<Vec<F>>,
    /// Zero-based class per row; `None` for rows without a label.
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
    pub feature_names: Vec<String>,
    /// Original label strings in encoding order.
    pub class_names: Vec<String>,
}

impl<F: Real> Dataset<F> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Rows and labels at `idx`; panics if any of them is unlabelled.
    pub fn labelled_rows(&self, idx: &[usize]) -> (Vec<Vec<F>>, Vec<usize>) {
        let x = idx.iter().map(|&i| self.features[i].clone()).collect();
        let y = idx.iter().map(|&i| self.labels[i].expect("labelled row")).collect();
        (x, y)
    }

    pub fn rows(&self, idx: &[usize]) -> Vec<Vec<F>> {
        idx.iter().map(|&i| self.features[i].clone()).collect()
    }

    /// Labelled/unlabelled view of every row, for training straight from a file.
    pub fn partition_by_label(&self) -> (Vec<Vec<F>>, Vec<usize>, Vec<Vec<F>>) {
        let (mut x, mut y, mut u) = (Vec::new(), Vec::new(), Vec::new());
        for (row, label) in self.features.iter().zip(&self.labels) {
            match label {
                Some(k) => {
                    x.push(row.clone());
                    y.push(*k);
                }
                None => u.push(row.clone()),
            }
        }
        (x, y, u)
    }
}

pub fn load_csv<F: Real>(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset<F>, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, label_column)
}

/// Headered CSV; labels are encoded to `0..K` by first appearance, an empty label cell marks an
/// unlabelled row.
pub fn read_csv<F: Real, R: Read>(reader: R, label_column: &str) -> Result<Dataset<F>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::NoLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.clone()).collect();

    let mut codes: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        let mut row = Vec::with_capacity(feature_names.len());
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                continue;
            }
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell == "?" {
                return Err(DataError::MissingValue { row: row_no, column: headers[c].clone() });
            }
            let v: f64 = cell.parse().map_err(|_| DataError::ParseError {
                row: row_no,
                column: headers[c].clone(),
                msg: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DataError::ParseError { row: row_no, column: headers[c].clone(), msg: "non-finite".into() });
            }
            row.push(F::lit(v));
        }
        let cell = record.get(label_idx).unwrap_or("");
        let label = if cell.is_empty() {
            None
        } else {
            let next = codes.len();
            let code = *codes.entry(cell.to_string()).or_insert_with(|| {
                class_names.push(cell.to_string());
                next
            });
            Some(code)
        };
        features.push(row);
        labels.push(label);
    }
    Ok(Dataset { features, labels, num_classes: class_names.len(), feature_names, class_names })
}

/// Column filter plus z-scoring fitted on a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub keep: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Transform {
    pub fn apply<F: Real>(&self, row: &[F]) -> Vec<F> {
        self.keep
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(&c, (&m, &s))| F::lit((row[c].as_f64() - m) / s))
            .collect()
    }
}

/// Drops zero-variance features and z-scores the rest with statistics from `fit_rows`
/// (sample standard deviation, divisor `n - 1`).
pub fn preprocess<F: Real>(data: &Dataset<F>, fit_rows: &[usize]) -> Result<(Dataset<F>, Transform), DataError> {
    let n = fit_rows.len();
    let d = data.num_features();
    let mut keep = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for c in 0..d {
        let vals: Vec<f64> = fit_rows.iter().map(|&i| data.features[i][c].as_f64()).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        if var > 0.0 {
            keep.push(c);
            means.push(mean);
            sds.push(var.sqrt());
        }
    }
    if keep.is_empty() {
        return Err(DataError::AllFeaturesDegenerate);
    }
    let t = Transform { keep, mean: means, sd: sds };
    let out = Dataset {
        features: data.features.iter().map(|r| t.apply(r)).collect(),
        labels: data.labels.clone(),
        num_classes: data.num_classes,
        feature_names: t.keep.iter().map(|&c| data.feature_names[c].clone()).collect(),
        class_names: data.class_names.clone(),
    };
    Ok((out, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub test_fraction: f64,
    pub labelled_count: usize,
    pub validation_count: usize,
}

impl SplitSpec {
    /// 80/20 split with `2 D + K` labelled and `2 D + K` validation rows.
    pub fn standard<F: Real>(data: &Dataset<F>, seed: u64) -> Self {
        let n = 2 * data.num_features() + data.num_classes;
        Self { seed, test_fraction: 0.2, labelled_count: n, validation_count: n }
    }
}

/// Disjoint row-index sets covering the dataset. Saved as JSON for exact reruns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub labelled: Vec<usize>,
    pub validation: Vec<usize>,
    pub unlabelled: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn train(&self) -> Vec<usize> {
        let mut t: Vec<usize> =
            self.labelled.iter().chain(&self.validation).chain(&self.unlabelled).copied().collect();
        t.sort_unstable();
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Largest-remainder apportionment of `total` over `sizes`, at least one per class when
/// `min_one` is set.
pub fn apportion(total: usize, sizes: &[usize], min_one: bool) -> Result<Vec<usize>, DataError> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    let quotas: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(sizes.len() * 2) {
        if left == 0 {
            break;
        }
        if alloc[c] < sizes[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    if min_one {
        for c in 0..sizes.len() {
            if alloc[c] == 0 {
                if sizes[c] == 0 {
                    return Err(DataError::InsufficientRows { class: c });
                }
                let donor = (0..sizes.len()).filter(|&d| alloc[d] > 1).max_by_key(|&d| (alloc[d], usize::MAX - d));
                if let Some(d) = donor {
                    alloc[d] -= 1;
                }
                alloc[c] = 1;
            }
        }
    }
    for (c, (&a, &s)) in alloc.iter().zip(sizes).enumerate() {
        if a > s {
            return Err(DataError::InsufficientRows { class: c });
        }
    }
    Ok(alloc)
}

/// Seeded stratified protocol: test split first, then labelled and validation draws from the
/// training part; everything left in training becomes unlabelled.
pub fn make_split<F: Real>(data: &Dataset<F>, spec: &SplitSpec) -> Result<Split, DataError> {
    let k = data.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut unlabelled = Vec::new();
    for (i, l) in data.labels.iter().enumerate() {
        match l {
            Some(c) => pools[*c].push(i),
            None => unlabelled.push(i),
        }
    }
    for p in pools.iter_mut() {
        p.shuffle(&mut rng);
    }
    let n_labelled: usize = pools.iter().map(Vec::len).sum();
    let n_test = (spec.test_fraction * n_labelled as f64).round() as usize;

    let take = |pools: &mut Vec<Vec<usize>>, total: usize, min_one: bool| -> Result<Vec<usize>, DataError> {
        let sizes: Vec<usize> = pools.iter().map(Vec::len).collect();
        let alloc = apportion(total, &sizes, min_one)?;
        let mut out = Vec::with_capacity(total);
        for (p, a) in pools.iter_mut().zip(alloc) {
            out.extend(p.drain(..a));
        }
        out.sort_unstable();
        Ok(out)
    };
    let test = take(&mut pools, n_test, false)?;
    let labelled = take(&mut pools, spec.labelled_count, true)?;
    let validation = take(&mut pools, spec.validation_count, spec.validation_count >= k)?;
    unlabelled.extend(pools.into_iter().flatten());
    unlabelled.sort_unstable();
    // Consume one value so later protocol extensions keep using a distinct stream.
    let _: u32 = rng.random();
    Ok(Split { seed: spec.seed, labelled, validation, unlabelled, test })
}

/// Two interleaved half circles with Gaussian noise, labels 0 (upper) and 1 (lower).
pub fn two_moons(n: usize, noise: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("valid noise");
    let n_upper = n / 2;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let upper = i < n_upper;
        let count = if upper { n_upper } else { n - n_upper };
        let j = if upper { i } else { i - n_upper };
        let t = std::f64::consts::PI * j as f64 / (count.max(2) - 1) as f64;
        let (x, y) = if upper { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        rows.push(vec![x + normal.sample(&mut rng), y + normal.sample(&mut rng)]);
        labels.push(if upper { 0 } else { 1 });
    }
    (rows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_data(text: &str) -> Dataset<f64> {
        read_csv(text.as_bytes(), "label").unwrap()
    }

    #[test]
    fn label_encoding_by_first_appearance() {
        let d = csv_data("f1,f2,label\n1,2,a\n3,4,b\n5,6,a\n");
        assert_eq!((d.len(), d.num_features(), d.num_classes), (3, 2, 2));
        assert_eq!(d.labels, vec![Some(0), Some(1), Some(0)]);
        assert_eq!(d.class_names, vec!["a", "b"]);
    }

    #[test]
    fn non_numeric_cell_is_reported() {
        let err = read_csv::<f64, _>("f1,f2,label\n1,2,a\n3,x,b\n".as_bytes(), "label").unwrap_err();
        match err {
            DataError::ParseError { row, column, .. } => assert_eq!((row, column.as_str()), (2, "f2")),
            other => panic!("{other:?}"),
        }
        let err = read_csv::<f64, _>("f1,label\n,a\n".as_bytes(), "label").unwrap_err();
        assert!(matches!(err, DataError::MissingValue { row: 1, .. }));
        assert!(matches!(read_csv::<f64, _>("f1,y\n1,a\n".as_bytes(), "label"), Err(DataError::NoLabelColumn(_))));
    }

    #[test]
    fn empty_label_means_unlabelled() {
        let d = csv_data("f1,label\n1,a\n2,\n3,b\n");
        assert_eq!(d.labels, vec![Some(0), None, Some(1)]);
        let (x, y, u) = d.partition_by_label();
        assert_eq!((x.len(), y, u.len()), (2, vec![0, 1], 1));
    }

    #[test]
    fn z_scoring_and_constant_columns() {
        let d = csv_data("a,b,label\n1,7,x\n2,7,y\n3,7,x\n");
        let (p, t) = preprocess(&d, &[0, 1, 2]).unwrap();
        assert_eq!(p.num_features(), 1);
        let col: Vec<f64> = p.features.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
        // Held-out rows use the fit statistics.
        assert_eq!(t.apply(&[5.0, 7.0]), vec![3.0]);
    }

    #[test]
    fn all_constant_is_an_error() {
        let d = csv_data("a,label\n1,x\n1,y\n");
        assert!(matches!(preprocess(&d, &[0, 1]), Err(DataError::AllFeaturesDegenerate)));
    }

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(apportion(14, &[145, 200], true).unwrap(), vec![6, 8]);
        assert_eq!(apportion(3, &[1, 1, 100], true).unwrap(), vec![1, 1, 1]);
        assert!(apportion(3, &[0, 5], true).is_err());
    }

    #[test]
    fn split_partitions_rows() {
        let (rows, labels) = two_moons(120, 0.1, 1);
        let d = Dataset {
            features: rows,
            labels: labels.into_iter().map(Some).collect(),
            num_classes: 2,
            feature_names: vec!["x".into(), "y".into()],
            class_names: vec!["0".into(), "1".into()],
        };
        let spec = SplitSpec::standard(&d, 5);
        assert_eq!(spec.labelled_count, 6);
        let s = make_split(&d, &spec).unwrap();
        assert_eq!(s.test.len(), 24);
        assert_eq!(s.labelled.len(), 6);
        assert_eq!(s.validation.len(), 6);
        let mut all: Vec<usize> = s.train().into_iter().chain(s.test.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..120).collect::<Vec<_>>());
        assert_eq!(make_split(&d, &spec).unwrap(), s);
        assert_eq!(Split::from_json(&s.to_json()).unwrap(), s);
    }
}
