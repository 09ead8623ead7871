use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{stratified_split, write_atomic, Dataset, Matrix, Split, Standardization};
use crate::error::{Error, Result};

/// Where the train/test split of a CSV dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSource {
    /// Stratified random split with this test fraction.
    TestFrac(f64),
    /// A column holding `train` / `test`.
    Column(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvOptions {
    pub label_column: String,
    pub split: SplitSource,
    /// Standardise each feature with train-split statistics.
    pub normalize: bool,
    pub seed: u64,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Load a headed numeric CSV. Errors name the offending line.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 1, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let label_col = find(&opts.label_column).ok_or_else(|| {
        parse_err(path, 1, format!("unknown label column `{}`", opts.label_column))
    })?;
    let split_col = match &opts.split {
        SplitSource::Column(name) => Some(
            find(name).ok_or_else(|| parse_err(path, 1, format!("unknown split column `{name}`")))?,
        ),
        SplitSource::TestFrac(_) => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && Some(c) != split_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(parse_err(path, 1, "no feature columns"));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    format!("ragged row: expected {expected_len} fields, found {len}")
                }
                _ => e.to_string(),
            };
            parse_err(path, line, message)
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for &c in &feature_cols {
            let cell = record[c].trim();
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(path, line, format!("non-numeric value `{cell}` in column `{}`", &headers[c]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value in column `{}`", &headers[c])));
            }
            data.push(v);
        }
        let cell = record[label_col].trim();
        let label = cell
            .parse::<f64>()
            .ok()
            .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v < u32::MAX as f64)
            .ok_or_else(|| parse_err(path, line, format!("label `{cell}` is not a nonnegative integer")))?;
        labels.push(label as usize);
        if let Some(c) = split_col {
            split.push(match record[c].trim() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(parse_err(path, line, format!("split value `{other}` is neither train nor test"))),
            });
        }
    }
    if labels.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let split = match &opts.split {
        SplitSource::TestFrac(f) => stratified_split(&labels, n_classes, *f, opts.seed)?,
        SplitSource::Column(_) => split,
    };
    let n = labels.len();
    let mut features = Matrix::new(n, feature_cols.len(), data)?;
    let standardization = if opts.normalize {
        Some(standardize(&mut features, &split)?)
    } else {
        None
    };

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    let mut ds = Dataset::new(name, features, labels, n_classes, split)?;
    let names: Vec<&str> = feature_cols.iter().map(|&c| headers[c].trim()).collect();
    ds.metadata.insert(
        "source".into(),
        json!({ "kind": "csv", "path": path.display().to_string(), "label_column": opts.label_column, "split": opts.split, "normalize": opts.normalize, "seed": opts.seed }),
    );
    ds.metadata.insert("feature_names".into(), json!(names));
    if let Some(s) = standardization {
        ds.metadata.insert("standardization".into(), json!(s));
    }
    Ok(ds)
}

fn standardize(features: &mut Matrix, split: &[Split]) -> Result<Standardization> {
    let train: Vec<usize> = (0..features.rows()).filter(|&i| split[i] == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::invalid("cannot standardise without training rows"));
    }
    let d = features.cols();
    let count = train.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut std = vec![0.0; d];
    for &i in &train {
        for ((s, v), m) in std.iter_mut().zip(features.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / count).sqrt();
    }
    // Constant columns keep std 0 and are left as they are.
    for (j, s) in std.iter_mut().enumerate() {
        if !train.iter().any(|&i| features.get(i, j) != features.get(train[0], j)) {
            *s = 0.0;
        }
    }
    for i in 0..features.rows() {
        for (j, v) in features.row_mut(i).iter_mut().enumerate() {
            if std[j] > 0.0 {
                *v = (*v - mean[j]) / std[j];
            }
        }
    }
    Ok(Standardization { mean, std })
}

/// Write a dataset as `<features...>,label,split`. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let names: Vec<String> = match ds.metadata.get("feature_names").and_then(|v| v.as_array()) {
        Some(a) if a.len() == ds.dim() => a.iter().map(|v| v.as_str().unwrap_or("").to_string()).collect(),
        _ => (0..ds.dim()).map(|j| format!("f{j}")).collect(),
    };
    let mut out = String::new();
    out.push_str(&names.join(","));
    out.push_str(",label,split\n");
    for i in 0..ds.len() {
        for v in ds.x(i) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{}\n", ds.labels[i], ds.split[i].as_str()));
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn opts(split: SplitSource, normalize: bool) -> CsvOptions {
        CsvOptions {
            label_column: "y".into(),
            split,
            normalize,
            seed: 0,
        }
    }

    #[test]
    fn toy_csv_exact_recovery() {
        let f = toy("a,y,b,part\n1.5,0,2,train\n-3,1,4.25,train\n0,1,0.5,test\n7,0,8,test\n");
        let ds = load_csv(f.path(), &opts(SplitSource::Column("part".into()), false)).unwrap();
        assert_eq!(ds.features.as_slice(), &[1.5, 2.0, -3.0, 4.25, 0.0, 0.5, 7.0, 8.0]);
        assert_eq!(ds.labels, vec![0, 1, 1, 0]);
        assert_eq!(ds.split, vec![Split::Train, Split::Train, Split::Test, Split::Test]);
        assert_eq!(ds.n_classes, 2);
    }

    #[test]
    fn errors_name_the_line() {
        let ragged = toy("a,y\n1,0\n2,1,3\n");
        let err = load_csv(ragged.path(), &opts(SplitSource::TestFrac(0.0), false)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let bad = toy("a,y\n1,0\nfoo,1\n");
        let err = load_csv(bad.path(), &opts(SplitSource::TestFrac(0.0), false)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let frac_label = toy("a,y\n1,0\n2,0.5\n");
        let err = load_csv(frac_label.path(), &opts(SplitSource::TestFrac(0.0), false)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let f = toy("a,b\n1,0\n");
        let err = load_csv(f.path(), &opts(SplitSource::TestFrac(0.0), false)).unwrap_err();
        assert!(err.to_string().contains("unknown label column"));
    }

    #[test]
    fn normalization_uses_train_rows_only() {
        let mut text = String::from("a,c,y,split\n");
        for i in 0..40 {
            let part = if i < 30 { "train" } else { "test" };
            // test rows come from a shifted distribution
            let a = if i < 30 { i as f64 * 0.37 } else { 100.0 + i as f64 };
            text.push_str(&format!("{a},5,{},{part}\n", i % 2));
        }
        let f = toy(&text);
        let ds = load_csv(f.path(), &opts(SplitSource::Column("split".into()), true)).unwrap();
        let train = ds.train_indices();
        let n = train.len() as f64;
        let mean: f64 = train.iter().map(|&i| ds.x(i)[0]).sum::<f64>() / n;
        let var: f64 = train.iter().map(|&i| (ds.x(i)[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
        // constant column untouched
        assert!(train.iter().all(|&i| ds.x(i)[1] == 5.0));
        let test = ds.test_indices();
        let test_mean: f64 = test.iter().map(|&i| ds.x(i)[0]).sum::<f64>() / test.len() as f64;
        assert!(test_mean > 5.0);
        let st: Standardization = serde_json::from_value(ds.metadata["standardization"].clone()).unwrap();
        assert_eq!(st.std[1], 0.0);
    }

    #[test]
    fn write_then_load_is_bit_identical() {
        let ds = crate::data::gen_two_moons(60, 0.3, 0.25, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moons.csv");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(
            &path,
            &CsvOptions { label_column: "label".into(), split: SplitSource::Column("split".into()), normalize: false, seed: 0 },
        )
        .unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.split, ds.split);
    }
}
