//! Datasets, synthetic generators and persistence formats.

mod checkpoint;
mod csv_io;
mod synth;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use csv_io::{load_csv, write_csv, CsvOptions, SplitSource};
pub use synth::{gen_blobs, gen_two_moons, BlobsParams};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::rng;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::invalid(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Per-dimension standardisation computed on the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Zero for constant columns, which are left unscaled.
    pub std: Vec<f64>,
}

/// Labeled samples with a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: Vec<Split>,
    /// Generator parameters, source path, derived statistics.
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        split: Vec<Split>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            features,
            labels,
            n_classes,
            split,
            metadata: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.labels.len() != n || self.split.len() != n {
            return Err(Error::invalid("features, labels and split differ in length"));
        }
        if self.features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features contain missing or non-finite values"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        let mut seen = vec![false; self.n_classes];
        for (&l, &s) in self.labels.iter().zip(&self.split) {
            if s == Split::Train {
                seen[l] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid(format!(
                "class {missing} has no training samples"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices_of(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Test)
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn samples(&self, indices: &[usize]) -> Vec<Sample<'_>> {
        indices
            .iter()
            .map(|&i| Sample::class(self.features.row(i), self.labels[i]))
            .collect()
    }

    pub fn inputs(&self, indices: &[usize]) -> Vec<&[f64]> {
        indices.iter().map(|&i| self.features.row(i)).collect()
    }

    /// Copy with training labels corrupted at rate `p`; test labels untouched.
    pub fn with_train_label_noise(&self, p: f64, seed: u64) -> Result<Dataset> {
        let train = self.train_indices();
        let labels: Vec<usize> = train.iter().map(|&i| self.labels[i]).collect();
        let noisy = crate::active::inject_label_noise(&labels, p, self.n_classes, seed)?;
        let mut out = self.clone();
        for (&i, &l) in train.iter().zip(&noisy) {
            out.labels[i] = l;
        }
        out.metadata
            .insert("train_label_noise".into(), serde_json::json!({ "p": p, "seed": seed }));
        Ok(out)
    }

    /// JSON sidecar describing the dataset.
    pub fn metadata_json(&self) -> serde_json::Value {
        let n_train = self.split.iter().filter(|&&s| s == Split::Train).count();
        serde_json::json!({
            "name": self.name,
            "n_samples": self.len(),
            "n_train": n_train,
            "n_test": self.len() - n_train,
            "dim": self.dim(),
            "n_classes": self.n_classes,
            "metadata": self.metadata,
        })
    }

    pub fn write_metadata(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.metadata_json())?;
        write_atomic(path, format!("{text}\n").as_bytes())
    }
}

/// Stratified split: within each class, a seeded shuffle sends
/// `round(count * test_frac)` samples to the test split, keeping at least one
/// training sample per class.
pub(crate) fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    test_frac: f64,
    seed: u64,
) -> Result<Vec<Split>> {
    use rand::seq::SliceRandom;
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::invalid("test fraction must lie in [0, 1)"));
    }
    let mut split = vec![Split::Train; labels.len()];
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng::rng_for(seed, &[rng::TAG_SPLIT, class as u64]));
        let n_test = ((members.len() as f64 * test_frac).round() as usize).min(members.len() - 1);
        for &i in &members[..n_test] {
            split[i] = Split::Test;
        }
    }
    Ok(split)
}

/// Write to a sibling temp file then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
