//! Experiment configuration: a strict JSON document plus command-line
//! overrides.
//!
//! Precedence, lowest to highest: the config file, `TODLAB_OUTPUT_DIR`, then
//! flags in the order given (last one wins). Every override is applied to the
//! JSON tree before validation, so a bad flag value is reported with the same
//! key path as a bad file entry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::active::ALConfig;
use crate::data::{gen_blobs, gen_two_moons, load_csv, BlobsParams, CsvOptions, Dataset, SplitSource};
use crate::error::{Error, Result};
use crate::estimation::OutputSpace;
use crate::model::{MlpSpec, TrainConfig};
use crate::rng;
use crate::selection::{BaselineGap, SelectionMethod};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "TODLAB_OUTPUT_DIR";

fn d_test_frac() -> f64 {
    0.3
}
fn d_moons_noise() -> f64 {
    0.2
}
fn d_label() -> String {
    "label".into()
}
fn d_true() -> bool {
    true
}

/// Where the samples come from. Without an explicit `seed`, synthetic data
/// is regenerated for every run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    TwoMoons {
        n: usize,
        #[serde(default = "d_moons_noise")]
        noise: f64,
        #[serde(default = "d_test_frac")]
        test_frac: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Blobs {
        n: usize,
        classes: usize,
        dim: usize,
        centers_scale: f64,
        sigma: f64,
        #[serde(default = "d_test_frac")]
        test_frac: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        /// Relative paths resolve against the config file's directory.
        path: PathBuf,
        #[serde(default = "d_label")]
        label_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_frac: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_column: Option<String>,
        #[serde(default = "d_true")]
        normalize: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl DatasetConfig {
    /// Build the dataset for one run.
    pub fn build(&self, run_seed: u64, base_dir: &Path) -> Result<Dataset> {
        let data_seed = |fixed: &Option<u64>| fixed.unwrap_or_else(|| rng::derive_seed(run_seed, &[rng::TAG_DATA]));
        match self {
            DatasetConfig::TwoMoons { n, noise, test_frac, seed } => {
                gen_two_moons(*n, *noise, *test_frac, data_seed(seed))
            }
            DatasetConfig::Blobs {
                n,
                classes,
                dim,
                centers_scale,
                sigma,
                test_frac,
                seed,
            } => gen_blobs(&BlobsParams {
                n: *n,
                classes: *classes,
                dim: *dim,
                centers_scale: *centers_scale,
                sigma: *sigma,
                test_frac: *test_frac,
                seed: data_seed(seed),
            }),
            DatasetConfig::Csv {
                path,
                label_column,
                test_frac,
                split_column,
                normalize,
                seed,
            } => {
                let split = match (test_frac, split_column) {
                    (Some(f), None) => SplitSource::TestFrac(*f),
                    (None, Some(c)) => SplitSource::Column(c.clone()),
                    (None, None) => SplitSource::TestFrac(d_test_frac()),
                    (Some(_), Some(_)) => {
                        return Err(Error::config("dataset", "give either test_frac or split_column, not both"))
                    }
                };
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                load_csv(
                    &full,
                    &CsvOptions {
                        label_column: label_column.clone(),
                        split,
                        normalize: *normalize,
                        seed: data_seed(seed),
                    },
                )
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input width, hidden widths, number of classes.
    pub layer_sizes: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Probability of flipping each training label.
    #[serde(default)]
    pub p: f64,
}

fn d_pool() -> usize {
    10
}
fn d_draws() -> usize {
    20
}
fn d_min_epochs() -> usize {
    5
}
fn d_max_epochs() -> usize {
    50
}
fn d_methods() -> Vec<SelectionMethod> {
    SelectionMethod::ALL.to_vec()
}
fn d_ks() -> Vec<usize> {
    vec![1, 3]
}

/// Settings of a model-selection study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "d_pool")]
    pub pool_size: usize,
    /// Baseline gap in epochs; the default when neither gap is set is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_steps: Option<usize>,
    /// Candidate epoch budgets are spread evenly over this range.
    #[serde(default = "d_min_epochs")]
    pub min_epochs: usize,
    #[serde(default = "d_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_draws")]
    pub draws: usize,
    #[serde(default = "d_methods")]
    pub methods: Vec<SelectionMethod>,
    #[serde(default = "d_ks")]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub output_space: OutputSpace,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            pool_size: d_pool(),
            gap_epochs: None,
            gap_steps: None,
            min_epochs: d_min_epochs(),
            max_epochs: d_max_epochs(),
            draws: d_draws(),
            methods: d_methods(),
            ks: d_ks(),
            output_space: OutputSpace::Probs,
        }
    }
}

impl SelectionConfig {
    pub fn gap(&self) -> BaselineGap {
        match (self.gap_epochs, self.gap_steps) {
            (_, Some(s)) => BaselineGap::Steps(s),
            (Some(e), None) => BaselineGap::Epochs(e),
            (None, None) => BaselineGap::Epochs(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("selection.{field}"), msg));
        if self.pool_size < 2 {
            return bad("pool_size", "a pool needs at least two candidates");
        }
        if self.gap_epochs.is_some() && self.gap_steps.is_some() {
            return bad("gap_steps", "set either gap_epochs or gap_steps");
        }
        if self.min_epochs == 0 || self.min_epochs > self.max_epochs {
            return bad("min_epochs", "need 1 <= min_epochs <= max_epochs");
        }
        if self.draws == 0 {
            return bad("draws", "must be positive");
        }
        if self.methods.is_empty() {
            return bad("methods", "at least one method required");
        }
        if let Some(&k) = self.ks.iter().find(|&&k| k == 0 || k > self.pool_size) {
            return bad("ks", &format!("k = {k} outside 1..=pool_size"));
        }
        Ok(())
    }
}

fn d_output_dir() -> PathBuf {
    PathBuf::from("todlab-out")
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub active: ALConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub seeds: Vec<u64>,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionConfig>,
}

impl ExperimentConfig {
    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        MlpSpec::new(self.model.layer_sizes.clone())
            .map_err(|e| Error::config("model.layer_sizes", e.to_string()))?;
        self.train.validate()?;
        self.active.validate()?;
        if !(0.0..=1.0).contains(&self.noise.p) {
            return Err(Error::config("noise.p", "must lie in [0, 1]"));
        }
        if let Some(s) = &self.selection {
            s.validate()?;
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.model.layer_sizes.clone()).map_err(|e| Error::config("model.layer_sizes", e.to_string()))
    }

    /// Check that the model fits a built dataset.
    pub fn check_fit(&self, ds: &Dataset) -> Result<()> {
        let sizes = &self.model.layer_sizes;
        if sizes.first() != Some(&ds.dim()) || sizes.last() != Some(&ds.n_classes) {
            return Err(Error::config(
                "model.layer_sizes",
                format!(
                    "data has {} features and {} classes, model is {:?}",
                    ds.dim(),
                    ds.n_classes,
                    sizes
                ),
            ));
        }
        Ok(())
    }

    /// Dataset for `run_seed`, with label noise applied to the train split.
    pub fn dataset_for(&self, run_seed: u64, base_dir: &Path) -> Result<Dataset> {
        let ds = self.dataset.build(run_seed, base_dir)?;
        self.check_fit(&ds)?;
        ds.with_train_label_noise(self.noise.p, rng::derive_seed(run_seed, &[rng::TAG_NOISE]))
    }

    /// The config as stored next to results; `output_dir` is left out so that
    /// reruns into different directories produce identical bytes.
    pub fn to_stored_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        Ok(format!("{}\n", serde_json::to_string_pretty(&v)?))
    }
}

/// A parsed config together with its JSON tree, kept for sweeps.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub tree: Value,
    pub config: ExperimentConfig,
    /// Directory relative dataset paths resolve against.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    /// Re-validate after editing the tree.
    pub fn with_overrides(&self, sets: &[(String, Value)]) -> Result<LoadedConfig> {
        let mut tree = self.tree.clone();
        for (k, v) in sets {
            set_path(&mut tree, k, v.clone())?;
        }
        Ok(LoadedConfig {
            config: parse_tree(&tree)?,
            tree,
            base_dir: self.base_dir.clone(),
        })
    }
}

/// Deserialize and validate a JSON tree.
pub fn parse_tree(tree: &Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a config document given as text.
pub fn parse_config(text: &str, base_dir: &Path, sets: &[(String, Value)]) -> Result<LoadedConfig> {
    let tree: Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
    LoadedConfig {
        config: parse_tree(&tree)?,
        tree,
        base_dir: base_dir.to_path_buf(),
    }
    .with_overrides(sets)
}

/// Read a config file, apply `TODLAB_OUTPUT_DIR`, then the flag overrides.
pub fn load_config(path: &Path, sets: &[(String, Value)]) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    let tree: Value = serde_json::from_str(&text).map_err(|e| Error::config("<root>", e.to_string()))?;
    let mut all = Vec::new();
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            all.push(("output_dir".to_string(), Value::String(dir)));
        }
    }
    all.extend(sets.iter().cloned());
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut tree_with = tree;
    for (k, v) in &all {
        set_path(&mut tree_with, k, v.clone())?;
    }
    Ok(LoadedConfig {
        config: parse_tree(&tree_with)?,
        tree: tree_with,
        base_dir,
    })
}

/// Parse a `key=value` override. The value is read as JSON when possible and
/// as a plain string otherwise.
pub fn parse_set(arg: &str) -> Result<(String, Value)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| Error::config(arg, "override must look like key=value"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::config(arg, "empty key"));
    }
    Ok((k.to_string(), parse_value(v.trim())))
}

pub(crate) fn parse_value(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

/// Set a dotted key path, creating intermediate objects.
pub fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key path"));
    }
    let mut cur = tree;
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last part")
}
