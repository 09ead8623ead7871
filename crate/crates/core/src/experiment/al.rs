//! `al run`, `al compare` and `al sweep`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{set_path, LoadedConfig};
use super::table::{fmt_f64, Table};
use super::{ensure_dir, in_pool};
use crate::active::{run_active_learning, ALConfig, ActiveRun, CycleRecord, Sampler};
use crate::data::{save_checkpoint, write_atomic};
use crate::error::{Error, Result};
use crate::stats::{mean, sample_std};

/// Columns of `aggregate.csv` that are averaged over seeds.
pub const AGGREGATE_COLUMNS: [&str; 5] = ["labeled_frac", "test_acc", "mean_cod", "mean_true_loss", "mean_train_loss"];

/// Train, evaluate and acquire for one seed.
pub fn run_seed(lc: &LoadedConfig, seed: u64, al: &ALConfig) -> Result<ActiveRun> {
    let cfg = &lc.config;
    let ds = cfg.dataset_for(seed, &lc.base_dir)?;
    run_active_learning(&ds, &cfg.spec()?, al, &cfg.train, seed)
}

fn record_value(r: &CycleRecord, col: &str) -> f64 {
    match col {
        "labeled_frac" => r.labeled_frac,
        "test_acc" => r.test_acc,
        "mean_cod" => r.mean_cod,
        "mean_true_loss" => r.mean_true_loss,
        "mean_train_loss" => r.mean_train_loss,
        _ => unreachable!("unknown aggregate column {col}"),
    }
}

/// One row per cycle, in the layout of `cycles_seed<S>.csv`.
pub fn cycles_table(seed: u64, al: &ALConfig, records: &[CycleRecord]) -> Table {
    let k = records.first().map_or(0, |r| r.per_class_acc.len());
    let mut header: Vec<String> = [
        "seed",
        "cycle",
        "labeled",
        "labeled_frac",
        "sampler",
        "semi",
        "test_acc",
        "mean_cod",
        "mean_true_loss",
        "mean_train_loss",
        "seconds",
        "acquisition_seconds",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..k).map(|c| format!("acc_class{c}")));
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for r in records {
        let mut row = vec![
            seed.to_string(),
            r.cycle.to_string(),
            r.labeled.to_string(),
            fmt_f64(r.labeled_frac),
            al.sampler.name().to_string(),
            al.semi_enabled.to_string(),
            fmt_f64(r.test_acc),
            fmt_f64(r.mean_cod),
            fmt_f64(r.mean_true_loss),
            fmt_f64(r.mean_train_loss),
            fmt_f64(r.seconds),
            fmt_f64(r.acquisition_seconds),
        ];
        row.extend(r.per_class_acc.iter().map(|&a| fmt_f64(a)));
        t.push(row);
    }
    t
}

/// Per-sample scores of every cycle.
pub fn scores_table(seed: u64, run: &ActiveRun) -> Table {
    let mut t = Table::new(["seed", "cycle", "sample", "cod", "true_loss", "acquisition", "selected"]);
    for c in &run.scores {
        for i in 0..c.samples.len() {
            t.push(vec![
                seed.to_string(),
                c.cycle.to_string(),
                c.samples[i].to_string(),
                fmt_f64(c.cod[i]),
                fmt_f64(c.true_loss[i]),
                fmt_f64(c.acquisition[i]),
                u8::from(c.selected[i]).to_string(),
            ]);
        }
    }
    t
}

/// Mean and sample std across seeds for every cycle; two rows per cycle.
pub fn aggregate_table(cycles: usize, column_values: impl Fn(usize, &str) -> Vec<f64>) -> Table {
    let mut header = vec!["cycle".to_string(), "stat".into(), "n_seeds".into()];
    header.extend(AGGREGATE_COLUMNS.iter().map(|s| s.to_string()));
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for cycle in 1..=cycles {
        let n = column_values(cycle, AGGREGATE_COLUMNS[0]).len();
        for stat in ["mean", "std"] {
            let mut row = vec![cycle.to_string(), stat.to_string(), n.to_string()];
            for col in AGGREGATE_COLUMNS {
                let v = column_values(cycle, col);
                row.push(fmt_f64(if stat == "mean" { mean(&v) } else { sample_std(&v) }));
            }
            t.push(row);
        }
    }
    t
}

fn aggregate_records(records: &BTreeMap<u64, Vec<CycleRecord>>) -> Table {
    let cycles = records.values().map(Vec::len).max().unwrap_or(0);
    aggregate_table(cycles, |cycle, col| {
        records
            .values()
            .filter_map(|rs| rs.get(cycle - 1))
            .map(|r| record_value(r, col))
            .collect()
    })
}

/// What `al run` produced.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: BTreeMap<u64, Vec<CycleRecord>>,
    pub failed: Vec<(u64, String)>,
    pub files: Vec<PathBuf>,
}

/// `al run`: one CSV of cycle records and one checkpoint per seed, an
/// aggregate CSV and a status file. A failing seed does not stop the others;
/// its failure is recorded in `run_status.json` and reported as an error after
/// all outputs are written.
pub fn al_run(lc: &LoadedConfig, jobs: Option<usize>) -> Result<RunOutput> {
    let cfg = &lc.config;
    let out = &cfg.output_dir;
    // surface config problems (model/data mismatch, unreadable CSV) before any work
    cfg.dataset_for(cfg.seeds[0], &lc.base_dir)?;
    ensure_dir(out)?;
    let spec = cfg.spec()?;
    let results: Vec<(u64, Result<ActiveRun>)> = in_pool(jobs, || {
        cfg.seeds
            .par_iter()
            .map(|&s| (s, run_seed(lc, s, &cfg.active)))
            .collect()
    })?;

    let mut files = Vec::new();
    let mut records = BTreeMap::new();
    let mut failed = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(run) => {
                let p = out.join(format!("cycles_seed{seed}.csv"));
                cycles_table(seed, &cfg.active, &run.records).write(&p)?;
                files.push(p);
                let p = out.join(format!("scores_seed{seed}.csv"));
                scores_table(seed, &run).write(&p)?;
                files.push(p);
                let p = out.join(format!("final_seed{seed}.ckpt"));
                save_checkpoint(&p, &spec, run.final_params())?;
                files.push(p);
                let ds = cfg.dataset_for(seed, &lc.base_dir)?;
                let p = out.join(format!("dataset_seed{seed}.json"));
                ds.write_metadata(&p)?;
                files.push(p);
                records.insert(seed, run.records);
            }
            Err(e) => failed.push((seed, e.to_string())),
        }
    }
    let p = out.join("aggregate.csv");
    aggregate_records(&records).write(&p)?;
    files.push(p);
    let p = out.join("config.json");
    write_atomic(&p, cfg.to_stored_json()?.as_bytes())?;
    files.push(p);
    write_status(out, "al run", &cfg.seeds, &records.keys().copied().collect::<Vec<_>>(), &failed)?;
    files.push(out.join("run_status.json"));
    if !failed.is_empty() {
        return Err(Error::Runtime(format!(
            "{} of {} seeds failed; partial outputs flagged in {}",
            failed.len(),
            cfg.seeds.len(),
            out.join("run_status.json").display()
        )));
    }
    Ok(RunOutput { records, failed, files })
}

pub(crate) fn write_status(out: &Path, command: &str, seeds: &[u64], done: &[u64], failed: &[(u64, String)]) -> Result<()> {
    let status = if failed.is_empty() {
        "complete"
    } else if done.is_empty() {
        "failed"
    } else {
        "partial"
    };
    let v = json!({
        "command": command,
        "status": status,
        "seeds": seeds,
        "completed_seeds": done,
        "failures": failed.iter().map(|(s, e)| json!({"seed": s, "error": e})).collect::<Vec<_>>(),
    });
    write_atomic(&out.join("run_status.json"), format!("{}\n", serde_json::to_string_pretty(&v)?).as_bytes())
}

/// Labels for a sampler list: duplicates get `#2`, `#3`, ... suffixes.
pub fn sampler_labels(samplers: &[Sampler]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    samplers
        .iter()
        .map(|s| {
            let n = seen.entry(s.name()).or_insert(0);
            *n += 1;
            if *n == 1 {
                s.name().to_string()
            } else {
                format!("{}#{}", s.name(), n)
            }
        })
        .collect()
}

/// Paired head-to-head results.
#[derive(Clone, Debug)]
pub struct CompareOutput {
    pub labels: Vec<String>,
    pub samplers: Vec<Sampler>,
    pub seeds: Vec<u64>,
    /// `records[label][seed index]`
    pub records: Vec<Vec<Vec<CycleRecord>>>,
    /// Index of the random reference among `labels`.
    pub reference: usize,
}

/// Wins, ties and losses of one sampler's final accuracy against the
/// reference, over paired seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WinRate {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl WinRate {
    pub fn win_or_tie_rate(&self) -> f64 {
        let n = self.wins + self.ties + self.losses;
        (self.wins + self.ties) as f64 / n as f64
    }
}

impl CompareOutput {
    pub fn finals(&self, label: usize) -> Vec<f64> {
        self.records[label]
            .iter()
            .map(|r| r.last().expect("at least one cycle").test_acc)
            .collect()
    }

    pub fn mean_final(&self, label: usize) -> f64 {
        mean(&self.finals(label))
    }

    pub fn win_rate(&self, label: usize) -> WinRate {
        let a = self.finals(label);
        let b = self.finals(self.reference);
        let mut w = WinRate { wins: 0, ties: 0, losses: 0 };
        for (x, y) in a.iter().zip(&b) {
            if x > y {
                w.wins += 1;
            } else if x == y {
                w.ties += 1;
            } else {
                w.losses += 1;
            }
        }
        w
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Run every sampler on every seed with shared pools and initial weights,
/// without writing anything.
pub fn compare_samplers(lc: &LoadedConfig, samplers: &[Sampler], jobs: Option<usize>) -> Result<CompareOutput> {
    if samplers.is_empty() {
        return Err(Error::invalid("no samplers given"));
    }
    let mut samplers = samplers.to_vec();
    if !samplers.contains(&Sampler::Random) {
        samplers.push(Sampler::Random);
    }
    let labels = sampler_labels(&samplers);
    let reference = samplers.iter().position(|&s| s == Sampler::Random).unwrap();
    let cfg = &lc.config;
    cfg.dataset_for(cfg.seeds[0], &lc.base_dir)?;
    let jobs_list: Vec<(usize, usize)> = (0..samplers.len())
        .flat_map(|i| (0..cfg.seeds.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<Vec<CycleRecord>>> = in_pool(jobs, || {
        jobs_list
            .par_iter()
            .map(|&(i, j)| {
                let al = ALConfig {
                    sampler: samplers[i],
                    ..cfg.active.clone()
                };
                run_seed(lc, cfg.seeds[j], &al).map(|r| r.records)
            })
            .collect()
    })?;
    let mut records = vec![Vec::with_capacity(cfg.seeds.len()); samplers.len()];
    for ((i, _), r) in jobs_list.iter().zip(results) {
        records[*i].push(r?);
    }
    Ok(CompareOutput {
        labels,
        samplers,
        seeds: cfg.seeds.clone(),
        records,
        reference,
    })
}

/// `al compare`: `curves.csv` (per-cycle mean accuracy per sampler),
/// `finals.csv` and `winrate.csv` (final-cycle results against random).
pub fn al_compare(lc: &LoadedConfig, samplers: &[Sampler], jobs: Option<usize>) -> Result<CompareOutput> {
    let cmp = compare_samplers(lc, samplers, jobs)?;
    let out = &lc.config.output_dir;
    ensure_dir(out)?;

    let mut curves = Table::new(["sampler", "cycle", "labeled_frac", "n_seeds", "mean_acc", "std_acc"]);
    let mut finals = Table::new(["seed", "sampler", "final_acc"]);
    let mut winrate = Table::new([
        "sampler",
        "reference",
        "n_seeds",
        "wins",
        "ties",
        "losses",
        "win_or_tie_rate",
        "mean_final_acc",
        "reference_mean_final_acc",
    ]);
    for (i, label) in cmp.labels.iter().enumerate() {
        let cycles = cmp.records[i][0].len();
        for c in 0..cycles {
            let accs: Vec<f64> = cmp.records[i].iter().map(|r| r[c].test_acc).collect();
            curves.push(vec![
                label.clone(),
                (c + 1).to_string(),
                fmt_f64(cmp.records[i][0][c].labeled_frac),
                accs.len().to_string(),
                fmt_f64(mean(&accs)),
                fmt_f64(sample_std(&accs)),
            ]);
        }
        for (j, &seed) in cmp.seeds.iter().enumerate() {
            finals.push(vec![seed.to_string(), label.clone(), fmt_f64(cmp.finals(i)[j])]);
        }
        let w = cmp.win_rate(i);
        winrate.push(vec![
            label.clone(),
            cmp.labels[cmp.reference].clone(),
            cmp.seeds.len().to_string(),
            w.wins.to_string(),
            w.ties.to_string(),
            w.losses.to_string(),
            fmt_f64(w.win_or_tie_rate()),
            fmt_f64(cmp.mean_final(i)),
            fmt_f64(cmp.mean_final(cmp.reference)),
        ]);
    }
    curves.write(&out.join("curves.csv"))?;
    finals.write(&out.join("finals.csv"))?;
    winrate.write(&out.join("winrate.csv"))?;
    write_atomic(&out.join("config.json"), lc.config.to_stored_json()?.as_bytes())?;
    write_status(out, "al compare", &cmp.seeds, &cmp.seeds, &[])?;
    Ok(cmp)
}

/// Parse `key=v1,v2,...`. Keys without a dot refer to the `active` section.
pub fn parse_grid_axis(arg: &str) -> Result<(String, Vec<Value>)> {
    let (k, vs) = arg
        .split_once('=')
        .ok_or_else(|| Error::config("grid", format!("`{arg}` must look like key=v1,v2")))?;
    let key = if k.contains('.') { k.to_string() } else { format!("active.{k}") };
    let values: Vec<Value> = vs
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| super::config::parse_value(s.trim()))
        .collect();
    if values.is_empty() {
        return Err(Error::config(format!("grid.{key}"), "no values"));
    }
    Ok((key, values))
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub settings: Vec<(String, Value)>,
    pub finals: Vec<f64>,
}

impl SweepCell {
    pub fn mean(&self) -> f64 {
        mean(&self.finals)
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub cells: Vec<SweepCell>,
    pub best: usize,
}

/// `al sweep`: full-factorial grid, each cell averaged over the seeds.
/// Writes `sweep.csv` and `sweep_best.json`.
pub fn al_sweep(lc: &LoadedConfig, grid: &[(String, Vec<Value>)], jobs: Option<usize>) -> Result<SweepOutput> {
    if grid.is_empty() || grid.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::config("grid", "empty grid"));
    }
    let mut cells: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (k, vs) in grid {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                vs.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let configs = cells
        .iter()
        .map(|c| lc.with_overrides(c))
        .collect::<Result<Vec<_>>>()?;
    let seeds = &lc.config.seeds;
    let jobs_list: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|i| (0..seeds.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<f64>> = in_pool(jobs, || {
        jobs_list
            .par_iter()
            .map(|&(i, j)| {
                let c = &configs[i];
                run_seed(c, seeds[j], &c.config.active).map(|r| r.records.last().unwrap().test_acc)
            })
            .collect()
    })?;
    let mut finals = vec![Vec::with_capacity(seeds.len()); cells.len()];
    for ((i, _), r) in jobs_list.iter().zip(results) {
        finals[*i].push(r?);
    }
    let cells: Vec<SweepCell> = cells
        .into_iter()
        .zip(finals)
        .map(|(settings, finals)| SweepCell { settings, finals })
        .collect();
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.mean() > cells[best].mean() {
            best = i;
        }
    }

    let out = &lc.config.output_dir;
    ensure_dir(out)?;
    let mut header = vec!["cell".to_string()];
    header.extend(grid.iter().map(|(k, _)| k.clone()));
    header.extend(["n_seeds", "mean_final_acc", "std_final_acc"].map(String::from));
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for (i, c) in cells.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(c.settings.iter().map(|(_, v)| v.to_string()));
        row.push(c.finals.len().to_string());
        row.push(fmt_f64(c.mean()));
        row.push(fmt_f64(sample_std(&c.finals)));
        t.push(row);
    }
    t.write(&out.join("sweep.csv"))?;
    let mut settings = Value::Object(Default::default());
    for (k, v) in &cells[best].settings {
        set_path(&mut settings, k, v.clone())?;
    }
    let best_json = json!({
        "cell": best,
        "settings": settings,
        "mean_final_acc": cells[best].mean(),
        "std_final_acc": sample_std(&cells[best].finals),
        "n_seeds": seeds.len(),
    });
    write_atomic(&out.join("sweep_best.json"), format!("{}\n", serde_json::to_string_pretty(&best_json)?).as_bytes())?;
    write_atomic(&out.join("config.json"), lc.config.to_stored_json()?.as_bytes())?;
    Ok(SweepOutput { cells, best })
}
