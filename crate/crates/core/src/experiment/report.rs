//! `report`: plot-ready tables derived from the files `al run` stores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::al::{aggregate_table, AGGREGATE_COLUMNS};
use super::ensure_dir;
use super::table::{fmt_f64, RowView, Table};
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::estimation::loss_estimation_quality;
use crate::stats::{mean, sample_std};

/// Largest allowed gap between stored and recomputed aggregates.
pub const AGGREGATE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    /// Worst absolute difference between stored and recomputed aggregates.
    pub max_aggregate_diff: f64,
    pub summary: String,
}

struct SeedData {
    seed: u64,
    cycles: Table,
    cycles_path: PathBuf,
    scores: Table,
    scores_path: PathBuf,
}

fn read_status(input: &Path) -> Result<Vec<u64>> {
    let p = input.join("run_status.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    v.get("completed_seeds")
        .and_then(|s| s.as_array())
        .and_then(|a| a.iter().map(|x| x.as_u64()).collect::<Option<Vec<_>>>())
        .ok_or_else(|| Error::Format(format!("{}: missing `completed_seeds`", p.display())))
}

/// Check that every expected input exists before reading any of them.
fn expected_inputs(input: &Path) -> Result<(Vec<u64>, Vec<PathBuf>)> {
    let status = input.join("run_status.json");
    let mut missing = Vec::new();
    let mut needed = vec![status.clone(), input.join("aggregate.csv")];
    let seeds = if status.is_file() { read_status(input)? } else { Vec::new() };
    if seeds.is_empty() {
        needed.push(input.join("cycles_seed<S>.csv"));
        needed.push(input.join("scores_seed<S>.csv"));
    }
    for s in &seeds {
        needed.push(input.join(format!("cycles_seed{s}.csv")));
        needed.push(input.join(format!("scores_seed{s}.csv")));
    }
    for p in &needed {
        if !p.is_file() {
            missing.push(p.clone());
        }
    }
    if !missing.is_empty() {
        let mut msg = format!("report input {} is incomplete; missing:", input.display());
        for p in &missing {
            let _ = write!(msg, "\n  {}", p.display());
        }
        return Err(Error::InvalidInput(msg));
    }
    Ok((seeds, needed))
}

fn load_seeds(input: &Path, seeds: &[u64]) -> Result<Vec<SeedData>> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted
        .into_iter()
        .map(|seed| {
            let cycles_path = input.join(format!("cycles_seed{seed}.csv"));
            let scores_path = input.join(format!("scores_seed{seed}.csv"));
            Ok(SeedData {
                seed,
                cycles: Table::read(&cycles_path)?,
                scores: Table::read(&scores_path)?,
                cycles_path,
                scores_path,
            })
        })
        .collect()
}

fn view<'a>(t: &'a Table, row: usize, path: &'a Path) -> RowView<'a> {
    RowView { table: t, row, path }
}

/// `(cycle, column) -> value` for one seed's cycle rows.
fn cycle_values(sd: &SeedData) -> Result<BTreeMap<usize, BTreeMap<String, f64>>> {
    let mut out = BTreeMap::new();
    for row in 0..sd.cycles.rows.len() {
        let v = view(&sd.cycles, row, &sd.cycles_path);
        let mut m = BTreeMap::new();
        for col in AGGREGATE_COLUMNS.iter().chain(["labeled"].iter()) {
            m.insert(col.to_string(), v.f64(col)?);
        }
        out.insert(v.u64("cycle")? as usize, m);
    }
    Ok(out)
}

/// `(cod, true_loss)` columns of one cycle.
type ScoreColumns = (Vec<f64>, Vec<f64>);

fn scores_by_cycle(sd: &SeedData) -> Result<BTreeMap<usize, ScoreColumns>> {
    let mut out: BTreeMap<usize, ScoreColumns> = BTreeMap::new();
    for row in 0..sd.scores.rows.len() {
        let v = view(&sd.scores, row, &sd.scores_path);
        let e = out.entry(v.u64("cycle")? as usize).or_default();
        e.0.push(v.f64("cod")?);
        e.1.push(v.f64("true_loss")?);
    }
    Ok(out)
}

/// Build every report table from the run directory `input` into `output`.
pub fn report(input: &Path, output: &Path) -> Result<ReportOutput> {
    let (seeds, _) = expected_inputs(input)?;
    let data = load_seeds(input, &seeds)?;
    let per_seed: Vec<_> = data.iter().map(cycle_values).collect::<Result<_>>()?;
    let n_cycles = per_seed.iter().map(|m| m.keys().max().copied().unwrap_or(0)).max().unwrap_or(0);
    let column_values = |cycle: usize, col: &str| -> Vec<f64> {
        per_seed.iter().filter_map(|m| m.get(&cycle)).map(|r| r[col]).collect()
    };

    ensure_dir(output)?;
    let mut files = Vec::new();
    let mut summary = String::new();
    let _ = writeln!(summary, "run: {}", input.display());
    let _ = writeln!(summary, "seeds: {}", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", "));
    let _ = writeln!(summary, "cycles: {n_cycles}");

    // accuracy against labeling budget
    let mut acc = Table::new(["cycle", "labeled_frac", "n_seeds", "mean_test_acc", "std_test_acc"]);
    let _ = writeln!(summary, "\naccuracy vs budget\n  cycle  labeled  mean_acc  std_acc");
    for cycle in 1..=n_cycles {
        let a = column_values(cycle, "test_acc");
        let f = column_values(cycle, "labeled_frac");
        acc.push(vec![
            cycle.to_string(),
            fmt_f64(mean(&f)),
            a.len().to_string(),
            fmt_f64(mean(&a)),
            fmt_f64(sample_std(&a)),
        ]);
        let _ = writeln!(
            summary,
            "  {cycle:>5}  {:>6.1}%  {:>8.4}  {:>7.4}",
            100.0 * mean(&f),
            mean(&a),
            sample_std(&a)
        );
    }
    let p = output.join("accuracy_vs_budget.csv");
    acc.write(&p)?;
    files.push(p);

    // COD deciles, recall at p and rank correlation per (seed, cycle)
    let mut deciles = Table::new(["seed", "cycle", "decile", "mean_true_loss", "mean_cod"]);
    let mut recall = Table::new(["seed", "cycle", "p", "recall"]);
    let mut rho_t = Table::new(["seed", "cycle", "n_unlabeled", "spearman_rho"]);
    let mut skipped = 0usize;
    for sd in &data {
        for (cycle, (cod, loss)) in scores_by_cycle(sd)? {
            let q = match loss_estimation_quality(&cod, &loss) {
                Ok(q) => q,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            };
            for (k, (l, c)) in q.decile_mean_losses.iter().zip(&q.decile_mean_scores).enumerate() {
                deciles.push(vec![
                    sd.seed.to_string(),
                    cycle.to_string(),
                    (k + 1).to_string(),
                    fmt_f64(*l),
                    fmt_f64(*c),
                ]);
            }
            for (pct, r) in &q.recall_at_p {
                recall.push(vec![sd.seed.to_string(), cycle.to_string(), fmt_f64(*pct), fmt_f64(*r)]);
            }
            rho_t.push(vec![
                sd.seed.to_string(),
                cycle.to_string(),
                cod.len().to_string(),
                fmt_f64(q.spearman_rho),
            ]);
        }
    }
    for (name, t) in [("cod_deciles.csv", &deciles), ("recall_at_p.csv", &recall), ("cod_quality.csv", &rho_t)] {
        let p = output.join(name);
        t.write(&p)?;
        files.push(p);
    }
    let _ = writeln!(summary, "\nCOD vs true loss (Spearman rho, mean over seeds)");
    for cycle in 1..=n_cycles {
        let rhos: Vec<f64> = rho_t
            .rows
            .iter()
            .filter(|r| r[1] == cycle.to_string())
            .filter_map(|r| r[3].parse().ok())
            .collect();
        if !rhos.is_empty() {
            let _ = writeln!(summary, "  cycle {cycle:>3}: {:>7.4}  ({} seeds)", mean(&rhos), rhos.len());
        }
    }
    if skipped > 0 {
        let _ = writeln!(summary, "  {skipped} (seed, cycle) groups had fewer than 10 unlabeled samples");
    }

    // per-class accuracy
    let mut per_class = Table::new(["seed", "cycle", "class", "acc"]);
    for sd in &data {
        let classes: Vec<(usize, usize)> = sd
            .cycles
            .header
            .iter()
            .enumerate()
            .filter_map(|(j, h)| h.strip_prefix("acc_class").and_then(|c| c.parse().ok()).map(|c| (j, c)))
            .collect();
        for row in &sd.cycles.rows {
            let cycle = &row[sd.cycles.column("cycle").unwrap_or(1)];
            for &(j, c) in &classes {
                per_class.push(vec![sd.seed.to_string(), cycle.clone(), c.to_string(), row[j].clone()]);
            }
        }
    }
    let p = output.join("per_class_accuracy.csv");
    per_class.write(&p)?;
    files.push(p);

    // stored aggregate against one recomputed from the per-seed rows
    let agg_path = input.join("aggregate.csv");
    let stored = Table::read(&agg_path)?;
    let recomputed = aggregate_table(n_cycles, column_values);
    let mut check = Table::new(["cycle", "stat", "column", "stored", "recomputed", "abs_diff", "ok"]);
    let mut max_diff: f64 = 0.0;
    if stored.rows.len() != recomputed.rows.len() {
        return Err(Error::Format(format!(
            "{}: {} rows, per-seed files imply {}",
            agg_path.display(),
            stored.rows.len(),
            recomputed.rows.len()
        )));
    }
    for (i, rrow) in recomputed.rows.iter().enumerate() {
        let sv = view(&stored, i, &agg_path);
        let rv = view(&recomputed, i, &agg_path);
        for col in AGGREGATE_COLUMNS {
            let (a, b) = (sv.f64(col)?, rv.f64(col)?);
            let diff = if a.is_nan() && b.is_nan() { 0.0 } else { (a - b).abs() };
            let diff = if diff.is_nan() { f64::INFINITY } else { diff };
            max_diff = max_diff.max(diff);
            check.push(vec![
                rrow[0].clone(),
                rrow[1].clone(),
                col.to_string(),
                fmt_f64(a),
                fmt_f64(b),
                fmt_f64(diff),
                (diff <= AGGREGATE_TOLERANCE).to_string(),
            ]);
        }
    }
    let p = output.join("aggregate_check.csv");
    check.write(&p)?;
    files.push(p);
    let _ = writeln!(
        summary,
        "\naggregate check: max |stored - recomputed| = {} ({})",
        fmt_f64(max_diff),
        if max_diff <= AGGREGATE_TOLERANCE { "ok" } else { "MISMATCH" }
    );

    let p = output.join("summary.txt");
    write_atomic(&p, summary.as_bytes())?;
    files.push(p);
    Ok(ReportOutput {
        files,
        max_aggregate_diff: max_diff,
        summary,
    })
}
