//! `select run`: repeated candidate-pool draws scored by every selector.

use rayon::prelude::*;

use super::config::{LoadedConfig, SelectionConfig};
use super::table::{fmt_f64, Table};
use super::{ensure_dir, in_pool};
use crate::data::{write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::model::{MlpSpec, TrainConfig};
use crate::rng;
use crate::selection::{
    build_candidate_pool, random_ranking, rank_models, sample_level_accuracy, spread_epochs, topk_hit, PoolOptions,
    SelectionMethod,
};

/// Outcome of one pool draw.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawResult {
    pub draw: usize,
    pub true_best: usize,
    /// Per method (selection order, then `random`): top-k hits for each k.
    pub hits: Vec<(String, Vec<bool>)>,
    /// Per method: accuracy of per-sample model choice.
    pub sample_level: Vec<(SelectionMethod, f64)>,
    pub pool_min: f64,
    pub pool_mean: f64,
    pub pool_max: f64,
}

/// Train one pool and score it with every configured selector.
pub fn evaluate_draw(
    ds: &Dataset,
    spec: &MlpSpec,
    train: &TrainConfig,
    sel: &SelectionConfig,
    draw: usize,
    pool_seed: u64,
) -> Result<DrawResult> {
    sel.validate()?;
    let pool = build_candidate_pool(
        ds,
        spec,
        train,
        &PoolOptions {
            n_models: sel.pool_size,
            gap: sel.gap(),
            epoch_budgets: Some(spread_epochs(sel.pool_size, sel.min_epochs, sel.max_epochs)),
            seed: pool_seed,
        },
    )?;
    let test = ds.test_indices();
    let xs = ds.inputs(&test);
    let best = pool.true_best();
    let mut hits = Vec::new();
    let mut sample_level = Vec::new();
    for &m in &sel.methods {
        let ranking = rank_models(m, spec, &pool.candidates, &xs, sel.output_space)?;
        let h = sel.ks.iter().map(|&k| topk_hit(&ranking, best, k)).collect::<Result<Vec<_>>>()?;
        hits.push((m.name().to_string(), h));
        let acc = sample_level_accuracy(m, spec, &pool.candidates, ds, &test, sel.output_space)?;
        sample_level.push((m, acc));
    }
    let ranking = random_ranking(&pool.candidates, pool_seed)?;
    let h = sel.ks.iter().map(|&k| topk_hit(&ranking, best, k)).collect::<Result<Vec<_>>>()?;
    hits.push(("random".to_string(), h));
    let (pool_min, pool_mean, pool_max) = pool.accuracy_summary();
    Ok(DrawResult {
        draw,
        true_best: best,
        hits,
        sample_level,
        pool_min,
        pool_mean,
        pool_max,
    })
}

#[derive(Clone, Debug)]
pub struct SelectOutput {
    pub ks: Vec<usize>,
    pub draws: Vec<DrawResult>,
}

impl SelectOutput {
    /// Share of draws where `method` put the true best in its top `k`.
    pub fn hit_rate(&self, method: &str, k: usize) -> Option<f64> {
        let j = self.ks.iter().position(|&x| x == k)?;
        let mut hits = 0usize;
        for d in &self.draws {
            let (_, h) = d.hits.iter().find(|(m, _)| m == method)?;
            hits += h[j] as usize;
        }
        Some(hits as f64 / self.draws.len() as f64)
    }

    pub fn hit_table(&self) -> Table {
        let mut t = Table::new(["method", "k", "draws", "hits", "hit_rate"]);
        let Some(first) = self.draws.first() else {
            return t;
        };
        for (m, _) in &first.hits {
            for (j, &k) in self.ks.iter().enumerate() {
                let hits: usize = self
                    .draws
                    .iter()
                    .map(|d| d.hits.iter().find(|(x, _)| x == m).map_or(0, |(_, h)| h[j] as usize))
                    .sum();
                t.push(vec![
                    m.clone(),
                    k.to_string(),
                    self.draws.len().to_string(),
                    hits.to_string(),
                    fmt_f64(hits as f64 / self.draws.len() as f64),
                ]);
            }
        }
        t
    }

    pub fn draw_table(&self) -> Table {
        let mut header = vec!["draw".to_string(), "method".into(), "true_best".into()];
        header.extend(self.ks.iter().map(|k| format!("hit_top{k}")));
        header.extend(["sample_level_acc", "pool_min_acc", "pool_mean_acc", "pool_max_acc"].map(String::from));
        let mut t = Table::new(header);
        for d in &self.draws {
            for (m, h) in &d.hits {
                let mut row = vec![d.draw.to_string(), m.clone(), d.true_best.to_string()];
                row.extend(h.iter().map(|&b| (b as u8).to_string()));
                let sl = d.sample_level.iter().find(|(x, _)| x.name() == m).map(|(_, a)| fmt_f64(*a));
                row.push(sl.unwrap_or_default());
                row.extend([d.pool_min, d.pool_mean, d.pool_max].map(fmt_f64));
                t.push(row);
            }
        }
        t
    }

    /// Mean over draws of each method's per-sample accuracy, followed by the
    /// pool's min, mean and max single-model accuracy.
    pub fn sample_level_table(&self) -> Table {
        let mut t = Table::new(["method", "mean_acc", "std_acc", "draws"]);
        let Some(first) = self.draws.first() else {
            return t;
        };
        let n = self.draws.len().to_string();
        let mut push = |name: &str, v: Vec<f64>| {
            t.push(vec![
                name.to_string(),
                fmt_f64(crate::stats::mean(&v)),
                fmt_f64(crate::stats::sample_std(&v)),
                n.clone(),
            ]);
        };
        for (j, (m, _)) in first.sample_level.iter().enumerate() {
            push(m.name(), self.draws.iter().map(|d| d.sample_level[j].1).collect());
        }
        push("pool_min", self.draws.iter().map(|d| d.pool_min).collect());
        push("pool_mean", self.draws.iter().map(|d| d.pool_mean).collect());
        push("pool_max", self.draws.iter().map(|d| d.pool_max).collect());
        t
    }
}

/// Seed of draw `d` under run seed `base`.
pub fn draw_seed(base: u64, d: usize) -> u64 {
    rng::derive_seed(base, &[rng::TAG_TRIAL, d as u64])
}

/// `select run`: `selection.draws` independent pools, each on its own dataset
/// draw, from the first configured seed.
pub fn select_run(lc: &LoadedConfig, jobs: Option<usize>) -> Result<SelectOutput> {
    let cfg = &lc.config;
    let sel = cfg.selection.clone().unwrap_or_default();
    sel.validate()?;
    let spec = cfg.spec()?;
    let base = cfg.seeds[0];
    cfg.dataset_for(draw_seed(base, 0), &lc.base_dir)?;
    ensure_dir(&cfg.output_dir)?;
    let draws = in_pool(jobs, || {
        (0..sel.draws)
            .into_par_iter()
            .map(|d| {
                let s = draw_seed(base, d);
                let ds = cfg.dataset_for(s, &lc.base_dir)?;
                evaluate_draw(&ds, &spec, &cfg.train, &sel, d, s)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let res = SelectOutput { ks: sel.ks.clone(), draws };
    let out = &cfg.output_dir;
    res.hit_table().write(&out.join("selection_hits.csv"))?;
    res.draw_table().write(&out.join("selection_draws.csv"))?;
    res.sample_level_table().write(&out.join("sample_level.csv"))?;
    write_atomic(&out.join("config.json"), cfg.to_stored_json()?.as_bytes())?;
    Ok(res)
}

/// Reject a pool size flag before any config is touched.
pub fn check_pool_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::config("selection.pool_size", "a pool needs at least two candidates"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobsParams};

    #[test]
    fn one_small_draw() {
        let ds = gen_blobs(&BlobsParams {
            n: 200,
            classes: 3,
            dim: 2,
            centers_scale: 3.0,
            sigma: 1.0,
            test_frac: 0.3,
            seed: 4,
        })
        .unwrap();
        let spec = MlpSpec::new(vec![2, 8, 3]).unwrap();
        let train = TrainConfig::plain(0.05, 16, 3);
        let sel = SelectionConfig {
            pool_size: 3,
            min_epochs: 2,
            max_epochs: 4,
            ks: vec![1, 3],
            ..SelectionConfig::default()
        };
        let d = evaluate_draw(&ds, &spec, &train, &sel, 0, 9).unwrap();
        assert_eq!(d.hits.len(), sel.methods.len() + 1);
        // top-k with k = pool size always hits
        assert!(d.hits.iter().all(|(_, h)| h[1]));
        assert!(d.pool_min <= d.pool_mean && d.pool_mean <= d.pool_max);
        let out = SelectOutput { ks: sel.ks.clone(), draws: vec![d] };
        assert_eq!(out.hit_rate("random", 3), Some(1.0));
        assert_eq!(out.sample_level_table().rows.len(), sel.methods.len() + 3);
    }
}
