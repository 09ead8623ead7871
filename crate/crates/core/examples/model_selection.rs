//! Rank a pool of differently trained models without labels.

use todlab::data::{gen_blobs, BlobsParams};
use todlab::model::{MlpSpec, TrainConfig};
use todlab::selection::{
    build_candidate_pool, rank_models, sample_level_accuracy, spread_epochs, BaselineGap, PoolOptions, SelectionMethod,
};
use todlab::estimation::OutputSpace;

fn main() -> todlab::Result<()> {
    let ds = gen_blobs(&BlobsParams {
        n: 2000,
        classes: 5,
        dim: 10,
        centers_scale: 3.0,
        sigma: 1.0,
        test_frac: 0.3,
        seed: 11,
    })?;
    let spec = MlpSpec::new(vec![10, 32, 32, 5])?;
    let train = TrainConfig {
        lr: 0.001,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let pool = build_candidate_pool(
        &ds,
        &spec,
        &train,
        &PoolOptions {
            n_models: 10,
            gap: BaselineGap::Epochs(1),
            epoch_budgets: Some(spread_epochs(10, 5, 50)),
            seed: 3,
        },
    )?;
    for t in &pool.truth {
        println!("model {:>2}: {:>2} epochs, test acc {:.4}", t.id, pool.epochs[t.id], t.test_acc);
    }
    println!("true best: {}", pool.true_best());

    let test = ds.test_indices();
    let xs = ds.inputs(&test);
    for m in [SelectionMethod::Tod, SelectionMethod::TrainLoss, SelectionMethod::Entropy] {
        let r = rank_models(m, &spec, &pool.candidates, &xs, OutputSpace::Probs)?;
        let acc = sample_level_accuracy(m, &spec, &pool.candidates, &ds, &test, OutputSpace::Probs)?;
        println!("{:<10} top-3 {:?}  per-sample choice acc {acc:.4}", m.name(), &r.order[..3]);
    }
    let (lo, mean, hi) = pool.accuracy_summary();
    println!("single models: min {lo:.4} mean {mean:.4} max {hi:.4}");
    Ok(())
}
