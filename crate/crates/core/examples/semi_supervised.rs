//! Mean-teacher consistency on a 10% labeled set, with and without the
//! unsupervised term.

use todlab::active::{run_active_learning, ALConfig, Sampler};
use todlab::data::{gen_blobs, BlobsParams};
use todlab::model::{MlpSpec, TrainConfig};

fn main() -> todlab::Result<()> {
    let spec = MlpSpec::new(vec![10, 32, 32, 5])?;
    // long enough for the teacher (alpha 0.999) to move away from its init
    let train = TrainConfig {
        lr: 0.1,
        batch_size: 32,
        epochs: 400,
        ..TrainConfig::default()
    };
    let base = ALConfig {
        sampler: Sampler::Random,
        cycles: 1,
        consistency_noise: 1.0,
        ..ALConfig::default()
    };
    for seed in 0..3u64 {
        let ds = gen_blobs(&BlobsParams {
            n: 2000,
            classes: 5,
            dim: 10,
            centers_scale: 3.0,
            sigma: 1.0,
            test_frac: 0.3,
            seed: 200 + seed,
        })?;
        let mut accs = Vec::new();
        for semi in [false, true] {
            let al = ALConfig {
                semi_enabled: semi,
                ..base.clone()
            };
            accs.push(run_active_learning(&ds, &spec, &al, &train, seed)?.records[0].test_acc);
        }
        println!("seed {seed}: supervised {:.4}  semi {:.4}", accs[0], accs[1]);
    }
    Ok(())
}
