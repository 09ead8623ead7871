//! Paired COD vs random active learning on 5-class blobs.

use todlab::active::{run_active_learning, ALConfig, Sampler};
use todlab::data::{gen_blobs, BlobsParams};
use todlab::model::{MlpSpec, TrainConfig};

fn main() -> todlab::Result<()> {
    let spec = MlpSpec::new(vec![10, 32, 32, 5])?;
    let train = TrainConfig {
        lr: 0.1,
        batch_size: 32,
        epochs: 30,
        ..TrainConfig::default()
    };
    for seed in 0..3u64 {
        let ds = gen_blobs(&BlobsParams {
            n: 2000,
            classes: 5,
            dim: 10,
            centers_scale: 3.0,
            sigma: 1.0,
            test_frac: 0.3,
            seed: 100 + seed,
        })?;
        let mut line = format!("seed {seed}:");
        for sampler in [Sampler::Cod, Sampler::Random] {
            let al = ALConfig {
                sampler,
                ..ALConfig::default()
            };
            let run = run_active_learning(&ds, &spec, &al, &train, seed)?;
            let curve: Vec<String> = run.records.iter().map(|r| format!("{:.3}", r.test_acc)).collect();
            line.push_str(&format!("\n  {:<7} {}", sampler.name(), curve.join(" ")));
        }
        println!("{line}");
    }
    Ok(())
}
