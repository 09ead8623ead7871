//! How well COD ranks the true loss of unlabeled samples after each cycle.

use todlab::active::{run_active_learning, ALConfig};
use todlab::data::gen_two_moons;
use todlab::estimation::loss_estimation_quality;
use todlab::model::{MlpSpec, TrainConfig};

fn main() -> todlab::Result<()> {
    let ds = gen_two_moons(1000, 0.2, 0.3, 5)?;
    let spec = MlpSpec::new(vec![2, 32, 32, 2])?;
    let train = TrainConfig {
        lr: 0.1,
        batch_size: 32,
        epochs: 30,
        ..TrainConfig::default()
    };
    let al = ALConfig {
        cycles: 4,
        ..ALConfig::default()
    };
    let run = run_active_learning(&ds, &spec, &al, &train, 0)?;
    for s in &run.scores {
        let q = loss_estimation_quality(&s.cod, &s.true_loss)?;
        let recall: Vec<String> = q.recall_at_p.iter().map(|(p, r)| format!("{p}%:{r:.2}")).collect();
        println!(
            "cycle {}: rho {:+.3}  top-decile loss {:.3}  bottom-decile loss {:.3}  recall {}",
            s.cycle,
            q.spearman_rho,
            q.decile_mean_losses[0],
            q.decile_mean_losses[9],
            recall.join(" ")
        );
    }
    Ok(())
}
