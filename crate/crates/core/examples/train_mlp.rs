//! Train a small MLP on two moons with momentum SGD and report accuracy.

use todlab::active::evaluate;
use todlab::data::gen_two_moons;
use todlab::model::{train, LossKind, MlpSpec, NoHooks, OptimState, TrainConfig};

fn main() -> todlab::Result<()> {
    let ds = gen_two_moons(1000, 0.2, 0.3, 7)?;
    let spec = MlpSpec::new(vec![2, 32, 32, 2])?;
    let cfg = TrainConfig {
        lr: 0.1,
        batch_size: 32,
        epochs: 40,
        ..TrainConfig::default()
    };
    let train_idx = ds.train_indices();
    let (state, report) = train(
        &spec,
        OptimState::new(spec.init_params(1)),
        &ds.samples(&train_idx),
        LossKind::CrossEntropy,
        &cfg,
        1,
        &mut NoHooks,
    )?;
    for (e, l) in report.epoch_losses.iter().enumerate().step_by(10) {
        println!("epoch {e:>3}  loss {l:.4}");
    }
    let (acc, per_class) = evaluate(&spec, &state.params, &ds, &ds.test_indices())?;
    println!("test accuracy {acc:.4}, per class {per_class:.3?}");
    Ok(())
}
